#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "cct/error.hpp"

namespace cct {

using Sha256 = std::array<std::uint8_t, 32>;

class Sha256Builder {
   public:
    Sha256Builder() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
    }
    ~Sha256Builder() { EVP_MD_CTX_free(ctx_); }
    Sha256Builder(const Sha256Builder&) = delete;
    Sha256Builder& operator=(const Sha256Builder&) = delete;

    Sha256Builder& update(const void* p, std::size_t n) {
        if (n && EVP_DigestUpdate(ctx_, p, n) != 1) throw std::runtime_error("sha256 update failed");
        return *this;
    }
    Sha256Builder& update(std::string_view s) { return update(s.data(), s.size()); }

    Sha256 finish() {
        Sha256 out{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, out.data(), &len) != 1 || len != out.size()) {
            throw std::runtime_error("sha256 final failed");
        }
        return out;
    }

   private:
    EVP_MD_CTX* ctx_;
};

inline Sha256 sha256(std::span<const std::uint8_t> bytes) { return Sha256Builder().update(bytes.data(), bytes.size()).finish(); }
inline Sha256 sha256(std::string_view s) { return Sha256Builder().update(s).finish(); }

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        s.push_back(kHex[b >> 4]);
        s.push_back(kHex[b & 15]);
    }
    return s;
}

// First 8 bytes of a digest as an integer, for seeding.
inline std::uint64_t digest_prefix(const Sha256& d) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | d[static_cast<std::size_t>(i)];
    return v;
}

}  // namespace cct
