#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "cct/digest.hpp"
#include "cct/tensor.hpp"

// On-disk layout (all integers little-endian):
//   "CCTCKPT\0" | u32 version | u64 meta_len | meta JSON
//   | u64 n_entries | n x { u32 name_len | name | u8 dtype | u32 rank | rank x u64 dim | u64 offset | u64 nbytes }
//   | payload | 32-byte SHA-256 of everything before it
// Entries are sorted by name and payload offsets are relative to the payload start.
namespace cct {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'C', 'C', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class BlobDType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

inline std::size_t dtype_size(BlobDType d) { return d == BlobDType::f32 ? 4 : 8; }

struct BlobEntry {
    BlobDType dtype = BlobDType::f32;
    Shape shape;
    std::vector<std::uint8_t> bytes;

    friend bool operator==(const BlobEntry&, const BlobEntry&) = default;
};

struct CheckpointBlob {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, BlobEntry> entries;

    template <class T>
    void put(const std::string& name, const Shape& shape, std::span<const T> values) {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double> || std::is_same_v<T, std::int64_t>);
        BlobEntry e;
        e.dtype = std::is_same_v<T, float> ? BlobDType::f32 : std::is_same_v<T, double> ? BlobDType::f64 : BlobDType::i64;
        e.shape = shape;
        if (numel_of(shape) != values.size()) throw ContractError("checkpoint put: shape does not match data for " + name);
        e.bytes.resize(values.size() * sizeof(T));
        if (!values.empty()) std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
        entries[name] = std::move(e);
    }

    bool has(const std::string& name) const { return entries.count(name) != 0; }

    template <class T>
    std::vector<T> get(const std::string& name, const Shape* expect_shape = nullptr) const {
        const auto it = entries.find(name);
        if (it == entries.end()) throw ContractError("checkpoint has no entry " + name);
        const auto& e = it->second;
        const auto want = std::is_same_v<T, float> ? BlobDType::f32 : std::is_same_v<T, double> ? BlobDType::f64 : BlobDType::i64;
        if (e.dtype != want) throw CorruptionError("checkpoint entry " + name + " has unexpected dtype");
        if (expect_shape && e.shape != *expect_shape) {
            throw CorruptionError(fmt::format("checkpoint entry {} has shape {}, expected {}", name, shape_str(e.shape),
                                              shape_str(*expect_shape)));
        }
        std::vector<T> out(e.bytes.size() / sizeof(T));
        if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
        return out;
    }

    friend bool operator==(const CheckpointBlob& a, const CheckpointBlob& b) {
        return a.meta == b.meta && a.entries == b.entries;
    }
};

namespace detail {

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
}

class Reader {
   public:
    Reader(std::span<const std::uint8_t> b) : b_(b) {}

    template <class U>
    U le() {
        need(sizeof(U));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t{b_[pos_ + i]} << (8 * i);
        pos_ += sizeof(U);
        return static_cast<U>(v);
    }
    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

   private:
    void need(std::size_t n) const {
        if (n > b_.size() - pos_) throw CorruptionError("checkpoint truncated");
    }
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const CheckpointBlob& blob) {
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    const std::string meta = blob.meta.dump();
    detail::put_le<std::uint64_t>(out, meta.size());
    out.insert(out.end(), meta.begin(), meta.end());
    detail::put_le<std::uint64_t>(out, blob.entries.size());
    std::uint64_t offset = 0;
    for (const auto& [name, e] : blob.entries) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) detail::put_le<std::uint64_t>(out, d);
        detail::put_le<std::uint64_t>(out, offset);
        detail::put_le<std::uint64_t>(out, e.bytes.size());
        offset += e.bytes.size();
    }
    for (const auto& [name, e] : blob.entries) out.insert(out.end(), e.bytes.begin(), e.bytes.end());
    const auto d = sha256(out);
    out.insert(out.end(), d.begin(), d.end());
    return out;
}

inline CheckpointBlob deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < sizeof(kCheckpointMagic) + 32) throw CorruptionError("checkpoint too short");
    const auto body = bytes.first(bytes.size() - 32);
    const auto stored = bytes.last(32);
    const auto actual = sha256(body);
    if (!std::equal(actual.begin(), actual.end(), stored.begin())) throw CorruptionError("checkpoint digest mismatch");
    detail::Reader r(body);
    const auto magic = r.take(sizeof(kCheckpointMagic));
    if (!std::equal(magic.begin(), magic.end(), std::begin(kCheckpointMagic))) throw CorruptionError("bad checkpoint magic");
    if (const auto v = r.le<std::uint32_t>(); v != kCheckpointVersion) {
        throw CorruptionError(fmt::format("unsupported checkpoint version {}", v));
    }
    CheckpointBlob blob;
    const auto meta = r.take(r.le<std::uint64_t>());
    blob.meta = nlohmann::json::parse(meta.begin(), meta.end());
    const auto n = r.le<std::uint64_t>();
    struct Pending {
        std::string name;
        BlobEntry e;
        std::uint64_t offset, nbytes;
    };
    std::vector<Pending> pending;
    for (std::uint64_t i = 0; i < n; ++i) {
        Pending p;
        const auto name = r.take(r.le<std::uint32_t>());
        p.name.assign(name.begin(), name.end());
        const auto dt = r.le<std::uint8_t>();
        if (dt > 2) throw CorruptionError("bad dtype in checkpoint manifest");
        p.e.dtype = static_cast<BlobDType>(dt);
        const auto rank = r.le<std::uint32_t>();
        for (std::uint32_t k = 0; k < rank; ++k) p.e.shape.push_back(r.le<std::uint64_t>());
        p.offset = r.le<std::uint64_t>();
        p.nbytes = r.le<std::uint64_t>();
        if (p.nbytes != numel_of(p.e.shape) * dtype_size(p.e.dtype)) throw CorruptionError("manifest size mismatch for " + p.name);
        pending.push_back(std::move(p));
    }
    const auto payload = body.subspan(r.pos());
    for (auto& p : pending) {
        if (p.offset > payload.size() || p.nbytes > payload.size() - p.offset) throw CorruptionError("payload out of range");
        p.e.bytes.assign(payload.begin() + static_cast<std::ptrdiff_t>(p.offset),
                         payload.begin() + static_cast<std::ptrdiff_t>(p.offset + p.nbytes));
        blob.entries[p.name] = std::move(p.e);
    }
    return blob;
}

// Write to a sibling temp file and rename, so readers never see a partial checkpoint.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void save_blob(const std::filesystem::path& path, const CheckpointBlob& blob) { write_file_atomic(path, serialize(blob)); }
inline CheckpointBlob load_blob(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

}  // namespace cct
