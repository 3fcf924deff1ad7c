#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cct/rng.hpp"

// Seeded generator for a small encyclopedia-like text corpus. Articles repeat their subject and a few
// per-article facts, so there is structure beyond the local n-gram statistics.
namespace cct {

namespace detail {

inline const std::array<const char*, 24> kSyllables{"ka", "lo", "mer", "an", "ti", "vel", "os", "ru", "dan", "sil", "or", "be",
                                                    "th", "ia", "nor", "ek", "ma", "res", "ul", "fi", "gan", "dre", "al", "wyn"};
inline const std::array<const char*, 20> kNouns{"river",  "castle", "village", "bridge", "temple", "harbour", "forest",
                                                "mine",   "road",   "tower",   "school", "market", "church",  "valley",
                                                "island", "mill",   "garden",  "lake",   "fort",   "railway"};
inline const std::array<const char*, 16> kAdjs{"old",   "northern", "small", "famous", "ancient", "large", "quiet", "eastern",
                                               "royal", "new",      "long",  "western", "high",   "stone", "narrow", "southern"};
inline const std::array<const char*, 14> kVerbs{"built",    "founded", "visited", "described", "rebuilt", "sold",    "restored",
                                                "governed", "painted", "mapped",  "defended",  "studied", "renamed", "expanded"};
inline const std::array<const char*, 10> kRoles{"king",     "poet",   "engineer", "merchant", "bishop",
                                                "composer", "farmer", "general",  "scholar",  "architect"};
inline const std::array<const char*, 12> kNumbers{"two",   "three", "four",   "five",     "six",     "seven",
                                                  "eight", "nine",  "twelve", "twenty", "forty", "a hundred"};

class Generator {
   public:
    explicit Generator(std::uint64_t seed) : rng_(seed) {}

    template <std::size_t N>
    const char* pick(const std::array<const char*, N>& xs) {
        return xs[rng_.below(N)];
    }

    std::string name() {
        std::string s;
        const auto n = 2 + rng_.below(2);
        for (std::uint64_t i = 0; i < n; ++i) s += pick(kSyllables);
        s[0] = static_cast<char>(s[0] - 'a' + 'A');
        return s;
    }

    std::uint64_t year() { return 1200 + rng_.below(800); }
    std::uint64_t below(std::uint64_t n) { return rng_.below(n); }

   private:
    RngStream rng_;
};

struct Article {
    std::string subject, role, place, noun, adj;
    std::uint64_t born, died;
};

inline std::string sentence(Generator& g, const Article& a) {
    using std::to_string;
    const std::string who = g.below(3) == 0 ? std::string(a.born % 2 ? "He" : "She") : a.subject;
    switch (g.below(9)) {
        case 0:
            return who + " " + g.pick(kVerbs) + " the " + g.pick(kAdjs) + " " + g.pick(kNouns) + " of " + a.place + " in " +
                   to_string(g.year()) + ".";
        case 1: {
            const auto x = 1 + g.below(40), y = 1 + g.below(40);
            return "The " + a.noun + " had " + to_string(x) + " rooms and " + to_string(y) + " halls , " +
                   to_string(x + y) + " in total .";
        }
        case 2:
            return "In " + to_string(a.born + 20 + g.below(30)) + " , " + who + " moved to " + a.place + " as a " + a.role +
                   " .";
        case 3:
            return a.subject + " ( " + to_string(a.born) + " - " + to_string(a.died) + " ) was a " + a.role + " from " +
                   a.place + " .";
        case 4:
            return "The " + a.adj + " " + a.noun + " near " + a.place + " was " + g.pick(kVerbs) + " by " + a.subject +
                   " .";
        case 5:
            return "Critics said that " + who + " had " + g.pick(kVerbs) + " " + g.pick(kNumbers) + " " + g.pick(kNouns) +
                   "s .";
        case 6:
            return "Later , the " + a.noun + " of " + a.place + " became known as \" " + a.subject + " 's " + a.noun +
                   " \" .";
        case 7:
            return who + " died in " + to_string(a.died) + " at " + a.place + " , aged " + to_string(a.died - a.born) +
                   " .";
        default:
            return "Many " + std::string(g.pick(kRoles)) + "s visited the " + g.pick(kAdjs) + " " + a.noun + " .";
    }
}

}  // namespace detail

// Roughly `target_bytes` of ASCII text (always valid UTF-8).
inline std::string synthetic_corpus(std::size_t target_bytes, std::uint64_t seed = 2026) {
    detail::Generator g(seed);
    std::string out;
    out.reserve(target_bytes + 4096);
    while (out.size() < target_bytes) {
        detail::Article a;
        a.subject = g.name() + " " + g.name();
        a.role = g.pick(detail::kRoles);
        a.place = g.name();
        a.noun = g.pick(detail::kNouns);
        a.adj = g.pick(detail::kAdjs);
        a.born = g.year();
        a.died = a.born + 30 + g.below(50);
        out += " = " + a.subject + " = \n\n";
        const auto paragraphs = 2 + g.below(3);
        for (std::uint64_t p = 0; p < paragraphs; ++p) {
            const auto n = 3 + g.below(5);
            for (std::uint64_t s = 0; s < n; ++s) {
                out += ' ';
                out += detail::sentence(g, a);
            }
            out += " \n";
        }
        out += "\n";
    }
    return out;
}

}  // namespace cct
