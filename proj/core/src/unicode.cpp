#include "graftbench/unicode.hpp"

#include <algorithm>
#include <cstdint>

#include "graftbench/error.hpp"
#include "unicode_data.hpp"

namespace graftbench {
namespace {

using unicode_data::CaseEntry;
using unicode_data::CccEntry;
using unicode_data::ComposeEntry;
using unicode_data::DecompEntry;

int combining_class(char32_t cp) {
    const CccEntry* end = unicode_data::kCcc + unicode_data::kCccCount;
    const CccEntry* it = std::lower_bound(
        unicode_data::kCcc, end, cp,
        [](const CccEntry& e, char32_t c) { return e.cp < c; });
    return (it != end && it->cp == cp) ? it->ccc : 0;
}

const DecompEntry* find_decomp(char32_t cp) {
    const DecompEntry* end = unicode_data::kDecomp + unicode_data::kDecompCount;
    const DecompEntry* it = std::lower_bound(
        unicode_data::kDecomp, end, cp,
        [](const DecompEntry& e, char32_t c) { return e.cp < c; });
    return (it != end && it->cp == cp) ? it : nullptr;
}

char32_t find_composite(char32_t a, char32_t b) {
    const std::uint64_t key =
        (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
    const ComposeEntry* end = unicode_data::kCompose + unicode_data::kComposeCount;
    const ComposeEntry* it = std::lower_bound(
        unicode_data::kCompose, end, key,
        [](const ComposeEntry& e, std::uint64_t k) {
            return ((static_cast<std::uint64_t>(e.starter) << 32) |
                    static_cast<std::uint64_t>(e.combining)) < k;
        });
    if (it != end && it->starter == a && it->combining == b) return it->composite;
    return 0;
}

char32_t case_lookup(const CaseEntry* table, std::size_t count, char32_t cp) {
    const CaseEntry* end = table + count;
    const CaseEntry* it = std::lower_bound(
        table, end, cp,
        [](const CaseEntry& e, char32_t c) { return e.cp < c; });
    return (it != end && it->cp == cp) ? it->mapped : cp;
}

// Hangul syllable composition constants (UAX #15).
constexpr char32_t kSBase = 0xAC00;
constexpr char32_t kLBase = 0x1100;
constexpr char32_t kVBase = 0x1161;
constexpr char32_t kTBase = 0x11A7;
constexpr int kLCount = 19;
constexpr int kVCount = 21;
constexpr int kTCount = 28;
constexpr int kNCount = kVCount * kTCount;
constexpr int kSCount = kLCount * kNCount;

void decompose_hangul(char32_t cp, std::vector<char32_t>& out) {
    int s = static_cast<int>(cp - kSBase);
    out.push_back(kLBase + s / kNCount);
    out.push_back(kVBase + (s % kNCount) / kTCount);
    int t = s % kTCount;
    if (t != 0) out.push_back(kTBase + t);
}

void decompose(char32_t cp, std::vector<char32_t>& out) {
    if (cp >= kSBase && cp < kSBase + kSCount) {
        decompose_hangul(cp, out);
        return;
    }
    if (const DecompEntry* e = find_decomp(cp)) {
        for (unsigned i = 0; i < e->len; ++i)
            out.push_back(unicode_data::kDecompPool[e->pool_offset + i]);
        return;
    }
    out.push_back(cp);
}

// Stable reordering of combining marks by combining class.
void canonical_order(std::vector<char32_t>& cps) {
    for (std::size_t i = 1; i < cps.size(); ++i) {
        int ccc = combining_class(cps[i]);
        if (ccc == 0) continue;
        std::size_t j = i;
        while (j > 0) {
            int prev = combining_class(cps[j - 1]);
            if (prev == 0 || prev <= ccc) break;
            std::swap(cps[j - 1], cps[j]);
            --j;
        }
    }
}

// Primary composite of (a, b), Hangul included; 0 when the pair does not
// compose.
char32_t compose_pair(char32_t a, char32_t b) {
    if (char32_t c = find_composite(a, b)) return c;
    if (a >= kLBase && a < kLBase + kLCount && b >= kVBase &&
        b < kVBase + kVCount) {
        return kSBase + (a - kLBase) * kNCount + (b - kVBase) * kTCount;
    }
    if (a >= kSBase && a < kSBase + kSCount && (a - kSBase) % kTCount == 0 &&
        b > kTBase && b < kTBase + kTCount) {
        return a + (b - kTBase);
    }
    return 0;
}

std::vector<char32_t> compose(const std::vector<char32_t>& in) {
    std::vector<char32_t> out;
    out.reserve(in.size());
    // Index of the last starter in `out`; npos when none seen yet.
    std::size_t starter = std::string::npos;
    int last_ccc = -1;
    for (char32_t cp : in) {
        int ccc = combining_class(cp);
        // Not blocked: the previous kept character has a lower combining
        // class (marks between two starters are canonically ordered), or cp
        // immediately follows the starter.
        const bool unblocked =
            starter != std::string::npos &&
            (last_ccc < ccc || (ccc == 0 && out.size() == starter + 1));
        if (unblocked) {
            if (char32_t composite = compose_pair(out[starter], cp)) {
                out[starter] = composite;
                continue;
            }
        }
        if (ccc == 0) starter = out.size();
        last_ccc = ccc;
        out.push_back(cp);
    }
    return out;
}

}  // namespace

std::vector<char32_t> utf8_decode(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char b0 = static_cast<unsigned char>(s[i]);
        std::size_t len;
        char32_t cp;
        if (b0 < 0x80) {
            len = 1;
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            len = 2;
            cp = b0 & 0x1F;
        } else if ((b0 & 0xF0) == 0xE0) {
            len = 3;
            cp = b0 & 0x0F;
        } else if ((b0 & 0xF8) == 0xF0) {
            len = 4;
            cp = b0 & 0x07;
        } else {
            throw ParseError("invalid UTF-8 byte at offset " + std::to_string(i),
                             0, static_cast<long long>(i));
        }
        if (i + len > s.size())
            throw ParseError("truncated UTF-8 sequence at offset " +
                                 std::to_string(i),
                             0, static_cast<long long>(i));
        for (std::size_t k = 1; k < len; ++k) {
            unsigned char b = static_cast<unsigned char>(s[i + k]);
            if ((b & 0xC0) != 0x80)
                throw ParseError("invalid UTF-8 continuation at offset " +
                                     std::to_string(i),
                                 0, static_cast<long long>(i));
            cp = (cp << 6) | (b & 0x3F);
        }
        const bool overlong = (len == 2 && cp < 0x80) ||
                              (len == 3 && cp < 0x800) ||
                              (len == 4 && cp < 0x10000);
        if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
            throw ParseError("invalid UTF-8 codepoint at offset " +
                                 std::to_string(i),
                             0, static_cast<long long>(i));
        out.push_back(cp);
        i += len;
    }
    return out;
}

bool utf8_valid(std::string_view s, std::size_t* bad_offset) {
    try {
        utf8_decode(s);
        return true;
    } catch (const ParseError& e) {
        if (bad_offset) *bad_offset = static_cast<std::size_t>(e.byte_offset());
        return false;
    }
}

void utf8_append(char32_t cp, std::string& out) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

std::string utf8_encode(const std::vector<char32_t>& cps) {
    std::string out;
    out.reserve(cps.size());
    for (char32_t cp : cps) utf8_append(cp, out);
    return out;
}

std::string nfc(std::string_view s) {
    std::vector<char32_t> cps = utf8_decode(s);
    std::vector<char32_t> decomposed;
    decomposed.reserve(cps.size());
    for (char32_t cp : cps) decompose(cp, decomposed);
    canonical_order(decomposed);
    return utf8_encode(compose(decomposed));
}

char32_t to_lower_simple(char32_t cp) {
    return case_lookup(unicode_data::kLower, unicode_data::kLowerCount, cp);
}

char32_t to_upper_simple(char32_t cp) {
    return case_lookup(unicode_data::kUpper, unicode_data::kUpperCount, cp);
}

std::string fold_case_simple(std::string_view s) {
    std::vector<char32_t> cps = utf8_decode(s);
    for (char32_t& cp : cps) cp = to_lower_simple(cp);
    return utf8_encode(cps);
}

bool starts_uppercase(std::string_view s) {
    if (s.empty()) return false;
    std::vector<char32_t> cps = utf8_decode(s);
    if (cps.empty()) return false;
    char32_t cp = cps.front();
    return to_lower_simple(cp) != cp;
}

std::string capitalize_first(std::string_view s) {
    if (s.empty()) return std::string();
    std::vector<char32_t> cps = utf8_decode(s);
    cps.front() = to_upper_simple(cps.front());
    return utf8_encode(cps);
}

}  // namespace graftbench
