// Table declarations for unicode_data.cpp (generated by
// scripts/gen_unicode_tables.py).
#pragma once

#include <cstddef>

namespace graftbench::unicode_data {

struct CccEntry {
    char32_t cp;
    unsigned char ccc;
};

struct DecompEntry {
    char32_t cp;
    unsigned pool_offset;
    unsigned char len;
};

struct ComposeEntry {
    char32_t starter;
    char32_t combining;
    char32_t composite;
};

struct CaseEntry {
    char32_t cp;
    char32_t mapped;
};

extern const std::size_t kCccCount;
extern const CccEntry kCcc[];

extern const std::size_t kDecompCount;
extern const DecompEntry kDecomp[];
extern const std::size_t kDecompPoolCount;
extern const char32_t kDecompPool[];

extern const std::size_t kComposeCount;
extern const ComposeEntry kCompose[];

extern const std::size_t kLowerCount;
extern const CaseEntry kLower[];
extern const std::size_t kUpperCount;
extern const CaseEntry kUpper[];

}  // namespace graftbench::unicode_data
