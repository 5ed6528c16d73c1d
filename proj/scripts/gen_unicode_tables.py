#!/usr/bin/env python3
"""Regenerates core/src/unicode_data.cpp from Python's unicodedata module.

The tables drive NFC normalization (canonical decomposition, canonical
combining classes, primary composites) and the simple one-to-one case
mappings. Run from the repository root:

    python3 scripts/gen_unicode_tables.py
"""

import sys
import unicodedata

MAX_CP = 0x110000
HANGUL_S_BASE = 0xAC00
HANGUL_S_COUNT = 11172


def is_hangul_syllable(cp: int) -> bool:
    return HANGUL_S_BASE <= cp < HANGUL_S_BASE + HANGUL_S_COUNT


def canonical_pair(cp: int):
    """Immediate canonical decomposition of cp, or None."""
    d = unicodedata.decomposition(chr(cp))
    if not d or d.startswith("<"):
        return None
    return [int(x, 16) for x in d.split()]


def full_decomposition(cp: int, memo: dict):
    if cp in memo:
        return memo[cp]
    pair = canonical_pair(cp)
    if pair is None or is_hangul_syllable(cp):
        memo[cp] = [cp]
        return memo[cp]
    out = []
    for c in pair:
        out.extend(full_decomposition(c, memo))
    memo[cp] = out
    return out


def main() -> int:
    ccc_entries = []
    memo = {}
    decomp_entries = []   # (cp, [codepoints...])
    compose_entries = []  # (starter, combining, composite)
    lower_entries = []
    upper_entries = []

    for cp in range(MAX_CP):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        ch = chr(cp)
        ccc = unicodedata.combining(ch)
        if ccc != 0:
            ccc_entries.append((cp, ccc))
        if not is_hangul_syllable(cp):
            full = full_decomposition(cp, memo)
            if full != [cp]:
                decomp_entries.append((cp, full))
            pair = canonical_pair(cp)
            if (pair is not None and len(pair) == 2
                    and unicodedata.combining(chr(pair[0])) == 0
                    and unicodedata.normalize(
                        "NFC", unicodedata.normalize("NFD", ch)) == ch):
                compose_entries.append((pair[0], pair[1], cp))
        lo = ch.lower()
        if len(lo) == 1 and lo != ch:
            lower_entries.append((cp, ord(lo)))
        up = ch.upper()
        if len(up) == 1 and up != ch:
            upper_entries.append((cp, ord(up)))

    compose_entries.sort(key=lambda e: (e[0] << 32) | e[1])
    max_decomp = max(len(d) for _, d in decomp_entries)

    pool = []
    decomp_index = []  # (cp, offset, len)
    for cp, d in decomp_entries:
        decomp_index.append((cp, len(pool), len(d)))
        pool.extend(d)

    def rows(items, fmt, per_line):
        lines = []
        for i in range(0, len(items), per_line):
            lines.append("    " + " ".join(fmt(x) for x in items[i:i + per_line]))
        return "\n".join(lines)

    out = []
    out.append("// Generated by scripts/gen_unicode_tables.py "
               f"(Unicode {unicodedata.unidata_version}). Do not edit.")
    out.append('#include "unicode_data.hpp"')
    out.append("")
    out.append("namespace graftbench::unicode_data {")
    out.append("")
    out.append(f"const std::size_t kCccCount = {len(ccc_entries)};")
    out.append("const CccEntry kCcc[] = {")
    out.append(rows(ccc_entries, lambda e: f"{{0x{e[0]:X}, {e[1]}}},", 8))
    out.append("};")
    out.append("")
    out.append(f"const std::size_t kDecompCount = {len(decomp_index)};")
    out.append(f"// max expanded decomposition length: {max_decomp}")
    out.append("const DecompEntry kDecomp[] = {")
    out.append(rows(decomp_index,
                    lambda e: f"{{0x{e[0]:X}, {e[1]}, {e[2]}}},", 6))
    out.append("};")
    out.append("")
    out.append(f"const std::size_t kDecompPoolCount = {len(pool)};")
    out.append("const char32_t kDecompPool[] = {")
    out.append(rows(pool, lambda c: f"0x{c:X},", 12))
    out.append("};")
    out.append("")
    out.append(f"const std::size_t kComposeCount = {len(compose_entries)};")
    out.append("const ComposeEntry kCompose[] = {")
    out.append(rows(compose_entries,
                    lambda e: f"{{0x{e[0]:X}, 0x{e[1]:X}, 0x{e[2]:X}}},", 4))
    out.append("};")
    out.append("")
    out.append(f"const std::size_t kLowerCount = {len(lower_entries)};")
    out.append("const CaseEntry kLower[] = {")
    out.append(rows(lower_entries, lambda e: f"{{0x{e[0]:X}, 0x{e[1]:X}}},", 6))
    out.append("};")
    out.append("")
    out.append(f"const std::size_t kUpperCount = {len(upper_entries)};")
    out.append("const CaseEntry kUpper[] = {")
    out.append(rows(upper_entries, lambda e: f"{{0x{e[0]:X}, 0x{e[1]:X}}},", 6))
    out.append("};")
    out.append("")
    out.append("}  // namespace graftbench::unicode_data")
    out.append("")

    with open("core/src/unicode_data.cpp", "w", encoding="utf-8") as f:
        f.write("\n".join(out))
    print(f"ccc={len(ccc_entries)} decomp={len(decomp_index)} "
          f"pool={len(pool)} compose={len(compose_entries)} "
          f"lower={len(lower_entries)} upper={len(upper_entries)} "
          f"max_decomp={max_decomp}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
