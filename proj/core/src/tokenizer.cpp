#include "graftbench/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include "graftbench/error.hpp"
#include "graftbench/unicode.hpp"

namespace graftbench {

namespace {

bool is_ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
           c == '\f';
}

std::vector<std::string_view> split_words(std::string_view text) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_ascii_space(text[i])) ++i;
        std::size_t start = i;
        while (i < text.size() && !is_ascii_space(text[i])) ++i;
        if (i > start) words.push_back(text.substr(start, i - start));
    }
    return words;
}

/// One UTF-8 encoded codepoint per element.
std::vector<std::string> split_chars(std::string_view word) {
    std::vector<std::string> chars;
    for (char32_t cp : utf8_decode(word)) {
        std::string c;
        utf8_append(cp, c);
        chars.push_back(std::move(c));
    }
    return chars;
}

std::string pair_key(std::string_view left, std::string_view right) {
    std::string key;
    key.reserve(left.size() + right.size() + 1);
    key.append(left);
    key.push_back(' ');
    key.append(right);
    return key;
}

}  // namespace

const std::array<std::string_view, Vocabulary::kNumSpecials>&
Vocabulary::special_names() {
    static const std::array<std::string_view, kNumSpecials> names = {
        "<pad>", "<unk>", "<s>", "</s>", "<mask>"};
    return names;
}

Vocabulary Vocabulary::with_specials() {
    Vocabulary v;
    for (std::string_view name : special_names()) v.add(std::string(name));
    return v;
}

std::uint32_t Vocabulary::add(std::string token) {
    auto [it, inserted] = index_.emplace(
        token, static_cast<std::uint32_t>(tokens_.size()));
    if (!inserted) {
        throw ConfigurationError("duplicate vocabulary token: " + token);
    }
    tokens_.push_back(std::move(token));
    return it->second;
}

std::uint32_t Vocabulary::find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kNotFound : it->second;
}

std::uint64_t Vocabulary::fingerprint() const {
    // FNV-1a; 0xFF never appears in UTF-8 text, so it separates tokens.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](unsigned char byte) {
        h ^= byte;
        h *= 0x100000001b3ULL;
    };
    for (const std::string& tok : tokens_) {
        for (char c : tok) mix(static_cast<unsigned char>(c));
        mix(0xFF);
    }
    return h;
}

BpeTokenizer::BpeTokenizer(Vocabulary vocabulary,
                           std::vector<MergePair> merges)
    : vocabulary_(std::move(vocabulary)), merges_(std::move(merges)) {
    for (std::size_t rank = 0; rank < merges_.size(); ++rank) {
        const auto& [left, right] = merges_[rank];
        auto [it, inserted] = merge_rank_.emplace(pair_key(left, right), rank);
        (void)it;
        if (!inserted) {
            throw ConfigurationError("duplicate merge pair: " +
                                     pair_key(left, right));
        }
    }
}

std::vector<std::string> BpeTokenizer::word_symbols(
    std::string_view word) const {
    std::vector<std::string> syms;
    syms.emplace_back(kWordMarker);
    for (std::string& c : split_chars(word)) syms.push_back(std::move(c));

    // Repeatedly apply the earliest-learned merge present in the word, to
    // every occurrence at once, mirroring how training rewrote sequences.
    while (syms.size() > 1) {
        std::size_t best_rank = merges_.size();
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
            auto it = merge_rank_.find(pair_key(syms[i], syms[i + 1]));
            if (it != merge_rank_.end() && it->second < best_rank) {
                best_rank = it->second;
            }
        }
        if (best_rank == merges_.size()) break;
        const auto& [left, right] = merges_[best_rank];
        std::vector<std::string> next;
        next.reserve(syms.size());
        std::size_t i = 0;
        while (i < syms.size()) {
            if (i + 1 < syms.size() && syms[i] == left &&
                syms[i + 1] == right) {
                next.push_back(left + right);
                i += 2;
            } else {
                next.push_back(std::move(syms[i]));
                ++i;
            }
        }
        syms = std::move(next);
    }
    return syms;
}

BpeTokenizer train_bpe(const Corpus& corpus, std::size_t vocab_size) {
    if (corpus.sentences.empty()) {
        throw ArgumentError("train_bpe: corpus has no sentences");
    }

    // Word frequencies in first-seen order; the order never affects the
    // result because pair ties break on the pair strings.
    std::vector<std::string> word_list;
    std::vector<std::int64_t> word_freq;
    {
        std::unordered_map<std::string, std::size_t> word_index;
        for (const std::string& sentence : corpus.sentences) {
            for (std::string_view w : split_words(sentence)) {
                auto [it, inserted] =
                    word_index.emplace(std::string(w), word_list.size());
                if (inserted) {
                    word_list.emplace_back(w);
                    word_freq.push_back(0);
                }
                ++word_freq[it->second];
            }
        }
    }

    // Alphabet: every character of every word, plus the word marker.
    std::set<std::string> alphabet;
    alphabet.emplace(kWordMarker);
    for (const std::string& w : word_list) {
        for (std::string& c : split_chars(w)) alphabet.insert(std::move(c));
    }

    const std::size_t min_size = Vocabulary::kNumSpecials + alphabet.size();
    if (vocab_size < min_size) {
        throw ArgumentError(
            "train_bpe: vocab_size " + std::to_string(vocab_size) +
            " is too small: need at least " + std::to_string(min_size) +
            " (5 special tokens + " + std::to_string(alphabet.size()) +
            " alphabet symbols)");
    }

    Vocabulary vocab = Vocabulary::with_specials();
    for (const std::string& c : alphabet) vocab.add(c);

    // Symbols are interned; sequences hold indices into `symbols`.
    std::vector<std::string> symbols;
    std::unordered_map<std::string, std::uint32_t> symbol_index;
    auto intern = [&](const std::string& s) {
        auto [it, inserted] =
            symbol_index.emplace(s, static_cast<std::uint32_t>(symbols.size()));
        if (inserted) symbols.push_back(s);
        return it->second;
    };
    const std::uint32_t marker_id = intern(std::string(kWordMarker));

    std::vector<std::vector<std::uint32_t>> seqs(word_list.size());
    for (std::size_t w = 0; w < word_list.size(); ++w) {
        seqs[w].push_back(marker_id);
        for (const std::string& c : split_chars(word_list[w])) {
            seqs[w].push_back(intern(c));
        }
    }

    auto pack = [](std::uint32_t a, std::uint32_t b) {
        return (static_cast<std::uint64_t>(a) << 32) | b;
    };

    std::unordered_map<std::uint64_t, std::int64_t> counts;
    std::unordered_map<std::uint64_t, std::set<std::uint32_t>> postings;
    for (std::size_t w = 0; w < seqs.size(); ++w) {
        for (std::size_t i = 0; i + 1 < seqs[w].size(); ++i) {
            const std::uint64_t key = pack(seqs[w][i], seqs[w][i + 1]);
            counts[key] += word_freq[w];
            postings[key].insert(static_cast<std::uint32_t>(w));
        }
    }

    struct HeapEntry {
        std::int64_t count;
        std::uint32_t left;
        std::uint32_t right;
    };
    // Max-heap: highest count first, ties to the lexicographically smaller
    // pair (byte order on the symbol strings).
    auto worse = [&symbols](const HeapEntry& a, const HeapEntry& b) {
        if (a.count != b.count) return a.count < b.count;
        if (symbols[a.left] != symbols[b.left]) {
            return symbols[a.left] > symbols[b.left];
        }
        return symbols[a.right] > symbols[b.right];
    };
    std::priority_queue<HeapEntry, std::vector<HeapEntry>, decltype(worse)>
        heap(worse);
    for (const auto& [key, count] : counts) {
        heap.push({count, static_cast<std::uint32_t>(key >> 32),
                   static_cast<std::uint32_t>(key & 0xFFFFFFFFu)});
    }

    std::vector<BpeTokenizer::MergePair> merges;
    while (vocab.size() < vocab_size && !heap.empty()) {
        const HeapEntry top = heap.top();
        heap.pop();
        const std::uint64_t best_key = pack(top.left, top.right);
        auto count_it = counts.find(best_key);
        if (count_it == counts.end() || count_it->second <= 0) continue;
        if (count_it->second != top.count) {
            // Stale entry; re-queue at the current count.
            heap.push({count_it->second, top.left, top.right});
            continue;
        }

        const std::string left_str = symbols[top.left];
        const std::string right_str = symbols[top.right];
        const std::uint32_t merged_id = intern(left_str + right_str);

        auto posting_it = postings.find(best_key);
        const std::set<std::uint32_t> words_with_pair =
            posting_it == postings.end() ? std::set<std::uint32_t>{}
                                         : std::move(posting_it->second);
        for (std::uint32_t w : words_with_pair) {
            std::vector<std::uint32_t>& seq = seqs[w];
            const std::int64_t f = word_freq[w];
            for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
                const std::uint64_t key = pack(seq[i], seq[i + 1]);
                counts[key] -= f;
                postings[key].erase(w);
            }
            std::vector<std::uint32_t> next;
            next.reserve(seq.size());
            std::size_t i = 0;
            while (i < seq.size()) {
                if (i + 1 < seq.size() && seq[i] == top.left &&
                    seq[i + 1] == top.right) {
                    next.push_back(merged_id);
                    i += 2;
                } else {
                    next.push_back(seq[i]);
                    ++i;
                }
            }
            seq = std::move(next);
            for (std::size_t j = 0; j + 1 < seq.size(); ++j) {
                const std::uint64_t key = pack(seq[j], seq[j + 1]);
                const std::int64_t fresh = (counts[key] += f);
                postings[key].insert(w);
                heap.push({fresh, seq[j], seq[j + 1]});
            }
        }
        counts.erase(best_key);
        postings.erase(best_key);

        merges.emplace_back(left_str, right_str);
        const std::string merged_str = left_str + right_str;
        // Distinct merges can spell the same token; the vocabulary keeps one.
        if (!vocab.contains(merged_str)) vocab.add(merged_str);
    }

    return BpeTokenizer(std::move(vocab), std::move(merges));
}

std::vector<std::uint32_t> tokenize(const BpeTokenizer& tok,
                                    std::string_view text) {
    // Normalizing here keeps ids stable however the text was produced; the
    // training corpus went through the same normalization at ingest.
    const std::string normalized = nfc(text);
    std::vector<std::uint32_t> ids;
    for (std::string_view word : split_words(normalized)) {
        for (const std::string& sym : tok.word_symbols(word)) {
            const std::uint32_t id = tok.vocabulary().find(sym);
            ids.push_back(id == Vocabulary::kNotFound ? Vocabulary::kUnk : id);
        }
    }
    return ids;
}

std::string detokenize(const BpeTokenizer& tok,
                       const std::vector<std::uint32_t>& ids) {
    std::string joined;
    for (std::uint32_t id : ids) {
        if (id >= tok.vocabulary().size()) {
            throw ArgumentError("detokenize: id " + std::to_string(id) +
                                " is outside the vocabulary (size " +
                                std::to_string(tok.vocabulary().size()) + ")");
        }
        switch (id) {
            case Vocabulary::kPad:
            case Vocabulary::kBos:
            case Vocabulary::kEos:
                break;  // structural; contributes no text
            case Vocabulary::kUnk:
                joined += "⁇";
                break;
            default:
                joined += tok.vocabulary().token(id);
        }
    }
    // Word markers become spaces, then outer whitespace goes.
    std::string text;
    std::size_t i = 0;
    while (i < joined.size()) {
        if (joined.compare(i, kWordMarker.size(), kWordMarker) == 0) {
            text.push_back(' ');
            i += kWordMarker.size();
        } else {
            text.push_back(joined[i]);
            ++i;
        }
    }
    std::size_t begin = text.find_first_not_of(' ');
    if (begin == std::string::npos) return "";
    std::size_t end = text.find_last_not_of(' ');
    return text.substr(begin, end - begin + 1);
}

std::pair<Vocabulary, OverlapMap> extend_vocabulary(
    const Vocabulary& source, const BpeTokenizer& target_tok) {
    const Vocabulary& target = target_tok.vocabulary();
    for (std::size_t i = 0; i < Vocabulary::kNumSpecials; ++i) {
        const std::string_view want = Vocabulary::special_names()[i];
        if (source.size() <= i || source.token(i) != want) {
            throw ConfigurationError(
                "extend_vocabulary: source vocabulary does not start with "
                "the special tokens (id " +
                std::to_string(i) + " should be " + std::string(want) + ")");
        }
        if (target.size() <= i || target.token(i) != want) {
            throw ConfigurationError(
                "extend_vocabulary: target vocabulary does not start with "
                "the special tokens (id " +
                std::to_string(i) + " should be " + std::string(want) + ")");
        }
    }

    Vocabulary merged;
    for (const std::string& tok : source.tokens()) merged.add(tok);

    OverlapMap map;
    for (std::uint32_t t = 0; t < target.size(); ++t) {
        const std::uint32_t s = source.find(target.token(t));
        if (s != Vocabulary::kNotFound) {
            map.shared.emplace(t, s);
        } else {
            map.novel.push_back(t);
            merged.add(target.token(t));
        }
    }
    return {std::move(merged), std::move(map)};
}

OverlapMap merged_overlap(const Vocabulary& source, const Vocabulary& merged) {
    if (merged.size() < source.size()) {
        throw ConfigurationError(
            "merged_overlap: merged vocabulary has " +
            std::to_string(merged.size()) + " tokens, fewer than the " +
            std::to_string(source.size()) + " source tokens");
    }
    OverlapMap map;
    for (std::uint32_t s = 0; s < source.size(); ++s) {
        if (merged.token(s) != source.token(s)) {
            throw ConfigurationError(
                "merged_overlap: id " + std::to_string(s) + " is \"" +
                merged.token(s) + "\" in the merged vocabulary but \"" +
                source.token(s) + "\" in the source");
        }
        map.shared.emplace(s, s);
    }
    for (std::uint32_t m = source.size(); m < merged.size(); ++m) {
        map.novel.push_back(m);
    }
    return map;
}

BpeTokenizer with_vocabulary(const BpeTokenizer& tok, Vocabulary vocabulary) {
    return BpeTokenizer(std::move(vocabulary), tok.merges());
}

OverlapReport overlap_report(const OverlapMap& map) {
    OverlapReport report;
    for (const auto& [target_id, source_id] : map.shared) {
        (void)source_id;
        if (target_id >= Vocabulary::kNumSpecials) ++report.shared_count;
    }
    report.novel_count = map.novel.size();
    const std::size_t denom = report.shared_count + report.novel_count;
    report.overlap_ratio =
        denom == 0 ? 1.0
                   : static_cast<double>(report.shared_count) /
                         static_cast<double>(denom);
    return report;
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const std::string& tok : vocab.tokens()) out << tok << '\n';
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    Vocabulary vocab;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            throw ParseError(path + ": empty vocabulary line", line_no);
        }
        if (line_no <= Vocabulary::kNumSpecials &&
            line != Vocabulary::special_names()[line_no - 1]) {
            throw ParseError(
                path + ": line " + std::to_string(line_no) + " must be " +
                    std::string(Vocabulary::special_names()[line_no - 1]) +
                    ", got " + line,
                line_no);
        }
        if (vocab.contains(line)) {
            throw ParseError(path + ": duplicate token " + line, line_no);
        }
        vocab.add(line);
    }
    if (vocab.size() < Vocabulary::kNumSpecials) {
        throw ParseError(path + ": vocabulary ends before the five special "
                         "tokens", line_no);
    }
    return vocab;
}

void save_merges(const std::vector<BpeTokenizer::MergePair>& merges,
                 const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& [left, right] : merges) {
        out << left << ' ' << right << '\n';
    }
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

std::vector<BpeTokenizer::MergePair> load_merges(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<BpeTokenizer::MergePair> merges;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t space = line.find(' ');
        if (space == std::string::npos || space == 0 ||
            space + 1 == line.size() ||
            line.find(' ', space + 1) != std::string::npos) {
            throw ParseError(
                path + ": merge line must be two space-separated symbols",
                line_no);
        }
        merges.emplace_back(line.substr(0, space), line.substr(space + 1));
    }
    return merges;
}

void save_tokenizer(const BpeTokenizer& tok, const std::string& vocab_path,
                    const std::string& merges_path) {
    save_vocabulary(tok.vocabulary(), vocab_path);
    save_merges(tok.merges(), merges_path);
}

BpeTokenizer load_tokenizer(const std::string& vocab_path,
                            const std::string& merges_path) {
    return BpeTokenizer(load_vocabulary(vocab_path),
                        load_merges(merges_path));
}

}  // namespace graftbench
