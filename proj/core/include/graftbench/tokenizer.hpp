#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "graftbench/corpus.hpp"

namespace graftbench {

/// SentencePiece-style word-boundary marker (U+2581), prefixed to
/// word-initial symbols.
inline constexpr std::string_view kWordMarker = "▁";

/// Subword inventory. Ids are contiguous 0..|V|-1; the five special tokens
/// always occupy ids 0-4.
class Vocabulary {
public:
    static constexpr std::uint32_t kPad = 0;
    static constexpr std::uint32_t kUnk = 1;
    static constexpr std::uint32_t kBos = 2;
    static constexpr std::uint32_t kEos = 3;
    static constexpr std::uint32_t kMask = 4;
    static constexpr std::size_t kNumSpecials = 5;

    static const std::array<std::string_view, kNumSpecials>& special_names();

    /// A vocabulary holding only the five special tokens.
    static Vocabulary with_specials();

    /// Appends a token; throws ConfigurationError on duplicates.
    std::uint32_t add(std::string token);

    bool contains(std::string_view token) const {
        return index_.find(std::string(token)) != index_.end();
    }
    /// Id of a token, or kNotFound.
    std::uint32_t find(std::string_view token) const;

    const std::string& token(std::uint32_t id) const { return tokens_[id]; }
    const std::vector<std::string>& tokens() const { return tokens_; }
    std::size_t size() const { return tokens_.size(); }

    /// FNV-1a over the token list; used to pair embedding matrices with the
    /// vocabulary they were built for.
    std::uint64_t fingerprint() const;

    static constexpr std::uint32_t kNotFound = 0xFFFFFFFFu;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

/// Deterministic byte-pair tokenizer: a vocabulary plus an ordered merge
/// list. Immutable after construction.
class BpeTokenizer {
public:
    using MergePair = std::pair<std::string, std::string>;

    BpeTokenizer() = default;
    /// Throws ConfigurationError on duplicate merge pairs.
    BpeTokenizer(Vocabulary vocabulary, std::vector<MergePair> merges);

    const Vocabulary& vocabulary() const { return vocabulary_; }
    const std::vector<MergePair>& merges() const { return merges_; }

    /// Merged symbol strings for one whitespace-free word (the first symbol
    /// carries the word marker).
    std::vector<std::string> word_symbols(std::string_view word) const;

private:
    friend std::vector<std::uint32_t> tokenize(const BpeTokenizer&,
                                               std::string_view);
    Vocabulary vocabulary_;
    std::vector<MergePair> merges_;
    std::unordered_map<std::string, std::size_t> merge_rank_;
};

/// Trains a BPE tokenizer. The vocabulary is specials + corpus alphabet
/// (plus the word marker) + merge outputs, truncated to vocab_size. Pair
/// frequency ties break to the lexicographically smaller pair, making
/// training reproducible across platforms. Throws ArgumentError when
/// vocab_size cannot hold the specials and the alphabet, stating the
/// minimum.
BpeTokenizer train_bpe(const Corpus& corpus, std::size_t vocab_size);

/// Whitespace pretokenization, greedy merge application, unknown characters
/// to the unk id. Total on valid UTF-8.
std::vector<std::uint32_t> tokenize(const BpeTokenizer& tok,
                                    std::string_view text);

/// Inverse of tokenize for unk-free text: concatenates symbols, turns the
/// word marker into spaces and trims. Unk ids render as "⁇"; pad/bos/eos
/// are structural and render as nothing. Throws ArgumentError on
/// out-of-range ids.
std::string detokenize(const BpeTokenizer& tok,
                       const std::vector<std::uint32_t>& ids);

/// How one vocabulary's ids relate to source ids. Keys of shared and the
/// entries of novel are ids of the vocabulary the map describes: the target
/// tokenizer's for extend_vocabulary, the merged vocabulary's for
/// merged_overlap. shared includes the five specials (mapped by name);
/// shared and novel together cover every described id.
struct OverlapMap {
    std::unordered_map<std::uint32_t, std::uint32_t> shared;  // described -> source
    std::vector<std::uint32_t> novel;  // ascending described ids
};

/// Merged vocabulary: source order preserved, novel target tokens appended
/// in target-id order. Source ids are never reassigned. The map describes
/// the target tokenizer's vocabulary (for overlap statistics). Throws
/// ConfigurationError when the special tokens disagree.
std::pair<Vocabulary, OverlapMap> extend_vocabulary(
    const Vocabulary& source, const BpeTokenizer& target_tok);

/// The map an embedding initializer needs when the vocabulary being
/// initialized is the merged one: every source token maps to itself and the
/// appended tokens are novel. Throws ConfigurationError when merged does
/// not extend source (id prefix mismatch).
OverlapMap merged_overlap(const Vocabulary& source, const Vocabulary& merged);

/// Same merges, different vocabulary — the tokenizer a model uses after its
/// vocabulary was extended.
BpeTokenizer with_vocabulary(const BpeTokenizer& tok, Vocabulary vocabulary);

struct OverlapReport {
    std::size_t shared_count = 0;  // non-special shared tokens
    std::size_t novel_count = 0;
    double overlap_ratio = 0.0;  // shared / (shared + novel); 1.0 when empty
};

OverlapReport overlap_report(const OverlapMap& map);

/// Vocab file: one token per line, line number = id; the first five lines
/// must be the special tokens.
void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

/// Merges file: one `left right` pair per line, in application order.
void save_merges(const std::vector<BpeTokenizer::MergePair>& merges,
                 const std::string& path);
std::vector<BpeTokenizer::MergePair> load_merges(const std::string& path);

void save_tokenizer(const BpeTokenizer& tok, const std::string& vocab_path,
                    const std::string& merges_path);
BpeTokenizer load_tokenizer(const std::string& vocab_path,
                            const std::string& merges_path);

}  // namespace graftbench
