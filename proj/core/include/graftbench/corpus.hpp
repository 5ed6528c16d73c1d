#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace graftbench {

enum class Origin { natural, synthetic, mixed };

std::string_view origin_name(Origin o);

/// Line-oriented monolingual text. Every sentence is non-empty, trimmed,
/// NFC-normalized and free of interior newlines.
struct Corpus {
    std::string lang;  // ISO-639-3 code, or "multi"
    std::vector<std::string> sentences;
    Origin origin = Origin::natural;
};

struct CorpusStats {
    std::string lang;
    Origin origin = Origin::natural;
    double size_mb = 0.0;  // exact 10^6-byte megabytes; round when reporting
    std::size_t sentence_count = 0;
};

/// Word-substitution dictionary. Keys are case-folded source words; no
/// entry maps to an empty string.
struct Lexicon {
    enum class Fallback { passthrough, drop };

    std::unordered_map<std::string, std::string> entries;
    Fallback fallback = Fallback::passthrough;
};

/// Reads one or more sentence-per-line UTF-8 files, in the given order.
/// Lines are NFC-normalized and trimmed; empty lines are dropped.
/// Throws IoError (unreadable path) or ParseError (invalid UTF-8, with the
/// file-level byte offset).
Corpus ingest_corpus(const std::vector<std::string>& paths,
                     const std::string& lang);

/// Concatenates in list order. lang becomes "multi" and origin `mixed` when
/// the inputs disagree. Throws ArgumentError on an empty list.
Corpus concat_corpora(const std::vector<Corpus>& corpora);

CorpusStats corpus_stats(const Corpus& corpus);

/// Replaces each whitespace token by its lexicon entry (case-folded lookup,
/// leading capitalization preserved); out-of-lexicon tokens follow the
/// lexicon's fallback. A sentence whose tokens would all be dropped falls
/// back to passthrough so the output never contains empty sentences.
/// Output origin is `synthetic`. The seed is part of the Translator
/// interface; the dictionary path is deterministic and does not consume it.
Corpus dictionary_translate(const Corpus& corpus, const Lexicon& lexicon,
                            std::uint64_t seed);

struct SplitCorpora {
    Corpus train, dev, test;
};

/// Deterministic shuffle by seed, then a floor-based partition with the
/// remainder assigned to train. Ratios must be positive and sum to 1
/// within 1e-9.
SplitCorpora split_corpus(const Corpus& corpus, double train_ratio,
                          double dev_ratio, double test_ratio,
                          std::uint64_t seed);

/// Synthetic-text source. The dictionary translator is the only built-in;
/// an MT-backed implementation would plug in behind the same interface.
class Translator {
public:
    virtual ~Translator() = default;
    virtual Corpus translate(const Corpus& corpus, std::uint64_t seed) const = 0;
};

class DictionaryTranslator final : public Translator {
public:
    explicit DictionaryTranslator(Lexicon lexicon)
        : lexicon_(std::move(lexicon)) {}

    Corpus translate(const Corpus& corpus, std::uint64_t seed) const override {
        return dictionary_translate(corpus, lexicon_, seed);
    }

    const Lexicon& lexicon() const { return lexicon_; }

private:
    Lexicon lexicon_;
};

/// Lexicon file: two tab-separated columns `source<TAB>target`; lines
/// starting with '#' and blank lines are ignored. Keys are case-folded and
/// both columns NFC-normalized on load.
Lexicon load_lexicon(const std::string& path,
                     Lexicon::Fallback fallback = Lexicon::Fallback::passthrough);

/// One sentence per line, LF endings, trailing newline.
void write_corpus(const Corpus& corpus, const std::string& path);

/// CSV with header `lang,origin,size_mb,sentence_count`; size_mb rounded to
/// one decimal, ties up.
std::string stats_csv(const std::vector<CorpusStats>& stats);

}  // namespace graftbench
