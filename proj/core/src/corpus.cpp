#include "graftbench/corpus.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "graftbench/error.hpp"
#include "graftbench/rng.hpp"
#include "graftbench/rounding.hpp"
#include "graftbench/unicode.hpp"

namespace graftbench {
namespace {

bool is_ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' ||
           c == '\v';
}

std::string_view trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_ascii_space(s[b])) ++b;
    while (e > b && is_ascii_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

bool is_ascii(std::string_view s) {
    for (char c : s)
        if (static_cast<unsigned char>(c) & 0x80) return false;
    return true;
}

std::vector<std::string_view> split_words(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_ascii_space(s[i])) ++i;
        std::size_t b = i;
        while (i < s.size() && !is_ascii_space(s[i])) ++i;
        if (i > b) out.push_back(s.substr(b, i - b));
    }
    return out;
}

std::string translate_sentence(std::string_view sentence, const Lexicon& lex,
                               Lexicon::Fallback fallback) {
    std::string out;
    for (std::string_view tok : split_words(sentence)) {
        std::string key = fold_case_simple(tok);
        auto it = lex.entries.find(key);
        std::string piece;
        if (it != lex.entries.end()) {
            piece = starts_uppercase(tok) ? capitalize_first(it->second)
                                          : it->second;
        } else if (fallback == Lexicon::Fallback::passthrough) {
            piece.assign(tok);
        } else {
            continue;
        }
        if (!out.empty()) out.push_back(' ');
        out += piece;
    }
    return out;
}

}  // namespace

std::string_view origin_name(Origin o) {
    switch (o) {
        case Origin::natural: return "natural";
        case Origin::synthetic: return "synthetic";
        case Origin::mixed: return "mixed";
    }
    return "natural";
}

Corpus ingest_corpus(const std::vector<std::string>& paths,
                     const std::string& lang) {
    Corpus corpus;
    corpus.lang = lang;
    corpus.origin = Origin::natural;
    for (const std::string& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open corpus file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        if (in.bad()) throw IoError("read failed for corpus file: " + path);
        const std::string content = buf.str();

        std::size_t pos = 0;
        while (pos <= content.size()) {
            std::size_t nl = content.find('\n', pos);
            const std::size_t end = (nl == std::string::npos) ? content.size() : nl;
            std::string_view raw(content.data() + pos, end - pos);
            std::string_view t = trim(raw);
            if (!t.empty()) {
                if (is_ascii(t)) {
                    // ASCII is closed under NFC; skip the normalization pass.
                    corpus.sentences.emplace_back(t);
                } else {
                    std::size_t bad = 0;
                    if (!utf8_valid(t, &bad)) {
                        const std::size_t offset =
                            pos + (t.data() - (content.data() + pos)) + bad;
                        throw ParseError("invalid UTF-8 in " + path +
                                             " at byte offset " +
                                             std::to_string(offset),
                                         0, static_cast<long long>(offset));
                    }
                    corpus.sentences.push_back(nfc(t));
                }
            }
            if (nl == std::string::npos) break;
            pos = nl + 1;
        }
    }
    return corpus;
}

Corpus concat_corpora(const std::vector<Corpus>& corpora) {
    if (corpora.empty())
        throw ArgumentError("concat_corpora: empty corpus list");
    Corpus out = corpora.front();
    for (std::size_t i = 1; i < corpora.size(); ++i) {
        const Corpus& c = corpora[i];
        if (c.lang != out.lang) out.lang = "multi";
        if (c.origin != out.origin) out.origin = Origin::mixed;
        out.sentences.insert(out.sentences.end(), c.sentences.begin(),
                             c.sentences.end());
    }
    return out;
}

CorpusStats corpus_stats(const Corpus& corpus) {
    CorpusStats s;
    s.lang = corpus.lang;
    s.origin = corpus.origin;
    s.sentence_count = corpus.sentences.size();
    std::uint64_t bytes = 0;
    for (const std::string& line : corpus.sentences) bytes += line.size() + 1;
    s.size_mb = static_cast<double>(bytes) / 1e6;
    return s;
}

Corpus dictionary_translate(const Corpus& corpus, const Lexicon& lexicon,
                            std::uint64_t seed) {
    (void)seed;
    if (corpus.sentences.empty())
        throw ArgumentError("dictionary_translate: empty corpus");
    Corpus out;
    out.lang = corpus.lang;
    out.origin = Origin::synthetic;
    out.sentences.reserve(corpus.sentences.size());
    for (const std::string& sentence : corpus.sentences) {
        std::string t = translate_sentence(sentence, lexicon, lexicon.fallback);
        if (t.empty())
            t = translate_sentence(sentence, lexicon,
                                   Lexicon::Fallback::passthrough);
        out.sentences.push_back(std::move(t));
    }
    return out;
}

SplitCorpora split_corpus(const Corpus& corpus, double train_ratio,
                          double dev_ratio, double test_ratio,
                          std::uint64_t seed) {
    if (!(train_ratio > 0.0) || !(dev_ratio > 0.0) || !(test_ratio > 0.0))
        throw ArgumentError("split_corpus: ratios must be positive");
    if (std::abs(train_ratio + dev_ratio + test_ratio - 1.0) > 1e-9)
        throw ArgumentError("split_corpus: ratios must sum to 1");

    const std::size_t n = corpus.sentences.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const std::size_t n_dev =
        static_cast<std::size_t>(std::floor(static_cast<double>(n) * dev_ratio));
    const std::size_t n_test =
        static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_ratio));
    // floor-based sizes; the remainder lands in train
    const std::size_t n_train = n - n_dev - n_test;

    SplitCorpora out;
    for (Corpus* c : {&out.train, &out.dev, &out.test}) {
        c->lang = corpus.lang;
        c->origin = corpus.origin;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::string& s = corpus.sentences[order[i]];
        if (i < n_train)
            out.train.sentences.push_back(s);
        else if (i < n_train + n_dev)
            out.dev.sentences.push_back(s);
        else
            out.test.sentences.push_back(s);
    }
    return out;
}

Lexicon load_lexicon(const std::string& path, Lexicon::Fallback fallback) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open lexicon file: " + path);
    Lexicon lex;
    lex.fallback = fallback;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const std::size_t tab = t.find('\t');
        if (tab == std::string_view::npos)
            throw ParseError("lexicon line " + std::to_string(lineno) +
                                 ": expected source<TAB>target",
                             lineno);
        std::string_view src = trim(t.substr(0, tab));
        std::string_view dst = trim(t.substr(tab + 1));
        if (src.empty() || dst.empty())
            throw ParseError("lexicon line " + std::to_string(lineno) +
                                 ": empty source or target",
                             lineno);
        lex.entries[fold_case_simple(nfc(src))] = nfc(dst);
    }
    return lex;
}

void write_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write corpus file: " + path);
    for (const std::string& s : corpus.sentences) {
        out << s << '\n';
    }
    if (!out) throw IoError("write failed for corpus file: " + path);
}

std::string stats_csv(const std::vector<CorpusStats>& stats) {
    std::string out = "lang,origin,size_mb,sentence_count\n";
    for (const CorpusStats& s : stats) {
        out += s.lang;
        out += ',';
        out += origin_name(s.origin);
        out += ',';
        out += format_1dp(round_half_up_1dp(s.size_mb));
        out += ',';
        out += std::to_string(s.sentence_count);
        out += '\n';
    }
    return out;
}

}  // namespace graftbench
