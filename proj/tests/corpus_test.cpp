#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <map>
#include <string>
#include <vector>

#include "graftbench/corpus.hpp"
#include "graftbench/error.hpp"
#include "graftbench/rng.hpp"

using namespace graftbench;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("gb_corpus_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name, const std::string& content) {
        const fs::path p = path / name;
        std::ofstream out(p, std::ios::binary);
        out << content;
        return p.string();
    }
};

Corpus make_corpus(std::vector<std::string> sentences,
                   std::string lang = "kon",
                   Origin origin = Origin::natural) {
    Corpus c;
    c.lang = std::move(lang);
    c.sentences = std::move(sentences);
    c.origin = origin;
    return c;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("ingest trims, drops empties and preserves order") {
    TempDir dir;
    const auto p = dir.file("a.txt", "Ngeve \n\nalwa\n");
    const Corpus c = ingest_corpus({p}, "kon");
    REQUIRE(c.sentences.size() == 2);
    CHECK(c.sentences[0] == "Ngeve");
    CHECK(c.sentences[1] == "alwa");
    CHECK(c.lang == "kon");
    CHECK(c.origin == Origin::natural);
}

TEST_CASE("ingest concatenates files in path order") {
    TempDir dir;
    const auto pa = dir.file("a.txt", "a\n");
    const auto pb = dir.file("b.txt", "b\n");
    const Corpus c = ingest_corpus({pa, pb}, "xx");
    REQUIRE(c.sentences.size() == 2);
    CHECK(c.sentences[0] == "a");
    CHECK(c.sentences[1] == "b");
}

TEST_CASE("ingest normalizes decomposed accents") {
    TempDir dir;
    const auto p = dir.file("a.txt", "caf\x65\xcc\x81\n");  // e + U+0301
    const Corpus c = ingest_corpus({p}, "fra");
    REQUIRE(c.sentences.size() == 1);
    CHECK(c.sentences[0] == "caf\xc3\xa9");  // U+00E9
}

TEST_CASE("ingest reports missing files and bad encoding") {
    TempDir dir;
    CHECK_THROWS_WITH_AS(ingest_corpus({(dir.path / "nope.txt").string()}, "x"),
                         doctest::Contains("nope.txt"), IoError);
    const auto p = dir.file("bad.txt", "ok\nbad\xff\n");
    try {
        ingest_corpus({p}, "x");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.byte_offset() == 6);  // the 0xff byte, file-level offset
    }
}

TEST_CASE("ingest then write then ingest is a fixed point") {
    TempDir dir;
    const auto p =
        dir.file("a.txt", "  Mbote na yo  \ncafe\x65\xcc\x81 mingi\n\n");
    const Corpus once = ingest_corpus({p}, "lin");
    const auto q = (dir.path / "round.txt").string();
    write_corpus(once, q);
    const Corpus twice = ingest_corpus({q}, "lin");
    CHECK(once.sentences == twice.sentences);
}

TEST_CASE("concat adds lengths and detects mixed inputs") {
    const Corpus c1 = make_corpus({"a", "b", "c"});
    const Corpus c2 = make_corpus({"d", "e", "f", "g"});
    const Corpus joined = concat_corpora({c1, c2});
    CHECK(joined.sentences.size() == 7);
    CHECK(joined.lang == "kon");
    CHECK(joined.origin == Origin::natural);

    const Corpus identity = concat_corpora({c1});
    CHECK(identity.sentences == c1.sentences);
    CHECK(identity.lang == c1.lang);

    const Corpus other = make_corpus({"x"}, "lin", Origin::synthetic);
    const Corpus mixed = concat_corpora({c1, other});
    CHECK(mixed.lang == "multi");
    CHECK(mixed.origin == Origin::mixed);

    CHECK_THROWS_AS(concat_corpora({}), ArgumentError);
}

TEST_CASE("concat sentence counts are additive across many languages") {
    // Five corpora sized like the data table scaled down by 10^3, totalling
    // 7,187.595k scaled to 7,187 + 0.595 split below.
    const std::vector<std::size_t> sizes = {878, 800, 2189, 2415, 905};
    std::vector<Corpus> parts;
    std::size_t total = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        std::vector<std::string> sents(sizes[i], "s");
        parts.push_back(make_corpus(std::move(sents),
                                    "l" + std::to_string(i)));
        total += sizes[i];
    }
    const Corpus joined = concat_corpora(parts);
    CHECK(joined.sentences.size() == total);
    CHECK(corpus_stats(joined).sentence_count ==
          corpus_stats(parts[0]).sentence_count +
              corpus_stats(parts[1]).sentence_count +
              corpus_stats(parts[2]).sentence_count +
              corpus_stats(parts[3]).sentence_count +
              corpus_stats(parts[4]).sentence_count);
}

TEST_CASE("stats match the byte definition") {
    const Corpus empty = make_corpus({});
    CHECK(corpus_stats(empty).size_mb == 0.0);
    CHECK(corpus_stats(empty).sentence_count == 0);

    // 1,000 sentences of 999 bytes; newlines bring the total to 10^6.
    std::vector<std::string> sents(1000, std::string(999, 'x'));
    const CorpusStats s = corpus_stats(make_corpus(std::move(sents)));
    CHECK(s.size_mb == doctest::Approx(1.0));
    CHECK(s.sentence_count == 1000);
}

TEST_CASE("stats of split-origin corpora add like the reported table row") {
    // Natural 112.1 MB + synthetic 107.9 MB = 220.0 MB combined.
    auto corpus_of_bytes = [](std::size_t target_bytes, Origin origin) {
        // Large sentences keep the vector small: 100,000 bytes each.
        std::vector<std::string> sents(target_bytes / 100'000,
                                       std::string(99'999, 'k'));
        return make_corpus(std::move(sents), "kon", origin);
    };
    const Corpus natural = corpus_of_bytes(112'100'000, Origin::natural);
    const Corpus synthetic = corpus_of_bytes(107'900'000, Origin::synthetic);
    CHECK(stats_csv({corpus_stats(natural)}).find("112.1") !=
          std::string::npos);
    CHECK(stats_csv({corpus_stats(synthetic)}).find("107.9") !=
          std::string::npos);
    const Corpus combined = concat_corpora({natural, synthetic});
    CHECK(corpus_stats(combined).size_mb == doctest::Approx(220.0));
    CHECK(stats_csv({corpus_stats(combined)}).find("220.0") !=
          std::string::npos);
    CHECK(combined.origin == Origin::mixed);
}

TEST_CASE("stats csv layout") {
    const CorpusStats s = corpus_stats(make_corpus({"abc"}));
    const std::string csv = stats_csv({s});
    CHECK(csv == "lang,origin,size_mb,sentence_count\nkon,natural,0.0,1\n");
}

TEST_CASE("dictionary translation substitutes and preserves casing") {
    Lexicon lex;
    lex.entries = {{"good", "mbote"}, {"day", "kilumbu"}};
    const Corpus in = make_corpus({"good day"}, "eng");
    const Corpus out = dictionary_translate(in, lex, 0);
    REQUIRE(out.sentences.size() == 1);
    CHECK(out.sentences[0] == "mbote kilumbu");
    CHECK(out.origin == Origin::synthetic);

    const Corpus cap = dictionary_translate(
        make_corpus({"Good day"}, "eng"), lex, 0);
    CHECK(cap.sentences[0] == "Mbote kilumbu");
}

TEST_CASE("dictionary translation fallback rules") {
    Lexicon lex;
    lex.entries = {{"good", "mbote"}};
    lex.fallback = Lexicon::Fallback::passthrough;
    CHECK(dictionary_translate(make_corpus({"good xyz"}, "eng"), lex, 0)
              .sentences[0] == "mbote xyz");

    lex.fallback = Lexicon::Fallback::drop;
    CHECK(dictionary_translate(make_corpus({"good xyz"}, "eng"), lex, 0)
              .sentences[0] == "mbote");
}

TEST_CASE("dictionary translation preserves count and never empties") {
    Lexicon lex;
    lex.entries = {{"alpha", "a"}};
    lex.fallback = Lexicon::Fallback::drop;
    std::vector<std::string> sents;
    Rng rng(600);
    for (int i = 0; i < 600; ++i) {
        // Some sentences have no lexicon hits at all.
        sents.push_back(rng.uniform() < 0.5 ? "alpha beta" : "gamma delta");
    }
    const Corpus out =
        dictionary_translate(make_corpus(std::move(sents), "eng"), lex, 1);
    CHECK(out.sentences.size() == 600);
    for (const std::string& s : out.sentences) CHECK_FALSE(s.empty());
}

TEST_CASE("split sizes follow the floor rule") {
    const Corpus c = make_corpus(
        {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"});
    const SplitCorpora s = split_corpus(c, 0.8, 0.1, 0.1, 7);
    CHECK(s.train.sentences.size() == 8);
    CHECK(s.dev.sentences.size() == 1);
    CHECK(s.test.sentences.size() == 1);

    const SplitCorpora again = split_corpus(c, 0.8, 0.1, 0.1, 7);
    CHECK(again.train.sentences == s.train.sentences);
    CHECK(again.dev.sentences == s.dev.sentences);
    CHECK(again.test.sentences == s.test.sentences);
}

TEST_CASE("splits cover the input as a multiset") {
    Rng rng(31);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(40);
        std::vector<std::string> sents;
        for (std::size_t i = 0; i < n; ++i) {
            // Duplicates on purpose: coverage must hold as a multiset.
            sents.push_back("s" + std::to_string(rng.uniform_int(8)));
        }
        const Corpus c = make_corpus(sents);
        const SplitCorpora s = split_corpus(c, 0.6, 0.2, 0.2, trial);
        std::map<std::string, int> want, got;
        for (const auto& x : sents) ++want[x];
        for (const auto& x : s.train.sentences) ++got[x];
        for (const auto& x : s.dev.sentences) ++got[x];
        for (const auto& x : s.test.sentences) ++got[x];
        CHECK(want == got);
    }
}

TEST_CASE("split rejects bad ratios") {
    const Corpus c = make_corpus({"a", "b"});
    CHECK_THROWS_AS(split_corpus(c, 0.5, 0.5, 0.5, 0), ArgumentError);
    CHECK_THROWS_AS(split_corpus(c, 1.0, 0.0, 0.0, 0), ArgumentError);
    CHECK_THROWS_AS(split_corpus(c, -0.2, 0.6, 0.6, 0), ArgumentError);
}

TEST_CASE("lexicon file parsing") {
    TempDir dir;
    const auto p = dir.file("lex.tsv",
                            "# comment line\n"
                            "Good\tMbote\n"
                            "\n"
                            "day\tkilumbu\n");
    const Lexicon lex = load_lexicon(p);
    CHECK(lex.entries.size() == 2);
    CHECK(lex.entries.at("good") == "Mbote");
    CHECK(lex.entries.at("day") == "kilumbu");

    const auto bad = dir.file("bad.tsv", "no-tab-here\n");
    CHECK_THROWS_AS(load_lexicon(bad), ParseError);
}

}  // TEST_SUITE
