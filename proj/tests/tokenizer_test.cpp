#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "graftbench/corpus.hpp"
#include "graftbench/error.hpp"
#include "graftbench/rng.hpp"
#include "graftbench/tokenizer.hpp"

using namespace graftbench;
namespace fs = std::filesystem;

namespace {

Corpus make_corpus(std::vector<std::string> sentences) {
    Corpus c;
    c.lang = "xx";
    c.sentences = std::move(sentences);
    return c;
}

/// Brute-force most-frequent adjacent pair over marker-prefixed character
/// sequences; ties to the lexicographically smaller pair.
std::pair<std::string, std::string> brute_force_first_merge(
    const std::vector<std::string>& words) {
    std::map<std::pair<std::string, std::string>, long> counts;
    for (const std::string& w : words) {
        std::vector<std::string> syms;
        syms.emplace_back(kWordMarker);
        std::size_t i = 0;
        while (i < w.size()) {
            std::size_t len = 1;
            while (i + len < w.size() &&
                   (static_cast<unsigned char>(w[i + len]) & 0xC0) == 0x80) {
                ++len;
            }
            syms.push_back(w.substr(i, len));
            i += len;
        }
        for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
            ++counts[{syms[k], syms[k + 1]}];
        }
    }
    std::pair<std::string, std::string> best;
    long best_count = -1;
    for (const auto& [pair, count] : counts) {
        if (count > best_count) {  // map iterates in ascending pair order
            best = pair;
            best_count = count;
        }
    }
    return best;
}

/// Random word from a small alphabet; exercises merges and ties.
std::string random_word(Rng& rng) {
    static const char alphabet[] = "aabbcde";
    const std::size_t n = 1 + rng.uniform_int(6);
    std::string w;
    for (std::size_t i = 0; i < n; ++i) {
        w.push_back(alphabet[rng.uniform_int(sizeof(alphabet) - 1)]);
    }
    return w;
}

}  // namespace

TEST_SUITE("tokenizer") {

TEST_CASE("vocabulary specials and ids") {
    const Vocabulary v = Vocabulary::with_specials();
    CHECK(v.size() == 5);
    CHECK(v.token(0) == "<pad>");
    CHECK(v.token(1) == "<unk>");
    CHECK(v.token(2) == "<s>");
    CHECK(v.token(3) == "</s>");
    CHECK(v.token(4) == "<mask>");
    CHECK(v.find("<mask>") == Vocabulary::kMask);
    CHECK(v.find("absent") == Vocabulary::kNotFound);

    Vocabulary w = Vocabulary::with_specials();
    w.add("a");
    CHECK(w.find("a") == 5);
    CHECK_THROWS_AS(w.add("a"), ConfigurationError);
    CHECK(v.fingerprint() != w.fingerprint());
}

TEST_CASE("training learns the most frequent pair first") {
    const Corpus c = make_corpus({"aaab", "aaab", "ab"});
    const BpeTokenizer tok = train_bpe(c, 12);
    REQUIRE_FALSE(tok.merges().empty());
    CHECK(tok.merges()[0].first == "a");
    CHECK(tok.merges()[0].second == "a");
    CHECK(brute_force_first_merge({"aaab", "aaab", "ab"}) ==
          std::make_pair(std::string("a"), std::string("a")));
    CHECK(tok.vocabulary().size() == 12);
}

TEST_CASE("first merge matches the brute-force oracle on random corpora") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> words;
        const std::size_t n = 2 + rng.uniform_int(12);
        for (std::size_t i = 0; i < n; ++i) words.push_back(random_word(rng));
        const Corpus c = make_corpus(words);
        // Room for exactly one merge beyond specials + alphabet.
        std::set<char> alpha;
        for (const auto& w : words) alpha.insert(w.begin(), w.end());
        const std::size_t base = 5 + alpha.size() + 1;  // +1 for the marker
        const BpeTokenizer tok = train_bpe(c, base + 1);
        REQUIRE(tok.merges().size() == 1);
        CHECK(tok.merges()[0] == brute_force_first_merge(words));
    }
}

TEST_CASE("minimum vocabulary size learns zero merges") {
    const Corpus c = make_corpus({"ab ba"});
    // alphabet = {a, b, marker}
    const BpeTokenizer tok = train_bpe(c, 8);
    CHECK(tok.merges().empty());
    CHECK(tok.vocabulary().size() == 8);

    CHECK_THROWS_WITH_AS(train_bpe(c, 7), doctest::Contains("at least 8"),
                         ArgumentError);
}

TEST_CASE("training is deterministic") {
    Rng rng(77);
    std::vector<std::string> words;
    for (int i = 0; i < 60; ++i) words.push_back(random_word(rng));
    const Corpus c = make_corpus(words);
    const BpeTokenizer t1 = train_bpe(c, 40);
    const BpeTokenizer t2 = train_bpe(c, 40);
    CHECK(t1.merges() == t2.merges());
    CHECK(t1.vocabulary().tokens() == t2.vocabulary().tokens());
}

TEST_CASE("tokenize basics") {
    const Corpus c = make_corpus({"aaab", "aaab", "ab"});
    const BpeTokenizer tok = train_bpe(c, 12);

    CHECK(tokenize(tok, "").empty());

    // Characters never seen in training map to unk.
    const auto ids = tokenize(tok, "zzz");
    REQUIRE_FALSE(ids.empty());
    std::size_t unks = 0;
    for (std::uint32_t id : ids) unks += id == Vocabulary::kUnk;
    // The word marker itself is known; every z is unk.
    CHECK(unks == 3);

    // A fully merged training word becomes one id.
    const auto word = tokenize(tok, "aaab");
    REQUIRE(word.size() == 1);
    CHECK(tok.vocabulary().token(word[0]) ==
          std::string(kWordMarker) + "aaab");
}

TEST_CASE("round trip through tokenize and detokenize") {
    Rng rng(55);
    std::vector<std::string> sents;
    for (int i = 0; i < 1000; ++i) {
        std::string s = random_word(rng);
        const std::size_t extra = rng.uniform_int(5);
        for (std::size_t j = 0; j < extra; ++j) {
            s += " " + random_word(rng);
        }
        sents.push_back(s);
    }
    const Corpus c = make_corpus(sents);
    const BpeTokenizer tok = train_bpe(c, 64);
    for (const std::string& s : sents) {
        CHECK(detokenize(tok, tokenize(tok, s)) == s);
    }
}

TEST_CASE("detokenize handles specials and bad ids") {
    const BpeTokenizer tok = train_bpe(make_corpus({"ab"}), 9);
    CHECK(detokenize(tok, {}) == "");
    CHECK(detokenize(tok, {Vocabulary::kBos, Vocabulary::kEos}) == "");
    const std::string with_unk =
        detokenize(tok, {Vocabulary::kUnk});
    CHECK(with_unk == "⁇");
    CHECK_THROWS_AS(detokenize(tok, {9999}), ArgumentError);
}

TEST_CASE("vocabulary extension keeps source ids and appends novel") {
    const BpeTokenizer source_tok =
        train_bpe(make_corpus({"aa ab", "aa"}), 12);
    const Vocabulary& source = source_tok.vocabulary();

    // Target trained on overlapping text: some shared, some novel tokens.
    const BpeTokenizer target_tok =
        train_bpe(make_corpus({"ab cd", "cd cd"}), 14);

    const auto [merged, map] = extend_vocabulary(source, target_tok);

    // Source prefix unchanged.
    for (std::uint32_t i = 0; i < source.size(); ++i) {
        CHECK(merged.token(i) == source.token(i));
    }
    CHECK(merged.size() == source.size() + map.novel.size());

    // Shared ids resolve to the same strings; novel ids name new strings.
    for (const auto& [t, s] : map.shared) {
        CHECK(target_tok.vocabulary().token(t) == source.token(s));
    }
    std::set<std::uint32_t> seen;
    for (std::uint32_t t : map.novel) {
        CHECK(source.find(target_tok.vocabulary().token(t)) ==
              Vocabulary::kNotFound);
        seen.insert(t);
    }
    // shared + novel cover every target id exactly once.
    for (const auto& [t, s] : map.shared) {
        (void)s;
        CHECK(seen.insert(t).second);
    }
    CHECK(seen.size() == target_tok.vocabulary().size());

    // Specials map by name.
    for (std::uint32_t i = 0; i < Vocabulary::kNumSpecials; ++i) {
        CHECK(map.shared.at(i) == i);
    }
}

TEST_CASE("merged overlap maps every source id to itself") {
    const BpeTokenizer source_tok =
        train_bpe(make_corpus({"aa ab", "aa"}), 12);
    const Vocabulary& source = source_tok.vocabulary();
    const BpeTokenizer target_tok =
        train_bpe(make_corpus({"ab cd", "cd cd"}), 14);
    const auto [merged, tok_map] = extend_vocabulary(source, target_tok);

    const OverlapMap map = merged_overlap(source, merged);
    CHECK(map.shared.size() == source.size());
    for (std::uint32_t s = 0; s < source.size(); ++s) {
        CHECK(map.shared.at(s) == s);
    }
    CHECK(map.novel.size() == merged.size() - source.size());
    for (std::size_t i = 0; i < map.novel.size(); ++i) {
        CHECK(map.novel[i] == source.size() + i);
    }
    // Appended tail and the tokenizer-space novel list name the same
    // strings in order.
    REQUIRE(tok_map.novel.size() == map.novel.size());
    for (std::size_t i = 0; i < map.novel.size(); ++i) {
        CHECK(merged.token(map.novel[i]) ==
              target_tok.vocabulary().token(tok_map.novel[i]));
    }

    // A vocabulary that does not extend the source is rejected.
    CHECK_THROWS_AS(merged_overlap(merged, source), ConfigurationError);
    Vocabulary scrambled = Vocabulary::with_specials();
    scrambled.add("zz");
    for (std::uint32_t i = Vocabulary::kNumSpecials + 1; i < merged.size();
         ++i) {
        scrambled.add(merged.token(i) + "!");
    }
    CHECK_THROWS_AS(merged_overlap(source, scrambled), ConfigurationError);
}

TEST_CASE("extension containment and arithmetic cases") {
    // Target vocabulary contained in source: no novel tokens.
    const BpeTokenizer big = train_bpe(make_corpus({"aaab ab aa"}), 16);
    const BpeTokenizer small = train_bpe(make_corpus({"ab ab"}), 9);
    const auto [merged1, map1] = extend_vocabulary(big.vocabulary(), small);
    CHECK(map1.novel.empty());
    CHECK(merged1.size() == big.vocabulary().size());

    // Disjoint non-special sets of sizes 100 and 40 merge to 140 + specials.
    Vocabulary source = Vocabulary::with_specials();
    for (int i = 0; i < 100; ++i) source.add("s" + std::to_string(i));
    Vocabulary target = Vocabulary::with_specials();
    for (int i = 0; i < 40; ++i) target.add("t" + std::to_string(i));
    const BpeTokenizer target_tok(target, {});
    const auto [merged2, map2] = extend_vocabulary(source, target_tok);
    CHECK(merged2.size() == 145);
    CHECK(map2.novel.size() == 40);

    // The published precedent, at desk scale: 250 + 150 novel = 400.
    Vocabulary source3 = Vocabulary::with_specials();
    for (int i = 0; i < 245; ++i) source3.add("s" + std::to_string(i));
    Vocabulary target3 = Vocabulary::with_specials();
    for (int i = 0; i < 150; ++i) target3.add("t" + std::to_string(i));
    REQUIRE(source3.size() == 250);
    const auto [merged3, map3] =
        extend_vocabulary(source3, BpeTokenizer(target3, {}));
    CHECK(map3.novel.size() == 150);
    CHECK(merged3.size() == 400);
}

TEST_CASE("extension rejects mismatched specials") {
    Vocabulary bad;
    bad.add("<pad>");
    bad.add("<unk>");
    bad.add("<s>");
    bad.add("</s>");
    bad.add("<msk>");  // wrong name
    const BpeTokenizer target(Vocabulary::with_specials(), {});
    CHECK_THROWS_AS(extend_vocabulary(bad, target), ConfigurationError);
}

TEST_CASE("overlap report ratios") {
    OverlapMap all_shared;
    for (std::uint32_t i = 0; i < 5; ++i) all_shared.shared.emplace(i, i);
    all_shared.shared.emplace(5, 9);
    all_shared.shared.emplace(6, 7);
    const OverlapReport r1 = overlap_report(all_shared);
    CHECK(r1.shared_count == 2);
    CHECK(r1.novel_count == 0);
    CHECK(r1.overlap_ratio == 1.0);

    OverlapMap all_novel;
    for (std::uint32_t i = 0; i < 5; ++i) all_novel.shared.emplace(i, i);
    all_novel.novel = {5, 6, 7};
    const OverlapReport r2 = overlap_report(all_novel);
    CHECK(r2.shared_count == 0);
    CHECK(r2.novel_count == 3);
    CHECK(r2.overlap_ratio == 0.0);

    OverlapMap specials_only;
    for (std::uint32_t i = 0; i < 5; ++i) specials_only.shared.emplace(i, i);
    CHECK(overlap_report(specials_only).overlap_ratio == 1.0);
}

TEST_CASE("overlap map matches brute-force set intersection") {
    Rng rng(808);
    for (int trial = 0; trial < 50; ++trial) {
        Vocabulary source = Vocabulary::with_specials();
        Vocabulary target = Vocabulary::with_specials();
        std::set<std::string> source_set, target_set;
        const std::size_t ns = 1 + rng.uniform_int(30);
        const std::size_t nt = 1 + rng.uniform_int(30);
        for (std::size_t i = 0; i < ns; ++i) {
            std::string t = "w" + std::to_string(rng.uniform_int(40));
            if (source_set.insert(t).second) source.add(t);
        }
        for (std::size_t i = 0; i < nt; ++i) {
            std::string t = "w" + std::to_string(rng.uniform_int(40));
            if (target_set.insert(t).second) target.add(t);
        }
        const auto [merged, map] =
            extend_vocabulary(source, BpeTokenizer(target, {}));
        std::set<std::string> inter;
        for (const auto& t : target_set) {
            if (source_set.count(t)) inter.insert(t);
        }
        const OverlapReport r = overlap_report(map);
        CHECK(r.shared_count == inter.size());
        CHECK(r.novel_count == target_set.size() - inter.size());
        CHECK(merged.size() == source.size() + r.novel_count);
    }
}

TEST_CASE("tokenizer files round trip") {
    const fs::path dir =
        fs::temp_directory_path() /
        ("gb_tok_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const BpeTokenizer tok = train_bpe(make_corpus({"aaab", "ab"}), 12);
    const std::string vocab_path = (dir / "vocab.txt").string();
    const std::string merges_path = (dir / "merges.txt").string();
    save_tokenizer(tok, vocab_path, merges_path);
    const BpeTokenizer loaded = load_tokenizer(vocab_path, merges_path);
    CHECK(loaded.vocabulary().tokens() == tok.vocabulary().tokens());
    CHECK(loaded.merges() == tok.merges());
    CHECK(loaded.vocabulary().fingerprint() == tok.vocabulary().fingerprint());

    // First five lines are the special tokens, in order.
    std::ifstream in(vocab_path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "<pad>");
    std::getline(in, line);
    CHECK(line == "<unk>");

    // Corrupted files are rejected with the offending line.
    const std::string bad_path = (dir / "bad_vocab.txt").string();
    std::ofstream bad(bad_path);
    bad << "<pad>\n<unk>\n<s>\n</s>\nwrong\n";
    bad.close();
    CHECK_THROWS_AS(load_vocabulary(bad_path), ParseError);
    fs::remove_all(dir);
}

TEST_CASE("with_vocabulary swaps the vocabulary behind the merges") {
    const BpeTokenizer source_tok = train_bpe(make_corpus({"ab ab aa"}), 12);
    const BpeTokenizer target_tok = train_bpe(make_corpus({"ab cd"}), 12);
    const auto [merged, map] =
        extend_vocabulary(source_tok.vocabulary(), target_tok);
    (void)map;
    const BpeTokenizer swapped = with_vocabulary(target_tok, merged);
    CHECK(swapped.merges() == target_tok.merges());
    // Tokenizing with the merged vocabulary resolves target symbols to
    // merged ids.
    const auto ids = tokenize(swapped, "cd");
    for (std::uint32_t id : ids) CHECK(id < merged.size());
}

}  // TEST_SUITE
