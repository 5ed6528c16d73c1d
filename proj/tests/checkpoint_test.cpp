#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <string>
#include <vector>

#include "graftbench/checkpoint.hpp"
#include "graftbench/corpus.hpp"
#include "graftbench/error.hpp"
#include "graftbench/mlm.hpp"
#include "graftbench/tokenizer.hpp"

using namespace graftbench;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("checkpoint");

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("gb_ckpt_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

BpeTokenizer tiny_tokenizer() {
    Corpus c{"tst", {"abba baab", "ab ba", "aa bb"}, Origin::natural};
    return train_bpe(c, 12);
}

ModelConfig config_for(const BpeTokenizer& tok) {
    ModelConfig cfg;
    cfg.vocab_size = tok.vocabulary().size();
    cfg.dim = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.max_seq_len = 16;
    return cfg;
}

}  // namespace

TEST_CASE("validated fills ffn_dim and rejects bad shapes") {
    ModelConfig cfg;
    cfg.vocab_size = 10;
    cfg.dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.max_seq_len = 4;
    const ModelConfig v = validated(cfg);
    CHECK(v.ffn_dim == 32);

    ModelConfig explicit_ffn = cfg;
    explicit_ffn.ffn_dim = 12;
    CHECK(validated(explicit_ffn).ffn_dim == 12);

    ModelConfig bad = cfg;
    bad.heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(validated(bad), ArgumentError);
    bad = cfg;
    bad.vocab_size = 0;
    CHECK_THROWS_AS(validated(bad), ArgumentError);
    bad = cfg;
    bad.dim = 0;
    CHECK_THROWS_AS(validated(bad), ArgumentError);
    bad = cfg;
    bad.layers = 0;
    CHECK_THROWS_AS(validated(bad), ArgumentError);
    bad = cfg;
    bad.max_seq_len = 0;
    CHECK_THROWS_AS(validated(bad), ArgumentError);
    bad = cfg;
    bad.layernorm_eps = 0.0;
    CHECK_THROWS_AS(validated(bad), ArgumentError);
}

TEST_CASE("tensor_specs lists embeddings, per-layer blocks, final norm") {
    ModelConfig cfg;
    cfg.vocab_size = 20;
    cfg.dim = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.max_seq_len = 16;
    const auto specs = tensor_specs(validated(cfg));

    // 2 embeddings + 16 per layer + 2 final layernorm tensors.
    REQUIRE(specs.size() == 2 + 2 * 16 + 2);
    CHECK(specs[0].name == "token_embedding");
    CHECK(specs[0].rows == 20);
    CHECK(specs[0].cols == 8);
    CHECK(specs[1].name == "position_embedding");
    CHECK(specs[1].rows == 16);
    CHECK(specs[1].cols == 8);
    CHECK(specs[2].name == "layer0.ln1.gain");
    CHECK(specs[2].rows == 1);
    CHECK(specs.back().name == "final_ln.bias");

    // Weight shapes within a layer block.
    for (const auto& s : specs) {
        if (s.name == "layer1.attn.wq") {
            CHECK(s.rows == 8);
            CHECK(s.cols == 8);
        }
        if (s.name == "layer1.ffn.w1") {
            CHECK(s.rows == 8);
            CHECK(s.cols == 32);
        }
        if (s.name == "layer1.ffn.w2") {
            CHECK(s.rows == 32);
            CHECK(s.cols == 8);
        }
        if (s.name == "layer0.attn.bq") {
            CHECK(s.rows == 1);
            CHECK(s.cols == 8);
        }
    }
}

TEST_CASE("validate_checkpoint flags missing, misshapen, non-finite") {
    const BpeTokenizer tok = tiny_tokenizer();
    Checkpoint ckpt = init_model(config_for(tok), 7);
    ckpt.tokenizer = tok;
    CHECK_NOTHROW(validate_checkpoint(ckpt));

    Checkpoint missing = ckpt;
    missing.tensors.erase("layer0.attn.wq");
    CHECK_THROWS_AS(validate_checkpoint(missing), ConfigurationError);

    Checkpoint extra = ckpt;
    extra.tensors.emplace("stray", Matrix(1, 1));
    CHECK_THROWS_AS(validate_checkpoint(extra), ConfigurationError);

    Checkpoint misshapen = ckpt;
    misshapen.tensors.at("final_ln.gain") = Matrix(2, 8);
    CHECK_THROWS_AS(validate_checkpoint(misshapen), ConfigurationError);

    Checkpoint nan = ckpt;
    nan.tensors.at("token_embedding")(0, 0) = std::nan("");
    CHECK_THROWS_AS(validate_checkpoint(nan), ConfigurationError);

    Checkpoint wrong_tok = ckpt;
    wrong_tok.config.vocab_size += 1;
    wrong_tok.tensors.at("token_embedding") =
        Matrix(wrong_tok.config.vocab_size, 8);
    CHECK_THROWS_AS(validate_checkpoint(wrong_tok), ConfigurationError);
}

TEST_CASE("save and load round-trip through float32 storage") {
    const BpeTokenizer tok = tiny_tokenizer();
    Checkpoint ckpt = init_model(config_for(tok), 99);
    ckpt.tokenizer = tok;

    TempDir tmp;
    const std::string dir = (tmp.path / "model").string();
    save_checkpoint(ckpt, dir);
    const Checkpoint loaded = load_checkpoint(dir);

    CHECK(loaded.config.vocab_size == ckpt.config.vocab_size);
    CHECK(loaded.config.dim == ckpt.config.dim);
    CHECK(loaded.config.layers == ckpt.config.layers);
    CHECK(loaded.config.heads == ckpt.config.heads);
    CHECK(loaded.config.ffn_dim == ckpt.config.ffn_dim);
    CHECK(loaded.config.max_seq_len == ckpt.config.max_seq_len);
    CHECK(loaded.tokenizer.vocabulary().fingerprint() ==
          tok.vocabulary().fingerprint());
    CHECK(loaded.tokenizer.merges() == tok.merges());

    REQUIRE(loaded.tensors.size() == ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        const Matrix& l = loaded.tensors.at(name);
        REQUIRE(l.same_shape(t));
        for (std::size_t i = 0; i < t.rows() * t.cols(); ++i) {
            // Storage is float32: loaded values are the float-rounded
            // originals, exactly.
            CHECK(l.data()[i] ==
                  static_cast<double>(static_cast<float>(t.data()[i])));
        }
    }

    // A second save of the loaded model is byte-identical.
    const std::string dir2 = (tmp.path / "model2").string();
    save_checkpoint(loaded, dir2);
    for (const char* f : {"manifest.json", "tensors.bin", "vocab.txt",
                          "merges.txt"}) {
        std::ifstream a(fs::path(dir) / f, std::ios::binary);
        std::ifstream b(fs::path(dir2) / f, std::ios::binary);
        const std::string sa((std::istreambuf_iterator<char>(a)),
                             std::istreambuf_iterator<char>());
        const std::string sb((std::istreambuf_iterator<char>(b)),
                             std::istreambuf_iterator<char>());
        CHECK(sa == sb);
    }
}

TEST_CASE("load rejects corrupted artifacts") {
    const BpeTokenizer tok = tiny_tokenizer();
    Checkpoint ckpt = init_model(config_for(tok), 3);
    ckpt.tokenizer = tok;
    TempDir tmp;
    const std::string dir = (tmp.path / "model").string();
    save_checkpoint(ckpt, dir);

    SUBCASE("manifest is not json") {
        std::ofstream(fs::path(dir) / "manifest.json") << "not json";
        CHECK_THROWS_AS(load_checkpoint(dir), ParseError);
    }
    SUBCASE("tensor blob truncated") {
        const auto p = fs::path(dir) / "tensors.bin";
        fs::resize_file(p, fs::file_size(p) / 2);
        CHECK_THROWS_AS(load_checkpoint(dir), ParseError);
    }
    SUBCASE("missing file") {
        fs::remove(fs::path(dir) / "vocab.txt");
        CHECK_THROWS_AS(load_checkpoint(dir), Error);
    }
}

TEST_SUITE_END();
