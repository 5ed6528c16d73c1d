// Builds the tiny corpus/checkpoint fixture tree the CLI smoke test drives.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "graftbench/checkpoint.hpp"
#include "graftbench/corpus.hpp"
#include "graftbench/eval.hpp"
#include "graftbench/mlm.hpp"
#include "graftbench/tokenizer.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace graftbench;

const std::vector<std::string>& src_words() {
    static const std::vector<std::string> w = {"ba", "da", "ku", "ra",
                                               "ma", "ti", "po"};
    return w;
}

const std::vector<std::string>& tgt_words() {
    static const std::vector<std::string> w = {"bo", "du", "ki", "ro",
                                               "mu", "te", "pa"};
    return w;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << content;
}

std::string gen_sentences(const std::vector<std::string>& words, int count,
                          int salt) {
    std::string text;
    for (int i = 0; i < count; ++i) {
        const int len = 3 + (i * 7 + salt) % 4;
        for (int j = 0; j < len; ++j) {
            if (j) text += ' ';
            const int idx = (i * 131 + j * 17 + salt * 11 + i * j) %
                            static_cast<int>(words.size());
            text += words[std::size_t(idx)];
        }
        text += '\n';
    }
    return text;
}

std::string sib_tsv(int per_class, int salt) {
    std::string out = "index\tcategory\ttext\n";
    const auto& labels = sib_labels();
    const auto& words = tgt_words();
    int idx = 0;
    for (int k = 0; k < 7; ++k)
        for (int r = 0; r < per_class; ++r) {
            const std::string text = words[std::size_t(k)] + " " +
                                     words[std::size_t(k)] + " " +
                                     words[std::size_t((k + r + salt) % 7)];
            out += std::to_string(idx++) + "\t" + labels[std::size_t(k)] +
                   "\t" + text + "\n";
        }
    return out;
}

void build(const fs::path& work) {
    const fs::path data = work / "data";
    fs::create_directories(data);

    write_file(data / "tgt_a.txt", gen_sentences(tgt_words(), 120, 1));
    write_file(data / "pivot.txt", gen_sentences(src_words(), 30, 3));

    std::string lex;
    for (std::size_t i = 0; i < 7; ++i)
        lex += src_words()[i] + "\t" + tgt_words()[i] + "\n";
    write_file(data / "lexicon.tsv", lex);

    std::string vec = "7 6\n";
    for (int k = 0; k < 7; ++k) {
        vec += tgt_words()[std::size_t(k)];
        for (int j = 0; j < 6; ++j)
            vec += " " + std::to_string(((k + 1) * (j + 2)) % 7 - 3) + ".5";
        vec += "\n";
    }
    write_file(data / "vectors.txt", vec);

    write_file(data / "sib_train.tsv", sib_tsv(3, 0));
    write_file(data / "sib_dev.tsv", sib_tsv(1, 1));
    write_file(data / "sib_test.tsv", sib_tsv(1, 2));

    write_file(data / "src_corpus.txt", gen_sentences(src_words(), 40, 4));
    const Corpus src_corpus =
        ingest_corpus({(data / "src_corpus.txt").string()}, "src");
    const BpeTokenizer tok = train_bpe(src_corpus, 48);
    ModelConfig config;
    config.vocab_size = tok.vocabulary().size();
    config.dim = 8;
    config.layers = 1;
    config.heads = 2;
    config.ffn_dim = 16;
    config.max_seq_len = 16;
    Checkpoint ckpt = init_model(config, 7);
    ckpt.tokenizer = tok;
    save_checkpoint(ckpt, (data / "source_ckpt").string());

    json cfg;
    cfg["target_lang"] = "tgt";
    cfg["corpora"] = {{"tgt", {(data / "tgt_a.txt").string()}},
                      {"src", {(data / "pivot.txt").string()}}};
    cfg["synthetic"] = {{"enabled", true},
                        {"lexicon", (data / "lexicon.tsv").string()},
                        {"pivot_lang", "src"}};
    cfg["tokenizer"] = {{"vocab_size", 40}};
    cfg["source_checkpoint"] = (data / "source_ckpt").string();
    cfg["init"] = {{"latent_dim", 4},
                   {"neighbors", 3},
                   {"external_embeddings", (data / "vectors.txt").string()}};
    cfg["pretrain"] = {{"steps", 4}, {"batch_size", 4}};
    cfg["eval"] = {{"train", (data / "sib_train.tsv").string()},
                   {"dev", (data / "sib_dev.tsv").string()},
                   {"test", (data / "sib_test.tsv").string()}};
    cfg["finetune"] = {{"steps", 4}, {"batch_size", 4}, {"eval_every", 2}};
    cfg["seeds"] = {1};
    cfg["variants"] = {"random", "informed"};
    cfg["output_dir"] = (work / "run_out").string();
    write_file(data / "config.json", cfg.dump(2) + "\n");

    json bad = cfg;
    bad["init"]["latent_dim"] = 64;  // wider than the 8-dim source model
    write_file(data / "bad_config.json", bad.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_cli_fixture <work-dir>\n";
        return 2;
    }
    try {
        build(fs::absolute(argv[1]));
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
