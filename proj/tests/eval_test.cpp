#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "graftbench/checkpoint.hpp"
#include "graftbench/corpus.hpp"
#include "graftbench/error.hpp"
#include "graftbench/eval.hpp"
#include "graftbench/mlm.hpp"
#include "graftbench/tokenizer.hpp"

using namespace graftbench;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("gb_eval_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

/// Independent scorer: explicit confusion matrix, then per-class metrics.
struct BruteMetrics {
    std::vector<double> precision, recall, f1;
    std::vector<std::size_t> support;
    double weighted = 0.0, accuracy = 0.0;
};

BruteMetrics brute_force_f1(const std::vector<std::size_t>& preds,
                            const std::vector<std::size_t>& golds,
                            std::size_t classes) {
    std::vector<std::vector<std::size_t>> confusion(
        classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t i = 0; i < preds.size(); ++i)
        ++confusion[golds[i]][preds[i]];
    BruteMetrics out;
    out.precision.resize(classes);
    out.recall.resize(classes);
    out.f1.resize(classes);
    out.support.resize(classes);
    double wsum = 0.0;
    std::size_t diag = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t tp = confusion[c][c];
        std::size_t gold_total = 0, pred_total = 0;
        for (std::size_t k = 0; k < classes; ++k) {
            gold_total += confusion[c][k];
            pred_total += confusion[k][c];
        }
        diag += tp;
        out.support[c] = gold_total;
        out.precision[c] = pred_total ? double(tp) / double(pred_total) : 0.0;
        out.recall[c] = gold_total ? double(tp) / double(gold_total) : 0.0;
        out.f1[c] = out.precision[c] + out.recall[c] > 0.0
                        ? 2.0 * out.precision[c] * out.recall[c] /
                              (out.precision[c] + out.recall[c])
                        : 0.0;
        wsum += double(gold_total) * out.f1[c];
    }
    out.weighted = wsum / double(preds.size());
    out.accuracy = double(diag) / double(preds.size());
    return out;
}

std::vector<std::string> generic_labels(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("c" + std::to_string(i));
    return out;
}

/// Tokenizer whose vocabulary holds "x", "y" and "q" as single tokens.
BpeTokenizer marker_tokenizer() {
    Corpus corpus{"toy", {"x y q", "x y q", "y x q"}, Origin::natural};
    return train_bpe(corpus, 12);
}

std::uint32_t single_token(const BpeTokenizer& tok, const std::string& word) {
    const auto ids = tokenize(tok, word);
    REQUIRE(ids.size() == 1);
    return ids[0];
}

/// Encoder whose pooled representations are linearly separable between
/// texts built from "x" and texts built from "y": attention and FFN are
/// zeroed, and the two marker embeddings point in opposite directions
/// along the first two coordinates.
Checkpoint separable_checkpoint(const BpeTokenizer& tok) {
    ModelConfig config;
    config.vocab_size = tok.vocabulary().size();
    config.dim = 8;
    config.layers = 1;
    config.heads = 2;
    config.max_seq_len = 8;
    Checkpoint ckpt = init_model(config, 3);
    for (const char* name :
         {"layer0.attn.wq", "layer0.attn.wk", "layer0.attn.wv",
          "layer0.attn.wo", "layer0.attn.bq", "layer0.attn.bk",
          "layer0.attn.bv", "layer0.attn.bo", "layer0.ffn.w1",
          "layer0.ffn.b1", "layer0.ffn.w2", "layer0.ffn.b2"})
        ckpt.tensors.at(name).fill(0.0);
    Matrix& emb = ckpt.tensors.at("token_embedding");
    const std::uint32_t id_x = single_token(tok, "x");
    const std::uint32_t id_y = single_token(tok, "y");
    for (std::size_t d = 0; d < emb.cols(); ++d) {
        emb(id_x, d) = 0.0;
        emb(id_y, d) = 0.0;
    }
    emb(id_x, 0) = 4.0;
    emb(id_x, 1) = -4.0;
    emb(id_y, 0) = -4.0;
    emb(id_y, 1) = 4.0;
    return ckpt;
}

/// Test-side pooling oracle: mean of final hidden states over the unpadded
/// sequence, computed through the public forward pass.
std::vector<double> pooled_oracle(const Checkpoint& ckpt,
                                  const std::string& text) {
    std::vector<std::uint32_t> ids = tokenize(ckpt.tokenizer, text);
    std::vector<std::uint32_t> seq{Vocabulary::kBos};
    seq.insert(seq.end(), ids.begin(), ids.end());
    seq.push_back(Vocabulary::kEos);
    const ForwardResult fwd = forward(ckpt, {seq});
    std::vector<double> mean(ckpt.config.dim, 0.0);
    for (std::size_t j = 0; j < seq.size(); ++j)
        for (std::size_t d = 0; d < mean.size(); ++d)
            mean[d] += fwd.hidden[0](j, d);
    for (double& v : mean) v /= double(seq.size());
    return mean;
}

LabeledDataset marker_dataset(Split split) {
    LabeledDataset ds;
    ds.split = split;
    const std::vector<std::string> xs = {"x", "x q", "q x", "x x", "x q x"};
    const std::vector<std::string> ys = {"y", "y q", "q y", "y y", "y q y"};
    for (const auto& t : xs) ds.examples.emplace_back(t, 0);
    for (const auto& t : ys) ds.examples.emplace_back(t, 1);
    return ds;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("label set holds the seven categories in class order") {
    const auto& labels = sib_labels();
    REQUIRE(labels.size() == 7);
    CHECK(labels[0] == "science/technology");
    CHECK(labels[1] == "travel");
    CHECK(labels[2] == "politics");
    CHECK(labels[3] == "sports");
    CHECK(labels[4] == "health");
    CHECK(labels[5] == "entertainment");
    CHECK(labels[6] == "geography");
}

TEST_CASE("weighted F1 reproduces the worked two-class example") {
    // golds [A,A,B,B], preds [A,B,B,B]: F1_A = 2/3, F1_B = 4/5,
    // weighted = (2*(2/3) + 2*(4/5)) / 4 = 11/15.
    const std::vector<std::size_t> golds = {0, 0, 1, 1};
    const std::vector<std::size_t> preds = {0, 1, 1, 1};
    const EvalReport report = weighted_f1(preds, golds, {"A", "B"});
    CHECK(report.weighted_f1 == doctest::Approx(11.0 / 15.0).epsilon(1e-12));
    CHECK(report.accuracy == doctest::Approx(0.75));
    const ClassMetrics& a = report.per_class.at("A");
    CHECK(a.precision == doctest::Approx(1.0));
    CHECK(a.recall == doctest::Approx(0.5));
    CHECK(a.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(a.support == 2);
    const ClassMetrics& b = report.per_class.at("B");
    CHECK(b.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(b.recall == doctest::Approx(1.0));
    CHECK(b.f1 == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(b.support == 2);
}

TEST_CASE("weighted F1 matches a brute-force confusion matrix") {
    std::mt19937 gen(991);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t classes = 1 + gen() % 6;
        const std::size_t n = 1 + gen() % 50;
        std::vector<std::size_t> preds(n), golds(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds[i] = gen() % classes;
            golds[i] = gen() % classes;
        }
        const auto labels = generic_labels(classes);
        const EvalReport report = weighted_f1(preds, golds, labels);
        const BruteMetrics brute = brute_force_f1(preds, golds, classes);
        REQUIRE(report.weighted_f1 ==
                doctest::Approx(brute.weighted).epsilon(1e-12));
        REQUIRE(report.accuracy ==
                doctest::Approx(brute.accuracy).epsilon(1e-12));
        REQUIRE(report.weighted_f1 >= 0.0);
        REQUIRE(report.weighted_f1 <= 1.0);
        for (std::size_t c = 0; c < classes; ++c) {
            const ClassMetrics& m = report.per_class.at(labels[c]);
            REQUIRE(m.precision ==
                    doctest::Approx(brute.precision[c]).epsilon(1e-12));
            REQUIRE(m.recall == doctest::Approx(brute.recall[c]).epsilon(1e-12));
            REQUIRE(m.f1 == doctest::Approx(brute.f1[c]).epsilon(1e-12));
            REQUIRE(m.support == brute.support[c]);
        }
        // Internal consistency: the headline number is recomputable from
        // the per-class fields.
        double wsum = 0.0;
        std::size_t total = 0;
        for (const auto& [label, m] : report.per_class) {
            wsum += double(m.support) * m.f1;
            total += m.support;
        }
        REQUIRE(report.weighted_f1 ==
                doctest::Approx(wsum / double(total)).epsilon(1e-9));
    }
}

TEST_CASE("weighted F1 is 1 exactly when predictions equal golds") {
    std::mt19937 gen(17);
    const auto labels = generic_labels(4);
    std::vector<std::size_t> golds(40);
    for (auto& g : golds) g = gen() % 4;
    CHECK(weighted_f1(golds, golds, labels).weighted_f1 == 1.0);
    CHECK(weighted_f1(golds, golds, labels).accuracy == 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::size_t> preds = golds;
        const std::size_t flip = gen() % preds.size();
        preds[flip] = (preds[flip] + 1 + gen() % 3) % 4;
        CHECK(weighted_f1(preds, golds, labels).weighted_f1 < 1.0);
    }
}

TEST_CASE("weighted F1 is invariant under consistent relabeling") {
    std::mt19937 gen(55);
    const std::size_t classes = 5;
    std::vector<std::size_t> preds(60), golds(60);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        preds[i] = gen() % classes;
        golds[i] = gen() % classes;
    }
    const auto labels = generic_labels(classes);
    const double base = weighted_f1(preds, golds, labels).weighted_f1;

    std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    std::vector<std::string> permuted_labels(classes);
    for (std::size_t c = 0; c < classes; ++c)
        permuted_labels[perm[c]] = labels[c];
    std::vector<std::size_t> p2(preds.size()), g2(golds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        p2[i] = perm[preds[i]];
        g2[i] = perm[golds[i]];
    }
    CHECK(weighted_f1(p2, g2, permuted_labels).weighted_f1 ==
          doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("weighted F1 rejects bad arguments") {
    const auto labels = generic_labels(3);
    CHECK_THROWS_AS(weighted_f1({0, 1}, {0}, labels), ArgumentError);
    CHECK_THROWS_AS(weighted_f1({}, {}, labels), ArgumentError);
    CHECK_THROWS_AS(weighted_f1({0}, {0}, {}), ArgumentError);
    CHECK_THROWS_AS(weighted_f1({3}, {0}, labels), ArgumentError);
    CHECK_THROWS_AS(weighted_f1({0}, {3}, labels), ArgumentError);
    CHECK_THROWS_AS(weighted_f1({0}, {0}, {"a", "a"}), ArgumentError);
}

TEST_CASE("dataset loader parses a well-formed TSV") {
    TempDir tmp;
    const fs::path p = tmp.path / "dev.tsv";
    write_file(p,
               "index\tcategory\ttext\n"
               "0\ttravel\tthe road is long\n"
               "1\thealth\tdrink water\r\n"
               "2\ttravel\tmaps are useful\n");
    const LabeledDataset ds = load_sib_dataset(p.string(), Split::dev);
    REQUIRE(ds.examples.size() == 3);
    CHECK(ds.split == Split::dev);
    CHECK(ds.examples[0].first == "the road is long");
    CHECK(ds.examples[0].second == 1);
    CHECK(ds.examples[1].first == "drink water");
    CHECK(ds.examples[1].second == 4);
    const auto counts = class_counts(ds);
    CHECK(counts[1] == 2);
    CHECK(counts[4] == 1);
    CHECK(counts[0] == 0);
}

TEST_CASE("dataset loader accepts an empty body") {
    TempDir tmp;
    const fs::path p = tmp.path / "empty.tsv";
    write_file(p, "index\tcategory\ttext\n");
    const LabeledDataset ds = load_sib_dataset(p.string(), Split::test);
    CHECK(ds.examples.empty());
    CHECK(ds.split == Split::test);
}

TEST_CASE("dataset loader reproduces the reference class proportions") {
    // 252 + 198 + 146 + 122 + 110 + 93 + 83 = 1004 examples.
    const std::vector<std::size_t> expected = {252, 198, 146, 122, 110, 93, 83};
    TempDir tmp;
    const fs::path p = tmp.path / "full.tsv";
    std::string content = "index\tcategory\ttext\n";
    std::size_t index = 0;
    for (std::size_t c = 0; c < expected.size(); ++c)
        for (std::size_t i = 0; i < expected[c]; ++i) {
            content += std::to_string(index++) + "\t" + sib_labels()[c] +
                       "\tsample sentence " + std::to_string(index) + "\n";
        }
    write_file(p, content);
    const LabeledDataset ds = load_sib_dataset(p.string(), Split::train);
    CHECK(ds.examples.size() == 1004);
    CHECK(class_counts(ds) == expected);
}

TEST_CASE("dataset loader rejects malformed input") {
    TempDir tmp;
    const fs::path p = tmp.path / "bad.tsv";

    write_file(p, "");
    CHECK_THROWS_AS(load_sib_dataset(p.string(), Split::train), ParseError);

    write_file(p, "idx\tcat\ttxt\n0\ttravel\thello\n");
    CHECK_THROWS_AS(load_sib_dataset(p.string(), Split::train), ParseError);

    write_file(p, "index\tcategory\ttext\n0\ttravel\thello\n1\tsports\n");
    try {
        load_sib_dataset(p.string(), Split::train);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        CHECK(std::string(e.what()).find("got 2") != std::string::npos);
    }

    write_file(p, "index\tcategory\ttext\n0\ttravel\ta\tb\n");
    CHECK_THROWS_AS(load_sib_dataset(p.string(), Split::train), ParseError);

    write_file(p, "index\tcategory\ttext\n0\ttravel\t\n");
    CHECK_THROWS_AS(load_sib_dataset(p.string(), Split::train), ParseError);

    CHECK_THROWS_AS(load_sib_dataset((tmp.path / "missing.tsv").string(),
                                     Split::train),
                    IoError);
}

TEST_CASE("dataset loader names an unknown category") {
    TempDir tmp;
    const fs::path p = tmp.path / "weather.tsv";
    write_file(p, "index\tcategory\ttext\n0\tweather\tit may rain\n");
    try {
        load_sib_dataset(p.string(), Split::train);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("weather") != std::string::npos);
    }
}

TEST_CASE("head initialization is shaped, centered and deterministic") {
    const ClassifierHead head = init_head(7, 64, 11);
    REQUIRE(head.weight.rows() == 7);
    REQUIRE(head.weight.cols() == 64);
    REQUIRE(head.bias.rows() == 1);
    REQUIRE(head.bias.cols() == 7);
    for (double v : head.bias.data()) CHECK(v == 0.0);

    double mean = 0.0;
    for (double v : head.weight.data()) mean += v;
    mean /= double(head.weight.size());
    double var = 0.0;
    for (double v : head.weight.data()) var += (v - mean) * (v - mean);
    var /= double(head.weight.size());
    CHECK(std::abs(mean) < 4.0 * 0.02 / std::sqrt(448.0));
    CHECK(std::sqrt(var) == doctest::Approx(0.02).epsilon(0.25));

    const ClassifierHead again = init_head(7, 64, 11);
    CHECK(head.weight.data() == again.weight.data());
    const ClassifierHead other = init_head(7, 64, 12);
    CHECK(head.weight.data() != other.weight.data());

    CHECK_THROWS_AS(init_head(0, 4, 1), ArgumentError);
    CHECK_THROWS_AS(init_head(4, 0, 1), ArgumentError);
}

TEST_CASE("fine-tuning separates a linearly separable marker set") {
    const BpeTokenizer tok = marker_tokenizer();
    Checkpoint ckpt = separable_checkpoint(tok);
    ckpt.tokenizer = with_vocabulary(tok, tok.vocabulary());
    validate_checkpoint(ckpt);

    // Separability witness: the first two pooled coordinates split the
    // classes with a positive margin.
    const LabeledDataset train = marker_dataset(Split::train);
    for (const auto& [text, label] : train.examples) {
        const auto repr = pooled_oracle(ckpt, text);
        const double score = repr[0] - repr[1];
        if (label == 0)
            REQUIRE(score > 0.1);
        else
            REQUIRE(score < -0.1);
    }

    LabeledDataset dev;
    dev.split = Split::dev;
    dev.examples = {{"x x q", 0}, {"q x", 0}, {"y y q", 1}, {"q y", 1}};

    FinetuneHyper hyper;
    hyper.steps = 200;
    hyper.batch_size = 8;
    hyper.seed = 5;
    const FinetuneResult result = finetune_classifier(ckpt, train, dev, hyper);
    CHECK(result.best_dev_weighted_f1 >= 0.95);

    // The frozen path must hand back the encoder untouched, and the
    // reported best must equal the returned head's dev score.
    for (const auto& [name, tensor] : ckpt.tensors)
        CHECK(result.checkpoint.tensors.at(name).data() == tensor.data());
    std::vector<std::string> dev_texts;
    std::vector<std::size_t> dev_golds;
    for (const auto& [text, label] : dev.examples) {
        dev_texts.push_back(text);
        dev_golds.push_back(label);
    }
    const auto preds = predict(result.checkpoint, result.head, dev_texts);
    CHECK(weighted_f1(preds, dev_golds, sib_labels()).weighted_f1 ==
          result.best_dev_weighted_f1);
}

TEST_CASE("zero fine-tuning steps return the initial head") {
    const BpeTokenizer tok = marker_tokenizer();
    Checkpoint ckpt = separable_checkpoint(tok);
    ckpt.tokenizer = with_vocabulary(tok, tok.vocabulary());
    const LabeledDataset train = marker_dataset(Split::train);
    const LabeledDataset dev = marker_dataset(Split::dev);

    FinetuneHyper hyper;
    hyper.steps = 0;
    hyper.seed = 21;
    const FinetuneResult result = finetune_classifier(ckpt, train, dev, hyper);
    const ClassifierHead fresh = init_head(7, ckpt.config.dim, 21);
    CHECK(result.head.weight.data() == fresh.weight.data());
    CHECK(result.head.bias.data() == fresh.bias.data());
    CHECK(result.best_step == 0);
}

TEST_CASE("fine-tuning is deterministic under the seed") {
    const BpeTokenizer tok = marker_tokenizer();
    Checkpoint ckpt = separable_checkpoint(tok);
    ckpt.tokenizer = with_vocabulary(tok, tok.vocabulary());
    const LabeledDataset train = marker_dataset(Split::train);
    const LabeledDataset dev = marker_dataset(Split::dev);

    FinetuneHyper hyper;
    hyper.steps = 40;
    hyper.seed = 9;
    const FinetuneResult a = finetune_classifier(ckpt, train, dev, hyper);
    const FinetuneResult b = finetune_classifier(ckpt, train, dev, hyper);
    CHECK(a.head.weight.data() == b.head.weight.data());
    CHECK(a.head.bias.data() == b.head.bias.data());
    CHECK(a.best_dev_weighted_f1 == b.best_dev_weighted_f1);
    CHECK(a.best_step == b.best_step);

    hyper.seed = 10;
    const FinetuneResult c = finetune_classifier(ckpt, train, dev, hyper);
    CHECK(a.head.weight.data() != c.head.weight.data());
}

TEST_CASE("fine-tuning validates its inputs") {
    const BpeTokenizer tok = marker_tokenizer();
    Checkpoint ckpt = separable_checkpoint(tok);
    ckpt.tokenizer = with_vocabulary(tok, tok.vocabulary());
    const LabeledDataset train = marker_dataset(Split::train);
    const LabeledDataset dev = marker_dataset(Split::dev);
    LabeledDataset empty;

    FinetuneHyper hyper;
    hyper.steps = 1;
    CHECK_THROWS_AS(finetune_classifier(ckpt, empty, dev, hyper),
                    ArgumentError);
    CHECK_THROWS_AS(finetune_classifier(ckpt, train, empty, hyper),
                    ArgumentError);
    FinetuneHyper bad = hyper;
    bad.batch_size = 0;
    CHECK_THROWS_AS(finetune_classifier(ckpt, train, dev, bad), ArgumentError);
    bad = hyper;
    bad.eval_every = 0;
    CHECK_THROWS_AS(finetune_classifier(ckpt, train, dev, bad), ArgumentError);

    LabeledDataset out_of_range = train;
    out_of_range.examples[0].second = 7;
    CHECK_THROWS_AS(finetune_classifier(ckpt, out_of_range, dev, hyper),
                    ArgumentError);
}

TEST_CASE("unfrozen fine-tuning updates the encoder deterministically") {
    const BpeTokenizer tok = marker_tokenizer();
    Checkpoint ckpt = separable_checkpoint(tok);
    ckpt.tokenizer = with_vocabulary(tok, tok.vocabulary());
    const LabeledDataset train = marker_dataset(Split::train);
    const LabeledDataset dev = marker_dataset(Split::dev);

    FinetuneHyper hyper;
    hyper.steps = 150;
    hyper.eval_every = 25;
    hyper.adam.learning_rate = 5e-3;
    hyper.unfreeze_encoder = true;
    hyper.seed = 13;
    const FinetuneResult a = finetune_classifier(ckpt, train, dev, hyper);
    // The zeroed attention weights sit at a saddle (zero gradient), so the
    // witness tensors are ones that do receive gradient.
    CHECK(a.checkpoint.tensors.at("token_embedding").data() !=
          ckpt.tensors.at("token_embedding").data());
    CHECK(a.checkpoint.tensors.at("layer0.ffn.b2").data() !=
          ckpt.tensors.at("layer0.ffn.b2").data());
    for (const auto& [name, tensor] : a.checkpoint.tensors)
        CHECK(tensor.all_finite());
    CHECK(a.best_dev_weighted_f1 >= 0.95);

    const FinetuneResult b = finetune_classifier(ckpt, train, dev, hyper);
    CHECK(a.head.weight.data() == b.head.weight.data());
    for (const auto& [name, tensor] : a.checkpoint.tensors)
        CHECK(tensor.data() == b.checkpoint.tensors.at(name).data());
}

TEST_CASE("prediction ties break toward the lowest class") {
    const BpeTokenizer tok = marker_tokenizer();
    Checkpoint ckpt = separable_checkpoint(tok);
    ckpt.tokenizer = with_vocabulary(tok, tok.vocabulary());
    const ClassifierHead zero{Matrix(7, ckpt.config.dim), Matrix(1, 7)};
    const auto preds = predict(ckpt, zero, {"x", "y", "q x", "y q"});
    REQUIRE(preds.size() == 4);
    for (std::size_t p : preds) CHECK(p == 0);
    CHECK(predict(ckpt, zero, {}).empty());
}

TEST_CASE("a single memorized example is predicted correctly") {
    const BpeTokenizer tok = marker_tokenizer();
    Checkpoint ckpt = separable_checkpoint(tok);
    ckpt.tokenizer = with_vocabulary(tok, tok.vocabulary());
    LabeledDataset one;
    one.examples = {{"x q y", 3}};
    FinetuneHyper hyper;
    hyper.steps = 100;
    hyper.batch_size = 4;
    hyper.seed = 2;
    const FinetuneResult result = finetune_classifier(ckpt, one, one, hyper);
    const auto preds = predict(result.checkpoint, result.head, {"x q y"});
    REQUIRE(preds.size() == 1);
    CHECK(preds[0] == 3);
}

TEST_CASE("prediction is equivariant under batch order") {
    const BpeTokenizer tok = marker_tokenizer();
    Checkpoint ckpt = separable_checkpoint(tok);
    ckpt.tokenizer = with_vocabulary(tok, tok.vocabulary());
    const ClassifierHead head = init_head(7, ckpt.config.dim, 31);

    std::vector<std::string> texts;
    for (int i = 0; i < 40; ++i) {
        std::string t;
        for (int j = 0; j <= i % 4; ++j)
            t += (i + j) % 2 ? "x " : "y ";
        t += "q";
        texts.push_back(t);
    }
    const auto base = predict(ckpt, head, texts);

    std::vector<std::size_t> order(texts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937 gen(77);
    std::shuffle(order.begin(), order.end(), gen);
    std::vector<std::string> shuffled;
    for (std::size_t i : order) shuffled.push_back(texts[i]);
    const auto permuted = predict(ckpt, head, shuffled);
    REQUIRE(permuted.size() == base.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        CHECK(permuted[i] == base[order[i]]);

    CHECK_THROWS_AS(predict(ckpt, ClassifierHead{Matrix(7, 3), Matrix(1, 7)},
                            {"x"}),
                    ArgumentError);
}

TEST_CASE("benchmark table averages the published reference column") {
    Matrix scores(5, 1);
    scores(0, 0) = 0.584;
    scores(1, 0) = 0.647;
    scores(2, 0) = 0.824;
    scores(3, 0) = 0.735;
    scores(4, 0) = 0.633;
    const BenchmarkTable table = make_benchmark_table(
        {"informed"}, {"l1", "l2", "l3", "l4", "l5"}, scores);
    REQUIRE(table.averages.size() == 1);
    CHECK(table.averages[0] == doctest::Approx(0.6846).epsilon(1e-12));

    const std::string text = benchmark_text(table);
    CHECK(text.find("average") != std::string::npos);
    CHECK(text.find("68.5") != std::string::npos);
    CHECK(text.find("68.4") == std::string::npos);
    CHECK(text.find("rounded half to even") != std::string::npos);

    const std::string csv = benchmark_csv(table);
    CHECK(csv.rfind("model,lang,weighted_f1\n", 0) == 0);
    CHECK(csv.find("informed,l1,58.4\n") != std::string::npos);
    CHECK(csv.find("informed,l3,82.4\n") != std::string::npos);
    const auto rows = std::count(csv.begin(), csv.end(), '\n');
    CHECK(rows == 6);
}

TEST_CASE("single-cell benchmark table averages to the cell") {
    Matrix one(1, 1);
    one(0, 0) = 0.512;
    const BenchmarkTable table = make_benchmark_table({"m"}, {"lng"}, one);
    CHECK(table.averages[0] == 0.512);
    const std::string text = benchmark_text(table);
    CHECK(text.find("51.2") != std::string::npos);

    CHECK_THROWS_AS(make_benchmark_table({}, {"l"}, Matrix(1, 0)),
                    ArgumentError);
    CHECK_THROWS_AS(make_benchmark_table({"m"}, {"l"}, Matrix(2, 1)),
                    ArgumentError);
}

TEST_CASE("deltas between printed averages are signed and rounded") {
    CHECK(format_delta(68.4, 56.1) == "+12.3");
    CHECK(format_delta(56.1, 68.4) == "-12.3");
    CHECK(format_delta(5.0, 5.0) == "+0.0");
    CHECK(format_delta(5.0, 5.05) == "+0.0");
    CHECK(format_delta(71.0, 70.84) == "+0.2");
    CHECK(format_delta(70.0, 70.15) == "-0.2");
}

TEST_CASE("benchmark matrix runs end to end on a tiny grid") {
    const BpeTokenizer tok = marker_tokenizer();
    Checkpoint ckpt = separable_checkpoint(tok);
    ckpt.tokenizer = with_vocabulary(tok, tok.vocabulary());

    DatasetTriplet triplet;
    triplet.train = marker_dataset(Split::train);
    triplet.dev = marker_dataset(Split::dev);
    triplet.test.split = Split::test;
    triplet.test.examples = {{"x q q", 0}, {"x", 0}, {"y q q", 1}, {"y", 1}};

    FinetuneHyper hyper;
    hyper.steps = 120;
    hyper.seed = 4;
    const BenchmarkTable table =
        benchmark_matrix({{"tiny", ckpt}}, {{"toy", triplet}}, hyper);
    REQUIRE(table.scores.rows() == 1);
    REQUIRE(table.scores.cols() == 1);
    CHECK(table.scores(0, 0) >= 0.95);
    CHECK(table.averages[0] == table.scores(0, 0));
    CHECK(benchmark_csv(table).find("tiny,toy,") != std::string::npos);

    CHECK_THROWS_AS(benchmark_matrix({}, {{"toy", triplet}}, hyper),
                    ArgumentError);
    CHECK_THROWS_AS(benchmark_matrix({{"tiny", ckpt}}, {}, hyper),
                    ArgumentError);
}

}  // TEST_SUITE
