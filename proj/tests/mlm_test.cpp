#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "graftbench/corpus.hpp"
#include "graftbench/error.hpp"
#include "graftbench/mlm.hpp"
#include "graftbench/rng.hpp"
#include "graftbench/tokenizer.hpp"

using namespace graftbench;

TEST_SUITE_BEGIN("mlm");

namespace {

Vocabulary make_vocab(std::size_t regular) {
    Vocabulary v = Vocabulary::with_specials();
    for (std::size_t i = 0; i < regular; ++i) v.add("t" + std::to_string(i));
    return v;
}

ModelConfig small_config(std::size_t vocab) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.max_seq_len = 16;
    return cfg;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows() * a.cols(); ++i) {
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    }
    return worst;
}

}  // namespace

TEST_CASE("masking policy validation") {
    CHECK_NOTHROW(validate_policy(MaskingPolicy{}));
    MaskingPolicy bad;
    bad.mask_rate = 0.0;
    CHECK_THROWS_AS(validate_policy(bad), ArgumentError);
    bad = MaskingPolicy{};
    bad.mask_rate = 1.0;
    CHECK_THROWS_AS(validate_policy(bad), ArgumentError);
    bad = MaskingPolicy{};
    bad.keep_frac = 0.2;  // fractions now sum to 1.1
    CHECK_THROWS_AS(validate_policy(bad), ArgumentError);
    bad = MaskingPolicy{0.15, 1.2, -0.1, -0.1};
    CHECK_THROWS_AS(validate_policy(bad), ArgumentError);
}

TEST_CASE("init_model sets gains to one, biases to zero, weights small") {
    const ModelConfig cfg = small_config(50);
    const Checkpoint ckpt = init_model(cfg, 7);
    CHECK_NOTHROW([&] {
        Checkpoint with_tok = ckpt;  // validation needs a matching tokenizer
        Vocabulary v = make_vocab(45);
        with_tok.tokenizer = BpeTokenizer(v, {});
        validate_checkpoint(with_tok);
    }());

    for (const auto& [name, t] : ckpt.tensors) {
        if (name.ends_with("gain")) {
            for (double x : t.data()) CHECK(x == 1.0);
        } else if (name.ends_with("bias") ||
                   name.find(".b") != std::string::npos) {
            for (double x : t.data()) CHECK(x == 0.0);
        }
    }

    // Weight entries follow normal(0, 0.02): loose moment bounds.
    const Matrix& e = ckpt.tensors.at("token_embedding");
    double mean = 0.0;
    const std::size_t n = e.rows() * e.cols();
    for (double x : e.data()) mean += x;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : e.data()) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    CHECK(std::abs(mean) <= 4.0 * 0.02 / std::sqrt(static_cast<double>(n)));
    CHECK(sd == doctest::Approx(0.02).epsilon(0.25));

    const Checkpoint again = init_model(cfg, 7);
    for (const auto& [name, t] : ckpt.tensors) {
        CHECK(t.data() == again.tensors.at(name).data());
    }
    const Checkpoint other = init_model(cfg, 8);
    CHECK(other.tensors.at("token_embedding").data() != e.data());
}

TEST_CASE("near-zero mask rate selects nothing") {
    const Vocabulary vocab = make_vocab(20);
    IdBatch batch{std::vector<std::uint32_t>(1000, 7)};
    MaskingPolicy policy;
    policy.mask_rate = 1e-9;
    const MaskedBatch got = mask_batch(batch, policy, vocab, 3);
    CHECK(got.ids == batch);
    for (std::int32_t lab : got.labels[0]) CHECK(lab == kIgnoreLabel);
}

TEST_CASE("pad, bos, and eos are never selected for masking") {
    const Vocabulary vocab = make_vocab(20);
    IdBatch batch{{Vocabulary::kBos, 7, Vocabulary::kPad, 8,
                   Vocabulary::kEos, Vocabulary::kPad}};
    MaskingPolicy policy;
    policy.mask_rate = 0.999;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const MaskedBatch got = mask_batch(batch, policy, vocab, seed);
        CHECK(got.ids[0][0] == Vocabulary::kBos);
        CHECK(got.ids[0][2] == Vocabulary::kPad);
        CHECK(got.ids[0][4] == Vocabulary::kEos);
        CHECK(got.ids[0][5] == Vocabulary::kPad);
        CHECK(got.labels[0][0] == kIgnoreLabel);
        CHECK(got.labels[0][2] == kIgnoreLabel);
        CHECK(got.labels[0][4] == kIgnoreLabel);
        CHECK(got.labels[0][5] == kIgnoreLabel);
    }
}

TEST_CASE("selection count and action mix follow the policy") {
    // A large vocabulary makes an accidental random-replacement collision
    // with the original id negligible.
    const Vocabulary vocab = make_vocab(10000);
    const std::size_t n = 100000;
    IdBatch batch{std::vector<std::uint32_t>(n, 50)};
    const MaskingPolicy policy;
    const MaskedBatch got = mask_batch(batch, policy, vocab, 11);

    std::size_t selected = 0, masked = 0, kept = 0, randomized = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (got.labels[0][i] == kIgnoreLabel) {
            CHECK(got.ids[0][i] == 50);
            continue;
        }
        ++selected;
        CHECK(got.labels[0][i] == 50);
        const std::uint32_t id = got.ids[0][i];
        if (id == Vocabulary::kMask) {
            ++masked;
        } else if (id == 50) {
            ++kept;
        } else {
            ++randomized;
            CHECK(id >= Vocabulary::kNumSpecials);
            CHECK(id < vocab.size());
        }
    }

    auto within = [](double got_count, double n_trials, double p) {
        const double sigma = std::sqrt(n_trials * p * (1.0 - p));
        return std::abs(got_count - n_trials * p) <= 3.0 * sigma;
    };
    CHECK(within(selected, n, 0.15));
    const double m = static_cast<double>(selected);
    CHECK(within(masked, m, 0.8));
    CHECK(within(randomized, m, 0.1));
    CHECK(within(kept, m, 0.1));

    const MaskedBatch again = mask_batch(batch, policy, vocab, 11);
    CHECK(again.ids == got.ids);
    CHECK(again.labels == got.labels);
}

TEST_CASE("mask_batch requires regular tokens") {
    const Vocabulary vocab = Vocabulary::with_specials();
    IdBatch batch{{2, 3}};
    CHECK_THROWS_AS(mask_batch(batch, MaskingPolicy{}, vocab, 1),
                    ArgumentError);
}

TEST_CASE("zero token embedding gives the uniform-distribution loss") {
    ModelConfig cfg = small_config(140);
    Checkpoint ckpt = init_model(cfg, 9);
    ckpt.tensors.at("token_embedding") = Matrix(140, 8);

    const IdBatch batch{{2, 10, 20, 30, 3}};
    const LabelBatch labels{{kIgnoreLabel, 10, 20, 30, kIgnoreLabel}};
    const double loss = mlm_loss(ckpt, batch, labels);
    CHECK(loss == doctest::Approx(std::log(140.0)).epsilon(1e-12));
    CHECK(std::log(140.0) == doctest::Approx(4.9416).epsilon(1e-4));
}

TEST_CASE("freshly initialized loss is close to the uniform loss") {
    ModelConfig cfg = small_config(140);
    const Checkpoint ckpt = init_model(cfg, 10);
    const IdBatch batch{{2, 10, 20, 30, 40, 50, 3}};
    const LabelBatch labels{{kIgnoreLabel, 10, 20, 30, 40, 50, kIgnoreLabel}};
    const double loss = mlm_loss(ckpt, batch, labels);
    CHECK(std::abs(loss - std::log(140.0)) / std::log(140.0) <= 0.05);
}

TEST_CASE("zeroed attention and ffn reduce hidden to a normed embedding") {
    ModelConfig cfg = small_config(30);
    cfg.layers = 2;
    Checkpoint ckpt = init_model(cfg, 11);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo",
                              "attn.bq", "attn.bk", "attn.bv", "attn.bo",
                              "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"}) {
            Matrix& t = ckpt.tensors.at(p + w);
            t = Matrix(t.rows(), t.cols());
        }
    }

    const std::vector<std::uint32_t> ids{2, 6, 7, 3, 0};
    const ForwardResult got = forward(ckpt, {ids});

    const Matrix& e = ckpt.tensors.at("token_embedding");
    const Matrix& pos = ckpt.tensors.at("position_embedding");
    const Matrix& gain = ckpt.tensors.at("final_ln.gain");
    const Matrix& bias = ckpt.tensors.at("final_ln.bias");
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::vector<double> x(cfg.dim);
        double mean = 0.0;
        for (std::size_t j = 0; j < cfg.dim; ++j) {
            x[j] = e(ids[i], j) + pos(i, j);
            mean += x[j];
        }
        mean /= static_cast<double>(cfg.dim);
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(cfg.dim);
        const double inv = 1.0 / std::sqrt(var + cfg.layernorm_eps);
        for (std::size_t j = 0; j < cfg.dim; ++j) {
            const double want = gain(0, j) * (x[j] - mean) * inv + bias(0, j);
            CHECK(got.hidden[0](i, j) == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("identical sequences produce identical logits") {
    const Checkpoint ckpt = init_model(small_config(30), 12);
    const IdBatch batch{{2, 6, 7, 8, 3}, {2, 6, 7, 8, 3}};
    const ForwardResult got = forward(ckpt, batch);
    CHECK(got.logits[0].data() == got.logits[1].data());
    CHECK(got.hidden[0].data() == got.hidden[1].data());
}

TEST_CASE("forward matches an independently written reference") {
    ModelConfig cfg;
    cfg.vocab_size = 12;
    cfg.dim = 4;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.max_seq_len = 8;
    const Checkpoint ckpt = init_model(cfg, 123);
    const std::vector<std::uint32_t> ids{2, 5, 7, 3, 0};
    const ForwardResult got = forward(ckpt, {ids});

    const auto eig = [&](const std::string& name) {
        const Matrix& t = ckpt.tensors.at(name);
        Eigen::MatrixXd m(t.rows(), t.cols());
        for (std::size_t i = 0; i < t.rows(); ++i) {
            for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t(i, j);
        }
        return m;
    };
    const auto layernorm = [&](const Eigen::MatrixXd& x,
                               const Eigen::MatrixXd& gain,
                               const Eigen::MatrixXd& bias) {
        Eigen::MatrixXd y = x;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double mu = x.row(i).mean();
            const double var = (x.row(i).array() - mu).square().mean();
            y.row(i) = (((x.row(i).array() - mu) /
                         std::sqrt(var + cfg.layernorm_eps)) *
                            gain.row(0).array() +
                        bias.row(0).array())
                           .matrix();
        }
        return y;
    };
    const auto addb = [](Eigen::MatrixXd m, const Eigen::MatrixXd& b) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) += b.row(0);
        return m;
    };

    const Eigen::MatrixXd e = eig("token_embedding");
    const Eigen::MatrixXd pos = eig("position_embedding");
    const Eigen::Index s = static_cast<Eigen::Index>(ids.size());
    Eigen::MatrixXd x(s, 4);
    for (Eigen::Index i = 0; i < s; ++i) {
        x.row(i) = e.row(ids[i]) + pos.row(i);
    }

    const Eigen::MatrixXd a =
        layernorm(x, eig("layer0.ln1.gain"), eig("layer0.ln1.bias"));
    const Eigen::MatrixXd q =
        addb(a * eig("layer0.attn.wq"), eig("layer0.attn.bq"));
    const Eigen::MatrixXd k =
        addb(a * eig("layer0.attn.wk"), eig("layer0.attn.bk"));
    const Eigen::MatrixXd v =
        addb(a * eig("layer0.attn.wv"), eig("layer0.attn.bv"));

    Eigen::MatrixXd ctx = Eigen::MatrixXd::Zero(s, 4);
    for (int h = 0; h < 2; ++h) {
        const Eigen::MatrixXd qh = q.middleCols(h * 2, 2);
        const Eigen::MatrixXd kh = k.middleCols(h * 2, 2);
        const Eigen::MatrixXd vh = v.middleCols(h * 2, 2);
        Eigen::MatrixXd scores = qh * kh.transpose() / std::sqrt(2.0);
        for (Eigen::Index i = 0; i < s; ++i) {
            for (Eigen::Index j = 0; j < s; ++j) {
                if (ids[j] == Vocabulary::kPad) scores(i, j) += -1e30;
            }
        }
        for (Eigen::Index i = 0; i < s; ++i) {
            const double mx = scores.row(i).maxCoeff();
            Eigen::ArrayXd ex = (scores.row(i).array() - mx).exp();
            scores.row(i) = (ex / ex.sum()).matrix();
        }
        ctx.middleCols(h * 2, 2) = scores * vh;
    }
    const Eigen::MatrixXd xmid =
        x + addb(ctx * eig("layer0.attn.wo"), eig("layer0.attn.bo"));

    const Eigen::MatrixXd b =
        layernorm(xmid, eig("layer0.ln2.gain"), eig("layer0.ln2.bias"));
    Eigen::MatrixXd u = addb(b * eig("layer0.ffn.w1"), eig("layer0.ffn.b1"));
    const Eigen::MatrixXd g = u.unaryExpr([](double t) {
        return 0.5 * t * (1.0 + std::erf(t / std::sqrt(2.0)));
    });
    const Eigen::MatrixXd x1 =
        xmid + addb(g * eig("layer0.ffn.w2"), eig("layer0.ffn.b2"));
    const Eigen::MatrixXd hid =
        layernorm(x1, eig("final_ln.gain"), eig("final_ln.bias"));
    const Eigen::MatrixXd logits = hid * e.transpose();

    REQUIRE(got.logits[0].rows() == static_cast<std::size_t>(s));
    REQUIRE(got.logits[0].cols() == 12);
    for (Eigen::Index i = 0; i < s; ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) {
            CHECK(std::abs(got.hidden[0](i, j) - hid(i, j)) <= 1e-6);
        }
        for (Eigen::Index j = 0; j < 12; ++j) {
            CHECK(std::abs(got.logits[0](i, j) - logits(i, j)) <= 1e-6);
        }
    }
}

TEST_CASE("forward rejects malformed batches") {
    const Checkpoint ckpt = init_model(small_config(30), 13);
    CHECK_THROWS_AS(forward(ckpt, {}), ArgumentError);
    CHECK_THROWS_AS(forward(ckpt, {{2, 5, 3}, {2, 3}}), ArgumentError);
    CHECK_THROWS_AS(forward(ckpt, {{2, 99, 3}}), ArgumentError);
    CHECK_THROWS_AS(
        forward(ckpt, {std::vector<std::uint32_t>(17, 6)}),
        ArgumentError);
}

TEST_CASE("loss_and_grads agrees with mlm_loss and needs labels") {
    const Checkpoint ckpt = init_model(small_config(30), 14);
    const IdBatch batch{{2, 6, 7, 8, 3}};
    const LabelBatch labels{{kIgnoreLabel, 9, kIgnoreLabel, 10, kIgnoreLabel}};
    const auto [loss, grads] = loss_and_grads(ckpt, batch, labels);
    CHECK(loss == doctest::Approx(mlm_loss(ckpt, batch, labels))
                      .epsilon(1e-15));
    CHECK(grads.size() == ckpt.tensors.size());

    const LabelBatch none{{kIgnoreLabel, kIgnoreLabel, kIgnoreLabel,
                           kIgnoreLabel, kIgnoreLabel}};
    CHECK_THROWS_AS(loss_and_grads(ckpt, batch, none), ArgumentError);
    CHECK_THROWS_AS(mlm_loss(ckpt, batch, none), ArgumentError);
}

TEST_CASE("adam with zero betas reduces to signed gradient descent") {
    std::map<std::string, Matrix> tensors;
    Matrix t(1, 3);
    t(0, 0) = 1.0;
    t(0, 1) = -2.0;
    t(0, 2) = 0.5;
    tensors.emplace("w", t);
    GradMap grads;
    Matrix g(1, 3);
    g(0, 0) = 0.3;
    g(0, 1) = -0.7;
    g(0, 2) = 0.0;
    grads.emplace("w", g);

    AdamHyper hyper;
    hyper.beta1 = 0.0;
    hyper.beta2 = 0.0;
    AdamState state;
    adam_step(tensors, grads, state, hyper);
    for (std::size_t j = 0; j < 3; ++j) {
        const double want =
            t(0, j) - hyper.learning_rate * g(0, j) /
                          (std::abs(g(0, j)) + hyper.epsilon);
        CHECK(tensors.at("w")(0, j) == doctest::Approx(want).epsilon(1e-15));
    }
}

TEST_CASE("a zero gradient leaves parameters unchanged") {
    std::map<std::string, Matrix> tensors;
    Matrix t(2, 2);
    t(0, 0) = 3.0;
    t(1, 1) = -1.0;
    tensors.emplace("w", t);
    GradMap grads;
    grads.emplace("w", Matrix(2, 2));
    AdamState state;
    adam_step(tensors, grads, state, AdamHyper{});
    CHECK(tensors.at("w").data() == t.data());
}

TEST_CASE("adam rejects mismatched gradients") {
    std::map<std::string, Matrix> tensors;
    tensors.emplace("w", Matrix(2, 2));
    AdamState state;
    GradMap wrong_name;
    wrong_name.emplace("x", Matrix(2, 2));
    CHECK_THROWS_AS(adam_step(tensors, wrong_name, state, AdamHyper{}),
                    ArgumentError);
    GradMap wrong_shape;
    wrong_shape.emplace("w", Matrix(2, 3));
    CHECK_THROWS_AS(adam_step(tensors, wrong_shape, state, AdamHyper{}),
                    ArgumentError);
}

TEST_CASE("adam descends a quadratic bowl monotonically after warm-in") {
    std::map<std::string, Matrix> tensors;
    Matrix t(1, 1);
    t(0, 0) = 1.0;
    tensors.emplace("w", t);
    AdamHyper hyper;
    hyper.learning_rate = 0.005;
    AdamState state;
    std::vector<double> trace;
    for (int step = 0; step < 100; ++step) {
        GradMap grads;
        Matrix g(1, 1);
        g(0, 0) = tensors.at("w")(0, 0);  // gradient of w²/2
        grads.emplace("w", g);
        adam_step(tensors, grads, state, hyper);
        trace.push_back(std::abs(tensors.at("w")(0, 0)));
    }
    for (std::size_t i = 5; i + 1 < trace.size(); ++i) {
        CHECK(trace[i + 1] < trace[i]);
    }
    CHECK(trace.back() < 0.7);
}

namespace {

Corpus toy_corpus(std::size_t sentences, std::uint64_t seed) {
    const std::vector<std::string> words{"ba",   "bo", "ku", "kona",
                                         "tala", "mi", "su", "ra"};
    Rng rng(seed);
    Corpus corpus;
    corpus.lang = "tst";
    for (std::size_t i = 0; i < sentences; ++i) {
        std::string s;
        const std::size_t len = 3 + rng.uniform_int(4);
        for (std::size_t w = 0; w < len; ++w) {
            if (w) s += ' ';
            s += words[rng.uniform_int(words.size())];
        }
        corpus.sentences.push_back(s);
    }
    return corpus;
}

Checkpoint toy_model(const BpeTokenizer& tok, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.vocab_size = tok.vocabulary().size();
    cfg.dim = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.max_seq_len = 16;
    Checkpoint ckpt = init_model(cfg, seed);
    ckpt.tokenizer = tok;
    return ckpt;
}

}  // namespace

TEST_CASE("pretrain with zero steps returns the model unchanged") {
    const Corpus corpus = toy_corpus(10, 1);
    const BpeTokenizer tok = train_bpe(corpus, 30);
    const Checkpoint ckpt = toy_model(tok, 2);
    TrainRun run;
    run.steps = 0;
    const PretrainResult got = pretrain(ckpt, corpus, MaskingPolicy{}, run);
    CHECK(got.curve.empty());
    for (const auto& [name, t] : ckpt.tensors) {
        CHECK(got.checkpoint.tensors.at(name).data() == t.data());
    }
}

TEST_CASE("pretraining loss trends downward over 500 steps") {
    const Corpus corpus = toy_corpus(50, 3);
    const BpeTokenizer tok = train_bpe(corpus, 40);
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        const Checkpoint ckpt = toy_model(tok, seed);
        TrainRun run;
        run.steps = 500;
        run.batch_size = 8;
        run.seed = seed;
        const PretrainResult got =
            pretrain(ckpt, corpus, MaskingPolicy{}, run);
        REQUIRE(got.curve.size() == 500);
        CHECK(got.curve.front().first == 1);
        CHECK(got.curve.back().first == 500);
        double first = 0.0, last = 0.0;
        for (std::size_t i = 0; i < 50; ++i) {
            first += got.curve[i].second;
            last += got.curve[500 - 50 + i].second;
        }
        CHECK(last / 50.0 < first / 50.0);
    }
}

TEST_CASE("pretraining is bit-identical under a fixed seed") {
    const Corpus corpus = toy_corpus(20, 4);
    const BpeTokenizer tok = train_bpe(corpus, 36);
    const Checkpoint ckpt = toy_model(tok, 5);
    TrainRun run;
    run.steps = 30;
    run.batch_size = 4;
    run.seed = 21;
    const PretrainResult a = pretrain(ckpt, corpus, MaskingPolicy{}, run);
    const PretrainResult b = pretrain(ckpt, corpus, MaskingPolicy{}, run);
    CHECK(a.curve == b.curve);
    for (const auto& [name, t] : a.checkpoint.tensors) {
        CHECK(t.data() == b.checkpoint.tensors.at(name).data());
    }
    run.seed = 22;
    const PretrainResult c = pretrain(ckpt, corpus, MaskingPolicy{}, run);
    CHECK(a.checkpoint.tensors.at("token_embedding").data() !=
          c.checkpoint.tensors.at("token_embedding").data());
}

TEST_CASE("held-out loss evaluation is deterministic") {
    const Corpus corpus = toy_corpus(15, 6);
    const BpeTokenizer tok = train_bpe(corpus, 36);
    const Checkpoint ckpt = toy_model(tok, 7);
    const double a = mlm_eval_loss(ckpt, corpus, MaskingPolicy{}, 9);
    const double b = mlm_eval_loss(ckpt, corpus, MaskingPolicy{}, 9);
    CHECK(a == b);
    CHECK(std::isfinite(a));
    // A fresh model has near-uniform logits.
    CHECK(std::abs(a - std::log(static_cast<double>(
                           tok.vocabulary().size()))) /
              std::log(static_cast<double>(tok.vocabulary().size())) <=
          0.05);
}

TEST_CASE("loss curve serializes to step,loss lines") {
    const LossCurve curve{{1, 4.5}, {2, 4.25}};
    const std::string csv = loss_curve_csv(curve);
    CHECK(csv == "step,loss\n1,4.5\n2,4.25\n");
}

TEST_CASE("analytic gradients match finite differences") {
    ModelConfig cfg;
    cfg.vocab_size = 30;
    cfg.dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.max_seq_len = 8;
    const GradCheckReport report = grad_check(cfg, 1e-4);
    CHECK(report.pass);
    CHECK(report.worst <= 1e-4);
    CHECK(report.max_rel_error.size() == tensor_specs(validated(cfg)).size());
}

TEST_CASE("a vacuous tolerance always passes") {
    ModelConfig cfg;
    cfg.vocab_size = 20;
    cfg.dim = 4;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.max_seq_len = 4;
    CHECK(grad_check(cfg, 1.0).pass);
}

TEST_CASE("a corrupted gradient is distinguishable from finite differences") {
    ModelConfig cfg;
    cfg.vocab_size = 20;
    cfg.dim = 4;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.max_seq_len = 6;
    Checkpoint ckpt = init_model(cfg, 31);
    const IdBatch batch{{2, 6, 7, 8, 3}};
    const LabelBatch labels{{kIgnoreLabel, 9, 10, kIgnoreLabel, kIgnoreLabel}};
    auto [loss, grads] = loss_and_grads(ckpt, batch, labels);

    Matrix& w = ckpt.tensors.at("layer0.ffn.w1");
    const double corrupted = grads.at("layer0.ffn.w1")(0, 0) + 0.5;

    const double h = 1e-3;
    const double saved = w(0, 0);
    w(0, 0) = saved + h;
    const double up = mlm_loss(ckpt, batch, labels);
    w(0, 0) = saved - h;
    const double down = mlm_loss(ckpt, batch, labels);
    w(0, 0) = saved;
    const double fd = (up - down) / (2.0 * h);

    const double rel = std::abs(corrupted - fd) /
                       std::max({std::abs(corrupted), std::abs(fd), 1.0});
    CHECK(rel > 1e-4);
}

TEST_SUITE_END();
