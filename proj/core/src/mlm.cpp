#include "graftbench/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "graftbench/error.hpp"
#include "graftbench/rng.hpp"

namespace graftbench {

namespace {

constexpr double kPadScore = -1e30;

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
           x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

/// y = x·W + b, with b broadcast over rows.
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = matmul(x, w);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b(0, j);
    }
    return y;
}

Matrix column_sums(const Matrix& m) {
    Matrix s(1, m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) s(0, j) += m(i, j);
    }
    return s;
}

void add_into(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.rows() * dst.cols(); ++i) {
        dst.data()[i] += src.data()[i];
    }
}

struct LnCache {
    Matrix xhat;                   // normalized pre-gain values
    std::vector<double> inv_std;   // per row
};

Matrix layernorm_forward(const Matrix& x, const Matrix& gain,
                         const Matrix& bias, double eps, LnCache& cache) {
    const std::size_t d = x.cols();
    cache.xhat = Matrix(x.rows(), d);
    cache.inv_std.assign(x.rows(), 0.0);
    Matrix y(x.rows(), d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        cache.inv_std[i] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (x(i, j) - mean) * inv;
            cache.xhat(i, j) = xh;
            y(i, j) = gain(0, j) * xh + bias(0, j);
        }
    }
    return y;
}

Matrix layernorm_backward(const LnCache& cache, const Matrix& gain,
                          const Matrix& dy, Matrix& dgain, Matrix& dbias) {
    const std::size_t d = dy.cols();
    Matrix dx(dy.rows(), d);
    for (std::size_t i = 0; i < dy.rows(); ++i) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dy(i, j) * gain(0, j);
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * cache.xhat(i, j);
            dgain(0, j) += dy(i, j) * cache.xhat(i, j);
            dbias(0, j) += dy(i, j);
        }
        const double inv = cache.inv_std[i];
        for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dy(i, j) * gain(0, j);
            dx(i, j) = inv * (dxh - (sum_dxhat +
                                     cache.xhat(i, j) * sum_dxhat_xhat) /
                                        static_cast<double>(d));
        }
    }
    return dx;
}

struct LayerCache {
    Matrix x_in;   // residual stream entering the layer
    LnCache ln1;
    Matrix a;      // ln1 output
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per head, S×S
    Matrix ctx;    // heads concatenated
    Matrix x_mid;  // after the attention residual
    LnCache ln2;
    Matrix b;      // ln2 output
    Matrix u;      // pre-activation
    Matrix g;      // gelu(u)
};

struct SeqCache {
    std::vector<std::uint32_t> ids;
    Matrix x0;  // embedding stream
    std::vector<LayerCache> layers;
    LnCache final_ln;
    Matrix hidden;
    Matrix logits;
};

const Matrix& tensor(const Checkpoint& ckpt, const std::string& name) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
        throw ConfigurationError("checkpoint missing tensor " + name);
    }
    return it->second;
}

Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t count) {
    Matrix out(m.rows(), count);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < count; ++j) out(i, j) = m(i, begin + j);
    }
    return out;
}

void add_cols(Matrix& dst, const Matrix& src, std::size_t begin) {
    for (std::size_t i = 0; i < src.rows(); ++i) {
        for (std::size_t j = 0; j < src.cols(); ++j) {
            dst(i, begin + j) += src(i, j);
        }
    }
}

SeqCache forward_sequence(const Checkpoint& ckpt,
                          const std::vector<std::uint32_t>& ids) {
    const ModelConfig& cfg = ckpt.config;
    const std::size_t s = ids.size();
    const std::size_t d = cfg.dim;
    const std::size_t dh = d / cfg.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const Matrix& emb = tensor(ckpt, "token_embedding");
    const Matrix& pos = tensor(ckpt, "position_embedding");

    SeqCache cache;
    cache.ids = ids;
    cache.x0 = Matrix(s, d);
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            cache.x0(i, j) = emb(ids[i], j) + pos(i, j);
        }
    }

    Matrix x = cache.x0;
    cache.layers.resize(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerCache& lc = cache.layers[l];
        lc.x_in = x;
        lc.a = layernorm_forward(x, tensor(ckpt, p + "ln1.gain"),
                                 tensor(ckpt, p + "ln1.bias"),
                                 cfg.layernorm_eps, lc.ln1);
        lc.q = affine(lc.a, tensor(ckpt, p + "attn.wq"),
                      tensor(ckpt, p + "attn.bq"));
        lc.k = affine(lc.a, tensor(ckpt, p + "attn.wk"),
                      tensor(ckpt, p + "attn.bk"));
        lc.v = affine(lc.a, tensor(ckpt, p + "attn.wv"),
                      tensor(ckpt, p + "attn.bv"));

        lc.ctx = Matrix(s, d);
        lc.probs.resize(cfg.heads);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const Matrix qh = slice_cols(lc.q, h * dh, dh);
            const Matrix kh = slice_cols(lc.k, h * dh, dh);
            const Matrix vh = slice_cols(lc.v, h * dh, dh);
            Matrix scores = matmul_nt(qh, kh);
            for (std::size_t i = 0; i < s; ++i) {
                for (std::size_t j = 0; j < s; ++j) {
                    scores(i, j) *= scale;
                    if (ids[j] == Vocabulary::kPad) scores(i, j) += kPadScore;
                }
            }
            // Row softmax, max-shifted.
            for (std::size_t i = 0; i < s; ++i) {
                double mx = scores(i, 0);
                for (std::size_t j = 1; j < s; ++j) {
                    mx = std::max(mx, scores(i, j));
                }
                double total = 0.0;
                for (std::size_t j = 0; j < s; ++j) {
                    scores(i, j) = std::exp(scores(i, j) - mx);
                    total += scores(i, j);
                }
                for (std::size_t j = 0; j < s; ++j) scores(i, j) /= total;
            }
            lc.probs[h] = scores;
            add_cols(lc.ctx, matmul(scores, vh), h * dh);
        }

        const Matrix attn_out = affine(lc.ctx, tensor(ckpt, p + "attn.wo"),
                                       tensor(ckpt, p + "attn.bo"));
        lc.x_mid = x;
        add_into(lc.x_mid, attn_out);

        lc.b = layernorm_forward(lc.x_mid, tensor(ckpt, p + "ln2.gain"),
                                 tensor(ckpt, p + "ln2.bias"),
                                 cfg.layernorm_eps, lc.ln2);
        lc.u = affine(lc.b, tensor(ckpt, p + "ffn.w1"),
                      tensor(ckpt, p + "ffn.b1"));
        lc.g = Matrix(lc.u.rows(), lc.u.cols());
        for (std::size_t i = 0; i < lc.u.rows() * lc.u.cols(); ++i) {
            lc.g.data()[i] = gelu(lc.u.data()[i]);
        }
        const Matrix ffn_out = affine(lc.g, tensor(ckpt, p + "ffn.w2"),
                                      tensor(ckpt, p + "ffn.b2"));
        x = lc.x_mid;
        add_into(x, ffn_out);
    }

    cache.hidden = layernorm_forward(x, tensor(ckpt, "final_ln.gain"),
                                     tensor(ckpt, "final_ln.bias"),
                                     cfg.layernorm_eps, cache.final_ln);
    cache.logits = matmul_nt(cache.hidden, emb);
    return cache;
}

void check_batch(const Checkpoint& ckpt, const IdBatch& batch) {
    if (batch.empty()) throw ArgumentError("forward: empty batch");
    const std::size_t len = batch.front().size();
    for (const auto& seq : batch) {
        if (seq.empty()) throw ArgumentError("forward: empty sequence");
        if (seq.size() != len) {
            throw ArgumentError("forward: ragged batch (pad to equal length)");
        }
        if (seq.size() > ckpt.config.max_seq_len) {
            throw ArgumentError("forward: sequence length " +
                                std::to_string(seq.size()) +
                                " exceeds max_seq_len " +
                                std::to_string(ckpt.config.max_seq_len));
        }
        for (std::uint32_t id : seq) {
            if (id >= ckpt.config.vocab_size) {
                throw ArgumentError("forward: token id " + std::to_string(id) +
                                    " outside vocabulary of size " +
                                    std::to_string(ckpt.config.vocab_size));
            }
        }
    }
}

/// Loss over labeled positions; fills dlogits (same shapes as logits) when
/// requested. Returns {loss_sum, labeled_count}.
std::pair<double, std::size_t> label_loss(
    const std::vector<SeqCache>& caches, const LabelBatch& labels,
    std::vector<Matrix>* dlogits) {
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < caches.size(); ++b) {
        for (std::int32_t lab : labels[b]) {
            if (lab != kIgnoreLabel) ++count;
        }
    }
    for (std::size_t b = 0; b < caches.size(); ++b) {
        const Matrix& logits = caches[b].logits;
        if (dlogits) (*dlogits)[b] = Matrix(logits.rows(), logits.cols());
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            const std::int32_t lab = labels[b][i];
            if (lab == kIgnoreLabel) continue;
            double mx = logits(i, 0);
            for (std::size_t j = 1; j < logits.cols(); ++j) {
                mx = std::max(mx, logits(i, j));
            }
            double total = 0.0;
            for (std::size_t j = 0; j < logits.cols(); ++j) {
                total += std::exp(logits(i, j) - mx);
            }
            const double lse = mx + std::log(total);
            loss_sum += lse - logits(i, static_cast<std::size_t>(lab));
            if (dlogits) {
                Matrix& dl = (*dlogits)[b];
                for (std::size_t j = 0; j < logits.cols(); ++j) {
                    dl(i, j) = std::exp(logits(i, j) - lse) /
                               static_cast<double>(count);
                }
                dl(i, static_cast<std::size_t>(lab)) -=
                    1.0 / static_cast<double>(count);
            }
        }
    }
    return {loss_sum, count};
}

}  // namespace

void validate_policy(const MaskingPolicy& policy) {
    if (!(policy.mask_rate > 0.0) || !(policy.mask_rate < 1.0)) {
        throw ArgumentError("masking policy: mask_rate must be in (0, 1)");
    }
    const double total = policy.mask_token_frac + policy.random_token_frac +
                         policy.keep_frac;
    if (std::abs(total - 1.0) > 1e-9 || policy.mask_token_frac < 0.0 ||
        policy.random_token_frac < 0.0 || policy.keep_frac < 0.0) {
        throw ArgumentError(
            "masking policy: action fractions must be nonnegative and sum "
            "to 1");
    }
}

Checkpoint init_model(const ModelConfig& config, std::uint64_t seed) {
    const ModelConfig cfg = validated(config);
    Checkpoint ckpt;
    ckpt.config = cfg;
    Rng rng(seed);
    for (const TensorSpec& spec : tensor_specs(cfg)) {
        Matrix t(spec.rows, spec.cols);
        const std::size_t dot = spec.name.rfind('.');
        const std::string leaf =
            dot == std::string::npos ? spec.name : spec.name.substr(dot + 1);
        if (leaf == "gain") {
            t.fill(1.0);
        } else if (leaf[0] != 'b') {  // biases stay zero
            for (std::size_t i = 0; i < spec.rows * spec.cols; ++i) {
                t.data()[i] = 0.02 * rng.normal();
            }
        }
        ckpt.tensors.emplace(spec.name, std::move(t));
    }
    return ckpt;
}

MaskedBatch mask_batch(const IdBatch& batch, const MaskingPolicy& policy,
                       const Vocabulary& vocab, std::uint64_t seed) {
    validate_policy(policy);
    const std::size_t v = vocab.size();
    if (v <= Vocabulary::kNumSpecials) {
        throw ArgumentError("mask_batch: vocabulary has no regular tokens");
    }

    MaskedBatch out;
    out.ids = batch;
    out.labels.resize(batch.size());
    Rng rng(seed);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        out.labels[b].assign(batch[b].size(), kIgnoreLabel);
        for (std::size_t i = 0; i < batch[b].size(); ++i) {
            const std::uint32_t id = batch[b][i];
            if (id == Vocabulary::kPad || id == Vocabulary::kBos ||
                id == Vocabulary::kEos) {
                continue;
            }
            if (rng.uniform() >= policy.mask_rate) continue;
            out.labels[b][i] = static_cast<std::int32_t>(id);
            const double action = rng.uniform();
            if (action < policy.mask_token_frac) {
                out.ids[b][i] = Vocabulary::kMask;
            } else if (action <
                       policy.mask_token_frac + policy.random_token_frac) {
                out.ids[b][i] = static_cast<std::uint32_t>(
                    Vocabulary::kNumSpecials +
                    rng.uniform_int(v - Vocabulary::kNumSpecials));
            }
            // else: keep the original token.
        }
    }
    return out;
}

ForwardResult forward(const Checkpoint& ckpt, const IdBatch& batch) {
    check_batch(ckpt, batch);
    ForwardResult out;
    for (const auto& seq : batch) {
        SeqCache cache = forward_sequence(ckpt, seq);
        out.hidden.push_back(std::move(cache.hidden));
        out.logits.push_back(std::move(cache.logits));
    }
    return out;
}

namespace {

GradMap zero_grads(const ModelConfig& cfg) {
    GradMap grads;
    for (const TensorSpec& spec : tensor_specs(cfg)) {
        grads.emplace(spec.name, Matrix(spec.rows, spec.cols));
    }
    return grads;
}

/// Backpropagates one sequence from a gradient on its final hidden states,
/// accumulating into grads (which must hold every tensor, zero-initialized
/// or mid-accumulation).
void backward_sequence(const Checkpoint& ckpt, const SeqCache& cache,
                       const Matrix& dhidden, GradMap& grads) {
    const ModelConfig& cfg = ckpt.config;
    const std::size_t d = cfg.dim;
    const std::size_t dh = d / cfg.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t s = cache.ids.size();
    Matrix& demb = grads.at("token_embedding");
    Matrix& dpos = grads.at("position_embedding");

    Matrix dx = layernorm_backward(cache.final_ln,
                                   tensor(ckpt, "final_ln.gain"), dhidden,
                                   grads.at("final_ln.gain"),
                                   grads.at("final_ln.bias"));

    for (std::size_t l = cfg.layers; l-- > 0;) {
        const std::string p = "layer" + std::to_string(l) + ".";
        const LayerCache& lc = cache.layers[l];

        // FFN branch: x = x_mid + ffn(ln2(x_mid)).
        const Matrix& dffn = dx;
        add_into(grads.at(p + "ffn.w2"), matmul_tn(lc.g, dffn));
        add_into(grads.at(p + "ffn.b2"), column_sums(dffn));
        Matrix du = matmul_nt(dffn, tensor(ckpt, p + "ffn.w2"));
        for (std::size_t i = 0; i < du.rows() * du.cols(); ++i) {
            du.data()[i] *= gelu_grad(lc.u.data()[i]);
        }
        add_into(grads.at(p + "ffn.w1"), matmul_tn(lc.b, du));
        add_into(grads.at(p + "ffn.b1"), column_sums(du));
        const Matrix db = matmul_nt(du, tensor(ckpt, p + "ffn.w1"));
        Matrix dx_mid = layernorm_backward(
            lc.ln2, tensor(ckpt, p + "ln2.gain"), db,
            grads.at(p + "ln2.gain"), grads.at(p + "ln2.bias"));
        add_into(dx_mid, dx);  // residual path

        // Attention branch: x_mid = x_in + attn(ln1(x_in)).
        const Matrix& dattn_out = dx_mid;
        add_into(grads.at(p + "attn.wo"),
                 matmul_tn(lc.ctx, dattn_out));
        add_into(grads.at(p + "attn.bo"), column_sums(dattn_out));
        const Matrix dctx =
            matmul_nt(dattn_out, tensor(ckpt, p + "attn.wo"));

        Matrix dq(s, d), dk(s, d), dv(s, d);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const Matrix qh = slice_cols(lc.q, h * dh, dh);
            const Matrix kh = slice_cols(lc.k, h * dh, dh);
            const Matrix vh = slice_cols(lc.v, h * dh, dh);
            const Matrix dctx_h = slice_cols(dctx, h * dh, dh);
            const Matrix& probs = lc.probs[h];

            add_cols(dv, matmul_tn(probs, dctx_h), h * dh);
            Matrix dprobs = matmul_nt(dctx_h, vh);
            // Softmax backward, row-wise.
            Matrix dscores(s, s);
            for (std::size_t i = 0; i < s; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < s; ++j) {
                    dot += dprobs(i, j) * probs(i, j);
                }
                for (std::size_t j = 0; j < s; ++j) {
                    dscores(i, j) =
                        (dprobs(i, j) - dot) * probs(i, j) * scale;
                }
            }
            add_cols(dq, matmul(dscores, kh), h * dh);
            add_cols(dk, matmul_tn(dscores, qh), h * dh);
        }

        Matrix da = matmul_nt(dq, tensor(ckpt, p + "attn.wq"));
        add_into(da, matmul_nt(dk, tensor(ckpt, p + "attn.wk")));
        add_into(da, matmul_nt(dv, tensor(ckpt, p + "attn.wv")));
        add_into(grads.at(p + "attn.wq"), matmul_tn(lc.a, dq));
        add_into(grads.at(p + "attn.bq"), column_sums(dq));
        add_into(grads.at(p + "attn.wk"), matmul_tn(lc.a, dk));
        add_into(grads.at(p + "attn.bk"), column_sums(dk));
        add_into(grads.at(p + "attn.wv"), matmul_tn(lc.a, dv));
        add_into(grads.at(p + "attn.bv"), column_sums(dv));

        Matrix dx_in = layernorm_backward(
            lc.ln1, tensor(ckpt, p + "ln1.gain"), da,
            grads.at(p + "ln1.gain"), grads.at(p + "ln1.bias"));
        add_into(dx_in, dx_mid);  // residual path
        dx = std::move(dx_in);
    }

    // Embedding stream: x0 = token_embedding[ids] + position rows.
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            demb(cache.ids[i], j) += dx(i, j);
            dpos(i, j) += dx(i, j);
        }
    }
}

}  // namespace

std::pair<double, GradMap> loss_and_grads(const Checkpoint& ckpt,
                                          const IdBatch& batch,
                                          const LabelBatch& labels) {
    check_batch(ckpt, batch);
    if (labels.size() != batch.size()) {
        throw ArgumentError("loss_and_grads: labels shape mismatch");
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (labels[b].size() != batch[b].size()) {
            throw ArgumentError("loss_and_grads: labels shape mismatch");
        }
    }

    std::vector<SeqCache> caches;
    for (const auto& seq : batch) {
        caches.push_back(forward_sequence(ckpt, seq));
    }

    std::vector<Matrix> dlogits(batch.size());
    const auto [loss_sum, count] = label_loss(caches, labels, &dlogits);
    if (count == 0) {
        throw ArgumentError("loss_and_grads: no labeled positions");
    }

    GradMap grads = zero_grads(ckpt.config);
    Matrix& demb = grads.at("token_embedding");
    for (std::size_t b = 0; b < batch.size(); ++b) {
        // Tied output projection: logits = hidden · embᵀ.
        const Matrix dhidden =
            matmul(dlogits[b], tensor(ckpt, "token_embedding"));
        add_into(demb, matmul_tn(dlogits[b], caches[b].hidden));
        backward_sequence(ckpt, caches[b], dhidden, grads);
    }

    return {loss_sum / static_cast<double>(count), std::move(grads)};
}

struct ForwardCache::Impl {
    std::vector<SeqCache> seqs;
    std::vector<Matrix> hidden, logits;
};

ForwardCache::ForwardCache() : impl_(std::make_unique<Impl>()) {}
ForwardCache::ForwardCache(ForwardCache&&) noexcept = default;
ForwardCache& ForwardCache::operator=(ForwardCache&&) noexcept = default;
ForwardCache::~ForwardCache() = default;

const std::vector<Matrix>& ForwardCache::hidden() const {
    return impl_->hidden;
}
const std::vector<Matrix>& ForwardCache::logits() const {
    return impl_->logits;
}

ForwardCache forward_cached(const Checkpoint& ckpt, const IdBatch& batch) {
    check_batch(ckpt, batch);
    ForwardCache out;
    for (const auto& seq : batch) {
        out.impl_->seqs.push_back(forward_sequence(ckpt, seq));
        out.impl_->hidden.push_back(out.impl_->seqs.back().hidden);
        out.impl_->logits.push_back(out.impl_->seqs.back().logits);
    }
    return out;
}

GradMap backward_hidden(const Checkpoint& ckpt, const ForwardCache& cache,
                        const std::vector<Matrix>& dhidden) {
    const auto& seqs = cache.impl_->seqs;
    if (dhidden.size() != seqs.size()) {
        throw ArgumentError("backward_hidden: gradient count mismatch");
    }
    GradMap grads = zero_grads(ckpt.config);
    for (std::size_t b = 0; b < seqs.size(); ++b) {
        if (!dhidden[b].same_shape(seqs[b].hidden)) {
            throw ArgumentError("backward_hidden: gradient shape mismatch");
        }
        backward_sequence(ckpt, seqs[b], dhidden[b], grads);
    }
    return grads;
}

double mlm_loss(const Checkpoint& ckpt, const IdBatch& batch,
                const LabelBatch& labels) {
    check_batch(ckpt, batch);
    std::vector<SeqCache> caches;
    for (const auto& seq : batch) {
        caches.push_back(forward_sequence(ckpt, seq));
    }
    const auto [loss_sum, count] = label_loss(caches, labels, nullptr);
    if (count == 0) throw ArgumentError("mlm_loss: no labeled positions");
    return loss_sum / static_cast<double>(count);
}

void adam_step(std::map<std::string, Matrix>& tensors, const GradMap& grads,
               AdamState& state, const AdamHyper& hyper) {
    ++state.step;
    const double bc1 =
        1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 =
        1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (const auto& [name, g] : grads) {
        auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw ArgumentError("adam_step: no tensor named " + name);
        }
        Matrix& t = it->second;
        if (!t.same_shape(g)) {
            throw ArgumentError("adam_step: gradient shape mismatch for " +
                                name);
        }
        Matrix& m = state.m.try_emplace(name, Matrix(t.rows(), t.cols()))
                        .first->second;
        Matrix& v = state.v.try_emplace(name, Matrix(t.rows(), t.cols()))
                        .first->second;
        for (std::size_t i = 0; i < t.rows() * t.cols(); ++i) {
            const double gi = g.data()[i];
            m.data()[i] = hyper.beta1 * m.data()[i] + (1.0 - hyper.beta1) * gi;
            v.data()[i] =
                hyper.beta2 * v.data()[i] + (1.0 - hyper.beta2) * gi * gi;
            const double mhat = m.data()[i] / bc1;
            const double vhat = v.data()[i] / bc2;
            t.data()[i] -= hyper.learning_rate * mhat /
                           (std::sqrt(vhat) + hyper.epsilon);
        }
    }
}

namespace {

/// bos + ids (truncated) + eos for every sentence.
std::vector<std::vector<std::uint32_t>> tokenize_pool(
    const Checkpoint& ckpt, const Corpus& corpus) {
    std::vector<std::vector<std::uint32_t>> pool;
    const std::size_t body = ckpt.config.max_seq_len - 2;
    for (const std::string& sentence : corpus.sentences) {
        std::vector<std::uint32_t> ids = tokenize(ckpt.tokenizer, sentence);
        if (ids.empty()) continue;
        if (ids.size() > body) ids.resize(body);
        std::vector<std::uint32_t> seq;
        seq.reserve(ids.size() + 2);
        seq.push_back(Vocabulary::kBos);
        seq.insert(seq.end(), ids.begin(), ids.end());
        seq.push_back(Vocabulary::kEos);
        pool.push_back(std::move(seq));
    }
    if (pool.empty()) {
        throw ArgumentError("pretraining corpus produced no sequences");
    }
    return pool;
}

IdBatch pad_batch(std::vector<std::vector<std::uint32_t>> seqs) {
    std::size_t len = 0;
    for (const auto& s : seqs) len = std::max(len, s.size());
    for (auto& s : seqs) s.resize(len, Vocabulary::kPad);
    return seqs;
}

/// Masks with attempt-indexed seeds until at least one position is
/// selected; tiny batches can otherwise select none.
MaskedBatch mask_nonempty(const IdBatch& batch, const MaskingPolicy& policy,
                          const Vocabulary& vocab, std::uint64_t seed) {
    for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
        MaskedBatch masked =
            mask_batch(batch, policy, vocab, derive_seed(seed, attempt));
        for (const auto& row : masked.labels) {
            for (std::int32_t lab : row) {
                if (lab != kIgnoreLabel) return masked;
            }
        }
    }
    throw ArgumentError("masking selected no positions in 100 attempts");
}

}  // namespace

PretrainResult pretrain(const Checkpoint& ckpt, const Corpus& corpus,
                        const MaskingPolicy& policy, const TrainRun& run) {
    validate_policy(policy);
    if (corpus.sentences.empty()) {
        throw ArgumentError("pretrain: empty corpus");
    }
    if (run.batch_size == 0) {
        throw ArgumentError("pretrain: batch_size must be positive");
    }
    if (ckpt.config.max_seq_len < 3) {
        throw ArgumentError("pretrain: max_seq_len must be at least 3");
    }

    PretrainResult out;
    out.checkpoint = ckpt;
    if (run.steps == 0) return out;

    const auto pool = tokenize_pool(ckpt, corpus);
    const Vocabulary& vocab = ckpt.tokenizer.vocabulary();

    Rng data_rng(derive_seed(run.seed, 0xD0));
    AdamState state;
    for (std::size_t step = 0; step < run.steps; ++step) {
        std::vector<std::vector<std::uint32_t>> picks;
        for (std::size_t b = 0; b < run.batch_size; ++b) {
            picks.push_back(pool[data_rng.uniform_int(pool.size())]);
        }
        const IdBatch batch = pad_batch(std::move(picks));
        const MaskedBatch masked = mask_nonempty(
            batch, policy, vocab, derive_seed(run.seed, 1 + step));
        auto [loss, grads] =
            loss_and_grads(out.checkpoint, masked.ids, masked.labels);
        adam_step(out.checkpoint.tensors, grads, state, run.adam);
        out.curve.emplace_back(step + 1, loss);
    }
    return out;
}

double mlm_eval_loss(const Checkpoint& ckpt, const Corpus& corpus,
                     const MaskingPolicy& policy, std::uint64_t seed) {
    validate_policy(policy);
    if (corpus.sentences.empty()) {
        throw ArgumentError("mlm_eval_loss: empty corpus");
    }
    const auto pool = tokenize_pool(ckpt, corpus);
    const Vocabulary& vocab = ckpt.tokenizer.vocabulary();

    double loss_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const IdBatch batch{pool[i]};
        const MaskedBatch masked =
            mask_batch(batch, policy, vocab, derive_seed(seed, i));
        std::size_t labeled = 0;
        for (std::int32_t lab : masked.labels[0]) {
            labeled += lab != kIgnoreLabel;
        }
        if (labeled == 0) continue;
        const double mean = mlm_loss(ckpt, masked.ids, masked.labels);
        loss_sum += mean * static_cast<double>(labeled);
        count += labeled;
    }
    if (count == 0) {
        throw ArgumentError("mlm_eval_loss: masking selected no positions");
    }
    return loss_sum / static_cast<double>(count);
}

std::string loss_curve_csv(const LossCurve& curve) {
    std::string csv = "step,loss\n";
    char buf[64];
    for (const auto& [step, loss] : curve) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", step, loss);
        csv += buf;
    }
    return csv;
}

GradCheckReport grad_check(const ModelConfig& config, double tolerance,
                           std::uint64_t seed) {
    Checkpoint ckpt = init_model(config, seed);
    const ModelConfig& cfg = ckpt.config;

    // Random batch with direct labels; a couple of pads exercise masking.
    Rng rng(derive_seed(seed, 1));
    const std::size_t s = std::min<std::size_t>(cfg.max_seq_len, 8);
    IdBatch batch(2, std::vector<std::uint32_t>(s));
    LabelBatch labels(2, std::vector<std::int32_t>(s, kIgnoreLabel));
    const std::size_t regular = cfg.vocab_size - Vocabulary::kNumSpecials;
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < s; ++i) {
            batch[b][i] = static_cast<std::uint32_t>(
                Vocabulary::kNumSpecials + rng.uniform_int(regular));
            if (rng.uniform() < 0.4) {
                labels[b][i] = static_cast<std::int32_t>(
                    Vocabulary::kNumSpecials + rng.uniform_int(regular));
            }
        }
    }
    batch[1][s - 1] = Vocabulary::kPad;
    labels[1][s - 1] = kIgnoreLabel;
    labels[0][0] = static_cast<std::int32_t>(Vocabulary::kNumSpecials);

    const auto [loss, grads] = loss_and_grads(ckpt, batch, labels);
    (void)loss;

    GradCheckReport report;
    const double h = 1e-3;
    for (auto& [name, t] : ckpt.tensors) {
        const Matrix& g = grads.at(name);
        double worst = 0.0;
        for (std::size_t i = 0; i < t.rows() * t.cols(); ++i) {
            const double saved = t.data()[i];
            t.data()[i] = saved + h;
            const double up = mlm_loss(ckpt, batch, labels);
            t.data()[i] = saved - h;
            const double down = mlm_loss(ckpt, batch, labels);
            t.data()[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double ga = g.data()[i];
            const double rel = std::abs(ga - fd) /
                               std::max({std::abs(ga), std::abs(fd), 1.0});
            worst = std::max(worst, rel);
        }
        report.max_rel_error[name] = worst;
        report.worst = std::max(report.worst, worst);
    }
    report.pass = report.worst <= tolerance;
    return report;
}

}  // namespace graftbench
