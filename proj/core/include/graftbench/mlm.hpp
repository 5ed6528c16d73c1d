#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "graftbench/checkpoint.hpp"
#include "graftbench/corpus.hpp"
#include "graftbench/matrix.hpp"

namespace graftbench {

/// BERT-style corruption: mask_rate of eligible positions are selected;
/// of those, mask_token_frac become the mask token, random_token_frac a
/// uniform random non-special token, keep_frac stay unchanged.
struct MaskingPolicy {
    double mask_rate = 0.15;
    double mask_token_frac = 0.8;
    double random_token_frac = 0.1;
    double keep_frac = 0.1;
};

/// Fractions must sum to 1 within 1e-9 and 0 < mask_rate < 1.
void validate_policy(const MaskingPolicy& policy);

/// Label value for positions that do not contribute to the loss.
inline constexpr std::int32_t kIgnoreLabel = -1;

/// Rectangular id batch (rows padded to a common length with the pad id)
/// and its loss labels.
using IdBatch = std::vector<std::vector<std::uint32_t>>;
using LabelBatch = std::vector<std::vector<std::int32_t>>;

struct MaskedBatch {
    IdBatch ids;
    LabelBatch labels;  // original id where selected, kIgnoreLabel elsewhere
};

/// Fresh model: weights from normal(0, 0.02), layernorm gains 1, all
/// biases 0; deterministic under seed. The tokenizer starts empty and is
/// attached by the caller.
Checkpoint init_model(const ModelConfig& config, std::uint64_t seed);

/// Positions holding pad/bos/eos are never selected. Deterministic under
/// seed: one generator scans positions row-major, drawing a selection
/// uniform per eligible position and (when selected) an action uniform,
/// plus a replacement id when the action is random.
MaskedBatch mask_batch(const IdBatch& batch, const MaskingPolicy& policy,
                       const Vocabulary& vocab, std::uint64_t seed);

struct ForwardResult {
    std::vector<Matrix> hidden;  // per sequence, S×D after the final norm
    std::vector<Matrix> logits;  // per sequence, S×|V|
};

/// Pre-layernorm encoder; logits via the tied embedding (hidden · Eᵀ).
/// Pad key positions are excluded from attention. Throws ArgumentError on
/// ragged batches, out-of-range ids, or sequences over max_seq_len.
ForwardResult forward(const Checkpoint& ckpt, const IdBatch& batch);

using GradMap = std::map<std::string, Matrix>;

/// Opaque forward activations for one batch, kept so a backward pass can
/// be driven by an external gradient on the final hidden states (as a
/// classifier head does).
class ForwardCache {
public:
    ForwardCache();
    ForwardCache(ForwardCache&&) noexcept;
    ForwardCache& operator=(ForwardCache&&) noexcept;
    ~ForwardCache();

    const std::vector<Matrix>& hidden() const;  // per sequence, S×D
    const std::vector<Matrix>& logits() const;  // per sequence, S×|V|

private:
    friend ForwardCache forward_cached(const Checkpoint&, const IdBatch&);
    friend GradMap backward_hidden(const Checkpoint&, const ForwardCache&,
                                   const std::vector<Matrix>&);
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

ForwardCache forward_cached(const Checkpoint& ckpt, const IdBatch& batch);

/// Parameter gradients given dL/d(hidden) per sequence. The token
/// embedding receives only its input-lookup contribution; when the tied
/// output projection is in use the logits-side term is the caller's.
GradMap backward_hidden(const Checkpoint& ckpt, const ForwardCache& cache,
                        const std::vector<Matrix>& dhidden);

/// Mean cross-entropy over labeled positions and gradients for every
/// tensor. Throws ArgumentError when no position is labeled.
std::pair<double, GradMap> loss_and_grads(const Checkpoint& ckpt,
                                          const IdBatch& batch,
                                          const LabelBatch& labels);

/// Loss only (no gradients); shares the forward path.
double mlm_loss(const Checkpoint& ckpt, const IdBatch& batch,
                const LabelBatch& labels);

struct AdamHyper {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::map<std::string, Matrix> m, v;
    std::size_t step = 0;
};

/// Standard Adam with bias correction; epsilon added outside the square
/// root. State entries are created on first use.
void adam_step(std::map<std::string, Matrix>& tensors, const GradMap& grads,
               AdamState& state, const AdamHyper& hyper);

struct TrainRun {
    std::size_t steps = 0;
    std::size_t batch_size = 8;
    AdamHyper adam;
    std::uint64_t seed = 0;
};

using LossCurve = std::vector<std::pair<std::size_t, double>>;

struct PretrainResult {
    Checkpoint checkpoint;
    LossCurve curve;  // 1-based step, per-step training loss
};

/// Continued masked-LM pretraining: sentences are tokenized once as
/// bos + ids (truncated to max_seq_len) + eos; each step samples
/// batch_size sequences, masks, and applies one Adam update. Fully
/// deterministic under run.seed.
PretrainResult pretrain(const Checkpoint& ckpt, const Corpus& corpus,
                        const MaskingPolicy& policy, const TrainRun& run);

/// Deterministic held-out MLM loss: every sequence is masked once with a
/// per-sequence derived seed and the mean loss over all labeled positions
/// is returned.
double mlm_eval_loss(const Checkpoint& ckpt, const Corpus& corpus,
                     const MaskingPolicy& policy, std::uint64_t seed);

std::string loss_curve_csv(const LossCurve& curve);

struct GradCheckReport {
    std::map<std::string, double> max_rel_error;  // per tensor
    double worst = 0.0;
    bool pass = false;
};

/// Central finite differences (h = 1e-3) against the analytic gradients on
/// a random small-model batch. The per-entry measure is
/// |ga−gf| / max(|ga|, |gf|, 1): relative for large entries, absolute near
/// zero.
GradCheckReport grad_check(const ModelConfig& config, double tolerance,
                           std::uint64_t seed = 17);

}  // namespace graftbench
