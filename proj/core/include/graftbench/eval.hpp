#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "graftbench/checkpoint.hpp"
#include "graftbench/matrix.hpp"
#include "graftbench/mlm.hpp"

namespace graftbench {

enum class Split { train, dev, test };

/// The seven topic categories, in class-index order. Labels elsewhere in
/// this module are indices into this list.
const std::vector<std::string>& sib_labels();

struct LabeledDataset {
    std::vector<std::pair<std::string, std::size_t>> examples;  // (text, class)
    Split split = Split::train;
};

/// Parses a TSV file whose header is exactly "index<TAB>category<TAB>text".
/// Every row needs three tab-separated fields, a known category and
/// non-empty text; a trailing carriage return is tolerated.
LabeledDataset load_sib_dataset(const std::string& path, Split split);

/// Examples per class, indexed like sib_labels().
std::vector<std::size_t> class_counts(const LabeledDataset& dataset);

/// Linear classifier over mean-pooled final hidden states.
struct ClassifierHead {
    Matrix weight;  // classes x dim
    Matrix bias;    // 1 x classes
};

/// Weights drawn N(0, 0.02^2), bias zero.
ClassifierHead init_head(std::size_t classes, std::size_t dim,
                         std::uint64_t seed);

struct FinetuneHyper {
    std::size_t steps = 200;
    std::size_t batch_size = 8;
    std::size_t eval_every = 10;  // dev evaluation period, in steps
    AdamHyper adam;
    bool unfreeze_encoder = false;
    std::uint64_t seed = 0;
};

struct FinetuneResult {
    ClassifierHead head;
    Checkpoint checkpoint;  // updated when the encoder was unfrozen
    double best_dev_weighted_f1 = 0.0;
    std::size_t best_step = 0;
};

/// Trains a classifier head (and, when unfrozen, the encoder) by
/// cross-entropy with Adam. Sentence representation is the mean of the
/// final hidden states over non-pad positions. The returned head and
/// checkpoint are the snapshot with the best dev weighted F1; the dev set
/// is scored at step 0, every eval_every steps, and at the final step,
/// earliest best winning ties. Deterministic under hyper.seed.
FinetuneResult finetune_classifier(const Checkpoint& ckpt,
                                   const LabeledDataset& train,
                                   const LabeledDataset& dev,
                                   const FinetuneHyper& hyper);

/// Argmax over head logits of the mean-pooled representation; ties go to
/// the lower class index.
std::vector<std::size_t> predict(const Checkpoint& ckpt,
                                 const ClassifierHead& head,
                                 const std::vector<std::string>& texts);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct EvalReport {
    std::map<std::string, ClassMetrics> per_class;  // every label present
    double weighted_f1 = 0.0;
    double accuracy = 0.0;
};

/// Per-class precision/recall/F1 with the zero convention when a
/// denominator is zero; weighted F1 is the support-weighted mean of the
/// per-class F1. preds and golds are indices into label_set.
EvalReport weighted_f1(const std::vector<std::size_t>& preds,
                       const std::vector<std::size_t>& golds,
                       const std::vector<std::string>& label_set);

struct DatasetTriplet {
    LabeledDataset train;
    LabeledDataset dev;
    LabeledDataset test;
};

struct BenchmarkTable {
    std::vector<std::string> models;
    std::vector<std::string> langs;
    Matrix scores;                 // langs x models, raw weighted F1 in [0,1]
    std::vector<double> averages;  // per model, unweighted mean over langs
};

/// Assembles a table from raw scores, computing the per-model averages.
BenchmarkTable make_benchmark_table(std::vector<std::string> models,
                                    std::vector<std::string> langs,
                                    Matrix scores);

/// Fine-tunes every model on every language and scores its test split.
BenchmarkTable benchmark_matrix(
    const std::vector<std::pair<std::string, Checkpoint>>& models,
    const std::vector<std::pair<std::string, DatasetTriplet>>& datasets,
    const FinetuneHyper& hyper);

/// One row per (model, language) cell: header "model,lang,weighted_f1",
/// scores reported x100 at one decimal, rounded half to even.
std::string benchmark_csv(const BenchmarkTable& table);

/// Aligned text table, one language per row plus a final "average" row,
/// followed by a note on the rounding convention.
std::string benchmark_text(const BenchmarkTable& table);

/// Difference of two already-rounded percentage scores, signed and
/// rendered at one decimal, e.g. "+12.3".
std::string format_delta(double ours, double baseline);

}  // namespace graftbench
