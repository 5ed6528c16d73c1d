#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graftbench/eval.hpp"
#include "graftbench/mlm.hpp"

namespace graftbench {

struct SyntheticSpec {
    bool enabled = false;
    std::string lexicon_path;  // required when enabled
    std::string pivot_lang;    // key into ExperimentConfig::corpora
};

/// A validated experiment: adapt one source checkpoint to one target
/// language under every requested variant (initialization scheme crossed
/// with the synthetic-data condition), then benchmark them side by side.
struct ExperimentConfig {
    std::string target_lang;
    std::map<std::string, std::vector<std::string>> corpora;  // lang -> files
    SyntheticSpec synthetic;
    std::size_t vocab_size = 0;
    std::string source_checkpoint;  // checkpoint directory
    std::size_t latent_dim = 0;
    std::size_t neighbors = 10;
    std::string external_embeddings;  // word-vector file; informed variants
    MaskingPolicy masking;
    std::size_t pretrain_steps = 0;
    std::size_t pretrain_batch_size = 8;
    AdamHyper pretrain_adam;
    std::string eval_train, eval_dev, eval_test;  // labeled TSVs
    FinetuneHyper finetune;  // seed is overridden by each run seed
    std::vector<std::uint64_t> seeds;
    std::string output_dir;
    std::vector<std::string> variants;  // canonical order, deduplicated
};

/// The four recognized variant names, in canonical column order.
const std::vector<std::string>& variant_names();

/// Parses and schema-checks a JSON config, filling defaults. Every
/// violation is collected into one ValidationError, each line prefixed by
/// a JSON pointer. Referenced paths must exist, the source checkpoint must
/// load, and the latent dimension may not exceed the source model width.
ExperimentConfig validate_config(const std::string& path);

/// Canonical serialization with all defaults materialized; validating the
/// written string reproduces the same config.
std::string config_json(const ExperimentConfig& config);

/// Stable hex digest of the canonical serialization.
std::string config_hash(const ExperimentConfig& config);

struct RunManifest {
    std::string config_hash;
    std::string toolkit_version;
    std::string started_at;   // ISO 8601 UTC
    std::string finished_at;  // ISO 8601 UTC
    std::size_t threads = 1;  // from GRAFTBENCH_THREADS, minimum 1
    std::map<std::string, std::string> artifacts;  // logical name -> path
    std::vector<std::string> log;  // one "[stage] computed|cached" per stage
};

/// Executes every stage of the experiment under config.output_dir:
/// corpus preparation (plus dictionary-translated synthetic text when
/// toggled), tokenizer training, vocabulary merge, embedding
/// initialization, transplant, continued masked-LM pretraining, classifier
/// evaluation, and the cross-variant benchmark. Completed stages are
/// skipped on re-run when their inputs are unchanged (hash-keyed stamps,
/// atomic rename on completion). A stage failure throws Error naming the
/// stage; artifacts of completed stages are preserved.
RunManifest run_experiment(const ExperimentConfig& config);

void save_manifest(const RunManifest& manifest, const std::string& path);
RunManifest load_manifest(const std::string& path);

/// Throws Error naming the first listed artifact that does not exist.
void check_manifest(const RunManifest& manifest);

struct RenderedReport {
    std::string markdown;
    std::string csv;
};

/// Renders the benchmark artifacts into a markdown report (score table
/// grouped by initialization scheme and synthetic condition, deltas
/// between printed averages, held-out loss table) plus the score CSV.
/// Throws Error naming any missing artifact.
RenderedReport render_report(const RunManifest& manifest);

}  // namespace graftbench
