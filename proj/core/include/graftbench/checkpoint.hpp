#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graftbench/matrix.hpp"
#include "graftbench/tokenizer.hpp"

namespace graftbench {

/// Tiny pre-layernorm transformer encoder shape. ffn_dim 0 means 4*dim.
struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t dim = 0;
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t ffn_dim = 0;
    std::size_t max_seq_len = 0;
    bool tie_embeddings = true;
    double layernorm_eps = 1e-5;
};

/// Fills ffn_dim and checks positivity / divisibility. Throws ArgumentError.
ModelConfig validated(ModelConfig config);

struct TensorSpec {
    std::string name;
    std::size_t rows;
    std::size_t cols;
};

/// Canonical tensor list for a config: embeddings first, then per-layer
/// attention/FFN/layernorm weights, then the final layernorm. With tied
/// embeddings there is no output-projection tensor; logits use
/// token_embedding transposed.
std::vector<TensorSpec> tensor_specs(const ModelConfig& config);

/// Model weights plus the tokenizer they were trained with. Vectors are
/// stored as 1×n matrices.
struct Checkpoint {
    ModelConfig config;
    std::map<std::string, Matrix> tensors;
    BpeTokenizer tokenizer;
};

/// Shape/finiteness check of every tensor against tensor_specs; extra or
/// missing tensors are errors. Throws ConfigurationError.
void validate_checkpoint(const Checkpoint& ckpt);

/// Directory layout: manifest.json (format version, config, tensor table),
/// tensors.bin (little-endian float32, row-major, manifest order),
/// vocab.txt, merges.txt. In-memory values are double; storage is float32.
void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace graftbench
