#include "graftbench/checkpoint.hpp"

#include <filesystem>

#include <json.hpp>

#include "graftbench/error.hpp"
#include "binio.hpp"

namespace graftbench {

namespace fs = std::filesystem;
using nlohmann::json;

ModelConfig validated(ModelConfig config) {
    if (config.ffn_dim == 0) config.ffn_dim = 4 * config.dim;
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) {
            throw ArgumentError(std::string("model config: ") + name +
                                " must be positive");
        }
    };
    positive(config.vocab_size, "vocab_size");
    positive(config.dim, "dim");
    positive(config.layers, "layers");
    positive(config.heads, "heads");
    positive(config.ffn_dim, "ffn_dim");
    positive(config.max_seq_len, "max_seq_len");
    if (config.dim % config.heads != 0) {
        throw ArgumentError("model config: dim " +
                            std::to_string(config.dim) +
                            " not divisible by heads " +
                            std::to_string(config.heads));
    }
    if (!(config.layernorm_eps > 0.0)) {
        throw ArgumentError("model config: layernorm_eps must be positive");
    }
    return config;
}

std::vector<TensorSpec> tensor_specs(const ModelConfig& config) {
    const std::size_t d = config.dim;
    std::vector<TensorSpec> specs;
    specs.push_back({"token_embedding", config.vocab_size, d});
    specs.push_back({"position_embedding", config.max_seq_len, d});
    for (std::size_t i = 0; i < config.layers; ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        specs.push_back({p + "ln1.gain", 1, d});
        specs.push_back({p + "ln1.bias", 1, d});
        specs.push_back({p + "attn.wq", d, d});
        specs.push_back({p + "attn.bq", 1, d});
        specs.push_back({p + "attn.wk", d, d});
        specs.push_back({p + "attn.bk", 1, d});
        specs.push_back({p + "attn.wv", d, d});
        specs.push_back({p + "attn.bv", 1, d});
        specs.push_back({p + "attn.wo", d, d});
        specs.push_back({p + "attn.bo", 1, d});
        specs.push_back({p + "ln2.gain", 1, d});
        specs.push_back({p + "ln2.bias", 1, d});
        specs.push_back({p + "ffn.w1", d, config.ffn_dim});
        specs.push_back({p + "ffn.b1", 1, config.ffn_dim});
        specs.push_back({p + "ffn.w2", config.ffn_dim, d});
        specs.push_back({p + "ffn.b2", 1, d});
    }
    specs.push_back({"final_ln.gain", 1, d});
    specs.push_back({"final_ln.bias", 1, d});
    return specs;
}

void validate_checkpoint(const Checkpoint& ckpt) {
    const std::vector<TensorSpec> specs = tensor_specs(ckpt.config);
    if (specs.size() != ckpt.tensors.size()) {
        throw ConfigurationError(
            "checkpoint has " + std::to_string(ckpt.tensors.size()) +
            " tensors, config requires " + std::to_string(specs.size()));
    }
    for (const TensorSpec& spec : specs) {
        auto it = ckpt.tensors.find(spec.name);
        if (it == ckpt.tensors.end()) {
            throw ConfigurationError("checkpoint missing tensor " + spec.name);
        }
        const Matrix& t = it->second;
        if (t.rows() != spec.rows || t.cols() != spec.cols) {
            throw ConfigurationError(
                "tensor " + spec.name + " has shape " +
                std::to_string(t.rows()) + "x" + std::to_string(t.cols()) +
                ", expected " + std::to_string(spec.rows) + "x" +
                std::to_string(spec.cols));
        }
        if (!t.all_finite()) {
            throw ConfigurationError("tensor " + spec.name +
                                     " contains non-finite values");
        }
    }
    if (ckpt.tokenizer.vocabulary().size() != ckpt.config.vocab_size) {
        throw ConfigurationError(
            "tokenizer vocabulary size " +
            std::to_string(ckpt.tokenizer.vocabulary().size()) +
            " does not match config vocab_size " +
            std::to_string(ckpt.config.vocab_size));
    }
}

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size},
                {"dim", c.dim},
                {"layers", c.layers},
                {"heads", c.heads},
                {"ffn_dim", c.ffn_dim},
                {"max_seq_len", c.max_seq_len},
                {"tie_embeddings", c.tie_embeddings},
                {"layernorm_eps", c.layernorm_eps}};
}

ModelConfig config_from_json(const json& j, const std::string& where) {
    try {
        ModelConfig c;
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.dim = j.at("dim").get<std::size_t>();
        c.layers = j.at("layers").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
        c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
        c.tie_embeddings = j.at("tie_embeddings").get<bool>();
        c.layernorm_eps = j.at("layernorm_eps").get<double>();
        return validated(c);
    } catch (const json::exception& e) {
        throw ParseError(where + ": bad model config: " + e.what());
    }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
    validate_checkpoint(ckpt);
    fs::create_directories(dir);

    std::string blob;
    json table = json::array();
    for (const TensorSpec& spec : tensor_specs(ckpt.config)) {
        const Matrix& t = ckpt.tensors.at(spec.name);
        table.push_back(json{{"name", spec.name},
                             {"shape", {t.rows(), t.cols()}},
                             {"offset", blob.size()}});
        for (std::size_t i = 0; i < t.rows() * t.cols(); ++i) {
            binio::put_f32_le(blob, static_cast<float>(t.data()[i]));
        }
    }

    json manifest{{"format_version", "1"},
                  {"config", config_to_json(ckpt.config)},
                  {"tensors", table}};
    binio::write_file((fs::path(dir) / "manifest.json").string(),
                      manifest.dump(2) + "\n");
    binio::write_file((fs::path(dir) / "tensors.bin").string(), blob);
    save_tokenizer(ckpt.tokenizer, (fs::path(dir) / "vocab.txt").string(),
                   (fs::path(dir) / "merges.txt").string());
}

Checkpoint load_checkpoint(const std::string& dir) {
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    json manifest;
    try {
        manifest = json::parse(binio::read_file(manifest_path));
    } catch (const json::exception& e) {
        throw ParseError(manifest_path + ": " + e.what());
    }
    if (!manifest.contains("format_version") ||
        manifest["format_version"] != "1") {
        throw ParseError(manifest_path + ": unsupported format version");
    }

    Checkpoint ckpt;
    ckpt.config = config_from_json(manifest.at("config"), manifest_path);
    ckpt.tokenizer =
        load_tokenizer((fs::path(dir) / "vocab.txt").string(),
                       (fs::path(dir) / "merges.txt").string());

    const std::string blob =
        binio::read_file((fs::path(dir) / "tensors.bin").string());
    try {
        for (const json& entry : manifest.at("tensors")) {
            const std::string name = entry.at("name").get<std::string>();
            const std::size_t rows = entry.at("shape").at(0).get<std::size_t>();
            const std::size_t cols = entry.at("shape").at(1).get<std::size_t>();
            const std::size_t offset = entry.at("offset").get<std::size_t>();
            const std::size_t bytes = rows * cols * 4;
            if (offset + bytes > blob.size()) {
                throw ParseError(manifest_path + ": tensor " + name +
                                 " extends past the end of tensors.bin");
            }
            Matrix t(rows, cols);
            const auto* p =
                reinterpret_cast<const unsigned char*>(blob.data()) + offset;
            for (std::size_t i = 0; i < rows * cols; ++i) {
                t.data()[i] = static_cast<double>(binio::get_f32_le(p + 4 * i));
            }
            if (!ckpt.tensors.emplace(name, std::move(t)).second) {
                throw ParseError(manifest_path + ": duplicate tensor " + name);
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(manifest_path + ": bad tensor table: " + e.what());
    }

    validate_checkpoint(ckpt);
    return ckpt;
}

}  // namespace graftbench
