#include "graftbench/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <optional>
#include <set>
#include <sstream>
#include <string_view>
#include <utility>

#include <json.hpp>

#include "graftbench/checkpoint.hpp"
#include "graftbench/corpus.hpp"
#include "graftbench/error.hpp"
#include "graftbench/ofa.hpp"
#include "graftbench/rounding.hpp"
#include "graftbench/tokenizer.hpp"
#include "graftbench/version.hpp"

namespace graftbench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Fixed seeds for work shared by every variant and run seed: the corpus
// split (held-out data must be identical across comparisons) and the
// synthetic translation.
constexpr std::uint64_t kCorpusSeed = 1;
constexpr double kTrainRatio = 0.9;
constexpr double kDevRatio = 0.05;
constexpr double kTestRatio = 0.05;

std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t h = 14695981039346656037ull) {
    for (const unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t hash_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    std::uint64_t h = 14695981039346656037ull;
    char buf[65536];
    while (true) {
        in.read(buf, sizeof buf);
        const std::streamsize got = in.gcount();
        if (got > 0) h = fnv1a64(std::string_view(buf, std::size_t(got)), h);
        if (!in) break;
    }
    return h;
}

/// Content digest of a file or a directory tree (sorted relative paths).
std::uint64_t hash_tree(const fs::path& p) {
    if (!fs::is_directory(p)) return hash_file(p);
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(p))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& f : files) {
        h = fnv1a64(fs::relative(f, p).generic_string(), h);
        h = fnv1a64(hex64(hash_file(f)), h);
    }
    return h;
}

std::string iso_utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[24];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::size_t threads_from_env() {
    const char* v = std::getenv("GRAFTBENCH_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1) return 1;
    return std::size_t(n);
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_text(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << content;
    if (!out.flush()) throw IoError("cannot write " + p.string());
}

bool is_synthetic_variant(const std::string& v) {
    return v.find("+synthetic") != std::string::npos;
}

std::string scheme_of(const std::string& v) { return v.substr(0, v.find('+')); }

std::string condition_of(const std::string& v) {
    return is_synthetic_variant(v) ? "syn" : "nat";
}

/// Runs each stage in a temp directory and renames it into place once
/// complete, so observers never see partial stage output. A stage whose
/// stamp matches the key and whose outputs all exist is skipped.
class StageRunner {
public:
    StageRunner(fs::path root, std::vector<std::string>& log)
        : root_(std::move(root)), log_(&log) {}

    fs::path dir(const std::string& id) const { return root_ / id; }

    void run(const std::string& id, std::uint64_t key,
             const std::vector<std::string>& outputs,
             const std::function<void(const fs::path&)>& fn) {
        const fs::path final_dir = dir(id);
        if (up_to_date(final_dir, key, outputs)) {
            log_->push_back("[" + id + "] cached");
            return;
        }
        std::string flat = id;
        std::replace(flat.begin(), flat.end(), '/', '_');
        const fs::path tmp = root_ / (".tmp_" + flat);
        std::error_code ec;
        fs::remove_all(tmp, ec);
        try {
            fs::create_directories(tmp);
            fn(tmp);
            for (const auto& out : outputs)
                if (!fs::exists(tmp / out))
                    throw Error("declared output was not produced: " + out);
            const json stamp{{"key", hex64(key)}, {"outputs", outputs}};
            write_text(tmp / ".stage", stamp.dump(2) + "\n");
            fs::remove_all(final_dir);
            if (final_dir.has_parent_path())
                fs::create_directories(final_dir.parent_path());
            fs::rename(tmp, final_dir);
        } catch (const std::exception& e) {
            fs::remove_all(tmp, ec);
            throw Error("stage " + id + ": " + e.what());
        }
        log_->push_back("[" + id + "] computed");
    }

private:
    static bool up_to_date(const fs::path& dir, std::uint64_t key,
                           const std::vector<std::string>& outputs) {
        const fs::path stamp_path = dir / ".stage";
        if (!fs::exists(stamp_path)) return false;
        json stamp;
        try {
            stamp = json::parse(read_text(stamp_path));
        } catch (const std::exception&) {
            return false;
        }
        if (!stamp.is_object() || !stamp.contains("key") ||
            !stamp["key"].is_string() ||
            stamp["key"].get<std::string>() != hex64(key))
            return false;
        for (const auto& out : outputs)
            if (!fs::exists(dir / out)) return false;
        return true;
    }

    fs::path root_;
    std::vector<std::string>* log_;
};

bool is_uint(const json& j) {
    return j.is_number_unsigned() ||
           (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

}  // namespace

const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names = {
        "random", "random+synthetic", "informed", "informed+synthetic"};
    return names;
}

ExperimentConfig validate_config(const std::string& path) {
    json root;
    try {
        root = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    if (!root.is_object())
        throw ValidationError({"/: config must be a JSON object"});

    std::vector<std::string> bad;
    ExperimentConfig cfg;

    const auto note = [&](const std::string& ptr, const std::string& msg) {
        bad.push_back(ptr + ": " + msg);
    };
    const auto known_keys = [&](const json& obj, const std::string& ptr,
                                std::initializer_list<const char*> keys) {
        for (const auto& [key, value] : obj.items()) {
            bool known = false;
            for (const char* k : keys) known = known || key == k;
            if (!known) note(ptr + "/" + key, "unknown field");
        }
    };
    const auto req_string = [&](const json& obj, const std::string& ptr,
                                const char* key, std::string& out) {
        if (!obj.contains(key)) {
            note(ptr + "/" + key, "missing required field");
            return false;
        }
        if (!obj[key].is_string() || obj[key].get<std::string>().empty()) {
            note(ptr + "/" + key, "must be a non-empty string");
            return false;
        }
        out = obj[key].get<std::string>();
        return true;
    };
    const auto opt_string = [&](const json& obj, const std::string& ptr,
                                const char* key, std::string& out) {
        if (!obj.contains(key)) return;
        if (!obj[key].is_string()) {
            note(ptr + "/" + key, "must be a string");
            return;
        }
        out = obj[key].get<std::string>();
    };
    const auto req_uint = [&](const json& obj, const std::string& ptr,
                              const char* key, std::size_t& out) {
        if (!obj.contains(key)) {
            note(ptr + "/" + key, "missing required field");
            return;
        }
        if (!is_uint(obj[key])) {
            note(ptr + "/" + key, "must be a non-negative integer");
            return;
        }
        const std::size_t v = obj[key].get<std::uint64_t>();
        if (v == 0) {
            note(ptr + "/" + key, "must be positive");
            return;
        }
        out = v;
    };
    const auto opt_uint = [&](const json& obj, const std::string& ptr,
                              const char* key, std::size_t& out,
                              bool positive) {
        if (!obj.contains(key)) return;
        if (!is_uint(obj[key])) {
            note(ptr + "/" + key, "must be a non-negative integer");
            return;
        }
        const std::size_t v = obj[key].get<std::uint64_t>();
        if (positive && v == 0) {
            note(ptr + "/" + key, "must be positive");
            return;
        }
        out = v;
    };
    const auto opt_double = [&](const json& obj, const std::string& ptr,
                                const char* key, double& out) {
        if (!obj.contains(key)) return;
        if (!obj[key].is_number()) {
            note(ptr + "/" + key, "must be a number");
            return;
        }
        out = obj[key].get<double>();
    };
    const auto opt_bool = [&](const json& obj, const std::string& ptr,
                              const char* key, bool& out) {
        if (!obj.contains(key)) return;
        if (!obj[key].is_boolean()) {
            note(ptr + "/" + key, "must be a boolean");
            return;
        }
        out = obj[key].get<bool>();
    };
    const auto file_exists = [&](const std::string& ptr,
                                 const std::string& p) {
        if (!fs::exists(p)) note(ptr, "path does not exist (" + p + ")");
    };
    const auto check_adam = [&](const AdamHyper& a, const std::string& ptr) {
        if (!(a.learning_rate > 0.0))
            note(ptr + "/learning_rate", "must be positive");
        if (!(a.beta1 >= 0.0 && a.beta1 < 1.0))
            note(ptr + "/beta1", "must lie in [0, 1)");
        if (!(a.beta2 >= 0.0 && a.beta2 < 1.0))
            note(ptr + "/beta2", "must lie in [0, 1)");
        if (!(a.epsilon > 0.0)) note(ptr + "/epsilon", "must be positive");
    };

    known_keys(root, "",
               {"target_lang", "corpora", "synthetic", "tokenizer",
                "source_checkpoint", "init", "masking", "pretrain", "eval",
                "finetune", "seeds", "output_dir", "variants"});

    req_string(root, "", "target_lang", cfg.target_lang);
    req_string(root, "", "output_dir", cfg.output_dir);
    req_string(root, "", "source_checkpoint", cfg.source_checkpoint);

    if (!root.contains("corpora")) {
        note("/corpora", "missing required field");
    } else if (!root["corpora"].is_object()) {
        note("/corpora", "must map language codes to arrays of paths");
    } else {
        for (const auto& [lang, files] : root["corpora"].items()) {
            if (!files.is_array() || files.empty()) {
                note("/corpora/" + lang, "must be a non-empty array of paths");
                continue;
            }
            std::vector<std::string> paths;
            for (std::size_t i = 0; i < files.size(); ++i) {
                const std::string ptr =
                    "/corpora/" + lang + "/" + std::to_string(i);
                if (!files[i].is_string()) {
                    note(ptr, "must be a string path");
                    continue;
                }
                const std::string p = files[i].get<std::string>();
                file_exists(ptr, p);
                paths.push_back(p);
            }
            cfg.corpora.emplace(lang, std::move(paths));
        }
        if (!cfg.target_lang.empty() &&
            cfg.corpora.find(cfg.target_lang) == cfg.corpora.end())
            note("/corpora", "missing entry for target language \"" +
                                 cfg.target_lang + "\"");
    }

    if (root.contains("synthetic")) {
        const json& syn = root["synthetic"];
        if (!syn.is_object()) {
            note("/synthetic", "must be an object");
        } else {
            known_keys(syn, "/synthetic", {"enabled", "lexicon", "pivot_lang"});
            opt_bool(syn, "/synthetic", "enabled", cfg.synthetic.enabled);
            opt_string(syn, "/synthetic", "lexicon",
                       cfg.synthetic.lexicon_path);
            opt_string(syn, "/synthetic", "pivot_lang",
                       cfg.synthetic.pivot_lang);
            if (cfg.synthetic.enabled) {
                if (cfg.synthetic.lexicon_path.empty())
                    note("/synthetic/lexicon",
                         "required when synthetic data is enabled");
                else
                    file_exists("/synthetic/lexicon",
                                cfg.synthetic.lexicon_path);
                if (cfg.synthetic.pivot_lang.empty())
                    note("/synthetic/pivot_lang",
                         "required when synthetic data is enabled");
                else if (cfg.corpora.find(cfg.synthetic.pivot_lang) ==
                         cfg.corpora.end())
                    note("/synthetic/pivot_lang",
                         "no corpora entry for \"" + cfg.synthetic.pivot_lang +
                             "\"");
            }
        }
    }

    if (!root.contains("tokenizer")) {
        note("/tokenizer", "missing required field");
    } else if (!root["tokenizer"].is_object()) {
        note("/tokenizer", "must be an object");
    } else {
        known_keys(root["tokenizer"], "/tokenizer", {"vocab_size"});
        req_uint(root["tokenizer"], "/tokenizer", "vocab_size",
                 cfg.vocab_size);
    }

    std::size_t model_dim = 0;
    if (!cfg.source_checkpoint.empty()) {
        if (!fs::exists(cfg.source_checkpoint)) {
            note("/source_checkpoint",
                 "path does not exist (" + cfg.source_checkpoint + ")");
        } else {
            try {
                model_dim = load_checkpoint(cfg.source_checkpoint).config.dim;
            } catch (const std::exception& e) {
                note("/source_checkpoint",
                     std::string("not a loadable checkpoint: ") + e.what());
            }
        }
    }

    if (!root.contains("init")) {
        note("/init", "missing required field");
    } else if (!root["init"].is_object()) {
        note("/init", "must be an object");
    } else {
        const json& init = root["init"];
        known_keys(init, "/init",
                   {"latent_dim", "neighbors", "external_embeddings"});
        req_uint(init, "/init", "latent_dim", cfg.latent_dim);
        opt_uint(init, "/init", "neighbors", cfg.neighbors, true);
        opt_string(init, "/init", "external_embeddings",
                   cfg.external_embeddings);
    }
    if (model_dim > 0 && cfg.latent_dim > model_dim)
        note("/init/latent_dim", "exceeds the source model width (" +
                                     std::to_string(model_dim) + ")");

    if (root.contains("masking")) {
        const json& m = root["masking"];
        if (!m.is_object()) {
            note("/masking", "must be an object");
        } else {
            known_keys(m, "/masking",
                       {"mask_rate", "mask_token_frac", "random_token_frac",
                        "keep_frac"});
            opt_double(m, "/masking", "mask_rate", cfg.masking.mask_rate);
            opt_double(m, "/masking", "mask_token_frac",
                       cfg.masking.mask_token_frac);
            opt_double(m, "/masking", "random_token_frac",
                       cfg.masking.random_token_frac);
            opt_double(m, "/masking", "keep_frac", cfg.masking.keep_frac);
        }
    }
    try {
        validate_policy(cfg.masking);
    } catch (const std::exception& e) {
        note("/masking", e.what());
    }

    if (root.contains("pretrain")) {
        const json& p = root["pretrain"];
        if (!p.is_object()) {
            note("/pretrain", "must be an object");
        } else {
            known_keys(p, "/pretrain",
                       {"steps", "batch_size", "learning_rate", "beta1",
                        "beta2", "epsilon"});
            opt_uint(p, "/pretrain", "steps", cfg.pretrain_steps, false);
            opt_uint(p, "/pretrain", "batch_size", cfg.pretrain_batch_size,
                     true);
            opt_double(p, "/pretrain", "learning_rate",
                       cfg.pretrain_adam.learning_rate);
            opt_double(p, "/pretrain", "beta1", cfg.pretrain_adam.beta1);
            opt_double(p, "/pretrain", "beta2", cfg.pretrain_adam.beta2);
            opt_double(p, "/pretrain", "epsilon", cfg.pretrain_adam.epsilon);
        }
    }
    check_adam(cfg.pretrain_adam, "/pretrain");

    if (!root.contains("eval")) {
        note("/eval", "missing required field");
    } else if (!root["eval"].is_object()) {
        note("/eval", "must be an object");
    } else {
        const json& e = root["eval"];
        known_keys(e, "/eval", {"train", "dev", "test"});
        if (req_string(e, "/eval", "train", cfg.eval_train))
            file_exists("/eval/train", cfg.eval_train);
        if (req_string(e, "/eval", "dev", cfg.eval_dev))
            file_exists("/eval/dev", cfg.eval_dev);
        if (req_string(e, "/eval", "test", cfg.eval_test))
            file_exists("/eval/test", cfg.eval_test);
    }

    if (root.contains("finetune")) {
        const json& f = root["finetune"];
        if (!f.is_object()) {
            note("/finetune", "must be an object");
        } else {
            known_keys(f, "/finetune",
                       {"steps", "batch_size", "eval_every",
                        "unfreeze_encoder", "learning_rate", "beta1", "beta2",
                        "epsilon"});
            opt_uint(f, "/finetune", "steps", cfg.finetune.steps, false);
            opt_uint(f, "/finetune", "batch_size", cfg.finetune.batch_size,
                     true);
            opt_uint(f, "/finetune", "eval_every", cfg.finetune.eval_every,
                     true);
            opt_bool(f, "/finetune", "unfreeze_encoder",
                     cfg.finetune.unfreeze_encoder);
            opt_double(f, "/finetune", "learning_rate",
                       cfg.finetune.adam.learning_rate);
            opt_double(f, "/finetune", "beta1", cfg.finetune.adam.beta1);
            opt_double(f, "/finetune", "beta2", cfg.finetune.adam.beta2);
            opt_double(f, "/finetune", "epsilon", cfg.finetune.adam.epsilon);
        }
    }
    check_adam(cfg.finetune.adam, "/finetune");

    if (!root.contains("seeds")) {
        note("/seeds", "missing required field");
    } else if (!root["seeds"].is_array() || root["seeds"].empty()) {
        note("/seeds", "must be a non-empty array of integers");
    } else {
        std::set<std::uint64_t> seen;
        for (std::size_t i = 0; i < root["seeds"].size(); ++i) {
            const std::string ptr = "/seeds/" + std::to_string(i);
            if (!is_uint(root["seeds"][i])) {
                note(ptr, "must be a non-negative integer");
                continue;
            }
            const std::uint64_t s = root["seeds"][i].get<std::uint64_t>();
            if (!seen.insert(s).second) {
                note(ptr, "duplicate seed");
                continue;
            }
            cfg.seeds.push_back(s);
        }
    }

    if (root.contains("variants")) {
        const json& v = root["variants"];
        if (!v.is_array() || v.empty()) {
            note("/variants", "must be a non-empty array");
        } else {
            std::set<std::string> chosen;
            for (std::size_t i = 0; i < v.size(); ++i) {
                const std::string ptr = "/variants/" + std::to_string(i);
                if (!v[i].is_string()) {
                    note(ptr, "must be a string");
                    continue;
                }
                const std::string name = v[i].get<std::string>();
                const auto& known = variant_names();
                if (std::find(known.begin(), known.end(), name) ==
                    known.end()) {
                    note(ptr, "unknown variant \"" + name + "\"");
                    continue;
                }
                if (!chosen.insert(name).second) note(ptr, "duplicate variant");
            }
            for (const auto& name : variant_names())
                if (chosen.count(name)) cfg.variants.push_back(name);
        }
    } else {
        for (const auto& name : variant_names())
            if (cfg.synthetic.enabled || !is_synthetic_variant(name))
                cfg.variants.push_back(name);
    }
    for (const auto& v : cfg.variants) {
        if (is_synthetic_variant(v) && !cfg.synthetic.enabled)
            note("/variants", "\"" + v + "\" requires /synthetic/enabled");
        if (scheme_of(v) == "informed" && cfg.external_embeddings.empty())
            note("/init/external_embeddings",
                 "required by variant \"" + v + "\"");
    }
    if (!cfg.external_embeddings.empty())
        file_exists("/init/external_embeddings", cfg.external_embeddings);

    if (!bad.empty()) throw ValidationError(bad);
    return cfg;
}

std::string config_json(const ExperimentConfig& cfg) {
    json j;
    j["target_lang"] = cfg.target_lang;
    json corpora = json::object();
    for (const auto& [lang, files] : cfg.corpora) corpora[lang] = files;
    j["corpora"] = corpora;
    j["synthetic"] = {{"enabled", cfg.synthetic.enabled},
                      {"lexicon", cfg.synthetic.lexicon_path},
                      {"pivot_lang", cfg.synthetic.pivot_lang}};
    j["tokenizer"] = {{"vocab_size", cfg.vocab_size}};
    j["source_checkpoint"] = cfg.source_checkpoint;
    j["init"] = {{"latent_dim", cfg.latent_dim},
                 {"neighbors", cfg.neighbors},
                 {"external_embeddings", cfg.external_embeddings}};
    j["masking"] = {{"mask_rate", cfg.masking.mask_rate},
                    {"mask_token_frac", cfg.masking.mask_token_frac},
                    {"random_token_frac", cfg.masking.random_token_frac},
                    {"keep_frac", cfg.masking.keep_frac}};
    j["pretrain"] = {{"steps", cfg.pretrain_steps},
                     {"batch_size", cfg.pretrain_batch_size},
                     {"learning_rate", cfg.pretrain_adam.learning_rate},
                     {"beta1", cfg.pretrain_adam.beta1},
                     {"beta2", cfg.pretrain_adam.beta2},
                     {"epsilon", cfg.pretrain_adam.epsilon}};
    j["eval"] = {{"train", cfg.eval_train},
                 {"dev", cfg.eval_dev},
                 {"test", cfg.eval_test}};
    j["finetune"] = {{"steps", cfg.finetune.steps},
                     {"batch_size", cfg.finetune.batch_size},
                     {"eval_every", cfg.finetune.eval_every},
                     {"unfreeze_encoder", cfg.finetune.unfreeze_encoder},
                     {"learning_rate", cfg.finetune.adam.learning_rate},
                     {"beta1", cfg.finetune.adam.beta1},
                     {"beta2", cfg.finetune.adam.beta2},
                     {"epsilon", cfg.finetune.adam.epsilon}};
    j["seeds"] = cfg.seeds;
    j["output_dir"] = cfg.output_dir;
    j["variants"] = cfg.variants;
    return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
    return hex64(fnv1a64(config_json(cfg)));
}

RunManifest run_experiment(const ExperimentConfig& cfg) {
    RunManifest man;
    man.config_hash = config_hash(cfg);
    man.toolkit_version = kVersion;
    man.threads = threads_from_env();
    man.started_at = iso_utc_now();

    const fs::path out(cfg.output_dir);
    fs::create_directories(out);
    StageRunner stages(out, man.log);
    const auto reg = [&](const std::string& name, const fs::path& p) {
        man.artifacts[name] = p.string();
    };

    const bool need_syn =
        std::any_of(cfg.variants.begin(), cfg.variants.end(),
                    [](const std::string& v) { return is_synthetic_variant(v); });
    const bool need_nat = std::any_of(
        cfg.variants.begin(), cfg.variants.end(),
        [](const std::string& v) { return !is_synthetic_variant(v); });

    {
        const json subset{{"split", {kTrainRatio, kDevRatio, kTestRatio}},
                          {"seed", kCorpusSeed},
                          {"lang", cfg.target_lang}};
        std::string key_src = "corpus/nat|" + subset.dump();
        for (const auto& p : cfg.corpora.at(cfg.target_lang))
            key_src += "|" + hex64(hash_tree(p));
        stages.run(
            "corpus/nat", fnv1a64(key_src),
            {"train.txt", "heldout.txt", "test.txt", "stats.csv"},
            [&](const fs::path& dir) {
                const Corpus corpus =
                    ingest_corpus(cfg.corpora.at(cfg.target_lang),
                                  cfg.target_lang);
                const SplitCorpora split = split_corpus(
                    corpus, kTrainRatio, kDevRatio, kTestRatio, kCorpusSeed);
                write_corpus(split.train, (dir / "train.txt").string());
                write_corpus(split.dev, (dir / "heldout.txt").string());
                write_corpus(split.test, (dir / "test.txt").string());
                write_text(dir / "stats.csv",
                           stats_csv({corpus_stats(split.train),
                                      corpus_stats(split.dev),
                                      corpus_stats(split.test)}));
            });
        reg("corpus/nat/train", stages.dir("corpus/nat") / "train.txt");
        reg("corpus/nat/heldout", stages.dir("corpus/nat") / "heldout.txt");
        reg("corpus/nat/test", stages.dir("corpus/nat") / "test.txt");
        reg("corpus/nat/stats", stages.dir("corpus/nat") / "stats.csv");
    }

    if (need_syn) {
        const fs::path nat_train = stages.dir("corpus/nat") / "train.txt";
        const json subset{{"seed", kCorpusSeed},
                          {"pivot", cfg.synthetic.pivot_lang},
                          {"lang", cfg.target_lang}};
        std::string key_src = "corpus/syn|" + subset.dump() + "|" +
                              hex64(hash_tree(nat_train)) + "|" +
                              hex64(hash_tree(cfg.synthetic.lexicon_path));
        for (const auto& p : cfg.corpora.at(cfg.synthetic.pivot_lang))
            key_src += "|" + hex64(hash_tree(p));
        stages.run(
            "corpus/syn", fnv1a64(key_src), {"train.txt", "stats.csv"},
            [&](const fs::path& dir) {
                const Corpus nat =
                    ingest_corpus({nat_train.string()}, cfg.target_lang);
                const Corpus pivot =
                    ingest_corpus(cfg.corpora.at(cfg.synthetic.pivot_lang),
                                  cfg.synthetic.pivot_lang);
                const Lexicon lexicon =
                    load_lexicon(cfg.synthetic.lexicon_path);
                Corpus synth = dictionary_translate(pivot, lexicon,
                                                    kCorpusSeed);
                synth.lang = cfg.target_lang;
                const Corpus combined = concat_corpora({nat, synth});
                write_corpus(combined, (dir / "train.txt").string());
                write_text(dir / "stats.csv",
                           stats_csv({corpus_stats(nat), corpus_stats(synth),
                                      corpus_stats(combined)}));
            });
        reg("corpus/syn/train", stages.dir("corpus/syn") / "train.txt");
        reg("corpus/syn/stats", stages.dir("corpus/syn") / "stats.csv");
    }

    std::vector<std::string> conditions;
    if (need_nat) conditions.push_back("nat");
    if (need_syn) conditions.push_back("syn");
    for (const auto& cond : conditions) {
        const std::string id = "tokenizer/" + cond;
        const fs::path train_path = stages.dir("corpus/" + cond) / "train.txt";
        const json subset{{"vocab_size", cfg.vocab_size}};
        const std::string key_src =
            id + "|" + subset.dump() + "|" + hex64(hash_tree(train_path));
        stages.run(id, fnv1a64(key_src), {"vocab.txt", "merges.txt"},
                   [&](const fs::path& dir) {
                       const Corpus train = ingest_corpus(
                           {train_path.string()}, cfg.target_lang);
                       const BpeTokenizer tok =
                           train_bpe(train, cfg.vocab_size);
                       save_tokenizer(tok, (dir / "vocab.txt").string(),
                                      (dir / "merges.txt").string());
                   });
        reg(id + "/vocab", stages.dir(id) / "vocab.txt");
        reg(id + "/merges", stages.dir(id) / "merges.txt");
    }

    const std::uint64_t source_hash = hash_tree(cfg.source_checkpoint);
    const Checkpoint source = load_checkpoint(cfg.source_checkpoint);

    const std::vector<std::string> ckpt_files = {
        "checkpoint/manifest.json", "checkpoint/tensors.bin",
        "checkpoint/vocab.txt", "checkpoint/merges.txt"};

    for (const auto& variant : cfg.variants) {
        const std::string cond = condition_of(variant);
        const std::string scheme = scheme_of(variant);
        const fs::path tok_dir = stages.dir("tokenizer/" + cond);
        const std::uint64_t tok_hash =
            fnv1a64(hex64(hash_tree(tok_dir / "vocab.txt")) +
                    hex64(hash_tree(tok_dir / "merges.txt")));

        for (const std::uint64_t seed : cfg.seeds) {
            const std::string tag = variant + "/seed" + std::to_string(seed);

            const std::string graft_id = "graft/" + tag;
            const json graft_cfg{{"scheme", scheme},
                                 {"latent_dim", cfg.latent_dim},
                                 {"neighbors", cfg.neighbors},
                                 {"seed", seed}};
            std::string graft_key = graft_id + "|" + graft_cfg.dump() + "|" +
                                    hex64(source_hash) + "|" + hex64(tok_hash);
            std::vector<std::string> graft_outputs = ckpt_files;
            graft_outputs.push_back("embedding.emb1");
            if (scheme == "informed") {
                graft_key += "|" + hex64(hash_tree(cfg.external_embeddings));
                graft_outputs.push_back("init_report.json");
            }
            stages.run(
                graft_id, fnv1a64(graft_key), graft_outputs,
                [&](const fs::path& dir) {
                    const BpeTokenizer target_tok =
                        load_tokenizer((tok_dir / "vocab.txt").string(),
                                       (tok_dir / "merges.txt").string());
                    const auto extended = extend_vocabulary(
                        source.tokenizer.vocabulary(), target_tok);
                    const Vocabulary& merged_vocab = extended.first;
                    // The initializers fill rows of the merged vocabulary,
                    // so they need the merged-id map, not the target
                    // tokenizer's.
                    const OverlapMap overlap = merged_overlap(
                        source.tokenizer.vocabulary(), merged_vocab);
                    const BpeTokenizer merged_tok =
                        with_vocabulary(target_tok, merged_vocab);
                    Matrix embedding;
                    if (scheme == "informed") {
                        const ExternalEmbeddings ext =
                            load_external_embeddings(cfg.external_embeddings);
                        const SubwordVectorTable table = build_subword_vectors(
                            merged_vocab, ext, target_tok);
                        const FactorizedEmbedding fe = factorize(
                            source.tensors.at("token_embedding"),
                            cfg.latent_dim);
                        const InformedInitResult init = informed_init(
                            fe, source.tokenizer.vocabulary(), merged_vocab,
                            overlap, table, cfg.neighbors, seed);
                        embedding =
                            reconstruct({init.f_target, fe.p, fe.d});
                        save_init_report(
                            init.report, (dir / "init_report.json").string());
                    } else {
                        embedding = random_init(
                            source.tensors.at("token_embedding"),
                            merged_vocab, overlap, seed);
                    }
                    const Checkpoint adapted =
                        transplant(source, embedding, merged_tok);
                    save_checkpoint(adapted, (dir / "checkpoint").string());
                    save_embedding_matrix(
                        embedding, (dir / "embedding.emb1").string());
                });
            reg(graft_id + "/checkpoint", stages.dir(graft_id) / "checkpoint");
            reg(graft_id + "/embedding",
                stages.dir(graft_id) / "embedding.emb1");
            if (scheme == "informed")
                reg(graft_id + "/init_report",
                    stages.dir(graft_id) / "init_report.json");

            const std::string pre_id = "pretrain/" + tag;
            const fs::path train_path =
                stages.dir("corpus/" + cond) / "train.txt";
            const fs::path heldout_path =
                stages.dir("corpus/nat") / "heldout.txt";
            const json pre_cfg{
                {"steps", cfg.pretrain_steps},
                {"batch_size", cfg.pretrain_batch_size},
                {"adam",
                 {cfg.pretrain_adam.learning_rate, cfg.pretrain_adam.beta1,
                  cfg.pretrain_adam.beta2, cfg.pretrain_adam.epsilon}},
                {"masking",
                 {cfg.masking.mask_rate, cfg.masking.mask_token_frac,
                  cfg.masking.random_token_frac, cfg.masking.keep_frac}},
                {"seed", seed}};
            std::vector<std::string> pre_outputs = ckpt_files;
            pre_outputs.push_back("curve.csv");
            pre_outputs.push_back("metrics.json");
            const std::string pre_key =
                pre_id + "|" + pre_cfg.dump() + "|" +
                hex64(hash_tree(stages.dir(graft_id) / "checkpoint")) + "|" +
                hex64(hash_tree(train_path)) + "|" +
                hex64(hash_tree(heldout_path));
            stages.run(
                pre_id, fnv1a64(pre_key), pre_outputs,
                [&](const fs::path& dir) {
                    const Checkpoint initial = load_checkpoint(
                        (stages.dir(graft_id) / "checkpoint").string());
                    const Corpus train = ingest_corpus({train_path.string()},
                                                       cfg.target_lang);
                    TrainRun run;
                    run.steps = cfg.pretrain_steps;
                    run.batch_size = cfg.pretrain_batch_size;
                    run.adam = cfg.pretrain_adam;
                    run.seed = seed;
                    const PretrainResult result =
                        pretrain(initial, train, cfg.masking, run);
                    save_checkpoint(result.checkpoint,
                                    (dir / "checkpoint").string());
                    write_text(dir / "curve.csv",
                               loss_curve_csv(result.curve));
                    const Corpus heldout = ingest_corpus(
                        {heldout_path.string()}, cfg.target_lang);
                    json metrics;
                    if (heldout.sentences.empty())
                        metrics["heldout_mlm_loss"] = nullptr;
                    else
                        metrics["heldout_mlm_loss"] =
                            mlm_eval_loss(result.checkpoint, heldout,
                                          cfg.masking, seed);
                    if (result.curve.empty())
                        metrics["final_train_loss"] = nullptr;
                    else
                        metrics["final_train_loss"] =
                            result.curve.back().second;
                    write_text(dir / "metrics.json", metrics.dump(2) + "\n");
                });
            reg(pre_id + "/checkpoint", stages.dir(pre_id) / "checkpoint");
            reg(pre_id + "/curve", stages.dir(pre_id) / "curve.csv");
            reg(pre_id + "/metrics", stages.dir(pre_id) / "metrics.json");

            const std::string eval_id = "eval/" + tag;
            const json eval_cfg{
                {"steps", cfg.finetune.steps},
                {"batch_size", cfg.finetune.batch_size},
                {"eval_every", cfg.finetune.eval_every},
                {"unfreeze_encoder", cfg.finetune.unfreeze_encoder},
                {"adam",
                 {cfg.finetune.adam.learning_rate, cfg.finetune.adam.beta1,
                  cfg.finetune.adam.beta2, cfg.finetune.adam.epsilon}},
                {"seed", seed}};
            const std::string eval_key =
                eval_id + "|" + eval_cfg.dump() + "|" +
                hex64(hash_tree(stages.dir(pre_id) / "checkpoint")) + "|" +
                hex64(hash_tree(cfg.eval_train)) + "|" +
                hex64(hash_tree(cfg.eval_dev)) + "|" +
                hex64(hash_tree(cfg.eval_test));
            stages.run(
                eval_id, fnv1a64(eval_key), {"eval.json"},
                [&](const fs::path& dir) {
                    const Checkpoint trained = load_checkpoint(
                        (stages.dir(pre_id) / "checkpoint").string());
                    const LabeledDataset train_ds =
                        load_sib_dataset(cfg.eval_train, Split::train);
                    const LabeledDataset dev_ds =
                        load_sib_dataset(cfg.eval_dev, Split::dev);
                    const LabeledDataset test_ds =
                        load_sib_dataset(cfg.eval_test, Split::test);
                    FinetuneHyper hyper = cfg.finetune;
                    hyper.seed = seed;
                    const FinetuneResult tuned =
                        finetune_classifier(trained, train_ds, dev_ds, hyper);
                    std::vector<std::string> texts;
                    std::vector<std::size_t> golds;
                    for (const auto& [text, label] : test_ds.examples) {
                        texts.push_back(text);
                        golds.push_back(label);
                    }
                    const EvalReport report = weighted_f1(
                        predict(tuned.checkpoint, tuned.head, texts), golds,
                        sib_labels());
                    const json result{
                        {"test_weighted_f1", report.weighted_f1},
                        {"test_accuracy", report.accuracy},
                        {"best_dev_weighted_f1", tuned.best_dev_weighted_f1},
                        {"best_step", tuned.best_step}};
                    write_text(dir / "eval.json", result.dump(2) + "\n");
                });
            reg(eval_id + "/report", stages.dir(eval_id) / "eval.json");
        }
    }

    {
        const json subset{{"variants", cfg.variants},
                          {"seeds", cfg.seeds},
                          {"lang", cfg.target_lang}};
        std::string key_src = "benchmark|" + subset.dump();
        for (const auto& variant : cfg.variants)
            for (const std::uint64_t seed : cfg.seeds) {
                const std::string tag =
                    variant + "/seed" + std::to_string(seed);
                key_src +=
                    "|" +
                    hex64(hash_tree(stages.dir("eval/" + tag) / "eval.json"));
                key_src += "|" + hex64(hash_tree(stages.dir("pretrain/" + tag) /
                                                 "metrics.json"));
            }
        stages.run(
            "benchmark", fnv1a64(key_src),
            {"scores.json", "benchmark.csv", "benchmark.txt", "per_seed.csv"},
            [&](const fs::path& dir) {
                json mean_f1 = json::object();
                json mean_loss = json::object();
                json per_seed = json::array();
                Matrix score_mat(1, cfg.variants.size());
                std::string per_seed_csv =
                    "variant,seed,test_weighted_f1,heldout_mlm_loss\n";
                char buf[64];
                for (std::size_t v = 0; v < cfg.variants.size(); ++v) {
                    double f1_sum = 0.0, loss_sum = 0.0;
                    std::size_t loss_count = 0;
                    for (const std::uint64_t seed : cfg.seeds) {
                        const std::string tag = cfg.variants[v] + "/seed" +
                                                std::to_string(seed);
                        const json ev = json::parse(read_text(
                            stages.dir("eval/" + tag) / "eval.json"));
                        const json met = json::parse(read_text(
                            stages.dir("pretrain/" + tag) / "metrics.json"));
                        const double f1 =
                            ev.at("test_weighted_f1").get<double>();
                        f1_sum += f1;
                        per_seed.push_back(
                            {{"variant", cfg.variants[v]},
                             {"seed", seed},
                             {"test_weighted_f1", f1},
                             {"test_accuracy", ev.at("test_accuracy")},
                             {"best_dev_weighted_f1",
                              ev.at("best_dev_weighted_f1")},
                             {"best_step", ev.at("best_step")},
                             {"heldout_mlm_loss",
                              met.at("heldout_mlm_loss")}});
                        std::snprintf(buf, sizeof buf, "%.17g", f1);
                        per_seed_csv += cfg.variants[v] + "," +
                                        std::to_string(seed) + "," + buf + ",";
                        if (met.at("heldout_mlm_loss").is_number()) {
                            const double loss =
                                met.at("heldout_mlm_loss").get<double>();
                            loss_sum += loss;
                            ++loss_count;
                            std::snprintf(buf, sizeof buf, "%.17g", loss);
                            per_seed_csv += buf;
                        }
                        per_seed_csv += "\n";
                    }
                    const double mean = f1_sum / double(cfg.seeds.size());
                    score_mat(0, v) = mean;
                    mean_f1[cfg.variants[v]] = mean;
                    if (loss_count > 0)
                        mean_loss[cfg.variants[v]] =
                            loss_sum / double(loss_count);
                    else
                        mean_loss[cfg.variants[v]] = nullptr;
                }
                const json scores{{"lang", cfg.target_lang},
                                  {"variants", cfg.variants},
                                  {"seeds", cfg.seeds},
                                  {"mean_f1", mean_f1},
                                  {"mean_heldout_loss", mean_loss},
                                  {"per_seed", per_seed}};
                write_text(dir / "scores.json", scores.dump(2) + "\n");
                const BenchmarkTable table = make_benchmark_table(
                    cfg.variants, {cfg.target_lang}, score_mat);
                write_text(dir / "benchmark.csv", benchmark_csv(table));
                write_text(dir / "benchmark.txt", benchmark_text(table));
                write_text(dir / "per_seed.csv", per_seed_csv);
            });
        reg("benchmark/scores", stages.dir("benchmark") / "scores.json");
        reg("benchmark/csv", stages.dir("benchmark") / "benchmark.csv");
        reg("benchmark/text", stages.dir("benchmark") / "benchmark.txt");
        reg("benchmark/per_seed", stages.dir("benchmark") / "per_seed.csv");
    }

    man.finished_at = iso_utc_now();
    save_manifest(man, (out / "manifest.json").string());
    std::string log_text;
    for (const auto& line : man.log) log_text += line + "\n";
    write_text(out / "run.log", log_text);
    check_manifest(man);
    return man;
}

void save_manifest(const RunManifest& manifest, const std::string& path) {
    const json j{{"config_hash", manifest.config_hash},
                 {"toolkit_version", manifest.toolkit_version},
                 {"started_at", manifest.started_at},
                 {"finished_at", manifest.finished_at},
                 {"threads", manifest.threads},
                 {"artifacts", manifest.artifacts},
                 {"log", manifest.log}};
    write_text(path, j.dump(2) + "\n");
}

RunManifest load_manifest(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }
    RunManifest manifest;
    try {
        manifest.config_hash = j.at("config_hash").get<std::string>();
        manifest.toolkit_version = j.at("toolkit_version").get<std::string>();
        manifest.started_at = j.at("started_at").get<std::string>();
        manifest.finished_at = j.at("finished_at").get<std::string>();
        manifest.threads = j.at("threads").get<std::size_t>();
        manifest.artifacts =
            j.at("artifacts").get<std::map<std::string, std::string>>();
        manifest.log = j.at("log").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }
    return manifest;
}

void check_manifest(const RunManifest& manifest) {
    for (const auto& [name, path] : manifest.artifacts)
        if (!fs::exists(path))
            throw Error("incomplete manifest: missing artifact " + name +
                        " (" + path + ")");
}

RenderedReport render_report(const RunManifest& manifest) {
    const auto artifact = [&](const std::string& name) -> std::string {
        const auto it = manifest.artifacts.find(name);
        if (it == manifest.artifacts.end() || !fs::exists(it->second))
            throw Error("incomplete manifest: missing artifact " + name);
        return it->second;
    };
    json scores;
    try {
        scores = json::parse(read_text(artifact("benchmark/scores")));
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("scores: ") + e.what());
    }

    const std::string lang = scores.at("lang").get<std::string>();
    const std::vector<std::string> variants =
        scores.at("variants").get<std::vector<std::string>>();
    Matrix mat(1, variants.size());
    for (std::size_t v = 0; v < variants.size(); ++v)
        mat(0, v) = scores.at("mean_f1").at(variants[v]).get<double>();
    const BenchmarkTable table = make_benchmark_table(variants, {lang}, mat);

    const auto cell = [](double raw) {
        return format_1dp(round_half_even_1dp(100.0 * raw));
    };

    std::string md = "# Benchmark results\n\n";
    md += "Scores are weighted F1 scaled to 0-100 at one decimal, rounded "
          "half to even. Columns pair each initialization scheme with a "
          "synthetic-data condition. The average row is the unweighted mean "
          "over language rows computed on unrounded scores, so a table "
          "rounded under a different convention can differ by 0.1 in the "
          "final digit.\n\n";
    md += "| lang |";
    for (const auto& v : variants) md += " " + v + " |";
    md += "\n| --- |";
    for (std::size_t v = 0; v < variants.size(); ++v) md += " ---: |";
    md += "\n| " + lang + " |";
    for (std::size_t v = 0; v < variants.size(); ++v)
        md += " " + cell(table.scores(0, v)) + " |";
    md += "\n| average |";
    for (std::size_t v = 0; v < variants.size(); ++v)
        md += " " + cell(table.averages[v]) + " |";
    md += "\n";

    const auto printed_avg =
        [&](const std::string& name) -> std::optional<double> {
        for (std::size_t v = 0; v < variants.size(); ++v)
            if (variants[v] == name)
                return round_half_even_1dp(100.0 * table.averages[v]);
        return std::nullopt;
    };
    std::string deltas;
    const auto add_delta = [&](const std::string& ours,
                               const std::string& baseline) {
        const auto a = printed_avg(ours);
        const auto b = printed_avg(baseline);
        if (a && b)
            deltas += "Δ(" + ours + ", " + baseline +
                      ") = " + format_delta(*a, *b) + "\n";
    };
    add_delta("informed", "random");
    add_delta("informed+synthetic", "random+synthetic");
    if (!deltas.empty())
        md += "\nDeltas between printed averages:\n\n" + deltas;

    if (scores.contains("mean_heldout_loss")) {
        std::string rows;
        for (const auto& v : variants) {
            const json& loss = scores.at("mean_heldout_loss").at(v);
            if (!loss.is_number()) continue;
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.4f", loss.get<double>());
            rows += "| " + v + " | " + buf + " |\n";
        }
        if (!rows.empty()) {
            md += "\nMean held-out masked-LM loss (lower is better):\n\n";
            md += "| model | loss |\n| --- | ---: |\n" + rows;
        }
    }

    RenderedReport out;
    out.markdown = md;
    out.csv = benchmark_csv(table);
    return out;
}

}  // namespace graftbench
