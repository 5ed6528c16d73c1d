#include "graftbench/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "graftbench/checkpoint.hpp"
#include "graftbench/corpus.hpp"
#include "graftbench/error.hpp"
#include "graftbench/eval.hpp"
#include "graftbench/mlm.hpp"
#include "graftbench/tokenizer.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace graftbench;

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("gb_pipe_" + std::to_string(::getpid()) + "_" +
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
    REQUIRE(out.good());
    out << content;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

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
            std::string text = words[std::size_t(k)] + " " +
                               words[std::size_t(k)] + " " +
                               words[std::size_t((k + r + salt) % 7)];
            out += std::to_string(idx++) + "\t" + labels[std::size_t(k)] +
                   "\t" + text + "\n";
        }
    return out;
}

/// Desk-scale fixture: a tiny source checkpoint, target/pivot corpora,
/// a word lexicon, external vectors, and labeled classification splits.
struct Workspace {
    TempDir tmp;
    fs::path data;
    std::string source_ckpt, tgt_a, tgt_b, pivot, lexicon, extvec;
    std::string sib_train, sib_dev, sib_test;

    Workspace() {
        data = tmp.path / "data";
        fs::create_directories(data);
        tgt_a = (data / "tgt_a.txt").string();
        tgt_b = (data / "tgt_b.txt").string();
        write_file(tgt_a, gen_sentences(tgt_words(), 70, 1));
        write_file(tgt_b, gen_sentences(tgt_words(), 50, 2));
        pivot = (data / "pivot.txt").string();
        write_file(pivot, gen_sentences(src_words(), 30, 3));

        lexicon = (data / "lexicon.tsv").string();
        std::string lex;
        for (std::size_t i = 0; i < 7; ++i)
            lex += src_words()[i] + "\t" + tgt_words()[i] + "\n";
        write_file(lexicon, lex);

        extvec = (data / "vectors.txt").string();
        std::string vec = "7 6\n";
        for (int k = 0; k < 7; ++k) {
            vec += tgt_words()[std::size_t(k)];
            for (int j = 0; j < 6; ++j)
                vec += " " + std::to_string(((k + 1) * (j + 2)) % 7 - 3) +
                       ".5";
            vec += "\n";
        }
        write_file(extvec, vec);

        sib_train = (data / "sib_train.tsv").string();
        sib_dev = (data / "sib_dev.tsv").string();
        sib_test = (data / "sib_test.tsv").string();
        write_file(sib_train, sib_tsv(3, 0));
        write_file(sib_dev, sib_tsv(1, 1));
        write_file(sib_test, sib_tsv(1, 2));

        const fs::path src_corpus_path = data / "src_corpus.txt";
        write_file(src_corpus_path, gen_sentences(src_words(), 40, 4));
        const Corpus src_corpus =
            ingest_corpus({src_corpus_path.string()}, "src");
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
        source_ckpt = (data / "source_ckpt").string();
        save_checkpoint(ckpt, source_ckpt);
    }

    json minimal_config(const std::string& out_dir) const {
        json j;
        j["target_lang"] = "tgt";
        j["corpora"] = {{"tgt", {tgt_a, tgt_b}}};
        j["tokenizer"] = {{"vocab_size", 40}};
        j["source_checkpoint"] = source_ckpt;
        j["init"] = {{"latent_dim", 4}, {"external_embeddings", extvec}};
        j["eval"] = {{"train", sib_train}, {"dev", sib_dev}, {"test", sib_test}};
        j["seeds"] = {3};
        j["output_dir"] = out_dir;
        return j;
    }

    json full_config(const std::string& out_dir) const {
        json j = minimal_config(out_dir);
        j["corpora"]["src"] = {pivot};
        j["synthetic"] = {{"enabled", true},
                          {"lexicon", lexicon},
                          {"pivot_lang", "src"}};
        j["init"]["neighbors"] = 3;
        j["pretrain"] = {{"steps", 12}, {"batch_size", 4}};
        j["finetune"] = {{"steps", 12}, {"batch_size", 4}, {"eval_every", 6}};
        j["seeds"] = {1, 2};
        return j;
    }

    std::string write_config(const json& j, const std::string& name) const {
        const fs::path p = tmp.path / name;
        write_file(p, j.dump(2) + "\n");
        return p.string();
    }
};

bool contains_violation(const ValidationError& e, const std::string& needle) {
    for (const auto& v : e.violations())
        if (v.find(needle) != std::string::npos) return true;
    return false;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("optional fields get documented defaults") {
    Workspace ws;
    const std::string path = ws.write_config(
        ws.minimal_config((ws.tmp.path / "out").string()), "config.json");
    const ExperimentConfig cfg = validate_config(path);

    CHECK(cfg.target_lang == "tgt");
    CHECK(cfg.vocab_size == 40);
    CHECK(cfg.latent_dim == 4);
    CHECK(cfg.neighbors == 10);
    CHECK(cfg.masking.mask_rate == doctest::Approx(0.15));
    CHECK(cfg.masking.mask_token_frac == doctest::Approx(0.8));
    CHECK(cfg.pretrain_steps == 0);
    CHECK(cfg.pretrain_batch_size == 8);
    CHECK(cfg.pretrain_adam.learning_rate == doctest::Approx(1e-3));
    CHECK(cfg.finetune.steps == 200);
    CHECK(cfg.finetune.eval_every == 10);
    CHECK_FALSE(cfg.finetune.unfreeze_encoder);
    CHECK_FALSE(cfg.synthetic.enabled);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{3});
    CHECK(cfg.variants == std::vector<std::string>{"random", "informed"});
}

TEST_CASE("latent dim above the model width is a single violation") {
    Workspace ws;
    json j = ws.minimal_config((ws.tmp.path / "out").string());
    j["init"]["latent_dim"] = 64;  // source model width is 8
    const std::string path = ws.write_config(j, "config.json");
    try {
        validate_config(path);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        REQUIRE(e.violations().size() == 1);
        CHECK(e.violations()[0].find("/init/latent_dim") !=
              std::string::npos);
        CHECK(e.violations()[0].find("8") != std::string::npos);
    }
}

TEST_CASE("every violation is reported with its json pointer") {
    Workspace ws;
    json j;
    j["corpora"] = {{"tgt", {(ws.data / "missing.txt").string()}}};
    j["tokenizer"] = {{"vocab_size", 0}};
    j["source_checkpoint"] = ws.source_ckpt;
    j["init"] = json::object();
    j["seeds"] = {4, 4};
    j["output_dir"] = (ws.tmp.path / "out").string();
    j["extra"] = 1;
    j["variants"] = {"random", "random", "weird"};
    const std::string path = ws.write_config(j, "config.json");
    try {
        validate_config(path);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("config validation failed") !=
              std::string::npos);
        CHECK(e.violations().size() >= 8);
        CHECK(contains_violation(e, "/target_lang"));
        CHECK(contains_violation(e, "/corpora/tgt/0"));
        CHECK(contains_violation(e, "/tokenizer/vocab_size"));
        CHECK(contains_violation(e, "/init/latent_dim"));
        CHECK(contains_violation(e, "/eval"));
        CHECK(contains_violation(e, "/seeds/1"));
        CHECK(contains_violation(e, "/extra"));
        CHECK(contains_violation(e, "/variants/1"));
        CHECK(contains_violation(e, "/variants/2"));
    }
    CHECK_THROWS_AS(validate_config((ws.data / "nope.json").string()),
                    IoError);
    const std::string broken = (ws.data / "broken.json").string();
    write_file(broken, "{ not json");
    CHECK_THROWS_AS(validate_config(broken), ParseError);
}

TEST_CASE("canonical config json roundtrips through a file") {
    Workspace ws;
    const std::string path = ws.write_config(
        ws.full_config((ws.tmp.path / "out").string()), "config.json");
    const ExperimentConfig cfg = validate_config(path);
    const std::string canon = config_json(cfg);

    const fs::path copy = ws.tmp.path / "canon.json";
    write_file(copy, canon);
    const ExperimentConfig cfg2 = validate_config(copy.string());
    CHECK(config_json(cfg2) == canon);
    CHECK(config_hash(cfg2) == config_hash(cfg));

    const std::string h = config_hash(cfg);
    REQUIRE(h.size() == 16);
    for (const char c : h) CHECK(std::string("0123456789abcdef").find(c) !=
                                 std::string::npos);

    ExperimentConfig tweaked = cfg;
    tweaked.vocab_size += 1;
    CHECK(config_hash(tweaked) != h);
}

TEST_CASE("experiment runs, caches, recomputes, and is deterministic") {
    Workspace ws;
    const std::string out1 = (ws.tmp.path / "run1").string();
    const std::string path =
        ws.write_config(ws.full_config(out1), "config.json");
    const ExperimentConfig cfg = validate_config(path);
    REQUIRE(cfg.variants == variant_names());
    REQUIRE(cfg.seeds == std::vector<std::uint64_t>{1, 2});

    ::setenv("GRAFTBENCH_THREADS", "2", 1);
    const RunManifest man = run_experiment(cfg);
    CHECK(man.threads == 2);
    CHECK(man.config_hash == config_hash(cfg));
    CHECK_FALSE(man.toolkit_version.empty());
    REQUIRE(man.started_at.size() == 20);
    CHECK(man.started_at.back() == 'Z');
    CHECK(man.finished_at.size() == 20);

    REQUIRE_FALSE(man.log.empty());
    for (const auto& line : man.log)
        CHECK(line.find("] computed") != std::string::npos);

    CHECK_NOTHROW(check_manifest(man));
    for (const auto& variant : cfg.variants)
        for (const std::uint64_t seed : cfg.seeds) {
            const std::string tag =
                variant + "/seed" + std::to_string(seed);
            CHECK(man.artifacts.count("graft/" + tag + "/checkpoint") == 1);
            CHECK(man.artifacts.count("graft/" + tag + "/embedding") == 1);
            CHECK(man.artifacts.count("pretrain/" + tag + "/checkpoint") == 1);
            CHECK(man.artifacts.count("pretrain/" + tag + "/curve") == 1);
            CHECK(man.artifacts.count("pretrain/" + tag + "/metrics") == 1);
            CHECK(man.artifacts.count("eval/" + tag + "/report") == 1);
        }
    CHECK(man.artifacts.count("corpus/nat/train") == 1);
    CHECK(man.artifacts.count("corpus/syn/train") == 1);
    CHECK(man.artifacts.count("tokenizer/nat/vocab") == 1);
    CHECK(man.artifacts.count("tokenizer/syn/vocab") == 1);
    CHECK(man.artifacts.count("graft/informed/seed1/init_report") == 1);
    CHECK(man.artifacts.count("graft/random/seed1/init_report") == 0);
    CHECK(man.artifacts.count("benchmark/scores") == 1);

    {
        const json ev = json::parse(
            read_bytes(man.artifacts.at("eval/random/seed1/report")));
        const double f1 = ev.at("test_weighted_f1").get<double>();
        CHECK(f1 >= 0.0);
        CHECK(f1 <= 1.0);
        const json met = json::parse(
            read_bytes(man.artifacts.at("pretrain/informed/seed2/metrics")));
        CHECK(met.at("heldout_mlm_loss").is_number());
        CHECK(met.at("heldout_mlm_loss").get<double>() > 0.0);
    }

    const RunManifest loaded =
        load_manifest((fs::path(out1) / "manifest.json").string());
    CHECK(loaded.config_hash == man.config_hash);
    CHECK(loaded.threads == man.threads);
    CHECK(loaded.artifacts == man.artifacts);
    CHECK(loaded.log == man.log);
    CHECK(fs::exists(fs::path(out1) / "run.log"));

    // Second run with identical inputs: every stage is a cache hit.
    const RunManifest man2 = run_experiment(cfg);
    REQUIRE_FALSE(man2.log.empty());
    for (const auto& line : man2.log)
        CHECK(line.find("] cached") != std::string::npos);
    CHECK(man2.artifacts == man.artifacts);

    ::setenv("GRAFTBENCH_THREADS", "abc", 1);
    const RunManifest man3 = run_experiment(cfg);
    CHECK(man3.threads == 1);
    ::unsetenv("GRAFTBENCH_THREADS");

    // Deleting one stage directory recomputes exactly that stage; the
    // benchmark stays cached because the recomputed bytes are identical.
    fs::remove_all(fs::path(out1) / "eval" / "informed" / "seed1");
    const RunManifest man4 = run_experiment(cfg);
    std::vector<std::string> recomputed;
    for (const auto& line : man4.log)
        if (line.find("] computed") != std::string::npos)
            recomputed.push_back(line);
    REQUIRE(recomputed.size() == 1);
    CHECK(recomputed[0] == "[eval/informed/seed1] computed");
    bool bench_cached = false;
    for (const auto& line : man4.log)
        bench_cached = bench_cached || line == "[benchmark] cached";
    CHECK(bench_cached);

    const RenderedReport rep = render_report(man4);
    CHECK(rep.markdown.find("# Benchmark results") != std::string::npos);
    CHECK(rep.markdown.find("| tgt |") != std::string::npos);
    CHECK(rep.markdown.find("| average |") != std::string::npos);
    CHECK(rep.markdown.find("Δ(informed, random) = ") != std::string::npos);
    CHECK(rep.markdown.find("Δ(informed+synthetic, random+synthetic) = ") !=
          std::string::npos);
    CHECK(rep.markdown.find("held-out") != std::string::npos);
    REQUIRE(rep.csv.rfind("model,lang,weighted_f1\n", 0) == 0);
    std::size_t csv_lines = 0;
    for (const char c : rep.csv) csv_lines += (c == '\n');
    CHECK(csv_lines == 5);  // header + one row per variant

    // A fresh output directory reproduces every artifact bit for bit.
    const std::string out2 = (ws.tmp.path / "run2").string();
    ExperimentConfig cfg2 = cfg;
    cfg2.output_dir = out2;
    const RunManifest manb = run_experiment(cfg2);
    CHECK_NOTHROW(check_manifest(manb));
    for (const std::string rel :
         {"pretrain/informed/seed1/checkpoint/tensors.bin",
          "graft/random+synthetic/seed2/checkpoint/tensors.bin",
          "graft/informed/seed1/embedding.emb1", "tokenizer/syn/vocab.txt",
          "benchmark/benchmark.csv", "benchmark/benchmark.txt",
          "benchmark/scores.json", "benchmark/per_seed.csv"}) {
        CHECK(read_bytes(fs::path(out1) / rel) ==
              read_bytes(fs::path(out2) / rel));
    }

    const std::string per_seed =
        read_bytes(fs::path(out1) / "benchmark" / "per_seed.csv");
    CHECK(per_seed.rfind("variant,seed,test_weighted_f1,heldout_mlm_loss\n",
                         0) == 0);
    std::size_t rows = 0;
    for (const char c : per_seed) rows += (c == '\n');
    CHECK(rows == 1 + 4 * 2);
}

TEST_CASE("single-variant run needs no external vectors or synthetic data") {
    Workspace ws;
    const std::string out = (ws.tmp.path / "mini").string();
    json j = ws.minimal_config(out);
    j["init"].erase("external_embeddings");
    j["variants"] = {"random"};
    j["pretrain"] = {{"steps", 4}, {"batch_size", 4}};
    j["finetune"] = {{"steps", 4}, {"batch_size", 4}, {"eval_every", 2}};
    j["seeds"] = {5};
    const std::string path = ws.write_config(j, "mini.json");
    const ExperimentConfig cfg = validate_config(path);
    CHECK(cfg.variants == std::vector<std::string>{"random"});

    const RunManifest man = run_experiment(cfg);
    for (const auto& [name, p] : man.artifacts) {
        CHECK(name.find("informed") == std::string::npos);
        CHECK(name.find("syn") == std::string::npos);
    }
    const RenderedReport rep = render_report(man);
    CHECK(rep.markdown.find("Δ(") == std::string::npos);
    std::size_t csv_lines = 0;
    for (const char c : rep.csv) csv_lines += (c == '\n');
    CHECK(csv_lines == 2);

    // Informed variants without external vectors are rejected up front.
    json bad = ws.minimal_config(out);
    bad["init"].erase("external_embeddings");
    const std::string bad_path = ws.write_config(bad, "bad.json");
    try {
        validate_config(bad_path);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(contains_violation(e, "/init/external_embeddings"));
    }
}

TEST_CASE("manifest io and failure modes") {
    TempDir tmp;
    const fs::path real = tmp.path / "artifact.txt";
    write_file(real, "x\n");

    RunManifest man;
    man.config_hash = "0123456789abcdef";
    man.toolkit_version = "9.9.9";
    man.started_at = "2026-01-02T03:04:05Z";
    man.finished_at = "2026-01-02T03:04:09Z";
    man.threads = 4;
    man.artifacts["benchmark/scores"] = real.string();
    man.log = {"[corpus/nat] computed", "[benchmark] cached"};

    const std::string mpath = (tmp.path / "manifest.json").string();
    save_manifest(man, mpath);
    const RunManifest loaded = load_manifest(mpath);
    CHECK(loaded.config_hash == man.config_hash);
    CHECK(loaded.toolkit_version == man.toolkit_version);
    CHECK(loaded.started_at == man.started_at);
    CHECK(loaded.finished_at == man.finished_at);
    CHECK(loaded.threads == man.threads);
    CHECK(loaded.artifacts == man.artifacts);
    CHECK(loaded.log == man.log);
    CHECK_NOTHROW(check_manifest(loaded));

    RunManifest broken = man;
    broken.artifacts["eval/random/seed1/report"] =
        (tmp.path / "gone.json").string();
    try {
        check_manifest(broken);
        FAIL("expected Error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("eval/random/seed1/report") !=
              std::string::npos);
    }

    RunManifest empty;
    try {
        render_report(empty);
        FAIL("expected Error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("benchmark/scores") !=
              std::string::npos);
    }

    CHECK_THROWS_AS(load_manifest((tmp.path / "missing.json").string()),
                    IoError);
    const fs::path garbage = tmp.path / "garbage.json";
    write_file(garbage, "{ nope");
    CHECK_THROWS_AS(load_manifest(garbage.string()), ParseError);
    const fs::path partial = tmp.path / "partial.json";
    write_file(partial, "{\"config_hash\": \"x\"}\n");
    CHECK_THROWS_AS(load_manifest(partial.string()), ParseError);
}

}  // TEST_SUITE
