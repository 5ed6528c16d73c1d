#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "graftbench/checkpoint.hpp"
#include "graftbench/corpus.hpp"
#include "graftbench/error.hpp"
#include "graftbench/eval.hpp"
#include "graftbench/mlm.hpp"
#include "graftbench/ofa.hpp"
#include "graftbench/pipeline.hpp"
#include "graftbench/tokenizer.hpp"
#include "graftbench/version.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace graftbench;

fs::path ensure_dir(const std::string& out) {
    fs::create_directories(out);
    return fs::path(out);
}

void write_text(const fs::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f << content;
    if (!f.flush()) throw IoError("cannot write " + p.string());
}

BpeTokenizer load_tokenizer_dir(const std::string& dir) {
    const fs::path d(dir);
    return load_tokenizer((d / "vocab.txt").string(),
                          (d / "merges.txt").string());
}

struct TrainTokenizerOpts {
    std::vector<std::string> corpus;
    std::string lang = "und";
    std::size_t vocab_size = 0;
    std::string out;
};

void run_train_tokenizer(const TrainTokenizerOpts& o) {
    const Corpus corpus = ingest_corpus(o.corpus, o.lang);
    const BpeTokenizer tok = train_bpe(corpus, o.vocab_size);
    const fs::path dir = ensure_dir(o.out);
    save_tokenizer(tok, (dir / "vocab.txt").string(),
                   (dir / "merges.txt").string());
    std::cout << "trained tokenizer with " << tok.vocabulary().size()
              << " tokens -> " << dir.string() << "\n";
}

struct MergeVocabOpts {
    std::string checkpoint;
    std::string tokenizer;
    std::string out;
};

void run_merge_vocab(const MergeVocabOpts& o) {
    const Checkpoint source = load_checkpoint(o.checkpoint);
    const BpeTokenizer target = load_tokenizer_dir(o.tokenizer);
    const auto extended =
        extend_vocabulary(source.tokenizer.vocabulary(), target);
    const BpeTokenizer merged = with_vocabulary(target, extended.first);
    const fs::path dir = ensure_dir(o.out);
    save_tokenizer(merged, (dir / "vocab.txt").string(),
                   (dir / "merges.txt").string());
    const OverlapReport report = overlap_report(extended.second);
    const json j{{"shared", report.shared_count},
                 {"novel", report.novel_count},
                 {"overlap_ratio", report.overlap_ratio}};
    write_text(dir / "overlap.json", j.dump(2) + "\n");
    std::cout << "merged vocabulary: " << extended.first.size()
              << " tokens (" << report.shared_count << " shared, "
              << report.novel_count << " novel) -> " << dir.string() << "\n";
}

struct FactorizeOpts {
    std::string checkpoint;
    std::size_t latent_dim = 0;
    std::string out;
};

void run_factorize(const FactorizeOpts& o) {
    const Checkpoint source = load_checkpoint(o.checkpoint);
    const FactorizedEmbedding fe =
        factorize(source.tensors.at("token_embedding"), o.latent_dim);
    const fs::path dir = ensure_dir(o.out);
    save_embedding_matrix(fe.f, (dir / "f.emb1").string());
    save_embedding_matrix(fe.p, (dir / "p.emb1").string());
    std::cout << "factorized " << fe.f.rows() << "x" << source.config.dim
              << " embedding at latent dim " << fe.d << " -> " << dir.string()
              << "\n";
}

struct InitEmbeddingsOpts {
    std::string checkpoint;
    std::string tokenizer;
    std::string scheme = "informed";
    std::size_t latent_dim = 0;
    std::size_t neighbors = 10;
    std::string vectors;
    std::uint64_t seed = 0;
    std::string out;
};

void run_init_embeddings(const InitEmbeddingsOpts& o) {
    if (o.scheme != "random" && o.scheme != "informed")
        throw ArgumentError("scheme must be \"random\" or \"informed\"");
    const Checkpoint source = load_checkpoint(o.checkpoint);
    const BpeTokenizer target = load_tokenizer_dir(o.tokenizer);
    const auto extended =
        extend_vocabulary(source.tokenizer.vocabulary(), target);
    const BpeTokenizer merged = with_vocabulary(target, extended.first);
    // The embedding covers the merged vocabulary, so the initializers need
    // the merged-id map.
    const OverlapMap overlap =
        merged_overlap(source.tokenizer.vocabulary(), extended.first);
    const fs::path dir = ensure_dir(o.out);
    Matrix embedding;
    if (o.scheme == "informed") {
        if (o.vectors.empty())
            throw ArgumentError("--vectors is required for informed init");
        if (o.latent_dim == 0)
            throw ArgumentError("--latent-dim is required for informed init");
        const ExternalEmbeddings ext = load_external_embeddings(o.vectors);
        const SubwordVectorTable table =
            build_subword_vectors(extended.first, ext, target);
        const FactorizedEmbedding fe =
            factorize(source.tensors.at("token_embedding"), o.latent_dim);
        const InformedInitResult init = informed_init(
            fe, source.tokenizer.vocabulary(), extended.first, overlap,
            table, o.neighbors, o.seed);
        embedding = reconstruct({init.f_target, fe.p, fe.d});
        save_init_report(init.report, (dir / "init_report.json").string());
    } else {
        embedding = random_init(source.tensors.at("token_embedding"),
                                extended.first, overlap, o.seed);
    }
    save_tokenizer(merged, (dir / "vocab.txt").string(),
                   (dir / "merges.txt").string());
    save_embedding_matrix(embedding, (dir / "embedding.emb1").string());
    std::cout << o.scheme << " init of " << embedding.rows()
              << " embedding rows -> " << dir.string() << "\n";
}

struct TransplantOpts {
    std::string checkpoint;
    std::string tokenizer;
    std::string embedding;
    std::string out;
};

void run_transplant(const TransplantOpts& o) {
    const Checkpoint source = load_checkpoint(o.checkpoint);
    const BpeTokenizer merged = load_tokenizer_dir(o.tokenizer);
    const Matrix embedding = load_embedding_matrix(o.embedding);
    const Checkpoint adapted = transplant(source, embedding, merged);
    save_checkpoint(adapted, o.out);
    std::cout << "transplanted model with vocabulary "
              << adapted.config.vocab_size << " -> " << o.out << "\n";
}

struct PretrainOpts {
    std::string checkpoint;
    std::vector<std::string> corpus;
    std::string lang = "und";
    std::size_t steps = 0;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    double mask_rate = 0.15;
    std::uint64_t seed = 0;
    std::string out;
};

void run_pretrain(const PretrainOpts& o) {
    const Checkpoint initial = load_checkpoint(o.checkpoint);
    const Corpus corpus = ingest_corpus(o.corpus, o.lang);
    MaskingPolicy policy;
    policy.mask_rate = o.mask_rate;
    TrainRun run;
    run.steps = o.steps;
    run.batch_size = o.batch_size;
    run.adam.learning_rate = o.learning_rate;
    run.seed = o.seed;
    const PretrainResult result = pretrain(initial, corpus, policy, run);
    const fs::path dir = ensure_dir(o.out);
    save_checkpoint(result.checkpoint, (dir / "checkpoint").string());
    write_text(dir / "curve.csv", loss_curve_csv(result.curve));
    std::cout << "pretrained " << o.steps << " steps";
    if (!result.curve.empty())
        std::cout << ", final loss " << result.curve.back().second;
    std::cout << " -> " << dir.string() << "\n";
}

struct EvaluateOpts {
    std::string checkpoint;
    std::string train, dev, test;
    std::size_t steps = 200;
    std::size_t batch_size = 8;
    std::size_t eval_every = 10;
    bool unfreeze = false;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    std::string out;
};

void run_evaluate(const EvaluateOpts& o) {
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const LabeledDataset train = load_sib_dataset(o.train, Split::train);
    const LabeledDataset dev = load_sib_dataset(o.dev, Split::dev);
    const LabeledDataset test = load_sib_dataset(o.test, Split::test);
    FinetuneHyper hyper;
    hyper.steps = o.steps;
    hyper.batch_size = o.batch_size;
    hyper.eval_every = o.eval_every;
    hyper.unfreeze_encoder = o.unfreeze;
    hyper.adam.learning_rate = o.learning_rate;
    hyper.seed = o.seed;
    const FinetuneResult tuned = finetune_classifier(ckpt, train, dev, hyper);
    std::vector<std::string> texts;
    std::vector<std::size_t> golds;
    for (const auto& [text, label] : test.examples) {
        texts.push_back(text);
        golds.push_back(label);
    }
    const EvalReport report = weighted_f1(
        predict(tuned.checkpoint, tuned.head, texts), golds, sib_labels());
    const json j{{"test_weighted_f1", report.weighted_f1},
                 {"test_accuracy", report.accuracy},
                 {"best_dev_weighted_f1", tuned.best_dev_weighted_f1},
                 {"best_step", tuned.best_step}};
    const fs::path dir = ensure_dir(o.out);
    write_text(dir / "eval.json", j.dump(2) + "\n");
    std::cout << "test weighted F1 " << report.weighted_f1 << ", accuracy "
              << report.accuracy << " (best dev F1 "
              << tuned.best_dev_weighted_f1 << " at step " << tuned.best_step
              << ") -> " << dir.string() << "\n";
}

struct RunOpts {
    std::string config;
};

void run_run(const RunOpts& o) {
    const ExperimentConfig cfg = validate_config(o.config);
    const RunManifest manifest = run_experiment(cfg);
    const RenderedReport report = render_report(manifest);
    const fs::path out(cfg.output_dir);
    write_text(out / "report.md", report.markdown);
    write_text(out / "report.csv", report.csv);
    const auto it = manifest.artifacts.find("benchmark/text");
    if (it != manifest.artifacts.end()) {
        std::ifstream table(it->second, std::ios::binary);
        std::cout << table.rdbuf();
    }
    std::cout << "manifest: " << (out / "manifest.json").string() << "\n";
}

struct ReportOpts {
    std::string manifest;
    std::string out;
};

void run_report(const ReportOpts& o) {
    const RunManifest manifest = load_manifest(o.manifest);
    const RenderedReport report = render_report(manifest);
    if (o.out.empty()) {
        std::cout << report.markdown;
        return;
    }
    const fs::path dir = ensure_dir(o.out);
    write_text(dir / "report.md", report.markdown);
    write_text(dir / "report.csv", report.csv);
    std::cout << "report -> " << dir.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"graftbench: adapt a pretrained masked LM to a new language"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    auto tt = std::make_shared<TrainTokenizerOpts>();
    {
        CLI::App* c = app.add_subcommand("train-tokenizer",
                                         "Train a BPE tokenizer on corpora");
        c->add_option("--corpus", tt->corpus, "UTF-8 corpus files")
            ->required()
            ->check(CLI::ExistingFile);
        c->add_option("--lang", tt->lang, "Language code for bookkeeping");
        c->add_option("--vocab-size", tt->vocab_size, "Total vocabulary size")
            ->required();
        c->add_option("--out", tt->out, "Output directory")->required();
        c->callback([tt] { run_train_tokenizer(*tt); });
    }

    auto mv = std::make_shared<MergeVocabOpts>();
    {
        CLI::App* c = app.add_subcommand(
            "merge-vocab", "Extend a source vocabulary with target tokens");
        c->add_option("--checkpoint", mv->checkpoint,
                      "Source checkpoint directory")
            ->required()
            ->check(CLI::ExistingDirectory);
        c->add_option("--tokenizer", mv->tokenizer,
                      "Target tokenizer directory (vocab.txt + merges.txt)")
            ->required()
            ->check(CLI::ExistingDirectory);
        c->add_option("--out", mv->out, "Output directory")->required();
        c->callback([mv] { run_merge_vocab(*mv); });
    }

    auto fa = std::make_shared<FactorizeOpts>();
    {
        CLI::App* c = app.add_subcommand(
            "factorize", "Factorize a checkpoint's token embedding");
        c->add_option("--checkpoint", fa->checkpoint,
                      "Source checkpoint directory")
            ->required()
            ->check(CLI::ExistingDirectory);
        c->add_option("--latent-dim", fa->latent_dim, "Latent dimension")
            ->required();
        c->add_option("--out", fa->out, "Output directory")->required();
        c->callback([fa] { run_factorize(*fa); });
    }

    auto ie = std::make_shared<InitEmbeddingsOpts>();
    {
        CLI::App* c = app.add_subcommand(
            "init-embeddings",
            "Build target embeddings over the merged vocabulary");
        c->add_option("--checkpoint", ie->checkpoint,
                      "Source checkpoint directory")
            ->required()
            ->check(CLI::ExistingDirectory);
        c->add_option("--tokenizer", ie->tokenizer,
                      "Target tokenizer directory")
            ->required()
            ->check(CLI::ExistingDirectory);
        c->add_option("--scheme", ie->scheme, "random or informed");
        c->add_option("--latent-dim", ie->latent_dim,
                      "Latent dimension (informed)");
        c->add_option("--neighbors", ie->neighbors,
                      "Similarity neighbors (informed)");
        c->add_option("--vectors", ie->vectors,
                      "External word vectors (informed)")
            ->check(CLI::ExistingFile);
        c->add_option("--seed", ie->seed, "Random seed");
        c->add_option("--out", ie->out, "Output directory")->required();
        c->callback([ie] { run_init_embeddings(*ie); });
    }

    auto tr = std::make_shared<TransplantOpts>();
    {
        CLI::App* c = app.add_subcommand(
            "transplant",
            "Combine source weights with a new embedding and tokenizer");
        c->add_option("--checkpoint", tr->checkpoint,
                      "Source checkpoint directory")
            ->required()
            ->check(CLI::ExistingDirectory);
        c->add_option("--tokenizer", tr->tokenizer,
                      "Merged tokenizer directory")
            ->required()
            ->check(CLI::ExistingDirectory);
        c->add_option("--embedding", tr->embedding, "Embedding matrix file")
            ->required()
            ->check(CLI::ExistingFile);
        c->add_option("--out", tr->out, "Output checkpoint directory")
            ->required();
        c->callback([tr] { run_transplant(*tr); });
    }

    auto pt = std::make_shared<PretrainOpts>();
    {
        CLI::App* c = app.add_subcommand(
            "pretrain", "Continue masked-LM pretraining on a corpus");
        c->add_option("--checkpoint", pt->checkpoint, "Checkpoint directory")
            ->required()
            ->check(CLI::ExistingDirectory);
        c->add_option("--corpus", pt->corpus, "UTF-8 corpus files")
            ->required()
            ->check(CLI::ExistingFile);
        c->add_option("--lang", pt->lang, "Language code for bookkeeping");
        c->add_option("--steps", pt->steps, "Optimizer steps")->required();
        c->add_option("--batch-size", pt->batch_size, "Sequences per step");
        c->add_option("--learning-rate", pt->learning_rate, "Adam step size");
        c->add_option("--mask-rate", pt->mask_rate, "Masked-token fraction");
        c->add_option("--seed", pt->seed, "Random seed");
        c->add_option("--out", pt->out, "Output directory")->required();
        c->callback([pt] { run_pretrain(*pt); });
    }

    auto ev = std::make_shared<EvaluateOpts>();
    {
        CLI::App* c = app.add_subcommand(
            "evaluate", "Fine-tune a classifier head and score the test set");
        c->add_option("--checkpoint", ev->checkpoint, "Checkpoint directory")
            ->required()
            ->check(CLI::ExistingDirectory);
        c->add_option("--train", ev->train, "Training TSV")
            ->required()
            ->check(CLI::ExistingFile);
        c->add_option("--dev", ev->dev, "Development TSV")
            ->required()
            ->check(CLI::ExistingFile);
        c->add_option("--test", ev->test, "Test TSV")
            ->required()
            ->check(CLI::ExistingFile);
        c->add_option("--steps", ev->steps, "Fine-tuning steps");
        c->add_option("--batch-size", ev->batch_size, "Examples per step");
        c->add_option("--eval-every", ev->eval_every,
                      "Dev evaluation interval");
        c->add_flag("--unfreeze", ev->unfreeze,
                    "Also update encoder weights");
        c->add_option("--learning-rate", ev->learning_rate, "Adam step size");
        c->add_option("--seed", ev->seed, "Random seed");
        c->add_option("--out", ev->out, "Output directory")->required();
        c->callback([ev] { run_evaluate(*ev); });
    }

    auto ru = std::make_shared<RunOpts>();
    {
        CLI::App* c = app.add_subcommand(
            "run", "Run a full experiment from a JSON config");
        c->add_option("--config", ru->config, "Experiment config JSON")
            ->required()
            ->check(CLI::ExistingFile);
        c->callback([ru] { run_run(*ru); });
    }

    auto rp = std::make_shared<ReportOpts>();
    {
        CLI::App* c = app.add_subcommand(
            "report", "Render markdown + CSV from a run manifest");
        c->add_option("--manifest", rp->manifest, "manifest.json path")
            ->required()
            ->check(CLI::ExistingFile);
        c->add_option("--out", rp->out,
                      "Output directory (default: print markdown)");
        c->callback([rp] { run_report(*rp); });
    }

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const graftbench::ValidationError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const graftbench::ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const graftbench::ConfigurationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
