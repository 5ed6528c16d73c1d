#include "graftbench/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "graftbench/error.hpp"
#include "graftbench/rng.hpp"
#include "graftbench/rounding.hpp"
#include "graftbench/tokenizer.hpp"

namespace graftbench {

namespace {

constexpr char kHeader[] = "index\tcategory\ttext";

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

/// bos + tokenization truncated to fit max_seq_len + eos.
std::vector<std::uint32_t> encode_text(const Checkpoint& ckpt,
                                       const std::string& text) {
    std::vector<std::uint32_t> ids = tokenize(ckpt.tokenizer, text);
    const std::size_t cap =
        ckpt.config.max_seq_len >= 2 ? ckpt.config.max_seq_len - 2 : 0;
    if (ids.size() > cap) ids.resize(cap);
    std::vector<std::uint32_t> seq;
    seq.reserve(ids.size() + 2);
    seq.push_back(Vocabulary::kBos);
    seq.insert(seq.end(), ids.begin(), ids.end());
    seq.push_back(Vocabulary::kEos);
    return seq;
}

/// Mean of final hidden states over non-pad positions, one row per text.
/// Runs the encoder in small chunks to bound activation memory.
Matrix pooled_reprs(const Checkpoint& ckpt,
                    const std::vector<std::string>& texts) {
    Matrix out(texts.size(), ckpt.config.dim);
    constexpr std::size_t kChunk = 16;
    for (std::size_t base = 0; base < texts.size(); base += kChunk) {
        const std::size_t n = std::min(kChunk, texts.size() - base);
        IdBatch batch(n);
        std::vector<std::size_t> lens(n);
        std::size_t width = 0;
        for (std::size_t i = 0; i < n; ++i) {
            batch[i] = encode_text(ckpt, texts[base + i]);
            lens[i] = batch[i].size();
            width = std::max(width, lens[i]);
        }
        for (auto& seq : batch) seq.resize(width, Vocabulary::kPad);
        const ForwardResult fwd = forward(ckpt, batch);
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix& h = fwd.hidden[i];
            double* dst = out.row(base + i);
            for (std::size_t j = 0; j < lens[i]; ++j) {
                const double* hj = h.row(j);
                for (std::size_t d = 0; d < out.cols(); ++d) dst[d] += hj[d];
            }
            for (std::size_t d = 0; d < out.cols(); ++d)
                dst[d] /= double(lens[i]);
        }
    }
    return out;
}

/// reprs (n x D) -> logits (n x C) under weight (C x D) + bias (1 x C).
Matrix head_logits(const Matrix& reprs, const Matrix& weight,
                   const Matrix& bias) {
    Matrix z = matmul_nt(reprs, weight);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double* zi = z.row(i);
        for (std::size_t c = 0; c < z.cols(); ++c) zi[c] += bias(0, c);
    }
    return z;
}

std::vector<std::size_t> argmax_rows(const Matrix& z) {
    std::vector<std::size_t> out(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const double* zi = z.row(i);
        std::size_t best = 0;
        for (std::size_t c = 1; c < z.cols(); ++c)
            if (zi[c] > zi[best]) best = c;
        out[i] = best;
    }
    return out;
}

/// Mean cross-entropy over the batch and its gradient on the logits.
double ce_loss_and_dlogits(const Matrix& z, const std::vector<std::size_t>& y,
                           Matrix& dz) {
    const std::size_t n = z.rows();
    dz = Matrix(n, z.cols());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* zi = z.row(i);
        double* di = dz.row(i);
        double mx = zi[0];
        for (std::size_t c = 1; c < z.cols(); ++c) mx = std::max(mx, zi[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < z.cols(); ++c) sum += std::exp(zi[c] - mx);
        const double lse = mx + std::log(sum);
        loss += lse - zi[y[i]];
        for (std::size_t c = 0; c < z.cols(); ++c)
            di[c] = std::exp(zi[c] - lse) / double(n);
        di[y[i]] -= 1.0 / double(n);
    }
    return loss / double(n);
}

Matrix column_sums(const Matrix& m) {
    Matrix s(1, m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* mi = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) s(0, j) += mi[j];
    }
    return s;
}

void check_labels(const LabeledDataset& ds, const char* what) {
    for (const auto& [text, label] : ds.examples)
        if (label >= sib_labels().size())
            throw ArgumentError(std::string("finetune_classifier: ") + what +
                                " label index out of range");
}

std::string render_cell(double raw) {
    return format_1dp(round_half_even_1dp(100.0 * raw));
}

std::string pad_left(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

const std::vector<std::string>& sib_labels() {
    static const std::vector<std::string> labels = {
        "science/technology", "travel",        "politics", "sports",
        "health",             "entertainment", "geography"};
    return labels;
}

LabeledDataset load_sib_dataset(const std::string& path, Split split) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset: " + path);
    std::string line;
    if (!std::getline(in, line))
        throw ParseError("line 1: expected header \"index<TAB>category<TAB>text\"",
                         1);
    strip_cr(line);
    if (line != kHeader)
        throw ParseError("line 1: expected header \"index<TAB>category<TAB>text\"",
                         1);
    LabeledDataset out;
    out.split = split;
    const auto& labels = sib_labels();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        const std::vector<std::string> fields = split_tabs(line);
        if (fields.size() != 3)
            throw ParseError("line " + std::to_string(line_no) +
                                 ": expected 3 tab-separated fields, got " +
                                 std::to_string(fields.size()),
                             line_no);
        const auto it = std::find(labels.begin(), labels.end(), fields[1]);
        if (it == labels.end())
            throw DataError("line " + std::to_string(line_no) +
                            ": unknown category \"" + fields[1] + "\"");
        if (fields[2].empty())
            throw ParseError("line " + std::to_string(line_no) + ": empty text",
                             line_no);
        out.examples.emplace_back(fields[2],
                                  std::size_t(it - labels.begin()));
    }
    return out;
}

std::vector<std::size_t> class_counts(const LabeledDataset& dataset) {
    std::vector<std::size_t> counts(sib_labels().size(), 0);
    for (const auto& [text, label] : dataset.examples) {
        if (label >= counts.size())
            throw ArgumentError("class_counts: label index out of range");
        ++counts[label];
    }
    return counts;
}

ClassifierHead init_head(std::size_t classes, std::size_t dim,
                         std::uint64_t seed) {
    if (classes == 0 || dim == 0)
        throw ArgumentError("init_head: classes and dim must be positive");
    ClassifierHead head{Matrix(classes, dim), Matrix(1, classes)};
    Rng rng(seed);
    for (double& v : head.weight.data()) v = 0.02 * rng.normal();
    return head;
}

FinetuneResult finetune_classifier(const Checkpoint& ckpt,
                                   const LabeledDataset& train,
                                   const LabeledDataset& dev,
                                   const FinetuneHyper& hyper) {
    if (train.examples.empty())
        throw ArgumentError("finetune_classifier: empty training set");
    if (dev.examples.empty())
        throw ArgumentError("finetune_classifier: empty dev set");
    if (hyper.batch_size == 0)
        throw ArgumentError("finetune_classifier: batch_size must be positive");
    if (hyper.eval_every == 0)
        throw ArgumentError("finetune_classifier: eval_every must be positive");
    check_labels(train, "train");
    check_labels(dev, "dev");

    const auto& labels = sib_labels();
    const std::size_t classes = labels.size();
    Checkpoint work = ckpt;

    ClassifierHead init = init_head(classes, ckpt.config.dim, hyper.seed);
    std::map<std::string, Matrix> head;
    head.emplace("head.bias", std::move(init.bias));
    head.emplace("head.weight", std::move(init.weight));

    std::vector<std::string> dev_texts;
    std::vector<std::size_t> dev_golds;
    for (const auto& [text, label] : dev.examples) {
        dev_texts.push_back(text);
        dev_golds.push_back(label);
    }

    // Frozen encoder: representations never change, compute them once.
    Matrix train_reprs, dev_reprs;
    if (!hyper.unfreeze_encoder) {
        std::vector<std::string> train_texts;
        for (const auto& [text, label] : train.examples)
            train_texts.push_back(text);
        train_reprs = pooled_reprs(work, train_texts);
        dev_reprs = pooled_reprs(work, dev_texts);
    }

    const auto score_dev = [&](const Matrix& reprs) {
        const Matrix z =
            head_logits(reprs, head.at("head.weight"), head.at("head.bias"));
        return weighted_f1(argmax_rows(z), dev_golds, labels).weighted_f1;
    };

    double best = -1.0;
    std::size_t best_step = 0;
    std::map<std::string, Matrix> best_head = head;
    Checkpoint best_ckpt = work;
    const auto consider = [&](std::size_t step) {
        const double f1 = score_dev(
            hyper.unfreeze_encoder ? pooled_reprs(work, dev_texts) : dev_reprs);
        if (f1 > best) {
            best = f1;
            best_step = step;
            best_head = head;
            if (hyper.unfreeze_encoder) best_ckpt = work;
        }
    };
    consider(0);

    Rng data_rng(derive_seed(hyper.seed, 0xF1));
    AdamState head_state, encoder_state;
    for (std::size_t step = 1; step <= hyper.steps; ++step) {
        std::vector<std::size_t> pick(hyper.batch_size);
        for (auto& p : pick) p = data_rng.uniform_int(train.examples.size());
        std::vector<std::size_t> y(pick.size());
        for (std::size_t i = 0; i < pick.size(); ++i)
            y[i] = train.examples[pick[i]].second;

        Matrix reprs;
        ForwardCache cache;
        IdBatch batch;
        std::vector<std::size_t> lens;
        if (hyper.unfreeze_encoder) {
            batch.resize(pick.size());
            lens.resize(pick.size());
            std::size_t width = 0;
            for (std::size_t i = 0; i < pick.size(); ++i) {
                batch[i] = encode_text(work, train.examples[pick[i]].first);
                lens[i] = batch[i].size();
                width = std::max(width, lens[i]);
            }
            for (auto& seq : batch) seq.resize(width, Vocabulary::kPad);
            cache = forward_cached(work, batch);
            reprs = Matrix(pick.size(), work.config.dim);
            for (std::size_t i = 0; i < pick.size(); ++i) {
                const Matrix& h = cache.hidden()[i];
                double* dst = reprs.row(i);
                for (std::size_t j = 0; j < lens[i]; ++j) {
                    const double* hj = h.row(j);
                    for (std::size_t d = 0; d < reprs.cols(); ++d)
                        dst[d] += hj[d];
                }
                for (std::size_t d = 0; d < reprs.cols(); ++d)
                    dst[d] /= double(lens[i]);
            }
        } else {
            reprs = Matrix(pick.size(), work.config.dim);
            for (std::size_t i = 0; i < pick.size(); ++i) {
                const double* src = train_reprs.row(pick[i]);
                std::copy(src, src + reprs.cols(), reprs.row(i));
            }
        }

        const Matrix z =
            head_logits(reprs, head.at("head.weight"), head.at("head.bias"));
        Matrix dz;
        ce_loss_and_dlogits(z, y, dz);
        GradMap head_grads;
        head_grads.emplace("head.weight", matmul_tn(dz, reprs));
        head_grads.emplace("head.bias", column_sums(dz));

        if (hyper.unfreeze_encoder) {
            // Each non-pad position received 1/len of the pooled gradient.
            const Matrix dreprs = matmul(dz, head.at("head.weight"));
            std::vector<Matrix> dhidden(pick.size());
            for (std::size_t i = 0; i < pick.size(); ++i) {
                dhidden[i] = Matrix(batch[i].size(), work.config.dim);
                const double* di = dreprs.row(i);
                for (std::size_t j = 0; j < lens[i]; ++j) {
                    double* dst = dhidden[i].row(j);
                    for (std::size_t d = 0; d < dhidden[i].cols(); ++d)
                        dst[d] = di[d] / double(lens[i]);
                }
            }
            const GradMap encoder_grads = backward_hidden(work, cache, dhidden);
            adam_step(work.tensors, encoder_grads, encoder_state, hyper.adam);
        }
        adam_step(head, head_grads, head_state, hyper.adam);

        if (step % hyper.eval_every == 0 || step == hyper.steps)
            consider(step);
    }

    return FinetuneResult{
        ClassifierHead{best_head.at("head.weight"), best_head.at("head.bias")},
        std::move(best_ckpt), best, best_step};
}

std::vector<std::size_t> predict(const Checkpoint& ckpt,
                                 const ClassifierHead& head,
                                 const std::vector<std::string>& texts) {
    if (head.weight.cols() != ckpt.config.dim)
        throw ArgumentError("predict: head width does not match model dim");
    if (head.bias.rows() != 1 || head.bias.cols() != head.weight.rows())
        throw ArgumentError("predict: bias shape does not match head");
    if (texts.empty()) return {};
    const Matrix reprs = pooled_reprs(ckpt, texts);
    return argmax_rows(head_logits(reprs, head.weight, head.bias));
}

EvalReport weighted_f1(const std::vector<std::size_t>& preds,
                       const std::vector<std::size_t>& golds,
                       const std::vector<std::string>& label_set) {
    if (preds.size() != golds.size())
        throw ArgumentError("weighted_f1: preds and golds differ in length");
    if (preds.empty()) throw ArgumentError("weighted_f1: empty prediction list");
    if (label_set.empty()) throw ArgumentError("weighted_f1: empty label set");
    if (std::set<std::string>(label_set.begin(), label_set.end()).size() !=
        label_set.size())
        throw ArgumentError("weighted_f1: duplicate label names");

    const std::size_t classes = label_set.size();
    std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0),
        support(classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] >= classes || golds[i] >= classes)
            throw ArgumentError("weighted_f1: label index out of range");
        ++support[golds[i]];
        if (preds[i] == golds[i]) {
            ++tp[preds[i]];
            ++correct;
        } else {
            ++fp[preds[i]];
            ++fn[golds[i]];
        }
    }

    EvalReport report;
    double weighted_sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        ClassMetrics m;
        m.support = support[c];
        const double denom_p = double(tp[c] + fp[c]);
        const double denom_r = double(tp[c] + fn[c]);
        m.precision = denom_p > 0.0 ? double(tp[c]) / denom_p : 0.0;
        m.recall = denom_r > 0.0 ? double(tp[c]) / denom_r : 0.0;
        m.f1 = m.precision + m.recall > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        weighted_sum += double(m.support) * m.f1;
        report.per_class.emplace(label_set[c], m);
    }
    report.weighted_f1 = weighted_sum / double(preds.size());
    report.accuracy = double(correct) / double(preds.size());
    return report;
}

BenchmarkTable make_benchmark_table(std::vector<std::string> models,
                                    std::vector<std::string> langs,
                                    Matrix scores) {
    if (models.empty() || langs.empty())
        throw ArgumentError("benchmark table: empty model or language axis");
    if (scores.rows() != langs.size() || scores.cols() != models.size())
        throw ArgumentError("benchmark table: score shape mismatch");
    BenchmarkTable table{std::move(models), std::move(langs),
                         std::move(scores), {}};
    table.averages.resize(table.models.size());
    for (std::size_t m = 0; m < table.models.size(); ++m) {
        double sum = 0.0;
        for (std::size_t l = 0; l < table.langs.size(); ++l)
            sum += table.scores(l, m);
        table.averages[m] = sum / double(table.langs.size());
    }
    return table;
}

BenchmarkTable benchmark_matrix(
    const std::vector<std::pair<std::string, Checkpoint>>& models,
    const std::vector<std::pair<std::string, DatasetTriplet>>& datasets,
    const FinetuneHyper& hyper) {
    if (models.empty()) throw ArgumentError("benchmark_matrix: no models");
    if (datasets.empty()) throw ArgumentError("benchmark_matrix: no datasets");
    std::vector<std::string> model_names, lang_names;
    for (const auto& [name, ckpt] : models) model_names.push_back(name);
    for (const auto& [lang, triplet] : datasets) lang_names.push_back(lang);

    Matrix scores(datasets.size(), models.size());
    for (std::size_t m = 0; m < models.size(); ++m) {
        for (std::size_t l = 0; l < datasets.size(); ++l) {
            const DatasetTriplet& triplet = datasets[l].second;
            const FinetuneResult tuned = finetune_classifier(
                models[m].second, triplet.train, triplet.dev, hyper);
            std::vector<std::string> texts;
            std::vector<std::size_t> golds;
            for (const auto& [text, label] : triplet.test.examples) {
                texts.push_back(text);
                golds.push_back(label);
            }
            const auto preds = predict(tuned.checkpoint, tuned.head, texts);
            scores(l, m) = weighted_f1(preds, golds, sib_labels()).weighted_f1;
        }
    }
    return make_benchmark_table(std::move(model_names), std::move(lang_names),
                                std::move(scores));
}

std::string benchmark_csv(const BenchmarkTable& table) {
    std::string out = "model,lang,weighted_f1\n";
    for (std::size_t m = 0; m < table.models.size(); ++m)
        for (std::size_t l = 0; l < table.langs.size(); ++l)
            out += table.models[m] + "," + table.langs[l] + "," +
                   render_cell(table.scores(l, m)) + "\n";
    return out;
}

std::string benchmark_text(const BenchmarkTable& table) {
    std::size_t name_width = std::string("average").size();
    name_width = std::max(name_width, std::string("lang").size());
    for (const auto& lang : table.langs)
        name_width = std::max(name_width, lang.size());
    std::vector<std::size_t> widths;
    for (const auto& model : table.models)
        widths.push_back(std::max<std::size_t>(model.size(), 5));

    std::string out = pad_right("lang", name_width);
    for (std::size_t m = 0; m < table.models.size(); ++m)
        out += "  " + pad_left(table.models[m], widths[m]);
    out += "\n";
    for (std::size_t l = 0; l < table.langs.size(); ++l) {
        out += pad_right(table.langs[l], name_width);
        for (std::size_t m = 0; m < table.models.size(); ++m)
            out += "  " + pad_left(render_cell(table.scores(l, m)), widths[m]);
        out += "\n";
    }
    out += pad_right("average", name_width);
    for (std::size_t m = 0; m < table.models.size(); ++m)
        out += "  " + pad_left(render_cell(table.averages[m]), widths[m]);
    out += "\n";
    out +=
        "Scores are weighted F1 scaled to 0-100, shown to one decimal. The "
        "average row is the unweighted mean over languages, computed on "
        "unrounded scores and rounded half to even; tables that average "
        "already-rounded cells or round half away from zero can differ by "
        "0.1 in the final digit.\n";
    return out;
}

std::string format_delta(double ours, double baseline) {
    double rounded = round_half_even_1dp(ours - baseline);
    if (rounded == 0.0) rounded = 0.0;  // normalize -0.0
    std::string s = format_1dp(rounded);
    if (rounded >= 0.0) s.insert(s.begin(), '+');
    return s;
}

}  // namespace graftbench
