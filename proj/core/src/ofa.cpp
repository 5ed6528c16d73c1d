#include "graftbench/ofa.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "graftbench/error.hpp"
#include "graftbench/rng.hpp"
#include "graftbench/svd.hpp"
#include "graftbench/unicode.hpp"
#include "binio.hpp"

namespace graftbench {

namespace {

std::vector<std::string_view> split_spaces(std::string_view line) {
    std::vector<std::string_view> parts;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && line[i] == ' ') ++i;
        std::size_t start = i;
        while (i < line.size() && line[i] != ' ') ++i;
        if (i > start) parts.push_back(line.substr(start, i - start));
    }
    return parts;
}

double parse_double(std::string_view s, const std::string& path,
                    std::size_t line_no) {
    double value = 0.0;
    const auto [ptr, ec] =
        std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size() ||
        !std::isfinite(value)) {
        throw ParseError(path + ": bad vector value '" + std::string(s) + "'",
                         line_no);
    }
    return value;
}

std::string strip_marker(std::string_view subword) {
    if (subword.substr(0, kWordMarker.size()) == kWordMarker) {
        subword.remove_prefix(kWordMarker.size());
    }
    return std::string(subword);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Per-column mean and population standard deviation.
struct ColumnStats {
    std::vector<double> mean, std;
};

ColumnStats column_stats(const Matrix& m) {
    ColumnStats s;
    s.mean.assign(m.cols(), 0.0);
    s.std.assign(m.cols(), 0.0);
    if (m.rows() == 0) return s;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) s.mean[j] += m(i, j);
    }
    for (double& v : s.mean) v /= static_cast<double>(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const double d = m(i, j) - s.mean[j];
            s.std[j] += d * d;
        }
    }
    for (double& v : s.std) v = std::sqrt(v / static_cast<double>(m.rows()));
    return s;
}

}  // namespace

ExternalEmbeddings load_external_embeddings(const std::string& path) {
    const std::string data = binio::read_file(path);
    if (!utf8_valid(data)) {
        throw ParseError(path + ": not valid UTF-8");
    }

    ExternalEmbeddings ext;
    std::size_t line_no = 0;
    std::size_t declared = 0;
    std::size_t pos = 0;
    while (pos < data.size()) {
        std::size_t eol = data.find('\n', pos);
        if (eol == std::string::npos) eol = data.size();
        std::string_view line(data.data() + pos, eol - pos);
        pos = eol + 1;
        ++line_no;

        const auto parts = split_spaces(line);
        if (line_no == 1) {
            if (parts.size() != 2) {
                throw ParseError(path + ": header must be `count dim`",
                                 line_no);
            }
            auto parse_count = [&](std::string_view s) {
                std::size_t v = 0;
                const auto [ptr, ec] =
                    std::from_chars(s.data(), s.data() + s.size(), v);
                if (ec != std::errc() || ptr != s.data() + s.size() || v == 0) {
                    throw ParseError(path + ": bad header field '" +
                                         std::string(s) + "'",
                                     line_no);
                }
                return v;
            };
            declared = parse_count(parts[0]);
            ext.dim = parse_count(parts[1]);
            continue;
        }
        if (parts.empty()) continue;  // tolerate a trailing blank line
        if (parts.size() != ext.dim + 1) {
            throw ParseError(path + ": expected word + " +
                                 std::to_string(ext.dim) + " values, got " +
                                 std::to_string(parts.size()) + " fields",
                             line_no);
        }
        std::vector<double> vec(ext.dim);
        for (std::size_t i = 0; i < ext.dim; ++i) {
            vec[i] = parse_double(parts[i + 1], path, line_no);
        }
        const std::string word = nfc(parts[0]);
        if (!ext.vectors.emplace(word, std::move(vec)).second) {
            ++ext.duplicates_ignored;
        }
    }
    if (line_no == 0) throw ParseError(path + ": empty file", 0);
    if (ext.vectors.size() + ext.duplicates_ignored != declared) {
        throw ParseError(path + ": header declares " +
                             std::to_string(declared) + " words, file has " +
                             std::to_string(ext.vectors.size() +
                                            ext.duplicates_ignored),
                         line_no);
    }
    return ext;
}

SubwordExternalVector subword_external_vector(std::string_view subword,
                                              const ExternalEmbeddings& ext,
                                              const BpeTokenizer& tok) {
    SubwordExternalVector out;
    out.subword = std::string(subword);
    std::vector<double> sum(ext.dim, 0.0);
    const std::string bare = strip_marker(subword);
    for (const auto& [word, vec] : ext.vectors) {
        bool match = word == bare;
        if (!match) {
            for (const std::string& sym : tok.word_symbols(word)) {
                if (sym == subword) {
                    match = true;
                    break;
                }
            }
        }
        if (!match) continue;
        ++out.support;
        for (std::size_t i = 0; i < ext.dim; ++i) sum[i] += vec[i];
    }
    if (out.support > 0) {
        for (double& v : sum) v /= static_cast<double>(out.support);
        out.vector = std::move(sum);
    }
    return out;
}

SubwordVectorTable build_subword_vectors(const Vocabulary& vocab,
                                         const ExternalEmbeddings& ext,
                                         const BpeTokenizer& tok) {
    std::unordered_map<std::string, std::pair<std::vector<double>, std::size_t>>
        acc;
    for (const auto& [word, vec] : ext.vectors) {
        // Tokens this word supports: its tokenization, itself, and its
        // marker-prefixed form — deduplicated so each word counts once.
        std::set<std::string> touched;
        for (const std::string& sym : tok.word_symbols(word)) {
            touched.insert(sym);
        }
        touched.insert(word);
        touched.insert(std::string(kWordMarker) + word);
        for (const std::string& t : touched) {
            if (vocab.find(t) == Vocabulary::kNotFound) continue;
            auto& [sum, support] = acc[t];
            if (sum.empty()) sum.assign(ext.dim, 0.0);
            for (std::size_t i = 0; i < ext.dim; ++i) sum[i] += vec[i];
            ++support;
        }
    }
    SubwordVectorTable table;
    for (auto& [token, entry] : acc) {
        auto& [sum, support] = entry;
        for (double& v : sum) v /= static_cast<double>(support);
        table.emplace(token, std::move(sum));
    }
    return table;
}

FactorizedEmbedding factorize(const Matrix& embedding, std::size_t d) {
    if (d < 1 || d > embedding.cols()) {
        throw ArgumentError("factorize: d " + std::to_string(d) +
                            " outside [1, " +
                            std::to_string(embedding.cols()) + "]");
    }
    const Svd svd = svd_jacobi(embedding);
    const std::size_t r = svd.sigma.size();

    FactorizedEmbedding fe;
    fe.d = d;
    fe.f = Matrix(embedding.rows(), d);
    fe.p = Matrix(d, embedding.cols());
    // Columns beyond the decomposition's rank bound stay zero.
    for (std::size_t j = 0; j < std::min(d, r); ++j) {
        for (std::size_t i = 0; i < embedding.rows(); ++i) {
            fe.f(i, j) = svd.u(i, j) * svd.sigma[j];
        }
        for (std::size_t i = 0; i < embedding.cols(); ++i) {
            fe.p(j, i) = svd.v(i, j);
        }
    }
    return fe;
}

Matrix reconstruct(const FactorizedEmbedding& fe) {
    return matmul(fe.f, fe.p);
}

std::string init_report_json(const InitReport& report) {
    nlohmann::json j{{"copied", report.copied},
                     {"similarity_initialized", report.similarity_initialized},
                     {"fallback_random", report.fallback_random},
                     {"total", report.total()},
                     {"mean_top1_similarity", report.mean_top1_similarity}};
    return j.dump(2) + "\n";
}

void save_init_report(const InitReport& report, const std::string& path) {
    binio::write_file(path, init_report_json(report));
}

InformedInitResult informed_init(const FactorizedEmbedding& fe_source,
                                 const Vocabulary& source_vocab,
                                 const Vocabulary& target_vocab,
                                 const OverlapMap& map,
                                 const SubwordVectorTable& ext_vectors,
                                 std::size_t k, std::uint64_t seed) {
    if (k < 1) throw ArgumentError("informed_init: k must be at least 1");
    if (fe_source.f.rows() != source_vocab.size()) {
        throw ArgumentError(
            "informed_init: factorization covers " +
            std::to_string(fe_source.f.rows()) + " rows, source vocabulary " +
            "has " + std::to_string(source_vocab.size()) + " tokens");
    }

    // Source neighbor candidates: every source token with an external
    // vector, in id order.
    std::vector<std::uint32_t> candidates;
    for (std::uint32_t s = 0; s < source_vocab.size(); ++s) {
        if (ext_vectors.count(source_vocab.token(s))) candidates.push_back(s);
    }

    const ColumnStats stats = column_stats(fe_source.f);
    const std::size_t d = fe_source.f.cols();

    InformedInitResult out;
    out.f_target = Matrix(target_vocab.size(), d);
    double top1_sum = 0.0;

    for (std::uint32_t t = 0; t < target_vocab.size(); ++t) {
        auto shared_it = map.shared.find(t);
        if (shared_it != map.shared.end()) {
            const std::uint32_t s = shared_it->second;
            for (std::size_t j = 0; j < d; ++j) {
                out.f_target(t, j) = fe_source.f(s, j);
            }
            ++out.report.copied;
            continue;
        }

        // Novel token: rank source candidates by cosine similarity.
        std::vector<std::pair<std::uint32_t, double>> scored;
        auto vec_it = ext_vectors.find(target_vocab.token(t));
        if (vec_it != ext_vectors.end()) {
            for (std::uint32_t s : candidates) {
                const double sim =
                    cosine(vec_it->second,
                           ext_vectors.at(source_vocab.token(s)));
                if (sim > 0.0) scored.emplace_back(s, sim);
            }
            std::stable_sort(scored.begin(), scored.end(),
                             [](const auto& a, const auto& b) {
                                 return a.second > b.second;
                             });  // stable keeps lower ids first on ties
            if (scored.size() > k) scored.resize(k);
        }

        if (!scored.empty()) {
            double total = 0.0;
            for (const auto& [s, sim] : scored) total += sim;
            std::vector<std::pair<std::uint32_t, double>> weighted;
            for (const auto& [s, sim] : scored) {
                const double w = sim / total;
                weighted.emplace_back(s, w);
                for (std::size_t j = 0; j < d; ++j) {
                    out.f_target(t, j) += w * fe_source.f(s, j);
                }
            }
            top1_sum += scored.front().second;
            out.neighbors.emplace(t, std::move(weighted));
            ++out.report.similarity_initialized;
        } else {
            Rng rng(derive_seed(seed, t));
            for (std::size_t j = 0; j < d; ++j) {
                out.f_target(t, j) =
                    stats.mean[j] + stats.std[j] * rng.normal();
            }
            ++out.report.fallback_random;
        }
    }

    if (out.report.similarity_initialized > 0) {
        out.report.mean_top1_similarity =
            top1_sum / static_cast<double>(out.report.similarity_initialized);
    }
    return out;
}

Matrix random_init(const Matrix& source_embedding,
                   const Vocabulary& target_vocab, const OverlapMap& map,
                   std::uint64_t seed) {
    // Global scalar statistics over every source entry.
    double mean = 0.0, var = 0.0;
    const std::size_t n = source_embedding.rows() * source_embedding.cols();
    for (std::size_t i = 0; i < n; ++i) mean += source_embedding.data()[i];
    if (n > 0) mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double dv = source_embedding.data()[i] - mean;
        var += dv * dv;
    }
    const double std = n > 0 ? std::sqrt(var / static_cast<double>(n)) : 0.0;

    Matrix out(target_vocab.size(), source_embedding.cols());
    for (std::uint32_t t = 0; t < target_vocab.size(); ++t) {
        auto shared_it = map.shared.find(t);
        if (shared_it != map.shared.end()) {
            for (std::size_t j = 0; j < out.cols(); ++j) {
                out(t, j) = source_embedding(shared_it->second, j);
            }
        } else {
            Rng rng(derive_seed(seed, t));
            for (std::size_t j = 0; j < out.cols(); ++j) {
                out(t, j) = mean + std * rng.normal();
            }
        }
    }
    return out;
}

Checkpoint transplant(const Checkpoint& source, const Matrix& new_embedding,
                      const BpeTokenizer& target_tok) {
    if (new_embedding.cols() != source.config.dim) {
        throw ConfigurationError(
            "transplant: embedding dimension " +
            std::to_string(new_embedding.cols()) + ", model expects " +
            std::to_string(source.config.dim));
    }
    if (new_embedding.rows() != target_tok.vocabulary().size()) {
        throw ConfigurationError(
            "transplant: embedding has " +
            std::to_string(new_embedding.rows()) + " rows, tokenizer " +
            "vocabulary has " +
            std::to_string(target_tok.vocabulary().size()) + " tokens");
    }
    Checkpoint out;
    out.config = source.config;
    out.config.vocab_size = new_embedding.rows();
    out.tensors = source.tensors;
    out.tensors.at("token_embedding") = new_embedding;
    out.tokenizer = target_tok;
    validate_checkpoint(out);
    return out;
}

Checkpoint transplant(const Checkpoint& source, const FactorizedEmbedding& fe,
                      const BpeTokenizer& target_tok) {
    return transplant(source, reconstruct(fe), target_tok);
}

void save_embedding_matrix(const Matrix& m, const std::string& path) {
    std::string blob;
    blob.reserve(16 + m.rows() * m.cols() * 4);
    blob += "EMB1";
    binio::put_u32_le(blob, static_cast<std::uint32_t>(m.rows()));
    binio::put_u32_le(blob, static_cast<std::uint32_t>(m.cols()));
    binio::put_u32_le(blob, 0);
    for (std::size_t i = 0; i < m.rows() * m.cols(); ++i) {
        binio::put_f32_le(blob, static_cast<float>(m.data()[i]));
    }
    binio::write_file(path, blob);
}

Matrix load_embedding_matrix(const std::string& path) {
    const std::string blob = binio::read_file(path);
    if (blob.size() < 16 || blob.substr(0, 4) != "EMB1") {
        throw ParseError(path + ": not an EMB1 file");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
    const std::size_t rows = binio::get_u32_le(p + 4);
    const std::size_t cols = binio::get_u32_le(p + 8);
    if (blob.size() != 16 + rows * cols * 4) {
        throw ParseError(path + ": size does not match header (" +
                         std::to_string(rows) + "x" + std::to_string(cols) +
                         ")");
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        m.data()[i] = static_cast<double>(binio::get_f32_le(p + 16 + 4 * i));
    }
    return m;
}

}  // namespace graftbench
