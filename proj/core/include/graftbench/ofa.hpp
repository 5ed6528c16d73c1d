#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "graftbench/checkpoint.hpp"
#include "graftbench/matrix.hpp"
#include "graftbench/tokenizer.hpp"

namespace graftbench {

/// Word vectors from a word2vec-format text file. Words are NFC-normalized;
/// duplicate words keep the first occurrence.
struct ExternalEmbeddings {
    std::unordered_map<std::string, std::vector<double>> vectors;
    std::size_t dim = 0;
    std::size_t duplicates_ignored = 0;
};

/// Text format: header line `count dim`, then `word v1 ... vdim` per line.
/// Throws ParseError (with line number) on arity mismatches, non-finite
/// values, or a row count that disagrees with the header.
ExternalEmbeddings load_external_embeddings(const std::string& path);

/// External vector attributed to one subword: the mean over matching words.
struct SubwordExternalVector {
    std::string subword;
    std::vector<double> vector;  // empty iff support == 0
    std::size_t support = 0;
};

/// A word matches a subword when the subword appears in the word's
/// tokenization, or when the subword minus its word marker equals the word.
SubwordExternalVector subword_external_vector(std::string_view subword,
                                              const ExternalEmbeddings& ext,
                                              const BpeTokenizer& tok);

/// token string -> external vector, for tokens with nonzero support.
using SubwordVectorTable =
    std::unordered_map<std::string, std::vector<double>>;

/// Applies the matching rule to every vocabulary token in one pass over the
/// external words.
SubwordVectorTable build_subword_vectors(const Vocabulary& vocab,
                                         const ExternalEmbeddings& ext,
                                         const BpeTokenizer& tok);

/// Low-rank embedding factorization E ≈ F·P: F holds per-token coordinates
/// (|V|×d), P the shared primitives (d×D).
struct FactorizedEmbedding {
    Matrix f;
    Matrix p;
    std::size_t d = 0;
};

/// Truncated SVD with the canonical sign convention (largest-magnitude
/// entry of each right singular vector positive): F = U_d Σ_d, P = V_dᵀ.
/// Throws ArgumentError for d outside [1, D].
FactorizedEmbedding factorize(const Matrix& embedding, std::size_t d);

/// F·P, shape |V|×D.
Matrix reconstruct(const FactorizedEmbedding& fe);

/// How each target row was produced; counts partition the target vocabulary.
struct InitReport {
    std::size_t copied = 0;
    std::size_t similarity_initialized = 0;
    std::size_t fallback_random = 0;
    double mean_top1_similarity = 0.0;

    std::size_t total() const {
        return copied + similarity_initialized + fallback_random;
    }
};

std::string init_report_json(const InitReport& report);
void save_init_report(const InitReport& report, const std::string& path);

struct InformedInitResult {
    Matrix f_target;  // |target vocab| × d
    InitReport report;
    /// Neighbor ids and convex weights per similarity-initialized target id.
    std::unordered_map<std::uint32_t,
                       std::vector<std::pair<std::uint32_t, double>>>
        neighbors;
};

/// Shared rows are copied verbatim from fe_source.f. A novel row with an
/// external vector becomes the similarity-weighted convex combination of
/// its top-k source neighbors by cosine similarity (positive similarities
/// only; boundary ties to the lower source id). Novel rows without a
/// usable neighbor set are sampled from per-column Gaussian statistics of
/// F_source, with the per-token seed derived from (seed, target id) so any
/// evaluation order gives identical output. map keys index target_vocab:
/// pass merged_overlap's map when target_vocab is a merged vocabulary and
/// extend_vocabulary's when it is the target tokenizer's own.
InformedInitResult informed_init(const FactorizedEmbedding& fe_source,
                                 const Vocabulary& source_vocab,
                                 const Vocabulary& target_vocab,
                                 const OverlapMap& map,
                                 const SubwordVectorTable& ext_vectors,
                                 std::size_t k, std::uint64_t seed);

/// Baseline: shared rows copied, novel rows drawn from a Gaussian fit to
/// all entries of the source embedding.
Matrix random_init(const Matrix& source_embedding,
                   const Vocabulary& target_vocab, const OverlapMap& map,
                   std::uint64_t seed);

/// New model = source model with the token embedding replaced and the
/// tokenizer swapped; every non-embedding tensor is copied bit-for-bit.
/// The tied output projection follows the new embedding automatically.
/// Throws ConfigurationError listing expected/actual shapes.
Checkpoint transplant(const Checkpoint& source, const Matrix& new_embedding,
                      const BpeTokenizer& target_tok);
Checkpoint transplant(const Checkpoint& source,
                      const FactorizedEmbedding& fe,
                      const BpeTokenizer& target_tok);

/// Embedding matrix file: 16-byte header (magic "EMB1", u32 rows, u32
/// cols, u32 reserved zero, little-endian), then row-major float32.
void save_embedding_matrix(const Matrix& m, const std::string& path);
Matrix load_embedding_matrix(const std::string& path);

}  // namespace graftbench
