#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dmc/datagen.hpp"
#include "dmc/encoder.hpp"
#include "dmc/numerics.hpp"

namespace dmc {

using IndexPair = std::pair<std::size_t, std::size_t>;

// Top-k neighbors of one query, similarities non-increasing, ties by lower index.
struct NeighborList {
  std::vector<std::size_t> indices;
  std::vector<double> sims;
};

/// Exact top-k by dot product over unit rows. Queries are processed in blocks
/// against corpus blocks; each similarity is an ordinary left-to-right dot product.
std::vector<NeighborList> nn_search(const DenseMatrix& queries, const DenseMatrix& corpus,
                                    std::size_t k, unsigned threads = 1);

struct RetrievalAccuracy {
  double forward = 0.0;   // src -> tgt
  double backward = 0.0;  // tgt -> src
};

/// Fraction of rows whose rank-1 neighbor on the other side is the aligned row.
RetrievalAccuracy retrieval_accuracy(const DenseMatrix& src, const DenseMatrix& tgt,
                                     unsigned threads = 1);

enum class MarginVariant { Distance, Ratio };
std::string_view to_string(MarginVariant v) noexcept;
MarginVariant parse_margin_variant(std::string_view name);

/// margin(cos_xy, sum_{NN_k(x)} cos/2k + sum_{NN_k(y)} cos/2k); distance: a - b, ratio: a / b.
double margin_score(double cos_xy, std::span<const double> x_neighbor_sims,
                    std::span<const double> y_neighbor_sims, std::size_t k, MarginVariant variant);

/// Same score for the pair (i, j) given the neighbor lists of side A rows (among B)
/// and side B rows (among A).
double margin_score(std::size_t i, std::size_t j, const DenseMatrix& embs_a,
                    const DenseMatrix& embs_b, const std::vector<NeighborList>& nn_a,
                    const std::vector<NeighborList>& nn_b, std::size_t k, MarginVariant variant);

struct ScoredPair {
  std::size_t i = 0;
  std::size_t j = 0;
  double score = 0.0;
};

enum class CandidateMode { UnionNearest, Exhaustive };

struct MiningResult {
  std::vector<ScoredPair> candidates;
  std::vector<ScoredPair> accepted;  // score > threshold
  double threshold = 0.0;
};

/// Candidates are the union of forward and backward rank-1 pairs (or every pair in
/// Exhaustive mode), scored with margin_score and sorted by (i, j).
std::vector<ScoredPair> score_candidates(const DenseMatrix& embs_a, const DenseMatrix& embs_b,
                                         std::size_t k, MarginVariant variant,
                                         CandidateMode mode = CandidateMode::UnionNearest,
                                         unsigned threads = 1);

std::vector<ScoredPair> accept_above(const std::vector<ScoredPair>& candidates, double threshold);

MiningResult mine_bitext(const DenseMatrix& embs_a, const DenseMatrix& embs_b, std::size_t k,
                         MarginVariant variant, double threshold,
                         CandidateMode mode = CandidateMode::UnionNearest, unsigned threads = 1);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Set-overlap precision/recall/F1; duplicates are ignored; empty prediction -> zeros.
PrecisionRecall f1_score(const std::vector<IndexPair>& predicted, const std::vector<IndexPair>& gold);

std::vector<IndexPair> pairs_of(const std::vector<ScoredPair>& scored);

struct ThresholdChoice {
  double threshold = 0.0;
  PrecisionRecall metrics;
};

/// Sweeps midpoints between consecutive distinct candidate scores plus +/-inf;
/// maximizes F1 against `gold`, preferring the larger threshold on ties.
ThresholdChoice search_threshold(const std::vector<ScoredPair>& candidates,
                                 const std::vector<IndexPair>& gold);

/// Spearman rho between dot-product similarity and gold_sim.
double sts_eval(const EncoderParams& encoder, const std::vector<StsPair>& pairs,
                PoolingMode pooling, unsigned threads = 1);

// Embedding dump: "DMCE", count, dim (u64 LE), then count x dim f64 row-major.
// A JSON sidecar <path>.json records {count, dim, source_corpus, checksum}.
void save_embeddings(const std::filesystem::path& path, const DenseMatrix& embeddings,
                     const std::string& source_corpus);
/// Verifies the sidecar checksum when the sidecar exists.
DenseMatrix load_embeddings(const std::filesystem::path& path);

/// FNV-1a 64-bit over a file's bytes, as 16 lowercase hex digits.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace dmc
