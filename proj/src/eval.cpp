#include "dmc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "dmc/error.hpp"

namespace dmc {
namespace {

constexpr std::size_t kQueryBlock = 32;
constexpr std::size_t kCorpusBlock = 256;

template <typename Fn>
void parallel_for_blocks(std::size_t n_blocks, unsigned threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), std::max<std::size_t>(n_blocks, 1));
  if (workers <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) fn(b);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> failures(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t b = w; b < n_blocks; b += workers) fn(b);
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
}

}  // namespace

std::vector<NeighborList> nn_search(const DenseMatrix& queries, const DenseMatrix& corpus,
                                    std::size_t k, unsigned threads) {
  if (k < 1 || k > corpus.rows) {
    throw Error(ErrorKind::KTooLarge, "k = " + std::to_string(k) + " for corpus of " + std::to_string(corpus.rows));
  }
  if (queries.rows > 0 && queries.cols != corpus.cols) {
    throw Error(ErrorKind::DimensionMismatch, "query dim " + std::to_string(queries.cols) +
                                                  " vs corpus dim " + std::to_string(corpus.cols));
  }
  const std::size_t nq = queries.rows;
  const std::size_t nc = corpus.rows;
  const std::size_t d = corpus.cols;
  std::vector<NeighborList> out(nq);
  const std::size_t n_blocks = (nq + kQueryBlock - 1) / kQueryBlock;

  parallel_for_blocks(n_blocks, threads, [&](std::size_t block) {
    const std::size_t q0 = block * kQueryBlock;
    const std::size_t q1 = std::min(nq, q0 + kQueryBlock);
    std::vector<double> sims((q1 - q0) * nc);
    for (std::size_t c0 = 0; c0 < nc; c0 += kCorpusBlock) {
      const std::size_t c1 = std::min(nc, c0 + kCorpusBlock);
      for (std::size_t q = q0; q < q1; ++q) {
        const double* qv = queries.values.data() + q * d;
        double* row = sims.data() + (q - q0) * nc;
        for (std::size_t c = c0; c < c1; ++c) {
          const double* cv = corpus.values.data() + c * d;
          double s = 0.0;
          for (std::size_t t = 0; t < d; ++t) s += qv[t] * cv[t];
          row[c] = s;
        }
      }
    }
    std::vector<std::size_t> order(nc);
    for (std::size_t q = q0; q < q1; ++q) {
      const double* row = sims.data() + (q - q0) * nc;
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [row](std::size_t a, std::size_t b) {
                          return row[a] > row[b] || (row[a] == row[b] && a < b);
                        });
      auto& nl = out[q];
      nl.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
      nl.sims.resize(k);
      for (std::size_t r = 0; r < k; ++r) nl.sims[r] = row[nl.indices[r]];
    }
  });
  return out;
}

RetrievalAccuracy retrieval_accuracy(const DenseMatrix& src, const DenseMatrix& tgt, unsigned threads) {
  if (src.rows != tgt.rows) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(src.rows) + " vs " + std::to_string(tgt.rows) + " rows");
  }
  if (src.rows == 0) throw Error(ErrorKind::LengthMismatch, "no rows to evaluate");
  auto hits = [&](const DenseMatrix& q, const DenseMatrix& c) {
    const auto nn = nn_search(q, c, 1, threads);
    std::size_t h = 0;
    for (std::size_t i = 0; i < nn.size(); ++i) h += nn[i].indices[0] == i ? 1 : 0;
    return static_cast<double>(h) / static_cast<double>(nn.size());
  };
  return {hits(src, tgt), hits(tgt, src)};
}

std::string_view to_string(MarginVariant v) noexcept {
  return v == MarginVariant::Distance ? "distance" : "ratio";
}

MarginVariant parse_margin_variant(std::string_view name) {
  if (name == "distance") return MarginVariant::Distance;
  if (name == "ratio") return MarginVariant::Ratio;
  throw Error(ErrorKind::ConfigInvalid, "margin: unknown variant '" + std::string(name) + "'");
}

double margin_score(double cos_xy, std::span<const double> x_neighbor_sims,
                    std::span<const double> y_neighbor_sims, std::size_t k, MarginVariant variant) {
  if (k < 1 || k > x_neighbor_sims.size() || k > y_neighbor_sims.size()) {
    throw Error(ErrorKind::KTooLarge, "k = " + std::to_string(k) + " exceeds available neighbors");
  }
  const double denom = 2.0 * static_cast<double>(k);
  double b = 0.0;
  for (std::size_t r = 0; r < k; ++r) b += x_neighbor_sims[r] / denom;
  for (std::size_t r = 0; r < k; ++r) b += y_neighbor_sims[r] / denom;
  if (variant == MarginVariant::Distance) return cos_xy - b;
  if (!(b > kNormEpsilon)) throw Error(ErrorKind::ZeroDenominator, "ratio margin with neighborhood mean <= 0");
  return cos_xy / b;
}

double margin_score(std::size_t i, std::size_t j, const DenseMatrix& embs_a,
                    const DenseMatrix& embs_b, const std::vector<NeighborList>& nn_a,
                    const std::vector<NeighborList>& nn_b, std::size_t k, MarginVariant variant) {
  const double cos_xy = dot(embs_a.row(i), embs_b.row(j));
  return margin_score(cos_xy, nn_a.at(i).sims, nn_b.at(j).sims, k, variant);
}

std::vector<ScoredPair> score_candidates(const DenseMatrix& embs_a, const DenseMatrix& embs_b,
                                         std::size_t k, MarginVariant variant, CandidateMode mode,
                                         unsigned threads) {
  if (embs_a.rows == 0 || embs_b.rows == 0) throw Error(ErrorKind::EmptySide, "mining side is empty");
  const auto nn_a = nn_search(embs_a, embs_b, k, threads);
  const auto nn_b = nn_search(embs_b, embs_a, k, threads);
  std::set<IndexPair> pairs;
  if (mode == CandidateMode::Exhaustive) {
    for (std::size_t i = 0; i < embs_a.rows; ++i) {
      for (std::size_t j = 0; j < embs_b.rows; ++j) pairs.emplace(i, j);
    }
  } else {
    for (std::size_t i = 0; i < embs_a.rows; ++i) pairs.emplace(i, nn_a[i].indices[0]);
    for (std::size_t j = 0; j < embs_b.rows; ++j) pairs.emplace(nn_b[j].indices[0], j);
  }
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    out.push_back({i, j, margin_score(i, j, embs_a, embs_b, nn_a, nn_b, k, variant)});
  }
  return out;
}

std::vector<ScoredPair> accept_above(const std::vector<ScoredPair>& candidates, double threshold) {
  std::vector<ScoredPair> out;
  for (const auto& c : candidates) {
    if (c.score > threshold) out.push_back(c);
  }
  return out;
}

MiningResult mine_bitext(const DenseMatrix& embs_a, const DenseMatrix& embs_b, std::size_t k,
                         MarginVariant variant, double threshold, CandidateMode mode, unsigned threads) {
  if (std::isnan(threshold)) throw Error(ErrorKind::ConfigInvalid, "threshold is NaN");
  MiningResult r;
  r.candidates = score_candidates(embs_a, embs_b, k, variant, mode, threads);
  r.accepted = accept_above(r.candidates, threshold);
  r.threshold = threshold;
  return r;
}

PrecisionRecall f1_score(const std::vector<IndexPair>& predicted, const std::vector<IndexPair>& gold) {
  const std::set<IndexPair> p(predicted.begin(), predicted.end());
  const std::set<IndexPair> g(gold.begin(), gold.end());
  PrecisionRecall r;
  if (p.empty()) return r;
  std::size_t tp = 0;
  for (const auto& x : p) tp += g.count(x);
  r.precision = static_cast<double>(tp) / static_cast<double>(p.size());
  r.recall = g.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(g.size());
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

std::vector<IndexPair> pairs_of(const std::vector<ScoredPair>& scored) {
  std::vector<IndexPair> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.emplace_back(s.i, s.j);
  return out;
}

ThresholdChoice search_threshold(const std::vector<ScoredPair>& candidates,
                                 const std::vector<IndexPair>& gold) {
  const std::set<IndexPair> gold_set(gold.begin(), gold.end());
  if (gold_set.empty()) throw Error(ErrorKind::NoGold, "threshold search needs at least one gold pair");
  std::vector<ScoredPair> sorted;
  {
    std::set<IndexPair> seen;
    for (const auto& c : candidates) {
      if (seen.emplace(c.i, c.j).second) sorted.push_back(c);
    }
  }
  std::sort(sorted.begin(), sorted.end(), [](const ScoredPair& a, const ScoredPair& b) { return a.score > b.score; });

  const double n_gold = static_cast<double>(gold_set.size());
  auto metrics = [&](std::size_t tp, std::size_t predicted) {
    PrecisionRecall m;
    if (predicted == 0) return m;
    m.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    m.recall = static_cast<double>(tp) / n_gold;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
  };

  // Thresholds visited from largest to smallest; strict improvement keeps the larger one.
  ThresholdChoice best{std::numeric_limits<double>::infinity(), metrics(0, 0)};
  std::size_t tp = 0;
  std::size_t idx = 0;
  while (idx < sorted.size()) {
    const double s = sorted[idx].score;
    while (idx < sorted.size() && sorted[idx].score == s) {
      tp += gold_set.count({sorted[idx].i, sorted[idx].j});
      ++idx;
    }
    const double threshold = idx < sorted.size() ? 0.5 * (s + sorted[idx].score)
                                                 : -std::numeric_limits<double>::infinity();
    const auto m = metrics(tp, idx);
    if (m.f1 > best.metrics.f1) best = {threshold, m};
  }
  return best;
}

double sts_eval(const EncoderParams& encoder, const std::vector<StsPair>& pairs, PoolingMode pooling,
                unsigned threads) {
  if (pairs.empty()) throw Error(ErrorKind::DegenerateInput, "no STS pairs");
  std::vector<TokenSequence> s1, s2;
  std::vector<double> gold;
  for (const auto& p : pairs) {
    s1.push_back(p.sent1);
    s2.push_back(p.sent2);
    gold.push_back(p.gold_sim);
  }
  const auto e1 = encode_batch(encoder, s1, pooling, threads);
  const auto e2 = encode_batch(encoder, s2, pooling, threads);
  std::vector<double> sims(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) sims[i] = dot(e1[i], e2[i]);
  return spearman_correlation(sims, gold);
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

namespace {
constexpr std::string_view kEmbeddingMagic = "DMCE";

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}
}  // namespace

void save_embeddings(const std::filesystem::path& path, const DenseMatrix& embeddings,
                     const std::string& source_corpus) {
  {
    detail::BinaryWriter w(path);
    w.magic(kEmbeddingMagic);
    w.u64(embeddings.rows);
    w.u64(embeddings.cols);
    w.f64s(embeddings.values);
    w.finish();
  }
  nlohmann::json j{{"count", embeddings.rows},
                   {"dim", embeddings.cols},
                   {"source_corpus", source_corpus},
                   {"checksum", file_checksum(path)}};
  std::ofstream out(sidecar_path(path));
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + sidecar_path(path).string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + sidecar_path(path).string());
}

DenseMatrix load_embeddings(const std::filesystem::path& path) {
  DenseMatrix m;
  {
    detail::BinaryReader r(path);
    r.expect_magic(kEmbeddingMagic);
    const auto count = r.u64();
    const auto dim = r.u64();
    if (dim == 0 || count * dim > (std::uint64_t{1} << 32)) {
      throw Error(ErrorKind::ParseError, path.string() + ": implausible embedding dimensions");
    }
    m = DenseMatrix(count, dim);
    r.f64s(m.values);
    if (!r.at_end()) throw Error(ErrorKind::ParseError, path.string() + ": trailing bytes");
  }
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    try {
      const auto j = nlohmann::json::parse(in);
      if (j.at("count").get<std::size_t>() != m.rows || j.at("dim").get<std::size_t>() != m.cols ||
          j.at("checksum").get<std::string>() != file_checksum(path)) {
        throw Error(ErrorKind::ParseError, path.string() + ": sidecar does not match embedding file");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ParseError, side.string() + ": " + e.what());
    }
  }
  return m;
}

}  // namespace dmc
