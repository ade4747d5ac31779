#include "dmc/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmc/error.hpp"

namespace dmc {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::BatchExceedsCapacity: return "BatchExceedsCapacity";
    case ErrorKind::NonUnitKey: return "NonUnitKey";
    case ErrorKind::NonUnitInput: return "NonUnitInput";
    case ErrorKind::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorKind::BatchLengthMismatch: return "BatchLengthMismatch";
    case ErrorKind::InvalidLabel: return "InvalidLabel";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::ZeroDenominator: return "ZeroDenominator";
    case ErrorKind::EmptySide: return "EmptySide";
    case ErrorKind::NoGold: return "NoGold";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
  }
  return "Unknown";
}

double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                "dot of sizes " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

DenseVector l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > kNormEpsilon)) throw Error(ErrorKind::ZeroVector, "cannot normalize a zero vector");
  DenseVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error(ErrorKind::DimensionMismatch, "cosine of unequal sizes");
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (!(nu > kNormEpsilon) || !(nv > kNormEpsilon)) {
    throw Error(ErrorKind::ZeroVector, "cosine with a zero vector");
  }
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    // positions i..j (0-based) share the mean of ranks i+1..j+1
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson_correlation(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorKind::LengthMismatch, "pearson of unequal lengths");
  const std::size_t n = xs.size();
  if (n < 2) throw Error(ErrorKind::DegenerateInput, "need at least two observations");
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw Error(ErrorKind::DegenerateInput, "constant sequence");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman_correlation(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw Error(ErrorKind::LengthMismatch, "spearman of lengths " + std::to_string(xs.size()) +
                                               " and " + std::to_string(ys.size()));
  }
  if (xs.size() < 2) throw Error(ErrorKind::DegenerateInput, "need at least two observations");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson_correlation(rx, ry);
}

DenseMatrix stack_rows(const std::vector<DenseVector>& rows) {
  if (rows.empty()) return {};
  DenseMatrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols) throw Error(ErrorKind::DimensionMismatch, "ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace dmc
