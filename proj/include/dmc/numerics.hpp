#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dmc {

using DenseVector = std::vector<double>;

// Row-major dense matrix. values.size() == rows * cols.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  bool operator==(const DenseMatrix&) const = default;
};

inline constexpr double kNormEpsilon = 1e-12;

double dot(std::span<const double> u, std::span<const double> v);
double l2_norm(std::span<const double> v);

/// Unit-norm copy of `v`. Throws ZeroVector when ||v|| <= 1e-12.
DenseVector l2_normalize(std::span<const double> v);

/// Cosine similarity clamped to [-1, 1].
double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Fractional (average) ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> xs);

double pearson_correlation(std::span<const double> xs, std::span<const double> ys);

/// Spearman's rho: Pearson correlation of average ranks.
/// Throws LengthMismatch, or DegenerateInput for n < 2 or a constant side.
double spearman_correlation(std::span<const double> xs, std::span<const double> ys);

/// Stacks equal-length vectors as matrix rows.
DenseMatrix stack_rows(const std::vector<DenseVector>& rows);

bool all_finite(std::span<const double> v);

}  // namespace dmc
