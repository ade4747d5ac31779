#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "dmc/numerics.hpp"

namespace dmc {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;
using EmbeddingVector = DenseVector;

enum class PoolingMode { Mean, Max, FirstToken };

std::string_view to_string(PoolingMode mode) noexcept;
/// Accepts "mean", "max", "first" (also "cls" for FirstToken).
PoolingMode parse_pooling(std::string_view name);

// Toy sentence encoder: embedding lookup -> pool -> affine -> tanh -> L2 norm.
// The same struct carries parameter gradients (see EncoderGrads).
struct EncoderParams {
  DenseMatrix embedding_table;  // vocab_size x d_emb
  DenseMatrix proj_weight;      // d_emb x d_out
  DenseVector proj_bias;        // d_out

  EncoderParams() = default;
  EncoderParams(std::size_t vocab_size, std::size_t d_emb, std::size_t d_out);

  std::size_t vocab_size() const { return embedding_table.rows; }
  std::size_t d_emb() const { return embedding_table.cols; }
  std::size_t d_out() const { return proj_bias.size(); }

  bool same_shape(const EncoderParams& other) const;
  std::size_t parameter_count() const;

  std::array<std::span<double>, 3> tensors();
  std::array<std::span<const double>, 3> tensors() const;

  /// Embeddings ~ N(0, 1), projection ~ N(0, 1/d_emb), zero bias.
  static EncoderParams random(std::size_t vocab_size, std::size_t d_emb, std::size_t d_out,
                              std::mt19937_64& rng);

  bool operator==(const EncoderParams&) const = default;
};

using EncoderGrads = EncoderParams;

/// Pooled token embeddings (before projection).
DenseVector pool_embeddings(const EncoderParams& params, std::span<const TokenId> tokens,
                            PoolingMode pooling);

EmbeddingVector encode(const EncoderParams& params, std::span<const TokenId> tokens,
                       PoolingMode pooling);

/// Element i is bit-identical to encode(params, batch[i], pooling). With threads > 1
/// the batch is split into contiguous chunks encoded concurrently.
std::vector<EmbeddingVector> encode_batch(const EncoderParams& params,
                                          std::span<const TokenSequence> batch,
                                          PoolingMode pooling, unsigned threads = 1);

/// Gradient of sum_i upstream[i] . encode(batch[i]) with respect to params.
EncoderGrads encode_backward(const EncoderParams& params, std::span<const TokenSequence> batch,
                             PoolingMode pooling, std::span<const DenseVector> upstream);

/// Accumulating form of encode_backward; `grads` must have the shape of `params`.
void accumulate_encode_backward(const EncoderParams& params, std::span<const TokenSequence> batch,
                                PoolingMode pooling, std::span<const DenseVector> upstream,
                                EncoderGrads& grads);

// Checkpoint layout: "DMC1", then per encoder (A then B): vocab_size, d_emb, d_out as
// u64 little-endian followed by embedding_table, proj_weight, proj_bias as f64 LE row-major.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams& encoder_a,
                     const EncoderParams& encoder_b);
std::pair<EncoderParams, EncoderParams> load_checkpoint(const std::filesystem::path& path);

}  // namespace dmc
