#include "dmc/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "binary_io.hpp"
#include "dmc/error.hpp"

namespace dmc {

std::string_view to_string(PoolingMode mode) noexcept {
  switch (mode) {
    case PoolingMode::Mean: return "mean";
    case PoolingMode::Max: return "max";
    case PoolingMode::FirstToken: return "first";
  }
  return "mean";
}

PoolingMode parse_pooling(std::string_view name) {
  if (name == "mean") return PoolingMode::Mean;
  if (name == "max") return PoolingMode::Max;
  if (name == "first" || name == "cls") return PoolingMode::FirstToken;
  throw Error(ErrorKind::ConfigInvalid, "pooling: unknown mode '" + std::string(name) + "'");
}

EncoderParams::EncoderParams(std::size_t vocab_size, std::size_t d_emb, std::size_t d_out)
    : embedding_table(vocab_size, d_emb), proj_weight(d_emb, d_out), proj_bias(d_out, 0.0) {}

bool EncoderParams::same_shape(const EncoderParams& other) const {
  return vocab_size() == other.vocab_size() && d_emb() == other.d_emb() && d_out() == other.d_out();
}

std::size_t EncoderParams::parameter_count() const {
  return embedding_table.values.size() + proj_weight.values.size() + proj_bias.size();
}

std::array<std::span<double>, 3> EncoderParams::tensors() {
  return {std::span<double>(embedding_table.values), std::span<double>(proj_weight.values),
          std::span<double>(proj_bias)};
}

std::array<std::span<const double>, 3> EncoderParams::tensors() const {
  return {std::span<const double>(embedding_table.values),
          std::span<const double>(proj_weight.values), std::span<const double>(proj_bias)};
}

EncoderParams EncoderParams::random(std::size_t vocab_size, std::size_t d_emb, std::size_t d_out,
                                    std::mt19937_64& rng) {
  if (vocab_size < 1 || d_emb < 1 || d_out < 2) {
    throw Error(ErrorKind::ConfigInvalid, "encoder dims need vocab >= 1, d_emb >= 1, d_out >= 2");
  }
  EncoderParams p(vocab_size, d_emb, d_out);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (double& v : p.embedding_table.values) v = unit(rng);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_emb));
  for (double& v : p.proj_weight.values) v = unit(rng) * scale;
  return p;
}

namespace {

void check_tokens(const EncoderParams& params, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw Error(ErrorKind::DegenerateInput, "empty token sequence");
  for (TokenId t : tokens) {
    if (t >= params.vocab_size()) {
      throw Error(ErrorKind::TokenOutOfRange, "token " + std::to_string(t) + " >= vocab size " +
                                                  std::to_string(params.vocab_size()));
    }
  }
}

// Forward intermediates needed by the backward pass.
struct ForwardTrace {
  DenseVector pooled;               // d_emb
  std::vector<std::size_t> argmax;  // d_emb, Max pooling only: token position
  DenseVector activation;           // tanh output, d_out
  double norm = 0.0;
  DenseVector output;               // unit-norm, d_out
};

ForwardTrace forward(const EncoderParams& params, std::span<const TokenId> tokens,
                     PoolingMode pooling, bool pool_only = false) {
  check_tokens(params, tokens);
  const std::size_t d_emb = params.d_emb();
  const std::size_t d_out = params.d_out();
  ForwardTrace tr;
  tr.pooled.assign(d_emb, 0.0);
  switch (pooling) {
    case PoolingMode::Mean: {
      for (TokenId t : tokens) {
        const auto row = params.embedding_table.row(t);
        for (std::size_t c = 0; c < d_emb; ++c) tr.pooled[c] += row[c];
      }
      const double inv = 1.0 / static_cast<double>(tokens.size());
      for (double& v : tr.pooled) v *= inv;
      break;
    }
    case PoolingMode::Max: {
      tr.argmax.assign(d_emb, 0);
      const auto first = params.embedding_table.row(tokens[0]);
      std::copy(first.begin(), first.end(), tr.pooled.begin());
      for (std::size_t pos = 1; pos < tokens.size(); ++pos) {
        const auto row = params.embedding_table.row(tokens[pos]);
        for (std::size_t c = 0; c < d_emb; ++c) {
          // strict comparison keeps the earliest position on ties
          if (row[c] > tr.pooled[c]) {
            tr.pooled[c] = row[c];
            tr.argmax[c] = pos;
          }
        }
      }
      break;
    }
    case PoolingMode::FirstToken: {
      const auto row = params.embedding_table.row(tokens[0]);
      std::copy(row.begin(), row.end(), tr.pooled.begin());
      break;
    }
  }
  if (pool_only) return tr;

  tr.activation = params.proj_bias;
  for (std::size_t r = 0; r < d_emb; ++r) {
    const double p = tr.pooled[r];
    const auto w = params.proj_weight.row(r);
    for (std::size_t c = 0; c < d_out; ++c) tr.activation[c] += p * w[c];
  }
  for (double& v : tr.activation) v = std::tanh(v);
  tr.norm = l2_norm(tr.activation);
  if (std::isnan(tr.norm)) throw Error(ErrorKind::NumericalFailure, "encoder produced NaN");
  if (!(tr.norm > kNormEpsilon)) {
    throw Error(ErrorKind::ZeroVector, "encoder output vanished before normalization");
  }
  tr.output.resize(d_out);
  for (std::size_t c = 0; c < d_out; ++c) tr.output[c] = tr.activation[c] / tr.norm;
  return tr;
}

}  // namespace

DenseVector pool_embeddings(const EncoderParams& params, std::span<const TokenId> tokens,
                            PoolingMode pooling) {
  return forward(params, tokens, pooling, true).pooled;
}

EmbeddingVector encode(const EncoderParams& params, std::span<const TokenId> tokens,
                       PoolingMode pooling) {
  return forward(params, tokens, pooling).output;
}

std::vector<EmbeddingVector> encode_batch(const EncoderParams& params,
                                          std::span<const TokenSequence> batch,
                                          PoolingMode pooling, unsigned threads) {
  std::vector<EmbeddingVector> out(batch.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        out[i] = encode(params, batch[i], pooling);
      } catch (const Error& e) {
        throw Error(e.kind(), "batch index " + std::to_string(i) + ": " + e.message());
      }
    }
  };
  const std::size_t n = batch.size();
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    run(0, n);
    return out;
  }
  std::vector<std::exception_ptr> failures(workers);
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&, w, begin, end] {
      try {
        run(begin, end);
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return out;
}

void accumulate_encode_backward(const EncoderParams& params, std::span<const TokenSequence> batch,
                                PoolingMode pooling, std::span<const DenseVector> upstream,
                                EncoderGrads& grads) {
  if (upstream.size() != batch.size()) {
    throw Error(ErrorKind::ShapeMismatch, "upstream count " + std::to_string(upstream.size()) +
                                              " != batch size " + std::to_string(batch.size()));
  }
  if (!grads.same_shape(params)) throw Error(ErrorKind::ShapeMismatch, "gradient buffer shape");
  const std::size_t d_emb = params.d_emb();
  const std::size_t d_out = params.d_out();
  DenseVector d_act(d_out), d_pre(d_out), d_pooled(d_emb);

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& g = upstream[i];
    if (g.size() != d_out) {
      throw Error(ErrorKind::ShapeMismatch, "upstream[" + std::to_string(i) + "] has dimension " +
                                                std::to_string(g.size()));
    }
    const ForwardTrace tr = forward(params, batch[i], pooling);

    // through h = a / ||a||
    const double gh = dot(g, tr.output);
    for (std::size_t c = 0; c < d_out; ++c) d_act[c] = (g[c] - gh * tr.output[c]) / tr.norm;
    // through tanh
    for (std::size_t c = 0; c < d_out; ++c) {
      d_pre[c] = d_act[c] * (1.0 - tr.activation[c] * tr.activation[c]);
    }
    // through the affine map
    for (std::size_t c = 0; c < d_out; ++c) grads.proj_bias[c] += d_pre[c];
    for (std::size_t r = 0; r < d_emb; ++r) {
      const double p = tr.pooled[r];
      const auto w = params.proj_weight.row(r);
      auto gw = grads.proj_weight.row(r);
      double acc = 0.0;
      for (std::size_t c = 0; c < d_out; ++c) {
        gw[c] += p * d_pre[c];
        acc += w[c] * d_pre[c];
      }
      d_pooled[r] = acc;
    }
    // scatter into the embedding table
    const auto& tokens = batch[i];
    switch (pooling) {
      case PoolingMode::Mean: {
        const double inv = 1.0 / static_cast<double>(tokens.size());
        for (TokenId t : tokens) {
          auto row = grads.embedding_table.row(t);
          for (std::size_t c = 0; c < d_emb; ++c) row[c] += d_pooled[c] * inv;
        }
        break;
      }
      case PoolingMode::Max:
        for (std::size_t c = 0; c < d_emb; ++c) {
          grads.embedding_table(tokens[tr.argmax[c]], c) += d_pooled[c];
        }
        break;
      case PoolingMode::FirstToken: {
        auto row = grads.embedding_table.row(tokens[0]);
        for (std::size_t c = 0; c < d_emb; ++c) row[c] += d_pooled[c];
        break;
      }
    }
  }
}

EncoderGrads encode_backward(const EncoderParams& params, std::span<const TokenSequence> batch,
                             PoolingMode pooling, std::span<const DenseVector> upstream) {
  EncoderGrads grads(params.vocab_size(), params.d_emb(), params.d_out());
  accumulate_encode_backward(params, batch, pooling, upstream, grads);
  return grads;
}

namespace {

constexpr std::string_view kCheckpointMagic = "DMC1";
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

void write_encoder(detail::BinaryWriter& w, const EncoderParams& p) {
  w.u64(p.vocab_size());
  w.u64(p.d_emb());
  w.u64(p.d_out());
  for (auto t : p.tensors()) w.f64s(t);
}

EncoderParams read_encoder(detail::BinaryReader& r) {
  const auto vocab = r.u64();
  const auto d_emb = r.u64();
  const auto d_out = r.u64();
  if (vocab == 0 || d_emb == 0 || d_out < 2 || vocab * d_emb > kMaxElements ||
      d_emb * d_out > kMaxElements) {
    throw Error(ErrorKind::ParseError, r.path().string() + ": implausible encoder dimensions");
  }
  EncoderParams p(vocab, d_emb, d_out);
  for (auto t : p.tensors()) r.f64s(t);
  for (auto t : p.tensors()) {
    if (!all_finite(t)) throw Error(ErrorKind::ParseError, r.path().string() + ": non-finite parameter");
  }
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& encoder_a,
                     const EncoderParams& encoder_b) {
  detail::BinaryWriter w(path);
  w.magic(kCheckpointMagic);
  write_encoder(w, encoder_a);
  write_encoder(w, encoder_b);
  w.finish();
}

std::pair<EncoderParams, EncoderParams> load_checkpoint(const std::filesystem::path& path) {
  detail::BinaryReader r(path);
  r.expect_magic(kCheckpointMagic);
  auto a = read_encoder(r);
  auto b = read_encoder(r);
  if (!r.at_end()) throw Error(ErrorKind::ParseError, path.string() + ": trailing bytes");
  return {std::move(a), std::move(b)};
}

}  // namespace dmc
