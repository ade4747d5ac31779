#include "dmc/moco.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "dmc/error.hpp"

namespace dmc {

MemoryQueue::MemoryQueue(std::size_t capacity, std::size_t dim) : slots_(capacity, dim) {
  if (capacity == 0 || dim == 0) throw Error(ErrorKind::ConfigInvalid, "queue capacity and dim must be >= 1");
}

void MemoryQueue::enqueue(std::span<const EmbeddingVector> keys) {
  if (keys.size() > capacity()) {
    throw Error(ErrorKind::BatchExceedsCapacity, std::to_string(keys.size()) + " keys for capacity " +
                                                     std::to_string(capacity()));
  }
  for (const auto& k : keys) {
    if (k.size() != dim()) throw Error(ErrorKind::DimensionMismatch, "key dimension " + std::to_string(k.size()));
    const double n = l2_norm(k);
    if (!(std::abs(n - 1.0) <= kUnitTolerance)) {
      throw Error(ErrorKind::NonUnitKey, "key norm " + std::to_string(n));
    }
  }
  for (const auto& k : keys) {
    std::copy(k.begin(), k.end(), slots_.row(write_index_).begin());
    write_index_ = (write_index_ + 1) % capacity();
  }
  filled_ = std::min(filled_ + keys.size(), capacity());
}

std::vector<EmbeddingVector> MemoryQueue::in_insertion_order() const {
  std::vector<EmbeddingVector> out;
  out.reserve(filled_);
  const std::size_t start = filled_ < capacity() ? 0 : write_index_;
  for (std::size_t i = 0; i < filled_; ++i) {
    const auto row = slots_.row((start + i) % capacity());
    out.emplace_back(row.begin(), row.end());
  }
  return out;
}

MemoryQueue MemoryQueue::from_parts(DenseMatrix slots, std::size_t write_index, std::size_t filled) {
  if (slots.rows == 0 || slots.cols == 0 || write_index >= slots.rows || filled > slots.rows ||
      (filled < slots.rows && write_index != filled)) {
    throw Error(ErrorKind::ParseError, "inconsistent queue bookkeeping");
  }
  MemoryQueue q;
  q.slots_ = std::move(slots);
  q.write_index_ = write_index;
  q.filled_ = filled;
  return q;
}

MemoryQueue enqueue_batch(MemoryQueue queue, std::span<const EmbeddingVector> keys) {
  queue.enqueue(keys);
  return queue;
}

void momentum_update(const EncoderParams& base, MomentumEncoder& momentum) {
  if (!base.same_shape(momentum.params)) throw Error(ErrorKind::ShapeMismatch, "momentum/base shapes differ");
  const double m = momentum.coefficient;
  auto dst = momentum.params.tensors();
  const auto src = base.tensors();
  for (std::size_t t = 0; t < dst.size(); ++t) {
    for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] = m * dst[t][i] + (1.0 - m) * src[t][i];
  }
}

DualMocoState DualMocoState::initialize(EncoderParams base_a, EncoderParams base_b,
                                        std::size_t queue_capacity, double momentum,
                                        double temperature, bool shared_momentum) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::NonPositiveTemperature, "temperature must be > 0");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw Error(ErrorKind::ConfigInvalid, "momentum must lie in [0, 1]");
  if (base_a.d_out() != base_b.d_out()) throw Error(ErrorKind::ShapeMismatch, "encoders disagree on d_out");
  DualMocoState s;
  s.momentum_a = {base_a, momentum};
  s.momentum_b = {base_b, momentum};
  s.queue_a = MemoryQueue(queue_capacity, base_a.d_out());
  s.queue_b = MemoryQueue(queue_capacity, base_b.d_out());
  s.base_a = std::move(base_a);
  s.base_b = std::move(base_b);
  s.temperature = temperature;
  s.shared_momentum = shared_momentum;
  return s;
}

namespace {

constexpr double kInputUnitTolerance = 1e-4;

void check_inputs(std::span<const double> query, std::span<const double> positive,
                  const MemoryQueue& queue, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::NonPositiveTemperature, "temperature must be > 0");
  if (query.size() != positive.size() || (queue.capacity() > 0 && query.size() != queue.dim())) {
    throw Error(ErrorKind::DimensionMismatch, "query/key dimensions differ");
  }
  for (auto v : {query, positive}) {
    if (!(std::abs(l2_norm(v) - 1.0) <= kInputUnitTolerance)) {
      throw Error(ErrorKind::NonUnitInput, "query and positive key must be unit-norm");
    }
  }
}

// Softmax over [q.k+, q.k_1..q.k_n] / tau; index 0 is the positive.
struct Softmax {
  std::vector<double> logits;
  std::vector<double> probs;
  double log_partition = 0.0;  // log sum exp(logits)
};

Softmax softmax_logits(std::span<const double> query, std::span<const double> positive,
                       const MemoryQueue& queue, double temperature) {
  check_inputs(query, positive, queue, temperature);
  const std::size_t n = queue.filled();
  const std::size_t d = query.size();
  const auto block = queue.occupied();
  Softmax s;
  s.logits.resize(n + 1);
  s.logits[0] = dot(query, positive) / temperature;
  for (std::size_t i = 0; i < n; ++i) s.logits[i + 1] = dot(query, block.subspan(i * d, d)) / temperature;
  const double mx = *std::max_element(s.logits.begin(), s.logits.end());
  double z = 0.0;
  s.probs.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    s.probs[i] = std::exp(s.logits[i] - mx);
    z += s.probs[i];
  }
  for (double& p : s.probs) p /= z;
  s.log_partition = mx + std::log(z);
  return s;
}

}  // namespace

double info_nce(std::span<const double> query, std::span<const double> positive_key,
                const MemoryQueue& queue, double temperature) {
  if (queue.filled() == 0) {
    check_inputs(query, positive_key, queue, temperature);
    return 0.0;
  }
  const Softmax s = softmax_logits(query, positive_key, queue, temperature);
  return std::max(0.0, s.log_partition - s.logits[0]);
}

DenseVector info_nce_query_grad(std::span<const double> query,
                                std::span<const double> positive_key, const MemoryQueue& queue,
                                double temperature) {
  const std::size_t d = query.size();
  if (queue.filled() == 0) {
    check_inputs(query, positive_key, queue, temperature);
    return DenseVector(d, 0.0);
  }
  const Softmax s = softmax_logits(query, positive_key, queue, temperature);
  DenseVector g(d, 0.0);
  const double w0 = s.probs[0] - 1.0;
  for (std::size_t c = 0; c < d; ++c) g[c] = w0 * positive_key[c];
  const auto block = queue.occupied();
  for (std::size_t i = 0; i < queue.filled(); ++i) {
    const double p = s.probs[i + 1];
    const auto k = block.subspan(i * d, d);
    for (std::size_t c = 0; c < d; ++c) g[c] += p * k[c];
  }
  for (double& v : g) v /= temperature;
  return g;
}

double info_nce_entropy(std::span<const double> query, std::span<const double> positive_key,
                        const MemoryQueue& queue, double temperature) {
  const Softmax s = softmax_logits(query, positive_key, queue, temperature);
  // H = log Z - sum p * logit
  double expected = 0.0;
  for (std::size_t i = 0; i < s.probs.size(); ++i) expected += s.probs[i] * s.logits[i];
  return std::max(0.0, s.log_partition - expected);
}

namespace {

void check_batches(std::span<const TokenSequence> a, std::span<const TokenSequence> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::BatchLengthMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
}

const EncoderParams& key_encoder_a(const DualMocoState& s) {
  return s.shared_momentum ? s.base_a : s.momentum_a.params;
}
const EncoderParams& key_encoder_b(const DualMocoState& s) {
  return s.shared_momentum ? s.base_b : s.momentum_b.params;
}

// One direction: queries from `query_enc`, positives from `key_enc`, negatives from `queue`.
double direction_loss(const EncoderParams& query_enc, const EncoderParams& key_enc,
                      const MemoryQueue& queue, double temperature,
                      std::span<const TokenSequence> query_batch,
                      std::span<const TokenSequence> key_batch, PoolingMode pooling,
                      std::vector<DenseVector>* upstream) {
  const auto queries = encode_batch(query_enc, query_batch, pooling);
  const auto keys = encode_batch(key_enc, key_batch, pooling);
  const double inv = 1.0 / static_cast<double>(queries.size());
  double total = 0.0;
  if (upstream) upstream->resize(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    total += info_nce(queries[i], keys[i], queue, temperature);
    if (upstream) {
      auto g = info_nce_query_grad(queries[i], keys[i], queue, temperature);
      for (double& v : g) v *= inv;
      (*upstream)[i] = std::move(g);
    }
  }
  return total * inv;
}

}  // namespace

LossValue bidirectional_loss(const DualMocoState& state, std::span<const TokenSequence> batch_a,
                             std::span<const TokenSequence> batch_b, PoolingMode pooling) {
  check_batches(batch_a, batch_b);
  LossValue loss;
  if (batch_a.empty()) return loss;
  loss.forward = direction_loss(state.base_a, key_encoder_b(state), state.queue_b, state.temperature,
                                batch_a, batch_b, pooling, nullptr);
  loss.backward = direction_loss(state.base_b, key_encoder_a(state), state.queue_a, state.temperature,
                                 batch_b, batch_a, pooling, nullptr);
  loss.total = loss.forward + loss.backward;
  return loss;
}

MocoGradients moco_gradients(const DualMocoState& state, std::span<const TokenSequence> batch_a,
                             std::span<const TokenSequence> batch_b, PoolingMode pooling) {
  check_batches(batch_a, batch_b);
  MocoGradients out{{},
                    EncoderGrads(state.base_a.vocab_size(), state.base_a.d_emb(), state.base_a.d_out()),
                    EncoderGrads(state.base_b.vocab_size(), state.base_b.d_emb(), state.base_b.d_out())};
  if (batch_a.empty()) return out;
  std::vector<DenseVector> up_a, up_b;
  out.loss.forward = direction_loss(state.base_a, key_encoder_b(state), state.queue_b,
                                    state.temperature, batch_a, batch_b, pooling, &up_a);
  out.loss.backward = direction_loss(state.base_b, key_encoder_a(state), state.queue_a,
                                     state.temperature, batch_b, batch_a, pooling, &up_b);
  out.loss.total = out.loss.forward + out.loss.backward;
  accumulate_encode_backward(state.base_a, batch_a, pooling, up_a, out.grad_a);
  accumulate_encode_backward(state.base_b, batch_b, pooling, up_b, out.grad_b);
  return out;
}

void advance_momentum_and_queues(DualMocoState& state, std::span<const TokenSequence> batch_a,
                                 std::span<const TokenSequence> batch_b, PoolingMode pooling) {
  check_batches(batch_a, batch_b);
  if (state.shared_momentum) {
    state.momentum_a.params = state.base_a;
    state.momentum_b.params = state.base_b;
  } else {
    momentum_update(state.base_a, state.momentum_a);
    momentum_update(state.base_b, state.momentum_b);
  }
  state.queue_a.enqueue(encode_batch(state.momentum_a.params, batch_a, pooling));
  state.queue_b.enqueue(encode_batch(state.momentum_b.params, batch_b, pooling));
}

MocoStepResult moco_step(const DualMocoState& state, std::span<const TokenSequence> batch_a,
                         std::span<const TokenSequence> batch_b, PoolingMode pooling) {
  auto grads = moco_gradients(state, batch_a, batch_b, pooling);
  MocoStepResult out{grads.loss, std::move(grads.grad_a), std::move(grads.grad_b), state};
  advance_momentum_and_queues(out.next_state, batch_a, batch_b, pooling);
  return out;
}

namespace {
constexpr std::string_view kQueueMagic = "DMCQ";
}

void save_queue(const std::filesystem::path& path, const MemoryQueue& queue) {
  detail::BinaryWriter w(path);
  w.magic(kQueueMagic);
  w.u64(queue.capacity());
  w.u64(queue.dim());
  w.u64(queue.write_index());
  w.u64(queue.filled());
  w.f64s(queue.slots().values);
  w.finish();
}

MemoryQueue load_queue(const std::filesystem::path& path) {
  detail::BinaryReader r(path);
  r.expect_magic(kQueueMagic);
  const auto capacity = r.u64();
  const auto dim = r.u64();
  const auto write_index = r.u64();
  const auto filled = r.u64();
  if (capacity == 0 || dim == 0 || capacity * dim > (std::uint64_t{1} << 32)) {
    throw Error(ErrorKind::ParseError, path.string() + ": implausible queue dimensions");
  }
  DenseMatrix slots(capacity, dim);
  r.f64s(slots.values);
  if (!r.at_end()) throw Error(ErrorKind::ParseError, path.string() + ": trailing bytes");
  return MemoryQueue::from_parts(std::move(slots), write_index, filled);
}

}  // namespace dmc
