#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dmc/encoder.hpp"
#include "dmc/numerics.hpp"

namespace dmc {

// Fixed-capacity ring of unit vectors. The oldest entry is overwritten first.
class MemoryQueue {
 public:
  static constexpr double kUnitTolerance = 1e-6;

  MemoryQueue() = default;
  MemoryQueue(std::size_t capacity, std::size_t dim);

  std::size_t capacity() const { return slots_.rows; }
  std::size_t dim() const { return slots_.cols; }
  std::size_t filled() const { return filled_; }
  std::size_t write_index() const { return write_index_; }

  /// Writes keys at consecutive ring positions starting at write_index.
  /// Throws BatchExceedsCapacity, DimensionMismatch or NonUnitKey; the queue is
  /// unchanged when it throws.
  void enqueue(std::span<const EmbeddingVector> keys);

  /// Occupied slots as a contiguous block of `filled()` rows. Occupied slots are
  /// always [0, filled) because writes start at slot 0 and wrap only once full.
  std::span<const double> occupied() const { return {slots_.values.data(), filled_ * dim()}; }

  std::span<const double> slot(std::size_t i) const { return slots_.row(i); }

  /// Stored keys from oldest to newest.
  std::vector<EmbeddingVector> in_insertion_order() const;

  /// Restores a queue from raw parts (used by the queue dump loader).
  static MemoryQueue from_parts(DenseMatrix slots, std::size_t write_index, std::size_t filled);
  const DenseMatrix& slots() const { return slots_; }

 private:
  DenseMatrix slots_;
  std::size_t write_index_ = 0;
  std::size_t filled_ = 0;
};

/// Functional form: returns a copy of `queue` with `keys` enqueued.
MemoryQueue enqueue_batch(MemoryQueue queue, std::span<const EmbeddingVector> keys);

struct MomentumEncoder {
  EncoderParams params;
  double coefficient = 0.999;
};

/// theta <- m * theta + (1 - m) * theta_base, elementwise. Throws ShapeMismatch.
void momentum_update(const EncoderParams& base, MomentumEncoder& momentum);

struct DualMocoState {
  EncoderParams base_a;
  EncoderParams base_b;
  MomentumEncoder momentum_a;
  MomentumEncoder momentum_b;
  MemoryQueue queue_a;  // keys from momentum_a (language A)
  MemoryQueue queue_b;  // keys from momentum_b (language B)
  double temperature = 0.04;
  // Momentum encoders track the base encoders exactly (no-momentum ablation).
  bool shared_momentum = false;

  /// Momentum encoders start as copies of the base encoders; queues start empty.
  static DualMocoState initialize(EncoderParams base_a, EncoderParams base_b,
                                  std::size_t queue_capacity, double momentum,
                                  double temperature, bool shared_momentum = false);
};

struct LossValue {
  double total = 0.0;
  double forward = 0.0;   // L(x, y): A queries against B keys
  double backward = 0.0;  // L(y, x): B queries against A keys
};

/// InfoNCE over the positive key and the occupied queue entries:
/// -log softmax_0([q.k+, q.k_1, ..., q.k_n] / tau), computed with max subtraction.
double info_nce(std::span<const double> query, std::span<const double> positive_key,
                const MemoryQueue& queue, double temperature);

/// dL/dquery = (sum_j p_j k_j - k+) / tau with every key held constant.
DenseVector info_nce_query_grad(std::span<const double> query,
                                std::span<const double> positive_key, const MemoryQueue& queue,
                                double temperature);

/// Entropy (nats) of the (filled + 1)-way softmax inside info_nce.
double info_nce_entropy(std::span<const double> query, std::span<const double> positive_key,
                        const MemoryQueue& queue, double temperature);

/// Batch-mean losses in both directions. Does not mutate `state`.
LossValue bidirectional_loss(const DualMocoState& state, std::span<const TokenSequence> batch_a,
                             std::span<const TokenSequence> batch_b, PoolingMode pooling);

struct MocoGradients {
  LossValue loss;
  EncoderGrads grad_a;
  EncoderGrads grad_b;
};

/// Loss and base-encoder gradients with momentum encoders and queues frozen.
MocoGradients moco_gradients(const DualMocoState& state, std::span<const TokenSequence> batch_a,
                             std::span<const TokenSequence> batch_b, PoolingMode pooling);

/// End-of-step bookkeeping: momentum update of both momentum encoders, re-encode the
/// batch keys with the updated momentum params, enqueue them.
void advance_momentum_and_queues(DualMocoState& state, std::span<const TokenSequence> batch_a,
                                 std::span<const TokenSequence> batch_b, PoolingMode pooling);

struct MocoStepResult {
  LossValue loss;
  EncoderGrads grad_a;
  EncoderGrads grad_b;
  DualMocoState next_state;
};

/// moco_gradients followed by advance_momentum_and_queues on a copy of `state`.
/// Base parameters are not modified; applying the gradients is the optimizer's job.
MocoStepResult moco_step(const DualMocoState& state, std::span<const TokenSequence> batch_a,
                         std::span<const TokenSequence> batch_b, PoolingMode pooling);

// Queue dump: "DMCQ", capacity, dim, write_index, filled (u64 LE), then capacity x dim f64.
void save_queue(const std::filesystem::path& path, const MemoryQueue& queue);
MemoryQueue load_queue(const std::filesystem::path& path);

}  // namespace dmc
