#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dmc/datagen.hpp"
#include "dmc/encoder.hpp"
#include "dmc/moco.hpp"
#include "dmc/numerics.hpp"

namespace dmc {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr_max = 1e-2;
  std::size_t warmup_steps = 400;
  std::size_t queue_capacity = 1024;
  double temperature = 0.04;
  double momentum = 0.99;
  double grad_clip = 10.0;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  PoolingMode pooling = PoolingMode::Mean;
  double nli_weight = 0.1;
  std::size_t nli_batch_size = 128;
  double nli_dropout = 0.1;
  bool ablation_no_momentum = false;
  std::size_t d_emb = 32;
  std::size_t d_out = 32;
  unsigned eval_threads = 1;

  /// Throws ConfigInvalid naming the first offending field.
  void validate() const;
};

/// Linear warmup to lr_max, then half-cosine decay to 0 at total_steps; saturates after.
double lr_at(std::size_t step, const TrainConfig& config, std::size_t total_steps);

/// Scales every tensor by max_norm / g when the global L2 norm g exceeds max_norm.
/// Returns the norm before clipping.
double clip_gradients(std::span<const std::span<double>> grads, double max_norm);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(std::span<const std::span<double>> params);
};

/// Decoupled weight decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::span<double>> grads, OptimizerState& state, double lr,
                double weight_decay, const AdamHyper& hyper = {});

// Entailment/neutral/contradiction classifier over [h_p ; h_h ; |h_p - h_h|]:
// linear(3d -> H) -> ReLU -> linear(H -> H) -> ReLU -> linear(H -> 3).
struct NliHead {
  static constexpr std::size_t kHidden = 256;
  static constexpr std::size_t kClasses = 3;

  DenseMatrix w1;  // 3*d_out x H
  DenseVector b1;
  DenseMatrix w2;  // H x H
  DenseVector b2;
  DenseMatrix w3;  // H x 3
  DenseVector b3;

  NliHead() = default;
  NliHead(std::size_t d_out, std::size_t hidden = kHidden);

  std::size_t input_dim() const { return w1.rows; }
  std::size_t hidden() const { return b1.size(); }

  std::array<std::span<double>, 6> tensors();
  std::array<std::span<const double>, 6> tensors() const;

  /// He-initialized weights, zero biases.
  static NliHead random(std::size_t d_out, std::mt19937_64& rng, std::size_t hidden = kHidden);

  bool operator==(const NliHead&) const = default;
};

using NliHeadGrads = NliHead;

// Inverted-dropout multipliers (0 or 1/(1-p)) for the two hidden layers.
struct DropoutMask {
  std::vector<double> hidden1;
  std::vector<double> hidden2;

  static DropoutMask sample(std::size_t hidden, double rate, std::mt19937_64& rng);
};

/// Cross-entropy of the head's softmax against `gold`, without dropout.
double nli_forward_loss(const NliHead& head, std::span<const double> h_premise,
                        std::span<const double> h_hypothesis, NliLabel gold);

/// Loss plus gradients accumulated (scaled by `scale`) into `head_grads`,
/// `d_premise` and `d_hypothesis`. `mask` may be null.
double nli_loss_and_grads(const NliHead& head, std::span<const double> h_premise,
                          std::span<const double> h_hypothesis, NliLabel gold,
                          const DropoutMask* mask, double scale, NliHeadGrads& head_grads,
                          std::span<double> d_premise, std::span<double> d_hypothesis);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  LossValue loss;
  double loss_total = 0.0;  // loss.total + nli_weight * loss_nli
  std::optional<double> loss_nli;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double retrieval_acc_ab = 0.0;
  double retrieval_acc_ba = 0.0;
  std::optional<double> sts_spearman;
};

struct TrainResult {
  DualMocoState state;
  std::optional<NliHead> nli_head;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

struct TrainInputs {
  const ParallelCorpus* corpus = nullptr;
  const std::vector<NliTriple>* nli = nullptr;      // optional multitask data
  const std::vector<StsPair>* sts_eval = nullptr;   // optional per-epoch STS check
};

/// Called once per step after the loss is computed and before parameters change.
using StepObserver = std::function<void(std::size_t step, const DualMocoState& state,
                                        std::span<const TokenSequence> batch_a,
                                        std::span<const TokenSequence> batch_b)>;

std::size_t steps_per_epoch(std::size_t n_train, std::size_t batch_size);

/// Dual momentum contrast training on the train split; per-epoch retrieval on the
/// validation split. Throws EmptyCorpus, ConfigInvalid, NumericalFailure (NaN loss).
TrainResult train(const TrainConfig& config, const TrainInputs& inputs,
                  const StepObserver& observer = {});

std::string to_jsonl(const StepRecord& r);
std::string to_jsonl(const EpochRecord& r);

}  // namespace dmc
