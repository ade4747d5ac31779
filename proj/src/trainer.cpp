#include "dmc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dmc/error.hpp"
#include "dmc/eval.hpp"

namespace dmc {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::ConfigInvalid, msg); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (queue_capacity < 1) fail("queue_size must be >= 1");
  if (batch_size > queue_capacity) fail("batch_size must not exceed queue_size");
  if (!(lr_max > 0.0) || !std::isfinite(lr_max)) fail("lr_max must be > 0");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature must be > 0");
  if (!(momentum >= 0.0 && momentum <= 1.0)) fail("momentum must lie in [0, 1]");
  if (!(grad_clip > 0.0)) fail("grad_clip must be > 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be >= 0");
  if (!(nli_weight >= 0.0) || !std::isfinite(nli_weight)) fail("nli_weight must be >= 0");
  if (nli_batch_size < 1) fail("nli_batch_size must be >= 1");
  if (!(nli_dropout >= 0.0 && nli_dropout < 1.0)) fail("nli_dropout must lie in [0, 1)");
  if (d_emb < 1) fail("d_emb must be >= 1");
  if (d_out < 2) fail("d_out must be >= 2");
  if (eval_threads < 1) fail("threads must be >= 1");
}

std::size_t steps_per_epoch(std::size_t n_train, std::size_t batch_size) {
  return batch_size == 0 ? 0 : n_train / batch_size;
}

namespace {

// Independent deterministic streams so that optional features never shift each other's draws.
enum class Stream : std::uint64_t { Init = 1, Shuffle = 2, NliOrder = 3, Dropout = 4, HeadInit = 5 };

std::mt19937_64 stream_rng(std::uint64_t seed, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s)};
  return std::mt19937_64(seq);
}

template <typename Tensors>
void append(std::vector<std::span<double>>& out, Tensors&& ts) {
  for (auto t : ts) out.push_back(t);
}

EpochRecord evaluate_epoch(std::size_t epoch, const TrainConfig& config, const DualMocoState& state,
                           const std::vector<TokenSequence>& val_a, const std::vector<TokenSequence>& val_b,
                           const std::vector<StsPair>* sts) {
  EpochRecord r;
  r.epoch = epoch;
  const auto ea = stack_rows(encode_batch(state.base_a, val_a, config.pooling, config.eval_threads));
  const auto eb = stack_rows(encode_batch(state.base_b, val_b, config.pooling, config.eval_threads));
  const auto acc = retrieval_accuracy(ea, eb, config.eval_threads);
  r.retrieval_acc_ab = acc.forward;
  r.retrieval_acc_ba = acc.backward;
  if (sts && !sts->empty()) r.sts_spearman = sts_eval(state.base_a, *sts, config.pooling, config.eval_threads);
  return r;
}

}  // namespace

TrainResult train(const TrainConfig& config, const TrainInputs& inputs, const StepObserver& observer) {
  config.validate();
  if (!inputs.corpus) throw Error(ErrorKind::EmptyCorpus, "no training corpus");
  const ParallelCorpus& corpus = *inputs.corpus;
  const auto train_a = corpus.side(Language::A, Split::Train);
  const auto train_b = corpus.side(Language::B, Split::Train);
  const auto val_a = corpus.side(Language::A, Split::Validation);
  const auto val_b = corpus.side(Language::B, Split::Validation);
  if (train_a.empty()) throw Error(ErrorKind::EmptyCorpus, "training split is empty");
  if (val_a.empty()) throw Error(ErrorKind::EmptyCorpus, "validation split is empty");
  const std::size_t per_epoch = steps_per_epoch(train_a.size(), config.batch_size);
  if (per_epoch == 0) throw Error(ErrorKind::ConfigInvalid, "batch_size exceeds the number of training pairs");
  const std::size_t total_steps = per_epoch * config.epochs;
  const bool use_nli = inputs.nli && !inputs.nli->empty();

  auto init_rng = stream_rng(config.seed, Stream::Init);
  auto shuffle_rng = stream_rng(config.seed, Stream::Shuffle);
  auto nli_rng = stream_rng(config.seed, Stream::NliOrder);
  auto dropout_rng = stream_rng(config.seed, Stream::Dropout);
  auto head_rng = stream_rng(config.seed, Stream::HeadInit);

  TrainResult result;
  {
    auto base_a = EncoderParams::random(corpus.vocab_size_a, config.d_emb, config.d_out, init_rng);
    auto base_b = EncoderParams::random(corpus.vocab_size_b, config.d_emb, config.d_out, init_rng);
    result.state = DualMocoState::initialize(std::move(base_a), std::move(base_b), config.queue_capacity,
                                             config.momentum, config.temperature,
                                             config.ablation_no_momentum);
  }
  DualMocoState& state = result.state;
  if (use_nli) result.nli_head = NliHead::random(config.d_out, head_rng);

  std::vector<std::span<double>> params;
  append(params, state.base_a.tensors());
  append(params, state.base_b.tensors());
  if (use_nli) append(params, result.nli_head->tensors());
  OptimizerState opt(params);

  std::vector<std::size_t> order(train_a.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> nli_order;
  std::size_t nli_cursor = 0;
  if (use_nli) {
    nli_order.resize(inputs.nli->size());
    std::iota(nli_order.begin(), nli_order.end(), 0);
    std::shuffle(nli_order.begin(), nli_order.end(), nli_rng);
  }

  std::vector<TokenSequence> batch_a(config.batch_size), batch_b(config.batch_size);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t s = 0; s < per_epoch; ++s) {
      ++step;
      for (std::size_t i = 0; i < config.batch_size; ++i) {
        const std::size_t idx = order[s * config.batch_size + i];
        batch_a[i] = train_a[idx];
        batch_b[i] = train_b[idx];
      }
      StepRecord rec;
      rec.step = step;
      rec.lr = lr_at(step, config, total_steps);

      MocoGradients g = moco_gradients(state, batch_a, batch_b, config.pooling);
      if (observer) observer(step, state, batch_a, batch_b);
      rec.loss = g.loss;
      rec.loss_total = g.loss.total;

      NliHeadGrads head_grads;
      if (use_nli) {
        head_grads = NliHeadGrads(config.d_out);
        const std::size_t nb = config.nli_batch_size;
        std::vector<TokenSequence> premises(nb), hypotheses(nb);
        std::vector<NliLabel> labels(nb);
        for (std::size_t i = 0; i < nb; ++i) {
          if (nli_cursor == nli_order.size()) {
            std::shuffle(nli_order.begin(), nli_order.end(), nli_rng);
            nli_cursor = 0;
          }
          const auto& t = (*inputs.nli)[nli_order[nli_cursor++]];
          premises[i] = t.premise;
          hypotheses[i] = t.hypothesis;
          labels[i] = t.label;
        }
        const auto hp = encode_batch(state.base_a, premises, config.pooling);
        const auto hh = encode_batch(state.base_a, hypotheses, config.pooling);
        std::vector<DenseVector> d_p(nb, DenseVector(config.d_out, 0.0));
        std::vector<DenseVector> d_h(nb, DenseVector(config.d_out, 0.0));
        const double scale = config.nli_weight / static_cast<double>(nb);
        double nli_sum = 0.0;
        for (std::size_t i = 0; i < nb; ++i) {
          std::optional<DropoutMask> mask;
          if (config.nli_dropout > 0.0) mask = DropoutMask::sample(NliHead::kHidden, config.nli_dropout, dropout_rng);
          nli_sum += nli_loss_and_grads(*result.nli_head, hp[i], hh[i], labels[i], mask ? &*mask : nullptr,
                                        scale, head_grads, d_p[i], d_h[i]);
        }
        accumulate_encode_backward(state.base_a, premises, config.pooling, d_p, g.grad_a);
        accumulate_encode_backward(state.base_a, hypotheses, config.pooling, d_h, g.grad_a);
        rec.loss_nli = nli_sum / static_cast<double>(nb);
        rec.loss_total += config.nli_weight * *rec.loss_nli;
      }
      if (!std::isfinite(rec.loss_total)) {
        throw Error(ErrorKind::NumericalFailure, "non-finite loss at step " + std::to_string(step));
      }

      std::vector<std::span<double>> grads;
      append(grads, g.grad_a.tensors());
      append(grads, g.grad_b.tensors());
      if (use_nli) append(grads, head_grads.tensors());
      clip_gradients(grads, config.grad_clip);
      adamw_step(params, grads, opt, rec.lr, config.weight_decay);
      advance_momentum_and_queues(state, batch_a, batch_b, config.pooling);
      result.steps.push_back(rec);
    }
    result.epochs.push_back(evaluate_epoch(epoch, config, state, val_a, val_b, inputs.sts_eval));
  }
  return result;
}

std::string to_jsonl(const StepRecord& r) {
  nlohmann::json j{{"step", r.step},
                   {"lr", r.lr},
                   {"loss_total", r.loss_total},
                   {"loss_fwd", r.loss.forward},
                   {"loss_bwd", r.loss.backward},
                   {"loss_nli", nullptr}};
  if (r.loss_nli) j["loss_nli"] = *r.loss_nli;
  return j.dump();
}

std::string to_jsonl(const EpochRecord& r) {
  nlohmann::json j{{"epoch", r.epoch},
                   {"retrieval_acc_ab", r.retrieval_acc_ab},
                   {"retrieval_acc_ba", r.retrieval_acc_ba},
                   {"sts_spearman", nullptr}};
  if (r.sts_spearman) j["sts_spearman"] = *r.sts_spearman;
  return j.dump();
}

}  // namespace dmc
