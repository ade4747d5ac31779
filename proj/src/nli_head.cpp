#include <algorithm>
#include <cmath>

#include "dmc/error.hpp"
#include "dmc/trainer.hpp"

namespace dmc {

NliHead::NliHead(std::size_t d_out, std::size_t hidden)
    : w1(3 * d_out, hidden), b1(hidden, 0.0), w2(hidden, hidden), b2(hidden, 0.0),
      w3(hidden, kClasses), b3(kClasses, 0.0) {}

std::array<std::span<double>, 6> NliHead::tensors() {
  return {std::span<double>(w1.values), std::span<double>(b1), std::span<double>(w2.values),
          std::span<double>(b2),        std::span<double>(w3.values), std::span<double>(b3)};
}

std::array<std::span<const double>, 6> NliHead::tensors() const {
  return {std::span<const double>(w1.values), std::span<const double>(b1),
          std::span<const double>(w2.values), std::span<const double>(b2),
          std::span<const double>(w3.values), std::span<const double>(b3)};
}

NliHead NliHead::random(std::size_t d_out, std::mt19937_64& rng, std::size_t hidden) {
  NliHead h(d_out, hidden);
  auto fill = [&](DenseMatrix& w) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(w.rows)));
    for (double& v : w.values) v = dist(rng);
  };
  fill(h.w1);
  fill(h.w2);
  fill(h.w3);
  return h;
}

DropoutMask DropoutMask::sample(std::size_t hidden, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorKind::ConfigInvalid, "nli_dropout must lie in [0, 1)");
  DropoutMask m;
  std::bernoulli_distribution drop(rate);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto* layer : {&m.hidden1, &m.hidden2}) {
    layer->resize(hidden);
    for (double& v : *layer) v = drop(rng) ? 0.0 : keep_scale;
  }
  return m;
}

namespace {

struct HeadTrace {
  DenseVector features;  // [p ; h ; |p - h|]
  DenseVector pre1, act1;
  DenseVector pre2, act2;
  DenseVector probs;
  double loss = 0.0;
};

void affine(std::span<const double> x, const DenseMatrix& w, const DenseVector& b, DenseVector& out) {
  out = b;
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const auto row = w.row(r);
    for (std::size_t c = 0; c < w.cols; ++c) out[c] += xr * row[c];
  }
}

HeadTrace head_forward(const NliHead& head, std::span<const double> hp, std::span<const double> hh,
                       NliLabel gold, const DropoutMask* mask) {
  const std::size_t d = hp.size();
  if (hh.size() != d || 3 * d != head.input_dim()) {
    throw Error(ErrorKind::DimensionMismatch, "NLI head expects sentence vectors of dimension " +
                                                  std::to_string(head.input_dim() / 3));
  }
  const int g = static_cast<int>(gold);
  if (g < 0 || g >= static_cast<int>(NliHead::kClasses)) throw Error(ErrorKind::InvalidLabel, "gold class out of range");
  HeadTrace tr;
  tr.features.resize(3 * d);
  for (std::size_t i = 0; i < d; ++i) {
    tr.features[i] = hp[i];
    tr.features[d + i] = hh[i];
    tr.features[2 * d + i] = std::abs(hp[i] - hh[i]);
  }
  affine(tr.features, head.w1, head.b1, tr.pre1);
  tr.act1.resize(tr.pre1.size());
  for (std::size_t i = 0; i < tr.pre1.size(); ++i) {
    tr.act1[i] = std::max(0.0, tr.pre1[i]) * (mask ? mask->hidden1[i] : 1.0);
  }
  affine(tr.act1, head.w2, head.b2, tr.pre2);
  tr.act2.resize(tr.pre2.size());
  for (std::size_t i = 0; i < tr.pre2.size(); ++i) {
    tr.act2[i] = std::max(0.0, tr.pre2[i]) * (mask ? mask->hidden2[i] : 1.0);
  }
  DenseVector logits;
  affine(tr.act2, head.w3, head.b3, logits);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  tr.probs.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    tr.probs[c] = std::exp(logits[c] - mx);
    z += tr.probs[c];
  }
  for (double& p : tr.probs) p /= z;
  tr.loss = std::max(0.0, mx + std::log(z) - logits[static_cast<std::size_t>(g)]);
  return tr;
}

}  // namespace

double nli_forward_loss(const NliHead& head, std::span<const double> h_premise,
                        std::span<const double> h_hypothesis, NliLabel gold) {
  return head_forward(head, h_premise, h_hypothesis, gold, nullptr).loss;
}

double nli_loss_and_grads(const NliHead& head, std::span<const double> h_premise,
                          std::span<const double> h_hypothesis, NliLabel gold,
                          const DropoutMask* mask, double scale, NliHeadGrads& head_grads,
                          std::span<double> d_premise, std::span<double> d_hypothesis) {
  const HeadTrace tr = head_forward(head, h_premise, h_hypothesis, gold, mask);
  const std::size_t d = h_premise.size();
  const std::size_t hidden = head.hidden();
  if (d_premise.size() != d || d_hypothesis.size() != d) {
    throw Error(ErrorKind::ShapeMismatch, "sentence gradient buffers");
  }

  DenseVector d_logits = tr.probs;
  d_logits[static_cast<std::size_t>(gold)] -= 1.0;
  for (double& v : d_logits) v *= scale;

  // classifier
  DenseVector d_act2(hidden, 0.0);
  for (std::size_t c = 0; c < NliHead::kClasses; ++c) head_grads.b3[c] += d_logits[c];
  for (std::size_t r = 0; r < hidden; ++r) {
    const auto w = head.w3.row(r);
    auto gw = head_grads.w3.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < NliHead::kClasses; ++c) {
      gw[c] += tr.act2[r] * d_logits[c];
      acc += w[c] * d_logits[c];
    }
    d_act2[r] = acc;
  }
  // second hidden layer
  DenseVector d_pre2(hidden);
  for (std::size_t i = 0; i < hidden; ++i) {
    d_pre2[i] = tr.pre2[i] > 0.0 ? d_act2[i] * (mask ? mask->hidden2[i] : 1.0) : 0.0;
  }
  DenseVector d_act1(hidden, 0.0);
  for (std::size_t c = 0; c < hidden; ++c) head_grads.b2[c] += d_pre2[c];
  for (std::size_t r = 0; r < hidden; ++r) {
    const double a = tr.act1[r];
    const auto w = head.w2.row(r);
    auto gw = head_grads.w2.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < hidden; ++c) {
      gw[c] += a * d_pre2[c];
      acc += w[c] * d_pre2[c];
    }
    d_act1[r] = acc;
  }
  // first hidden layer
  DenseVector d_pre1(hidden);
  for (std::size_t i = 0; i < hidden; ++i) {
    d_pre1[i] = tr.pre1[i] > 0.0 ? d_act1[i] * (mask ? mask->hidden1[i] : 1.0) : 0.0;
  }
  DenseVector d_features(3 * d, 0.0);
  for (std::size_t c = 0; c < hidden; ++c) head_grads.b1[c] += d_pre1[c];
  for (std::size_t r = 0; r < 3 * d; ++r) {
    const double f = tr.features[r];
    const auto w = head.w1.row(r);
    auto gw = head_grads.w1.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < hidden; ++c) {
      gw[c] += f * d_pre1[c];
      acc += w[c] * d_pre1[c];
    }
    d_features[r] = acc;
  }
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = h_premise[i] - h_hypothesis[i];
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    d_premise[i] += d_features[i] + sign * d_features[2 * d + i];
    d_hypothesis[i] += d_features[d + i] - sign * d_features[2 * d + i];
  }
  return tr.loss;
}

}  // namespace dmc
