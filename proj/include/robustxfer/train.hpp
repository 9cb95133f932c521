#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "classifier.hpp"
#include "dataset.hpp"

namespace rx {

struct RobustTrainConfig {
  double epsilon_l2 = 0;        // l2 robustness parameter; 0 means standard training
  int pgd_steps = 7;
  double pgd_step_scale = 0.3;  // step length as a fraction of epsilon_l2
  bool pgd_random_start = false;
  int epochs = 20;
  int batch_size = 128;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  bool augment = true;
  int epsilon_warmup_epochs = 0;  // linear ramp of epsilon_l2 over the first epochs; 0 disables

  void validate() const {
    std::vector<std::string> bad;
    if (!(epsilon_l2 >= 0)) bad.push_back("epsilon_l2 must be >= 0");
    if (pgd_steps < 0) bad.push_back("pgd_steps must be >= 0");
    if (!(pgd_step_scale > 0 && pgd_step_scale <= 1)) bad.push_back("pgd_step_scale must be in (0, 1]");
    if (epochs < 0) bad.push_back("epochs must be >= 0");
    if (batch_size < 1) bad.push_back("batch_size must be >= 1");
    if (!(learning_rate > 0)) bad.push_back("learning_rate must be > 0");
    if (!(momentum >= 0 && momentum < 1)) bad.push_back("momentum must be in [0, 1)");
    if (!(weight_decay >= 0)) bad.push_back("weight_decay must be >= 0");
    if (epsilon_warmup_epochs < 0) bad.push_back("epsilon_warmup_epochs must be >= 0");
    if (!bad.empty()) {
      std::string msg = "train config:";
      for (const auto& b : bad) msg += " " + b + ";";
      throw ValidationError(msg);
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RobustTrainConfig, epsilon_l2, pgd_steps, pgd_step_scale,
                                                pgd_random_start, epochs, batch_size, learning_rate, momentum,
                                                weight_decay, seed, augment, epsilon_warmup_epochs)

struct EpochStats {
  int epoch = 0;
  double loss = 0;             // mean training loss on the inputs actually trained on
  double train_accuracy = 0;   // clean inputs
  double adversarial_train_accuracy = 0;  // PGD inputs (equals train_accuracy when epsilon_l2 = 0)
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

// l2 PGD maximizing cross-entropy. delta starts at 0 (or a uniform draw in
// the ball with random_start); each step moves step_scale * eps2 along the
// per-image normalized gradient, projects onto the eps2 ball and clips
// x + delta to [0,1].
inline Tensor<float> pgd_l2(const Classifier& c, const Tensor<float>& batch, std::span<const int> labels, double eps2,
                            int steps, double step_scale, std::uint64_t seed, bool random_start = false) {
  if (!(eps2 > 0)) throw ValidationError(detail::cat("pgd_l2: eps2 must be > 0, got ", eps2, " (skip the attack instead)"));
  const std::int64_t n = batch.dim(0);
  const std::int64_t sz = n ? batch.size() / n : 0;
  Tensor<float> delta = Tensor<float>::zeros_like(batch);
  auto project = [&](std::int64_t i) {
    float* d = delta.data() + i * sz;
    const float* x = batch.data() + i * sz;
    const double norm = l2_norm(std::span<const float>(d, static_cast<std::size_t>(sz)));
    if (norm > eps2) {
      const double f = eps2 / norm;
      for (std::int64_t k = 0; k < sz; ++k) d[k] = static_cast<float>(d[k] * f);
    }
    for (std::int64_t k = 0; k < sz; ++k) {
      if (x[k] + d[k] > 1.0f) d[k] = 1.0f - x[k];
      if (x[k] + d[k] < 0.0f) d[k] = -x[k];
    }
  };
  if (random_start && steps > 0) {
    Rng rng(derive_seed(seed, 0x7073ULL));
    for (std::int64_t i = 0; i < n; ++i) {
      double norm = 0;
      std::vector<double> dir(static_cast<std::size_t>(sz));
      for (auto& v : dir) {
        v = rng.normal(0, 1);
        norm += v * v;
      }
      const double radius = eps2 * std::pow(rng.uniform(), 1.0 / static_cast<double>(sz)) / std::sqrt(norm);
      for (std::int64_t k = 0; k < sz; ++k) delta[i * sz + k] = static_cast<float>(dir[k] * radius);
      project(i);
    }
  }
  const double step = step_scale * eps2;
  for (int s = 0; s < steps; ++s) {
    Graph<float> g;
    Tensor<float> xin = batch;
    for (std::int64_t k = 0; k < xin.size(); ++k) xin[k] += delta[k];
    Var<float> xv = g.input(std::move(xin), true);
    auto out = forward<float>(c, g, xv);
    auto loss = softmax_cross_entropy(out.logits, labels);
    const auto grads = g.backward(loss);
    const auto& gr = grads.at(xv);
    for (std::int64_t i = 0; i < n; ++i) {
      const double norm = l2_norm(std::span<const float>(gr.data() + i * sz, static_cast<std::size_t>(sz)));
      if (norm > 0)
        for (std::int64_t k = 0; k < sz; ++k)
          delta[i * sz + k] = static_cast<float>(delta[i * sz + k] + step * gr[i * sz + k] / norm);
      project(i);
    }
  }
  Tensor<float> out = batch;
  for (std::int64_t k = 0; k < out.size(); ++k) out[k] += delta[k];
  for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

struct PgdSpec {
  double epsilon_l2 = 0.25;
  int steps = 7;
  double step_scale = 0.3;
  std::uint64_t seed = 0;
};

// Fraction of argmax-correct predictions, optionally under pgd_l2.
inline double evaluate_accuracy(const Classifier& c, const Dataset& d, const std::optional<PgdSpec>& attack = {},
                                int batch_size = 256) {
  if (d.size() == 0) throw ValidationError("evaluate_accuracy: empty dataset");
  std::int64_t correct = 0;
  for (std::int64_t b = 0; b < d.size(); b += batch_size) {
    const std::int64_t e = std::min<std::int64_t>(d.size(), b + batch_size);
    Tensor<float> x = d.images.slice_rows(b, e);
    std::span<const int> y(d.labels.data() + b, static_cast<std::size_t>(e - b));
    if (attack && attack->epsilon_l2 > 0)
      x = pgd_l2(c, x, y, attack->epsilon_l2, attack->steps, attack->step_scale, derive_seed(attack->seed, b));
    const auto pred = predict(c, x);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

namespace detail {

// SGD with momentum and L2 weight decay, PyTorch convention:
// v = momentum * v + (g + wd * w); w -= lr * v.
class Sgd {
 public:
  Sgd(const Classifier& c, double lr, double momentum, double wd) : lr_(lr), momentum_(momentum), wd_(wd) {
    for (const auto& p : c.params()) velocity_.emplace_back(p.value.shape());
  }

  void step(Classifier& c, const std::vector<Var<float>>& vars, const GradMap<float>& grads) {
    auto& params = c.mutable_params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params[i].value.values();
      auto v = velocity_[i].values();
      const auto& g = grads.at(vars[i]);
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gw = static_cast<double>(g[static_cast<std::int64_t>(k)]) + wd_ * w[k];
        v[k] = static_cast<float>(momentum_ * v[k] + gw);
        w[k] = static_cast<float>(w[k] - lr_ * v[k]);
      }
    }
  }

 private:
  double lr_, momentum_, wd_;
  std::vector<Tensor<float>> velocity_;
};

// Random horizontal flip plus a shift of up to 4 pixels with zero fill, per image.
inline void augment_batch(Tensor<float>& x, Rng& rng) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<float> tmp(static_cast<std::size_t>(c * h * w));
  for (std::int64_t i = 0; i < n; ++i) {
    const bool flip = rng.bernoulli(0.5);
    const std::int64_t dy = rng.between(-4, 4), dx = rng.between(-4, 4);
    float* img = x.data() + i * c * h * w;
    std::fill(tmp.begin(), tmp.end(), 0.0f);
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t r = 0; r < h; ++r)
        for (std::int64_t q = 0; q < w; ++q) {
          const std::int64_t sr = r - dy, sq0 = q - dx;
          if (sr < 0 || sr >= h || sq0 < 0 || sq0 >= w) continue;
          const std::int64_t sq = flip ? w - 1 - sq0 : sq0;
          tmp[(ch * h + r) * w + q] = img[(ch * h + sr) * w + sq];
        }
    std::copy(tmp.begin(), tmp.end(), img);
  }
}

inline std::vector<std::int64_t> epoch_order(std::int64_t n, Rng& rng) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  return order;
}

inline std::int64_t count_correct(const Tensor<float>& logits, std::span<const int> y) {
  const auto pred = argmax_rows(logits);
  std::int64_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == y[i];
  return c;
}

}  // namespace detail

struct TrainResult {
  Classifier classifier;
  TrainHistory history;
};

// Plain mini-batch training on clean inputs.
inline TrainResult train_standard(const ArchSpec& arch, const Dataset& train, const RobustTrainConfig& cfg,
                                  const Dataset* test = nullptr) {
  cfg.validate();
  if (train.size() == 0) throw ValidationError("train: empty dataset");
  Classifier c = build_classifier(arch, cfg.seed);
  detail::Sgd opt(c, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  Rng rng(derive_seed(cfg.seed, 0x747261696eULL));
  TrainHistory hist;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::epoch_order(train.size(), rng);
    double loss_sum = 0;
    std::int64_t correct = 0, batches = 0;
    for (std::int64_t b = 0; b < train.size(); b += cfg.batch_size, ++batches) {
      const std::int64_t e = std::min<std::int64_t>(train.size(), b + cfg.batch_size);
      std::span<const std::int64_t> idx(order.data() + b, static_cast<std::size_t>(e - b));
      Tensor<float> x = train.gather(idx);
      const auto y = train.gather_labels(idx);
      if (cfg.augment) detail::augment_batch(x, rng);
      Graph<float> g;
      const auto params = bind_params<float>(g, c, true);
      auto out = forward<float>(c, g.constant(std::move(x)), std::span<const Var<float>>(params));
      auto loss = softmax_cross_entropy(out.logits, y);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) throw DivergenceError(detail::cat("training diverged at epoch ", epoch, " batch ", batches));
      correct += detail::count_correct(out.logits.value(), y);
      opt.step(c, params, g.backward(loss));
      loss_sum += lv;
    }
    EpochStats st;
    st.epoch = epoch;
    st.loss = loss_sum / static_cast<double>(batches);
    st.train_accuracy = st.adversarial_train_accuracy =
        static_cast<double>(correct) / static_cast<double>(train.size());
    if (test && test->size() > 0) st.test_accuracy = evaluate_accuracy(c, *test);
    hist.epochs.push_back(st);
  }
  c.set_provenance({0.0, cfg.seed, cfg.epochs});
  return {std::move(c), std::move(hist)};
}

// Minimizes E[max_{||delta||_2 <= eps} xent(x + delta, y)] with pgd_l2 as
// the inner maximizer. With epsilon_l2 = 0 the inner step is skipped.
inline TrainResult adversarial_train(const ArchSpec& arch, const Dataset& train, const RobustTrainConfig& cfg,
                                     const Dataset* test = nullptr) {
  cfg.validate();
  if (train.size() == 0) throw ValidationError("train: empty dataset");
  const bool robust = cfg.epsilon_l2 > 0 && cfg.pgd_steps > 0;
  Classifier c = build_classifier(arch, cfg.seed);
  detail::Sgd opt(c, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  Rng rng(derive_seed(cfg.seed, 0x747261696eULL));
  TrainHistory hist;
  std::uint64_t step_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double eps = epoch < cfg.epsilon_warmup_epochs
                           ? cfg.epsilon_l2 * (epoch + 1) / static_cast<double>(cfg.epsilon_warmup_epochs)
                           : cfg.epsilon_l2;
    const auto order = detail::epoch_order(train.size(), rng);
    double loss_sum = 0;
    std::int64_t clean_correct = 0, adv_correct = 0, batches = 0;
    for (std::int64_t b = 0; b < train.size(); b += cfg.batch_size, ++batches, ++step_index) {
      const std::int64_t e = std::min<std::int64_t>(train.size(), b + cfg.batch_size);
      std::span<const std::int64_t> idx(order.data() + b, static_cast<std::size_t>(e - b));
      Tensor<float> x = train.gather(idx);
      const auto y = train.gather_labels(idx);
      if (cfg.augment) detail::augment_batch(x, rng);
      if (robust) {
        clean_correct += detail::count_correct(forward_logits(c, x), y);
        x = pgd_l2(c, x, y, eps, cfg.pgd_steps, cfg.pgd_step_scale, derive_seed(cfg.seed, {step_index, 1}),
                   cfg.pgd_random_start);
      }
      Graph<float> g;
      const auto params = bind_params<float>(g, c, true);
      auto out = forward<float>(c, g.constant(std::move(x)), std::span<const Var<float>>(params));
      auto loss = softmax_cross_entropy(out.logits, y);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv))
        throw DivergenceError(detail::cat("adversarial training diverged at epoch ", epoch, " batch ", batches));
      const auto hits = detail::count_correct(out.logits.value(), y);
      adv_correct += hits;
      if (!robust) clean_correct += hits;
      opt.step(c, params, g.backward(loss));
      loss_sum += lv;
    }
    EpochStats st;
    st.epoch = epoch;
    st.loss = loss_sum / static_cast<double>(batches);
    st.train_accuracy = static_cast<double>(clean_correct) / static_cast<double>(train.size());
    st.adversarial_train_accuracy = static_cast<double>(adv_correct) / static_cast<double>(train.size());
    if (test && test->size() > 0) st.test_accuracy = evaluate_accuracy(c, *test);
    hist.epochs.push_back(st);
  }
  c.set_provenance({cfg.epsilon_l2, cfg.seed, cfg.epochs});
  return {std::move(c), std::move(hist)};
}

}  // namespace rx
