#pragma once

// TMDI-FGSM: sign-gradient ascent under an l-infinity budget, optionally
// combined with diverse inputs (DI), translation-invariant gradient
// smoothing (TI) and l1-normalized momentum (MI).

#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>

#include "classifier.hpp"
#include "log.hpp"
#include "smoothing.hpp"

namespace rx {

enum class LossKind { xent, logit };
enum class AttackMode { targeted, untargeted, representation };

NLOHMANN_JSON_SERIALIZE_ENUM(LossKind, {{LossKind::xent, "xent"}, {LossKind::logit, "logit"}})
NLOHMANN_JSON_SERIALIZE_ENUM(AttackMode, {{AttackMode::targeted, "targeted"},
                                          {AttackMode::untargeted, "untargeted"},
                                          {AttackMode::representation, "representation"}})

inline const char* to_string(LossKind k) { return k == LossKind::xent ? "xent" : "logit"; }
inline const char* to_string(AttackMode m) {
  switch (m) {
    case AttackMode::targeted: return "targeted";
    case AttackMode::untargeted: return "untargeted";
    case AttackMode::representation: return "representation";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "xent") return LossKind::xent;
  if (s == "logit") return LossKind::logit;
  throw ValidationError(detail::cat("unknown loss kind '", s, "' (expected xent or logit)"));
}

inline AttackMode parse_attack_mode(std::string_view s) {
  if (s == "targeted") return AttackMode::targeted;
  if (s == "untargeted") return AttackMode::untargeted;
  if (s == "representation") return AttackMode::representation;
  throw ValidationError(detail::cat("unknown attack mode '", s, "' (expected targeted, untargeted or representation)"));
}

struct DiParams {
  double scale_min = 3.0 / 4.0;
  double scale_max = 4.0 / 3.0;
  double flip_prob = 0.5;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DiParams, scale_min, scale_max, flip_prob)

struct AttackConfig {
  double epsilon_inf = 16.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int iterations = 300;
  double momentum = 0.9;
  bool di_enabled = true;
  DiParams di;
  bool ti_enabled = true;
  int ti_kernel_size = 5;
  double ti_sigma = 1.0;
  bool mi_enabled = true;
  // Feed the unsmoothed DI gradient into the momentum update, exactly as the
  // literal update equations read. TI then has no effect on the step.
  bool strict_momentum = false;
  LossKind loss = LossKind::logit;
  std::uint64_t seed = 0;

  std::vector<std::string> violations(bool allow_zero_iterations = false) const {
    std::vector<std::string> bad;
    if (!(epsilon_inf > 0)) bad.push_back(detail::cat("epsilon_inf must be > 0, got ", epsilon_inf));
    if (!(step_size > 0)) bad.push_back(detail::cat("step_size must be > 0, got ", step_size));
    if (iterations < (allow_zero_iterations ? 0 : 1))
      bad.push_back(detail::cat("iterations must be >= ", allow_zero_iterations ? 0 : 1, ", got ", iterations));
    if (!(momentum >= 0 && momentum < 1)) bad.push_back(detail::cat("momentum must be in [0, 1), got ", momentum));
    if (!(di.scale_min > 0 && di.scale_min <= di.scale_max))
      bad.push_back("di scale range must satisfy 0 < scale_min <= scale_max");
    if (!(di.flip_prob >= 0 && di.flip_prob <= 1)) bad.push_back("di flip_prob must be in [0, 1]");
    if (ti_kernel_size < 1 || ti_kernel_size % 2 == 0) bad.push_back("ti_kernel_size must be odd and >= 1");
    if (!(ti_sigma > 0)) bad.push_back("ti_sigma must be > 0");
    return bad;
  }

  void validate(bool allow_zero_iterations = false) const {
    const auto bad = violations(allow_zero_iterations);
    if (bad.empty()) return;
    std::string msg = "attack config:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw ValidationError(msg);
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AttackConfig, epsilon_inf, step_size, iterations, momentum, di_enabled,
                                                di, ti_enabled, ti_kernel_size, ti_sigma, mi_enabled, strict_momentum,
                                                loss, seed)

struct Objective {
  AttackMode mode = AttackMode::targeted;
  int label = 0;  // target class (targeted) or true class (untargeted)
  Tensor<float> target_representation;  // 1 x D, representation mode only

  static Objective targeted(int t) { return {AttackMode::targeted, t, {}}; }
  static Objective untargeted(int y) { return {AttackMode::untargeted, y, {}}; }
  static Objective representation(Tensor<float> rep) { return {AttackMode::representation, -1, std::move(rep)}; }
};

// Scalar to be maximized. Class objectives only.
inline Var<float> adversarial_loss(LossKind kind, Var<float> logits, const Objective& obj) {
  if (kind != LossKind::xent && kind != LossKind::logit)
    throw ValidationError(detail::cat("adversarial_loss: unknown loss kind ", static_cast<int>(kind)));
  const std::int64_t n = logits.shape()[0], k = logits.shape()[1];
  if (obj.mode == AttackMode::representation)
    throw ValidationError("adversarial_loss: representation objectives use the representation distance");
  if (obj.label < 0 || obj.label >= k)
    throw ValidationError(detail::cat("adversarial_loss: label ", obj.label, " outside [0,", k, ")"));
  const std::vector<int> idx(static_cast<std::size_t>(n), obj.label);
  const bool targeted = obj.mode == AttackMode::targeted;
  if (kind == LossKind::xent) {
    auto ce = softmax_cross_entropy(logits, std::span<const int>(idx));
    return targeted ? scale(ce, -1.0f) : ce;
  }
  auto z = pick_logit(logits, std::span<const int>(idx));
  return targeted ? z : scale(z, -1.0f);
}

// Negative l2 distance between the produced representation and the target.
inline Var<float> representation_loss(Var<float> rep, const Tensor<float>& target) {
  if (rep.shape() != target.shape())
    throw ShapeError(detail::cat("representation objective: target ", to_string(target.shape()),
                                 " does not match representation ", to_string(rep.shape())));
  return scale(l2_distance(rep, rep.graph->constant(target)), -1.0f);
}

struct DiSample {
  std::int64_t resized_h = 0, resized_w = 0;
  std::int64_t offset_y = 0, offset_x = 0;
  bool flip = false;
};

// Draws scale, then placement offsets, then flip, always consuming the same
// number of random values.
inline DiSample sample_di(Rng& rng, const DiParams& p, std::int64_t h, std::int64_t w) {
  DiSample s;
  const double u = rng.uniform(p.scale_min, p.scale_max);
  s.resized_h = std::max<std::int64_t>(1, std::llround(u * static_cast<double>(h)));
  s.resized_w = std::max<std::int64_t>(1, std::llround(u * static_cast<double>(w)));
  auto offset = [&](std::int64_t resized, std::int64_t target) {
    return resized >= target ? -rng.between(0, resized - target) : rng.between(0, target - resized);
  };
  s.offset_y = offset(s.resized_h, h);
  s.offset_x = offset(s.resized_w, w);
  s.flip = rng.bernoulli(p.flip_prob);
  return s;
}

// Resize, crop or zero-pad back to h x w, optional mirror. Differentiable.
template <typename T>
Var<T> apply_di(Var<T> x, const DiSample& s, std::int64_t h, std::int64_t w) {
  return place(bilinear_resize(x, s.resized_h, s.resized_w), h, w, s.offset_y, s.offset_x, s.flip);
}

template <typename T>
Var<T> di_transform(Var<T> x, Rng& rng, const DiParams& p) {
  const auto& s = x.shape();
  const auto sample = sample_di(rng, p, s[2], s[3]);
  return apply_di(x, sample, s[2], s[3]);
}

struct AttackState {
  Tensor<float> delta;
  std::vector<double> momentum;  // g_TMDI
  int iteration = 0;
  double last_loss = std::numeric_limits<double>::quiet_NaN();  // at the transformed input
  double best_loss = -std::numeric_limits<double>::infinity();
  int best_iteration = -1;
  Rng rng{0};
};

inline AttackState init_attack_state(const Tensor<float>& x, std::uint64_t seed) {
  AttackState s;
  s.delta = Tensor<float>::zeros_like(x);
  s.momentum.assign(static_cast<std::size_t>(x.size()), 0.0);
  s.rng = Rng(derive_seed(seed, 0x746d6469ULL));
  return s;
}

using AttackLossFn = std::function<Var<float>(const ForwardOut<float>&)>;

inline AttackLossFn objective_loss(LossKind kind, const Objective& obj) {
  if (obj.mode == AttackMode::representation)
    return [&obj](const ForwardOut<float>& o) { return representation_loss(o.representation, obj.target_representation); };
  return [kind, &obj](const ForwardOut<float>& o) { return adversarial_loss(kind, o.logits, obj); };
}

namespace detail {

inline void check_attack_input(const Classifier& c, const Tensor<float>& x) {
  if (x.shape() != c.input_shape(1))
    throw ShapeError(detail::cat("attack: input ", to_string(x.shape()), " does not match source input ",
                                 to_string(c.input_shape(1))));
}

inline float sign_of(double v) { return v > 0 ? 1.0f : (v < 0 ? -1.0f : 0.0f); }

// Budget first, then the valid-image box.
inline void clip_delta(std::span<float> d, std::span<const float> x, float eps) {
  for (std::size_t k = 0; k < d.size(); ++k) {
    float v = std::clamp(d[k], -eps, eps);
    if (x[k] + v > 1.0f) v = 1.0f - x[k];
    if (x[k] + v < 0.0f) v = -x[k];
    d[k] = v;
  }
}

inline double evaluate_loss(const Classifier& c, const Tensor<float>& x, const Tensor<float>& delta,
                            const AttackLossFn& loss) {
  Graph<float> g(false);
  Tensor<float> xin = x;
  for (std::int64_t k = 0; k < xin.size(); ++k) xin[k] += delta[k];
  return loss(forward<float>(c, g, g.constant(std::move(xin)))).value()[0];
}

}  // namespace detail

// One TMDI-FGSM iteration on a single image (1 x C x H x W).
inline AttackState tmdi_step(const Classifier& source, const Tensor<float>& x, AttackState state,
                             const AttackConfig& cfg, const AttackLossFn& loss) {
  detail::check_attack_input(source, x);

  Graph<float> g;
  Tensor<float> xin = x;
  for (std::int64_t k = 0; k < xin.size(); ++k) xin[k] += state.delta[k];
  Var<float> xv = g.input(std::move(xin), true);
  Var<float> fed = cfg.di_enabled ? di_transform(xv, state.rng, cfg.di) : xv;
  Var<float> lv = loss(forward<float>(source, g, fed));
  state.last_loss = lv.value()[0];
  if (state.last_loss > state.best_loss) {
    state.best_loss = state.last_loss;
    state.best_iteration = state.iteration;
  }
  const auto grads = g.backward(lv);
  const Tensor<float> g_di = grads.has(xv) ? grads.at(xv) : Tensor<float>::zeros_like(x);

  const Tensor<float> g_tdi = cfg.ti_enabled ? smooth_gradient(g_di, gaussian_kernel(cfg.ti_kernel_size, cfg.ti_sigma)) : g_di;
  const Tensor<float>& g_hat = cfg.strict_momentum ? g_di : g_tdi;
  const double l1 = l1_norm(g_hat.values()) + 1e-12;
  auto d = state.delta.values();
  const float alpha = static_cast<float>(cfg.step_size);
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double normalized = static_cast<double>(g_hat[static_cast<std::int64_t>(k)]) / l1;
    const double acc = cfg.mi_enabled ? cfg.momentum * state.momentum[k] + normalized : normalized;
    state.momentum[k] = acc;
    d[k] = d[k] + alpha * detail::sign_of(acc);
  }
  detail::clip_delta(d, x.values(), static_cast<float>(cfg.epsilon_inf));
  ++state.iteration;
  return state;
}

struct SourceInfo {
  std::string arch;
  double epsilon_l2 = 0;
  std::uint64_t seed = 0;

  static SourceInfo of(const Classifier& c) {
    return {c.arch().name, c.provenance().epsilon_l2, c.provenance().seed};
  }
  friend bool operator==(const SourceInfo&, const SourceInfo&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SourceInfo, arch, epsilon_l2, seed)

struct AdversarialExample {
  Tensor<float> original;  // 1 x C x H x W
  Tensor<float> delta;
  Objective objective;
  SourceInfo source;
  int iterations = 0;
  double initial_loss = 0;  // whitebox, untransformed input, before any step
  double final_loss = 0;
  bool guard_applied = false;  // representation attack fell back to delta = 0

  Tensor<float> adversarial() const {
    Tensor<float> out = original;
    for (std::int64_t k = 0; k < out.size(); ++k) out[k] += delta[k];
    return out;
  }
  // Representation distances; the loss is their negation.
  double initial_distance() const { return -initial_loss; }
  double final_distance() const { return -final_loss; }
};

inline AdversarialExample run_attack_with(const Classifier& source, const Tensor<float>& x, Objective objective,
                                          AttackConfig cfg, const AttackLossFn& loss) {
  cfg.validate(true);
  detail::check_attack_input(source, x);
  for (float v : x.values())
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("attack: input pixel outside [0,1]");
  AdversarialExample ex;
  ex.original = x;
  ex.source = SourceInfo::of(source);
  ex.initial_loss = detail::evaluate_loss(source, x, Tensor<float>::zeros_like(x), loss);
  AttackState st = init_attack_state(x, cfg.seed);
  for (int i = 0; i < cfg.iterations; ++i) st = tmdi_step(source, x, std::move(st), cfg, loss);
  ex.delta = std::move(st.delta);
  ex.iterations = cfg.iterations;
  ex.final_loss = cfg.iterations > 0 ? detail::evaluate_loss(source, x, ex.delta, loss) : ex.initial_loss;
  ex.objective = std::move(objective);
  return ex;
}

// Representation objectives drop TI and never return a perturbation that
// ends farther from the target than the unperturbed start.
inline AdversarialExample run_attack(const Classifier& source, const Tensor<float>& x, Objective objective,
                                     AttackConfig cfg) {
  if (objective.mode != AttackMode::representation) {
    const Objective& ref = objective;
    return run_attack_with(source, x, objective, cfg, objective_loss(cfg.loss, ref));
  }
  if (objective.target_representation.shape() != Shape{1, source.representation_dim()})
    throw ShapeError(detail::cat("representation attack: target ", to_string(objective.target_representation.shape()),
                                 " but source representation is 1x", source.representation_dim()));
  if (cfg.ti_enabled) {
    log(LogLevel::warn, "representation attack: TI requested but disabled for representation objectives");
    cfg.ti_enabled = false;
  }
  const Tensor<float> target = objective.target_representation;
  AttackLossFn loss = [&target](const ForwardOut<float>& o) { return representation_loss(o.representation, target); };
  auto ex = run_attack_with(source, x, std::move(objective), cfg, loss);
  if (ex.final_loss < ex.initial_loss) {
    ex.delta = Tensor<float>::zeros_like(x);
    ex.final_loss = ex.initial_loss;
    ex.guard_applied = true;
  }
  return ex;
}

inline AdversarialExample representation_attack(const Classifier& source, const Tensor<float>& x_target,
                                                const Tensor<float>& y0, const AttackConfig& cfg) {
  detail::check_attack_input(source, x_target);
  return run_attack(source, y0, Objective::representation(forward_representation(source, x_target)), cfg);
}

struct AttackTask {
  Tensor<float> x;
  Objective objective;
};

// Task i runs with seed derive_seed(cfg.seed, i), so the thread count does
// not change any output.
inline std::vector<AdversarialExample> run_attack_batch(const Classifier& source, std::span<const AttackTask> tasks,
                                                        const AttackConfig& cfg, int threads = 1,
                                                        const std::function<void(std::size_t)>& on_done = {}) {
  cfg.validate(true);
  std::vector<std::optional<AdversarialExample>> out(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      {
        std::lock_guard lk(mu);
        if (failure) return;
      }
      try {
        AttackConfig c = cfg;
        c.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
        out[i] = run_attack(source, tasks[i].x, tasks[i].objective, c);
        if (on_done) {
          std::lock_guard lk(mu);
          on_done(i);
        }
      } catch (...) {
        std::lock_guard lk(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(tasks.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<AdversarialExample> res;
  res.reserve(out.size());
  for (auto& o : out) res.push_back(std::move(*o));
  return res;
}

}  // namespace rx
