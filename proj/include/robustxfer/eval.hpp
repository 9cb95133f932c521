#pragma once

#include <cmath>
#include <map>

#include "evalset.hpp"
#include "example_set.hpp"

namespace rx {

using ModelInfo = SourceInfo;

struct TransferRecord {
  ModelInfo source;
  ModelInfo destination;
  LossKind loss = LossKind::logit;
  AttackMode mode = AttackMode::targeted;
  std::int64_t n = 0;
  double targeted_success = 0;
  double untargeted_error = 0;
  double baseline_targeted = 0;
  double baseline_error = 0;
  // Spread across eval-set draws (0 with a single draw).
  int draws = 1;
  double targeted_success_std = 0;
  double untargeted_error_std = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TransferRecord, source, destination, loss, mode, n, targeted_success, untargeted_error,
                                   baseline_targeted, baseline_error, draws, targeted_success_std, untargeted_error_std)

struct RepSimilarityRecord {
  ModelInfo source;
  ModelInfo destination;
  double mean_cosine = 0;
  std::vector<double> per_target_mean;
  std::int64_t pairs = 0;
  std::int64_t zero_vectors = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RepSimilarityRecord, source, destination, mean_cosine, per_target_mean, pairs,
                                   zero_vectors)

// Bilinear rescale to the destination's input size; equal sizes pass through.
inline Tensor<float> fit_to_destination(const Classifier& dest, const Tensor<float>& images) {
  const auto& a = dest.arch();
  if (images.rank() != 4 || images.dim(1) != a.channels)
    throw ShapeError(detail::cat("destination ", a.name, ": image ", to_string(images.shape()), " has wrong channels"));
  if (images.dim(2) == a.height && images.dim(3) == a.width) return images;
  Graph<float> g(false);
  return bilinear_resize(g.constant(images), a.height, a.width).value();
}

inline int classify_for_destination(const Classifier& dest, const AdversarialExample& adv) {
  return predict(dest, fit_to_destination(dest, adv.adversarial()))[0];
}

struct RatePair {
  double rate = 0;
  double baseline = 0;
};

namespace detail {

struct Predictions {
  std::vector<int> adversarial, clean;
};

inline Predictions destination_predictions(const Classifier& dest, std::span<const LabeledExample> ex,
                                           std::int64_t batch = 128) {
  if (ex.empty()) throw ValidationError("evaluation: empty example set");
  Predictions p;
  for (std::size_t b = 0; b < ex.size(); b += static_cast<std::size_t>(batch)) {
    const std::size_t e = std::min(ex.size(), b + static_cast<std::size_t>(batch));
    std::vector<Tensor<float>> adv, clean;
    for (std::size_t i = b; i < e; ++i) {
      adv.push_back(ex[i].example.adversarial());
      clean.push_back(ex[i].example.original);
    }
    for (int v : predict(dest, fit_to_destination(dest, stack_rows(adv)))) p.adversarial.push_back(v);
    for (int v : predict(dest, fit_to_destination(dest, stack_rows(clean)))) p.clean.push_back(v);
  }
  return p;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0 : s / static_cast<double>(v.size());
}

// Population standard deviation.
inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace detail

// Fraction classified as the target; baseline on the unperturbed images.
inline RatePair targeted_success_rate(const Classifier& dest, std::span<const LabeledExample> ex) {
  const auto p = detail::destination_predictions(dest, ex);
  std::int64_t hit = 0, base = 0;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    hit += p.adversarial[i] == ex[i].item.target_label;
    base += p.clean[i] == ex[i].item.target_label;
  }
  const double n = static_cast<double>(ex.size());
  return {hit / n, base / n};
}

// Fraction not classified as the true class; baseline on unperturbed images.
inline RatePair untargeted_error_rate(const Classifier& dest, std::span<const LabeledExample> ex) {
  const auto p = detail::destination_predictions(dest, ex);
  std::int64_t err = 0, base = 0;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    err += p.adversarial[i] != ex[i].item.true_label;
    base += p.clean[i] != ex[i].item.true_label;
  }
  const double n = static_cast<double>(ex.size());
  return {err / n, base / n};
}

inline TransferRecord evaluate_transfer(const Classifier& dest, std::span<const LabeledExample> ex, LossKind loss,
                                        AttackMode mode) {
  if (ex.empty()) throw ValidationError("evaluation: empty example set");
  const auto p = detail::destination_predictions(dest, ex);
  TransferRecord r;
  r.source = ex.front().example.source;
  r.destination = SourceInfo::of(dest);
  r.loss = loss;
  r.mode = mode;
  r.n = static_cast<std::int64_t>(ex.size());
  std::map<int, std::array<std::int64_t, 3>> per_draw;  // hits, errors, count
  std::int64_t hit = 0, err = 0, bhit = 0, berr = 0;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const auto& it = ex[i].item;
    const bool h = p.adversarial[i] == it.target_label, e = p.adversarial[i] != it.true_label;
    hit += h;
    err += e;
    bhit += p.clean[i] == it.target_label;
    berr += p.clean[i] != it.true_label;
    auto& d = per_draw[it.draw];
    d[0] += h;
    d[1] += e;
    d[2] += 1;
  }
  const double n = static_cast<double>(r.n);
  r.targeted_success = hit / n;
  r.untargeted_error = err / n;
  r.baseline_targeted = bhit / n;
  r.baseline_error = berr / n;
  std::vector<double> ts, ue;
  for (const auto& [_, d] : per_draw) {
    ts.push_back(static_cast<double>(d[0]) / static_cast<double>(d[2]));
    ue.push_back(static_cast<double>(d[1]) / static_cast<double>(d[2]));
  }
  r.draws = static_cast<int>(per_draw.size());
  r.targeted_success_std = detail::stddev_of(ts);
  r.untargeted_error_std = detail::stddev_of(ue);
  return r;
}

inline TransferRecord evaluate_transfer(const Classifier& dest, const ExampleSet& set, const Dataset& d) {
  if (set.mode == AttackMode::representation)
    throw ValidationError("evaluate_transfer: representation example sets are scored by cosine similarity");
  const auto ex = materialize(set, d);
  return evaluate_transfer(dest, ex, set.config.loss, set.mode);
}

// Adversarially trained destinations go through exactly the same scoring.
inline TransferRecord evaluate_robust_destination(const Classifier& robust_dest, const ExampleSet& set,
                                                  const Dataset& d) {
  return evaluate_transfer(robust_dest, set, d);
}

// Zero vectors give cosine 0.
inline double cosine_similarity(std::span<const float> a, std::span<const float> b, bool* degenerate = nullptr) {
  if (a.size() != b.size()) throw ShapeError("cosine: vectors differ in length");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (degenerate) *degenerate = na == 0 || nb == 0;
  if (na == 0 || nb == 0) return 0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct RepresentationPair {
  Tensor<float> target;       // x, 1 x C x H x W
  Tensor<float> adversarial;  // y = y0 + delta
  int target_id = 0;          // groups pairs for the per-target means
};

inline RepSimilarityRecord representation_cosine(const Classifier& dest, std::span<const RepresentationPair> tasks,
                                                 std::vector<Tensor<float>>* adversarial_reps = nullptr) {
  if (tasks.empty()) throw ValidationError("representation cosine: no tasks");
  RepSimilarityRecord r;
  r.destination = SourceInfo::of(dest);
  std::map<int, Tensor<float>> target_rep;
  std::map<int, std::pair<double, std::int64_t>> per_target;
  double total = 0;
  for (const auto& t : tasks) {
    auto it = target_rep.find(t.target_id);
    if (it == target_rep.end())
      it = target_rep.emplace(t.target_id, forward_representation(dest, fit_to_destination(dest, t.target))).first;
    const auto ry = forward_representation(dest, fit_to_destination(dest, t.adversarial));
    bool degenerate = false;
    const double c = cosine_similarity(it->second.values(), ry.values(), &degenerate);
    r.zero_vectors += degenerate;
    total += c;
    auto& pt = per_target[t.target_id];
    pt.first += c;
    pt.second += 1;
    if (adversarial_reps) adversarial_reps->push_back(ry);
  }
  if (r.zero_vectors > 0)
    log(LogLevel::warn, detail::cat("representation cosine: ", r.zero_vectors, " pair(s) with a zero representation scored 0"));
  r.pairs = static_cast<std::int64_t>(tasks.size());
  r.mean_cosine = total / static_cast<double>(r.pairs);
  for (const auto& [_, v] : per_target) r.per_target_mean.push_back(v.first / static_cast<double>(v.second));
  return r;
}

inline std::vector<RepresentationPair> representation_pairs(const ExampleSet& set, const Dataset& d) {
  if (set.mode != AttackMode::representation) throw ValidationError("representation pairs: not a representation set");
  std::vector<RepresentationPair> out;
  for (auto& le : materialize(set, d)) {
    if (le.item.target_index < 0 || le.item.target_index >= d.size())
      throw ValidationError("representation pairs: target index out of range");
    out.push_back({d.image(le.item.target_index), le.example.adversarial(), static_cast<int>(le.item.target_index)});
  }
  return out;
}

inline RepSimilarityRecord evaluate_representation(const Classifier& dest, const ExampleSet& set, const Dataset& d,
                                                   std::vector<Tensor<float>>* adversarial_reps = nullptr) {
  const auto pairs = representation_pairs(set, d);
  auto r = representation_cosine(dest, pairs, adversarial_reps);
  r.source = set.source;
  return r;
}

// Example generation ---------------------------------------------------------

// Attacks every item of every eval-set draw. Untargeted items keep the
// draw's target class so both rates can be scored from one set.
inline ExampleSet generate_transfer_examples(const Classifier& source, const Dataset& d,
                                             std::span<const EvalSet> draws, AttackConfig cfg, AttackMode mode,
                                             int threads = 1) {
  if (mode == AttackMode::representation) throw ValidationError("transfer examples: use representation generation");
  if (d.classes != source.classes())
    throw ValidationError(detail::cat("source ", source.arch().name, " has ", source.classes(),
                                      " classes, dataset has ", d.classes));
  std::vector<AttackTask> tasks;
  std::vector<std::int64_t> idx;
  std::vector<int> truth, targets, draw_id;
  for (std::size_t k = 0; k < draws.size(); ++k)
    for (const auto& it : draws[k].items) {
      tasks.push_back({d.image(it.index), mode == AttackMode::targeted ? Objective::targeted(it.target_label)
                                                                        : Objective::untargeted(it.true_label)});
      idx.push_back(it.index);
      truth.push_back(it.true_label);
      targets.push_back(it.target_label);
      draw_id.push_back(static_cast<int>(k));
    }
  const auto ex = run_attack_batch(source, tasks, cfg, threads);
  auto set = make_example_set(ex, idx, truth, targets, cfg, mode, {}, draw_id);
  set.dataset_digest = dataset_digest(d);
  set.split = d.split;
  return set;
}

inline ExampleSet generate_representation_examples(const Classifier& source, const Dataset& d,
                                                   const RepresentationEvalSet& rs, AttackConfig cfg,
                                                   int threads = 1) {
  if (cfg.ti_enabled) {
    log(LogLevel::warn, "representation attack: TI requested but disabled for representation objectives");
    cfg.ti_enabled = false;
  }
  std::vector<AttackTask> tasks;
  std::vector<std::int64_t> idx, tidx;
  std::vector<int> truth;
  std::map<std::int64_t, Tensor<float>> reps;
  for (auto t : rs.targets) reps.emplace(t, forward_representation(source, d.image(t)));
  for (auto t : rs.targets)
    for (auto y0 : rs.initials) {
      tasks.push_back({d.image(y0), Objective::representation(reps.at(t))});
      idx.push_back(y0);
      tidx.push_back(t);
      truth.push_back(d.labels[static_cast<std::size_t>(y0)]);
    }
  const auto ex = run_attack_batch(source, tasks, cfg, threads);
  auto set = make_example_set(ex, idx, truth, {}, cfg, AttackMode::representation, tidx);
  set.dataset_digest = dataset_digest(d);
  set.split = d.split;
  return set;
}

// In-memory sweep --------------------------------------------------------------

struct SweepSpec {
  std::vector<LossKind> losses{LossKind::logit};
  std::vector<AttackMode> modes{AttackMode::targeted, AttackMode::untargeted};
  bool representation = true;
  AttackConfig attack;
  int eval_n = 10;
  std::vector<std::uint64_t> eval_seeds{0};
  int rep_targets = 10;
  int rep_initials = 90;
  std::uint64_t rep_seed = 0;
  int threads = 1;
};

struct SweepResult {
  std::vector<TransferRecord> transfer;
  std::vector<RepSimilarityRecord> representation;
};

// Examples are generated once per source and reused for every destination.
inline SweepResult sweep(std::span<const Classifier> sources, std::span<const Classifier> destinations,
                         const Dataset& d, const SweepSpec& spec) {
  for (const auto& m : sources)
    if (m.classes() != d.classes) throw ValidationError("sweep: source class count differs from dataset");
  for (const auto& m : destinations)
    if (m.classes() != d.classes) throw ValidationError("sweep: destination class count differs from dataset");
  std::vector<EvalSet> draws;
  for (auto s : spec.eval_seeds) draws.push_back(sample_eval_set(d, spec.eval_n, s));
  SweepResult out;
  for (const auto& src : sources) {
    for (auto loss : spec.losses)
      for (auto mode : spec.modes) {
        AttackConfig cfg = spec.attack;
        cfg.loss = loss;
        const auto set = generate_transfer_examples(src, d, draws, cfg, mode, spec.threads);
        for (const auto& dst : destinations) out.transfer.push_back(evaluate_transfer(dst, set, d));
      }
    if (spec.representation) {
      const auto rs = sample_representation_eval(d, spec.rep_targets, spec.rep_initials, spec.rep_seed);
      const auto set = generate_representation_examples(src, d, rs, spec.attack, spec.threads);
      for (const auto& dst : destinations) out.representation.push_back(evaluate_representation(dst, set, d));
    }
  }
  return out;
}

}  // namespace rx
