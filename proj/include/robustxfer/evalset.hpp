#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "dataset.hpp"

namespace rx {

struct EvalItem {
  std::int64_t index = 0;  // into the source dataset
  int true_label = 0;
  int target_label = 0;

  friend bool operator==(const EvalItem&, const EvalItem&) = default;
};

// One image per sampled class; each sampled class is the target of exactly
// one image and never of its own.
struct EvalSet {
  std::vector<EvalItem> items;
  std::uint64_t seed = 0;
  std::string split;
};

// Uniform permutation of [0, n) without fixed points, by rejection.
inline std::vector<int> sample_derangement(int n, Rng& rng) {
  if (n < 2) throw ValidationError(detail::cat("derangement: needs n >= 2, got ", n));
  std::vector<int> p(static_cast<std::size_t>(n));
  for (;;) {
    std::iota(p.begin(), p.end(), 0);
    rng.shuffle(p.begin(), p.end());
    bool fixed = false;
    for (int i = 0; i < n && !fixed; ++i) fixed = p[i] == i;
    if (!fixed) return p;
  }
}

namespace detail {

inline std::vector<std::vector<std::int64_t>> indices_by_class(const Dataset& d) {
  std::vector<std::vector<std::int64_t>> by(static_cast<std::size_t>(d.classes));
  for (std::int64_t i = 0; i < d.size(); ++i) by[d.labels[i]].push_back(i);
  return by;
}

}  // namespace detail

inline EvalSet sample_eval_set(const Dataset& d, int n, std::uint64_t seed) {
  if (n > d.classes) throw ValidationError(detail::cat("eval set: n=", n, " exceeds class count ", d.classes));
  if (n < 2) throw ValidationError(detail::cat("eval set: n=", n, " leaves no valid target assignment"));
  const auto by = detail::indices_by_class(d);
  Rng rng(derive_seed(seed, 0x65766131ULL));
  std::vector<int> classes(static_cast<std::size_t>(d.classes));
  std::iota(classes.begin(), classes.end(), 0);
  rng.shuffle(classes.begin(), classes.end());
  classes.resize(static_cast<std::size_t>(n));
  EvalSet out;
  out.seed = seed;
  out.split = d.split;
  for (int c : classes) {
    if (by[c].empty()) throw ValidationError(detail::cat("eval set: class ", c, " has no images"));
    out.items.push_back({by[c][rng.below(by[c].size())], c, 0});
  }
  const auto perm = sample_derangement(n, rng);
  for (int i = 0; i < n; ++i) out.items[i].target_label = classes[perm[i]];
  return out;
}

// Targets come from distinct classes; initials are class-balanced and
// disjoint from the targets. Every (target, initial) pair is one task.
struct RepresentationEvalSet {
  std::vector<std::int64_t> targets;
  std::vector<std::int64_t> initials;
  std::uint64_t seed = 0;

  std::int64_t task_count() const { return static_cast<std::int64_t>(targets.size() * initials.size()); }
};

inline RepresentationEvalSet sample_representation_eval(const Dataset& d, int n_targets, int n_initials,
                                                        std::uint64_t seed) {
  if (n_targets < 1 || n_initials < 1) throw ValidationError("representation eval: need >= 1 target and initial");
  if (n_targets > d.classes)
    throw ValidationError(detail::cat("representation eval: ", n_targets, " targets need as many classes, have ",
                                      d.classes));
  if (n_targets + n_initials > d.size())
    throw ValidationError(detail::cat("representation eval: need ", n_targets + n_initials, " images, dataset has ",
                                      d.size()));
  auto by = detail::indices_by_class(d);
  Rng rng(derive_seed(seed, 0x72657031ULL));
  for (auto& v : by) rng.shuffle(v.begin(), v.end());
  std::vector<int> classes(static_cast<std::size_t>(d.classes));
  std::iota(classes.begin(), classes.end(), 0);
  rng.shuffle(classes.begin(), classes.end());

  RepresentationEvalSet out;
  out.seed = seed;
  std::vector<std::size_t> next(by.size(), 0);
  for (int i = 0; i < n_targets; ++i) {
    const int c = classes[i];
    if (by[c].empty()) throw ValidationError(detail::cat("representation eval: class ", c, " has no images"));
    out.targets.push_back(by[c][next[c]++]);
  }
  // Round-robin over classes for balance.
  std::size_t cursor = 0, idle = 0;
  while (static_cast<int>(out.initials.size()) < n_initials) {
    const int c = classes[cursor % classes.size()];
    ++cursor;
    if (next[c] < by[c].size()) {
      out.initials.push_back(by[c][next[c]++]);
      idle = 0;
    } else if (++idle > classes.size()) {
      throw ValidationError("representation eval: ran out of distinct images");
    }
  }
  return out;
}

}  // namespace rx
