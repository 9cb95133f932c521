#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace rx {

enum class OpKind {
  input,
  conv2d,
  dense,
  relu,
  avgpool2d,
  maxpool2d,
  flatten,
  add,
  scale,
  l2_distance,
  softmax_cross_entropy,
  pick_logit,
  bilinear_resize,
  place,
};

constexpr std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::conv2d: return "conv2d";
    case OpKind::dense: return "dense";
    case OpKind::relu: return "relu";
    case OpKind::avgpool2d: return "avgpool2d";
    case OpKind::maxpool2d: return "maxpool2d";
    case OpKind::flatten: return "flatten";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::l2_distance: return "l2_distance";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    case OpKind::pick_logit: return "pick_logit";
    case OpKind::bilinear_resize: return "bilinear_resize";
    case OpKind::place: return "place";
  }
  return "?";
}

template <typename T>
class Graph;

// Handle to a node of a graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return graph->value(id).shape(); }
  bool requires_grad() const { return graph->requires_grad(id); }
};

// Gradient buffers produced by one backward pass, indexed by node id.
template <typename T>
class GradMap {
 public:
  explicit GradMap(std::size_t n = 0) : grads_(n) {}

  bool has(int id) const { return id >= 0 && id < static_cast<int>(grads_.size()) && grads_[id].has_value(); }
  bool has(Var<T> v) const { return has(v.id); }
  const Tensor<T>& at(int id) const {
    if (!has(id)) throw Error("graph", detail::cat("no gradient recorded for node ", id));
    return *grads_[id];
  }
  const Tensor<T>& at(Var<T> v) const { return at(v.id); }

  // Accumulate `g` into node `id`, allocating a zero buffer on first use.
  void add(int id, const Shape& shape, std::span<const T> g) {
    auto& slot = grads_[id];
    if (!slot) {
      slot.emplace(shape, std::vector<T>(g.begin(), g.end()));
      return;
    }
    auto dst = slot->values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
  void add(int id, const Tensor<T>& g) { add(id, g.shape(), g.values()); }

 private:
  std::vector<std::optional<Tensor<T>>> grads_;
};

// Define-by-run computation graph. Each op appends a node holding its
// forward value and a closure that pushes the output gradient to its inputs.
// Nodes are appended in evaluation order, so reverse iteration is a valid
// topological order for the backward sweep.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(const Graph&, const Tensor<T>& grad_out, GradMap<T>& grads)>;

  // With `recording` off, ops still compute values but keep no closures, so
  // inference passes do not pay for saved state.
  explicit Graph(bool recording = true) : recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> input(Tensor<T> value, bool requires_grad = true) {
    return push(OpKind::input, {}, std::move(value), requires_grad && recording_, nullptr);
  }
  Var<T> constant(Tensor<T> value) { return input(std::move(value), false); }

  // Used by op implementations. `requires_grad` is inherited from inputs.
  Var<T> record(OpKind kind, std::vector<int> inputs, Tensor<T> value, BackwardFn fn) {
    bool rg = false;
    if (recording_)
      for (int i : inputs) rg = rg || nodes_[i].requires_grad;
    return push(kind, std::move(inputs), std::move(value), rg, rg ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(int id) const { return nodes_.at(id).kind; }
  const std::vector<int>& inputs(int id) const { return nodes_.at(id).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool recording() const noexcept { return recording_; }

  // Folds data-dependent branch choices (relu masks, maxpool winners) into a
  // running digest. Two evaluations with equal digests took the same
  // piecewise-linear branch everywhere.
  void note_branch(std::uint64_t v) {
    pattern_ ^= v + 0x9e3779b97f4a7c15ULL + (pattern_ << 6) + (pattern_ >> 2);
  }
  std::uint64_t branch_pattern() const noexcept { return pattern_; }

  GradMap<T> backward(Var<T> seed) const {
    const auto& s = value(seed.id);
    if (s.size() != 1)
      throw Error("graph", detail::cat("backward: seed must be scalar, got shape ", to_string(s.shape())));
    GradMap<T> grads(nodes_.size());
    if (!nodes_[seed.id].requires_grad) return grads;
    const T one = T{1};
    grads.add(seed.id, s.shape(), std::span<const T>(&one, 1));
    for (int id = seed.id; id >= 0; --id) {
      const Node& n = nodes_[id];
      if (!n.requires_grad || !grads.has(id) || !n.backward) continue;
      n.backward(*this, grads.at(id), grads);
    }
    return grads;
  }

 private:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    Tensor<T> value;
    bool requires_grad;
    BackwardFn backward;
  };

  Var<T> push(OpKind kind, std::vector<int> inputs, Tensor<T> value, bool rg, BackwardFn fn) {
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), rg, std::move(fn)});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool recording_;
  std::uint64_t pattern_ = 0;
};

}  // namespace rx
