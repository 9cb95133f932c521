#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "arch.hpp"
#include "ops.hpp"
#include "rng.hpp"

namespace rx {

// How a classifier was produced. `epsilon_l2` is the l2 robustness
// parameter used in adversarial training (0 for standard training).
struct Provenance {
  double epsilon_l2 = 0;
  std::uint64_t seed = 0;
  int epochs = 0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Provenance, epsilon_l2, seed, epochs)

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

class Classifier {
 public:
  Classifier() = default;
  Classifier(ArchSpec arch, std::vector<NamedTensor> params, Provenance prov)
      : arch_(std::move(arch)), shapes_(validate_arch(arch_)), params_(std::move(params)), prov_(prov) {
    check_params();
  }

  const ArchSpec& arch() const noexcept { return arch_; }
  const ArchShapes& shapes() const noexcept { return shapes_; }
  const Provenance& provenance() const noexcept { return prov_; }
  void set_provenance(Provenance p) {
    if (p.epsilon_l2 < 0) throw ValidationError("provenance: epsilon_l2 must be >= 0");
    prov_ = p;
  }
  std::int64_t representation_dim() const noexcept { return shapes_.representation_dim; }
  int classes() const noexcept { return arch_.classes; }

  const std::vector<NamedTensor>& params() const noexcept { return params_; }
  std::vector<NamedTensor>& mutable_params() noexcept { return params_; }

  Shape input_shape(std::int64_t n) const { return Shape{n, arch_.channels, arch_.height, arch_.width}; }

  // Expected parameter names and shapes for an architecture, in order.
  static std::vector<std::pair<std::string, Shape>> parameter_layout(const ArchSpec& a, const ArchShapes& s) {
    std::vector<std::pair<std::string, Shape>> out;
    std::int64_t ch = a.channels;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto& l = a.layers[i];
      const std::string p = "layer" + std::to_string(i);
      if (l.kind == LayerKind::conv) {
        out.emplace_back(p + ".weight", Shape{l.out, ch, l.kernel, l.kernel});
        out.emplace_back(p + ".bias", Shape{l.out});
      } else if (l.kind == LayerKind::dense) {
        out.emplace_back(p + ".weight", Shape{l.out, s.outputs[i - 1][0]});
        out.emplace_back(p + ".bias", Shape{l.out});
      }
      if (s.outputs[i].size() == 3) ch = s.outputs[i][0];
    }
    return out;
  }

 private:
  void check_params() const {
    const auto layout = parameter_layout(arch_, shapes_);
    if (layout.size() != params_.size())
      throw ValidationError(detail::cat("classifier ", arch_.name, ": expected ", layout.size(), " parameter tensors, got ",
                                        params_.size()));
    for (std::size_t i = 0; i < layout.size(); ++i)
      if (layout[i].first != params_[i].name || layout[i].second != params_[i].value.shape())
        throw ValidationError(detail::cat("classifier ", arch_.name, ": parameter ", i, " is ", params_[i].name,
                                          to_string(params_[i].value.shape()), ", expected ", layout[i].first,
                                          to_string(layout[i].second)));
    if (prov_.epsilon_l2 < 0) throw ValidationError("provenance: epsilon_l2 must be >= 0");
  }

  ArchSpec arch_;
  ArchShapes shapes_;
  std::vector<NamedTensor> params_;
  Provenance prov_;
};

// He-style uniform init, bound sqrt(6 / fan_in); biases start at zero.
inline Classifier build_classifier(const ArchSpec& arch, std::uint64_t seed) {
  const auto shapes = validate_arch(arch);
  Rng rng(derive_seed(seed, fnv1a(arch.name.data(), arch.name.size())));
  std::vector<NamedTensor> params;
  for (auto& [name, shape] : Classifier::parameter_layout(arch, shapes)) {
    Tensor<float> t(shape);
    if (shape.size() > 1) {
      const std::int64_t fan_in = t.size() / shape[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    params.push_back({name, std::move(t)});
  }
  return Classifier(arch, std::move(params), Provenance{0, seed, 0});
}

template <typename T>
struct ForwardOut {
  Var<T> logits;
  Var<T> representation;
};

// Registers parameters as graph leaves. Pass `trainable` when parameter
// gradients are wanted.
template <typename T>
std::vector<Var<T>> bind_params(Graph<T>& g, const Classifier& c, bool trainable) {
  std::vector<Var<T>> out;
  out.reserve(c.params().size());
  for (const auto& p : c.params()) {
    if constexpr (std::is_same_v<T, float>)
      out.push_back(g.input(p.value, trainable));
    else
      out.push_back(g.input(p.value.template cast<T>(), trainable));
  }
  return out;
}

template <typename T>
ForwardOut<T> forward(const Classifier& c, Var<T> x, std::span<const Var<T>> params) {
  const auto& a = c.arch();
  const auto& xs = x.shape();
  if (xs.size() != 4 || xs[1] != a.channels || xs[2] != a.height || xs[3] != a.width)
    throw ShapeError(detail::cat("classifier ", a.name, ": input ", to_string(xs), " does not match Nx", a.channels,
                                 "x", a.height, "x", a.width));
  Var<T> h = x;
  Var<T> rep{};
  std::size_t p = 0;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& l = a.layers[i];
    switch (l.kind) {
      case LayerKind::conv:
        h = conv2d(h, params[p], params[p + 1], l.stride, l.pad);
        p += 2;
        break;
      case LayerKind::dense:
        h = dense(h, params[p], params[p + 1]);
        p += 2;
        break;
      case LayerKind::relu: h = relu(h); break;
      case LayerKind::maxpool: h = maxpool2d(h, l.kernel, l.stride); break;
      case LayerKind::avgpool: h = avgpool2d(h, l.kernel, l.stride); break;
      case LayerKind::flatten: h = flatten(h); break;
    }
    if (l.representation) rep = h;
  }
  return {h, rep};
}

template <typename T>
ForwardOut<T> forward(const Classifier& c, Graph<T>& g, Var<T> x, bool trainable = false) {
  const auto params = bind_params<T>(g, c, trainable);
  return forward<T>(c, x, std::span<const Var<T>>(params));
}

inline Tensor<float> forward_logits(const Classifier& c, const Tensor<float>& batch) {
  Graph<float> g(false);
  return forward<float>(c, g, g.constant(batch)).logits.value();
}

inline Tensor<float> forward_representation(const Classifier& c, const Tensor<float>& batch) {
  Graph<float> g(false);
  return forward<float>(c, g, g.constant(batch)).representation.value();
}

// Row-wise argmax; ties go to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (std::int64_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = static_cast<int>(j);
    out[i] = best;
  }
  return out;
}

inline std::vector<int> predict(const Classifier& c, const Tensor<float>& batch) {
  return argmax_rows(forward_logits(c, batch));
}

}  // namespace rx
