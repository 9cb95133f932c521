#pragma once

#include <cctype>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace rx {

enum class LayerKind { conv, relu, maxpool, avgpool, flatten, dense };

NLOHMANN_JSON_SERIALIZE_ENUM(LayerKind, {{LayerKind::conv, "conv"},
                                         {LayerKind::relu, "relu"},
                                         {LayerKind::maxpool, "maxpool"},
                                         {LayerKind::avgpool, "avgpool"},
                                         {LayerKind::flatten, "flatten"},
                                         {LayerKind::dense, "dense"}})

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int out = 0;     // conv: output channels; dense: output width
  int kernel = 0;  // conv kernel or pooling window
  int stride = 1;
  int pad = 0;
  bool representation = false;  // output of this layer is the representation

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LayerSpec, kind, out, kernel, stride, pad, representation)

struct ArchSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  int channels = 3, height = 32, width = 32;
  int classes = 10;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ArchSpec, name, layers, channels, height, width, classes)

struct ArchShapes {
  // Per-layer output shape without the batch axis (CHW or a single width).
  std::vector<std::vector<std::int64_t>> outputs;
  int representation_layer = -1;
  std::int64_t representation_dim = 0;
};

inline std::string layer_label(const ArchSpec& a, std::size_t i) {
  return detail::cat(a.name, " layer ", i, " (", nlohmann::json(a.layers[i].kind).get<std::string>(), ")");
}

// Walks the layer list, checking that shapes compose, that the last layer
// is a dense classifier over `classes`, and that exactly one layer (the
// classifier's input) is flagged as the representation.
inline ArchShapes validate_arch(const ArchSpec& a) {
  if (a.layers.empty()) throw ValidationError("arch " + a.name + ": no layers");
  if (a.channels < 1 || a.height < 1 || a.width < 1)
    throw ValidationError(detail::cat("arch ", a.name, ": bad input shape ", a.channels, "x", a.height, "x", a.width));
  if (a.classes < 2) throw ValidationError(detail::cat("arch ", a.name, ": needs >= 2 classes, got ", a.classes));
  ArchShapes out;
  std::vector<std::int64_t> cur{a.channels, a.height, a.width};
  int reps = 0;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& l = a.layers[i];
    auto fail = [&](const std::string& why) {
      throw ValidationError(layer_label(a, i) + " does not compose: " + why);
    };
    switch (l.kind) {
      case LayerKind::conv: {
        if (cur.size() != 3) fail("expects a CHW input");
        if (l.out < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0) fail("bad conv parameters");
        const auto oh = (cur[1] + 2 * l.pad - l.kernel) / l.stride + 1;
        const auto ow = (cur[2] + 2 * l.pad - l.kernel) / l.stride + 1;
        if (cur[1] + 2 * l.pad < l.kernel || cur[2] + 2 * l.pad < l.kernel || oh < 1 || ow < 1)
          fail("kernel larger than input");
        cur = {l.out, oh, ow};
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool: {
        if (cur.size() != 3) fail("expects a CHW input");
        const int s = l.stride > 0 ? l.stride : l.kernel;
        if (l.kernel < 1 || cur[1] < l.kernel || cur[2] < l.kernel)
          fail(detail::cat("window ", l.kernel, " does not fit ", cur[1], "x", cur[2]));
        cur = {cur[0], (cur[1] - l.kernel) / s + 1, (cur[2] - l.kernel) / s + 1};
        break;
      }
      case LayerKind::flatten:
        if (cur.size() != 3) fail("expects a CHW input");
        cur = {cur[0] * cur[1] * cur[2]};
        break;
      case LayerKind::dense:
        if (cur.size() != 1) fail("expects a flat input");
        if (l.out < 1) fail("bad width");
        cur = {l.out};
        break;
    }
    out.outputs.push_back(cur);
    if (l.representation) {
      ++reps;
      out.representation_layer = static_cast<int>(i);
    }
  }
  const auto& last = a.layers.back();
  if (last.kind != LayerKind::dense || last.out != a.classes)
    throw ValidationError(layer_label(a, a.layers.size() - 1) + " must be a dense layer over " +
                          std::to_string(a.classes) + " classes");
  if (reps != 1)
    throw ValidationError(detail::cat("arch ", a.name, ": expected exactly one representation layer, found ", reps));
  if (out.representation_layer != static_cast<int>(a.layers.size()) - 2 ||
      out.outputs[out.representation_layer].size() != 1)
    throw ValidationError("arch " + a.name + ": representation layer must be the flat input of the final dense layer");
  out.representation_dim = out.outputs[out.representation_layer][0];
  return out;
}

namespace arch {

inline LayerSpec conv(int out, int k, int pad, int stride = 1) { return {LayerKind::conv, out, k, stride, pad, false}; }
inline LayerSpec relu() { return {LayerKind::relu}; }
inline LayerSpec maxpool(int k) { return {LayerKind::maxpool, 0, k, k, 0, false}; }
inline LayerSpec avgpool(int k) { return {LayerKind::avgpool, 0, k, k, 0, false}; }
inline LayerSpec flatten_rep() { return {LayerKind::flatten, 0, 0, 1, 0, true}; }
inline LayerSpec dense(int out) { return {LayerKind::dense, out, 0, 1, 0, false}; }

// Four 3x3 convs in two max-pooled blocks.
inline ArchSpec a(int ch = 3, int h = 32, int w = 32, int k = 10) {
  return {"A",
          {conv(16, 3, 1), relu(), conv(16, 3, 1), relu(), maxpool(2), conv(32, 3, 1), relu(), conv(32, 3, 1),
           relu(), maxpool(2), flatten_rep(), dense(k)},
          ch, h, w, k};
}

// Wider, six convs, average pooling in the first two blocks.
inline ArchSpec b(int ch = 3, int h = 32, int w = 32, int k = 10) {
  return {"B",
          {conv(24, 3, 1), relu(), conv(24, 3, 1), relu(), avgpool(2), conv(48, 3, 1), relu(), conv(48, 3, 1),
           relu(), avgpool(2), conv(64, 3, 1), relu(), conv(64, 3, 1), relu(), maxpool(2), flatten_rep(), dense(k)},
          ch, h, w, k};
}

// Compact: two 5x5 convs, aggressive pooling.
inline ArchSpec c(int ch = 3, int h = 32, int w = 32, int k = 10) {
  return {"C", {conv(16, 5, 2), relu(), maxpool(2), conv(32, 5, 2), relu(), maxpool(4), flatten_rep(), dense(k)},
          ch, h, w, k};
}

// Minimal single-conv net for fast end-to-end checks.
inline ArchSpec t(int ch = 3, int h = 32, int w = 32, int k = 10) {
  return {"T", {conv(6, 3, 1), relu(), maxpool(2), flatten_rep(), dense(k)}, ch, h, w, k};
}

// Case-insensitive.
inline ArchSpec by_name(std::string name, int ch, int h, int w, int k) {
  for (auto& c : name) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (name == "A") return a(ch, h, w, k);
  if (name == "B") return b(ch, h, w, k);
  if (name == "C") return c(ch, h, w, k);
  if (name == "T") return t(ch, h, w, k);
  throw ValidationError("unknown architecture '" + name + "' (known: A, B, C, T)");
}

}  // namespace arch
}  // namespace rx
