#pragma once

// On-disk example sets: a directory holding manifest.json and
// perturbations.f32 (little-endian float32, item-major, each item C*H*W
// values in CHW order). Original images are referenced by dataset index.

#include <filesystem>

#include "attack.hpp"
#include "bytes.hpp"
#include "dataset.hpp"

namespace rx {

inline constexpr int kExampleSetVersion = 1;
inline constexpr const char* kExampleManifest = "manifest.json";
inline constexpr const char* kExamplePayload = "perturbations.f32";

struct ExampleItem {
  std::int64_t index = 0;  // image in the source dataset split
  int true_label = 0;
  AttackMode mode = AttackMode::targeted;
  int target_label = -1;          // class objectives
  std::int64_t target_index = -1;  // representation objectives: dataset index of the target image
  double initial_loss = 0;
  double final_loss = 0;
  bool guard_applied = false;
  int draw = 0;  // which eval-set draw produced the item

  friend bool operator==(const ExampleItem&, const ExampleItem&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ExampleItem, index, true_label, mode, target_label, target_index, initial_loss,
                                   final_loss, guard_applied, draw)

struct ExampleSet {
  SourceInfo source;
  std::string source_checkpoint_digest;
  std::string dataset_digest;
  std::string split;
  AttackConfig config;
  AttackMode mode = AttackMode::targeted;
  Shape image_shape;  // C, H, W
  std::vector<ExampleItem> items;
  Tensor<float> deltas;  // N x C x H x W

  std::int64_t size() const { return static_cast<std::int64_t>(items.size()); }

  Tensor<float> delta(std::int64_t i) const { return deltas.slice_rows(i, i + 1); }
};

// Gather finished attacks into a set. `indices[i]` is the dataset index of
// examples[i]. Untargeted items still carry the eval-set target class so
// targeted success can be scored; representation items name their target
// image through `target_indices[i]`.
inline ExampleSet make_example_set(std::span<const AdversarialExample> examples, std::span<const std::int64_t> indices,
                                   std::span<const int> true_labels, std::span<const int> target_labels,
                                   const AttackConfig& cfg, AttackMode mode,
                                   std::span<const std::int64_t> target_indices = {},
                                   std::span<const int> draws = {}) {
  if (examples.empty()) throw ValidationError("example set: no examples");
  if (indices.size() != examples.size() || true_labels.size() != examples.size() ||
      (!target_labels.empty() && target_labels.size() != examples.size()) ||
      (!target_indices.empty() && target_indices.size() != examples.size()) ||
      (!draws.empty() && draws.size() != examples.size()))
    throw ValidationError("example set: per-item metadata length mismatch");
  ExampleSet s;
  s.source = examples.front().source;
  s.config = cfg;
  s.mode = mode;
  const Shape& one = examples.front().delta.shape();
  s.image_shape = Shape(one.begin() + 1, one.end());
  std::vector<Tensor<float>> rows;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    if (e.delta.shape() != one) throw ShapeError("example set: perturbations differ in shape");
    ExampleItem it;
    it.index = indices[i];
    it.true_label = true_labels[i];
    it.mode = mode;
    if (!target_labels.empty()) it.target_label = target_labels[i];
    if (!target_indices.empty()) it.target_index = target_indices[i];
    if (!draws.empty()) it.draw = draws[i];
    it.initial_loss = e.initial_loss;
    it.final_loss = e.final_loss;
    it.guard_applied = e.guard_applied;
    s.items.push_back(it);
    rows.push_back(e.delta);
  }
  s.deltas = stack_rows(rows);
  return s;
}

inline nlohmann::json example_manifest(const ExampleSet& s, const std::string& payload_sha256) {
  return {{"format", "robustxfer-example-set"},
          {"version", kExampleSetVersion},
          {"source", s.source},
          {"source_checkpoint_digest", s.source_checkpoint_digest},
          {"dataset_digest", s.dataset_digest},
          {"split", s.split},
          {"mode", s.mode},
          {"config", s.config},
          {"image_shape", s.image_shape},
          {"count", s.items.size()},
          {"payload", kExamplePayload},
          {"payload_sha256", payload_sha256},
          {"items", s.items}};
}

inline std::vector<std::uint8_t> encode_example_payload(const ExampleSet& s) {
  ByteWriter w;
  for (float v : s.deltas.values()) w.f32(v);
  return std::move(w.data());
}

inline void save_example_set(const ExampleSet& s, const std::filesystem::path& dir) {
  if (s.deltas.rank() != 4 || s.deltas.dim(0) != s.size())
    throw ValidationError("example set: perturbation tensor does not match item count");
  std::filesystem::create_directories(dir);
  const auto payload = encode_example_payload(s);
  write_file(dir / kExamplePayload, payload);
  write_file(dir / kExampleManifest, example_manifest(s, sha256_hex(payload)).dump(2) + "\n");
}

inline ExampleSet load_example_set(const std::filesystem::path& dir) {
  const auto mpath = dir / kExampleManifest, ppath = dir / kExamplePayload;
  if (!std::filesystem::exists(mpath)) throw MissingArtifactError("example set manifest not found: " + mpath.string());
  if (!std::filesystem::exists(ppath)) throw MissingArtifactError("example set payload not found: " + ppath.string());
  const auto mbytes = read_file(mpath);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(mbytes.begin(), mbytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt", std::string("example set manifest is not valid JSON: ") + e.what());
  }
  try {
    if (m.value("format", "") != "robustxfer-example-set")
      throw FormatError("bad-magic", "example set manifest: unexpected format tag");
    const int version = m.at("version").get<int>();
    if (version != kExampleSetVersion)
      throw FormatError("unsupported-version", detail::cat("example set version ", version, " is not supported (expected ",
                                                          kExampleSetVersion, ")"));
    ExampleSet s;
    s.source = m.at("source").get<SourceInfo>();
    s.source_checkpoint_digest = m.at("source_checkpoint_digest").get<std::string>();
    s.dataset_digest = m.at("dataset_digest").get<std::string>();
    s.split = m.at("split").get<std::string>();
    s.mode = m.at("mode").get<AttackMode>();
    s.config = m.at("config").get<AttackConfig>();
    s.image_shape = m.at("image_shape").get<Shape>();
    s.items = m.at("items").get<std::vector<ExampleItem>>();
    if (m.at("count").get<std::size_t>() != s.items.size())
      throw FormatError("corrupt", "example set manifest: count does not match items");
    if (s.image_shape.size() != 3) throw FormatError("corrupt", "example set manifest: image_shape must be C,H,W");
    const auto payload = read_file(ppath);
    const std::size_t expect = static_cast<std::size_t>(s.size() * numel(s.image_shape)) * 4;
    if (payload.size() != expect)
      throw FormatError("truncated", detail::cat("example set payload has ", payload.size(), " bytes, expected ", expect));
    if (sha256_hex(payload) != m.at("payload_sha256").get<std::string>())
      throw FormatError("checksum", "example set payload digest mismatch");
    Shape ds{s.size()};
    ds.insert(ds.end(), s.image_shape.begin(), s.image_shape.end());
    std::vector<float> v(static_cast<std::size_t>(numel(ds)));
    ByteReader r(payload);
    for (auto& x : v) x = r.f32();
    s.deltas = Tensor<float>(std::move(ds), std::move(v));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt", std::string("example set manifest: ") + e.what());
  }
}

inline bool example_set_present(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / kExampleManifest) && std::filesystem::exists(dir / kExamplePayload);
}

struct LabeledExample {
  AdversarialExample example;
  ExampleItem item;
};

// Rebuild per-item adversarial examples against the dataset the set was made from.
inline std::vector<LabeledExample> materialize(const ExampleSet& s, const Dataset& d) {
  if (!s.dataset_digest.empty() && s.dataset_digest != dataset_digest(d))
    throw ValidationError("example set was generated from a different dataset (digest mismatch)");
  std::vector<LabeledExample> out;
  out.reserve(s.items.size());
  for (std::int64_t i = 0; i < s.size(); ++i) {
    const auto& it = s.items[i];
    if (it.index < 0 || it.index >= d.size()) throw ValidationError(detail::cat("example set item ", i, " index out of range"));
    AdversarialExample e;
    e.original = d.image(it.index);
    e.delta = s.delta(i);
    if (e.delta.shape() != e.original.shape()) throw ShapeError("example set: image shape differs from dataset");
    e.objective.mode = it.mode;
    e.objective.label = it.mode == AttackMode::untargeted ? it.true_label : it.target_label;
    e.source = s.source;
    e.iterations = s.config.iterations;
    e.initial_loss = it.initial_loss;
    e.final_loss = it.final_loss;
    e.guard_applied = it.guard_applied;
    out.push_back({std::move(e), it});
  }
  return out;
}

}  // namespace rx
