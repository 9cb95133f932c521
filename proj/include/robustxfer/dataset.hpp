#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "bytes.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace rx {

// Images in [0,1], NCHW, with integer labels in [0, classes).
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  int classes = 0;
  std::string split;

  std::int64_t size() const noexcept { return static_cast<std::int64_t>(labels.size()); }
  int channels() const { return static_cast<int>(images.dim(1)); }
  int height() const { return static_cast<int>(images.dim(2)); }
  int width() const { return static_cast<int>(images.dim(3)); }
  std::int64_t image_size() const { return images.dim(1) * images.dim(2) * images.dim(3); }

  Tensor<float> image(std::int64_t i) const { return images.slice_rows(i, i + 1); }

  Tensor<float> gather(std::span<const std::int64_t> idx) const {
    Shape s = images.shape();
    s[0] = static_cast<std::int64_t>(idx.size());
    Tensor<float> out(s);
    const std::int64_t sz = image_size();
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy_n(images.data() + idx[k] * sz, sz, out.data() + static_cast<std::int64_t>(k) * sz);
    return out;
  }

  std::vector<int> gather_labels(std::span<const std::int64_t> idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
  }

  Dataset subset(std::span<const std::int64_t> idx) const {
    return Dataset{gather(idx), gather_labels(idx), classes, split};
  }

  void validate() const {
    if (images.rank() != 4 || images.dim(0) != size())
      throw ValidationError("dataset: images must be N x C x H x W with one label per image");
    for (float v : images.values())
      if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("dataset: pixel outside [0,1]");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || labels[i] >= classes)
        throw ValidationError(detail::cat("dataset: label ", labels[i], " of image ", i, " outside [0,", classes, ")"));
  }
};

// Content digest over shape, labels and pixel bits.
inline std::string dataset_digest(const Dataset& d) {
  ByteWriter w;
  for (auto s : d.images.shape()) w.u64(static_cast<std::uint64_t>(s));
  w.u32(static_cast<std::uint32_t>(d.classes));
  for (int l : d.labels) w.u32(static_cast<std::uint32_t>(l));
  for (float v : d.images.values()) w.f32(v);
  return sha256_hex(w.data());
}

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr int kCifarSide = 32;

// CIFAR-10 binary: records of 1 label byte followed by 3072 pixel bytes,
// channel-planar R, G, B, each plane 32x32 row-major.
inline Dataset decode_cifar10_binary(std::span<const std::uint8_t> bytes, std::string split = "test") {
  if (bytes.size() % kCifarRecordBytes != 0)
    throw FormatError("cifar-size", detail::cat("cifar10: ", bytes.size(), " bytes is not a whole number of ",
                                                kCifarRecordBytes, "-byte records (", bytes.size() / kCifarRecordBytes,
                                                " full records, ", bytes.size() % kCifarRecordBytes, " bytes left over)"));
  const std::int64_t n = static_cast<std::int64_t>(bytes.size() / kCifarRecordBytes);
  Dataset d;
  d.classes = 10;
  d.split = std::move(split);
  d.images = Tensor<float>(Shape{n, 3, kCifarSide, kCifarSide});
  d.labels.resize(static_cast<std::size_t>(n));
  constexpr std::int64_t px = 3 * kCifarSide * kCifarSide;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] >= 10) throw FormatError("cifar-label", detail::cat("cifar10: record ", i, " has label byte ", int(rec[0])));
    d.labels[i] = rec[0];
    float* dst = d.images.data() + i * px;
    for (std::int64_t k = 0; k < px; ++k) dst[k] = static_cast<float>(rec[1 + k]) / 255.0f;
  }
  return d;
}

inline Dataset load_cifar10_binary(const std::filesystem::path& path, std::string split = "test") {
  return decode_cifar10_binary(read_file(path), std::move(split));
}

// Concatenate datasets with equal image shape and class count.
inline Dataset concat(std::span<const Dataset> parts, std::string split) {
  if (parts.empty()) throw ValidationError("concat: no datasets");
  Shape s = parts.front().images.shape();
  s[0] = 0;
  for (const auto& p : parts) s[0] += p.size();
  Dataset out;
  out.classes = parts.front().classes;
  out.split = std::move(split);
  std::vector<float> v;
  v.reserve(static_cast<std::size_t>(numel(s)));
  for (const auto& p : parts) {
    if (p.images.dim(1) != s[1] || p.images.dim(2) != s[2] || p.images.dim(3) != s[3] || p.classes != out.classes)
      throw ValidationError("concat: datasets differ in image shape or class count");
    v.insert(v.end(), p.images.values().begin(), p.images.values().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.images = Tensor<float>(std::move(s), std::move(v));
  return out;
}

struct CifarSplits {
  Dataset train, test;
};

// Standard CIFAR-10 binary distribution directory (data_batch_1..5.bin,
// test_batch.bin).
inline CifarSplits load_cifar10_dir(const std::filesystem::path& dir) {
  std::vector<Dataset> parts;
  for (int i = 1; i <= 5; ++i) parts.push_back(load_cifar10_binary(dir / ("data_batch_" + std::to_string(i) + ".bin"), "train"));
  return {concat(parts, "train"), load_cifar10_binary(dir / "test_batch.bin", "test")};
}

inline bool cifar10_dir_present(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "test_batch.bin")) return false;
  for (int i = 1; i <= 5; ++i)
    if (!fs::exists(dir / ("data_batch_" + std::to_string(i) + ".bin"))) return false;
  return true;
}

inline std::vector<std::uint8_t> encode_cifar10_binary(const Dataset& d) {
  if (d.images.rank() != 4 || d.images.dim(1) != 3 || d.images.dim(2) != kCifarSide || d.images.dim(3) != kCifarSide)
    throw ValidationError("cifar10 export: images must be 3x32x32, got " + to_string(d.images.shape()));
  if (d.classes > 10) throw ValidationError("cifar10 export: at most 10 classes");
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(d.size()) * kCifarRecordBytes);
  const std::int64_t px = d.image_size();
  for (std::int64_t i = 0; i < d.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(d.labels[i]));
    const float* src = d.images.data() + i * px;
    for (std::int64_t k = 0; k < px; ++k)
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(src[k], 0.0f, 1.0f) * 255.0f)));
  }
  return out;
}

inline void write_cifar10_binary(const Dataset& d, const std::filesystem::path& path) {
  write_file(path, encode_cifar10_binary(d));
}

namespace detail {

// Coverage test for the procedural class shapes in unit coordinates
// centred on the shape.
inline bool shape_covers(int shape, double u, double v) {
  const double r = std::hypot(u, v);
  const bool in_box = std::abs(u) <= 1 && std::abs(v) <= 1;
  switch (shape) {
    case 0: return r <= 1;                                                 // disk
    case 1: return std::max(std::abs(u), std::abs(v)) <= 0.85;            // square
    case 2: return v >= -0.9 && v <= 0.9 && std::abs(u) <= (v + 0.9) / 1.8;  // triangle
    case 3: return (std::abs(u) <= 0.3 && std::abs(v) <= 1) || (std::abs(v) <= 0.3 && std::abs(u) <= 1);  // plus
    case 4: return r >= 0.55 && r <= 1;                                    // ring
    case 5: return in_box && static_cast<int>(std::floor((v + 1) * 2.5)) % 2 == 0;  // horizontal stripes
    case 6: return in_box && static_cast<int>(std::floor((u + 1) * 2.5)) % 2 == 0;  // vertical stripes
    case 7: return in_box && static_cast<int>(std::floor((u + v + 2) * 1.8)) % 2 == 0;  // diagonal stripes
    case 8: return in_box && (static_cast<int>(std::floor((u + 1) * 2)) + static_cast<int>(std::floor((v + 1) * 2))) % 2 == 0;
    default: return in_box && (std::abs(u - v) <= 0.32 || std::abs(u + v) <= 0.32);  // X
  }
}

}  // namespace detail

// bold: high-contrast shapes, quick to learn even at 16 px, but the contrast
// exceeds what an l-inf 16/255 perturbation can erase. faint: shapes only
// 0.08 to 0.16 above the background, so standard models stay attackable.
enum class SyntheticStyle { bold, faint };

inline std::string to_string(SyntheticStyle s) { return s == SyntheticStyle::bold ? "bold" : "faint"; }

inline SyntheticStyle parse_synthetic_style(const std::string& s) {
  if (s == "bold") return SyntheticStyle::bold;
  if (s == "faint") return SyntheticStyle::faint;
  throw ValidationError("unknown synthetic style '" + s + "' (expected bold or faint)");
}

// Procedural dataset: class k renders shape k % 10 (rotated by a class
// dependent angle when k >= 10) with jittered position, size, colours and
// pixel noise. Same arguments give bit-identical output.
inline Dataset generate_synthetic_dataset(int classes, int per_class, int side, std::uint64_t seed,
                                          std::string split = "train", SyntheticStyle style = SyntheticStyle::bold) {
  if (classes < 2) throw ValidationError("synthetic dataset: need at least 2 classes");
  if (per_class < 0 || side < 4) throw ValidationError("synthetic dataset: bad size parameters");
  Dataset d;
  d.classes = classes;
  d.split = std::move(split);
  const std::int64_t n = static_cast<std::int64_t>(classes) * per_class;
  d.images = Tensor<float>(Shape{n, 3, side, side});
  d.labels.resize(static_cast<std::size_t>(n));
  const std::int64_t plane = static_cast<std::int64_t>(side) * side;
  const std::uint64_t split_tag = fnv1a(d.split.data(), d.split.size());
  for (std::int64_t i = 0; i < n; ++i) {
    // Interleave classes so any prefix is close to balanced.
    const int k = static_cast<int>(i % classes);
    d.labels[i] = k;
    Rng rng(derive_seed(seed, {split_tag, static_cast<std::uint64_t>(i)}));
    std::array<double, 3> bg{}, fg{};
    if (style == SyntheticStyle::bold) {
      for (auto& c : bg) c = rng.uniform(0.0, 0.35);
      for (auto& c : fg) c = rng.uniform(0.55, 1.0);
    } else {
      for (auto& c : bg) c = rng.uniform(0.1, 0.6);
      for (int c = 0; c < 3; ++c) fg[c] = bg[c] + rng.uniform(0.08, 0.16);
    }
    const double noise = style == SyntheticStyle::bold ? 0.04 : 0.02;
    const double cx = 0.5 + rng.uniform(-0.12, 0.12), cy = 0.5 + rng.uniform(-0.12, 0.12);
    const double radius = rng.uniform(0.24, 0.36);
    const double angle = (k / 10) * 0.5 + rng.uniform(-0.12, 0.12);
    const double ca = std::cos(angle), sa = std::sin(angle);
    float* img = d.images.data() + i * 3 * plane;
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        int hits = 0;
        for (int sy = 0; sy < 2; ++sy)
          for (int sx = 0; sx < 2; ++sx) {
            const double px = (x + 0.25 + 0.5 * sx) / side - cx, py = (y + 0.25 + 0.5 * sy) / side - cy;
            const double u = (ca * px + sa * py) / radius, v = (-sa * px + ca * py) / radius;
            hits += detail::shape_covers(k % 10, u, v);
          }
        const double cover = hits / 4.0;
        for (int c = 0; c < 3; ++c) {
          const double val = bg[c] + (fg[c] - bg[c]) * cover + rng.normal(0.0, noise);
          img[c * plane + y * side + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
      }
  }
  return d;
}

}  // namespace rx
