#pragma once

#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace rx {

// Normalized isotropic Gaussian on an odd square grid.
struct GaussianKernel {
  int size = 1;
  double sigma = 1.0;
  std::vector<double> weights{1.0};  // size x size, row-major

  double at(int i, int j) const { return weights[static_cast<std::size_t>(i * size + j)]; }
};

inline GaussianKernel gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ValidationError(detail::cat("gaussian_kernel: size must be odd and positive, got ", size));
  if (!(sigma > 0)) throw ValidationError(detail::cat("gaussian_kernel: sigma must be > 0, got ", sigma));
  GaussianKernel k;
  k.size = size;
  k.sigma = sigma;
  k.weights.assign(static_cast<std::size_t>(size * size), 0.0);
  const int c = size / 2;
  double total = 0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double d2 = static_cast<double>((i - c) * (i - c) + (j - c) * (j - c));
      k.weights[i * size + j] = std::exp(-d2 / (2 * sigma * sigma));
      total += k.weights[i * size + j];
    }
  for (auto& w : k.weights) w /= total;
  return k;
}

// Same-size depthwise convolution of an image-shaped field (CHW or NCHW)
// with zero padding; every channel is smoothed independently.
template <typename T>
Tensor<T> smooth_gradient(const Tensor<T>& g, const GaussianKernel& k) {
  const auto& s = g.shape();
  if (s.size() != 3 && s.size() != 4)
    throw ShapeError("smooth_gradient: expected CHW or NCHW field, got " + to_string(s));
  const std::int64_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::int64_t planes = g.size() / (h * w);
  const int r = k.size / 2;
  Tensor<T> out(s);
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = g.data() + p * h * w;
    T* dst = out.data() + p * h * w;
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        double acc = 0;
        for (int a = -r; a <= r; ++a) {
          const std::int64_t ii = i + a;
          if (ii < 0 || ii >= h) continue;
          for (int b = -r; b <= r; ++b) {
            const std::int64_t jj = j + b;
            if (jj < 0 || jj >= w) continue;
            acc += k.at(a + r, b + r) * static_cast<double>(src[ii * w + jj]);
          }
        }
        dst[i * w + j] = static_cast<T>(acc);
      }
  }
  return out;
}

}  // namespace rx
