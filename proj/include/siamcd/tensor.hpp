#pragma once

// Dense float tensors in NCHW layout plus the single-band Raster used for
// labels, probabilities and metric inputs.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "siamcd/common.hpp"

namespace siamcd {

class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w)
      : n_(n), c_(c), h_(h), w_(w), v_(static_cast<std::size_t>(n) * c * h * w, 0.0f) {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw ShapeError("Tensor dims must be non-negative");
  }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  float* data() { return v_.data(); }
  const float* data() const { return v_.data(); }

  float& operator[](std::size_t i) { return v_[i]; }
  float operator[](std::size_t i) const { return v_[i]; }

  float& at(int n, int c, int y, int x) { return v_[index(n, c, y, x)]; }
  float at(int n, int c, int y, int x) const { return v_[index(n, c, y, x)]; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x;
  }

  std::size_t sample_size() const { return static_cast<std::size_t>(c_) * h_ * w_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(h_) * w_; }

  float* sample_ptr(int n) { return v_.data() + static_cast<std::size_t>(n) * sample_size(); }
  const float* sample_ptr(int n) const {
    return v_.data() + static_cast<std::size_t>(n) * sample_size();
  }
  float* plane_ptr(int n, int c) {
    return v_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane_size();
  }
  const float* plane_ptr(int n, int c) const {
    return v_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane_size();
  }

  void fill(float value) { std::fill(v_.begin(), v_.end(), value); }
  void zero() { fill(0.0f); }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  std::string shape_str() const {
    return std::to_string(n_) + "x" + std::to_string(c_) + "x" + std::to_string(h_) + "x" +
           std::to_string(w_);
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  AlignedFloats v_;
};

// Single-band H x W raster. Labels keep values in {0,1}; probabilities in [0,1].
struct Raster {
  int h = 0;
  int w = 0;
  std::vector<float> v;

  Raster() = default;
  Raster(int height, int width)
      : h(height), w(width), v(static_cast<std::size_t>(height) * width, 0.0f) {
    if (height < 0 || width < 0) throw ShapeError("Raster dims must be non-negative");
  }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  float& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  float at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }

  bool same_shape(const Raster& o) const { return h == o.h && w == o.w; }

  void fill(float value) { std::fill(v.begin(), v.end(), value); }
};

inline void require_same_shape(const Raster& a, const Raster& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": raster shapes differ, " + std::to_string(a.h) + "x" +
                     std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                     std::to_string(b.w));
  }
}

// Copies one channel plane of a batched tensor out as a Raster.
inline Raster plane_to_raster(const Tensor& t, int n, int c) {
  Raster r(t.h(), t.w());
  const float* src = t.plane_ptr(n, c);
  std::copy(src, src + r.size(), r.v.begin());
  return r;
}

}  // namespace siamcd
