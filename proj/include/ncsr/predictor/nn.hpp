#pragma once

// Minimal float32 layers with hand-written backward passes for the U-Net.
// Activations use a [C][N][H][W] layout so channel concatenation is an append
// and a convolution over the whole batch is a single GEMM.

#include <cstddef>
#include <optional>
#include <vector>

#include "ncsr/common/rng.hpp"

namespace ncsr::nn {

struct Tensor {
  int c = 0;
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int channels, int batch, int rows, int cols, float fill = 0.0f)
      : c(channels), n(batch), h(rows), w(cols), v(static_cast<std::size_t>(channels) * batch * rows * cols, fill) {}

  std::size_t hw() const { return static_cast<std::size_t>(h) * w; }
  std::size_t plane() const { return static_cast<std::size_t>(n) * hw(); }
  float* channel(int ci) { return v.data() + ci * plane(); }
  const float* channel(int ci) const { return v.data() + ci * plane(); }
  bool same_shape(const Tensor& o) const { return c == o.c && n == o.n && h == o.h && w == o.w; }
};

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels: first `first_channels` channels, then the rest.
void split_channels(const Tensor& t, int first_channels, Tensor& a, Tensor& b);

/// Row-major matrix for per-sample vectors (time embeddings).
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> v;

  Matrix() = default;
  Matrix(int r, int c, float fill = 0.0f) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}
  float& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  float at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

struct ParamRef {
  std::size_t offset = 0;
  std::size_t count = 0;
};

/// Flat parameter and gradient storage; layers keep offsets into it.
class ParamStore {
 public:
  ParamRef allocate(std::size_t count);
  float* value(const ParamRef& r) { return values_.data() + r.offset; }
  const float* value(const ParamRef& r) const { return values_.data() + r.offset; }
  float* grad(const ParamRef& r) { return grads_.data() + r.offset; }
  std::vector<float>& values() { return values_; }
  const std::vector<float>& values() const { return values_; }
  std::vector<float>& grads() { return grads_; }
  const std::vector<float>& grads() const { return grads_; }
  std::size_t size() const { return values_.size(); }
  void zero_grad();

 private:
  std::vector<float> values_;
  std::vector<float> grads_;
};

/// Square kernel (1 or 3), zero padding k/2, stride 1 or 2, with bias.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& ps, int cin, int cout, int kernel, int stride = 1);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, or all zeros.
  void init(ParamStore& ps, Rng& rng, bool zero = false) const;
  Tensor forward(const Tensor& x, const ParamStore& ps, bool keep);
  Tensor backward(const Tensor& dy, ParamStore& ps);
  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }

 private:
  int cin_ = 0, cout_ = 0, k_ = 3, stride_ = 1;
  ParamRef w_, b_;
  Tensor x_;
};

class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(ParamStore& ps, int channels, int groups);
  void init(ParamStore& ps) const;  // scale 1, shift 0
  Tensor forward(const Tensor& x, const ParamStore& ps, bool keep);
  Tensor backward(const Tensor& dy, ParamStore& ps);

 private:
  int c_ = 0, groups_ = 1;
  ParamRef scale_, shift_;
  Tensor xhat_;
  std::vector<float> inv_std_;  // per (sample, group)
};

class SiLU {
 public:
  Tensor forward(const Tensor& x, bool keep);
  Tensor backward(const Tensor& dy) const;
  Matrix forward(const Matrix& x, bool keep);
  Matrix backward(const Matrix& dy) const;

 private:
  std::vector<float> x_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& ps, int in, int out);
  void init(ParamStore& ps, Rng& rng, bool zero = false) const;
  Matrix forward(const Matrix& x, const ParamStore& ps, bool keep);
  Matrix backward(const Matrix& dy, ParamStore& ps);

 private:
  int in_ = 0, out_ = 0;
  ParamRef w_, b_;
  Matrix x_;
};

Tensor upsample_nearest2(const Tensor& x);
Tensor upsample_nearest2_backward(const Tensor& dy);

/// h[c][n] += shift[n][c] over all pixels.
void add_channel_shift(Tensor& h, const Matrix& shift);
Matrix channel_shift_backward(const Tensor& dh);

/// Adam with bias correction on a flat parameter vector.
class Adam {
 public:
  explicit Adam(std::size_t n, double lr = 8e-5, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::vector<float>& params, const std::vector<float>& grads);
  long long steps() const { return t_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  /// State for checkpoints / resume.
  const std::vector<float>& first_moment() const { return m_; }
  const std::vector<float>& second_moment() const { return v_; }
  void restore(std::vector<float> m, std::vector<float> v, long long t);

 private:
  double lr_, b1_, b2_, eps_;
  long long t_ = 0;
  std::vector<float> m_, v_;
};

}  // namespace ncsr::nn
