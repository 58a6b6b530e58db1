#include "ncsr/predictor/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "ncsr/common/error.hpp"
#include "ncsr/simd/kernels.hpp"

namespace ncsr::nn {

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.n == b.n && a.h == b.h && a.w == b.w, "concat_channels: batch/spatial shapes differ");
  Tensor out(a.c + b.c, a.n, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return out;
}

void split_channels(const Tensor& t, int first_channels, Tensor& a, Tensor& b) {
  a = Tensor(first_channels, t.n, t.h, t.w);
  b = Tensor(t.c - first_channels, t.n, t.h, t.w);
  std::copy(t.v.begin(), t.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), a.v.begin());
  std::copy(t.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), t.v.end(), b.v.begin());
}

ParamRef ParamStore::allocate(std::size_t count) {
  ParamRef r{values_.size(), count};
  values_.resize(values_.size() + count, 0.0f);
  grads_.resize(values_.size(), 0.0f);
  return r;
}

void ParamStore::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0f); }

namespace {

void fill_uniform(float* p, std::size_t n, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<float>(u(rng));
}

// Reused scratch for unfolded patches; one forward/backward runs at a time per thread.
std::vector<float>& scratch(int which) {
  thread_local std::vector<float> buffers[3];
  return buffers[which];
}

void im2col(const Tensor& x, int k, int stride, int ho, int wo, float* col) {
  const int pad = k / 2;
  for (int ci = 0; ci < x.c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * (static_cast<std::size_t>(x.n) * ho * wo);
        // Output columns whose input column lies inside the image.
        const int lo = std::clamp((pad - kx + stride - 1) / stride, 0, wo);
        const int hi = std::clamp((x.w - 1 + pad - kx) / stride + 1, lo, wo);
        for (int b = 0; b < x.n; ++b) {
          const float* src = x.channel(ci) + b * x.hw();
          for (int oy = 0; oy < ho; ++oy, dst += wo) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= x.h) {
              std::fill(dst, dst + wo, 0.0f);
              continue;
            }
            const float* row = src + static_cast<std::size_t>(iy) * x.w + (kx - pad);
            std::fill(dst, dst + lo, 0.0f);
            if (stride == 1) {
              std::memcpy(dst + lo, row + lo, static_cast<std::size_t>(hi - lo) * sizeof(float));
            } else {
              for (int ox = lo; ox < hi; ++ox) dst[ox] = row[ox * stride];
            }
            std::fill(dst + hi, dst + wo, 0.0f);
          }
        }
      }
}

void col2im(const float* col, int k, int stride, int ho, int wo, Tensor& dx) {
  const int pad = k / 2;
  for (int ci = 0; ci < dx.c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const float* src = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * (static_cast<std::size_t>(dx.n) * ho * wo);
        const int lo = std::clamp((pad - kx + stride - 1) / stride, 0, wo);
        const int hi = std::clamp((dx.w - 1 + pad - kx) / stride + 1, lo, wo);
        for (int b = 0; b < dx.n; ++b) {
          float* dst = dx.channel(ci) + b * dx.hw();
          for (int oy = 0; oy < ho; ++oy, src += wo) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= dx.h) continue;
            float* row = dst + static_cast<std::size_t>(iy) * dx.w + (kx - pad);
            if (stride == 1) {
              for (int ox = lo; ox < hi; ++ox) row[ox] += src[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) row[ox * stride] += src[ox];
            }
          }
        }
      }
}

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------------------

Conv2d::Conv2d(ParamStore& ps, int cin, int cout, int kernel, int stride)
    : cin_(cin), cout_(cout), k_(kernel), stride_(stride) {
  require(kernel == 1 || kernel == 3, "Conv2d: kernel must be 1 or 3");
  require(stride == 1 || stride == 2, "Conv2d: stride must be 1 or 2");
  w_ = ps.allocate(static_cast<std::size_t>(cout) * cin * kernel * kernel);
  b_ = ps.allocate(static_cast<std::size_t>(cout));
}

void Conv2d::init(ParamStore& ps, Rng& rng, bool zero) const {
  if (zero) {
    std::fill_n(ps.value(w_), w_.count, 0.0f);
    std::fill_n(ps.value(b_), b_.count, 0.0f);
    return;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin_) * k_ * k_);
  fill_uniform(ps.value(w_), w_.count, bound, rng);
  fill_uniform(ps.value(b_), b_.count, bound, rng);
}

Tensor Conv2d::forward(const Tensor& x, const ParamStore& ps, bool keep) {
  require(x.c == cin_, "Conv2d: input channel mismatch");
  const int ho = (x.h - 1) / stride_ + 1, wo = (x.w - 1) / stride_ + 1;
  Tensor out(cout_, x.n, ho, wo);
  const int rows = cin_ * k_ * k_;
  const int cols = x.n * ho * wo;
  const float* b = x.v.data();
  if (!(k_ == 1 && stride_ == 1)) {
    auto& col = scratch(0);
    col.resize(static_cast<std::size_t>(rows) * cols);
    im2col(x, k_, stride_, ho, wo, col.data());
    b = col.data();
  }
  simd::gemm_nn(cout_, cols, rows, ps.value(w_), rows, b, cols, out.v.data(), cols, false);
  const float* bias = ps.value(b_);
  for (int co = 0; co < cout_; ++co) {
    float* o = out.channel(co);
    for (std::size_t i = 0; i < out.plane(); ++i) o[i] += bias[co];
  }
  if (keep) x_ = x;
  return out;
}

Tensor Conv2d::backward(const Tensor& dy, ParamStore& ps) {
  require(!x_.v.empty(), "Conv2d::backward without a cached forward pass");
  const int ho = dy.h, wo = dy.w;
  const int rows = cin_ * k_ * k_;
  const int cols = dy.n * ho * wo;

  float* db = ps.grad(b_);
  for (int co = 0; co < cout_; ++co) {
    const float* d = dy.channel(co);
    double acc = 0.0;
    for (std::size_t i = 0; i < dy.plane(); ++i) acc += d[i];
    db[co] += static_cast<float>(acc);
  }

  const float* col = x_.v.data();
  if (!(k_ == 1 && stride_ == 1)) {
    auto& buf = scratch(0);
    buf.resize(static_cast<std::size_t>(rows) * cols);
    im2col(x_, k_, stride_, ho, wo, buf.data());
    col = buf.data();
  }
  simd::gemm_nt(cout_, rows, cols, dy.v.data(), cols, col, cols, ps.grad(w_), rows, true);

  auto& wt = scratch(1);
  wt.resize(static_cast<std::size_t>(rows) * cout_);
  const float* w = ps.value(w_);
  for (int co = 0; co < cout_; ++co)
    for (int r = 0; r < rows; ++r) wt[static_cast<std::size_t>(r) * cout_ + co] = w[static_cast<std::size_t>(co) * rows + r];

  Tensor dx(cin_, x_.n, x_.h, x_.w);
  if (k_ == 1 && stride_ == 1) {
    simd::gemm_nn(rows, cols, cout_, wt.data(), cout_, dy.v.data(), cols, dx.v.data(), cols, false);
  } else {
    auto& dcol = scratch(2);
    dcol.resize(static_cast<std::size_t>(rows) * cols);
    simd::gemm_nn(rows, cols, cout_, wt.data(), cout_, dy.v.data(), cols, dcol.data(), cols, false);
    col2im(dcol.data(), k_, stride_, ho, wo, dx);
  }
  x_ = Tensor();
  return dx;
}

// ---------------------------------------------------------------------------

GroupNorm::GroupNorm(ParamStore& ps, int channels, int groups) : c_(channels), groups_(groups) {
  require(groups >= 1 && channels % groups == 0, "GroupNorm: channels must be divisible by groups");
  scale_ = ps.allocate(static_cast<std::size_t>(channels));
  shift_ = ps.allocate(static_cast<std::size_t>(channels));
}

void GroupNorm::init(ParamStore& ps) const {
  std::fill_n(ps.value(scale_), scale_.count, 1.0f);
  std::fill_n(ps.value(shift_), shift_.count, 0.0f);
}

Tensor GroupNorm::forward(const Tensor& x, const ParamStore& ps, bool keep) {
  require(x.c == c_, "GroupNorm: channel mismatch");
  constexpr double kEps = 1e-5;
  const int cg = c_ / groups_;
  const std::size_t hw = x.hw();
  Tensor xhat(x.c, x.n, x.h, x.w);
  std::vector<float> inv(static_cast<std::size_t>(x.n) * groups_);
  for (int b = 0; b < x.n; ++b)
    for (int g = 0; g < groups_; ++g) {
      double s = 0.0, sq = 0.0;
      for (int ci = g * cg; ci < (g + 1) * cg; ++ci) {
        const float* p = x.channel(ci) + b * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          s += p[i];
          sq += static_cast<double>(p[i]) * p[i];
        }
      }
      const double m = static_cast<double>(cg) * hw;
      const double mean = s / m;
      const double var = std::max(0.0, sq / m - mean * mean);
      const float is = static_cast<float>(1.0 / std::sqrt(var + kEps));
      inv[static_cast<std::size_t>(b) * groups_ + g] = is;
      for (int ci = g * cg; ci < (g + 1) * cg; ++ci) {
        const float* p = x.channel(ci) + b * hw;
        float* q = xhat.channel(ci) + b * hw;
        for (std::size_t i = 0; i < hw; ++i) q[i] = (p[i] - static_cast<float>(mean)) * is;
      }
    }
  Tensor out(x.c, x.n, x.h, x.w);
  const float* sc = ps.value(scale_);
  const float* sh = ps.value(shift_);
  for (int ci = 0; ci < c_; ++ci) {
    const float* q = xhat.channel(ci);
    float* o = out.channel(ci);
    for (std::size_t i = 0; i < out.plane(); ++i) o[i] = q[i] * sc[ci] + sh[ci];
  }
  if (keep) {
    xhat_ = std::move(xhat);
    inv_std_ = std::move(inv);
  }
  return out;
}

Tensor GroupNorm::backward(const Tensor& dy, ParamStore& ps) {
  require(xhat_.same_shape(dy), "GroupNorm::backward without a matching forward pass");
  const int cg = c_ / groups_;
  const std::size_t hw = dy.hw();
  const float* sc = ps.value(scale_);
  float* dsc = ps.grad(scale_);
  float* dsh = ps.grad(shift_);
  for (int ci = 0; ci < c_; ++ci) {
    const float* d = dy.channel(ci);
    const float* q = xhat_.channel(ci);
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < dy.plane(); ++i) {
      a += static_cast<double>(d[i]) * q[i];
      b += d[i];
    }
    dsc[ci] += static_cast<float>(a);
    dsh[ci] += static_cast<float>(b);
  }
  Tensor dx(dy.c, dy.n, dy.h, dy.w);
  const double m = static_cast<double>(cg) * hw;
  for (int b = 0; b < dy.n; ++b)
    for (int g = 0; g < groups_; ++g) {
      double sum_d = 0.0, sum_dq = 0.0;
      for (int ci = g * cg; ci < (g + 1) * cg; ++ci) {
        const float* d = dy.channel(ci) + b * hw;
        const float* q = xhat_.channel(ci) + b * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double dq = static_cast<double>(d[i]) * sc[ci];
          sum_d += dq;
          sum_dq += dq * q[i];
        }
      }
      const double is = inv_std_[static_cast<std::size_t>(b) * groups_ + g];
      const double mean_d = sum_d / m, mean_dq = sum_dq / m;
      for (int ci = g * cg; ci < (g + 1) * cg; ++ci) {
        const float* d = dy.channel(ci) + b * hw;
        const float* q = xhat_.channel(ci) + b * hw;
        float* o = dx.channel(ci) + b * hw;
        for (std::size_t i = 0; i < hw; ++i)
          o[i] = static_cast<float>(is * (static_cast<double>(d[i]) * sc[ci] - mean_d - q[i] * mean_dq));
      }
    }
  xhat_ = Tensor();
  return dx;
}

// ---------------------------------------------------------------------------

Tensor SiLU::forward(const Tensor& x, bool keep) {
  Tensor out = x;
  for (float& v : out.v) v = v * sigmoid(v);
  if (keep) x_ = x.v;
  return out;
}

Tensor SiLU::backward(const Tensor& dy) const {
  require(x_.size() == dy.v.size(), "SiLU::backward without a matching forward pass");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.v.size(); ++i) {
    const float s = sigmoid(x_[i]);
    dx.v[i] *= s * (1.0f + x_[i] * (1.0f - s));
  }
  return dx;
}

Matrix SiLU::forward(const Matrix& x, bool keep) {
  Matrix out = x;
  for (float& v : out.v) v = v * sigmoid(v);
  if (keep) x_ = x.v;
  return out;
}

Matrix SiLU::backward(const Matrix& dy) const {
  require(x_.size() == dy.v.size(), "SiLU::backward without a matching forward pass");
  Matrix dx = dy;
  for (std::size_t i = 0; i < dx.v.size(); ++i) {
    const float s = sigmoid(x_[i]);
    dx.v[i] *= s * (1.0f + x_[i] * (1.0f - s));
  }
  return dx;
}

// ---------------------------------------------------------------------------

Linear::Linear(ParamStore& ps, int in, int out) : in_(in), out_(out) {
  w_ = ps.allocate(static_cast<std::size_t>(in) * out);
  b_ = ps.allocate(static_cast<std::size_t>(out));
}

void Linear::init(ParamStore& ps, Rng& rng, bool zero) const {
  if (zero) {
    std::fill_n(ps.value(w_), w_.count, 0.0f);
    std::fill_n(ps.value(b_), b_.count, 0.0f);
    return;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  fill_uniform(ps.value(w_), w_.count, bound, rng);
  fill_uniform(ps.value(b_), b_.count, bound, rng);
}

Matrix Linear::forward(const Matrix& x, const ParamStore& ps, bool keep) {
  require(x.cols == in_, "Linear: input width mismatch");
  Matrix y(x.rows, out_);
  const float* w = ps.value(w_);
  const float* b = ps.value(b_);
  for (int r = 0; r < x.rows; ++r)
    for (int o = 0; o < out_; ++o) {
      double acc = b[o];
      for (int i = 0; i < in_; ++i) acc += static_cast<double>(w[static_cast<std::size_t>(o) * in_ + i]) * x.at(r, i);
      y.at(r, o) = static_cast<float>(acc);
    }
  if (keep) x_ = x;
  return y;
}

Matrix Linear::backward(const Matrix& dy, ParamStore& ps) {
  require(x_.rows == dy.rows && dy.cols == out_, "Linear::backward without a matching forward pass");
  const float* w = ps.value(w_);
  float* dw = ps.grad(w_);
  float* db = ps.grad(b_);
  Matrix dx(dy.rows, in_);
  for (int r = 0; r < dy.rows; ++r)
    for (int o = 0; o < out_; ++o) {
      const float g = dy.at(r, o);
      db[o] += g;
      for (int i = 0; i < in_; ++i) {
        dw[static_cast<std::size_t>(o) * in_ + i] += g * x_.at(r, i);
        dx.at(r, i) += g * w[static_cast<std::size_t>(o) * in_ + i];
      }
    }
  return dx;
}

// ---------------------------------------------------------------------------

Tensor upsample_nearest2(const Tensor& x) {
  Tensor out(x.c, x.n, 2 * x.h, 2 * x.w);
  for (int ci = 0; ci < x.c; ++ci)
    for (int b = 0; b < x.n; ++b) {
      const float* src = x.channel(ci) + b * x.hw();
      float* dst = out.channel(ci) + b * out.hw();
      for (int r = 0; r < out.h; ++r)
        for (int c = 0; c < out.w; ++c) dst[r * out.w + c] = src[(r / 2) * x.w + c / 2];
    }
  return out;
}

Tensor upsample_nearest2_backward(const Tensor& dy) {
  Tensor dx(dy.c, dy.n, dy.h / 2, dy.w / 2);
  for (int ci = 0; ci < dy.c; ++ci)
    for (int b = 0; b < dy.n; ++b) {
      const float* src = dy.channel(ci) + b * dy.hw();
      float* dst = dx.channel(ci) + b * dx.hw();
      for (int r = 0; r < dy.h; ++r)
        for (int c = 0; c < dy.w; ++c) dst[(r / 2) * dx.w + c / 2] += src[r * dy.w + c];
    }
  return dx;
}

void add_channel_shift(Tensor& h, const Matrix& shift) {
  require(shift.rows == h.n && shift.cols == h.c, "add_channel_shift: shape mismatch");
  for (int ci = 0; ci < h.c; ++ci)
    for (int b = 0; b < h.n; ++b) {
      float* p = h.channel(ci) + b * h.hw();
      const float s = shift.at(b, ci);
      for (std::size_t i = 0; i < h.hw(); ++i) p[i] += s;
    }
}

Matrix channel_shift_backward(const Tensor& dh) {
  Matrix ds(dh.n, dh.c);
  for (int ci = 0; ci < dh.c; ++ci)
    for (int b = 0; b < dh.n; ++b) {
      const float* p = dh.channel(ci) + b * dh.hw();
      double acc = 0.0;
      for (std::size_t i = 0; i < dh.hw(); ++i) acc += p[i];
      ds.at(b, ci) = static_cast<float>(acc);
    }
  return ds;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0f), v_(n, 0.0f) {
  require(lr >= 0.0, "Adam: learning rate must be non-negative");
}

void Adam::step(std::vector<float>& params, const std::vector<float>& grads) {
  require(params.size() == m_.size() && grads.size() == m_.size(), "Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
  const float step = static_cast<float>(lr_ / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g * g;
    params[i] -= step * m_[i] / (std::sqrt(v_[i] * inv_c2) + eps);
  }
}

void Adam::restore(std::vector<float> m, std::vector<float> v, long long t) {
  require(m.size() == m_.size() && v.size() == v_.size() && t >= 0, "Adam::restore: state does not match");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

}  // namespace ncsr::nn
