#include "ncsr/predictor/unet.hpp"

#include <cmath>

#include "ncsr/common/error.hpp"

namespace ncsr::predictor {

using nlohmann::json;
using nn::Matrix;
using nn::Tensor;

void UNetConfig::validate() const {
  require(base_channels >= 1, "UNet: base_channels must be positive");
  require(!channel_mult.empty() && channel_mult.size() <= 8, "UNet: need 1..8 levels");
  for (int m : channel_mult) require(m >= 1, "UNet: channel multipliers must be positive");
  require(res_blocks >= 1, "UNet: res_blocks must be >= 1");
  require(time_dim >= 2 && time_dim % 2 == 0, "UNet: time_dim must be even and >= 2");
  require(norm_groups >= 1, "UNet: norm_groups must be positive");
  for (int m : channel_mult)
    require((base_channels * m) % norm_groups == 0, "UNet: every level width must be divisible by norm_groups");
}

void to_json(json& j, const UNetConfig& c) {
  j = {{"base_channels", c.base_channels}, {"channel_mult", c.channel_mult}, {"res_blocks", c.res_blocks},
       {"time_dim", c.time_dim},           {"norm_groups", c.norm_groups},   {"init_seed", c.init_seed},
       {"input_skip", c.input_skip}};
}

void from_json(const json& j, UNetConfig& c) {
  c.base_channels = j.value("base_channels", c.base_channels);
  c.channel_mult = j.value("channel_mult", c.channel_mult);
  c.res_blocks = j.value("res_blocks", c.res_blocks);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.norm_groups = j.value("norm_groups", c.norm_groups);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.input_skip = j.value("input_skip", c.input_skip);
}

std::vector<float> sinusoidal_embedding(int t, int dim) {
  require(dim >= 2 && dim % 2 == 0, "sinusoidal_embedding: dim must be even");
  const int half = dim / 2;
  std::vector<float> e(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -static_cast<double>(i) / half);
    e[i] = static_cast<float>(std::sin(t * w));
    e[half + i] = static_cast<float>(std::cos(t * w));
  }
  return e;
}

// ---------------------------------------------------------------------------

ResBlock::ResBlock(nn::ParamStore& ps, int cin, int cout, int temb_dim, int groups)
    : gn1_(ps, cin, groups),
      gn2_(ps, cout, groups),
      conv1_(ps, cin, cout, 3),
      conv2_(ps, cout, cout, 3),
      temb_proj_(ps, temb_dim, cout),
      has_skip_(cin != cout) {
  if (has_skip_) skip_ = nn::Conv2d(ps, cin, cout, 1);
}

void ResBlock::init(nn::ParamStore& ps, Rng& rng) const {
  gn1_.init(ps);
  gn2_.init(ps);
  conv1_.init(ps, rng);
  conv2_.init(ps, rng);
  temb_proj_.init(ps, rng);
  if (has_skip_) skip_.init(ps, rng);
}

Tensor ResBlock::forward(const Tensor& x, const Matrix& temb_act, const nn::ParamStore& ps, bool keep) {
  Tensor h = conv1_.forward(act1_.forward(gn1_.forward(x, ps, keep), keep), ps, keep);
  nn::add_channel_shift(h, temb_proj_.forward(temb_act, ps, keep));
  h = conv2_.forward(act2_.forward(gn2_.forward(h, ps, keep), keep), ps, keep);
  const Tensor s = has_skip_ ? skip_.forward(x, ps, keep) : x;
  for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += s.v[i];
  return h;
}

Tensor ResBlock::backward(const Tensor& dy, Matrix& d_temb_act, nn::ParamStore& ps) {
  Tensor dh = gn2_.backward(act2_.backward(conv2_.backward(dy, ps)), ps);
  const Matrix dt = temb_proj_.backward(nn::channel_shift_backward(dh), ps);
  for (std::size_t i = 0; i < dt.v.size(); ++i) d_temb_act.v[i] += dt.v[i];
  Tensor dx = gn1_.backward(act1_.backward(conv1_.backward(dh, ps)), ps);
  const Tensor ds = has_skip_ ? skip_.backward(dy, ps) : dy;
  for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += ds.v[i];
  return dx;
}

// ---------------------------------------------------------------------------

UNet::UNet(const UNetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int c = cfg_.base_channels;
  const int temb = 4 * c;
  const int g = cfg_.norm_groups;

  entry_x_ = nn::Conv2d(ps_, 1, c, 3);
  entry_y_ = nn::Conv2d(ps_, 1, c, 3);
  entry_channels_ = 2 * c;
  time1_ = nn::Linear(ps_, cfg_.time_dim, temb);
  time2_ = nn::Linear(ps_, temb, temb);

  const int L = cfg_.levels();
  int ch = entry_channels_;
  for (int l = 0; l < L; ++l) {
    Level lvl;
    const int width = c * cfg_.channel_mult[l];
    for (int b = 0; b < cfg_.res_blocks; ++b) {
      lvl.blocks.emplace_back(ps_, ch, width, temb, g);
      ch = width;
    }
    skip_channels_.push_back(width);
    if (l + 1 < L) {
      lvl.has_down = true;
      lvl.down = nn::Conv2d(ps_, width, width, 3, 2);
    }
    down_.push_back(std::move(lvl));
  }
  for (int l = L - 2; l >= 0; --l) {
    UpLevel up;
    const int width = c * cfg_.channel_mult[l];
    up.up_conv = nn::Conv2d(ps_, ch, width, 3);
    up.skip_channels = skip_channels_[l];
    int in = width + up.skip_channels;
    for (int b = 0; b < cfg_.res_blocks; ++b) {
      up.blocks.emplace_back(ps_, in, width, temb, g);
      in = width;
    }
    ch = width;
    up_.push_back(std::move(up));
  }
  out_norm_ = nn::GroupNorm(ps_, ch, g);
  out_conv_ = nn::Conv2d(ps_, ch, 1, 3);
  if (cfg_.input_skip) skip_gain_ = nn::Linear(ps_, temb, 2);
  initialize();
}

void UNet::initialize() {
  Rng rng(cfg_.init_seed);
  entry_x_.init(ps_, rng);
  entry_y_.init(ps_, rng);
  time1_.init(ps_, rng);
  time2_.init(ps_, rng);
  for (const Level& lvl : down_) {
    for (const ResBlock& b : lvl.blocks) b.init(ps_, rng);
    if (lvl.has_down) lvl.down.init(ps_, rng);
  }
  for (const UpLevel& up : up_) {
    up.up_conv.init(ps_, rng);
    for (const ResBlock& b : up.blocks) b.init(ps_, rng);
  }
  out_norm_.init(ps_);
  out_conv_.init(ps_, rng, /*zero=*/true);
  if (cfg_.input_skip) skip_gain_.init(ps_, rng, /*zero=*/true);
  ps_.zero_grad();
}

Matrix UNet::embed_time(std::span<const int> t) {
  Matrix e(static_cast<int>(t.size()), cfg_.time_dim);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto s = sinusoidal_embedding(t[i], cfg_.time_dim);
    std::copy(s.begin(), s.end(), e.v.begin() + static_cast<std::ptrdiff_t>(i * cfg_.time_dim));
  }
  return time2_.forward(time_act1_.forward(time1_.forward(e, ps_, false), false), ps_, false);
}

Tensor UNet::forward(const Tensor& x_t, const Tensor& y, std::span<const int> t, bool keep) {
  require(x_t.c == 1 && y.c == 1, "UNet: x_t and y must have one channel");
  require(x_t.same_shape(y), "UNet: x_t and y shapes differ");
  require(t.size() == static_cast<std::size_t>(x_t.n), "UNet: one step index per image required");
  const int m = cfg_.size_multiple();
  require(x_t.h % m == 0 && x_t.w % m == 0,
          "UNet: spatial size " + std::to_string(x_t.h) + "x" + std::to_string(x_t.w) + " is not divisible by " +
              std::to_string(m));

  Matrix e(x_t.n, cfg_.time_dim);
  for (int i = 0; i < x_t.n; ++i) {
    const auto s = sinusoidal_embedding(t[i], cfg_.time_dim);
    std::copy(s.begin(), s.end(), e.v.begin() + static_cast<std::ptrdiff_t>(i) * cfg_.time_dim);
  }
  const Matrix temb = time2_.forward(time_act1_.forward(time1_.forward(e, ps_, keep), keep), ps_, keep);
  const Matrix temb_act = time_act2_.forward(temb, keep);

  Tensor h = nn::concat_channels(entry_x_.forward(x_t, ps_, keep), entry_y_.forward(y, ps_, keep));
  std::vector<Tensor> skips;
  for (Level& lvl : down_) {
    for (ResBlock& b : lvl.blocks) h = b.forward(h, temb_act, ps_, keep);
    if (lvl.has_down) {
      skips.push_back(h);
      h = lvl.down.forward(h, ps_, keep);
    }
  }
  for (UpLevel& up : up_) {
    h = up.up_conv.forward(nn::upsample_nearest2(h), ps_, keep);
    h = nn::concat_channels(h, skips.back());
    skips.pop_back();
    for (ResBlock& b : up.blocks) h = b.forward(h, temb_act, ps_, keep);
  }
  Tensor out = out_conv_.forward(out_act_.forward(out_norm_.forward(h, ps_, keep), keep), ps_, keep);
  if (cfg_.input_skip) {
    const Matrix gains = skip_gain_.forward(temb_act, ps_, keep);
    const std::size_t hw = out.hw();
    for (int i = 0; i < out.n; ++i) {
      const float a = gains.at(i, 0), b = gains.at(i, 1);
      const std::size_t off = static_cast<std::size_t>(i) * hw;
      for (std::size_t p = 0; p < hw; ++p) out.v[off + p] += a * x_t.v[off + p] + b * y.v[off + p];
    }
    if (keep) {
      x_in_ = x_t;
      y_in_ = y;
      gains_ = gains;
    }
  }
  return out;
}

void UNet::backward(const Tensor& d_out) {
  Tensor dh = out_norm_.backward(out_act_.backward(out_conv_.backward(d_out, ps_)), ps_);
  Matrix d_temb_act(d_out.n, 4 * cfg_.base_channels);
  if (cfg_.input_skip) {
    require(x_in_.same_shape(d_out), "UNet::backward without a matching forward pass");
    Matrix d_gains(d_out.n, 2);
    const std::size_t hw = d_out.hw();
    for (int i = 0; i < d_out.n; ++i) {
      double ga = 0.0, gb = 0.0;
      const std::size_t off = static_cast<std::size_t>(i) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        ga += static_cast<double>(d_out.v[off + p]) * x_in_.v[off + p];
        gb += static_cast<double>(d_out.v[off + p]) * y_in_.v[off + p];
      }
      d_gains.at(i, 0) = static_cast<float>(ga);
      d_gains.at(i, 1) = static_cast<float>(gb);
    }
    const Matrix d = skip_gain_.backward(d_gains, ps_);
    for (std::size_t k = 0; k < d.v.size(); ++k) d_temb_act.v[k] += d.v[k];
  }
  std::vector<Tensor> d_skips(down_.size());
  // Decoder levels were applied in order up_[0] (deepest) .. up_.back(); undo in reverse.
  for (int u = static_cast<int>(up_.size()) - 1; u >= 0; --u) {
    UpLevel& up = up_[u];
    for (int b = static_cast<int>(up.blocks.size()) - 1; b >= 0; --b) dh = up.blocks[b].backward(dh, d_temb_act, ps_);
    Tensor d_main, d_skip;
    nn::split_channels(dh, dh.c - up.skip_channels, d_main, d_skip);
    // up_[u] consumed the skip of encoder level (L - 2 - u).
    d_skips[down_.size() - 2 - u] = std::move(d_skip);
    dh = nn::upsample_nearest2_backward(up.up_conv.backward(d_main, ps_));
  }
  for (int l = static_cast<int>(down_.size()) - 1; l >= 0; --l) {
    Level& lvl = down_[l];
    if (lvl.has_down) {
      dh = lvl.down.backward(dh, ps_);
      const Tensor& ds = d_skips[l];
      for (std::size_t i = 0; i < dh.v.size(); ++i) dh.v[i] += ds.v[i];
    }
    for (int b = static_cast<int>(lvl.blocks.size()) - 1; b >= 0; --b) dh = lvl.blocks[b].backward(dh, d_temb_act, ps_);
  }
  Tensor dx, dy;
  nn::split_channels(dh, entry_channels_ / 2, dx, dy);
  entry_x_.backward(dx, ps_);
  entry_y_.backward(dy, ps_);

  const Matrix d_temb = time_act2_.backward(d_temb_act);
  time1_.backward(time_act1_.backward(time2_.backward(d_temb, ps_)), ps_);
}

}  // namespace ncsr::predictor
