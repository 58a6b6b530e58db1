#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "ncsr/predictor/nn.hpp"

namespace ncsr::predictor {

struct UNetConfig {
  int base_channels = 8;  // c
  std::vector<int> channel_mult = {1, 2, 4, 8, 16};
  int res_blocks = 2;       // per level, encoder and decoder
  int time_dim = 32;        // sinusoidal embedding width
  int norm_groups = 4;
  // Adds a(t) x_t + b(t) y to the output. The output GroupNorm strips spatial means, so without this
  // path the net can barely follow the DC of the noise, and that error is amplified by 1/sqrt(gamma_t).
  bool input_skip = true;
  std::uint64_t init_seed = 1;

  int levels() const { return static_cast<int>(channel_mult.size()); }
  /// Spatial sides must be divisible by this.
  int size_multiple() const { return 1 << (levels() - 1); }
  void validate() const;
};

void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);

/// Sinusoidal features of the step index: [sin(t w_i), cos(t w_i)], w_i = 10000^(-i / (dim/2)).
std::vector<float> sinusoidal_embedding(int t, int dim);

/// Residual block: GN -> SiLU -> conv3x3 (+ time shift) -> GN -> SiLU -> conv3x3, plus skip
/// (1x1 conv when the channel count changes).
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(nn::ParamStore& ps, int cin, int cout, int temb_dim, int groups);
  void init(nn::ParamStore& ps, Rng& rng) const;
  nn::Tensor forward(const nn::Tensor& x, const nn::Matrix& temb_act, const nn::ParamStore& ps, bool keep);
  /// Returns dx; adds the gradient w.r.t. temb_act into d_temb_act.
  nn::Tensor backward(const nn::Tensor& dy, nn::Matrix& d_temb_act, nn::ParamStore& ps);

 private:
  nn::GroupNorm gn1_, gn2_;
  nn::SiLU act1_, act2_;
  nn::Conv2d conv1_, conv2_;
  nn::Linear temb_proj_;
  bool has_skip_ = false;
  nn::Conv2d skip_;
};

/// Conditional noise predictor: separate entry convolutions for x_t and y, channel
/// concatenation, a levels-deep encoder/decoder with skip connections, and a
/// zero-initialized output convolution.
class UNet {
 public:
  explicit UNet(const UNetConfig& cfg);

  const UNetConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  std::size_t parameter_count() const { return ps_.size(); }

  /// Fresh initialization from config().init_seed.
  void initialize();

  /// x_t, y: tensors with one channel and n images; t: one step per image.
  /// `keep` caches activations for backward().
  nn::Tensor forward(const nn::Tensor& x_t, const nn::Tensor& y, std::span<const int> t, bool keep);
  /// Accumulates parameter gradients for the last forward(keep = true).
  void backward(const nn::Tensor& d_out);

  /// Time embedding after the two-layer map (rows = steps), for inspection.
  nn::Matrix embed_time(std::span<const int> t);

 private:
  struct Level {
    std::vector<ResBlock> blocks;
    bool has_down = false;
    nn::Conv2d down;
  };
  struct UpLevel {
    nn::Conv2d up_conv;
    std::vector<ResBlock> blocks;
    int skip_channels = 0;
  };

  UNetConfig cfg_;
  nn::ParamStore ps_;
  nn::Conv2d entry_x_, entry_y_;
  nn::Linear time1_, time2_;
  nn::SiLU time_act1_, time_act2_;
  std::vector<Level> down_;
  std::vector<UpLevel> up_;
  nn::GroupNorm out_norm_;
  nn::SiLU out_act_;
  nn::Conv2d out_conv_;
  nn::Linear skip_gain_;  // temb -> (a, b), zero-initialized

  // Kept for the input-skip gradient.
  nn::Tensor x_in_, y_in_;
  nn::Matrix gains_;

  // Backward bookkeeping.
  int entry_channels_ = 0;
  std::vector<int> skip_channels_;
};

}  // namespace ncsr::predictor
