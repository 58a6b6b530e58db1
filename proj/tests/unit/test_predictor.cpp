#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <tuple>
#include <random>
#include <set>

#include "ncsr/common/error.hpp"
#include "ncsr/diffusion/diffusion.hpp"
#include "ncsr/predictor/checkpoint.hpp"
#include "ncsr/predictor/nn.hpp"
#include "ncsr/predictor/predictors.hpp"
#include "ncsr/predictor/unet.hpp"

using namespace ncsr;
using namespace ncsr::predictor;
namespace fs = std::filesystem;

namespace {

void fill_random(std::vector<float>& v, std::mt19937& rng, float scale = 1.0f) {
  std::uniform_real_distribution<float> u(-scale, scale);
  for (float& x : v) x = u(rng);
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * b[i];
  return s;
}

UNetConfig tiny_config() {
  UNetConfig c;
  c.base_channels = 4;
  c.channel_mult = {1, 2, 2};
  c.res_blocks = 1;
  c.time_dim = 8;
  c.norm_groups = 2;
  c.init_seed = 5;
  return c;
}

// Perturbs every parameter so zero-initialized layers take part in the checks.
void randomize(UNet& net, std::uint32_t seed, float scale = 0.3f) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-scale, scale);
  for (float& p : net.params().values()) p += u(rng);
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ncsr_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Direct convolution in double: weights [co][ci][ky][kx], zero padding k/2.
std::vector<double> direct_conv(const nn::Tensor& x, const std::vector<float>& w, const std::vector<float>& b, int cout,
                                int k, int stride) {
  const int ho = (x.h - 1) / stride + 1, wo = (x.w - 1) / stride + 1, pad = k / 2;
  std::vector<double> out(static_cast<std::size_t>(cout) * x.n * ho * wo);
  for (int co = 0; co < cout; ++co)
    for (int n = 0; n < x.n; ++n)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double s = b[co];
          for (int ci = 0; ci < x.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                s += double(w[((co * x.c + ci) * k + ky) * k + kx]) * x.v[((ci * x.n + n) * x.h + iy) * x.w + ix];
              }
          out[((co * x.n + n) * ho + oy) * wo + ox] = s;
        }
  return out;
}

// Checks <grad, d> against a central difference of L = <weights, f(x)> along d.
template <typename F>
void check_directional(F loss, std::vector<float>& x, const std::vector<float>& analytic_grad, std::mt19937& rng,
                       double h = 1e-2, double tol = 1e-2) {
  std::vector<float> d(x.size());
  fill_random(d, rng);
  const std::vector<float> base = x;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = base[i] + float(h) * d[i];
  const double up = loss();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = base[i] - float(h) * d[i];
  const double down = loss();
  x = base;
  const double fd = (up - down) / (2 * h);
  const double an = dot(analytic_grad, d);
  CAPTURE(fd);
  CAPTURE(an);
  CHECK(std::abs(fd - an) <= tol * std::max(std::abs(fd), 1e-3));
}

}  // namespace

TEST_CASE("convolution matches a direct implementation") {
  std::mt19937 rng(1);
  for (auto [k, stride, h, w] : {std::tuple{3, 1, 7, 9}, std::tuple{3, 2, 8, 8}, std::tuple{3, 2, 7, 5},
                                  std::tuple{1, 1, 6, 6}, std::tuple{1, 2, 5, 8}}) {
    nn::ParamStore ps;
    nn::Conv2d conv(ps, 3, 4, k, stride);
    fill_random(ps.values(), rng);
    nn::Tensor x(3, 2, h, w);
    fill_random(x.v, rng);
    const nn::Tensor out = conv.forward(x, ps, false);
    const std::vector<float> wts(ps.values().begin(), ps.values().begin() + 4 * 3 * k * k);
    const std::vector<float> bias(ps.values().begin() + 4 * 3 * k * k, ps.values().end());
    const auto ref = direct_conv(x, wts, bias, 4, k, stride);
    REQUIRE(out.v.size() == ref.size());
    CAPTURE(k);
    CAPTURE(stride);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.v[i] == doctest::Approx(ref[i]).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("layer gradients match finite differences") {
  std::mt19937 rng(2);
  SUBCASE("conv2d") {
    for (auto [k, stride] : {std::pair{3, 1}, std::pair{3, 2}, std::pair{1, 1}}) {
      nn::ParamStore ps;
      nn::Conv2d conv(ps, 3, 5, k, stride);
      fill_random(ps.values(), rng);
      nn::Tensor x(3, 2, 6, 6);
      fill_random(x.v, rng);
      nn::Tensor probe = conv.forward(x, ps, false);
      fill_random(probe.v, rng);
      auto loss = [&] { return dot(conv.forward(x, ps, false).v, probe.v); };
      conv.forward(x, ps, true);
      ps.zero_grad();
      const nn::Tensor dx = conv.backward(probe, ps);
      check_directional(loss, x.v, dx.v, rng);
      check_directional(loss, ps.values(), ps.grads(), rng);
    }
  }
  SUBCASE("group norm") {
    nn::ParamStore ps;
    nn::GroupNorm gn(ps, 6, 3);
    gn.init(ps);
    fill_random(ps.values(), rng);
    nn::Tensor x(6, 2, 5, 5);
    fill_random(x.v, rng, 2.0f);
    nn::Tensor probe = gn.forward(x, ps, false);
    fill_random(probe.v, rng);
    auto loss = [&] { return dot(gn.forward(x, ps, false).v, probe.v); };
    gn.forward(x, ps, true);
    ps.zero_grad();
    const nn::Tensor dx = gn.backward(probe, ps);
    check_directional(loss, x.v, dx.v, rng, 1e-3);
    check_directional(loss, ps.values(), ps.grads(), rng);
  }
  SUBCASE("linear and silu") {
    nn::ParamStore ps;
    nn::Linear lin(ps, 5, 7);
    fill_random(ps.values(), rng);
    nn::SiLU act;
    nn::Matrix x(3, 5);
    fill_random(x.v, rng, 2.0f);
    nn::Matrix probe(3, 7);
    fill_random(probe.v, rng);
    auto loss = [&] { return dot(act.forward(lin.forward(x, ps, false), false).v, probe.v); };
    act.forward(lin.forward(x, ps, true), true);
    ps.zero_grad();
    const nn::Matrix dx = lin.backward(act.backward(probe), ps);
    check_directional(loss, x.v, dx.v, rng);
    check_directional(loss, ps.values(), ps.grads(), rng);
  }
  SUBCASE("upsampling and channel shift") {
    nn::Tensor x(2, 2, 3, 4);
    fill_random(x.v, rng);
    nn::Tensor probe(2, 2, 6, 8);
    fill_random(probe.v, rng);
    const nn::Tensor dx = nn::upsample_nearest2_backward(probe);
    check_directional([&] { return dot(nn::upsample_nearest2(x).v, probe.v); }, x.v, dx.v, rng);

    nn::Matrix shift(2, 2);
    fill_random(shift.v, rng);
    nn::Tensor h(2, 2, 3, 4);
    fill_random(h.v, rng);
    nn::Tensor ph(2, 2, 3, 4);
    fill_random(ph.v, rng);
    auto loss = [&] {
      nn::Tensor t = h;
      nn::add_channel_shift(t, shift);
      return dot(t.v, ph.v);
    };
    check_directional(loss, shift.v, nn::channel_shift_backward(ph).v, rng);
  }
}

TEST_CASE("u-net gradient matches finite differences") {
  UNet net(tiny_config());
  net.initialize();
  randomize(net, 3);
  std::mt19937 rng(4);
  nn::Tensor x(1, 2, 8, 8), y(1, 2, 8, 8);
  fill_random(x.v, rng);
  fill_random(y.v, rng);
  const std::vector<int> t{3, 70};
  nn::Tensor probe(1, 2, 8, 8);
  fill_random(probe.v, rng);
  auto loss = [&] { return dot(net.forward(x, y, t, false).v, probe.v); };
  net.forward(x, y, t, true);
  net.params().zero_grad();
  net.backward(probe);
  const std::vector<float> grads = net.params().grads();
  for (int rep = 0; rep < 3; ++rep) check_directional(loss, net.params().values(), grads, rng, 1e-3, 1e-2);
}

TEST_CASE("u-net shapes and conditioning") {
  UNet net(UNetConfig{});
  net.initialize();
  CHECK(net.parameter_count() > 100000);
  std::mt19937 rng(5);
  for (int side : {64, 128}) {
    nn::Tensor x(1, 1, side, side), y(1, 1, side, side);
    fill_random(x.v, rng);
    fill_random(y.v, rng);
    const std::vector<int> t{17};
    const nn::Tensor out = net.forward(x, y, t, false);
    CHECK(out.c == 1);
    CHECK(out.h == side);
    CHECK(out.w == side);
    // The output convolution starts at zero.
    for (float v : out.v) CHECK(v == 0.0f);
  }
  nn::Tensor odd(1, 1, 40, 40);
  CHECK_THROWS_AS(net.forward(odd, odd, std::vector<int>{1}, false), ValidationError);

  randomize(net, 6, 0.05f);
  nn::Tensor a(1, 1, 32, 32), b(1, 1, 32, 32);
  fill_random(a.v, rng);
  fill_random(b.v, rng);
  const std::vector<int> t{40};
  const nn::Tensor ab = net.forward(a, b, t, false);
  const nn::Tensor ba = net.forward(b, a, t, false);
  double diff = 0.0;
  for (std::size_t i = 0; i < ab.v.size(); ++i) diff += std::abs(ab.v[i] - ba.v[i]);
  CHECK(diff > 1e-3);
}

TEST_CASE("u-net input skip") {
  UNetConfig off = tiny_config();
  off.input_skip = false;
  const UNet plain(off);
  UNet net(tiny_config());
  net.initialize();
  CHECK(net.parameter_count() == plain.parameter_count() + 2 * (4 * 4) + 2);
  nlohmann::json j = tiny_config();
  CHECK(j.get<UNetConfig>().input_skip);
  j["input_skip"] = false;
  CHECK_FALSE(j.get<UNetConfig>().input_skip);

  // The gain layer is the last parameter block: weights [2][temb] then biases. With only the bias
  // of a set, the output is exactly a * x_t, constant offset included.
  std::vector<float>& p = net.params().values();
  p[p.size() - 2] = 0.75f;
  std::mt19937 rng(9);
  nn::Tensor x(1, 2, 8, 8), y(1, 2, 8, 8);
  fill_random(x.v, rng);
  fill_random(y.v, rng);
  for (float& v : x.v) v += 3.0f;
  const nn::Tensor out = net.forward(x, y, std::vector<int>{1, 90}, false);
  for (std::size_t i = 0; i < out.v.size(); ++i) CHECK(out.v[i] == doctest::Approx(0.75 * x.v[i]).epsilon(1e-6));
}

TEST_CASE("u-net output depends on a wide neighbourhood") {
  UNetConfig cfg;
  UNet net(cfg);
  net.initialize();
  randomize(net, 8, 0.05f);
  nn::Tensor x(1, 1, 64, 64), y(1, 1, 64, 64);
  std::mt19937 rng(9);
  fill_random(x.v, rng);
  fill_random(y.v, rng);
  const std::vector<int> t{10};
  const nn::Tensor base = net.forward(x, y, t, false);
  y.v[32 * 64 + 32] += 1.0f;
  const nn::Tensor moved = net.forward(x, y, t, false);
  for (int r = 16; r <= 48; ++r)
    for (int c = 16; c <= 48; ++c) CHECK(moved.v[r * 64 + c] != base.v[r * 64 + c]);
}

TEST_CASE("time embedding") {
  std::set<std::vector<float>> seen;
  for (int t = 1; t <= 1000; ++t) seen.insert(sinusoidal_embedding(t, 32));
  CHECK(seen.size() == 1000);

  UNet net(UNetConfig{});
  net.initialize();
  std::vector<int> steps(200);
  for (int i = 0; i < 200; ++i) steps[i] = 1 + 5 * i;
  const nn::Matrix e = net.embed_time(steps);
  const nn::Matrix again = net.embed_time(steps);
  CHECK(e.v == again.v);
  std::set<std::vector<float>> rows;
  for (int r = 0; r < e.rows; ++r) {
    std::vector<float> row(e.v.begin() + r * e.cols, e.v.begin() + (r + 1) * e.cols);
    double norm = 0.0;
    for (float v : row) {
      CHECK(std::isfinite(v));
      norm += double(v) * v;
    }
    CHECK(norm > 0.0);
    rows.insert(row);
  }
  CHECK(rows.size() == steps.size());
}

TEST_CASE("oracle predictor recovers the injected noise") {
  const auto s = diffusion::make_schedule(100);
  const auto oracle = oracle_delta_predictor(-0.3, s);
  diffusion::ImageBatch x0(3, 4, 4, -0.3), eps(3, 4, 4);
  Rng rng(3);
  fill_normal(rng, eps.data);
  const std::vector<int> t{1, 50, 100};
  const auto xt = diffusion::q_sample_batch(x0, t, eps, s);
  const auto pred = oracle->predict(xt, x0, t);
  for (std::size_t i = 0; i < eps.data.size(); ++i) CHECK(pred.data[i] == doctest::Approx(eps.data[i]).epsilon(1e-9));
  CHECK_THROWS_AS(oracle_delta_predictor(1.5, s), ValidationError);
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = scratch_dir("ckpt");
  auto net = std::make_shared<UNet>(tiny_config());
  net->initialize();
  randomize(*net, 10);
  Checkpoint ck;
  ck.unet = tiny_config();
  ck.schedule = diffusion::make_schedule(20);
  ck.corpus_hash = "abc123";
  ck.info = {{"iteration", 7}};
  ck.blobs["params"] = net->params().values();
  save_checkpoint(dir / "a.ckpt", ck);

  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.corpus_hash == "abc123");
  CHECK(back.info["iteration"] == 7);
  CHECK(back.schedule.beta == ck.schedule.beta);
  CHECK(back.blobs.at("params") == ck.blobs.at("params"));

  const auto loaded = load_unet(back);
  nn::Tensor x(1, 2, 8, 8), y(1, 2, 8, 8);
  std::mt19937 rng(11);
  fill_random(x.v, rng);
  fill_random(y.v, rng);
  const std::vector<int> t{4, 9};
  CHECK(loaded->forward(x, y, t, false).v == net->forward(x, y, t, false).v);

  const UNetPredictor a(net), b(loaded);
  CHECK(a.identity() == b.identity());

  Checkpoint oracle;
  oracle.kind = "oracle_delta";
  oracle.oracle_c = 0.25;
  oracle.schedule = ck.schedule;
  save_checkpoint(dir / "o.ckpt", oracle);
  const auto pred = make_predictor(load_checkpoint(dir / "o.ckpt"));
  CHECK(pred->identity() == oracle_delta_predictor(0.25, ck.schedule)->identity());

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS(load_checkpoint(dir / "junk.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("adam") {
  std::vector<float> p{1.0f, -2.0f, 0.5f};
  const std::vector<float> g{0.3f, -0.1f, 0.0f};
  SUBCASE("zero learning rate leaves parameters unchanged") {
    nn::Adam opt(3, 0.0);
    const auto before = p;
    for (int i = 0; i < 5; ++i) opt.step(p, g);
    CHECK(p == before);
    CHECK(opt.steps() == 5);
  }
  SUBCASE("first step moves each parameter by lr against the gradient sign") {
    nn::Adam opt(3, 0.01);
    opt.step(p, g);
    CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-5));
    CHECK(p[1] == doctest::Approx(-1.99).epsilon(1e-5));
    CHECK(p[2] == 0.5f);
  }
}
