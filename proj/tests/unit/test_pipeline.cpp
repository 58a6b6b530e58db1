#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "ncsr/common/error.hpp"
#include "ncsr/common/raster_io.hpp"
#include "ncsr/dataset/dataset.hpp"
#include "ncsr/dataset/morphology.hpp"
#include "ncsr/dataset/resample.hpp"
#include "ncsr/pipeline/experiment.hpp"
#include "ncsr/pipeline/inference.hpp"
#include "ncsr/pipeline/report.hpp"
#include "ncsr/pipeline/train.hpp"
#include "ncsr/predictor/predictors.hpp"

using namespace ncsr;
using namespace ncsr::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ncsr_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Image2D random_image(int n, double lo, double hi, std::uint32_t seed) {
  Image2D img(n, 0.5);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : img.data) v = u(rng);
  return img;
}

Mask2D random_mask(int n, std::uint32_t seed) {
  Mask2D m(n);
  std::mt19937 rng(seed);
  for (auto& v : m.data) v = rng() % 2;
  return m;
}

// Smooth blobs plus a little noise; y is a blurred copy.
dataset::TrainingPair synthetic_pair(int n, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image2D x(n, 0.5, -1000.0);
  for (int b = 0; b < 4; ++b) {
    const double cr = u(rng) * n, cc = u(rng) * n, r = 2.0 + 4.0 * u(rng), v = 1500.0 * u(rng);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if ((i - cr) * (i - cr) + (j - cc) * (j - cc) < r * r) x.at(i, j) = -1000.0 + v;
  }
  Image2D y = x;
  for (int i = 1; i + 1 < n; ++i)
    for (int j = 1; j + 1 < n; ++j)
      y.at(i, j) = (x.at(i - 1, j) + x.at(i + 1, j) + x.at(i, j - 1) + x.at(i, j + 1) + 4 * x.at(i, j)) / 8.0;
  return {x, y, dataset::PairSource::sim, std::nullopt};
}

predictor::UNetConfig small_unet() {
  predictor::UNetConfig c;
  c.base_channels = 4;
  c.channel_mult = {1, 2, 2};
  c.res_blocks = 1;
  c.time_dim = 8;
  c.norm_groups = 2;
  c.init_seed = 3;
  return c;
}

struct SmallSetup {
  dataset::HybridDatasetConfig mix;
  dataset::Corpus corpus;
  diffusion::DiffusionSchedule schedule = diffusion::make_schedule(50);
  TrainConfig cfg;

  SmallSetup() {
    mix.sim_fraction = 1.0;
    mix.bone_fraction = 0.0;
    mix.patch_size = 16;
    std::vector<dataset::TrainingPair> pairs;
    for (int i = 0; i < 8; ++i) pairs.push_back(synthetic_pair(24, 100 + i));
    corpus = dataset::build_hybrid_corpus(pairs, {}, mix);
    cfg.batch_size = 4;
    cfg.seed = 17;
    cfg.checkpoint_every = 10;
  }
};

ExperimentConfig tiny_experiment() {
  ExperimentConfig c = default_experiment();
  c.phantoms.train_sim = 2;
  c.phantoms.train_real = 2;
  c.phantoms.test_real = 2;
  c.phantoms.calibration_slices = 1;
  c.noise.calibration.rel_tol = 0.02;
  c.schedule.steps = 3;
  c.model = small_unet();
  c.training.iterations = 2;
  c.training.batch_size = 4;
  c.dataset.patch_size = 16;
  return c;
}

}  // namespace

TEST_CASE("bone compositing") {
  const Image2D full = random_image(16, -100, 100, 1), bone = random_image(16, 500, 900, 2);
  SUBCASE("empty and full masks") {
    CHECK(composite_bone(full, bone, {Mask2D(16, 0)}).data == full.data);
    CHECK(composite_bone(full, bone, {Mask2D(16, 1)}).data == bone.data);
  }
  SUBCASE("random masks against a reference loop") {
    for (std::uint32_t s = 0; s < 20; ++s) {
      const Mask2D m = random_mask(16, s);
      const Image2D out = composite_bone(full, bone, {m});
      for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) CHECK(out.at(r, c) == (m.at(r, c) ? bone.at(r, c) : full.at(r, c)));
      CHECK(composite_bone(out, bone, {m}).data == out.data);
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(composite_bone(full, random_image(8, 0, 1, 3), {Mask2D(16)}), ValidationError);
    CHECK_THROWS_AS(composite_bone(full, bone, {Mask2D(8)}), ValidationError);
  }
}

TEST_CASE("test-time segmentation and bone conditioning") {
  Image2D lr(32, 1.0, 0.0);
  for (int r = 10; r < 20; ++r)
    for (int c = 8; c < 22; ++c) lr.at(r, c) = 900.0;
  const dataset::BoneMask m = segment_test_bone(lr);
  CHECK(m.threshold_hu == kTestBoneThresholdHu);
  CHECK(m.mask.size == 64);
  const Image2D up = dataset::sinc_upsample(lr, 2);
  CHECK(m.mask == dataset::segment_bone(up, kTestBoneThresholdHu).mask);
  CHECK(m.mask.at(30, 30) == 1);
  CHECK(m.mask.at(5, 5) == 0);
  const Image2D cond = bone_condition(up, m.mask);
  for (std::size_t i = 0; i < cond.data.size(); ++i)
    CHECK(cond.data[i] == (m.mask.data[i] ? up.data[i] : dataset::kBackgroundHu));
}

TEST_CASE("symmetric padding") {
  const Image2D img = random_image(5, 0, 1, 4);
  const Image2D p = pad_symmetric(img, 2, 3);
  CHECK(p.size == 10);
  auto src = [](int i) { return i < 0 ? -i - 1 : (i >= 5 ? 9 - i : i); };
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) CHECK(p.at(r, c) == img.at(src(r - 2), src(c - 2)));
}

TEST_CASE("super-resolution with the delta-data oracle") {
  const auto s = diffusion::make_schedule(100);
  const double c = 0.2;
  const auto oracle = predictor::oracle_delta_predictor(c, s);
  const Image2D lr = random_image(20, -1000, 1500, 5);
  SuperResolveOptions opt;
  opt.size_multiple = 16;
  Rng a(9), b(9);
  const SuperResolution r = super_resolve(lr, *oracle, s, a, opt);
  CHECK(r.image.size == 40);
  CHECK(r.image.spacing == doctest::Approx(lr.spacing / 2));
  CHECK(r.meta["padding"]["before"] == 4);
  CHECK(r.meta["padding"]["after"] == 4);
  CHECK(super_resolve(lr, *oracle, s, b, opt).image.data == r.image.data);
  const double target = opt.window.denormalize(c);
  double mean = 0.0;
  for (double v : r.image.data) mean += v / r.image.data.size();
  CHECK(std::abs(mean - target) <= 0.05 * 1500.0);

  // Same through a checkpoint.
  predictor::Checkpoint ck;
  ck.kind = "oracle_delta";
  ck.oracle_c = c;
  ck.schedule = s;
  Rng d(9);
  CHECK(super_resolve(lr, ck, d, opt).image.data == r.image.data);
}

TEST_CASE("training loop") {
  SmallSetup S;
  SUBCASE("smoke: running-mean loss decreases") {
    predictor::UNet net(small_unet());
    net.initialize();
    S.cfg.iterations = 200;
    const TrainOutcome out = train(S.cfg, S.mix, S.corpus, net, S.schedule);
    REQUIRE(out.losses.size() == 200);
    const double first = window_mean(out.losses, 0, 50), last = window_mean(out.losses, 150, 200);
    CAPTURE(first);
    CAPTURE(last);
    CHECK(last < first);
  }
  SUBCASE("zero learning rate keeps the parameters") {
    predictor::UNet net(small_unet());
    net.initialize();
    const auto before = net.params().values();
    S.cfg.iterations = 5;
    S.cfg.learning_rate = 0.0;
    train(S.cfg, S.mix, S.corpus, net, S.schedule);
    CHECK(net.params().values() == before);
  }
  SUBCASE("deterministic, and resuming matches an uninterrupted run") {
    S.cfg.iterations = 20;
    predictor::UNet a(small_unet()), b(small_unet()), c(small_unet());
    a.initialize();
    b.initialize();
    c.initialize();
    const auto ra = train(S.cfg, S.mix, S.corpus, a, S.schedule);
    const auto rb = train(S.cfg, S.mix, S.corpus, b, S.schedule);
    CHECK(ra.losses == rb.losses);
    CHECK(a.params().values() == b.params().values());

    const fs::path dir = scratch_dir("resume");
    TrainConfig half = S.cfg;
    half.iterations = 10;
    train(half, S.mix, S.corpus, c, S.schedule, dir);
    predictor::UNet d(small_unet());
    d.initialize();
    const auto rd = train(S.cfg, S.mix, S.corpus, d, S.schedule, dir, true);
    CHECK(rd.resumed_from == 10);
    CHECK(rd.losses == ra.losses);
    CHECK(d.params().values() == a.params().values());
    CHECK(fs::exists(dir / "model.ckpt"));
    CHECK(fs::exists(dir / "loss.csv"));
    fs::remove_all(dir);
  }
  SUBCASE("non-finite loss aborts with the iteration") {
    predictor::UNet net(small_unet());
    net.initialize();
    S.cfg.iterations = 50;
    S.cfg.learning_rate = 1e30;
    try {
      train(S.cfg, S.mix, S.corpus, net, S.schedule);
      FAIL("expected an abort");
    } catch (const RuntimeError& e) {
      CHECK(std::string(e.what()).find("iteration") != std::string::npos);
      CHECK(std::string(e.what()).find("sim#") != std::string::npos);
    }
  }
  SUBCASE("batch composition must be integral") {
    predictor::UNet net(small_unet());
    net.initialize();
    S.mix.sim_fraction = 0.75;
    S.mix.bone_fraction = 0.25;
    S.cfg.batch_size = 3;
    CHECK_THROWS_AS(train(S.cfg, S.mix, S.corpus, net, S.schedule), ValidationError);
  }
}

TEST_CASE("learning-rate schedules") {
  TrainConfig c;
  c.iterations = 110;
  c.learning_rate = 1e-3;
  CHECK(c.learning_rate_at(1) == 1e-3);
  CHECK(c.learning_rate_at(110) == 1e-3);
  c.lr_schedule = LrSchedule::cosine;
  c.warmup_iterations = 10;
  c.min_learning_rate = 1e-5;
  CHECK(c.learning_rate_at(1) == doctest::Approx(1e-4));
  CHECK(c.learning_rate_at(10) == doctest::Approx(1e-3));
  CHECK(c.learning_rate_at(11) == doctest::Approx(1e-3));
  CHECK(c.learning_rate_at(110) == doctest::Approx(1e-5));
  // Halfway through the decay the rate is the midpoint.
  const double mid = c.learning_rate_at(11 + 49) + c.learning_rate_at(11 + 50);
  CHECK(mid / 2 == doctest::Approx(0.5 * (1e-3 + 1e-5)).epsilon(1e-3));
  for (long long it = 11; it < 110; ++it) CHECK(c.learning_rate_at(it + 1) <= c.learning_rate_at(it));
  CHECK(nlohmann::json(c).get<TrainConfig>().learning_rate_at(37) == c.learning_rate_at(37));
  c.min_learning_rate = 2e-3;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  SmallSetup S;
  S.cfg.iterations = 10;
  S.cfg.lr_schedule = LrSchedule::cosine;
  S.cfg.warmup_iterations = 2;
  const fs::path dir = scratch_dir("cosine");
  predictor::UNet a(small_unet());
  a.initialize();
  train(S.cfg, S.mix, S.corpus, a, S.schedule, dir);
  // The decay depends on the total, so extending a cosine run is refused.
  TrainConfig longer = S.cfg;
  longer.iterations = 20;
  predictor::UNet b(small_unet());
  b.initialize();
  CHECK_THROWS_AS(train(longer, S.mix, S.corpus, b, S.schedule, dir, true), ValidationError);
  fs::remove_all(dir);
}

TEST_CASE("experiment configuration") {
  const ExperimentConfig d = default_experiment();
  const ExperimentConfig back = nlohmann::json(d).get<ExperimentConfig>();
  CHECK(nlohmann::json(back) == nlohmann::json(d));
  CHECK(config_hash(resolve(d)) == config_hash(resolve(back)));
  ExperimentConfig other = d;
  other.seed += 1;
  CHECK(config_hash(resolve(other)) != config_hash(resolve(d)));
  ExperimentConfig bad = d;
  bad.training.batch_size = 10;  // 0.75 * 10 is not an integer
  CHECK_THROWS_AS(resolve(bad), ValidationError);
  CHECK_THROWS_AS(parse_recipe("nope"), ValidationError);
}

TEST_CASE("ablation harness end to end at toy scale") {
  const fs::path root = scratch_dir("ablation");
  RunOptions opt;
  opt.output_root = root;
  Experiment exp(tiny_experiment(), opt);
  const Report report = exp.reproduce();

  CHECK(report.methods == std::vector<std::string>{"HR", "LR", "Proposed", "M1", "M2"});
  for (const auto& m : report.methods) {
    CHECK(report.table.at(m).count("std:roi_uniform") == 1);
    CHECK(report.table.at(m).count("haralick:roi_bone") == 1);
    CHECK(report.table.at(m).count("psnr") == 1);
  }
  CHECK(report.table.at("HR").at("haralick:roi_bone") == 0.0);
  CHECK(std::isinf(report.table.at("HR").at("psnr")));
  CHECK(report.rows.size() == 5u * 2u * 3u);
  for (const char* f : {"metrics.csv", "summary.csv", "summary.md", "standardization.json", "checks.json", "figure.png"})
    CHECK(fs::exists(exp.dir() / "evaluate" / f));
  int w = 0, h = 0;
  read_png_rgb(exp.dir() / "evaluate" / "figure.png", w, h);
  CHECK(w == 5 * 128 + 6 * 4);
  CHECK(fs::exists(exp.dir() / "config.resolved.json"));

  // Evaluation is deterministic given the stored outputs.
  const Report again = exp.evaluate();
  for (std::size_t i = 0; i < report.rows.size(); ++i) CHECK(again.rows[i].value == report.rows[i].value);

  // With --resume every stage is skipped and the inference outputs stay untouched.
  const auto stamp = fs::last_write_time(exp.dir() / "infer" / "m1" / "case_00" / "sr.f32");
  RunOptions resume = opt;
  resume.resume = true;
  Experiment rerun(tiny_experiment(), resume);
  CHECK(rerun.dir() == exp.dir());
  rerun.reproduce();
  CHECK(fs::last_write_time(exp.dir() / "infer" / "m1" / "case_00" / "sr.f32") == stamp);

  // Identical configuration and seeds reproduce the same rows from scratch.
  const fs::path root2 = scratch_dir("ablation2");
  RunOptions opt2;
  opt2.output_root = root2;
  Experiment twin(tiny_experiment(), opt2);
  const Report twin_report = twin.reproduce();
  for (std::size_t i = 0; i < report.rows.size(); ++i) CHECK(twin_report.rows[i].value == report.rows[i].value);

  // A missing checkpoint is reported with the arm name.
  fs::remove(exp.dir() / "train" / "m2" / "model.ckpt");
  try {
    exp.infer(std::string("m2"));
    FAIL("expected a missing-checkpoint error");
  } catch (const RuntimeError& e) {
    CHECK(std::string(e.what()).find("m2") != std::string::npos);
  }
  fs::remove_all(root);
  fs::remove_all(root2);
}
