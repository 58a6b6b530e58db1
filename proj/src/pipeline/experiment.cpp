#include "ncsr/pipeline/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ncsr/common/error.hpp"
#include "ncsr/common/hash.hpp"
#include "ncsr/common/log.hpp"
#include "ncsr/common/raster_io.hpp"
#include "ncsr/ctsim/sinogram_io.hpp"
#include "ncsr/phantoms/phantom.hpp"
#include "ncsr/pipeline/inference.hpp"
#include "ncsr/pipeline/report.hpp"
#include "ncsr/predictor/predictors.hpp"

namespace ncsr::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed streams; each slice family draws phantoms and noise fields from its own range.
constexpr std::uint64_t kRealTrainPhantom = 100000, kRealTrainNoise = 200000;
constexpr std::uint64_t kTestPhantom = 300000, kTestNoise = 400000;
constexpr std::uint64_t kSimPhantom = 500000, kSimNoise = 600000;
constexpr std::uint64_t kSimulatePhantom = 700000, kSimulateNoise = 800000;
constexpr std::uint64_t kInference = 900000;

std::string style_name(phantoms::HeadStyle s) { return s == phantoms::HeadStyle::smooth ? "smooth" : "trabecular"; }

phantoms::HeadStyle parse_style(const std::string& s) {
  if (s == "smooth") return phantoms::HeadStyle::smooth;
  if (s == "trabecular") return phantoms::HeadStyle::trabecular;
  throw ValidationError("unknown phantom style '" + s + "' (smooth | trabecular)");
}

std::string case_name(int i) {
  std::ostringstream s;
  s << "case_" << std::setw(2) << std::setfill('0') << i;
  return s.str();
}

std::string display_name(const std::string& arm) {
  if (arm == "proposed") return "Proposed";
  if (arm == "m1") return "M1";
  if (arm == "m2") return "M2";
  return arm;
}

dataset::HybridDatasetConfig mix_for(const ExperimentConfig& cfg, Recipe r) {
  dataset::HybridDatasetConfig mix = cfg.dataset;
  if (!uses_bone(r)) {
    mix.sim_fraction = 1.0;
    mix.bone_fraction = 0.0;
  }
  return mix;
}

metrics::RoiRole role_of(const RoiEntry& e) {
  if (e.anchor == "uniform_region") return metrics::RoiRole::uniform;
  if (e.anchor == "bone_region") return metrics::RoiRole::textured;
  return e.fixed.role;
}

double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json slice_meta(const dataset::Slice& s) {
  return {{"seed", s.seed},
          {"style", style_name(s.style)},
          {"uniform_roi", {s.uniform_roi.cx, s.uniform_roi.cy, s.uniform_roi.radius}},
          {"bone_roi", {s.bone_roi.cx, s.bone_roi.cy, s.bone_roi.half}}};
}

struct Phantom {
  phantoms::HeadPhantom head;
  std::uint64_t seed = 0;
  dataset::CleanScan clean;
};

Phantom make_phantom(const ExperimentConfig& cfg, std::uint64_t seed, phantoms::HeadStyle style) {
  Phantom p;
  p.seed = seed;
  p.head = phantoms::generate_head_phantom(seed, style, cfg.phantoms.options);
  p.clean = dataset::project_clean(phantoms::render_phantom(p.head.spec), cfg.acquisition);
  return p;
}

dataset::Slice acquire_slice(const ExperimentConfig& cfg, const Phantom& p, double k_hr, double k_lr,
                             std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  return dataset::make_slice(p.head, p.seed, p.clean, cfg.acquisition, k_hr, k_lr, rng);
}

}  // namespace

std::string to_string(Recipe r) {
  switch (r) {
    case Recipe::matched_sim_plus_bone: return "matched_sim_plus_bone";
    case Recipe::sim_only: return "sim_only";
    case Recipe::unmatched_sim_plus_bone: return "unmatched_sim_plus_bone";
  }
  return "?";
}

Recipe parse_recipe(const std::string& s) {
  for (Recipe r : {Recipe::matched_sim_plus_bone, Recipe::sim_only, Recipe::unmatched_sim_plus_bone})
    if (to_string(r) == s) return r;
  throw ValidationError("unknown corpus recipe '" + s +
                        "' (matched_sim_plus_bone | sim_only | unmatched_sim_plus_bone)");
}

bool uses_bone(Recipe r) { return r != Recipe::sim_only; }

std::vector<AblationArm> default_arms() {
  return {{"proposed", Recipe::matched_sim_plus_bone}, {"m1", Recipe::sim_only}, {"m2", Recipe::unmatched_sim_plus_bone}};
}

diffusion::DiffusionSchedule ScheduleSection::build() const {
  return diffusion::make_schedule(steps, diffusion::ScheduleKind::sigmoid, params);
}

void ExperimentConfig::validate() const {
  require(phantoms.train_sim > 0, "phantoms.train_sim must be positive");
  require(phantoms.train_real >= 0 && phantoms.test_real > 0, "phantoms.train_real >= 0 and test_real > 0 required");
  require(phantoms.calibration_slices > 0 && phantoms.calibration_slices <= phantoms.train_sim,
          "phantoms.calibration_slices must be in [1, train_sim]");
  require(phantoms.simulate_count > 0, "phantoms.simulate_count must be positive");
  require(phantoms.options.image_size * phantoms.options.pixel_spacing > 0, "phantom grid must be nonempty");
  acquisition.validate();
  require(noise.real_hr_k >= 0 && noise.real_lr_k >= 0, "noise k values must be >= 0");
  dataset.validate(acquisition.hr_size);
  schedule.build().validate();
  model.validate();
  training.validate();
  dataset.composition(training.batch_size);
  require(dataset.patch_size % model.size_multiple() == 0,
          "dataset.patch_size must be a multiple of " + std::to_string(model.size_multiple()));
  require(!arms.empty(), "at least one ablation arm is required");
  for (std::size_t i = 0; i < arms.size(); ++i) {
    require(!arms[i].name.empty(), "arm names must be nonempty");
    for (std::size_t j = 0; j < i; ++j) require(arms[i].name != arms[j].name, "duplicate arm name " + arms[i].name);
    if (uses_bone(arms[i].recipe)) require(phantoms.train_real > 0, "bone recipes need phantoms.train_real > 0");
    mix_for(*this, arms[i].recipe).composition(training.batch_size);
  }
  metrics.haralick.validate();
  for (const auto& r : metrics.rois) {
    require(!r.name.empty(), "metric ROIs need a name");
    require(r.anchor == "uniform_region" || r.anchor == "bone_region" || r.anchor == "fixed",
            "ROI anchor must be uniform_region, bone_region or fixed");
    if (r.anchor == "fixed") r.fixed.validate(acquisition.hr_size);
  }
}

ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.phantoms.options.bone_half_mm = 3.0;
  c.metrics.rois = {{"roi_uniform", "uniform_region", {}}, {"roi_bone", "bone_region", {}}};
  return c;
}

void to_json(json& j, const ExperimentConfig& c) {
  const auto& o = c.phantoms.options;
  json arms = json::array();
  for (const auto& a : c.arms) arms.push_back({{"name", a.name}, {"recipe", to_string(a.recipe)}});
  json rois = json::array();
  for (const auto& r : c.metrics.rois) {
    json e = {{"name", r.name}, {"anchor", r.anchor}};
    if (r.anchor == "fixed") e["roi"] = r.fixed;
    rois.push_back(e);
  }
  const auto& cal = c.noise.calibration;
  j = {{"seed", c.seed},
       {"phantoms",
        {{"train_sim", c.phantoms.train_sim},
         {"train_real", c.phantoms.train_real},
         {"test_real", c.phantoms.test_real},
         {"calibration_slices", c.phantoms.calibration_slices},
         {"simulate_count", c.phantoms.simulate_count},
         {"simulate_style", style_name(c.phantoms.simulate_style)},
         {"image_size", o.image_size},
         {"pixel_spacing", o.pixel_spacing},
         {"uniform_radius_mm", o.uniform_radius_mm},
         {"bone_half_mm", o.bone_half_mm},
         {"texture_correlation_mm", o.texture_correlation_mm}}},
       {"acquisition", c.acquisition},
       {"noise",
        {{"real_hr_k", c.noise.real_hr_k},
         {"real_lr_k", c.noise.real_lr_k},
         {"calibration",
          {{"k_max", cal.k_max},
           {"rel_tol", cal.rel_tol},
           {"max_iterations", cal.max_iterations},
           {"draws", cal.draws},
           {"seed", cal.seed}}}}},
       {"dataset", c.dataset},
       {"schedule", {{"steps", c.schedule.steps}, {"params", c.schedule.params}}},
       {"model", c.model},
       {"training", c.training},
       {"arms", arms},
       {"inference",
        {{"bone_threshold_hu", c.inference.bone_threshold_hu},
         {"bone_max_hole_mm2", c.inference.bone_max_hole_mm2},
         {"clamp_x0", c.inference.clamp_x0}}},
       {"metrics", {{"haralick", c.metrics.haralick}, {"rois", rois}}},
       {"output_dir", c.output_dir}};
}

void from_json(const json& j, ExperimentConfig& c) {
  c = default_experiment();
  c.seed = j.value("seed", c.seed);
  if (j.contains("phantoms")) {
    const json& p = j.at("phantoms");
    auto& o = c.phantoms.options;
    c.phantoms.train_sim = p.value("train_sim", c.phantoms.train_sim);
    c.phantoms.train_real = p.value("train_real", c.phantoms.train_real);
    c.phantoms.test_real = p.value("test_real", c.phantoms.test_real);
    c.phantoms.calibration_slices = p.value("calibration_slices", c.phantoms.calibration_slices);
    c.phantoms.simulate_count = p.value("simulate_count", c.phantoms.simulate_count);
    if (p.contains("simulate_style")) c.phantoms.simulate_style = parse_style(p.at("simulate_style").get<std::string>());
    o.image_size = p.value("image_size", o.image_size);
    o.pixel_spacing = p.value("pixel_spacing", o.pixel_spacing);
    o.uniform_radius_mm = p.value("uniform_radius_mm", o.uniform_radius_mm);
    o.bone_half_mm = p.value("bone_half_mm", o.bone_half_mm);
    o.texture_correlation_mm = p.value("texture_correlation_mm", o.texture_correlation_mm);
  }
  if (j.contains("acquisition")) c.acquisition = j.at("acquisition").get<dataset::AcquisitionConfig>();
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    c.noise.real_hr_k = n.value("real_hr_k", c.noise.real_hr_k);
    c.noise.real_lr_k = n.value("real_lr_k", c.noise.real_lr_k);
    if (n.contains("calibration")) {
      const json& k = n.at("calibration");
      auto& cal = c.noise.calibration;
      cal.k_max = k.value("k_max", cal.k_max);
      cal.rel_tol = k.value("rel_tol", cal.rel_tol);
      cal.max_iterations = k.value("max_iterations", cal.max_iterations);
      cal.draws = k.value("draws", cal.draws);
      cal.seed = k.value("seed", cal.seed);
    }
  }
  if (j.contains("dataset")) c.dataset = j.at("dataset").get<dataset::HybridDatasetConfig>();
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    c.schedule.steps = s.value("steps", c.schedule.steps);
    if (s.contains("params")) c.schedule.params = s.at("params").get<diffusion::ScheduleParams>();
  }
  if (j.contains("model")) c.model = j.at("model").get<predictor::UNetConfig>();
  if (j.contains("training")) c.training = j.at("training").get<TrainConfig>();
  if (j.contains("arms")) {
    c.arms.clear();
    for (const json& a : j.at("arms"))
      c.arms.push_back({a.at("name").get<std::string>(), parse_recipe(a.at("recipe").get<std::string>())});
  }
  if (j.contains("inference")) {
    const json& i = j.at("inference");
    c.inference.bone_threshold_hu = i.value("bone_threshold_hu", c.inference.bone_threshold_hu);
    c.inference.bone_max_hole_mm2 = i.value("bone_max_hole_mm2", c.inference.bone_max_hole_mm2);
    c.inference.clamp_x0 = i.value("clamp_x0", c.inference.clamp_x0);
  }
  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    if (m.contains("haralick")) c.metrics.haralick = m.at("haralick").get<metrics::HaralickConfig>();
    if (m.contains("rois")) {
      c.metrics.rois.clear();
      for (const json& r : m.at("rois")) {
        RoiEntry e;
        e.name = r.at("name").get<std::string>();
        e.anchor = r.value("anchor", std::string("uniform_region"));
        if (r.contains("roi")) e.fixed = r.at("roi").get<metrics::ROISpec>();
        e.fixed.name = e.name;
        c.metrics.rois.push_back(e);
      }
    }
  }
  c.output_dir = j.value("output_dir", c.output_dir);
}

ExperimentConfig resolve(ExperimentConfig c) {
  c.model.init_seed = derive_seed(c.seed, 1);
  c.training.seed = derive_seed(c.seed, 2);
  c.dataset.rng_seed = derive_seed(c.seed, 3);
  c.noise.calibration.seed = derive_seed(c.seed, 4);
  c.validate();
  return c;
}

std::string config_hash(const ExperimentConfig& c) {
  json j = c;
  j.erase("output_dir");
  return hash_hex(j.dump());
}

metrics::ROISpec roi_for_slice(const RoiEntry& entry, const dataset::Slice& slice) {
  const Image2D& g = slice.hr;
  const double half_fov = 0.5 * g.fov();
  auto row_of = [&](double y) { return (y + half_fov) / g.spacing - 0.5; };
  auto col_of = [&](double x) { return (x + half_fov) / g.spacing - 0.5; };
  metrics::ROISpec r;
  r.name = entry.name;
  if (entry.anchor == "uniform_region") {
    r.shape = metrics::RoiShape::ellipse;
    r.role = metrics::RoiRole::uniform;
    r.center_row = row_of(slice.uniform_roi.cy);
    r.center_col = col_of(slice.uniform_roi.cx);
    r.half_rows = r.half_cols = slice.uniform_roi.radius / g.spacing;
  } else if (entry.anchor == "bone_region") {
    r.shape = metrics::RoiShape::rectangle;
    r.role = metrics::RoiRole::textured;
    r.center_row = row_of(slice.bone_roi.cy);
    r.center_col = col_of(slice.bone_roi.cx);
    r.half_rows = r.half_cols = slice.bone_roi.half / g.spacing;
  } else {
    r = entry.fixed;
    r.name = entry.name;
  }
  r.validate(g.size);
  return r;
}

std::vector<Check> ablation_checks(const Report& report, const ExperimentConfig& cfg) {
  std::vector<Check> checks;
  auto arm_for = [&](Recipe r) -> std::optional<std::string> {
    for (const auto& a : cfg.arms)
      if (a.recipe == r) return display_name(a.name);
    return std::nullopt;
  };
  const auto proposed = arm_for(Recipe::matched_sim_plus_bone);
  const auto m1 = arm_for(Recipe::sim_only);
  const auto m2 = arm_for(Recipe::unmatched_sim_plus_bone);
  auto value = [&](const std::optional<std::string>& method, const std::string& col) -> std::optional<double> {
    if (!method) return std::nullopt;
    const auto it = report.table.find(*method);
    if (it == report.table.end() || !it->second.count(col)) return std::nullopt;
    return it->second.at(col);
  };
  auto num = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(3) << v;
    return s.str();
  };

  checks.push_back({"held-out slices >= 8", true, report.cases >= 8, std::to_string(report.cases) + " slices"});
  for (const auto& roi : cfg.metrics.rois) {
    const std::string col = (role_of(roi) == metrics::RoiRole::uniform ? "std:" : "haralick:") + roi.name;
    if (role_of(roi) == metrics::RoiRole::uniform) {
      const auto lr = value(std::string("LR"), col), p = value(proposed, col), m = value(m2, col);
      Check a{"noise " + roi.name + ": STD(Proposed) <= 1.15 STD(LR)", false, false, "missing arm"};
      if (lr && p) a = {a.name, true, *p <= 1.15 * *lr, num(*p) + " vs " + num(1.15 * *lr)};
      Check b{"noise " + roi.name + ": STD(M2) >= 1.20 STD(LR)", false, false, "missing arm"};
      if (lr && m) b = {b.name, true, *m >= 1.20 * *lr, num(*m) + " vs " + num(1.20 * *lr)};
      checks.push_back(a);
      checks.push_back(b);
    } else {
      const auto p = value(proposed, col), m = value(m1, col);
      Check c{"texture " + roi.name + ": Haralick(Proposed) < Haralick(M1)", false, false, "missing arm"};
      if (p && m) c = {c.name, true, *p < *m, num(*p) + " vs " + num(*m)};
      checks.push_back(c);
    }
  }
  const auto pp = value(proposed, "psnr"), pm = value(m1, "psnr");
  Check c{"PSNR(Proposed) >= PSNR(M1) + 1 dB", false, false, "missing arm"};
  if (pp && pm) c = {c.name, true, *pp >= *pm + 1.0, num(*pp) + " vs " + num(*pm + 1.0)};
  checks.push_back(c);
  return checks;
}

// ---------------------------------------------------------------------------

Experiment::Experiment(ExperimentConfig cfg, RunOptions options) : cfg_(resolve(std::move(cfg))), options_(options) {
  if (options_.noise_off) {
    cfg_.noise.real_hr_k = 0.0;
    cfg_.noise.real_lr_k = 0.0;
  }
  json snapshot = cfg_;
  snapshot["noise_off"] = options_.noise_off;
  hash_ = hash_hex(snapshot.dump());
  dir_ = options_.output_root / ("exp-" + hash_.substr(0, 12));
  fs::create_directories(dir_);
  io::write_json(dir_ / "config.resolved.json", cfg_);
}

bool Experiment::stage_done(const std::string& stage) const {
  const fs::path marker = dir_ / stage / "stage.json";
  if (!fs::exists(marker)) return false;
  return io::read_json(marker).value("config_hash", std::string{}) == hash_;
}

void Experiment::mark_done(const std::string& stage, const json& summary, StageClock::time_point start) const {
  fs::create_directories(dir_ / stage);
  const double seconds = std::chrono::duration<double>(StageClock::now() - start).count();
  io::write_json(dir_ / stage / "stage.json",
                 {{"stage", stage}, {"config_hash", hash_}, {"wall_seconds", seconds}, {"summary", summary}});
}

json Experiment::stage_summary(const std::string& stage) const {
  return io::read_json(dir_ / stage / "stage.json").at("summary");
}

const AblationArm& Experiment::arm(const std::string& name) const {
  for (const auto& a : cfg_.arms)
    if (a.name == name) return a;
  throw ValidationError("no ablation arm named '" + name + "'");
}

json Experiment::simulate() {
  if (options_.resume && stage_done("simulate")) {
    log::info("simulate: up to date, skipping");
    return stage_summary("simulate");
  }
  const auto start = StageClock::now();
  const fs::path out = dir_ / "simulate";
  fs::create_directories(out);
  const auto& acq = cfg_.acquisition;
  json manifest = json::array();
  for (int i = 0; i < cfg_.phantoms.simulate_count; ++i) {
    const std::uint64_t seed = derive_seed(cfg_.seed, kSimulatePhantom + i);
    const Phantom p = make_phantom(cfg_, seed, cfg_.phantoms.simulate_style);
    Rng rng(derive_seed(cfg_.seed, kSimulateNoise + i));
    const dataset::ScanResult scan =
        dataset::acquire(p.clean, acq, cfg_.noise.real_hr_k, cfg_.noise.real_lr_k, rng);
    const fs::path d = out / ("phantom_" + std::to_string(i));
    fs::create_directories(d);
    io::save_sinogram(d / "sino_hr_clean", scan.clean.hr);
    io::save_sinogram(d / "sino_lr_clean", scan.clean.lr);
    io::save_sinogram(d / "sino_hr_noisy", scan.noisy_hr);
    io::save_sinogram(d / "sino_lr_noisy", scan.noisy_lr);
    io::save_image(d / "recon_hr", scan.recon_hr, {{"acquisition", acq}});
    io::save_image(d / "recon_lr", scan.recon_lr, {{"acquisition", acq}});
    manifest.push_back({{"index", i},
                        {"phantom_seed", seed},
                        {"style", style_name(cfg_.phantoms.simulate_style)},
                        {"phantom", p.head.spec},
                        {"k_hr", cfg_.noise.real_hr_k},
                        {"k_lr", cfg_.noise.real_lr_k},
                        {"artifacts",
                         {"sino_hr_clean", "sino_lr_clean", "sino_hr_noisy", "sino_lr_noisy", "recon_hr", "recon_lr"}}});
  }
  const json summary = {{"phantoms", manifest.size()}, {"noise_off", options_.noise_off}};
  io::write_json(out / "manifest.json", {{"config_hash", hash_}, {"acquisition", acq}, {"phantoms", manifest}});
  mark_done("simulate", summary, start);
  return summary;
}

json Experiment::build_dataset() {
  if (options_.resume && stage_done("dataset")) {
    log::info("build-dataset: up to date, skipping");
    return stage_summary("dataset");
  }
  const auto start = StageClock::now();
  const fs::path out = dir_ / "dataset";
  fs::create_directories(out);
  const auto& P = cfg_.phantoms;

  log::info("build-dataset: real-like training slices");
  std::vector<dataset::Slice> real_train;
  double target = 0.0;
  for (int i = 0; i < P.train_real; ++i) {
    const Phantom p = make_phantom(cfg_, derive_seed(cfg_.seed, kRealTrainPhantom + i), phantoms::HeadStyle::trabecular);
    real_train.push_back(acquire_slice(cfg_, p, cfg_.noise.real_hr_k, cfg_.noise.real_lr_k,
                                       derive_seed(cfg_.seed, kRealTrainNoise + i)));
    target += dataset::disk_std(real_train.back().lr_up, real_train.back().uniform_roi) / P.train_real;
  }

  log::info("build-dataset: simulation phantoms");
  std::vector<Phantom> sim;
  for (int i = 0; i < P.train_sim; ++i)
    sim.push_back(make_phantom(cfg_, derive_seed(cfg_.seed, kSimPhantom + i), phantoms::HeadStyle::smooth));

  dataset::CalibrationResult cal;
  if (P.train_real > 0 && target > 0.0) {
    std::vector<dataset::CalibrationSlice> cs;
    for (int i = 0; i < P.calibration_slices; ++i) cs.push_back({sim[i].clean, sim[i].head.uniform_region});
    cal = dataset::calibrate_noise_levels(cs, cfg_.acquisition, target, cfg_.noise.calibration);
  } else {
    log::warn("build-dataset: no real-like noise to match; simulation stays noiseless");
  }
  log::info("build-dataset: target std " + std::to_string(target) + " HU, k_hr " + std::to_string(cal.k_hr) +
            ", k_lr " + std::to_string(cal.k_lr));

  std::vector<dataset::TrainingPair> matched, unmatched, bone;
  for (int i = 0; i < P.train_sim; ++i) {
    const std::uint64_t noise = derive_seed(cfg_.seed, kSimNoise + i);
    matched.push_back(dataset::sim_pair(acquire_slice(cfg_, sim[i], cal.k_hr, cal.k_lr, noise)));
    unmatched.push_back(dataset::sim_pair(acquire_slice(cfg_, sim[i], cal.k_lr, cal.k_lr, noise)));
  }
  for (const auto& s : real_train)
    if (auto b = dataset::bone_pair(s, cfg_.dataset.bone_threshold_hu, cfg_.dataset.bone_max_hole_mm2)) bone.push_back(std::move(*b));

  json corpora = json::object();
  for (Recipe r : {Recipe::matched_sim_plus_bone, Recipe::sim_only, Recipe::unmatched_sim_plus_bone}) {
    const bool needed = std::any_of(cfg_.arms.begin(), cfg_.arms.end(), [r](const auto& a) { return a.recipe == r; });
    if (!needed) continue;
    const auto& sims = r == Recipe::unmatched_sim_plus_bone ? unmatched : matched;
    const dataset::Corpus corpus = dataset::build_hybrid_corpus(
        sims, uses_bone(r) ? bone : std::vector<dataset::TrainingPair>{}, mix_for(cfg_, r));
    dataset::save_corpus(out / "corpus" / to_string(r), corpus);
    corpora[to_string(r)] = {{"hash", corpus.hash()}, {"sim", corpus.sim.size()}, {"bone", corpus.bone.size()}};
  }

  log::info("build-dataset: held-out slices");
  for (int i = 0; i < P.test_real; ++i) {
    const Phantom p = make_phantom(cfg_, derive_seed(cfg_.seed, kTestPhantom + i), phantoms::HeadStyle::trabecular);
    const dataset::Slice s =
        acquire_slice(cfg_, p, cfg_.noise.real_hr_k, cfg_.noise.real_lr_k, derive_seed(cfg_.seed, kTestNoise + i));
    const fs::path d = out / "test" / case_name(i);
    fs::create_directories(d);
    io::save_image(d / "hr", s.hr);
    io::save_image(d / "lr", s.lr);
    io::save_image(d / "lr_up", s.lr_up);
    io::write_json(d / "slice.json", slice_meta(s));
  }

  const json calibration = {{"target_std_hu", target}, {"k_hr", cal.k_hr},         {"k_lr", cal.k_lr},
                            {"std_hr", cal.std_hr},    {"std_lr", cal.std_lr},     {"iterations", cal.iterations},
                            {"unmatched_k_hr", cal.k_lr}, {"unmatched_k_lr", cal.k_lr}};
  io::write_json(out / "calibration.json", calibration);
  const json summary = {{"calibration", calibration}, {"corpora", corpora}, {"test_cases", P.test_real}};
  mark_done("dataset", summary, start);
  return summary;
}

std::vector<dataset::Slice> Experiment::load_test_slices() const {
  std::vector<dataset::Slice> out;
  for (int i = 0; i < cfg_.phantoms.test_real; ++i) {
    const fs::path d = dir_ / "dataset" / "test" / case_name(i);
    if (!fs::exists(d / "slice.json")) throw RuntimeError("missing held-out slice " + d.string() + "; run build-dataset");
    const json m = io::read_json(d / "slice.json");
    dataset::Slice s;
    s.seed = m.at("seed").get<std::uint64_t>();
    s.style = parse_style(m.at("style").get<std::string>());
    s.hr = io::load_image(d / "hr");
    s.lr = io::load_image(d / "lr");
    s.lr_up = io::load_image(d / "lr_up");
    const auto u = m.at("uniform_roi").get<std::vector<double>>();
    const auto b = m.at("bone_roi").get<std::vector<double>>();
    s.uniform_roi = {u[0], u[1], u[2]};
    s.bone_roi = {b[0], b[1], b[2]};
    out.push_back(std::move(s));
  }
  return out;
}

void Experiment::train(const std::optional<std::string>& name) {
  const auto schedule = cfg_.schedule.build();
  for (const auto& a : cfg_.arms) {
    if (name && a.name != *name) continue;
    const std::string stage = "train/" + a.name;
    if (options_.resume && stage_done(stage)) {
      log::info("train " + a.name + ": up to date, skipping");
      continue;
    }
    const auto start = StageClock::now();
    const fs::path corpus_dir = dir_ / "dataset" / "corpus" / to_string(a.recipe);
    if (!fs::exists(corpus_dir / "manifest.json"))
      throw RuntimeError("arm '" + a.name + "': corpus " + corpus_dir.string() + " is missing; run build-dataset");
    const dataset::Corpus corpus = dataset::load_corpus(corpus_dir);
    predictor::UNet net(cfg_.model);
    net.initialize();
    log::info("train " + a.name + ": " + std::to_string(net.parameter_count()) + " parameters, " +
              std::to_string(cfg_.training.iterations) + " iterations");
    const TrainOutcome res =
        pipeline::train(cfg_.training, mix_for(cfg_, a.recipe), corpus, net, schedule, dir_ / stage, options_.resume);
    const std::size_t n = res.losses.size();
    json summary = {{"arm", a.name}, {"recipe", to_string(a.recipe)}, {"corpus_hash", corpus.hash()},
                    {"iterations", n}};
    if (n >= 100) {
      summary["loss_first_50"] = window_mean(res.losses, 0, 50);
      summary["loss_last_50"] = window_mean(res.losses, n - 50, n);
    }
    mark_done(stage, summary, start);
  }
}

void Experiment::infer(const std::optional<std::string>& name) {
  const auto slices = load_test_slices();
  for (const auto& a : cfg_.arms) {
    if (name && a.name != *name) continue;
    const std::string stage = "infer/" + a.name;
    if (options_.resume && stage_done(stage)) {
      log::info("infer " + a.name + ": up to date, skipping");
      continue;
    }
    const auto start = StageClock::now();
    const fs::path ckpt = dir_ / "train" / a.name / "model.ckpt";
    if (!fs::exists(ckpt)) throw RuntimeError("arm '" + a.name + "': missing checkpoint " + ckpt.string());
    const predictor::Checkpoint ck = predictor::load_checkpoint(ckpt);
    const auto predictor = predictor::make_predictor(ck);
    SuperResolveOptions opt;
    opt.window = cfg_.dataset.window;
    opt.sampler.clamp_x0 = cfg_.inference.clamp_x0;
    opt.size_multiple = ck.kind == "unet" ? ck.unet.size_multiple() : 1;
    json cases = json::array();
    for (std::size_t i = 0; i < slices.size(); ++i) {
      log::info("infer " + a.name + ": " + case_name(static_cast<int>(i)));
      Rng rng(derive_seed(cfg_.seed, kInference + i));
      const fs::path d = dir_ / stage / case_name(static_cast<int>(i));
      fs::create_directories(d);
      json meta;
      if (uses_bone(a.recipe)) {
        const BoneSuperResolution r =
            super_resolve_with_bone(slices[i].lr, *predictor, ck.schedule, rng, opt, cfg_.inference.bone_threshold_hu,
                                    cfg_.inference.bone_max_hole_mm2);
        io::save_image(d / "sr", r.composite);
        io::save_image(d / "sr_full", r.full);
        io::save_image(d / "sr_bone", r.bone);
        meta = r.meta;
      } else {
        const SuperResolution r = super_resolve(slices[i].lr, *predictor, ck.schedule, rng, opt);
        io::save_image(d / "sr", r.image);
        meta = r.meta;
      }
      io::write_json(d / "meta.json", meta);
      cases.push_back(meta);
    }
    mark_done(stage, {{"arm", a.name}, {"cases", cases.size()}}, start);
  }
}

Report Experiment::evaluate() {
  const auto start = StageClock::now();
  const auto slices = load_test_slices();
  const int n = static_cast<int>(slices.size());
  // Arms must agree on everything but their corpus.
  json reference;
  for (const auto& a : cfg_.arms) {
    const fs::path ckpt = dir_ / "train" / a.name / "model.ckpt";
    if (!fs::exists(ckpt)) throw RuntimeError("arm '" + a.name + "': missing checkpoint " + ckpt.string());
    const predictor::Checkpoint ck = predictor::load_checkpoint(ckpt);
    json shared = {{"unet", ck.unet}, {"schedule", ck.schedule}, {"train", ck.info.at("train")}};
    if (reference.is_null()) reference = shared;
    require(shared == reference, "arm '" + a.name + "' differs from the other arms beyond its corpus recipe");
  }

  Report report;
  report.cases = n;
  report.methods = {"HR", "LR"};
  for (const auto& a : cfg_.arms) report.methods.push_back(display_name(a.name));

  // images[method][case]
  std::map<std::string, std::vector<Image2D>> images;
  for (const auto& s : slices) {
    images["HR"].push_back(s.hr);
    images["LR"].push_back(s.lr_up);
  }
  for (const auto& a : cfg_.arms)
    for (int i = 0; i < n; ++i) {
      const fs::path stem = dir_ / "infer" / a.name / case_name(i) / "sr";
      if (!fs::exists(io::sidecar_path(stem)))
        throw RuntimeError("arm '" + a.name + "': missing inference output " + stem.string() + "; run infer");
      images[display_name(a.name)].push_back(io::load_image(stem));
    }

  std::vector<std::vector<metrics::ROISpec>> rois(n);
  for (int i = 0; i < n; ++i)
    for (const auto& e : cfg_.metrics.rois) rois[i].push_back(roi_for_slice(e, slices[i]));

  std::map<std::string, std::map<std::string, std::vector<double>>> per_case;
  auto emit = [&](int i, const std::string& method, const std::string& roi, const std::string& metric, double v) {
    report.rows.push_back({case_name(i), method, roi, metric, v});
    per_case[method][metric == "psnr" ? "psnr" : metric + ":" + roi].push_back(v);
  };

  json standardization = json::object();
  for (std::size_t r = 0; r < cfg_.metrics.rois.size(); ++r) {
    const std::string& roi_name = cfg_.metrics.rois[r].name;
    if (role_of(cfg_.metrics.rois[r]) == metrics::RoiRole::uniform) {
      for (const auto& m : report.methods)
        for (int i = 0; i < n; ++i) emit(i, m, roi_name, "std", metrics::roi_std(images[m][i], rois[i][r]));
      continue;
    }
    std::map<std::string, std::vector<std::vector<double>>> feats;
    std::vector<std::vector<double>> all;
    for (const auto& m : report.methods)
      for (int i = 0; i < n; ++i) {
        feats[m].push_back(metrics::haralick_features(images[m][i], rois[i][r], cfg_.metrics.haralick));
        all.push_back(feats[m].back());
      }
    const metrics::FeatureStandardization st = metrics::fit_standardization(all);
    standardization[roi_name] = st;
    for (const auto& m : report.methods)
      for (int i = 0; i < n; ++i) emit(i, m, roi_name, "haralick", metrics::feature_distance(feats[m][i], feats["HR"][i], st));
  }
  for (const auto& m : report.methods)
    for (int i = 0; i < n; ++i) emit(i, m, "full", "psnr", metrics::psnr(images[m][i], images["HR"][i]));

  for (const auto& [m, cols] : per_case)
    for (const auto& [col, vals] : cols) report.table[m][col] = median(vals);
  report.checks = ablation_checks(report, cfg_);

  const fs::path out = dir_ / "evaluate";
  fs::create_directories(out);
  metrics::write_metrics_csv(out / "metrics.csv", report.rows);
  write_summary_csv(out / "summary.csv", report);
  {
    std::ofstream md(out / "summary.md");
    md << summary_markdown(report);
  }
  io::write_json(out / "standardization.json", standardization);
  json checks = json::array();
  for (const auto& c : report.checks)
    checks.push_back({{"name", c.name}, {"evaluated", c.evaluated}, {"pass", c.pass}, {"detail", c.detail}});
  io::write_json(out / "checks.json", checks);

  std::vector<FigureRow> fig;
  for (int i = 0; i < std::min(n, 2); ++i) {
    FigureRow row;
    for (const auto& m : report.methods) row.images.push_back(images[m][i]);
    row.rois = rois[i];
    for (const auto& r : rois[i])
      if (r.role == metrics::RoiRole::textured) row.zoom = r;
    fig.push_back(row);
  }
  render_figure(out / "figure.png", fig, -500.0, 1500.0);
  mark_done("evaluate", {{"cases", n}}, start);
  return report;
}

Report Experiment::reproduce() {
  build_dataset();
  train();
  infer();
  return evaluate();
}

}  // namespace ncsr::pipeline
