#include "ncsr/dataset/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "ncsr/common/error.hpp"
#include "ncsr/common/hash.hpp"
#include "ncsr/common/log.hpp"
#include "ncsr/common/raster_io.hpp"
#include "ncsr/dataset/resample.hpp"

namespace ncsr::dataset {

using nlohmann::json;

std::string to_string(PairSource s) { return s == PairSource::sim ? "sim" : "bone"; }

PairSource parse_source(const std::string& s) {
  if (s == "sim") return PairSource::sim;
  if (s == "bone") return PairSource::bone;
  throw ValidationError("unknown pair source '" + s + "'");
}

Image2D NormalizationWindow::normalize(const Image2D& img) const {
  Image2D out = img;
  for (double& v : out.data) v = normalize(v);
  return out;
}

Image2D NormalizationWindow::denormalize(const Image2D& img) const {
  Image2D out = img;
  for (double& v : out.data) v = denormalize(v);
  return out;
}

void NormalizationWindow::validate() const {
  require(std::isfinite(low_hu) && std::isfinite(high_hu) && high_hu > low_hu,
          "normalization window must satisfy low < high");
}

void TrainingPair::validate(double background) const {
  x0.validate();
  y.validate();
  require(x0.same_grid(y), "training pair: x0 and y must share shape and spacing");
  if (bone_mask) require(bone_mask->size == x0.size, "training pair: mask shape differs from the images");
  if (source != PairSource::bone) return;
  require(bone_mask.has_value(), "bone pair without a mask");
  for (std::size_t i = 0; i < x0.data.size(); ++i)
    if (!bone_mask->data[i]) require(x0.data[i] == background && y.data[i] == background,
                                     "bone pair: pixel outside the mask is not background");
}

TrainingPair extract_bone_pair(const Image2D& hr, const Image2D& lr_upsampled, const BoneMask& mask,
                               double background_hu) {
  require(hr.same_grid(lr_upsampled), "extract_bone_pair: HR and upsampled LR grids differ");
  require(mask.mask.size == hr.size, "extract_bone_pair: mask shape differs from the images");
  TrainingPair p{hr, lr_upsampled, PairSource::bone, mask.mask};
  for (std::size_t i = 0; i < hr.data.size(); ++i)
    if (!mask.mask.data[i]) p.x0.data[i] = p.y.data[i] = background_hu;
  return p;
}

void HybridDatasetConfig::validate(int image_size) const {
  require(sim_fraction >= 0.0 && bone_fraction >= 0.0, "batch fractions must be non-negative");
  require(std::abs(sim_fraction + bone_fraction - 1.0) <= 1e-9, "batch fractions must sum to 1");
  require(patch_size >= 1 && patch_size <= image_size, "patch_size must lie in [1, image size]");
  require(min_bone_fraction >= 0.0 && min_bone_fraction <= 1.0, "min_bone_fraction must lie in [0, 1]");
  require(bone_max_hole_mm2 >= 0.0, "bone_max_hole_mm2 must be >= 0 (0 fills every hole)");
  window.validate();
}

std::pair<int, int> HybridDatasetConfig::composition(int batch_size) const {
  require(batch_size >= 1, "batch_size must be positive");
  const double s = sim_fraction * batch_size;
  const double rounded = std::round(s);
  require(std::abs(s - rounded) <= 1e-6, "batch fractions do not split batch_size " + std::to_string(batch_size) +
                                             " into whole patches");
  return {static_cast<int>(rounded), batch_size - static_cast<int>(rounded)};
}

void to_json(json& j, const NormalizationWindow& w) { j = {{"low_hu", w.low_hu}, {"high_hu", w.high_hu}}; }
void from_json(const json& j, NormalizationWindow& w) {
  w.low_hu = j.value("low_hu", w.low_hu);
  w.high_hu = j.value("high_hu", w.high_hu);
}

void to_json(json& j, const HybridDatasetConfig& c) {
  j = {{"sim_fraction", c.sim_fraction},       {"bone_fraction", c.bone_fraction},
       {"patch_size", c.patch_size},           {"window", c.window},
       {"rng_seed", c.rng_seed},               {"min_bone_fraction", c.min_bone_fraction},
       {"bone_threshold_hu", c.bone_threshold_hu}, {"bone_max_hole_mm2", c.bone_max_hole_mm2}};
}

void from_json(const json& j, HybridDatasetConfig& c) {
  c.sim_fraction = j.value("sim_fraction", c.sim_fraction);
  c.bone_fraction = j.value("bone_fraction", c.bone_fraction);
  c.patch_size = j.value("patch_size", c.patch_size);
  if (j.contains("window")) c.window = j.at("window").get<NormalizationWindow>();
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.min_bone_fraction = j.value("min_bone_fraction", c.min_bone_fraction);
  c.bone_threshold_hu = j.value("bone_threshold_hu", c.bone_threshold_hu);
  c.bone_max_hole_mm2 = j.value("bone_max_hole_mm2", c.bone_max_hole_mm2);
}

// ---------------------------------------------------------------------------

void AcquisitionConfig::validate() const {
  geometry.validate();
  require(bin_factor >= 2, "bin_factor must be >= 2");
  require(geometry.n_detectors % bin_factor == 0, "detector count must be divisible by bin_factor");
  require(n0_hr >= 10.0 && n0_lr >= 10.0, "incident photon counts must be >= 10");
  require(hr_size >= bin_factor && hr_size % bin_factor == 0, "hr_size must be divisible by bin_factor");
  require(hr_spacing > 0.0, "hr_spacing must be positive");
}

void to_json(json& j, const AcquisitionConfig& a) {
  j = {{"geometry", a.geometry},
       {"bin_factor", a.bin_factor},
       {"n0_hr", a.n0_hr},
       {"n0_lr", a.n0_lr},
       {"kernel", a.kernel == ctsim::FilterKernel::bone ? "bone" : "ramp"},
       {"hr_size", a.hr_size},
       {"hr_spacing", a.hr_spacing}};
}

void from_json(const json& j, AcquisitionConfig& a) {
  if (j.contains("geometry")) a.geometry = j.at("geometry").get<ctsim::ScanGeometry>();
  a.bin_factor = j.value("bin_factor", a.bin_factor);
  a.n0_hr = j.value("n0_hr", a.n0_hr);
  a.n0_lr = j.value("n0_lr", a.n0_lr);
  if (j.contains("kernel")) {
    const std::string k = j.at("kernel").get<std::string>();
    require(k == "bone" || k == "ramp", "kernel must be 'bone' or 'ramp'");
    a.kernel = k == "bone" ? ctsim::FilterKernel::bone : ctsim::FilterKernel::ramp;
  }
  a.hr_size = j.value("hr_size", a.hr_size);
  a.hr_spacing = j.value("hr_spacing", a.hr_spacing);
}

CleanScan project_clean(const Image2D& phantom_hu, const AcquisitionConfig& acq) {
  acq.validate();
  CleanScan out;
  out.hr = ctsim::forward_project(ctsim::hu_to_mu(phantom_hu), acq.geometry);
  out.hr.photons_in = acq.n0_hr;
  out.lr = ctsim::rebin_sinogram(out.hr, acq.bin_factor);
  out.lr.photons_in = acq.n0_lr;
  return out;
}

ScanResult acquire(const CleanScan& clean, const AcquisitionConfig& acq, double k_hr, double k_lr, Rng& rng) {
  ctsim::NoiseInjectionParams params;
  params.k_hr = k_hr;
  params.k_lr = k_lr;
  params.n0_hr = acq.n0_hr;
  params.n0_lr = acq.n0_lr;
  params.bin_factor = acq.bin_factor;
  ctsim::NoisyPair noisy = ctsim::inject_correlated_noise(clean.hr, clean.lr, params, rng);
  ScanResult out{clean, std::move(noisy.hr), std::move(noisy.lr), {}, {}};
  out.recon_hr = ctsim::reconstruct_fbp(out.noisy_hr, acq.kernel, acq.hr_size, acq.hr_spacing);
  out.recon_lr = ctsim::reconstruct_fbp(out.noisy_lr, acq.kernel, acq.lr_size(), acq.lr_spacing());
  return out;
}

double disk_std(const Image2D& img, const phantoms::DiskMm& roi) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < img.size; ++r)
    for (int c = 0; c < img.size; ++c) {
      if (std::hypot(img.x_of(c) - roi.cx, img.y_of(r) - roi.cy) > roi.radius) continue;
      const double v = img.at(r, c);
      sum += v;
      sq += v * v;
      ++n;
    }
  require(n >= 2, "disk ROI covers fewer than two pixels");
  const double mean = sum / n;
  return std::sqrt(std::max(0.0, sq / n - mean * mean));
}

// ---------------------------------------------------------------------------

double chain_roi_std(const std::vector<CalibrationSlice>& slices, const AcquisitionConfig& acq, bool hr_chain,
                     double k, std::uint64_t seed, int draws) {
  require(!slices.empty(), "calibration needs at least one slice");
  require(draws >= 1, "calibration needs at least one noise draw");
  double total = 0.0;
  for (int d = 0; d < draws; ++d)
    for (std::size_t i = 0; i < slices.size(); ++i) {
      // Draw 0 keeps the single-draw seeds.
      Rng rng(d == 0 ? derive_seed(seed, i) : derive_seed(derive_seed(seed, 1000003 + d), i));
      // Same draws as acquire(), but only the chain being calibrated is reconstructed.
      ctsim::NoiseInjectionParams params;
      params.k_hr = hr_chain ? k : 0.0;
      params.k_lr = hr_chain ? 0.0 : k;
      params.n0_hr = acq.n0_hr;
      params.n0_lr = acq.n0_lr;
      params.bin_factor = acq.bin_factor;
      const ctsim::NoisyPair noisy = ctsim::inject_correlated_noise(slices[i].scan.hr, slices[i].scan.lr, params, rng);
      total += hr_chain
                   ? disk_std(ctsim::reconstruct_fbp(noisy.hr, acq.kernel, acq.hr_size, acq.hr_spacing),
                              slices[i].uniform_roi)
                   : disk_std(sinc_upsample(ctsim::reconstruct_fbp(noisy.lr, acq.kernel, acq.lr_size(), acq.lr_spacing()),
                                            acq.bin_factor),
                              slices[i].uniform_roi);
    }
  return total / (static_cast<double>(slices.size()) * draws);
}

namespace {

struct Bisection {
  double k = 0.0;
  double achieved = 0.0;
  int iterations = 0;
};

Bisection bisect(const std::vector<CalibrationSlice>& slices, const AcquisitionConfig& acq, bool hr_chain,
                 double target, const CalibrationOptions& opt) {
  const char* chain = hr_chain ? "HR" : "LR";
  const double floor = chain_roi_std(slices, acq, hr_chain, 0.0, opt.seed, opt.draws);
  if (target <= floor) {
    if (target > 0.0)
      log::warn(std::string("calibration: target std is at or below the noiseless ") + chain + " floor (" +
                std::to_string(floor) + " HU); using k = 0");
    return {0.0, floor, 0};
  }
  const double top = chain_roi_std(slices, acq, hr_chain, opt.k_max, opt.seed, opt.draws);
  if (top < target)
    throw ValidationError(std::string("calibration: search range [0, ") + std::to_string(opt.k_max) +
                          "] does not bracket the target for the " + chain + " chain (max std " +
                          std::to_string(top) + " HU)");
  double lo = 0.0, hi = opt.k_max;
  Bisection best{hi, top, 0};
  for (int it = 1; it <= opt.max_iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double s = chain_roi_std(slices, acq, hr_chain, mid, opt.seed, opt.draws);
    best = {mid, s, it};
    if (std::abs(s - target) <= opt.rel_tol * target) return best;
    (s < target ? lo : hi) = mid;
  }
  log::warn(std::string("calibration: ") + chain + " bisection stopped at the iteration limit");
  return best;
}

}  // namespace

CalibrationResult calibrate_noise_levels(const std::vector<CalibrationSlice>& slices, const AcquisitionConfig& acq,
                                         double target_std_hu, const CalibrationOptions& options) {
  require(std::isfinite(target_std_hu) && target_std_hu >= 0.0, "target std must be finite and non-negative");
  require(options.k_max > 0.0 && options.rel_tol > 0.0 && options.draws >= 1, "calibration options must be positive");
  acq.validate();
  const Bisection hr = bisect(slices, acq, true, target_std_hu, options);
  const Bisection lr = bisect(slices, acq, false, target_std_hu, options);
  return {hr.k, lr.k, hr.achieved, lr.achieved, hr.iterations + lr.iterations};
}

// ---------------------------------------------------------------------------

Slice make_slice(const phantoms::HeadPhantom& phantom, std::uint64_t seed, const CleanScan& clean,
                 const AcquisitionConfig& acq, double k_hr, double k_lr, Rng& rng) {
  ScanResult scan = acquire(clean, acq, k_hr, k_lr, rng);
  Slice s;
  s.seed = seed;
  s.style = phantom.spec.textures.empty() ? phantoms::HeadStyle::smooth : phantoms::HeadStyle::trabecular;
  s.hr = std::move(scan.recon_hr);
  s.lr = std::move(scan.recon_lr);
  s.lr_up = sinc_upsample(s.lr, acq.bin_factor);
  s.uniform_roi = phantom.uniform_region;
  s.bone_roi = phantom.bone_region;
  return s;
}

TrainingPair sim_pair(const Slice& s) {
  TrainingPair p{s.hr, s.lr_up, PairSource::sim, std::nullopt};
  p.provenance = {{"phantom_seed", s.seed}};
  return p;
}

std::optional<TrainingPair> bone_pair(const Slice& s, double threshold_hu, double max_hole_mm2) {
  const BoneMask mask = segment_bone(s.hr, threshold_hu, max_hole_mm2);
  if (mask.mask.empty()) {
    log::warn("bone pair skipped: empty mask for phantom seed " + std::to_string(s.seed));
    return std::nullopt;
  }
  TrainingPair p = extract_bone_pair(s.hr, s.lr_up, mask);
  p.provenance = {{"phantom_seed", s.seed}, {"threshold_hu", threshold_hu}};
  return p;
}

std::string Corpus::hash() const {
  Fnv1a h;
  auto add = [&](const TrainingPair& p) {
    h.update(to_string(p.source));
    h.update_values<double>(p.x0.data);
    h.update_values<double>(p.y.data);
    if (p.bone_mask) h.update_values<std::uint8_t>(p.bone_mask->data);
  };
  for (const auto& p : sim) add(p);
  for (const auto& p : bone) add(p);
  h.update(json(window).dump());
  return h.hex();
}

Corpus build_hybrid_corpus(const std::vector<TrainingPair>& sim_pairs, const std::vector<TrainingPair>& bone_pairs,
                           const HybridDatasetConfig& cfg) {
  require(!sim_pairs.empty() || !bone_pairs.empty(), "build_hybrid_corpus: corpus would be empty");
  require(cfg.sim_fraction == 0.0 || !sim_pairs.empty(), "build_hybrid_corpus: no simulated pairs for a nonzero sim fraction");
  require(cfg.bone_fraction == 0.0 || !bone_pairs.empty(), "build_hybrid_corpus: no bone pairs for a nonzero bone fraction");
  Corpus c;
  c.window = cfg.window;
  const int size = !sim_pairs.empty() ? sim_pairs[0].x0.size : bone_pairs[0].x0.size;
  cfg.validate(size);
  auto normalize = [&](const TrainingPair& p, PairSource expected) {
    require(p.source == expected, "build_hybrid_corpus: pair listed under the wrong source");
    p.validate(kBackgroundHu);
    require(p.x0.size == size, "build_hybrid_corpus: all pairs must share one image size");
    TrainingPair n = p;
    n.x0 = cfg.window.normalize(p.x0);
    n.y = cfg.window.normalize(p.y);
    // Rounded to float32 up front so the persisted corpus is bit-identical to the in-memory one.
    for (auto* img : {&n.x0, &n.y})
      for (double& v : img->data) v = static_cast<float>(v);
    return n;
  };
  for (const auto& p : sim_pairs) c.sim.push_back(normalize(p, PairSource::sim));
  for (const auto& p : bone_pairs) c.bone.push_back(normalize(p, PairSource::bone));
  return c;
}

std::vector<std::uint32_t> rle_encode(const Mask2D& mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t len = 0;
  for (std::uint8_t v : mask.data) {
    const std::uint8_t b = v ? 1 : 0;
    if (b != current) {
      runs.push_back(len);
      current = b;
      len = 0;
    }
    ++len;
  }
  runs.push_back(len);
  return runs;
}

Mask2D rle_decode(const std::vector<std::uint32_t>& runs, int size) {
  Mask2D m(size);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t len : runs) {
    require(pos + len <= m.data.size(), "mask run-length encoding overruns the image");
    std::fill_n(m.data.begin() + static_cast<std::ptrdiff_t>(pos), len, value);
    pos += len;
    value ^= 1;
  }
  require(pos == m.data.size(), "mask run-length encoding does not cover the image");
  return m;
}

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir / "records");
  json records = json::array();
  int id = 0;
  auto write = [&](const TrainingPair& p) {
    std::ostringstream name;
    name << std::setw(5) << std::setfill('0') << id++;
    const std::string stem = name.str();
    json meta = {{"source", to_string(p.source)},
                 {"split", p.split},
                 {"window", corpus.window},
                 {"normalized", true},
                 {"provenance", p.provenance}};
    if (p.bone_mask) meta["mask_rle"] = rle_encode(*p.bone_mask);
    io::save_image(dir / "records" / (stem + "_x0"), p.x0, {{"role", "x0"}});
    io::save_image(dir / "records" / (stem + "_y"), p.y, {{"role", "y"}});
    io::write_json(dir / "records" / (stem + ".json"), meta);
    records.push_back({{"id", stem}, {"source", to_string(p.source)}, {"split", p.split}});
  };
  for (const auto& p : corpus.sim) write(p);
  for (const auto& p : corpus.bone) write(p);
  io::write_json(dir / "manifest.json",
                 {{"kind", "corpus"}, {"window", corpus.window}, {"hash", corpus.hash()}, {"records", records}});
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const json manifest = io::read_json(dir / "manifest.json");
  require(manifest.value("kind", "") == "corpus", "not a corpus manifest: " + (dir / "manifest.json").string());
  Corpus c;
  c.window = manifest.at("window").get<NormalizationWindow>();
  for (const json& rec : manifest.at("records")) {
    const std::string stem = rec.at("id").get<std::string>();
    const json meta = io::read_json(dir / "records" / (stem + ".json"));
    TrainingPair p;
    p.x0 = io::load_image(dir / "records" / (stem + "_x0"));
    p.y = io::load_image(dir / "records" / (stem + "_y"));
    p.source = parse_source(meta.at("source").get<std::string>());
    p.split = meta.value("split", "train");
    p.provenance = meta.value("provenance", json::object());
    if (meta.contains("mask_rle")) p.bone_mask = rle_decode(meta.at("mask_rle").get<std::vector<std::uint32_t>>(), p.x0.size);
    (p.source == PairSource::sim ? c.sim : c.bone).push_back(std::move(p));
  }
  const std::string expected = manifest.value("hash", "");
  if (!expected.empty() && expected != c.hash())
    throw RuntimeError("corpus hash mismatch in " + dir.string() + " (float32 storage changed the data?)");
  return c;
}

// ---------------------------------------------------------------------------

namespace {

void copy_patch(const Image2D& img, int row0, int col0, int size, float* dst) {
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) dst[r * size + c] = static_cast<float>(img.at(row0 + r, col0 + c));
}

double mask_fraction(const Mask2D& m, int row0, int col0, int size) {
  std::size_t n = 0;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) n += m.at(row0 + r, col0 + c) ? 1 : 0;
  return static_cast<double>(n) / (static_cast<double>(size) * size);
}

}  // namespace

PatchBatch sample_patch_batch(const Corpus& corpus, int batch_size, const HybridDatasetConfig& cfg, Rng& rng) {
  const auto [n_sim, n_bone] = cfg.composition(batch_size);
  require(n_sim == 0 || !corpus.sim.empty(), "sample_patch_batch: no simulated pairs");
  require(n_bone == 0 || !corpus.bone.empty(), "sample_patch_batch: no bone pairs");
  const int image = !corpus.sim.empty() ? corpus.sim[0].x0.size : corpus.bone[0].x0.size;
  cfg.validate(image);
  const int ps = cfg.patch_size;
  const std::size_t stride = static_cast<std::size_t>(ps) * ps;

  PatchBatch b;
  b.batch = batch_size;
  b.patch_size = ps;
  b.x0.resize(stride * batch_size);
  b.y.resize(stride * batch_size);
  std::uniform_int_distribution<int> origin(0, image - ps);

  for (int slot = 0; slot < batch_size; ++slot) {
    const bool bone = slot >= n_sim;
    const auto& pool = bone ? corpus.bone : corpus.sim;
    std::uniform_int_distribution<int> pick(0, static_cast<int>(pool.size()) - 1);
    PatchOrigin o{bone ? PairSource::bone : PairSource::sim, pick(rng), origin(rng), origin(rng)};
    if (bone) {
      bool found = false;
      for (int slice_try = 0; slice_try < 100 && !found; ++slice_try) {
        if (slice_try > 0) o.pair = pick(rng);
        const Mask2D& m = *pool[o.pair].bone_mask;
        for (int draw = 0; draw < 100; ++draw) {
          if (draw > 0 || slice_try > 0) {
            o.row = origin(rng);
            o.col = origin(rng);
          }
          if (mask_fraction(m, o.row, o.col, ps) >= cfg.min_bone_fraction) {
            found = true;
            break;
          }
        }
      }
      if (!found) throw RuntimeError("sample_patch_batch: no bone patch reaches the minimum in-mask fraction");
    }
    const TrainingPair& p = pool[o.pair];
    copy_patch(p.x0, o.row, o.col, ps, b.x0.data() + slot * stride);
    copy_patch(p.y, o.row, o.col, ps, b.y.data() + slot * stride);
    b.origins.push_back(o);
  }
  return b;
}

}  // namespace ncsr::dataset
