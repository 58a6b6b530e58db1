#include "ncsr/pipeline/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

#include "ncsr/common/error.hpp"
#include "ncsr/common/log.hpp"
#include "ncsr/common/rng.hpp"
#include "ncsr/predictor/nn.hpp"

namespace ncsr::pipeline {
namespace fs = std::filesystem;

namespace {

std::string describe_batch(const dataset::PatchBatch& b) {
  std::string s;
  for (std::size_t i = 0; i < b.origins.size(); ++i) {
    const auto& o = b.origins[i];
    if (i) s += ", ";
    s += dataset::to_string(o.source) + "#" + std::to_string(o.pair) + "@(" + std::to_string(o.row) + "," +
         std::to_string(o.col) + ")";
  }
  return s;
}

void write_loss_log(const fs::path& path, const std::vector<double>& losses) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw RuntimeError("cannot write " + tmp.string());
    out << "iteration,loss\n" << std::setprecision(9);
    for (std::size_t i = 0; i < losses.size(); ++i) out << i + 1 << ',' << losses[i] << '\n';
  }
  fs::rename(tmp, path);
}

predictor::Checkpoint make_checkpoint(const TrainConfig& cfg, const dataset::HybridDatasetConfig& mix,
                                      const dataset::Corpus& corpus, const predictor::UNet& net,
                                      const diffusion::DiffusionSchedule& schedule, const nn::Adam& adam,
                                      const std::vector<double>& losses) {
  predictor::Checkpoint ck;
  ck.kind = "unet";
  ck.unet = net.config();
  ck.schedule = schedule;
  ck.corpus_hash = corpus.hash();
  ck.info = {{"iteration", static_cast<long long>(losses.size())},
             {"adam_steps", adam.steps()},
             {"train", cfg},
             {"mixing", mix},
             {"losses", losses}};
  ck.blobs["params"] = net.params().values();
  ck.blobs["adam_m"] = adam.first_moment();
  ck.blobs["adam_v"] = adam.second_moment();
  return ck;
}

}  // namespace

void TrainConfig::validate() const {
  require(iterations >= 0, "training iterations must be >= 0");
  require(batch_size > 0, "batch_size must be positive");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate must be finite and >= 0");
  require(checkpoint_every > 0, "checkpoint_every must be positive");
  require(warmup_iterations >= 0, "warmup_iterations must be >= 0");
  require(min_learning_rate >= 0.0 && min_learning_rate <= learning_rate,
          "min_learning_rate must lie in [0, learning_rate]");
}

double TrainConfig::learning_rate_at(long long it) const {
  if (lr_schedule == LrSchedule::constant) return learning_rate;
  if (it <= warmup_iterations) return learning_rate * static_cast<double>(it) / static_cast<double>(warmup_iterations);
  const long long span = iterations - warmup_iterations;
  if (span <= 1) return learning_rate;
  const double u = static_cast<double>(it - warmup_iterations - 1) / static_cast<double>(span - 1);
  return min_learning_rate + 0.5 * (learning_rate - min_learning_rate) * (1.0 + std::cos(std::numbers::pi * u));
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"lr_schedule", c.lr_schedule == LrSchedule::cosine ? "cosine" : "constant"},
       {"warmup_iterations", c.warmup_iterations},
       {"min_learning_rate", c.min_learning_rate},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("lr_schedule")) {
    const std::string k = j.at("lr_schedule").get<std::string>();
    require(k == "constant" || k == "cosine", "lr_schedule must be 'constant' or 'cosine'");
    c.lr_schedule = k == "cosine" ? LrSchedule::cosine : LrSchedule::constant;
  }
  c.warmup_iterations = j.value("warmup_iterations", c.warmup_iterations);
  c.min_learning_rate = j.value("min_learning_rate", c.min_learning_rate);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.validate();
}

double window_mean(const std::vector<double>& losses, std::size_t from, std::size_t to) {
  require(from < to && to <= losses.size(), "window_mean: bad range");
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += losses[i];
  return s / static_cast<double>(to - from);
}

TrainOutcome train(const TrainConfig& cfg, const dataset::HybridDatasetConfig& mix, const dataset::Corpus& corpus,
                   predictor::UNet& net, const diffusion::DiffusionSchedule& schedule,
                   const std::optional<fs::path>& out_dir, bool resume) {
  cfg.validate();
  schedule.validate();
  mix.composition(cfg.batch_size);
  const int P = mix.patch_size;
  require(P % net.config().size_multiple() == 0,
          "patch size " + std::to_string(P) + " is not a multiple of " + std::to_string(net.config().size_multiple()));

  nn::Adam adam(net.parameter_count(), cfg.learning_rate);
  TrainOutcome out;
  if (out_dir) fs::create_directories(*out_dir);

  if (resume && out_dir && fs::exists(*out_dir / "latest.ckpt")) {
    const predictor::Checkpoint ck = predictor::load_checkpoint(*out_dir / "latest.ckpt");
    require(ck.corpus_hash == corpus.hash(), "resume: checkpoint was trained on a different corpus");
    require(nlohmann::json(ck.unet) == nlohmann::json(net.config()), "resume: model configuration differs");
    require(ck.schedule.beta == schedule.beta, "resume: diffusion schedule differs");
    // Only the iteration count may change between runs, and only when it does not shape the learning rate.
    nlohmann::json saved = ck.info.at("train"), now = cfg;
    if (cfg.lr_schedule == LrSchedule::constant) {
      saved.erase("iterations");
      now.erase("iterations");
    }
    require(saved == now && ck.info.at("mixing") == nlohmann::json(mix), "resume: training configuration differs");
    net.params().values() = ck.blobs.at("params");
    adam.restore(ck.blobs.at("adam_m"), ck.blobs.at("adam_v"), ck.info.at("adam_steps").get<long long>());
    out.losses = ck.info.at("losses").get<std::vector<double>>();
    out.resumed_from = static_cast<long long>(out.losses.size());
    require(out.resumed_from <= cfg.iterations, "resume: checkpoint is past the configured iteration count");
    log::info("resuming training at iteration " + std::to_string(out.resumed_from + 1));
  }

  const int B = cfg.batch_size;
  const std::size_t per = static_cast<std::size_t>(P) * P;
  const std::size_t N = per * B;
  std::vector<float> eps(N);
  std::vector<int> t(B);
  nn::Tensor xt(1, B, P, P), y(1, B, P, P), d_out(1, B, P, P);

  for (long long it = out.resumed_from + 1; it <= cfg.iterations; ++it) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(it)));
    const dataset::PatchBatch batch = dataset::sample_patch_batch(corpus, B, mix, rng);
    std::uniform_int_distribution<int> step(1, schedule.T);
    for (int& ti : t) ti = step(rng);
    fill_normal(rng, eps);
    for (int b = 0; b < B; ++b) {
      const float a = static_cast<float>(std::sqrt(schedule.gamma[t[b]]));
      const float s = static_cast<float>(std::sqrt(1.0 - schedule.gamma[t[b]]));
      for (std::size_t i = b * per; i < (b + 1) * per; ++i) xt.v[i] = a * batch.x0[i] + s * eps[i];
    }
    y.v = batch.y;

    const nn::Tensor pred = net.forward(xt, y, t, true);
    double loss = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double d = double(pred.v[i]) - eps[i];
      loss += d * d;
      d_out.v[i] = static_cast<float>(2.0 * d / static_cast<double>(N));
    }
    loss /= static_cast<double>(N);
    if (!std::isfinite(loss))
      throw RuntimeError("non-finite training loss at iteration " + std::to_string(it) + "; batch: " +
                         describe_batch(batch));
    out.losses.push_back(loss);

    net.params().zero_grad();
    net.backward(d_out);
    adam.set_learning_rate(cfg.learning_rate_at(it));
    adam.step(net.params().values(), net.params().grads());

    if (out_dir && (it % cfg.checkpoint_every == 0 || it == cfg.iterations)) {
      predictor::save_checkpoint(*out_dir / "latest.ckpt",
                                 make_checkpoint(cfg, mix, corpus, net, schedule, adam, out.losses));
      write_loss_log(*out_dir / "loss.csv", out.losses);
    }
    if (it % 500 == 0) {
      const std::size_t n = out.losses.size();
      log::info("iteration " + std::to_string(it) + "/" + std::to_string(cfg.iterations) + ", mean loss (last 500) " +
                std::to_string(window_mean(out.losses, n - 500, n)));
    }
  }

  out.checkpoint = make_checkpoint(cfg, mix, corpus, net, schedule, adam, out.losses);
  if (out_dir) {
    predictor::save_checkpoint(*out_dir / "model.ckpt", out.checkpoint);
    write_loss_log(*out_dir / "loss.csv", out.losses);
  }
  return out;
}

}  // namespace ncsr::pipeline
