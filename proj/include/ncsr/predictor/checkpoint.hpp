#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncsr/diffusion/diffusion.hpp"
#include "ncsr/diffusion/schedule.hpp"
#include "ncsr/predictor/unet.hpp"

namespace ncsr::predictor {

/// Container layout: 8-byte magic "NCSRCKPT", uint64 little-endian header length,
/// UTF-8 JSON header, then the float32 little-endian blobs listed in the header
/// (in order). "params" is the flat U-Net parameter vector; optimizer moments may follow.
struct Checkpoint {
  std::string kind = "unet";  // "unet" | "oracle_delta"
  UNetConfig unet;
  double oracle_c = 0.0;
  diffusion::DiffusionSchedule schedule;
  std::string corpus_hash;
  nlohmann::json info = nlohmann::json::object();
  std::map<std::string, std::vector<float>> blobs;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the predictor the checkpoint describes.
std::unique_ptr<diffusion::NoisePredictor> make_predictor(const Checkpoint& ckpt);
/// U-Net with the checkpoint's parameters (kind must be "unet").
std::shared_ptr<UNet> load_unet(const Checkpoint& ckpt);

}  // namespace ncsr::predictor
