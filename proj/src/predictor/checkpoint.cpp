#include "ncsr/predictor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ncsr/common/error.hpp"
#include "ncsr/predictor/predictors.hpp"

namespace ncsr::predictor {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'N', 'C', 'S', 'R', 'C', 'K', 'P', 'T'};
static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  require(ckpt.kind == "unet" || ckpt.kind == "oracle_delta", "checkpoint kind must be 'unet' or 'oracle_delta'");
  json header = {{"format", "ncsr-checkpoint"},
                 {"version", 1},
                 {"kind", ckpt.kind},
                 {"schedule", ckpt.schedule},
                 {"corpus_hash", ckpt.corpus_hash},
                 {"info", ckpt.info}};
  if (ckpt.kind == "unet") header["unet"] = ckpt.unet;
  else header["oracle_c"] = ckpt.oracle_c;
  json blobs = json::array();
  for (const auto& [name, data] : ckpt.blobs) blobs.push_back({{"name", name}, {"count", data.size()}});
  header["blobs"] = blobs;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write checkpoint " + tmp.string());
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, data] : ckpt.blobs)
      out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw RuntimeError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw RuntimeError("not a checkpoint: " + path.string());
  require(len < (1ULL << 32), "checkpoint header is implausibly large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw RuntimeError("truncated checkpoint header: " + path.string());
  const json header = json::parse(text);

  Checkpoint c;
  c.kind = header.at("kind").get<std::string>();
  c.schedule = header.at("schedule").get<diffusion::DiffusionSchedule>();
  c.corpus_hash = header.value("corpus_hash", "");
  c.info = header.value("info", json::object());
  if (c.kind == "unet") c.unet = header.at("unet").get<UNetConfig>();
  else if (c.kind == "oracle_delta") c.oracle_c = header.at("oracle_c").get<double>();
  else throw ValidationError("unknown checkpoint kind '" + c.kind + "'");
  for (const json& b : header.at("blobs")) {
    std::vector<float> data(b.at("count").get<std::size_t>());
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw RuntimeError("truncated checkpoint blob '" + b.at("name").get<std::string>() + "'");
    c.blobs[b.at("name").get<std::string>()] = std::move(data);
  }
  return c;
}

std::shared_ptr<UNet> load_unet(const Checkpoint& ckpt) {
  require(ckpt.kind == "unet", "checkpoint does not hold a U-Net");
  auto net = std::make_shared<UNet>(ckpt.unet);
  const auto it = ckpt.blobs.find("params");
  require(it != ckpt.blobs.end(), "checkpoint has no 'params' blob");
  require(it->second.size() == net->parameter_count(), "checkpoint parameter count does not match its U-Net config");
  net->params().values() = it->second;
  return net;
}

std::unique_ptr<diffusion::NoisePredictor> make_predictor(const Checkpoint& ckpt) {
  if (ckpt.kind == "oracle_delta") return oracle_delta_predictor(ckpt.oracle_c, ckpt.schedule);
  return std::make_unique<UNetPredictor>(load_unet(ckpt));
}

}  // namespace ncsr::predictor
