#include "ncsr/common/rng.hpp"

namespace ncsr {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void fill_normal(Rng& rng, std::span<double> out) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : out) v = normal(rng);
}

void fill_normal(Rng& rng, std::span<float> out) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (float& v : out) v = static_cast<float>(normal(rng));
}

}  // namespace ncsr
