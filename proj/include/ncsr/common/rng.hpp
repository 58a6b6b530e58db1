#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace ncsr {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; derives decorrelated child seeds from (seed, stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

void fill_normal(Rng& rng, std::span<double> out);
void fill_normal(Rng& rng, std::span<float> out);

}  // namespace ncsr
