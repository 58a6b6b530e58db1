#pragma once

#include <filesystem>

#include "ncsr/ctsim/ctsim.hpp"

namespace ncsr::io {

/// Same raw-float32 + sidecar container as images, with a "geometry" block.
void save_sinogram(const std::filesystem::path& stem, const ctsim::Sinogram& s);
ctsim::Sinogram load_sinogram(const std::filesystem::path& stem);

}  // namespace ncsr::io
