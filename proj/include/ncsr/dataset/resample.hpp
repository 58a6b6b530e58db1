#pragma once

#include "ncsr/common/image.hpp"

namespace ncsr::dataset {

/// Periodic band-limited (zero-padded DFT) interpolation by an integer factor.
/// Output pixel centers land on the finer grid covering the same field of view,
/// so the output spacing is spacing / factor and the grids share their outer edges.
/// The Nyquist bin of even-sized inputs is split evenly between +N/2 and -N/2.
Image2D sinc_upsample(const Image2D& img, int factor = 2);

}  // namespace ncsr::dataset
