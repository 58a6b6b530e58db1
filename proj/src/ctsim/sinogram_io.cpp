#include "ncsr/ctsim/sinogram_io.hpp"

#include "ncsr/common/error.hpp"
#include "ncsr/common/raster_io.hpp"

namespace ncsr::io {

void save_sinogram(const std::filesystem::path& stem, const ctsim::Sinogram& s) {
  Raster r;
  r.rows = s.geometry.n_angles;
  r.cols = s.geometry.n_detectors;
  r.samples.assign(s.p.begin(), s.p.end());
  r.meta = {{"kind", "sinogram"}, {"units", "post-log line integral"}, {"geometry", s.geometry},
            {"photons_in", s.photons_in}};
  write_raster(stem, r);
}

ctsim::Sinogram load_sinogram(const std::filesystem::path& stem) {
  Raster r = read_raster(stem);
  require(r.meta.value("kind", "") == "sinogram", stem.string() + ": not a sinogram");
  ctsim::Sinogram s(r.meta.at("geometry").get<ctsim::ScanGeometry>(), r.meta.at("photons_in").get<double>());
  require(r.rows == s.geometry.n_angles && r.cols == s.geometry.n_detectors, stem.string() + ": shape/geometry mismatch");
  s.p.assign(r.samples.begin(), r.samples.end());
  return s;
}

}  // namespace ncsr::io
