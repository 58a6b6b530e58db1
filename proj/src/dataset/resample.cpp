#include "ncsr/dataset/resample.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "ncsr/common/error.hpp"
#include "ncsr/common/fft.hpp"

namespace ncsr::dataset {
namespace {

using cd = std::complex<double>;

// Signed frequency of DFT bin k for length n.
int signed_freq(int k, int n) { return k <= n / 2 ? k : k - n; }

}  // namespace

Image2D sinc_upsample(const Image2D& img, int factor) {
  require(factor >= 2, "sinc_upsample: factor must be an integer >= 2");
  img.validate();
  const int n = img.size;
  const int m = n * factor;

  std::vector<cd> spec(static_cast<std::size_t>(n) * n);
  for (std::size_t i = 0; i < spec.size(); ++i) spec[i] = img.data[i];
  ComplexFft2D(n).transform(spec, -1);

  // Per-axis placement of each input bin into the padded spectrum, including
  // the shift that moves sample j to input coordinate j / factor - (factor - 1) / (2 factor).
  struct Tap {
    int dst;
    cd weight;
  };
  const double delta = -(factor - 1.0) / (2.0 * factor);
  std::vector<std::vector<Tap>> taps(n);
  for (int k = 0; k < n; ++k) {
    auto phase = [&](int f) { return std::polar(1.0, 2.0 * std::numbers::pi * f * delta / n); };
    const int f = signed_freq(k, n);
    if (n % 2 == 0 && k == n / 2) {
      taps[k].push_back({n / 2, 0.5 * phase(n / 2)});
      taps[k].push_back({m - n / 2, 0.5 * phase(-n / 2)});
    } else {
      taps[k].push_back({f >= 0 ? f : m + f, phase(f)});
    }
  }

  std::vector<cd> padded(static_cast<std::size_t>(m) * m, cd(0.0, 0.0));
  for (int ky = 0; ky < n; ++ky)
    for (int kx = 0; kx < n; ++kx) {
      const cd v = spec[static_cast<std::size_t>(ky) * n + kx];
      for (const Tap& ty : taps[ky])
        for (const Tap& tx : taps[kx]) padded[static_cast<std::size_t>(ty.dst) * m + tx.dst] += v * ty.weight * tx.weight;
    }
  ComplexFft2D(m).transform(padded, +1);

  Image2D out(m, img.spacing / factor);
  const double scale = 1.0 / (static_cast<double>(n) * n);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = padded[i].real() * scale;
  return out;
}

}  // namespace ncsr::dataset
