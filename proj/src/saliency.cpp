// SPDX-License-Identifier: Apache-2.0
#include "mmguide/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "mmguide/errors.hpp"
#include "mmguide/eval.hpp"
#include "mmguide/format.hpp"

namespace mmguide {

Raster saliency_raster(const BivariateGaussian &d,
                       const Eigen::Vector2d &g_prev) {
  if (!d.valid())
    throw InvalidArgument("saliency_raster: invalid distribution");
  const Eigen::Vector2d c = g_prev + d.mu;
  const double sx = d.sigma.x(), sy = d.sigma.y(), rho = d.rho;
  const double k = 1.0 - rho * rho;
  // Log-density up to a constant; shifted by its maximum before exp so that
  // far-away or very sharp distributions still normalize.
  Raster r(kImageHeight, kImageWidth);
  for (int i = 0; i < kImageHeight; ++i) {
    const double y = (i + 0.5) / kImageHeight - 0.5;
    const double zy = (y - c.y()) / sy;
    for (int j = 0; j < kImageWidth; ++j) {
      const double x = (j + 0.5) / kImageWidth - 0.5;
      const double zx = (x - c.x()) / sx;
      r(i, j) = -(zx * zx - 2.0 * rho * zx * zy + zy * zy) / (2.0 * k);
    }
  }
  r.array() -= r.maxCoeff();
  r = r.array().exp().matrix();
  r /= r.sum();
  return r;
}

void write_pgm(std::ostream &os, const Raster &r) {
  os << "P5\n" << r.cols() << ' ' << r.rows() << "\n255\n";
  const double peak = r.maxCoeff();
  for (Eigen::Index i = 0; i < r.rows(); ++i)
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
      const double v = peak > 0.0 ? r(i, j) / peak : 0.0;
      os.put(static_cast<char>(
          static_cast<unsigned char>(std::clamp(std::lround(v * 255.0), 0L, 255L))));
    }
}

void write_raster_csv(std::ostream &os, const Raster &r) {
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
      if (j)
        os << ',';
      os << format_double(r(i, j));
    }
    os << '\n';
  }
}

} // namespace mmguide
