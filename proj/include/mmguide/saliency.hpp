// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <iosfwd>

#include "mmguide/gaussian.hpp"

namespace mmguide {

/// Row-major image grid: rows span the height (y), columns the width (x).
using Raster =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Density of the next gaze point g_prev + s, s ~ d, at the pixel centers of
/// a 224 x 288 grid, normalized to sum to one.
Raster saliency_raster(const BivariateGaussian &d,
                       const Eigen::Vector2d &g_prev);

/// Binary greyscale (P5), scaled so the maximum maps to 255.
void write_pgm(std::ostream &os, const Raster &r);
/// One line per row, comma separated.
void write_raster_csv(std::ostream &os, const Raster &r);

} // namespace mmguide
