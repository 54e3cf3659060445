#pragma once

// Factorized 3D sinusoidal position table for the (t, y, x) token lattice.

#include <cmath>
#include <stdexcept>

#include "reftok/nn.hpp"
#include "reftok/patchgrid.hpp"

namespace reftok {

// Classic transformer sinusoid: column pair (2i, 2i+1) holds
// sin(p * w_i), cos(p * w_i) with w_i = 10000^(-2i/dim).
inline MatF sinusoid_1d(int n_pos, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw std::logic_error("sinusoid_1d: dim must be positive even");
    MatF table(n_pos, dim);
    for (int p = 0; p < n_pos; ++p) {
        for (int i = 0; i < dim / 2; ++i) {
            double w = std::pow(10000.0, -2.0 * i / dim);
            table(p, 2 * i) = static_cast<float>(std::sin(p * w));
            table(p, 2 * i + 1) = static_cast<float>(std::cos(p * w));
        }
    }
    return table;
}

// Split an embedding width across the three axes: t and y each get
// 2*floor(D/6) columns, x takes the remainder. All shares stay even.
inline void position_axis_dims(int dim, int& d_t, int& d_y, int& d_x) {
    if (dim < 6 || dim % 2 != 0) throw std::logic_error("position table: dim must be even and >= 6");
    d_t = 2 * (dim / 6);
    d_y = d_t;
    d_x = dim - d_t - d_y;
}

// One row per lattice site, sites ordered row-major over (t, y, x). Each row
// concatenates the per-axis 1D sinusoids, so a site's row depends only on its
// own coordinates — building a larger table and slicing gives the same rows.
inline MatF build_3d_positions(const GridShape& shape, int dim) {
    int d_t = 0, d_y = 0, d_x = 0;
    position_axis_dims(dim, d_t, d_y, d_x);
    MatF pt = sinusoid_1d(shape.tau, d_t);
    MatF py = sinusoid_1d(shape.eta, d_y);
    MatF px = sinusoid_1d(shape.omega, d_x);
    MatF table(shape.sites(), dim);
    Eigen::Index row = 0;
    for (int t = 0; t < shape.tau; ++t)
        for (int y = 0; y < shape.eta; ++y)
            for (int x = 0; x < shape.omega; ++x) {
                table.block(row, 0, 1, d_t) = pt.row(t);
                table.block(row, d_t, 1, d_y) = py.row(y);
                table.block(row, d_t + d_y, 1, d_x) = px.row(x);
                ++row;
            }
    return table;
}

}  // namespace reftok
