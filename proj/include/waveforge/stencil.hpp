#pragma once

// Second-order finite differences on space-time grids: centred in the
// interior, one-sided three-point at the edges. The adjoints are used to
// backpropagate through the wave-speed regularizer.

#include "waveforge/core.hpp"

namespace waveforge {

enum class Axis { time, space };

namespace detail {

// Weights of the one-sided edge stencil (-3, 4, -1) / 2h.
constexpr double kEdge0 = -1.5;
constexpr double kEdge1 = 2.0;
constexpr double kEdge2 = -0.5;

}  // namespace detail

inline Grid derivative(const Grid& f, Axis axis, double h) {
  const Eigen::Index nt = f.rows();
  const Eigen::Index nx = f.cols();
  Grid d(nt, nx);
  const double inv = 1.0 / h;
  if (axis == Axis::space) {
    require(nx >= 3, "spatial derivative needs at least 3 cells");
    for (Eigen::Index i = 0; i < nt; ++i) {
      d(i, 0) = (detail::kEdge0 * f(i, 0) + detail::kEdge1 * f(i, 1) + detail::kEdge2 * f(i, 2)) * inv;
      for (Eigen::Index j = 1; j + 1 < nx; ++j) d(i, j) = 0.5 * (f(i, j + 1) - f(i, j - 1)) * inv;
      d(i, nx - 1) = -(detail::kEdge0 * f(i, nx - 1) + detail::kEdge1 * f(i, nx - 2) +
                       detail::kEdge2 * f(i, nx - 3)) * inv;
    }
  } else {
    require(nt >= 3, "temporal derivative needs at least 3 levels");
    d.row(0) = (detail::kEdge0 * f.row(0) + detail::kEdge1 * f.row(1) + detail::kEdge2 * f.row(2)) * inv;
    for (Eigen::Index i = 1; i + 1 < nt; ++i) d.row(i) = 0.5 * (f.row(i + 1) - f.row(i - 1)) * inv;
    d.row(nt - 1) = -(detail::kEdge0 * f.row(nt - 1) + detail::kEdge1 * f.row(nt - 2) +
                      detail::kEdge2 * f.row(nt - 3)) * inv;
  }
  return d;
}

/// Transpose of `derivative`: maps a cotangent on the derivative grid back to
/// a cotangent on the field.
inline Grid derivative_adjoint(const Grid& g, Axis axis, double h) {
  const Eigen::Index nt = g.rows();
  const Eigen::Index nx = g.cols();
  Grid f = Grid::Zero(nt, nx);
  const double inv = 1.0 / h;
  if (axis == Axis::space) {
    for (Eigen::Index i = 0; i < nt; ++i) {
      f(i, 0) += detail::kEdge0 * g(i, 0) * inv;
      f(i, 1) += detail::kEdge1 * g(i, 0) * inv;
      f(i, 2) += detail::kEdge2 * g(i, 0) * inv;
      for (Eigen::Index j = 1; j + 1 < nx; ++j) {
        f(i, j + 1) += 0.5 * g(i, j) * inv;
        f(i, j - 1) -= 0.5 * g(i, j) * inv;
      }
      f(i, nx - 1) -= detail::kEdge0 * g(i, nx - 1) * inv;
      f(i, nx - 2) -= detail::kEdge1 * g(i, nx - 1) * inv;
      f(i, nx - 3) -= detail::kEdge2 * g(i, nx - 1) * inv;
    }
  } else {
    f.row(0) += detail::kEdge0 * g.row(0) * inv;
    f.row(1) += detail::kEdge1 * g.row(0) * inv;
    f.row(2) += detail::kEdge2 * g.row(0) * inv;
    for (Eigen::Index i = 1; i + 1 < nt; ++i) {
      f.row(i + 1) += 0.5 * g.row(i) * inv;
      f.row(i - 1) -= 0.5 * g.row(i) * inv;
    }
    f.row(nt - 1) -= detail::kEdge0 * g.row(nt - 1) * inv;
    f.row(nt - 2) -= detail::kEdge1 * g.row(nt - 1) * inv;
    f.row(nt - 3) -= detail::kEdge2 * g.row(nt - 1) * inv;
  }
  return f;
}

}  // namespace waveforge
