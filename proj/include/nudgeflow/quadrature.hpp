#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "nudgeflow/errors.hpp"

namespace nudgeflow {

/// Points (xi, eta) on the reference triangle {xi, eta >= 0, xi + eta <= 1}
/// with weights summing to 1/2, plus points s in [0,1] on the reference edge
/// with weights summing to 1.
struct QuadratureRule {
  struct TrianglePoint {
    double xi, eta, weight;
  };
  struct EdgePoint {
    double s, weight;
  };
  std::vector<TrianglePoint> triangle;
  std::vector<EdgePoint> edge;
  int triangle_degree = 0;
  int edge_degree = 0;
};

/// Gauss-Legendre nodes and weights mapped to [0,1].
inline std::vector<QuadratureRule::EdgePoint> gauss_legendre(int n) {
  if (n < 1) throw InvalidArgument("gauss_legendre: need at least one point");
  std::vector<QuadratureRule::EdgePoint> pts(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    pts[n - 1 - i] = {0.5 * (x + 1.0), 0.5 * w};
  }
  return pts;
}

/// 6-point degree-4 triangle rule with the 3-point Gauss edge rule.
inline QuadratureRule default_rule() {
  QuadratureRule r;
  const double a1 = 0.44594849091596489, w1 = 0.22338158967801147 / 2.0;
  const double a2 = 0.09157621350977073, w2 = 0.10995174365532187 / 2.0;
  r.triangle = {{a1, a1, w1}, {1.0 - 2.0 * a1, a1, w1}, {a1, 1.0 - 2.0 * a1, w1},
                {a2, a2, w2}, {1.0 - 2.0 * a2, a2, w2}, {a2, 1.0 - 2.0 * a2, w2}};
  r.triangle_degree = 4;
  r.edge = gauss_legendre(3);
  r.edge_degree = 5;
  return r;
}

/// 7-point degree-5 triangle rule (used for the trilinear convection form).
inline QuadratureRule degree5_rule() {
  QuadratureRule r;
  const double a1 = 0.47014206410511509, w1 = 0.13239415278850619 / 2.0;
  const double a2 = 0.10128650732345634, w2 = 0.12593918054482715 / 2.0;
  r.triangle = {{1.0 / 3.0, 1.0 / 3.0, 0.225 / 2.0},
                {a1, a1, w1}, {1.0 - 2.0 * a1, a1, w1}, {a1, 1.0 - 2.0 * a1, w1},
                {a2, a2, w2}, {1.0 - 2.0 * a2, a2, w2}, {a2, 1.0 - 2.0 * a2, w2}};
  r.triangle_degree = 5;
  r.edge = gauss_legendre(3);
  r.edge_degree = 5;
  return r;
}

/// Collapsed (Duffy) tensor Gauss rule with n^2 points, exact to degree 2n-2.
inline QuadratureRule collapsed_gauss_rule(int n) {
  QuadratureRule r;
  auto g = gauss_legendre(n);
  for (const auto& a : g)
    for (const auto& b : g) r.triangle.push_back({a.s * (1.0 - b.s), b.s, a.weight * b.weight * (1.0 - b.s)});
  r.triangle_degree = 2 * n - 2;
  r.edge = g;
  r.edge_degree = 2 * n - 1;
  return r;
}

}  // namespace nudgeflow
