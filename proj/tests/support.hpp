#pragma once

#include <cmath>
#include <functional>

#include "spacegraph/graphgeom.hpp"
#include "spacegraph/manifold.hpp"
#include "spacegraph/rng.hpp"

namespace spacegraph::testing {

inline Vec random_vec(SplitMix64& rng, int n, double scale = 1.0) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

inline Mat random_spd(SplitMix64& rng, int n) {
  Mat A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
  return A * A.transpose() + 0.5 * Mat::Identity(n, n);
}

// A random point well inside the chart.
inline ChartPoint random_point(SplitMix64& rng, const ManifoldModel& M) {
  ChartPoint p{Vec(M.dim), 0};
  switch (M.chart) {
    case ChartKind::PoincareBall:
      p.x = random_vec(rng, M.dim);
      p.x *= rng.uniform(0.0, 0.8) / p.x.norm();
      break;
    case ChartKind::LatLong:
      p.x << rng.uniform(0.8, 2.3), rng.uniform(0.0, 6.28);
      break;
    case ChartKind::Stereographic:
      p.x = random_vec(rng, M.dim, 0.8);
      p.tag = rng.uniform() < 0.5 ? 0 : 1;
      break;
    default:
      p.x = random_vec(rng, M.dim, 2.0);
  }
  return p;
}

// Generic geodesic integrator, RK4 with 64 fixed steps (step ‖v‖/64 in
// arclength). Uses only christoffel_at, so it is independent of the
// closed-form exponential maps.
inline ChartPoint geodesic_rk4(const ManifoldModel& M, ChartPoint p, Vec v, int steps = 64) {
  const int n = M.dim;
  auto accel = [&](const Vec& x, const Vec& u) {
    const Tensor3 G = christoffel_at(M, ChartPoint{x, p.tag});
    Vec a(n);
    for (int k = 0; k < n; ++k) a(k) = -u.dot(G[k] * u);
    return a;
  };
  const double h = 1.0 / steps;
  Vec x = p.x, u = v;
  for (int s = 0; s < steps; ++s) {
    const Vec k1x = u, k1u = accel(x, u);
    const Vec k2x = u + 0.5 * h * k1u, k2u = accel(x + 0.5 * h * k1x, u + 0.5 * h * k1u);
    const Vec k3x = u + 0.5 * h * k2u, k3u = accel(x + 0.5 * h * k2x, u + 0.5 * h * k2u);
    const Vec k4x = u + h * k3u, k4u = accel(x + h * k3x, u + h * k3u);
    x += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
    u += h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u);
  }
  return ChartPoint{x, p.tag};
}

// Sectional curvature from the Riemann tensor assembled from Christoffel
// symbols and their centered finite differences.
inline double fd_sectional(const ManifoldModel& M, const ChartPoint& p, const Vec& u, const Vec& v,
                           double h = 1e-4) {
  const int n = M.dim;
  auto G = [&](const Vec& x) { return christoffel_at(M, ChartPoint{x, p.tag}); };
  std::array<Tensor3, kMaxDim> dG;  // dG[l][k](i,j) = ∂_l Γ^k_ij
  for (int l = 0; l < n; ++l) {
    Vec e = Vec::Zero(n);
    e(l) = h;
    const Tensor3 a = G(p.x + e), b = G(p.x - e);
    dG[l] = Tensor3(n, n);
    for (int k = 0; k < n; ++k) dG[l][k] = (a[k] - b[k]) / (2 * h);
  }
  const Tensor3 G0 = G(p.x);
  // R^l_{ijk} = ∂_i Γ^l_jk − ∂_j Γ^l_ik + Γ^l_im Γ^m_jk − Γ^l_jm Γ^m_ik, R(X,Y)Z
  auto R = [&](int l, int i, int j, int k) {
    double r = dG[i][l](j, k) - dG[j][l](i, k);
    for (int q = 0; q < n; ++q) r += G0[l](i, q) * G0[q](j, k) - G0[l](j, q) * G0[q](i, k);
    return r;
  };
  const Mat g = metric_at(M, p);
  // <R(u,v)v, u>
  double num = 0.0;
  for (int l = 0; l < n; ++l)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          const double r = R(l, i, j, k) * v(j) * u(i) * v(k);
          if (r == 0.0) continue;
          for (int s = 0; s < n; ++s) num += g(s, l) * r * u(s);
        }
  const double uu = u.dot(g * u), vv = v.dot(g * v), uv = u.dot(g * v);
  return num / (uu * vv - uv * uv);
}

// Scenario maps shared by the flow and diagnostics tests.
inline constexpr double kPi = 3.14159265358979323846;
inline const ManifoldModel kTorus = ManifoldModel::flat_torus(2, {2 * kPi, 2 * kPi, 0});
inline const ManifoldModel kCircle = ManifoldModel::flat_torus(1, {2 * kPi, 0, 0});
inline const ManifoldModel kPlane = ManifoldModel::euclidean(2);
inline const ManifoldModel kLine = ManifoldModel::euclidean(1);
inline const ManifoldModel kSphereLL = ManifoldModel::round_sphere(2, 1.0, ChartKind::LatLong);
inline const ManifoldModel kH2 = ManifoldModel::hyperbolic(2, 1.0);

inline GridMap torus_sine(int n, double amp) {
  return make_map(kTorus, kPlane, make_grid(kTorus, {n, n}), [&](const Vec& x) {
    Vec v(2);
    v << amp * std::sin(x(0)), amp * std::sin(x(1));
    return ChartPoint{v, 0};
  });
}

inline GridMap circle_sine(int n, double amp) {
  return make_map(kCircle, kLine, make_grid(kCircle, {n, 1}), [&](const Vec& x) {
    Vec v(1);
    v << amp * std::sin(x(0));
    return ChartPoint{v, 0};
  });
}

inline GridMap linear_map(const Mat& A, const ManifoldModel& target) {
  GridMap F = make_map(kTorus, target, make_grid(kTorus, {24, 24}), [&](const Vec& x) {
    return ChartPoint{Vec(A.transpose() * x), 0};
  });
  F.winding[0] = A.row(0).transpose() * (2 * kPi);
  F.winding[1] = A.row(1).transpose() * (2 * kPi);
  return F;
}

}  // namespace spacegraph::testing
