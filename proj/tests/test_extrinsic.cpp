#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spacegraph/errors.hpp"
#include "spacegraph/extrinsic.hpp"
#include "support.hpp"

using namespace spacegraph;
using namespace spacegraph::testing;

namespace {


struct Instance {
  ManifoldModel domain, target;
  PointGeometry pg;
  Tensor3 hess;
};

Tensor3 random_hessian(SplitMix64& rng, int m, int n, double scale = 1.0) {
  Tensor3 H(n, m);
  for (int c = 0; c < n; ++c) {
    Mat A(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) A(i, j) = scale * rng.normal();
    H[c] = 0.5 * (A + A.transpose());
  }
  return H;
}

// Random spacelike configuration: curved charts on both sides, λ₁² drawn in
// (0, 0.95), symmetric Hessian.
Instance random_instance(SplitMix64& rng) {
  static const ManifoldModel domains[] = {
      ManifoldModel::round_sphere(2, 1.3, ChartKind::LatLong), ManifoldModel::euclidean(1),
      ManifoldModel::hyperbolic(2, 0.7), ManifoldModel::flat_torus(2, {1.0, 2.0, 0.0})};
  static const ManifoldModel targets[] = {
      ManifoldModel::hyperbolic(2, 1.0), ManifoldModel::round_sphere(2, 0.8, ChartKind::Stereographic),
      ManifoldModel::euclidean(1), ManifoldModel::hyperbolic(3, 2.0),
      ManifoldModel::round_sphere(3, 1.0, ChartKind::Stereographic)};
  Instance I;
  I.domain = domains[rng.next() % 4];
  I.target = targets[rng.next() % 5];
  const int m = I.domain.dim, n = I.target.dim;
  const ChartPoint p = random_point(rng, I.domain), fp = random_point(rng, I.target);
  Mat df(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) df(i, j) = rng.normal();
  const Mat g1 = metric_at(I.domain, p), g2 = metric_at(I.target, fp);
  const double l1 = largest_lambda_sq(g1, df * g2 * df.transpose());
  df *= std::sqrt(rng.uniform(0.01, 0.95) / l1);
  I.pg = point_geometry(I.domain, I.target, p, fp, df);
  I.hess = random_hessian(rng, m, n);
  return I;
}

// Same point geometry with the domain frame rotated by R inside a block of
// equal λ, and the target frame following through b = −df(a)/λ.
PointGeometry rotate_frames(const PointGeometry& pg, const Mat& R) {
  PointGeometry out = pg;
  const int m = static_cast<int>(R.rows());
  out.spec.frame_a.leftCols(m) = pg.spec.frame_a.leftCols(m) * R;
  out.spec.frame_b.leftCols(m) = pg.spec.frame_b.leftCols(m) * R;
  return out;
}

double max_abs(const Tensor3& T, int n) {
  double s = 0.0;
  for (int c = 0; c < n; ++c) s = std::max(s, T[c].cwiseAbs().maxCoeff());
  return s;
}

}  // namespace

TEST_CASE("Hessian vanishes for constant and linear maps between flat tori") {
  const auto T = ManifoldModel::flat_torus(2, {2 * kPi, 2 * kPi, 0});
  const auto T2 = ManifoldModel::flat_torus(2, {1.0, 1.0, 0});
  const Grid g = make_grid(T, {16, 16});
  Vec c(2);
  c << 0.25, 0.5;
  const GridMap C = make_map(T, T2, g, [&](const Vec&) { return ChartPoint{c, 0}; });
  Mat A(2, 2);
  A << 0.3, 0.1, -0.2, 0.05;
  GridMap L = make_map(T, T2, g, [&](const Vec& x) { return ChartPoint{Vec(A.transpose() * x), 0}; });
  L.winding[0] = A.row(0).transpose() * (2 * kPi);
  L.winding[1] = A.row(1).transpose() * (2 * kPi);
  for (int node = 0; node < g.count(); node += 3) {
    CHECK(max_abs(map_hessian(C, node), 2) == 0.0);
    CHECK(max_abs(map_hessian(L, node), 2) < 1e-12);
  }
}

TEST_CASE("identity of the round sphere is totally geodesic") {
  const auto S = ManifoldModel::round_sphere(2, 1.0, ChartKind::LatLong);
  const Grid g = make_grid(S, {16, 32});
  GridMap F(S, S, g);
  for (int node = 0; node < g.count(); ++node)
    if (!g.is_pole(node)) F.set(node, ChartPoint{g.coord(node), 0});
  F.winding[1] = Vec::Zero(2);
  F.winding[1](1) = 2 * kPi;
  for (int node = 0; node < g.count(); ++node)
    if (!g.is_pole(node)) CHECK(max_abs(map_hessian(F, node), 2) < 1e-10);

  // Into the stereographic chart the Hessian is a genuine discretization
  // residual; it must decay under refinement.
  const auto St = ManifoldModel::round_sphere(2, 1.0, ChartKind::Stereographic);
  auto residual = [&](int res) {
    const Grid gr = make_grid(S, {res, 2 * res});
    const GridMap G = make_map(S, St, gr, [&](const Vec& x) {
      const AVec P = embed(S, ChartPoint{x, 0});
      const int tag = P(2) > 0.0 ? 1 : 0;
      const double denom = tag == 0 ? 1.0 - P(2) : 1.0 + P(2);
      return ChartPoint{Vec(P.head(2) / denom), tag};
    });
    double worst = 0.0;
    for (int node = 0; node < gr.count(); ++node)
      if (gr.interior(node, 1)) worst = std::max(worst, max_abs(map_hessian(G, node), 2));
    return worst;
  };
  const double e1 = residual(16), e2 = residual(32), e3 = residual(64);
  MESSAGE("identity residuals ", e1, " ", e2, " ", e3);
  CHECK(e1 / e2 > 3.5);
  CHECK(e2 / e3 > 3.5);
}

TEST_CASE("flow velocity examples") {
  SplitMix64 rng(11);
  const auto E1 = ManifoldModel::euclidean(1);
  Mat df = Mat::Zero(1, 1);
  const ChartPoint o{Vec::Zero(1), 0};
  const PointGeometry pg0 = point_geometry(E1, E1, o, o, df);
  Tensor3 H(1, 1);
  Velocity v = flow_velocity(pg0, H);
  CHECK(v.W(0) == 0.0);
  CHECK(v.Z(0) == 0.0);
  H[0](0, 0) = 1.0;
  v = flow_velocity(pg0, H);
  CHECK(v.W(0) == 1.0);
  CHECK(v.Z(0) == 0.0);

  df(0, 0) = 1.0;
  const PointGeometry bad = point_geometry(E1, E1, o, o, df);
  CHECK_THROWS_AS(flow_velocity(bad, H), NotSpacelikeError);

  for (int t = 0; t < 500; ++t) {
    const Instance I = random_instance(rng);
    const Velocity u = flow_velocity(I.pg, I.hess);
    const int m = I.domain.dim;
    for (int i = 0; i < m; ++i) {
      const Vec a = I.pg.spec.frame_a.col(i);
      const double lhs = u.Z.dot(I.pg.graph_metric * a);
      const double rhs = u.W.dot(I.pg.g2 * (I.pg.df.transpose() * a));
      CHECK(std::abs(lhs - rhs) < 1e-12 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST_CASE("second fundamental form norms") {
  SplitMix64 rng(12);
  // Zero Hessian.
  {
    const Instance I = random_instance(rng);
    const FundamentalForms ff = second_fundamental_norms(I.pg, Tensor3(I.target.dim, I.domain.dim));
    CHECK(ff.normB_sq == 0.0);
    CHECK(ff.normH_sq == 0.0);
    CHECK(ff.normH_sq_projection == 0.0);
  }
  // Horizontal graph in orthonormal charts: ‖B‖² is the plain sum of squares.
  {
    const auto E2 = ManifoldModel::euclidean(2), E3 = ManifoldModel::euclidean(3);
    const PointGeometry pg = point_geometry(E2, E3, ChartPoint{Vec::Zero(2), 0},
                                            ChartPoint{Vec::Zero(3), 0}, Mat::Zero(2, 3));
    const Tensor3 H = random_hessian(rng, 2, 3);
    double sq = 0.0;
    for (int c = 0; c < 3; ++c) sq += H[c].squaredNorm();
    const FundamentalForms ff = second_fundamental_norms(pg, H);
    CHECK(ff.normB_sq == doctest::Approx(sq).epsilon(1e-13));
  }
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Instance I = random_instance(rng);
    const FundamentalForms ff = second_fundamental_norms(I.pg, I.hess);
    const Velocity v = flow_velocity(I.pg, I.hess);
    const double frame_free = mean_curvature_sq(I.pg, v);
    const double s = std::max(1.0, ff.normH_sq);
    worst = std::max({worst, std::abs(ff.normH_sq - ff.normH_sq_projection) / s,
                      std::abs(ff.normH_sq - frame_free) / s});
    CHECK(ff.normB_sq >= 0.0);
    CHECK(ff.normH_sq <= I.domain.dim * ff.normB_sq * (1 + 1e-12));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("mean curvature vanishes exactly when W does") {
  SplitMix64 rng(13);
  Instance I = random_instance(rng);
  const int n = I.target.dim, m = I.domain.dim;
  Tensor3 H(n, m);
  const Velocity v = flow_velocity(I.pg, H);
  CHECK(v.W.norm() == 0.0);
  CHECK(v.Z.norm() == 0.0);
  CHECK(mean_curvature_sq(I.pg, v) == 0.0);
  for (int t = 0; t < 200; ++t) {
    I = random_instance(rng);
    const Velocity u = flow_velocity(I.pg, I.hess);
    if (u.W.norm() > 1e-8) CHECK(mean_curvature_sq(I.pg, u) > 0.0);
  }
}

TEST_CASE("bracket dominates the spectral gap times |B|^2") {
  SplitMix64 rng(14);
  for (int t = 0; t < 2000; ++t) {
    const Instance I = random_instance(rng);
    const FundamentalForms ff = second_fundamental_norms(I.pg, I.hess);
    const double qb = bracket_QB(I.pg, ff.h);
    const double delta = 1.0 - I.pg.spec.lambda_sq(0);
    CHECK(qb >= delta * ff.normB_sq - 1e-12 * std::max(1.0, ff.normB_sq));
  }
}

TEST_CASE("frame-invariant scalars do not depend on the frame inside a repeated eigenvalue") {
  SplitMix64 rng(15);
  const auto D = ManifoldModel::flat_torus(2, {1.0, 1.0, 0.0});
  const auto T = ManifoldModel::hyperbolic(2, 1.0);
  const ChartPoint p{Vec::Zero(2), 0};
  Vec y(2);
  y << 0.2, -0.1;
  const ChartPoint fp{y, 0};
  const Mat g2 = metric_at(T, fp);
  // df = 0.6 · (isometry onto g₂-orthonormal vectors), so λ₁ = λ₂ = 0.6.
  const Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(g2)};
  const Mat Linv_t = Mat(llt.matrixL()).inverse().transpose();
  const Mat df = 0.6 * Linv_t.transpose();
  const PointGeometry pg = point_geometry(D, T, p, fp, df);
  CHECK(pg.spec.lambda_sq(0) == doctest::Approx(0.36));
  CHECK(pg.spec.lambda_sq(1) == doctest::Approx(0.36));
  for (int t = 0; t < 50; ++t) {
    const Tensor3 H = random_hessian(rng, 2, 2);
    const double phi = rng.uniform(0.0, 2 * kPi);
    Mat R(2, 2);
    R << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
    const PointGeometry rot = rotate_frames(pg, R);
    const FundamentalForms a = second_fundamental_norms(pg, H), b = second_fundamental_norms(rot, H);
    CHECK(b.normB_sq == doctest::Approx(a.normB_sq).epsilon(1e-12));
    CHECK(b.normH_sq == doctest::Approx(a.normH_sq).epsilon(1e-12));
    CHECK(bracket_QB(rot, b.h) == doctest::Approx(bracket_QB(pg, a.h)).epsilon(1e-12));
    CHECK(gradient_identity_rhs(rot, b.h) == doctest::Approx(gradient_identity_rhs(pg, a.h)).epsilon(1e-12));
    CHECK(curvature_QR(rot, D, T) == doctest::Approx(curvature_QR(pg, D, T)).epsilon(1e-12));
  }
}

TEST_CASE("Hessian of a grid map is symmetric") {
  const auto S = ManifoldModel::round_sphere(2, 1.0, ChartKind::LatLong);
  const auto P = ManifoldModel::hyperbolic(2, 1.0);
  const Grid g = make_grid(S, {24, 48});
  const GridMap F = make_map(S, P, g, [](const Vec& x) {
    Vec v(2);
    v << 0.3 * std::cos(x(0)), 0.1 * std::sin(x(0)) * std::sin(x(1));
    return ChartPoint{v, 0};
  });
  double worst = 0.0;
  for (int node = 0; node < g.count(); ++node) {
    if (g.is_pole(node)) continue;
    const Tensor3 H = map_hessian(F, node);
    for (int c = 0; c < 2; ++c) worst = std::max(worst, std::abs(H[c](0, 1) - H[c](1, 0)));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("gradient identity in one dimension matches the closed form") {
  const auto E1 = ManifoldModel::euclidean(1);
  const ChartPoint o{Vec::Zero(1), 0};
  for (double p : {-0.8, -0.3, 0.1, 0.5, 0.9})
    for (double q : {-2.0, 0.7, 3.0}) {
      Mat df(1, 1);
      df(0, 0) = p;
      const PointGeometry pg = point_geometry(E1, E1, o, o, df);
      Tensor3 H(1, 1);
      H[0](0, 0) = q;
      const FundamentalForms ff = second_fundamental_norms(pg, H);
      const double expect = (p * q) * (p * q) / std::pow(1.0 - p * p, 3);
      CHECK(gradient_identity_rhs(pg, ff.h) == doctest::Approx(expect).epsilon(1e-12));
      // In one dimension the bracket equals (1 − λ²)‖B‖².
      CHECK(bracket_QB(pg, ff.h) == doctest::Approx((1 - p * p) * ff.normB_sq).epsilon(1e-12));
    }
}

TEST_CASE("node geometry bundles consistent data") {
  const auto T = ManifoldModel::flat_torus(2, {2 * kPi, 2 * kPi, 0});
  const auto E = ManifoldModel::euclidean(2);
  const Grid g = make_grid(T, {32, 32});
  const GridMap F = make_map(T, E, g, [](const Vec& x) {
    Vec v(2);
    v << 0.3 * std::sin(x(0)) * std::cos(x(1)), 0.2 * std::cos(x(0));
    return ChartPoint{v, 0};
  });
  for (int node = 0; node < g.count(); node += 37) {
    const NodeGeometry G = node_geometry(F, node);
    CHECK(std::abs(G.ex.normH_sq - G.ex.normH_sq_projection) < 1e-10 * std::max(1.0, G.ex.normH_sq));
    const Tensor3 H = map_hessian(F, node);
    for (int c = 0; c < 2; ++c) CHECK((H[c] - G.ex.hess[c]).norm() == 0.0);
  }
}
