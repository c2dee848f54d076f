#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "spacegraph/errors.hpp"
#include "spacegraph/graphgeom.hpp"
#include "support.hpp"

using namespace spacegraph;
using namespace spacegraph::testing;

namespace {



GridMap linear_map(const Mat& A, int res = 16) {
  const Grid g = make_grid(kTorus, {res, res});
  GridMap F = make_map(kTorus, kPlane, g, [&](const Vec& x) {
    return ChartPoint{Vec(A.transpose() * x), 0};
  });
  F.winding[0] = A.row(0).transpose() * (2 * kPi);
  F.winding[1] = A.row(1).transpose() * (2 * kPi);
  return F;
}

// Classical Jacobi (largest off-diagonal pivot) on g1^{-1/2} P g1^{-1/2},
// where the square root comes from Eigen's symmetric eigensolver. Shares no
// code with the library's cyclic sweep after Cholesky reduction.
void oracle_generalized(const Mat& g1, const Mat& P, Vec& vals, Mat& vecs) {
  const int n = static_cast<int>(g1.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(g1)};
  const Eigen::MatrixXd isq = es.operatorInverseSqrt();
  Eigen::MatrixXd A = isq * Eigen::MatrixXd(P) * isq;
  Eigen::MatrixXd V = Eigen::MatrixXd::Identity(n, n);
  for (int it = 0; it < 200; ++it) {
    int p = 0, q = 1;
    double best = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (std::abs(A(i, j)) > best) best = std::abs(A(i, j)), p = i, q = j;
    if (best < 1e-300 || n < 2) break;
    const double phi = 0.5 * std::atan2(2 * A(p, q), A(q, q) - A(p, p));
    const double c = std::cos(phi), s = std::sin(phi);
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(n, n);
    R(p, p) = c, R(q, q) = c, R(p, q) = s, R(q, p) = -s;
    A = R.transpose() * A * R;
    V = V * R;
  }
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return A(a, a) > A(b, b); });
  vals.resize(n);
  vecs.resize(n, n);
  for (int i = 0; i < n; ++i) {
    vals(i) = A(idx[i], idx[i]);
    vecs.col(i) = isq * V.col(idx[i]);
  }
}

}  // namespace

TEST_CASE("differential of constant and linear maps") {
  const Grid g = make_grid(kTorus, {16, 16});
  Vec c(2);
  c << 0.3, -1.2;
  const GridMap F = make_map(kTorus, kPlane, g, [&](const Vec&) { return ChartPoint{c, 0}; });
  for (int node = 0; node < g.count(); node += 7) CHECK(differential(F, node).norm() == 0.0);

  Mat A(2, 2);
  A << 0.4, -0.2, 0.1, 0.3;
  const GridMap L = linear_map(A);
  for (int node = 0; node < L.grid.count(); ++node)
    CHECK((differential(L, node) - A).norm() < 1e-13);
}

TEST_CASE("differential is fourth order on periodic axes") {
  auto err = [](int res) {
    const Grid g = make_grid(kTorus, {res, res});
    const GridMap F = make_map(kTorus, kPlane, g, [](const Vec& x) {
      Vec v(2);
      v << std::sin(x(0)), 0.0;
      return ChartPoint{v, 0};
    });
    Mat expect = Mat::Zero(2, 2);
    expect(0, 0) = 1.0;
    return (differential(F, 0) - expect).norm();
  };
  const double e1 = err(16), e2 = err(32);
  CHECK(e1 < 1e-3);
  CHECK(e1 / e2 == doctest::Approx(16.0).epsilon(0.05));
}

TEST_CASE("sphere domain: poles are excluded, neighbours fall back to second order") {
  const auto S = ManifoldModel::round_sphere(2, 1.0, ChartKind::LatLong);
  const auto R3 = ManifoldModel::euclidean(3);
  auto err_row1 = [&](int res) {
    const Grid g = make_grid(S, {res, 2 * res});
    const GridMap F = make_map(S, R3, g, [&](const Vec& x) {
      return ChartPoint{Vec(embed(S, ChartPoint{x, 0})), 0};
    });
    CHECK_THROWS_AS(differential(F, g.index(0, 3)), PoleRowError);
    CHECK_THROWS_AS(local_jet(F, g.index(res, 1)), PoleRowError);
    const int node = g.index(1, 5);
    Mat expect(2, 3);
    const Vec x = g.coord(node);
    expect << std::cos(x(0)) * std::cos(x(1)), std::cos(x(0)) * std::sin(x(1)), -std::sin(x(0)),
        -std::sin(x(0)) * std::sin(x(1)), std::sin(x(0)) * std::cos(x(1)), 0.0;
    return (differential(F, node) - expect).norm();
  };
  const double e1 = err_row1(16), e2 = err_row1(32);
  CHECK(e1 / e2 > 3.5);
  CHECK(e1 / e2 < 4.5);
}

TEST_CASE("differential is corrected across stereographic chart switches") {
  const auto S = ManifoldModel::round_sphere(2, 1.0, ChartKind::Stereographic);
  const Grid g = make_grid(kTorus, {16, 16});
  auto f = [](const Vec& x) {
    Vec v(2);
    v << 1.9 + 0.3 * std::sin(x(0)), 0.2 * std::cos(x(1));
    return ChartPoint{v, 0};
  };
  const GridMap ref = make_map(kTorus, S, g, f);
  GridMap mixed = ref;
  for (int node = 0; node < g.count(); node += 2) mixed.set(node, to_chart(S, ref.at(node), 1));
  for (int node = 1; node < g.count(); node += 2)
    CHECK((differential(mixed, node) - differential(ref, node)).norm() < 1e-12);
}

TEST_CASE("pullback spectrum: trivial cases") {
  const Mat I = Mat::Identity(2, 2);
  SplitMix64 rng(1);
  const Mat g1 = random_spd(rng, 2);
  const Spectrum S0 = pullback_and_spectrum(g1, I, Mat::Zero(2, 2));
  CHECK(S0.lambda_sq.norm() == 0.0);
  CHECK(S0.rank == 0);
  // Canonical frame: Gram–Schmidt of the chart basis (upper triangular).
  CHECK(S0.frame_a(1, 0) == 0.0);
  CHECK((S0.frame_a.transpose() * g1 * S0.frame_a - I).norm() < 1e-14);

  Mat df(2, 2);
  df << 0.6, 0.0, 0.0, 0.3;
  const Spectrum S1 = pullback_and_spectrum(I, I, df);
  CHECK(S1.lambda_sq(0) == doctest::Approx(0.36).epsilon(1e-15));
  CHECK(S1.lambda_sq(1) == doctest::Approx(0.09).epsilon(1e-15));
  CHECK(std::abs(S1.frame_a(0, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(S1.frame_a(1, 1)) == doctest::Approx(1.0));
}

TEST_CASE("pullback spectrum matches the Jacobi oracle on random instances") {
  SplitMix64 rng(2024);
  double worst_val = 0.0, worst_vec = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int m = 1 + t % 2, n = 1 + t % 3;
    const Mat g1 = random_spd(rng, m), g2 = random_spd(rng, n);
    Mat df(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) df(i, j) = 0.5 * rng.normal();
    const Spectrum S = pullback_and_spectrum(g1, g2, df);
    const Mat P = df * g2 * df.transpose();
    Vec vals;
    Mat vecs;
    oracle_generalized(g1, P, vals, vecs);
    const double scale = std::max(1.0, vals.cwiseAbs().maxCoeff());
    worst_val = std::max(worst_val, std::abs(largest_lambda_sq(g1, P) - vals(0)) / scale);
    for (int i = 0; i < m; ++i) {
      worst_val = std::max(worst_val, std::abs(std::max(vals(i), 0.0) - S.lambda_sq(i)) / scale);
      // Eigenvectors agree up to sign where the eigenvalue is simple.
      const bool simple = (i == 0 || vals(i - 1) - vals(i) > 1e-6) && (i == m - 1 || vals(i) - vals(i + 1) > 1e-6);
      if (simple) {
        const double d = std::min((vecs.col(i) - S.frame_a.col(i)).norm(), (vecs.col(i) + S.frame_a.col(i)).norm());
        worst_vec = std::max(worst_vec, d);
      }
    }
  }
  CHECK(worst_val < 1e-10);
  CHECK(worst_vec < 1e-8);
}

TEST_CASE("frame invariants") {
  SplitMix64 rng(77);
  for (int t = 0; t < 500; ++t) {
    const int m = 1 + t % 2, n = 1 + (t / 2) % 3;
    const Mat g1 = random_spd(rng, m), g2 = random_spd(rng, n);
    Mat df(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) df(i, j) = 0.4 * rng.normal();
    const Spectrum S = pullback_and_spectrum(g1, g2, df);
    const Mat A = S.frame_a, B = S.frame_b;
    CHECK((A.transpose() * g1 * A - Mat::Identity(m, m)).norm() < 1e-10);
    CHECK((B.transpose() * g2 * B - Mat::Identity(n, n)).norm() < 1e-10);
    for (int i = 1; i < m; ++i) CHECK(S.lambda_sq(i - 1) >= S.lambda_sq(i));
    // Reconstruct f*g₂ (chart basis) from (λ², a): P = g1 A Λ Aᵀ g1.
    const Mat P = df * g2 * df.transpose();
    const Mat rec = g1 * A * S.lambda_sq.asDiagonal() * A.transpose() * g1;
    CHECK((rec - P).norm() < 1e-10 * std::max(1.0, P.norm()));
    for (int i = 0; i < m; ++i) {
      const Vec dfa = df.transpose() * A.col(i);
      CHECK(std::abs(dfa.dot(g2 * dfa) - S.lambda_sq(i)) < 1e-10);
      if (i < S.rank) CHECK((dfa + S.lambda(i) * B.col(i)).norm() < 1e-10);
    }
  }
}

TEST_CASE("cosh theta") {
  Vec l(2);
  l << 0.0, 0.0;
  CHECK(cosh_theta(l) == 1.0);
  l << 0.36, 0.0;
  CHECK(cosh_theta(l) == doctest::Approx(1.25).epsilon(1e-15));
  l << 0.5, 0.2;
  CHECK(cosh_theta(l) == doctest::Approx(1.5811388300841898).epsilon(1e-15));
  Mat g1 = Mat::Identity(2, 2), P = Mat::Zero(2, 2);
  P(0, 0) = 0.5, P(1, 1) = 0.2;
  CHECK(cosh_theta_from_metrics(g1, g1 - P) == doctest::Approx(1.58113883).epsilon(1e-9));
  l << 1.0, 0.0;
  CHECK_THROWS_AS(cosh_theta(l), NotSpacelikeError);

  SplitMix64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const Mat a = random_spd(rng, 2), b = random_spd(rng, 2);
    Mat df(2, 2);
    for (int i = 0; i < 4; ++i) df(i / 2, i % 2) = 0.2 * rng.normal();
    const Spectrum S = pullback_and_spectrum(a, b, df);
    if (S.lambda_sq(0) >= 0.99) continue;
    const double c = cosh_theta(S.lambda_sq);
    CHECK(c >= 1.0);
    CHECK(c == doctest::Approx(cosh_theta_from_metrics(a, a - df * b * df.transpose())).epsilon(1e-12));
    CHECK(cosh_sq_minus_one(S.lambda_sq) == doctest::Approx(c * c - 1.0).epsilon(1e-9));
  }
}

TEST_CASE("spacelike check") {
  const Grid g = make_grid(kTorus, {16, 16});
  const GridMap C = make_map(kTorus, kPlane, g, [](const Vec&) { return ChartPoint{Vec::Zero(2), 0}; });
  const SpacelikeReport r0 = spacelike_check(C, 1e-3);
  CHECK(r0.ok);
  CHECK(r0.worst_lambda_sq == 0.0);

  Mat A = Mat::Zero(2, 2);
  A(0, 0) = std::sqrt(0.999);
  const SpacelikeReport r1 = spacelike_check(linear_map(A), 1e-3);
  CHECK_FALSE(r1.ok);
  CHECK(r1.worst_lambda_sq == doctest::Approx(0.999).epsilon(1e-12));

  const Mat half = Mat::Identity(2, 2) * std::sqrt(0.5);
  const SpacelikeReport r2 = spacelike_check(linear_map(half), 1e-3);
  CHECK(r2.ok);
  CHECK(r2.worst_lambda_sq == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("Wang condition") {
  Vec l(2);
  l << 0.0, 0.0;
  CHECK(wang_predicate(l));
  l << 1.0, 0.0;
  CHECK_FALSE(wang_predicate(l));
  l << 0.5, 0.3;
  CHECK(wang_predicate(l));
  CHECK(l(0) < 1.0);

  SplitMix64 rng(99);
  int held = 0;
  for (int t = 0; t < 2000; ++t) {
    const int m = 1 + t % 2, n = 1 + t % 3;
    const Mat g1 = random_spd(rng, m), g2 = random_spd(rng, n);
    Mat df(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) df(i, j) = 0.6 * rng.normal();
    const Spectrum S = pullback_and_spectrum(g1, g2, df);
    if (wang_predicate(S.lambda_sq)) {
      ++held;
      CHECK(S.lambda_sq(0) < 1.0);
    }
  }
  CHECK(held > 100);

  Mat A(2, 2);
  A << 0.5, 0.1, 0.0, 0.4;
  const WangReport w = wang_condition(linear_map(A));
  CHECK(w.all);
}

TEST_CASE("spectrum is Lipschitz under perturbations of the map") {
  const Grid g = make_grid(kTorus, {32, 32});
  auto lam = [&](double eps) {
    const GridMap F = make_map(kTorus, kPlane, g, [&](const Vec& x) {
      Vec v(2);
      v << 0.3 * std::sin(x(0)) + eps * std::cos(x(0) + 2 * x(1)), 0.3 * std::sin(x(1)) + eps * std::sin(x(0));
      return ChartPoint{v, 0};
    });
    std::vector<double> out;
    for (int node = 0; node < g.count(); node += 5) {
      const Vec l = point_geometry(F, node).spec.lambda_sq;
      out.push_back(l(0));
      out.push_back(l(1));
    }
    return out;
  };
  const auto base = lam(0.0), a = lam(1e-3), b = lam(1e-4);
  double da = 0.0, db = 0.0;
  for (size_t i = 0; i < base.size(); ++i) {
    da = std::max(da, std::abs(a[i] - base[i]));
    db = std::max(db, std::abs(b[i] - base[i]));
  }
  CHECK(da / 1e-3 < 10.0);
  CHECK(db / 1e-4 < 10.0);
  CHECK((da / 1e-3) / (db / 1e-4) < 2.0);
}

TEST_CASE("cosh theta equals one exactly where df vanishes") {
  const Grid g = make_grid(kTorus, {16, 16});
  const GridMap F = make_map(kTorus, kPlane, g, [](const Vec& x) {
    Vec v(2);
    v << 0.2 * std::sin(x(0)), 0.0;
    return ChartPoint{v, 0};
  });
  for (int node = 0; node < g.count(); ++node) {
    const PointGeometry pg = point_geometry(F, node);
    CHECK(pg.cosh_theta >= 1.0);
    // cosh θ itself rounds to 1 for |df| ~ 1e-17, so strictness is checked on cosh²θ − 1.
    if (pg.df.norm() == 0.0) CHECK(cosh_sq_minus_one(pg.spec.lambda_sq) == 0.0);
    else CHECK(cosh_sq_minus_one(pg.spec.lambda_sq) > 0.0);
  }
}

TEST_CASE("snapshots round trip bit for bit") {
  const auto S = ManifoldModel::round_sphere(2, 1.0, ChartKind::Stereographic);
  const Grid g = make_grid(kTorus, {12, 10});
  GridMap F = make_map(kTorus, S, g, [](const Vec& x) {
    Vec v(2);
    v << std::exp(std::sin(x(0))) / 3.0, 1.0 / 7.0 + x(1) * 1e-3;
    return ChartPoint{v, x(0) > 3.0 ? 1 : 0};
  });
  const GridMap back = read_snapshot(write_snapshot(F));
  CHECK(back.values == F.values);
  CHECK(back.tags == F.tags);
  CHECK(back.domain == F.domain);
  CHECK(back.target == F.target);
  CHECK(write_snapshot(back) == write_snapshot(F));

  Mat A(2, 2);
  A << 1.0 / 3.0, 0.0, 0.0, 0.1;
  const GridMap L = linear_map(A);
  const GridMap Lb = read_snapshot(write_snapshot(L));
  CHECK(Lb.winding[0] == L.winding[0]);
  CHECK(Lb.winding[1] == L.winding[1]);
  CHECK(Lb.values == L.values);
}
