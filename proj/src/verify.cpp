// Module invariants on seeded random instances.

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "spacegraph/errors.hpp"
#include "spacegraph/extrinsic.hpp"
#include "spacegraph/format.hpp"
#include "spacegraph/rng.hpp"
#include "spacegraph/scenario.hpp"

namespace spacegraph {

namespace {

constexpr double kPi = 3.14159265358979323846;

Vec random_vec(SplitMix64& rng, int n, double scale = 1.0) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

Mat random_spd(SplitMix64& rng, int n) {
  Mat A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
  return A * A.transpose() + 0.5 * Mat::Identity(n, n);
}

ChartPoint random_point(SplitMix64& rng, const ManifoldModel& M) {
  ChartPoint p{Vec(M.dim), 0};
  switch (M.chart) {
    case ChartKind::PoincareBall:
      p.x = random_vec(rng, M.dim);
      p.x *= rng.uniform(0.0, 0.8) / p.x.norm();
      break;
    case ChartKind::LatLong: p.x << rng.uniform(0.8, 2.3), rng.uniform(0.0, 6.28); break;
    case ChartKind::Stereographic:
      p.x = random_vec(rng, M.dim, 0.8);
      p.tag = rng.uniform() < 0.5 ? 0 : 1;
      break;
    default: p.x = random_vec(rng, M.dim, 2.0);
  }
  return p;
}

const std::vector<ManifoldModel>& models() {
  static const std::vector<ManifoldModel> all = {
      ManifoldModel::flat_torus(2, {1.0, 2.0, 0.0}),  ManifoldModel::round_sphere(2, 1.3, ChartKind::LatLong),
      ManifoldModel::round_sphere(2, 0.8, ChartKind::Stereographic),
      ManifoldModel::round_sphere(3, 1.0, ChartKind::Stereographic),
      ManifoldModel::hyperbolic(2, 1.0),               ManifoldModel::hyperbolic(3, 2.0),
      ManifoldModel::euclidean(1),                      ManifoldModel::euclidean(2).scaled(0.5)};
  return all;
}

struct Instance {
  ManifoldModel domain, target;
  PointGeometry pg;
  Tensor3 hess;
};

// Spacelike point configuration with λ₁² in (0.01, 0.95) and a symmetric Hessian.
Instance random_instance(SplitMix64& rng, const FrameOptions& frames) {
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
  df *= std::sqrt(rng.uniform(0.01, 0.95) / largest_lambda_sq(g1, df * g2 * df.transpose()));
  I.pg = point_geometry(I.domain, I.target, p, fp, df, frames);
  I.hess = Tensor3(n, m);
  for (int c = 0; c < n; ++c) {
    Mat A(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) A(i, j) = rng.normal();
    I.hess[c] = 0.5 * (A + A.transpose());
  }
  return I;
}

// Classic largest-pivot Jacobi on g₁^{-1/2} P g₁^{-1/2}; eigenvalues decreasing.
Vec jacobi_oracle(const Mat& g1, const Mat& P) {
  const int n = static_cast<int>(g1.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(g1)};
  const Eigen::MatrixXd isq = es.operatorInverseSqrt();
  Eigen::MatrixXd A = isq * Eigen::MatrixXd(P) * isq;
  for (int it = 0; it < 100 && n > 1; ++it) {
    int p = 0, q = 1;
    double best = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (std::abs(A(i, j)) > best) best = std::abs(A(i, j)), p = i, q = j;
    if (best < 1e-300) break;
    const double phi = 0.5 * std::atan2(2 * A(p, q), A(q, q) - A(p, p));
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(n, n);
    R(p, p) = R(q, q) = std::cos(phi);
    R(p, q) = std::sin(phi);
    R(q, p) = -std::sin(phi);
    A = R.transpose() * A * R;
  }
  Eigen::VectorXd d = A.diagonal();
  std::sort(d.data(), d.data() + n, std::greater<double>());
  return Vec(d);
}

// Low-mode map T² → target with random coefficients, halved until spacelike.
struct RandomTorusMap {
  ManifoldModel target;
  Eigen::MatrixXd coef;
  double amp = 1.0;

  RandomTorusMap(SplitMix64& rng, const ManifoldModel& t, double scale, double max_lambda_sq = 0.9)
      : target(t), coef(t.dim, 4) {
    for (int c = 0; c < t.dim; ++c)
      for (int k = 0; k < 4; ++k) coef(c, k) = rng.uniform(-scale, scale);
    // keep Poincaré-ball images at Euclidean radius below 0.8
    const double bound = coef.cwiseAbs().rowwise().sum().norm();
    if (t.chart == ChartKind::PoincareBall && bound > 0.8) amp = 0.8 / bound;
    while (!spacelike_check(sample(16), 1.0 - max_lambda_sq).ok) amp *= 0.5;
  }

  GridMap sample(int res) const {
    const ManifoldModel T2 = ManifoldModel::flat_torus(2, {2 * kPi, 2 * kPi, 0.0});
    const int n = target.dim;
    return make_map(T2, target, make_grid(T2, {res, res}), [&](const Vec& x) {
      Vec v(n);
      for (int c = 0; c < n; ++c)
        v(c) = amp * (coef(c, 0) * std::sin(x(0)) + coef(c, 1) * std::cos(x(1)) + coef(c, 2) * std::sin(x(0) + x(1)) +
                      coef(c, 3) * std::cos(2 * x(0) - x(1)));
      return ChartPoint{v, 0};
    });
  }
};

GridMap random_torus_map(SplitMix64& rng, const ManifoldModel& target, int res, double scale) {
  return RandomTorusMap(rng, target, scale).sample(res);
}

double sup_diff(const GridMap& a, const GridMap& b) {
  double d = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) d = std::max(d, std::abs(a.values[i] - b.values[i]));
  return d;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace

bool VerifyReport::all_pass() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

std::string VerifyReport::text() const {
  std::ostringstream os;
  for (const auto& c : checks)
    os << (c.pass ? "PASS " : "FAIL ") << c.module << ": " << c.name << " (" << c.detail << ")\n";
  return os.str();
}

VerifyReport verify_suite(long seed, bool mutate_frames) {
  VerifyReport rep;
  SplitMix64 rng(static_cast<std::uint64_t>(seed));
  FrameOptions frames;
  frames.flip_leading_image = mutate_frames;
  auto add = [&](const std::string& module, const std::string& name, const std::function<CheckResult()>& body) {
    CheckResult r;
    try {
      r = body();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("threw ") + e.what();
    }
    r.module = module;
    r.name = name;
    rep.checks.push_back(r);
  };

  // manifold
  add("manifold", "metric is symmetric positive definite", [&] {
    double worst_asym = 0.0, min_eig = std::numeric_limits<double>::infinity();
    for (int t = 0; t < 400; ++t) {
      const ManifoldModel& M = models()[rng.next() % models().size()];
      const Mat g = metric_at(M, random_point(rng, M));
      worst_asym = std::max(worst_asym, (g - g.transpose()).cwiseAbs().maxCoeff());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(g)};
      min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
    }
    return CheckResult{"", "", worst_asym == 0.0 && min_eig > 0.0,
                       "asymmetry " + sci(worst_asym) + ", min eigenvalue " + sci(min_eig)};
  });
  add("manifold", "sectional curvature is the model constant", [&] {
    double worst = 0.0;
    for (int t = 0; t < 400; ++t) {
      const ManifoldModel& M = models()[rng.next() % models().size()];
      if (M.dim < 2) continue;
      const ChartPoint p = random_point(rng, M);
      const Vec u = random_vec(rng, M.dim), v = random_vec(rng, M.dim);
      worst = std::max(worst, std::abs(curvature_data_at(M, p, u, v).sectional - M.sectional_curvature()));
    }
    return CheckResult{"", "", worst < 1e-12, "max deviation " + sci(worst)};
  });
  add("manifold", "exp map moves at unit speed along short geodesics", [&] {
    double worst = 0.0;
    for (int t = 0; t < 400; ++t) {
      const ManifoldModel& M = models()[rng.next() % models().size()];
      const ChartPoint p = random_point(rng, M);
      Vec v = random_vec(rng, M.dim);
      const Mat g = metric_at(M, p);
      const double L = rng.uniform(0.05, 0.8);
      v *= L / std::sqrt(v.dot(g * v));
      const double d = distance(M, p, exp_map(M, p, v));
      if (M.kind == ManifoldKind::FlatTorus) continue;  // distance wraps; covered by the flat charts
      worst = std::max(worst, std::abs(d - L));
    }
    return CheckResult{"", "", worst < 1e-9, "max |d(p, exp v) - |v|| " + sci(worst)};
  });
  add("manifold", "descriptors round trip", [&] {
    bool ok = true;
    for (const auto& M : models()) ok = ok && ManifoldModel::from_descriptor(M.descriptor()) == M;
    return CheckResult{"", "", ok, std::to_string(models().size()) + " models"};
  });

  // graphgeom
  add("graphgeom", "spectrum matches a Jacobi oracle", [&] {
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
      const int m = 1 + t % 2, n = 1 + (t / 2) % 3;
      const Mat g1 = random_spd(rng, m), g2 = random_spd(rng, n);
      Mat df(m, n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) df(i, j) = 0.5 * rng.normal();
      const Mat P = df * g2 * df.transpose();
      const Spectrum S = pullback_and_spectrum(g1, g2, df);
      const Vec o = jacobi_oracle(g1, P);
      const double scale = std::max(1.0, o.cwiseAbs().maxCoeff());
      worst = std::max(worst, std::abs(largest_lambda_sq(g1, P) - o(0)) / scale);
      for (int i = 0; i < m; ++i) worst = std::max(worst, std::abs(std::max(o(i), 0.0) - S.lambda_sq(i)) / scale);
    }
    return CheckResult{"", "", worst < 1e-10, "max relative deviation " + sci(worst)};
  });
  add("graphgeom", "frames reproduce the pullback and are orthonormal", [&] {
    double worst = 0.0;
    for (int t = 0; t < 500; ++t) {
      const int m = 1 + t % 2, n = 1 + (t / 2) % 3;
      const Mat g1 = random_spd(rng, m), g2 = random_spd(rng, n);
      Mat df(m, n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) df(i, j) = 0.4 * rng.normal();
      const Spectrum S = pullback_and_spectrum(g1, g2, df);
      const Mat P = df * g2 * df.transpose();
      const Mat A = S.frame_a, B = S.frame_b;
      const Mat rec = g1 * A * S.lambda_sq.asDiagonal() * A.transpose() * g1;
      worst = std::max({worst, (rec - P).norm() / std::max(1.0, P.norm()),
                        (A.transpose() * g1 * A - Mat::Identity(m, m)).norm(),
                        (B.transpose() * g2 * B - Mat::Identity(n, n)).norm()});
    }
    return CheckResult{"", "", worst < 1e-10, "max deviation " + sci(worst)};
  });
  add("graphgeom", "cosh theta >= 1 with equality exactly at df = 0", [&] {
    bool ok = true;
    double min_gap = std::numeric_limits<double>::infinity();
    for (int t = 0; t < 500; ++t) {
      const int m = 1 + t % 2, n = 1 + (t / 2) % 3;
      const Mat g1 = random_spd(rng, m), g2 = random_spd(rng, n);
      Mat df(m, n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) df(i, j) = rng.normal();
      df *= std::sqrt(rng.uniform(1e-6, 0.95) / largest_lambda_sq(g1, df * g2 * df.transpose()));
      const double c = cosh_theta(pullback_and_spectrum(g1, g2, df).lambda_sq);
      min_gap = std::min(min_gap, c - 1.0);
      ok = ok && c > 1.0 && cosh_theta(pullback_and_spectrum(g1, g2, Mat::Zero(m, n)).lambda_sq) == 1.0;
    }
    return CheckResult{"", "", ok, "min cosh - 1 on nonzero df " + sci(min_gap)};
  });
  add("graphgeom", "Wang condition implies spacelike", [&] {
    int held = 0;
    bool ok = true;
    for (int t = 0; t < 1000; ++t) {
      const int m = 1 + t % 2, n = 1 + t % 3;
      const Mat g1 = random_spd(rng, m), g2 = random_spd(rng, n);
      Mat df(m, n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) df(i, j) = 0.6 * rng.normal();
      const Spectrum S = pullback_and_spectrum(g1, g2, df);
      if (wang_predicate(S.lambda_sq)) ++held, ok = ok && S.lambda_sq(0) < 1.0;
    }
    return CheckResult{"", "", ok && held > 0, std::to_string(held) + " instances satisfy the condition"};
  });
  add("graphgeom", "snapshots round trip bit for bit", [&] {
    const GridMap F = random_torus_map(rng, ManifoldModel::hyperbolic(3, 2.0), 12, 0.3);
    const GridMap G = read_snapshot(write_snapshot(F));
    const bool ok = G.values == F.values && G.tags == F.tags && G.domain == F.domain && G.target == F.target;
    return CheckResult{"", "", ok, std::to_string(F.values.size()) + " coordinates"};
  });

  // extrinsic
  add("extrinsic", "mean curvature routes agree", [&] {
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
      const Instance I = random_instance(rng, frames);
      const FundamentalForms ff = second_fundamental_norms(I.pg, I.hess);
      const double free_route = mean_curvature_sq(I.pg, flow_velocity(I.pg, I.hess));
      const double s = std::max(1.0, ff.normH_sq);
      worst = std::max({worst, std::abs(ff.normH_sq - ff.normH_sq_projection) / s,
                        std::abs(ff.normH_sq - free_route) / s});
    }
    return CheckResult{"", "", worst < 1e-10, "max relative deviation " + sci(worst)};
  });
  add("extrinsic", "bracket dominates (1 - lambda_1^2)|B|^2", [&] {
    double worst = std::numeric_limits<double>::infinity();
    for (int t = 0; t < 1000; ++t) {
      const Instance I = random_instance(rng, frames);
      const FundamentalForms ff = second_fundamental_norms(I.pg, I.hess);
      worst = std::min(worst, bracket_QB(I.pg, ff.h) - (1.0 - I.pg.spec.lambda_sq(0)) * ff.normB_sq);
    }
    return CheckResult{"", "", worst >= -1e-10, "min margin " + sci(worst)};
  });
  add("extrinsic", "|H|^2 <= m |B|^2", [&] {
    bool ok = true;
    for (int t = 0; t < 1000; ++t) {
      const Instance I = random_instance(rng, frames);
      const FundamentalForms ff = second_fundamental_norms(I.pg, I.hess);
      ok = ok && ff.normB_sq >= 0.0 && ff.normH_sq <= I.domain.dim * ff.normB_sq * (1 + 1e-12);
    }
    return CheckResult{"", "", ok, "1000 instances"};
  });
  add("extrinsic", "Hessian of a grid map is symmetric", [&] {
    const GridMap F = random_torus_map(rng, ManifoldModel::hyperbolic(2, 1.0), 16, 0.3);
    double worst = 0.0;
    for (int node = 0; node < F.grid.count(); node += 7) {
      const Tensor3 H = map_hessian(F, node);
      for (int c = 0; c < F.dim_target(); ++c) worst = std::max(worst, std::abs(H[c](0, 1) - H[c](1, 0)));
    }
    return CheckResult{"", "", worst < 1e-12, "max asymmetry " + sci(worst)};
  });

  // flow
  add("flow", "constant and linear data are stationary", [&] {
    const ManifoldModel T2 = ManifoldModel::flat_torus(2, {2 * kPi, 2 * kPi, 0.0});
    const Grid g = make_grid(T2, {16, 16});
    Vec c0 = random_point(rng, ManifoldModel::hyperbolic(2, 1.0)).x;
    const GridMap C = make_map(T2, ManifoldModel::hyperbolic(2, 1.0), g, [&](const Vec&) { return ChartPoint{c0, 0}; });
    Mat A(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) A(i, j) = rng.uniform(-0.3, 0.3);
    GridMap L = make_map(T2, ManifoldModel::euclidean(2), g, [&](const Vec& x) { return ChartPoint{Vec(A.transpose() * x), 0}; });
    L.winding[0] = A.row(0).transpose() * (2 * kPi);
    L.winding[1] = A.row(1).transpose() * (2 * kPi);
    double worst = 0.0;
    for (const GridMap* F : {&C, static_cast<const GridMap*>(&L)}) {
      Integrator it(make_state(*F));
      for (int k = 0; k < 100; ++k) {
        const GridMap before = it.state().fmap;
        it.advance();
        worst = std::max(worst, sup_diff(before, it.state().fmap));
      }
    }
    return CheckResult{"", "", worst < 1e-12, "max drift per step " + sci(worst)};
  });
  add("flow", "accepted steps keep the guard, eta never increases", [&] {
    const GridMap F = random_torus_map(rng, ManifoldModel::hyperbolic(2, 1.0), 16, 0.25);
    RunOptions ro;
    ro.stop.t_max = 0.5;
    ro.record_every = 1000000;
    const Trajectory tr = run(make_state(F), ro);
    double worst_lam = 0.0, rise = -1.0, lowest = std::numeric_limits<double>::infinity();
    for (const auto& s : tr.steps) {
      worst_lam = std::max(worst_lam, s.max_lambda_sq);
      if (std::isfinite(lowest)) rise = std::max(rise, s.eta - lowest);
      lowest = std::min(lowest, s.eta);
    }
    return CheckResult{"", "", worst_lam <= 1.0 - kDefaultGuard && rise <= 1e-8,
                       "max lambda^2 " + sci(worst_lam) + ", max eta rise " + sci(rise) + " over " +
                           std::to_string(tr.steps.size()) + " states"};
  });
  add("flow", "rho for the space-form pairs", [&] {
    const auto S1 = ManifoldModel::round_sphere(2, 1.0, ChartKind::LatLong);
    const auto S2 = ManifoldModel::round_sphere(2, 2.0, ChartKind::LatLong);
    const auto T1 = ManifoldModel::round_sphere(2, 1.0, ChartKind::Stereographic);
    const double a = compute_rho(S1, T1).rho, b = compute_rho(S2, T1).rho;
    const double c = compute_rho(S1, ManifoldModel::hyperbolic(2, 1.0)).rho;
    const double d = compute_rho(ManifoldModel::flat_torus(2, {1.0, 1.0, 0.0}), ManifoldModel::euclidean(2)).rho;
    const bool ok = std::abs(a - 1.0) < 1e-15 && std::abs(b - 0.25) < 1e-15 && std::isinf(c) && std::isinf(d);
    return CheckResult{"", "", ok, "rho = " + format_real(a) + ", " + format_real(b) + ", " + format_real(c) + ", " + format_real(d)};
  });

  // diagnostics: the gradient identity is where a frame sign error shows
  const RandomTorusMap RM(rng, ManifoldModel::euclidean(2), 0.25, 0.5);
  const GridMap R = RM.sample(32);
  add("diagnostics", "gradient identity residual converges under h -> h/2", [&] {
    const double r64 = grad_identity_residual(make_state(RM.sample(64)), frames).max;
    const double r128 = grad_identity_residual(make_state(RM.sample(128)), frames).max;
    const double order = std::log2(r64 / r128);
    return CheckResult{"", "", order >= 1.8,
                       "max residual " + sci(r64) + " at 64^2, " + sci(r128) + " at 128^2, order " + sci(order)};
  });
  add("diagnostics", "curvature sum vanishes on flat factors", [&] {
    RunOptions ro;
    ro.stop.t_max = 0.0;
    ro.stop.max_steps = 0;
    ro.record_every = 1;
    const Trajectory tr = run(make_state(R), ro);
    const RecordReport r = evaluate_record(tr.records.front());
    return CheckResult{"", "", r.max_abs_QR <= 1e-14, "max |Q_R| " + sci(r.max_abs_QR)};
  });
  add("diagnostics", "phi energies vanish on constants and grow with the map", [&] {
    const GridMap C = make_map(R.domain, R.target, R.grid, [](const Vec&) { return ChartPoint{Vec::Zero(2), 0}; });
    bool ok = true;
    for (Phi p : {Phi::Sum, Phi::Max, Phi::Product}) ok = ok && phi_energy(C, p) == 0.0 && phi_energy(R, p) > 0.0;
    return CheckResult{"", "", ok, "sum, max, product"};
  });

  // cli
  add("cli", "config errors name the line and key", [&] {
    bool ok = false;
    std::string msg;
    try {
      parse_run_config(Config::parse("preset = torus-sine\n\nflow.t_max = soon\n"));
    } catch (const ConfigError& e) {
      msg = e.what();
      ok = msg.find("line 3") != std::string::npos && msg.find("flow.t_max") != std::string::npos;
    }
    return CheckResult{"", "", ok, msg};
  });
  add("cli", "identical config gives identical csv and snapshots", [&] {
    RunConfig rc = preset_config("torus-sine");
    rc.res = {16, 16};
    rc.stop.t_max = 0.05;
    rc.stop.require_convergence = false;
    rc.record_every = 5;
    const ScenarioResult a = run_scenario(rc), b = run_scenario(rc);
    const bool ok = !a.csv.empty() && a.csv == b.csv && write_snapshot(a.final_map) == write_snapshot(b.final_map);
    return CheckResult{"", "", ok, std::to_string(a.records.size()) + " records"};
  });
  return rep;
}

}  // namespace spacegraph
