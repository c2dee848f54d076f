#include "spacegraph/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "spacegraph/errors.hpp"
#include "spacegraph/extrinsic.hpp"
#include "spacegraph/format.hpp"
#include "spacegraph/parallel.hpp"

namespace spacegraph {

namespace {

// Lat-long residuals skip rows next to the poles. The gradient identity only
// needs its stencils off the one-sided rows. The evolution residual also
// sees the dynamics of those rows and of the ring filter, which leave a
// layer of a fixed number of rows whose error does not shrink with h.
constexpr int kGradMargin = 3;
constexpr int kEvolutionMargin = 7;

struct NodeSummary {
  bool valid = false;  // not a pole row, and spacelike
  Vec lambda_sq;
  double cosh = 1.0, lncosh = 0.0, cosh_sq_m1 = 0.0;
  double sqrt_det_g = 0.0, sqrt_det_g1 = 0.0;
  // filled when `full`
  Mat gi;  // inverse graph metric
  Vec Z;
  double QB = 0.0, QR = 0.0, normB_sq = 0.0, normH_sq = 0.0, grad_rhs = 0.0;
};

std::vector<NodeSummary> summarize(const GridMap& F, bool full, const FrameOptions& frames = {}) {
  const Grid& g = F.grid;
  std::vector<NodeSummary> out(g.count());
  parallel_for(g.count(), [&](int node) {
    if (g.is_pole(node)) return;
    NodeSummary& s = out[node];
    PointGeometry pg;
    NodeGeometry ng;
    if (full) {
      ng = node_geometry(F, node, frames);
      pg = ng.pg;
    } else {
      pg = point_geometry(F, node, frames);
    }
    if (!(pg.spec.lambda_sq(0) < 1.0)) return;
    const double detg = det_small(pg.graph_metric);
    if (!(detg > 0.0)) return;
    s.valid = true;
    s.lambda_sq = pg.spec.lambda_sq;
    s.cosh = pg.cosh_theta;
    s.cosh_sq_m1 = cosh_sq_minus_one(s.lambda_sq);
    // ln cosh θ = ½ ln(1 + (cosh²θ − 1)), exact near slices
    s.lncosh = 0.5 * std::log1p(s.cosh_sq_m1);
    s.sqrt_det_g = std::sqrt(detg);
    s.sqrt_det_g1 = std::sqrt(det_small(pg.g1));
    if (!full) return;
    s.gi = pg.graph_metric_inv;
    s.Z = ng.ex.Z;
    s.QB = bracket_QB(pg, ng.ex.h);
    s.QR = curvature_QR(pg, F.domain, F.target);
    s.normB_sq = ng.ex.normB_sq;
    s.normH_sq = ng.ex.normH_sq;
    s.grad_rhs = gradient_identity_rhs(pg, ng.ex.h);
  });
  return out;
}

std::vector<double> field_of(const std::vector<NodeSummary>& S, double NodeSummary::*member) {
  std::vector<double> f(S.size(), 0.0);
  for (size_t i = 0; i < S.size(); ++i)
    if (S[i].valid) f[i] = S[i].*member;
  return f;
}

void finish(ResidualField& r) {
  r.max = 0.0;
  r.worst = -1;
  for (size_t i = 0; i < r.value.size(); ++i)
    if (r.used[i] && (r.worst < 0 || r.value[i] > r.max)) {
      r.max = r.value[i];
      r.worst = static_cast<int>(i);
    }
}

double volume_of(const Grid& g, const std::vector<NodeSummary>& S) {
  double v = 0.0;
  for (int node = 0; node < g.count(); ++node)
    if (S[node].valid) v += node_weight(g, node) * S[node].sqrt_det_g;
  return v;
}

ResidualField grad_identity_from(const GridMap& F, const std::vector<NodeSummary>& S) {
  const Grid& g = F.grid;
  const std::vector<double> ch = field_of(S, &NodeSummary::cosh);
  ResidualField r;
  r.value.assign(g.count(), 0.0);
  r.used.assign(g.count(), 0);
  parallel_for(g.count(), [&](int node) {
    if (!S[node].valid || !g.interior(node, kGradMargin)) return;
    const Vec grad = scalar_gradient(g, ch, node);
    const double lhs = grad.dot(S[node].gi * grad) / (ch[node] * ch[node]);
    r.value[node] = std::abs(lhs - S[node].grad_rhs);
    r.used[node] = 1;
  });
  finish(r);
  return r;
}

double window_dt(const FlowState& a, const FlowState& b, const FlowState& c) {
  const double d1 = b.t - a.t, d2 = c.t - b.t;
  if (!(d1 > 0.0) || !(d2 > 0.0) || std::abs(d1 - d2) > 1e-9 * std::max(d1, d2))
    throw NonUniformSamplingError("record window times " + format_real(a.t) + ", " + format_real(b.t) +
                                  ", " + format_real(c.t) + " are not equally spaced");
  return 0.5 * (c.t - a.t);
}

// ∂_t of a scalar at the evaluation state: centered at the middle state, or
// the second-order one-sided difference at the first.
double time_derivative(double fa, double fb, double fc, double dt, bool centered) {
  return centered ? (fc - fa) / (2.0 * dt) : (-3.0 * fa + 4.0 * fb - fc) / (2.0 * dt);
}

ResidualField lncosh_from(const GridMap& F, const std::vector<NodeSummary>& Sa,
                          const std::vector<NodeSummary>& Sb, const std::vector<NodeSummary>& Sc,
                          double dt, bool centered) {
  const Grid& g = F.grid;
  const int N = g.count(), m = g.m;
  const std::vector<NodeSummary>& E = centered ? Sb : Sa;
  const std::vector<double> L = field_of(E, &NodeSummary::lncosh);
  // V^i = √det g g^ij ∂_j L, then Δ_g L = ∂_i V^i / √det g
  std::vector<Vec> dL(N);
  std::vector<std::vector<double>> V(m, std::vector<double>(N, 0.0));
  parallel_for(N, [&](int node) {
    if (!E[node].valid) return;
    dL[node] = scalar_gradient(g, L, node);
    const Vec v = E[node].sqrt_det_g * (E[node].gi * dL[node]);
    for (int i = 0; i < m; ++i) V[i][node] = v(i);
  });
  ResidualField r;
  r.value.assign(N, 0.0);
  r.used.assign(N, 0);
  parallel_for(N, [&](int node) {
    if (!E[node].valid || !Sa[node].valid || !Sb[node].valid || !Sc[node].valid) return;
    if (!g.interior(node, kEvolutionMargin)) return;
    double div = 0.0;
    for (int i = 0; i < m; ++i) div += scalar_gradient(g, V[i], node)(i);
    const double lap = div / E[node].sqrt_det_g;
    const double dtL = time_derivative(Sa[node].lncosh, Sb[node].lncosh, Sc[node].lncosh, dt, centered);
    const double lhs = dtL + dL[node].dot(E[node].Z);
    const double rhs = lap - E[node].QB - E[node].QR;
    r.value[node] = std::abs(lhs - rhs);
    r.used[node] = 1;
  });
  finish(r);
  return r;
}

double volume_law_from(const Grid& g, const std::vector<NodeSummary>& Sa, const std::vector<NodeSummary>& Sb,
                       const std::vector<NodeSummary>& Sc, double dt, bool centered) {
  const std::vector<NodeSummary>& E = centered ? Sb : Sa;
  double intH = 0.0;
  for (int node = 0; node < g.count(); ++node)
    if (E[node].valid) intH += node_weight(g, node) * E[node].sqrt_det_g * E[node].normH_sq;
  const double dV = time_derivative(volume_of(g, Sa), volume_of(g, Sb), volume_of(g, Sc), dt, centered);
  return std::abs(dV - intH) / std::max(1.0, intH);
}

double phi_energy_from(const GridMap& F, const std::vector<NodeSummary>& S, Phi phi) {
  double e = 0.0;
  for (int node = 0; node < F.grid.count(); ++node)
    if (S[node].valid) e += node_weight(F.grid, node) * S[node].sqrt_det_g1 * phi_value(phi, S[node].lambda_sq);
  return e;
}

struct LineFit {
  double slope = 0.0, r2 = 1.0;
};

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxy / sxx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

}  // namespace

double phi_value(Phi phi, const Vec& lambda_sq) {
  switch (phi) {
    case Phi::Sum:
      return lambda_sq.sum();
    case Phi::Max:
      return lambda_sq.size() ? lambda_sq.maxCoeff() : 0.0;
    case Phi::Product: {
      // ∏(1 + λ²) − 1 without cancellation
      double p = 0.0;
      for (int i = 0; i < lambda_sq.size(); ++i) p = p + lambda_sq(i) + p * lambda_sq(i);
      return p;
    }
  }
  return 0.0;
}

Phi parse_phi(const std::string& name) {
  if (name == "sum") return Phi::Sum;
  if (name == "max") return Phi::Max;
  if (name == "product") return Phi::Product;
  throw ConfigError("unknown phi '" + name + "' (expected sum, max or product)");
}

std::string phi_name(Phi phi) {
  switch (phi) {
    case Phi::Sum:
      return "sum";
    case Phi::Max:
      return "max";
    case Phi::Product:
      return "product";
  }
  return "sum";
}

double phi_energy(const GridMap& F, Phi phi) { return phi_energy_from(F, summarize(F, false), phi); }

ResidualField grad_identity_residual(const FlowState& state) {
  return grad_identity_from(state.fmap, summarize(state.fmap, true));
}

ResidualField grad_identity_residual(const FlowState& state, const FrameOptions& frames) {
  return grad_identity_from(state.fmap, summarize(state.fmap, true, frames));
}

ResidualField lncosh_evolution_residual(const FlowState& prev, const FlowState& cur, const FlowState& next,
                                        bool centered) {
  const double dt = window_dt(prev, cur, next);
  const auto Sa = summarize(prev.fmap, !centered);
  const auto Sb = summarize(cur.fmap, centered);
  const auto Sc = summarize(next.fmap, false);
  return lncosh_from(centered ? cur.fmap : prev.fmap, Sa, Sb, Sc, dt, centered);
}

double volume_law_residual(const RecordWindow& w) {
  const double dt = window_dt(w.a, w.b, w.c);
  const auto Sa = summarize(w.a.fmap, !w.centered);
  const auto Sb = summarize(w.b.fmap, w.centered);
  const auto Sc = summarize(w.c.fmap, false);
  return volume_law_from(w.a.fmap.grid, Sa, Sb, Sc, dt, w.centered);
}

double image_diameter(const GridMap& F, int max_nodes) {
  const int N = F.grid.count();
  const int stride = std::max(1, (N + max_nodes - 1) / std::max(1, max_nodes));
  std::vector<ChartPoint> pts;
  for (int node = 0; node < N; node += stride) pts.push_back(F.at(node));
  const int n = static_cast<int>(pts.size());
  std::vector<double> row_max(n, 0.0);
  parallel_for(
      n,
      [&](int i) {
        for (int j = i + 1; j < n; ++j) row_max[i] = std::max(row_max[i], distance(F.target, pts[i], pts[j]));
      },
      8);
  double d = 0.0;
  for (double v : row_max) d = std::max(d, v);
  return d;
}

DecayFit decay_fit(const std::vector<StepTelemetry>& steps, const std::vector<DiagnosticsRecord>& records,
                   double floor) {
  DecayFit fit;
  if (steps.empty()) throw InsufficientDecayError("empty trajectory");
  auto excess = [](double eta) { return (eta - 1.0) * (eta + 1.0); };
  const double e0 = excess(steps.front().eta);
  if (e0 <= floor) {
    fit.already_converged = true;
    fit.t_begin = fit.t_end = steps.front().t;
    return fit;
  }
  size_t k = 0;
  while (k < steps.size() && excess(steps[k].eta) > 1e-2 * e0) ++k;
  if (k == steps.size())
    throw InsufficientDecayError("eta^2 - 1 stayed above 1e-2 of its initial value " + format_real(e0));
  std::vector<double> x, y;
  for (size_t i = k; i < steps.size(); ++i) {
    const double e = excess(steps[i].eta);
    if (e <= floor) break;
    x.push_back(steps[i].t);
    y.push_back(std::log(e));
  }
  if (x.size() < 3) throw InsufficientDecayError("fewer than three tail points above the floor");
  const LineFit lf = fit_line(x, y);
  fit.slope = lf.slope;
  fit.rate = -0.5 * lf.slope;
  fit.r2 = lf.r2;
  fit.t_begin = x.front();
  fit.t_end = x.back();
  fit.points = static_cast<long>(x.size());
  std::vector<double> bx, by;
  for (const DiagnosticsRecord& r : records)
    if (r.t >= fit.t_begin && r.t <= fit.t_end && r.normB_sq_max > floor) {
      bx.push_back(r.t);
      by.push_back(std::log(r.normB_sq_max));
    }
  if (bx.size() >= 3) {
    const LineFit bf = fit_line(bx, by);
    fit.has_B = true;
    fit.B_rate = -bf.slope;
    fit.B_r2 = bf.r2;
  }
  return fit;
}

RecordReport evaluate_record(const RecordWindow& w, const DiagnosticsOptions& opts) {
  RecordReport rep;
  const FlowState& E = w.at();
  const GridMap& F = E.fmap;
  const Grid& g = F.grid;
  rep.step = E.step_index;
  rep.centered = w.centered;
  const bool need_window = opts.lncosh_evolution || opts.volume_law;
  const double dt = need_window ? window_dt(w.a, w.b, w.c) : 0.0;
  std::vector<NodeSummary> Sa, Sb, Sc;
  (w.centered ? Sb : Sa) = summarize(F, true, opts.frames);
  if (need_window) {
    if (w.centered) Sa = summarize(w.a.fmap, false);
    else Sb = summarize(w.b.fmap, false);
    Sc = summarize(w.c.fmap, false);
  }
  const std::vector<NodeSummary>& S = w.centered ? Sb : Sa;

  DiagnosticsRecord& r = rep.rec;
  r.t = E.t;
  double max_e = 0.0;
  bool first = true;
  for (int node = 0; node < g.count(); ++node) {
    const NodeSummary& s = S[node];
    if (!s.valid) continue;
    max_e = std::max(max_e, s.cosh_sq_m1);
    r.eta = std::max(r.eta, s.cosh);
    r.lambda_max_sq = std::max(r.lambda_max_sq, s.lambda_sq(0));
    r.normB_sq_max = std::max(r.normB_sq_max, s.normB_sq);
    r.normH_sq_max = std::max(r.normH_sq_max, s.normH_sq);
    const double margin = s.QB - (1.0 - s.lambda_sq(0)) * s.normB_sq;
    if (first) {
      rep.bracket_margin = margin;
      rep.min_QR = s.QR;
      first = false;
    }
    rep.bracket_margin = std::min(rep.bracket_margin, margin);
    rep.min_QR = std::min(rep.min_QR, s.QR);
    rep.max_abs_QR = std::max(rep.max_abs_QR, std::abs(s.QR));
  }
  const double bound = max_e / (1.0 + max_e);
  rep.lambda_bound_excess = -bound;
  for (int node = 0; node < g.count(); ++node)
    if (S[node].valid) rep.lambda_bound_excess = std::max(rep.lambda_bound_excess, S[node].lambda_sq(0) - bound);
  r.total_volume = volume_of(g, S);
  r.phi_energy = phi_energy_from(F, S, opts.phi);
  if (opts.diameter) r.image_diameter = image_diameter(F);
  if (opts.grad_identity) r.residual_grad_identity = grad_identity_from(F, S).max;
  if (opts.lncosh_evolution) r.residual_lncosh_evolution = lncosh_from(F, Sa, Sb, Sc, dt, w.centered).max;
  if (opts.volume_law) r.residual_volume_law = volume_law_from(g, Sa, Sb, Sc, dt, w.centered);
  return rep;
}

const char* const kDiagnosticsColumns[11] = {
    "t",           "eta",          "lambda_max_sq",          "normB_sq_max",
    "normH_sq_max", "total_volume", "phi_energy",             "image_diameter",
    "residual_grad_identity", "residual_lncosh_evolution", "residual_volume_law"};

std::string csv_header() {
  std::string s;
  for (int i = 0; i < 11; ++i) {
    if (i) s += ',';
    s += kDiagnosticsColumns[i];
  }
  return s;
}

std::string csv_row(const DiagnosticsRecord& r) {
  const double v[11] = {r.t,
                        r.eta,
                        r.lambda_max_sq,
                        r.normB_sq_max,
                        r.normH_sq_max,
                        r.total_volume,
                        r.phi_energy,
                        r.image_diameter,
                        r.residual_grad_identity,
                        r.residual_lncosh_evolution,
                        r.residual_volume_law};
  std::string s;
  for (int i = 0; i < 11; ++i) {
    if (i) s += ',';
    s += format_real(v[i]);
  }
  return s;
}

}  // namespace spacegraph
