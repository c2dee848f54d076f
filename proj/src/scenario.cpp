#include "spacegraph/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "spacegraph/errors.hpp"
#include "spacegraph/format.hpp"
#include "spacegraph/parallel.hpp"

namespace spacegraph {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

// "SpacelikeViolation: ..." → "SpacelikeViolation"
std::string error_kind(const std::exception& e) {
  const std::string w = e.what();
  const auto colon = w.find(':');
  return colon == std::string::npos ? "Error" : w.substr(0, colon);
}

// Non-finite values have no JSON literal.
ordered_json num(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(format_real(v)); }

ordered_json record_json(const DiagnosticsRecord& r) {
  return {{"t", num(r.t)},
          {"eta", num(r.eta)},
          {"lambda_max_sq", num(r.lambda_max_sq)},
          {"image_diameter", num(r.image_diameter)},
          {"phi_energy", num(r.phi_energy)},
          {"total_volume", num(r.total_volume)}};
}

RunChecks summarize_checks(const std::vector<StepTelemetry>& steps, const std::vector<RecordReport>& recs) {
  RunChecks c;
  double lowest = std::numeric_limits<double>::infinity();
  c.max_eta_increase = -std::numeric_limits<double>::infinity();
  c.min_volume_increment = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < steps.size(); ++k) {
    if (k > 0) {
      c.max_eta_increase = std::max(c.max_eta_increase, steps[k].eta - lowest);
      c.min_volume_increment =
          std::min(c.min_volume_increment, (steps[k].volume - steps[k - 1].volume) / steps[k - 1].volume);
    }
    lowest = std::min(lowest, steps[k].eta);
    c.max_lambda_sq = std::max(c.max_lambda_sq, steps[k].max_lambda_sq);
  }
  if (steps.size() < 2) c.max_eta_increase = c.min_volume_increment = 0.0;
  c.min_bracket_margin = recs.empty() ? 0.0 : std::numeric_limits<double>::infinity();
  c.max_lambda_bound_excess = recs.empty() ? 0.0 : -std::numeric_limits<double>::infinity();
  for (const RecordReport& r : recs) {
    c.min_bracket_margin = std::min(c.min_bracket_margin, r.bracket_margin);
    c.max_abs_QR = std::max(c.max_abs_QR, r.max_abs_QR);
    c.max_lambda_bound_excess = std::max(c.max_lambda_bound_excess, r.lambda_bound_excess);
    c.max_residual_grad_identity = std::max(c.max_residual_grad_identity, r.rec.residual_grad_identity);
    c.max_residual_lncosh = std::max(c.max_residual_lncosh, r.rec.residual_lncosh_evolution);
    c.max_residual_volume_law = std::max(c.max_residual_volume_law, r.rec.residual_volume_law);
  }
  return c;
}

ordered_json manifest_json(const RunConfig& rc, const ScenarioResult& R) {
  ordered_json cfg = ordered_json::object();
  const std::string canon = rc.canonical();
  size_t pos = 0;
  while (pos < canon.size()) {
    const size_t end = canon.find('\n', pos);
    const std::string line = canon.substr(pos, end - pos);
    const size_t eq = line.find(" = ");
    cfg[line.substr(0, eq)] = line.substr(eq + 3);
    pos = end + 1;
  }
  ordered_json m;
  m["config_hash"] = config_hash(canon);
  m["preset"] = rc.preset;
  m["status"] = R.status;
  if (!R.message.empty()) m["message"] = R.message;
  m["termination"] = R.termination;
  m["step_count"] = R.steps.empty() ? 0 : R.steps.back().step;
  m["t_final"] = num(R.steps.empty() ? 0.0 : R.steps.back().t);
  m["records"] = R.records.size();
  m["rho"] = num(R.rho);
  m["threads"] = thread_count();
  m["runtime_seconds"] = R.seconds;
  if (!R.records.empty()) {
    m["initial"] = record_json(R.records.front().rec);
    m["final"] = record_json(R.records.back().rec);
  }
  const RunChecks& c = R.checks;
  m["checks"] = {{"max_eta_increase", num(c.max_eta_increase)},
                 {"max_lambda_sq", num(c.max_lambda_sq)},
                 {"min_relative_volume_increment", num(c.min_volume_increment)},
                 {"min_bracket_margin", num(c.min_bracket_margin)},
                 {"max_abs_QR", num(c.max_abs_QR)},
                 {"max_lambda_bound_excess", num(c.max_lambda_bound_excess)},
                 {"max_residual_grad_identity", num(c.max_residual_grad_identity)},
                 {"max_residual_lncosh_evolution", num(c.max_residual_lncosh)},
                 {"max_residual_volume_law", num(c.max_residual_volume_law)}};
  if (R.has_fit)
    m["decay_fit"] = {{"already_converged", R.fit.already_converged},
                      {"rate", num(R.fit.rate)},
                      {"r2", num(R.fit.r2)},
                      {"t_begin", num(R.fit.t_begin)},
                      {"t_end", num(R.fit.t_end)},
                      {"points", R.fit.points}};
  else if (!R.fit_error.empty())
    m["decay_fit"] = {{"error", R.fit_error}};
  m["config"] = cfg;
  return m;
}

}  // namespace

FlowState initial_state(const RunConfig& rc, double* rho_used) {
  const GridMap F = build_initial_map(rc);
  FlowState s;
  double rho = 1.0;
  try {
    if (rc.rescale) {
      RescaledProblem P = build_rescaled_problem(F, rc.guard, rc.flow.safety);
      s = std::move(P.state);
      rho = P.rho_used;
    } else {
      s = make_state(F, rc.guard, rc.flow.safety);
    }
  } catch (const NotSpacelikeError& e) {
    rc.fail("map.amplitude", e.what());
  } catch (const HypothesisError& e) {
    rc.fail(rc.lines.count("map.amplitude") ? "map.amplitude" : "target.rescale", e.what());
  }
  if (rc.fixed_dt) s.dt = rc.dt;
  if (rho_used) *rho_used = rho;
  return s;
}

ScenarioResult run_scenario(const RunConfig& rc, const std::string& out_dir) {
  if (rc.threads > 0) set_thread_count(rc.threads);
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioResult R;
  FlowState s0 = initial_state(rc, &R.rho);
  R.initial = s0.fmap;
  R.final_map = s0.fmap;

  const bool snapshots = !out_dir.empty() && rc.write_snapshots;
  if (!out_dir.empty()) fs::create_directories(fs::path(out_dir));
  if (snapshots) fs::create_directories(fs::path(out_dir) / "snapshots");

  RunOptions ro;
  ro.flow = rc.flow;
  ro.stop = rc.stop;
  ro.stop.require_convergence = false;  // judged below, after the artifacts are in
  ro.record_every = rc.record_every;
  long last_step = -1;
  ro.on_record = [&](const RecordWindow& w) {
    R.records.push_back(evaluate_record(w, rc.diagnostics));
    const FlowState& s = w.at();
    if (snapshots) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06ld.txt", s.step_index);
      write_file(fs::path(out_dir) / "snapshots" / name, write_snapshot(s.fmap));
    }
    if (s.step_index > last_step) {
      last_step = s.step_index;
      R.final_map = s.fmap;
    }
  };

  R.status = "ok";
  try {
    Trajectory tr = run(s0, ro);
    R.steps = std::move(tr.steps);
    R.termination = tr.termination;
    if (rc.stop.require_convergence && tr.termination != "converged") {
      R.status = "NonConvergence";
      R.message = tr.termination + " reached before the stopping tolerances";
      R.exit_code = 1;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    R.status = error_kind(e);
    R.message = e.what();
    R.exit_code = 1;
  }
  std::stable_sort(R.records.begin(), R.records.end(),
                   [](const RecordReport& a, const RecordReport& b) { return a.step < b.step; });

  R.csv = csv_header() + "\n";
  for (const RecordReport& r : R.records) R.csv += csv_row(r.rec) + "\n";

  if (R.termination == "converged") {
    std::vector<DiagnosticsRecord> recs;
    for (const RecordReport& r : R.records) recs.push_back(r.rec);
    try {
      R.fit = decay_fit(R.steps, recs);
      R.has_fit = true;
    } catch (const InsufficientDecayError& e) {
      R.fit_error = e.what();
    }
  }
  R.checks = summarize_checks(R.steps, R.records);
  R.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!out_dir.empty()) {
    write_file(fs::path(out_dir) / "diagnostics.csv", R.csv);
    write_file(fs::path(out_dir) / "manifest.json", manifest_json(rc, R).dump(2) + "\n");
  }
  return R;
}

std::string RefinementTable::csv() const {
  std::string s = "level,res0,res1,h,dt,steps,residual_grad_identity,residual_lncosh_evolution,residual_volume_law\n";
  for (size_t l = 0; l < levels.size(); ++l) {
    const RefinementLevel& L = levels[l];
    s += std::to_string(l) + "," + std::to_string(L.res[0]) + "," + std::to_string(L.res[1]) + "," +
         format_real(L.h) + "," + format_real(L.dt) + "," + std::to_string(L.steps) + "," +
         format_real(L.grad_identity) + "," + format_real(L.lncosh_evolution) + "," + format_real(L.volume_law) + "\n";
  }
  return s;
}

namespace {

std::vector<double> pair_orders(const std::vector<double>& r) {
  std::vector<double> out;
  for (size_t l = 0; l + 1 < r.size(); ++l)
    out.push_back(r[l] > 0.0 && r[l + 1] > 0.0 ? std::log2(r[l] / r[l + 1])
                                               : std::numeric_limits<double>::quiet_NaN());
  return out;
}

// slope of log r against log h: the order p of r ∝ h^p
double fitted_order(const std::vector<double>& h, const std::vector<double>& r) {
  const size_t n = r.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!(r[i] > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const double x = std::log(h[i]), y = std::log(r[i]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

RefinementTable refinement_study(const RunConfig& rc, int levels, const std::string& out_dir) {
  if (levels < 2 || levels > 4) throw ConfigError("refinement levels must be 2, 3 or 4");
  if (rc.map == MapKind::Snapshot) rc.fail("map.kind", "refinement studies resample the initial map; snapshots have a fixed grid");
  if (rc.threads > 0) set_thread_count(rc.threads);
  RefinementTable T;
  T.t = rc.refine_t;

  const FlowState base = initial_state(rc);
  double dt0 = rc.fixed_dt ? rc.dt : base.dt;
  const long K0 = T.t > 0.0 ? static_cast<long>(std::ceil(T.t / dt0 - 1e-9)) : 0;
  if (K0 > 0) dt0 = T.t / K0;

  DiagnosticsOptions opts = rc.diagnostics;
  opts.diameter = false;
  opts.grad_identity = opts.lncosh_evolution = opts.volume_law = true;
  FlowOptions fo = rc.flow;
  fo.auto_dt = false;
  fo.max_halvings = 0;  // a halved step would break the uniform window
  std::vector<double> hs, rg, rl, rv;
  for (int l = 0; l <= levels; ++l) {
    RunConfig r = rc;
    r.res = {rc.res[0] << l, rc.domain.dim == 1 ? 1 : rc.res[1] << l};
    FlowState s = initial_state(r);
    s.dt = dt0 / std::pow(4.0, l);
    const long K = K0 << (2 * l);
    Integrator it(s, fo);
    RecordWindow w;
    w.centered = K > 0;
    for (long k = 0; k + 1 < K; ++k) it.advance();
    w.a = it.state();
    it.advance();
    w.b = it.state();
    it.advance();
    w.c = it.state();
    const RecordReport rep = evaluate_record(w, opts);

    RefinementLevel L;
    L.res = r.res;
    L.h = s.fmap.grid.h[0];
    L.dt = s.dt;
    L.steps = K;
    L.grad_identity = rep.rec.residual_grad_identity;
    L.lncosh_evolution = rep.rec.residual_lncosh_evolution;
    L.volume_law = rep.rec.residual_volume_law;
    T.levels.push_back(L);
    hs.push_back(L.h);
    rg.push_back(L.grad_identity);
    rl.push_back(L.lncosh_evolution);
    rv.push_back(L.volume_law);
  }
  T.order_grad = pair_orders(rg);
  T.order_lncosh = pair_orders(rl);
  T.order_volume = pair_orders(rv);
  T.fit_grad = fitted_order(hs, rg);
  T.fit_lncosh = fitted_order(hs, rl);
  T.fit_volume = fitted_order(hs, rv);

  if (!out_dir.empty()) {
    fs::create_directories(fs::path(out_dir));
    write_file(fs::path(out_dir) / "refinement.csv", T.csv());
    auto arr = [](const std::vector<double>& v) {
      ordered_json a = ordered_json::array();
      for (double x : v) a.push_back(num(x));
      return a;
    };
    ordered_json m;
    m["config_hash"] = config_hash(rc.canonical());
    m["preset"] = rc.preset;
    m["t"] = T.t;
    m["levels"] = levels;
    m["orders"] = {{"grad_identity", arr(T.order_grad)},
                   {"lncosh_evolution", arr(T.order_lncosh)},
                   {"volume_law", arr(T.order_volume)}};
    m["fitted_order"] = {{"grad_identity", num(T.fit_grad)},
                         {"lncosh_evolution", num(T.fit_lncosh)},
                         {"volume_law", num(T.fit_volume)}};
    write_file(fs::path(out_dir) / "manifest.json", m.dump(2) + "\n");
  }
  return T;
}

}  // namespace spacegraph
