#pragma once

#include <string>
#include <vector>

#include "spacegraph/config.hpp"

namespace spacegraph {

// Checks over a finished run, evaluated on every accepted step (η, λ₁²,
// volume) or on every record (brackets, curvature sums).
struct RunChecks {
  double max_eta_increase = 0.0;      // max over s > t of η_s − η_t, steps
  double max_lambda_sq = 0.0;         // over steps
  double min_volume_increment = 0.0;  // min (V_{k+1} − V_k) / V_k, steps
  double min_bracket_margin = 0.0;    // Q_B − (1 − λ₁²)‖B‖², records
  double max_abs_QR = 0.0;            // records
  double max_lambda_bound_excess = 0.0;  // λ₁² − (η² − 1)/η², records
  double max_residual_grad_identity = 0.0, max_residual_lncosh = 0.0, max_residual_volume_law = 0.0;
};

struct ScenarioResult {
  int exit_code = 0;        // 0 success, 1 flow failure (spacelike violation, no convergence)
  std::string status;       // ok | SpacelikeViolation | NonConvergence | ...
  std::string message;
  std::string termination;  // converged | t_max | max_steps, empty when the flow aborted
  double rho = 0.0;         // rescaling factor applied to the target (1 if none)
  std::vector<StepTelemetry> steps;
  std::vector<RecordReport> records;
  std::string csv;          // diagnostics.csv contents
  GridMap initial, final_map;
  bool has_fit = false;
  DecayFit fit;
  std::string fit_error;
  RunChecks checks;
  double seconds = 0.0;
};

// Builds the initial state of a configuration (rescaled when requested).
FlowState initial_state(const RunConfig& rc, double* rho_used = nullptr);

// Runs the flow and, when `out_dir` is not empty, writes manifest.json,
// diagnostics.csv and snapshots/step_%06d.txt (one per record) under it.
// Flow failures are reported through the exit code, configuration problems
// raise ConfigError.
ScenarioResult run_scenario(const RunConfig& rc, const std::string& out_dir = "");

struct RefinementLevel {
  std::array<int, 2> res{0, 0};
  double h = 0.0, dt = 0.0;
  long steps = 0;
  double grad_identity = 0.0, lncosh_evolution = 0.0, volume_law = 0.0;
};

struct RefinementTable {
  double t = 0.0;
  std::vector<RefinementLevel> levels;
  // log₂ of successive ratios; NaN when a residual is zero
  std::vector<double> order_grad, order_lncosh, order_volume;
  // least-squares slope of log residual against log h over all levels
  double fit_grad = 0.0, fit_lncosh = 0.0, fit_volume = 0.0;
  std::string csv() const;
};

// Evaluates the three residuals of the config's initial map evolved to
// refine_t, at the base resolution and `levels` ∈ {2, 3, 4} halvings of h,
// with dt scaled by 1/4 per halving so that every level lands on refine_t.
RefinementTable refinement_study(const RunConfig& rc, int levels, const std::string& out_dir = "");

struct CheckResult {
  std::string module, name;
  bool pass = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool all_pass() const;
  std::string text() const;  // one line per check
};

// Every module invariant on instances drawn from one seeded generator.
// `mutate_frames` reverses the leading image direction of the frames used by
// the second fundamental form, which the gradient identity has to catch.
VerifyReport verify_suite(long seed, bool mutate_frames = false);

}  // namespace spacegraph
