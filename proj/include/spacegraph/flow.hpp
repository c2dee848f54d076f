#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "spacegraph/graphgeom.hpp"

namespace spacegraph {

struct FlowState {
  double t = 0.0;
  GridMap fmap;
  double dt = 0.0;
  long step_index = 0;
  double guard = kDefaultGuard;
};

enum class Scheme {
  Euler,  // f ← exp_f(dt W)
  Heun,   // two velocity evaluations, second order in dt
};

struct FlowOptions {
  bool auto_dt = true;     // recompute dt from cfl_dt after every accepted step
  double safety = 0.2;
  Scheme scheme = Scheme::Euler;
  int max_halvings = 8;
  // Low-pass filter of the velocity along lat-long rings near the poles.
  bool polar_filter = true;
};

// Velocity and light telemetry of one state, from a single pass over nodes.
struct VelocityField {
  std::vector<double> W;  // target chart components in each node's chart; 0 on pole rows
  double max_lambda_sq = 0.0;
  int worst_node = -1;
  double max_cosh = 1.0;
  double volume = 0.0;        // ∫ dμ of the graph metric
  double int_normH_sq = 0.0;  // ∫ ‖H‖² dμ
  double max_normH_sq = 0.0;
  bool spacelike = true;      // every node has λ₁² < 1 (the guard is checked separately)
};

// Quadrature weight of a node for ∫ · dx over the chart (pole rows weigh 0).
double node_weight(const Grid& grid, int node);

// Shortest grid step measured in the domain metric. On lat-long grids the
// polar filter keeps the azimuthal resolution at least that of the colatitude
// axis, so the ring step sinθ Δφ does not enter; without the filter it does.
double grid_step_length(const GridMap& fmap, bool polar_filter = true);

// dt = safety · h²_min · (1 − λ₁²_max) / (2m · Λ_g).
double cfl_dt(double h_min, double max_lambda_sq, int m, double safety = 0.2, double lambda_g = 1.0);
double cfl_dt(const FlowState& state, double safety = 0.2);

// Validates the guard and fills dt from cfl_dt. Throws NotSpacelikeError.
FlowState make_state(const GridMap& f0, double guard = kDefaultGuard, double safety = 0.2);

class PolarFilter;

// Owns the per-grid caches (domain geometry, ring filter) and the velocity of
// the current state, so each accepted step costs one velocity pass (two for
// Heun).
class Integrator {
 public:
  Integrator(const FlowState& s0, const FlowOptions& opts = {});
  ~Integrator();
  Integrator(Integrator&&) noexcept;
  Integrator& operator=(Integrator&&) noexcept;

  const FlowState& state() const { return state_; }
  const VelocityField& field() const { return field_; }
  const FlowOptions& options() const { return opts_; }

  // One accepted step of size state().dt, halving on SpacelikeViolation,
  // InjectivityRadiusError or ChartDomainError up to max_halvings times.
  // Returns the dt that was accepted. After the step dt is refreshed from
  // cfl_dt when auto_dt is set and `hold_dt` is false.
  double advance(bool hold_dt = false);
  int rejections() const { return rejections_; }

  VelocityField evaluate(const GridMap& F) const;

 private:
  struct DomainCache;
  bool try_step(double dt, GridMap& out, VelocityField& out_field) const;
  void evaluate_into(const GridMap& F, VelocityField& out) const;
  void evaluate_nodes(const GridMap& F, VelocityField& out) const;
  void reduce_and_filter(const GridMap& F, VelocityField& out) const;

  FlowState state_;
  FlowOptions opts_;
  VelocityField field_;
  std::unique_ptr<DomainCache> cache_;
  std::unique_ptr<PolarFilter> filter_;
  int rejections_ = 0;
  // buffers of the step being attempted, swapped in on acceptance
  GridMap next_map_;
  VelocityField next_field_;
};

VelocityField velocity_field(const GridMap& F, bool polar_filter = true);

FlowState step(const FlowState& state, const FlowOptions& opts = {});

enum class RescaleMode { SpherePositive, NonpositiveTarget };

struct RescalePlan {
  double rho = std::numeric_limits<double>::infinity();
  RescaleMode mode = RescaleMode::NonpositiveTarget;
};

// ρ = min K₁ / sup K₂⁺ when K₁ > 0 and K₂ > 0; +∞ when K₂ ≤ 0 (K₁ ≥ 0).
// Throws HypothesisError for pairs outside both cases.
RescalePlan compute_rho(const ManifoldModel& domain, const ManifoldModel& target);

struct RescaledProblem {
  RescalePlan plan;
  double rho_used = 1.0;  // finite factor applied to the target (1 when ρ = +∞ needs none)
  FlowState state;
};

// Replaces g₂ by g₂/ρ so that the spacelike condition becomes f*g₂ < ρ g₁.
// Throws HypothesisError when f0 breaks f*g₂ < ρ g₁ (guard included).
RescaledProblem build_rescaled_problem(const GridMap& f0, double guard = kDefaultGuard,
                                       double safety = 0.2);

struct StopCriteria {
  double t_max = 1.0;
  double eta_tol = 0.0;  // stop once η − 1 < eta_tol and max ‖H‖ < H_tol
  double H_tol = 0.0;
  long max_steps = -1;
  bool require_convergence = false;  // NonConvergence when t_max is hit first
};

struct StepTelemetry {
  long step = 0;
  double t = 0.0, dt = 0.0;
  double eta = 1.0, max_lambda_sq = 0.0;
  double volume = 0.0, int_normH_sq = 0.0, max_normH_sq = 0.0;
};

// Three consecutive states with equal dt around a recorded step. For step 0
// the window is (0, 1, 2) and `centered` is false. Windows still open when
// the run stops are completed with probe steps outside the trajectory.
struct RecordWindow {
  FlowState a, b, c;
  bool centered = true;
  bool uniform = true;
  const FlowState& at() const { return centered ? b : a; }
};

struct Trajectory {
  std::vector<StepTelemetry> steps;  // every accepted step, starting with the initial state
  std::vector<RecordWindow> records;
  std::string termination;           // converged | t_max | max_steps
  long accepted_steps = 0;
  int rejections = 0;
};

struct RunOptions {
  FlowOptions flow;
  StopCriteria stop;
  int record_every = 10;
  // When set, windows are handed over as they complete instead of stored.
  std::function<void(const RecordWindow&)> on_record;
};

Trajectory run(const FlowState& s0, const RunOptions& opts);

}  // namespace spacegraph
