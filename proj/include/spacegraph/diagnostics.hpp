#pragma once

#include <string>
#include <vector>

#include "spacegraph/flow.hpp"

namespace spacegraph {

struct DiagnosticsRecord {
  double t = 0.0;
  double eta = 1.0;  // max cosh θ
  double lambda_max_sq = 0.0;
  double normB_sq_max = 0.0;
  double normH_sq_max = 0.0;
  double total_volume = 0.0;
  double phi_energy = 0.0;
  double image_diameter = 0.0;
  double residual_grad_identity = 0.0;
  double residual_lncosh_evolution = 0.0;
  double residual_volume_law = 0.0;
};

// φ(λ₁², …, λ_m²), each vanishing only at λ = 0.
enum class Phi { Sum, Max, Product };  // Σλ², max λ², ∏(1 + λ²) − 1

double phi_value(Phi phi, const Vec& lambda_sq);
Phi parse_phi(const std::string& name);  // sum | max | product
std::string phi_name(Phi phi);

// ∫ φ(λ²) dμ₁ over the domain.
double phi_energy(const GridMap& fmap, Phi phi);

// Per-node residual; `used` marks the nodes that entered `max`.
struct ResidualField {
  std::vector<double> value;
  std::vector<char> used;
  double max = 0.0;
  int worst = -1;
};

// | |∇cosh θ|²_g / cosh²θ − Σ_k (Σ_i λ_i h^{m+i}_ik)² | with the discrete
// g-gradient of the node field cosh θ.
// Lat-long grids leave out the rows next to the poles.
ResidualField grad_identity_residual(const FlowState& state);
ResidualField grad_identity_residual(const FlowState& state, const FrameOptions& frames);

// [∂_t ln cosh θ + d ln cosh θ(Z)] − [Δ_g ln cosh θ − Q_B − Q_R] at fixed grid
// nodes, Δ_g in divergence form. Centered windows evaluate at `cur` with a
// centered difference; otherwise the one-sided difference at `prev` is used.
// Throws NonUniformSamplingError unless the three times are equally spaced.
ResidualField lncosh_evolution_residual(const FlowState& prev, const FlowState& cur,
                                        const FlowState& next, bool centered = true);

// |dVol/dt − ∫‖H‖²dμ| / max(1, ∫‖H‖²dμ), dVol/dt from the window's outer states.
double volume_law_residual(const RecordWindow& w);

// Largest g₂-distance between node images, over at most `max_nodes` nodes
// taken at a uniform stride.
double image_diameter(const GridMap& fmap, int max_nodes = 512);

struct DecayFit {
  bool already_converged = false;  // η ≡ 1 from the start
  double rate = 0.0;               // ĉ, with η² − 1 ≈ C e^{−2ĉt} on the tail
  double slope = 0.0;              // of ln(η² − 1) against t
  double r2 = 1.0;
  double t_begin = 0.0, t_end = 0.0;
  long points = 0;
  // Same fit of max ‖B‖² over the records in the window; rate τ with ‖B‖² ≈ C e^{−τt}.
  bool has_B = false;
  double B_rate = 0.0, B_r2 = 1.0;
};

// Least squares of ln(η² − 1) against t from the first step where η² − 1 has
// dropped to 1e-2 of its initial value, down to `floor`. Throws
// InsufficientDecayError when that level is never reached.
DecayFit decay_fit(const std::vector<StepTelemetry>& steps,
                   const std::vector<DiagnosticsRecord>& records = {}, double floor = 1e-13);

// Everything evaluated on one record window.
struct RecordReport {
  DiagnosticsRecord rec;
  long step = 0;
  bool centered = true;
  // min over nodes of Q_B − (1 − λ₁²)‖B‖²
  double bracket_margin = 0.0;
  double min_QR = 0.0, max_abs_QR = 0.0;
  // max over nodes of λ₁² − (η² − 1)/η²
  double lambda_bound_excess = 0.0;
};

struct DiagnosticsOptions {
  Phi phi = Phi::Sum;
  bool grad_identity = true;
  bool lncosh_evolution = true;
  bool volume_law = true;
  bool diameter = true;
  FrameOptions frames;  // mutation-test hook, see FrameOptions
};

RecordReport evaluate_record(const RecordWindow& w, const DiagnosticsOptions& opts = {});

extern const char* const kDiagnosticsColumns[11];

std::string csv_header();
std::string csv_row(const DiagnosticsRecord& r);

}  // namespace spacegraph
