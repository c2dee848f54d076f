#pragma once

#include "spacegraph/graphgeom.hpp"

namespace spacegraph {

// Hess f^γ_ij = ∂²f^γ/∂x^i∂x^j − Γ₁^k_ij ∂_k f^γ + Γ₂^γ_αβ ∂_i f^α ∂_j f^β
Tensor3 hessian_from_jet(const Jet& jet, const Tensor3& gamma1, const Tensor3& gamma2);
Tensor3 map_hessian(const GridMap& fmap, int node);

struct Velocity {
  Vec W;  // trace of the Hessian with respect to the graph metric
  Vec Z;  // g(Z, X) = g₂(W, df X)
};

Velocity flow_velocity(const PointGeometry& pg, const Tensor3& hess);

struct FundamentalForms {
  Tensor3 h;                        // h[α](i, j), α indexes the target frame a_{m+α}
  double normB_sq = 0.0;
  double normH_sq = 0.0;            // Σ_α (Σ_i h^α_ii)²
  double normH_sq_projection = 0.0; // Σ_α (W^α)² / (1 − λ_α²)
};

FundamentalForms second_fundamental_norms(const PointGeometry& pg, const Tensor3& hess);

// ‖H‖² = g₂(W, W) + g(Z, Z): the normal part of (0, W) without frames.
double mean_curvature_sq(const PointGeometry& pg, const Velocity& v);

// Quadratic bracket of the ln cosh θ evolution.
double bracket_QB(const PointGeometry& pg, const Tensor3& h);
// Curvature sum of the ln cosh θ evolution, built from Ricci₁(a_i, a_i),
// K₁(a_i ∧ a_j) and K₂(a_{m+i} ∧ a_{m+j}).
double curvature_QR(const PointGeometry& pg, const ManifoldModel& domain,
                    const ManifoldModel& target);
// Σ_k (Σ_i λ_i h^{m+i}_{ik})²
double gradient_identity_rhs(const PointGeometry& pg, const Tensor3& h);

struct ExtrinsicData {
  Tensor3 hess;
  Vec W, Z;
  Tensor3 h;
  double normB_sq = 0.0;
  double normH_sq = 0.0;
  double normH_sq_projection = 0.0;
};

struct NodeGeometry {
  PointGeometry pg;
  ExtrinsicData ex;
};

NodeGeometry node_geometry(const GridMap& fmap, int node, const FrameOptions& opts = {});

}  // namespace spacegraph
