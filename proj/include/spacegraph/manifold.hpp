#pragma once

#include <array>
#include <string>

#include "spacegraph/types.hpp"

namespace spacegraph {

enum class ManifoldKind { FlatTorus, RoundSphere, HyperbolicSpace, EuclideanSpace };

enum class ChartKind { PeriodicBox, LatLong, Stereographic, PoincareBall, Identity };

// A point in the model's chart. `tag` picks one of the two stereographic
// charts on a sphere target (0: projection from the north pole, so the
// origin is the south pole; 1: projection from the south pole). Other charts
// ignore it.
struct ChartPoint {
  Vec x;
  int tag = 0;
};

struct ManifoldModel {
  ManifoldKind kind = ManifoldKind::EuclideanSpace;
  int dim = 1;
  ChartKind chart = ChartKind::Identity;
  std::array<double, kMaxDim> sides{0.0, 0.0, 0.0};  // flat torus periods
  double radius = 1.0;                               // round sphere
  double curvature_c = 1.0;                          // hyperbolic: K = -c
  double scale = 1.0;                                // metric multiplier ρ'

  static ManifoldModel flat_torus(int dim, const std::array<double, kMaxDim>& sides);
  static ManifoldModel round_sphere(int dim, double radius, ChartKind chart);
  static ManifoldModel hyperbolic(int dim, double c);
  static ManifoldModel euclidean(int dim);

  ManifoldModel scaled(double factor) const;

  // Constant k with g = k * (unit model metric in this chart): r²ρ' for the
  // sphere, ρ'/c for hyperbolic space, ρ' otherwise.
  double metric_factor() const;
  double sectional_curvature() const;

  std::string descriptor() const;
  static ManifoldModel from_descriptor(const std::string& text);
};

bool operator==(const ManifoldModel& a, const ManifoldModel& b);

// Throws ChartDomainError when the point is outside the chart.
void check_chart(const ManifoldModel& M, const ChartPoint& p);

Mat metric_at(const ManifoldModel& M, const ChartPoint& p);
Tensor3 christoffel_at(const ManifoldModel& M, const ChartPoint& p);

struct CurvatureData {
  double sectional = 0.0;
  double ricci_u = 0.0;  // Ricci(u, u)
  double ricci_v = 0.0;  // Ricci(v, v)
};

CurvatureData curvature_data_at(const ManifoldModel& M, const ChartPoint& p, const Vec& u,
                                const Vec& v);
double ricci_at(const ManifoldModel& M, const ChartPoint& p, const Vec& a);

ChartPoint exp_map(const ManifoldModel& M, const ChartPoint& p, const Vec& v);
double distance(const ManifoldModel& M, const ChartPoint& p, const ChartPoint& q);

// Re-expresses a sphere point in the requested stereographic chart; identity
// for single-chart models.
ChartPoint to_chart(const ManifoldModel& M, const ChartPoint& p, int tag);

// Embedding of sphere models into R^{dim+1} (unit sphere, before scaling) and
// the matching push-forward/pull-back of tangent vectors. Other models use
// their chart coordinates as the ambient space.
AVec embed(const ManifoldModel& M, const ChartPoint& p);
AVec push_vector(const ManifoldModel& M, const ChartPoint& p, const Vec& v);
Vec pull_vector(const ManifoldModel& M, const ChartPoint& p, const AVec& ambient);

// exp_map on plain arrays for the one-chart models (Poincaré ball, flat
// charts). Returns false for sphere charts, which need exp_map.
bool exp_map_single_chart(const ManifoldModel& M, const double* x, const double* v, double* out);

// Gradient of the log conformal factor, σ with g = k e^{2σ} δ, for the
// stereographic and Poincaré charts; zero for flat charts.
Vec conformal_log_gradient(const ManifoldModel& M, const Vec& x);

}  // namespace spacegraph
