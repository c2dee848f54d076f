#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "spacegraph/manifold.hpp"

namespace spacegraph {

constexpr double kRankFloor = 1e-14;       // λ² below this counts as rank deficient
constexpr double kDefaultGuard = 1e-3;     // spacelike margin ε_guard

// Structured lattice over the domain chart. Flat tori use a periodic box with
// res[a] nodes per axis. The lat-long sphere uses res[0] colatitude intervals
// (res[0]+1 rows, the first and last being pole rows) and res[1] periodic
// longitude columns.
struct Grid {
  int m = 1;
  std::array<int, 2> res{1, 1};
  std::array<int, 2> n{1, 1};
  std::array<double, 2> h{1.0, 1.0};
  bool latlong = false;

  int count() const { return n[0] * n[1]; }
  int index(int i0, int i1) const { return i0 * n[1] + i1; }
  int row(int node) const { return node / n[1]; }
  int col(int node) const { return node % n[1]; }
  bool is_pole(int node) const {
    return latlong && (row(node) == 0 || row(node) == n[0] - 1);
  }
  Vec coord(int node) const;
  // Nodes whose stencil stays at least `margin` rows away from the poles.
  bool interior(int node, int margin) const {
    return !latlong || (row(node) >= margin && row(node) <= n[0] - 1 - margin);
  }
};

Grid make_grid(const ManifoldModel& domain, std::array<int, 2> res);

struct GridMap {
  ManifoldModel domain;
  ManifoldModel target;
  Grid grid;
  std::vector<double> values;  // count() * target.dim chart coordinates
  std::vector<int> tags;       // active target chart per node
  // Jump of the lifted target coordinates across each periodic domain axis;
  // nonzero only for flat targets (for example linear maps between tori).
  std::array<Vec, 2> winding;

  GridMap() = default;
  GridMap(const ManifoldModel& domain, const ManifoldModel& target, const Grid& grid);

  int dim_target() const { return target.dim; }
  ChartPoint at(int node) const;
  void set(int node, const ChartPoint& p);
};

// Samples f at every node (pole rows included) from domain chart coordinates.
GridMap make_map(const ManifoldModel& domain, const ManifoldModel& target, const Grid& grid,
                 const std::function<ChartPoint(const Vec&)>& f);

// First and second chart derivatives of f at a node, with all stencil values
// expressed in the node's own chart.
struct Jet {
  ChartPoint f;
  Mat df;      // m×n, df(i, γ) = ∂f^γ/∂x^i
  Tensor3 d2;  // d2[γ](i, j) = ∂²f^γ/∂x^i∂x^j
};

Jet local_jet(const GridMap& fmap, int node);

// Derivative stencil at a node as a list of lattice offsets with weights
// w = {∂₀, ∂₁, ∂₀₀, ∂₁₁, ∂₀₁}, applied to f(offset) − f(node). Its weights
// are the ones local_jet uses; nodes of one row share the same stencil.
struct StencilEntry {
  int o0 = 0, o1 = 0;
  std::array<double, 5> w{};
};
std::vector<StencilEntry> node_stencil(const Grid& grid, int node);

// m×n array of partial derivatives at a node.
Mat differential(const GridMap& fmap, int node);

// Partial derivatives of a scalar node field (periodic/pole stencils as for f).
Vec scalar_gradient(const Grid& grid, const std::vector<double>& field, int node);

struct FrameOptions {
  // Mutation-test hook: reverses the orientation of the leading image
  // direction, breaking the convention df(a_i) = -λ_i a_{m+i} for i = 1.
  bool flip_leading_image = false;
};

struct Spectrum {
  Mat pullback;    // f*g₂ in the g₁-orthonormalized chart basis (m×m)
  Vec lambda_sq;   // decreasing
  Vec lambda;      // nonnegative square roots
  int rank = 0;    // number of λ² above the rank floor
  Mat frame_a;     // columns a_i, g₁-orthonormal eigenvectors (chart components)
  Mat frame_b;     // columns a_{m+α}, g₂-orthonormal target frame (chart components)
};

// Symmetric eigendecomposition by cyclic Jacobi sweeps; eigenvalues sorted
// decreasing, ties keep sweep order.
void jacobi_eigen(const Mat& A, Vec& values, Mat& vectors);

Spectrum pullback_and_spectrum(const Mat& g1, const Mat& g2, const Mat& df,
                               const FrameOptions& opts = {});

double cosh_theta(const Vec& lambda_sq);
// sqrt(det g₁ / det g): the volume-density form of the same quantity.
double cosh_theta_from_metrics(const Mat& g1, const Mat& g);
// cosh²θ − 1 evaluated without cancellation.
double cosh_sq_minus_one(const Vec& lambda_sq);
// Largest generalized eigenvalue of P relative to g₁ (closed form for m ≤ 2).
double largest_lambda_sq(const Mat& g1, const Mat& P);

struct PointGeometry {
  ChartPoint p;    // domain point
  ChartPoint fp;   // image point
  Mat df;
  Mat g1, g2;
  Mat pullback_chart;  // f*g₂ in the chart basis
  Spectrum spec;
  Mat graph_metric;    // g = g₁ − f*g₂
  Mat graph_metric_inv;
  double cosh_theta = 1.0;
};

PointGeometry point_geometry(const ManifoldModel& domain, const ManifoldModel& target,
                             const ChartPoint& p, const ChartPoint& fp, const Mat& df,
                             const FrameOptions& opts = {});
PointGeometry point_geometry(const GridMap& fmap, int node, const FrameOptions& opts = {});

struct SpacelikeReport {
  bool ok = true;
  double worst_lambda_sq = 0.0;
  int worst_node = -1;
};

// ok iff max λ₁² < 1 − guard; a node sitting exactly on the margin fails.
SpacelikeReport spacelike_check(const GridMap& fmap, double guard = kDefaultGuard);

struct WangReport {
  std::vector<signed char> node;  // 1 holds, 0 fails, -1 pole row (not evaluated)
  bool all = true;
};

bool wang_predicate(const Vec& lambda_sq);
WangReport wang_condition(const GridMap& fmap);

// Pole rows are not stencil centers; their value is the limit obtained from
// the two neighbouring rings: f_pole = (4 avg(ring 1) − avg(ring 2)) / 3.
void fill_pole_rows(GridMap& fmap);

// Text snapshot: one header line, then one line per node (tag + coordinates),
// 17 significant digits. Reading back reproduces the map bit for bit.
std::string write_snapshot(const GridMap& fmap);
GridMap read_snapshot(const std::string& text);
void save_snapshot(const GridMap& fmap, const std::string& path);
GridMap load_snapshot(const std::string& path);

}  // namespace spacegraph
