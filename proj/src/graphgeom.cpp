#include "spacegraph/graphgeom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "spacegraph/errors.hpp"
#include "spacegraph/format.hpp"
#include "spacegraph/parallel.hpp"

namespace spacegraph {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Stencil {
  int len = 0;
  int off[5];
  double w[5];
  void add(int o, double weight) {
    off[len] = o;
    w[len] = weight;
    ++len;
  }
};

// First (d1) and second (d2) derivative stencils along `axis` at a node.
void axis_stencils(const Grid& g, int axis, int node, Stencil& d1, Stencil& d2) {
  const double h = g.h[axis];
  d1.len = d2.len = 0;
  const bool colat = g.latlong && axis == 0;
  int mode = 4;  // 4: 4th-order centered, 2: 2nd-order centered, ±1: one-sided
  if (colat) {
    const int j = g.row(node), last = g.n[0] - 1;
    if (j == 0 || j == last) throw PoleRowError("pole rows are not stencil centers");
    if (j == 1) mode = 1;
    else if (j == last - 1) mode = -1;
    else if (j == 2 || j == last - 2) mode = 2;
  }
  if (mode == 4) {
    d1.add(-2, 1.0 / (12 * h)), d1.add(-1, -8.0 / (12 * h));
    d1.add(1, 8.0 / (12 * h)), d1.add(2, -1.0 / (12 * h));
    const double h2 = 12 * h * h;
    d2.add(-2, -1.0 / h2), d2.add(-1, 16.0 / h2), d2.add(0, -30.0 / h2);
    d2.add(1, 16.0 / h2), d2.add(2, -1.0 / h2);
  } else if (mode == 2) {
    d1.add(-1, -0.5 / h), d1.add(1, 0.5 / h);
    d2.add(-1, 1.0 / (h * h)), d2.add(0, -2.0 / (h * h)), d2.add(1, 1.0 / (h * h));
  } else {
    const int s = mode;
    d1.add(0, -1.5 * s / h), d1.add(s, 2.0 * s / h), d1.add(2 * s, -0.5 * s / h);
    const double h2 = h * h;
    d2.add(0, 2.0 / h2), d2.add(s, -5.0 / h2), d2.add(2 * s, 4.0 / h2), d2.add(3 * s, -1.0 / h2);
  }
}

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Lifted values of f on the stencil window of one node, expressed in the
// node's chart and fetched at most once each. Offsets range over [-3, 3].
class Window {
 public:
  Window(const GridMap& F, int node, int tag)
      : F_(F), nt_(F.target.dim), i0_(F.grid.row(node)), i1_(F.grid.col(node)), tag_(tag) {}

  const double* at(int o0, int o1) {
    const int k = (o0 + 3) * 7 + (o1 + 3);
    if (!have_[k]) {
      fill(v_[k], i0_ + o0, i1_ + o1);
      have_[k] = true;
    }
    return v_[k];
  }

 private:
  void fill(double* out, int i0, int i1) const {
    const Grid& g = F_.grid;
    int w0 = 0, w1 = 0;
    if (!g.latlong && (i0 < 0 || i0 >= g.n[0])) {
      w0 = floor_div(i0, g.n[0]);
      i0 -= w0 * g.n[0];
    }
    if (i1 < 0 || i1 >= g.n[1]) {
      w1 = floor_div(i1, g.n[1]);
      i1 -= w1 * g.n[1];
    }
    const int node = g.index(i0, i1);
    const double* src = &F_.values[size_t(node) * nt_];
    if (F_.tags[node] != tag_) {
      const ChartPoint q = to_chart(F_.target, F_.at(node), tag_);
      for (int c = 0; c < nt_; ++c) out[c] = q.x(c);
    } else {
      for (int c = 0; c < nt_; ++c) out[c] = src[c];
    }
    if (w0)
      for (int c = 0; c < nt_; ++c) out[c] += double(w0) * F_.winding[0](c);
    if (w1)
      for (int c = 0; c < nt_; ++c) out[c] += double(w1) * F_.winding[1](c);
  }

  const GridMap& F_;
  int nt_, i0_, i1_, tag_;
  double v_[49][kMaxDim];
  bool have_[49] = {};
};

Vec sample_scalar_lift(const Grid& g, int i0, int i1, const std::vector<double>& field) {
  if (!g.latlong) i0 = ((i0 % g.n[0]) + g.n[0]) % g.n[0];
  i1 = ((i1 % g.n[1]) + g.n[1]) % g.n[1];
  Vec v(1);
  v(0) = field[g.index(i0, i1)];
  return v;
}

// Stencil weights sum to zero, so differences against the center are used:
// exact for constants and free of cancellation against a large offset.
void window_jet(const GridMap& F, int node, bool second, Vec& f0, Mat& df, Tensor3* d2) {
  const Grid& g = F.grid;
  const int m = g.m, nt = F.target.dim;
  Window win(F, node, F.tags[node]);
  const double* c0 = win.at(0, 0);
  f0.resize(nt);
  for (int c = 0; c < nt; ++c) f0(c) = c0[c];
  df = Mat::Zero(m, nt);
  Stencil s1[2], s2[2];
  for (int a = 0; a < m; ++a) axis_stencils(g, a, node, s1[a], s2[a]);
  double acc[kMaxDim];
  for (int a = 0; a < m; ++a) {
    for (int c = 0; c < nt; ++c) acc[c] = 0.0;
    for (int k = 0; k < s1[a].len; ++k) {
      const int o = s1[a].off[k];
      if (o == 0) continue;
      const double* v = a == 0 ? win.at(o, 0) : win.at(0, o);
      for (int c = 0; c < nt; ++c) acc[c] += s1[a].w[k] * (v[c] - c0[c]);
    }
    for (int c = 0; c < nt; ++c) df(a, c) = acc[c];
  }
  if (!second) return;
  *d2 = Tensor3(nt, m);
  for (int a = 0; a < m; ++a) {
    for (int c = 0; c < nt; ++c) acc[c] = 0.0;
    for (int k = 0; k < s2[a].len; ++k) {
      const int o = s2[a].off[k];
      if (o == 0) continue;
      const double* v = a == 0 ? win.at(o, 0) : win.at(0, o);
      for (int c = 0; c < nt; ++c) acc[c] += s2[a].w[k] * (v[c] - c0[c]);
    }
    for (int c = 0; c < nt; ++c) (*d2)[c](a, a) = acc[c];
  }
  if (m == 2) {
    for (int c = 0; c < nt; ++c) acc[c] = 0.0;
    for (int p = 0; p < s1[0].len; ++p)
      for (int q = 0; q < s1[1].len; ++q) {
        const int o0 = s1[0].off[p], o1 = s1[1].off[q];
        if (o0 == 0 && o1 == 0) continue;
        const double w = s1[0].w[p] * s1[1].w[q];
        const double* v = win.at(o0, o1);
        for (int c = 0; c < nt; ++c) acc[c] += w * (v[c] - c0[c]);
      }
    for (int c = 0; c < nt; ++c) (*d2)[c](0, 1) = (*d2)[c](1, 0) = acc[c];
  }
}

}  // namespace

Vec Grid::coord(int node) const {
  Vec x(m);
  x(0) = row(node) * h[0];
  if (m == 2) x(1) = col(node) * h[1];
  return x;
}

Grid make_grid(const ManifoldModel& domain, std::array<int, 2> res) {
  Grid g;
  if (domain.kind == ManifoldKind::FlatTorus && domain.dim <= 2) {
    g.m = domain.dim;
    g.res = {res[0], g.m == 2 ? res[1] : 1};
    g.n = g.res;
    g.h[0] = domain.sides[0] / res[0];
    g.h[1] = g.m == 2 ? domain.sides[1] / res[1] : 1.0;
  } else if (domain.kind == ManifoldKind::RoundSphere && domain.chart == ChartKind::LatLong) {
    g.m = 2;
    g.latlong = true;
    g.res = res;
    g.n = {res[0] + 1, res[1]};
    g.h = {kPi / res[0], 2 * kPi / res[1]};
  } else {
    throw ConfigError("domain must be a flat torus of dimension 1 or 2 or a lat-long 2-sphere");
  }
  for (int a = 0; a < g.m; ++a)
    if (g.res[a] < 8) throw ConfigError("grid resolution must be at least 8 per axis");
  return g;
}

GridMap::GridMap(const ManifoldModel& d, const ManifoldModel& t, const Grid& g)
    : domain(d), target(t), grid(g), values(size_t(g.count()) * t.dim, 0.0), tags(g.count(), 0) {
  winding[0] = Vec::Zero(t.dim);
  winding[1] = Vec::Zero(t.dim);
}

GridMap make_map(const ManifoldModel& domain, const ManifoldModel& target, const Grid& grid,
                 const std::function<ChartPoint(const Vec&)>& f) {
  GridMap F(domain, target, grid);
  for (int node = 0; node < grid.count(); ++node) {
    const ChartPoint p = f(grid.coord(node));
    check_chart(target, p);
    F.set(node, p);
  }
  return F;
}

ChartPoint GridMap::at(int node) const {
  const int nt = target.dim;
  return ChartPoint{Eigen::Map<const Eigen::VectorXd>(&values[size_t(node) * nt], nt), tags[node]};
}

void GridMap::set(int node, const ChartPoint& p) {
  const int nt = target.dim;
  for (int c = 0; c < nt; ++c) values[size_t(node) * nt + c] = p.x(c);
  tags[node] = p.tag;
}

std::vector<StencilEntry> node_stencil(const Grid& g, int node) {
  if (g.is_pole(node)) throw PoleRowError("pole rows are not stencil centers");
  std::vector<StencilEntry> out;
  auto slot = [&](int o0, int o1) -> std::array<double, 5>& {
    for (auto& e : out)
      if (e.o0 == o0 && e.o1 == o1) return e.w;
    out.push_back(StencilEntry{o0, o1, {}});
    return out.back().w;
  };
  Stencil s1[2], s2[2];
  for (int a = 0; a < g.m; ++a) axis_stencils(g, a, node, s1[a], s2[a]);
  for (int a = 0; a < g.m; ++a) {
    for (int k = 0; k < s1[a].len; ++k)
      if (s1[a].off[k] != 0) slot(a == 0 ? s1[a].off[k] : 0, a == 1 ? s1[a].off[k] : 0)[a] += s1[a].w[k];
    for (int k = 0; k < s2[a].len; ++k)
      if (s2[a].off[k] != 0) slot(a == 0 ? s2[a].off[k] : 0, a == 1 ? s2[a].off[k] : 0)[2 + a] += s2[a].w[k];
  }
  if (g.m == 2)
    for (int p = 0; p < s1[0].len; ++p)
      for (int q = 0; q < s1[1].len; ++q) {
        const int o0 = s1[0].off[p], o1 = s1[1].off[q];
        if (o0 == 0 && o1 == 0) continue;
        slot(o0, o1)[4] += s1[0].w[p] * s1[1].w[q];
      }
  return out;
}

Jet local_jet(const GridMap& F, int node) {
  if (F.grid.is_pole(node)) throw PoleRowError("pole rows are not stencil centers");
  Jet J;
  J.f.tag = F.tags[node];
  window_jet(F, node, true, J.f.x, J.df, &J.d2);
  return J;
}

Mat differential(const GridMap& F, int node) {
  if (F.grid.is_pole(node)) throw PoleRowError("pole rows are not stencil centers");
  Vec f0;
  Mat df;
  window_jet(F, node, false, f0, df, nullptr);
  return df;
}

Vec scalar_gradient(const Grid& g, const std::vector<double>& field, int node) {
  if (g.is_pole(node)) throw PoleRowError("pole rows are not stencil centers");
  const int i0 = g.row(node), i1 = g.col(node);
  Vec grad = Vec::Zero(g.m);
  const double f0 = field[node];
  Stencil s1, s2;
  for (int a = 0; a < g.m; ++a) {
    axis_stencils(g, a, node, s1, s2);
    for (int k = 0; k < s1.len; ++k) {
      const Vec v = a == 0 ? sample_scalar_lift(g, i0 + s1.off[k], i1, field)
                           : sample_scalar_lift(g, i0, i1 + s1.off[k], field);
      grad(a) += s1.w[k] * (v(0) - f0);
    }
  }
  return grad;
}

void jacobi_eigen(const Mat& A0, Vec& values, Mat& vectors) {
  const int n = static_cast<int>(A0.rows());
  Mat A = 0.5 * (A0 + A0.transpose());
  Mat V = Mat::Identity(n, n);
  const double scale = std::max(A.norm(), 1e-300);
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
    if (off <= 1e-34 * scale * scale) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (A(p, q) == 0.0) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::array<int, kMaxDim> order{0, 1, 2};
  std::stable_sort(order.begin(), order.begin() + n, [&](int a, int b) { return A(a, a) > A(b, b); });
  values.resize(n);
  vectors.resize(n, n);
  for (int i = 0; i < n; ++i) {
    values(i) = A(order[i], order[i]);
    vectors.col(i) = V.col(order[i]);
  }
}

Spectrum pullback_and_spectrum(const Mat& g1, const Mat& g2, const Mat& df, const FrameOptions& opts) {
  const int m = static_cast<int>(g1.rows()), n = static_cast<int>(g2.rows());
  Spectrum S;
  const Mat P = df * g2 * df.transpose();
  const Mat L = g1.llt().matrixL();
  const Mat Linv = L.inverse();
  S.pullback = Linv * P * Linv.transpose();
  S.pullback = 0.5 * (S.pullback + S.pullback.transpose());
  Mat V;
  jacobi_eigen(S.pullback, S.lambda_sq, V);
  S.lambda.resize(m);
  for (int i = 0; i < m; ++i) {
    S.lambda_sq(i) = std::max(S.lambda_sq(i), 0.0);
    S.lambda(i) = std::sqrt(S.lambda_sq(i));
    if (S.lambda_sq(i) >= kRankFloor) ++S.rank;
  }
  S.frame_a = Linv.transpose() * V;

  S.frame_b = Mat::Zero(n, n);
  int filled = 0;
  for (int i = 0; i < S.rank && i < n; ++i) {
    Vec b = -(df.transpose() * S.frame_a.col(i)) / S.lambda(i);
    for (int j = 0; j < filled; ++j) b -= S.frame_b.col(j).dot(g2 * b) * S.frame_b.col(j);
    b /= std::sqrt(b.dot(g2 * b));
    S.frame_b.col(filled++) = b;
  }
  // Complete with the chart axis that is least aligned with the current span.
  while (filled < n) {
    int best = -1;
    double best_norm = -1.0;
    Vec best_vec;
    for (int e = 0; e < n; ++e) {
      Vec v = Vec::Unit(n, e);
      for (int pass = 0; pass < 2; ++pass)
        for (int j = 0; j < filled; ++j) v -= S.frame_b.col(j).dot(g2 * v) * S.frame_b.col(j);
      const double nv = std::sqrt(std::max(v.dot(g2 * v), 0.0));
      if (nv > best_norm + 1e-12) best = e, best_norm = nv, best_vec = v;
    }
    (void)best;
    S.frame_b.col(filled++) = best_vec / best_norm;
  }
  if (opts.flip_leading_image && S.rank >= 1) S.frame_b.col(0) = -S.frame_b.col(0);
  return S;
}

double cosh_theta(const Vec& lambda_sq) {
  double prod = 1.0;
  for (int i = 0; i < lambda_sq.size(); ++i) {
    if (!(lambda_sq(i) < 1.0)) throw NotSpacelikeError("eigenvalue lambda^2 >= 1");
    prod *= 1.0 - lambda_sq(i);
  }
  return 1.0 / std::sqrt(prod);
}

double cosh_theta_from_metrics(const Mat& g1, const Mat& g) {
  const double dg = det_small(g);
  if (!(dg > 0.0)) throw NotSpacelikeError("graph metric is not positive definite");
  return std::sqrt(det_small(g1) / dg);
}

double cosh_sq_minus_one(const Vec& lambda_sq) {
  double s = 0.0;
  for (int i = 0; i < lambda_sq.size(); ++i) {
    if (!(lambda_sq(i) < 1.0)) throw NotSpacelikeError("eigenvalue lambda^2 >= 1");
    s += std::log1p(-lambda_sq(i));
  }
  return std::expm1(-s);
}

double largest_lambda_sq(const Mat& g1, const Mat& P) {
  const int m = static_cast<int>(g1.rows());
  if (m == 1) return P(0, 0) / g1(0, 0);
  if (m == 2) {
    // Reduce by the Cholesky factor of g₁; hypot keeps a double root accurate.
    const double l11 = std::sqrt(g1(0, 0)), l21 = g1(1, 0) / l11;
    const double l22 = std::sqrt(g1(1, 1) - l21 * l21);
    const double a = P(0, 0) / (l11 * l11);
    const double b = (P(0, 1) - l21 * l11 * a) / (l11 * l22);
    const double d = (P(1, 1) - 2.0 * l21 * P(0, 1) / l11 + l21 * l21 * a) / (l22 * l22);
    return 0.5 * (a + d) + std::hypot(0.5 * (a - d), b);
  }
  const Mat L = g1.llt().matrixL();
  const Mat Linv = L.inverse();
  Vec vals;
  Mat vecs;
  jacobi_eigen(Linv * P * Linv.transpose(), vals, vecs);
  return vals(0);
}

PointGeometry point_geometry(const ManifoldModel& domain, const ManifoldModel& target,
                             const ChartPoint& p, const ChartPoint& fp, const Mat& df,
                             const FrameOptions& opts) {
  PointGeometry G;
  G.p = p;
  G.fp = fp;
  G.df = df;
  G.g1 = metric_at(domain, p);
  G.g2 = metric_at(target, fp);
  G.pullback_chart = df * G.g2 * df.transpose();
  G.spec = pullback_and_spectrum(G.g1, G.g2, df, opts);
  G.graph_metric = G.g1 - G.pullback_chart;
  if (G.spec.lambda_sq(0) < 1.0) {
    G.graph_metric_inv = inverse_small(G.graph_metric);
    G.cosh_theta = cosh_theta(G.spec.lambda_sq);
  } else {
    G.graph_metric_inv = Mat::Constant(df.rows(), df.rows(), std::nan(""));
    G.cosh_theta = std::numeric_limits<double>::infinity();
  }
  return G;
}

PointGeometry point_geometry(const GridMap& F, int node, const FrameOptions& opts) {
  const ChartPoint p{F.grid.coord(node), 0};
  return point_geometry(F.domain, F.target, p, F.at(node), differential(F, node), opts);
}

SpacelikeReport spacelike_check(const GridMap& F, double guard) {
  const int N = F.grid.count();
  std::vector<double> lam(N, 0.0);
  parallel_for(N, [&](int node) {
    if (F.grid.is_pole(node)) return;
    const Mat df = differential(F, node);
    const Mat g1 = metric_at(F.domain, ChartPoint{F.grid.coord(node), 0});
    const Mat g2 = metric_at(F.target, F.at(node));
    lam[node] = largest_lambda_sq(g1, df * g2 * df.transpose());
  });
  SpacelikeReport r;
  for (int node = 0; node < N; ++node) {
    if (F.grid.is_pole(node)) continue;
    const double v = lam[node];
    if (r.worst_node < 0 || v > r.worst_lambda_sq || std::isnan(v)) {
      r.worst_lambda_sq = v;
      r.worst_node = node;
    }
  }
  r.ok = r.worst_lambda_sq < 1.0 - guard;
  return r;
}

bool wang_predicate(const Vec& lambda_sq) {
  double prod = 1.0;
  for (int i = 0; i < lambda_sq.size(); ++i) prod *= 1.0 + lambda_sq(i);
  return prod < 2.0;
}

WangReport wang_condition(const GridMap& F) {
  const int N = F.grid.count();
  WangReport r;
  r.node.assign(N, -1);
  parallel_for(N, [&](int node) {
    if (F.grid.is_pole(node)) return;
    r.node[node] = wang_predicate(point_geometry(F, node).spec.lambda_sq) ? 1 : 0;
  });
  r.all = std::none_of(r.node.begin(), r.node.end(), [](signed char v) { return v == 0; });
  return r;
}

void fill_pole_rows(GridMap& F) {
  const Grid& g = F.grid;
  if (!g.latlong) return;
  const int last = g.n[0] - 1, cols = g.n[1], nt = F.target.dim;
  for (int side = 0; side < 2; ++side) {
    const int pole = side == 0 ? 0 : last;
    const int r1 = side == 0 ? 1 : last - 1, r2 = side == 0 ? 2 : last - 2;
    const int tag = F.tags[g.index(r1, 0)];
    Vec a1 = Vec::Zero(nt), a2 = Vec::Zero(nt);
    for (int c = 0; c < cols; ++c) {
      a1 += to_chart(F.target, F.at(g.index(r1, c)), tag).x;
      a2 += to_chart(F.target, F.at(g.index(r2, c)), tag).x;
    }
    const ChartPoint value{(4.0 * a1 - a2) / (3.0 * cols), tag};
    for (int c = 0; c < cols; ++c) F.set(g.index(pole, c), value);
  }
}

std::string write_snapshot(const GridMap& F) {
  std::ostringstream os;
  auto vec = [](const Vec& v) {
    std::string s;
    for (int i = 0; i < v.size(); ++i) s += (i ? ":" : "") + format_real(v(i));
    return s;
  };
  os << "spacegraph-gridmap-v1 domain=" << F.domain.descriptor() << " target=" << F.target.descriptor()
     << " res=" << F.grid.res[0] << 'x' << F.grid.res[1] << " nodes=" << F.grid.count()
     << " winding0=" << vec(F.winding[0]) << " winding1=" << vec(F.winding[1]) << '\n';
  const int nt = F.target.dim;
  for (int node = 0; node < F.grid.count(); ++node) {
    os << F.tags[node];
    for (int c = 0; c < nt; ++c) os << ' ' << format_real(F.values[size_t(node) * nt + c]);
    os << '\n';
  }
  return os.str();
}

GridMap read_snapshot(const std::string& text) {
  std::istringstream is(text);
  std::string header;
  if (!std::getline(is, header)) throw ConfigError("empty snapshot");
  std::istringstream hs(header);
  std::string magic, tok;
  hs >> magic;
  if (magic != "spacegraph-gridmap-v1") throw ConfigError("not a gridmap snapshot");
  std::map<std::string, std::string> kv;
  while (hs >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("bad snapshot header token " + tok);
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  for (const char* key : {"domain", "target", "res", "nodes", "winding0", "winding1"})
    if (!kv.count(key)) throw ConfigError(std::string("snapshot header missing ") + key);
  const ManifoldModel domain = ManifoldModel::from_descriptor(kv["domain"]);
  const ManifoldModel target = ManifoldModel::from_descriptor(kv["target"]);
  const std::string res = kv["res"];
  const auto x = res.find('x');
  if (x == std::string::npos) throw ConfigError("bad snapshot resolution " + res);
  const Grid grid = make_grid(domain, {std::stoi(res.substr(0, x)), std::stoi(res.substr(x + 1))});
  if (std::stoi(kv["nodes"]) != grid.count()) throw ConfigError("snapshot node count mismatch");
  GridMap F(domain, target, grid);
  for (int w = 0; w < 2; ++w) {
    std::stringstream ws(kv[w == 0 ? "winding0" : "winding1"]);
    for (int c = 0; c < target.dim; ++c) {
      std::string s;
      std::getline(ws, s, ':');
      F.winding[w](c) = parse_real(s);
    }
  }
  const int nt = target.dim;
  std::string line;
  for (int node = 0; node < grid.count(); ++node) {
    if (!std::getline(is, line)) throw ConfigError("snapshot truncated");
    std::istringstream ls(line);
    std::string s;
    ls >> s;
    F.tags[node] = std::stoi(s);
    for (int c = 0; c < nt; ++c) {
      if (!(ls >> s)) throw ConfigError("snapshot line has too few coordinates");
      F.values[size_t(node) * nt + c] = parse_real(s);
    }
  }
  return F;
}

void save_snapshot(const GridMap& F, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write snapshot " + path);
  out << write_snapshot(F);
}

GridMap load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read snapshot " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return read_snapshot(ss.str());
}

}  // namespace spacegraph
