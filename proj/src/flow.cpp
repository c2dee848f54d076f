#include "spacegraph/flow.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <optional>

#include <fftw3.h>

#include "spacegraph/errors.hpp"
#include "spacegraph/extrinsic.hpp"
#include "spacegraph/parallel.hpp"

namespace spacegraph {

constexpr double kPi = 3.14159265358979323846;

// Ring filter on lat-long grids: on row j only azimuthal wavenumbers
// |k| ≤ K_j = floor(sinθ_j · π/Δθ) are kept, so no ring resolves finer than
// the colatitude axis. Two real fields are packed into one complex transform.
class PolarFilter {
 public:
  explicit PolarFilter(const Grid& g) : nphi_(g.n[1]), cols_(g.n[1]) {
    if (!g.latlong) return;
    cutoff_.assign(g.n[0], nphi_);
    for (int j = 1; j + 1 < g.n[0]; ++j) {
      const int K = static_cast<int>(std::floor(std::sin(j * g.h[0]) * kPi / g.h[0] + 1e-9));
      if (2 * K < nphi_) {
        cutoff_[j] = K;
        rows_.push_back(j);
      }
    }
    if (rows_.empty()) return;
    buf_ = fftw_alloc_complex(nphi_);
    fwd_ = fftw_plan_dft_1d(nphi_, buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft_1d(nphi_, buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~PolarFilter() {
    if (buf_) {
      fftw_destroy_plan(fwd_);
      fftw_destroy_plan(bwd_);
      fftw_free(buf_);
    }
  }
  PolarFilter(const PolarFilter&) = delete;
  PolarFilter& operator=(const PolarFilter&) = delete;

  const std::vector<int>& rows() const { return rows_; }

  // data: node-major, `stride` doubles per node; filters components [0, ncomp).
  void apply(std::vector<double>& data, int stride, int ncomp) const {
    for (int j : rows_) {
      const int K = cutoff_[j];
      for (int c0 = 0; c0 < ncomp; c0 += 2) {
        const bool pair = c0 + 1 < ncomp;
        for (int k = 0; k < nphi_; ++k) {
          const size_t base = (size_t(j) * cols_ + k) * stride;
          buf_[k][0] = data[base + c0];
          buf_[k][1] = pair ? data[base + c0 + 1] : 0.0;
        }
        fftw_execute(fwd_);
        for (int k = 0; k < nphi_; ++k) {
          const int freq = k <= nphi_ / 2 ? k : nphi_ - k;
          if (freq > K) buf_[k][0] = buf_[k][1] = 0.0;
        }
        fftw_execute(bwd_);
        const double inv = 1.0 / nphi_;
        for (int k = 0; k < nphi_; ++k) {
          const size_t base = (size_t(j) * cols_ + k) * stride;
          data[base + c0] = buf_[k][0] * inv;
          if (pair) data[base + c0 + 1] = buf_[k][1] * inv;
        }
      }
    }
  }

 private:
  int nphi_, cols_;
  std::vector<int> cutoff_, rows_;
  fftw_complex* buf_ = nullptr;
  fftw_plan fwd_{}, bwd_{};
};

// A stencil offset feeding at most two derivative slots (see StencilEntry).
struct Tap {
  int o0 = 0, o1 = 0;
  int off = 0;  // o0·n1 + o1, the node offset when no axis wraps
  int s0 = -1, s1 = -1;
  double w0 = 0.0, w1 = 0.0;
};

// Derivative stencil of one row. When ∂₀₁ is the tensor product of the two
// first-derivative stencils it is evaluated as ∂₁(∂₀f) from a per-node ∂₀f
// buffer: 4 loads instead of 16 taps.
struct RowStencil {
  std::vector<Tap> full;
  bool split = false;
  std::vector<Tap> d0;                       // slot 0 only
  std::vector<Tap> rest;                     // slots 1, 2, 3
  std::vector<std::pair<int, double>> d1;    // (o1, weight) of ∂₁
};

namespace {

struct SweepRow {
  std::vector<std::pair<int, double>> a0, a00;  // row offset, weight
  double g00 = 1, g01 = 0, g11 = 1;
  double l11 = 1, l21 = 0, l22 = 1, det1 = 1;
  double G[2][3] = {};  // Γ₁^k_ij, ij ∈ {00, 11, 01}
};

struct SweepPlan {
  std::vector<std::pair<int, double>> a1, a11;  // column offset, weight
  std::vector<SweepRow> rows;                   // indexed by row; pole rows unused
  int pad = 0;
};

}  // namespace

struct Integrator::DomainCache {
  std::vector<Mat> g1;
  std::vector<Tensor3> gamma1;
  std::vector<double> weight;
  std::vector<RowStencil> row_stencil;  // shared by the nodes of a row
  std::vector<double> d0;               // ∂₀f at every node, for split stencils
  std::optional<SweepPlan> sweep;
  // per-node scratch of evaluate, kept to avoid reallocating every step
  std::vector<double> lam, dvol, h2, ch;
  std::vector<char> ok;
};

namespace {

std::vector<Tap> compact(const std::vector<StencilEntry>& st, int n1) {
  std::vector<Tap> out;
  for (const StencilEntry& e : st) {
    // near the poles one offset can feed three slots; it then gets two taps
    Tap t;
    t.o0 = e.o0, t.o1 = e.o1, t.off = e.o0 * n1 + e.o1;
    for (int k = 0; k < 5; ++k) {
      if (e.w[k] == 0.0) continue;
      if (t.s0 < 0) {
        t.s0 = k, t.w0 = e.w[k];
      } else {
        t.s1 = k, t.w1 = e.w[k];
        out.push_back(t);
        t.s0 = t.s1 = -1;
      }
    }
    if (t.s0 >= 0) out.push_back(t);
  }
  return out;
}

RowStencil row_stencil(const Grid& g, int node, bool single_chart) {
  const std::vector<StencilEntry> st = node_stencil(g, node);
  RowStencil rs;
  rs.full = compact(st, g.n[1]);
  if (g.m != 2 || !single_chart) return rs;
  // first-derivative weights per axis, centre weight restored from Σw = 0
  std::map<int, double> w0, w1;
  std::map<std::pair<int, int>, double> mixed;
  double scale = 0.0;
  for (const StencilEntry& e : st) {
    if (e.o1 == 0) w0[e.o0] += e.w[0];
    if (e.o0 == 0) w1[e.o1] += e.w[1];
    if (e.w[4] != 0.0) mixed[{e.o0, e.o1}] = e.w[4];
    scale = std::max(scale, std::abs(e.w[4]));
    if ((e.o1 != 0 && e.w[0] != 0.0) || (e.o0 != 0 && e.w[1] != 0.0)) return rs;
  }
  double c0 = 0.0, c1 = 0.0;
  for (auto& [o, w] : w0) c0 -= w;
  for (auto& [o, w] : w1) c1 -= w;
  w0[0] += c0, w1[0] += c1;
  std::map<std::pair<int, int>, double> product;
  for (auto& [a, wa] : w0)
    for (auto& [b, wb] : w1)
      if ((a != 0 || b != 0) && wa * wb != 0.0) product[{a, b}] = wa * wb;
  for (auto& [k, w] : product)
    if (std::abs((mixed.count(k) ? mixed[k] : 0.0) - w) > 1e-12 * scale) return rs;
  for (auto& [k, w] : mixed)
    if (!product.count(k)) return rs;
  std::vector<StencilEntry> d0, rest;
  for (const StencilEntry& e : st) {
    StencilEntry a = e, b = e;
    a.w = {e.w[0], 0, 0, 0, 0};
    b.w = {0, e.w[1], e.w[2], e.w[3], 0};
    d0.push_back(a), rest.push_back(b);
  }
  rs.d0 = compact(d0, g.n[1]);
  rs.rest = compact(rest, g.n[1]);
  for (auto& [o, w] : w1)
    if (o != 0 && w != 0.0) rs.d1.emplace_back(o, w);
  rs.split = true;
  return rs;
}

// Σ_taps w (f(node + offset) − f(node)) into acc, in the node's chart and
// with the winding of the periodic axes added to wrapped offsets.
template <int m, int nt>
void accumulate(const GridMap& F, int node, const std::vector<Tap>& taps, double (&acc)[5][kMaxDim]) {
  const Grid& g = F.grid;
  const int n0 = g.n[0], n1 = g.n[1];
  const int i0 = g.row(node), i1 = g.col(node), tag = F.tags[node];
  const double* v0 = &F.values[size_t(node) * nt];
  const bool single_chart = F.target.chart != ChartKind::Stereographic;
  const bool inner0 = g.latlong || (i0 >= 2 && i0 < n0 - 2);
  const bool inner1 = m == 1 || (i1 >= 2 && i1 < n1 - 2);
  if (single_chart && inner0 && inner1) {
    // no wrap, no chart change: plain offsets
    for (const Tap& e : taps) {
      const double* v = v0 + e.off * nt;
      double d[nt];
      for (int c = 0; c < nt; ++c) d[c] = v[c] - v0[c];
      for (int c = 0; c < nt; ++c) acc[e.s0][c] += e.w0 * d[c];
      if (e.s1 >= 0)
        for (int c = 0; c < nt; ++c) acc[e.s1][c] += e.w1 * d[c];
    }
    return;
  }
  for (const Tap& e : taps) {
    int j0 = i0 + e.o0, j1 = i1 + e.o1, w0 = 0, w1 = 0;
    if (!g.latlong) {
      if (j0 < 0) j0 += n0, w0 = -1;
      else if (j0 >= n0) j0 -= n0, w0 = 1;
    }
    if (j1 < 0) j1 += n1, w1 = -1;
    else if (j1 >= n1) j1 -= n1, w1 = 1;
    const int nb = j0 * n1 + j1;
    double d[kMaxDim];
    if (F.tags[nb] != tag) {
      const ChartPoint q = to_chart(F.target, F.at(nb), tag);
      for (int c = 0; c < nt; ++c) d[c] = q.x(c) - v0[c];
    } else {
      const double* v = &F.values[size_t(nb) * nt];
      for (int c = 0; c < nt; ++c) d[c] = v[c] - v0[c];
    }
    if (w0)
      for (int c = 0; c < nt; ++c) d[c] += w0 * F.winding[0](c);
    if (w1)
      for (int c = 0; c < nt; ++c) d[c] += w1 * F.winding[1](c);
    for (int c = 0; c < nt; ++c) acc[e.s0][c] += e.w0 * d[c];
    if (e.s1 >= 0)
      for (int c = 0; c < nt; ++c) acc[e.s1][c] += e.w1 * d[c];
  }
}

template <int m, int nt>
void first_derivative_0(const GridMap& F, int node, const RowStencil& rs, double* out) {
  double acc[5][kMaxDim] = {};
  accumulate<m, nt>(F, node, rs.d0, acc);
  for (int c = 0; c < nt; ++c) out[c] = acc[0][c];
}

// g₂ = κ e^{2σ} δ in the chart, so Γ₂ follows from ∇σ alone.
bool conformal_target(const ManifoldModel& M) {
  return M.chart != ChartKind::LatLong;
}

struct NodeOut {
  double W[kMaxDim];
  double lambda_sq, sqrt_det_g, cosh, normH_sq;
  bool spacelike;
};

// Velocity at one node from the precomputed stencil. Same formulas as
// local_jet + hessian_from_jet + the graph metric, on plain arrays.
template <int m, int nt>
NodeOut node_velocity(const GridMap& F, int node, const RowStencil& rs, const double* d0,
                      const Mat& g1m, const Tensor3& G1) {
  const Grid& g = F.grid;
  const double* v0 = &F.values[size_t(node) * nt];
  double acc[5][kMaxDim] = {};
  if (rs.split) {
    accumulate<m, nt>(F, node, rs.rest, acc);
    const int i0 = g.row(node), i1 = g.col(node), n1 = g.n[1];
    for (int c = 0; c < nt; ++c) acc[0][c] = d0[size_t(node) * nt + c];
    for (const auto& [o, w] : rs.d1) {
      int j1 = i1 + o;
      if (j1 < 0) j1 += n1;
      else if (j1 >= n1) j1 -= n1;
      const double* d = &d0[size_t(i0 * n1 + j1) * nt];
      for (int c = 0; c < nt; ++c) acc[4][c] += w * d[c];
    }
  } else {
    accumulate<m, nt>(F, node, rs.full, acc);
  }
  // df(i, c) = acc[i][c]; d2(i, i) = acc[2 + i]; d2(0, 1) = acc[4]
  double g2[kMaxDim][kMaxDim] = {};
  double sg[kMaxDim] = {};
  const bool conf = conformal_target(F.target);
  std::optional<Tensor3> G2;
  if (conf) {
    // e^{2σ} = k f², σ = ln f + const
    double r2 = 0.0;
    for (int c = 0; c < nt; ++c) r2 += v0[c] * v0[c];
    double f = 1.0, ds = 0.0;
    if (F.target.chart == ChartKind::PoincareBall) {
      if (!(r2 < 1.0)) throw ChartDomainError("point outside the Poincare ball");
      f = 2.0 / (1.0 - r2), ds = f;
    } else if (F.target.chart == ChartKind::Stereographic) {
      f = 2.0 / (1.0 + r2), ds = -f;
    }
    const double lam2 = F.target.metric_factor() * f * f;
    for (int c = 0; c < nt; ++c) g2[c][c] = lam2, sg[c] = ds * v0[c];
  } else {
    const ChartPoint fp = F.at(node);
    G2 = christoffel_at(F.target, fp);
    const Mat gm2 = metric_at(F.target, fp);
    for (int a = 0; a < nt; ++a)
      for (int b = 0; b < nt; ++b) g2[a][b] = gm2(a, b);
  }
  // H^c_ij = ∂_ij f^c − Γ₁^k_ij ∂_k f^c + Γ₂^c(∂_i f, ∂_j f)
  double H[kMaxDim][2][2];
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) {
      const double* u = acc[i];
      const double* v = acc[j];
      const double* d2 = acc[i == j ? 2 + i : 4];
      double su = 0, sv = 0, uv = 0;
      if (conf)
        for (int a = 0; a < nt; ++a) su += sg[a] * u[a], sv += sg[a] * v[a], uv += u[a] * v[a];
      for (int c = 0; c < nt; ++c) {
        double h = d2[c];
        for (int k = 0; k < m; ++k) h -= G1[k](i, j) * acc[k][c];
        if (conf) {
          h += u[c] * sv + v[c] * su - sg[c] * uv;
        } else {
          for (int a = 0; a < nt; ++a)
            for (int b = 0; b < nt; ++b) h += (*G2)[c](a, b) * u[a] * v[b];
        }
        H[c][i][j] = H[c][j][i] = h;
      }
    }
  // P = df g₂ dfᵀ, g = g₁ − P
  double P[2][2] = {}, gmat[2][2] = {}, gi[2][2] = {};
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) {
      double v = 0.0;
      for (int a = 0; a < nt; ++a)
        for (int b = 0; b < nt; ++b) v += acc[i][a] * g2[a][b] * acc[j][b];
      P[i][j] = P[j][i] = v;
    }
  NodeOut out{};
  double det1, detg;
  if constexpr (m == 1) {
    det1 = g1m(0, 0);
    out.lambda_sq = P[0][0] / det1;
    gmat[0][0] = det1 - P[0][0];
    detg = gmat[0][0];
    gi[0][0] = 1.0 / detg;
  } else {
    const double l11 = std::sqrt(g1m(0, 0)), l21 = g1m(1, 0) / l11;
    const double l22 = std::sqrt(g1m(1, 1) - l21 * l21);
    const double a = P[0][0] / (l11 * l11);
    const double b = (P[0][1] - l21 * l11 * a) / (l11 * l22);
    const double d = (P[1][1] - 2.0 * l21 * P[0][1] / l11 + l21 * l21 * a) / (l22 * l22);
    out.lambda_sq = 0.5 * (a + d) + std::hypot(0.5 * (a - d), b);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) gmat[i][j] = g1m(i, j) - P[i][j];
    det1 = g1m(0, 0) * g1m(1, 1) - g1m(0, 1) * g1m(1, 0);
    detg = gmat[0][0] * gmat[1][1] - gmat[0][1] * gmat[1][0];
    gi[0][0] = gmat[1][1] / detg, gi[1][1] = gmat[0][0] / detg;
    gi[0][1] = gi[1][0] = -gmat[0][1] / detg;
  }
  out.spacelike = out.lambda_sq < 1.0 && detg > 0.0;
  if (!out.spacelike) return out;
  double gW[kMaxDim] = {}, y[2] = {};
  for (int c = 0; c < nt; ++c) {
    double w = 0.0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) w += gi[i][j] * H[c][i][j];
    out.W[c] = w;
  }
  double wgw = 0.0;
  for (int a = 0; a < nt; ++a) {
    for (int b = 0; b < nt; ++b) gW[a] += g2[a][b] * out.W[b];
    wgw += out.W[a] * gW[a];
  }
  for (int i = 0; i < m; ++i)
    for (int a = 0; a < nt; ++a) y[i] += acc[i][a] * gW[a];
  double ygy = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) ygy += y[i] * gi[i][j] * y[j];
  out.normH_sq = wgw + ygy;
  out.sqrt_det_g = std::sqrt(detg);
  out.cosh = std::sqrt(det1 / detg);
  return out;
}

using NodeKernel = NodeOut (*)(const GridMap&, int, const RowStencil&, const double*, const Mat&,
                               const Tensor3&);
using D0Kernel = void (*)(const GridMap&, int, const RowStencil&, double*);

NodeKernel pick_kernel(int m, int nt) {
  static constexpr NodeKernel table[2][3] = {
      {node_velocity<1, 1>, node_velocity<1, 2>, node_velocity<1, 3>},
      {node_velocity<2, 1>, node_velocity<2, 2>, node_velocity<2, 3>}};
  return table[m - 1][nt - 1];
}

D0Kernel pick_d0_kernel(int m, int nt) {
  static constexpr D0Kernel table[2][3] = {
      {first_derivative_0<1, 1>, first_derivative_0<1, 2>, first_derivative_0<1, 3>},
      {first_derivative_0<2, 1>, first_derivative_0<2, 2>, first_derivative_0<2, 3>}};
  return table[m - 1][nt - 1];
}

// Row sweep for m = 2 and one-chart conformal targets. Every stencil is the
// tensor product of two axis stencils, so a row is handled as contiguous
// column arrays: axis-0 differences between whole rows, axis-1 differences
// along the padded row, ∂₀₁ as ∂₁ of ∂₀f. The node loop is branch free.
bool sweep_target(const ManifoldModel& M) {
  return M.chart == ChartKind::PoincareBall || M.chart == ChartKind::Identity ||
         M.chart == ChartKind::PeriodicBox;
}

std::optional<SweepPlan> make_sweep_plan(const Grid& g, const std::vector<Mat>& g1,
                                         const std::vector<Tensor3>& gamma1,
                                         const std::vector<RowStencil>& stencils) {
  if (g.m != 2) return std::nullopt;
  SweepPlan plan;
  plan.rows.resize(g.n[0]);
  bool have_columns = false;
  for (int r = 0; r < g.n[0]; ++r) {
    const int node = g.index(r, 0);
    if (g.is_pole(node)) continue;
    if (!stencils[r].split) return std::nullopt;
    SweepRow& sr = plan.rows[r];
    std::vector<std::pair<int, double>> a1, a11;
    for (const StencilEntry& e : node_stencil(g, node)) {
      if (e.o1 == 0) {
        if (e.w[0] != 0.0) sr.a0.emplace_back(e.o0, e.w[0]);
        if (e.w[2] != 0.0) sr.a00.emplace_back(e.o0, e.w[2]);
      }
      if (e.o0 == 0) {
        if (e.w[1] != 0.0) a1.emplace_back(e.o1, e.w[1]);
        if (e.w[3] != 0.0) a11.emplace_back(e.o1, e.w[3]);
      }
    }
    if (!have_columns) {
      plan.a1 = a1, plan.a11 = a11;
      have_columns = true;
    } else if (a1 != plan.a1 || a11 != plan.a11) {
      return std::nullopt;
    }
    const Mat& m1 = g1[node];
    sr.g00 = m1(0, 0), sr.g01 = m1(0, 1), sr.g11 = m1(1, 1);
    sr.l11 = std::sqrt(sr.g00);
    sr.l21 = sr.g01 / sr.l11;
    sr.l22 = std::sqrt(sr.g11 - sr.l21 * sr.l21);
    sr.det1 = sr.g00 * sr.g11 - sr.g01 * sr.g01;
    for (int k = 0; k < 2; ++k) {
      sr.G[k][0] = gamma1[node][k](0, 0);
      sr.G[k][1] = gamma1[node][k](1, 1);
      sr.G[k][2] = gamma1[node][k](0, 1);
    }
  }
  for (auto& [o, w] : plan.a1) plan.pad = std::max(plan.pad, std::abs(o));
  for (auto& [o, w] : plan.a11) plan.pad = std::max(plan.pad, std::abs(o));
  if (plan.pad >= g.n[1]) return std::nullopt;
  return plan;
}

struct SweepOutput {
  double *lam, *dvol, *ch, *h2, *W;
  char* ok;
};

// Returns false when a node lies outside the Poincaré ball.
template <int nt, bool poincare>
bool sweep_row(const GridMap& F, const SweepPlan& plan, int r, double k2, const SweepOutput& out) {
  const Grid& g = F.grid;
  const SweepRow& sr = plan.rows[r];
  const int n0 = g.n[0], n1 = g.n[1], pad = plan.pad, w = n1 + 2 * pad;
  // per component: padded centre row, padded ∂₀f, then ∂₁, ∂₀₀, ∂₁₁, ∂₀₁, row scratch
  std::vector<double> buf(static_cast<size_t>(nt) * (2 * w + 5 * n1));
  double *P[nt], *D0[nt], *D1[nt], *D00[nt], *D11[nt], *D01[nt];
  for (int c = 0; c < nt; ++c) {
    double* b = buf.data() + size_t(c) * (2 * w + 5 * n1);
    P[c] = b + pad, D0[c] = b + w + pad;
    D1[c] = b + 2 * w, D00[c] = D1[c] + n1, D11[c] = D00[c] + n1, D01[c] = D11[c] + n1;
  }
  std::vector<double> rowbuf(n1);
  auto gather = [&](int o, int c, double* dst) {
    int j = r + o;
    double shift = 0.0;
    if (!g.latlong) {
      if (j < 0) j += n0, shift = -F.winding[0](c);
      else if (j >= n0) j -= n0, shift = F.winding[0](c);
    }
    const double* src = &F.values[size_t(j) * n1 * nt + c];
    for (int k = 0; k < n1; ++k) dst[k] = src[size_t(k) * nt] + shift;
  };
  for (int c = 0; c < nt; ++c) {
    gather(0, c, P[c]);
    const double wind = F.winding[1](c);
    for (int q = 1; q <= pad; ++q) {
      P[c][-q] = P[c][n1 - q] - wind;
      P[c][n1 - 1 + q] = P[c][q - 1] + wind;
    }
    double* d0 = D0[c];
    double* d00 = D00[c];
    for (int k = 0; k < n1; ++k) d0[k] = d00[k] = 0.0;
    // rows feeding both stencils are gathered once
    std::vector<int> offs;
    for (auto& [o, wt] : sr.a0) offs.push_back(o);
    for (auto& [o, wt] : sr.a00) offs.push_back(o);
    std::sort(offs.begin(), offs.end());
    offs.erase(std::unique(offs.begin(), offs.end()), offs.end());
    for (int o : offs) {
      if (o == 0) continue;
      gather(o, c, rowbuf.data());
      const double* R = rowbuf.data();
      const double* C = P[c];
      double wa = 0.0, wb = 0.0;
      for (auto& [oo, wt] : sr.a0)
        if (oo == o) wa += wt;
      for (auto& [oo, wt] : sr.a00)
        if (oo == o) wb += wt;
      for (int k = 0; k < n1; ++k) {
        const double d = R[k] - C[k];
        d0[k] += wa * d;
        d00[k] += wb * d;
      }
    }
    for (int q = 1; q <= pad; ++q) {
      d0[-q] = d0[n1 - q];
      d0[n1 - 1 + q] = d0[q - 1];
    }
    double *d1 = D1[c], *d11 = D11[c], *d01 = D01[c];
    const double* C = P[c];
    for (int k = 0; k < n1; ++k) d1[k] = d11[k] = d01[k] = 0.0;
    for (auto& [o, wt] : plan.a1)
      for (int k = 0; k < n1; ++k) {
        d1[k] += wt * (C[k + o] - C[k]);
        d01[k] += wt * (d0[k + o] - d0[k]);
      }
    for (auto& [o, wt] : plan.a11)
      for (int k = 0; k < n1; ++k) d11[k] += wt * (C[k + o] - C[k]);
  }
  const double g00 = sr.g00, g01 = sr.g01, g11 = sr.g11;
  const double l11 = sr.l11, l21 = sr.l21, l22 = sr.l22, det1 = sr.det1;
  const double G00[2] = {sr.G[0][0], sr.G[1][0]}, G11[2] = {sr.G[0][1], sr.G[1][1]},
               G01[2] = {sr.G[0][2], sr.G[1][2]};
  const size_t base = size_t(r) * n1;
  double* __restrict lam = out.lam + base;
  double* __restrict dvol = out.dvol + base;
  double* __restrict chv = out.ch + base;
  double* __restrict h2 = out.h2 + base;
  double* __restrict Wout = out.W + base * nt;
  char* __restrict okv = out.ok + base;
  int outside = 0;
  for (int k = 0; k < n1; ++k) {
    double f[nt], u[nt], v[nt], s00[nt], s11[nt], s01[nt];
    double r2 = 0.0;
    for (int c = 0; c < nt; ++c) {
      f[c] = P[c][k], u[c] = D0[c][k], v[c] = D1[c][k];
      s00[c] = D00[c][k], s11[c] = D11[c][k], s01[c] = D01[c][k];
      r2 += f[c] * f[c];
    }
    // g₂ = κ δ with κ = k₂ φ², Γ₂^c(a, b) = a_c (s·b) + b_c (s·a) − s_c (a·b), s = ∇ ln φ
    double kap = k2, s[nt];
    if constexpr (poincare) {
      outside += !(r2 < 1.0);
      const double phi = 2.0 / (1.0 - r2);
      kap = k2 * phi * phi;
      for (int c = 0; c < nt; ++c) s[c] = phi * f[c];
    } else {
      for (int c = 0; c < nt; ++c) s[c] = 0.0;
    }
    double su = 0, sv = 0, uu = 0, vv = 0, uv = 0;
    for (int c = 0; c < nt; ++c) {
      su += s[c] * u[c], sv += s[c] * v[c];
      uu += u[c] * u[c], vv += v[c] * v[c], uv += u[c] * v[c];
    }
    double H00[nt], H11[nt], H01[nt];
    for (int c = 0; c < nt; ++c) {
      H00[c] = s00[c] - G00[0] * u[c] - G00[1] * v[c];
      H11[c] = s11[c] - G11[0] * u[c] - G11[1] * v[c];
      H01[c] = s01[c] - G01[0] * u[c] - G01[1] * v[c];
      if constexpr (poincare) {
        H00[c] += 2.0 * u[c] * su - s[c] * uu;
        H11[c] += 2.0 * v[c] * sv - s[c] * vv;
        H01[c] += u[c] * sv + v[c] * su - s[c] * uv;
      }
    }
    const double P00 = kap * uu, P11 = kap * vv, P01 = kap * uv;
    const double a = P00 / (l11 * l11);
    const double b = (P01 - l21 * l11 * a) / (l11 * l22);
    const double d = (P11 - 2.0 * l21 * P01 / l11 + l21 * l21 * a) / (l22 * l22);
    const double half = 0.5 * (a - d);
    const double ls = 0.5 * (a + d) + std::sqrt(half * half + b * b);
    const double m00 = g00 - P00, m11 = g11 - P11, m01 = g01 - P01;
    const double detg = m00 * m11 - m01 * m01;
    const bool good = ls < 1.0 && detg > 0.0;
    const double dg = good ? detg : 1.0;
    const double i00 = m11 / dg, i11 = m00 / dg, i01 = -m01 / dg;
    double Wc[nt], wgw = 0.0, y0 = 0.0, y1 = 0.0;
    for (int c = 0; c < nt; ++c) {
      Wc[c] = good ? i00 * H00[c] + i11 * H11[c] + 2.0 * i01 * H01[c] : 0.0;
      wgw += Wc[c] * Wc[c];
      y0 += u[c] * Wc[c], y1 += v[c] * Wc[c];
    }
    wgw *= kap;
    y0 *= kap, y1 *= kap;
    const double ygy = i00 * y0 * y0 + 2.0 * i01 * y0 * y1 + i11 * y1 * y1;
    lam[k] = ls;
    okv[k] = good;
    dvol[k] = good ? std::sqrt(dg) : 0.0;
    chv[k] = good ? std::sqrt(det1 / dg) : 1.0;
    h2[k] = good ? wgw + ygy : 0.0;
    for (int c = 0; c < nt; ++c) Wout[size_t(k) * nt + c] = Wc[c];
  }
  return outside == 0;
}

using SweepKernel = bool (*)(const GridMap&, const SweepPlan&, int, double, const SweepOutput&);

SweepKernel pick_sweep(int nt, bool poincare) {
  static constexpr SweepKernel table[2][3] = {
      {sweep_row<1, false>, sweep_row<2, false>, sweep_row<3, false>},
      {sweep_row<1, true>, sweep_row<2, true>, sweep_row<3, true>}};
  return table[poincare][nt - 1];
}

}  // namespace

double node_weight(const Grid& g, int node) {
  if (g.is_pole(node)) return 0.0;
  return g.m == 2 ? g.h[0] * g.h[1] : g.h[0];
}

double grid_step_length(const GridMap& F, bool polar_filter) {
  const Grid& g = F.grid;
  const double sk = std::sqrt(F.domain.metric_factor());
  if (g.latlong) {
    double h = std::min(g.h[0], g.h[1]);
    if (!polar_filter) h = std::min(h, std::sin(g.h[0]) * g.h[1]);
    return sk * h;
  }
  return sk * (g.m == 2 ? std::min(g.h[0], g.h[1]) : g.h[0]);
}

double cfl_dt(double h_min, double max_lambda_sq, int m, double safety, double lambda_g) {
  return safety * h_min * h_min * (1.0 - max_lambda_sq) / (2.0 * m * lambda_g);
}

double cfl_dt(const FlowState& s, double safety) {
  const SpacelikeReport r = spacelike_check(s.fmap, s.guard);
  if (r.worst_lambda_sq >= 1.0) throw NotSpacelikeError("cfl_dt needs a spacelike state");
  return cfl_dt(grid_step_length(s.fmap), r.worst_lambda_sq, s.fmap.grid.m, safety);
}

FlowState make_state(const GridMap& f0, double guard, double safety) {
  const SpacelikeReport r = spacelike_check(f0, guard);
  if (!r.ok)
    throw NotSpacelikeError("initial map violates the spacelike guard: max lambda^2 = " +
                            std::to_string(r.worst_lambda_sq));
  FlowState s;
  s.fmap = f0;
  s.guard = guard;
  s.dt = cfl_dt(grid_step_length(f0), r.worst_lambda_sq, f0.grid.m, safety);
  return s;
}

Integrator::Integrator(const FlowState& s0, const FlowOptions& opts)
    : state_(s0), opts_(opts), cache_(std::make_unique<DomainCache>()) {
  const Grid& g = s0.fmap.grid;
  const int N = g.count();
  cache_->g1.resize(N);
  cache_->gamma1.resize(N);
  cache_->weight.resize(N);
  for (int node = 0; node < N; ++node) {
    cache_->weight[node] = node_weight(g, node);
    if (g.is_pole(node)) continue;
    const ChartPoint p{g.coord(node), 0};
    cache_->g1[node] = metric_at(s0.fmap.domain, p);
    cache_->gamma1[node] = christoffel_at(s0.fmap.domain, p);
  }
  cache_->row_stencil.resize(g.n[0]);
  for (int r = 0; r < g.n[0]; ++r) {
    const int node = g.index(r, 0);
    if (g.is_pole(node)) continue;
    cache_->row_stencil[r] = (!g.latlong && r > 0)
                                 ? cache_->row_stencil[0]
                                 : row_stencil(g, node, s0.fmap.target.chart != ChartKind::Stereographic);
  }
  if (sweep_target(s0.fmap.target))
    cache_->sweep = make_sweep_plan(g, cache_->g1, cache_->gamma1, cache_->row_stencil);
  if (opts_.polar_filter && g.latlong) filter_ = std::make_unique<PolarFilter>(g);
  field_ = evaluate(state_.fmap);
  if (!field_.spacelike || !(field_.max_lambda_sq < 1.0 - state_.guard))
    throw NotSpacelikeError("initial state violates the spacelike guard");
  if (state_.dt <= 0.0)
    state_.dt = cfl_dt(grid_step_length(state_.fmap, opts_.polar_filter), field_.max_lambda_sq,
                       g.m, opts_.safety);
}

Integrator::~Integrator() = default;
Integrator::Integrator(Integrator&&) noexcept = default;
Integrator& Integrator::operator=(Integrator&&) noexcept = default;

VelocityField Integrator::evaluate(const GridMap& F) const {
  VelocityField out;
  evaluate_into(F, out);
  return out;
}

void Integrator::evaluate_into(const GridMap& F, VelocityField& out) const {
  const Grid& g = F.grid;
  const int N = g.count(), nt = F.target.dim;
  {
    std::vector<double> W = std::move(out.W);
    out = VelocityField{};
    out.W = std::move(W);
  }
  out.W.assign(size_t(N) * nt, 0.0);
  std::vector<double> &lam = cache_->lam, &dvol = cache_->dvol, &h2 = cache_->h2, &ch = cache_->ch;
  std::vector<char>& ok = cache_->ok;
  lam.assign(N, 0.0), dvol.assign(N, 0.0), h2.assign(N, 0.0), ch.assign(N, 1.0);
  ok.assign(N, 1);
  if (cache_->sweep) {
    const SweepKernel sweep = pick_sweep(nt, F.target.chart == ChartKind::PoincareBall);
    const double k2 = F.target.metric_factor();
    const SweepOutput so{lam.data(), dvol.data(), ch.data(), h2.data(), out.W.data(), ok.data()};
    std::vector<char> inside(g.n[0], 1);
    parallel_for(
        g.n[0],
        [&](int r) {
          if (!g.is_pole(g.index(r, 0))) inside[r] = sweep(F, *cache_->sweep, r, k2, so);
        },
        std::max(1, 256 / g.n[1]));
    for (char in : inside)
      if (!in) throw ChartDomainError("point outside the Poincare ball");
  } else {
    evaluate_nodes(F, out);
  }
  reduce_and_filter(F, out);
}

void Integrator::evaluate_nodes(const GridMap& F, VelocityField& out) const {
  const Grid& g = F.grid;
  const int N = g.count(), nt = F.target.dim;
  std::vector<double> &lam = cache_->lam, &dvol = cache_->dvol, &h2 = cache_->h2, &ch = cache_->ch;
  std::vector<char>& ok = cache_->ok;
  const NodeKernel kernel = pick_kernel(g.m, nt);
  std::vector<double>& d0 = cache_->d0;
  if (g.m == 2) {
    d0.assign(size_t(N) * nt, 0.0);
    const D0Kernel k0 = pick_d0_kernel(g.m, nt);
    parallel_for(N, [&](int node) {
      const RowStencil& rs = cache_->row_stencil[g.row(node)];
      if (!g.is_pole(node) && rs.split) k0(F, node, rs, &d0[size_t(node) * nt]);
    });
  }
  parallel_for(N, [&](int node) {
    if (g.is_pole(node)) return;
    const NodeOut r = kernel(F, node, cache_->row_stencil[g.row(node)], d0.data(), cache_->g1[node],
                             cache_->gamma1[node]);
    lam[node] = r.lambda_sq;
    if (!r.spacelike) {
      ok[node] = 0;
      return;
    }
    dvol[node] = r.sqrt_det_g;
    ch[node] = r.cosh;
    h2[node] = r.normH_sq;
    for (int c = 0; c < nt; ++c) out.W[size_t(node) * nt + c] = r.W[c];
  });
}

void Integrator::reduce_and_filter(const GridMap& F, VelocityField& out) const {
  const Grid& g = F.grid;
  const int N = g.count(), nt = F.target.dim;
  const std::vector<double> &lam = cache_->lam, &dvol = cache_->dvol, &h2 = cache_->h2, &ch = cache_->ch;
  const std::vector<char>& ok = cache_->ok;
  for (int node = 0; node < N; ++node) {
    if (g.is_pole(node)) continue;
    if (!ok[node]) out.spacelike = false;
    if (lam[node] > out.max_lambda_sq || out.worst_node < 0) {
      out.max_lambda_sq = std::max(out.max_lambda_sq, lam[node]);
      out.worst_node = node;
    }
    const double w = cache_->weight[node];
    out.volume += w * dvol[node];
    out.int_normH_sq += w * dvol[node] * h2[node];
    out.max_normH_sq = std::max(out.max_normH_sq, h2[node]);
    out.max_cosh = std::max(out.max_cosh, ch[node]);
  }
  if (!out.spacelike) return;
  if (filter_ && !filter_->rows().empty()) {
    if (F.target.chart == ChartKind::Stereographic || F.target.chart == ChartKind::LatLong) {
      // Multi-chart target: filter ambient components, then project back.
      const int na = nt + 1;
      std::vector<double> amb(size_t(N) * na, 0.0);
      for (int j : filter_->rows())
        for (int k = 0; k < g.n[1]; ++k) {
          const int node = g.index(j, k);
          const AVec V = push_vector(F.target, F.at(node),
                                     Eigen::Map<const Eigen::VectorXd>(&out.W[size_t(node) * nt], nt));
          for (int c = 0; c < na; ++c) amb[size_t(node) * na + c] = V(c);
        }
      filter_->apply(amb, na, na);
      for (int j : filter_->rows())
        for (int k = 0; k < g.n[1]; ++k) {
          const int node = g.index(j, k);
          const Vec w = pull_vector(F.target, F.at(node),
                                    AVec(Eigen::Map<const Eigen::VectorXd>(&amb[size_t(node) * na], na)));
          for (int c = 0; c < nt; ++c) out.W[size_t(node) * nt + c] = w(c);
        }
    } else {
      filter_->apply(out.W, nt, nt);
    }
  }
}

bool Integrator::try_step(double dt, GridMap& out, VelocityField& out_field) const {
  const GridMap& F = state_.fmap;
  const Grid& g = F.grid;
  const int N = g.count(), nt = F.target.dim;
  auto push = [&](const GridMap& base, const std::vector<double>& V, GridMap& dst) {
    parallel_for(N, [&](int node) {
      if (g.is_pole(node)) return;
      double v[kMaxDim];
      for (int c = 0; c < nt; ++c) v[c] = dt * V[size_t(node) * nt + c];
      const size_t o = size_t(node) * nt;
      if (exp_map_single_chart(base.target, &base.values[o], v, &dst.values[o])) return;
      dst.set(node, exp_map(base.target, base.at(node), Eigen::Map<const Eigen::VectorXd>(v, nt)));
    });
    fill_pole_rows(dst);
  };
  auto accept = [&](const VelocityField& f) {
    return f.spacelike && f.max_lambda_sq < 1.0 - state_.guard;
  };
  try {
    out = F;
    push(F, field_.W, out);
    if (opts_.scheme == Scheme::Heun) {
      const VelocityField mid = evaluate(out);
      if (!mid.spacelike) return false;
      // Average of both velocities in the base chart, plus ½dt Γ(k₁, k₁) so
      // that the exponential step agrees with the chart Heun step to O(dt³).
      std::vector<double> vbar(size_t(N) * nt, 0.0);
      parallel_for(N, [&](int node) {
        if (g.is_pole(node)) return;
        const ChartPoint p = F.at(node);
        const Vec k1 = Eigen::Map<const Eigen::VectorXd>(&field_.W[size_t(node) * nt], nt);
        Vec k2 = Eigen::Map<const Eigen::VectorXd>(&mid.W[size_t(node) * nt], nt);
        const ChartPoint q = out.at(node);
        if (q.tag != p.tag)
          k2 = pull_vector(F.target, to_chart(F.target, q, p.tag), push_vector(F.target, q, k2));
        const Tensor3 G = christoffel_at(F.target, p);
        for (int c = 0; c < nt; ++c) {
          const double corr = k1.dot(G[c] * k1);
          vbar[size_t(node) * nt + c] = 0.5 * (k1(c) + k2(c)) + 0.5 * dt * corr;
        }
      });
      out = F;
      push(F, vbar, out);
    }
    evaluate_into(out, out_field);
    return accept(out_field);
  } catch (const InjectivityRadiusError&) {
    return false;
  } catch (const ChartDomainError&) {
    return false;
  } catch (const NotSpacelikeError&) {
    return false;
  }
}

double Integrator::advance(bool hold_dt) {
  double dt = state_.dt;
  GridMap& next = next_map_;
  VelocityField& next_field = next_field_;
  for (int attempt = 0;; ++attempt) {
    if (try_step(dt, next, next_field)) break;
    if (attempt >= opts_.max_halvings)
      throw SpacelikeViolation("step rejected after " + std::to_string(attempt + 1) +
                               " attempts at t=" + std::to_string(state_.t) + " dt=" +
                               std::to_string(dt) + " step=" + std::to_string(state_.step_index) +
                               " max lambda^2=" + std::to_string(next_field.max_lambda_sq));
    dt *= 0.5;
    ++rejections_;
  }
  std::swap(state_.fmap, next);
  std::swap(field_, next_field);
  state_.t += dt;
  ++state_.step_index;
  state_.dt = dt;
  if (opts_.auto_dt && !hold_dt)
    state_.dt = cfl_dt(grid_step_length(state_.fmap, opts_.polar_filter), field_.max_lambda_sq,
                       state_.fmap.grid.m, opts_.safety);
  return dt;
}

VelocityField velocity_field(const GridMap& F, bool polar_filter) {
  FlowState s;
  s.fmap = F;
  s.dt = 1.0;
  s.guard = 0.0;
  FlowOptions o;
  o.polar_filter = polar_filter;
  try {
    return Integrator(s, o).field();
  } catch (const NotSpacelikeError&) {
    VelocityField bad;
    bad.spacelike = false;
    return bad;
  }
}

FlowState step(const FlowState& state, const FlowOptions& opts) {
  Integrator it(state, opts);
  it.advance();
  return it.state();
}

RescalePlan compute_rho(const ManifoldModel& domain, const ManifoldModel& target) {
  const double K1 = domain.sectional_curvature();
  const double K2 = target.dim >= 2 ? target.sectional_curvature() : 0.0;
  RescalePlan plan;
  const double k1 = domain.dim >= 2 ? K1 : 0.0;
  if (K2 <= 0.0 && k1 >= 0.0) {
    plan.mode = RescaleMode::NonpositiveTarget;
    plan.rho = std::numeric_limits<double>::infinity();
    return plan;
  }
  if (k1 > 0.0) {
    plan.mode = RescaleMode::SpherePositive;
    plan.rho = k1 / K2;
    return plan;
  }
  throw HypothesisError("curvature hypotheses fail: K1 = " + std::to_string(k1) +
                        ", K2 = " + std::to_string(K2));
}

RescaledProblem build_rescaled_problem(const GridMap& f0, double guard, double safety) {
  RescaledProblem out;
  out.plan = compute_rho(f0.domain, f0.target);
  const SpacelikeReport r = spacelike_check(f0, guard);
  const double lam = r.worst_lambda_sq;
  if (std::isinf(out.plan.rho)) {
    // Any ρ works; rescale only when f0 is not already within the guard.
    out.rho_used = lam < 1.0 - guard ? 1.0 : lam / (1.0 - 2.0 * guard);
  } else {
    out.rho_used = out.plan.rho;
    if (!(lam < out.rho_used * (1.0 - guard)))
      throw HypothesisError("initial map is not rho-contracting: max lambda^2 = " + std::to_string(lam) +
                            " against rho = " + std::to_string(out.rho_used) + " (guard " +
                            std::to_string(guard) + ")");
  }
  GridMap f = f0;
  if (out.rho_used != 1.0) f.target = f0.target.scaled(1.0 / out.rho_used);
  out.state = make_state(f, guard, safety);
  return out;
}

Trajectory run(const FlowState& s0, const RunOptions& opts) {
  Trajectory tr;
  Integrator it(s0, opts.flow);
  const int every = std::max(1, opts.record_every);
  auto telemetry = [&]() {
    const VelocityField& f = it.field();
    StepTelemetry s;
    s.step = it.state().step_index;
    s.t = it.state().t;
    s.dt = it.state().dt;
    s.eta = f.max_cosh;
    s.max_lambda_sq = f.max_lambda_sq;
    s.volume = f.volume;
    s.int_normH_sq = f.int_normH_sq;
    s.max_normH_sq = f.max_normH_sq;
    return s;
  };
  auto converged = [&]() {
    const VelocityField& f = it.field();
    return f.max_cosh - 1.0 < opts.stop.eta_tol && std::sqrt(f.max_normH_sq) < opts.stop.H_tol;
  };

  struct Pending {
    RecordWindow w;
    int have = 0;
    double dt = 0.0;
    void add(const FlowState& s, double used) {
      if (used != dt) w.uniform = false;
      (have == 1 ? w.b : w.c) = s;
      ++have;
    }
  };
  std::vector<Pending> pending;
  auto emit = [&](RecordWindow&& w) {
    if (opts.on_record) opts.on_record(w);
    else tr.records.push_back(std::move(w));
  };
  {
    Pending p;
    p.w.a = it.state();
    p.w.centered = false;
    p.have = 1;
    p.dt = it.state().dt;
    pending.push_back(std::move(p));
  }
  tr.steps.push_back(telemetry());
  FlowState before;
  double last_used = 0.0;
  for (;;) {
    if (converged()) {
      tr.termination = "converged";
      break;
    }
    if (it.state().t >= opts.stop.t_max) {
      tr.termination = "t_max";
      break;
    }
    if (opts.stop.max_steps >= 0 && it.state().step_index >= opts.stop.max_steps) {
      tr.termination = "max_steps";
      break;
    }
    before = it.state();
    const long next_index = before.step_index + 1;
    // Hold dt across the steps that a record window spans.
    const bool hold = next_index % every == 0 || next_index == 1;
    last_used = it.advance(hold);
    tr.steps.push_back(telemetry());
    for (auto& p : pending) p.add(it.state(), last_used);
    for (auto& p : pending)
      if (p.have == 3) emit(std::move(p.w));
    pending.erase(std::remove_if(pending.begin(), pending.end(), [](const Pending& p) { return p.have == 3; }),
                  pending.end());
    if (next_index % every == 0) {
      Pending p;
      p.w.a = before;
      p.w.b = it.state();
      p.have = 2;
      p.dt = last_used;
      pending.push_back(std::move(p));
    }
  }
  const long final_index = it.state().step_index;
  if (final_index > 0 && final_index % every != 0) {
    Pending p;
    p.w.a = before;
    p.w.b = it.state();
    p.have = 2;
    p.dt = last_used;
    pending.push_back(std::move(p));
  }
  // Windows still open at termination are completed with probe steps that do
  // not belong to the trajectory.
  for (auto& p : pending) {
    FlowState s = p.have == 1 ? p.w.a : p.w.b;
    s.dt = p.dt;
    Integrator probe(s, opts.flow);
    while (p.have < 3) {
      const double used = probe.advance(true);
      p.add(probe.state(), used);
    }
    emit(std::move(p.w));
  }
  tr.accepted_steps = final_index;
  tr.rejections = it.rejections();
  if (opts.stop.require_convergence && tr.termination != "converged")
    throw NonConvergence("t_max reached before the stopping tolerances (eta - 1 = " +
                         std::to_string(it.field().max_cosh - 1.0) + ")");
  return tr;
}

}  // namespace spacegraph
