#include "spacegraph/extrinsic.hpp"

#include <cmath>

#include "spacegraph/errors.hpp"

namespace spacegraph {

namespace {

void require_spacelike(const PointGeometry& pg) {
  if (!(pg.spec.lambda_sq(0) < 1.0)) throw NotSpacelikeError("graph metric is not positive definite");
}

// Index α of the target frame pairs with domain index i = α when α < rank.
double paired_lambda_sq(const PointGeometry& pg, int alpha) {
  return alpha < pg.spec.rank ? pg.spec.lambda_sq(alpha) : 0.0;
}

}  // namespace

Tensor3 hessian_from_jet(const Jet& jet, const Tensor3& gamma1, const Tensor3& gamma2) {
  const int m = static_cast<int>(jet.df.rows()), n = static_cast<int>(jet.df.cols());
  Tensor3 H(n, m);
  for (int c = 0; c < n; ++c) {
    Mat& Hc = H[c];
    for (int i = 0; i < m; ++i)
      for (int j = i; j < m; ++j) {
        double v = jet.d2[c](i, j);
        for (int k = 0; k < m; ++k) v -= gamma1[k](i, j) * jet.df(k, c);
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b) v += gamma2[c](a, b) * jet.df(i, a) * jet.df(j, b);
        Hc(i, j) = Hc(j, i) = v;
      }
  }
  return H;
}

Tensor3 map_hessian(const GridMap& F, int node) {
  const Jet jet = local_jet(F, node);
  const Tensor3 G1 = christoffel_at(F.domain, ChartPoint{F.grid.coord(node), 0});
  const Tensor3 G2 = christoffel_at(F.target, jet.f);
  return hessian_from_jet(jet, G1, G2);
}

Velocity flow_velocity(const PointGeometry& pg, const Tensor3& hess) {
  require_spacelike(pg);
  const int n = static_cast<int>(pg.g2.rows());
  Velocity v;
  v.W.resize(n);
  for (int c = 0; c < n; ++c) v.W(c) = (pg.graph_metric_inv.cwiseProduct(hess[c])).sum();
  v.Z = pg.graph_metric_inv * (pg.df * (pg.g2 * v.W));
  return v;
}

FundamentalForms second_fundamental_norms(const PointGeometry& pg, const Tensor3& hess) {
  require_spacelike(pg);
  const int m = static_cast<int>(pg.g1.rows()), n = static_cast<int>(pg.g2.rows());
  const Spectrum& S = pg.spec;
  Mat E(m, m);  // columns a_i / sqrt(1 − λ_i²): g-orthonormal domain frame
  for (int i = 0; i < m; ++i) E.col(i) = S.frame_a.col(i) / std::sqrt(1.0 - S.lambda_sq(i));
  FundamentalForms out;
  out.h = Tensor3(n, m);
  // Hess in the e-frame, then components along a_{m+α} with the (0,u)^⊥
  // normalization 1/sqrt(1 − λ_α²).
  std::array<Mat, kMaxDim> He;
  for (int c = 0; c < n; ++c) He[c] = E.transpose() * hess[c] * E;
  for (int a = 0; a < n; ++a) {
    const Vec wb = pg.g2 * S.frame_b.col(a);
    const double norm = 1.0 / std::sqrt(1.0 - paired_lambda_sq(pg, a));
    Mat& ha = out.h[a];
    for (int c = 0; c < n; ++c) ha += wb(c) * He[c];
    ha *= norm;
  }
  Vec W(n);
  for (int c = 0; c < n; ++c) W(c) = (pg.graph_metric_inv.cwiseProduct(hess[c])).sum();
  for (int a = 0; a < n; ++a) {
    out.normB_sq += out.h[a].squaredNorm();
    const double tr = out.h[a].trace();
    out.normH_sq += tr * tr;
    const double Wa = S.frame_b.col(a).dot(pg.g2 * W);
    out.normH_sq_projection += Wa * Wa / (1.0 - paired_lambda_sq(pg, a));
  }
  return out;
}

double mean_curvature_sq(const PointGeometry& pg, const Velocity& v) {
  return v.W.dot(pg.g2 * v.W) + v.Z.dot(pg.graph_metric * v.Z);
}

double bracket_QB(const PointGeometry& pg, const Tensor3& h) {
  const int m = static_cast<int>(pg.g1.rows()), n = static_cast<int>(pg.g2.rows());
  const int p = std::min(m, n);
  const Vec& lam = pg.spec.lambda;
  double B = 0.0;
  for (int a = 0; a < n; ++a) B += h[a].squaredNorm();
  double diag = 0.0, cross = 0.0;
  for (int k = 0; k < m; ++k) {
    for (int i = 0; i < p; ++i) diag += lam(i) * lam(i) * h[i](i, k) * h[i](i, k);
    for (int i = 0; i < p; ++i)
      for (int j = i + 1; j < p; ++j) cross += lam(i) * lam(j) * h[j](i, k) * h[i](j, k);
  }
  return B - diag - 2.0 * cross;
}

double curvature_QR(const PointGeometry& pg, const ManifoldModel& domain, const ManifoldModel& target) {
  const int m = static_cast<int>(pg.g1.rows());
  const Spectrum& S = pg.spec;
  double q = 0.0;
  for (int i = 0; i < m; ++i) {
    const double li = S.lambda_sq(i);
    if (li == 0.0) continue;
    q += li / (1.0 - li) * ricci_at(domain, pg.p, S.frame_a.col(i));
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      const double lj = S.lambda_sq(j);
      if (i >= S.rank || j >= S.rank) continue;  // coefficient λ_i²λ_j² vanishes
      const double coef = li * lj / ((1.0 - li) * (1.0 - lj));
      const double K1 = curvature_data_at(domain, pg.p, S.frame_a.col(i), S.frame_a.col(j)).sectional;
      const double K2 = curvature_data_at(target, pg.fp, S.frame_b.col(i), S.frame_b.col(j)).sectional;
      q += coef * (K1 - K2);
    }
  }
  return q;
}

double gradient_identity_rhs(const PointGeometry& pg, const Tensor3& h) {
  const int m = static_cast<int>(pg.g1.rows()), n = static_cast<int>(pg.g2.rows());
  const int p = std::min(m, n);
  double s = 0.0;
  for (int k = 0; k < m; ++k) {
    double t = 0.0;
    for (int i = 0; i < p; ++i) t += pg.spec.lambda(i) * h[i](i, k);
    s += t * t;
  }
  return s;
}

NodeGeometry node_geometry(const GridMap& F, int node, const FrameOptions& opts) {
  NodeGeometry G;
  const Jet jet = local_jet(F, node);
  const ChartPoint p{F.grid.coord(node), 0};
  G.pg = point_geometry(F.domain, F.target, p, jet.f, jet.df, opts);
  G.ex.hess = hessian_from_jet(jet, christoffel_at(F.domain, p), christoffel_at(F.target, jet.f));
  const Velocity v = flow_velocity(G.pg, G.ex.hess);
  G.ex.W = v.W;
  G.ex.Z = v.Z;
  FundamentalForms ff = second_fundamental_norms(G.pg, G.ex.hess);
  G.ex.h = ff.h;
  G.ex.normB_sq = ff.normB_sq;
  G.ex.normH_sq = ff.normH_sq;
  G.ex.normH_sq_projection = ff.normH_sq_projection;
  return G;
}

}  // namespace spacegraph
