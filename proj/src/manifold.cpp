#include "spacegraph/manifold.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "spacegraph/errors.hpp"
#include "spacegraph/format.hpp"

namespace spacegraph {

namespace {

constexpr double kPi = 3.14159265358979323846;

const char* kind_name(ManifoldKind k) {
  switch (k) {
    case ManifoldKind::FlatTorus: return "flat_torus";
    case ManifoldKind::RoundSphere: return "round_sphere";
    case ManifoldKind::HyperbolicSpace: return "hyperbolic";
    case ManifoldKind::EuclideanSpace: return "euclidean";
  }
  return "?";
}

const char* chart_name(ChartKind c) {
  switch (c) {
    case ChartKind::PeriodicBox: return "periodic_box";
    case ChartKind::LatLong: return "lat_long";
    case ChartKind::Stereographic: return "stereographic";
    case ChartKind::PoincareBall: return "poincare_ball";
    case ChartKind::Identity: return "identity";
  }
  return "?";
}

void require_dim(int dim) {
  if (dim < 1 || dim > kMaxDim) throw ConfigError("manifold dimension must be in 1..3");
}

// Stereographic helpers on the unit sphere S^n ⊂ R^{n+1}.
AVec stereo_embed(const Vec& x, int tag) {
  const int n = static_cast<int>(x.size());
  const double r2 = x.squaredNorm();
  const double q = 1.0 + r2;
  AVec p(n + 1);
  p.head(n) = 2.0 * x / q;
  p(n) = (tag == 0 ? (r2 - 1.0) : (1.0 - r2)) / q;
  return p;
}

Vec stereo_project(const AVec& p, int tag) {
  const int n = static_cast<int>(p.size()) - 1;
  const double denom = tag == 0 ? 1.0 - p(n) : 1.0 + p(n);
  return p.head(n) / denom;
}

// Columns are ∂p/∂x_j; they are mutually orthogonal with length 2/q.
AMat stereo_jacobian(const Vec& x, int tag) {
  const int n = static_cast<int>(x.size());
  const double q = 1.0 + x.squaredNorm();
  AMat J(n + 1, n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j) J(k, j) = (k == j ? 2.0 / q : 0.0) - 4.0 * x(k) * x(j) / (q * q);
  const double sign = tag == 0 ? 1.0 : -1.0;
  for (int j = 0; j < n; ++j) J(n, j) = sign * 4.0 * x(j) / (q * q);
  return J;
}

AVec latlong_embed(const Vec& x) {
  AVec p(3);
  const double st = std::sin(x(0));
  p << st * std::cos(x(1)), st * std::sin(x(1)), std::cos(x(0));
  return p;
}

AMat latlong_jacobian(const Vec& x) {
  AMat J(3, 2);
  const double st = std::sin(x(0)), ct = std::cos(x(0));
  const double sp = std::sin(x(1)), cp = std::cos(x(1));
  J << ct * cp, -st * sp, ct * sp, st * cp, -st, 0.0;
  return J;
}

Vec wrap_difference(const ManifoldModel& M, Vec d) {
  for (int i = 0; i < M.dim; ++i) {
    const double L = M.sides[i];
    d(i) -= L * std::round(d(i) / L);
  }
  return d;
}

}  // namespace

ManifoldModel ManifoldModel::flat_torus(int dim, const std::array<double, kMaxDim>& sides) {
  require_dim(dim);
  ManifoldModel M;
  M.kind = ManifoldKind::FlatTorus;
  M.dim = dim;
  M.chart = ChartKind::PeriodicBox;
  for (int i = 0; i < dim; ++i) {
    if (!(sides[i] > 0.0)) throw ConfigError("torus side lengths must be positive");
    M.sides[i] = sides[i];
  }
  return M;
}

ManifoldModel ManifoldModel::round_sphere(int dim, double radius, ChartKind chart) {
  require_dim(dim);
  if (!(radius > 0.0)) throw ConfigError("sphere radius must be positive");
  if (chart != ChartKind::LatLong && chart != ChartKind::Stereographic)
    throw ConfigError("sphere chart must be lat_long or stereographic");
  if (chart == ChartKind::LatLong && dim != 2) throw ConfigError("lat_long chart needs dim 2");
  ManifoldModel M;
  M.kind = ManifoldKind::RoundSphere;
  M.dim = dim;
  M.chart = chart;
  M.radius = radius;
  return M;
}

ManifoldModel ManifoldModel::hyperbolic(int dim, double c) {
  require_dim(dim);
  if (!(c > 0.0)) throw ConfigError("hyperbolic curvature parameter c must be positive");
  ManifoldModel M;
  M.kind = ManifoldKind::HyperbolicSpace;
  M.dim = dim;
  M.chart = ChartKind::PoincareBall;
  M.curvature_c = c;
  return M;
}

ManifoldModel ManifoldModel::euclidean(int dim) {
  require_dim(dim);
  ManifoldModel M;
  M.kind = ManifoldKind::EuclideanSpace;
  M.dim = dim;
  M.chart = ChartKind::Identity;
  return M;
}

ManifoldModel ManifoldModel::scaled(double factor) const {
  if (!(factor > 0.0)) throw ConfigError("metric scale must be positive");
  ManifoldModel M = *this;
  M.scale *= factor;
  return M;
}

double ManifoldModel::metric_factor() const {
  switch (kind) {
    case ManifoldKind::RoundSphere: return radius * radius * scale;
    case ManifoldKind::HyperbolicSpace: return scale / curvature_c;
    default: return scale;
  }
}

double ManifoldModel::sectional_curvature() const {
  switch (kind) {
    case ManifoldKind::RoundSphere: return 1.0 / metric_factor();
    case ManifoldKind::HyperbolicSpace: return -1.0 / metric_factor();
    default: return 0.0;
  }
}

std::string ManifoldModel::descriptor() const {
  std::ostringstream os;
  os << "kind=" << kind_name(kind) << ",dim=" << dim << ",chart=" << chart_name(chart)
     << ",sides=" << format_real(sides[0]) << ':' << format_real(sides[1]) << ':'
     << format_real(sides[2]) << ",radius=" << format_real(radius)
     << ",c=" << format_real(curvature_c) << ",scale=" << format_real(scale);
  return os.str();
}

ManifoldModel ManifoldModel::from_descriptor(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("bad manifold descriptor: " + text);
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("manifold descriptor missing ") + key);
    return it->second;
  };
  ManifoldModel M;
  const std::string k = get("kind"), c = get("chart");
  bool found = false;
  for (auto kk : {ManifoldKind::FlatTorus, ManifoldKind::RoundSphere,
                  ManifoldKind::HyperbolicSpace, ManifoldKind::EuclideanSpace})
    if (k == kind_name(kk)) M.kind = kk, found = true;
  if (!found) throw ConfigError("unknown manifold kind " + k);
  found = false;
  for (auto cc : {ChartKind::PeriodicBox, ChartKind::LatLong, ChartKind::Stereographic,
                  ChartKind::PoincareBall, ChartKind::Identity})
    if (c == chart_name(cc)) M.chart = cc, found = true;
  if (!found) throw ConfigError("unknown chart " + c);
  M.dim = std::stoi(get("dim"));
  require_dim(M.dim);
  std::stringstream sides(get("sides"));
  for (int i = 0; i < kMaxDim; ++i) {
    std::string s;
    std::getline(sides, s, ':');
    M.sides[i] = parse_real(s);
  }
  M.radius = parse_real(get("radius"));
  M.curvature_c = parse_real(get("c"));
  M.scale = parse_real(get("scale"));
  return M;
}

bool operator==(const ManifoldModel& a, const ManifoldModel& b) {
  return a.kind == b.kind && a.dim == b.dim && a.chart == b.chart && a.sides == b.sides &&
         a.radius == b.radius && a.curvature_c == b.curvature_c && a.scale == b.scale;
}

void check_chart(const ManifoldModel& M, const ChartPoint& p) {
  if (p.x.size() != M.dim) throw ChartDomainError("point has wrong dimension");
  if (!p.x.allFinite()) throw ChartDomainError("non-finite chart point");
  switch (M.chart) {
    case ChartKind::PoincareBall:
      if (p.x.squaredNorm() >= 1.0) throw ChartDomainError("point outside the Poincare ball");
      break;
    case ChartKind::LatLong:
      if (!(p.x(0) > 0.0 && p.x(0) < kPi))
        throw ChartDomainError("colatitude outside (0, pi); poles are chart singularities");
      break;
    case ChartKind::Stereographic:
      if (p.tag != 0 && p.tag != 1) throw ChartDomainError("stereographic tag must be 0 or 1");
      break;
    default: break;
  }
}

Mat metric_at(const ManifoldModel& M, const ChartPoint& p) {
  check_chart(M, p);
  const double k = M.metric_factor();
  const int n = M.dim;
  switch (M.chart) {
    case ChartKind::LatLong: {
      Mat g = Mat::Zero(2, 2);
      const double s = std::sin(p.x(0));
      g(0, 0) = k;
      g(1, 1) = k * s * s;
      return g;
    }
    case ChartKind::Stereographic: {
      const double f = 2.0 / (1.0 + p.x.squaredNorm());
      return Mat::Identity(n, n) * (k * f * f);
    }
    case ChartKind::PoincareBall: {
      const double f = 2.0 / (1.0 - p.x.squaredNorm());
      return Mat::Identity(n, n) * (k * f * f);
    }
    default: return Mat::Identity(n, n) * k;
  }
}

Vec conformal_log_gradient(const ManifoldModel& M, const Vec& x) {
  switch (M.chart) {
    case ChartKind::Stereographic: return -2.0 * x / (1.0 + x.squaredNorm());
    case ChartKind::PoincareBall: return 2.0 * x / (1.0 - x.squaredNorm());
    default: return Vec::Zero(x.size());
  }
}

Tensor3 christoffel_at(const ManifoldModel& M, const ChartPoint& p) {
  check_chart(M, p);
  const int n = M.dim;
  Tensor3 G(n, n);
  switch (M.chart) {
    case ChartKind::LatLong: {
      const double s = std::sin(p.x(0)), c = std::cos(p.x(0));
      G[0](1, 1) = -s * c;
      G[1](0, 1) = G[1](1, 0) = c / s;
      break;
    }
    case ChartKind::Stereographic:
    case ChartKind::PoincareBall: {
      // g = e^{2σ}δ: Γ^k_ij = δ_ik σ_j + δ_jk σ_i − δ_ij σ_k
      const Vec s = conformal_log_gradient(M, p.x);
      for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            G[k](i, j) = (i == k ? s(j) : 0.0) + (j == k ? s(i) : 0.0) - (i == j ? s(k) : 0.0);
      break;
    }
    default: break;
  }
  return G;
}

CurvatureData curvature_data_at(const ManifoldModel& M, const ChartPoint& p, const Vec& u,
                                const Vec& v) {
  const Mat g = metric_at(M, p);
  const double uu = u.dot(g * u), vv = v.dot(g * v), uv = u.dot(g * v);
  const double gram = uu * vv - uv * uv;
  if (!(gram > 1e-12 * uu * vv) || M.dim < 2)
    throw DegeneratePlaneError("plane vectors are (nearly) parallel");
  CurvatureData out;
  out.sectional = M.sectional_curvature();
  out.ricci_u = (M.dim - 1) * out.sectional * uu;
  out.ricci_v = (M.dim - 1) * out.sectional * vv;
  return out;
}

double ricci_at(const ManifoldModel& M, const ChartPoint& p, const Vec& a) {
  const Mat g = metric_at(M, p);
  return (M.dim - 1) * M.sectional_curvature() * a.dot(g * a);
}

ChartPoint to_chart(const ManifoldModel& M, const ChartPoint& p, int tag) {
  if (M.chart != ChartKind::Stereographic || p.tag == tag) return p;
  const double r2 = p.x.squaredNorm();
  if (r2 == 0.0) throw ChartDomainError("chart origin has no image in the opposite chart");
  return ChartPoint{p.x / r2, tag};
}

AVec embed(const ManifoldModel& M, const ChartPoint& p) {
  switch (M.chart) {
    case ChartKind::Stereographic: return stereo_embed(p.x, p.tag);
    case ChartKind::LatLong: return latlong_embed(p.x);
    default: return AVec(p.x);
  }
}

AVec push_vector(const ManifoldModel& M, const ChartPoint& p, const Vec& v) {
  switch (M.chart) {
    case ChartKind::Stereographic: return stereo_jacobian(p.x, p.tag) * v;
    case ChartKind::LatLong: return latlong_jacobian(p.x) * v;
    default: return AVec(v);
  }
}

Vec pull_vector(const ManifoldModel& M, const ChartPoint& p, const AVec& ambient) {
  switch (M.chart) {
    case ChartKind::Stereographic: {
      const double q = 1.0 + p.x.squaredNorm();
      return stereo_jacobian(p.x, p.tag).transpose() * ambient * (q * q / 4.0);
    }
    case ChartKind::LatLong: {
      const AMat J = latlong_jacobian(p.x);
      const double s = std::sin(p.x(0));
      Vec v(2);
      v(0) = J.col(0).dot(ambient);
      v(1) = J.col(1).dot(ambient) / (s * s);
      return v;
    }
    default: return Vec(ambient);
  }
}

ChartPoint exp_map(const ManifoldModel& M, const ChartPoint& p, const Vec& v) {
  check_chart(M, p);
  if (v.size() != M.dim) throw ChartDomainError("tangent vector has wrong dimension");
  if (v.squaredNorm() == 0.0) return p;
  switch (M.chart) {
    case ChartKind::Stereographic:
    case ChartKind::LatLong: {
      const AVec P = embed(M, p);
      const AVec V = push_vector(M, p, v);
      const double a = V.norm();  // geodesic angle on the unit sphere
      if (a >= kPi)
        throw InjectivityRadiusError("tangent vector reaches the injectivity radius");
      const AVec Q = std::cos(a) * P + (std::sin(a) / a) * V;
      if (M.chart == ChartKind::LatLong) {
        ChartPoint out{Vec(2), 0};
        out.x(0) = std::atan2(std::hypot(Q(0), Q(1)), Q(2));
        double phi = std::atan2(Q(1), Q(0));
        phi += 2.0 * kPi * std::round((p.x(1) - phi) / (2.0 * kPi));
        out.x(1) = phi;
        check_chart(M, out);
        return out;
      }
      const int n = M.dim;
      int tag = p.tag;
      // |x| > 2 in the current chart is equivalent to denominator < 0.4.
      const double denom = tag == 0 ? 1.0 - Q(n) : 1.0 + Q(n);
      if (denom < 0.4) tag = 1 - tag;
      return ChartPoint{stereo_project(Q, tag), tag};
    }
    default: {
      ChartPoint out{Vec(M.dim), p.tag};
      exp_map_single_chart(M, p.x.data(), v.data(), out.x.data());
      return out;
    }
  }
}

bool exp_map_single_chart(const ManifoldModel& M, const double* x, const double* v, double* out) {
  const int n = M.dim;
  switch (M.chart) {
    case ChartKind::Stereographic:
    case ChartKind::LatLong: return false;
    case ChartKind::PoincareBall: {
      double x2 = 0.0, v2 = 0.0;
      for (int i = 0; i < n; ++i) x2 += x[i] * x[i], v2 += v[i] * v[i];
      if (!(x2 < 1.0)) throw ChartDomainError("point outside the Poincare ball");
      if (v2 == 0.0) {
        std::copy(x, x + n, out);
        return true;
      }
      // y = tanh(λ|v|/2) v/|v|, then the Möbius sum x ⊕ y
      const double lam = 2.0 / (1.0 - x2), nv = std::sqrt(v2);
      const double sy = std::tanh(0.5 * lam * nv) / nv;
      double xy = 0.0, y2 = 0.0;
      for (int i = 0; i < n; ++i) xy += x[i] * v[i] * sy, y2 += v[i] * v[i] * sy * sy;
      const double a = 1.0 + 2.0 * xy + y2, b = 1.0 - x2, den = 1.0 + 2.0 * xy + x2 * y2;
      double o2 = 0.0;
      for (int i = 0; i < n; ++i) {
        out[i] = (a * x[i] + b * sy * v[i]) / den;
        o2 += out[i] * out[i];
      }
      if (o2 >= 1.0) throw ChartDomainError("exp map left the Poincare ball in floating point");
      return true;
    }
    default:
      for (int i = 0; i < n; ++i) out[i] = x[i] + v[i];
      return true;
  }
}

double distance(const ManifoldModel& M, const ChartPoint& p, const ChartPoint& q) {
  const double sk = std::sqrt(M.metric_factor());
  switch (M.chart) {
    case ChartKind::Stereographic:
    case ChartKind::LatLong: {
      const double chord = (embed(M, p) - embed(M, q)).norm();
      return sk * 2.0 * std::asin(std::min(1.0, 0.5 * chord));
    }
    case ChartKind::PoincareBall: {
      const double z = 2.0 * (p.x - q.x).squaredNorm() /
                       ((1.0 - p.x.squaredNorm()) * (1.0 - q.x.squaredNorm()));
      return sk * 2.0 * std::asinh(std::sqrt(0.5 * z));
    }
    case ChartKind::PeriodicBox: return sk * wrap_difference(M, p.x - q.x).norm();
    default: return sk * (p.x - q.x).norm();
  }
}

}  // namespace spacegraph
