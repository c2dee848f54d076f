#include "spacegraph/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "spacegraph/errors.hpp"
#include "spacegraph/format.hpp"

namespace spacegraph {

namespace {

constexpr double kTwoPi = 6.283185307179586;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "preset", "seed", "threads",
      "domain.kind", "domain.dim", "domain.radius", "domain.curvature", "domain.sides", "domain.scale",
      "target.kind", "target.dim", "target.radius", "target.curvature", "target.sides", "target.scale",
      "target.rescale",
      "grid.res0", "grid.res1",
      "map.kind", "map.amplitude", "map.value", "map.matrix", "map.path",
      "flow.dt_mode", "flow.dt", "flow.safety", "flow.t_max", "flow.eta_tol", "flow.H_tol",
      "flow.record_every", "flow.guard", "flow.scheme", "flow.polar_filter", "flow.max_steps",
      "flow.max_halvings", "flow.require_convergence",
      "diagnostics.phi", "diagnostics.grad_identity", "diagnostics.lncosh_evolution",
      "diagnostics.volume_law", "diagnostics.diameter", "diagnostics.snapshots",
      "refine.t"};
  return keys;
}

const char* kind_key(ManifoldKind k) {
  switch (k) {
    case ManifoldKind::FlatTorus: return "torus";
    case ManifoldKind::RoundSphere: return "sphere";
    case ManifoldKind::HyperbolicSpace: return "hyperbolic";
    default: return "euclidean";
  }
}

const char* map_key(MapKind k) {
  switch (k) {
    case MapKind::Sine: return "sine";
    case MapKind::Latitude: return "latitude";
    case MapKind::Constant: return "constant";
    case MapKind::Linear: return "linear";
    default: return "snapshot";
  }
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
  return s;
}

// Reads one manifold section on top of `base`; the sphere chart follows the role.
ManifoldModel read_model(const Config& c, const std::string& sec, const ManifoldModel& base, bool is_domain) {
  const std::string kind = c.str(sec + ".kind", kind_key(base.kind));
  const long dim = c.integer(sec + ".dim", base.dim);
  if (dim < 1 || dim > kMaxDim) c.fail(sec + ".dim", "dimension must be 1, 2 or 3");
  ManifoldModel M;
  try {
    if (kind == "torus") {
      std::array<double, kMaxDim> sides = base.kind == ManifoldKind::FlatTorus
                                              ? base.sides
                                              : std::array<double, kMaxDim>{kTwoPi, kTwoPi, kTwoPi};
      if (c.has(sec + ".sides")) {
        const auto v = c.reals(sec + ".sides");
        if (long(v.size()) != dim) c.fail(sec + ".sides", "expected " + std::to_string(dim) + " side lengths");
        std::copy(v.begin(), v.end(), sides.begin());
      }
      for (long i = 0; i < dim; ++i)
        if (sides[i] == 0.0) sides[i] = kTwoPi;
      M = ManifoldModel::flat_torus(int(dim), sides);
    } else if (kind == "sphere") {
      M = ManifoldModel::round_sphere(int(dim), c.real(sec + ".radius", base.kind == ManifoldKind::RoundSphere ? base.radius : 1.0),
                                      is_domain ? ChartKind::LatLong : ChartKind::Stereographic);
    } else if (kind == "hyperbolic") {
      M = ManifoldModel::hyperbolic(int(dim), c.real(sec + ".curvature",
                                                    base.kind == ManifoldKind::HyperbolicSpace ? base.curvature_c : 1.0));
    } else if (kind == "euclidean") {
      M = ManifoldModel::euclidean(int(dim));
    } else {
      c.fail(sec + ".kind", "unknown manifold kind '" + kind + "' (torus, sphere, hyperbolic, euclidean)");
    }
    const double scale = c.real(sec + ".scale", base.kind == M.kind ? base.scale : 1.0);
    if (scale != 1.0) M = M.scaled(scale);
  } catch (const ConfigError& e) {
    if (std::string(e.what()).find("key '") != std::string::npos) throw;
    c.fail(sec + ".kind", e.what());
  }
  return M;
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": missing key");
    if (c.has(key))
      throw ConfigError("line " + std::to_string(lineno) + ", key '" + key + "': already set on line " +
                        std::to_string(c.line(key)));
    c.entries_[key] = Entry{value, lineno};
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void Config::set(const std::string& key, const std::string& value) { entries_[key] = Entry{value, 0}; }

int Config::line(const std::string& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? 0 : it->second.line;
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, e] : entries_) out.push_back(k);
  return out;
}

void Config::fail(const std::string& key, const std::string& why) const {
  const int l = line(key);
  throw ConfigError((l > 0 ? "line " + std::to_string(l) + ", " : std::string()) + "key '" + key + "': " + why);
}

std::string Config::str(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second.value;
}

double Config::real(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  try {
    return parse_real(str(key, ""));
  } catch (const ConfigError&) {
    fail(key, "expected a real number, got '" + str(key, "") + "'");
  }
}

long Config::integer(const std::string& key, long fallback) const {
  if (!has(key)) return fallback;
  const std::string s = str(key, "");
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) fail(key, "expected an integer, got '" + s + "'");
  return v;
}

bool Config::boolean(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string s = str(key, "");
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  fail(key, "expected true or false, got '" + s + "'");
}

std::vector<double> Config::reals(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(str(key, ""));
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(parse_real(trim(item)));
    } catch (const ConfigError&) {
      fail(key, "expected a comma separated list of reals, got '" + str(key, "") + "'");
    }
  }
  return out;
}

std::vector<std::string> preset_names() {
  return {"torus-sine", "sphere-to-hyperbolic", "constant", "sphere-rho-scaled"};
}

RunConfig preset_config(const std::string& name) {
  RunConfig rc;
  rc.preset = name;
  rc.stop.require_convergence = true;
  if (name == "torus-sine") {
    // graph of 0.3 (sin x, sin y) over the square torus
    rc.res = {64, 64};
    rc.amplitude = 0.3;
    rc.stop.t_max = 40.0;
    rc.stop.eta_tol = 1e-8;
    rc.stop.H_tol = 1e-3;
    rc.record_every = 500;
  } else if (name == "sphere-to-hyperbolic") {
    // S²(1) onto a geodesic of H²(−1): distance 0.5 cos θ, so λ₁² = 0.25 sin²θ
    rc.domain = ManifoldModel::round_sphere(2, 1.0, ChartKind::LatLong);
    rc.target = ManifoldModel::hyperbolic(2, 1.0);
    rc.res = {64, 128};
    rc.map = MapKind::Latitude;
    rc.amplitude = 0.5;
    rc.stop.t_max = 20.0;
    rc.stop.eta_tol = 1e-8;
    rc.stop.H_tol = 1e-3;
    rc.record_every = 1000;
  } else if (name == "constant") {
    rc.res = {16, 16};
    rc.map = MapKind::Constant;
    rc.map_values = {0.25, -0.5};
    rc.stop.t_max = 1.0;
    rc.stop.eta_tol = 1e-12;
    rc.stop.H_tol = 1e-12;
    rc.record_every = 1;
  } else if (name == "sphere-rho-scaled") {
    // S²(2) → S²(1): ρ = 1/4, so the map has to contract by more than 2
    rc.domain = ManifoldModel::round_sphere(2, 2.0, ChartKind::LatLong);
    rc.target = ManifoldModel::round_sphere(2, 1.0, ChartKind::Stereographic);
    rc.res = {32, 64};
    rc.map = MapKind::Latitude;
    rc.amplitude = 0.7;
    rc.rescale = true;
    rc.stop.t_max = 60.0;
    rc.stop.eta_tol = 1e-8;
    rc.stop.H_tol = 1e-3;
    rc.record_every = 500;
  } else {
    std::string all;
    for (const auto& n : preset_names()) all += (all.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (" + all + ")");
  }
  return rc;
}

RunConfig parse_run_config(const Config& c) {
  for (const auto& k : c.keys())
    if (!known_keys().count(k)) c.fail(k, "unknown key");

  RunConfig rc;
  if (c.has("preset")) {
    try {
      rc = preset_config(c.str("preset", ""));
    } catch (const ConfigError& e) {
      c.fail("preset", e.what());
    }
  }
  rc.domain = read_model(c, "domain", rc.domain, true);
  rc.target = read_model(c, "target", rc.target, false);
  rc.rescale = c.boolean("target.rescale", rc.rescale);

  rc.res[0] = int(c.integer("grid.res0", rc.res[0]));
  // 1D tori carry a single column; lat-long defaults to twice the colatitude count
  const bool latlong = rc.domain.kind == ManifoldKind::RoundSphere;
  if (rc.domain.dim == 1) rc.res[1] = 1;
  else if (c.has("grid.res1")) rc.res[1] = int(c.integer("grid.res1", rc.res[1]));
  else if (c.has("grid.res0")) rc.res[1] = latlong ? 2 * rc.res[0] : rc.res[0];
  if (rc.res[0] < 8) c.fail("grid.res0", "resolution must be at least 8");
  if (rc.domain.dim == 2 && rc.res[1] < 8) c.fail(c.has("grid.res1") ? "grid.res1" : "grid.res0", "resolution must be at least 8");
  if (rc.domain.kind != ManifoldKind::FlatTorus && !latlong)
    c.fail("domain.kind", "the domain must be a torus or a sphere");
  if (latlong && rc.domain.dim != 2) c.fail("domain.dim", "sphere domains are 2-dimensional");

  if (c.has("map.kind")) {
    const std::string k = c.str("map.kind", "");
    if (k == "sine") rc.map = MapKind::Sine;
    else if (k == "latitude") rc.map = MapKind::Latitude;
    else if (k == "constant") rc.map = MapKind::Constant;
    else if (k == "linear") rc.map = MapKind::Linear;
    else if (k == "snapshot") rc.map = MapKind::Snapshot;
    else c.fail("map.kind", "unknown map kind '" + k + "' (sine, latitude, constant, linear, snapshot)");
  }
  rc.amplitude = c.real("map.amplitude", rc.amplitude);
  if (c.has("map.value")) rc.map_values = c.reals("map.value");
  if (c.has("map.matrix")) rc.map_values = c.reals("map.matrix");
  rc.snapshot_path = c.str("map.path", rc.snapshot_path);
  const int m = rc.domain.dim, n = rc.target.dim;
  switch (rc.map) {
    case MapKind::Sine:
      if (rc.domain.kind != ManifoldKind::FlatTorus) c.fail("map.kind", "sine maps need a torus domain");
      break;
    case MapKind::Latitude:
      if (!latlong) c.fail("map.kind", "latitude maps need a sphere domain");
      break;
    case MapKind::Constant:
      if (rc.map_values.empty()) rc.map_values.assign(n, 0.0);
      if (int(rc.map_values.size()) != n) c.fail("map.value", "expected " + std::to_string(n) + " coordinates");
      break;
    case MapKind::Linear:
      if (rc.domain.kind != ManifoldKind::FlatTorus) c.fail("map.kind", "linear maps need a torus domain");
      if (int(rc.map_values.size()) != m * n)
        c.fail("map.matrix", "expected " + std::to_string(m * n) + " entries (row-major " + std::to_string(m) + "x" +
                                 std::to_string(n) + ")");
      break;
    case MapKind::Snapshot:
      if (rc.snapshot_path.empty()) c.fail("map.kind", "snapshot maps need map.path");
      break;
  }

  const std::string mode = c.str("flow.dt_mode", rc.fixed_dt ? "fixed" : "auto");
  if (mode != "auto" && mode != "fixed") c.fail("flow.dt_mode", "expected auto or fixed");
  rc.fixed_dt = mode == "fixed";
  rc.dt = c.real("flow.dt", rc.dt);
  if (rc.fixed_dt && !(rc.dt > 0.0)) c.fail(c.has("flow.dt") ? "flow.dt" : "flow.dt_mode", "fixed steps need flow.dt > 0");
  rc.flow.auto_dt = !rc.fixed_dt;
  rc.flow.safety = c.real("flow.safety", rc.flow.safety);
  if (!(rc.flow.safety > 0.0)) c.fail("flow.safety", "must be positive");
  rc.stop.t_max = c.real("flow.t_max", rc.stop.t_max);
  if (!(rc.stop.t_max >= 0.0)) c.fail("flow.t_max", "must be nonnegative");
  rc.stop.eta_tol = c.real("flow.eta_tol", rc.stop.eta_tol);
  rc.stop.H_tol = c.real("flow.H_tol", rc.stop.H_tol);
  rc.record_every = int(c.integer("flow.record_every", rc.record_every));
  if (rc.record_every < 1) c.fail("flow.record_every", "must be at least 1");
  rc.guard = c.real("flow.guard", rc.guard);
  if (!(rc.guard > 0.0 && rc.guard < 1.0)) c.fail("flow.guard", "must lie in (0, 1)");
  const std::string scheme = c.str("flow.scheme", rc.flow.scheme == Scheme::Heun ? "heun" : "euler");
  if (scheme == "euler") rc.flow.scheme = Scheme::Euler;
  else if (scheme == "heun") rc.flow.scheme = Scheme::Heun;
  else c.fail("flow.scheme", "expected euler or heun");
  rc.flow.polar_filter = c.boolean("flow.polar_filter", rc.flow.polar_filter);
  rc.stop.max_steps = c.integer("flow.max_steps", rc.stop.max_steps);
  rc.flow.max_halvings = int(c.integer("flow.max_halvings", rc.flow.max_halvings));
  if (rc.flow.max_halvings < 0) c.fail("flow.max_halvings", "must be nonnegative");
  rc.stop.require_convergence = c.boolean("flow.require_convergence", rc.stop.require_convergence);

  if (c.has("diagnostics.phi")) {
    try {
      rc.diagnostics.phi = parse_phi(c.str("diagnostics.phi", ""));
    } catch (const ConfigError& e) {
      c.fail("diagnostics.phi", e.what());
    }
  }
  rc.diagnostics.grad_identity = c.boolean("diagnostics.grad_identity", rc.diagnostics.grad_identity);
  rc.diagnostics.lncosh_evolution = c.boolean("diagnostics.lncosh_evolution", rc.diagnostics.lncosh_evolution);
  rc.diagnostics.volume_law = c.boolean("diagnostics.volume_law", rc.diagnostics.volume_law);
  rc.diagnostics.diameter = c.boolean("diagnostics.diameter", rc.diagnostics.diameter);
  rc.write_snapshots = c.boolean("diagnostics.snapshots", rc.write_snapshots);
  rc.refine_t = c.real("refine.t", rc.refine_t);
  if (!(rc.refine_t >= 0.0)) c.fail("refine.t", "must be nonnegative");

  rc.seed = c.integer("seed", rc.seed);
  rc.threads = int(c.integer("threads", rc.threads));
  if (rc.threads < 0) c.fail("threads", "must be nonnegative (0: machine parallelism)");
  for (const auto& k : c.keys())
    if (c.line(k) > 0) rc.lines[k] = c.line(k);
  return rc;
}

void RunConfig::fail(const std::string& key, const std::string& why) const {
  const auto it = lines.find(key);
  throw ConfigError((it != lines.end() ? "line " + std::to_string(it->second) + ", " : std::string()) + "key '" +
                    key + "': " + why);
}

std::string RunConfig::canonical() const {
  std::map<std::string, std::string> kv;
  auto model = [&](const std::string& sec, const ManifoldModel& M) {
    kv[sec + ".kind"] = kind_key(M.kind);
    kv[sec + ".dim"] = std::to_string(M.dim);
    if (M.kind == ManifoldKind::FlatTorus)
      kv[sec + ".sides"] = join(std::vector<double>(M.sides.begin(), M.sides.begin() + M.dim));
    if (M.kind == ManifoldKind::RoundSphere) kv[sec + ".radius"] = format_real(M.radius);
    if (M.kind == ManifoldKind::HyperbolicSpace) kv[sec + ".curvature"] = format_real(M.curvature_c);
    kv[sec + ".scale"] = format_real(M.scale);
  };
  kv["preset"] = preset;
  model("domain", domain);
  model("target", target);
  kv["target.rescale"] = rescale ? "true" : "false";
  kv["grid.res0"] = std::to_string(res[0]);
  kv["grid.res1"] = std::to_string(res[1]);
  kv["map.kind"] = map_key(map);
  kv["map.amplitude"] = format_real(amplitude);
  if (map == MapKind::Constant) kv["map.value"] = join(map_values);
  if (map == MapKind::Linear) kv["map.matrix"] = join(map_values);
  if (map == MapKind::Snapshot) kv["map.path"] = snapshot_path;
  kv["flow.dt_mode"] = fixed_dt ? "fixed" : "auto";
  if (fixed_dt) kv["flow.dt"] = format_real(dt);
  kv["flow.safety"] = format_real(flow.safety);
  kv["flow.t_max"] = format_real(stop.t_max);
  kv["flow.eta_tol"] = format_real(stop.eta_tol);
  kv["flow.H_tol"] = format_real(stop.H_tol);
  kv["flow.record_every"] = std::to_string(record_every);
  kv["flow.guard"] = format_real(guard);
  kv["flow.scheme"] = flow.scheme == Scheme::Heun ? "heun" : "euler";
  kv["flow.polar_filter"] = flow.polar_filter ? "true" : "false";
  kv["flow.max_steps"] = std::to_string(stop.max_steps);
  kv["flow.max_halvings"] = std::to_string(flow.max_halvings);
  kv["flow.require_convergence"] = stop.require_convergence ? "true" : "false";
  kv["diagnostics.phi"] = phi_name(diagnostics.phi);
  kv["diagnostics.grad_identity"] = diagnostics.grad_identity ? "true" : "false";
  kv["diagnostics.lncosh_evolution"] = diagnostics.lncosh_evolution ? "true" : "false";
  kv["diagnostics.volume_law"] = diagnostics.volume_law ? "true" : "false";
  kv["diagnostics.diameter"] = diagnostics.diameter ? "true" : "false";
  kv["diagnostics.snapshots"] = write_snapshots ? "true" : "false";
  kv["refine.t"] = format_real(refine_t);
  kv["seed"] = std::to_string(seed);
  // threads only changes scheduling, never results, so it stays out of the hash
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string config_hash(const std::string& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

GridMap build_initial_map(const RunConfig& rc) {
  if (rc.map == MapKind::Snapshot) {
    GridMap F = load_snapshot(rc.snapshot_path);
    if (!(F.domain == rc.domain) || !(F.target == rc.target))
      rc.fail("map.path", "snapshot models differ from domain.* / target.*");
    return F;
  }
  const Grid grid = make_grid(rc.domain, rc.res);
  const int m = rc.domain.dim, n = rc.target.dim;
  const double a = rc.amplitude;
  // target chart coordinate of the point at g₂-distance d from the chart origin along the first axis
  const double k = std::sqrt(rc.target.metric_factor());
  auto along = [&](double d) {
    switch (rc.target.chart) {
      case ChartKind::PoincareBall: return std::tanh(0.5 * d / k);
      case ChartKind::Stereographic: return std::tan(0.5 * d / k);
      default: return d / k;
    }
  };
  std::function<ChartPoint(const Vec&)> f;
  switch (rc.map) {
    case MapKind::Sine:
      f = [&](const Vec& x) {
        Vec v = Vec::Zero(n);
        for (int c = 0; c < std::min(m, n); ++c) v(c) = a * std::sin(x(c));
        return ChartPoint{v, 0};
      };
      break;
    case MapKind::Latitude:
      if (rc.target.chart == ChartKind::Stereographic && !(std::abs(a) / k < 3.14159265358979))
        rc.fail("map.amplitude", "latitude map reaches the antipode of the chart origin");
      f = [&](const Vec& x) {
        Vec v = Vec::Zero(n);
        v(0) = along(a * std::cos(x(0)));
        return ChartPoint{v, 0};
      };
      break;
    case MapKind::Constant:
      f = [&](const Vec&) {
        Vec v(n);
        for (int c = 0; c < n; ++c) v(c) = rc.map_values[c];
        return ChartPoint{v, 0};
      };
      break;
    case MapKind::Linear:
      f = [&](const Vec& x) {
        Vec v = Vec::Zero(n);
        for (int i = 0; i < m; ++i)
          for (int c = 0; c < n; ++c) v(c) += rc.map_values[i * n + c] * x(i);
        return ChartPoint{v, 0};
      };
      break;
    case MapKind::Snapshot: break;
  }
  GridMap F = make_map(rc.domain, rc.target, grid, f);
  if (rc.map == MapKind::Linear)
    for (int i = 0; i < m; ++i) {
      Vec w(n);
      for (int c = 0; c < n; ++c) w(c) = rc.map_values[i * n + c] * rc.domain.sides[i];
      F.winding[i] = w;
    }
  return F;
}

}  // namespace spacegraph
