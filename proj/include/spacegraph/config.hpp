#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spacegraph/diagnostics.hpp"
#include "spacegraph/flow.hpp"

namespace spacegraph {

// Flat `key = value` text. `#` starts a comment, blank lines are skipped, keys
// carry their section as a dotted prefix (flow.t_max). A key given twice is
// an error.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  bool empty() const { return entries_.empty(); }
  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  // Later calls win; line 0 marks values that did not come from a file.
  void set(const std::string& key, const std::string& value);

  std::string str(const std::string& key, const std::string& fallback) const;
  double real(const std::string& key, double fallback) const;
  long integer(const std::string& key, long fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::vector<double> reals(const std::string& key) const;  // comma separated

  int line(const std::string& key) const;
  std::vector<std::string> keys() const;

  // ConfigError naming the key and the line it came from.
  [[noreturn]] void fail(const std::string& key, const std::string& why) const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::map<std::string, Entry> entries_;
};

enum class MapKind { Sine, Latitude, Constant, Linear, Snapshot };

struct RunConfig {
  std::string preset;  // empty for a fully custom configuration

  ManifoldModel domain = ManifoldModel::flat_torus(2, {6.283185307179586, 6.283185307179586, 0.0});
  ManifoldModel target = ManifoldModel::euclidean(2);
  std::array<int, 2> res{64, 64};  // lat-long: colatitude intervals, longitude columns

  MapKind map = MapKind::Sine;
  double amplitude = 0.3;
  std::vector<double> map_values;  // constant value, or the row-major m×n matrix of a linear map
  std::string snapshot_path;
  bool rescale = false;  // solve on g₁ − g₂/ρ when ρ is finite

  FlowOptions flow;
  bool fixed_dt = false;
  double dt = 0.0;
  double guard = kDefaultGuard;
  StopCriteria stop;
  int record_every = 10;

  DiagnosticsOptions diagnostics;
  bool write_snapshots = true;
  double refine_t = 0.05;  // evaluation time of refinement studies

  long seed = 42;
  int threads = 0;  // 0: machine parallelism

  std::map<std::string, int> lines;  // source line of each key read from a file
  // ConfigError naming the key, with its line when known.
  [[noreturn]] void fail(const std::string& key, const std::string& why) const;

  // Every resolved setting as sorted key = value lines; hashing this text
  // identifies a run.
  std::string canonical() const;
};

std::vector<std::string> preset_names();
// Throws ConfigError for unknown names.
RunConfig preset_config(const std::string& name);

// Starts from `preset` when given, then applies every other key. Unknown keys
// and invalid values raise ConfigError with the offending line.
RunConfig parse_run_config(const Config& c);

// 64-bit FNV-1a, as hex.
std::string config_hash(const std::string& canonical);

// Initial map of a configuration (snapshot, or sampled from the map kind).
GridMap build_initial_map(const RunConfig& rc);

}  // namespace spacegraph
