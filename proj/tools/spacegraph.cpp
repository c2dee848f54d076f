// spacegraph: run | refine | verify

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "spacegraph/errors.hpp"
#include "spacegraph/parallel.hpp"
#include "spacegraph/scenario.hpp"

using namespace spacegraph;

namespace {

std::string usage() {
  std::string s =
      "usage:\n"
      "  spacegraph run <config> [--out DIR] [--record-every N]\n"
      "  spacegraph refine <config> --levels K [--out DIR]\n"
      "  spacegraph verify --seed N [--mutate-frames] [--out DIR]\n"
      "\n"
      "<config> is key = value text, e.g. 'preset = torus-sine'. Presets:";
  for (const auto& p : preset_names()) s += " " + p;
  s += "\nSPACEGRAPH_THREADS overrides the worker count.\n";
  return s;
}

RunConfig load_run_config(const std::string& path, int record_every) {
  Config c = Config::load(path);
  if (c.empty()) throw CLI::RuntimeError(2);
  if (record_every > 0) c.set("flow.record_every", std::to_string(record_every));
  return parse_run_config(c);
}

void print_orders(const char* name, const std::vector<double>& o, double fit) {
  std::printf("  %-18s", name);
  for (double v : o) std::printf(" %7.3f", v);
  std::printf("   fitted %.3f\n", fit);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << usage();
    return 2;
  }
  CLI::App app{"Spacelike graph mean curvature flow between space forms"};
  app.require_subcommand(1);
  std::string out = "out";
  int record_every = 0;
  int levels = 3;
  long seed = 42;
  bool mutate = false;
  std::string config_path;

  auto* run = app.add_subcommand("run", "run a scenario and write manifest.json, diagnostics.csv, snapshots/");
  run->add_option("config", config_path, "configuration file")->required();
  run->add_option("--out", out, "output directory");
  run->add_option("--record-every", record_every, "record every n-th step")->check(CLI::PositiveNumber);

  auto* refine = app.add_subcommand("refine", "residual convergence orders under (h, dt) -> (h/2, dt/4)");
  refine->add_option("config", config_path, "configuration file")->required();
  refine->add_option("--levels", levels, "number of halvings (2, 3 or 4)")->required()->check(CLI::Range(2, 4));
  refine->add_option("--out", out, "output directory");

  auto* verify = app.add_subcommand("verify", "module invariants on seeded random instances");
  verify->add_option("--seed", seed, "generator seed")->required();
  verify->add_flag("--mutate-frames", mutate, "flip the leading image direction of the frames");
  verify->add_option("--out", out, "output directory (verify.txt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << e.what() << "\n" << usage();
    return 2;
  }

  try {
    if (*run) {
      const RunConfig rc = load_run_config(config_path, record_every);
      const ScenarioResult R = run_scenario(rc, out);
      const DiagnosticsRecord* last = R.records.empty() ? nullptr : &R.records.back().rec;
      std::printf("%s: %s", rc.preset.empty() ? config_path.c_str() : rc.preset.c_str(), R.status.c_str());
      if (!R.termination.empty()) std::printf(" (%s)", R.termination.c_str());
      std::printf(", %ld steps, %zu records, %.1f s, %d threads\n", R.steps.empty() ? 0L : R.steps.back().step,
                  R.records.size(), R.seconds, thread_count());
      if (last)
        std::printf("final t = %.6g, eta - 1 = %.3e, max lambda^2 = %.3e, diameter = %.3e\n", last->t, last->eta - 1.0,
                    last->lambda_max_sq, last->image_diameter);
      if (!R.message.empty()) std::fprintf(stderr, "%s\n", R.message.c_str());
      std::printf("wrote %s/manifest.json, %s/diagnostics.csv\n", out.c_str(), out.c_str());
      return R.exit_code;
    }
    if (*refine) {
      const RunConfig rc = load_run_config(config_path, 0);
      const RefinementTable T = refinement_study(rc, levels, out);
      std::printf("t = %g\n%6s %6s %12s %12s %14s %14s %14s\n", T.t, "res0", "res1", "h", "dt", "grad_identity",
                  "lncosh", "volume_law");
      for (const auto& L : T.levels)
        std::printf("%6d %6d %12.5e %12.5e %14.6e %14.6e %14.6e\n", L.res[0], L.res[1], L.h, L.dt, L.grad_identity,
                    L.lncosh_evolution, L.volume_law);
      std::printf("orders per halving:\n");
      print_orders("grad_identity", T.order_grad, T.fit_grad);
      print_orders("lncosh_evolution", T.order_lncosh, T.fit_lncosh);
      print_orders("volume_law", T.order_volume, T.fit_volume);
      return 0;
    }
    if (*verify) {
      const VerifyReport rep = verify_suite(seed, mutate);
      const std::string text = rep.text();
      std::cout << text;
      if (app.get_subcommand("verify")->count("--out")) {
        std::filesystem::create_directories(out);
        std::ofstream(std::filesystem::path(out) / "verify.txt") << text;
      }
      std::cout << (rep.all_pass() ? "all checks passed\n" : "some checks FAILED\n");
      return rep.all_pass() ? 0 : 1;
    }
  } catch (const CLI::RuntimeError& e) {
    std::cerr << "empty configuration\n" << usage();
    return e.get_exit_code();
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 2;
}
