#pragma once

// Run configuration.  One YAML file describes a run; every value carries its
// source line so that validation errors point at the offending entry.  The
// grammar is documented in README.md.

#include "ncc/problem.hpp"
#include "ncc/boundprop.hpp"
#include "ncc/systems.hpp"
#include "ncc/tracking.hpp"
#include "ncc/train.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncc {

struct ConfigError : std::runtime_error {
  ConfigError(const std::string& msg, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line(line) {}
  int line;
};

struct SimulateConfig {
  std::string shape = "hover";
  ShapeParams shape_params;
  double duration = 10.0;
  double dt = 1e-3;
  double reference_dt = 1e-3;
  int starts = 10;
  std::string init = "region";  // region | ball
};

struct RunConfig {
  std::string system;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string propagator = kPropagatorIbp;
  bool outward_rounding = false;
  double a = 0.01;
  double b = 100.0;
  double c = 0.0;
  Region region;
  WarmStartOptions warm;
  TrainOptions train;
  std::string output_dir = "run";
  bool deterministic = false;
  std::size_t falsify_samples = 10000;
  SimulateConfig simulate;
  std::string text;  // the source, verbatim
};

/// X = [-10,10]^3 x [-5,5]^3 x [2g/3, 4g/3] x [-pi/8,pi/8]^2 x [-pi/2,pi/2],
/// partitioned only over (tau, phi, theta).
inline Region quadrotor_paper_region(int cells_per_axis) {
  const double g = kGravity;
  const double pi = std::numbers::pi;
  IntervalVector box{{-10, 10}, {-10, 10}, {-10, 10}, {-5, 5},         {-5, 5},
                     {-5, 5},   {2 * g / 3, 4 * g / 3}, {-pi / 8, pi / 8}, {-pi / 8, pi / 8}, {-pi / 2, pi / 2}};
  return {box, {1, 1, 1, 1, 1, 1, cells_per_axis, cells_per_axis, cells_per_axis, 1}};
}

namespace detail {

inline int line_of(const YAML::Node& n) { return n.Mark().is_null() ? 0 : n.Mark().line + 1; }

inline void check_keys(const YAML::Node& map, const std::set<std::string>& allowed, const std::string& where) {
  if (!map.IsMap()) throw ConfigError(where + " must be a mapping", line_of(map));
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where, line_of(kv.first));
  }
}

template <class T>
T scalar(const YAML::Node& n, const std::string& name) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("'" + name + "' has the wrong type", line_of(n));
  }
}

template <class T>
void read(const YAML::Node& map, const char* key, T& out) {
  if (const YAML::Node n = map[key]) out = scalar<T>(n, key);
}

template <class T>
std::vector<T> list(const YAML::Node& n, const std::string& name) {
  if (!n.IsSequence()) throw ConfigError("'" + name + "' must be a list", line_of(n));
  std::vector<T> out;
  for (const auto& e : n) out.push_back(scalar<T>(e, name));
  return out;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  using namespace detail;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(e.msg, e.mark.line + 1);
  }
  if (!root || root.IsNull()) throw ConfigError("empty configuration", 0);
  check_keys(root, {"system", "seed", "threads", "propagator", "outward_rounding", "hyperparameters", "region",
                    "networks", "lqr", "optimizer", "curriculum", "output", "falsify", "simulate"},
             "the top level");

  RunConfig cfg;
  cfg.text = text;
  if (!root["system"]) throw ConfigError("missing 'system'", 1);
  cfg.system = scalar<std::string>(root["system"], "system");
  std::shared_ptr<const ControlAffineSystem> sys;
  try {
    sys = benchmark_system(cfg.system);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), line_of(root["system"]));
  }
  const auto n = static_cast<std::size_t>(sys->state_dim());

  read(root, "seed", cfg.seed);
  read(root, "threads", cfg.threads);
  read(root, "outward_rounding", cfg.outward_rounding);
  if (cfg.threads < 0) throw ConfigError("'threads' must be >= 0", line_of(root["threads"]));
  if (const YAML::Node pn = root["propagator"]) {
    cfg.propagator = scalar<std::string>(pn, "propagator");
    if (cfg.propagator != kPropagatorIbp) {
      throw ConfigError("propagator '" + cfg.propagator + "' is not available (supported: ibp)", line_of(pn));
    }
  }

  if (const YAML::Node h = root["hyperparameters"]) {
    check_keys(h, {"a", "b", "c"}, "hyperparameters");
    read(h, "a", cfg.a);
    read(h, "b", cfg.b);
    read(h, "c", cfg.c);
    if (!(cfg.a > 0.0)) throw ConfigError("need a > 0", line_of(h));
    if (!(cfg.b > cfg.a)) throw ConfigError("need b > a", line_of(h));
    if (!(cfg.c >= 0.0)) throw ConfigError("need c >= 0", line_of(h));
  }

  const YAML::Node r = root["region"];
  if (!r) throw ConfigError("missing 'region'", 1);
  check_keys(r, {"preset", "lo", "hi", "partition"}, "region");
  if (const YAML::Node preset = r["preset"]) {
    const auto name = scalar<std::string>(preset, "preset");
    if (name != "quadrotor_paper") throw ConfigError("unknown region preset '" + name + "'", line_of(preset));
    if (cfg.system != "quadrotor10") throw ConfigError("preset quadrotor_paper needs system quadrotor10", line_of(preset));
    if (r["lo"] || r["hi"]) throw ConfigError("give either a preset or lo/hi, not both", line_of(preset));
    cfg.region = quadrotor_paper_region(1);
  } else {
    if (!r["lo"] || !r["hi"]) throw ConfigError("region needs 'lo' and 'hi' (or a preset)", line_of(r));
    const auto lo = list<double>(r["lo"], "lo");
    const auto hi = list<double>(r["hi"], "hi");
    if (lo.size() != n || hi.size() != n) {
      throw ConfigError("region has dimension " + std::to_string(lo.size()) + "/" + std::to_string(hi.size()) +
                            " but " + cfg.system + " has " + std::to_string(n) + " states",
                        line_of(r["lo"]));
    }
    IntervalVector box;
    for (std::size_t k = 0; k < n; ++k) {
      if (!(lo[k] <= hi[k]) || !std::isfinite(lo[k]) || !std::isfinite(hi[k])) {
        throw ConfigError("region coordinate " + std::to_string(k) + " has lo > hi or a non-finite bound",
                          line_of(r["lo"][k]));
      }
      box.emplace_back(lo[k], hi[k]);
    }
    cfg.region = Region(box, std::vector<int>(n, 1));
  }
  if (const YAML::Node part = r["partition"]) {
    const auto counts = list<int>(part, "partition");
    if (counts.size() != n) throw ConfigError("partition needs " + std::to_string(n) + " entries", line_of(part));
    for (std::size_t k = 0; k < n; ++k)
      if (counts[k] < 1) throw ConfigError("partition counts must be >= 1", line_of(part[k]));
    cfg.region = cfg.region.with_partition(counts);
  }

  if (const YAML::Node nets = root["networks"]) {
    check_keys(nets, {"policy_hidden", "metric_hidden"}, "networks");
    if (nets["policy_hidden"]) cfg.warm.policy_hidden = list<int>(nets["policy_hidden"], "policy_hidden");
    if (nets["metric_hidden"]) cfg.warm.metric_hidden = list<int>(nets["metric_hidden"], "metric_hidden");
    for (int w : cfg.warm.policy_hidden)
      if (w < 1) throw ConfigError("hidden widths must be >= 1", line_of(nets["policy_hidden"]));
    for (int w : cfg.warm.metric_hidden)
      if (w < 1) throw ConfigError("hidden widths must be >= 1", line_of(nets["metric_hidden"]));
  }
  if (const YAML::Node lqr = root["lqr"]) {
    check_keys(lqr, {"q_diag", "r_diag"}, "lqr");
    if (lqr["q_diag"]) cfg.warm.q_diag = list<double>(lqr["q_diag"], "q_diag");
    if (lqr["r_diag"]) cfg.warm.r_diag = list<double>(lqr["r_diag"], "r_diag");
    if (!cfg.warm.q_diag.empty() && cfg.warm.q_diag.size() != n) {
      throw ConfigError("q_diag needs " + std::to_string(n) + " entries", line_of(lqr["q_diag"]));
    }
    if (!cfg.warm.r_diag.empty() && cfg.warm.r_diag.size() != static_cast<std::size_t>(sys->input_dim())) {
      throw ConfigError("r_diag needs " + std::to_string(sys->input_dim()) + " entries", line_of(lqr["r_diag"]));
    }
  }

  if (const YAML::Node o = root["optimizer"]) {
    check_keys(o, {"lr", "beta1", "beta2", "eps", "weight_decay", "warm_start_lr_scale", "residual_lr_scale"},
               "optimizer");
    read(o, "lr", cfg.train.adam.lr);
    read(o, "beta1", cfg.train.adam.beta1);
    read(o, "beta2", cfg.train.adam.beta2);
    read(o, "eps", cfg.train.adam.eps);
    read(o, "weight_decay", cfg.train.adam.weight_decay);
    read(o, "warm_start_lr_scale", cfg.train.warm_start_lr_scale);
    read(o, "residual_lr_scale", cfg.train.residual_lr_scale);
    if (!(cfg.train.adam.lr > 0.0)) throw ConfigError("lr must be positive", line_of(o));
  }

  if (const YAML::Node cu = root["curriculum"]) {
    check_keys(cu, {"start_stage", "target_stage", "increment", "max_steps", "max_seconds", "aggregation"},
               "curriculum");
    read(cu, "start_stage", cfg.train.start_stage);
    read(cu, "target_stage", cfg.train.target_stage);
    read(cu, "increment", cfg.train.stage_increment);
    read(cu, "max_steps", cfg.train.max_steps);
    read(cu, "max_seconds", cfg.train.max_seconds);
    if (const YAML::Node ag = cu["aggregation"]) {
      try {
        cfg.train.loss.aggregation = parse_aggregation(scalar<std::string>(ag, "aggregation"));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what(), line_of(ag));
      }
    }
    if (cfg.train.start_stage < 1 || cfg.train.target_stage > 100 ||
        cfg.train.start_stage > cfg.train.target_stage) {
      throw ConfigError("need 1 <= start_stage <= target_stage <= 100", line_of(cu));
    }
    if (cfg.train.stage_increment < 1) throw ConfigError("increment must be >= 1", line_of(cu));
    if (cfg.train.max_steps < 0) throw ConfigError("max_steps must be >= 0", line_of(cu));
  }
  cfg.train.loss.threads = cfg.threads;

  if (const YAML::Node out = root["output"]) {
    check_keys(out, {"dir", "deterministic"}, "output");
    read(out, "dir", cfg.output_dir);
    read(out, "deterministic", cfg.deterministic);
  }
  if (const YAML::Node f = root["falsify"]) {
    check_keys(f, {"samples"}, "falsify");
    read(f, "samples", cfg.falsify_samples);
  }
  if (const YAML::Node s = root["simulate"]) {
    check_keys(s, {"shape", "duration", "dt", "reference_dt", "starts", "init", "amplitude", "omega", "climb_rate",
                   "yaw_amplitude", "center"},
               "simulate");
    SimulateConfig& sc = cfg.simulate;
    read(s, "shape", sc.shape);
    read(s, "duration", sc.duration);
    read(s, "dt", sc.dt);
    read(s, "reference_dt", sc.reference_dt);
    read(s, "starts", sc.starts);
    read(s, "init", sc.init);
    read(s, "amplitude", sc.shape_params.amplitude);
    read(s, "omega", sc.shape_params.omega);
    read(s, "climb_rate", sc.shape_params.climb_rate);
    read(s, "yaw_amplitude", sc.shape_params.yaw_amplitude);
    if (s["center"]) sc.shape_params.center = list<double>(s["center"], "center");
    if (!(sc.dt > 0.0) || !(sc.reference_dt > 0.0) || !(sc.duration >= 0.0)) {
      throw ConfigError("simulate needs dt > 0, reference_dt > 0, duration >= 0", line_of(s));
    }
    if (sc.init != "region" && sc.init != "ball") throw ConfigError("init must be region or ball", line_of(s["init"]));
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path, 0);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ":" + e.what(), 0);
  }
}

inline ContractionProblem problem_from_config(const RunConfig& cfg, std::mt19937_64& rng) {
  return make_problem(benchmark_system(cfg.system), cfg.warm, cfg.a, cfg.b, cfg.c, rng);
}

}  // namespace ncc
