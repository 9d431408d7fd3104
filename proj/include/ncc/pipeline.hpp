#pragma once

// The train / verify / falsify / simulate / export-plots pipeline behind the
// command-line tool.  Each entry point returns the process exit code.

#include "ncc/certify.hpp"
#include "ncc/config.hpp"
#include "ncc/io.hpp"
#include "ncc/tracking.hpp"
#include "ncc/train.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace ncc {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kNotCertified = 1;
inline constexpr int kConfig = 2;
inline constexpr int kBudget = 3;
inline constexpr int kMismatch = 4;
inline constexpr int kFalsified = 5;
inline constexpr int kInfeasible = 6;
}  // namespace exit_code

namespace fs = std::filesystem;

inline std::string utc_timestamp(bool deterministic) {
  if (deterministic) return "1970-01-01T00:00:00Z";
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  int exit = exit_code::kBudget;
  TrainStatus status = TrainStatus::kBudgetExhausted;
  int best_stage = 0;
  std::int64_t steps = 0;
  std::optional<Certificate> certificate;
};

inline TrainOutcome run_train(const RunConfig& cfg, const fs::path& out_dir, std::ostream& msg) {
  set_outward_rounding(cfg.outward_rounding);
  std::mt19937_64 rng(cfg.seed);
  ContractionProblem problem = problem_from_config(cfg, rng);
  std::ostringstream rng_state;
  rng_state << rng;

  fs::create_directories(out_dir / "checkpoints");
  std::ofstream log(out_dir / "train_log.csv", std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + (out_dir / "train_log.csv").string());
  log << kTrainLogHeader << '\n';

  auto make_checkpoint = [&](const ContractionProblem& p, int stage, const TrainState& st) {
    Checkpoint c;
    c.problem = p;
    c.region = cfg.region;
    c.stage = stage;
    c.step = st.step;
    c.seed = cfg.seed;
    c.config_text = cfg.text;
    c.rng_state = rng_state.str();
    c.adam_m = st.adam_m;
    c.adam_v = st.adam_v;
    c.adam_t = st.adam_t;
    return c;
  };

  TrainCallbacks cb;
  cb.on_log = [&](const LogRow& row) { log << format_log_row(row, cfg.deterministic) << '\n' << std::flush; };
  cb.on_checkpoint = [&](int stage, const ContractionProblem& p, const TrainState& st) {
    char name[32];
    std::snprintf(name, sizeof name, "stage_%03d.json", stage);
    write_json((out_dir / "checkpoints" / name).string(), checkpoint_to_json(make_checkpoint(p, stage, st)));
  };

  TrainResult res = train_curriculum(problem, cfg.region, cfg.train, cb);

  // checkpoint.json holds the best (largest certified stage) parameters;
  // checkpoint_last.json the final ones.
  write_json((out_dir / "checkpoint_last.json").string(),
             checkpoint_to_json(make_checkpoint(problem, res.state.stage, res.state)));
  ContractionProblem best = problem;
  if (res.best_stage > 0) assign_parameters(best, res.best_params);
  write_json((out_dir / "checkpoint.json").string(),
             checkpoint_to_json(make_checkpoint(best, res.best_stage, res.state)));

  TrainOutcome out;
  out.status = res.status;
  out.best_stage = res.best_stage;
  out.steps = res.state.step;
  if (res.certificate) {
    Certificate cert = *res.certificate;
    cert.problem_hash = problem_hash(best);
    cert.seed = cfg.seed;
    cert.timestamp = utc_timestamp(cfg.deterministic);
    write_json((out_dir / "certificate.json").string(), certificate_to_json(cert, "checkpoint.json"));
    out.certificate = cert;
  }
  out.exit = res.status == TrainStatus::kCertified      ? exit_code::kOk
             : res.status == TrainStatus::kNotCertified ? exit_code::kNotCertified
                                                        : exit_code::kBudget;
  msg << "train: " << to_string(res.status) << " after " << res.state.step << " steps, best stage "
      << res.best_stage << " of " << cfg.train.target_stage << '\n';
  if (out.certificate) {
    msg << "certificate: max lambda " << format_double(out.certificate->max_lambda) << ", a_hat "
        << format_double(out.certificate->a_hat) << ", b_hat " << format_double(out.certificate->b_hat) << '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// verify

inline bool same_grid(const Region& a, const Region& b) {
  if (a.dim() != b.dim() || a.partition() != b.partition()) return false;
  for (std::size_t k = 0; k < a.dim(); ++k)
    if (a.box()[k].lo() != b.box()[k].lo() || a.box()[k].hi() != b.box()[k].hi()) return false;
  return true;
}

/// Recomputes the certificate for the checkpoint and compares it with the
/// stored one.  The region comes from the config (its target stage) when
/// given, otherwise from the certificate itself.
inline int run_verify(const fs::path& ckpt_path, const fs::path& cert_path, const RunConfig* cfg, int threads,
                      std::ostream& msg) {
  constexpr double kTol = 1e-9;
  const Checkpoint ckpt = checkpoint_from_json(read_json(ckpt_path.string()));
  const Certificate stored = certificate_from_json(read_json(cert_path.string()));
  const Region region = cfg != nullptr ? curriculum_region(cfg->region, cfg->train.target_stage) : stored.region;

  if (!same_grid(region, stored.region)) {
    msg << "verify: grid mismatch between the certificate and the requested region\n";
    return exit_code::kMismatch;
  }
  if (stored.propagator != kPropagatorIbp) {
    msg << "verify: certificate uses propagator '" << stored.propagator << "', only ibp is available\n";
    return exit_code::kMismatch;
  }
  if (stored.problem_hash != problem_hash(ckpt.problem)) {
    msg << "verify: problem hash differs from the checkpoint\n";
    return exit_code::kMismatch;
  }
  if (stored.a != ckpt.problem.a || stored.b != ckpt.problem.b || stored.c != ckpt.problem.c) {
    msg << "verify: hyperparameters differ from the checkpoint\n";
    return exit_code::kMismatch;
  }

  const Certificate fresh = certify_region(ckpt.problem, region, threads);
  if (fresh.cell_lambda.size() != stored.cell_lambda.size()) {
    msg << "verify: certificate lists " << stored.cell_lambda.size() << " cells, recomputation has "
        << fresh.cell_lambda.size() << '\n';
    return exit_code::kMismatch;
  }
  for (std::size_t i = 0; i < fresh.cell_lambda.size(); ++i) {
    if (!(std::abs(fresh.cell_lambda[i] - stored.cell_lambda[i]) <= kTol)) {
      msg << "verify: cell " << i << " lambda differs: stored " << format_double(stored.cell_lambda[i])
          << ", recomputed " << format_double(fresh.cell_lambda[i]) << '\n';
      return exit_code::kMismatch;
    }
  }
  if (!(std::abs(fresh.a_hat - stored.a_hat) <= kTol) || !(std::abs(fresh.b_hat - stored.b_hat) <= kTol) ||
      !(std::abs(fresh.max_lambda - stored.max_lambda) <= kTol)) {
    msg << "verify: metric bounds or max lambda differ\n";
    return exit_code::kMismatch;
  }
  if (fresh.certified != stored.certified) {
    msg << "verify: verdict differs (stored " << (stored.certified ? "certified" : "failed") << ")\n";
    return exit_code::kMismatch;
  }
  msg << "verify: consistent, " << (fresh.certified ? "certified" : "not certified: " + fresh.cause) << '\n';
  return fresh.certified ? exit_code::kOk : exit_code::kNotCertified;
}

// ---------------------------------------------------------------------------
// falsify

inline int run_falsify(const fs::path& ckpt_path, std::size_t samples, int stage, std::uint64_t seed, int threads,
                       std::ostream& msg) {
  const Checkpoint ckpt = checkpoint_from_json(read_json(ckpt_path.string()));
  if (stage <= 0) stage = ckpt.stage > 0 ? ckpt.stage : 100;
  const Region region = curriculum_region(ckpt.region, stage);
  if (samples == 0) {
    msg << "falsify: warning: zero samples, nothing checked\n";
    return exit_code::kOk;
  }
  const FalsifyResult r = falsify_by_sampling(ckpt.problem, region, samples, seed, threads);
  msg << "falsify: " << samples << " samples on stage " << stage << ", worst mu2(G) " << format_double(r.worst)
      << '\n';
  if (r.violated()) {
    msg << "falsify: contraction violated at x =";
    for (Eigen::Index k = 0; k < r.argmax.size(); ++k) msg << ' ' << format_double(r.argmax(k));
    msg << '\n';
    return exit_code::kFalsified;
  }
  return exit_code::kOk;
}

// ---------------------------------------------------------------------------
// simulate

inline std::vector<Vector> initial_conditions(const ContractionProblem& p, const Region& region,
                                              const ReferenceTrajectory& ref, const SimulateConfig& sc,
                                              std::uint64_t seed) {
  const auto count = static_cast<std::size_t>(std::max(sc.starts, 0));
  if (sc.init == "region") return sample_region(region, count, seed);
  const TubeReport tube = ball_tube_check(region, ref, 0.0, p.a, p.b);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Eigen::Index n = p.state_dim();
  std::vector<Vector> out;
  for (std::size_t i = 0; i < count; ++i) {
    Vector dir(n);
    for (Eigen::Index k = 0; k < n; ++k) dir(k) = normal(rng);
    const double r = tube.initial_radius * std::pow(unit(rng), 1.0 / static_cast<double>(n));
    out.push_back(ref.states.front() + r * dir.normalized());
  }
  return out;
}

inline int run_simulate(const fs::path& ckpt_path, const SimulateConfig& sc, std::uint64_t seed, int threads,
                        const fs::path& out_dir, std::ostream& msg) {
  const Checkpoint ckpt = checkpoint_from_json(read_json(ckpt_path.string()));
  const ContractionProblem& p = ckpt.problem;
  ReferenceTrajectory ref;
  try {
    ref = flat_reference(*p.system, sc.shape, sc.shape_params, sc.duration, sc.reference_dt);
  } catch (const InfeasibleReference& e) {
    msg << "simulate: infeasible reference '" << sc.shape << "': " << e.what() << '\n';
    return exit_code::kInfeasible;
  }
  const Region region = curriculum_region(ckpt.region, ckpt.stage > 0 ? ckpt.stage : 100);
  const auto starts = initial_conditions(p, region, ref, sc, seed);
  SimulationOptions so;
  so.dt = sc.dt;
  so.duration = sc.duration;
  so.threads = threads;
  const SimulationResult sim = simulate(p, ref, starts, so);
  const TubeReport tube = ball_tube_check(region, ref, 0.0, p.a, p.b);

  fs::create_directories(out_dir);
  const Eigen::Index n = p.state_dim();
  const Eigen::Index m = p.system->input_dim();
  {
    std::ofstream f(out_dir / "reference.csv", std::ios::binary | std::ios::trunc);
    f << "t";
    for (Eigen::Index k = 0; k < n; ++k) f << ",x" << k;
    for (Eigen::Index k = 0; k < m; ++k) f << ",u" << k;
    f << '\n';
    for (std::size_t i = 0; i < ref.times.size(); ++i) {
      f << format_double(ref.times[i]);
      for (Eigen::Index k = 0; k < n; ++k) f << ',' << format_double(ref.states[i](k));
      for (Eigen::Index k = 0; k < m; ++k) f << ',' << format_double(ref.inputs[i](k));
      f << '\n';
    }
  }
  {
    std::ofstream f(out_dir / "trajectories.csv", std::ios::binary | std::ios::trunc);
    f << "traj,t";
    for (Eigen::Index k = 0; k < n; ++k) f << ",x" << k;
    f << ",dhat\n";
    for (std::size_t j = 0; j < sim.trajectories.size(); ++j) {
      const Trajectory& tr = sim.trajectories[j];
      for (std::size_t i = 0; i < tr.states.size(); ++i) {
        f << j << ',' << format_double(sim.times[i]);
        for (Eigen::Index k = 0; k < n; ++k) f << ',' << format_double(tr.states[i](k));
        f << ',' << format_double(tr.dhat[i]) << '\n';
      }
    }
  }
  int decaying = 0;
  {
    std::ofstream f(out_dir / "rates.csv", std::ios::binary | std::ios::trunc);
    f << "traj,fitted_rate,truncated\n";
    for (std::size_t j = 0; j < sim.trajectories.size(); ++j) {
      const Trajectory& tr = sim.trajectories[j];
      f << j << ',' << format_double(tr.fitted_rate) << ',' << (tr.truncated ? 1 : 0) << '\n';
      if (tr.fitted_rate < 0.0 && !tr.truncated) ++decaying;
    }
  }
  Json manifest = {
      {"schema_version", kSchemaVersion},
      {"kind", "simulation"},
      {"shape", sc.shape},
      {"duration_s", sc.duration},
      {"dt_s", sc.dt},
      {"reference_dt_s", sc.reference_dt},
      {"feasibility_residual", ref.feasibility_residual},
      {"policy_inferences", sim.policy_inferences},
      {"tube", {{"max_radius", tube.max_radius}, {"geodesic_radius", tube.geodesic_radius},
                {"initial_radius", tube.initial_radius}, {"reference_inside", !tube.first_violation.has_value()}}},
      {"files", {"reference.csv", "trajectories.csv", "rates.csv"}}};
  write_json((out_dir / "manifest.json").string(), manifest);
  msg << "simulate: " << sim.trajectories.size() << " trajectories, " << decaying << " with decaying dhat, "
      << "feasibility residual " << format_double(ref.feasibility_residual) << '\n';
  return exit_code::kOk;
}

// ---------------------------------------------------------------------------
// export-plots: gnuplot scripts over the CSV files found in a run directory.

inline int run_export_plots(const fs::path& run_dir, std::ostream& msg) {
  if (!fs::is_directory(run_dir)) throw std::runtime_error("not a directory: " + run_dir.string());
  const fs::path plots = run_dir / "plots";
  fs::create_directories(plots);
  Json items = Json::array();
  auto script = [&](const std::string& name, const std::string& body) {
    write_text((plots / (name + ".gp")).string(), body);
    items.push_back({{"name", name}, {"script", name + ".gp"}, {"output", name + ".png"}});
  };
  auto rel = [&](const fs::path& p) { return fs::relative(p, plots).string(); };
  const std::string head = "set datafile separator ','\nset terminal pngcairo size 900,600\nset key autotitle columnhead\n";

  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& path = entry.path();
    const std::string stem = fs::relative(path.parent_path(), run_dir).string();
    const std::string tag = stem == "." ? "" : stem + "_";
    if (path.filename() == "train_log.csv") {
      script(tag + "loss", head + "set output '" + tag + "loss.png'\nset xlabel 'step'\nset logscale y\n"
                                  "plot '" + rel(path) + "' using 1:($3>0?$3:NaN) with lines title 'loss'\n");
      script(tag + "stage", head + "set output '" + tag + "stage.png'\nset xlabel 'step'\n"
                                   "plot '" + rel(path) + "' using 1:2 with steps title 'stage n'\n");
    } else if (path.filename() == "trajectories.csv") {
      script(tag + "dhat", head + "set output '" + tag + "dhat.png'\nset xlabel 't [s]'\nset logscale y\n"
                                  "plot '" + rel(path) + "' using 2:(column('dhat')) with dots title 'dhat'\n");
    } else if (path.filename() == "reference.csv") {
      script(tag + "reference", head + "set output '" + tag + "reference.png'\nset xlabel 't [s]'\n"
                                       "plot for [k=2:4] '" + rel(path) + "' using 1:k with lines\n");
    }
  }
  write_json((plots / "manifest.json").string(),
             {{"schema_version", kSchemaVersion}, {"kind", "plots"}, {"plots", items}});
  msg << "export-plots: wrote " << items.size() << " plot scripts to " << plots.string() << '\n';
  return exit_code::kOk;
}

}  // namespace ncc
