#include "ncc/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Certified neural contraction metrics and controllers"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, cert_path, run_dir;
  int threads = -1;
  app.add_option("--threads", threads, "worker threads (overrides the config)");

  auto* train = app.add_subcommand("train", "train with the curriculum and certify the target region");
  train->add_option("--config", config_path)->required();
  train->add_option("--out", out_dir, "output directory (default: output.dir of the config)");

  auto* verify = app.add_subcommand("verify", "recompute a certificate and compare it with the stored one");
  verify->add_option("--ckpt", ckpt_path)->required();
  verify->add_option("--config", config_path, "config whose target region is checked");
  verify->add_option("--cert", cert_path, "certificate (default: certificate.json next to the checkpoint)");

  std::size_t samples = 10000;
  int stage = 0;
  std::uint64_t seed = 0;
  auto* falsify = app.add_subcommand("falsify", "search for contraction violations by sampling");
  falsify->add_option("--ckpt", ckpt_path)->required();
  falsify->add_option("--samples", samples)->required();
  falsify->add_option("--stage", stage, "curriculum stage of the region (default: checkpoint stage)");
  falsify->add_option("--seed", seed);

  ncc::SimulateConfig sim;
  bool sim_seed_set = false;
  auto* simulate = app.add_subcommand("simulate", "track a flat reference from sampled initial states");
  simulate->add_option("--ckpt", ckpt_path)->required();
  simulate->add_option("--config", config_path, "take simulate settings from this config");
  simulate->add_option("--shape", sim.shape);
  simulate->add_option("--duration", sim.duration);
  simulate->add_option("--dt", sim.dt);
  simulate->add_option("--starts", sim.starts);
  simulate->add_option("--init", sim.init)->check(CLI::IsMember({"region", "ball"}));
  simulate->add_option("--amplitude", sim.shape_params.amplitude);
  simulate->add_option("--omega", sim.shape_params.omega);
  simulate->add_option("--seed", seed)->each([&](const std::string&) { sim_seed_set = true; });
  simulate->add_option("--out", out_dir, "output directory (default: sim_<shape>)");

  auto* plots = app.add_subcommand("export-plots", "write gnuplot scripts for the CSV files of a run");
  plots->add_option("--run", run_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ncc::exit_code::kConfig;
  }

  try {
    if (*train) {
      ncc::RunConfig cfg = ncc::load_config(config_path);
      if (threads >= 0) cfg.train.loss.threads = cfg.threads = threads;
      return ncc::run_train(cfg, out_dir.empty() ? cfg.output_dir : out_dir, std::cout).exit;
    }
    if (*verify) {
      if (cert_path.empty()) cert_path = (ncc::fs::path(ckpt_path).parent_path() / "certificate.json").string();
      std::optional<ncc::RunConfig> cfg;
      if (!config_path.empty()) cfg = ncc::load_config(config_path);
      const int t = threads >= 0 ? threads : (cfg ? cfg->threads : 1);
      return ncc::run_verify(ckpt_path, cert_path, cfg ? &*cfg : nullptr, t, std::cout);
    }
    if (*falsify) return ncc::run_falsify(ckpt_path, samples, stage, seed, threads >= 0 ? threads : 1, std::cout);
    if (*simulate) {
      int t = threads >= 0 ? threads : 1;
      if (!config_path.empty()) {
        // Explicit flags win over the config file.
        const ncc::RunConfig cfg = ncc::load_config(config_path);
        ncc::SimulateConfig merged = cfg.simulate;
        if (simulate->count("--shape")) merged.shape = sim.shape;
        if (simulate->count("--duration")) merged.duration = sim.duration;
        if (simulate->count("--dt")) merged.dt = sim.dt;
        if (simulate->count("--starts")) merged.starts = sim.starts;
        if (simulate->count("--init")) merged.init = sim.init;
        if (simulate->count("--amplitude")) merged.shape_params.amplitude = sim.shape_params.amplitude;
        if (simulate->count("--omega")) merged.shape_params.omega = sim.shape_params.omega;
        sim = merged;
        if (!sim_seed_set) seed = cfg.seed;
        if (threads < 0) t = cfg.threads;
      }
      return ncc::run_simulate(ckpt_path, sim, seed, t, out_dir.empty() ? "sim_" + sim.shape : out_dir, std::cout);
    }
    if (*plots) return ncc::run_export_plots(run_dir, std::cout);
  } catch (const ncc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return ncc::exit_code::kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ncc::exit_code::kConfig;
  }
  return ncc::exit_code::kConfig;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
