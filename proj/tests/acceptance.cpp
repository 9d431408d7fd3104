// Acceptance suite: one PASS/FAIL line per criterion.  Pass criterion numbers
// as arguments to run a subset.

#include "ncc/pipeline.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <unistd.h>

namespace {

namespace fs = std::filesystem;
using ncc::IntervalMatrix;
using ncc::Matrix;
using ncc::Vector;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ncc_acceptance_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

ncc::RunConfig shipped_config(const std::string& name) {
  return ncc::load_config(std::string(NCC_SOURCE_DIR) + "/configs/" + name + ".yaml");
}

// 1. Example 1 bounds, S-form vs G-form.
Outcome example1() {
  const IntervalMatrix theta(Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 1.0));
  const IntervalMatrix dtheta(Matrix::Constant(1, 1, -2.0), Matrix::Constant(1, 1, -1.5));
  const IntervalMatrix jac(Matrix::Constant(1, 1, -1.0), Matrix::Constant(1, 1, 1.0));
  const auto t0 = std::chrono::steady_clock::now();
  const IntervalMatrix s = ncc::s_form_hull(theta, dtheta, jac, 0.5);
  const IntervalMatrix g = ncc::g_form_hull(theta, dtheta, jac, 0.5);
  const double elapsed = seconds_since(t0);
  const double err = std::max({std::abs(s.lower()(0, 0) + 5.75), std::abs(s.upper()(0, 0) - 1.5),
                               std::abs(2 * g.lower()(0, 0) + 5.0), std::abs(2 * g.upper()(0, 0))});
  std::ostringstream d;
  d << "S in [" << s.lower()(0, 0) << ", " << s.upper()(0, 0) << "], 2G in [" << 2 * g.lower()(0, 0) << ", "
    << 2 * g.upper()(0, 0) << "], " << fmt(elapsed * 1e3) << " ms";
  return {err <= 1e-12 && elapsed < 1e-3, d.str()};
}

// 2. Pointwise equivalence of the two contraction matrices.
Outcome pointwise_forms() {
  double worst = 0.0;
  std::mt19937_64 rng(202);
  for (const auto& name : ncc::benchmark_names()) {
    const auto p = oracle::small_problem(name, 2, 0.1, {128, 128}, 0.05);
    for (int s = 0; s < 1000; ++s) {
      Vector x = p.system->x_eq();
      for (Eigen::Index k = 0; k < x.size(); ++k) x(k) += std::normal_distribution<double>(0.0, 1.0)(rng);
      worst = std::max(worst, std::abs(0.5 * ncc::mu2(ncc::pointwise_S(p, x)) - ncc::mu2(ncc::pointwise_G(p, x))));
    }
  }
  return {worst <= 1e-8, "max |lambda_max(S)/2 - mu2(G)| = " + fmt(worst) + " over 3 x 1000 states"};
}

// 3. Corner check against brute force over all vertex matrices.
Outcome rohn_exact() {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  bool members = true;
  const auto t0 = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 2 + trial % 2;
    const IntervalMatrix a = oracle::random_interval_matrix(rng, n);
    const ncc::CornerCheckResult r = ncc::rohn_max_mu2(a);
    worst = std::max(worst, std::abs(r.value - oracle::exhaustive_max_mu2(a)));
    members = members && a.contains(ncc::corner_matrix(a, r.argmax_sign), 1e-12);
  }
  const double elapsed = seconds_since(t0);
  return {worst <= 1e-10 && members && elapsed < 60.0,
          "max deviation " + fmt(worst) + ", argmax corners inside hull: " + (members ? "yes" : "no") + ", " +
              fmt(elapsed) + " s"};
}

// 4. Metzler majorant vs corner check on A = -t 11^T.
Outcome metzler() {
  const int n = 4;
  const double t = 1.0;
  const IntervalMatrix a(Matrix(-t * Matrix::Ones(n, n)));
  const ncc::MetzlerVerdict mv = ncc::metzler_majorant_check(a);
  const double rohn = ncc::rohn_max_mu2(a).value;
  const bool ok = std::abs(mv.max_eigenvalue - t * (n - 2)) <= 1e-12 && !mv.certified && std::abs(rohn) <= 1e-12;
  return {ok, "Metzler bound " + fmt(mv.max_eigenvalue) + " (inconclusive), corner check " + fmt(rohn)};
}

// 5. Sampled G and M inside their hulls, and refinement monotone.
Outcome hull_soundness() {
  std::mt19937_64 rng(505);
  std::size_t checked = 0, outside = 0, widened = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& name : ncc::benchmark_names()) {
    const auto p = oracle::small_problem(name, 5, 0.1, {128, 128}, 0.02);
    const Eigen::Index n = p.state_dim();
    for (int c = 0; c < 100; ++c) {
      ncc::IntervalVector cell;
      for (Eigen::Index k = 0; k < n; ++k) {
        const double mid = p.system->x_eq()(k) + std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
        const double r = std::uniform_real_distribution<double>(0.01, 0.2)(rng);
        cell.emplace_back(mid - r, mid + r);
      }
      const IntervalMatrix g = ncc::hull_G(p, cell);
      const IntervalMatrix m = ncc::hull_M(p.metric, cell);
      const double tol = 1e-10 * (1.0 + g.upper().cwiseAbs().maxCoeff() + g.lower().cwiseAbs().maxCoeff());
      for (int s = 0; s < 1000; ++s) {
        const Vector x = oracle::sample_box(rng, cell);
        ++checked;
        if (!g.contains(ncc::pointwise_G(p, x), tol) || !m.contains(p.metric.metric(x), tol)) ++outside;
      }
      // Refinement: split every coordinate in two.
      const ncc::HullReport fine = ncc::hull_over_region(p, ncc::Region(cell, std::vector<int>(cell.size(), 2)));
      if (!fine.ok() || !g.contains(fine.g_hull) || !m.contains(fine.m_hull)) ++widened;
    }
  }
  return {outside == 0 && widened == 0,
          std::to_string(checked) + " samples, " + std::to_string(outside) + " outside, " + std::to_string(widened) +
              " refinements widened, " + fmt(seconds_since(t0)) + " s"};
}

// 6. Loss gradient against central differences.
Outcome gradient_fidelity() {
  auto p = oracle::small_problem("planar_nonlinear", 6, 0.5, {6, 5}, 0.15);
  p.a = 0.5;
  const ncc::Region region({{-1.2, 1.2}, {-1.2, 1.2}}, {3, 2});
  const auto t0 = std::chrono::steady_clock::now();
  Vector grad;
  const ncc::LossValue lv = ncc::loss_and_gradient(p, region, {}, &grad);
  const Vector theta = ncc::flatten_parameters(p);
  const ncc::ParameterMasks masks = ncc::parameter_masks(p);
  auto loss_at = [&](const Vector& v) {
    ncc::ContractionProblem q = p;
    ncc::assign_parameters(q, v);
    return ncc::loss(q, region).value;
  };
  std::mt19937_64 rng(606);
  std::uniform_int_distribution<Eigen::Index> pick(0, theta.size() - 1);
  const double h = 1e-6;
  int checked = 0, skipped = 0;
  double worst = 0.0;
  while (checked + skipped < 50) {
    const Eigen::Index k = pick(rng);
    if (masks.lr_scale(k) == 0.0) continue;
    Vector tp = theta, tm = theta;
    tp(k) += h;
    tm(k) -= h;
    const double fp = loss_at(tp), fm = loss_at(tm);
    // A kink within h (hinge or argmax tie) shows up as unequal one-sided slopes.
    const double fwd = (fp - lv.value) / h, bwd = (lv.value - fm) / h;
    if (std::abs(fwd - bwd) > 1e-3 * std::max(1.0, std::abs(fwd))) {
      ++skipped;
      continue;
    }
    const double fd = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad(k)) / std::max(std::abs(fd), 1e-3));
    ++checked;
  }
  return {worst <= 1e-4 && checked >= 40 && lv.value > 0.0,
          "max relative error " + fmt(worst) + " on " + std::to_string(checked) + " coordinates (" +
              std::to_string(skipped) + " near ties skipped), " + fmt(seconds_since(t0)) + " s"};
}

// 7. Planar system: train, certify, falsify, simulate.
Outcome planar_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  ncc::RunConfig cfg = shipped_config("planar");
  const fs::path dir = scratch("planar");
  std::ostringstream log;
  const ncc::TrainOutcome out = ncc::run_train(cfg, dir, log);
  if (!out.certificate || !out.certificate->certified) {
    return {false, "training ended " + ncc::to_string(out.status) + " at stage " + std::to_string(out.best_stage)};
  }
  const ncc::Checkpoint ck = ncc::checkpoint_from_json(ncc::read_json((dir / "checkpoint.json").string()));
  const ncc::FalsifyResult f = ncc::falsify_by_sampling(ck.problem, cfg.region, 10000, cfg.seed, cfg.threads);
  std::ostringstream sink;
  const int verify = ncc::run_verify(dir / "checkpoint.json", dir / "certificate.json", &cfg, cfg.threads, sink);
  const int sim = ncc::run_simulate(dir / "checkpoint.json", cfg.simulate, cfg.seed, cfg.threads, dir / "sim", sink);
  double worst_rate = -std::numeric_limits<double>::infinity();
  std::ifstream rates(dir / "sim" / "rates.csv");
  std::string line;
  std::getline(rates, line);
  int rows = 0;
  while (std::getline(rates, line)) {
    const double r = std::stod(line.substr(line.find(',') + 1));
    worst_rate = std::max(worst_rate, std::isnan(r) ? std::numeric_limits<double>::infinity() : r);
    ++rows;
  }
  const double c = ck.problem.c;
  const double elapsed = seconds_since(t0);
  const bool ok = elapsed <= 600.0 && out.steps <= 2000 && !f.violated() && verify == 0 && sim == 0 && rows > 0 && worst_rate <= -0.9 * c;
  return {ok, std::to_string(out.steps) + " steps, max lambda " + fmt(out.certificate->max_lambda) +
                  ", sampled worst " + fmt(f.worst) + ", verify exit " + std::to_string(verify) +
                  ", slowest fitted rate " + fmt(worst_rate) + " (need <= " + fmt(-0.9 * c) + "), " + fmt(elapsed) +
                  " s"};
}

// 8. Quadrotor, full region shape, curriculum to n = 30 on a 5^3 grid.
Outcome quadrotor_scaled() {
  const auto t0 = std::chrono::steady_clock::now();
  ncc::RunConfig cfg = shipped_config("quadrotor_scaled");
  const fs::path dir = scratch("quadrotor");
  std::ostringstream log;
  const ncc::TrainOutcome out = ncc::run_train(cfg, dir, log);
  const bool cert = out.certificate && out.certificate->certified;
  int verify = -1;
  if (cert) {
    std::ostringstream sink;
    verify = ncc::run_verify(dir / "checkpoint.json", dir / "certificate.json", &cfg, cfg.threads, sink);
  }
  const double elapsed = seconds_since(t0);
  return {cert && verify == 0 && elapsed <= 3600.0,
          ncc::to_string(out.status) + " at stage " + std::to_string(out.best_stage) + " of " +
              std::to_string(cfg.train.target_stage) + " after " + std::to_string(out.steps) + " steps, " +
              (out.certificate ? "max lambda " + fmt(out.certificate->max_lambda) + ", " : std::string()) +
              "verify exit " + std::to_string(verify) + ", " + fmt(elapsed) + " s"};
}

// 9. Tracking identities.
Outcome tracking() {
  std::mt19937_64 rng(909);
  ncc::WarmStartOptions ws;
  ws.policy_hidden = ws.metric_hidden = {32, 32};
  auto p = ncc::make_problem(ncc::benchmark_system("quadrotor10"), ws, 0.01, 100.0, 0.001, rng);
  oracle::randomize_residuals(p, rng, 0.01);

  bool exact = true;
  for (int s = 0; s < 100; ++s) {
    Vector xr = p.system->x_eq(), ur(4);
    for (Eigen::Index k = 0; k < 10; ++k) xr(k) += std::normal_distribution<double>(0.0, 1.0)(rng);
    for (Eigen::Index k = 0; k < 4; ++k) ur(k) = std::normal_distribution<double>(0.0, 1.0)(rng);
    exact = exact && ncc::tracking_control(p.policy, xr, xr, ur) == ur;
  }
  const auto hover = ncc::flat_reference(*p.system, "hover", {}, 1.0, 1e-2);
  double hover_err = 0.0;
  for (std::size_t k = 0; k < hover.states.size(); ++k)
    hover_err = std::max({hover_err, (hover.states[k] - p.system->x_eq()).cwiseAbs().maxCoeff(),
                          (hover.inputs[k] - p.system->u_eq()).cwiseAbs().maxCoeff()});

  const auto ref = ncc::flat_reference(*p.system, "figure_eight", {}, 4.0, 1e-3);
  auto err = [&](double dt) {
    ncc::SimulationOptions so;
    so.dt = dt;
    so.duration = 4.0;
    const auto sim = ncc::simulate(p, ref, {ref.states.front()}, so);
    return (sim.trajectories[0].states.back() - sim.reference.back()).norm();
  };
  const double e1 = err(0.05), e2 = err(0.025);
  const double ratio = e1 / e2;
  return {exact && hover_err <= 1e-12 && ratio > 13.0 && ratio < 19.0,
          std::string("u(x_ref) == u_ref: ") + (exact ? "yes" : "no") + ", hover deviation " + fmt(hover_err) +
              ", RK4 error ratio " + fmt(ratio) + " (" + fmt(e1) + " / " + fmt(e2) + ")"};
}

// 10. Byte-identical logs and certificates for 1 and 4 threads.
Outcome determinism() {
  ncc::RunConfig cfg = shipped_config("planar");
  cfg.deterministic = true;
  std::string logs[2], certs[2];
  for (int i = 0; i < 2; ++i) {
    cfg.threads = cfg.train.loss.threads = i == 0 ? 1 : 4;
    const fs::path dir = scratch("determinism_" + std::to_string(i));
    std::ostringstream sink;
    ncc::run_train(cfg, dir, sink);
    logs[i] = slurp(dir / "train_log.csv");
    certs[i] = slurp(dir / "certificate.json");
  }
  const bool ok = !logs[0].empty() && !certs[0].empty() && logs[0] == logs[1] && certs[0] == certs[1];
  return {ok, std::string("train_log.csv ") + (logs[0] == logs[1] ? "identical" : "differs") + " (" +
                  std::to_string(logs[0].size()) + " bytes), certificate.json " +
                  (certs[0] == certs[1] ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"Example 1 interval bounds", example1},
      {"pointwise S and G equivalence", pointwise_forms},
      {"Rohn corner check exactness", rohn_exact},
      {"Metzler counterexample", metzler},
      {"hull soundness and refinement", hull_soundness},
      {"loss gradient fidelity", gradient_fidelity},
      {"planar end-to-end certification", planar_end_to_end},
      {"quadrotor scaled curriculum", quadrotor_scaled},
      {"tracking identities", tracking},
      {"determinism across thread counts", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << id << " [" << (o.pass ? "PASS" : "FAIL") << "] " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  fs::remove_all(fs::temp_directory_path() / ("ncc_acceptance_" + std::to_string(::getpid())));
  return failures == 0 ? 0 : 1;
}
