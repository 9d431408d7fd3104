#pragma once

// Certified contraction loss, its reverse-mode gradient, AdamW, and the
// curriculum over growing regions.

#include "ncc/boundprop.hpp"
#include "ncc/certify.hpp"
#include "ncc/parallel.hpp"
#include "ncc/problem.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncc {

inline constexpr double kNonFinitePenalty = 1e6;

enum class Aggregation { kMean, kMax };

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::kMean;
  if (s == "max") return Aggregation::kMax;
  throw std::invalid_argument("unknown aggregation '" + s + "' (expected mean or max)");
}

inline std::string to_string(Aggregation a) { return a == Aggregation::kMean ? "mean" : "max"; }

struct LossOptions {
  Aggregation aggregation = Aggregation::kMean;
  int threads = 1;
};

struct LossValue {
  double value = 0.0;
  double lambda_term = 0.0;  // aggregated max(lambda_cell, 0)
  double a_deficit = 0.0;    // max(a - a_hat, 0)
  double b_excess = 0.0;     // max(b_hat - b, 0)
  double max_lambda = -std::numeric_limits<double>::infinity();
  double a_hat = 0.0;
  double b_hat = 0.0;
  std::vector<double> cell_lambda;
  std::vector<std::string> diagnostics;
};

namespace detail {

struct MHullPass {
  IntervalMatrix hull;
  Eigen::MatrixXi argmin;  // cell attaining each lower bound
  Eigen::MatrixXi argmax;  // cell attaining each upper bound
  bool finite = true;
  std::string diagnostic;
};

inline MHullPass metric_hull_pass(const ContractionProblem& p, const Region& region, int threads) {
  const std::size_t cells = region.num_cells();
  std::vector<IntervalMatrix> per_cell(cells);
  std::vector<std::string> errors(cells);
  parallel_for(cells, threads, [&](std::size_t i) {
    try {
      per_cell[i] = hull_M(p.metric, region.cell(i));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  MHullPass out;
  const Eigen::Index n = p.state_dim();
  Matrix lo = Matrix::Constant(n, n, std::numeric_limits<double>::infinity());
  Matrix hi = Matrix::Constant(n, n, -std::numeric_limits<double>::infinity());
  out.argmin = Eigen::MatrixXi::Zero(n, n);
  out.argmax = Eigen::MatrixXi::Zero(n, n);
  for (std::size_t c = 0; c < cells; ++c) {
    if (!errors[c].empty()) {
      out.finite = false;
      out.diagnostic = "metric hull in cell " + std::to_string(c) + ": " + errors[c];
      return out;
    }
    const Matrix& cl = per_cell[c].lower();
    const Matrix& ch = per_cell[c].upper();
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (cl(i, j) < lo(i, j)) {
          lo(i, j) = cl(i, j);
          out.argmin(i, j) = static_cast<int>(c);
        }
        if (ch(i, j) > hi(i, j)) {
          hi(i, j) = ch(i, j);
          out.argmax(i, j) = static_cast<int>(c);
        }
      }
    }
  }
  out.hull = IntervalMatrix(lo, hi);
  return out;
}

struct CellPass {
  double lambda = 0.0;
  bool finite = true;
  std::string diagnostic;
  Vector grad;  // empty when nothing flowed back
};

inline void collect_gradient(const CellGraph& cg, const std::vector<ParameterBlock>& layout, Eigen::Index total,
                             Vector& out) {
  out = Vector::Zero(total);
  Eigen::Index offset = 0;
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const Matrix g = cg.tape.grad(cg.parameters[k]);
    std::copy(g.data(), g.data() + g.size(), out.data() + offset);
    offset += layout[k].size();
  }
}

}  // namespace detail

/// Loss value and (when grad is non-null) its gradient in parameter_layout()
/// order.  Cells are evaluated independently and reduced in cell order, so
/// the result does not depend on the thread count.
inline LossValue loss_and_gradient(const ContractionProblem& p, const Region& region, const LossOptions& opt,
                                   Vector* grad) {
  const std::size_t cells = region.num_cells();
  const auto layout = parameter_layout(p);
  Eigen::Index total = 0;
  for (const auto& blk : layout) total += blk.size();
  if (grad != nullptr) *grad = Vector::Zero(total);

  LossValue out;

  // Metric bounds from the union of per-cell metric hulls.
  const detail::MHullPass mpass = detail::metric_hull_pass(p, region, opt.threads);
  Matrix m_dlo;
  Matrix m_dhi;
  const Eigen::Index n = p.state_dim();
  bool metric_grad = false;
  if (!mpass.finite || !mpass.hull.finite()) {
    out.a_deficit = kNonFinitePenalty;
    out.b_excess = kNonFinitePenalty;
    out.a_hat = -std::numeric_limits<double>::infinity();
    out.b_hat = std::numeric_limits<double>::infinity();
    out.diagnostics.push_back(mpass.diagnostic.empty() ? "non-finite metric hull" : mpass.diagnostic);
  } else {
    const CornerCheckResult lo = rohn_min_eig_detail(mpass.hull);
    const CornerCheckResult hi = rohn_max_eig_detail(mpass.hull);
    out.a_hat = lo.value;
    out.b_hat = hi.value;
    m_dlo = Matrix::Zero(n, n);
    m_dhi = Matrix::Zero(n, n);
    if (p.a - out.a_hat > 0.0) {
      out.a_deficit = p.a - out.a_hat;
      const BoundGradient g = corner_gradient(lo);
      m_dlo -= g.dlo;
      m_dhi -= g.dhi;
      metric_grad = true;
    }
    if (out.b_hat - p.b > 0.0) {
      out.b_excess = out.b_hat - p.b;
      const BoundGradient g = corner_gradient(hi);
      m_dlo += g.dlo;
      m_dhi += g.dhi;
      metric_grad = true;
    }
  }

  // Per-cell contraction terms.  In max mode the lambda gradient is only
  // known after every cell has been seen, so it is seeded in a second pass.
  const bool want_grad = grad != nullptr;
  const double weight = opt.aggregation == Aggregation::kMean ? 1.0 / static_cast<double>(cells) : 1.0;
  std::vector<detail::CellPass> pass(cells);

  auto run_cell = [&](std::size_t i, bool seed_lambda, bool seed_metric) {
    detail::CellPass& cp = pass[i];
    try {
      CellGraph cg = build_cell_graph(p, region.cell(i), want_grad);
      const IntervalMatrix g = cg.tape.value(cg.g);
      if (!g.finite()) throw PropagationError("non-finite G hull");
      const CornerCheckResult r = rohn_max_mu2(g);
      cp.lambda = r.value;
      if (!std::isfinite(cp.lambda)) throw PropagationError("non-finite corner value");
      if (!want_grad) return;
      bool seeded = false;
      if (seed_lambda && cp.lambda > 0.0) {
        const BoundGradient bg = corner_gradient(r);
        cg.tape.seed(cg.g, weight * bg.dlo, weight * bg.dhi);
        seeded = true;
      }
      if (seed_metric && metric_grad) {
        Matrix dlo = Matrix::Zero(n, n);
        Matrix dhi = Matrix::Zero(n, n);
        bool any = false;
        for (Eigen::Index jj = 0; jj < n; ++jj) {
          for (Eigen::Index ii = 0; ii < n; ++ii) {
            if (mpass.argmin(ii, jj) == static_cast<int>(i)) {
              dlo(ii, jj) = m_dlo(ii, jj);
              any = true;
            }
            if (mpass.argmax(ii, jj) == static_cast<int>(i)) {
              dhi(ii, jj) = m_dhi(ii, jj);
              any = true;
            }
          }
        }
        if (any) {
          cg.tape.seed(cg.m, dlo, dhi);
          seeded = true;
        }
      }
      if (seeded) {
        cg.tape.backward();
        detail::collect_gradient(cg, layout, total, cp.grad);
      }
    } catch (const std::exception& e) {
      cp.finite = false;
      cp.lambda = kNonFinitePenalty;
      cp.grad.resize(0);
      cp.diagnostic = "cell " + std::to_string(i) + ": " + e.what();
    }
  };

  const bool mean = opt.aggregation == Aggregation::kMean;
  parallel_for(cells, opt.threads, [&](std::size_t i) { run_cell(i, mean, true); });

  out.cell_lambda.resize(cells);
  std::size_t worst = 0;
  double hinge_sum = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    out.cell_lambda[i] = pass[i].lambda;
    if (!pass[i].finite) out.diagnostics.push_back(pass[i].diagnostic);
    if (pass[i].lambda > pass[worst].lambda) worst = i;
    hinge_sum += std::max(pass[i].lambda, 0.0);
  }
  out.max_lambda = pass[worst].lambda;
  out.lambda_term = mean ? hinge_sum / static_cast<double>(cells) : std::max(out.max_lambda, 0.0);

  if (want_grad && !mean && pass[worst].finite && out.max_lambda > 0.0) {
    // Re-run the worst cell with the lambda seed; its metric contribution
    // was already collected in the first pass.
    Vector metric_part = pass[worst].grad;
    run_cell(worst, true, false);
    if (metric_part.size() != 0) {
      if (pass[worst].grad.size() == 0) {
        pass[worst].grad = metric_part;
      } else {
        pass[worst].grad += metric_part;
      }
    }
  }

  if (want_grad) {
    for (std::size_t i = 0; i < cells; ++i)
      if (pass[i].grad.size() != 0) *grad += pass[i].grad;
    // Strictly-lower entries of upper-triangular blocks stay at zero.
    Eigen::Index offset = 0;
    for (const auto& blk : layout) {
      if (blk.upper_only) {
        for (Eigen::Index c = 0; c < blk.cols; ++c)
          for (Eigen::Index r = c + 1; r < blk.rows; ++r) (*grad)(offset + c * blk.rows + r) = 0.0;
      }
      offset += blk.size();
    }
  }

  out.value = out.lambda_term + out.a_deficit + out.b_excess;
  return out;
}

inline LossValue loss(const ContractionProblem& p, const Region& region, const LossOptions& opt = {}) {
  return loss_and_gradient(p, region, opt, nullptr);
}

// ---------------------------------------------------------------------------
// AdamW with per-coordinate decay and freeze masks.

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

class AdamW {
 public:
  AdamW() = default;
  /// decay_mask: 1 where weight decay applies.  lr_scale: per-coordinate
  /// step-size multiplier, 0 on frozen coordinates.
  AdamW(AdamWOptions opt, Vector decay_mask, Vector lr_scale)
      : opt_(opt), decay_(std::move(decay_mask)), scale_(std::move(lr_scale)) {
    if (decay_.size() != scale_.size()) throw std::invalid_argument("AdamW: mask sizes differ");
    m_ = Vector::Zero(decay_.size());
    v_ = Vector::Zero(decay_.size());
  }

  void step(Vector& params, const Vector& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("AdamW: size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      if (scale_(i) == 0.0) continue;
      const double lr = opt_.lr * scale_(i);
      params(i) *= 1.0 - lr * opt_.weight_decay * decay_(i);
      m_(i) = opt_.beta1 * m_(i) + (1.0 - opt_.beta1) * grad(i);
      v_(i) = opt_.beta2 * v_(i) + (1.0 - opt_.beta2) * grad(i) * grad(i);
      const double mhat = m_(i) / bc1;
      const double vhat = v_(i) / bc2;
      params(i) -= lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
  }

  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }
  std::int64_t steps() const { return t_; }
  void restore(Vector m, Vector v, std::int64_t t) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw std::invalid_argument("AdamW::restore: size mismatch");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  AdamWOptions opt_;
  Vector decay_;
  Vector scale_;
  Vector m_;
  Vector v_;
  std::int64_t t_ = 0;
};

struct ParameterMasks {
  Vector decay;     // 1 on residual-net coordinates
  Vector lr_scale;  // 0 on frozen coordinates
};

/// The strictly-lower triangle of the warm-start factor is always frozen.
inline ParameterMasks parameter_masks(const ContractionProblem& p, double warm_start_lr_scale = 1.0,
                                      double residual_lr_scale = 1.0) {
  const auto layout = parameter_layout(p);
  Eigen::Index total = 0;
  for (const auto& blk : layout) total += blk.size();
  ParameterMasks out{Vector::Zero(total), Vector::Zero(total)};
  Eigen::Index offset = 0;
  for (const auto& blk : layout) {
    if (blk.residual) out.decay.segment(offset, blk.size()).setOnes();
    out.lr_scale.segment(offset, blk.size()).setConstant(blk.residual ? residual_lr_scale : warm_start_lr_scale);
    if (blk.upper_only) {
      for (Eigen::Index c = 0; c < blk.cols; ++c)
        for (Eigen::Index r = c + 1; r < blk.rows; ++r) out.lr_scale(offset + c * blk.rows + r) = 0.0;
    }
    offset += blk.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curriculum

struct TrainOptions {
  AdamWOptions adam;
  LossOptions loss;
  int start_stage = 1;
  int target_stage = 100;
  int stage_increment = 1;
  std::int64_t max_steps = 2000;
  double max_seconds = std::numeric_limits<double>::infinity();
  double warm_start_lr_scale = 1.0;  // 0 freezes K and U
  double residual_lr_scale = 1.0;    // 0 freezes the residual nets
};

struct LogRow {
  std::int64_t step = 0;
  int stage = 0;
  double loss = 0.0;
  double max_lambda = 0.0;
  double a_hat = 0.0;
  double b_hat = 0.0;
  double wall_time = 0.0;
};

enum class TrainStatus { kCertified, kNotCertified, kBudgetExhausted };

inline std::string to_string(TrainStatus s) {
  switch (s) {
    case TrainStatus::kCertified: return "certified";
    case TrainStatus::kNotCertified: return "not_certified";
    default: return "budget_exhausted";
  }
}

struct TrainState {
  Vector params;
  Vector adam_m;
  Vector adam_v;
  std::int64_t adam_t = 0;
  int stage = 1;
  std::int64_t step = 0;
  std::vector<LogRow> history;
};

struct TrainResult {
  TrainState state;
  TrainStatus status = TrainStatus::kBudgetExhausted;
  int best_stage = 0;        // largest stage whose loss reached <= 0
  Vector best_params;        // parameters at that point
  std::optional<Certificate> certificate;
};

struct TrainCallbacks {
  std::function<void(const LogRow&)> on_log;
  std::function<void(int stage, const ContractionProblem&, const TrainState&)> on_checkpoint;
};

inline Region curriculum_region(const Region& full, int stage) { return full.scaled(static_cast<double>(stage) / 100.0); }

inline TrainResult train_curriculum(ContractionProblem& p, const Region& full, const TrainOptions& opt,
                                    const TrainCallbacks& cb = {}) {
  if (opt.start_stage < 1 || opt.target_stage > 100 || opt.start_stage > opt.target_stage) {
    throw std::invalid_argument("train_curriculum: need 1 <= start_stage <= target_stage <= 100");
  }
  if (opt.stage_increment < 1) throw std::invalid_argument("train_curriculum: stage_increment must be >= 1");
  p.validate();
  const auto clock_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  };

  ParameterMasks masks = parameter_masks(p, opt.warm_start_lr_scale, opt.residual_lr_scale);
  AdamW adam(opt.adam, std::move(masks.decay), std::move(masks.lr_scale));

  TrainResult result;
  TrainState& st = result.state;
  st.params = flatten_parameters(p);
  st.stage = opt.start_stage;

  for (;;) {
    const Region region = curriculum_region(full, st.stage);
    Vector grad;
    const LossValue lv = loss_and_gradient(p, region, opt.loss, &grad);
    LogRow row{st.step, st.stage, lv.value, lv.max_lambda, lv.a_hat, lv.b_hat, elapsed()};
    st.history.push_back(row);
    if (cb.on_log) cb.on_log(row);

    if (lv.value <= 0.0) {
      result.best_stage = st.stage;
      result.best_params = st.params;
      st.adam_m = adam.first_moment();
      st.adam_v = adam.second_moment();
      st.adam_t = adam.steps();
      if (cb.on_checkpoint) cb.on_checkpoint(st.stage, p, st);
      if (st.stage >= opt.target_stage) break;
      st.stage = std::min(opt.target_stage, st.stage + opt.stage_increment);
      continue;
    }
    if (st.step >= opt.max_steps || elapsed() >= opt.max_seconds) break;

    adam.step(st.params, grad);
    assign_parameters(p, st.params);
    ++st.step;
  }

  st.adam_m = adam.first_moment();
  st.adam_v = adam.second_moment();
  st.adam_t = adam.steps();

  if (result.best_stage == opt.target_stage) {
    Certificate cert = certify_region(p, curriculum_region(full, opt.target_stage), opt.loss.threads);
    result.status = cert.certified ? TrainStatus::kCertified : TrainStatus::kNotCertified;
    result.certificate = std::move(cert);
  } else {
    result.status = TrainStatus::kBudgetExhausted;
  }
  return result;
}

}  // namespace ncc
