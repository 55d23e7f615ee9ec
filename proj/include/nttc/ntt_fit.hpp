#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nttc/common.hpp"
#include "nttc/linalg.hpp"
#include "nttc/tensor_train.hpp"

namespace nttc {

/// Squared Frobenius distance |P_G - P_tilde|_F^2 expanded into three inner
/// products; no dense tensor is ever formed.
inline double loss_l0(const TensorTrain& g, const TensorTrain& f) {
  if (g.dims() != f.dims())
    throw std::invalid_argument("loss_l0: mode sizes differ");
  return tt_inner(g, g) - 2.0 * tt_inner(g, f) + tt_inner(f, f);
}

/// Log barrier of one core: -sum over entries of log.
inline double loss_barrier(const TtCore& gk) {
  double s = 0.0;
  for (int i = 0; i < gk.mode_size(); ++i)
    for (int a = 0; a < gk.left_rank(); ++a)
      for (int b = 0; b < gk.right_rank(); ++b) {
        const double v = gk(a, i, b);
        if (!(v > 0.0))
          throw std::domain_error("loss_barrier: non-positive entry at (" +
                                  std::to_string(a) + "," + std::to_string(i) +
                                  "," + std::to_string(b) + ")");
        s -= std::log(v);
      }
  return s;
}

/// Cached environment contractions for alternating sweeps.
///
/// left_gram[k]  = M over modes 0..k-1 of <P_G, P_G>   (a_{k-1} x a_{k-1})
/// right_gram[k] = M over modes k..d-1                 (a_{k-1} x a_{k-1})
/// left_cross[k] = L over modes 0..k-1 of <P_G, P~>    (a_{k-1} x r_{k-1})
/// right_cross[k] = L over modes k..d-1                (a_{k-1} x r_{k-1})
///
/// Validity is tracked so environments are only handed out while fresh;
/// sweeps advance one side at a time after each node update.
class EnvironmentCache {
 public:
  EnvironmentCache(const TensorTrain& g, const TensorTrain& f) { rebuild(g, f); }

  void rebuild(const TensorTrain& g, const TensorTrain& f) {
    if (g.dims() != f.dims())
      throw std::invalid_argument("environment cache: mode sizes differ");
    d_ = g.dim_count();
    lg_.assign(d_ + 1, Eigen::MatrixXd());
    lc_.assign(d_ + 1, Eigen::MatrixXd());
    rg_.assign(d_ + 1, Eigen::MatrixXd());
    rc_.assign(d_ + 1, Eigen::MatrixXd());
    lg_[0] = lc_[0] = rg_[d_] = rc_[d_] = Eigen::MatrixXd::Ones(1, 1);
    for (int k = 0; k < d_; ++k) push_left(k, g, f);
    for (int k = d_ - 1; k >= 0; --k) push_right(k, g, f);
    left_valid_ = d_;
    right_valid_ = 0;
  }

  int dim_count() const { return d_; }

  struct NodeEnv {
    const Eigen::MatrixXd& m_lt;
    const Eigen::MatrixXd& m_gt;
    const Eigen::MatrixXd& l_lt;
    const Eigen::MatrixXd& l_gt;
  };

  NodeEnv node_env(int k) const {
    if (k < 0 || k >= d_)
      throw std::invalid_argument("node_env: node out of range");
    if (left_valid_ < k || right_valid_ > k + 1)
      throw InternalConsistencyError(
          "environment cache stale at node " + std::to_string(k) +
          " (left valid to " + std::to_string(left_valid_) +
          ", right valid from " + std::to_string(right_valid_) + ")");
    return {lg_[k], rg_[k + 1], lc_[k], rc_[k + 1]};
  }

  /// Mark that core k of G changed; environments spanning it go stale.
  void core_updated(int k) {
    left_valid_ = std::min(left_valid_, k);
    right_valid_ = std::max(right_valid_, k + 1);
  }

  /// Recompute the left environment over node k (forward sweep step).
  void advance_left(int k, const TensorTrain& g, const TensorTrain& f) {
    if (left_valid_ < k)
      throw InternalConsistencyError("advance_left: left environment stale");
    push_left(k, g, f);
    left_valid_ = std::max(left_valid_, k + 1);
  }

  /// Recompute the right environment over node k (backward sweep step).
  void advance_right(int k, const TensorTrain& g, const TensorTrain& f) {
    if (right_valid_ > k + 1)
      throw InternalConsistencyError("advance_right: right environment stale");
    push_right(k, g, f);
    right_valid_ = std::min(right_valid_, k);
  }

  /// Full-chain contractions; valid once the right environment reaches 0.
  double full_gram() const {
    if (right_valid_ > 0)
      throw InternalConsistencyError("full_gram: right environment stale");
    return rg_[0](0, 0);
  }
  double full_cross() const {
    if (right_valid_ > 0)
      throw InternalConsistencyError("full_cross: right environment stale");
    return rc_[0](0, 0);
  }

 private:
  void push_left(int k, const TensorTrain& g, const TensorTrain& f) {
    const TtCore& gc = g.core(k);
    const TtCore& fc = f.core(k);
    Eigen::MatrixXd ng = Eigen::MatrixXd::Zero(gc.right_rank(), gc.right_rank());
    Eigen::MatrixXd nc = Eigen::MatrixXd::Zero(gc.right_rank(), fc.right_rank());
    for (int i = 0; i < gc.mode_size(); ++i) {
      ng.noalias() += gc.slice(i).transpose() * lg_[k] * gc.slice(i);
      nc.noalias() += gc.slice(i).transpose() * lc_[k] * fc.slice(i);
    }
    lg_[k + 1].swap(ng);
    lc_[k + 1].swap(nc);
  }

  void push_right(int k, const TensorTrain& g, const TensorTrain& f) {
    const TtCore& gc = g.core(k);
    const TtCore& fc = f.core(k);
    Eigen::MatrixXd ng = Eigen::MatrixXd::Zero(gc.left_rank(), gc.left_rank());
    Eigen::MatrixXd nc = Eigen::MatrixXd::Zero(gc.left_rank(), fc.left_rank());
    for (int i = 0; i < gc.mode_size(); ++i) {
      ng.noalias() += gc.slice(i) * rg_[k + 1] * gc.slice(i).transpose();
      nc.noalias() += gc.slice(i) * rc_[k + 1] * fc.slice(i).transpose();
    }
    rg_[k].swap(ng);
    rc_[k].swap(nc);
  }

  int d_ = 0;
  int left_valid_ = 0;
  int right_valid_ = 0;
  std::vector<Eigen::MatrixXd> lg_, lc_, rg_, rc_;
};

inline EnvironmentCache build_cache(const TensorTrain& g, const TensorTrain& f) {
  return EnvironmentCache(g, f);
}

/// Gradient of l0 = |P_G - P~|_F^2 with respect to core k.
inline TtCore grad_l0_node(const TensorTrain& g, const TensorTrain& f,
                           const EnvironmentCache& cache, int k) {
  auto env = cache.node_env(k);
  const TtCore& gc = g.core(k);
  const TtCore& fc = f.core(k);
  TtCore grad(gc.left_rank(), gc.mode_size(), gc.right_rank());
  for (int i = 0; i < gc.mode_size(); ++i) {
    grad.slice(i).noalias() = 2.0 * (env.m_lt * gc.slice(i) * env.m_gt);
    grad.slice(i).noalias() -= 2.0 * (env.l_lt * fc.slice(i) * env.l_gt.transpose());
  }
  return grad;
}

/// Gradient of the barrier-regularized node objective l0 + mu_k * l_k.
inline TtCore grad_node(const TensorTrain& g, const TensorTrain& f,
                        const EnvironmentCache& cache, int k, double mu) {
  TtCore grad = grad_l0_node(g, f, cache, k);
  const TtCore& gc = g.core(k);
  for (int i = 0; i < gc.mode_size(); ++i)
    grad.slice(i) -= mu * gc.slice(i).cwiseInverse();
  return grad;
}

enum class NewtonSolver { kDirect, kCg, kPcg };

inline NewtonSolver newton_solver_from_string(const std::string& s) {
  if (s == "direct") return NewtonSolver::kDirect;
  if (s == "cg") return NewtonSolver::kCg;
  if (s == "pcg") return NewtonSolver::kPcg;
  throw std::invalid_argument("unknown newton solver '" + s + "'");
}

struct SliceSolveOptions {
  NewtonSolver kind = NewtonSolver::kDirect;
  int cg_max_iter = 100;
  double cg_tol = 1e-10;
  double pcg_mu_threshold = 1e-8;  // below this, PCG falls back to plain CG
};

/// Newton direction for one mode slice v_j: solves
///   (2 M_lt kron M_gt + mu diag(1/v^2)) dv = -grad_slice.
/// The leading 2 is the Hessian of <P_G, P_G> (whose gradient carries the
/// same factor). The PCG preconditioner is the barrier diagonal mu/v^2.
inline Eigen::MatrixXd newton_direction_slice(const Eigen::MatrixXd& v,
                                              const Eigen::MatrixXd& m_lt,
                                              const Eigen::MatrixXd& m_gt,
                                              double mu,
                                              const Eigen::MatrixXd& grad_slice,
                                              const SliceSolveOptions& opt) {
  const Eigen::Index rows = v.rows(), cols = v.cols();
  const Eigen::Index nvar = rows * cols;
  Eigen::VectorXd rhs(nvar), diag(nvar);
  for (Eigen::Index a = 0; a < rows; ++a)
    for (Eigen::Index b = 0; b < cols; ++b) {
      rhs(a * cols + b) = -grad_slice(a, b);
      diag(a * cols + b) = mu / (v(a, b) * v(a, b));
    }
  KronPlusDiagOperator op{2.0 * m_lt, m_gt, diag};

  Eigen::VectorXd x;
  if (opt.kind == NewtonSolver::kDirect) {
    x = direct_spd_solve(op.assemble(), rhs);
  } else {
    std::optional<Eigen::VectorXd> precond;
    if (opt.kind == NewtonSolver::kPcg && mu >= opt.pcg_mu_threshold)
      precond = diag;
    try {
      x = cg_solve(op, rhs, opt.cg_tol, opt.cg_max_iter, precond).x;
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("newton_direction_slice: ") + e.what());
    }
  }
  Eigen::MatrixXd delta(rows, cols);
  for (Eigen::Index a = 0; a < rows; ++a)
    for (Eigen::Index b = 0; b < cols; ++b) delta(a, b) = x(a * cols + b);
  return delta;
}

/// Newton decrement from an already-solved direction: sqrt(-<grad, delta>).
inline double newton_decrement(const TtCore& grad, const TtCore& direction) {
  double gtd = 0.0;
  for (int i = 0; i < grad.mode_size(); ++i)
    gtd += grad.slice(i).cwiseProduct(direction.slice(i)).sum();
  if (gtd > 1e-12)
    throw NumericalError("newton_decrement: direction is not a descent "
                         "direction (Hessian not PD?), <g,d> = " +
                         std::to_string(gtd));
  return std::sqrt(std::max(0.0, -gtd));
}

/// Backtracking line search. Feasibility (strict positivity) is checked
/// before the loss is evaluated; infeasible points count as rejections.
/// Returns the accepted t = beta^m.
template <typename LossFn, typename FeasibleFn>
double line_search(const LossFn& loss_at, const FeasibleFn& feasible_at,
                   double loss0, double slope, double alpha, double beta) {
  if (!(alpha > 0.0 && alpha < 0.5))
    throw std::invalid_argument("line_search: alpha must be in (0, 0.5)");
  if (!(beta > 0.0 && beta < 1.0))
    throw std::invalid_argument("line_search: beta must be in (0, 1)");
  if (!(slope < 0.0))
    throw std::invalid_argument("line_search: need a descent direction");
  double t = 1.0;
  while (true) {
    if (feasible_at(t) && loss_at(t) <= loss0 + alpha * t * slope) return t;
    t *= beta;
    if (t < 1e-16)
      throw NumericalError("line_search: stalled below t = 1e-16");
  }
}

/// Barrier schedules. Fixed: mu halves per sweep down to mu_min. Adaptive:
/// mu_k is refreshed from the centered complementarity proxy
/// sigma * mean(G_k .* |grad l0|), clamped monotone and floored.
struct FixedSchedule {
  double mu0 = 1e-3;
  double decay = 0.5;
  double mu_min = 1e-12;
};
struct AdaptiveSchedule {
  double sigma = 0.2;
  double mu0 = 1e-3;
  double mu_min = 1e-12;
};
using BarrierSchedule = std::variant<FixedSchedule, AdaptiveSchedule>;

inline void validate_schedule(const BarrierSchedule& s) {
  if (const auto* f = std::get_if<FixedSchedule>(&s)) {
    if (!(f->mu0 > 0.0) || !(f->decay > 0.0 && f->decay < 1.0) || !(f->mu_min > 0.0))
      throw std::invalid_argument("fixed schedule: need mu0 > 0, decay in (0,1), mu_min > 0");
  } else {
    const auto& a = std::get<AdaptiveSchedule>(s);
    if (!(a.sigma > 0.0) || !(a.mu0 > 0.0) || !(a.mu_min > 0.0))
      throw std::invalid_argument("adaptive schedule: need sigma, mu0, mu_min > 0");
  }
}

/// One adaptive-barrier refresh for node k.
inline double adaptive_mu(const TtCore& gk, const TtCore& grad_l0_k,
                          double mu_prev, double sigma, double mu_min) {
  double acc = 0.0;
  for (int i = 0; i < gk.mode_size(); ++i)
    acc += gk.slice(i).cwiseProduct(grad_l0_k.slice(i).cwiseAbs()).sum();
  const double mu_tilde = sigma * acc / static_cast<double>(gk.size());
  return std::max(mu_min, std::min(mu_prev, mu_tilde));
}

struct FitOptions {
  int sweeps = 100;  // L
  NewtonSolver solver = NewtonSolver::kDirect;
  int cg_max_iter = 100;
  double cg_tol = 1e-10;
  double pcg_mu_threshold = 1e-8;
  double ls_alpha = 0.3;
  double ls_beta = 0.5;
  int newton_steps_per_visit = 1;
  int warm_init_iters = 10;
  std::vector<int> ranks;            // NTT ranks, used when no G0 is given
  bool adaptive_mu_per_visit = false;  // refresh mu at every visit, not per sweep
  double stop_below_rel_loss = 0.0;    // early stop when > 0
  bool collect_node_stats = false;     // per-step records incl. post decrement

  void validate() const {
    if (sweeps < 0) throw std::invalid_argument("fit: sweeps must be >= 0");
    if (!(ls_alpha > 0.0 && ls_alpha < 0.5))
      throw std::invalid_argument("fit: alpha must be in (0, 0.5)");
    if (!(ls_beta > 0.0 && ls_beta < 1.0))
      throw std::invalid_argument("fit: beta must be in (0, 1)");
    if (cg_max_iter < 1) throw std::invalid_argument("fit: cg_max_iter >= 1");
    if (!(cg_tol > 0.0)) throw std::invalid_argument("fit: cg_tol > 0");
    if (newton_steps_per_visit < 1)
      throw std::invalid_argument("fit: newton_steps_per_visit >= 1");
    if (warm_init_iters < 0)
      throw std::invalid_argument("fit: warm_init_iters >= 0");
  }
};

struct SweepRecord {
  int sweep = 0;
  double wall_ms = 0.0;  // cumulative since fit start
  double rel_sq_frob = 0.0;
  double mean_mu = 0.0;
  double mean_step = 0.0;
  double mean_decrement = 0.0;
};

/// One record per Newton step on one node; loss values share an arbitrary
/// constant offset (<P~, P~> is dropped), which cancels in every check.
struct NodeRecord {
  int sweep = 0;
  int node = 0;
  double mu = 0.0;
  double lambda = 0.0;
  double step_t = 0.0;
  double slope = 0.0;        // <grad, direction>
  double loss_before = 0.0;
  double loss_after = 0.0;
  double lambda_post = std::numeric_limits<double>::quiet_NaN();
  double min_core_entry = 0.0;
  double ls_alpha = 0.0;
};

struct FitTrace {
  std::vector<SweepRecord> sweeps;
  std::vector<NodeRecord> nodes;  // populated when collect_node_stats
};

namespace detail {

/// Node objective shifted by the constant <P~, P~>:
///   <P_G, P_G> - 2 <P_G, P~> + mu * barrier(G_k),
/// evaluated through the cached environments with a candidate core.
inline double node_objective(const EnvironmentCache::NodeEnv& env,
                             const std::vector<Eigen::MatrixXd>& gk_slices,
                             const TtCore& fk, double mu) {
  double pg2 = 0.0, pgf = 0.0, bar = 0.0;
  for (std::size_t i = 0; i < gk_slices.size(); ++i) {
    const Eigen::MatrixXd& s = gk_slices[i];
    pg2 += (env.m_lt * s * env.m_gt).cwiseProduct(s).sum();
    pgf += (env.l_lt * fk.slice(static_cast<int>(i)) * env.l_gt.transpose())
               .cwiseProduct(s)
               .sum();
    bar -= s.array().log().sum();
  }
  return pg2 - 2.0 * pgf + mu * bar;
}

struct NewtonStepOutcome {
  double lambda = 0.0;
  double step_t = 0.0;
  double slope = 0.0;
  double loss_before = 0.0;
  double loss_after = 0.0;
  bool moved = false;
};

/// One Newton step with backtracking on node k. Mutates g.core(k).
inline NewtonStepOutcome newton_step_node(TensorTrain& g, const TensorTrain& f,
                                          EnvironmentCache& cache, int k,
                                          double mu, const FitOptions& opt) {
  auto env = cache.node_env(k);
  TtCore& gk = g.core(k);
  const TtCore& fk = f.core(k);
  const int n = gk.mode_size();

  TtCore grad = grad_node(g, f, cache, k, mu);
  TtCore direction(gk.left_rank(), n, gk.right_rank());
  SliceSolveOptions sopt{opt.solver, opt.cg_max_iter, opt.cg_tol,
                         opt.pcg_mu_threshold};
  // Slice systems are independent (the node Hessian is block diagonal in
  // the mode index).
  for (int i = 0; i < n; ++i) {
    try {
      direction.slice(i) = newton_direction_slice(gk.slice(i), env.m_lt,
                                                  env.m_gt, mu, grad.slice(i),
                                                  sopt);
    } catch (const NumericalError& e) {
      throw NumericalError("node " + std::to_string(k) + " slice " +
                           std::to_string(i) + ": " + e.what());
    }
  }

  NewtonStepOutcome out;
  out.lambda = newton_decrement(grad, direction);
  double slope = 0.0;
  for (int i = 0; i < n; ++i)
    slope += grad.slice(i).cwiseProduct(direction.slice(i)).sum();
  out.slope = slope;
  if (out.lambda < 1e-15) return out;  // node already stationary

  std::vector<Eigen::MatrixXd> current(n), candidate(n);
  for (int i = 0; i < n; ++i) current[i] = gk.slice(i);
  out.loss_before = node_objective(env, current, fk, mu);

  auto assemble_candidate = [&](double t) {
    for (int i = 0; i < n; ++i)
      candidate[i] = current[i] + t * direction.slice(i);
  };
  auto feasible_at = [&](double t) {
    assemble_candidate(t);
    for (int i = 0; i < n; ++i)
      if (candidate[i].minCoeff() <= 0.0) return false;
    return true;
  };
  auto loss_at = [&](double /*t*/) {
    // candidate already assembled by the feasibility probe
    return node_objective(env, candidate, fk, mu);
  };

  double t;
  try {
    t = line_search(loss_at, feasible_at, out.loss_before, slope, opt.ls_alpha,
                    opt.ls_beta);
  } catch (const NumericalError& e) {
    throw NumericalError("node " + std::to_string(k) + ": " + e.what());
  }
  assemble_candidate(t);
  for (int i = 0; i < n; ++i) gk.slice(i) = candidate[i];
  out.loss_after = node_objective(env, candidate, fk, mu);
  out.step_t = t;
  out.moved = true;
  cache.core_updated(k);

  if (gk.min_entry() <= 0.0)
    throw NumericalError("node " + std::to_string(k) +
                         ": positivity lost after update");
  return out;
}

}  // namespace detail

struct NodeUpdateStats {
  double lambda = 0.0;     // decrement at entry of the last Newton step
  double mean_step = 0.0;  // mean accepted t over steps this visit
  int steps = 0;
};

/// Per-visit node update: newton_steps_per_visit Newton iterations with one
/// line search each. Optionally records per-step theorem diagnostics
/// (including the post-step decrement, which costs one extra solve).
inline NodeUpdateStats update_node(TensorTrain& g, const TensorTrain& f,
                                   EnvironmentCache& cache, int k, double mu,
                                   const FitOptions& opt, int sweep = 0,
                                   FitTrace* trace = nullptr) {
  NodeUpdateStats stats;
  for (int step = 0; step < opt.newton_steps_per_visit; ++step) {
    auto out = detail::newton_step_node(g, f, cache, k, mu, opt);
    stats.lambda = out.lambda;
    if (out.moved) {
      stats.mean_step += out.step_t;
      ++stats.steps;
    }
    if (trace && opt.collect_node_stats) {
      NodeRecord rec;
      rec.sweep = sweep;
      rec.node = k;
      rec.mu = mu;
      rec.lambda = out.lambda;
      rec.step_t = out.step_t;
      rec.slope = out.slope;
      rec.loss_before = out.loss_before;
      rec.loss_after = out.loss_after;
      rec.min_core_entry = g.core(k).min_entry();
      rec.ls_alpha = opt.ls_alpha;
      if (out.moved) {
        TtCore grad_post = grad_node(g, f, cache, k, mu);
        auto env = cache.node_env(k);
        TtCore dir_post(grad_post.left_rank(), grad_post.mode_size(),
                        grad_post.right_rank());
        SliceSolveOptions sopt{opt.solver, opt.cg_max_iter, opt.cg_tol,
                               opt.pcg_mu_threshold};
        for (int i = 0; i < grad_post.mode_size(); ++i)
          dir_post.slice(i) = newton_direction_slice(
              g.core(k).slice(i), env.m_lt, env.m_gt, mu, grad_post.slice(i),
              sopt);
        rec.lambda_post = newton_decrement(grad_post, dir_post);
      }
      trace->nodes.push_back(rec);
    }
    if (!out.moved) break;
  }
  if (stats.steps > 0) stats.mean_step /= stats.steps;
  return stats;
}

/// Core-balancing gauge move: rescales each core so all Frobenius norms
/// equal the geometric mean; the represented tensor is unchanged.
inline TensorTrain rescale_cores(const TensorTrain& g) {
  const int d = g.dim_count();
  std::vector<double> lognorm(d);
  double mean = 0.0;
  for (int k = 0; k < d; ++k) {
    const double n2 = g.core(k).squared_norm();
    if (!(n2 > 0.0))
      throw DegenerateInputError("rescale_cores: core " + std::to_string(k) +
                                 " has zero norm");
    lognorm[k] = 0.5 * std::log(n2);
    mean += lognorm[k];
  }
  mean /= d;
  TensorTrain out = g;
  for (int k = 0; k < d; ++k) out.core(k).scale(std::exp(mean - lognorm[k]));
  return out;
}

inline NonNegTensorTrain rescale_cores(const NonNegTensorTrain& g) {
  return NonNegTensorTrain(rescale_cores(g.tt()));
}

/// Multiplicative (Lee-Seung style) NTT fitting with symmetric sweeps:
///   G_k <- G_k .* max(grad <P~,P_G>, floor) ./ (1/2 grad <P_G,P_G>).
/// Serves as warm initialization and as the convergence baseline.
inline NonNegTensorTrain multiplicative_update_run(const TensorTrain& f,
                                                   NonNegTensorTrain g0,
                                                   int n_iter,
                                                   double lambda_floor,
                                                   FitTrace* trace = nullptr) {
  if (!(lambda_floor > 0.0))
    throw std::invalid_argument("multiplicative_update_run: floor must be > 0");
  TensorTrain g = g0.tt();
  const int d = g.dim_count();
  EnvironmentCache cache(g, f);
  const double f_norm2 = tt_inner(f, f);
  const auto t0 = std::chrono::steady_clock::now();

  auto update_one = [&](int k) {
    auto env = cache.node_env(k);
    TtCore& gk = g.core(k);
    const TtCore& fk = f.core(k);
    for (int i = 0; i < gk.mode_size(); ++i) {
      Eigen::MatrixXd u =
          (env.l_lt * fk.slice(i) * env.l_gt.transpose()).cwiseMax(lambda_floor);
      Eigen::MatrixXd v = env.m_lt * gk.slice(i) * env.m_gt;
      gk.slice(i) = gk.slice(i).cwiseProduct(u).cwiseQuotient(v);
    }
    if (!gk.all_finite())
      throw NumericalError("multiplicative update produced non-finite values at node " +
                           std::to_string(k));
    cache.core_updated(k);
  };

  for (int it = 0; it < n_iter; ++it) {
    for (int k = 0; k < d; ++k) {
      update_one(k);
      cache.advance_left(k, g, f);
    }
    for (int k = d - 1; k >= 0; --k) {
      update_one(k);
      cache.advance_right(k, g, f);
    }
    if (trace) {
      const double l0 = f_norm2 - 2.0 * cache.full_cross() + cache.full_gram();
      SweepRecord rec;
      rec.sweep = it;
      rec.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      rec.rel_sq_frob = l0 / f_norm2;
      trace->sweeps.push_back(rec);
    }
  }
  return NonNegTensorTrain(std::move(g));
}

/// Random positive initialization followed by a few multiplicative sweeps
/// (scale matching) and core balancing. The raw random tensor's norm grows
/// like c^d, many orders away from the reference at large d; matching
/// norms up front keeps the first multiplicative ratios near 1.
inline NonNegTensorTrain warm_init(const TensorTrain& f,
                                   std::span<const int> ranks, Rng& rng,
                                   int mult_iters) {
  auto dims = f.dims();
  NonNegTensorTrain g =
      NonNegTensorTrain::random_uniform(dims, ranks, 1e-3, 1.0, rng);
  const double f_norm = frob_norm(f);
  if (!(f_norm > 0.0))
    throw DegenerateInputError("warm_init: reference tensor has zero norm");
  const double g_norm = frob_norm(g.tt());
  const double c = std::pow(f_norm / g_norm, 1.0 / f.dim_count());
  for (int k = 0; k < f.dim_count(); ++k) g.core(k).scale(c);
  if (mult_iters > 0)
    g = multiplicative_update_run(f, std::move(g), mult_iters, 1e-9);
  return rescale_cores(g);
}

/// Alternating barrier-Newton NTT fitting (forward then backward sweeps,
/// incrementally cached environments, per-sweep barrier schedule).
inline std::pair<NonNegTensorTrain, FitTrace> ntt_fit_run(
    const TensorTrain& f, const FitOptions& options,
    const BarrierSchedule& schedule, std::optional<NonNegTensorTrain> g0,
    Rng& rng) {
  options.validate();
  validate_schedule(schedule);
  const int d = f.dim_count();

  NonNegTensorTrain init =
      g0 ? std::move(*g0)
         : warm_init(f, options.ranks.empty() ? f.ranks() : options.ranks, rng,
                     options.warm_init_iters);
  if (init.dims() != f.dims())
    throw std::invalid_argument("ntt_fit_run: initial guess shape mismatch");

  FitTrace trace;
  if (options.sweeps == 0) return {std::move(init), std::move(trace)};

  TensorTrain g = init.tt();
  EnvironmentCache cache(g, f);
  const double f_norm2 = tt_inner(f, f);
  if (!(f_norm2 > 0.0))
    throw DegenerateInputError("ntt_fit_run: reference tensor has zero norm");

  const bool adaptive = std::holds_alternative<AdaptiveSchedule>(schedule);
  const double mu0 = adaptive ? std::get<AdaptiveSchedule>(schedule).mu0
                              : std::get<FixedSchedule>(schedule).mu0;
  const double mu_min = adaptive ? std::get<AdaptiveSchedule>(schedule).mu_min
                                 : std::get<FixedSchedule>(schedule).mu_min;
  std::vector<double> mu(d, mu0);
  const auto t0 = std::chrono::steady_clock::now();

  for (int sweep = 0; sweep < options.sweeps; ++sweep) {
    if (!adaptive && sweep > 0) {
      const auto& fs = std::get<FixedSchedule>(schedule);
      for (double& m : mu) m = std::max(m * fs.decay, fs.mu_min);
    }
    double sum_mu = 0.0, sum_step = 0.0, sum_lambda = 0.0;
    int visits = 0;

    // The adaptive rule is evaluated after a node update, where the
    // stationarity relation grad l0 = mu / G makes the complementarity
    // proxy track mu itself; by default only the last visit of the sweep
    // refreshes mu (used from the next sweep on).
    auto visit = [&](int k, bool last_visit) {
      auto stats = update_node(g, f, cache, k, mu[k], options, sweep, &trace);
      sum_mu += mu[k];
      sum_step += stats.mean_step;
      sum_lambda += stats.lambda;
      ++visits;
      if (adaptive && (last_visit || options.adaptive_mu_per_visit)) {
        const auto& as = std::get<AdaptiveSchedule>(schedule);
        TtCore gl0 = grad_l0_node(g, f, cache, k);
        mu[k] = adaptive_mu(g.core(k), gl0, mu[k], as.sigma, mu_min);
      }
    };

    for (int k = 0; k < d; ++k) {
      visit(k, false);
      cache.advance_left(k, g, f);
    }
    for (int k = d - 1; k >= 0; --k) {
      visit(k, true);
      cache.advance_right(k, g, f);
    }

    const double l0 = f_norm2 - 2.0 * cache.full_cross() + cache.full_gram();
    SweepRecord rec;
    rec.sweep = sweep;
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    rec.rel_sq_frob = l0 / f_norm2;
    rec.mean_mu = sum_mu / visits;
    rec.mean_step = sum_step / visits;
    rec.mean_decrement = sum_lambda / visits;
    trace.sweeps.push_back(rec);

    if (options.stop_below_rel_loss > 0.0 &&
        rec.rel_sq_frob <= options.stop_below_rel_loss)
      break;
  }
  return {NonNegTensorTrain(std::move(g)), std::move(trace)};
}

}  // namespace nttc
