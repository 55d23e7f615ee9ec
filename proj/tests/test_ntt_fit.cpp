#include "nttc/ntt_fit.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace nttc;
using nttc::testing::dense_from_tt;

namespace {

struct Instance {
  TensorTrain g;  // strictly positive cores
  TensorTrain f;
};

Instance random_instance(std::vector<int> dims, std::vector<int> g_ranks,
                         std::vector<int> f_ranks, Rng& rng,
                         bool positive_f = false) {
  Instance inst;
  inst.g = TensorTrain::random_uniform(dims, g_ranks, 0.5, 1.5, rng);
  inst.f = TensorTrain::random_uniform(dims, f_ranks, positive_f ? 0.2 : -1.0,
                                       1.0, rng);
  return inst;
}

/// Total node loss along an independent route (plain inner products).
double direct_total_loss(const TensorTrain& g, const TensorTrain& f, int k,
                         double mu) {
  return loss_l0(g, f) + mu * loss_barrier(g.core(k));
}

TEST(LossL0, SelfDistanceIsZero) {
  Rng rng(61);
  std::vector<int> dims{2, 3, 2};
  auto g = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, 0.2, 1.0, rng);
  const double f2 = tt_inner(g, g);
  EXPECT_LE(std::abs(loss_l0(g, g)), 1e-12 * f2);
}

TEST(LossL0, ZeroReferenceGivesGram) {
  Rng rng(62);
  std::vector<int> dims{2, 2, 2};
  auto g = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, 0.2, 1.0, rng);
  auto f = g;
  for (int k = 0; k < 3; ++k) f.core(k).scale(0.0);
  EXPECT_NEAR(loss_l0(g, f), tt_inner(g, g), 1e-12);
}

TEST(LossL0, MatchesDenseEnumeration) {
  Rng rng(63);
  std::vector<int> dims{2, 3, 2};
  auto inst = random_instance(dims, {2, 2}, {3, 2}, rng);
  auto dg = dense_from_tt(inst.g), df = dense_from_tt(inst.f);
  double brute = 0.0;
  for (std::size_t i = 0; i < dg.values.size(); ++i) {
    const double diff = dg.values[i] - df.values[i];
    brute += diff * diff;
  }
  EXPECT_NEAR(loss_l0(inst.g, inst.f), brute, 1e-11 * (1.0 + brute));
}

TEST(LossBarrier, OnesGiveZero) {
  EXPECT_DOUBLE_EQ(loss_barrier(TtCore::filled(1, 4, 1, 1.0)), 0.0);
}

TEST(LossBarrier, TwoEntriesOfE) {
  EXPECT_NEAR(loss_barrier(TtCore::filled(1, 2, 1, std::exp(1.0))), -2.0, 1e-14);
}

TEST(LossBarrier, MatchesDirectSummation) {
  Rng rng(64);
  TtCore c = TtCore::random_uniform(2, 3, 2, 0.1, 2.0, rng);
  double brute = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) brute -= std::log(c(a, i, b));
  EXPECT_NEAR(loss_barrier(c), brute, 1e-12 * (1.0 + std::abs(brute)));
}

TEST(LossBarrier, NonPositiveEntryIdentified) {
  TtCore c = TtCore::filled(1, 3, 1, 1.0);
  c(0, 2, 0) = -0.5;
  try {
    loss_barrier(c);
    FAIL() << "expected domain_error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("(0,2,0)"), std::string::npos);
  }
}

TEST(Cache, TwoNodeLeftGramMatchesDirectProduct) {
  Rng rng(65);
  std::vector<int> dims{3, 2};
  auto inst = random_instance(dims, {2}, {2}, rng);
  EnvironmentCache cache(inst.g, inst.f);
  auto env = cache.node_env(1);
  Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(2, 2);
  for (int i = 0; i < 3; ++i)
    direct += inst.g.core(0).slice(i).transpose() * inst.g.core(0).slice(i);
  EXPECT_LE((env.m_lt - direct).norm(), 1e-13);
}

TEST(Cache, SliceQuadraticFormMatchesInner) {
  Rng rng(66);
  std::vector<int> dims{2, 3, 2, 2};
  auto inst = random_instance(dims, {2, 3, 2}, {2, 2, 2}, rng);
  EnvironmentCache cache(inst.g, inst.f);
  const double expected = tt_inner(inst.g, inst.g);
  for (int k = 0; k < 4; ++k) {
    auto env = cache.node_env(k);
    double acc = 0.0;
    for (int i = 0; i < dims[k]; ++i) {
      const auto& s = inst.g.core(k).slice(i);
      acc += (env.m_lt * s * env.m_gt).cwiseProduct(s).sum();
    }
    EXPECT_NEAR(acc, expected, 1e-11 * (1.0 + std::abs(expected)));
  }
}

TEST(Cache, CrossEqualsGramWhenReferenceIsSame) {
  Rng rng(67);
  std::vector<int> dims{2, 2, 2};
  auto g = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, 0.2, 1.0, rng);
  EnvironmentCache cache(g, g);
  for (int k = 0; k < 3; ++k) {
    auto env = cache.node_env(k);
    EXPECT_LE((env.l_lt - env.m_lt).norm(), 1e-13);
    EXPECT_LE((env.l_gt - env.m_gt).norm(), 1e-13);
  }
}

TEST(Cache, StaleAccessRejected) {
  Rng rng(68);
  std::vector<int> dims{2, 2, 2};
  auto inst = random_instance(dims, {2, 2}, {2, 2}, rng);
  EnvironmentCache cache(inst.g, inst.f);
  cache.core_updated(1);
  EXPECT_NO_THROW(cache.node_env(1));   // own environment unaffected
  EXPECT_THROW(cache.node_env(0), InternalConsistencyError);
  EXPECT_THROW(cache.node_env(2), InternalConsistencyError);
  cache.advance_left(1, inst.g, inst.f);
  EXPECT_NO_THROW(cache.node_env(2));
}

TEST(Cache, IncrementalMatchesRebuildAfterSweep) {
  Rng rng(69);
  std::vector<int> dims{2, 3, 2, 2};
  auto inst = random_instance(dims, {2, 2, 2}, {2, 2, 2}, rng, true);
  auto f = inst.f;
  TensorTrain g = inst.g;
  EnvironmentCache cache(g, f);
  FitOptions opt;
  opt.solver = NewtonSolver::kDirect;
  // One forward-backward sweep with incremental advancement.
  for (int k = 0; k < 4; ++k) {
    update_node(g, f, cache, k, 1e-4, opt);
    cache.advance_left(k, g, f);
  }
  for (int k = 3; k >= 0; --k) {
    update_node(g, f, cache, k, 1e-4, opt);
    cache.advance_right(k, g, f);
  }
  const double inc_gram = cache.full_gram();
  const double inc_cross = cache.full_cross();
  EXPECT_NEAR(inc_gram, tt_inner(g, g), 1e-11 * (1.0 + inc_gram));
  EXPECT_NEAR(inc_cross, tt_inner(g, f), 1e-11 * (1.0 + std::abs(inc_cross)));
}

TEST(GradNode, ZeroAtExactFitWithoutBarrier) {
  Rng rng(70);
  std::vector<int> dims{2, 2, 2};
  auto g = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, 0.3, 1.2, rng);
  EnvironmentCache cache(g, g);  // reference equals the iterate
  for (int k = 0; k < 3; ++k) {
    TtCore grad = grad_node(g, g, cache, k, 0.0);
    for (int i = 0; i < dims[k]; ++i)
      EXPECT_LE(grad.slice(i).cwiseAbs().maxCoeff(), 1e-11);
  }
}

TEST(GradNode, MatchesCentralFiniteDifferences) {
  Rng rng(71);
  for (int rep = 0; rep < 20; ++rep) {
    std::uniform_int_distribution<int> d_dist(2, 4), n_dist(2, 4), r_dist(1, 3);
    const int d = d_dist(rng);
    std::vector<int> dims(d);
    for (auto& n : dims) n = n_dist(rng);
    std::vector<int> gr(d - 1), fr(d - 1);
    for (auto& r : gr) r = r_dist(rng);
    for (auto& r : fr) r = r_dist(rng);
    auto inst = random_instance(dims, gr, fr, rng);
    std::uniform_int_distribution<int> node_dist(0, d - 1);
    const int k = node_dist(rng);
    const double mu = 1e-2;

    EnvironmentCache cache(inst.g, inst.f);
    TtCore grad = grad_node(inst.g, inst.f, cache, k, mu);

    const double h = 1e-6;
    TtCore& gk = inst.g.core(k);
    double max_rel = 0.0;
    for (int i = 0; i < gk.mode_size(); ++i)
      for (int a = 0; a < gk.left_rank(); ++a)
        for (int b = 0; b < gk.right_rank(); ++b) {
          const double saved = gk(a, i, b);
          gk(a, i, b) = saved + h;
          const double up = direct_total_loss(inst.g, inst.f, k, mu);
          gk(a, i, b) = saved - h;
          const double dn = direct_total_loss(inst.g, inst.f, k, mu);
          gk(a, i, b) = saved;
          const double fd = (up - dn) / (2.0 * h);
          max_rel = std::max(max_rel, std::abs(fd - grad(a, i, b)) /
                                          (1.0 + std::abs(grad(a, i, b))));
        }
    EXPECT_LE(max_rel, 1e-5) << "rep " << rep;
  }
}

TEST(GradNode, BarrierDominatedLimit) {
  Rng rng(72);
  std::vector<int> dims{2, 2};
  auto inst = random_instance(dims, {2}, {2}, rng);
  EnvironmentCache cache(inst.g, inst.f);
  const double mu = 1e6;
  TtCore grad = grad_node(inst.g, inst.f, cache, 0, mu);
  const TtCore& gk = inst.g.core(0);
  for (int i = 0; i < 2; ++i)
    for (int b = 0; b < 2; ++b) {
      const double barrier_term = -mu / gk(0, i, b);
      EXPECT_NEAR(grad(0, i, b) / barrier_term, 1.0, 1e-3);
    }
}

TEST(NewtonSlice, ScalarBarrierExample) {
  Eigen::MatrixXd v(1, 1), grad(1, 1);
  v << 2.0;
  grad << -0.5;
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 1);
  SliceSolveOptions opt;
  Eigen::MatrixXd delta = newton_direction_slice(v, zero, zero, 1.0, grad, opt);
  EXPECT_NEAR(delta(0, 0), 2.0, 1e-12);
}

TEST(NewtonSlice, DirectAndCgAgree) {
  Rng rng(73);
  const int a = 3, b = 2;
  Eigen::MatrixXd r1 = Eigen::MatrixXd::Random(a, a), r2 = Eigen::MatrixXd::Random(b, b);
  Eigen::MatrixXd m_lt = r1.transpose() * r1 + 0.1 * Eigen::MatrixXd::Identity(a, a);
  Eigen::MatrixXd m_gt = r2.transpose() * r2 + 0.1 * Eigen::MatrixXd::Identity(b, b);
  Eigen::MatrixXd v = Eigen::MatrixXd::Random(a, b).cwiseAbs();
  v.array() += 0.2;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Random(a, b);
  SliceSolveOptions direct{NewtonSolver::kDirect, 100, 1e-12, 1e-8};
  SliceSolveOptions cg{NewtonSolver::kCg, 200, 1e-12, 1e-8};
  SliceSolveOptions pcg{NewtonSolver::kPcg, 200, 1e-12, 1e-8};
  const double mu = 1e-3;
  auto dd = newton_direction_slice(v, m_lt, m_gt, mu, grad, direct);
  auto dc = newton_direction_slice(v, m_lt, m_gt, mu, grad, cg);
  auto dp = newton_direction_slice(v, m_lt, m_gt, mu, grad, pcg);
  EXPECT_LE((dd - dc).norm(), 1e-8 * (1.0 + dd.norm()));
  EXPECT_LE((dd - dp).norm(), 1e-8 * (1.0 + dd.norm()));
}

TEST(NewtonSlice, ZeroGradientGivesZeroDirection) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Ones(2, 2);
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(2, 2);
  SliceSolveOptions opt;
  auto delta = newton_direction_slice(v, m, m, 1e-3, Eigen::MatrixXd::Zero(2, 2), opt);
  EXPECT_DOUBLE_EQ(delta.norm(), 0.0);
}

TEST(NewtonDecrement, ZeroGradient) {
  TtCore g(1, 2, 1), d(1, 2, 1);
  EXPECT_DOUBLE_EQ(newton_decrement(g, d), 0.0);
}

TEST(NewtonDecrement, ScalarCase) {
  // g = 2, H = 2: delta = -1, lambda = sqrt(2).
  TtCore g(1, 1, 1), d(1, 1, 1);
  g(0, 0, 0) = 2.0;
  d(0, 0, 0) = -1.0;
  EXPECT_NEAR(newton_decrement(g, d), std::sqrt(2.0), 1e-14);
}

TEST(NewtonDecrement, MatchesDirectSolveOnRandomSpd) {
  Rng rng(74);
  Eigen::MatrixXd r = Eigen::MatrixXd::Random(4, 4);
  Eigen::MatrixXd h = r.transpose() * r + Eigen::MatrixXd::Identity(4, 4);
  Eigen::VectorXd grad = Eigen::VectorXd::Random(4);
  Eigen::VectorXd delta = -h.llt().solve(grad);
  TtCore gc(1, 4, 1), dc(1, 4, 1);
  for (int i = 0; i < 4; ++i) {
    gc(0, i, 0) = grad(i);
    dc(0, i, 0) = delta(i);
  }
  const double expected = std::sqrt(grad.dot(h.llt().solve(grad)));
  EXPECT_NEAR(newton_decrement(gc, dc), expected, 1e-10);
}

TEST(NewtonDecrement, AscentDirectionRejected) {
  TtCore g(1, 1, 1), d(1, 1, 1);
  g(0, 0, 0) = 1.0;
  d(0, 0, 0) = 1.0;  // <g, d> = 1 > 0
  EXPECT_THROW(newton_decrement(g, d), NumericalError);
}

TEST(LineSearch, ExactQuadraticAcceptsUnitStep) {
  // f(t) = c (1 - t)^2 along the Newton direction to the minimum.
  const double c = 3.7;
  auto loss = [&](double t) { return c * (1.0 - t) * (1.0 - t); };
  auto feasible = [](double) { return true; };
  const double t = line_search(loss, feasible, c, -2.0 * c, 0.3, 0.5);
  EXPECT_DOUBLE_EQ(t, 1.0);
}

TEST(LineSearch, FeasibilityClampsBeforeHalf) {
  // Candidate crosses zero at t = 0.5; any accepted t must be below it.
  auto feasible = [](double t) { return 1.0 - 2.0 * t > 0.0; };
  auto loss = [](double t) { return -t; };
  const double t = line_search(loss, feasible, 0.0, -1.0, 0.3, 0.5);
  EXPECT_LT(t, 0.5);
  EXPECT_GT(t, 0.0);
}

TEST(LineSearch, StallsBelowFloor) {
  auto feasible = [](double) { return false; };
  auto loss = [](double) { return 0.0; };
  EXPECT_THROW(line_search(loss, feasible, 0.0, -1.0, 0.3, 0.5), NumericalError);
}

TEST(LineSearch, ParameterRangesEnforced) {
  auto loss = [](double) { return 0.0; };
  auto feasible = [](double) { return true; };
  EXPECT_THROW(line_search(loss, feasible, 0.0, -1.0, 0.6, 0.5),
               std::invalid_argument);
  EXPECT_THROW(line_search(loss, feasible, 0.0, -1.0, 0.3, 1.0),
               std::invalid_argument);
  EXPECT_THROW(line_search(loss, feasible, 0.0, 1.0, 0.3, 0.5),
               std::invalid_argument);
}

TEST(UpdateNode, StationaryPointUnchanged) {
  // Reference equals iterate and mu ~ 0: gradient vanishes numerically.
  Rng rng(75);
  std::vector<int> dims{2, 2};
  auto g = TensorTrain::random_uniform(dims, std::vector<int>{2}, 0.5, 1.0, rng);
  TensorTrain f = g;
  EnvironmentCache cache(g, f);
  FitOptions opt;
  // Gradient is zero only with mu = 0 exactly; emulate with a barrier
  // already at the optimum: use the barrier-centered fixed point instead.
  TtCore before = g.core(0);
  TtCore grad = grad_node(g, f, cache, 0, 0.0);
  double gmax = 0.0;
  for (int i = 0; i < 2; ++i)
    gmax = std::max(gmax, grad.slice(i).cwiseAbs().maxCoeff());
  EXPECT_LE(gmax, 1e-11);
}

TEST(UpdateNode, DescentAndPositivity) {
  Rng rng(76);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<int> dims{2, 3, 2};
    auto inst = random_instance(dims, {2, 2}, {2, 2}, rng, true);
    TensorTrain g = inst.g;
    EnvironmentCache cache(g, inst.f);
    FitOptions opt;
    opt.collect_node_stats = true;
    FitTrace trace;
    const double mu = 1e-3;
    const double before = direct_total_loss(g, inst.f, 1, mu);
    update_node(g, inst.f, cache, 1, mu, opt, 0, &trace);
    const double after = direct_total_loss(g, inst.f, 1, mu);
    EXPECT_LE(after, before + 1e-12);
    EXPECT_GT(g.core(1).min_entry(), 0.0);
    ASSERT_EQ(trace.nodes.size(), 1u);
    const auto& rec = trace.nodes[0];
    // Armijo inequality re-checked from the recorded quantities.
    EXPECT_LE(rec.loss_after,
              rec.loss_before + rec.ls_alpha * rec.step_t * rec.slope + 1e-13);
  }
}

TEST(UpdateNode, QuadraticContractionAtUnitBarrierWeight) {
  // With mu = 1, the node objective is self-concordant with the standard
  // constant, so the damped Newton step must take t = 1 and contract the
  // decrement quadratically once lambda <= 1/4.
  Rng rng(77);
  std::vector<int> dims{3, 2, 3};
  auto inst = random_instance(dims, {2, 2}, {2, 2}, rng, true);
  TensorTrain g = inst.g;
  EnvironmentCache cache(g, inst.f);
  FitOptions opt;
  opt.collect_node_stats = true;
  FitTrace trace;
  const double mu = 1.0;
  for (int step = 0; step < 12; ++step)
    update_node(g, inst.f, cache, 1, mu, opt, step, &trace);
  int checked = 0;
  for (const auto& rec : trace.nodes) {
    if (rec.lambda > 0.25 || rec.lambda < 1e-5) continue;
    EXPECT_DOUBLE_EQ(rec.step_t, 1.0);
    EXPECT_LE(rec.lambda_post, 2.0 * rec.lambda * rec.lambda);
    // Full-step descent bound for self-concordant objectives.
    const double omega = rec.lambda - std::log1p(rec.lambda);
    EXPECT_LE(rec.loss_after, rec.loss_before - omega);
    ++checked;
  }
  EXPECT_GE(checked, 1);
}

TEST(UpdateNode, QuadraticContractionScaledGateAtSmallMu) {
  // For mu < 1 the barrier term scales the self-concordance constant; the
  // rigorous guarantees hold for the scaled decrement lambda / sqrt(mu):
  // gate at 1/4, contraction bound 2 lambda^2 / sqrt(mu), and the descent
  // mu * omega(lambda / sqrt(mu)).
  Rng rng(77);
  std::vector<int> dims{3, 2, 3};
  auto inst = random_instance(dims, {2, 2}, {2, 2}, rng, true);
  TensorTrain g = inst.g;
  EnvironmentCache cache(g, inst.f);
  FitOptions opt;
  opt.collect_node_stats = true;
  FitTrace trace;
  const double mu = 1e-2;
  for (int step = 0; step < 12; ++step)
    update_node(g, inst.f, cache, 1, mu, opt, step, &trace);
  int checked = 0;
  const double sqrt_mu = std::sqrt(mu);
  for (const auto& rec : trace.nodes) {
    const double lam_scaled = rec.lambda / sqrt_mu;
    if (lam_scaled > 0.25 || rec.lambda < 1e-5) continue;
    EXPECT_DOUBLE_EQ(rec.step_t, 1.0);
    EXPECT_LE(rec.lambda_post, 2.0 * rec.lambda * rec.lambda / sqrt_mu);
    const double omega = lam_scaled - std::log1p(lam_scaled);
    EXPECT_LE(rec.loss_after, rec.loss_before - mu * omega);
    ++checked;
  }
  EXPECT_GE(checked, 1);
}

TEST(HessianStructure, CrossSliceBlocksVanish) {
  Rng rng(78);
  std::vector<int> dims{2, 3, 2};
  auto inst = random_instance(dims, {2, 2}, {2, 2}, rng);
  const int k = 1;
  // Cross-slice mixed partials vanish identically (the quadratic couples
  // slices only through shared environments and the barrier is separable),
  // so the stencil has no truncation error; h only controls rounding.
  const double mu = 1e-2, h = 5e-3;
  TtCore& gk = inst.g.core(k);
  auto loss = [&]() { return direct_total_loss(inst.g, inst.f, k, mu); };
  // Four-point cross second difference between entries in different slices.
  for (int trial = 0; trial < 6; ++trial) {
    std::uniform_int_distribution<int> slice_dist(0, 2), rank_dist(0, 1);
    const int i1 = slice_dist(rng);
    int i2 = slice_dist(rng);
    while (i2 == i1) i2 = slice_dist(rng);
    const int a1 = rank_dist(rng), b1 = rank_dist(rng);
    const int a2 = rank_dist(rng), b2 = rank_dist(rng);
    double& x = gk(a1, i1, b1);
    double& y = gk(a2, i2, b2);
    const double x0 = x, y0 = y;
    x = x0 + h; y = y0 + h; const double pp = loss();
    x = x0 + h; y = y0 - h; const double pm = loss();
    x = x0 - h; y = y0 + h; const double mp = loss();
    x = x0 - h; y = y0 - h; const double mm = loss();
    x = x0; y = y0;
    const double cross = (pp - pm - mp + mm) / (4.0 * h * h);
    EXPECT_LE(std::abs(cross), 1e-8);
  }
}

TEST(AdaptiveMu, StationaryFloorsAtMuMin) {
  TtCore gk = TtCore::filled(1, 2, 1, 1.0);
  TtCore grad(1, 2, 1);  // zero
  EXPECT_DOUBLE_EQ(adaptive_mu(gk, grad, 1e-3, 0.2, 1e-12), 1e-12);
}

TEST(AdaptiveMu, UnitArithmetic) {
  TtCore gk = TtCore::filled(1, 3, 1, 1.0);
  TtCore grad = TtCore::filled(1, 3, 1, -1.0);  // |grad| = 1
  EXPECT_DOUBLE_EQ(adaptive_mu(gk, grad, 1.0, 0.2, 1e-12), 0.2);
}

TEST(AdaptiveMu, MonotoneNonIncreasing) {
  Rng rng(79);
  double mu = 1e-2;
  for (int it = 0; it < 20; ++it) {
    TtCore gk = TtCore::random_uniform(2, 2, 2, 0.1, 1.0, rng);
    TtCore grad = TtCore::random_uniform(2, 2, 2, -1.0, 1.0, rng);
    const double next = adaptive_mu(gk, grad, mu, 0.2, 1e-12);
    EXPECT_LE(next, mu);
    EXPECT_GE(next, 1e-12);
    mu = next;
  }
}

TEST(Multiplicative, FixedPointWhenExact) {
  Rng rng(80);
  std::vector<int> dims{2, 2, 2};
  auto g = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, 0.3, 1.0, rng);
  NonNegTensorTrain g0{g};
  auto out = multiplicative_update_run(g, g0, 3, 1e-9);
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 2; ++i)
      EXPECT_LE((out.core(k).slice(i) - g.core(k).slice(i)).cwiseAbs().maxCoeff(),
                1e-12);
}

TEST(Multiplicative, OutputStaysPositive) {
  // Mildly signed target (like a finite-sample stage-one output): the
  // update map keeps every core entry strictly positive.
  Rng rng(81);
  std::vector<int> dims{2, 3, 2};
  auto f = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, -0.05, 1.0, rng);
  auto g0 = NonNegTensorTrain::random_uniform(dims, std::vector<int>{2, 2}, 0.2, 1.0, rng);
  auto out = multiplicative_update_run(f, g0, 10, 1e-9);
  EXPECT_NO_THROW(out.validate());
}

TEST(Multiplicative, CollapseOnHostileTargetIsReported) {
  // A strongly negative target drives the clamped numerator to the floor
  // everywhere; the cores shrink geometrically until the run reports a
  // numerical failure rather than emitting non-finite cores.
  Rng rng(811);
  std::vector<int> dims{2, 3, 2};
  auto pos = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, 0.2, 1.0, rng);
  auto f = pos.scaled(-1.0);  // entrywise negative tensor
  auto g0 = NonNegTensorTrain::random_uniform(dims, std::vector<int>{2, 2}, 0.2, 1.0, rng);
  EXPECT_THROW(multiplicative_update_run(f, g0, 100000, 1e-9), NumericalError);
}

TEST(Multiplicative, LossNonIncreasingOnPositiveTarget) {
  Rng rng(82);
  std::vector<int> dims{2, 2, 2, 2};
  auto target = NonNegTensorTrain::random_uniform(dims, std::vector<int>{2, 2, 2},
                                                  0.2, 1.0, rng);
  auto g0 = NonNegTensorTrain::random_uniform(dims, std::vector<int>{2, 2, 2},
                                              0.3, 1.0, rng);
  FitTrace trace;
  multiplicative_update_run(target.tt(), g0, 50, 1e-9, &trace);
  ASSERT_EQ(trace.sweeps.size(), 50u);
  for (std::size_t i = 1; i < trace.sweeps.size(); ++i)
    EXPECT_LE(trace.sweeps[i].rel_sq_frob,
              trace.sweeps[i - 1].rel_sq_frob + 1e-12);
}

TEST(Rescale, BalancedInputUnchanged) {
  Rng rng(83);
  std::vector<int> dims{2, 2};
  auto g = TensorTrain::random_uniform(dims, std::vector<int>{2}, 0.3, 1.0, rng);
  const double n0 = std::sqrt(g.core(0).squared_norm());
  const double n1 = std::sqrt(g.core(1).squared_norm());
  g.core(0).scale(1.0 / n0);
  g.core(1).scale(1.0 / n1);
  auto out = rescale_cores(g);
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      EXPECT_LE((out.core(k).slice(i) - g.core(k).slice(i)).cwiseAbs().maxCoeff(),
                1e-14);
}

TEST(Rescale, EqualizesNormsAndPreservesTensor) {
  Rng rng(84);
  std::vector<int> dims{2, 3};
  auto g = TensorTrain::random_uniform(dims, std::vector<int>{2}, 0.5, 1.0, rng);
  g.core(0).scale(10.0 / std::sqrt(g.core(0).squared_norm()));
  g.core(1).scale(0.1 / std::sqrt(g.core(1).squared_norm()));
  auto out = rescale_cores(g);
  const double m0 = std::sqrt(out.core(0).squared_norm());
  const double m1 = std::sqrt(out.core(1).squared_norm());
  EXPECT_NEAR(m0, 1.0, 1e-12);
  EXPECT_NEAR(m1, 1.0, 1e-12);
  nttc::testing::for_each_index(dims, [&](const MultiIndex& idx) {
    EXPECT_NEAR(out.eval(idx), g.eval(idx), 1e-13 * (1.0 + std::abs(g.eval(idx))));
  });
}

TEST(Rescale, LogFactorsSumToZero) {
  Rng rng(85);
  std::vector<int> dims{2, 2, 3, 2};
  auto g = TensorTrain::random_uniform(dims, std::vector<int>{2, 3, 2}, 0.2, 2.0, rng);
  auto out = rescale_cores(g);
  double logsum = 0.0;
  for (int k = 0; k < 4; ++k)
    logsum += 0.5 * (std::log(out.core(k).squared_norm()) -
                     std::log(g.core(k).squared_norm()));
  EXPECT_NEAR(logsum, 0.0, 1e-11);
}

TEST(Rescale, ZeroNormCoreRejected) {
  TensorTrain g(std::vector<TtCore>{TtCore(1, 2, 1), TtCore(1, 2, 1)});
  EXPECT_THROW(rescale_cores(g), DegenerateInputError);
}

TEST(WarmInit, CoarseScaleMatchOnSeparableTarget) {
  Rng rng(86);
  std::vector<int> dims{3, 3, 3};
  auto f = NonNegTensorTrain::random_uniform(dims, std::vector<int>{1, 1}, 0.3,
                                             1.0, rng);
  auto g = warm_init(f.tt(), std::vector<int>{1, 1}, rng, 20);
  const double rel = loss_l0(g.tt(), f.tt()) / tt_inner(f.tt(), f.tt());
  EXPECT_LE(rel, 0.5);
}

TEST(WarmInit, AlwaysStrictlyPositive) {
  Rng rng(87);
  std::vector<int> dims{2, 4, 2};
  auto f = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, -1.0, 1.0, rng);
  auto g = warm_init(f, std::vector<int>{3, 3}, rng, 5);
  EXPECT_NO_THROW(g.validate());
}

TEST(WarmInit, DeterministicGivenSeed) {
  Rng rng(88);
  std::vector<int> dims{2, 3, 2};
  auto f = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, 0.1, 1.0, rng);
  Rng s1(123), s2(123);
  auto a = warm_init(f, std::vector<int>{2, 2}, s1, 8);
  auto b = warm_init(f, std::vector<int>{2, 2}, s2, 8);
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < dims[k]; ++i)
      EXPECT_EQ(a.core(k).slice(i), b.core(k).slice(i));
}

TEST(FitRun, ExactNttRecoverySmall) {
  Rng rng(89);
  std::vector<int> dims{3, 3, 3, 3}, ranks{2, 2, 2};
  auto g_star = NonNegTensorTrain::random_uniform(dims, ranks, 0.5, 1.5, rng);
  TensorTrain f = frob_normalized(g_star.tt());

  FitOptions opt;
  opt.sweeps = 120;
  opt.solver = NewtonSolver::kDirect;
  opt.ranks = ranks;
  opt.stop_below_rel_loss = 1e-13;
  auto [g, trace] = ntt_fit_run(f, opt, AdaptiveSchedule{0.2}, std::nullopt, rng);
  ASSERT_FALSE(trace.sweeps.empty());
  EXPECT_LE(trace.sweeps.back().rel_sq_frob, 1e-12);
  EXPECT_NO_THROW(g.validate());
}

TEST(FitRun, ZeroSweepsReturnsWarmInitUnchanged) {
  Rng rng(90);
  std::vector<int> dims{2, 2, 2};
  auto f = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, 0.2, 1.0, rng);
  FitOptions opt;
  opt.sweeps = 0;
  opt.ranks = {2, 2};
  Rng fit_rng(7);
  auto [g, trace] = ntt_fit_run(f, opt, AdaptiveSchedule{}, std::nullopt, fit_rng);
  EXPECT_TRUE(trace.sweeps.empty());
  Rng ref_rng(7);
  auto expected = warm_init(f, std::vector<int>{2, 2}, ref_rng, opt.warm_init_iters);
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 2; ++i)
      EXPECT_EQ(g.core(k).slice(i), expected.core(k).slice(i));
}

TEST(FitRun, FixedScheduleHalvesMu) {
  Rng rng(91);
  std::vector<int> dims{2, 2, 2};
  auto target = NonNegTensorTrain::random_uniform(dims, std::vector<int>{2, 2},
                                                  0.3, 1.0, rng);
  TensorTrain f = target.tt();
  FitOptions opt;
  opt.sweeps = 45;
  opt.solver = NewtonSolver::kDirect;
  opt.ranks = {2, 2};
  auto [g, trace] = ntt_fit_run(f, opt, FixedSchedule{}, std::nullopt, rng);
  ASSERT_EQ(trace.sweeps.size(), 45u);
  for (int i = 0; i < 45; ++i) {
    const double expected = std::max(1e-3 * std::pow(0.5, i), 1e-12);
    EXPECT_NEAR(trace.sweeps[i].mean_mu, expected, 1e-15 + 1e-9 * expected);
  }
}

TEST(FitRun, AdaptiveMuTraceNonIncreasing) {
  Rng rng(92);
  std::vector<int> dims{2, 3, 2};
  auto f = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, 0.1, 1.0, rng);
  FitOptions opt;
  opt.sweeps = 25;
  opt.solver = NewtonSolver::kDirect;
  opt.ranks = {2, 2};
  auto [g, trace] = ntt_fit_run(f, opt, AdaptiveSchedule{0.2}, std::nullopt, rng);
  for (std::size_t i = 1; i < trace.sweeps.size(); ++i)
    EXPECT_LE(trace.sweeps[i].mean_mu, trace.sweeps[i - 1].mean_mu * (1 + 1e-12));
}

TEST(FitRun, SolversReachSameQualityOnSmallProblem) {
  Rng rng(93);
  std::vector<int> dims{2, 3, 2, 2};
  auto target = NonNegTensorTrain::random_uniform(dims, std::vector<int>{2, 2, 2},
                                                  0.4, 1.2, rng);
  TensorTrain f = frob_normalized(target.tt());
  for (auto solver : {NewtonSolver::kDirect, NewtonSolver::kCg, NewtonSolver::kPcg}) {
    FitOptions opt;
    opt.sweeps = 80;
    opt.solver = solver;
    opt.ranks = {2, 2, 2};
    opt.stop_below_rel_loss = 1e-11;
    Rng fit_rng(17);
    auto [g, trace] = ntt_fit_run(f, opt, AdaptiveSchedule{0.2}, std::nullopt, fit_rng);
    EXPECT_LE(trace.sweeps.back().rel_sq_frob, 1e-10)
        << "solver " << static_cast<int>(solver);
  }
}

TEST(FitRun, PositivityHeldAfterEveryRecordedUpdate) {
  Rng rng(94);
  std::vector<int> dims{2, 2, 2};
  auto f = TensorTrain::random_uniform(dims, std::vector<int>{2, 2}, -0.2, 1.0, rng);
  FitOptions opt;
  opt.sweeps = 10;
  opt.solver = NewtonSolver::kDirect;
  opt.ranks = {2, 2};
  opt.collect_node_stats = true;
  auto [g, trace] = ntt_fit_run(f, opt, AdaptiveSchedule{0.2}, std::nullopt, rng);
  ASSERT_FALSE(trace.nodes.empty());
  for (const auto& rec : trace.nodes) EXPECT_GT(rec.min_core_entry, 0.0);
}

}  // namespace
