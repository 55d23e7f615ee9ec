#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nttc/common.hpp"
#include "nttc/stage_one.hpp"
#include "nttc/tensor_train.hpp"

namespace nttc {

/// Uniform grid on [lower, upper] with both endpoints included.
struct GridSpec {
  double lower = -2.0;
  double upper = 2.0;
  int points = 50;

  GridSpec() = default;
  GridSpec(double lo, double hi, int n) : lower(lo), upper(hi), points(n) {
    if (!(lower < upper)) throw std::invalid_argument("grid: lower < upper required");
    if (points < 2) throw std::invalid_argument("grid: need at least 2 points");
  }

  double point(int i) const {
    return lower + (upper - lower) * static_cast<double>(i) /
                       static_cast<double>(points - 1);
  }
};

/// log p(z) = -gamma/2 sum (z_i - z_{i+1})^2 - lambda/2 sum (1 - z_i^2)^2
struct GinzburgLandau {
  double gamma = 0.16;
  double lambda = 0.16;
  GridSpec grid{-2.0, 2.0, 50};
  int d = 30;
};

/// log p(z) = -beta sum |z_i - z_{i+1}|
struct GibbsKernel {
  double beta = 0.3;
  GridSpec grid{-1.0, 1.0, 50};
  int d = 30;
};

/// p(z) = 1 / (1 + sum z_i^2)
struct HeavyTail {
  GridSpec grid{0.0, 2.0, 50};
  int d = 30;
};

/// log p(x) = beta * sum over cyclic neighbor pairs of x_k x_k', x in {-1,+1}
struct PeriodicIsing {
  double beta = 0.5;
  int d = 30;
};

using ModelSpec = std::variant<GinzburgLandau, GibbsKernel, HeavyTail, PeriodicIsing>;

inline int model_dim(const ModelSpec& spec) {
  return std::visit([](const auto& m) { return m.d; }, spec);
}

inline std::vector<int> model_dims(const ModelSpec& spec) {
  if (const auto* ising = std::get_if<PeriodicIsing>(&spec))
    return std::vector<int>(ising->d, 2);
  const int n = std::visit(
      [](const auto& m) {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, PeriodicIsing>)
          return 2;
        else
          return m.grid.points;
      },
      spec);
  return std::vector<int>(model_dim(spec), n);
}

/// log of the unnormalized entry at a multi-index.
inline double model_log_entry(const ModelSpec& spec,
                              std::span<const std::int32_t> idx) {
  check_index(idx, model_dims(spec));
  if (const auto* gl = std::get_if<GinzburgLandau>(&spec)) {
    double pair = 0.0, well = 0.0;
    double z = gl->grid.point(idx[0]);
    well += (1.0 - z * z) * (1.0 - z * z);
    for (int k = 1; k < gl->d; ++k) {
      const double zn = gl->grid.point(idx[k]);
      pair += (z - zn) * (z - zn);
      well += (1.0 - zn * zn) * (1.0 - zn * zn);
      z = zn;
    }
    return -0.5 * gl->gamma * pair - 0.5 * gl->lambda * well;
  }
  if (const auto* gb = std::get_if<GibbsKernel>(&spec)) {
    double cost = 0.0;
    for (int k = 0; k + 1 < gb->d; ++k)
      cost += std::abs(gb->grid.point(idx[k]) - gb->grid.point(idx[k + 1]));
    return -gb->beta * cost;
  }
  if (const auto* ht = std::get_if<HeavyTail>(&spec)) {
    double s = 0.0;
    for (int k = 0; k < ht->d; ++k) {
      const double z = ht->grid.point(idx[k]);
      s += z * z;
    }
    return -std::log1p(s);
  }
  const auto& is = std::get<PeriodicIsing>(spec);
  auto spin = [](std::int32_t i) { return i == 0 ? -1.0 : 1.0; };
  double s = 0.0;
  for (int k = 0; k < is.d; ++k)
    s += spin(idx[k]) * spin(idx[(k + 1) % is.d]);
  return is.beta * s;
}

/// Entry oracle exp(model_log_entry); evaluation stays in log space until
/// the final exponentiation.
inline EntryOracle model_oracle(const ModelSpec& spec) {
  EntryOracle oracle;
  oracle.dims = model_dims(spec);
  oracle.eval = [spec](std::span<const std::int32_t> idx) {
    return std::exp(model_log_entry(spec, idx));
  };
  return oracle;
}

/// burn_in and thinning are measured in full sweeps (d single-site
/// proposals each), so the decorrelation per recorded sample does not
/// degrade as the dimension grows.
struct McmcOptions {
  std::int64_t burn_in = 10000;
  int thinning = 5;
};

namespace detail {

/// Log-density change when coordinate k moves to grid index cand; only the
/// terms touching coordinate k are evaluated.
inline double model_log_delta(const ModelSpec& spec, const MultiIndex& state,
                              int k, std::int32_t cand) {
  if (const auto* gl = std::get_if<GinzburgLandau>(&spec)) {
    const double zo = gl->grid.point(state[k]);
    const double zn = gl->grid.point(cand);
    double delta = -0.5 * gl->lambda *
                   ((1.0 - zn * zn) * (1.0 - zn * zn) -
                    (1.0 - zo * zo) * (1.0 - zo * zo));
    if (k > 0) {
      const double zl = gl->grid.point(state[k - 1]);
      delta += -0.5 * gl->gamma * ((zl - zn) * (zl - zn) - (zl - zo) * (zl - zo));
    }
    if (k + 1 < gl->d) {
      const double zr = gl->grid.point(state[k + 1]);
      delta += -0.5 * gl->gamma * ((zn - zr) * (zn - zr) - (zo - zr) * (zo - zr));
    }
    return delta;
  }
  if (const auto* gb = std::get_if<GibbsKernel>(&spec)) {
    const double zo = gb->grid.point(state[k]);
    const double zn = gb->grid.point(cand);
    double delta = 0.0;
    if (k > 0) {
      const double zl = gb->grid.point(state[k - 1]);
      delta += -gb->beta * (std::abs(zl - zn) - std::abs(zl - zo));
    }
    if (k + 1 < gb->d) {
      const double zr = gb->grid.point(state[k + 1]);
      delta += -gb->beta * (std::abs(zn - zr) - std::abs(zo - zr));
    }
    return delta;
  }
  if (const auto* ht = std::get_if<HeavyTail>(&spec)) {
    const double zo = ht->grid.point(state[k]);
    const double zn = ht->grid.point(cand);
    double s = 0.0;
    for (int j = 0; j < ht->d; ++j) {
      const double z = ht->grid.point(state[j]);
      s += z * z;
    }
    return -std::log1p(s - zo * zo + zn * zn) + std::log1p(s);
  }
  const auto& is = std::get<PeriodicIsing>(spec);
  auto spin = [](std::int32_t i) { return i == 0 ? -1.0 : 1.0; };
  const int left = (k + is.d - 1) % is.d;
  const int right = (k + 1) % is.d;
  const double neighbor = spin(state[left]) + spin(state[right]);
  return is.beta * (spin(cand) - spin(state[k])) * neighbor;
}

}  // namespace detail

/// Single-site Metropolis chain over the discrete index space: propose a
/// uniformly random coordinate and uniformly random new grid index, accept
/// with probability min(1, exp(delta log p)). Records every thinning-th
/// state after burn-in.
inline SampleSet mcmc_sample(const ModelSpec& spec, std::int64_t count,
                             const McmcOptions& opt, Rng& rng) {
  if (count < 1) throw std::invalid_argument("mcmc_sample: count >= 1");
  if (opt.thinning < 1) throw std::invalid_argument("mcmc_sample: thinning >= 1");
  auto dims = model_dims(spec);
  const int d = static_cast<int>(dims.size());

  MultiIndex state = random_index(dims, rng);
  std::uniform_int_distribution<int> coord(0, d - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SampleSet out(dims);
  out.reserve(count);
  const std::int64_t burn_steps = opt.burn_in * d;
  const std::int64_t thin_steps = static_cast<std::int64_t>(opt.thinning) * d;
  const std::int64_t total_steps = burn_steps + count * thin_steps;
  for (std::int64_t step = 0; step < total_steps; ++step) {
    const int k = coord(rng);
    std::uniform_int_distribution<int> val(0, dims[k] - 1);
    const auto cand = static_cast<std::int32_t>(val(rng));
    if (cand != state[k]) {
      const double delta = detail::model_log_delta(spec, state, k, cand);
      if (delta >= 0.0 || unit(rng) < std::exp(delta)) state[k] = cand;
    }
    if (step >= burn_steps && (step - burn_steps + 1) % thin_steps == 0)
      out.append_unchecked(state);
  }
  return out;
}

/// Negative average log-likelihood of the samples under a normalized model:
///   nll = log Z - (1/N) sum_j log P(y_j).
/// Exposes both the raw average log-probability and the negated value.
struct NllReport {
  double nll = 0.0;
  double avg_loglik = 0.0;  // (1/N) sum log P(y_j) - log Z
  double log_z = 0.0;
};

inline NllReport nll(const NonNegTensorTrain& model, const SampleSet& samples) {
  if (samples.count() < 1) throw std::invalid_argument("nll: empty sample set");
  if (samples.dims() != model.dims())
    throw std::invalid_argument("nll: sample index space mismatch");
  NllReport rep;
  rep.log_z = log_sum(model);
  double acc = 0.0;
  for (std::int64_t j = 0; j < samples.count(); ++j) {
    try {
      acc += log_eval(model, samples.sample(j));
    } catch (const NumericalError&) {
      throw std::domain_error("nll: model vanishes at sample " + std::to_string(j));
    }
  }
  rep.avg_loglik = acc / static_cast<double>(samples.count()) - rep.log_z;
  rep.nll = -rep.avg_loglik;
  return rep;
}

/// NLL against an entry oracle with a known log normalization constant.
inline NllReport nll(const std::function<double(std::span<const std::int32_t>)>&
                         log_entry,
                     double log_z, const SampleSet& samples) {
  if (samples.count() < 1) throw std::invalid_argument("nll: empty sample set");
  NllReport rep;
  rep.log_z = log_z;
  double acc = 0.0;
  for (std::int64_t j = 0; j < samples.count(); ++j)
    acc += log_entry(samples.sample(j));
  rep.avg_loglik = acc / static_cast<double>(samples.count()) - log_z;
  rep.nll = -rep.avg_loglik;
  return rep;
}

/// Exact log normalization constant of the periodic Ising chain via its
/// 2x2 transfer-matrix eigenvalues: Z = (2 cosh b)^d + (2 sinh b)^d.
inline double ising_log_partition(const PeriodicIsing& is) {
  const double lc = std::log(2.0 * std::cosh(is.beta));
  if (is.beta == 0.0) return is.d * lc;
  const double ls = std::log(2.0 * std::abs(std::sinh(is.beta)));
  const double sign = (is.beta > 0.0 || is.d % 2 == 0) ? 1.0 : -1.0;
  return is.d * lc + std::log1p(sign * std::exp(is.d * (ls - lc)));
}

}  // namespace nttc
