#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "nttc/common.hpp"

namespace nttc {

/// Dense 3-way array of shape (left_rank, mode_size, right_rank), stored as
/// one (left_rank x right_rank) matrix per mode value. The same class backs
/// tensor-train cores and the right-hand sides of sketched core equations.
class TtCore {
 public:
  TtCore() = default;
  TtCore(int left_rank, int mode_size, int right_rank)
      : left_(left_rank),
        right_(right_rank),
        slices_(static_cast<std::size_t>(mode_size),
                Eigen::MatrixXd::Zero(left_rank, right_rank)) {
    if (left_rank < 1 || mode_size < 1 || right_rank < 1)
      throw std::invalid_argument("core dimensions must be >= 1");
  }

  int left_rank() const { return left_; }
  int mode_size() const { return static_cast<int>(slices_.size()); }
  int right_rank() const { return right_; }
  std::int64_t size() const {
    return static_cast<std::int64_t>(left_) * mode_size() * right_;
  }

  const Eigen::MatrixXd& slice(int i) const { return slices_[i]; }
  Eigen::MatrixXd& slice(int i) { return slices_[i]; }

  double operator()(int a, int i, int b) const { return slices_[i](a, b); }
  double& operator()(int a, int i, int b) { return slices_[i](a, b); }

  /// Sum over the mode index.
  Eigen::MatrixXd mode_sum() const {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(left_, right_);
    for (const auto& m : slices_) s += m;
    return s;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& m : slices_) s += m.squaredNorm();
    return s;
  }

  double min_entry() const {
    double v = slices_.front()(0, 0);
    for (const auto& m : slices_) v = std::min(v, m.minCoeff());
    return v;
  }

  bool all_finite() const {
    for (const auto& m : slices_)
      if (!m.allFinite()) return false;
    return true;
  }

  void scale(double c) {
    for (auto& m : slices_) m *= c;
  }

  static TtCore filled(int left_rank, int mode_size, int right_rank,
                       double value) {
    TtCore c(left_rank, mode_size, right_rank);
    for (int i = 0; i < mode_size; ++i)
      c.slice(i).setConstant(value);
    return c;
  }

  static TtCore random_uniform(int left_rank, int mode_size, int right_rank,
                               double lo, double hi, Rng& rng) {
    TtCore c(left_rank, mode_size, right_rank);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (int i = 0; i < mode_size; ++i)
      for (int a = 0; a < left_rank; ++a)
        for (int b = 0; b < right_rank; ++b) c(a, i, b) = dist(rng);
    return c;
  }

 private:
  int left_ = 0, right_ = 0;
  std::vector<Eigen::MatrixXd> slices_;
};

/// Tensor train: a chain of 3-way cores with boundary ranks fixed to 1.
/// Core k has shape (r_{k-1}, n_k, r_k); the represented tensor entry at a
/// multi-index is the product of the selected core slices.
class TensorTrain {
 public:
  TensorTrain() = default;

  explicit TensorTrain(std::vector<TtCore> cores) : cores_(std::move(cores)) {
    if (cores_.empty()) throw std::invalid_argument("tensor train needs >= 1 core");
    if (cores_.front().left_rank() != 1 || cores_.back().right_rank() != 1)
      throw std::invalid_argument("boundary ranks must be 1");
    for (std::size_t k = 0; k + 1 < cores_.size(); ++k)
      if (cores_[k].right_rank() != cores_[k + 1].left_rank())
        throw std::invalid_argument(
            "rank chain mismatch between cores " + std::to_string(k) +
            " and " + std::to_string(k + 1));
  }

  int dim_count() const { return static_cast<int>(cores_.size()); }

  std::vector<int> dims() const {
    std::vector<int> n(cores_.size());
    for (std::size_t k = 0; k < cores_.size(); ++k) n[k] = cores_[k].mode_size();
    return n;
  }

  /// Internal ranks r_1..r_{d-1} (d-1 entries; empty for d = 1).
  std::vector<int> ranks() const {
    std::vector<int> r;
    for (std::size_t k = 0; k + 1 < cores_.size(); ++k)
      r.push_back(cores_[k].right_rank());
    return r;
  }

  int max_rank() const {
    int r = 1;
    for (const auto& c : cores_) r = std::max(r, c.right_rank());
    return r;
  }

  const TtCore& core(int k) const { return cores_[k]; }
  TtCore& core(int k) { return cores_[k]; }

  double eval(std::span<const std::int32_t> idx) const {
    auto n = dims();
    check_index(idx, n);
    Eigen::RowVectorXd v = cores_[0].slice(idx[0]).row(0);
    for (int k = 1; k < dim_count(); ++k) v = v * cores_[k].slice(idx[k]);
    return v(0);
  }

  /// Sum of all entries, via chained mode-summed matrix products.
  double sum() const {
    Eigen::RowVectorXd v = cores_[0].mode_sum().row(0);
    for (int k = 1; k < dim_count(); ++k) v = v * cores_[k].mode_sum();
    return v(0);
  }

  bool strictly_positive() const {
    for (const auto& c : cores_)
      if (c.min_entry() <= 0.0) return false;
    return true;
  }

  /// Multiplies the represented tensor by c (applied to the first core).
  TensorTrain scaled(double c) const {
    TensorTrain out = *this;
    out.cores_[0].scale(c);
    return out;
  }

  static TensorTrain random_uniform(std::span<const int> dims,
                                    std::span<const int> ranks, double lo,
                                    double hi, Rng& rng) {
    const int d = static_cast<int>(dims.size());
    if (static_cast<int>(ranks.size()) != d - 1)
      throw std::invalid_argument("need d-1 internal ranks");
    std::vector<TtCore> cores;
    cores.reserve(d);
    for (int k = 0; k < d; ++k) {
      const int rl = (k == 0) ? 1 : ranks[k - 1];
      const int rr = (k == d - 1) ? 1 : ranks[k];
      cores.push_back(TtCore::random_uniform(rl, dims[k], rr, lo, hi, rng));
    }
    return TensorTrain(std::move(cores));
  }

 private:
  std::vector<TtCore> cores_;
};

/// Inner product sum_i a(i) b(i) by transfer-matrix contraction.
inline double tt_inner(const TensorTrain& a, const TensorTrain& b) {
  if (a.dims() != b.dims())
    throw std::invalid_argument("tt_inner: mode sizes differ");
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(1, 1);
  for (int k = 0; k < a.dim_count(); ++k) {
    const TtCore& ca = a.core(k);
    const TtCore& cb = b.core(k);
    Eigen::MatrixXd next =
        Eigen::MatrixXd::Zero(ca.right_rank(), cb.right_rank());
    for (int i = 0; i < ca.mode_size(); ++i)
      next.noalias() += ca.slice(i).transpose() * w * cb.slice(i);
    w.swap(next);
  }
  return w(0, 0);
}

inline double frob_norm(const TensorTrain& tt) {
  return std::sqrt(std::max(0.0, tt_inner(tt, tt)));
}

/// Rescales to unit Frobenius norm. The scalar is distributed as a d-th
/// root over every core so per-core magnitudes stay balanced.
inline TensorTrain frob_normalized(const TensorTrain& tt) {
  const double nrm = frob_norm(tt);
  if (!(nrm > 0.0))
    throw DegenerateInputError("frob_normalized: zero tensor");
  const double c = std::pow(nrm, -1.0 / tt.dim_count());
  TensorTrain out = tt;
  for (int k = 0; k < out.dim_count(); ++k) out.core(k).scale(c);
  return out;
}

/// Tensor train with strictly positive cores; every represented entry is
/// positive, which makes normalized evaluation and sampling well-defined.
class NonNegTensorTrain {
 public:
  NonNegTensorTrain() = default;
  explicit NonNegTensorTrain(TensorTrain tt) : tt_(std::move(tt)) { validate(); }

  const TensorTrain& tt() const { return tt_; }
  int dim_count() const { return tt_.dim_count(); }
  std::vector<int> dims() const { return tt_.dims(); }
  std::vector<int> ranks() const { return tt_.ranks(); }
  const TtCore& core(int k) const { return tt_.core(k); }

  /// Mutable core access for fitting loops; callers are responsible for
  /// keeping entries strictly positive (validate() re-checks).
  TtCore& core(int k) { return tt_.core(k); }

  void validate() const {
    for (int k = 0; k < tt_.dim_count(); ++k)
      if (tt_.core(k).min_entry() <= 0.0)
        throw DegenerateInputError("non-negative tensor train: core " +
                                   std::to_string(k) +
                                   " has a non-positive entry");
  }

  static NonNegTensorTrain random_uniform(std::span<const int> dims,
                                          std::span<const int> ranks,
                                          double lo, double hi, Rng& rng) {
    return NonNegTensorTrain(
        TensorTrain::random_uniform(dims, ranks, lo, hi, rng));
  }

 private:
  TensorTrain tt_;
};

/// log of a strictly positive TT entry, with per-step renormalization so
/// long chains neither overflow nor underflow.
inline double log_eval(const NonNegTensorTrain& ntt,
                       std::span<const std::int32_t> idx) {
  const TensorTrain& tt = ntt.tt();
  auto n = tt.dims();
  check_index(idx, n);
  Eigen::RowVectorXd v = tt.core(0).slice(idx[0]).row(0);
  double log_scale = 0.0;
  for (int k = 1; k < tt.dim_count(); ++k) {
    const double m = v.cwiseAbs().maxCoeff();
    if (!(m > 0.0)) throw NumericalError("log_eval: vanished prefix product");
    v /= m;
    log_scale += std::log(m);
    v = v * tt.core(k).slice(idx[k]);
  }
  if (!(v(0) > 0.0)) throw NumericalError("log_eval: non-positive value");
  return log_scale + std::log(v(0));
}

/// log of the sum of all entries of a strictly positive TT.
inline double log_sum(const NonNegTensorTrain& ntt) {
  const TensorTrain& tt = ntt.tt();
  Eigen::RowVectorXd v = tt.core(0).mode_sum().row(0);
  double log_scale = 0.0;
  for (int k = 1; k < tt.dim_count(); ++k) {
    const double m = v.maxCoeff();
    if (!(m > 0.0)) throw DegenerateInputError("log_sum: non-positive mass");
    v /= m;
    log_scale += std::log(m);
    v = v * tt.core(k).mode_sum();
  }
  if (!(v(0) > 0.0)) throw DegenerateInputError("log_sum: non-positive mass");
  return log_scale + std::log(v(0));
}

/// Flat list of equally-shaped multi-indices.
class SampleSet {
 public:
  SampleSet() = default;
  explicit SampleSet(std::vector<int> dims) : dims_(std::move(dims)) {}

  const std::vector<int>& dims() const { return dims_; }
  int dim_count() const { return static_cast<int>(dims_.size()); }
  std::int64_t count() const {
    return dims_.empty() ? 0
                         : static_cast<std::int64_t>(flat_.size()) /
                               static_cast<std::int64_t>(dims_.size());
  }

  std::span<const std::int32_t> sample(std::int64_t j) const {
    return {flat_.data() + j * dim_count(), static_cast<std::size_t>(dim_count())};
  }

  void append(std::span<const std::int32_t> idx) {
    check_index(idx, dims_);
    flat_.insert(flat_.end(), idx.begin(), idx.end());
  }

  void append_unchecked(std::span<const std::int32_t> idx) {
    flat_.insert(flat_.end(), idx.begin(), idx.end());
  }

  void reserve(std::int64_t n) { flat_.reserve(n * dim_count()); }

  /// Concatenation keeps sample order: this first, then other.
  void append_all(const SampleSet& other) {
    if (other.dims_ != dims_)
      throw std::invalid_argument("sample sets have different index spaces");
    flat_.insert(flat_.end(), other.flat_.begin(), other.flat_.end());
  }

  const std::vector<std::int32_t>& flat() const { return flat_; }
  std::vector<std::int32_t>& flat() { return flat_; }

 private:
  std::vector<int> dims_;
  std::vector<std::int32_t> flat_;
};

/// Draws i.i.d. multi-indices from the distribution proportional to the NTT
/// entries by autoregressive conditional sampling. Right mode-sum vectors
/// are precomputed once per batch.
inline SampleSet ntt_sample(const NonNegTensorTrain& ntt, std::int64_t count,
                            Rng& rng) {
  if (count < 1) throw std::invalid_argument("ntt_sample: count must be >= 1");
  const TensorTrain& tt = ntt.tt();
  const int d = tt.dim_count();

  // right_mass[k] = sum over modes k..d-1 of the suffix chain, size r_{k-1}.
  std::vector<Eigen::VectorXd> right_mass(d + 1);
  right_mass[d] = Eigen::VectorXd::Ones(1);
  for (int k = d - 1; k >= 0; --k) {
    right_mass[k] = tt.core(k).mode_sum() * right_mass[k + 1];
    const double m = right_mass[k].maxCoeff();
    if (!(m > 0.0))
      throw DegenerateInputError("ntt_sample: non-positive normalization");
    right_mass[k] /= m;  // scale freely; conditionals are ratios
  }

  SampleSet out(tt.dims());
  out.reserve(count);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  MultiIndex idx(d);
  std::vector<double> w;
  for (std::int64_t s = 0; s < count; ++s) {
    Eigen::RowVectorXd prefix = Eigen::RowVectorXd::Ones(1);
    for (int k = 0; k < d; ++k) {
      const TtCore& c = tt.core(k);
      const int n = c.mode_size();
      w.resize(n);
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        w[i] = (prefix * c.slice(i) * right_mass[k + 1]).value();
        total += w[i];
      }
      if (!(total > 0.0))
        throw DegenerateInputError("ntt_sample: non-positive conditional mass");
      const double u = unit(rng) * total;
      double acc = 0.0;
      int pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += w[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
      idx[k] = pick;
      prefix = prefix * c.slice(pick);
      const double m = prefix.maxCoeff();
      prefix /= m;
    }
    out.append_unchecked(idx);
  }
  return out;
}

struct RelErrorReport {
  double mean_rel_error = 0.0;
  std::int64_t used = 0;
  std::int64_t zero_skipped = 0;
};

/// Mean relative error |oracle - tt| / |oracle| over randomly sampled
/// indices; indices where the oracle vanishes are skipped and counted.
inline RelErrorReport entrywise_relative_error(
    const std::function<double(std::span<const std::int32_t>)>& oracle,
    const TensorTrain& tt, std::int64_t num_points, Rng& rng) {
  if (num_points < 1)
    throw std::invalid_argument("entrywise_relative_error: need >= 1 point");
  auto dims = tt.dims();
  RelErrorReport rep;
  double acc = 0.0;
  for (std::int64_t s = 0; s < num_points; ++s) {
    MultiIndex idx = random_index(dims, rng);
    const double truth = oracle(idx);
    if (truth == 0.0) {
      ++rep.zero_skipped;
      continue;
    }
    acc += std::abs(truth - tt.eval(idx)) / std::abs(truth);
    ++rep.used;
  }
  if (rep.used == 0)
    throw DegenerateInputError(
        "entrywise_relative_error: oracle vanished at every sampled index");
  rep.mean_rel_error = acc / static_cast<double>(rep.used);
  return rep;
}

}  // namespace nttc
