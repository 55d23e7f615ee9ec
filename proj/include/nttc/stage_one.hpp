#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nttc/common.hpp"
#include "nttc/linalg.hpp"
#include "nttc/tensor_train.hpp"

namespace nttc {

/// Queryable entry access to an (unnormalized) distribution tensor.
/// Queries must be deterministic: repeated calls at one index agree.
struct EntryOracle {
  std::vector<int> dims;
  std::function<double(std::span<const std::int32_t>)> eval;

  int dim_count() const { return static_cast<int>(dims.size()); }

  double query(std::span<const std::int32_t> idx) const {
    try {
      return eval(idx);
    } catch (const std::exception& e) {
      std::string s = "oracle failed at index (";
      for (std::size_t k = 0; k < idx.size(); ++k)
        s += (k ? "," : "") + std::to_string(idx[k]);
      throw NumericalError(s + "): " + e.what());
    }
  }
};

/// Nested index pivots: for bond b (between modes b and b+1), prefixes[b]
/// holds multi-indices over modes 0..b and suffixes[b] over modes b+1..d-1.
struct PivotSet {
  std::vector<std::vector<MultiIndex>> prefixes;  // d-1 lists
  std::vector<std::vector<MultiIndex>> suffixes;  // d-1 lists

  int bond_count() const { return static_cast<int>(prefixes.size()); }
};

/// Sketch functions for the density-estimation path. left(b, zeta, prefix)
/// evaluates the row-zeta left sketch at bond b on modes 0..b; right(b,
/// suffix, omega) the column-omega right sketch on modes b+1..d-1.
struct SketchFamily {
  std::vector<int> dims;
  std::vector<int> counts;  // sketch count per bond
  std::function<double(int, int, std::span<const std::int32_t>)> left;
  std::function<double(int, std::span<const std::int32_t>, int)> right;
};

/// Rank-structured sketches: each sketch value is a product over coordinates
/// of per-coordinate tables, so per-sample evaluation over all bonds costs
/// O(d) cumulative products. Tables are i.i.d. uniform(-1, 1).
struct ProductSketch {
  std::vector<int> dims;
  std::vector<int> counts;                    // per bond, <= table_width
  int table_width = 0;
  std::vector<Eigen::MatrixXd> left_tables;   // per mode: table_width x n_j
  std::vector<Eigen::MatrixXd> right_tables;  // per mode: n_j x table_width

  SketchFamily family() const {
    SketchFamily f;
    f.dims = dims;
    f.counts = counts;
    f.left = [this](int /*bond*/, int zeta, std::span<const std::int32_t> prefix) {
      double v = 1.0;
      for (std::size_t j = 0; j < prefix.size(); ++j)
        v *= left_tables[j](zeta, prefix[j]);
      return v;
    };
    f.right = [this](int bond, std::span<const std::int32_t> suffix, int omega) {
      double v = 1.0;
      for (std::size_t j = 0; j < suffix.size(); ++j)
        v *= right_tables[bond + 1 + j](suffix[j], omega);
      return v;
    };
    return f;
  }
};

inline ProductSketch make_product_sketch(std::span<const int> dims,
                                         std::span<const int> counts,
                                         Rng& rng) {
  if (counts.size() + 1 != dims.size())
    throw std::invalid_argument("need one sketch count per bond");
  ProductSketch s;
  s.dims.assign(dims.begin(), dims.end());
  s.counts.assign(counts.begin(), counts.end());
  s.table_width = *std::max_element(counts.begin(), counts.end());
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int n : dims) {
    Eigen::MatrixXd lt(s.table_width, n), rt(n, s.table_width);
    for (int r = 0; r < s.table_width; ++r)
      for (int c = 0; c < n; ++c) lt(r, c) = dist(rng);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < s.table_width; ++c) rt(r, c) = dist(rng);
    s.left_tables.push_back(std::move(lt));
    s.right_tables.push_back(std::move(rt));
  }
  return s;
}

/// Sketched linear system A_lt F_k A_gt = B for one core. Boundary nodes
/// carry a 1x1 identity on the missing side.
struct CoreLinearSystem {
  Eigen::MatrixXd a_lt;  // p_{k-1} x r_{k-1}
  Eigen::MatrixXd a_gt;  // r_k x q_k
  TtCore b;              // (p_{k-1}, n_k, q_k)
};

namespace detail {

inline MultiIndex concat_index(std::span<const std::int32_t> prefix, int mid,
                               std::span<const std::int32_t> suffix) {
  MultiIndex idx;
  idx.reserve(prefix.size() + 1 + suffix.size());
  idx.insert(idx.end(), prefix.begin(), prefix.end());
  idx.push_back(static_cast<std::int32_t>(mid));
  idx.insert(idx.end(), suffix.begin(), suffix.end());
  return idx;
}

inline MultiIndex concat_index(std::span<const std::int32_t> prefix,
                               std::span<const std::int32_t> suffix) {
  MultiIndex idx;
  idx.reserve(prefix.size() + suffix.size());
  idx.insert(idx.end(), prefix.begin(), prefix.end());
  idx.insert(idx.end(), suffix.begin(), suffix.end());
  return idx;
}

/// Greedy cross pivoting: repeatedly take the largest-magnitude entry of
/// the residual and eliminate its rank-1 cross. Returns the chosen row
/// indices; if the residual vanishes early, remaining rows are filled with
/// the first unused candidates so the requested count is always met.
inline std::vector<int> greedy_cross_rows(Eigen::MatrixXd r, int m) {
  if (m > r.rows())
    throw std::invalid_argument("greedy_cross_rows: fewer candidates than pivots");
  const double scale = r.cwiseAbs().maxCoeff();
  std::vector<char> used(r.rows(), 0);
  std::vector<int> rows;
  rows.reserve(m);
  for (int t = 0; t < m; ++t) {
    int bi = -1, bj = -1;
    double best = 0.0;
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      if (used[i]) continue;
      for (Eigen::Index j = 0; j < r.cols(); ++j) {
        const double v = std::abs(r(i, j));
        if (v > best) {
          best = v;
          bi = static_cast<int>(i);
          bj = static_cast<int>(j);
        }
      }
    }
    if (bi < 0 || best <= 1e-14 * scale) break;
    rows.push_back(bi);
    used[bi] = 1;
    const Eigen::VectorXd piv_col = r.col(bj) / r(bi, bj);
    const Eigen::RowVectorXd piv_row = r.row(bi);
    r.noalias() -= piv_col * piv_row;
  }
  for (int i = 0; i < r.rows() && static_cast<int>(rows.size()) < m; ++i)
    if (!used[i]) {
      rows.push_back(i);
      used[i] = 1;
    }
  return rows;
}

inline std::vector<int> greedy_cross_cols(const Eigen::MatrixXd& r, int m) {
  return greedy_cross_rows(r.transpose(), m);
}

/// Mode-size products capped to avoid overflow; used to bound pivot counts.
inline std::int64_t capped_space(std::span<const int> dims, int lo, int hi) {
  std::int64_t p = 1;
  for (int j = lo; j < hi; ++j) {
    p *= dims[j];
    if (p > (1 << 30)) return 1 << 30;
  }
  return p;
}

}  // namespace detail

/// Feasible target ranks: requested ranks clipped to the unfolding sizes.
inline std::vector<int> clip_ranks(std::span<const int> dims,
                                   std::span<const int> ranks) {
  const int d = static_cast<int>(dims.size());
  std::vector<int> r(ranks.begin(), ranks.end());
  for (int b = 0; b < d - 1; ++b) {
    const auto left = detail::capped_space(dims, 0, b + 1);
    const auto right = detail::capped_space(dims, b + 1, d);
    r[b] = static_cast<int>(std::min<std::int64_t>(r[b], std::min(left, right)));
    r[b] = std::max(r[b], 1);
  }
  return r;
}

/// Pivot counts for the cross path: oversampled target ranks clipped to the
/// index-space sizes and to nested-candidate availability.
inline std::vector<int> cross_pivot_counts(std::span<const int> dims,
                                           std::span<const int> ranks,
                                           int oversample) {
  if (oversample < 1) throw std::invalid_argument("oversample must be >= 1");
  const int d = static_cast<int>(dims.size());
  std::vector<int> rt(d - 1);
  for (int b = 0; b < d - 1; ++b) {
    const auto left = detail::capped_space(dims, 0, b + 1);
    const auto right = detail::capped_space(dims, b + 1, d);
    rt[b] = static_cast<int>(std::min<std::int64_t>(
        static_cast<std::int64_t>(oversample) * ranks[b], std::min(left, right)));
    rt[b] = std::max(rt[b], 1);
  }
  // Nested sweeps draw bond-b pivots from bond-(b-1) pivots extended by one
  // mode, so counts cannot grow faster than the mode sizes allow.
  for (int b = 1; b < d - 1; ++b)
    rt[b] = std::min<int>(rt[b], rt[b - 1] * dims[b]);
  for (int b = d - 3; b >= 0; --b)
    rt[b] = std::min<int>(rt[b], rt[b + 1] * dims[b + 1]);
  return rt;
}

/// B_k in the oracle (variational inference) path: direct queries at pivot
/// prefixes x full mode range x pivot suffixes.
inline TtCore build_Bk_vi(const EntryOracle& oracle, const PivotSet& pivots,
                          int k) {
  const int d = oracle.dim_count();
  const int n = oracle.dims[k];
  static const std::vector<MultiIndex> kEmpty{MultiIndex{}};
  const auto& pre = (k == 0) ? kEmpty : pivots.prefixes[k - 1];
  const auto& suf = (k == d - 1) ? kEmpty : pivots.suffixes[k];
  TtCore b(static_cast<int>(pre.size()), n, static_cast<int>(suf.size()));
  for (std::size_t z = 0; z < pre.size(); ++z)
    for (int i = 0; i < n; ++i)
      for (std::size_t w = 0; w < suf.size(); ++w)
        b(static_cast<int>(z), i, static_cast<int>(w)) =
            oracle.query(detail::concat_index(pre[z], i, suf[w]));
  return b;
}

/// Z_k in the oracle path: queries at bond-k prefix x suffix pivots.
inline Eigen::MatrixXd build_Zk_vi(const EntryOracle& oracle,
                                   const PivotSet& pivots, int bond) {
  const auto& pre = pivots.prefixes[bond];
  const auto& suf = pivots.suffixes[bond];
  Eigen::MatrixXd z(pre.size(), suf.size());
  for (std::size_t a = 0; a < pre.size(); ++a)
    for (std::size_t w = 0; w < suf.size(); ++w)
      z(a, w) = oracle.query(detail::concat_index(pre[a], suf[w]));
  return z;
}

/// Empirical estimate of B_k in the sample (density estimation) path.
inline TtCore estimate_Bk_de(const SampleSet& samples,
                             const SketchFamily& sketches, int k) {
  const std::int64_t n_samples = samples.count();
  if (n_samples < 1)
    throw std::invalid_argument("estimate_Bk_de: empty sample set");
  const int d = samples.dim_count();
  const int n = samples.dims()[k];
  const int p = (k == 0) ? 1 : sketches.counts[k - 1];
  const int q = (k == d - 1) ? 1 : sketches.counts[k];
  TtCore b(p, n, q);
  for (std::int64_t j = 0; j < n_samples; ++j) {
    auto y = samples.sample(j);
    auto prefix = y.subspan(0, k);
    auto suffix = y.subspan(k + 1);
    for (int z = 0; z < p; ++z) {
      const double lv = (k == 0) ? 1.0 : sketches.left(k - 1, z, prefix);
      for (int w = 0; w < q; ++w) {
        const double rv = (k == d - 1) ? 1.0 : sketches.right(k, suffix, w);
        b(z, y[k], w) += lv * rv;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(n_samples);
  for (int i = 0; i < n; ++i) b.slice(i) *= inv;
  return b;
}

/// Empirical estimate of Z_k in the sample path.
inline Eigen::MatrixXd estimate_Zk_de(const SampleSet& samples,
                                      const SketchFamily& sketches, int bond) {
  const std::int64_t n_samples = samples.count();
  if (n_samples < 1)
    throw std::invalid_argument("estimate_Zk_de: empty sample set");
  const int p = sketches.counts[bond];
  const int q = sketches.counts[bond];
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(p, q);
  for (std::int64_t j = 0; j < n_samples; ++j) {
    auto y = samples.sample(j);
    auto prefix = y.subspan(0, bond + 1);
    auto suffix = y.subspan(bond + 1);
    for (int a = 0; a < p; ++a) {
      const double lv = sketches.left(bond, a, prefix);
      for (int w = 0; w < q; ++w)
        z(a, w) += lv * sketches.right(bond, suffix, w);
    }
  }
  return z / static_cast<double>(n_samples);
}

/// Least-squares core solve: F = pinv(A_lt) B pinv(A_gt), applied as two
/// one-sided solves so the Kronecker system is never formed.
inline TtCore solve_core(const CoreLinearSystem& sys) {
  const int p = sys.b.left_rank(), n = sys.b.mode_size(), q = sys.b.right_rank();
  const int rl = static_cast<int>(sys.a_lt.cols());
  const int rr = static_cast<int>(sys.a_gt.rows());
  if (sys.a_lt.rows() != p || sys.a_gt.cols() != q)
    throw std::invalid_argument("solve_core: inconsistent system shapes");

  // Left solve on the row unfolding (p x n*q).
  Eigen::MatrixXd bu(p, static_cast<Eigen::Index>(n) * q);
  for (int i = 0; i < n; ++i) bu.middleCols(static_cast<Eigen::Index>(i) * q, q) = sys.b.slice(i);
  Eigen::MatrixXd x = least_squares_solve(sys.a_lt, bu);  // rl x n*q

  // Right solve on the column unfolding (rl*n x q).
  Eigen::MatrixXd xc(static_cast<Eigen::Index>(rl) * n, q);
  for (int a = 0; a < rl; ++a)
    for (int i = 0; i < n; ++i)
      xc.row(static_cast<Eigen::Index>(a) * n + i) =
          x.row(a).segment(static_cast<Eigen::Index>(i) * q, q);
  Eigen::MatrixXd f =
      least_squares_solve(sys.a_gt.transpose(), xc.transpose()).transpose();

  TtCore out(rl, n, rr);
  for (int a = 0; a < rl; ++a)
    for (int i = 0; i < n; ++i)
      out.slice(i).row(a) = f.row(static_cast<Eigen::Index>(a) * n + i);
  return out;
}

/// Greedy residual-maximizing cross sweeps with random initialization.
/// Forward sweeps rebuild prefix pivots left to right from one-mode
/// extensions of the previous bond's pivots; backward sweeps rebuild the
/// suffixes. Pivot sets stay nested by construction.
inline PivotSet select_pivots_cross(const EntryOracle& oracle,
                                    std::span<const int> pivot_counts,
                                    int sweeps, Rng& rng) {
  const int d = oracle.dim_count();
  const auto& dims = oracle.dims;
  if (static_cast<int>(pivot_counts.size()) != d - 1)
    throw std::invalid_argument("select_pivots_cross: need d-1 pivot counts");
  if (sweeps < 1) throw std::invalid_argument("select_pivots_cross: sweeps >= 1");

  PivotSet piv;
  piv.prefixes.resize(d - 1);
  piv.suffixes.resize(d - 1);

  // Random distinct initial pivots on every bond.
  auto draw_distinct = [&](int lo, int hi, int count) {
    std::set<MultiIndex> seen;
    std::vector<MultiIndex> out;
    std::vector<int> sub(dims.begin() + lo, dims.begin() + hi);
    while (static_cast<int>(out.size()) < count) {
      MultiIndex idx = random_index(sub, rng);
      if (seen.insert(idx).second) out.push_back(std::move(idx));
    }
    return out;
  };
  for (int b = 0; b < d - 1; ++b) {
    piv.prefixes[b] = draw_distinct(0, b + 1, pivot_counts[b]);
    piv.suffixes[b] = draw_distinct(b + 1, d, pivot_counts[b]);
  }

  for (int sweep = 0; sweep < sweeps; ++sweep) {
    // Forward: new prefixes at bond b from parent prefixes at bond b-1.
    for (int b = 0; b < d - 1; ++b) {
      static const std::vector<MultiIndex> kRoot{MultiIndex{}};
      const auto& parents = (b == 0) ? kRoot : piv.prefixes[b - 1];
      const int n = dims[b];
      std::vector<MultiIndex> cand;
      cand.reserve(parents.size() * n);
      for (const auto& par : parents)
        for (int i = 0; i < n; ++i) cand.push_back(detail::concat_index(par, i, {}));
      Eigen::MatrixXd c(cand.size(), piv.suffixes[b].size());
      for (std::size_t i = 0; i < cand.size(); ++i)
        for (std::size_t w = 0; w < piv.suffixes[b].size(); ++w)
          c(i, w) = oracle.query(detail::concat_index(cand[i], piv.suffixes[b][w]));
      auto rows = detail::greedy_cross_rows(c, pivot_counts[b]);
      std::vector<MultiIndex> chosen;
      chosen.reserve(rows.size());
      for (int r : rows) chosen.push_back(cand[r]);
      piv.prefixes[b] = std::move(chosen);
    }
    // Backward: new suffixes at bond b from child suffixes at bond b+1.
    for (int b = d - 2; b >= 0; --b) {
      static const std::vector<MultiIndex> kRoot{MultiIndex{}};
      const auto& children = (b == d - 2) ? kRoot : piv.suffixes[b + 1];
      const int n = dims[b + 1];
      std::vector<MultiIndex> cand;
      cand.reserve(children.size() * n);
      for (int i = 0; i < n; ++i)
        for (const auto& ch : children) cand.push_back(detail::concat_index({}, i, ch));
      Eigen::MatrixXd c(piv.prefixes[b].size(), cand.size());
      for (std::size_t a = 0; a < piv.prefixes[b].size(); ++a)
        for (std::size_t i = 0; i < cand.size(); ++i)
          c(a, i) = oracle.query(detail::concat_index(piv.prefixes[b][a], cand[i]));
      auto cols = detail::greedy_cross_cols(c, pivot_counts[b]);
      std::vector<MultiIndex> chosen;
      chosen.reserve(cols.size());
      for (int w : cols) chosen.push_back(cand[w]);
      piv.suffixes[b] = std::move(chosen);
    }
  }
  return piv;
}

namespace detail {

/// Shared tail of both stage-one paths: factor every Z_k, then solve each
/// sketched core equation.
inline TensorTrain assemble_from_systems(
    const std::vector<Eigen::MatrixXd>& z_mats, std::vector<TtCore> b_cores,
    std::span<const int> ranks) {
  const int d = static_cast<int>(b_cores.size());
  std::vector<Eigen::MatrixXd> a_left(d), a_right(d);  // per node
  for (int b = 0; b < d - 1; ++b) {
    auto [l, r] = truncated_svd(z_mats[b], ranks[b]);
    a_left[b + 1] = std::move(l);   // p_b x r_b, feeds node b+1
    a_right[b] = std::move(r);      // r_b x q_b, feeds node b
  }
  a_left[0] = Eigen::MatrixXd::Identity(1, 1);
  a_right[d - 1] = Eigen::MatrixXd::Identity(1, 1);

  std::vector<TtCore> cores;
  cores.reserve(d);
  for (int k = 0; k < d; ++k) {
    CoreLinearSystem sys{a_left[k], a_right[k], std::move(b_cores[k])};
    cores.push_back(solve_core(sys));
  }
  return TensorTrain(std::move(cores));
}

}  // namespace detail

struct CrossOptions {
  int oversample = 2;  // pivot count multiplier over the target rank
  int sweeps = 3;      // greedy pivot refinement sweeps
};

/// Stage one, oracle path: pivot selection, Z_k and B_k queries, truncated
/// SVD splits and core solves.
inline TensorTrain tt_cross_run(const EntryOracle& oracle,
                                std::span<const int> ranks,
                                const CrossOptions& options, Rng& rng) {
  const int d = oracle.dim_count();
  if (static_cast<int>(ranks.size()) != d - 1)
    throw std::invalid_argument("tt_cross_run: need d-1 ranks");
  auto rt = cross_pivot_counts(oracle.dims, ranks, options.oversample);
  auto r_eff = clip_ranks(oracle.dims, ranks);
  for (int b = 0; b < d - 1; ++b) r_eff[b] = std::min(r_eff[b], rt[b]);

  PivotSet pivots = select_pivots_cross(oracle, rt, options.sweeps, rng);
  std::vector<Eigen::MatrixXd> z_mats(d - 1);
  for (int b = 0; b < d - 1; ++b) z_mats[b] = build_Zk_vi(oracle, pivots, b);
  std::vector<TtCore> b_cores;
  b_cores.reserve(d);
  for (int k = 0; k < d; ++k) b_cores.push_back(build_Bk_vi(oracle, pivots, k));
  return detail::assemble_from_systems(z_mats, std::move(b_cores), r_eff);
}

/// Stage one, sample path, generic sketches: one pass per estimator.
inline TensorTrain tt_sketch_run(const SampleSet& samples,
                                 std::span<const int> ranks,
                                 const SketchFamily& sketches) {
  const int d = samples.dim_count();
  if (samples.count() < 1)
    throw std::invalid_argument("tt_sketch_run: empty sample set");
  auto r_eff = clip_ranks(samples.dims(), ranks);
  for (int b = 0; b < d - 1; ++b)
    r_eff[b] = std::min(r_eff[b], sketches.counts[b]);
  std::vector<Eigen::MatrixXd> z_mats(d - 1);
  for (int b = 0; b < d - 1; ++b) z_mats[b] = estimate_Zk_de(samples, sketches, b);
  std::vector<TtCore> b_cores;
  b_cores.reserve(d);
  for (int k = 0; k < d; ++k) b_cores.push_back(estimate_Bk_de(samples, sketches, k));
  return detail::assemble_from_systems(z_mats, std::move(b_cores), r_eff);
}

/// Stage one, sample path, product sketches: a single streaming pass
/// accumulates every Z_k and B_k via cumulative per-coordinate products,
/// with chunked matrix-product accumulation.
inline TensorTrain tt_sketch_run(const SampleSet& samples,
                                 std::span<const int> ranks,
                                 const ProductSketch& sketch) {
  const int d = samples.dim_count();
  const std::int64_t n_samples = samples.count();
  if (n_samples < 1)
    throw std::invalid_argument("tt_sketch_run: empty sample set");
  if (samples.dims() != sketch.dims)
    throw std::invalid_argument("tt_sketch_run: sketch dims mismatch");
  auto r_eff = clip_ranks(samples.dims(), ranks);
  for (int b = 0; b < d - 1; ++b)
    r_eff[b] = std::min(r_eff[b], sketch.counts[b]);

  const int w = sketch.table_width;
  const auto& dims = sketch.dims;
  std::vector<Eigen::MatrixXd> z_acc(d - 1);
  for (int b = 0; b < d - 1; ++b)
    z_acc[b] = Eigen::MatrixXd::Zero(sketch.counts[b], sketch.counts[b]);
  std::vector<TtCore> b_acc;
  b_acc.reserve(d);
  for (int k = 0; k < d; ++k)
    b_acc.emplace_back(k == 0 ? 1 : sketch.counts[k - 1], dims[k],
                       k == d - 1 ? 1 : sketch.counts[k]);

  constexpr std::int64_t kChunk = 256;
  // Per-chunk cumulative products: lcum[k] rows s = prod_{j<=k} table_j(.,y_j),
  // rcum[k] rows s = prod_{j>=k} table_j(y_j,.).
  std::vector<Eigen::MatrixXd> lcum(d), rcum(d);
  for (int k = 0; k < d; ++k) {
    lcum[k].resize(kChunk, w);
    rcum[k].resize(kChunk, w);
  }
  Eigen::MatrixXd lsub, rsub;
  std::vector<int> rows_of_value;

  for (std::int64_t start = 0; start < n_samples; start += kChunk) {
    const int m = static_cast<int>(std::min(kChunk, n_samples - start));
    for (int s = 0; s < m; ++s) {
      auto y = samples.sample(start + s);
      lcum[0].row(s) = sketch.left_tables[0].col(y[0]).transpose();
      for (int k = 1; k < d; ++k)
        lcum[k].row(s) = lcum[k - 1].row(s).cwiseProduct(
            sketch.left_tables[k].col(y[k]).transpose());
      rcum[d - 1].row(s) = sketch.right_tables[d - 1].row(y[d - 1]);
      for (int k = d - 2; k >= 0; --k)
        rcum[k].row(s) =
            rcum[k + 1].row(s).cwiseProduct(sketch.right_tables[k].row(y[k]));
    }
    for (int b = 0; b < d - 1; ++b) {
      const int cnt = sketch.counts[b];
      z_acc[b].noalias() += lcum[b].topRows(m).leftCols(cnt).transpose() *
                            rcum[b + 1].topRows(m).leftCols(cnt);
    }
    for (int k = 0; k < d; ++k) {
      const int p = b_acc[k].left_rank(), q = b_acc[k].right_rank();
      for (int v = 0; v < dims[k]; ++v) {
        rows_of_value.clear();
        for (int s = 0; s < m; ++s)
          if (samples.sample(start + s)[k] == v) rows_of_value.push_back(s);
        if (rows_of_value.empty()) continue;
        const int mv = static_cast<int>(rows_of_value.size());
        if (d == 1) {
          b_acc[k](0, v, 0) += static_cast<double>(mv);
        } else if (k == 0) {
          Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(q);
          for (int s : rows_of_value) acc += rcum[1].row(s).head(q);
          b_acc[k].slice(v).row(0) += acc;
        } else if (k == d - 1) {
          Eigen::VectorXd acc = Eigen::VectorXd::Zero(p);
          for (int s : rows_of_value) acc += lcum[k - 1].row(s).head(p).transpose();
          b_acc[k].slice(v).col(0) += acc;
        } else {
          lsub.resize(mv, p);
          rsub.resize(mv, q);
          for (int t = 0; t < mv; ++t) {
            lsub.row(t) = lcum[k - 1].row(rows_of_value[t]).head(p);
            rsub.row(t) = rcum[k + 1].row(rows_of_value[t]).head(q);
          }
          b_acc[k].slice(v).noalias() += lsub.transpose() * rsub;
        }
      }
    }
  }

  const double inv = 1.0 / static_cast<double>(n_samples);
  for (auto& z : z_acc) z *= inv;
  for (auto& b : b_acc) b.scale(inv);
  return detail::assemble_from_systems(z_acc, std::move(b_acc), r_eff);
}

}  // namespace nttc
