#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "nttc/common.hpp"

namespace nttc {

/// Best rank-r factorization Z ~= left * right in Frobenius norm.
/// Singular values are absorbed into the left factor: left = U_r S_r,
/// right = V_r^T, which pins the convention for reproducible runs.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> truncated_svd(
    const Eigen::MatrixXd& z, int r) {
  if (r < 1 || r > std::min(z.rows(), z.cols()))
    throw std::invalid_argument("truncated_svd: rank " + std::to_string(r) +
                                " out of range for " + std::to_string(z.rows()) +
                                "x" + std::to_string(z.cols()) + " matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  Eigen::MatrixXd left = svd.matrixU().leftCols(r) * s.head(r).asDiagonal();
  Eigen::MatrixXd right = svd.matrixV().leftCols(r).transpose();
  return {std::move(left), std::move(right)};
}

/// The operator (M_lt kron M_gt) + diag(diag_term) acting on vectors that
/// flatten an (m_lt x m_gt) matrix row-major. The Kronecker product is never
/// materialized: (A kron B) vec(V) = vec(A V B^T).
struct KronPlusDiagOperator {
  Eigen::MatrixXd m_lt;     // symmetric PSD, a_lt x a_lt
  Eigen::MatrixXd m_gt;     // symmetric PSD, a_gt x a_gt
  Eigen::VectorXd diag;     // length a_lt * a_gt, entries >= 0

  Eigen::Index size() const { return diag.size(); }

  void apply(const Eigen::VectorXd& v, Eigen::VectorXd& out) const {
    if (v.size() != diag.size())
      throw std::invalid_argument("kron_plus_diag_apply: length mismatch");
    using RowMat =
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    out.resize(v.size());
    const Eigen::Index rows = m_lt.rows(), cols = m_gt.rows();
    Eigen::Map<const RowMat> vmat(v.data(), rows, cols);
    Eigen::Map<RowMat> omat(out.data(), rows, cols);
    omat.noalias() = m_lt * vmat * m_gt.transpose();
    out.array() += diag.array() * v.array();
  }

  /// Dense assembly, O((a_lt a_gt)^2); used by the direct Newton solver.
  Eigen::MatrixXd assemble() const {
    const Eigen::Index rows = m_lt.rows(), cols = m_gt.rows();
    Eigen::MatrixXd h(rows * cols, rows * cols);
    for (Eigen::Index p = 0; p < rows; ++p)
      for (Eigen::Index q = 0; q < cols; ++q)
        for (Eigen::Index p2 = 0; p2 < rows; ++p2)
          for (Eigen::Index q2 = 0; q2 < cols; ++q2)
            h(p * cols + q, p2 * cols + q2) = m_lt(p, p2) * m_gt(q, q2);
    h.diagonal() += diag;
    return h;
  }
};

inline Eigen::VectorXd kron_plus_diag_apply(const KronPlusDiagOperator& op,
                                            const Eigen::VectorXd& v) {
  Eigen::VectorXd out(v.size());
  op.apply(v, out);
  return out;
}

struct CgResult {
  Eigen::VectorXd x;
  int iters = 0;
  double residual = 0.0;  // final |op(x) - b| / |b|
};

/// Conjugate gradient for SPD operators, starting from x = 0. When a
/// preconditioner diagonal is given, runs PCG with M = diag(precond).
/// Terminates at |r| <= tol * |b| or after max_iter iterations.
template <typename Op>
CgResult cg_solve(const Op& op, const Eigen::VectorXd& b, double tol,
                  int max_iter,
                  const std::optional<Eigen::VectorXd>& precond = std::nullopt) {
  if (!(tol > 0.0)) throw std::invalid_argument("cg_solve: tol must be > 0");
  if (max_iter < 1) throw std::invalid_argument("cg_solve: max_iter must be >= 1");
  const Eigen::Index n = b.size();
  CgResult res;
  res.x = Eigen::VectorXd::Zero(n);
  const double bnorm = b.norm();
  if (bnorm == 0.0) return res;

  Eigen::VectorXd r = b;
  Eigen::VectorXd z =
      precond ? Eigen::VectorXd(r.array() / precond->array()) : r;
  Eigen::VectorXd p = z;
  Eigen::VectorXd ap(n);
  double rz = r.dot(z);
  double rnorm = r.norm();
  int it = 0;
  while (rnorm > tol * bnorm && it < max_iter) {
    op.apply(p, ap);
    const double pap = p.dot(ap);
    if (!std::isfinite(pap) || pap <= 0.0)
      throw NumericalError("cg_solve: operator not positive definite at iteration " +
                           std::to_string(it));
    const double alpha = rz / pap;
    res.x += alpha * p;
    r -= alpha * ap;
    if (precond)
      z = r.array() / precond->array();
    else
      z = r;
    const double rz_next = r.dot(z);
    if (!std::isfinite(rz_next))
      throw NumericalError("cg_solve: non-finite residual at iteration " +
                           std::to_string(it));
    p = z + (rz_next / rz) * p;
    rz = rz_next;
    rnorm = r.norm();
    ++it;
  }
  res.iters = it;
  res.residual = rnorm / bnorm;
  return res;
}

/// x = A^{-1} b for symmetric positive definite A via Cholesky.
inline Eigen::VectorXd direct_spd_solve(const Eigen::MatrixXd& a,
                                        const Eigen::VectorXd& b) {
  if (a.rows() != a.cols() || a.rows() != b.size())
    throw std::invalid_argument("direct_spd_solve: shape mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    // Locate the failing pivot with a plain Cholesky pass (error path only).
    Eigen::MatrixXd l = a;
    for (Eigen::Index j = 0; j < l.rows(); ++j) {
      double d = l(j, j);
      for (Eigen::Index t = 0; t < j; ++t) d -= l(j, t) * l(j, t);
      if (!(d > 0.0))
        throw NumericalError("direct_spd_solve: matrix not SPD, pivot " +
                             std::to_string(j) + " = " + std::to_string(d));
      l(j, j) = std::sqrt(d);
      for (Eigen::Index i = j + 1; i < l.rows(); ++i) {
        double v = l(i, j);
        for (Eigen::Index t = 0; t < j; ++t) v -= l(i, t) * l(j, t);
        l(i, j) = v / l(j, j);
      }
    }
    throw NumericalError("direct_spd_solve: Cholesky failed");
  }
  return llt.solve(b);
}

/// Minimizer X of |A X - B|_F. Rank-deficient A falls back to the
/// minimum-norm solution; singular values below 1e-12 * sigma_max are
/// treated as zero.
inline Eigen::MatrixXd least_squares_solve(const Eigen::MatrixXd& a,
                                           const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("least_squares_solve: row count mismatch");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(1e-12);
  return svd.solve(b);
}

}  // namespace nttc
