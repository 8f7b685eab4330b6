#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace brokenray {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace linalg {

// Orthonormal basis (columns) of the column span of `m`, rank decided relative to the
// largest singular value.
inline Mat column_span(const Mat& m, double rel_tol = 1e-10) {
  if (m.cols() == 0 || m.rows() == 0) return Mat(m.rows(), 0);
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeFullU);
  const auto& s = svd.singularValues();
  const double top = s.size() > 0 ? s(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * std::max(1.0, top)) ++rank;
  return svd.matrixU().leftCols(rank);
}

// Orthonormal basis of {v : m v = 0}.
inline Mat null_space(const Mat& m, double abs_tol = 1e-10) {
  const Eigen::Index n = m.cols();
  if (m.rows() == 0) return Mat::Identity(n, n);
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > abs_tol) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

// Orthonormal basis of the orthogonal complement of the span of orthonormal columns q.
inline Mat complement(const Mat& q) {
  const Eigen::Index n = q.rows();
  if (q.cols() == 0) return Mat::Identity(n, n);
  return null_space(q.transpose());
}

// Angle between two nonzero vectors; stable near 0 and pi.
inline double angle_between(const Vec& a, const Vec& b) {
  const Vec ua = a.normalized();
  const Vec ub = b.normalized();
  return 2.0 * std::atan2((ua - ub).norm(), (ua + ub).norm());
}

inline double smallest_eigenvalue(const Mat& sym) {
  if (sym.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (sym + sym.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double trace_scale(const Mat& sym) {
  if (sym.rows() == 0) return 1.0;
  return std::max(1.0, sym.cwiseAbs().diagonal().sum() / static_cast<double>(sym.rows()));
}

}  // namespace linalg
}  // namespace brokenray
