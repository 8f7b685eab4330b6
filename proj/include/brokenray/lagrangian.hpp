#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "brokenray/broken_rays.hpp"

namespace brokenray {

// Graph of a fiber map w -> xi on X_d; A is its derivative in the coordinates of `basis`.
struct GraphLagrangian {
  ClusterId cluster = kFreeCluster;
  Mat basis;       // orthonormal columns spanning X_d
  Vec base_point;  // ambient
  Mat A;

  Mat ambient() const { return basis * A * basis.transpose(); }
};

// Straight segment w' -> w along C_a with both ends on collision planes:
//   xi~ = sqrt(sigma) (w - w') / |w - w'|,  xi = pi_c xi~,  xi' = pi_d xi~.
// Blocks in subspace coordinates: B = d xi / dw, B' = d xi' / dw', C = d xi' / dw,
// and d xi / dw' = -C^T.
struct ElementaryRelation {
  ClusterId c = kFreeCluster;
  ClusterId d = kFreeCluster;
  ClusterId a = kFreeCluster;
  Channel channel;
  Vec w;
  Vec w_prime;
  Vec xi_tilde;  // ambient
  Mat basis_c;
  Mat basis_d;
  Mat B;
  Mat B_prime;
  Mat C;

  Vec xi() const { return basis_c.transpose() * xi_tilde; }
  Vec xi_prime() const { return basis_d.transpose() * xi_tilde; }
  Mat C_prime() const { return -C.transpose(); }
};

inline ElementaryRelation elementary_relation(const ClusterLattice& lat, ClusterId c, const Channel& alpha, ClusterId a,
                                              ClusterId d, const Vec& w, const Vec& w_prime, double lambda) {
  const double sigma = lambda - alpha.energy;
  if (!(sigma > 0.0)) throw Error(ErrorKind::ChannelClosed, "lambda <= eps");
  if (!lat.sphere_within(c, a) || !lat.sphere_within(d, a))
    throw Error(ErrorKind::InvalidInput, "X_c and X_d must lie in X_a");
  if (!lat.subspace(c).contains(w, tol::membership) || !lat.subspace(d).contains(w_prime, tol::membership))
    throw Error(ErrorKind::InvalidInput, "evaluation points off their planes");
  const Vec r = w - w_prime;
  const double len = r.norm();
  if (!(len > 1e-12 * std::max({1.0, w.norm(), w_prime.norm()})))
    throw Error(ErrorKind::DegenerateSegment, "w = w'");
  const Vec u = r / len;
  const Mat hess = std::sqrt(sigma) / len * (Mat::Identity(r.size(), r.size()) - u * u.transpose());

  ElementaryRelation rel;
  rel.c = c;
  rel.d = d;
  rel.a = a;
  rel.channel = alpha;
  rel.w = w;
  rel.w_prime = w_prime;
  rel.xi_tilde = std::sqrt(sigma) * u;
  rel.basis_c = lat.subspace(c).basis();
  rel.basis_d = lat.subspace(d).basis();
  rel.B = rel.basis_c.transpose() * hess * rel.basis_c;
  rel.B_prime = -(rel.basis_d.transpose() * hess * rel.basis_d);
  rel.C = rel.basis_d.transpose() * hess * rel.basis_c;
  return rel;
}

inline GraphLagrangian plane_wave(const ClusterLattice& lat, ClusterId d, const Vec& base_point) {
  const Mat& q = lat.subspace(d).basis();
  return {d, q, base_point, Mat::Zero(q.cols(), q.cols())};
}

// Lagrangian of the radial set over w: sqrt(lambda - energy) / |w|^3 (|w|^2 Id - w w^T).
inline GraphLagrangian radial_lagrangian(const Vec& w, double lambda, double energy) {
  if (!(lambda > energy)) throw Error(ErrorKind::ChannelClosed, "lambda <= energy");
  const double r = w.norm();
  if (!(r > 0.0)) throw Error(ErrorKind::DegenerateBasePoint, "w = 0");
  const Eigen::Index n = w.size();
  GraphLagrangian g;
  g.basis = Mat::Identity(n, n);
  g.base_point = w;
  g.A = std::sqrt(lambda - energy) / (r * r * r) * (r * r * Mat::Identity(n, n) - w * w.transpose());
  return g;
}

struct CompositionCertificate {
  int position = 0;            // 1-based index of the relation in the chain
  double transversality = 0.0; // smallest eigenvalue of A' - B'
  double min_eigenvalue = 0.0; // of the composed A
  double symmetry_residual = 0.0;
  double scale = 1.0;
  bool psd = false;
  bool pd = false;
  bool pd_expected = false;    // c != a, A' definite, w' off X_c
};

namespace detail {

// Symmetric square root of a PSD matrix; empty when it has a clearly negative eigenvalue.
inline std::optional<Mat> psd_sqrt(const Mat& m) {
  if (m.rows() == 0) return Mat(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  const Vec ev = es.eigenvalues();
  if (ev(0) < -tol::definiteness * linalg::trace_scale(m)) return std::nullopt;
  return Mat(es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose());
}

}  // namespace detail

// B - C^T (A' - B')^{-1} C as R_cc^T R_cc from a QR of the stacked square roots of
// [[B, C^T], [C, -B']] and A'; PSD by construction. Empty if either block is indefinite.
inline Mat schur_from_square_roots(const ElementaryRelation& rel, const Mat& seed) {
  const auto nc = rel.B.rows();
  const auto nd = rel.B_prime.rows();
  if (nc == 0) return Mat(0, 0);
  Mat joint(nd + nc, nd + nc);
  joint << -rel.B_prime, rel.C, rel.C.transpose(), rel.B;
  const auto root = detail::psd_sqrt(joint);
  const auto seed_root = detail::psd_sqrt(seed);
  if (!root || !seed_root) return Mat(0, 0);
  Mat stacked = Mat::Zero(2 * nd + nc, nd + nc);
  stacked.topRows(nd + nc) = *root;
  stacked.bottomLeftCorner(nd, nd) = *seed_root;
  const Eigen::HouseholderQR<Mat> qr(stacked);
  const Mat r = qr.matrixQR().topRows(nd + nc).triangularView<Eigen::Upper>();
  const Mat r_cc = r.bottomRightCorner(nc, nc);
  return r_cc.transpose() * r_cc;
}

inline GraphLagrangian compose(const GraphLagrangian& incoming, const ElementaryRelation& rel,
                               CompositionCertificate* cert = nullptr) {
  if (incoming.A.rows() != rel.B_prime.rows())
    throw Error(ErrorKind::DimensionMismatch, "seed lives on a different plane than the relation's X_d");
  const Mat gap = incoming.A - rel.B_prime;
  const double scale = linalg::trace_scale(gap);
  const double eig = linalg::smallest_eigenvalue(gap);
  if (gap.rows() > 0 && eig < tol::definiteness * scale)
    throw Error(ErrorKind::TransversalityFailure, "eigmin(A' - B') = " + std::to_string(eig));
  Mat raw = schur_from_square_roots(rel, incoming.A);
  if (raw.size() == 0 && rel.B.rows() > 0) {
    raw = rel.B;
    if (gap.rows() > 0) raw -= rel.C.transpose() * gap.llt().solve(rel.C);
  }
  GraphLagrangian out{rel.c, rel.basis_c, rel.w, 0.5 * (raw + raw.transpose())};
  if (cert) {
    cert->transversality = gap.rows() > 0 ? eig : kInf;
    cert->symmetry_residual = (raw - raw.transpose()).cwiseAbs().maxCoeff();
    cert->scale = linalg::trace_scale(out.A);
    cert->min_eigenvalue = linalg::smallest_eigenvalue(out.A);
    cert->psd = cert->min_eigenvalue >= -tol::definiteness * cert->scale;
    cert->pd = cert->min_eigenvalue >= tol::definiteness * cert->scale;
    // A is a Schur complement of |H^{1/2}(v + v')|^2 + <A'v', v'>, which is definite once A' is and w' is off X_c.
    // Margins use the guard band so that a flagged expectation survives rounding.
    const bool seed_pd = incoming.A.rows() == 0 || linalg::smallest_eigenvalue(incoming.A) >=
                                                       tol::guard_band * linalg::trace_scale(incoming.A);
    const double off_c = (rel.w_prime - rel.basis_c * (rel.basis_c.transpose() * rel.w_prime)).norm();
    cert->pd_expected = rel.c != rel.a && seed_pd && off_c > tol::guard_band * std::max(1.0, rel.w_prime.norm());
  }
  return out;
}

struct ChainResult {
  GraphLagrangian lagrangian;
  std::vector<ElementaryRelation> relations;
  std::vector<CompositionCertificate> certificates;
};

// Fold the relations w_{j-1} -> w_j (j = 2..m) and w_m -> final_point along the last leg,
// starting from the plane wave on X_{c_1} unless a seed is given.
inline ChainResult compose_chain(const ClusterLattice& lat, const BreakString& s, const std::vector<Vec>& break_points,
                                 const Vec& final_point, double lambda,
                                 const std::optional<GraphLagrangian>& seed = std::nullopt) {
  const std::size_t m = s.breaks.size();
  if (break_points.size() != m) throw Error(ErrorKind::InvalidInput, "one break point per break");
  ChainResult out;
  if (m == 0) {
    if (!seed) throw Error(ErrorKind::InvalidInput, "an empty chain needs a seed");
    out.lagrangian = *seed;
    return out;
  }
  out.lagrangian = seed ? *seed : plane_wave(lat, s.breaks[0], break_points[0]);
  for (std::size_t j = 1; j <= m; ++j) {
    const bool last = j == m;
    const ClusterId c = last ? s.propagation[m] : s.breaks[j];
    const Vec& w = last ? final_point : break_points[j];
    ElementaryRelation rel =
        elementary_relation(lat, c, s.channels[j], s.propagation[j], s.breaks[j - 1], w, break_points[j - 1], lambda);
    CompositionCertificate cert;
    cert.position = static_cast<int>(j);
    try {
      out.lagrangian = compose(out.lagrangian, rel, &cert);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::TransversalityFailure)
        throw Error(ErrorKind::TransversalityFailure, "chain position " + std::to_string(j) + ": " + e.what());
      throw;
    }
    out.relations.push_back(std::move(rel));
    out.certificates.push_back(cert);
  }
  return out;
}

struct LagrangianCertificate {
  bool is_lagrangian = false;
  double max_form_residual = 0.0;
  int rank = 0;
};

// Columns of V are tangent vectors laid out as (dw, dxi) on X_c followed by (dw', dxi') on X_d;
// the form is omega_c - omega_d (dim_d = 0 gives the plain form on T*X_c).
inline LagrangianCertificate lagrangian_certificate(const Mat& V, int dim_c, int dim_d, double scale = 1.0) {
  const int total = 2 * (dim_c + dim_d);
  if (V.rows() != total) throw Error(ErrorKind::DimensionMismatch, "tangent vectors have the wrong length");
  LagrangianCertificate out;
  out.rank = static_cast<int>(linalg::column_span(V, 1e-10).cols());
  if (out.rank < V.cols()) throw Error(ErrorKind::RankDeficient, "spanning set has rank " + std::to_string(out.rank));
  auto form = [&](const Vec& x, const Vec& y) {
    const double wc = x.segment(dim_c, dim_c).dot(y.head(dim_c)) - y.segment(dim_c, dim_c).dot(x.head(dim_c));
    if (dim_d == 0) return wc;
    const int o = 2 * dim_c;
    const double wd = x.segment(o + dim_d, dim_d).dot(y.segment(o, dim_d)) -
                      y.segment(o + dim_d, dim_d).dot(x.segment(o, dim_d));
    return wc - wd;
  };
  for (Eigen::Index i = 0; i < V.cols(); ++i)
    for (Eigen::Index j = i + 1; j < V.cols(); ++j)
      out.max_form_residual = std::max(out.max_form_residual, std::abs(form(V.col(i), V.col(j))));
  out.is_lagrangian = out.max_form_residual < 1e-10 * std::max(1.0, scale) && out.rank == dim_c + dim_d;
  return out;
}

// v dw + B v dxi + C v dxi'  and  v' dw' + C' v' dxi + B' v' dxi'.
inline Mat relation_tangent_space(const ElementaryRelation& rel) {
  const auto dc = rel.B.rows();
  const auto dd = rel.B_prime.rows();
  Mat V = Mat::Zero(2 * (dc + dd), dc + dd);
  V.block(0, 0, dc, dc).setIdentity();
  V.block(dc, 0, dc, dc) = rel.B;
  V.block(2 * dc + dd, 0, dd, dc) = rel.C;
  V.block(dc, dc, dc, dd) = rel.C_prime();
  V.block(2 * dc, dc, dd, dd).setIdentity();
  V.block(2 * dc + dd, dc, dd, dd) = rel.B_prime;
  return V;
}

inline Mat graph_tangent_space(const Mat& A) {
  const auto n = A.rows();
  Mat V(2 * n, n);
  V.topRows(n).setIdentity();
  V.bottomRows(n) = A;
  return V;
}

}  // namespace brokenray
