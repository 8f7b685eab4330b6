#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "brokenray/errors.hpp"
#include "brokenray/linalg.hpp"
#include "brokenray/tolerances.hpp"

namespace brokenray {

using ClusterId = int;

// X_0 is the whole space, X_1 = {0}.
inline constexpr ClusterId kFreeCluster = 0;
inline constexpr ClusterId kTotalCluster = 1;

class Subspace {
 public:
  Subspace() = default;

  // `basis` columns must be orthonormal.
  explicit Subspace(Mat basis) : basis_(std::move(basis)) {
    if (basis_.cols() > basis_.rows())
      throw Error(ErrorKind::InvalidSubspace, "more basis columns than ambient dimension");
    if (basis_.cols() > 0) {
      const Mat gram = basis_.transpose() * basis_;
      const double defect = (gram - Mat::Identity(basis_.cols(), basis_.cols())).cwiseAbs().maxCoeff();
      if (defect > tol::orthonormal)
        throw Error(ErrorKind::InvalidSubspace, "basis not orthonormal (defect " + std::to_string(defect) + ")");
    }
  }

  static Subspace whole(int n) { return Subspace(Mat::Identity(n, n)); }
  static Subspace zero(int n) { return Subspace(Mat(n, 0)); }

  // Columns of `spanning` span the subspace; need not be orthonormal or independent.
  static Subspace from_spanning(const Mat& spanning) { return Subspace(linalg::column_span(spanning)); }

  // The subspace orthogonal to the columns of `normals`.
  static Subspace from_normals(int n, const Mat& normals) {
    if (normals.cols() == 0) return whole(n);
    return Subspace(linalg::complement(linalg::column_span(normals)));
  }

  int ambient_dim() const { return static_cast<int>(basis_.rows()); }
  int dim() const { return static_cast<int>(basis_.cols()); }
  const Mat& basis() const { return basis_; }

  Mat projector() const { return basis_ * basis_.transpose(); }
  Vec project(const Vec& v) const { return basis_ * (basis_.transpose() * v); }
  Vec coords(const Vec& v) const { return basis_.transpose() * v; }
  Vec embed(const Vec& c) const { return basis_ * c; }

  double distance(const Vec& v) const { return (v - project(v)).norm(); }
  bool contains(const Vec& v, double tol = tol::subspace) const {
    return distance(v) <= tol * std::max(1.0, v.norm());
  }

  bool subset_of(const Subspace& other, double tol = tol::subspace) const {
    for (Eigen::Index j = 0; j < basis_.cols(); ++j)
      if (!other.contains(basis_.col(j), tol)) return false;
    return true;
  }

  bool same_as(const Subspace& other, double tol = tol::subspace) const {
    return dim() == other.dim() && subset_of(other, tol);
  }

  Subspace orthocomplement() const { return Subspace(linalg::complement(basis_)); }

  // Intersection as the joint kernel of both orthocomplement projections.
  Subspace intersect(const Subspace& other, double tol = tol::subspace) const {
    if (ambient_dim() != other.ambient_dim())
      throw Error(ErrorKind::DimensionMismatch, "intersecting subspaces of different ambient spaces");
    const Mat na = linalg::complement(basis_);
    const Mat nb = linalg::complement(other.basis_);
    Mat stacked(ambient_dim(), na.cols() + nb.cols());
    stacked << na, nb;
    return Subspace(linalg::null_space(stacked.transpose(), tol));
  }

  // this (-) inner: orthogonal complement of `inner` inside this subspace.
  Subspace minus(const Subspace& inner) const {
    const Mat q = basis_ - inner.projector() * basis_;
    return Subspace(linalg::column_span(q, 1e-9));
  }

 private:
  Mat basis_;
};

// Orthogonal splitting R^n = X_a (+) (X_b (-) X_a) (+) X_b^perp for X_a contained in X_b.
struct SplitCoordinates {
  Subspace inner;   // X_a
  Subspace middle;  // X^a_b
  Subspace outer;   // X^b
};

struct StratumInfo {
  ClusterId cluster;
  int sphere_dim;                      // dim C_a = dim X_a - 1
  std::vector<ClusterId> singular_by;  // b with b not <= a and C_a meeting C_b
};

class ClusterLattice {
 public:
  ClusterLattice() = default;

  static ClusterLattice build(const std::vector<Subspace>& generators, int ambient_dim) {
    if (ambient_dim < 1) throw Error(ErrorKind::DimensionMismatch, "ambient dimension must be positive");
    ClusterLattice lat;
    lat.n_ = ambient_dim;
    lat.spaces_.push_back(Subspace::whole(ambient_dim));
    lat.spaces_.push_back(Subspace::zero(ambient_dim));
    for (const auto& g : generators) {
      if (g.ambient_dim() != ambient_dim)
        throw Error(ErrorKind::DimensionMismatch, "generator lives in R^" + std::to_string(g.ambient_dim()));
      Subspace checked(g.basis());  // re-validates orthonormality
      if (!lat.find(checked)) lat.spaces_.push_back(std::move(checked));
    }
    bool grew = true;
    while (grew) {
      grew = false;
      const std::size_t count = lat.spaces_.size();
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = i + 1; j < count; ++j) {
          Subspace meet = lat.spaces_[i].intersect(lat.spaces_[j]);
          if (!lat.find(meet)) {
            lat.spaces_.push_back(std::move(meet));
            grew = true;
          }
        }
    }
    lat.finish();
    return lat;
  }

  int ambient_dim() const { return n_; }
  int size() const { return static_cast<int>(spaces_.size()); }

  const Subspace& subspace(ClusterId a) const {
    check(a);
    return spaces_[static_cast<std::size_t>(a)];
  }
  int dim(ClusterId a) const { return subspace(a).dim(); }

  // a <= b  iff  X^a is contained in X^b  iff  X_b is contained in X_a.
  bool leq(ClusterId a, ClusterId b) const {
    check(a);
    check(b);
    return order_[idx(a, b)];
  }
  bool less(ClusterId a, ClusterId b) const { return a != b && leq(a, b); }

  // C_a contained in C_b.
  bool sphere_within(ClusterId a, ClusterId b) const { return leq(b, a); }

  int cluster_rank(ClusterId a) const {
    check(a);
    return rank_[static_cast<std::size_t>(a)];
  }
  int body_count() const { return rank_[kFreeCluster]; }
  bool three_body() const { return body_count() <= 3; }

  ClusterId meet(ClusterId a, ClusterId b) const {
    check(a);
    check(b);
    return meet_[idx(a, b)];
  }

  std::optional<ClusterId> find(const Subspace& s) const {
    for (std::size_t i = 0; i < spaces_.size(); ++i)
      if (spaces_[i].same_as(s)) return static_cast<ClusterId>(i);
    return std::nullopt;
  }

  Vec project_external(ClusterId a, const Vec& v) const {
    check_vec(v);
    return subspace(a).project(v);
  }
  Vec project_internal(ClusterId a, const Vec& v) const { return v - project_external(a, v); }

  SplitCoordinates split(ClusterId a, ClusterId b) const {
    if (!sphere_within(a, b))
      throw Error(ErrorKind::InvalidInput, "split requires C_a contained in C_b");
    const Subspace& xa = subspace(a);
    const Subspace& xb = subspace(b);
    return {xa, xb.minus(xa), xb.orthocomplement()};
  }

  // Clusters whose sphere is nonempty (every cluster but X_1 = {0}).
  std::vector<ClusterId> sphere_clusters() const {
    std::vector<ClusterId> out;
    for (ClusterId a = 0; a < size(); ++a)
      if (dim(a) > 0) out.push_back(a);
    return out;
  }

  bool on_sphere(ClusterId a, const Vec& y, double tol = tol::membership) const {
    return dim(a) > 0 && subspace(a).distance(y) <= tol;
  }

  // The unique a with y in C'_a: the smallest X_a containing y.
  ClusterId stratum(const Vec& y, double tol = tol::membership) const {
    check_vec(y);
    if (std::abs(y.norm() - 1.0) > tol::membership)
      throw Error(ErrorKind::NotUnitVector, "|y| = " + std::to_string(y.norm()));
    ClusterId best = kFreeCluster;
    for (ClusterId a = 0; a < size(); ++a)
      if (on_sphere(a, y, tol) && dim(a) < dim(best)) best = a;
    return best;
  }

  bool in_singular_part(ClusterId a, const Vec& y, double tol = tol::membership) const {
    return on_sphere(a, y, tol) && stratum(y, tol) != a;
  }
  bool in_regular_part(ClusterId a, const Vec& y, double tol = tol::membership) const {
    return on_sphere(a, y, tol) && stratum(y, tol) == a;
  }

  std::vector<StratumInfo> strata() const {
    std::vector<StratumInfo> out;
    for (ClusterId a : sphere_clusters()) {
      StratumInfo info{a, dim(a) - 1, {}};
      for (ClusterId b : sphere_clusters())
        if (!leq(b, a) && dim(meet(a, b)) > 0) info.singular_by.push_back(b);
      out.push_back(std::move(info));
    }
    return out;
  }

  // Longest chain from X_0 down to X_1.
  int height() const { return body_count() - 1; }

  // Collision planes of the subsystem on X^a, expressed in an orthonormal basis of X^a.
  ClusterLattice subsystem(ClusterId a) const {
    const Subspace internal = subspace(a).orthocomplement();
    const int m = internal.dim();
    if (m == 0) throw Error(ErrorKind::InvalidInput, "cluster 0 has no internal subsystem");
    std::vector<Subspace> gens;
    for (ClusterId b = 0; b < size(); ++b) {
      if (b == kFreeCluster || !sphere_within(a, b)) continue;
      const Subspace part = subspace(b).intersect(internal);
      const Mat local = internal.basis().transpose() * part.basis();
      if (local.cols() > 0 && local.cols() < m) gens.push_back(Subspace::from_spanning(local));
    }
    return build(gens, m);
  }

 private:
  void check(ClusterId a) const {
    if (a < 0 || a >= static_cast<ClusterId>(spaces_.size()))
      throw Error(ErrorKind::UnknownCluster, "cluster " + std::to_string(a));
  }
  void check_vec(const Vec& v) const {
    if (v.size() != n_) throw Error(ErrorKind::DimensionMismatch, "vector length " + std::to_string(v.size()));
  }
  std::size_t idx(ClusterId a, ClusterId b) const {
    return static_cast<std::size_t>(a) * spaces_.size() + static_cast<std::size_t>(b);
  }

  void finish() {
    const std::size_t k = spaces_.size();
    order_.assign(k * k, false);
    meet_.assign(k * k, kTotalCluster);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        order_[a * k + b] = spaces_[b].subset_of(spaces_[a]);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        const auto hit = find(spaces_[a].intersect(spaces_[b]));
        meet_[a * k + b] = hit ? *hit : kTotalCluster;
      }
    // Peel maximal elements: {1} is the 1-cluster, maximal elements of the rest are 2-clusters, ...
    rank_.assign(k, 0);
    std::vector<bool> assigned(k, false);
    int level = 1;
    std::size_t done = 0;
    while (done < k) {
      std::vector<std::size_t> layer;
      for (std::size_t a = 0; a < k; ++a) {
        if (assigned[a]) continue;
        bool maximal = true;
        for (std::size_t b = 0; b < k && maximal; ++b)
          if (!assigned[b] && b != a && order_[a * k + b]) maximal = false;
        if (maximal) layer.push_back(a);
      }
      for (std::size_t a : layer) {
        assigned[a] = true;
        rank_[a] = level;
      }
      done += layer.size();
      ++level;
    }
  }

  int n_ = 0;
  std::vector<Subspace> spaces_;
  std::vector<bool> order_;
  std::vector<ClusterId> meet_;
  std::vector<int> rank_;
};

inline ClusterLattice build_lattice(const std::vector<Subspace>& generators, int ambient_dim) {
  return ClusterLattice::build(generators, ambient_dim);
}

inline Vec project_external(const ClusterLattice& lat, ClusterId a, const Vec& v) {
  return lat.project_external(a, v);
}

inline Vec project_internal(const ClusterLattice& lat, ClusterId a, const Vec& v) {
  return lat.project_internal(a, v);
}

inline std::vector<StratumInfo> sphere_strata(const ClusterLattice& lat) { return lat.strata(); }

}  // namespace brokenray
