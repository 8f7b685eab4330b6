#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "brokenray/cluster_lattice.hpp"

namespace brokenray {

struct Channel {
  ClusterId cluster = kFreeCluster;
  int index = 0;
  double energy = 0.0;
};

inline bool operator==(const Channel& a, const Channel& b) {
  return a.cluster == b.cluster && a.index == b.index && a.energy == b.energy;
}

// Channel table plus the threshold sets derived from the lattice order.
class SpectralModel {
 public:
  SpectralModel() = default;

  // The free channel (cluster 0, energy 0) is added if absent. `discrete` = false marks a
  // threshold set with accumulation points, which the enumerators refuse.
  SpectralModel(const ClusterLattice& lat, std::vector<Channel> channels, bool discrete = true)
      : discrete_(discrete) {
    bool has_free = false;
    for (const auto& ch : channels) {
      lat.subspace(ch.cluster);
      if (ch.energy > 0.0)
        throw Error(ErrorKind::InvalidInput, "channel energy must be <= 0, got " + std::to_string(ch.energy));
      if (ch.cluster == kFreeCluster) {
        if (ch.energy != 0.0) throw Error(ErrorKind::InvalidInput, "the free cluster has only the eigenvalue 0");
        if (has_free) continue;
        has_free = true;
      }
      channels_.push_back(ch);
    }
    if (!has_free) channels_.insert(channels_.begin(), Channel{kFreeCluster, 0, 0.0});
    std::stable_sort(channels_.begin(), channels_.end(), [](const Channel& a, const Channel& b) {
      return a.cluster != b.cluster ? a.cluster < b.cluster : a.index < b.index;
    });

    const int k = lat.size();
    pspec_.assign(static_cast<std::size_t>(k), {});
    for (const auto& ch : channels_) pspec_[static_cast<std::size_t>(ch.cluster)].push_back(ch.energy);
    for (auto& p : pspec_) sort_unique(p);

    below_.assign(static_cast<std::size_t>(k), {});
    closed_.assign(static_cast<std::size_t>(k), {});
    for (ClusterId a = 0; a < k; ++a)
      for (ClusterId b = 0; b < k; ++b) {
        if (!lat.leq(b, a)) continue;
        const auto& p = pspec_[static_cast<std::size_t>(b)];
        auto& closed = closed_[static_cast<std::size_t>(a)];
        closed.insert(closed.end(), p.begin(), p.end());
        if (b != a) {
          auto& below = below_[static_cast<std::size_t>(a)];
          below.insert(below.end(), p.begin(), p.end());
        }
      }
    for (auto& v : below_) sort_unique(v);
    for (auto& v : closed_) sort_unique(v);
    order_ = lat;
  }

  const std::vector<Channel>& channels() const { return channels_; }
  bool discrete() const { return discrete_; }

  const std::vector<double>& pspec(ClusterId b) const { return pspec_.at(static_cast<std::size_t>(b)); }
  // Lambda_a: eigenvalues of strictly smaller clusters.
  const std::vector<double>& thresholds(ClusterId a) const { return below_.at(static_cast<std::size_t>(a)); }
  // Lambda'_a: Lambda_a together with pspec(H^a).
  const std::vector<double>& thresholds_closed(ClusterId a) const { return closed_.at(static_cast<std::size_t>(a)); }
  const std::vector<double>& global_thresholds() const { return thresholds(kTotalCluster); }

  // Channels that may propagate along C_a: their cluster b has C_a inside C_b.
  std::vector<Channel> channels_along(ClusterId a) const {
    std::vector<Channel> out;
    for (const auto& ch : channels_)
      if (ch.cluster != kTotalCluster && order_.sphere_within(a, ch.cluster)) out.push_back(ch);
    return out;
  }

  const ClusterLattice& lattice() const { return order_; }

 private:
  static void sort_unique(std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }

  bool discrete_ = true;
  std::vector<Channel> channels_;
  std::vector<std::vector<double>> pspec_;
  std::vector<std::vector<double>> below_;
  std::vector<std::vector<double>> closed_;
  ClusterLattice order_;
};

// A point of the compressed phase space over C'_a: direction y in X_a and momentum xi in X_a.
struct CompressedPoint {
  ClusterId cluster = kFreeCluster;
  Vec y;
  Vec xi;

  double tau() const { return -y.dot(xi); }
  Vec mu() const { return xi - y.dot(xi) * y; }
};

// A lift of a compressed point over C'_a to cluster b with C_a inside C_b: the normal momentum
// nu lies in X_b (-) X_a and `energy` is the eigenvalue of H^b being used.
struct FiberPoint {
  CompressedPoint base;
  ClusterId lift = kFreeCluster;
  double energy = 0.0;
  Vec nu;

  Vec lifted_xi() const { return base.xi + nu; }
};

struct ScCoordinates {
  double x;
  Vec y;
  double tau;
  Vec mu;
};

inline ScCoordinates sc_coordinates(const Vec& w, const Vec& xi) {
  if (w.size() != xi.size()) throw Error(ErrorKind::DimensionMismatch, "w and xi differ in length");
  const double r = w.norm();
  if (!(r > 0.0)) throw Error(ErrorKind::DegenerateBasePoint, "w = 0");
  Vec y = w / r;
  const double tau = -y.dot(xi);
  Vec mu = xi + tau * y;
  return {1.0 / r, std::move(y), tau, std::move(mu)};
}

struct CharWitness {
  ClusterId cluster;
  double energy;
  double normal_sq;  // lambda - |xi_a|^2 - energy
};

struct CharVarietyResult {
  bool member = false;
  std::vector<CharWitness> witnesses;
};

inline CharVarietyResult char_variety_test(const SpectralModel& model, const ClusterLattice& lat, double lambda,
                                           const CompressedPoint& p, double tol_e = tol::energy) {
  CharVarietyResult out;
  const double kinetic = p.xi.squaredNorm();
  for (ClusterId b = 0; b < lat.size(); ++b) {
    if (!lat.sphere_within(p.cluster, b)) continue;
    for (double e : model.pspec(b)) {
      const double rest = lambda - kinetic - e;
      const bool ok = (b == p.cluster) ? std::abs(rest) <= tol_e : rest >= -tol_e;
      if (ok) out.witnesses.push_back({b, e, rest});
    }
  }
  out.member = !out.witnesses.empty();
  return out;
}

struct FiberWindow {
  ClusterId cluster;
  double energy;
  double normal_sq_min;
  double normal_sq_max;
};

// Admissible |nu_ab|^2 ranges for total energy in [lo, hi].
inline std::vector<FiberWindow> fiber_preimage(const SpectralModel& model, const ClusterLattice& lat, double lo,
                                               double hi, const CompressedPoint& p, double tol_e = tol::energy) {
  std::vector<FiberWindow> out;
  const double kinetic = p.xi.squaredNorm();
  for (ClusterId b = 0; b < lat.size(); ++b) {
    if (!lat.sphere_within(p.cluster, b)) continue;
    for (double e : model.pspec(b)) {
      double top = hi - e - kinetic;
      double bottom = std::max(0.0, lo - e - kinetic);
      if (top < -tol_e) continue;
      top = std::max(top, 0.0);
      if (b == p.cluster) {
        if (bottom > tol_e) continue;
        bottom = top = 0.0;
      }
      out.push_back({b, e, bottom, top});
    }
  }
  return out;
}

// sign = +1 for the incoming set R_+, -1 for the outgoing set R_-.
inline bool radial_set_test(const SpectralModel& model, const ClusterLattice& lat, double lambda,
                            const CompressedPoint& p, int sign, double tol_r = tol::energy) {
  const double tau = p.tau();
  if (p.mu().norm() > tol_r) return false;
  if (sign * tau < -tol_r) return false;
  for (ClusterId b = 0; b < lat.size(); ++b) {
    if (!lat.sphere_within(p.cluster, b)) continue;
    for (double e : model.pspec(b))
      if (std::abs(lambda - tau * tau - e) <= tol_r) return true;
  }
  return false;
}

// d(sigma) = inf{sigma - t : t <= sigma, t in thresholds}, 0 below all thresholds.
inline double gap_d(const std::vector<double>& thresholds_closed, double sigma) {
  double best = std::numeric_limits<double>::infinity();
  for (double t : thresholds_closed)
    if (t <= sigma) best = std::min(best, sigma - t);
  return std::isfinite(best) ? best : 0.0;
}

// inf of gap_d over [sigma - kappa, sigma + kappa]. gap_d increases between thresholds and
// vanishes at each of them, so the inf is 0 when the window holds a threshold (or reaches
// below all of them) and gap_d(sigma - kappa) otherwise.
inline double gap_d_kappa(const std::vector<double>& thresholds_closed, double sigma, double kappa) {
  if (kappa < 0.0) throw Error(ErrorKind::ParameterOutOfRange, "kappa must be >= 0");
  const double lo = sigma - kappa;
  const double hi = sigma + kappa;
  if (thresholds_closed.empty() || lo < thresholds_closed.front()) return 0.0;
  for (double t : thresholds_closed)
    if (t >= lo && t <= hi) return 0.0;
  return gap_d(thresholds_closed, lo);
}

inline double gap_d(const SpectralModel& model, ClusterId a, double sigma) {
  return gap_d(model.thresholds_closed(a), sigma);
}

inline double gap_d_kappa(const SpectralModel& model, ClusterId a, double sigma, double kappa) {
  return gap_d_kappa(model.thresholds_closed(a), sigma, kappa);
}

}  // namespace brokenray
