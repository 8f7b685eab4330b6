#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "brokenray/hamilton_flow.hpp"

namespace brokenray {

using Rng = std::mt19937_64;

namespace detail {

inline Vec random_in(const Mat& basis, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec c(basis.cols());
  for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = normal(rng);
  return basis * c;
}

inline Vec random_unit_in(const Mat& basis, Rng& rng) {
  if (basis.cols() == 0) throw Error(ErrorKind::InvalidInput, "random direction in a zero-dimensional space");
  for (;;) {
    Vec v = random_in(basis, rng);
    if (v.norm() > 1e-3) return v.normalized();
  }
}


}  // namespace detail

// a_1, alpha_1, c_1, a_2, ..., c_m, a_{m+1}, alpha_{m+1}.
struct BreakString {
  std::vector<ClusterId> propagation;
  std::vector<Channel> channels;
  std::vector<ClusterId> breaks;

  int break_count() const { return static_cast<int>(breaks.size()); }

  std::string key() const {
    std::ostringstream os;
    for (std::size_t j = 0; j < propagation.size(); ++j) {
      if (j > 0) os << " |" << breaks[j - 1] << "| ";
      os << propagation[j] << "(" << channels[j].cluster << ":" << channels[j].index << ")";
    }
    return os.str();
  }
};

inline bool operator==(const BreakString& x, const BreakString& y) {
  return x.propagation == y.propagation && x.channels == y.channels && x.breaks == y.breaks;
}

struct StringCheck {
  bool ok = true;
  bool tangency = false;  // failed only the a_j != c_j or a_{j+1} != c_j rule
  std::string reason;
};

inline StringCheck check_string(const BreakString& s, const ClusterLattice& lat, double lambda) {
  auto fail = [](std::string why, bool tangency = false) { return StringCheck{false, tangency, std::move(why)}; };
  const std::size_t m = s.breaks.size();
  if (s.propagation.size() != m + 1 || s.channels.size() != m + 1) return fail("length mismatch");
  for (std::size_t j = 0; j <= m; ++j) {
    const ClusterId a = s.propagation[j];
    if (a < 0 || a >= lat.size() || lat.dim(a) == 0) return fail("propagation cluster " + std::to_string(a));
    const Channel& ch = s.channels[j];
    if (ch.cluster < 0 || ch.cluster >= lat.size() || ch.cluster == kTotalCluster || !lat.sphere_within(a, ch.cluster))
      return fail("channel cluster " + std::to_string(ch.cluster) + " does not contain C_" + std::to_string(a));
    if (lambda - ch.energy < -tol::energy) return fail("closed channel at position " + std::to_string(j));
  }
  for (std::size_t j = 0; j < m; ++j) {
    const ClusterId c = s.breaks[j];
    if (c < 0 || c >= lat.size() || c == kTotalCluster) return fail("break cluster " + std::to_string(c));
    if (!lat.sphere_within(c, s.propagation[j]) || !lat.sphere_within(c, s.propagation[j + 1]))
      return fail("C_" + std::to_string(c) + " not inside both neighbours");
    if (s.propagation[j] == c && s.propagation[j + 1] == c)
      return fail("tangential on both sides of break " + std::to_string(j + 1), true);
  }
  return {};
}

// All strings with at most max_breaks breaks, in depth-first (prefix before extension) order.
inline std::vector<BreakString> enumerate_strings(const ClusterLattice& lat, const SpectralModel& model, double lambda,
                                                  int max_breaks) {
  if (!model.discrete()) throw Error(ErrorKind::NotDiscrete, "threshold set is not discrete");
  if (max_breaks < 0) throw Error(ErrorKind::ParameterOutOfRange, "max_breaks < 0");
  std::vector<std::vector<Channel>> open(static_cast<std::size_t>(lat.size()));
  for (ClusterId a : lat.sphere_clusters())
    for (const auto& ch : model.channels_along(a))
      if (lambda - ch.energy >= -tol::energy) open[static_cast<std::size_t>(a)].push_back(ch);

  std::vector<BreakString> out;
  BreakString cur;
  auto extend = [&](auto&& self) -> void {
    out.push_back(cur);
    if (cur.break_count() >= max_breaks) return;
    const ClusterId a = cur.propagation.back();
    for (ClusterId c : lat.sphere_clusters()) {
      if (!lat.sphere_within(c, a)) continue;
      for (ClusterId next : lat.sphere_clusters()) {
        if (!lat.sphere_within(c, next) || (a == c && next == c)) continue;
        for (const auto& ch : open[static_cast<std::size_t>(next)]) {
          cur.breaks.push_back(c);
          cur.propagation.push_back(next);
          cur.channels.push_back(ch);
          self(self);
          cur.breaks.pop_back();
          cur.propagation.pop_back();
          cur.channels.pop_back();
        }
      }
    }
  };
  for (ClusterId a : lat.sphere_clusters())
    for (const auto& ch : open[static_cast<std::size_t>(a)]) {
      cur = BreakString{{a}, {ch}, {}};
      extend(extend);
    }
  return out;
}

struct BreakRecord {
  ClusterId cluster = kFreeCluster;
  Vec point;   // w_j in X_c
  Vec xi_in;   // momentum of the arriving segment
  Vec xi_out;  // momentum of the leaving segment

  double conservation_defect(const ClusterLattice& lat) const {
    return lat.subspace(cluster).project(xi_in - xi_out).norm();
  }
  CompressedPoint compressed(const ClusterLattice& lat) const {
    return {cluster, point.normalized(), lat.subspace(cluster).project(xi_in)};
  }
};

struct BrokenRay {
  BreakString string;
  double lambda = 0.0;
  std::vector<FlowSegment> segments;
  std::vector<BreakRecord> breaks;

  // Global time of local t = 0 for each segment; segments are glued end to start.
  std::vector<double> offsets() const {
    std::vector<double> off(segments.size(), 0.0);
    if (segments.empty()) return off;
    const auto& first = segments.front();
    if (std::isfinite(first.t_begin())) off[0] = -first.t_begin();
    else if (std::isfinite(first.t_end())) off[0] = -first.t_end();
    for (std::size_t j = 0; j + 1 < segments.size(); ++j) {
      const double end = segments[j].t_end() + off[j];
      if (!std::isfinite(end)) throw Error(ErrorKind::InvalidInput, "interior segment reaches a radial limit");
      off[j + 1] = end - segments[j + 1].t_begin();
    }
    return off;
  }

  // Global time of break j (between segments j and j+1).
  double break_time(std::size_t j) const { return segments.at(j).t_end() + offsets().at(j); }
};

// Sum of arclengths on the sphere; legs to or from infinity count their limit value.
inline double length_of(const BrokenRay& ray) {
  double total = 0.0;
  for (const auto& seg : ray.segments) total += std::max(0.0, seg.length());
  return total;
}

// Arclength grouped by kinetic energy lambda - eps.
inline std::map<double, double> sublengths_by_energy(const BrokenRay& ray) {
  std::map<double, double> out;
  for (const auto& seg : ray.segments) out[seg.sigma()] += std::max(0.0, seg.length());
  return out;
}

// Point of the ray at global time t; exactly at a break the break point over C'_c is returned.
inline CompressedPoint point_at(const BrokenRay& ray, const ClusterLattice& lat, double t) {
  const auto off = ray.offsets();
  for (std::size_t j = 0; j < ray.segments.size(); ++j) {
    const auto& seg = ray.segments[j];
    const double end = seg.t_end() + off[j];
    if (j + 1 < ray.segments.size() && t == end) return ray.breaks[j].compressed(lat);
    if (t <= end || j + 1 == ray.segments.size()) {
      if (seg.stationary()) return flow_point(seg, seg.s_begin());
      return flow_point(seg, reparametrize_time(seg, t - off[j]));
    }
  }
  throw Error(ErrorKind::ParameterOutOfRange, "empty ray");
}

// Time span of the ray with radial limits clipped to the guard band.
inline std::pair<double, double> time_span(const BrokenRay& ray) {
  const auto off = ray.offsets();
  const auto& first = ray.segments.front();
  const auto& last = ray.segments.back();
  const double lo = first.from_infinity() ? first.time_at(tol::guard_band) + off.front() : first.t_begin() + off.front();
  const double hi = last.to_infinity() ? last.time_at(kPi - tol::guard_band) + off.back() : last.t_end() + off.back();
  return {lo, hi};
}

inline SampledCurve sample_ray(const BrokenRay& ray, const ClusterLattice& lat, int count) {
  const auto [lo, hi] = time_span(ray);
  SampledCurve out;
  out.t_start = lo;
  out.h = count > 1 ? (hi - lo) / (count - 1) : 0.0;
  for (int k = 0; k < count; ++k) out.points.push_back(point_at(ray, lat, out.time(static_cast<std::size_t>(k))));
  return out;
}

// 2 half + 1 samples centred on break j; index `half` is the break point itself.
inline SampledCurve sample_around_break(const BrokenRay& ray, const ClusterLattice& lat, std::size_t j, double h,
                                        int half) {
  const double tj = ray.break_time(j);
  SampledCurve out;
  out.h = h;
  out.t_start = tj - half * h;
  for (int k = -half; k <= half; ++k)
    out.points.push_back(k == 0 ? ray.breaks[j].compressed(lat) : point_at(ray, lat, tj + k * h));
  return out;
}

struct RayParameters {
  std::vector<Vec> break_points;  // w_1, ..., w_m
  Vec incoming;                   // direction of the first momentum (m >= 1 or no start)
  Vec outgoing;                   // direction of the last momentum
  std::optional<Vec> start;       // finite starting point instead of a leg from infinity
  Vec through;                    // m = 0 without start: a point on the single leg
  double stationary_duration = 1.0;
};

// Assemble a ray from break points: interior momenta are sqrt(lambda - eps) (w - w') / |w - w'|.
inline BrokenRay build_ray(const BreakString& s, const ClusterLattice& lat, double lambda, const RayParameters& p) {
  const std::size_t m = s.breaks.size();
  if (s.propagation.size() != m + 1 || s.channels.size() != m + 1 || p.break_points.size() != m)
    throw Error(ErrorKind::InvalidInput, "string and break point counts disagree");
  for (std::size_t j = 0; j <= m; ++j)
    if (lambda - s.channels[j].energy < -tol::energy)
      throw Error(ErrorKind::ChannelClosed, "lambda below channel energy at position " + std::to_string(j));
  for (std::size_t j = 0; j < m; ++j) {
    const Vec& w = p.break_points[j];
    if (!lat.subspace(s.breaks[j]).contains(w, tol::membership))
      throw Error(ErrorKind::InvalidInput, "break point " + std::to_string(j + 1) + " not on X_c");
    if (!(w.norm() > 0.0)) throw Error(ErrorKind::DegenerateBasePoint, "break point at the origin");
  }
  const double dur = p.stationary_duration;
  auto speed = [&](std::size_t j) { return std::sqrt(std::max(0.0, lambda - s.channels[j].energy)); };

  BrokenRay ray;
  ray.string = s;
  ray.lambda = lambda;

  // Leg from infinity arriving at w, or leaving w to infinity.
  auto open_leg = [&](std::size_t j, const Vec& w, const Vec& dir, bool arriving) {
    const Vec xi = speed(j) * dir.normalized();
    FlowSegment seg = FlowSegment::from_anchor(s.propagation[j], s.channels[j], lambda, w.normalized(), xi, dur);
    if (seg.stationary()) {
      const double tau = -w.normalized().dot(xi);
      // Arriving legs must come in from outside (tau >= 0); leaving legs must head out.
      if ((arriving && tau < 0.0) || (!arriving && tau > 0.0))
        throw Error(ErrorKind::DegenerateSegment, "radial leg passes through the origin");
      return seg;
    }
    return arriving ? seg.truncated(0.0, seg.s_begin()) : seg;
  };

  if (m == 0) {
    const Vec xi = speed(0) * p.incoming.normalized();
    if (p.start) {
      ray.segments.push_back(open_leg(0, *p.start, p.incoming, false));
    } else {
      FlowSegment seg =
          FlowSegment::from_anchor(s.propagation[0], s.channels[0], lambda, p.through.normalized(), xi, dur);
      ray.segments.push_back(seg.stationary() ? seg : seg.truncated(0.0, kPi));
    }
    return ray;
  }

  if (p.start)
    ray.segments.push_back(FlowSegment::chord(s.propagation[0], s.channels[0], lambda, *p.start, p.break_points[0], dur));
  else
    ray.segments.push_back(open_leg(0, p.break_points[0], p.incoming, true));
  for (std::size_t j = 1; j < m; ++j)
    ray.segments.push_back(
        FlowSegment::chord(s.propagation[j], s.channels[j], lambda, p.break_points[j - 1], p.break_points[j], dur));
  ray.segments.push_back(open_leg(m, p.break_points[m - 1], p.outgoing, false));

  for (std::size_t j = 0; j < m; ++j) {
    BreakRecord rec{s.breaks[j], p.break_points[j], ray.segments[j].xi(), ray.segments[j + 1].xi()};
    const double kinetic_c = lat.subspace(rec.cluster).project(rec.xi_in).squaredNorm();
    if (lambda - s.channels[j + 1].energy - kinetic_c < -tol::energy)
      throw Error(ErrorKind::ChannelClosed, "outgoing channel closed at break " + std::to_string(j + 1));
    ray.breaks.push_back(std::move(rec));
  }
  return ray;
}

// A proper subcluster of the segment's label whose sphere contains the whole segment.
inline std::optional<ClusterId> tighter_cluster(const FlowSegment& seg, const ClusterLattice& lat) {
  const ClusterId a = seg.cluster();
  for (ClusterId b : lat.sphere_clusters()) {
    if (b == a || !lat.sphere_within(b, a)) continue;
    const Subspace& xb = lat.subspace(b);
    const bool inside = seg.stationary()
                            ? xb.contains(seg.direction_at(0.0), tol::membership)
                            : xb.contains(seg.direction(), tol::membership) && xb.contains(seg.axis(), tol::membership);
    if (inside) return b;
  }
  return std::nullopt;
}

struct RealizeResult {
  std::optional<BrokenRay> ray;
  std::string reason;  // last failure when no ray was found
};

// Random geometric realization of a string: w_1 and the first momentum are drawn at random,
// then each outgoing momentum xi_c + nu (|nu| fixed by energy) is aimed at the next break
// cluster by solving  pi^{c'}(w_j + t (xi_c + nu)) = 0  for (nu, 1/t).
inline RealizeResult realize_string(const BreakString& s, const ClusterLattice& lat, double lambda, Rng& rng,
                                    int attempts = 8, double stationary_duration = 1.0) {
  RealizeResult result;
  const StringCheck check = check_string(s, lat, lambda);
  if (!check.ok) {
    result.reason = "string: " + check.reason;
    return result;
  }
  const std::size_t m = s.breaks.size();
  auto sigma = [&](std::size_t j) { return std::max(0.0, lambda - s.channels[j].energy); };

  for (int attempt = 0; attempt < attempts; ++attempt) {
    try {
      RayParameters p;
      p.stationary_duration = stationary_duration;
      const Mat& first_basis = lat.subspace(s.propagation[0]).basis();
      if (m == 0) {
        p.through = detail::random_unit_in(first_basis, rng);
        p.incoming = first_basis.cols() == 1 ? Vec(-p.through) : detail::random_unit_in(first_basis, rng);
        p.outgoing = p.incoming;
        result.ray = build_ray(s, lat, lambda, p);
        return result;
      }
      Vec w = detail::random_unit_in(lat.subspace(s.breaks[0]).basis(), rng);
      Vec xi = std::sqrt(sigma(0)) * (first_basis.cols() == 1 ? Vec(-w) : detail::random_unit_in(first_basis, rng));
      p.incoming = xi;
      p.break_points.push_back(w);
      bool ok = true;
      for (std::size_t j = 0; j < m && ok; ++j) {
        const ClusterId c = s.breaks[j];
        const Vec xic = lat.subspace(c).project(xi);
        const double rho_sq = sigma(j + 1) - xic.squaredNorm();
        const double scale = std::max(1.0, sigma(j + 1));
        if (rho_sq < -1e-12 * scale) {
          result.reason = "channel closed at break " + std::to_string(j + 1);
          ok = false;
          break;
        }
        const Mat normals = lat.split(c, s.propagation[j + 1]).middle.basis();
        const Eigen::Index k = normals.cols();
        if (k == 0 && std::abs(rho_sq) > 1e-9 * scale) {
          result.reason = "tangential continuation needs |xi_c|^2 = lambda - eps at break " + std::to_string(j + 1);
          ok = false;
          break;
        }
        const double rho = std::sqrt(std::max(0.0, rho_sq));
        if (k > 0 && rho_sq <= 1e-9 * scale) {
          result.reason = "normal leg without normal momentum at break " + std::to_string(j + 1);
          ok = false;
          break;
        }
        if (j + 1 == m) {
          Vec nu = (k == 0 || rho == 0.0) ? Vec(Vec::Zero(xi.size())) : Vec(rho * detail::random_unit_in(normals, rng));
          p.outgoing = xic + nu;
          break;
        }
        // Aim at X_{c'}.
        const Mat q = lat.subspace(s.breaks[j + 1]).orthocomplement().basis();
        Mat sys(q.cols(), k + 1);
        if (k > 0) sys.leftCols(k) = q.transpose() * normals;
        sys.col(k) = q.transpose() * w;
        const Vec rhs = -(q.transpose() * xic);
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(sys);
        cod.setThreshold(1e-12);
        const Vec xp = sys.rows() > 0 ? Vec(cod.solve(rhs)) : Vec(Vec::Zero(k + 1));
        if (sys.rows() > 0 && (sys * xp - rhs).norm() > 1e-10 * std::max(1.0, rhs.norm())) {
          result.reason = "break " + std::to_string(j + 2) + " unreachable";
          ok = false;
          break;
        }
        const Mat z = linalg::null_space(sys.rows() > 0 ? sys : Mat(0, k + 1), 1e-12);
        std::vector<Vec> solutions;
        if (z.cols() == 0) {
          if (std::abs(xp.head(k).norm() - rho) <= 1e-9 * std::max(1.0, rho) && xp(k) > 1e-9) solutions.push_back(xp);
        } else {
          for (int tries = 0; tries < 6 && solutions.empty(); ++tries) {
            const Vec dz = z * detail::random_unit_in(Mat::Identity(z.cols(), z.cols()), rng);
            const Vec u = dz.head(k);
            const Vec np = xp.head(k);
            if (u.norm() < 1e-12) {
              // nu is pinned; only the travel time is free.
              if (std::abs(np.norm() - rho) > 1e-9 * std::max(1.0, rho)) break;
              std::uniform_real_distribution<double> travel(0.5, 2.0);
              Vec x = xp;
              x(k) = 1.0 / travel(rng);
              if (std::abs(dz(k)) < 1e-12) {
                if ((sys * x - rhs).norm() > 1e-10 * std::max(1.0, rhs.norm())) break;
              }
              solutions.push_back(x);
              break;
            }
            const double qa = u.squaredNorm();
            const double qb = 2.0 * np.dot(u);
            const double qc = np.squaredNorm() - rho * rho;
            const double disc = qb * qb - 4.0 * qa * qc;
            if (disc < 0.0) continue;
            const double root = std::sqrt(disc);
            for (double sgn : {-1.0, 1.0}) {
              const double step = (-qb + sgn * root) / (2.0 * qa);
              Vec x = xp + step * dz;
              if (x(k) > 1e-9) solutions.push_back(std::move(x));
            }
          }
        }
        if (solutions.empty()) {
          result.reason = "no forward solution towards break " + std::to_string(j + 2);
          ok = false;
          break;
        }
        std::uniform_int_distribution<std::size_t> pick(0, solutions.size() - 1);
        const Vec x = solutions[pick(rng)];
        Vec nu = k > 0 ? Vec(normals * x.head(k)) : Vec(Vec::Zero(xi.size()));
        if (rho > 0.0 && nu.norm() > 0.0) nu *= rho / nu.norm();
        xi = xic + nu;
        const Vec next = lat.subspace(s.breaks[j + 1]).project(w + xi / x(k));
        const double reach = tol::guard_band * std::max(1.0, w.norm());
        if (!(next.norm() > reach) || !((next - w).norm() > reach) || next.norm() > 1e8) {
          result.reason = "break " + std::to_string(j + 2) + " degenerate";
          ok = false;
          break;
        }
        w = next;
        p.break_points.push_back(w);
      }
      if (!ok) continue;
      for (std::size_t j = 0; j < m && ok; ++j) {
        const ClusterId c = s.breaks[j];
        const Vec y = p.break_points[j].normalized();
        for (ClusterId b : lat.sphere_clusters())
          if (b != c && lat.sphere_within(b, c) && lat.subspace(b).distance(y) < tol::guard_band) {
            result.reason = "break " + std::to_string(j + 1) + " lands on the smaller cluster " + std::to_string(b);
            ok = false;
            break;
          }
      }
      if (!ok) continue;
      BrokenRay ray = build_ray(s, lat, lambda, p);
      if (std::any_of(ray.segments.begin(), ray.segments.end(),
                      [&](const FlowSegment& seg) { return tighter_cluster(seg, lat).has_value(); })) {
        result.reason = "a leg lies in a smaller cluster than its label";
        continue;
      }
      result.ray = std::move(ray);
      return result;
    } catch (const Error& e) {
      result.reason = e.what();
    }
  }
  return result;
}

// Earliest crossing of the line point + t xi with a proper subcluster of the current one.
class HitFinder {
 public:
  explicit HitFinder(const ClusterLattice& lat) : lat_(&lat) {
    for (ClusterId c = 0; c < lat.size(); ++c) normals_.push_back(lat.subspace(c).orthocomplement().basis());
  }

  struct Hit {
    ClusterId cluster;
    double t;
  };

  // all_times: search t over R (legs from infinity); otherwise t > 0 and clusters already
  // containing `point` are skipped.
  std::optional<Hit> next(ClusterId a, const Vec& point, const Vec& xi, bool all_times) const {
    std::optional<Hit> best;
    const double scale = std::max(1.0, point.norm());
    for (ClusterId c : lat_->sphere_clusters()) {
      if (c == a || !lat_->sphere_within(c, a)) continue;
      const Mat& q = normals_[static_cast<std::size_t>(c)];
      const Vec pc = q.transpose() * point;
      if (!all_times && pc.norm() <= 1e-9 * scale) continue;
      const Vec vc = q.transpose() * xi;
      if (vc.norm() <= 1e-12 * std::max(1.0, xi.norm())) continue;
      const double t = -pc.dot(vc) / vc.squaredNorm();
      if (!all_times && t <= 1e-9) continue;
      if ((pc + t * vc).norm() > 1e-9 * std::max(scale, std::abs(t) * xi.norm())) continue;
      const bool earlier = !best || t < best->t - 1e-9 * std::max(1.0, std::abs(t));
      const bool tie = best && std::abs(t - best->t) <= 1e-9 * std::max(1.0, std::abs(t));
      if (earlier || (tie && lat_->dim(c) < lat_->dim(best->cluster))) best = Hit{c, t};
    }
    return best;
  }

 private:
  const ClusterLattice* lat_;
  std::vector<Mat> normals_;
};

struct Continuation {
  ClusterId cluster;
  Channel channel;
  double rho;  // normal momentum magnitude
};

// Admissible ways to leave a break on C_c with tangential momentum xi_c.
inline std::vector<Continuation> continuations(const ClusterLattice& lat, const SpectralModel& model, double lambda,
                                               ClusterId c, const Vec& xi_c, bool allow_tangential) {
  std::vector<Continuation> out;
  const double kinetic = xi_c.squaredNorm();
  for (ClusterId next : lat.sphere_clusters()) {
    if (!lat.sphere_within(c, next)) continue;
    for (const auto& ch : model.channels_along(next)) {
      const double sigma = lambda - ch.energy;
      const double rho_sq = sigma - kinetic;
      const double slack = tol::energy * std::max(1.0, sigma);
      if (sigma <= 0.0) continue;
      if (next == c) {
        if (allow_tangential && std::abs(rho_sq) <= slack) out.push_back({next, ch, 0.0});
      } else if (rho_sq > slack) {
        out.push_back({next, ch, std::sqrt(rho_sq)});
      }
    }
  }
  return out;
}

struct SimulationOptions {
  int max_breaks = 4;
  double pass_probability = 0.25;
  double stationary_duration = 1.0;
};

struct LegStart {
  ClusterId cluster = kFreeCluster;
  Channel channel;
  Vec point;  // a point on the first leg
  Vec xi;     // its momentum, |xi|^2 = lambda - eps
  bool from_infinity = true;
};

// Forward simulation with random continuations at every crossing of a collision plane.
inline BrokenRay simulate_ray(const ClusterLattice& lat, const SpectralModel& model, double lambda,
                              const LegStart& start, Rng& rng, const SimulationOptions& opt = {},
                              const HitFinder* finder = nullptr) {
  std::optional<HitFinder> own;
  if (!finder) finder = &own.emplace(lat);
  BreakString s{{start.cluster}, {start.channel}, {}};
  RayParameters p;
  p.stationary_duration = opt.stationary_duration;
  p.incoming = start.xi;
  if (!start.from_infinity) p.start = start.point;
  p.through = start.point;

  ClusterId a = start.cluster;
  Vec point = start.point;
  Vec xi = start.xi;
  bool all_times = start.from_infinity;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  while (s.break_count() < opt.max_breaks) {
    const auto hit = finder->next(a, point, xi, all_times);
    if (!hit) break;
    const Vec w = lat.subspace(hit->cluster).project(point + hit->t * xi);
    const Vec xic = lat.subspace(hit->cluster).project(xi);
    const auto options = continuations(lat, model, lambda, hit->cluster, xic, false);
    point = w;
    all_times = false;
    if (options.empty() || coin(rng) < opt.pass_probability) continue;
    std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
    const Continuation& next = options[pick(rng)];
    const Mat normals = lat.split(hit->cluster, next.cluster).middle.basis();
    xi = xic + next.rho * detail::random_unit_in(normals, rng);
    a = next.cluster;
    s.breaks.push_back(hit->cluster);
    s.propagation.push_back(a);
    s.channels.push_back(next.channel);
    p.break_points.push_back(w);
  }
  p.outgoing = xi;
  return build_ray(s, lat, lambda, p);
}

enum class ViolationKind {
  StringViolation,
  ClusterViolation,
  EnergyMismatch,
  ForbiddenTangency,
  ContinuityViolation,
  ConservationViolation,
  MonotonicityViolation,
  CharacteristicViolation,
  EtaDichotomyViolation,
  DiniViolation,
};

inline std::string to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::StringViolation: return "StringViolation";
    case ViolationKind::ClusterViolation: return "ClusterViolation";
    case ViolationKind::EnergyMismatch: return "EnergyMismatch";
    case ViolationKind::ForbiddenTangency: return "ForbiddenTangency";
    case ViolationKind::ContinuityViolation: return "ContinuityViolation";
    case ViolationKind::ConservationViolation: return "ConservationViolation";
    case ViolationKind::MonotonicityViolation: return "MonotonicityViolation";
    case ViolationKind::CharacteristicViolation: return "CharacteristicViolation";
    case ViolationKind::EtaDichotomyViolation: return "EtaDichotomyViolation";
    case ViolationKind::DiniViolation: return "DiniViolation";
  }
  return "Unknown";
}

struct Violation {
  ViolationKind kind;
  int index;  // segment or break number, -1 for the whole ray
  double defect;
  std::string detail;
};

struct VerifyReport {
  std::vector<Violation> violations;
  int dini_checks = 0;
  double max_tau_increase = 0.0;
  double max_conservation_defect = 0.0;

  bool pass() const { return violations.empty(); }
  bool has(ViolationKind k) const {
    return std::any_of(violations.begin(), violations.end(), [k](const Violation& v) { return v.kind == k; });
  }
};

enum class VerifyMode { Structural, Dini };

struct VerifyOptions {
  double tol_conservation = 1e-9;
  double tol_energy = tol::energy;
  double tol_continuity = 1e-9;
  double tol_tau = 1e-9;
  double dini_h = 1e-4;
  int dini_half = 4;
};

// Test functions used by the Dini mode at a break on C_c.
inline std::vector<TestFunction> dini_library(const ClusterLattice& lat, ClusterId c, double sigma_max) {
  std::vector<TestFunction> lib;
  auto both = [&lib](const TestFunction& f) {
    lib.push_back(f);
    lib.push_back(negated(f));
  };
  both(tau_function(sigma_max));
  both(eta_function(lat.subspace(c), std::to_string(c), sigma_max));
  const Mat& basis = lat.subspace(c).basis();
  for (Eigen::Index k = 0; k < basis.cols(); ++k)
    both(momentum_coordinate(basis.col(k), std::to_string(c) + "." + std::to_string(k)));
  const int n = lat.ambient_dim();
  for (int k = 0; k < n; ++k) both(position_coordinate(Vec::Unit(n, k), std::to_string(k), sigma_max));
  return lib;
}

inline VerifyReport verify_ray(const BrokenRay& ray, const ClusterLattice& lat, const SpectralModel& model,
                               VerifyMode mode, const VerifyOptions& opt = {}) {
  VerifyReport rep;
  auto add = [&rep](ViolationKind k, int idx, double defect, std::string detail) {
    rep.violations.push_back({k, idx, defect, std::move(detail)});
  };
  const double lambda = ray.lambda;
  const BreakString& s = ray.string;
  const std::size_t m = s.breaks.size();
  if (ray.segments.size() != m + 1 || ray.breaks.size() != m || s.propagation.size() != m + 1 ||
      s.channels.size() != m + 1) {
    add(ViolationKind::StringViolation, -1, 0.0, "segment / break / string counts disagree");
    return rep;
  }
  const StringCheck sc = check_string(s, lat, lambda);
  if (!sc.ok) add(sc.tangency ? ViolationKind::ForbiddenTangency : ViolationKind::StringViolation, -1, 0.0, sc.reason);

  // Segments.
  for (std::size_t j = 0; j <= m; ++j) {
    const FlowSegment& seg = ray.segments[j];
    const int idx = static_cast<int>(j);
    if (seg.cluster() != s.propagation[j] || !(seg.channel() == s.channels[j]))
      add(ViolationKind::StringViolation, idx, 0.0, "segment labels differ from the string");
    const ClusterId a = seg.cluster();
    if (a < 0 || a >= lat.size()) continue;
    const double sigma = lambda - seg.channel().energy;
    const double e_defect = std::abs(seg.xi().squaredNorm() - sigma);
    if (e_defect > opt.tol_energy * std::max(1.0, std::abs(sigma)))
      add(ViolationKind::EnergyMismatch, idx, e_defect, "|xi|^2 differs from lambda - eps");
    const auto& ch_spec = model.pspec(seg.channel().cluster);
    if (std::none_of(ch_spec.begin(), ch_spec.end(),
                     [&](double e) { return std::abs(e - seg.channel().energy) <= opt.tol_energy; }))
      add(ViolationKind::EnergyMismatch, idx, 0.0, "channel energy not in pspec of its cluster");

    const Subspace& xa = lat.subspace(a);
    const Vec y_probe = seg.stationary() ? seg.direction_at(0.0) : Vec(seg.axis());
    const double off = std::max(xa.distance(seg.xi()), xa.distance(y_probe));
    if (off > tol::membership * std::max(1.0, seg.xi().norm())) {
      const bool tangential = (j > 0 && s.breaks[j - 1] == a) || (j < m && s.breaks[j] == a);
      add(tangential ? ViolationKind::ForbiddenTangency : ViolationKind::ClusterViolation, idx, off,
          tangential ? "tangential segment has a normal component" : "segment leaves X_a");
    } else {
      if (const auto b = tighter_cluster(seg, lat))
        add(ViolationKind::ForbiddenTangency, idx, 0.0,
            "segment labelled " + std::to_string(a) + " lies in C_" + std::to_string(*b));
    }
    if (seg.s_begin() > seg.s_end())
      add(ViolationKind::MonotonicityViolation, idx, seg.s_begin() - seg.s_end(), "phase runs backwards");
  }

  // Breaks.
  for (std::size_t j = 0; j < m; ++j) {
    const BreakRecord& br = ray.breaks[j];
    const int idx = static_cast<int>(j) + 1;
    const ClusterId c = br.cluster;
    if (c != s.breaks[j]) add(ViolationKind::StringViolation, idx, 0.0, "break label differs from the string");
    if (c < 0 || c >= lat.size()) continue;
    const Subspace& xc = lat.subspace(c);
    const double on_plane = xc.distance(br.point);
    if (on_plane > tol::membership * std::max(1.0, br.point.norm()))
      add(ViolationKind::ClusterViolation, idx, on_plane, "break point off X_c");
    const Vec yb = br.point.normalized();
    const FlowSegment& in = ray.segments[j];
    const FlowSegment& out = ray.segments[j + 1];
    const double gap_in = (in.direction_at(in.s_end()) - yb).norm();
    const double gap_out = (out.direction_at(out.s_begin()) - yb).norm();
    const double xi_gap = std::max((in.xi() - br.xi_in).norm(), (out.xi() - br.xi_out).norm());
    const double gap = std::max({gap_in, gap_out, xi_gap});
    if (gap > opt.tol_continuity) add(ViolationKind::ContinuityViolation, idx, gap, "curve does not join at the break");

    const double defect = br.conservation_defect(lat);
    rep.max_conservation_defect = std::max(rep.max_conservation_defect, defect);
    if (defect > opt.tol_conservation)
      add(ViolationKind::ConservationViolation, idx, defect, "pi_c xi changes across the break");

    const double tau_in = -yb.dot(br.xi_in);
    const double tau_out = -yb.dot(br.xi_out);
    rep.max_tau_increase = std::max(rep.max_tau_increase, tau_out - tau_in);
    if (tau_out - tau_in > opt.tol_tau)
      add(ViolationKind::MonotonicityViolation, idx, tau_out - tau_in, "tau increases across the break");

    const double closed = lambda - out.channel().energy - xc.project(br.xi_in).squaredNorm();
    if (closed < -opt.tol_energy) add(ViolationKind::EnergyMismatch, idx, -closed, "outgoing channel closed");

    // Normal legs leave (eta_c > 0 after) and arrive (eta_c < 0 before); tangential legs keep eta_c = 0.
    const TestFunction eta = eta_function(xc, std::to_string(c), 1.0);
    auto eta_at = [&](const FlowSegment& seg, bool near_end) {
      if (seg.stationary()) return eta.value(flow_point(seg, seg.s_begin()));
      const double len = seg.s_end() - seg.s_begin();
      const double d = std::min(1e-3, 0.5 * std::abs(len));
      return eta.value(flow_point(seg, near_end ? seg.s_end() - d : seg.s_begin() + d));
    };
    if (out.cluster() != c) {
      const double nu_out = (br.xi_out - xc.project(br.xi_out)).norm();
      const double e_after = eta_at(out, false);
      if (nu_out <= 1e-9 * std::max(1.0, br.xi_out.norm()))
        add(ViolationKind::ForbiddenTangency, idx, nu_out, "normal leg leaves without normal momentum");
      else if (!(e_after > 0.0))
        add(ViolationKind::EtaDichotomyViolation, idx, e_after, "eta_c not positive after the break");
    }
    if (in.cluster() != c) {
      const double e_before = eta_at(in, true);
      if (!(e_before < 0.0))
        add(ViolationKind::EtaDichotomyViolation, idx, e_before, "eta_c not negative before the break");
    }

    if (!char_variety_test(model, lat, lambda, br.compressed(lat), opt.tol_energy).member)
      add(ViolationKind::CharacteristicViolation, idx, 0.0, "break point outside the characteristic variety");
  }

  // tau along each segment and Sigma-dot membership at segment midpoints.
  for (std::size_t j = 0; j <= m; ++j) {
    const FlowSegment& seg = ray.segments[j];
    if (seg.stationary() || seg.s_begin() > seg.s_end()) continue;
    const double mid = 0.5 * (seg.s_begin() + seg.s_end());
    if (!char_variety_test(model, lat, lambda, flow_point(seg, mid), opt.tol_energy).member)
      add(ViolationKind::CharacteristicViolation, static_cast<int>(j), 0.0, "segment outside the characteristic variety");
  }

  if (mode == VerifyMode::Dini) {
    double sigma_max = 0.0;
    for (const auto& ch : model.channels()) sigma_max = std::max(sigma_max, lambda - ch.energy);
    for (std::size_t j = 0; j < m; ++j) {
      double span = kInf;
      for (std::size_t k : {j, j + 1}) span = std::min(span, ray.segments[k].t_end() - ray.segments[k].t_begin());
      const double h = std::min(opt.dini_h, span / (4.0 * opt.dini_half));
      SampledCurve curve;
      try {
        curve = sample_around_break(ray, lat, j, h, opt.dini_half);
      } catch (const Error&) {
        continue;  // malformed segments cannot be sampled; the structural report stands
      }
      const auto k0 = static_cast<std::size_t>(opt.dini_half);
      for (const auto& f : dini_library(lat, ray.breaks[j].cluster, sigma_max))
        for (Side side : {Side::Left, Side::Right}) {
          const DiniResult r = dini_check(curve, f, k0, side, model, lat, lambda);
          ++rep.dini_checks;
          if (!r.pass)
            add(ViolationKind::DiniViolation, static_cast<int>(j) + 1, r.rhs_inf - r.lhs,
                "DiniViolation(" + f.name + (side == Side::Left ? ", left)" : ", right)"));
        }
    }
  }
  return rep;
}

// Arclength against tau drop. The per-segment estimate
//   l_j <= C0 sigma_j^{-1/4} |dtau_j|^{1/2}
// sums (Cauchy-Schwarz) to  sum l_j <= C0 (sum sigma_j^{-1/2})^{1/2} |dtau|^{1/2}.
struct ArclengthTau {
  double length = 0.0;
  double tau_drop = 0.0;
  double bound = 0.0;          // square-root form above
  double bound_linear = 0.0;   // C0 (sum sigma_j^{-1})^{1/2} |dtau|
};

inline double arclength_constant() { return kPi / std::sqrt(2.0); }

inline ArclengthTau arclength_tau(const BrokenRay& ray) {
  ArclengthTau out;
  double inv_sqrt = 0.0;
  double inv = 0.0;
  for (const auto& seg : ray.segments) {
    if (seg.stationary() || !(seg.sigma() > 0.0)) continue;
    out.length += seg.length();
    out.tau_drop += seg.speed() * (std::cos(seg.s_begin()) - std::cos(seg.s_end()));
    inv_sqrt += 1.0 / seg.speed();
    inv += 1.0 / seg.sigma();
  }
  const double c0 = arclength_constant();
  out.bound = c0 * std::sqrt(inv_sqrt) * std::sqrt(std::abs(out.tau_drop));
  out.bound_linear = c0 * std::sqrt(inv) * std::abs(out.tau_drop);
  return out;
}

// Arclength positions of the breaks along the ray.
inline std::vector<double> break_positions(const BrokenRay& ray) {
  std::vector<double> pos;
  double acc = 0.0;
  for (std::size_t j = 0; j + 1 < ray.segments.size(); ++j) {
    acc += std::max(0.0, ray.segments[j].length());
    pos.push_back(acc);
  }
  return pos;
}

// Most breaks inside any closed arclength window of the given width.
inline int max_breaks_in_window(const BrokenRay& ray, double width) {
  const auto pos = break_positions(ray);
  int best = 0;
  std::size_t lo = 0;
  for (std::size_t hi = 0; hi < pos.size(); ++hi) {
    while (pos[hi] - pos[lo] > width) ++lo;
    best = std::max(best, static_cast<int>(hi - lo + 1));
  }
  return best;
}

// Lebesgue number of the cover of the sphere by the complements of
//   F_a = union of C_b over b with C_a not inside C_b,
// i.e. min over q of max over a of dist(q, F_a); returned halved.
inline double local_length(const ClusterLattice& lat, int samples = 20000, std::uint64_t seed = 7) {
  const int n = lat.ambient_dim();
  const auto spheres = lat.sphere_clusters();
  std::vector<Mat> inner;
  for (ClusterId b : spheres) inner.push_back(lat.subspace(b).basis());
  auto dist_to = [&](const Vec& q, std::size_t bi) {
    const Vec c = inner[bi].transpose() * q;
    const double along = c.norm();
    const double across = std::sqrt(std::max(0.0, q.squaredNorm() - along * along));
    return std::atan2(across, along);
  };
  auto cover_margin = [&](const Vec& q_raw) {
    const Vec q = q_raw.normalized();
    double worst = 0.0;
    for (std::size_t ai = 0; ai < spheres.size(); ++ai) {
      double d = kPi;
      for (std::size_t bi = 0; bi < spheres.size(); ++bi)
        if (!lat.sphere_within(spheres[ai], spheres[bi])) d = std::min(d, dist_to(q, bi));
      worst = std::max(worst, d);
    }
    return worst;
  };
  if (n == 1) return 0.5 * kPi;

  std::vector<Vec> starts;
  if (n == 2) {
    for (int k = 0; k < samples; ++k) {
      const double th = 2.0 * kPi * k / samples;
      Vec q(2);
      q << std::cos(th), std::sin(th);
      starts.push_back(q);
    }
  } else {
    Rng rng(seed);
    for (int k = 0; k < samples; ++k) starts.push_back(detail::random_unit_in(Mat::Identity(n, n), rng));
  }
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t k = 0; k < starts.size(); ++k) ranked.emplace_back(cover_margin(starts[k]), k);
  std::sort(ranked.begin(), ranked.end());
  double best = ranked.front().first;
  // Pattern search from the lowest samples.
  const std::size_t seeds = std::min<std::size_t>(16, ranked.size());
  const double start_step = n == 2 ? 2.0 * kPi / samples : 0.2;
  for (std::size_t r = 0; r < seeds; ++r) {
    Vec q = starts[ranked[r].second];
    double val = ranked[r].first;
    for (double step = start_step; step > 1e-12; step *= 0.5) {
      bool moved = true;
      while (moved) {
        moved = false;
        for (int k = 0; k < n; ++k)
          for (double sgn : {-1.0, 1.0}) {
            Vec trial = q;
            trial(k) += sgn * step;
            trial.normalize();
            const double v = cover_margin(trial);
            if (v < val) {
              val = v;
              q = trial;
              moved = true;
            }
          }
      }
    }
    best = std::min(best, val);
  }
  return 0.5 * best;
}

struct BoundOptions {
  double window_lo = 0.0;  // energy window for C_1; defaults to {lambda}
  double window_hi = 0.0;
  bool window_set = false;
  int sphere_samples = 20000;
  std::optional<int> assumed_levels;  // non-discrete thresholds: number of kinetic levels assumed
};

struct BoundReport {
  double l = 0.0;
  double c0 = 0.0;
  int c1 = 0;
  double m_n = 0.0;
  double m_sub = 0.0;  // max over proper subsystems
  int body_count = 0;
  std::vector<std::pair<ClusterId, double>> subsystem_m;  // (a, M for H^a)
};

inline BoundReport bound_constants(const ClusterLattice& lat, const SpectralModel& model, double lambda,
                                   const BoundOptions& opt = {}) {
  if (!model.discrete() && !opt.assumed_levels)
    throw Error(ErrorKind::NotDiscrete, "bounds need a discrete threshold set or an assumed level count");
  BoundReport rep;
  rep.c0 = arclength_constant();
  rep.body_count = lat.body_count();
  const double sup = opt.window_set ? opt.window_hi : lambda;
  if (opt.assumed_levels) {
    rep.c1 = *opt.assumed_levels;
  } else {
    for (double e : model.global_thresholds())
      if (e <= sup) ++rep.c1;
  }

  std::map<ClusterId, double> memo;
  auto m_of = [&](auto&& self, ClusterId a, const ClusterLattice& sub, int c1) -> double {
    const int bc = sub.body_count();
    if (bc <= 2) return 0.0;
    const double l = local_length(sub, opt.sphere_samples);
    if (bc == 3) return 3.0 * (kPi / l + 1.0);
    double inner = 0.0;
    for (ClusterId b = 0; b < lat.size(); ++b) {
      if (b == kFreeCluster || b == a || !lat.less(b, a)) continue;
      auto it = memo.find(b);
      if (it == memo.end()) {
        const double mb = self(self, b, lat.subsystem(b), static_cast<int>(model.thresholds(b).size()));
        it = memo.emplace(b, mb).first;
      }
      inner = std::max(inner, it->second);
    }
    return (c1 * kPi / l + 1.0) * (2.0 * inner + 3.0);
  };
  rep.l = rep.body_count >= 3 ? local_length(lat, opt.sphere_samples) : 0.5 * kPi;
  rep.m_n = m_of(m_of, kTotalCluster, lat, rep.c1);
  for (ClusterId b = 0; b < lat.size(); ++b) {
    if (b == kFreeCluster || b == kTotalCluster) continue;
    auto it = memo.find(b);
    const double mb = it != memo.end()
                          ? it->second
                          : m_of(m_of, b, lat.subsystem(b), static_cast<int>(model.thresholds(b).size()));
    memo[b] = mb;
    rep.subsystem_m.emplace_back(b, mb);
    rep.m_sub = std::max(rep.m_sub, mb);
  }
  return rep;
}

// Incoming data zeta = (omega, theta) on S*C'_a; theta is empty when C_a is zero-dimensional.
struct SpherePoint {
  Vec omega;
  Vec theta;
};

struct RelationEntry {
  Channel incoming;
  SpherePoint zeta;
  Channel outgoing;
  ClusterId outgoing_cluster = kFreeCluster;
  SpherePoint zeta_out;  // omega' = limit direction, theta' = limit tangent
  std::size_t witness = 0;
};

struct RelationOptions {
  int samples = 100;
  int continuations = 4;
  SimulationOptions sim;
  std::uint64_t seed = 1;
};

struct RelationTable {
  std::vector<RelationEntry> entries;
  std::vector<BrokenRay> witnesses;
  int rays_tried = 0;
};

// The outgoing data of a ray's last leg.
inline SpherePoint outgoing_data(const BrokenRay& ray) {
  const FlowSegment& last = ray.segments.back();
  if (last.stationary()) return {last.direction_at(0.0), Vec()};
  return {last.direction(), last.axis()};
}

inline LegStart incoming_leg(const Channel& alpha, const SpherePoint& zeta, double lambda) {
  const double sigma = lambda - alpha.energy;
  if (!(sigma > 0.0)) throw Error(ErrorKind::ChannelClosed, "incoming channel closed");
  LegStart st;
  st.cluster = alpha.cluster;
  st.channel = alpha;
  st.from_infinity = true;
  st.xi = -std::sqrt(sigma) * zeta.omega;
  st.point = zeta.theta.size() > 0 ? Vec(zeta.theta) : Vec(zeta.omega);
  return st;
}

inline RelationTable channel_relation(const ClusterLattice& lat, const SpectralModel& model, const Channel& alpha,
                                      const Channel& beta, double lambda, const RelationOptions& opt) {
  if (!model.discrete()) throw Error(ErrorKind::NotDiscrete, "threshold set is not discrete");
  if (!(lambda > alpha.energy) || !(lambda > beta.energy))
    throw Error(ErrorKind::ChannelClosed, "lambda must exceed both channel energies");
  const ClusterId a = alpha.cluster;
  if (lat.dim(a) == 0) throw Error(ErrorKind::InvalidInput, "incoming channel on the zero subspace");
  const HitFinder finder(lat);
  RelationTable table;
  Rng rng(opt.seed);
  const Mat& basis = lat.subspace(a).basis();
  for (int k = 0; k < opt.samples; ++k) {
    SpherePoint zeta;
    do {
      zeta.omega = detail::random_unit_in(basis, rng);
    } while (lat.stratum(zeta.omega) != a);
    if (basis.cols() > 1) {
      const Vec raw = detail::random_in(basis, rng);
      zeta.theta = (raw - raw.dot(zeta.omega) * zeta.omega).normalized();
    }
    for (int r = 0; r < opt.continuations; ++r) {
      ++table.rays_tried;
      BrokenRay ray = simulate_ray(lat, model, lambda, incoming_leg(alpha, zeta, lambda), rng, opt.sim, &finder);
      if (ray.string.propagation.back() != beta.cluster || !(ray.string.channels.back() == beta)) continue;
      RelationEntry e{alpha, zeta, beta, beta.cluster, outgoing_data(ray), table.witnesses.size()};
      table.witnesses.push_back(std::move(ray));
      table.entries.push_back(std::move(e));
    }
  }
  return table;
}

struct ImagePoint {
  CompressedPoint point;
  bool closure = false;  // radial limit added by closure, not attained in finite time
  std::size_t witness = 0;
};

struct ForwardImageOptions {
  int continuations = 8;  // simulated rays per seed continuation; later breaks choose at random
  double phase_step = 0.05;
  double eps = 0.1;
  SimulationOptions sim;
  std::uint64_t seed = 1;
};

struct ForwardImage {
  std::vector<ImagePoint> points;
  std::vector<BrokenRay> witnesses;
  std::vector<std::string> warnings;
};

inline ForwardImage forward_image(const ClusterLattice& lat, const SpectralModel& model, double lambda,
                                  const std::vector<CompressedPoint>& seeds, const ForwardImageOptions& opt) {
  if (!model.discrete()) throw Error(ErrorKind::NotDiscrete, "threshold set is not discrete");
  ForwardImage img;
  if (opt.phase_step > opt.eps)
    img.warnings.push_back("ResolutionWarning: phase step " + std::to_string(opt.phase_step) + " exceeds eps " +
                           std::to_string(opt.eps));
  const HitFinder finder(lat);
  Rng rng(opt.seed);
  for (const auto& x0 : seeds) {
    if (!char_variety_test(model, lat, lambda, x0).member)
      throw Error(ErrorKind::InvalidInput, "seed point outside the characteristic variety");
    const auto options = continuations(lat, model, lambda, x0.cluster, x0.xi, true);
    for (const auto& opt_next : options) {
      const Mat normals = lat.split(x0.cluster, opt_next.cluster).middle.basis();
      const bool spread = opt_next.rho > 0.0 && normals.cols() > 0;
      for (int r = 0; r < opt.continuations; ++r) {
        LegStart st;
        st.cluster = opt_next.cluster;
        st.channel = opt_next.channel;
        st.point = x0.y;
        st.from_infinity = false;
        st.xi = x0.xi;
        if (spread) st.xi += opt_next.rho * detail::random_unit_in(normals, rng);
        BrokenRay ray;
        try {
          ray = simulate_ray(lat, model, lambda, st, rng, opt.sim, &finder);
        } catch (const Error& e) {
          img.warnings.push_back(std::string("skipped continuation: ") + e.what());
          continue;
        }
        const std::size_t wid = img.witnesses.size();
        for (std::size_t j = 0; j < ray.segments.size(); ++j) {
          const FlowSegment& seg = ray.segments[j];
          if (seg.stationary()) {
            img.points.push_back({flow_point(seg, seg.s_begin()), false, wid});
          } else {
            const double lo = seg.s_begin();
            const double hi = seg.to_infinity() ? kPi - tol::guard_band : seg.s_end();
            const int steps = std::max(1, static_cast<int>(std::ceil((hi - lo) / opt.phase_step)));
            for (int k = 0; k <= steps; ++k) img.points.push_back({flow_point(seg, lo + (hi - lo) * k / steps), false, wid});
            if (seg.to_infinity()) img.points.push_back({flow_point(seg, kPi), true, wid});
          }
          if (j < ray.breaks.size()) img.points.push_back({ray.breaks[j].compressed(lat), false, wid});
        }
        img.witnesses.push_back(std::move(ray));
      }
    }
  }
  return img;
}

// The part of a ray inside the subsystem on X^a: valid when every break cluster contains X_a.
struct SubsystemRay {
  ClusterLattice lattice;
  SpectralModel model;
  BrokenRay ray;
};

inline SubsystemRay project_to_subsystem(const BrokenRay& ray, const ClusterLattice& lat, const SpectralModel& model,
                                         ClusterId a) {
  const Subspace internal = lat.subspace(a).orthocomplement();
  const Mat& q = internal.basis();
  SubsystemRay out{lat.subsystem(a), {}, {}};
  auto local_cluster = [&](ClusterId b) {
    if (!lat.sphere_within(a, b))
      throw Error(ErrorKind::InvalidInput, "cluster " + std::to_string(b) + " does not contain X_a");
    const Subspace part = lat.subspace(b).intersect(internal);
    const Mat local = q.transpose() * part.basis();
    const auto hit = out.lattice.find(local.cols() > 0 ? Subspace::from_spanning(local) : Subspace::zero(q.cols()));
    if (!hit) throw Error(ErrorKind::InvalidInput, "no subsystem cluster for " + std::to_string(b));
    return *hit;
  };
  std::vector<Channel> chans;
  for (const auto& ch : model.channels())
    if (ch.cluster != kTotalCluster && lat.sphere_within(a, ch.cluster))
      chans.push_back({local_cluster(ch.cluster), ch.index, ch.energy});
  out.model = SpectralModel(out.lattice, chans, model.discrete());

  // The X_a part of the momentum is conserved at every break, so it carries a fixed energy.
  const Vec ext = lat.subspace(a).project(ray.segments.front().xi());
  const double lambda_int = ray.lambda - ext.squaredNorm();
  BreakString s;
  for (std::size_t j = 0; j < ray.string.propagation.size(); ++j) {
    s.propagation.push_back(local_cluster(ray.string.propagation[j]));
    const Channel& ch = ray.string.channels[j];
    s.channels.push_back({local_cluster(ch.cluster), ch.index, ch.energy});
  }
  for (ClusterId c : ray.string.breaks) s.breaks.push_back(local_cluster(c));
  RayParameters p;
  for (const auto& br : ray.breaks) {
    p.break_points.push_back(q.transpose() * br.point);
    if (p.break_points.back().norm() <= 1e-6 * br.point.norm())
      throw Error(ErrorKind::DegenerateSegment, "break on C_a has no image in the subsystem");
  }
  p.incoming = q.transpose() * ray.segments.front().xi();
  p.outgoing = q.transpose() * ray.segments.back().xi();
  if (ray.breaks.empty()) p.through = q.transpose() * ray.segments.front().direction_at(kPi / 2);
  p.stationary_duration = ray.segments.front().duration() > 0.0 ? ray.segments.front().duration() : 1.0;
  out.ray = build_ray(s, out.lattice, lambda_int, p);
  return out;
}

}  // namespace brokenray
