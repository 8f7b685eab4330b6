#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "brokenray/phase_space.hpp"

namespace brokenray {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

// One Hamilton arc over C'_a. Moving arcs follow the great circle
//   y(s) = -cos(s) d + sin(s) m,   xi = sqrt(sigma) d,
// with s measured from the incoming radial point (s0 = 0), so tau = sqrt(sigma) cos(s).
// s_begin = 0 and s_end = pi are limit records for legs coming from / going to infinity.
// Stationary arcs sit at a radial point (or have sigma = 0) for `duration` units of t.
class FlowSegment {
 public:
  enum class Kind { Moving, Stationary };

  FlowSegment() = default;

  // Forward arc from an anchor (y0, xi0); runs to the outgoing radial limit unless truncated.
  static FlowSegment from_anchor(ClusterId a, const Channel& ch, double lambda, const Vec& y0, const Vec& xi0,
                                 double stationary_duration = 1.0) {
    const double sigma = checked_sigma(ch, lambda);
    if (std::abs(xi0.squaredNorm() - sigma) > tol::energy)
      throw Error(ErrorKind::EnergyMismatch, "|xi0|^2 = " + std::to_string(xi0.squaredNorm()) +
                                                 " but lambda - eps = " + std::to_string(sigma));
    if (std::abs(y0.norm() - 1.0) > tol::membership) throw Error(ErrorKind::NotUnitVector, "anchor direction");
    FlowSegment seg = blank(a, ch, lambda);
    const Vec mu = xi0 - y0.dot(xi0) * y0;
    if (sigma <= 0.0 || mu.norm() <= 1e-12 * std::max(1.0, xi0.norm()))
      return seg.make_rest(y0, xi0, stationary_duration);
    seg.dir_ = xi0.normalized();
    seg.axis_ = (y0 - y0.dot(seg.dir_) * seg.dir_).normalized();
    seg.s_begin_ = linalg::angle_between(y0, -seg.dir_);
    seg.s_end_ = kPi;
    return seg;
  }

  // Arc traced by the straight line from w_from to w_to in X_a.
  static FlowSegment chord(ClusterId a, const Channel& ch, double lambda, const Vec& w_from, const Vec& w_to,
                           double stationary_duration = 1.0) {
    const double sigma = checked_sigma(ch, lambda);
    if (!(sigma > 0.0)) throw Error(ErrorKind::DegenerateSegment, "zero kinetic energy on a chord");
    const Vec step = w_to - w_from;
    const double scale = std::max(w_from.norm(), w_to.norm());
    if (!(step.norm() > 1e-12 * std::max(1.0, scale)))
      throw Error(ErrorKind::DegenerateSegment, "coincident endpoints");
    FlowSegment seg = blank(a, ch, lambda);
    const Vec d = step.normalized();
    const Vec m = w_to - w_to.dot(d) * d;
    if (m.norm() <= 1e-12 * std::max(1.0, scale)) {
      if (w_from.dot(w_to) <= 0.0) throw Error(ErrorKind::DegenerateSegment, "chord passes through the origin");
      return seg.make_rest(w_to.normalized(), std::sqrt(sigma) * d, stationary_duration);
    }
    seg.dir_ = d;
    seg.axis_ = m.normalized();
    seg.s_begin_ = linalg::angle_between(w_from, -d);
    seg.s_end_ = linalg::angle_between(w_to, -d);
    return seg;
  }

  // Full half circle leaving the incoming radial point omega in the direction theta.
  static FlowSegment incoming(ClusterId a, const Channel& ch, double lambda, const Vec& omega, const Vec& theta) {
    const double sigma = checked_sigma(ch, lambda);
    if (!(sigma > 0.0)) throw Error(ErrorKind::DegenerateSegment, "zero kinetic energy on an incoming leg");
    FlowSegment seg = blank(a, ch, lambda);
    seg.dir_ = -omega.normalized();
    seg.axis_ = (theta - theta.dot(seg.dir_) * seg.dir_).normalized();
    seg.s_begin_ = 0.0;
    seg.s_end_ = kPi;
    return seg;
  }

  static FlowSegment at_rest(ClusterId a, const Channel& ch, double lambda, const Vec& y, const Vec& xi,
                             double duration) {
    checked_sigma(ch, lambda);
    return blank(a, ch, lambda).make_rest(y, xi, duration);
  }

  // Same circle, different phase window.
  FlowSegment truncated(double s_from, double s_to) const {
    if (kind_ != Kind::Moving) throw Error(ErrorKind::InvalidInput, "cannot truncate a stationary segment");
    if (!(s_from >= 0.0 && s_to <= kPi && s_from <= s_to))
      throw Error(ErrorKind::ParameterOutOfRange, "phase window outside [0, pi]");
    FlowSegment seg = *this;
    seg.s_begin_ = s_from;
    seg.s_end_ = s_to;
    return seg;
  }

  Kind kind() const { return kind_; }
  bool stationary() const { return kind_ == Kind::Stationary; }
  ClusterId cluster() const { return cluster_; }
  const Channel& channel() const { return channel_; }
  double lambda() const { return lambda_; }
  double sigma() const { return lambda_ - channel_.energy; }
  double speed() const { return std::sqrt(std::max(0.0, sigma())); }
  const Vec& direction() const { return dir_; }
  const Vec& axis() const { return axis_; }
  Vec xi() const { return stationary() ? rest_xi_ : Vec(speed() * dir_); }
  double s_begin() const { return s_begin_; }
  double s_end() const { return s_end_; }
  double length() const { return s_end_ - s_begin_; }
  double duration() const { return duration_; }
  bool from_infinity() const { return !stationary() && s_begin_ == 0.0; }
  bool to_infinity() const { return !stationary() && s_end_ == kPi; }

  Vec direction_at(double s) const {
    if (stationary()) return rest_y_;
    return -std::cos(s) * dir_ + std::sin(s) * axis_;
  }

  // Phase at which t = 0: the segment start when finite, else its end, else the equator.
  double reference_phase() const {
    if (s_begin_ > 0.0) return s_begin_;
    if (s_end_ < kPi) return s_end_;
    return kPi / 2.0;
  }

  // Local time of a phase; -inf / +inf at the radial limits.
  double time_at(double s) const {
    if (stationary()) return 0.0;
    if (s <= 0.0) return -kInf;
    if (s >= kPi) return kInf;
    return std::log(half_tan(s) / half_tan(reference_phase())) / (2.0 * speed());
  }
  double t_begin() const { return stationary() ? 0.0 : time_at(s_begin_); }
  double t_end() const { return stationary() ? duration_ : time_at(s_end_); }

 private:
  static double checked_sigma(const Channel& ch, double lambda) {
    const double sigma = lambda - ch.energy;
    if (sigma < -tol::energy)
      throw Error(ErrorKind::ChannelClosed, "lambda - eps = " + std::to_string(sigma) + " < 0");
    return std::max(0.0, sigma);
  }

  static FlowSegment blank(ClusterId a, const Channel& ch, double lambda) {
    FlowSegment seg;
    seg.cluster_ = a;
    seg.channel_ = ch;
    seg.lambda_ = lambda;
    return seg;
  }

  FlowSegment make_rest(const Vec& y, const Vec& xi, double duration) {
    if (!(duration >= 0.0)) throw Error(ErrorKind::ParameterOutOfRange, "negative stationary duration");
    kind_ = Kind::Stationary;
    rest_y_ = y.normalized();
    rest_xi_ = xi;
    const double tau = -rest_y_.dot(xi);
    s_begin_ = s_end_ = (tau >= 0.0) ? 0.0 : kPi;
    duration_ = duration;
    dir_ = xi.norm() > 0.0 ? Vec(xi.normalized()) : Vec(Vec::Zero(xi.size()));
    axis_ = Vec::Zero(xi.size());
    return *this;
  }

  static double half_tan(double s) { return std::sin(s) / (1.0 + std::cos(s)); }

  Kind kind_ = Kind::Moving;
  ClusterId cluster_ = kFreeCluster;
  Channel channel_;
  double lambda_ = 0.0;
  Vec dir_;
  Vec axis_;
  Vec rest_y_;
  Vec rest_xi_;
  double s_begin_ = 0.0;
  double s_end_ = 0.0;
  double duration_ = 0.0;
};

inline CompressedPoint flow_point(const FlowSegment& seg, double s) {
  if (seg.stationary()) return {seg.cluster(), seg.direction_at(s), seg.xi()};
  const double slack = 1e-12;
  if (s < seg.s_begin() - slack || s > seg.s_end() + slack)
    throw Error(ErrorKind::ParameterOutOfRange,
                "s = " + std::to_string(s) + " outside [" + std::to_string(seg.s_begin()) + ", " +
                    std::to_string(seg.s_end()) + "]");
  return {seg.cluster(), seg.direction_at(s), seg.xi()};
}

// dS/dt = 2 sqrt(sigma) sin S integrates to tan(S/2) = tan(S_ref/2) exp(2 sqrt(sigma) t).
inline double reparametrize_time(const FlowSegment& seg, double t) {
  if (!(seg.sigma() > 0.0)) throw Error(ErrorKind::ZeroSpeed, "sigma = 0 segment has no arclength clock");
  if (seg.stationary()) {
    if (t < -1e-12 || t > seg.duration() + 1e-12) throw Error(ErrorKind::ParameterOutOfRange, "t outside duration");
    return seg.s_begin();
  }
  const double lo = seg.t_begin();
  const double hi = seg.t_end();
  const double slack = 1e-12 * std::max(1.0, std::abs(t));
  if (t < lo - slack || t > hi + slack) throw Error(ErrorKind::ParameterOutOfRange, "t outside segment time range");
  const double ref = seg.reference_phase();
  const double s = 2.0 * std::atan(std::tan(ref / 2.0) * std::exp(2.0 * seg.speed() * t));
  return std::clamp(s, seg.s_begin(), seg.s_end());
}

// scHg^b tau at a fiber point.
inline double deriv_tau(const FiberPoint& p) { return -2.0 * (p.base.mu().squaredNorm() + p.nu.squaredNorm()); }

// scHg^b eta_a at z_a = 0 (x_a / x = 1).
inline double deriv_eta(const FiberPoint& p, double eta) {
  return 2.0 * p.base.tau() * eta + 2.0 * p.nu.squaredNorm();
}

// A pi-invariant test function: its value on compressed points and its Hamilton derivative
// on fiber points. `normal_gradient` is the coefficient of the part of the field linear in nu.
struct TestFunction {
  std::string name;
  std::function<double(const CompressedPoint&)> value;
  std::function<double(const FiberPoint&)> field;
  Vec normal_gradient;
  double lipschitz = 1.0;
};

inline TestFunction negated(const TestFunction& f) {
  TestFunction g;
  g.name = f.name.rfind('-', 0) == 0 ? f.name.substr(1) : "-" + f.name;
  g.value = [v = f.value](const CompressedPoint& p) { return -v(p); };
  g.field = [d = f.field](const FiberPoint& p) { return -d(p); };
  if (f.normal_gradient.size() > 0) g.normal_gradient = -f.normal_gradient;
  g.lipschitz = f.lipschitz;
  return g;
}

inline TestFunction tau_function(double sigma_max) {
  return {"tau", [](const CompressedPoint& p) { return p.tau(); }, [](const FiberPoint& p) { return deriv_tau(p); },
          Vec(), 2.0 * sigma_max};
}

// eta_c = (pi^c y . pi^c xi) / |pi_c y|; the field formula holds on C_c.
inline TestFunction eta_function(const Subspace& xc, const std::string& label, double sigma_max) {
  return {"eta_" + label,
          [xc](const CompressedPoint& p) {
            const Vec yin = p.y - xc.project(p.y);
            const Vec xin = p.xi - xc.project(p.xi);
            const double ext = xc.project(p.y).norm();
            return ext > 0.0 ? yin.dot(xin) / ext : 0.0;
          },
          [](const FiberPoint& p) { return deriv_eta(p, 0.0); }, Vec(), 4.0 * sigma_max};
}

// e . xi_c for e in X_c; conserved by every field, so its Dini test probes conservation.
inline TestFunction momentum_coordinate(const Vec& e, const std::string& label) {
  return {"xi_" + label, [e](const CompressedPoint& p) { return e.dot(p.xi); }, [](const FiberPoint&) { return 0.0; },
          Vec(), 1.0};
}

// e . y; scHg^b (e . y) = 2 e . (mu_a + nu).
inline TestFunction position_coordinate(const Vec& e, const std::string& label, double sigma_max) {
  return {"y_" + label, [e](const CompressedPoint& p) { return e.dot(p.y); },
          [e](const FiberPoint& p) { return 2.0 * e.dot(p.base.mu() + p.nu); }, Vec(2.0 * e),
          2.0 * std::sqrt(std::max(0.0, sigma_max))};
}

// inf of f.field over pi_b^{-1}(p) at energy lambda. +inf when the fiber is empty.
inline double fiber_infimum(const SpectralModel& model, const ClusterLattice& lat, double lambda,
                            const CompressedPoint& p, const TestFunction& f) {
  double best = kInf;
  for (const auto& win : fiber_preimage(model, lat, lambda, lambda, p)) {
    const double rho = std::sqrt(std::max(0.0, win.normal_sq_max));
    FiberPoint fp{p, win.cluster, win.energy, Vec::Zero(p.y.size())};
    const Mat normals = win.cluster == p.cluster ? Mat(p.y.size(), 0) : lat.split(p.cluster, win.cluster).middle.basis();
    if (rho == 0.0 || normals.cols() == 0) {
      best = std::min(best, f.field(fp));
      continue;
    }
    std::vector<Vec> candidates;
    for (Eigen::Index k = 0; k < normals.cols(); ++k) {
      candidates.push_back(rho * normals.col(k));
      candidates.push_back(-rho * normals.col(k));
    }
    if (f.normal_gradient.size() > 0) {
      const Vec g = normals * (normals.transpose() * f.normal_gradient);
      if (g.norm() > 0.0) {
        candidates.push_back(rho * g.normalized());
        candidates.push_back(-rho * g.normalized());
      }
    }
    for (const auto& nu : candidates) {
      fp.nu = nu;
      best = std::min(best, f.field(fp));
    }
  }
  return best;
}

// Uniform samples t_k = t_start + k h of a curve in the compressed phase space.
struct SampledCurve {
  double t_start = 0.0;
  double h = 0.0;
  std::vector<CompressedPoint> points;

  double time(std::size_t k) const { return t_start + static_cast<double>(k) * h; }
};

enum class Side { Left = -1, Right = 1 };

struct DiniResult {
  double lhs = 0.0;
  double rhs_inf = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::vector<double> window_quotients;  // difference quotients over h, 2h, 4h, ...
};

// One-sided lower Dini derivative of f along the curve at sample k0 against the fiber infimum.
// The estimate extrapolates the two smallest dyadic quotients (first-order error cancels).
inline DiniResult dini_check(const SampledCurve& curve, const TestFunction& f, std::size_t k0, Side side,
                             const SpectralModel& model, const ClusterLattice& lat, double lambda, int levels = 3) {
  if (levels < 2) throw Error(ErrorKind::ParameterOutOfRange, "need at least two dyadic windows");
  const long reach = 1L << (levels - 1);
  const long sgn = static_cast<long>(side);
  const long last = static_cast<long>(k0) + sgn * reach;
  if (k0 >= curve.points.size() || last < 0 || last >= static_cast<long>(curve.points.size()))
    throw Error(ErrorKind::SideUnavailable, std::string("no samples to the ") + (sgn > 0 ? "right" : "left") +
                                                " of index " + std::to_string(k0));
  DiniResult out;
  const double f0 = f.value(curve.points[k0]);
  for (int j = 0; j < levels; ++j) {
    const long step = 1L << j;
    const auto k = static_cast<std::size_t>(static_cast<long>(k0) + sgn * step);
    const double dt = static_cast<double>(sgn * step) * curve.h;
    out.window_quotients.push_back((f.value(curve.points[k]) - f0) / dt);
  }
  out.lhs = 2.0 * out.window_quotients[0] - out.window_quotients[1];
  out.rhs_inf = fiber_infimum(model, lat, lambda, curve.points[k0], f);
  out.tolerance = 10.0 * curve.h * std::max(1.0, f.lipschitz);
  out.pass = out.lhs >= out.rhs_inf - out.tolerance;
  return out;
}

}  // namespace brokenray
