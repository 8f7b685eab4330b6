// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

#include "oracles/gap_grid.hpp"
#include "sampling.hpp"

using namespace brokenray;
using fixture::World;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Random incoming data on an open channel whose cluster has a sphere.
LegStart random_start(const World& w, double lambda, Rng& rng) {
  std::vector<Channel> open;
  for (const auto& ch : w.model.channels())
    if (lambda > ch.energy && w.lat.dim(ch.cluster) > 0) open.push_back(ch);
  std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
  const Channel alpha = open[pick(rng)];
  const Mat& basis = w.lat.subspace(alpha.cluster).basis();
  SpherePoint zeta;
  do {
    zeta.omega = detail::random_unit_in(basis, rng);
  } while (w.lat.stratum(zeta.omega) != alpha.cluster);
  if (basis.cols() > 1) {
    const Vec raw = detail::random_in(basis, rng);
    zeta.theta = (raw - raw.dot(zeta.omega) * zeta.omega).normalized();
  }
  return incoming_leg(alpha, zeta, lambda);
}

std::vector<BrokenRay> simulated_rays(const World& w, double lambda, int count, std::uint64_t seed, int max_breaks,
                                      int min_segments = 1) {
  std::vector<BrokenRay> out;
  Rng rng(seed);
  const HitFinder finder(w.lat);
  SimulationOptions opt;
  opt.max_breaks = max_breaks;
  while (static_cast<int>(out.size()) < count) {
    BrokenRay ray = simulate_ray(w.lat, w.model, lambda, random_start(w, lambda, rng), rng, opt, &finder);
    if (static_cast<int>(ray.segments.size()) >= min_segments) out.push_back(std::move(ray));
  }
  return out;
}

World three_body() { return fixture::particles(3, -0.5); }
World four_body() { return fixture::particles(4, -0.5, -1.2); }

Outcome free_relation() {
  const auto w = fixture::free_space(3);
  RelationOptions opt;
  opt.samples = 500;
  opt.continuations = 2;
  opt.seed = 101;
  const auto table = channel_relation(w.lat, w.model, fixture::free_channel(), fixture::free_channel(), 1.0, opt);
  double worst = 0.0, spread = 0.0;
  int breaks = 0;
  for (std::size_t k = 0; k < table.entries.size(); ++k) {
    const auto& e = table.entries[k];
    worst = std::max(worst, std::abs(linalg::angle_between(e.zeta.omega, e.zeta_out.omega) - kPi));
    breaks += table.witnesses[e.witness].string.break_count();
    if (k % 2 == 1) spread = std::max(spread, (e.zeta_out.omega - table.entries[k - 1].zeta_out.omega).norm());
  }
  const bool ok = table.entries.size() == 1000 && worst <= 1e-9 && spread <= 1e-12 && breaks == 0;
  return {ok, fmt("%zu entries over 500 zeta, max |dist - pi| = %.3g, max spread between continuations = %.3g",
                  table.entries.size(), worst, spread)};
}

Outcome three_body_length() {
  const auto w = three_body();
  const auto b = bound_constants(w.lat, w.model, 1.0);
  const auto strings = enumerate_strings(w.lat, w.model, 1.0, 4);
  Rng rng(202);
  int rays = 0, infeasible = 0;
  double per_energy = 0.0, total = 0.0;
  for (const auto& s : strings) {
    bool any = false;
    for (int draw = 0; draw < 3; ++draw) {
      const auto r = realize_string(s, w.lat, 1.0, rng, 4);
      if (!r.ray) continue;
      any = true;
      ++rays;
      total = std::max(total, length_of(*r.ray));
      for (const auto& [sigma, len] : sublengths_by_energy(*r.ray)) per_energy = std::max(per_energy, len);
    }
    infeasible += !any;
  }
  const bool ok = b.c1 == 2 && rays > 0 && per_energy <= kPi + 1e-9 && total <= b.c1 * kPi + 1e-9;
  return {ok, fmt("%zu strings, %d rays, %d strings infeasible; max per-energy length %.6f (pi = %.6f), "
                  "max total %.6f (C1 pi = %.6f)",
                  strings.size(), rays, infeasible, per_energy, kPi, total, b.c1 * kPi)};
}

Outcome tau_and_conservation() {
  double tau_jump = 0.0, tau_flow = 0.0, defect = 0.0;
  int count = 0, breaks = 0;
  for (const auto& [w, seed] : {std::pair{three_body(), 303u}, std::pair{four_body(), 304u}}) {
    for (const auto& ray : simulated_rays(w, 1.0, 5000, seed, 6)) {
      const auto rep = verify_ray(ray, w.lat, w.model, VerifyMode::Structural);
      tau_jump = std::max(tau_jump, rep.max_tau_increase);
      defect = std::max(defect, rep.max_conservation_defect);
      breaks += ray.string.break_count();
      const auto curve = sample_ray(ray, w.lat, 48);
      for (std::size_t k = 1; k < curve.points.size(); ++k)
        tau_flow = std::max(tau_flow, curve.points[k].tau() - curve.points[k - 1].tau());
      ++count;
    }
  }
  const double tau_up = std::max(tau_jump, tau_flow);
  const bool ok = count == 10000 && tau_up <= 1e-9 && defect <= 1e-12;
  return {ok, fmt("%d rays, %d breaks; max tau increase %.3g (at breaks %.3g, along samples %.3g), "
                  "max conservation defect %.3g",
                  count, breaks, tau_up, tau_jump, tau_flow, defect)};
}

Outcome arclength_tau_bound() {
  int rays = 0, linear_fail = 0, sqrt_fail = 0, window_linear_fail = 0, window_sqrt_fail = 0;
  double slack = kInf;
  std::mt19937_64 rng(405);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& [w, seed] : {std::pair{three_body(), 401u}, std::pair{four_body(), 402u}}) {
    for (const auto& ray : simulated_rays(w, 1.0, 500, seed, 6, 2)) {
      const auto at = arclength_tau(ray);
      ++rays;
      linear_fail += at.length > at.bound_linear + 1e-9;
      sqrt_fail += at.length > at.bound + 1e-9;
      slack = std::min(slack, at.bound_linear - at.length);
      BrokenRay win = ray;
      for (auto& seg : win.segments) {
        if (seg.stationary()) continue;
        const double a = seg.s_begin() + u(rng) * seg.length();
        seg = seg.truncated(a, a + u(rng) * (seg.s_end() - a));
      }
      const auto wt = arclength_tau(win);
      window_linear_fail += wt.length > wt.bound_linear + 1e-9;
      window_sqrt_fail += wt.length > wt.bound + 1e-9;
    }
  }
  const bool ok = rays == 1000 && linear_fail == 0 && sqrt_fail == 0 && window_sqrt_fail == 0;
  return {ok, fmt("%d complete rays, C0 = %.12f: linear form fails on %d (min slack %.4f), square-root form on %d; "
                  "sub-windows: square-root form fails on %d, linear form on %d",
                  rays, arclength_constant(), linear_fail, slack, sqrt_fail, window_sqrt_fail, window_linear_fail)};
}

Outcome lagrangian_calculus() {
  int relations = 0, definite_checked = 0, raised = 0, transversal = 0, mismatched = 0;
  double fd_err = 0.0, form = 0.0, sym = 0.0, eig_floor = kInf, pd_floor = kInf;
  Rng rng(505);
  std::uniform_real_distribution<double> lam(0.5, 2.0);
  std::normal_distribution<double> g;
  for (const auto& w : {fixture::particles(3), fixture::particles(4)}) {
    const auto triples = fixture::ray_triples(w.lat);
    for (int trial = 0; trial < 500; ++trial) {
      const auto& t = triples[static_cast<std::size_t>(trial) % triples.size()];
      const double lambda = lam(rng);
      const auto rel = fixture::random_relation(w, t, lambda, rng);
      ++relations;
      const Mat& qc = rel.basis_c;
      const Mat& qd = rel.basis_d;
      const Vec vc = qc.transpose() * rel.w;
      const Vec vd = qd.transpose() * rel.w_prime;
      auto xi_at = [&](const Mat& q, const Vec& a, const Vec& b) {
        return Vec(q.transpose() * oracle::segment_momentum(qc * a, qd * b, lambda));
      };
      const Mat Ic = Mat::Identity(qc.cols(), qc.cols());
      const Mat Id = Mat::Identity(qd.cols(), qd.cols());
      const double h = 1e-6;
      auto rel_err = [](const Mat& fd, const Mat& m) {
        return m.size() == 0 ? 0.0 : (fd - m).cwiseAbs().maxCoeff() / std::max(1.0, m.cwiseAbs().maxCoeff());
      };
      fd_err = std::max({fd_err,
                         rel_err(oracle::jacobian([&](const Vec& a) { return xi_at(qc, a, vd); }, vc, Ic, h), rel.B),
                         rel_err(oracle::jacobian([&](const Vec& b) { return xi_at(qd, vc, b); }, vd, Id, h), rel.B_prime),
                         rel_err(oracle::jacobian([&](const Vec& a) { return xi_at(qd, a, vd); }, vc, Ic, h), rel.C),
                         rel_err(oracle::jacobian([&](const Vec& b) { return xi_at(qc, vc, b); }, vd, Id, h), rel.C_prime())});
      const auto dc = static_cast<int>(rel.B.rows());
      const auto dd = static_cast<int>(rel.B_prime.rows());
      form = std::max(form, lagrangian_certificate(relation_tangent_space(rel), dc, dd).max_form_residual);

      // Definite seed.
      const auto n = rel.B_prime.rows();
      Mat R(n, n);
      for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = g(rng);
      CompositionCertificate cert;
      compose({t.d, qd, rel.w_prime, R * R.transpose() + 0.1 * Mat::Identity(n, n)}, rel, &cert);
      sym = std::max(sym, cert.symmetry_residual / cert.scale);
      eig_floor = std::min(eig_floor, cert.min_eigenvalue / cert.scale);
      if (t.c != t.a) {
        ++definite_checked;
        pd_floor = std::min(pd_floor, cert.min_eigenvalue / cert.scale);
      }

      // Indefinite seed: failure raised exactly when the gap is not definite.
      for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = g(rng);
      const Mat seed = 0.5 * (R + R.transpose());
      const Mat gap = seed - rel.B_prime;
      const bool expect_fail = n > 0 && linalg::smallest_eigenvalue(gap) < tol::definiteness * linalg::trace_scale(gap);
      bool failed = false;
      try {
        compose({t.d, qd, rel.w_prime, seed}, rel);
      } catch (const Error& e) {
        failed = e.kind() == ErrorKind::TransversalityFailure;
      }
      raised += failed;
      transversal += !failed;
      mismatched += failed != expect_fail;
    }
  }
  const bool ok = relations == 1000 && fd_err <= 1e-6 && form < 1e-10 && sym <= 1e-12 && eig_floor >= -1e-10 &&
                  pd_floor > 1e-10 && mismatched == 0;
  return {ok, fmt("%d relations: block FD rel. error %.3g, form residual %.3g, symmetry %.3g, min eig/scale %.3g; "
                  "c != a on %d with min eig/scale %.3g; transversality raised %d, passed %d, mismatches %d",
                  relations, fd_err, form, sym, eig_floor, definite_checked, pd_floor, raised, transversal, mismatched)};
}

Outcome radial_set() {
  Rng rng(606);
  std::uniform_real_distribution<double> lam(-0.5, 2.0), gap(0.05, 2.0);
  double kernel = 0.0, eig = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + trial % 4;
    const Vec w = fixture::random_in(Mat::Identity(n, n), rng, 3.0);
    const double lambda = lam(rng);
    const double energy = lambda - gap(rng);
    const auto g = radial_lagrangian(w, lambda, energy);
    kernel = std::max(kernel, (g.A * w).norm() / (g.A.norm() * w.norm()));
    Mat line(n, 1);
    line.col(0) = w.normalized();
    const Mat perp = Subspace(line).orthocomplement().basis();
    const double expected = std::sqrt(lambda - energy) / w.norm();
    eig = std::max(eig, std::abs(linalg::smallest_eigenvalue(perp.transpose() * g.A * perp) - expected) / expected);
  }
  const bool ok = kernel <= 1e-15 && eig <= 1e-12;
  return {ok, fmt("1000 base points in R^2..R^5: max |A w| / (|A| |w|) = %.3g, max rel. error of eigmin on w-perp = %.3g",
                  kernel, eig)};
}

Outcome family_cross_check() {
  int compared = 0, not_transversal = 0, near_tangent = 0, no_newton = 0;
  double worst = 0.0;
  Rng rng(707);
  std::uniform_real_distribution<double> reach(0.6, 2.0);
  for (std::uint64_t seed = 70; compared < 100 && seed < 200; ++seed) {
    for (const auto& w : {fixture::particles(3), fixture::particles(3, -0.5), fixture::particles(4)}) {
      for (const auto& ray : fixture::realized_rays(w, 1.0, 3, seed, true)) {
        if (compared == 100) break;
        std::vector<Vec> pts;
        for (const auto& br : ray.breaks) pts.push_back(br.point);
        const Mat& q = w.lat.subspace(ray.string.propagation.back()).basis();
        const double along = reach(rng);
        // Perturbation small against the shortest leg, the distance to the origin and the chain's extent.
        double room = std::min(pts.front().norm(), along), extent = 1.0;
        for (std::size_t j = 0; j < pts.size(); ++j) {
          extent = std::max(extent, pts[j].norm());
          if (j > 0) room = std::min({room, pts[j].norm(), (pts[j] - pts[j - 1]).norm()});
        }
        const Vec w_final =
            pts.back() + along * ray.segments.back().xi() + 0.05 * room / extent * fixture::random_in(q, rng);
        ChainResult chain;
        try {
          chain = compose_chain(w.lat, ray.string, pts, w_final, 1.0);
        } catch (const Error&) {
          ++not_transversal;
          continue;
        }
        double gap = kInf;
        for (const auto& cert : chain.certificates) gap = std::min(gap, cert.transversality);
        if (gap < 1e-2) {
          ++near_tangent;
          continue;
        }
        const auto member = fixture::family_member(w, ray, w_final);
        if (!member) {
          ++no_newton;
          continue;
        }
        // The family member through w_final has moved break points; compose along it.
        const Mat A = compose_chain(w.lat, ray.string, member->break_points, w_final, 1.0).lagrangian.A;
        const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
        worst = std::max(worst, (member->derivative - A).cwiseAbs().maxCoeff() / scale);
        ++compared;
      }
    }
  }
  const bool ok = compared == 100 && no_newton == 0 && worst <= 1e-5;
  return {ok, fmt("%d families compared; skipped %d non-transversal chains, %d with gap < 1e-2; "
                  "%d Newton failures; max |dxi/dw - A| / scale = %.3g",
                  compared, not_transversal, near_tangent, no_newton, worst)};
}

Outcome break_bound() {
  struct Config {
    const char* name;
    World w;
  };
  std::vector<Config> configs{{"3-body free", fixture::particles(3)},
                              {"3-body bound", three_body()},
                              {"4-body free", fixture::particles(4)},
                              {"4-body bound", four_body()}};
  bool ok = true;
  std::ostringstream out;
  std::uint64_t seed = 800;
  for (const auto& cfg : configs) {
    BoundOptions bopt;
    bopt.sphere_samples = cfg.w.lat.ambient_dim() > 2 ? 4000 : 20000;
    const auto b = bound_constants(cfg.w.lat, cfg.w.model, 1.0, bopt);
    int observed = 0;
    for (const auto& ray : simulated_rays(cfg.w, 1.0, 2000, ++seed, 1000))
      observed = std::max(observed, ray.string.break_count());
    for (const auto& ray : fixture::realized_rays(cfg.w, 1.0, cfg.w.lat.ambient_dim() > 2 ? 3 : 4, ++seed))
      observed = std::max(observed, ray.string.break_count());
    ok = ok && observed <= b.m_n;
    out << (out.tellp() > 0 ? "; " : "") << cfg.name << ": l = " << fmt("%.6f", b.l) << ", C0 = " << fmt("%.6f", b.c0)
        << ", C1 = " << b.c1 << ", M_N = " << fmt("%.6g", b.m_n) << ", observed max breaks = " << observed;
  }
  return {ok, out.str()};
}

Outcome gap_functions() {
  Rng rng(909);
  std::uniform_real_distribution<double> th(-3.0, 0.0), s(-4.0, 2.0), k(0.0, 0.5);
  double d_err = 0.0, dk_err = 0.0;
  for (int set = 0; set < 100; ++set) {
    std::vector<double> t{0.0};
    for (int i = 0; i < 1 + set % 5; ++i) t.push_back(th(rng));
    std::sort(t.begin(), t.end());
    for (int i = 0; i < 20; ++i) {
      const double sigma = s(rng);
      d_err = std::max(d_err, std::abs(gap_d(t, sigma) - oracle::gap_kappa_grid(t, sigma, 0.0, 1e-6)));
    }
    const double sigma = s(rng), kappa = k(rng);
    dk_err = std::max(dk_err, std::abs(gap_d_kappa(t, sigma, kappa) - oracle::gap_kappa_grid(t, sigma, kappa, 1e-6)));
  }
  const bool ok = d_err <= 1e-9 && dk_err <= 1e-9;
  return {ok, fmt("100 threshold sets, grid step 1e-6: max |gap_d - grid| = %.3g, max |gap_d_kappa - grid| = %.3g", d_err,
                  dk_err)};
}

RayParameters parameters_of(const BrokenRay& ray) {
  RayParameters p;
  for (const auto& br : ray.breaks) p.break_points.push_back(br.point);
  p.incoming = ray.segments.front().xi();
  p.outgoing = ray.segments.back().xi();
  return p;
}

struct Defect {
  std::string name;
  BrokenRay ray;
  const World* world;
  ViolationKind expected;
};

// A free ray along the sphere of c: radial in 3 bodies, a chord of the pair plane in 4.
BrokenRay tangential_leg(const World& w, ClusterId c, bool arriving) {
  const Mat& basis = w.lat.subspace(c).basis();
  const Vec point = basis.col(0);
  const Vec along = basis.cols() > 1 ? Vec((basis.col(1) - 0.3 * basis.col(0)).normalized()) : Vec(-basis.col(0));
  const Vec normal = w.lat.subspace(c).orthocomplement().basis().col(0);
  RayParameters p;
  p.break_points = {point};
  p.incoming = arriving ? along : Vec((0.6 * basis.col(0) + 0.8 * normal).normalized());
  p.outgoing = arriving ? Vec((0.6 * basis.col(0) + 0.8 * normal).normalized()) : Vec(basis.cols() > 1 ? along : Vec(-along));
  const BreakString s{{kFreeCluster, kFreeCluster}, {fixture::free_channel(), fixture::free_channel()}, {c}};
  return build_ray(s, w.lat, 1.0, p);
}

Outcome dini_soundness() {
  const World w3 = three_body();
  const World w4 = four_body();
  int genuine = 0, genuine_fail = 0;
  std::string first_fail;
  std::vector<std::pair<const World*, std::vector<BrokenRay>>> pools{
      {&w3, fixture::realized_rays(w3, 1.0, 3, 1001, true)}, {&w4, fixture::realized_rays(w4, 1.0, 2, 1002, true)}};
  for (auto& [w, rays] : pools) {
    auto extra = simulated_rays(*w, 1.0, 150, 1003 + genuine, 6);
    for (auto& r : extra) rays.push_back(std::move(r));
    for (const auto& ray : rays) {
      ++genuine;
      const auto rep = verify_ray(ray, w->lat, w->model, VerifyMode::Dini);
      if (!rep.pass()) {
        if (first_fail.empty()) first_fail = ray.string.key() + ": " + rep.violations[0].detail;
        ++genuine_fail;
      }
    }
  }

  std::vector<Defect> defects;
  for (int k = 0; k < 14; ++k) {
    const auto& [w, rays] = pools[static_cast<std::size_t>(k % 2)];
    // Non-radial final legs so the outgoing direction can be tilted.
    std::vector<const BrokenRay*> usable;
    for (const auto& r : rays)
      if (r.breaks.size() >= 1 && !r.segments.front().stationary() && !r.segments.back().stationary()) usable.push_back(&r);
    const BrokenRay& base = *usable[static_cast<std::size_t>(k * 7) % usable.size()];
    RayParameters p = parameters_of(base);
    const double delta = std::pow(10.0, -2.0 - (k / 2) % 4);
    if (k < 7) {
      const ClusterId c = base.breaks.back().cluster;
      const Mat& basis = w->lat.subspace(c).basis();
      const Vec tangent = basis.col(static_cast<Eigen::Index>(k) % basis.cols());
      p.outgoing = p.outgoing.normalized() + delta * tangent;
      defects.push_back({"tangential kick " + fmt("%.0e", delta), build_ray(base.string, w->lat, 1.0, p), w,
                         ViolationKind::ConservationViolation});
    } else {
      const bool first = k % 2 == 0;
      const Vec yb = (first ? base.breaks.front() : base.breaks.back()).point.normalized();
      if (first) p.incoming = p.incoming.normalized() + delta * yb;
      else p.outgoing = p.outgoing.normalized() - delta * yb;
      defects.push_back({std::string("radial kick on the ") + (first ? "first" : "last") + " break " + fmt("%.0e", delta),
                         build_ray(base.string, w->lat, 1.0, p), w, ViolationKind::MonotonicityViolation});
    }
  }
  const ClusterId line = fixture::clusters_of_dim(w3.lat, 1).front();
  const ClusterId plane = fixture::clusters_of_dim(w4.lat, 2).front();
  defects.push_back({"3-body free leg arriving along a line", tangential_leg(w3, line, true), &w3,
                     ViolationKind::ForbiddenTangency});
  defects.push_back({"3-body free leg leaving along a line", tangential_leg(w3, line, false), &w3,
                     ViolationKind::ForbiddenTangency});
  defects.push_back({"4-body free leg arriving inside a pair plane", tangential_leg(w4, plane, true), &w4,
                     ViolationKind::ForbiddenTangency});
  defects.push_back({"4-body free leg leaving inside a pair plane", tangential_leg(w4, plane, false), &w4,
                     ViolationKind::ForbiddenTangency});
  for (const auto& [w, rays] : pools) {
    for (const auto& r : rays) {
      if (r.breaks.empty()) continue;
      BrokenRay relabelled = r;
      const ClusterId c = r.string.breaks.front();
      relabelled.string.propagation[0] = relabelled.string.propagation[1] = c;
      defects.push_back({"string tangential on both sides of C_" + std::to_string(c), relabelled, w,
                         ViolationKind::ForbiddenTangency});
      break;
    }
  }

  int caught = 0;
  std::ostringstream missed;
  std::ostringstream named;
  for (const auto& d : defects) {
    const auto rep = verify_ray(d.ray, d.world->lat, d.world->model, VerifyMode::Dini);
    if (rep.has(d.expected)) {
      ++caught;
    } else {
      missed << " [" << d.name << "]";
    }
  }
  named << "ConservationViolation x7, MonotonicityViolation x7, ForbiddenTangency x6";
  const bool ok = genuine_fail == 0 && defects.size() == 20 && caught == 20;
  return {ok, fmt("%d constructed rays, %d rejected%s; %d/%zu injected defects caught with the expected violation (",
                  genuine, genuine_fail, first_fail.empty() ? "" : (" e.g. " + first_fail).c_str(), caught,
                  defects.size()) +
                  named.str() + ")" + (missed.tellp() > 0 ? "; missed:" + missed.str() : "")};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double limit_s;  // 0 = no runtime limit
  };
  const std::vector<Criterion> criteria{
      {"free-relation recovery", free_relation, 10.0},
      {"3-body length bound", three_body_length, 60.0},
      {"tau monotonicity and conservation", tau_and_conservation, 0.0},
      {"arclength-tau inequality", arclength_tau_bound, 0.0},
      {"Lagrangian calculus", lagrangian_calculus, 30.0},
      {"radial-set Lagrangian", radial_set, 0.0},
      {"ray-family cross-validation", family_cross_check, 0.0},
      {"break-bound recursion", break_bound, 0.0},
      {"gap functions", gap_functions, 0.0},
      {"Dini verification soundness", dini_soundness, 0.0},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0.0 && secs >= c.limit_s) {
      o.pass = false;
      o.detail += fmt("; runtime limit %.0f s exceeded", c.limit_s);
    }
    failed += !o.pass;
    std::printf("%s %2zu %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
