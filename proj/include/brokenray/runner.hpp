#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "brokenray/broken_rays.hpp"
#include "brokenray/lagrangian.hpp"

namespace brokenray::runner {

using nlohmann::json;

inline constexpr const char* kScenarioSchema = "brokenray.scenario/1";
inline constexpr const char* kOutputSchema = "brokenray.output/1";

enum ExitCode { kPass = 0, kVerifyFailed = 1, kInputError = 2, kInfeasible = 3 };

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::Infeasible:
    case ErrorKind::ChannelClosed:
      return kInfeasible;
    case ErrorKind::ConservationViolation:
    case ErrorKind::TransversalityFailure:
      return kVerifyFailed;
    default:
      return kInputError;
  }
}

// %.17g, with null for non-finite values.
inline std::string num(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// JSON text with every float at 17 significant digits; keys keep nlohmann's sorted order.
inline void dump17(const json& j, std::string& out, int indent = -1, int depth = 0) {
  auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += json(it.key()).dump();
        out += indent < 0 ? ":" : ": ";
        dump17(it.value(), out, indent, depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      const bool flat = std::all_of(j.begin(), j.end(), [](const json& x) { return x.is_primitive(); });
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i > 0) out += ',';
        if (!flat) newline(depth + 1);
        else if (i > 0 && indent >= 0) out += ' ';
        dump17(j[i], out, indent, depth + 1);
      }
      if (!flat) newline(depth);
      out += ']';
      return;
    }
    case json::value_t::number_float:
      out += num(j.get<double>());
      return;
    default:
      out += j.dump();
  }
}

inline std::string dump17(const json& j, int indent = -1) {
  std::string s;
  dump17(j, s, indent);
  return s;
}

inline json vec_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json mat_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

// --- Scenario ---------------------------------------------------------------

struct ChannelSpec {
  std::optional<int> cluster;  // lattice id
  std::optional<Mat> basis;    // rows span X_b
  std::optional<int> dim;      // every cluster of this dimension
  int index = 0;
  double energy = 0.0;
};

struct RunParams {
  int max_breaks = 4;
  std::uint64_t seed = 1;
  int rays = 200;
  int samples = 100;
  int continuations = 4;
  int attempts = 4;
  double pass_probability = 0.25;
  double stationary_duration = 1.0;
  double dini_h = 1e-4;
  double phase_step = 0.05;
  double eps = 0.1;
  int sphere_samples = 20000;
  int profile_samples = 65;
  std::optional<std::pair<double, double>> energy_window;
};

struct StringSpec {
  std::vector<int> propagation;
  std::vector<std::pair<int, int>> channels;  // (cluster, index)
  std::vector<int> breaks;
};

struct ChainSpec {
  StringSpec string;
  std::vector<Vec> break_points;
  Vec final_point;
};

struct Scenario {
  std::string name;
  int ambient_dim = 0;
  std::vector<Mat> generators;         // rows span each generator
  std::optional<std::vector<double>> masses;  // 1-D particles; generates the pair planes
  std::vector<ChannelSpec> channels;
  double lambda = 1.0;
  bool discrete = true;
  RunParams run;
  std::optional<StringSpec> trace;
  std::optional<std::pair<std::pair<int, int>, std::pair<int, int>>> relation;
  std::optional<ChainSpec> certify;
};

namespace detail {

[[noreturn]] inline void bad(const std::string& what) { throw Error(ErrorKind::InvalidInput, what); }

inline double get_num(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) bad(std::string("missing number '") + key + "'");
  return j[key].get<double>();
}

inline Vec parse_vec(const json& j, int n) {
  if (!j.is_array() || static_cast<int>(j.size()) != n) bad("vector of length " + std::to_string(n) + " expected");
  Vec v(n);
  for (int i = 0; i < n; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) bad("vector entries must be numbers");
    v(i) = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

inline Mat parse_rows(const json& j, int n) {
  if (!j.is_array() || j.empty()) bad("basis must be a non-empty array of rows");
  Mat m(static_cast<Eigen::Index>(j.size()), n);
  for (std::size_t r = 0; r < j.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = parse_vec(j[r], n).transpose();
  return m;
}

inline std::pair<int, int> parse_pair(const json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    bad("channel reference must be [cluster, index]");
  return {j[0].get<int>(), j[1].get<int>()};
}

inline StringSpec parse_string(const json& j) {
  StringSpec s;
  for (const auto& x : j.at("propagation")) s.propagation.push_back(x.get<int>());
  for (const auto& x : j.at("channels")) s.channels.push_back(parse_pair(x));
  for (const auto& x : j.at("breaks")) s.breaks.push_back(x.get<int>());
  if (s.channels.size() != s.propagation.size() || s.breaks.size() + 1 != s.propagation.size())
    bad("string needs m breaks and m + 1 propagation clusters and channels");
  return s;
}

inline json string_json(const StringSpec& s) {
  json ch = json::array();
  for (const auto& [c, i] : s.channels) ch.push_back({c, i});
  return {{"propagation", s.propagation}, {"channels", ch}, {"breaks", s.breaks}};
}

}  // namespace detail

inline Scenario parse_scenario(const json& j) {
  using detail::bad;
  if (!j.is_object()) bad("scenario must be a JSON object");
  Scenario s;
  if (j.contains("schema") && j["schema"] != kScenarioSchema) bad("unsupported schema " + j["schema"].dump());
  s.name = j.value("name", std::string{});
  s.lambda = detail::get_num(j, "lambda");
  s.discrete = j.value("discrete", true);
  if (j.contains("particles")) {
    std::vector<double> masses;
    for (const auto& x : j["particles"].at("masses")) masses.push_back(x.get<double>());
    if (masses.size() < 2) bad("need at least two particles");
    for (double mass : masses)
      if (!(mass > 0.0)) bad("masses must be positive");
    s.masses = masses;
    s.ambient_dim = static_cast<int>(masses.size()) - 1;
  } else {
    if (!j.contains("ambient_dim") || !j["ambient_dim"].is_number_integer()) bad("missing ambient_dim");
    s.ambient_dim = j["ambient_dim"].get<int>();
    if (s.ambient_dim < 1) bad("ambient_dim must be positive");
    for (const auto& g : j.value("generators", json::array())) s.generators.push_back(detail::parse_rows(g.at("basis"), s.ambient_dim));
  }
  for (const auto& c : j.value("channels", json::array())) {
    ChannelSpec spec;
    spec.energy = detail::get_num(c, "energy");
    spec.index = c.value("index", 0);
    int selectors = 0;
    if (c.contains("cluster")) spec.cluster = c["cluster"].get<int>(), ++selectors;
    if (c.contains("basis")) spec.basis = detail::parse_rows(c["basis"], s.ambient_dim), ++selectors;
    if (c.contains("dim")) spec.dim = c["dim"].get<int>(), ++selectors;
    if (selectors != 1) bad("each channel needs exactly one of cluster / basis / dim");
    s.channels.push_back(std::move(spec));
  }
  if (j.contains("run")) {
    const json& r = j["run"];
    RunParams& p = s.run;
    p.max_breaks = r.value("max_breaks", p.max_breaks);
    p.seed = r.value("seed", p.seed);
    p.rays = r.value("rays", p.rays);
    p.samples = r.value("samples", p.samples);
    p.continuations = r.value("continuations", p.continuations);
    p.attempts = r.value("attempts", p.attempts);
    p.pass_probability = r.value("pass_probability", p.pass_probability);
    p.stationary_duration = r.value("stationary_duration", p.stationary_duration);
    p.dini_h = r.value("dini_h", p.dini_h);
    p.phase_step = r.value("phase_step", p.phase_step);
    p.eps = r.value("eps", p.eps);
    p.sphere_samples = r.value("sphere_samples", p.sphere_samples);
    p.profile_samples = r.value("profile_samples", p.profile_samples);
    if (r.contains("energy_window")) {
      const auto& w = r["energy_window"];
      if (!w.is_array() || w.size() != 2) bad("energy_window must be [lo, hi]");
      p.energy_window = std::make_pair(w[0].get<double>(), w[1].get<double>());
      if (p.energy_window->first > p.energy_window->second) bad("energy_window lo > hi");
    }
    if (p.max_breaks < 0 || p.rays < 0 || p.samples < 0 || p.attempts < 1) bad("run counts out of range");
  }
  if (j.contains("trace")) s.trace = detail::parse_string(j["trace"]);
  if (j.contains("relation"))
    s.relation = std::make_pair(detail::parse_pair(j["relation"].at("alpha")), detail::parse_pair(j["relation"].at("beta")));
  if (j.contains("certify")) {
    const json& c = j["certify"];
    ChainSpec chain;
    chain.string = detail::parse_string(c.at("string"));
    for (const auto& w : c.at("break_points")) chain.break_points.push_back(detail::parse_vec(w, s.ambient_dim));
    chain.final_point = detail::parse_vec(c.at("final_point"), s.ambient_dim);
    s.certify = std::move(chain);
  }
  return s;
}

inline json emit_scenario(const Scenario& s) {
  json j;
  j["schema"] = kScenarioSchema;
  j["name"] = s.name;
  j["lambda"] = s.lambda;
  j["discrete"] = s.discrete;
  if (s.masses) {
    j["particles"] = {{"masses", *s.masses}};
  } else {
    j["ambient_dim"] = s.ambient_dim;
    json gens = json::array();
    for (const auto& g : s.generators) gens.push_back({{"basis", mat_json(g)}});
    j["generators"] = gens;
  }
  json chans = json::array();
  for (const auto& c : s.channels) {
    json e{{"energy", c.energy}, {"index", c.index}};
    if (c.cluster) e["cluster"] = *c.cluster;
    if (c.basis) e["basis"] = mat_json(*c.basis);
    if (c.dim) e["dim"] = *c.dim;
    chans.push_back(e);
  }
  j["channels"] = chans;
  const RunParams& p = s.run;
  json r{{"max_breaks", p.max_breaks},
         {"seed", p.seed},
         {"rays", p.rays},
         {"samples", p.samples},
         {"continuations", p.continuations},
         {"attempts", p.attempts},
         {"pass_probability", p.pass_probability},
         {"stationary_duration", p.stationary_duration},
         {"dini_h", p.dini_h},
         {"phase_step", p.phase_step},
         {"eps", p.eps},
         {"sphere_samples", p.sphere_samples},
         {"profile_samples", p.profile_samples}};
  if (p.energy_window) r["energy_window"] = {p.energy_window->first, p.energy_window->second};
  j["run"] = r;
  if (s.trace) j["trace"] = detail::string_json(*s.trace);
  if (s.relation)
    j["relation"] = {{"alpha", {s.relation->first.first, s.relation->first.second}},
                     {"beta", {s.relation->second.first, s.relation->second.second}}};
  if (s.certify) {
    json bp = json::array();
    for (const auto& w : s.certify->break_points) bp.push_back(vec_json(w));
    j["certify"] = {{"string", detail::string_json(s.certify->string)},
                    {"break_points", bp},
                    {"final_point", vec_json(s.certify->final_point)}};
  }
  return j;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open scenario " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidInput, std::string("parse error: ") + e.what());
  }
  try {
    return parse_scenario(j);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidInput, std::string("schema error: ") + e.what());
  }
}

// Mass-weighted relative coordinates of 1-D particles; the pair planes x_i = x_j generate the lattice.
inline ClusterLattice particle_lattice(const std::vector<double>& masses) {
  const int n = static_cast<int>(masses.size());
  Vec centre(n);
  for (int i = 0; i < n; ++i) centre(i) = std::sqrt(masses[static_cast<std::size_t>(i)]);
  const Mat rel = Subspace::from_spanning(centre).orthocomplement().basis();
  std::vector<Subspace> gens;
  for (int i = 0; i < n; ++i)
    for (int k = i + 1; k < n; ++k) {
      Vec normal = Vec::Zero(n);
      normal(i) = 1.0 / centre(i);
      normal(k) = -1.0 / centre(k);
      gens.push_back(Subspace::from_normals(n - 1, rel.transpose() * normal));
    }
  return ClusterLattice::build(gens, n - 1);
}

struct World {
  ClusterLattice lattice;
  SpectralModel model;
};

inline World build_world(const Scenario& s) {
  World w;
  if (s.masses) {
    w.lattice = particle_lattice(*s.masses);
  } else {
    std::vector<Subspace> gens;
    for (const auto& g : s.generators) gens.push_back(Subspace::from_spanning(g.transpose()));
    w.lattice = ClusterLattice::build(gens, s.ambient_dim);
  }
  std::vector<Channel> chans;
  for (const auto& c : s.channels) {
    if (c.cluster) {
      w.lattice.subspace(*c.cluster);
      chans.push_back({*c.cluster, c.index, c.energy});
    } else if (c.basis) {
      const auto id = w.lattice.find(Subspace::from_spanning(c.basis->transpose()));
      if (!id) throw Error(ErrorKind::UnknownCluster, "channel basis is not a lattice subspace");
      chans.push_back({*id, c.index, c.energy});
    } else {
      for (ClusterId b : w.lattice.sphere_clusters())
        if (b != kFreeCluster && w.lattice.dim(b) == *c.dim) chans.push_back({b, c.index, c.energy});
    }
  }
  w.model = SpectralModel(w.lattice, chans, s.discrete);
  return w;
}

inline Channel resolve_channel(const SpectralModel& model, std::pair<int, int> ref) {
  for (const auto& ch : model.channels())
    if (ch.cluster == ref.first && ch.index == ref.second) return ch;
  throw Error(ErrorKind::UnknownCluster,
              "no channel (" + std::to_string(ref.first) + ", " + std::to_string(ref.second) + ")");
}

inline BreakString resolve_string(const SpectralModel& model, const StringSpec& spec) {
  BreakString s;
  s.propagation = spec.propagation;
  s.breaks = spec.breaks;
  for (const auto& ref : spec.channels) s.channels.push_back(resolve_channel(model, ref));
  return s;
}

// --- Execution --------------------------------------------------------------

inline unsigned thread_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BROKENRAY_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap > 0) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

// Runs body(i) for i < count; results are indexed by i so the merge order never depends on scheduling.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body,
                         unsigned threads = thread_count()) {
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, count)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = next++; i < count; i = next++) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline Rng task_rng(std::uint64_t seed, std::uint64_t task) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(task >> 32)};
  return Rng(seq);
}

struct Options {
  std::filesystem::path out_dir = ".";
  std::string format = "jsonl";
  std::optional<double> lambda;
  std::optional<int> max_breaks;
  std::optional<std::uint64_t> seed;
  std::optional<std::pair<int, int>> alpha;
  std::optional<std::pair<int, int>> beta;
  std::ostream* log = &std::cout;
};

inline void apply_overrides(Scenario& s, const Options& o) {
  if (o.lambda) s.lambda = *o.lambda;
  if (o.max_breaks) s.run.max_breaks = *o.max_breaks;
  if (o.seed) s.run.seed = *o.seed;
  if (o.alpha || o.beta) {
    if (!(o.alpha && o.beta)) throw Error(ErrorKind::InvalidInput, "--alpha and --beta go together");
    s.relation = std::make_pair(*o.alpha, *o.beta);
  }
}

inline std::ofstream open_out(const Options& o, const std::string& file) {
  std::filesystem::create_directories(o.out_dir);
  std::ofstream f(o.out_dir / file, std::ios::binary);
  if (!f) throw Error(ErrorKind::InvalidInput, "cannot write " + (o.out_dir / file).string());
  return f;
}

inline json channel_json(const Channel& ch) { return {{"cluster", ch.cluster}, {"index", ch.index}, {"energy", ch.energy}}; }

inline json string_record(const BreakString& s) {
  json ch = json::array();
  for (const auto& c : s.channels) ch.push_back({c.cluster, c.index});
  return {{"key", s.key()}, {"propagation", s.propagation}, {"channels", ch}, {"breaks", s.breaks}};
}

inline json trace_record(std::size_t id, const BrokenRay& ray, const ClusterLattice& lat, const VerifyReport& rep) {
  json segs = json::array();
  for (const auto& seg : ray.segments) {
    json e{{"cluster", seg.cluster()},
           {"channel", channel_json(seg.channel())},
           {"kind", seg.stationary() ? "stationary" : "moving"},
           {"s_begin", seg.s_begin()},
           {"s_end", seg.s_end()},
           {"sigma", seg.sigma()},
           {"xi", vec_json(seg.xi())}};
    if (seg.stationary()) e["anchor"] = vec_json(seg.direction_at(0.0));
    else e["anchor"] = vec_json(seg.direction_at(seg.s_begin()));
    segs.push_back(e);
  }
  json breaks = json::array();
  for (const auto& br : ray.breaks)
    breaks.push_back({{"cluster", br.cluster},
                      {"point", vec_json(br.point)},
                      {"conservation_defect", br.conservation_defect(lat)}});
  double tau_max = -kInf;
  double tau_min = kInf;
  for (const auto& seg : ray.segments)
    for (double s : {seg.s_begin(), seg.s_end()}) {
      const double tau = flow_point(seg, s).tau();
      tau_max = std::max(tau_max, tau);
      tau_min = std::min(tau_min, tau);
    }
  json viol = json::array();
  for (const auto& v : rep.violations)
    viol.push_back({{"kind", to_string(v.kind)}, {"index", v.index}, {"defect", v.defect}, {"detail", v.detail}});
  json sub = json::object();
  for (const auto& [sigma, len] : sublengths_by_energy(ray)) sub[num(sigma)] = len;
  return {{"id", id},
          {"string", string_record(ray.string)},
          {"lambda", ray.lambda},
          {"segments", segs},
          {"breaks", breaks},
          {"length", length_of(ray)},
          {"sublengths", sub},
          {"tau_max", tau_max},
          {"tau_min", tau_min},
          {"break_count", ray.string.break_count()},
          {"verify", {{"pass", rep.pass()}, {"dini_checks", rep.dini_checks}, {"violations", viol}}}};
}

struct TraceItem {
  BrokenRay ray;
  VerifyReport report;
};

inline int cmd_trace(Scenario s, const Options& o) {
  apply_overrides(s, o);
  const World w = build_world(s);
  VerifyOptions vopt;
  vopt.dini_h = s.run.dini_h;
  std::vector<std::optional<TraceItem>> items;
  std::vector<std::string> skipped;

  if (s.trace) {
    const BreakString str = resolve_string(w.model, *s.trace);
    Rng rng = task_rng(s.run.seed, 0);
    const RealizeResult r = realize_string(str, w.lattice, s.lambda, rng, s.run.attempts, s.run.stationary_duration);
    if (!r.ray) {
      *o.log << dump17(json{{"status", "infeasible"}, {"string", str.key()}, {"reason", r.reason}}) << "\n";
      return kInfeasible;
    }
    items.emplace_back(TraceItem{*r.ray, verify_ray(*r.ray, w.lattice, w.model, VerifyMode::Dini, vopt)});
  } else {
    const auto strings = enumerate_strings(w.lattice, w.model, s.lambda, s.run.max_breaks);
    items.resize(strings.size());
    std::vector<std::string> reasons(strings.size());
    parallel_for(strings.size(), [&](std::size_t i) {
      Rng rng = task_rng(s.run.seed, i);
      const RealizeResult r =
          realize_string(strings[i], w.lattice, s.lambda, rng, s.run.attempts, s.run.stationary_duration);
      if (!r.ray) {
        reasons[i] = r.reason;
        return;
      }
      items[i] = TraceItem{*r.ray, verify_ray(*r.ray, w.lattice, w.model, VerifyMode::Dini, vopt)};
    });
    for (std::size_t i = 0; i < strings.size(); ++i)
      if (!items[i]) skipped.push_back(strings[i].key());
  }

  std::vector<std::pair<std::string, std::size_t>> order;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i]) order.emplace_back(items[i]->ray.string.key(), i);
  std::sort(order.begin(), order.end());

  auto traces = open_out(o, o.format == "csv" ? "traces.csv" : "traces.jsonl");
  auto profile = open_out(o, "tau_profile.csv");
  profile << "ray_id,sample,t,tau\n";
  if (o.format == "csv") traces << "ray_id,string,break_count,length,max_conservation_defect,pass\n";
  bool all_pass = true;
  for (std::size_t id = 0; id < order.size(); ++id) {
    const TraceItem& it = *items[order[id].second];
    all_pass = all_pass && it.report.pass();
    if (o.format == "csv")
      traces << id << ",\"" << it.ray.string.key() << "\"," << it.ray.string.break_count() << ','
             << num(length_of(it.ray)) << ',' << num(it.report.max_conservation_defect) << ','
             << (it.report.pass() ? 1 : 0) << "\n";
    else
      traces << dump17(trace_record(id, it.ray, w.lattice, it.report)) << "\n";
    const SampledCurve curve = sample_ray(it.ray, w.lattice, s.run.profile_samples);
    for (std::size_t k = 0; k < curve.points.size(); ++k)
      profile << id << ',' << k << ',' << num(curve.time(k)) << ',' << num(curve.points[k].tau()) << "\n";
  }
  *o.log << dump17(json{{"status", all_pass ? "pass" : "fail"},
                        {"rays", order.size()},
                        {"infeasible_strings", skipped.size()}})
         << "\n";
  return all_pass ? kPass : kVerifyFailed;
}

inline int cmd_enumerate(Scenario s, const Options& o) {
  apply_overrides(s, o);
  const World w = build_world(s);
  const auto strings = enumerate_strings(w.lattice, w.model, s.lambda, s.run.max_breaks);
  auto out = open_out(o, "strings.jsonl");
  for (const auto& str : strings) out << dump17(string_record(str)) << "\n";
  *o.log << dump17(json{{"status", "pass"}, {"strings", strings.size()}}) << "\n";
  return kPass;
}

// Chain certificate summary for one realized ray (plane-wave seed on the first break plane).
inline json chain_certificate(const ClusterLattice& lat, const BrokenRay& ray) {
  std::vector<Vec> pts;
  for (const auto& br : ray.breaks) pts.push_back(br.point);
  const Vec final_point = ray.breaks.back().point + ray.segments.back().xi();
  json out{{"string", ray.string.key()}};
  try {
    const ChainResult chain = compose_chain(lat, ray.string, pts, final_point, ray.lambda);
    json certs = json::array();
    bool ok = true;
    for (std::size_t k = 0; k < chain.certificates.size(); ++k) {
      const auto& c = chain.certificates[k];
      const ElementaryRelation& rel = chain.relations[k];
      const double scale = std::sqrt(std::max(1.0, ray.lambda - rel.channel.energy)) *
                           std::max(1.0, rel.B.cwiseAbs().maxCoeff());
      const auto form = lagrangian_certificate(relation_tangent_space(rel), static_cast<int>(rel.B.rows()),
                                               static_cast<int>(rel.B_prime.rows()), scale);
      const bool good = c.psd && (!c.pd_expected || c.pd) && form.is_lagrangian;
      ok = ok && good;
      certs.push_back({{"position", c.position},
                       {"transversality", c.transversality},
                       {"min_eigenvalue", c.min_eigenvalue},
                       {"symmetry_residual", c.symmetry_residual},
                       {"psd", c.psd},
                       {"pd", c.pd},
                       {"pd_expected", c.pd_expected},
                       {"form_residual", form.max_form_residual},
                       {"pass", good}});
    }
    out["certificates"] = certs;
    out["final_A"] = mat_json(chain.lagrangian.A);
    out["pass"] = ok;
  } catch (const Error& e) {
    out["error"] = e.what();
    out["error_kind"] = to_string(e.kind());
    out["pass"] = false;
  }
  return out;
}

inline int cmd_certify(Scenario s, const Options& o) {
  apply_overrides(s, o);
  const World w = build_world(s);
  json report{{"schema", kOutputSchema}};
  json chains = json::array();
  bool ok = true;
  if (s.certify) {
    const BreakString str = resolve_string(w.model, s.certify->string);
    RayParameters p;
    p.break_points = s.certify->break_points;
    if (p.break_points.empty()) throw Error(ErrorKind::InvalidInput, "certify needs at least one break");
    const Vec first_dir = p.break_points.size() > 1 ? Vec(p.break_points[1] - p.break_points[0])
                                                    : Vec(s.certify->final_point - p.break_points[0]);
    p.incoming = w.lattice.subspace(str.propagation[0]).project(first_dir);
    if (p.incoming.norm() == 0.0) p.incoming = first_dir;
    p.outgoing = s.certify->final_point - p.break_points.back();
    const BrokenRay ray = build_ray(str, w.lattice, s.lambda, p);
    json c = chain_certificate(w.lattice, ray);
    ok = c.value("pass", false);
    chains.push_back(c);
  } else {
    const auto strings = enumerate_strings(w.lattice, w.model, s.lambda, s.run.max_breaks);
    std::vector<json> out(strings.size());
    parallel_for(strings.size(), [&](std::size_t i) {
      if (strings[i].break_count() == 0) return;
      Rng rng = task_rng(s.run.seed, i);
      const RealizeResult r =
          realize_string(strings[i], w.lattice, s.lambda, rng, s.run.attempts, s.run.stationary_duration);
      if (r.ray) out[i] = chain_certificate(w.lattice, *r.ray);
    });
    for (auto& c : out)
      if (!c.is_null()) {
        const bool transversal = !c.contains("error_kind") || c["error_kind"] != "TransversalityFailure";
        // Transversality failures are reported, not counted as broken certificates.
        if (transversal) ok = ok && c.value("pass", false);
        chains.push_back(std::move(c));
      }
  }
  report["chains"] = chains;
  report["pass"] = ok;
  auto f = open_out(o, "certificates.json");
  f << dump17(report, 2) << "\n";
  *o.log << dump17(json{{"status", ok ? "pass" : "fail"}, {"chains", chains.size()}}) << "\n";
  return ok ? kPass : kVerifyFailed;
}

inline int cmd_bounds(Scenario s, const Options& o) {
  apply_overrides(s, o);
  const World w = build_world(s);
  BoundOptions bopt;
  bopt.sphere_samples = s.run.sphere_samples;
  if (s.run.energy_window) {
    bopt.window_set = true;
    bopt.window_lo = s.run.energy_window->first;
    bopt.window_hi = s.run.energy_window->second;
  }
  const BoundReport b = bound_constants(w.lattice, w.model, s.lambda, bopt);
  const auto strings = enumerate_strings(w.lattice, w.model, s.lambda, s.run.max_breaks);
  std::vector<std::optional<BrokenRay>> rays(strings.size());
  parallel_for(strings.size(), [&](std::size_t i) {
    Rng rng = task_rng(s.run.seed, i);
    rays[i] = realize_string(strings[i], w.lattice, s.lambda, rng, s.run.attempts, s.run.stationary_duration).ray;
  });
  double max_len = 0.0;
  double max_sub = 0.0;
  int max_breaks = 0;
  int max_window = 0;
  std::size_t realized = 0;
  for (const auto& r : rays) {
    if (!r) continue;
    ++realized;
    max_len = std::max(max_len, length_of(*r));
    for (const auto& [sigma, len] : sublengths_by_energy(*r)) max_sub = std::max(max_sub, len);
    max_breaks = std::max(max_breaks, r->string.break_count());
    max_window = std::max(max_window, max_breaks_in_window(*r, b.l));
  }
  const double slack = 1e-9;
  const bool three_body = w.lattice.body_count() <= 3;
  const bool sub_ok = !three_body || max_sub <= kPi + slack;
  const bool total_ok = !three_body || max_len <= b.c1 * kPi + slack;
  const bool breaks_ok = max_breaks <= b.m_n;
  const bool window_ok = max_window <= 2.0 * b.m_sub + 2.0;
  const bool ok = sub_ok && total_ok && breaks_ok && window_ok;
  json sub = json::array();
  for (const auto& [a, m] : b.subsystem_m) sub.push_back({{"cluster", a}, {"M", m}});
  json report{{"schema", kOutputSchema},
              {"lambda", s.lambda},
              {"l", b.l},
              {"C0", b.c0},
              {"C1", b.c1},
              {"M_N", b.m_n},
              {"M_sub", b.m_sub},
              {"body_count", b.body_count},
              {"subsystems", sub},
              {"strings", strings.size()},
              {"realized", realized},
              {"observed",
               {{"max_length", max_len},
                {"max_sublength", max_sub},
                {"max_breaks", max_breaks},
                {"max_breaks_in_window", max_window}}},
              {"checks",
               {{"sublength_le_pi", sub_ok},
                {"length_le_C1_pi", total_ok},
                {"breaks_le_M_N", breaks_ok},
                {"window_breaks_le_2M_sub_plus_2", window_ok}}},
              {"pass", ok}};
  auto f = open_out(o, "bounds.json");
  f << dump17(report, 2) << "\n";
  *o.log << dump17(json{{"status", ok ? "pass" : "fail"}, {"M_N", b.m_n}, {"max_breaks", max_breaks}}) << "\n";
  return ok ? kPass : kVerifyFailed;
}

inline int cmd_relation(Scenario s, const Options& o) {
  apply_overrides(s, o);
  if (!s.relation) throw Error(ErrorKind::InvalidInput, "relation needs alpha and beta");
  const World w = build_world(s);
  for (double t : w.model.global_thresholds())
    if (std::abs(s.lambda - t) < 1e-9) throw Error(ErrorKind::InvalidInput, "lambda is a threshold");
  const Channel alpha = resolve_channel(w.model, s.relation->first);
  const Channel beta = resolve_channel(w.model, s.relation->second);
  if (!(s.lambda > alpha.energy) || !(s.lambda > beta.energy))
    throw Error(ErrorKind::ChannelClosed, "lambda must exceed both channel energies");

  const int samples = s.run.samples;
  std::vector<RelationTable> parts(static_cast<std::size_t>(samples));
  parallel_for(parts.size(), [&](std::size_t i) {
    RelationOptions ro;
    ro.samples = 1;
    ro.continuations = s.run.continuations;
    ro.sim = {s.run.max_breaks, s.run.pass_probability, s.run.stationary_duration};
    ro.seed = task_rng(s.run.seed, i)();
    parts[i] = channel_relation(w.lattice, w.model, alpha, beta, s.lambda, ro);
  });

  auto csv = open_out(o, "relation.csv");
  const int n = w.lattice.ambient_dim();
  csv << "entry,witness,breaks,distance";
  for (const char* tag : {"omega", "theta", "omega_out", "theta_out"})
    for (int k = 0; k < n; ++k) csv << ',' << tag << k;
  csv << ",string\n";
  auto coords = [n](const Vec& v) {
    std::string out;
    for (int k = 0; k < n; ++k) out += "," + (v.size() == n ? num(v(k)) : std::string());
    return out;
  };
  std::map<std::string, json> per_string;
  std::size_t entry = 0;
  std::size_t witness_base = 0;
  bool ok = true;
  for (const auto& part : parts) {
    for (const auto& e : part.entries) {
      const BrokenRay& ray = part.witnesses[e.witness];
      csv << entry++ << ',' << witness_base + e.witness << ',' << ray.string.break_count() << ','
          << num(linalg::angle_between(e.zeta.omega, e.zeta_out.omega)) << coords(e.zeta.omega)
          << coords(e.zeta.theta) << coords(e.zeta_out.omega) << coords(e.zeta_out.theta) << ",\""
          << ray.string.key() << "\"\n";
      if (ray.string.break_count() > 0 && !per_string.count(ray.string.key())) {
        json c = chain_certificate(w.lattice, ray);
        if (!c.value("pass", false) && (!c.contains("error_kind") || c["error_kind"] != "TransversalityFailure"))
          ok = false;
        per_string[ray.string.key()] = std::move(c);
      }
    }
    witness_base += part.witnesses.size();
  }
  json summary = json::array();
  for (auto& [key, c] : per_string) summary.push_back(std::move(c));
  auto f = open_out(o, "relation_certificates.json");
  f << dump17(json{{"schema", kOutputSchema}, {"chains", summary}, {"pass", ok}}, 2) << "\n";
  *o.log << dump17(json{{"status", ok ? "pass" : "fail"}, {"entries", entry}, {"strings", per_string.size()}})
         << "\n";
  return ok ? kPass : kVerifyFailed;
}

}  // namespace brokenray::runner
