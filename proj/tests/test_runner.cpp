#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"

using namespace brokenray;
namespace rn = brokenray::runner;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("brokenray_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<rn::json> jsonl(const fs::path& p) {
  std::vector<rn::json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(rn::json::parse(line));
  return out;
}

struct CommandResult {
  int code;
  std::string log;
};

template <typename Cmd>
CommandResult run(Cmd cmd, const rn::Scenario& s, rn::Options o) {
  std::ostringstream log;
  o.log = &log;
  const int code = cmd(s, o);
  return {code, log.str()};
}

class ThreadCap {
 public:
  explicit ThreadCap(const char* value) {
    if (const char* old = std::getenv("BROKENRAY_THREADS")) saved_ = old;
    ::setenv("BROKENRAY_THREADS", value, 1);
  }
  ~ThreadCap() {
    if (saved_) ::setenv("BROKENRAY_THREADS", saved_->c_str(), 1);
    else ::unsetenv("BROKENRAY_THREADS");
  }
  ThreadCap(const ThreadCap&) = delete;
  ThreadCap& operator=(const ThreadCap&) = delete;

 private:
  std::optional<std::string> saved_;
};

}  // namespace

TEST(Dump17, FloatsKeepSeventeenDigits) {
  EXPECT_EQ(rn::dump17(rn::json(0.1)), "0.10000000000000001");
  EXPECT_EQ(rn::dump17(rn::json(1.0)), "1");
  EXPECT_EQ(rn::dump17(rn::json(std::nan(""))), "null");
  EXPECT_EQ(rn::dump17(rn::json(kInf)), "null");
  EXPECT_EQ(rn::dump17(rn::json{{"b", 3}, {"a", {1.5, 2}}}), "{\"a\":[1.5,2],\"b\":3}");
  EXPECT_EQ(rn::dump17(rn::json{{"a", rn::json::array()}, {"o", rn::json::object()}}), "{\"a\":[],\"o\":{}}");
  const double x = 0.30000000000000004;
  EXPECT_EQ(rn::json::parse(rn::dump17(rn::json(x))).get<double>(), x);
}

TEST(Dump17, IndentedLayout) {
  const std::string text = rn::dump17(rn::json{{"k", {1, 2}}, {"n", {{"x", 0.5}}}}, 2);
  EXPECT_EQ(text, "{\n  \"k\": [1, 2],\n  \"n\": {\n    \"x\": 0.5\n  }\n}");
}

TEST(ParticleLattice, PairPlanesAndBodyCount) {
  const auto lat3 = rn::particle_lattice({1.0, 2.0, 3.0});
  EXPECT_EQ(lat3.ambient_dim(), 2);
  EXPECT_EQ(lat3.size(), 5);
  EXPECT_EQ(lat3.body_count(), 3);
  const auto lat4 = rn::particle_lattice({1.0, 1.0, 1.0, 1.0});
  EXPECT_EQ(lat4.size(), 15);
  EXPECT_EQ(fixture::clusters_of_dim(lat4, 2).size(), 6u);
  EXPECT_EQ(fixture::clusters_of_dim(lat4, 1).size(), 7u);
}

TEST(ParticleLattice, UnequalMassesStillMeetOnlyAtTheOrigin) {
  const auto lat = rn::particle_lattice({1.0, 5.0, 0.2});
  for (ClusterId a : fixture::clusters_of_dim(lat, 1))
    for (ClusterId b : fixture::clusters_of_dim(lat, 1))
      if (a != b) { EXPECT_EQ(lat.meet(a, b), kTotalCluster); }
}

TEST(Scenario, EveryShippedScenarioRoundTrips) {
  for (const char* file : {"two_body.json", "three_body.json", "three_body_reflection.json", "four_body.json"}) {
    const auto s = rn::load_scenario(fixture::scenario_path(file));
    const rn::json once = rn::emit_scenario(s);
    const rn::json twice = rn::emit_scenario(rn::parse_scenario(once));
    EXPECT_EQ(rn::dump17(once), rn::dump17(twice)) << file;
    EXPECT_EQ(once["schema"], rn::kScenarioSchema);
    EXPECT_NO_THROW(rn::build_world(s)) << file;
  }
}

TEST(Scenario, MalformedInputIsAnInputError) {
  try {
    rn::load_scenario(fixture::scenario_path("malformed.json"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
    EXPECT_EQ(rn::exit_code_for(e.kind()), rn::kInputError);
  }
  try {
    rn::load_scenario(fixture::scenario_path("does_not_exist.json"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
}

TEST(Scenario, FieldValidation) {
  auto rejects = [](const rn::json& j) {
    try {
      rn::parse_scenario(j);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::InvalidInput;
    }
    return false;
  };
  const rn::json base = rn::json::parse(R"({"ambient_dim": 2, "lambda": 1.0})");
  EXPECT_FALSE(rejects(base));
  EXPECT_TRUE(rejects(rn::json::parse(R"({"ambient_dim": 2})")));
  EXPECT_TRUE(rejects(rn::json::parse(R"({"lambda": 1.0, "particles": {"masses": [1, -1]}})")));
  EXPECT_TRUE(rejects(rn::json::parse(R"({"lambda": 1.0, "particles": {"masses": [1]}})")));
  EXPECT_TRUE(rejects(rn::json::parse(R"({"ambient_dim": 2, "lambda": 1, "channels": [{"energy": -1}]})")));
  EXPECT_TRUE(rejects(rn::json::parse(R"({"ambient_dim": 2, "lambda": 1, "channels": [{"energy": -1, "dim": 1, "cluster": 2}]})")));
  EXPECT_TRUE(rejects(rn::json::parse(R"({"ambient_dim": 2, "lambda": 1, "schema": "other/9"})")));
  EXPECT_TRUE(rejects(rn::json::parse(R"({"ambient_dim": 2, "lambda": 1, "run": {"energy_window": [1, 0]}})")));
  EXPECT_TRUE(rejects(rn::json::parse(R"({"ambient_dim": 2, "lambda": 1, "run": {"attempts": 0}})")));
}

TEST(ExitCodes, ErrorKindMapping) {
  EXPECT_EQ(rn::exit_code_for(ErrorKind::Infeasible), rn::kInfeasible);
  EXPECT_EQ(rn::exit_code_for(ErrorKind::ChannelClosed), rn::kInfeasible);
  EXPECT_EQ(rn::exit_code_for(ErrorKind::TransversalityFailure), rn::kVerifyFailed);
  EXPECT_EQ(rn::exit_code_for(ErrorKind::InvalidInput), rn::kInputError);
  EXPECT_EQ(rn::exit_code_for(ErrorKind::DimensionMismatch), rn::kInputError);
}

TEST(Commands, TraceWritesOneVerifiedRecordPerRealizedString) {
  auto s = rn::load_scenario(fixture::scenario_path("three_body.json"));
  rn::Options o;
  o.out_dir = scratch("trace");
  o.max_breaks = 2;
  const CommandResult r = run(rn::cmd_trace, s, o);
  EXPECT_EQ(r.code, rn::kPass) << r.log;
  const auto records = jsonl(o.out_dir / "traces.jsonl");
  ASSERT_FALSE(records.empty());
  const auto status = rn::json::parse(r.log);
  EXPECT_EQ(status["rays"].get<std::size_t>(), records.size());
  std::string last_key;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    EXPECT_EQ(rec["id"].get<std::size_t>(), i);
    EXPECT_TRUE(rec["verify"]["pass"].get<bool>());
    EXPECT_LE(rec["break_count"].get<int>(), 2);
    EXPECT_LE(rec["tau_min"].get<double>(), rec["tau_max"].get<double>());
    const auto key = rec["string"]["key"].get<std::string>();
    EXPECT_LT(last_key, key);
    last_key = key;
  }
  const std::string profile = slurp(o.out_dir / "tau_profile.csv");
  EXPECT_EQ(profile.rfind("ray_id,sample,t,tau\n", 0), 0u);
}

TEST(Commands, TraceCsvFormat) {
  auto s = rn::load_scenario(fixture::scenario_path("three_body.json"));
  rn::Options o;
  o.out_dir = scratch("trace_csv");
  o.max_breaks = 1;
  o.format = "csv";
  EXPECT_EQ(run(rn::cmd_trace, s, o).code, rn::kPass);
  const std::string csv = slurp(o.out_dir / "traces.csv");
  EXPECT_EQ(csv.rfind("ray_id,string,break_count,length,max_conservation_defect,pass\n", 0), 0u);
  EXPECT_FALSE(fs::exists(o.out_dir / "traces.jsonl"));
}

TEST(Commands, SingleStringTraceAndInfeasibleString) {
  auto s = rn::load_scenario(fixture::scenario_path("three_body_reflection.json"));
  rn::Options o;
  o.out_dir = scratch("trace_one");
  EXPECT_EQ(run(rn::cmd_trace, s, o).code, rn::kPass);
  EXPECT_EQ(jsonl(o.out_dir / "traces.jsonl").size(), 1u);

  // A bound leg cannot be entered from a free one at lambda = 1.
  s.trace->channels = {{0, 0}, {2, 0}};
  s.trace->propagation = {0, 2};
  const CommandResult r = run(rn::cmd_trace, s, o);
  EXPECT_EQ(r.code, rn::kInfeasible);
  EXPECT_EQ(rn::json::parse(r.log)["status"], "infeasible");
}

TEST(Commands, EnumerateMatchesTheLibrary) {
  auto s = rn::load_scenario(fixture::scenario_path("four_body.json"));
  rn::Options o;
  o.out_dir = scratch("enumerate");
  o.max_breaks = 1;
  EXPECT_EQ(run(rn::cmd_enumerate, s, o).code, rn::kPass);
  const auto w = rn::build_world(s);
  EXPECT_EQ(jsonl(o.out_dir / "strings.jsonl").size(), enumerate_strings(w.lattice, w.model, 1.0, 1).size());
}

TEST(Commands, BoundsOnTheThreeBodyScenario) {
  auto s = rn::load_scenario(fixture::scenario_path("three_body.json"));
  rn::Options o;
  o.out_dir = scratch("bounds");
  o.max_breaks = 3;
  s.run.sphere_samples = 2000;
  const CommandResult r = run(rn::cmd_bounds, s, o);
  EXPECT_EQ(r.code, rn::kPass) << r.log;
  const auto rep = rn::json::parse(slurp(o.out_dir / "bounds.json"));
  EXPECT_EQ(rep["body_count"], 3);
  EXPECT_NEAR(rep["l"].get<double>(), kPi / 12.0, 1e-12);
  EXPECT_EQ(rep["C1"].get<double>(), 2.0);
  EXPECT_LE(rep["observed"]["max_sublength"].get<double>(), kPi + 1e-9);
  EXPECT_TRUE(rep["pass"].get<bool>());
}

TEST(Commands, RelationRequiresChannelsAndAvoidsThresholds) {
  auto s = rn::load_scenario(fixture::scenario_path("two_body.json"));
  rn::Options o;
  o.out_dir = scratch("relation_err");
  try {
    run(rn::cmd_relation, s, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
  o.alpha = std::make_pair(0, 0);
  o.beta = std::make_pair(0, 0);
  o.lambda = 0.0;
  try {
    run(rn::cmd_relation, s, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
  o.lambda = -1.0;
  try {
    run(rn::cmd_relation, s, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(rn::exit_code_for(e.kind()), rn::kInfeasible);
  }
}

TEST(Commands, TwoBodyRelationIsTheAntipodalMap) {
  auto s = rn::load_scenario(fixture::scenario_path("two_body.json"));
  rn::Options o;
  o.out_dir = scratch("relation");
  o.alpha = std::make_pair(0, 0);
  o.beta = std::make_pair(0, 0);
  EXPECT_EQ(run(rn::cmd_relation, s, o).code, rn::kPass);
  std::ifstream in(o.out_dir / "relation.csv");
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string entry, witness, breaks, distance;
    std::getline(ss, entry, ',');
    std::getline(ss, witness, ',');
    std::getline(ss, breaks, ',');
    std::getline(ss, distance, ',');
    EXPECT_EQ(breaks, "0");
    EXPECT_NEAR(std::stod(distance), kPi, 1e-12);
    ++rows;
  }
  EXPECT_EQ(rows, s.run.samples);
}

TEST(Commands, CertifyGivenChain) {
  rn::Scenario s;
  s.masses = std::vector<double>{1.0, 1.0, 1.0};
  s.ambient_dim = 2;
  s.lambda = 1.0;
  const auto w = fixture::particles(3);
  const auto lines = fixture::clusters_of_dim(w.lat, 1);
  rn::ChainSpec chain;
  chain.string.propagation = {0, 0, 0};
  chain.string.channels = {{0, 0}, {0, 0}, {0, 0}};
  chain.string.breaks = {lines[0], lines[1]};
  chain.break_points = {0.8 * w.lat.subspace(lines[0]).basis().col(0), 1.3 * w.lat.subspace(lines[1]).basis().col(0)};
  chain.final_point = chain.break_points[1] + 2.0 * (chain.break_points[1] - chain.break_points[0]).normalized();
  s.certify = chain;
  rn::Options o;
  o.out_dir = scratch("certify");
  const CommandResult r = run(rn::cmd_certify, s, o);
  const auto rep = rn::json::parse(slurp(o.out_dir / "certificates.json"));
  ASSERT_EQ(rep["chains"].size(), 1u);
  EXPECT_EQ(r.code, rep["pass"].get<bool>() ? rn::kPass : rn::kVerifyFailed);
  for (const auto& c : rep["chains"][0]["certificates"]) {
    EXPECT_TRUE(c["psd"].get<bool>());
    EXPECT_LT(c["form_residual"].get<double>(), 1e-10);
  }
}

TEST(Determinism, OutputsDoNotDependOnTheThreadCount) {
  auto s = rn::load_scenario(fixture::scenario_path("three_body.json"));
  std::vector<std::string> traces, relations;
  for (const char* threads : {"1", "4"}) {
    ThreadCap cap(threads);
    rn::Options o;
    o.out_dir = scratch(std::string("det_") + threads);
    o.max_breaks = 2;
    run(rn::cmd_trace, s, o);
    traces.push_back(slurp(o.out_dir / "traces.jsonl") + slurp(o.out_dir / "tau_profile.csv"));
    o.max_breaks = 3;
    s.run.samples = 12;
    run(rn::cmd_relation, s, o);
    relations.push_back(slurp(o.out_dir / "relation.csv"));
  }
  EXPECT_FALSE(traces[0].empty());
  EXPECT_EQ(traces[0], traces[1]);
  EXPECT_EQ(relations[0], relations[1]);
}

TEST(Determinism, SeedChangesTheSample) {
  auto s = rn::load_scenario(fixture::scenario_path("three_body.json"));
  std::vector<std::string> out;
  for (std::uint64_t seed : {1u, 2u}) {
    rn::Options o;
    o.out_dir = scratch("seed_" + std::to_string(seed));
    o.max_breaks = 1;
    o.seed = seed;
    run(rn::cmd_trace, s, o);
    out.push_back(slurp(o.out_dir / "traces.jsonl"));
  }
  EXPECT_NE(out[0], out[1]);
}
