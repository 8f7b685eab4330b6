#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "brokenray/runner.hpp"

namespace br = brokenray;
namespace rn = brokenray::runner;

namespace {

std::pair<int, int> parse_channel_ref(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw br::Error(br::ErrorKind::InvalidInput, "channel must be cluster:index");
  try {
    return {std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1))};
  } catch (const std::exception&) {
    throw br::Error(br::ErrorKind::InvalidInput, "channel must be cluster:index, got " + text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Broken ray tracer for many-body scattering geometry"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir = ".";
  std::string format = "jsonl";
  double lambda = 0.0;
  int max_breaks = 0;
  std::uint64_t seed = 0;
  std::string alpha;
  std::string beta;

  std::vector<CLI::App*> subs;
  const std::pair<const char*, const char*> commands[] = {
      {"trace", "simulate rays and write traces with tau profiles"},
      {"relation", "elementary relations and Lagrangian certificates for a channel pair"},
      {"bounds", "local length, break bound and observed break counts"},
      {"certify", "realize every enumerated string and verify it"},
      {"enumerate", "list admissible break strings"},
  };
  for (const auto& [name, about] : commands) {
    CLI::App* sub = app.add_subcommand(name, about);
    sub->add_option("--scenario", scenario_path, "scenario JSON")->required();
    sub->add_option("--lambda", lambda, "total energy");
    sub->add_option("--max-breaks", max_breaks, "break count cap")->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", seed, "RNG seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--format", format, "trace output format")->check(CLI::IsMember({"jsonl", "csv"}));
    if (std::string(name) == "relation") {
      sub->add_option("--alpha", alpha, "incoming channel cluster:index");
      sub->add_option("--beta", beta, "outgoing channel cluster:index");
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : rn::kInputError;
  }

  try {
    rn::Scenario scenario = rn::load_scenario(scenario_path);
    rn::Options opt;
    opt.out_dir = out_dir;
    opt.format = format;
    for (CLI::App* sub : subs) {
      if (!sub->parsed()) continue;
      if (sub->count("--lambda")) opt.lambda = lambda;
      if (sub->count("--max-breaks")) opt.max_breaks = max_breaks;
      if (sub->count("--seed")) opt.seed = seed;
      if (sub->get_name() == "relation") {
        if (sub->count("--alpha")) opt.alpha = parse_channel_ref(alpha);
        if (sub->count("--beta")) opt.beta = parse_channel_ref(beta);
      }
      const std::string name = sub->get_name();
      if (name == "trace") return rn::cmd_trace(scenario, opt);
      if (name == "relation") return rn::cmd_relation(scenario, opt);
      if (name == "bounds") return rn::cmd_bounds(scenario, opt);
      if (name == "certify") return rn::cmd_certify(scenario, opt);
      if (name == "enumerate") return rn::cmd_enumerate(scenario, opt);
    }
  } catch (const br::Error& e) {
    std::cerr << rn::dump17(rn::json{{"status", "error"}, {"kind", br::to_string(e.kind())}, {"reason", e.what()}})
              << "\n";
    return rn::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << rn::dump17(rn::json{{"status", "error"}, {"kind", "InvalidInput"}, {"reason", e.what()}}) << "\n";
    return rn::kInputError;
  }
  return rn::kInputError;
}
