#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qstein/experiments.hpp"

namespace fs = std::filesystem;
using namespace qstein;
using namespace qstein::exp;

namespace {

// Exit codes: 0 success, 1 a checked inequality failed, 2 bad input or budget.
constexpr int exit_violation = 1;
constexpr int exit_input = 2;

struct Args {
  std::string config;
  std::string out;
  bool bits = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_max;
};

json manifest(const ExperimentConfig& cfg, const RunOptions& ro, const RunResult& r) {
  json fails = json::array();
  for (const auto& f : r.failures)
    fails.push_back({{"check", f.check}, {"lhs", num(f.lhs)}, {"rhs", num(f.rhs)}, {"slack", num(f.slack())},
                     {"fixture", f.fixture}});
  json files = json::array();
  for (const auto& [name, content] : r.files) files.push_back(name);
  return {{"schema_version", schema_version},
          {"experiment", cfg.experiment},
          {"seeds", cfg.seeds},
          {"n_range", {cfg.n_min, cfg.n_max}},
          {"units", ro.bits ? "bits" : "nats"},
          {"files", files},
          {"failures", fails},
          {"pass", r.ok()}};
}

int run(const std::string& sub, const Args& a) {
  RunOptions ro;
  ro.bits = a.bits;
  ro.seed = a.seed;
  ro.n_max = a.n_max;
  ExperimentConfig cfg;
  if (a.config.empty()) {
    require(sub == "examples", ErrorCode::invalid_argument, "--config is required for " + sub);
    cfg = parse_config(json{{"experiment", "examples"}, {"n_range", {1, 6}}}, fs::current_path(), ro);
  } else {
    cfg = load_config(a.config, ro);
  }
  require(cfg.experiment == sub, ErrorCode::invalid_argument,
          "config " + cfg.source + " is for " + cfg.experiment + ", not " + sub);
  const RunResult r = run_experiment(cfg, ro);
  auto files = r.files;
  files[sub + "_manifest.json"] = manifest(cfg, ro, r).dump(2) + "\n";
  const fs::path out = a.out.empty() ? fs::path(cfg.out_dir) : fs::path(a.out);
  write_files(out, files);
  for (const auto& f : r.failures) std::cerr << f.message() << "\n";
  std::cout << sub << ": " << r.files.size() << " file(s) in " << out.string() << ", "
            << (r.ok() ? "all checks hold" : std::to_string(r.failures.size()) + " check(s) violated") << "\n";
  return r.ok() ? 0 : exit_violation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Composite Stein exponent experiments"};
  app.require_subcommand(1);
  Args a;
  std::uint64_t seed = 0;
  int n_max = 0;

  std::vector<std::pair<std::string, CLI::App*>> runs;
  const std::vector<std::pair<std::string, std::string>> subs = {
      {"examples", "closed-form examples and averaged-state rates"},
      {"stein-iid", "iid Stein rates against the Renyi corridor"},
      {"stein-composite", "composite Stein rates and relative-entropy bounds"},
      {"stein-audit", "entropy-budget audit with pinching and projections"},
      {"second-law", "conversion protocol and resource non-generation"}};
  for (const auto& [name, help] : subs) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", a.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    s->add_option("--out", a.out, "output directory (default: the config's \"out\")");
    s->add_flag("--bits", a.bits, "report entropies and rates in bits");
    s->add_option("--seed", seed, "override the config seeds with one seed");
    s->add_option("--n-max", n_max, "override the largest n")->check(CLI::PositiveNumber);
    runs.push_back({name, s});
  }
  std::string results, plot_out;
  CLI::App* plot = app.add_subcommand("plotdata", "convert result files into plot data");
  plot->add_option("results,--config", results, "results directory to convert")->required();
  plot->add_option("--out", plot_out, "output directory (default: <results>/plot)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (plot->parsed()) {
      const fs::path out = plot_out.empty() ? fs::path(results) / "plot" : fs::path(plot_out);
      const auto files = emit_plotdata(results);
      write_files(out, files);
      std::cout << "plotdata: " << files.size() << " file(s) in " << out.string() << "\n";
      return 0;
    }
    for (const auto& [name, s] : runs) {
      if (!s->parsed()) continue;
      if (s->count("--seed")) a.seed = seed;
      if (s->count("--n-max")) a.n_max = n_max;
      return run(name, a);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_input;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed config or fixture: " << e.what() << "\n";
    return exit_input;
  }
  return exit_input;
}
