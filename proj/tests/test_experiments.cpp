#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "qstein/experiments.hpp"

using namespace qstein;
using namespace qstein::exp;
using Catch::Approx;

namespace {

ExperimentConfig cfg_of(const json& j) { return parse_config(j, std::filesystem::temp_directory_path()); }

std::vector<std::vector<std::string>> csv_rows(const std::string& csv) {
  std::vector<std::vector<std::string>> out;
  std::stringstream in(csv);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(split_csv_line(line));
  return out;
}

std::size_t col(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  REQUIRE(it != header.end());
  return static_cast<std::size_t>(it - header.begin());
}

const json s1_family = {{"kind", "orbit_diagonal"},
                        {"seed", {{"kind", "sigma_mu"}, {"mu", 0.2}}},
                        {"group", json::array({json::array({json::array({1, 0}), json::array({0, 1})}),
                                               json::array({json::array({1, 0}), json::array({0, -1})})})}};

}  // namespace

TEST_CASE("fixtures load inline objects and files relative to the config", "[fixtures]") {
  const auto dir = std::filesystem::temp_directory_path() / "qstein_fixture_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream o(dir / "rho.json");
    o << R"({"kind": "diag", "value": [0.75, 0.25]})";
  }
  const FixtureResolver res(dir, 7);
  const auto rho = load_state(json("rho.json"), res);
  CHECK(rho.matrix()(0, 0).real() == Approx(0.75));
  CHECK(res.describe(json("rho.json")) == (dir / "rho.json").string());
  CHECK(res.describe(json::object()) == "<inline>");

  const auto bell = load_state(json{{"kind", "max_entangled"}, {"d", 2}}, res);
  CHECK(bell.layout().factors() == 2);
  const auto r1 = load_state(json{{"kind", "random"}, {"dims", {2, 2}}, {"rank", 2}}, res);
  const auto r2 = load_state(json{{"kind", "random"}, {"dims", {2, 2}}, {"rank", 2}}, res);
  CHECK(max_abs(r1.matrix() - r2.matrix()) == 0.0);

  CHECK_THROWS_AS(load_state(json("missing.json"), res), Error);
  CHECK_THROWS_AS(load_state(json{{"kind", "nonsense"}}, res), Error);
  CHECK_THROWS_AS(load_state(json{{"kind", "diag"}, {"value", {0.5, 0.7}}}, res), Error);

  const auto ch = load_channel(json{{"kind", "depolarizing"}, {"p", 0.3}}, res);
  CHECK(ch.d_in() == 2);
  const auto prep = load_channel(json{{"kind", "prepare"}, {"state", {{"kind", "max_entangled"}, {"d", 2}}}}, res);
  CHECK(prep.d_in() == 1);
  CHECK(prep.d_out() == 4);

  const auto fam = load_family(s1_family, res);
  CHECK(fam.kind() == FamilyKind::orbit_diagonal);
  CHECK(fam.level(2).dim() == 4);
}

TEST_CASE("grouped reordering of per-copy channel sets preserves membership", "[fixtures]") {
  const FixtureResolver res(".", 1);
  const auto fam = load_channel_family(
      json{{"kind", "channel_polytope"},
           {"base", {{{"kind", "depolarizing"}, {"p", 1.0}}, {{"kind", "dephasing"}, {"p", 0.5}}}}},
      res);
  const auto per = fam.level(2);
  const auto grouped = to_grouped_order(per, 2, 1, 1);
  const QuantumChannel c = tensor_power(fam.base[1], 2);
  CHECK(membership(grouped, c.choi(), 1e-8).member);
  CHECK(membership(per, per_copy_choi(c, 2), 1e-8).member);

  const auto ppt = load_channel_family(json{{"kind", "ppt_channels"}, {"din", 2}, {"dout", 2}}, res);
  const auto pg = to_grouped_order(ppt.level(2), 2, 1, 1);
  const QuantumChannel dep = load_channel(json{{"kind", "depolarizing"}, {"p", 1.0}}, res);
  CHECK(membership(pg, tensor_power(dep, 2).choi(), 1e-7).member);
}

TEST_CASE("config parsing validates fields and applies overrides", "[config]") {
  const json base = {{"experiment", "stein-iid"}, {"n_range", {1, 3}}, {"eps", {0.1}}, {"seeds", {3}}};
  auto c = cfg_of(base);
  CHECK(c.n_max == 3);
  RunOptions ro;
  ro.seed = 11;
  ro.n_max = 2;
  c = parse_config(base, ".", ro);
  CHECK(c.n_max == 2);
  CHECK(c.seeds == std::vector<std::uint64_t>{11});
  CHECK(c.fixtures.seed() == 11);

  CHECK_THROWS_AS(cfg_of(json{{"experiment", "unknown"}}), Error);
  CHECK_THROWS_AS(cfg_of(json{{"experiment", "stein-iid"}, {"n_range", {3, 1}}}), Error);
  CHECK_THROWS_AS(cfg_of(json{{"experiment", "stein-iid"}, {"eps", {1.0}}}), Error);
  CHECK_THROWS_AS(cfg_of(json{{"experiment", "stein-iid"}, {"alpha", {0.5}}}), Error);
  CHECK_THROWS_AS(cfg_of(base).ref("rho"), Error);
}

TEST_CASE("cells are assembled in key order regardless of completion order", "[runner]") {
  std::vector<int> keys(23);
  for (int i = 0; i < 23; ++i) keys[static_cast<std::size_t>(i)] = i;
  const auto out = run_cells(
      keys,
      [](int k) {
        std::this_thread::sleep_for(std::chrono::microseconds((23 - k) * 50));
        return k * k;
      },
      4);
  REQUIRE(out.size() == 23);
  for (int i = 0; i < 23; ++i) CHECK(out[static_cast<std::size_t>(i)] == i * i);
}

TEST_CASE("number formatting is fixed and marks infinities", "[runner]") {
  CHECK(fmt(0.1) == "0.1");
  CHECK(fmt(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(fmt(1.0 / 3.0) == "0.333333333333");
  CHECK(num(std::numeric_limits<double>::infinity()) == json("inf"));
  const Failure f{"a <= b", 2.0, 1.5, "fx.json"};
  CHECK(f.slack() == Approx(-0.5));
  CHECK(f.message().find("slack -0.5") != std::string::npos);
  CHECK(f.message().find("fx.json") != std::string::npos);
}

TEST_CASE("example closed forms and averaged-state rates", "[examples]") {
  auto c = cfg_of(json{{"experiment", "examples"},
                       {"n_range", {1, 4}},
                       {"params", {{"mu", {0.1, 0.35}}, {"p", {0.4, 0.8}}, {"eps", {0.05, 0.3, 0.5}}}}});
  const auto r = run_examples(c);
  for (const auto& f : r.failures) INFO(f.message());
  CHECK(r.ok());
  const auto rows = csv_rows(r.files.at("examples.csv"));
  CHECK(rows.size() == 1 + 2 * 3 * 2);
  const auto av = csv_rows(r.files.at("averaged_rates.csv"));
  const auto& h = av.front();
  for (std::size_t i = 1; i < av.size(); ++i) {
    const auto& row = av[i];
    if (row[col(h, "example")] == "z2_average") {
      // the averaged-state rate approaches min D from below
      CHECK(std::stod(row[col(h, "gap")]) >= -1e-12);
      CHECK(row[col(h, "strict_gap")] == "false");
    } else {
      CHECK(std::stod(row[col(h, "rate_sigma_av")]) == Approx(-std::log(std::stod(row[col(h, "param")]))));
      CHECK(row[col(h, "strict_gap")] == "true");
    }
  }
}

TEST_CASE("Z2-average binomial rate matches an independent direct sum", "[examples]") {
  // direct sum over bit strings in the +/- basis
  const double mu = 0.3;
  for (int n = 1; n <= 5; ++n) {
    double d = 0;
    for (int x = 0; x < (1 << n); ++x) {
      const int k = __builtin_popcount(static_cast<unsigned>(x));
      const double q = 0.5 * (std::pow(mu, k) * std::pow(1 - mu, n - k) + std::pow(1 - mu, k) * std::pow(mu, n - k));
      d += std::pow(0.5, n) * (std::log(std::pow(0.5, n)) - std::log(q));
    }
    CHECK(z2_average_rate(mu, n) == Approx(d / n).margin(1e-12));
  }
  // the limit is D(I/2 || sigma[mu])
  const double dmin = -std::log(2.0) - 0.5 * std::log(mu * (1 - mu));
  // the limit is approached from below at rate O(1/sqrt(n))
  CHECK(z2_average_rate(mu, 100) < z2_average_rate(mu, 10000));
  CHECK(z2_average_rate(mu, 10000) < dmin);
  CHECK(z2_average_rate(mu, 40000) == Approx(dmin).margin(5e-3));
}

TEST_CASE("iid Stein rates stay inside the Renyi corridor", "[stein-iid]") {
  auto c = cfg_of(json{{"experiment", "stein-iid"},
                       {"fixtures",
                        {{"rho", {{"kind", "diag"}, {"value", {0.8, 0.2}}}},
                         {"sigma", {{"kind", "sigma_mu"}, {"mu", 0.3}}}}},
                       {"n_range", {1, 5}},
                       {"eps", {0.05, 0.3}},
                       {"alpha", {1.2, 2.0}}});
  RunOptions ro;
  const auto r = run_stein_iid(c, ro);
  for (const auto& f : r.failures) INFO(f.message());
  CHECK(r.ok());
  CHECK(csv_rows(r.files.at("stein_iid.csv")).size() == 11);
  ro.bits = true;
  const auto rb = run_stein_iid(c, ro);
  const auto a = csv_rows(r.files.at("stein_iid.csv")), b = csv_rows(rb.files.at("stein_iid.csv"));
  const auto cr = col(a.front(), "rate");
  CHECK(std::stod(b[3][cr]) == Approx(std::stod(a[3][cr]) / std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("composite Stein on a finite orbit equals the averaged-state rate", "[stein-composite]") {
  auto c = cfg_of(json{{"experiment", "stein-composite"},
                       {"fixtures", {{"rho", {{"kind", "maximally_mixed"}, {"dims", {2}}}}, {"family", s1_family}}},
                       {"n_range", {1, 3}},
                       {"eps", {0.1}},
                       {"alpha", {1.5}}});
  const auto r = run_stein_composite(c);
  for (const auto& f : r.failures) INFO(f.message());
  CHECK(r.ok());
  const auto rows = csv_rows(r.files.at("stein_composite.csv"));
  const auto& h = rows.front();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double comp = std::stod(rows[i][col(h, "composite_rate")]);
    CHECK(comp <= std::stod(rows[i][col(h, "rate_at_product_minimiser")]) + 1e-7);
  }
}

TEST_CASE("composite runs refuse levels beyond the desk budget", "[stein-composite]") {
  auto c = cfg_of(json{{"experiment", "stein-composite"},
                       {"fixtures",
                        {{"rho", {{"kind", "max_entangled"}, {"d", 2}}},
                         {"family", {{"kind", "ppt_pairs"}, {"da", 2}, {"db", 2}}}}},
                       {"n_range", {1, 3}}});
  CHECK_THROWS_AS(run_stein_composite(c), Error);
}

TEST_CASE("entropy-budget audit passes on orbit and polytope families", "[stein-audit]") {
  const json poly = {{"kind", "product_polytope"},
                     {"base", {{{"kind", "diag"}, {"value", {0.6, 0.4}}}, {{"kind", "sigma_mu"}, {"mu", 0.25}}}}};
  json inst = json::array();
  inst.push_back({{"n", 2}, {"m", 1}, {"eps", 0.1}});
  inst.push_back({{"n", 3}, {"m", 2}, {"eps", 0.2}, {"eps_tilde", 0.1}});
  inst.push_back({{"n", 3}, {"m", 1}, {"eps", 0.1}, {"R2", "auto"}, {"lambda_tilde", 0.0}});
  for (const json& fam : std::vector<json>{s1_family, poly}) {
    json j = {{"experiment", "stein-audit"}};
    j["fixtures"] = {{"rho", {{"kind", "diag"}, {"value", {0.9, 0.1}}}}, {"family", fam}};
    j["params"] = {{"instances", inst}};
    auto c = cfg_of(j);
    const auto r = run_stein_audit(c);
    for (const auto& f : r.failures) INFO(f.message());
    CHECK(r.ok());
    const auto rep = json::parse(r.files.at("stein_audit.json"));
    CHECK(rep.at("schema_version") == schema_version);
    REQUIRE(rep.at("instances").size() == 3);
    for (const auto& ri : rep.at("instances")) {
      const double masses = ri.at("mass_E1").get<double>() + ri.at("mass_E2").get<double>() +
                            ri.at("mass_E3").get<double>();
      CHECK(masses == Approx(1.0).margin(1e-9));
      CHECK(ri.at("log_blocks").get<double>() <= ri.at("log_vn").get<double>() + 1e-12);
    }
    // a requested lambda_tilde below lambda is replaced by lambda
    const auto& last = rep.at("instances")[2];
    CHECK(last.at("lambda_tilde").get<double>() >= last.at("lambda").get<double>());
  }
}

TEST_CASE("audit handles a degenerate threshold where P1 = P2", "[stein-audit]") {
  const FreeFamily fam = FreeFamily::product_polytope({Mat(identity(2) / 2.0)}, DimLayout::single(2));
  AuditParams a;
  a.n = 2;
  a.eps = 0.1;
  a.r2 = 0.2;
  a.r1 = 0.2;
  a.eps0 = 0.0;
  const Mat rho = identity(2) / 2.0;
  const auto r = stein_audit_instance(rho, fam, a);
  CHECK(r.pass);
  CHECK(r.mass_e2 == Approx(0.0).margin(1e-12));
  CHECK(r.lhs == Approx(0.0).margin(1e-9));
}

TEST_CASE("second-law protocol keeps free inputs near free outputs", "[second-law]") {
  auto c = cfg_of(json{{"experiment", "second-law"},
                       {"fixtures",
                        {{"n1", {{"kind", "identity"}, {"dims", {2}}}},
                         {"n2", {{"kind", "depolarizing"}, {"p", 0.3}}},
                         {"free_in", {{"kind", "ppt_channels"}, {"din", 2}, {"dout", 2}}},
                         {"free_reference", {{"kind", "depolarizing"}, {"p", 1.0}}}}},
                       {"n_range", {1, 2}},
                       {"eps", {0.2}},
                       {"params", {{"r", {1.0}}, {"truncation_rate", 0.4}}}});
  const auto r = run_second_law(c);
  for (const auto& f : r.failures) INFO(f.message());
  CHECK(r.ok());
  const auto rows = csv_rows(r.files.at("second_law.csv"));
  REQUIRE(rows.size() == 3);
  const auto& h = rows.front();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i][col(h, "non_generation")] == "true");
    const double t = std::stod(rows[i][col(h, "t")]);
    CHECK(t >= 0.8 - 1e-6);
  }
  const auto meta = json::parse(r.files.at("second_law_meta.json"));
  CHECK(meta.at("rate_ratio").get<double>() > 1.0);

  c.params["theta"] = "identity";
  c.fixture_refs["n2"] = c.fixture_refs["n1"];
  const auto id = run_second_law(c);
  for (const auto& row : csv_rows(id.files.at("second_law.csv")))
    if (row.front() != "n") CHECK(std::stod(row[col(h, "conversion_error")]) == Approx(0.0).margin(1e-12));
}

TEST_CASE("runs are byte-identical for the same config and seed", "[determinism]") {
  const json j = {{"experiment", "stein-composite"},
                  {"fixtures",
                   {{"rho", {{"kind", "random"}, {"dims", {2}}}},
                    {"family",
                     {{"kind", "product_polytope"},
                      {"base", {{{"kind", "random"}, {"dims", {2}}, {"seed", 5}}, {{"kind", "diag"}, {"value", {0.5, 0.5}}}}}}}}},
                  {"n_range", {1, 2}},
                  {"eps", {0.1, 0.2}},
                  {"seeds", {9}}};
  RunOptions serial;
  serial.max_threads = 1;
  const auto a = run_experiment(cfg_of(j), serial);
  const auto b = run_experiment(cfg_of(j));
  CHECK(a.files == b.files);
  RunOptions other;
  other.seed = 10;
  const auto c = run_experiment(parse_config(j, ".", other));
  CHECK(c.files != a.files);
}

TEST_CASE("plot data covers tables, reports and empty input", "[plotdata]") {
  const auto dir = std::filesystem::temp_directory_path() / "qstein_plot_test";
  std::filesystem::remove_all(dir);
  auto empty = emit_plotdata(dir);
  REQUIRE(empty.size() == 1);
  CHECK(empty.at("index.dat") == "# file kind\n");

  std::map<std::string, std::string> files;
  files["stein_iid.csv"] = "n,eps,rate,relative_entropy\n1,0.1,0.5,0.7\n2,0.1,0.6,0.7\n1,0.2,0.55,0.7\n";
  files["audit.json"] = R"({"instances": [{"n": 2, "eps": 0.1, "pass": true}]})";
  write_files(dir, files);
  const auto out = emit_plotdata(dir);
  CHECK(out.at("stein_iid.dat").rfind("# n eps rate relative_entropy\n", 0) == 0);
  const std::string series = out.at("stein_iid_series.dat");
  CHECK(series.find("# eps 0.1\n1 0.5\n2 0.6\n") != std::string::npos);
  CHECK(series.find("# n relative_entropy\n1 0.7\n2 0.7\n") != std::string::npos);
  CHECK(out.at("audit_summary.txt") == "entropy_budget n=2 eps=0.1 pass\n");
  CHECK(out.at("index.dat") == "# file kind\naudit.json report\nstein_iid.csv table\n");
}
