#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "qstein/fixtures.hpp"
#include "qstein/hyptest.hpp"
#include "qstein/symmetry.hpp"

namespace qstein::exp {

inline constexpr int schema_version = 1;
inline constexpr const char* calibration_note =
    "gap thresholds are calibration choices; no finite-n convergence rate is asserted";

// ---------- configuration ----------

struct ExperimentConfig {
  std::string experiment;
  std::string source = "<inline>";  // config path, for messages
  FixtureResolver fixtures;
  json fixture_refs = json::object();  // name -> inline object or relative path
  int n_min = 1, n_max = 1;
  std::vector<double> eps{0.1};
  std::vector<double> alpha{1.5};
  std::vector<std::uint64_t> seeds{1};
  std::string out_dir = "results";
  json params = json::object();

  const json& ref(const std::string& name) const {
    require(fixture_refs.contains(name), ErrorCode::invalid_argument,
            "config " + source + " lacks fixture \"" + name + "\"");
    return fixture_refs.at(name);
  }
  std::string fixture_path(const std::string& name) const {
    return fixture_refs.contains(name) ? fixtures.describe(fixture_refs.at(name)) : "<none>";
  }
};

struct RunOptions {
  bool bits = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_max;
  unsigned max_threads = 0;  // 0: hardware concurrency
};

inline const std::vector<std::string>& known_experiments() {
  static const std::vector<std::string> e = {"examples", "stein-iid", "stein-composite", "stein-audit", "second-law"};
  return e;
}

// Parses a config object; fixture paths resolve against base_dir.
inline ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir, const RunOptions& ro = {},
                                     const std::string& source = "<inline>") {
  ExperimentConfig c;
  c.source = source;
  c.experiment = j.at("experiment").get<std::string>();
  const auto& ks = known_experiments();
  require(std::find(ks.begin(), ks.end(), c.experiment) != ks.end(), ErrorCode::invalid_argument,
          "unknown experiment: " + c.experiment);
  if (j.contains("fixtures")) c.fixture_refs = j.at("fixtures");
  if (j.contains("n_range")) {
    const auto r = j.at("n_range").get<std::vector<int>>();
    require(r.size() == 2 && r[0] >= 1 && r[0] <= r[1], ErrorCode::invalid_argument, "n_range must be [lo, hi]");
    c.n_min = r[0];
    c.n_max = r[1];
  }
  if (j.contains("eps")) c.eps = j.at("eps").get<std::vector<double>>();
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<std::vector<double>>();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("out")) c.out_dir = j.at("out").get<std::string>();
  if (j.contains("params")) c.params = j.at("params");
  if (ro.seed) c.seeds = {*ro.seed};
  if (ro.n_max) c.n_max = std::max(c.n_min, *ro.n_max);
  require(!c.seeds.empty(), ErrorCode::invalid_argument, "seeds must not be empty");
  for (double e : c.eps) require(e >= 0 && e < 1, ErrorCode::invalid_argument, "eps must lie in [0,1)");
  for (double a : c.alpha) require(a > 1, ErrorCode::invalid_argument, "alpha must exceed 1");
  c.fixtures = FixtureResolver(base_dir, c.seeds.front());
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const RunOptions& ro = {}) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::invalid_argument, "config not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, "config " + path.string() + " does not parse: " + e.what());
  }
  return parse_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path(), ro,
                      path.string());
}

// ---------- results ----------

struct Failure {
  std::string check;
  double lhs = 0, rhs = 0;
  std::string fixture;
  double slack() const { return rhs - lhs; }
  std::string message() const {
    std::ostringstream s;
    s.precision(12);
    s << "violated: " << check << " (lhs " << lhs << ", rhs " << rhs << ", slack " << slack() << ") fixture "
      << fixture;
    return s.str();
  }
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string csv() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
      out += "\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }
};

struct RunResult {
  std::map<std::string, std::string> files;  // file name -> content; map keeps output order fixed
  std::vector<Failure> failures;
  bool ok() const { return failures.empty(); }
};

inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

inline std::string fmt(bool b) { return b ? "true" : "false"; }

inline json num(double x) {
  if (std::isfinite(x)) return x;
  return std::isnan(x) ? json("nan") : json(x > 0 ? "inf" : "-inf");
}

// Evaluates f over keys concurrently; results come back in key order.
template <class K, class F>
auto run_cells(const std::vector<K>& keys, F f, unsigned max_threads = 0) {
  using R = decltype(f(keys.front()));
  std::vector<R> out;
  out.reserve(keys.size());
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t width = std::max<std::size_t>(1, max_threads ? max_threads : hw);
  for (std::size_t lo = 0; lo < keys.size(); lo += width) {
    std::vector<std::future<R>> fs;
    for (std::size_t i = lo; i < std::min(keys.size(), lo + width); ++i)
      fs.push_back(std::async(std::launch::async, f, keys[i]));
    for (auto& x : fs) out.push_back(x.get());
  }
  return out;
}

inline double unit(const RunOptions& ro) { return ro.bits ? 1.0 / std::log(2.0) : 1.0; }

// -(1/n) log beta, +inf when beta vanishes.
inline double rate_of(double beta, int n) {
  return beta > 0 ? -std::log(beta) / n : std::numeric_limits<double>::infinity();
}

// ---------- closed forms ----------

inline double z2_pointwise_beta(double mu, double eps) { return 1 - 2 * (1 - mu) * eps; }
inline double phase_pointwise_beta(double p, double eps) {
  if (eps >= p) return 0.0;
  const double r = std::sqrt((1 - eps) * p) - std::sqrt(eps * (1 - p));
  return r * r;
}

// (1/n) D((I/2)^(x)n || sigma_av^n) for the two-element orbit of sigma[mu], by binomial counting in the +/- basis.
inline double z2_average_rate(double mu, int n) {
  double d = 0;
  for (int k = 0; k <= n; ++k) {
    const double w = std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
    // log q in log space; q underflows for large n
    const double a = k * std::log(mu) + (n - k) * std::log(1 - mu), b = k * std::log(1 - mu) + (n - k) * std::log(mu);
    const double log_q = std::log(0.5) + std::max(a, b) + std::log1p(std::exp(-std::abs(a - b)));
    d += w * (-n * std::log(2.0) - log_q);
  }
  return d / n;
}

// ---------- examples ----------

inline RunResult run_examples(const ExperimentConfig& cfg, const RunOptions& ro = {}) {
  const json& p = cfg.params;
  const auto mus = p.value("mu", std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
  const auto ps = p.value("p", std::vector<double>{0.3, 0.5, 0.7});
  const auto eps = p.value("eps", std::vector<double>{0.05, 0.1, 0.25, 0.5});
  const int n_classical = std::min(cfg.n_max, 6);
  const int phase_order = p.value("phase_order", 4);
  const double tol = p.value("tolerance", 1e-5);
  RunResult res;

  struct Cell {
    std::string ex;
    double param, eps;
  };
  std::vector<Cell> cells;
  for (double mu : mus)
    for (double e : eps) {
      require(mu >= 0 && mu <= 0.5 && e <= 0.5, ErrorCode::invalid_argument, "the Z2 mixture example needs mu, eps in [0, 1/2]");
      cells.push_back({"z2_mixture", mu, e});
    }
  for (double pp : ps)
    for (double e : eps) cells.push_back({"phase_pure", pp, e});

  struct Out {
    double comp, comp_exp, pw, pw_exp;
  };
  const auto outs = run_cells(
      cells,
      [&](const Cell& c) {
        Out o{};
        if (c.ex == "z2_mixture") {
          Mat z = identity(2);
          z(1, 1) = -1;
          const auto set = ConvexStateSet::orbit(detail::sigma_mu(c.param), {identity(2), z}, DimLayout::single(2));
          const Mat rho = identity(2) / 2.0;
          o.comp = beta_composite(rho, set, c.eps).value;
          o.comp_exp = 1 - c.eps;
          o.pw = beta_worstcase_pointwise(rho, set, c.eps).value;
          o.pw_exp = z2_pointwise_beta(c.param, c.eps);
        } else {
          const auto set = ConvexStateSet::orbit(detail::phi_p(c.param), phase_group(phase_order), DimLayout::single(2));
          Mat rho = Mat::Zero(2, 2);
          rho(0, 0) = 1;
          o.comp = beta_composite(rho, set, c.eps).value;
          o.comp_exp = (1 - c.eps) * c.param;
          o.pw = beta_worstcase_pointwise(rho, set, c.eps).value;
          o.pw_exp = phase_pointwise_beta(c.param, c.eps);
        }
        return o;
      },
      ro.max_threads);

  Table t{{"example", "param", "eps", "composite", "composite_expected", "pointwise", "pointwise_expected",
           "composite_error", "pointwise_error"},
          {}};
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    const auto& o = outs[i];
    const double ce = std::abs(o.comp - o.comp_exp), pe = std::abs(o.pw - o.pw_exp);
    t.rows.push_back({c.ex, fmt(c.param), fmt(c.eps), fmt(o.comp), fmt(o.comp_exp), fmt(o.pw), fmt(o.pw_exp), fmt(ce),
                      fmt(pe)});
    const std::string where = c.ex + " param=" + fmt(c.param) + " eps=" + fmt(c.eps);
    if (ce > tol) res.failures.push_back({"|composite - closed form| <= tol at " + where, ce, tol, cfg.source});
    if (pe > tol) res.failures.push_back({"|pointwise - closed form| <= tol at " + where, pe, tol, cfg.source});
  }
  res.files["examples.csv"] = t.csv();

  // averaged-state rates: z2_average (rho = I/2, orbit of sigma[mu]) and phase_average (rho = |0><0|, phase orbit of phi_p)
  const double u = unit(ro);
  Table a{{"example", "param", "n", "rate_sigma_av", "rate_sigma_av_matrix", "min_relative_entropy", "gap",
           "strict_gap"},
          {}};
  for (double mu : mus) {
    if (mu <= 0 || mu >= 1) continue;
    const double dmin = relative_entropy(Mat(identity(2) / 2.0), detail::sigma_mu(mu)).nats;
    Mat z = identity(2);
    z(1, 1) = -1;
    std::vector<double> gaps;
    for (int n = 1; n <= n_classical; ++n) {
      const double rc = z2_average_rate(mu, n);
      const Mat av = averaged_state(tensor_power(detail::sigma_mu(mu), n), tensor_power_group({identity(2), z}, n));
      const double rm = relative_entropy(Mat(identity(1 << n) / static_cast<double>(1 << n)), av).nats / n;
      gaps.push_back(dmin - rc);
      if (std::abs(rc - rm) > 1e-8)
        res.failures.push_back({"z2_average classical rate equals matrix rate at mu=" + fmt(mu) + " n=" + std::to_string(n),
                                std::abs(rc - rm), 1e-8, cfg.source});
      if (rc > dmin + 1e-9)
        res.failures.push_back({"z2_average rate <= min D at mu=" + fmt(mu) + " n=" + std::to_string(n), rc, dmin, cfg.source});
      // the gap must shrink toward zero; a non-decreasing gap marks a strict-gap regime
      const bool strict = gaps.size() > 1 && gaps.back() >= gaps[gaps.size() - 2] - 1e-12 && gaps.back() > 1e-9;
      a.rows.push_back({"z2_average", fmt(mu), std::to_string(n), fmt(rc * u), fmt(rm * u), fmt(dmin * u), fmt((dmin - rc) * u),
                        fmt(strict)});
    }
  }
  for (double pp : ps) {
    for (int n = 1; n <= n_classical; ++n) {
      const double rc = -std::log(pp);
      // a phase group of order n+1 averages away every coherence between Hamming-weight sectors
      const auto g = tensor_power_group(phase_group(n + 1), n);
      const Mat av = averaged_state(tensor_power(detail::phi_p(pp), n), g);
      Mat r0 = Mat::Zero(1 << n, 1 << n);
      r0(0, 0) = 1;
      const double rm = relative_entropy(r0, av).nats / n;
      if (std::abs(rc - rm) > 1e-8)
        res.failures.push_back({"phase_average rate equals -log p at p=" + fmt(pp) + " n=" + std::to_string(n), std::abs(rc - rm),
                                1e-8, cfg.source});
      const double dmin = std::numeric_limits<double>::infinity();  // rho and the pure orbit states differ
      a.rows.push_back({"phase_average", fmt(pp), std::to_string(n), fmt(rc * u), fmt(rm * u), fmt(dmin), fmt(dmin), fmt(true)});
    }
  }
  res.files["averaged_rates.csv"] = a.csv();
  return res;
}

// ---------- IID Stein ----------

// Achievability: -(1/n) log beta_eps >= D_s(rho||sigma) + s log(eps) / (n (1-s)) for Petz D_s, s in (0,1).
inline double achievability_bound(const Mat& rho, const Mat& sigma, double eps, int n) {
  if (eps <= 0) return -std::numeric_limits<double>::infinity();
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 1; i < 20; ++i) {
    const double s = i / 20.0;
    const auto d = petz_renyi(rho, sigma, s);
    if (d.infinite) return std::numeric_limits<double>::infinity();
    best = std::max(best, d.nats + s * std::log(eps) / (n * (1 - s)));
  }
  return best;
}

inline RunResult run_stein_iid(const ExperimentConfig& cfg, const RunOptions& ro = {}) {
  const DensityOperator rho = load_state(cfg.ref("rho"), cfg.fixtures);
  const DensityOperator sigma = load_state(cfg.ref("sigma"), cfg.fixtures);
  require(rho.layout() == sigma.layout(), ErrorCode::shape_mismatch, "rho and sigma differ in layout");
  require(std::pow(static_cast<double>(rho.dim()), cfg.n_max) <= 256, ErrorCode::budget_exceeded,
          "stein-iid is limited to total dimension 256");
  const std::string fx = cfg.fixture_path("rho") + ", " + cfg.fixture_path("sigma");
  const double d = relative_entropy(rho.matrix(), sigma.matrix()).nats;

  std::vector<std::pair<int, double>> keys;
  for (int n = cfg.n_min; n <= cfg.n_max; ++n)
    for (double e : cfg.eps) keys.push_back({n, e});
  struct Out {
    double rate, ach;
    std::vector<double> sc;
  };
  const auto outs = run_cells(
      keys,
      [&](const std::pair<int, double>& k) {
        Out o{};
        const auto [n, e] = k;
        o.rate = rate_of(beta_simple(tensor_power(rho.matrix(), n), tensor_power(sigma.matrix(), n), e).value, n);
        o.ach = achievability_bound(rho.matrix(), sigma.matrix(), e, n);
        for (double a : cfg.alpha) o.sc.push_back(strong_converse_bound(rho.matrix(), sigma.matrix(), 1, n, e, a).rhs);
        return o;
      },
      ro.max_threads);

  const double u = unit(ro);
  Table t{{"n", "eps", "rate", "relative_entropy", "renyi_bound", "achievability_bound"}, {}};
  for (double a : cfg.alpha) t.header.push_back("strong_converse_alpha_" + fmt(a));
  RunResult res;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto [n, e] = keys[i];
    const auto& o = outs[i];
    const double upper = *std::min_element(o.sc.begin(), o.sc.end());
    std::vector<std::string> row{std::to_string(n), fmt(e), fmt(o.rate * u), fmt(d * u), fmt(upper * u), fmt(o.ach * u)};
    for (double x : o.sc) row.push_back(fmt(x * u));
    t.rows.push_back(row);
    const std::string at = " at n=" + std::to_string(n) + " eps=" + fmt(e);
    if (std::isfinite(upper) && !(o.rate <= upper + 1e-7))
      res.failures.push_back({"rate <= Renyi strong-converse bound" + at, o.rate, upper + 1e-7, fx});
    if (std::isfinite(o.ach) && !(o.ach <= o.rate + 1e-9))
      res.failures.push_back({"achievability bound <= rate" + at, o.ach, o.rate + 1e-9, fx});
  }
  res.files["stein_iid.csv"] = t.csv();
  return res;
}

// ---------- composite Stein ----------

inline void check_n_budget(const FreeFamily& fam, int n_max) {
  const bool sdp = fam.kind() == FamilyKind::ppt_pairs;
  const double dim = std::pow(static_cast<double>(fam.site_dim()), n_max);
  require(!sdp || dim <= 16, ErrorCode::budget_exceeded, "PPT families are limited to total dimension 16");
  require(dim <= 64, ErrorCode::budget_exceeded, "composite runs are limited to total dimension 64");
}

inline RunResult run_stein_composite(const ExperimentConfig& cfg, const RunOptions& ro = {}) {
  const DensityOperator rho = load_state(cfg.ref("rho"), cfg.fixtures);
  const FreeFamily fam = load_family(cfg.ref("family"), cfg.fixtures);
  require(rho.dim() == fam.site_dim(), ErrorCode::shape_mismatch, "rho does not match the family site");
  check_n_budget(fam, cfg.n_max);
  const std::string fx = cfg.fixture_path("rho") + ", " + cfg.fixture_path("family");
  FwOptions fw;
  fw.gap_tol = cfg.params.value("fw_gap_tol", 1e-7);
  fw.max_lmo_calls = cfg.params.value("fw_max_oracle_calls", 40);

  // relative-entropy column, level by level with product warm starts
  std::vector<Mat> argmins;
  std::map<int, RelEntropyResult> rr;
  std::vector<ConvexStateSet> sym;
  for (int n = 1; n <= cfg.n_max; ++n) {
    sym.push_back(symmetrized_subset(fam.level(n), fam.site_dim(), n));
    std::vector<Mat> seeds;
    for (int m = 1; 2 * m <= n; ++m)
      seeds.push_back(kron(argmins[static_cast<std::size_t>(m - 1)], argmins[static_cast<std::size_t>(n - m - 1)]));
    auto r = min_relative_entropy(tensor_power(rho.matrix(), n), sym.back(), fw, seeds);
    argmins.push_back(r.argmin);
    rr[n] = r;
  }
  const bool orbit = fam.kind() == FamilyKind::orbit_diagonal;
  // sigma_1^(x)n must lie in S_n: hull points qualify for polytopes and PPT sets, only orbit points for orbits
  Mat sigma1 = argmins.front();
  if (orbit) {
    double best = std::numeric_limits<double>::infinity();
    for (const Mat& v : fam.level(1).vertices()) {
      const double dv = relative_entropy(rho.matrix(), v).nats;
      if (dv < best) {
        best = dv;
        sigma1 = v;
      }
    }
  }

  std::vector<std::pair<int, double>> keys;
  for (int n = cfg.n_min; n <= cfg.n_max; ++n)
    for (double e : cfg.eps) keys.push_back({n, e});
  struct Out {
    double comp, tilde, sc, av;
  };
  const auto outs = run_cells(
      keys,
      [&](const std::pair<int, double>& k) {
        const auto [n, e] = k;
        const Mat rn = tensor_power(rho.matrix(), n);
        Out o{};
        o.comp = rate_of(beta_composite(rn, sym[static_cast<std::size_t>(n - 1)], e).value, n);
        o.tilde = rate_of(beta_simple(rn, tensor_power(sigma1, n), e).value, n);
        o.sc = std::numeric_limits<double>::infinity();
        for (double a : cfg.alpha) o.sc = std::min(o.sc, strong_converse_bound(rho.matrix(), sigma1, 1, n, e, a).rhs);
        o.av = std::numeric_limits<double>::quiet_NaN();
        if (orbit) {
          const Mat av = averaged_state(tensor_power(fam.base().front(), n), tensor_power_group(fam.group(), n));
          o.av = rate_of(beta_simple(rn, av, e).value, n);
        }
        return o;
      },
      ro.max_threads);

  const double u = unit(ro);
  Table t{{"n", "eps", "composite_rate", "relative_entropy_per_copy", "relative_entropy_gap_bound", "gap",
           "rate_at_product_minimiser", "strong_converse_bound", "sigma_av_rate"},
          {}};
  RunResult res;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto [n, e] = keys[i];
    const auto& o = outs[i];
    const auto& r = rr.at(n);
    const double rpc = r.value / n;
    t.rows.push_back({std::to_string(n), fmt(e), fmt(o.comp * u), fmt(rpc * u), fmt(r.gap / n * u),
                      fmt((rpc - o.comp) * u), fmt(o.tilde * u), fmt(o.sc * u), fmt(o.av * u)});
    const std::string at = " at n=" + std::to_string(n) + " eps=" + fmt(e);
    if (!(o.comp <= o.tilde + 1e-7))
      res.failures.push_back({"composite rate <= rate against sigma_1^(x)n" + at, o.comp, o.tilde + 1e-7, fx});
    if (std::isfinite(o.sc) && !(o.tilde <= o.sc + 1e-7))
      res.failures.push_back({"rate against sigma_1^(x)n <= strong-converse bound" + at, o.tilde, o.sc + 1e-7, fx});
    if (orbit && std::isfinite(o.av) && std::abs(o.av - o.comp) > 1e-5)
      res.failures.push_back({"composite rate equals sigma_av rate" + at, std::abs(o.av - o.comp), 1e-5, fx});
  }
  res.files["stein_composite.csv"] = t.csv();
  json meta{{"schema_version", schema_version}, {"experiment", "stein-composite"}, {"note", calibration_note}};
  res.files["stein_composite_meta.json"] = meta.dump(2) + "\n";
  return res;
}

// ---------- entropy-budget audit ----------

struct AuditParams {
  int n = 2;
  int m = 1;
  double eps = 0.1;
  std::optional<double> r2, r1;      // unset: measured
  std::optional<double> eps0;        // unset: from eps_tilde, else 0
  std::optional<double> eps_tilde;
  double eps2 = 0.05;
  std::optional<double> lambda_tilde;
};

inline AuditParams parse_audit_params(const json& j) {
  AuditParams a;
  a.n = j.value("n", 2);
  a.m = j.value("m", 1);
  a.eps = j.value("eps", 0.1);
  auto opt = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j.at(k).is_string()) return std::nullopt;  // "auto"
    return j.at(k).get<double>();
  };
  a.r2 = opt("R2");
  a.r1 = opt("R1");
  a.eps0 = opt("eps0");
  a.eps_tilde = opt("eps_tilde");
  a.eps2 = j.value("eps2", 0.05);
  a.lambda_tilde = opt("lambda_tilde");
  return a;
}

struct AuditRecord {
  AuditParams params;
  double r2 = 0, r1 = 0, eps0 = 0, lambda = 0, lambda_tilde = 0, lambda_n = 0;
  double lhs = 0, rhs = 0, rhs_closed = 0;
  double mass_e1 = 0, mass_e2 = 0, mass_e3 = 0;
  double commutation = 0, order_residual = 0;
  int blocks = 0;
  double identity_residual = 0, d_rho_pinched = 0, log_blocks = 0, log_vn = 0;
  bool pass = false;
  std::vector<std::string> notes;
  json to_json() const {
    json notes_j = json::array();
    for (const auto& s : notes) notes_j.push_back(s);
    return {{"n", params.n},
            {"m", params.m},
            {"eps", params.eps},
            {"R2", num(r2)},
            {"R1", num(r1)},
            {"eps0", num(eps0)},
            {"eps2", params.eps2},
            {"lambda", num(lambda)},
            {"lambda_tilde", num(lambda_tilde)},
            {"lambda_n", num(lambda_n)},
            {"lhs", num(lhs)},
            {"rhs", num(rhs)},
            {"rhs_closed_form", num(rhs_closed)},
            {"mass_E1", num(mass_e1)},
            {"mass_E2", num(mass_e2)},
            {"mass_E3", num(mass_e3)},
            {"commutation_residual", num(commutation)},
            {"p2_le_p1_residual", num(order_residual)},
            {"pinching_blocks", blocks},
            {"pinching_identity_residual", num(identity_residual)},
            {"d_rho_pinched", num(d_rho_pinched)},
            {"log_blocks", num(log_blocks)},
            {"log_vn", num(log_vn)},
            {"pass", pass},
            {"notes", notes_j}};
  }
};

// Builds sigma_n', the pinching, P_{n,1}, P_{n,2} and checks the entropy-budget inequality.
inline AuditRecord stein_audit_instance(const Mat& rho, const FreeFamily& fam, const AuditParams& ap,
                                        const FwOptions& fw = {}) {
  AuditRecord r;
  r.params = ap;
  const int n = ap.n, m = ap.m;
  require(n >= 1 && m >= 1 && m <= n, ErrorCode::invalid_argument, "audit needs 1 <= m <= n");
  const int sd = fam.site_dim();
  const Mat rn = tensor_power(rho, n);

  const auto sn = symmetrized_subset(fam.level(n), sd, n);
  const auto pw = beta_worstcase_pointwise(rn, sn, ap.eps);
  const Mat sigma_star = pw.argmax;
  const auto mrr = min_relative_entropy(tensor_power(rho, m), fam.level(m), fw);
  const Mat sigma_m = mrr.argmin;
  r.r2 = ap.r2 ? *ap.r2 : mrr.value / m;
  if (!ap.r2) r.notes.push_back("R2 measured as (1/m) min D(rho^(x)m || S_m)");
  r.r1 = ap.r1 ? *ap.r1 : rate_of(pw.value, n);
  if (!ap.r1) r.notes.push_back("R1 measured as -(1/n) log max beta_eps(rho^(x)n || sigma), sigma in S_n,sym");
  if (ap.eps0) r.eps0 = *ap.eps0;
  else if (ap.eps_tilde) r.eps0 = (ap.eps - *ap.eps_tilde) / (1 - ap.eps) * (r.r2 - r.r1);
  if (r.r1 > r.r2 + r.eps0) {
    r.notes.push_back("R1 lowered from " + fmt(r.r1) + " to R2 + eps0 so that P_{n,2} <= P_{n,1}");
    r.r1 = r.r2 + r.eps0;
  }

  const int k = n / m, rest = n - k * m;
  Mat tilde = tensor_power(sigma_m, k);
  if (rest > 0) tilde = kron(tilde, fam.sigma_full(rest));
  const Mat sp = hermitize((sigma_star + twirl(tilde, sd, n) + fam.sigma_full(n)) / 3.0);

  r.lambda = fam.lambda();
  const double floor = r.r2 + r.eps0 + ap.eps2;
  r.lambda_tilde = std::max(ap.lambda_tilde.value_or(r.lambda), r.lambda);
  if (r.lambda_tilde < floor) {
    r.notes.push_back("lambda_tilde raised from " + fmt(r.lambda_tilde) + " to R2 + eps0 + eps2");
    r.lambda_tilde = floor;
  }
  r.lambda_n = r.lambda_tilde + std::log(3.0) / n;

  const PinchingMap pin(sp);
  r.blocks = pin.num_blocks();
  const Mat er = pin.apply(rn);
  const Mat p1 = spectral_projection_leq(er, std::exp(n * floor) * sp);
  const Mat p2 = spectral_projection_leq(er, std::exp(n * (r.r1 + ap.eps2)) * sp);
  const int d = static_cast<int>(rn.rows());
  const Mat e1 = identity(d) - p1, e2 = p1 - p2;
  r.mass_e1 = inner(e1, er);
  r.mass_e2 = inner(e2, er);
  r.mass_e3 = inner(p2, er);
  r.lhs = relative_entropy(er, sp).nats / n;
  r.rhs = r.mass_e1 * r.lambda_n + r.mass_e2 * floor + r.mass_e3 * (r.r1 + ap.eps2);
  r.rhs_closed = r.lambda_n - inner(p1, er) * (r.lambda_n - floor) - inner(p2, er) * (r.r2 - r.r1 + r.eps0);
  auto comm = [](const Mat& a, const Mat& b) { return max_abs(a * b - b * a); };
  r.commutation = std::max({comm(er, sp), comm(p1, p2), comm(p1, er), comm(p2, er), comm(p1, sp), comm(p2, sp)});
  r.order_residual = max_abs(p1 * p2 - p2);

  const auto pa = pinching_entropy_identity_audit(rn, sp);
  r.identity_residual = pa.identity_residual;
  r.d_rho_pinched = pa.d_rho_pinched;
  r.log_blocks = pa.log_blocks;
  r.log_vn = std::log(static_cast<double>(eigenvalue_count_bound(n, sd)));

  r.pass = r.lhs <= r.rhs + 1e-7 && std::abs(r.rhs - r.rhs_closed) <= 1e-9 && r.commutation <= 1e-7 &&
           r.order_residual <= 1e-8 && pa.identity_ok && pa.bound_ok && r.log_blocks <= r.log_vn + 1e-12;
  return r;
}

inline RunResult run_stein_audit(const ExperimentConfig& cfg, const RunOptions& ro = {}) {
  const DensityOperator rho = load_state(cfg.ref("rho"), cfg.fixtures);
  const FreeFamily fam = load_family(cfg.ref("family"), cfg.fixtures);
  require(rho.dim() == fam.site_dim(), ErrorCode::shape_mismatch, "rho does not match the family site");
  const std::string fx = cfg.fixture_path("rho") + ", " + cfg.fixture_path("family");
  std::vector<AuditParams> inst;
  if (cfg.params.contains("instances"))
    for (const auto& j : cfg.params.at("instances")) inst.push_back(parse_audit_params(j));
  else
    for (int n = cfg.n_min; n <= cfg.n_max; ++n)
      for (double e : cfg.eps) {
        AuditParams a;
        a.n = n;
        a.eps = e;
        inst.push_back(a);
      }
  for (const auto& a : inst) check_n_budget(fam, a.n);
  FwOptions fw;
  fw.gap_tol = cfg.params.value("fw_gap_tol", 1e-7);
  fw.max_lmo_calls = cfg.params.value("fw_max_oracle_calls", 40);
  const auto recs =
      run_cells(inst, [&](const AuditParams& a) { return stein_audit_instance(rho.matrix(), fam, a, fw); }, ro.max_threads);
  RunResult res;
  json out{{"schema_version", schema_version}, {"experiment", "stein-audit"}, {"fixture", fx}, {"units", "nats"}};
  json arr = json::array();
  for (const auto& r : recs) {
    arr.push_back(r.to_json());
    if (!r.pass)
      res.failures.push_back({"entropy budget and commutation checks at n=" + std::to_string(r.params.n) + " eps=" +
                                  fmt(r.params.eps),
                              r.lhs, r.rhs + 1e-7, fx});
  }
  out["instances"] = arr;
  res.files["stein_audit.json"] = out.dump(2) + "\n";
  return res;
}

// ---------- second law ----------

struct SecondLawRow {
  int n = 0, k = 0;
  double r = 0, eps = 0;
  double t = 0;             // Tr[T J(N1^(x)n)]
  double beta = 0;          // max over the free set of Tr[T sigma]
  double s = 0;             // R_G of the hit channel
  bool truncated = false;   // hit is the truncated target
  bool non_generation = false;
  double worst_measured = 0;
  double error = 0;         // (1/2) || J(Theta(N1^n)) - J(N2^k) ||_1
  double path_value = 0;    // 1 - t
  int free_inputs = 0;
};

// Theta built from the composite test on N1^(x)n and a hit/miss pair for N2^(x)k.
inline SecondLawRow second_law_cell(const QuantumChannel& n1, const QuantumChannel& n2, const ChannelFamily& fin,
                                    const ChannelFamily& fout, const std::optional<QuantumChannel>& free_ref, int n,
                                    double r, double eps, std::optional<double> trunc_rate, bool identity_theta) {
  SecondLawRow row;
  row.n = n;
  row.r = r;
  row.eps = eps;
  row.k = static_cast<int>(std::ceil(r * n - 1e-12));
  require(row.k >= 1, ErrorCode::invalid_argument, "rate r gives no output copies");
  const QuantumChannel target = tensor_power(n2, row.k);
  const QuantumChannel input = tensor_power(n1, n);
  if (identity_theta) {
    require(row.k == n && n1.in() == n2.in() && n1.out() == n2.out(), ErrorCode::invalid_argument,
            "identity protocol needs matching channels and r = 1");
    row.error = 0.5 * trace_norm(input.choi() - target.choi());
    row.non_generation = true;
    row.t = 1;
    return row;
  }
  const int fi1 = n1.in().factors(), fo1 = n1.out().factors();
  const int fi2 = n2.in().factors(), fo2 = n2.out().factors();
  const auto sin = fin.level(n);
  const auto bc = beta_composite(per_copy_choi(input, n), sin, eps);
  row.beta = bc.value;
  const Mat test = n == 1 ? bc.test
                          : permute_factors(bc.test, per_copy_layout(input, n), per_copy_to_grouped(n, fi1, fo1));
  row.t = inner(test, input.choi());

  QuantumChannel hit = target;
  if (trunc_rate && free_ref) {
    const auto tr = truncated_channel(n2, *free_ref, 1, row.k, *trunc_rate);
    if (tr.valid) {
      hit = *tr.channel;
      row.truncated = true;
    }
  }
  const auto sout = to_grouped_order(fout.level(row.k), row.k, fi2, fo2);
  const auto in_f = per_copy_in_factors(hit, 1);
  const auto rg = generalized_robustness(hit.choi(), sout, in_f);
  require(!rg.infinite, ErrorCode::invalid_argument, "target has infinite robustness against the output set");
  row.s = rg.value;
  // the partner is undetermined when the hit channel is (numerically) free
  const QuantumChannel miss =
      row.s > 1e-6 ? channel_from_approx_choi(rg.partner, hit.in(), hit.out()) : hit;
  const auto theta = theta_protocol(test, input.in().concat(input.out()), hit, miss);
  row.error = 0.5 * trace_norm(theta.apply(input).choi() - target.choi());
  row.path_value = 1 - row.t;

  // free inputs: polytope vertices, else the composite dual state and the fully depolarised input
  std::vector<QuantumChannel> frees;
  if (sin.has_vertices()) {
    for (const Mat& v : sin.vertices())
      if (frees.size() < 16) frees.push_back(channel_from_per_copy(v, n1.in(), n1.out(), n));
  } else {
    if (bc.dual_state) {
      // the SDP dual state carries marginal errors near the solver tolerance
      const Mat g = permute_factors(*bc.dual_state, per_copy_layout(input, n), per_copy_to_grouped(n, fi1, fo1));
      frees.push_back(channel_from_approx_choi(g, input.in(), input.out()));
    }
    const int dout = n1.d_out();
    const Mat full = kron(identity(n1.d_in()) / static_cast<double>(n1.d_in()), identity(dout) / static_cast<double>(dout));
    frees.push_back(channel_from_per_copy(tensor_power(full, n), n1.in(), n1.out(), n));
  }
  row.free_inputs = static_cast<int>(frees.size());
  const auto audit = resource_non_generation_audit(theta, frees, sout);
  row.non_generation = audit.holds;
  for (const auto& e : audit.entries) row.worst_measured = std::max(row.worst_measured, e.measured);
  return row;
}

inline RunResult run_second_law(const ExperimentConfig& cfg, const RunOptions& ro = {}) {
  const QuantumChannel n1 = load_channel(cfg.ref("n1"), cfg.fixtures);
  const QuantumChannel n2 = load_channel(cfg.ref("n2"), cfg.fixtures);
  const ChannelFamily fin = load_channel_family(cfg.ref("free_in"), cfg.fixtures);
  const ChannelFamily fout =
      cfg.fixture_refs.contains("free_out") ? load_channel_family(cfg.ref("free_out"), cfg.fixtures) : fin;
  require(fin.in == n1.in() && fin.out == n1.out(), ErrorCode::shape_mismatch, "free_in does not match n1");
  require(fout.in == n2.in() && fout.out == n2.out(), ErrorCode::shape_mismatch, "free_out does not match n2");
  std::optional<QuantumChannel> free_ref;
  if (cfg.fixture_refs.contains("free_reference")) free_ref = load_channel(cfg.ref("free_reference"), cfg.fixtures);
  const auto rates = cfg.params.value("r", std::vector<double>{1.0});
  std::optional<double> trunc;
  if (cfg.params.contains("truncation_rate") && !cfg.params.at("truncation_rate").is_null())
    trunc = cfg.params.at("truncation_rate").get<double>();
  const bool ident = cfg.params.value("theta", std::string("test")) == "identity";
  const double chan_dim = static_cast<double>(n1.d_in() * n1.d_out());
  require(std::pow(chan_dim, cfg.n_max) <= 16, ErrorCode::budget_exceeded,
          "second-law runs are limited to Choi dimension 16");
  const std::string fx = cfg.fixture_path("n1") + ", " + cfg.fixture_path("n2");

  // measured single-copy rate ratio, for reference
  FwOptions fw;
  fw.gap_tol = 1e-7;
  fw.max_lmo_calls = 40;
  const double rr1 = relative_entropy_of_resource(per_copy_choi(n1), fin.level(1), fw).value;
  const double rr2 = relative_entropy_of_resource(per_copy_choi(n2), fout.level(1), fw).value;

  struct Key {
    int n;
    double r, eps;
  };
  std::vector<Key> keys;
  for (int n = cfg.n_min; n <= cfg.n_max; ++n)
    for (double r : rates)
      for (double e : cfg.eps) {
        const int k = static_cast<int>(std::ceil(r * n - 1e-12));
        require(std::pow(static_cast<double>(n2.d_in() * n2.d_out()), k) <= 16, ErrorCode::budget_exceeded,
                "output copies exceed the Choi dimension budget");
        keys.push_back({n, r, e});
      }
  const auto rows = run_cells(
      keys, [&](const Key& k) { return second_law_cell(n1, n2, fin, fout, free_ref, k.n, k.r, k.eps, trunc, ident); },
      ro.max_threads);

  RunResult res;
  Table t{{"n", "r", "k", "eps", "t", "beta", "robustness_hit", "truncated", "non_generation", "worst_output_robustness",
           "conversion_error", "one_minus_t", "free_inputs"},
          {}};
  for (const auto& w : rows) {
    t.rows.push_back({std::to_string(w.n), fmt(w.r), std::to_string(w.k), fmt(w.eps), fmt(w.t), fmt(w.beta), fmt(w.s),
                      fmt(w.truncated), fmt(w.non_generation), fmt(w.worst_measured), fmt(w.error), fmt(w.path_value),
                      std::to_string(w.free_inputs)});
    if (!w.non_generation)
      res.failures.push_back({"resource non-generation bound at n=" + std::to_string(w.n) + " r=" + fmt(w.r),
                              w.worst_measured, 0, fx});
  }
  res.files["second_law.csv"] = t.csv();
  const double ratio = rr2 > 0 ? rr1 / rr2 : std::numeric_limits<double>::infinity();
  json meta{{"schema_version", schema_version},
            {"experiment", "second-law"},
            {"relative_entropy_n1", num(rr1 * unit(ro))},
            {"relative_entropy_n2", num(rr2 * unit(ro))},
            {"rate_ratio", num(ratio)},
            {"note", "trend table only; no asymptotic assertion"}};
  json below = json::array();
  for (double r : rates) below.push_back(r < ratio);
  meta["r_below_ratio"] = below;
  res.files["second_law_meta.json"] = meta.dump(2) + "\n";
  return res;
}

// ---------- dispatch and plot data ----------

inline RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& ro = {}) {
  if (cfg.experiment == "examples") return run_examples(cfg, ro);
  if (cfg.experiment == "stein-iid") return run_stein_iid(cfg, ro);
  if (cfg.experiment == "stein-composite") return run_stein_composite(cfg, ro);
  if (cfg.experiment == "stein-audit") return run_stein_audit(cfg, ro);
  if (cfg.experiment == "second-law") return run_second_law(cfg, ro);
  throw Error(ErrorCode::invalid_argument, "unknown experiment: " + cfg.experiment);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

// CSV -> whitespace columns with a commented header.
inline std::string csv_to_dat(const std::string& csv) {
  std::stringstream in(csv);
  std::string line, out;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    std::string joined;
    for (std::size_t i = 0; i < cells.size(); ++i) joined += (i ? " " : "") + cells[i];
    out += (first ? "# " : "") + joined + "\n";
    first = false;
  }
  return out.empty() ? "# \n" : out;
}

// Two gnuplot data blocks (rate, relative entropy) versus n, one per eps.
inline std::string stein_iid_series(const std::string& csv) {
  std::stringstream in(csv);
  std::string line;
  std::getline(in, line);
  const auto h = split_csv_line(line);
  auto col = [&](const std::string& name) {
    const auto it = std::find(h.begin(), h.end(), name);
    require(it != h.end(), ErrorCode::invalid_argument, "stein_iid.csv lacks column " + name);
    return static_cast<std::size_t>(it - h.begin());
  };
  const std::size_t cn = col("n"), ce = col("eps"), cr = col("rate"), cd = col("relative_entropy");
  std::map<std::string, std::vector<std::vector<std::string>>> by_eps;
  std::vector<std::string> order;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto c = split_csv_line(line);
    if (!by_eps.count(c[ce])) order.push_back(c[ce]);
    by_eps[c[ce]].push_back(c);
  }
  std::string out = "# n rate\n";
  for (const auto& e : order) {
    out += "# eps " + e + "\n";
    for (const auto& c : by_eps[e]) out += c[cn] + " " + c[cr] + "\n";
    out += "\n\n";
  }
  out += "# n relative_entropy\n";
  if (!order.empty())
    for (const auto& c : by_eps[order.front()]) out += c[cn] + " " + c[cd] + "\n";
  return out;
}

// One "check pass|fail" line per audit instance or per boolean field.
inline std::string audit_summary(const json& j) {
  std::string out;
  if (j.contains("instances")) {
    for (const auto& inst : j.at("instances"))
      out += "entropy_budget n=" + std::to_string(inst.value("n", 0)) + " eps=" + fmt(inst.value("eps", 0.0)) + " " +
             (inst.value("pass", false) ? "pass" : "fail") + "\n";
  } else {
    for (const auto& [k, v] : j.items())
      if (v.is_boolean()) out += k + " " + (v.get<bool>() ? "pass" : "fail") + "\n";
  }
  return out;
}

// Converts every result file in `dir` (sorted by name) into plot-data files.
inline std::map<std::string, std::string> emit_plotdata(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  std::vector<std::filesystem::path> files;
  if (std::filesystem::exists(dir))
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string index = "# file kind\n";
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string stem = f.stem().string();
    if (f.extension() == ".csv") {
      out[stem + ".dat"] = csv_to_dat(ss.str());
      if (stem == "stein_iid") out["stein_iid_series.dat"] = stein_iid_series(ss.str());
      index += f.filename().string() + " table\n";
    } else if (f.extension() == ".json") {
      out[stem + "_summary.txt"] = audit_summary(json::parse(ss.str()));
      index += f.filename().string() + " report\n";
    }
  }
  out["index.dat"] = index;
  return out;
}

inline void write_files(const std::filesystem::path& dir, const std::map<std::string, std::string>& files) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, content] : files) {
    std::ofstream o(dir / name, std::ios::binary);
    require(o.good(), ErrorCode::invalid_argument, "cannot write " + (dir / name).string());
    o << content;
  }
}

}  // namespace qstein::exp
