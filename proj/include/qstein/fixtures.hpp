#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qstein/freesets.hpp"
#include "qstein/qrt.hpp"
#include "qstein/random.hpp"

namespace qstein::exp {

using json = nlohmann::json;

// A fixture is either an inline JSON object or a path (relative to the config file) to one.
class FixtureResolver {
 public:
  FixtureResolver() = default;
  explicit FixtureResolver(std::filesystem::path base, std::uint64_t seed = 1) : base_(std::move(base)), seed_(seed) {}

  json resolve(const json& ref) const {
    if (!ref.is_string()) return ref;
    const auto p = path_of(ref);
    std::ifstream in(p);
    require(in.good(), ErrorCode::invalid_argument, "fixture not found: " + p.string());
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::invalid_argument, "fixture " + p.string() + " does not parse: " + e.what());
    }
  }
  std::filesystem::path path_of(const json& ref) const {
    if (!ref.is_string()) return "<inline>";
    const std::filesystem::path p(ref.get<std::string>());
    return p.is_absolute() ? p : base_ / p;
  }
  std::string describe(const json& ref) const { return ref.is_string() ? path_of(ref).string() : "<inline>"; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::filesystem::path base_ = ".";
  std::uint64_t seed_ = 1;
};

namespace detail {

inline std::string kind_of(const json& j) {
  require(j.is_object() && j.contains("kind"), ErrorCode::invalid_argument, "fixture object needs a \"kind\" field");
  return j.at("kind").get<std::string>();
}

inline std::vector<int> dims_of(const json& j, const char* key, std::vector<int> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_number_integer()) return {v.get<int>()};
  return v.get<std::vector<int>>();
}

// Real nested arrays, or {"re": [[...]], "im": [[...]]}.
inline Mat parse_matrix(const json& j) {
  const json& re = j.is_object() ? j.at("re") : j;
  const int rows = static_cast<int>(re.size());
  require(rows > 0, ErrorCode::invalid_argument, "empty matrix");
  const int cols = static_cast<int>(re.at(0).size());
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    require(static_cast<int>(re.at(static_cast<std::size_t>(r)).size()) == cols, ErrorCode::invalid_argument,
            "ragged matrix");
    for (int c = 0; c < cols; ++c) m(r, c) = re[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  if (j.is_object() && j.contains("im")) {
    const json& im = j.at("im");
    require(static_cast<int>(im.size()) == rows, ErrorCode::invalid_argument, "imaginary part shape");
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        m(r, c) += cd(0, im[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>());
  }
  return m;
}

inline CVec parse_vector(const json& j) {
  const json& re = j.is_object() ? j.at("re") : j;
  CVec v(static_cast<int>(re.size()));
  for (int i = 0; i < v.size(); ++i) v(i) = re[static_cast<std::size_t>(i)].get<double>();
  if (j.is_object() && j.contains("im"))
    for (int i = 0; i < v.size(); ++i) v(i) += cd(0, j.at("im")[static_cast<std::size_t>(i)].get<double>());
  return v;
}

inline std::uint64_t seed_of(const json& j, const FixtureResolver& res) {
  return j.contains("seed") ? j.at("seed").get<std::uint64_t>() : res.seed();
}

inline DimLayout layout_for(const json& j, int d) {
  const auto dims = dims_of(j, "dims", {d});
  const DimLayout l(dims);
  require(l.total() == d, ErrorCode::shape_mismatch, "dims do not match the matrix size");
  return l;
}

// sigma[mu] = (1/2) [[1, 2mu-1], [2mu-1, 1]].
inline Mat sigma_mu(double mu) {
  Mat s(2, 2);
  s << 0.5, mu - 0.5, mu - 0.5, 0.5;
  return s;
}

// |phi_{p,+}> = sqrt(p)|0> + sqrt(1-p)|1>.
inline Mat phi_p(double p) {
  CVec v(2);
  v << std::sqrt(p), std::sqrt(1 - p);
  return v * v.adjoint();
}

}  // namespace detail

// diag(1, e^{2 pi i j/k}) for j = 0..k-1: a finite subgroup of the phase rotations U(theta).
inline std::vector<Mat> phase_group(int k) {
  require(k >= 1, ErrorCode::invalid_argument, "phase group order must be positive");
  std::vector<Mat> g;
  for (int j = 0; j < k; ++j) {
    Mat u = Mat::Zero(2, 2);
    u(0, 0) = 1;
    u(1, 1) = std::polar(1.0, 2 * M_PI * j / k);
    g.push_back(u);
  }
  return g;
}

// States: kinds matrix, diag, pure, max_entangled, maximally_mixed, random, ket, sigma_mu, phi_p, product.
inline DensityOperator load_state(const json& ref, const FixtureResolver& res) {
  const json j = res.resolve(ref);
  const std::string k = detail::kind_of(j);
  if (k == "matrix") {
    const Mat m = detail::parse_matrix(j.at("value"));
    return DensityOperator(hermitize(m), detail::layout_for(j, static_cast<int>(m.rows())));
  }
  if (k == "diag") {
    const auto w = j.at("value").get<std::vector<double>>();
    Mat m = Mat::Zero(static_cast<int>(w.size()), static_cast<int>(w.size()));
    for (std::size_t i = 0; i < w.size(); ++i) m(static_cast<int>(i), static_cast<int>(i)) = w[i];
    return DensityOperator(m, detail::layout_for(j, static_cast<int>(w.size())));
  }
  if (k == "pure") {
    CVec v = detail::parse_vector(j.at("value"));
    require(v.norm() > 0, ErrorCode::invalid_argument, "zero state vector");
    v /= v.norm();
    return DensityOperator::pure(v, detail::layout_for(j, static_cast<int>(v.size())));
  }
  if (k == "max_entangled") {
    const int d = j.at("d").get<int>();
    return max_entangled(d);
  }
  if (k == "maximally_mixed") return DensityOperator::maximally_mixed(DimLayout(detail::dims_of(j, "dims", {2})));
  if (k == "random") {
    Rng rng(detail::seed_of(j, res));
    return random_state(DimLayout(detail::dims_of(j, "dims", {2})), rng, j.value("rank", 0));
  }
  if (k == "ket") {
    const DimLayout l(detail::dims_of(j, "dims", {2}));
    const int i = j.at("index").get<int>();
    require(i >= 0 && i < l.total(), ErrorCode::invalid_argument, "ket index out of range");
    Mat m = Mat::Zero(l.total(), l.total());
    m(i, i) = 1;
    return DensityOperator(m, l);
  }
  if (k == "sigma_mu") return DensityOperator(detail::sigma_mu(j.at("mu").get<double>()));
  if (k == "phi_p") return DensityOperator(detail::phi_p(j.at("p").get<double>()));
  if (k == "product") {
    const auto& parts = j.at("factors");
    require(!parts.empty(), ErrorCode::invalid_argument, "empty product");
    DensityOperator acc = load_state(parts.at(0), res);
    for (std::size_t i = 1; i < parts.size(); ++i) acc = tensor(acc, load_state(parts.at(i), res));
    return acc;
  }
  throw Error(ErrorCode::invalid_argument, "unknown state kind: " + k);
}

// Channels: identity, depolarizing, dephasing, amplitude_damping, kraus, random, replacer, prepare, tensor.
inline QuantumChannel load_channel(const json& ref, const FixtureResolver& res) {
  const json j = res.resolve(ref);
  const std::string k = detail::kind_of(j);
  if (k == "identity") return QuantumChannel::identity_channel(DimLayout(detail::dims_of(j, "dims", {2})));
  if (k == "depolarizing") {
    const DimLayout l(detail::dims_of(j, "dims", {2}));
    const double p = j.at("p").get<double>();
    require(p >= 0 && p <= 1, ErrorCode::invalid_argument, "depolarizing p must lie in [0,1]");
    const int d = l.total();
    const Mat mix = kron(identity(d) / static_cast<double>(d), identity(d) / static_cast<double>(d));
    return QuantumChannel(hermitize((1 - p) * max_entangled(d).matrix() + p * mix), l, l);
  }
  if (k == "dephasing") {
    const double p = j.at("p").get<double>();
    Mat z = Mat::Zero(2, 2);
    z(0, 0) = 1;
    z(1, 1) = -1;
    return QuantumChannel::from_kraus({std::sqrt(1 - p) * identity(2), std::sqrt(p) * z}, DimLayout::single(2),
                                      DimLayout::single(2));
  }
  if (k == "amplitude_damping") {
    const double g = j.at("gamma").get<double>();
    require(g >= 0 && g <= 1, ErrorCode::invalid_argument, "gamma must lie in [0,1]");
    Mat k0 = Mat::Zero(2, 2), k1 = Mat::Zero(2, 2);
    k0(0, 0) = 1;
    k0(1, 1) = std::sqrt(1 - g);
    k1(0, 1) = std::sqrt(g);
    return QuantumChannel::from_kraus({k0, k1}, DimLayout::single(2), DimLayout::single(2));
  }
  if (k == "kraus") {
    std::vector<Mat> ks;
    for (const auto& op : j.at("operators")) ks.push_back(detail::parse_matrix(op));
    require(!ks.empty(), ErrorCode::invalid_argument, "no Kraus operators");
    const DimLayout in(detail::dims_of(j, "in", {static_cast<int>(ks.front().cols())}));
    const DimLayout out(detail::dims_of(j, "out", {static_cast<int>(ks.front().rows())}));
    return QuantumChannel::from_kraus(ks, in, out);
  }
  if (k == "random") {
    Rng rng(detail::seed_of(j, res));
    return random_channel(DimLayout(detail::dims_of(j, "in", {2})), DimLayout(detail::dims_of(j, "out", {2})), rng,
                          j.value("kraus_rank", 2));
  }
  if (k == "replacer")
    return QuantumChannel::replacer(DimLayout(detail::dims_of(j, "in", {2})), load_state(j.at("state"), res));
  if (k == "prepare") {
    // trivial input: the Choi state is the prepared state
    const DensityOperator s = load_state(j.at("state"), res);
    return QuantumChannel(s.matrix(), DimLayout::single(1), s.layout());
  }
  if (k == "tensor") {
    const auto& parts = j.at("factors");
    require(!parts.empty(), ErrorCode::invalid_argument, "empty channel product");
    QuantumChannel acc = load_channel(parts.at(0), res);
    for (std::size_t i = 1; i < parts.size(); ++i) acc = tensor_channels(acc, load_channel(parts.at(i), res));
    return acc;
  }
  throw Error(ErrorCode::invalid_argument, "unknown channel kind: " + k);
}

// State families: product_polytope, singleton, orbit_diagonal, ppt_pairs.
inline FreeFamily load_family(const json& ref, const FixtureResolver& res) {
  const json j = res.resolve(ref);
  const std::string k = detail::kind_of(j);
  if (k == "product_polytope" || k == "singleton") {
    std::vector<Mat> base;
    std::optional<DimLayout> site;
    auto add = [&](const DensityOperator& s) {
      require(!site || *site == s.layout(), ErrorCode::shape_mismatch, "family base states differ in layout");
      site = s.layout();
      base.push_back(s.matrix());
    };
    if (k == "singleton") add(load_state(j.at("state"), res));
    else
      for (const auto& s : j.at("base")) add(load_state(s, res));
    require(!base.empty(), ErrorCode::invalid_argument, "family needs at least one base state");
    return FreeFamily::product_polytope(base, *site);
  }
  if (k == "orbit_diagonal") {
    const DensityOperator seed = load_state(j.at("seed"), res);
    std::vector<Mat> group;
    const auto& g = j.at("group");
    if (g.is_object() && g.contains("phase")) group = phase_group(g.at("phase").get<int>());
    else
      for (const auto& u : g) group.push_back(detail::parse_matrix(u));
    return FreeFamily::orbit_diagonal(seed.matrix(), group, seed.layout());
  }
  if (k == "ppt_pairs") return FreeFamily::ppt_pairs(j.at("da").get<int>(), j.at("db").get<int>(), j.value("choi", false));
  throw Error(ErrorCode::invalid_argument, "unknown family kind: " + k);
}

// Free Choi sets for channels on `copies` blocks, in per-copy order.
struct ChannelFamily {
  DimLayout in, out;
  std::function<ConvexStateSet(int)> level;
  std::vector<QuantumChannel> base;  // single-copy free channels, when the family is a polytope
};

// Channel families: ppt_channels (din, dout), ppt_prepare (da, db: PPT states prepared from a trivial input),
// channel_polytope (base channels).
inline ChannelFamily load_channel_family(const json& ref, const FixtureResolver& res) {
  const json j = res.resolve(ref);
  const std::string k = detail::kind_of(j);
  ChannelFamily f;
  if (k == "ppt_channels") {
    const int din = j.at("din").get<int>(), dout = j.at("dout").get<int>();
    f.in = DimLayout::single(din);
    f.out = DimLayout::single(dout);
    f.level = [din, dout](int n) { return ConvexStateSet::ppt_channels(din, dout, n); };
    return f;
  }
  if (k == "ppt_prepare") {
    const int da = j.at("da").get<int>(), db = j.at("db").get<int>();
    f.in = DimLayout::single(1);
    f.out = DimLayout({da, db});
    f.level = [da, db](int n) {
      std::vector<int> dims, bf, inf;
      for (int c = 0; c < n; ++c) {
        dims.insert(dims.end(), {1, da, db});
        inf.push_back(3 * c);
        bf.push_back(3 * c + 2);
      }
      return ConvexStateSet(PptSet{DimLayout(dims), bf, n, false, inf});
    };
    return f;
  }
  if (k == "channel_polytope") {
    for (const auto& c : j.at("base")) f.base.push_back(load_channel(c, res));
    require(!f.base.empty(), ErrorCode::invalid_argument, "channel family needs base channels");
    f.in = f.base.front().in();
    f.out = f.base.front().out();
    for (const auto& c : f.base)
      require(c.in() == f.in && c.out() == f.out, ErrorCode::shape_mismatch, "base channels differ in layout");
    std::vector<Mat> vs;
    for (const auto& c : f.base) vs.push_back(c.choi());
    const auto fam = FreeFamily::product_polytope(vs, f.in.concat(f.out));
    f.level = [fam](int n) { return fam.level(n); };
    return f;
  }
  throw Error(ErrorCode::invalid_argument, "unknown channel family kind: " + k);
}

// The same set with members reordered from per-copy to grouped Choi order.
inline ConvexStateSet to_grouped_order(const ConvexStateSet& set, int copies, int fi, int fo) {
  if (copies == 1) return set;
  const auto g = per_copy_to_grouped(copies, fi, fo);
  const DimLayout& l = set.layout();
  const DimLayout gl = permute_layout(l, g);
  if (const auto* ps = std::get_if<PptSet>(&set.rep())) {
    require(!ps->symmetric, ErrorCode::representation_unsupported, "symmetric PPT sets stay in per-copy order");
    PptSet s = *ps;
    s.layout = gl;
    for (int& f : s.b_factors) f = g[static_cast<std::size_t>(f)];
    for (int& f : s.choi_in_factors) f = g[static_cast<std::size_t>(f)];
    std::sort(s.b_factors.begin(), s.b_factors.end());
    std::sort(s.choi_in_factors.begin(), s.choi_in_factors.end());
    return ConvexStateSet(s);
  }
  std::vector<Mat> vs;
  for (const Mat& v : set.vertices()) vs.push_back(permute_factors(v, l, g));
  return ConvexStateSet::polytope(vs, gl);
}

}  // namespace qstein::exp
