#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "qstein/config.hpp"
#include "qstein/linalg.hpp"

namespace qstein {

// Ordered local dimensions; factor 0 is the most significant tensor index.
class DimLayout {
 public:
  DimLayout() = default;
  explicit DimLayout(std::vector<int> dims, const Config& cfg = default_config()) : dims_(std::move(dims)) {
    require(!dims_.empty(), ErrorCode::invalid_layout, "layout must have at least one factor");
    std::size_t total = 1;
    for (int d : dims_) {
      require(d >= 1, ErrorCode::invalid_layout, "local dimension must be positive");
      total *= static_cast<std::size_t>(d);
      require(total <= cfg.budget.max_dim, ErrorCode::budget_exceeded,
              "total dimension exceeds " + std::to_string(cfg.budget.max_dim));
    }
  }
  static DimLayout single(int d) { return DimLayout({d}); }
  static DimLayout uniform(int d, int n, const Config& cfg = default_config()) {
    return DimLayout(std::vector<int>(static_cast<std::size_t>(n), d), cfg);
  }

  const std::vector<int>& dims() const { return dims_; }
  int factors() const { return static_cast<int>(dims_.size()); }
  int dim(int k) const { return dims_.at(static_cast<std::size_t>(k)); }
  int total() const {
    int t = 1;
    for (int d : dims_) t *= d;
    return t;
  }
  // Stride of factor k in the flattened index.
  int stride(int k) const {
    int s = 1;
    for (int j = factors() - 1; j > k; --j) s *= dims_[static_cast<std::size_t>(j)];
    return s;
  }
  DimLayout concat(const DimLayout& o, const Config& cfg = default_config()) const {
    auto d = dims_;
    d.insert(d.end(), o.dims_.begin(), o.dims_.end());
    return DimLayout(d, cfg);
  }
  DimLayout power(int n, const Config& cfg = default_config()) const {
    require(n >= 1, ErrorCode::invalid_argument, "tensor power needs n >= 1");
    std::vector<int> d;
    for (int i = 0; i < n; ++i) d.insert(d.end(), dims_.begin(), dims_.end());
    return DimLayout(d, cfg);
  }
  DimLayout select(const std::vector<int>& keep) const {
    std::vector<int> d;
    for (int k : keep) d.push_back(dim(k));
    return DimLayout(d);
  }
  bool operator==(const DimLayout& o) const { return dims_ == o.dims_; }
  bool operator!=(const DimLayout& o) const { return !(*this == o); }

 private:
  std::vector<int> dims_{1};
};

class HermitianOperator {
 public:
  HermitianOperator() = default;
  HermitianOperator(const Mat& m, DimLayout layout, const Config& cfg = default_config())
      : layout_(std::move(layout)) {
    require(m.rows() == m.cols(), ErrorCode::shape_mismatch, "operator must be square");
    require(m.rows() == layout_.total(), ErrorCode::shape_mismatch, "matrix size does not match layout");
    const double scale = std::max(1.0, max_abs(m));
    require(hermiticity_defect(m) <= cfg.tol.hermiticity * scale, ErrorCode::not_hermitian,
            "operator is not Hermitian");
    m_ = hermitize(m);
  }
  explicit HermitianOperator(const Mat& m) : HermitianOperator(m, DimLayout::single(static_cast<int>(m.rows()))) {}

  const Mat& matrix() const { return m_; }
  const DimLayout& layout() const { return layout_; }
  int dim() const { return static_cast<int>(m_.rows()); }
  double trace() const { return re_trace(m_); }

 private:
  Mat m_ = Mat::Zero(1, 1);
  DimLayout layout_{};
};

class DensityOperator {
 public:
  DensityOperator() = default;
  DensityOperator(const Mat& m, DimLayout layout, const Config& cfg = default_config())
      : h_(m, std::move(layout), cfg) {
    require(std::abs(h_.trace() - 1.0) <= cfg.tol.trace_slack, ErrorCode::trace_mismatch,
            "density operator must have unit trace");
    require(lambda_min(h_.matrix()) >= -cfg.tol.psd_slack, ErrorCode::not_psd,
            "density operator must be positive semidefinite");
  }
  explicit DensityOperator(const Mat& m) : DensityOperator(m, DimLayout::single(static_cast<int>(m.rows()))) {}

  // Normalises by the trace before validation.
  static DensityOperator normalized(const Mat& m, DimLayout layout) {
    const double t = re_trace(m);
    require(t > 0, ErrorCode::trace_mismatch, "cannot normalise a traceless operator");
    return DensityOperator(hermitize(m) / t, std::move(layout));
  }
  static DensityOperator pure(const CVec& psi, DimLayout layout) {
    require(psi.norm() > 0, ErrorCode::invalid_argument, "zero vector");
    CVec v = psi / psi.norm();
    return DensityOperator(v * v.adjoint(), std::move(layout));
  }
  static DensityOperator maximally_mixed(DimLayout layout) {
    const int d = layout.total();
    return DensityOperator(identity(d) / static_cast<double>(d), std::move(layout));
  }

  const Mat& matrix() const { return h_.matrix(); }
  const DimLayout& layout() const { return h_.layout(); }
  int dim() const { return h_.dim(); }
  const HermitianOperator& hermitian() const { return h_; }

 private:
  HermitianOperator h_{Mat::Ones(1, 1), DimLayout{}};
};

// 0 <= T <= I.
class BinaryTest {
 public:
  BinaryTest() = default;
  BinaryTest(const Mat& t, DimLayout layout, const Config& cfg = default_config()) : h_(t, std::move(layout), cfg) {
    const RVec w = eigvalsh(h_.matrix());
    require(w.minCoeff() >= -cfg.tol.psd_slack && w.maxCoeff() <= 1.0 + cfg.tol.psd_slack, ErrorCode::not_psd,
            "test operator must satisfy 0 <= T <= I");
  }
  const Mat& matrix() const { return h_.matrix(); }
  const DimLayout& layout() const { return h_.layout(); }
  double accept(const DensityOperator& rho) const { return inner(matrix(), rho.matrix()); }

 private:
  HermitianOperator h_{Mat::Zero(1, 1), DimLayout{}};
};

// Normalised Choi state J = (1/d_in) sum |i><j| (x) N(|i><j|) on (in, out).
class QuantumChannel {
 public:
  QuantumChannel() = default;
  QuantumChannel(const Mat& choi, DimLayout in, DimLayout out, const Config& cfg = default_config());

  static QuantumChannel identity_channel(DimLayout l);
  static QuantumChannel replacer(DimLayout in, const DensityOperator& out_state);
  // Kraus operators map in -> out.
  static QuantumChannel from_kraus(const std::vector<Mat>& kraus, DimLayout in, DimLayout out);

  const Mat& choi() const { return choi_.matrix(); }
  const DensityOperator& choi_state() const { return choi_; }
  const DimLayout& in() const { return in_; }
  const DimLayout& out() const { return out_; }
  int d_in() const { return in_.total(); }
  int d_out() const { return out_.total(); }

 private:
  DensityOperator choi_{};
  DimLayout in_{}, out_{};
};

// ---------- index arithmetic ----------

namespace detail {

inline std::vector<int> digits(int idx, const std::vector<int>& dims) {
  std::vector<int> dg(dims.size());
  for (int k = static_cast<int>(dims.size()) - 1; k >= 0; --k) {
    dg[static_cast<std::size_t>(k)] = idx % dims[static_cast<std::size_t>(k)];
    idx /= dims[static_cast<std::size_t>(k)];
  }
  return dg;
}

inline int compose(const std::vector<int>& dg, const std::vector<int>& dims) {
  int idx = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) idx = idx * dims[k] + dg[k];
  return idx;
}

// Offsets contributed by the listed factors, enumerated in row-major order of those factors.
inline std::vector<int> offsets(const DimLayout& l, const std::vector<int>& factors) {
  std::vector<int> off{0};
  for (int f : factors) {
    std::vector<int> next;
    next.reserve(off.size() * static_cast<std::size_t>(l.dim(f)));
    const int s = l.stride(f);
    for (int o : off)
      for (int i = 0; i < l.dim(f); ++i) next.push_back(o + i * s);
    off.swap(next);
  }
  return off;
}

inline std::vector<int> complement(int n, const std::vector<int>& keep) {
  std::vector<bool> in(static_cast<std::size_t>(n), false);
  for (int k : keep) {
    require(k >= 0 && k < n, ErrorCode::invalid_argument, "factor index out of range");
    require(!in[static_cast<std::size_t>(k)], ErrorCode::invalid_argument, "repeated factor index");
    in[static_cast<std::size_t>(k)] = true;
  }
  std::vector<int> rest;
  for (int k = 0; k < n; ++k)
    if (!in[static_cast<std::size_t>(k)]) rest.push_back(k);
  return rest;
}

}  // namespace detail

inline bool is_permutation(const std::vector<int>& g) {
  std::vector<bool> seen(g.size(), false);
  for (int x : g) {
    if (x < 0 || static_cast<std::size_t>(x) >= g.size() || seen[static_cast<std::size_t>(x)]) return false;
    seen[static_cast<std::size_t>(x)] = true;
  }
  return true;
}

// (g h)(j) = g(h(j)).
inline std::vector<int> compose_perm(const std::vector<int>& g, const std::vector<int>& h) {
  std::vector<int> r(h.size());
  for (std::size_t j = 0; j < h.size(); ++j) r[j] = g[static_cast<std::size_t>(h[j])];
  return r;
}

inline std::vector<int> inverse_perm(const std::vector<int>& g) {
  std::vector<int> r(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) r[static_cast<std::size_t>(g[j])] = static_cast<int>(j);
  return r;
}

// Index map of the factor permutation: input factor j lands on output slot g(j).
inline std::vector<int> permutation_index_map(const DimLayout& l, const std::vector<int>& g) {
  require(static_cast<int>(g.size()) == l.factors() && is_permutation(g), ErrorCode::invalid_argument,
          "not a permutation of the layout factors");
  std::vector<int> out_dims(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) out_dims[static_cast<std::size_t>(g[j])] = l.dims()[j];
  const int d = l.total();
  std::vector<int> map(static_cast<std::size_t>(d));
  std::vector<int> od(g.size());
  for (int a = 0; a < d; ++a) {
    const auto dg = detail::digits(a, l.dims());
    for (std::size_t j = 0; j < g.size(); ++j) od[static_cast<std::size_t>(g[j])] = dg[j];
    map[static_cast<std::size_t>(a)] = detail::compose(od, out_dims);
  }
  return map;
}

// U(g) X U(g)^dagger without forming U(g). The result layout is permuted accordingly.
inline Mat permute_factors(const Mat& x, const DimLayout& l, const std::vector<int>& g) {
  const auto map = permutation_index_map(l, g);
  const int d = l.total();
  require(x.rows() == d && x.cols() == d, ErrorCode::shape_mismatch, "matrix does not match layout");
  Mat r(d, d);
  for (int b = 0; b < d; ++b)
    for (int a = 0; a < d; ++a) r(map[static_cast<std::size_t>(a)], map[static_cast<std::size_t>(b)]) = x(a, b);
  return r;
}

inline DimLayout permute_layout(const DimLayout& l, const std::vector<int>& g) {
  std::vector<int> out(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) out[static_cast<std::size_t>(g[j])] = l.dims()[j];
  return DimLayout(out);
}

// U(g)(v_1 (x) ... (x) v_n) = v_{g^-1(1)} (x) ... (x) v_{g^-1(n)} on (C^d)^{(x)n}; g is 0-based.
inline Mat permutation_unitary(const std::vector<int>& g, int d, const Config& cfg = default_config()) {
  const DimLayout l = DimLayout::uniform(d, static_cast<int>(g.size()), cfg);
  const auto map = permutation_index_map(l, g);
  const int D = l.total();
  Mat u = Mat::Zero(D, D);
  for (int a = 0; a < D; ++a) u(map[static_cast<std::size_t>(a)], a) = 1.0;
  return u;
}

// Partial trace over every factor not listed in keep; kept factors retain their order.
inline Mat partial_trace(const Mat& x, const DimLayout& l, std::vector<int> keep) {
  require(x.rows() == l.total() && x.cols() == l.total(), ErrorCode::shape_mismatch, "matrix does not match layout");
  std::sort(keep.begin(), keep.end());
  const auto traced = detail::complement(l.factors(), keep);
  const auto ok = detail::offsets(l, keep);
  const auto ot = detail::offsets(l, traced);
  const int dk = static_cast<int>(ok.size());
  Mat r = Mat::Zero(dk, dk);
  for (int c = 0; c < dk; ++c)
    for (int a = 0; a < dk; ++a) {
      cd s = 0;
      for (int t : ot) s += x(ok[static_cast<std::size_t>(a)] + t, ok[static_cast<std::size_t>(c)] + t);
      r(a, c) = s;
    }
  return r;
}

inline DensityOperator partial_trace(const DensityOperator& rho, const std::vector<int>& keep) {
  auto k = keep;
  std::sort(k.begin(), k.end());
  return DensityOperator(hermitize(partial_trace(rho.matrix(), rho.layout(), k)), rho.layout().select(k));
}

// Transpose of the listed factors.
inline Mat partial_transpose(const Mat& x, const DimLayout& l, const std::vector<int>& factors) {
  require(x.rows() == l.total(), ErrorCode::shape_mismatch, "matrix does not match layout");
  const int d = l.total();
  std::vector<bool> flip(static_cast<std::size_t>(l.factors()), false);
  for (int f : factors) flip.at(static_cast<std::size_t>(f)) = true;
  Mat r(d, d);
  std::vector<int> ia, ib;
  for (int a = 0; a < d; ++a) {
    const auto da = detail::digits(a, l.dims());
    for (int b = 0; b < d; ++b) {
      auto na = da;
      auto nb = detail::digits(b, l.dims());
      for (std::size_t k = 0; k < flip.size(); ++k)
        if (flip[k]) std::swap(na[k], nb[k]);
      r(detail::compose(na, l.dims()), detail::compose(nb, l.dims())) = x(a, b);
    }
  }
  return r;
}

inline Mat tensor_power(const Mat& x, int n, const Config& cfg = default_config()) {
  require(n >= 1, ErrorCode::invalid_argument, "tensor power needs n >= 1");
  std::size_t total = 1;
  for (int i = 0; i < n; ++i) {
    total *= static_cast<std::size_t>(x.rows());
    require(total <= cfg.budget.max_dim, ErrorCode::budget_exceeded, "tensor power exceeds dimension budget");
  }
  Mat r = x;
  for (int i = 1; i < n; ++i) r = kron(r, x);
  return r;
}

inline DensityOperator tensor_power(const DensityOperator& rho, int n, const Config& cfg = default_config()) {
  return DensityOperator(hermitize(tensor_power(rho.matrix(), n, cfg)), rho.layout().power(n, cfg), cfg);
}

inline DensityOperator tensor(const DensityOperator& a, const DensityOperator& b) {
  return DensityOperator(hermitize(kron(a.matrix(), b.matrix())), a.layout().concat(b.layout()));
}

// Projector onto the non-negative eigenspace of B - A, i.e. {A <= B}.
inline Mat spectral_projection_leq(const Mat& a, const Mat& b, double tol = 0.0) {
  require(a.rows() == b.rows(), ErrorCode::shape_mismatch, "operators differ in size");
  const Eigh e = eigh(b - a);
  const double s = tol * std::max(1.0, spectral_radius(e.values));
  return spectral_projector(e, [s](double x) { return x >= -s; });
}

// Projector onto the positive eigenspace of A - B, i.e. {A > B}.
inline Mat spectral_projection_gt(const Mat& a, const Mat& b, double tol = 0.0) {
  const Eigh e = eigh(a - b);
  const double s = tol * std::max(1.0, spectral_radius(e.values));
  return spectral_projector(e, [s](double x) { return x > s; });
}

inline Mat support_projector(const Mat& a, const Config& cfg = default_config()) {
  const Eigh e = eigh(a);
  const double cut = cfg.tol.support_cut * std::max(spectral_radius(e.values), 1e-300);
  return spectral_projector(e, [cut](double x) { return x > cut; });
}

// ---------- channels ----------

inline QuantumChannel::QuantumChannel(const Mat& choi, DimLayout in, DimLayout out, const Config& cfg)
    : choi_(choi, in.concat(out, cfg), cfg), in_(std::move(in)), out_(std::move(out)) {
  std::vector<int> in_factors(static_cast<std::size_t>(in_.factors()));
  std::iota(in_factors.begin(), in_factors.end(), 0);
  const Mat marg = partial_trace(choi_.matrix(), choi_.layout(), in_factors);
  const Mat target = identity(in_.total()) / static_cast<double>(in_.total());
  require(max_abs(marg - target) <= cfg.tol.channel_marginal, ErrorCode::invalid_channel,
          "Choi state input marginal differs from I/d_in");
}

// Linear action on an arbitrary operator: N(X) = d_in sum_{ab} X_ab J_(a,b), J_(a,b) the (a,b) output block.
inline Mat channel_action(const QuantumChannel& n, const Mat& x) {
  require(x.rows() == n.d_in() && x.cols() == n.d_in(), ErrorCode::shape_mismatch, "input dimension mismatch");
  const int di = n.d_in(), dout = n.d_out();
  const Mat& j = n.choi();
  Mat out = Mat::Zero(dout, dout);
  for (int a = 0; a < di; ++a)
    for (int b = 0; b < di; ++b) {
      const cd r = x(a, b);
      if (r == cd(0)) continue;
      out += r * j.block(a * dout, b * dout, dout, dout);
    }
  return out * static_cast<double>(di);
}

inline Mat apply_channel_matrix(const QuantumChannel& n, const Mat& rho) { return hermitize(channel_action(n, rho)); }

inline DensityOperator apply_channel(const QuantumChannel& n, const DensityOperator& rho) {
  require(rho.layout().total() == n.d_in(), ErrorCode::shape_mismatch, "input dimension mismatch");
  return DensityOperator(apply_channel_matrix(n, rho.matrix()), n.out());
}

inline Mat max_entangled_vector(int d) {
  CVec v = CVec::Zero(d * d);
  for (int i = 0; i < d; ++i) v(i * d + i) = 1.0 / std::sqrt(static_cast<double>(d));
  return v;
}

inline DensityOperator max_entangled(int d) {
  const CVec v = max_entangled_vector(d);
  return DensityOperator(v * v.adjoint(), DimLayout({d, d}));
}

inline QuantumChannel QuantumChannel::identity_channel(DimLayout l) {
  const int d = l.total();
  const CVec v = max_entangled_vector(d);
  return QuantumChannel(v * v.adjoint(), l, l);
}

inline QuantumChannel QuantumChannel::replacer(DimLayout in, const DensityOperator& out_state) {
  const int d = in.total();
  return QuantumChannel(kron(identity(d) / static_cast<double>(d), out_state.matrix()), in, out_state.layout());
}

inline QuantumChannel QuantumChannel::from_kraus(const std::vector<Mat>& kraus, DimLayout in, DimLayout out) {
  const int di = in.total(), dout = out.total();
  Mat j = Mat::Zero(di * dout, di * dout);
  for (const Mat& k : kraus) {
    require(k.rows() == dout && k.cols() == di, ErrorCode::shape_mismatch, "Kraus operator shape");
    CVec v = CVec::Zero(di * dout);
    for (int i = 0; i < di; ++i) v.segment(i * dout, dout) = k.col(i);
    j += v * v.adjoint();
  }
  return QuantumChannel(hermitize(j / static_cast<double>(di)), in, out);
}

inline QuantumChannel compose_channels(const QuantumChannel& second, const QuantumChannel& first) {
  require(first.d_out() == second.d_in(), ErrorCode::shape_mismatch, "channel composition dimension mismatch");
  const int di = first.d_in();
  Mat j = Mat::Zero(di * second.d_out(), di * second.d_out());
  for (int a = 0; a < di; ++a)
    for (int b = 0; b < di; ++b) {
      Mat eab = Mat::Zero(di, di);
      eab(a, b) = 1.0;
      j.block(a * second.d_out(), b * second.d_out(), second.d_out(), second.d_out()) =
          channel_action(second, channel_action(first, eab)) / static_cast<double>(di);
    }
  return QuantumChannel(hermitize(j), first.in(), second.out());
}

// Choi factor order (in_a, out_a, in_b, out_b) -> (in_a, in_b, out_a, out_b).
inline std::vector<int> interleaved_to_grouped(int ia, int oa, int ib, int ob) {
  std::vector<int> g;
  for (int j = 0; j < ia; ++j) g.push_back(j);
  for (int j = 0; j < oa; ++j) g.push_back(ia + ib + j);
  for (int j = 0; j < ib; ++j) g.push_back(ia + j);
  for (int j = 0; j < ob; ++j) g.push_back(ia + ib + oa + j);
  return g;
}

// a (x) b with Choi layout (in_a, in_b, out_a, out_b).
inline QuantumChannel tensor_channels(const QuantumChannel& a, const QuantumChannel& b, const Config& cfg = default_config()) {
  const DimLayout l = a.in().concat(a.out(), cfg).concat(b.in(), cfg).concat(b.out(), cfg);
  const auto g = interleaved_to_grouped(a.in().factors(), a.out().factors(), b.in().factors(), b.out().factors());
  return QuantumChannel(permute_factors(kron(a.choi(), b.choi()), l, g), a.in().concat(b.in(), cfg),
                        a.out().concat(b.out(), cfg), cfg);
}

inline QuantumChannel tensor_power(const QuantumChannel& n, int k, const Config& cfg = default_config()) {
  require(k >= 1, ErrorCode::invalid_argument, "tensor power must be positive");
  QuantumChannel r = n;
  for (int i = 1; i < k; ++i) r = tensor_channels(r, n, cfg);
  return r;
}

}  // namespace qstein
