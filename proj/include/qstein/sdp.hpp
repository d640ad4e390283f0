#pragma once

// Primal:  min sum_j <C_j, X_j>  s.t.  sum_j <A_ij, X_j> (=|<=|>=) b_i,  X_j >= 0.
// Dual:    max b^T y             s.t.  S_j = C_j - sum_i y_i A_ij >= 0.
// Hermitian blocks hold complex matrices; diagonal blocks hold nonnegative vectors and
// take their coefficients as dim x 1 real columns.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qstein/config.hpp"
#include "qstein/linalg.hpp"

namespace qstein {

enum class BlockKind { hermitian, diagonal };
enum class Sense { eq, leq, geq };
enum class SdpStatus { optimal, infeasible, unbounded, numerical_fail };

inline const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::optimal: return "optimal";
    case SdpStatus::infeasible: return "infeasible";
    case SdpStatus::unbounded: return "unbounded";
    case SdpStatus::numerical_fail: return "numerical-fail";
  }
  return "unknown";
}

struct BlockSpec {
  int dim = 1;
  BlockKind kind = BlockKind::hermitian;
};

struct Term {
  int block = 0;
  Mat coeff;
};

struct Constraint {
  std::vector<Term> terms;
  Sense sense = Sense::eq;
  double rhs = 0.0;
};

struct SdpProblem {
  std::vector<BlockSpec> blocks;
  std::vector<Mat> objective;  // empty matrix means zero
  std::vector<Constraint> constraints;

  int add_block(int dim, BlockKind kind = BlockKind::hermitian) {
    require(dim >= 1, ErrorCode::invalid_argument, "block dimension must be positive");
    blocks.push_back({dim, kind});
    objective.emplace_back();
    return static_cast<int>(blocks.size()) - 1;
  }
  void set_objective(int block, const Mat& c) { objective.at(static_cast<std::size_t>(block)) = c; }
  int add_constraint(Constraint c) {
    constraints.push_back(std::move(c));
    return static_cast<int>(constraints.size()) - 1;
  }
  int num_constraints() const { return static_cast<int>(constraints.size()); }
};

struct SdpOptions {
  int max_iterations = 200;
  double gap_tol = 1e-9;       // relative duality gap target
  double feas_tol = 1e-9;      // relative residual target
  double accept_tol = 1e-7;    // looser acceptance when progress stalls
  double certificate_tol = 1e-8;
  double step_fraction = 0.98;
  bool record_history = false;
};

struct SdpIterate {
  double primal_obj = 0, dual_obj = 0, primal_infeas = 0, dual_infeas = 0, mu = 0;
};

struct SdpSolution {
  SdpStatus status = SdpStatus::numerical_fail;
  std::vector<Mat> primal;      // X_j; diagonal blocks as dim x 1 columns
  std::vector<Mat> dual_slack;  // S_j, same shapes
  RVec dual;                    // y
  double primal_obj = 0, dual_obj = 0;
  double primal_infeas = 0, dual_infeas = 0, rel_gap = 0;
  int iterations = 0;
  std::optional<RVec> farkas_ray;         // b^T y = 1, sum_i y_i A_i <= 0 (primal infeasible)
  std::optional<std::vector<Mat>> primal_ray;  // A(X) = 0, X >= 0, <C,X> = -1 (unbounded)
  std::vector<SdpIterate> history;
  std::string message;

  bool ok() const { return status == SdpStatus::optimal; }
};

// ---------- matrix-valued constraint helpers ----------

// Adjoint action of a linear map on one block: given a Hermitian test matrix H,
// returns the coefficient K with <H, L(X)> = <K, X>.
struct MapTerm {
  int block = 0;
  std::function<Mat(const Mat&)> adjoint;
};

// sum_k L_k(X_k) = rhs, imposed on the orthonormal Hermitian basis of size d.
// Returns the constraint indices in basis order.
inline std::vector<int> add_matrix_equality(SdpProblem& p, int d, const std::vector<MapTerm>& maps, const Mat& rhs) {
  require(rhs.rows() == d && rhs.cols() == d, ErrorCode::shape_mismatch, "rhs size mismatch");
  const auto basis = hermitian_basis(d);
  std::vector<int> idx;
  idx.reserve(basis.size());
  for (const Mat& h : basis) {
    Constraint c;
    c.sense = Sense::eq;
    c.rhs = inner(h, rhs);
    for (const auto& m : maps) c.terms.push_back({m.block, m.adjoint(h)});
    idx.push_back(p.add_constraint(std::move(c)));
  }
  return idx;
}

// sum_r y_r H_r for the multipliers of a matrix equality.
inline Mat matrix_multiplier(const SdpSolution& s, const std::vector<int>& idx, int d) {
  RVec c(static_cast<int>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) c(static_cast<int>(r)) = s.dual(idx[r]);
  return from_hermitian_coords(c, d);
}

inline std::function<Mat(const Mat&)> identity_map() {
  return [](const Mat& h) { return h; };
}
inline std::function<Mat(const Mat&)> scaled_map(double a) {
  return [a](const Mat& h) { return Mat(h * a); };
}
// Coefficient for a 1x1 block t entering as t * M.
inline std::function<Mat(const Mat&)> scalar_times(const Mat& m, double a = 1.0) {
  return [m, a](const Mat& h) { return Mat::Constant(1, 1, cd(a * inner(h, m), 0.0)); };
}
// Coefficient for a diagonal block w entering as sum_k w_k M_k.
inline std::function<Mat(const Mat&)> weighted_sum(const std::vector<Mat>& ms, double a = 1.0) {
  return [ms, a](const Mat& h) {
    Mat c(static_cast<int>(ms.size()), 1);
    for (std::size_t k = 0; k < ms.size(); ++k) c(static_cast<int>(k), 0) = a * inner(h, ms[k]);
    return c;
  };
}

// ---------- solver ----------

namespace detail {

struct BlockVar {
  Mat h;   // hermitian blocks
  RVec v;  // diagonal blocks
};

class Ipm {
 public:
  Ipm(const SdpProblem& p, const SdpOptions& o, const Config& cfg) : opt_(o) {
    const int nb0 = static_cast<int>(p.blocks.size());
    blocks_ = p.blocks;
    m_ = p.num_constraints();
    require(p.objective.size() == p.blocks.size(), ErrorCode::shape_mismatch, "objective count != block count");
    std::size_t sq = 0;
    for (const auto& b : blocks_) sq += static_cast<std::size_t>(b.dim) * (b.kind == BlockKind::hermitian ? b.dim : 1);
    int slacks = 0;
    for (const auto& c : p.constraints)
      if (c.sense != Sense::eq) ++slacks;
    sq += static_cast<std::size_t>(slacks);
    require(sq <= cfg.budget.sdp_max_sq_dim, ErrorCode::budget_exceeded, "SDP block sizes exceed budget");
    require(static_cast<std::size_t>(m_) <= cfg.budget.sdp_max_constraints, ErrorCode::budget_exceeded,
            "SDP has too many constraints");
    if (slacks > 0) {
      slack_block_ = nb0;
      blocks_.push_back({slacks, BlockKind::diagonal});
    }
    nb_ = static_cast<int>(blocks_.size());
    c_.resize(static_cast<std::size_t>(nb_));
    for (int j = 0; j < nb_; ++j) {
      const auto& bs = blocks_[static_cast<std::size_t>(j)];
      BlockVar z;
      if (bs.kind == BlockKind::hermitian) {
        z.h = Mat::Zero(bs.dim, bs.dim);
        if (j < nb0 && p.objective[static_cast<std::size_t>(j)].size() > 0) {
          const Mat& cj = p.objective[static_cast<std::size_t>(j)];
          require(cj.rows() == bs.dim && cj.cols() == bs.dim, ErrorCode::shape_mismatch, "objective block shape");
          z.h = hermitize(cj);
        }
      } else {
        z.v = RVec::Zero(bs.dim);
        if (j < nb0 && p.objective[static_cast<std::size_t>(j)].size() > 0) {
          const Mat& cj = p.objective[static_cast<std::size_t>(j)];
          require(cj.rows() == bs.dim && cj.cols() == 1, ErrorCode::shape_mismatch, "diagonal objective shape");
          z.v = cj.real();
        }
      }
      c_[static_cast<std::size_t>(j)] = z;
    }
    // constraint data per block
    herm_terms_.resize(static_cast<std::size_t>(nb_));
    diag_cols_.resize(static_cast<std::size_t>(nb_));
    diag_rows_.resize(static_cast<std::size_t>(nb_));
    b_ = RVec(m_);
    int s = 0;
    std::vector<std::vector<std::pair<int, RVec>>> diag_terms(static_cast<std::size_t>(nb_));
    for (int i = 0; i < m_; ++i) {
      const auto& con = p.constraints[static_cast<std::size_t>(i)];
      b_(i) = con.rhs;
      for (const auto& t : con.terms) {
        require(t.block >= 0 && t.block < nb0, ErrorCode::invalid_argument, "constraint references unknown block");
        const auto& bs = blocks_[static_cast<std::size_t>(t.block)];
        if (bs.kind == BlockKind::hermitian) {
          require(t.coeff.rows() == bs.dim && t.coeff.cols() == bs.dim, ErrorCode::shape_mismatch,
                  "coefficient shape mismatch");
          herm_terms_[static_cast<std::size_t>(t.block)].push_back({i, hermitize(t.coeff)});
        } else {
          require(t.coeff.rows() == bs.dim && t.coeff.cols() == 1, ErrorCode::shape_mismatch,
                  "diagonal coefficient must be a column");
          diag_terms[static_cast<std::size_t>(t.block)].push_back({i, t.coeff.real().col(0)});
        }
      }
      if (con.sense != Sense::eq) {
        RVec e = RVec::Zero(slacks);
        e(s++) = con.sense == Sense::leq ? 1.0 : -1.0;
        diag_terms[static_cast<std::size_t>(slack_block_)].push_back({i, e});
      }
    }
    // merge duplicate constraint entries on the same diagonal block into dense A (dim x m_j)
    for (int j = 0; j < nb_; ++j) {
      auto& dt = diag_terms[static_cast<std::size_t>(j)];
      if (dt.empty()) continue;
      std::vector<int> rows;
      for (auto& [i, v] : dt)
        if (rows.empty() || rows.back() != i) rows.push_back(i);
      std::sort(rows.begin(), rows.end());
      rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
      RMat a = RMat::Zero(blocks_[static_cast<std::size_t>(j)].dim, static_cast<int>(rows.size()));
      for (auto& [i, v] : dt) {
        const int col = static_cast<int>(std::lower_bound(rows.begin(), rows.end(), i) - rows.begin());
        a.col(col) += v;
      }
      diag_cols_[static_cast<std::size_t>(j)] = a;
      diag_rows_[static_cast<std::size_t>(j)] = rows;
    }
    nsum_ = 0;
    for (const auto& b : blocks_) nsum_ += b.dim;
  }

  SdpSolution run() {
    SdpSolution sol;
    init_point();
    const double bnorm = b_.norm(), cnorm = norm(c_);
    SdpSolution best;
    double best_score = std::numeric_limits<double>::infinity();
    int stall = 0;
    for (int it = 0; it <= opt_.max_iterations; ++it) {
      // residuals
      const RVec ax = apply_a(x_);
      const RVec rp = b_ - ax;
      std::vector<BlockVar> rd = residual_dual();
      const double pobj = dot(c_, x_), dobj = b_.dot(y_);
      const double pinf = rp.norm() / (1.0 + bnorm), dinf = norm(rd) / (1.0 + cnorm);
      const double gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
      const double mu = dot(x_, s_) / static_cast<double>(nsum_);
      if (opt_.record_history) sol.history.push_back({pobj, dobj, pinf, dinf, mu});
      const double score = std::max({gap, pinf, dinf});
      if (score < best_score) {
        best_score = score;
        best = snapshot(pobj, dobj, pinf, dinf, gap, it);
      }
      if (gap <= opt_.gap_tol && pinf <= opt_.feas_tol && dinf <= opt_.feas_tol) {
        return finish(snapshot(pobj, dobj, pinf, dinf, gap, it), SdpStatus::optimal, sol.history, "converged");
      }
      if (auto ray = farkas(pinf)) {
        auto out = snapshot(pobj, dobj, pinf, dinf, gap, it);
        out.farkas_ray = ray;
        return finish(out, SdpStatus::infeasible, sol.history, "primal infeasible");
      }
      if (auto ray = primal_ray(dinf)) {
        auto out = snapshot(pobj, dobj, pinf, dinf, gap, it);
        out.primal_ray = ray;
        return finish(out, SdpStatus::unbounded, sol.history, "primal unbounded");
      }
      if (it == opt_.max_iterations) break;
      double ap = 0, ad = 0;
      if (!step(rp, rd, mu, ap, ad)) break;
      if (ap < 1e-9 && ad < 1e-9) {
        if (++stall >= 3) break;
      } else {
        stall = 0;
      }
    }
    if (best.rel_gap <= opt_.accept_tol && best.primal_infeas <= opt_.accept_tol &&
        best.dual_infeas <= opt_.accept_tol)
      return finish(best, SdpStatus::optimal, sol.history, "converged to acceptance tolerance");
    return finish(best, SdpStatus::numerical_fail, sol.history, "no convergence; best iterate attached");
  }

 private:
  struct Scaling {
    Mat g;    // hermitian: G with X = G V G^dagger
    RVec v;   // scaled eigenvalues
    RVec g2;  // diagonal: g^2 = sqrt(x/s)
    std::vector<Mat> at;  // scaled coefficients for herm blocks (same order as herm_terms_)
    RMat ad;              // scaled diagonal coefficients
  };

  const SdpOptions opt_;
  std::vector<BlockSpec> blocks_;
  int nb_ = 0, m_ = 0, slack_block_ = -1, nsum_ = 0;
  std::vector<BlockVar> c_, x_, s_;
  RVec b_, y_;
  std::vector<std::vector<std::pair<int, Mat>>> herm_terms_;
  std::vector<RMat> diag_cols_;
  std::vector<std::vector<int>> diag_rows_;

  bool herm(int j) const { return blocks_[static_cast<std::size_t>(j)].kind == BlockKind::hermitian; }

  double dot(const std::vector<BlockVar>& a, const std::vector<BlockVar>& b) const {
    double s = 0;
    for (int j = 0; j < nb_; ++j) {
      const auto& aj = a[static_cast<std::size_t>(j)];
      const auto& bj = b[static_cast<std::size_t>(j)];
      s += herm(j) ? inner(aj.h, bj.h) : aj.v.dot(bj.v);
    }
    return s;
  }
  double norm(const std::vector<BlockVar>& a) const { return std::sqrt(std::max(0.0, dot(a, a))); }

  RVec apply_a(const std::vector<BlockVar>& x) const {
    RVec r = RVec::Zero(m_);
    for (int j = 0; j < nb_; ++j) {
      if (herm(j)) {
        for (const auto& [i, a] : herm_terms_[static_cast<std::size_t>(j)]) r(i) += inner(a, x[static_cast<std::size_t>(j)].h);
      } else if (diag_cols_[static_cast<std::size_t>(j)].size() > 0) {
        const RVec t = diag_cols_[static_cast<std::size_t>(j)].transpose() * x[static_cast<std::size_t>(j)].v;
        const auto& rows = diag_rows_[static_cast<std::size_t>(j)];
        for (std::size_t k = 0; k < rows.size(); ++k) r(rows[k]) += t(static_cast<int>(k));
      }
    }
    return r;
  }

  std::vector<BlockVar> apply_at(const RVec& y) const {
    std::vector<BlockVar> out(static_cast<std::size_t>(nb_));
    for (int j = 0; j < nb_; ++j) {
      const int d = blocks_[static_cast<std::size_t>(j)].dim;
      if (herm(j)) {
        Mat acc = Mat::Zero(d, d);
        for (const auto& [i, a] : herm_terms_[static_cast<std::size_t>(j)]) acc += y(i) * a;
        out[static_cast<std::size_t>(j)].h = acc;
      } else {
        RVec acc = RVec::Zero(d);
        const auto& rows = diag_rows_[static_cast<std::size_t>(j)];
        if (!rows.empty()) {
          RVec yy(static_cast<int>(rows.size()));
          for (std::size_t k = 0; k < rows.size(); ++k) yy(static_cast<int>(k)) = y(rows[k]);
          acc = diag_cols_[static_cast<std::size_t>(j)] * yy;
        }
        out[static_cast<std::size_t>(j)].v = acc;
      }
    }
    return out;
  }

  std::vector<BlockVar> residual_dual() const {
    auto aty = apply_at(y_);
    for (int j = 0; j < nb_; ++j) {
      auto& r = aty[static_cast<std::size_t>(j)];
      if (herm(j))
        r.h = c_[static_cast<std::size_t>(j)].h - s_[static_cast<std::size_t>(j)].h - r.h;
      else
        r.v = c_[static_cast<std::size_t>(j)].v - s_[static_cast<std::size_t>(j)].v - r.v;
    }
    return aty;
  }

  void init_point() {
    x_.assign(static_cast<std::size_t>(nb_), {});
    s_.assign(static_cast<std::size_t>(nb_), {});
    y_ = RVec::Zero(m_);
    for (int j = 0; j < nb_; ++j) {
      const int d = blocks_[static_cast<std::size_t>(j)].dim;
      const double sq = std::sqrt(static_cast<double>(d));
      double amax = 0, xi = 0;
      auto coeff_norm = [&](int i, double nrm) {
        amax = std::max(amax, nrm);
        xi = std::max(xi, (1.0 + std::abs(b_(i))) / (1.0 + nrm));
      };
      double cn = 0;
      if (herm(j)) {
        for (const auto& [i, a] : herm_terms_[static_cast<std::size_t>(j)]) coeff_norm(i, a.norm());
        cn = c_[static_cast<std::size_t>(j)].h.norm();
      } else {
        const auto& rows = diag_rows_[static_cast<std::size_t>(j)];
        for (std::size_t k = 0; k < rows.size(); ++k)
          coeff_norm(rows[k], diag_cols_[static_cast<std::size_t>(j)].col(static_cast<int>(k)).norm());
        cn = c_[static_cast<std::size_t>(j)].v.norm();
      }
      const double xs = std::max({10.0, sq, d * xi});
      const double ss = std::max({10.0, sq, (1.0 + std::max(amax, cn)) / sq});
      if (herm(j)) {
        x_[static_cast<std::size_t>(j)].h = Mat::Identity(d, d) * xs;
        s_[static_cast<std::size_t>(j)].h = Mat::Identity(d, d) * ss;
      } else {
        x_[static_cast<std::size_t>(j)].v = RVec::Constant(d, xs);
        s_[static_cast<std::size_t>(j)].v = RVec::Constant(d, ss);
      }
    }
  }

  bool scale(std::vector<Scaling>& sc) const {
    sc.assign(static_cast<std::size_t>(nb_), {});
    for (int j = 0; j < nb_; ++j) {
      auto& z = sc[static_cast<std::size_t>(j)];
      if (herm(j)) {
        Eigen::LLT<Mat> llt(x_[static_cast<std::size_t>(j)].h);
        if (llt.info() != Eigen::Success) return false;
        const Mat l = llt.matrixL();
        Eigen::SelfAdjointEigenSolver<Mat> es(hermitize(l.adjoint() * s_[static_cast<std::size_t>(j)].h * l));
        if (es.info() != Eigen::Success) return false;
        RVec lam = es.eigenvalues();
        if (lam.minCoeff() <= 0) return false;
        z.v = lam.cwiseSqrt();
        const RVec q = lam.array().pow(-0.25);
        z.g = l * es.eigenvectors() * q.asDiagonal();
        const auto& terms = herm_terms_[static_cast<std::size_t>(j)];
        z.at.resize(terms.size());
        for (std::size_t k = 0; k < terms.size(); ++k) z.at[k] = hermitize(z.g.adjoint() * terms[k].second * z.g);
      } else {
        const RVec& xv = x_[static_cast<std::size_t>(j)].v;
        const RVec& sv = s_[static_cast<std::size_t>(j)].v;
        if (xv.minCoeff() <= 0 || sv.minCoeff() <= 0) return false;
        z.v = (xv.array() * sv.array()).sqrt();
        z.g2 = (xv.array() / sv.array()).sqrt();
        if (diag_cols_[static_cast<std::size_t>(j)].size() > 0)
          z.ad = z.g2.asDiagonal() * diag_cols_[static_cast<std::size_t>(j)];
      }
    }
    return true;
  }

  RMat schur(const std::vector<Scaling>& sc) const {
    RMat m = RMat::Zero(m_, m_);
    for (int j = 0; j < nb_; ++j) {
      const auto& z = sc[static_cast<std::size_t>(j)];
      if (herm(j)) {
        const auto& terms = herm_terms_[static_cast<std::size_t>(j)];
        if (terms.empty()) continue;
        const int d = blocks_[static_cast<std::size_t>(j)].dim;
        Mat bmat(d * d, static_cast<int>(terms.size()));
        for (std::size_t k = 0; k < terms.size(); ++k)
          bmat.col(static_cast<int>(k)) = Eigen::Map<const CVec>(z.at[k].data(), d * d);
        Eigen::Map<const RMat> br(reinterpret_cast<const double*>(bmat.data()), 2 * d * d, bmat.cols());
        RMat mj = RMat::Zero(bmat.cols(), bmat.cols());
        mj.selfadjointView<Eigen::Lower>().rankUpdate(br.transpose());
        mj = mj.selfadjointView<Eigen::Lower>();
        for (std::size_t a = 0; a < terms.size(); ++a)
          for (std::size_t c = 0; c < terms.size(); ++c)
            m(terms[a].first, terms[c].first) += mj(static_cast<int>(a), static_cast<int>(c));
      } else {
        if (z.ad.size() == 0) continue;
        // diag(g^2) A, Schur term A^T diag(x/s) A = (g2 A)^T (g2 A)
        const RMat mj = z.ad.transpose() * z.ad;
        const auto& rows = diag_rows_[static_cast<std::size_t>(j)];
        for (std::size_t a = 0; a < rows.size(); ++a)
          for (std::size_t c = 0; c < rows.size(); ++c)
            m(rows[a], rows[c]) += mj(static_cast<int>(a), static_cast<int>(c));
      }
    }
    return m;
  }

  // <A~_i, Z~> for scaled blocks
  RVec apply_scaled(const std::vector<Scaling>& sc, const std::vector<BlockVar>& z) const {
    RVec r = RVec::Zero(m_);
    for (int j = 0; j < nb_; ++j) {
      const auto& s = sc[static_cast<std::size_t>(j)];
      if (herm(j)) {
        const auto& terms = herm_terms_[static_cast<std::size_t>(j)];
        for (std::size_t k = 0; k < terms.size(); ++k) r(terms[k].first) += inner(s.at[k], z[static_cast<std::size_t>(j)].h);
      } else if (s.ad.size() > 0) {
        const RVec t = s.ad.transpose() * z[static_cast<std::size_t>(j)].v;
        const auto& rows = diag_rows_[static_cast<std::size_t>(j)];
        for (std::size_t k = 0; k < rows.size(); ++k) r(rows[k]) += t(static_cast<int>(k));
      }
    }
    return r;
  }

  std::vector<BlockVar> apply_scaled_adj(const std::vector<Scaling>& sc, const RVec& y) const {
    std::vector<BlockVar> out(static_cast<std::size_t>(nb_));
    for (int j = 0; j < nb_; ++j) {
      const auto& s = sc[static_cast<std::size_t>(j)];
      const int d = blocks_[static_cast<std::size_t>(j)].dim;
      if (herm(j)) {
        Mat acc = Mat::Zero(d, d);
        const auto& terms = herm_terms_[static_cast<std::size_t>(j)];
        for (std::size_t k = 0; k < terms.size(); ++k) acc += y(terms[k].first) * s.at[k];
        out[static_cast<std::size_t>(j)].h = acc;
      } else {
        RVec acc = RVec::Zero(d);
        const auto& rows = diag_rows_[static_cast<std::size_t>(j)];
        if (!rows.empty()) {
          RVec yy(static_cast<int>(rows.size()));
          for (std::size_t k = 0; k < rows.size(); ++k) yy(static_cast<int>(k)) = y(rows[k]);
          acc = s.ad * yy;
        }
        out[static_cast<std::size_t>(j)].v = acc;
      }
    }
    return out;
  }

  struct Direction {
    std::vector<BlockVar> dx, ds;  // scaled
    RVec dy;
  };

  bool solve_newton(const RMat& m, const Eigen::LLT<RMat>& llt, const std::vector<Scaling>& sc, const RVec& rp,
                    const std::vector<BlockVar>& rdt, const std::vector<BlockVar>& rc, Direction& dir) const {
    std::vector<BlockVar> diff(static_cast<std::size_t>(nb_));
    for (int j = 0; j < nb_; ++j) {
      if (herm(j))
        diff[static_cast<std::size_t>(j)].h = rc[static_cast<std::size_t>(j)].h - rdt[static_cast<std::size_t>(j)].h;
      else
        diff[static_cast<std::size_t>(j)].v = rc[static_cast<std::size_t>(j)].v - rdt[static_cast<std::size_t>(j)].v;
    }
    const RVec rhs = rp - apply_scaled(sc, diff);
    RVec dy = llt.solve(rhs);
    // one step of iterative refinement
    dy += llt.solve(rhs - m * dy);
    if (!dy.allFinite()) return false;
    const auto ady = apply_scaled_adj(sc, dy);
    dir.dy = dy;
    dir.dx.assign(static_cast<std::size_t>(nb_), {});
    dir.ds.assign(static_cast<std::size_t>(nb_), {});
    for (int j = 0; j < nb_; ++j) {
      const auto js = static_cast<std::size_t>(j);
      if (herm(j)) {
        dir.dx[js].h = hermitize(diff[js].h + ady[js].h);
        dir.ds[js].h = hermitize(rdt[js].h - ady[js].h);
      } else {
        dir.dx[js].v = diff[js].v + ady[js].v;
        dir.ds[js].v = rdt[js].v - ady[js].v;
      }
    }
    return true;
  }

  // largest step keeping V + a D >= 0 for scaled direction D
  double max_step(const std::vector<Scaling>& sc, const std::vector<BlockVar>& d) const {
    double amax = std::numeric_limits<double>::infinity();
    for (int j = 0; j < nb_; ++j) {
      const auto& s = sc[static_cast<std::size_t>(j)];
      double lmin;
      if (herm(j)) {
        const RVec iv = s.v.cwiseSqrt().cwiseInverse();
        const Mat t = iv.asDiagonal() * d[static_cast<std::size_t>(j)].h * iv.asDiagonal();
        lmin = eigvalsh(t).minCoeff();
      } else {
        lmin = (d[static_cast<std::size_t>(j)].v.array() / s.v.array()).minCoeff();
      }
      if (lmin < 0) amax = std::min(amax, -1.0 / lmin);
    }
    return amax;
  }

  static double inner_scaled(const std::vector<BlockVar>& a, const std::vector<BlockVar>& b,
                             const std::vector<BlockSpec>& bl) {
    double s = 0;
    for (std::size_t j = 0; j < bl.size(); ++j)
      s += bl[j].kind == BlockKind::hermitian ? inner(a[j].h, b[j].h) : a[j].v.dot(b[j].v);
    return s;
  }

  bool step(const RVec& rp, const std::vector<BlockVar>& rd, double mu, double& ap, double& ad) {
    std::vector<Scaling> sc;
    if (!scale(sc)) return false;
    RMat m = schur(sc);
    Eigen::LLT<RMat> llt(m);
    if (llt.info() != Eigen::Success) {
      const double reg = 1e-13 * std::max(1.0, m.diagonal().cwiseAbs().maxCoeff());
      m.diagonal().array() += reg;
      llt.compute(m);
      if (llt.info() != Eigen::Success) return false;
    }
    std::vector<BlockVar> rdt(static_cast<std::size_t>(nb_)), vtil(static_cast<std::size_t>(nb_)),
        rc(static_cast<std::size_t>(nb_));
    for (int j = 0; j < nb_; ++j) {
      const auto js = static_cast<std::size_t>(j);
      if (herm(j)) {
        rdt[js].h = hermitize(sc[js].g.adjoint() * rd[js].h * sc[js].g);
        vtil[js].h = sc[js].v.asDiagonal().toDenseMatrix().cast<cd>();
        rc[js].h = -vtil[js].h;
      } else {
        rdt[js].v = sc[js].g2.cwiseProduct(rd[js].v);
        vtil[js].v = sc[js].v;
        rc[js].v = -sc[js].v;
      }
    }
    Direction aff;
    if (!solve_newton(m, llt, sc, rp, rdt, rc, aff)) return false;
    const double apa = std::min(1.0, max_step(sc, aff.dx));
    const double ada = std::min(1.0, max_step(sc, aff.ds));
    // mu after the affine step
    std::vector<BlockVar> xa(static_cast<std::size_t>(nb_)), sa(static_cast<std::size_t>(nb_));
    for (int j = 0; j < nb_; ++j) {
      const auto js = static_cast<std::size_t>(j);
      if (herm(j)) {
        xa[js].h = vtil[js].h + apa * aff.dx[js].h;
        sa[js].h = vtil[js].h + ada * aff.ds[js].h;
      } else {
        xa[js].v = vtil[js].v + apa * aff.dx[js].v;
        sa[js].v = vtil[js].v + ada * aff.ds[js].v;
      }
    }
    const double mu_aff = inner_scaled(xa, sa, blocks_) / static_cast<double>(nsum_);
    double sigma = std::pow(std::max(0.0, mu_aff) / mu, 3.0);
    sigma = std::clamp(sigma, 0.0, 1.0);
    // corrector: sigma mu V^-1 - V - L_V^-1(dXa dSa + dSa dXa)
    for (int j = 0; j < nb_; ++j) {
      const auto js = static_cast<std::size_t>(j);
      const RVec& v = sc[js].v;
      if (herm(j)) {
        const Mat prod = aff.dx[js].h * aff.ds[js].h;
        const Mat sym = prod + prod.adjoint();
        const int d = static_cast<int>(v.size());
        Mat r(d, d);
        for (int b = 0; b < d; ++b)
          for (int a = 0; a < d; ++a) r(a, b) = -sym(a, b) / (v(a) + v(b));
        for (int a = 0; a < d; ++a) r(a, a) += sigma * mu / v(a) - v(a);
        rc[js].h = r;
      } else {
        rc[js].v = (sigma * mu) * v.cwiseInverse() - v -
                   (aff.dx[js].v.cwiseProduct(aff.ds[js].v)).cwiseQuotient(v);
      }
    }
    Direction dir;
    if (!solve_newton(m, llt, sc, rp, rdt, rc, dir)) return false;
    ap = std::min(1.0, opt_.step_fraction * max_step(sc, dir.dx));
    ad = std::min(1.0, opt_.step_fraction * max_step(sc, dir.ds));
    // unscale and update
    const auto ady = apply_at(dir.dy);
    for (int j = 0; j < nb_; ++j) {
      const auto js = static_cast<std::size_t>(j);
      if (herm(j)) {
        const Mat dx = sc[js].g * dir.dx[js].h * sc[js].g.adjoint();
        x_[js].h = hermitize(x_[js].h + ap * dx);
        const Mat ds = rd[js].h - ady[js].h;
        s_[js].h = hermitize(s_[js].h + ad * ds);
      } else {
        x_[js].v += ap * sc[js].g2.cwiseProduct(dir.dx[js].v);
        s_[js].v += ad * (rd[js].v - ady[js].v);
      }
    }
    y_ += ad * dir.dy;
    return true;
  }

  std::optional<RVec> farkas(double pinf) const {
    const double by = b_.dot(y_);
    if (!(by > 0) || pinf < 1e-6) return std::nullopt;
    const RVec yy = y_ / by;
    const auto aty = apply_at(yy);
    double viol = 0;
    for (int j = 0; j < nb_; ++j) {
      const auto& a = aty[static_cast<std::size_t>(j)];
      const double top = herm(j) ? eigvalsh(a.h).maxCoeff() : (a.v.size() ? a.v.maxCoeff() : 0.0);
      viol = std::max(viol, top);
    }
    if (viol <= opt_.certificate_tol * std::max(1.0, yy.norm())) return yy;
    return std::nullopt;
  }

  std::optional<std::vector<Mat>> primal_ray(double dinf) const {
    const double cx = dot(c_, x_);
    if (!(cx < 0) || dinf < 1e-6) return std::nullopt;
    std::vector<BlockVar> xr = x_;
    for (int j = 0; j < nb_; ++j) {
      if (herm(j))
        xr[static_cast<std::size_t>(j)].h /= -cx;
      else
        xr[static_cast<std::size_t>(j)].v /= -cx;
    }
    const RVec ax = apply_a(xr);
    if (ax.norm() > opt_.certificate_tol) return std::nullopt;
    std::vector<Mat> out;
    for (int j = 0; j < nb_; ++j) out.push_back(export_block(xr[static_cast<std::size_t>(j)], j));
    return out;
  }

  Mat export_block(const BlockVar& z, int j) const { return herm(j) ? z.h : Mat(z.v.cast<cd>()); }

  SdpSolution snapshot(double pobj, double dobj, double pinf, double dinf, double gap, int it) const {
    SdpSolution s;
    for (int j = 0; j < nb_; ++j) {
      if (j == slack_block_) continue;
      s.primal.push_back(export_block(x_[static_cast<std::size_t>(j)], j));
      s.dual_slack.push_back(export_block(s_[static_cast<std::size_t>(j)], j));
    }
    s.dual = y_;
    s.primal_obj = pobj;
    s.dual_obj = dobj;
    s.primal_infeas = pinf;
    s.dual_infeas = dinf;
    s.rel_gap = gap;
    s.iterations = it;
    return s;
  }

  static SdpSolution finish(SdpSolution s, SdpStatus st, std::vector<SdpIterate> hist, const char* msg) {
    s.status = st;
    s.history = std::move(hist);
    s.message = msg;
    return s;
  }
};

}  // namespace detail

inline SdpSolution solve_sdp(const SdpProblem& p, const SdpOptions& opt = {}, const Config& cfg = default_config()) {
  if (p.num_constraints() == 0) {
    // min <C, X> over X >= 0: zero if every C_j >= 0, otherwise unbounded
    SdpSolution s;
    s.status = SdpStatus::optimal;
    for (std::size_t j = 0; j < p.blocks.size(); ++j) {
      const auto& b = p.blocks[j];
      const bool h = b.kind == BlockKind::hermitian;
      s.primal.push_back(h ? Mat(Mat::Zero(b.dim, b.dim)) : Mat(Mat::Zero(b.dim, 1)));
      const Mat& c = p.objective[j];
      Mat cj = c.size() ? c : (h ? Mat(Mat::Zero(b.dim, b.dim)) : Mat(Mat::Zero(b.dim, 1)));
      s.dual_slack.push_back(cj);
      const double low = h ? lambda_min(cj) : cj.real().minCoeff();
      if (low < 0) s.status = SdpStatus::unbounded;
    }
    s.dual = RVec(0);
    return s;
  }
  detail::Ipm ipm(p, opt, cfg);
  return ipm.run();
}

}  // namespace qstein
