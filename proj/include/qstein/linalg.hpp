#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "qstein/config.hpp"

namespace qstein {

inline Mat hermitize(const Mat& a) { return (a + a.adjoint()) * 0.5; }

inline double max_abs(const Mat& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

inline double hermiticity_defect(const Mat& a) { return max_abs(a - a.adjoint()); }

struct Eigh {
  RVec values;  // ascending
  Mat vectors;  // columns
};

inline Eigh eigh(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(hermitize(a));
  if (es.info() != Eigen::Success) throw Error(ErrorCode::numerical_failure, "eigendecomposition failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

inline RVec eigvalsh(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(hermitize(a), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::numerical_failure, "eigendecomposition failed");
  return es.eigenvalues();
}

inline double spectral_radius(const RVec& w) {
  return w.size() == 0 ? 0.0 : std::max(std::abs(w.minCoeff()), std::abs(w.maxCoeff()));
}

inline double lambda_min(const Mat& a) { return eigvalsh(a).minCoeff(); }
inline double lambda_max(const Mat& a) { return eigvalsh(a).maxCoeff(); }

// Groups of consecutive (ascending) eigenvalue indices; neighbours closer than
// rel * max(radius, floor) share a group.
inline std::vector<std::vector<int>> cluster_eigenvalues(const RVec& w, double rel, double floor = 1e-300) {
  std::vector<std::vector<int>> groups;
  const double scale = std::max(spectral_radius(w), floor);
  for (int i = 0; i < w.size(); ++i) {
    if (groups.empty() || w(i) - w(groups.back().back()) > rel * scale)
      groups.push_back({i});
    else
      groups.back().push_back(i);
  }
  return groups;
}

inline Mat apply_spectral(const Eigh& e, const std::function<double(double)>& f) {
  RVec fv(e.values.size());
  for (int i = 0; i < e.values.size(); ++i) fv(i) = f(e.values(i));
  return hermitize(e.vectors * fv.asDiagonal() * e.vectors.adjoint());
}

inline Mat matfun(const Mat& a, const std::function<double(double)>& f) { return apply_spectral(eigh(a), f); }

inline Mat positive_part(const Mat& a) {
  return matfun(a, [](double x) { return x > 0 ? x : 0.0; });
}

inline double trace_norm(const Mat& a) { return eigvalsh(a).cwiseAbs().sum(); }

inline double re_trace(const Mat& a) { return a.trace().real(); }

// Re Tr[a b] for Hermitian a, b without forming the product.
inline double inner(const Mat& a, const Mat& b) {
  return (a.transpose().array() * b.array()).sum().real();
}

inline Mat kron(const Mat& a, const Mat& b) {
  Mat r(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return r;
}

inline Mat identity(int d) { return Mat::Identity(d, d); }

inline bool is_psd(const Mat& a, double slack) { return lambda_min(a) >= -slack; }

// Projector onto the span of eigenvectors whose eigenvalue satisfies pred.
inline Mat spectral_projector(const Eigh& e, const std::function<bool(double)>& pred) {
  Mat p = Mat::Zero(e.vectors.rows(), e.vectors.rows());
  for (int i = 0; i < e.values.size(); ++i)
    if (pred(e.values(i))) p += e.vectors.col(i) * e.vectors.col(i).adjoint();
  return p;
}

// Orthonormal (Hilbert-Schmidt) basis of d x d Hermitian matrices.
inline std::vector<Mat> hermitian_basis(int d) {
  std::vector<Mat> basis;
  basis.reserve(static_cast<std::size_t>(d) * d);
  const double s = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < d; ++i) {
    Mat m = Mat::Zero(d, d);
    m(i, i) = 1.0;
    basis.push_back(m);
  }
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      Mat re = Mat::Zero(d, d), im = Mat::Zero(d, d);
      re(i, j) = re(j, i) = s;
      im(i, j) = cd(0, -s);
      im(j, i) = cd(0, s);
      basis.push_back(re);
      basis.push_back(im);
    }
  return basis;
}

// Coordinates of Hermitian h in hermitian_basis(d), same ordering.
inline RVec hermitian_coords(const Mat& h) {
  const int d = static_cast<int>(h.rows());
  RVec c(d * d);
  int k = 0;
  const double s = std::sqrt(2.0);
  for (int i = 0; i < d; ++i) c(k++) = h(i, i).real();
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      c(k++) = s * h(i, j).real();
      c(k++) = -s * h(i, j).imag();
    }
  return c;
}

inline Mat from_hermitian_coords(const RVec& c, int d) {
  Mat h = Mat::Zero(d, d);
  int k = 0;
  const double s = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < d; ++i) h(i, i) = c(k++);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double re = c(k++) * s, im = -c(k++) * s;
      h(i, j) = cd(re, im);
      h(j, i) = cd(re, -im);
    }
  return h;
}

// Minimiser of a unimodal f on [lo, hi]; the endpoints are compared as well.
inline double golden_section_min(const std::function<double(double)>& f, double lo, double hi, double tol) {
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - invphi * (b - a), d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
  }
  double best = 0.5 * (a + b), fb = f(best);
  for (double x : {lo, hi}) {
    const double fx = f(x);
    if (fx < fb) {
      fb = fx;
      best = x;
    }
  }
  return best;
}

}  // namespace qstein
