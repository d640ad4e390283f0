#pragma once

#include <random>
#include <vector>

#include "qstein/qcore.hpp"

namespace qstein {

using Rng = std::mt19937_64;

inline Mat ginibre(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat g(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) {
      const double re = n(rng);
      const double im = n(rng);
      g(i, j) = cd(re, im);
    }
  return g;
}

// Haar-distributed unitary (QR with phase correction).
inline Mat random_unitary(int d, Rng& rng) {
  const Mat g = ginibre(d, d, rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(d, d);
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < d; ++i) {
    const cd ph = r(i, i) / std::abs(r(i, i));
    q.col(i) *= ph;
  }
  return q;
}

// rank = 0 means full rank.
inline DensityOperator random_state(const DimLayout& l, Rng& rng, int rank = 0) {
  const int d = l.total();
  const Mat g = ginibre(d, rank > 0 ? rank : d, rng);
  const Mat m = g * g.adjoint();
  return DensityOperator::normalized(m, l);
}

inline DensityOperator random_state(int d, Rng& rng, int rank = 0) { return random_state(DimLayout::single(d), rng, rank); }

inline DensityOperator random_pure(const DimLayout& l, Rng& rng) { return random_state(l, rng, 1); }

// Random channel from a Haar isometry into out (x) environment.
inline QuantumChannel random_channel(const DimLayout& in, const DimLayout& out, Rng& rng, int kraus_rank = 2) {
  const int di = in.total(), dout = out.total();
  const Mat u = random_unitary(dout * kraus_rank, rng);
  const Mat v = u.leftCols(di);  // isometry in -> out (x) env
  std::vector<Mat> kraus;
  for (int e = 0; e < kraus_rank; ++e) {
    Mat k(dout, di);
    for (int o = 0; o < dout; ++o) k.row(o) = v.row(o * kraus_rank + e);
    kraus.push_back(k);
  }
  return QuantumChannel::from_kraus(kraus, in, out);
}

inline std::vector<double> random_simplex(int k, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> w(static_cast<std::size_t>(k));
  double s = 0;
  for (auto& x : w) s += (x = e(rng));
  for (auto& x : w) x /= s;
  return w;
}

}  // namespace qstein
