#pragma once

// Reference implementations used only by the tests. They are written as plainly as possible
// (nested loops, no shared helpers with the library) so they can serve as independent checks.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "stkd/tensor.hpp"

namespace oracle {

inline stkd::Tensor random_tensor(int b, int t, int n, int c, std::mt19937_64& rng, double scale = 1.0) {
  stkd::Tensor x(b, t, n, c);
  std::normal_distribution<double> nd(0.0, scale);
  for (double& v : x.values()) v = nd(rng);
  return x;
}

inline stkd::RowMatrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  stkd::RowMatrix m(rows, cols);
  std::normal_distribution<double> nd(0.0, scale);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

// TCD[b][n][i][j] = (1/C) sum_c |F[b,i,n,c] - F[b,j,n,c]|
inline std::vector<double> tcd_brute(const stkd::Tensor& f) {
  const int B = f.batch(), T = f.time(), N = f.nodes(), C = f.channels();
  std::vector<double> out(static_cast<std::size_t>(B) * N * T * T, 0.0);
  for (int b = 0; b < B; ++b)
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < T; ++i)
        for (int j = 0; j < T; ++j) {
          double s = 0.0;
          for (int c = 0; c < C; ++c) s += std::fabs(f(b, i, n, c) - f(b, j, n, c));
          out[((static_cast<std::size_t>(b) * N + n) * T + i) * T + j] = s / C;
        }
  return out;
}

// SCD[b][t][i][j] = (1/C) sum_c |F[b,t,i,c] - F[b,t,j,c]|
inline std::vector<double> scd_brute(const stkd::Tensor& f) {
  const int B = f.batch(), T = f.time(), N = f.nodes(), C = f.channels();
  std::vector<double> out(static_cast<std::size_t>(B) * T * N * N, 0.0);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
          double s = 0.0;
          for (int c = 0; c < C; ++c) s += std::fabs(f(b, t, i, c) - f(b, t, j, c));
          out[((static_cast<std::size_t>(b) * T + t) * N + i) * N + j] = s / C;
        }
  return out;
}

// Mean over b, n and i<j of |TCD_s - TCD_t| for one tap pair.
inline double tcd_loss_brute(const stkd::Tensor& s, const stkd::Tensor& t) {
  const auto a = tcd_brute(s), b = tcd_brute(t);
  const int B = s.batch(), T = s.time(), N = s.nodes();
  double sum = 0.0;
  int count = 0;
  for (int bb = 0; bb < B; ++bb)
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < T; ++i)
        for (int j = i + 1; j < T; ++j) {
          const std::size_t k = ((static_cast<std::size_t>(bb) * N + n) * T + i) * T + j;
          sum += std::fabs(a[k] - b[k]);
          ++count;
        }
  return count ? sum / count : 0.0;
}

inline double scd_loss_brute(const stkd::Tensor& s, const stkd::Tensor& t) {
  const auto a = scd_brute(s), b = scd_brute(t);
  const int B = s.batch(), T = s.time(), N = s.nodes();
  double sum = 0.0;
  int count = 0;
  for (int bb = 0; bb < B; ++bb)
    for (int tt = 0; tt < T; ++tt)
      for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j) {
          const std::size_t k = ((static_cast<std::size_t>(bb) * T + tt) * N + i) * N + j;
          sum += std::fabs(a[k] - b[k]);
          ++count;
        }
  return count ? sum / count : 0.0;
}

// Routing by hand: |y_t - T| min-max normalized per row, teacher when strictly above alpha1.
inline int routed_brute(const stkd::RowMatrix& yt, const stkd::RowMatrix& target, double alpha1) {
  int routed = 0;
  for (int b = 0; b < yt.rows(); ++b) {
    double lo = 1e300, hi = -1e300;
    for (int n = 0; n < yt.cols(); ++n) {
      const double d = std::fabs(yt(b, n) - target(b, n));
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    if (hi == lo) continue;
    for (int n = 0; n < yt.cols(); ++n) {
      const double d = (std::fabs(yt(b, n) - target(b, n)) - lo) / (hi - lo);
      if (d > alpha1) ++routed;
    }
  }
  return routed;
}

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

// Central difference of f with respect to x[i], restoring x[i] afterwards.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * h);
}

// Parameter count of the two-block network enumerated tensor by tensor.
struct Layout {
  int c[2][3];  // per block: c_in, c_mid, c_out
  int kt, ks, n, m;
};

inline long long count_params(const Layout& l) {
  long long total = 0;
  for (int b = 0; b < 2; ++b) {
    const int ci = l.c[b][0], cm = l.c[b][1], co = l.c[b][2];
    total += static_cast<long long>(l.kt) * ci * 2 * cm + 2 * cm;  // gated temporal conv
    if (ci > cm) total += static_cast<long long>(ci) * cm;           // residual projection
    total += static_cast<long long>(l.ks) * cm * cm + cm;            // Chebyshev filter
    total += static_cast<long long>(l.kt) * cm * co + co;            // second temporal conv
    if (cm > co) total += static_cast<long long>(cm) * co;
    total += 2LL * l.n * co;                                         // layer norm
  }
  const int c = l.c[1][2];
  const int ko = l.m - 4 * (l.kt - 1);
  total += static_cast<long long>(ko) * c * 2 * c + 2 * c;  // output gated conv
  total += 2LL * l.n * c;                                   // output layer norm
  total += static_cast<long long>(c) * c + c;               // 1x1 sigmoid conv
  total += c + l.n;                                         // node projection
  return total;
}

}  // namespace oracle
