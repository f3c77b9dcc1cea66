#pragma once

// Characteristic roots of x'(t) = A x(t) + Ad x(t-h) from a Chebyshev
// collocation of the infinitesimal generator on [-h, 0]. Independent of the
// LMI machinery; used as ground truth for stability verdicts.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace aqm {

class OracleInconclusive : public std::runtime_error {
 public:
  OracleInconclusive() : std::runtime_error("oracle inconclusive") {}
};

template <typename Scalar>
struct SpectrumReport {
  std::vector<std::complex<Scalar>> roots;  // descending real part
  Scalar abscissa = 0;
  int order = 0;
  Scalar h = 0;
};

/// Chebyshev differentiation matrix on `nodes` Gauss-Lobatto points
/// x_j = cos(j pi / (nodes-1)), ordered from +1 to -1.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> chebyshev_differentiation(int nodes) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const int N = nodes - 1;
  Matrix D = Matrix::Zero(nodes, nodes);
  if (N == 0) return D;
  std::vector<Scalar> x(nodes), c(nodes);
  for (int j = 0; j <= N; ++j) {
    x[j] = std::cos(std::numbers::pi_v<Scalar> * Scalar(j) / Scalar(N));
    c[j] = ((j == 0 || j == N) ? Scalar(2) : Scalar(1)) * ((j % 2) ? Scalar(-1) : Scalar(1));
  }
  for (int i = 0; i <= N; ++i)
    for (int j = 0; j <= N; ++j)
      if (i != j) D(i, j) = (c[i] / c[j]) / (x[i] - x[j]);
  // negative-sum trick keeps rows summing to zero
  for (int i = 0; i <= N; ++i) D(i, i) = -D.row(i).sum();
  return D;
}

template <typename Derived1, typename Derived2>
SpectrumReport<typename Derived1::Scalar> char_spectrum(const Eigen::MatrixBase<Derived1>& A,
                                                        const Eigen::MatrixBase<Derived2>& Ad,
                                                        typename Derived1::Scalar h, int order) {
  using Scalar = typename Derived1::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const auto n = A.rows();
  if (A.cols() != n || Ad.rows() != n || Ad.cols() != n) throw std::invalid_argument("char_spectrum: dimension mismatch");
  if (!(h >= 0)) throw std::invalid_argument("char_spectrum: delay must be nonnegative");
  if (order < 8) throw std::invalid_argument("char_spectrum: order must be >= 8");

  Matrix generator;
  if (h == 0) {
    generator = A + Ad;
  } else {
    const Matrix D = chebyshev_differentiation<Scalar>(order) * (Scalar(2) / h);
    generator = Matrix::Zero(n * order, n * order);
    for (int i = 1; i < order; ++i)
      for (int j = 0; j < order; ++j)
        generator.block(i * n, j * n, n, n) = D(i, j) * Matrix::Identity(n, n);
    generator.block(0, 0, n, n) = A;
    generator.block(0, (order - 1) * n, n, n) += Ad;
  }

  Eigen::EigenSolver<Matrix> es(generator, false);
  if (es.info() != Eigen::Success) throw OracleInconclusive();
  SpectrumReport<Scalar> rep;
  rep.order = order;
  rep.h = h;
  const auto ev = es.eigenvalues();
  rep.roots.assign(ev.data(), ev.data() + ev.size());
  std::sort(rep.roots.begin(), rep.roots.end(),
            [](const auto& a, const auto& b) { return a.real() > b.real(); });
  rep.abscissa = rep.roots.front().real();
  return rep;
}

struct OracleOptions {
  double margin = 1e-6;
  int initial_order = 16;
  int max_order = 256;
  double convergence = 1e-8;
  double match = 1e-6;  // relative distance for a root to count as persistent
};

/// Largest real part among roots of `fine` that reappear in `coarse`.
/// Genuine characteristic roots converge spectrally under refinement;
/// spurious collocation modes (notably for long delays) drift and are dropped.
template <typename Scalar>
std::optional<double> persistent_abscissa(const SpectrumReport<Scalar>& coarse, const SpectrumReport<Scalar>& fine,
                                          double match_tol) {
  std::optional<double> best;
  for (const auto& r : fine.roots) {
    if (best && static_cast<double>(r.real()) <= *best) break;  // sorted by real part
    for (const auto& c : coarse.roots)
      if (std::abs(r - c) <= match_tol * (Scalar(1) + std::abs(r))) {
        best = static_cast<double>(r.real());
        break;
      }
  }
  return best;
}

/// Spectral abscissa with order doubling until two successive orders agree.
template <typename Derived1, typename Derived2>
double converged_abscissa(const Eigen::MatrixBase<Derived1>& A, const Eigen::MatrixBase<Derived2>& Ad, double h,
                          const OracleOptions& opt = {}) {
  // without a delayed term the delay is irrelevant; long delays would only
  // stress the collocation
  if (h == 0 || Ad.isZero(0)) return static_cast<double>(char_spectrum(A, Ad, 0.0, 8).abscissa);
  std::optional<SpectrumReport<typename Derived1::Scalar>> previous;
  std::optional<double> last;
  for (int order = opt.initial_order; order <= opt.max_order; order *= 2) {
    auto rep = char_spectrum(A, Ad, typename Derived1::Scalar(h), order);
    if (previous) {
      const auto a = persistent_abscissa(*previous, rep, opt.match);
      if (a && last && std::abs(*a - *last) < opt.convergence) return *a;
      last = a;
    }
    previous = std::move(rep);
  }
  throw OracleInconclusive();
}

template <typename Derived1, typename Derived2>
bool is_stable(const Eigen::MatrixBase<Derived1>& A, const Eigen::MatrixBase<Derived2>& Ad, double h,
               const OracleOptions& opt = {}) {
  return converged_abscissa(A, Ad, h, opt) < -opt.margin;
}

/// Smallest destabilizing delay inside [lo, hi], to `tol` seconds.
template <typename Derived1, typename Derived2>
double critical_delay(const Eigen::MatrixBase<Derived1>& A, const Eigen::MatrixBase<Derived2>& Ad, double lo,
                      double hi, double tol = 1e-4, const OracleOptions& opt = {}) {
  if (!(lo >= 0) || !(hi > lo)) throw std::invalid_argument("critical_delay: bracket invalid");
  if (!is_stable(A, Ad, lo, opt) || is_stable(A, Ad, hi, opt))
    throw std::invalid_argument("critical_delay: bracket invalid");
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (is_stable(A, Ad, mid, opt) ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace aqm
