#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>
#include <numbers>
#include <random>

#include "aqm/model.hpp"
#include "aqm/stability.hpp"

using namespace aqm;
using Eigen::MatrixXd;
using cd = std::complex<double>;

namespace {

MatrixXd s(double v) { return MatrixXd::Constant(1, 1, v); }

// Newton on f(l) = l - a - ad exp(-l h) from a grid of starting points in the
// upper half plane; returns the largest real part among converged roots.
double scalar_rightmost_root(double a, double ad, double h) {
  double best = -1e300;
  for (double re = -3; re <= 3; re += 0.5)
    for (double im = 0; im <= 12; im += 0.5) {
      cd l(re, im);
      bool ok = false;
      for (int it = 0; it < 100; ++it) {
        const cd e = std::exp(-l * h);
        const cd f = l - a - ad * e;
        const cd df = 1.0 + ad * h * e;
        const cd step = f / df;
        l -= step;
        if (std::abs(step) < 1e-14 * (1 + std::abs(l))) {
          ok = std::abs(l - a - ad * std::exp(-l * h)) < 1e-10;
          break;
        }
      }
      if (ok) best = std::max(best, l.real());
    }
  return best;
}

// Smallest h where a root of l = a + ad exp(-l h) reaches the imaginary axis:
// |i w - a| = |ad| gives w, the argument condition gives h.
double scalar_crossing(double a, double ad) {
  const double w = std::sqrt(ad * ad - a * a);
  // exp(-i w h) = (i w - a) / ad
  const double phase = std::arg(cd(-a, w) / ad);
  double h = -phase / w;
  while (h <= 0) h += 2 * std::numbers::pi / w;
  return h;
}

}  // namespace

TEST_CASE("delay-free scalar system") {
  for (double h : {0.0, 0.3, 2.0}) {
    const auto rep = char_spectrum(s(-2), s(0), h, 32);
    CHECK(rep.abscissa == doctest::Approx(-2).epsilon(1e-9));
    CHECK(rep.roots.front().real() == rep.abscissa);
  }
}

TEST_CASE("roots sorted by descending real part") {
  const auto rep = char_spectrum(s(0), s(-1), 1.0, 24);
  for (std::size_t i = 1; i < rep.roots.size(); ++i) CHECK(rep.roots[i - 1].real() >= rep.roots[i].real());
  CHECK(rep.order == 24);
  CHECK(rep.h == 1.0);
}

TEST_CASE("boundary of x' = -x(t-h)") {
  CHECK(converged_abscissa(s(0), s(-1), 1.5) < 0);
  CHECK(converged_abscissa(s(0), s(-1), 1.6) > 0);
  CHECK_FALSE(is_stable(s(0), s(-1), 1.6));
  const double h = critical_delay(s(0), s(-1), 1.0, 2.0);
  CHECK(std::abs(h - std::numbers::pi / 2) <= 1e-3);
}

TEST_CASE("h = 0 reduces to A + Ad") {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < 20; ++i) {
    const MatrixXd A = MatrixXd::NullaryExpr(3, 3, [&] { return u(rng); });
    const MatrixXd Ad = MatrixXd::NullaryExpr(3, 3, [&] { return u(rng); });
    const auto rep = char_spectrum(A, Ad, 0.0, 8);
    const Eigen::VectorXcd ev = Eigen::EigenSolver<MatrixXd>(A + Ad).eigenvalues();
    REQUIRE(rep.roots.size() == 3);
    for (int k = 0; k < 3; ++k) {
      double nearest = 1e300;
      for (const auto& r : rep.roots) nearest = std::min(nearest, std::abs(r - ev(k)));
      CHECK(nearest <= 1e-9);
    }
  }
}

TEST_CASE("crossing of x' = -x - 2 x(t-h) against direct root finding") {
  // |a_d| > |a|, so a finite crossing exists: w = sqrt(3), h* = 2 pi / (3 sqrt 3)
  const double exact = 2 * std::numbers::pi / (3 * std::sqrt(3.0));
  CHECK(scalar_crossing(-1, -2) == doctest::Approx(exact).epsilon(1e-12));
  CHECK(scalar_rightmost_root(-1, -2, exact - 0.01) < 0);
  CHECK(scalar_rightmost_root(-1, -2, exact + 0.01) > 0);
  const double h = critical_delay(s(-1), s(-2), 0.5, 2.0);
  CHECK(std::abs(h - exact) <= 1e-3);
}

TEST_CASE("oracle abscissa agrees with Newton roots of scalar equations") {
  const double cases[][3] = {{0, -1, 1.0}, {-1, -2, 0.5}, {-1, -2, 1.5}, {-2, 1, 3.0}, {0.5, -1, 0.5}};
  for (const auto& c : cases) {
    const double a = converged_abscissa(s(c[0]), s(c[1]), c[2]);
    CHECK(a == doctest::Approx(scalar_rightmost_root(c[0], c[1], c[2])).epsilon(1e-6));
  }
}

TEST_CASE("x' = -2x + x(t-h) is stable for every delay") {
  for (double h : {0.1, 1.0, 10.0}) CHECK(is_stable(s(-2), s(1), h));
  CHECK_THROWS_AS(critical_delay(s(-2), s(1), 0.1, 10.0), std::invalid_argument);
}

TEST_CASE("open-loop reference network is stable at sampled delays") {
  const NetworkParams p{60, 3750, 0.2, 175, 800};
  const auto m = linearize<double>(p, equilibrium(p));
  for (double h : {0.1, 0.246, 1.0, 5.0}) CHECK(is_stable(m.A, m.Ad, h));
  CHECK(converged_abscissa(m.A, m.Ad, equilibrium(p).rtt) < 0);
}

TEST_CASE("Hurwitz A without delayed term is stable for any delay") {
  MatrixXd A(2, 2);
  A << -1, 5, 0, -3;
  for (double h : {0.01, 1.0, 50.0}) CHECK(is_stable(A, MatrixXd::Zero(2, 2), h));
}

TEST_CASE("refinement converges on the fixtures") {
  for (double h : {0.5, 1.5, 1.6}) {
    const double a64 = char_spectrum(s(0), s(-1), h, 64).abscissa;
    const double a128 = char_spectrum(s(0), s(-1), h, 128).abscissa;
    CHECK(std::abs(a64 - a128) < 1e-6);
  }
}

TEST_CASE("errors") {
  OracleOptions tight;
  tight.initial_order = 16;
  tight.max_order = 16;
  CHECK_THROWS_AS(converged_abscissa(s(0), s(-1), 1.0, tight), OracleInconclusive);
  CHECK_THROWS_WITH(converged_abscissa(s(0), s(-1), 1.0, tight), "oracle inconclusive");
  CHECK_THROWS_AS(critical_delay(s(0), s(-1), 1.6, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(critical_delay(s(0), s(-1), 2.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(char_spectrum(s(0), s(-1), -1.0, 16), std::invalid_argument);
  CHECK_THROWS_AS(char_spectrum(s(0), s(-1), 1.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(char_spectrum(s(0), MatrixXd::Zero(2, 2), 1.0, 16), std::invalid_argument);
}
