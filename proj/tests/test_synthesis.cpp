#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numbers>
#include <random>

#include "aqm/stability.hpp"
#include "aqm/synthesis.hpp"

using namespace aqm;
using Eigen::MatrixXd;

namespace {

NetworkParams reference_network() { return NetworkParams{60, 3750, 0.2, 175, 800}; }

LinearModeld scalar(double a, double ad, double b = 0) {
  LinearModeld m;
  m.A = MatrixXd::Constant(1, 1, a);
  m.Ad = MatrixXd::Constant(1, 1, ad);
  m.B = MatrixXd::Constant(1, 1, b);
  return m;
}

LinearModeld nominal() { return linearize<double>(reference_network(), equilibrium(reference_network())); }

bool oracle_stable(const LinearModeld& m, const Gain& K, double h) {
  return converged_abscissa(m.A, MatrixXd(m.Ad + m.B * K.matrix()), h) < 0;
}

double inf_norm(const MatrixXd& M) { return M.cwiseAbs().rowwise().sum().maxCoeff(); }

}  // namespace

TEST_CASE("Gamma for r = 1") {
  const MatrixXd one = MatrixXd::Ones(1, 1);
  const MatrixXd G = build_gamma<double>(one, one, one, 1.0, 1, 1);
  MatrixXd expected(3, 3);
  expected << 1, 1, 0, 1, 0, 1, 0, 1, -2;
  CHECK((G - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("Gamma for r = 2 without Q") {
  const MatrixXd one = MatrixXd::Ones(1, 1);
  const MatrixXd G = build_gamma<double>(one, MatrixXd::Zero(2, 2), one, 2.0, 2, 1);
  MatrixXd expected(4, 4);
  expected << 1, 1, 0, 0, 1, -1, 1, 0, 0, 1, -1, 0, 0, 0, 0, 0;
  CHECK((G - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("Gamma is symmetric with order (r+2)n") {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int r = 1; r <= 3; ++r) {
    const int n = 2;
    MatrixXd P = MatrixXd::NullaryExpr(n, n, [&] { return u(rng); });
    MatrixXd Q = MatrixXd::NullaryExpr(r * n, r * n, [&] { return u(rng); });
    MatrixXd R = MatrixXd::NullaryExpr(n, n, [&] { return u(rng); });
    P = P + P.transpose().eval();
    Q = Q + Q.transpose().eval();
    R = R + R.transpose().eval();
    const MatrixXd G = build_gamma<double>(P, Q, R, 0.7, r, n);
    CHECK(G.rows() == (r + 2) * n);
    CHECK((G - G.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK_THROWS_AS(build_gamma<double>(MatrixXd::Ones(1, 1), MatrixXd::Ones(2, 2), MatrixXd::Ones(1, 1), 1.0, 1, 1),
                  sdp::DimensionMismatch);
  CHECK_THROWS_AS(build_gamma<double>(MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), 0.0, 1, 1),
                  std::invalid_argument);
}

TEST_CASE("S layout") {
  const auto m = scalar(2, 3);
  const MatrixXd K = MatrixXd::Zero(1, 1);
  MatrixXd S1 = build_S(m, K, 1), S2 = build_S(m, K, 2);
  CHECK(S1.cols() == 3);
  CHECK(S1(0, 0) == -1);
  CHECK(S1(0, 1) == 2);
  CHECK(S1(0, 2) == 3);
  CHECK(S2.cols() == 4);
  CHECK(S2(0, 2) == 0);
  CHECK(S2(0, 3) == 3);

  const auto nom = nominal();
  const Gain Ka = iod_analytic_gain(reference_network(), equilibrium(reference_network()));
  const MatrixXd S = build_S(nom, Ka.matrix(), 1);
  CHECK(S.rightCols(2).cwiseAbs().maxCoeff() <= 1e-12 * nom.Ad.cwiseAbs().maxCoeff());
}

TEST_CASE("scalar IOD analysis") {
  CHECK(iod_analysis(scalar(-2, 0.5), Gain::zero(1)));
  CHECK_FALSE(iod_analysis(scalar(1, -0.5), Gain::zero(1)));
  // witness P = Q = 1
  MatrixXd W(2, 2);
  W << -3, 0.5, 0.5, -1;
  CHECK(sdp::max_eig(W) < 0);
}

TEST_CASE("open-loop IOD analysis of the reference network") {
  const auto cert = iod_analysis(nominal(), Gain::zero(2));
  REQUIRE(cert);
  CHECK(sdp::min_eig(cert->P) > 0);
  CHECK(sdp::min_eig(cert->Q) > 0);
}

TEST_CASE("nominal IOD synthesis re-certifies") {
  const auto syn = iod_synthesize(nominal());
  REQUIRE(syn);
  CHECK(iod_analysis(nominal(), syn->gain));
  CHECK(syn->certificates.size() == 1);
}

TEST_CASE("IOD synthesis without actuation returns a zero gain") {
  auto m = scalar(-2, 0.5, 0);
  const auto syn = iod_synthesize(m);
  REQUIRE(syn);
  CHECK(syn->gain.k.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("scalar IOD synthesis lands inside the feasible gain region") {
  // a = -2, ad = 0, b = 1: IOD stable iff |K| < 2
  const auto syn = iod_synthesize(scalar(-2, 0, 1));
  REQUIRE(syn);
  CHECK(std::abs(syn->gain.k(0)) < 2);
  CHECK(iod_analysis(scalar(-2, 0, 1), syn->gain));
}

TEST_CASE("robust IOD synthesis and published gains") {
  const std::pair<std::pair<double, double>, Gain> rows[] = {{{0.1, 0.4}, Gain(-0.3709e-3, 0.0062e-3)},
                                                             {{0.15, 0.83}, Gain(-0.4729e-4, 0.0079e-4)}};
  for (const auto& [interval, published] : rows) {
    const auto poly = build_polytope(reference_network(), interval.first, interval.second);
    const auto syn = iod_synthesize_robust(poly);
    REQUIRE(syn);
    CHECK(syn->certificates.size() == 8);
    for (const auto& v : iod_analysis_per_vertex(poly.vertices, syn->gain)) CHECK(v);
    for (const auto& v : iod_analysis_per_vertex(poly.vertices, published)) CHECK(v);
  }
}

TEST_CASE("degenerate robust synthesis agrees with nominal") {
  const double R0 = equilibrium(reference_network()).rtt;
  const auto poly = build_polytope(reference_network(), R0, R0);
  CHECK(static_cast<bool>(iod_synthesize_robust(poly)) == static_cast<bool>(iod_synthesize(nominal())));
}

TEST_CASE("analytic gain of the reference network") {
  const auto K = iod_analytic_gain(reference_network(), equilibrium_at_rtt(reference_network(), 0.246));
  CHECK(K.k1() == doctest::Approx(-5.503e-4).epsilon(1e-3));
  CHECK(K.k2() == doctest::Approx(9.171e-6).epsilon(1e-3));
}

TEST_CASE("analytic gain cancels the delayed term") {
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> N(1, 200), C(100, 1e5), Tp(0.001, 1), q(0, 500);
  int done = 0;
  while (done < 50) {
    NetworkParams p{N(rng), C(rng), Tp(rng), q(rng), 0};
    p.buffer = p.target_queue + 1;
    Equilibrium eq;
    try {
      eq = equilibrium(p);
    } catch (const InfeasibleOperatingPoint&) {
      continue;
    }
    ++done;
    const auto m = linearize<double>(p, eq);
    const Gain K = iod_analytic_gain(p, eq);
    CHECK(inf_norm(m.Ad + m.B * K.matrix()) <= 1e-10 * inf_norm(m.Ad));
  }
}

TEST_CASE("analytic gain certifies IOD when A is Hurwitz") {
  const auto eq = equilibrium(reference_network());
  CHECK(iod_analysis(nominal(), iod_analytic_gain(reference_network(), eq)));
}

TEST_CASE("DD analysis of the cancelled closed loop") {
  const auto m = nominal();
  const Gain K = iod_analytic_gain(reference_network(), equilibrium(reference_network()));
  const LinearModeld ms[] = {m};
  const auto cert = dd_analysis_step(ms, K, 1, 0.5);
  REQUIRE(cert);
  CHECK(cert->X.rows() == 6);
  CHECK(cert->X.cols() == 2);
  CHECK(sdp::min_eig(cert->P) > 0);
  CHECK(sdp::min_eig(cert->Q) > 0);
  CHECK(sdp::min_eig(cert->R) > 0);
  // re-assemble the analysis LMI at the returned certificate
  const MatrixXd S = build_S(m, K.matrix(), 1);
  const MatrixXd XS = cert->X * S;
  const MatrixXd L = build_gamma<double>(cert->P, cert->Q, cert->R, 0.5, 1, 2) + XS + XS.transpose();
  CHECK(sdp::max_eig(L) < 0);
}

TEST_CASE("scalar DD analysis around the delay boundary") {
  const LinearModeld ms[] = {scalar(0, -1)};
  CHECK(dd_analysis_step(ms, Gain::zero(1), 1, 1.4));
  CHECK_FALSE(dd_analysis_step(ms, Gain::zero(1), 1, 1.6));
  CHECK(oracle_stable(ms[0], Gain::zero(1), 1.4));
  CHECK_FALSE(oracle_stable(ms[0], Gain::zero(1), 1.6));
}

TEST_CASE("DD synthesis from an analysis slack") {
  const auto m = nominal();
  const LinearModeld ms[] = {m};
  const Gain K0 = iod_analytic_gain(reference_network(), equilibrium(reference_network()));
  const auto cert = dd_analysis_step(ms, K0, 1, 0.3);
  REQUIRE(cert);
  const auto syn = dd_synthesis_step(ms, cert->X, 1, 0.3);
  REQUIRE(syn);
  CHECK(syn->certificate.h == doctest::Approx(0.3));
  CHECK(dd_analysis_step(ms, syn->gain, 1, 0.3));
}

TEST_CASE("DD synthesis with zero slack has no certificate") {
  const LinearModeld ms[] = {nominal()};
  CHECK_FALSE(dd_synthesis_step(ms, MatrixXd::Zero(6, 2), 1, 0.3));
  const LinearModeld sc[] = {scalar(-1, 0, 1)};
  CHECK_FALSE(dd_synthesis_step(sc, MatrixXd::Zero(3, 1), 1, 0.5));
}

TEST_CASE("maximal delay with a cancelling gain reaches the bracket end") {
  const LinearModeld ms[] = {nominal()};
  const Gain K = iod_analytic_gain(reference_network(), equilibrium(reference_network()));
  const auto h = dd_max_delay(ms, K, 1);
  REQUIRE(h);
  CHECK(h->h >= 5.0 - 1e-3);
}

TEST_CASE("maximal delay of the scalar delay equation stays below pi/2") {
  const LinearModeld ms[] = {scalar(0, -1)};
  const DelaySearch search;
  const auto h = dd_max_delay(ms, Gain::zero(1), 1, search);
  REQUIRE(h);
  CHECK(h->h <= std::numbers::pi / 2);
  CHECK(h->h >= 1.4);
  // bisection soundness
  CHECK(dd_analysis_step(ms, Gain::zero(1), 1, h->h));
  CHECK_FALSE(dd_analysis_step(ms, Gain::zero(1), 1, h->h + 2 * search.tol));
  const auto h2 = dd_max_delay(ms, Gain::zero(1), 2, search);
  REQUIRE(h2);
  CHECK(h2->h >= h->h - search.tol);
  CHECK(h2->h <= std::numbers::pi / 2);
}

TEST_CASE("maximal delay is none when the lower bracket fails") {
  const LinearModeld ms[] = {scalar(1, 0)};
  CHECK_FALSE(dd_max_delay(ms, Gain::zero(1), 1));
}

TEST_CASE("relaxation never regresses") {
  const LinearModeld ms[] = {nominal()};
  const Gain K0 = iod_analytic_gain(reference_network(), equilibrium(reference_network()));
  RelaxationOptions opt;
  opt.max_iterations = 4;
  const auto rep = dd_relaxation(ms, K0, 0.1, 1, opt);
  double last = rep.h0;
  for (const auto& it : rep.iterations) {
    CHECK(it.h_synthesis >= last - 1e-12);
    CHECK(it.h_analysis >= it.h_synthesis - 1e-12);
    last = it.h_analysis;
  }
  CHECK(rep.h_m >= rep.h0);
  CHECK(dd_analysis_step(ms, rep.gain, 1, rep.h_m));
}

TEST_CASE("relaxation without a starting point") {
  const LinearModeld ms[] = {scalar(1, 0, 0)};
  CHECK_THROWS_AS(dd_relaxation(ms, Gain::zero(1), 0.05, 1), NoStartingPoint);
}

TEST_CASE("certified delays are stable according to the oracle") {
  // 20 cases: scalar equations, the nominal loop with published gains, and
  // polytope vertices
  struct Case {
    LinearModeld m;
    Gain K;
    double h;
  };
  std::vector<Case> cases;
  for (double h : {0.2, 0.6, 1.0, 1.3}) cases.push_back({scalar(0, -1), Gain::zero(1), h});
  for (double h : {0.2, 1.0}) cases.push_back({scalar(-1, -2), Gain::zero(1), h});
  for (double h : {0.5, 3.0}) cases.push_back({scalar(-3, 1), Gain::zero(1), h});
  const Gain published[] = {Gain(-0.589e-3, 0.0244e-3), Gain(-0.575e-3, 0.0240e-3)};
  for (const auto& K : published)
    for (double h : {0.1, 0.25, 0.3}) cases.push_back({nominal(), K, h});
  const auto poly = build_polytope(reference_network(), 0.1, 0.45);
  for (int v : {0, 3, 5, 7})
    for (double h : {0.2}) cases.push_back({poly.vertices[v], published[0], h});
  for (double h : {0.4, 2.0}) cases.push_back({nominal(), Gain::zero(2), h});
  REQUIRE(cases.size() == 20);
  int certified = 0;
  for (const auto& c : cases) {
    const LinearModeld ms[] = {c.m};
    if (!dd_analysis_step(ms, c.K, 1, c.h)) continue;
    ++certified;
    CHECK(oracle_stable(c.m, c.K, c.h));
  }
  CHECK(certified >= 10);
}
