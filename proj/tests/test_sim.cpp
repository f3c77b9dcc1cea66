#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "aqm/sim.hpp"
#include "aqm/stability.hpp"

using namespace aqm;
using namespace aqm::sim;

namespace {

NetworkParams reference_network() { return NetworkParams{60, 3750, 0.2, 175, 800}; }

const Gain kDdGain(-0.589e-3, 0.0244e-3);

double max_abs_dev(const std::vector<double>& v, double ref, std::size_t from = 0, std::size_t to = SIZE_MAX) {
  double m = 0;
  for (std::size_t i = from; i < std::min(to, v.size()); ++i) m = std::max(m, std::abs(v[i] - ref));
  return m;
}

SimTrace synthetic(double q0, double horizon, double dt, auto&& q_of_t) {
  SimTrace tr;
  tr.dt = dt;
  const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
  for (std::size_t i = 0; i <= steps; ++i) {
    const double t = i * dt;
    tr.t.push_back(t);
    tr.q.push_back(q_of_t(t));
    tr.W.push_back(1);
    tr.p.push_back(0);
    tr.R.push_back(0.2);
  }
  (void)q0;
  return tr;
}

void check_clamps(const SimTrace& tr, double buffer) {
  for (std::size_t i = 0; i < tr.size(); ++i) {
    REQUIRE(tr.q[i] >= 0);
    REQUIRE(tr.q[i] <= buffer);
    REQUIRE(tr.W[i] >= 1);
    REQUIRE(tr.p[i] >= 0);
    REQUIRE(tr.p[i] <= 1);
    if (i) REQUIRE(tr.t[i] > tr.t[i - 1]);
  }
}

}  // namespace

TEST_CASE("equilibrium is a fixed point of the nonlinear model") {
  const auto p = reference_network();
  const auto eq = equilibrium(p);
  Scenario sc;
  sc.horizon = 60;
  const Controller controllers[] = {StateFeedback{kDdGain}, ConstantDrop{eq.drop_prob}};
  for (const auto& c : controllers) {
    const auto tr = simulate_nonlinear(p, c, sc, {}, InitialState::at_equilibrium(p));
    CHECK(max_abs_dev(tr.q, p.target_queue) <= 0.5);
  }
}

TEST_CASE("zero deviation is a fixed point of the linear model") {
  const auto p = reference_network();
  const auto eq = equilibrium(p);
  const auto m = linearize<double>(p, eq);
  Scenario sc;
  sc.horizon = 60;
  const auto tr = simulate_linear(m, kDdGain, eq.rtt, p, eq, sc);
  CHECK(max_abs_dev(tr.q, p.target_queue) <= 1e-9);
  CHECK(max_abs_dev(tr.W, eq.window) <= 1e-9);
}

TEST_CASE("clamps hold on every step") {
  const auto p = reference_network();
  Scenario sc;
  sc.horizon = 40;
  sc.disturbances.push_back(CrossTraffic{0.5 * p.capacity, 10, 30});
  const auto pi = simulate_nonlinear(p, PiController{}, sc, {}, InitialState{1, 0, 0});
  check_clamps(pi, p.buffer);
  CHECK(*std::max_element(pi.q.begin(), pi.q.end()) == doctest::Approx(p.buffer));
  const auto sf = simulate_nonlinear(p, StateFeedback{kDdGain}, sc, {}, InitialState{1, 0, 0});
  check_clamps(sf, p.buffer);
}

TEST_CASE("PI output is held between sampling instants") {
  const auto p = reference_network();
  Scenario sc;
  sc.horizon = 5;
  const PiController pi;
  const auto tr = simulate_nonlinear(p, pi, sc, {}, InitialState{1, 0, 0});
  int changes = 0;
  for (std::size_t i = 1; i < tr.size(); ++i) {
    if (tr.p[i] == tr.p[i - 1]) continue;
    ++changes;
    // a sampling instant k/fs falls in (t[i-1], t[i]]
    const double k = std::ceil(tr.t[i - 1] * pi.fs + 1e-9);
    CHECK(k / pi.fs <= tr.t[i] + 1e-9);
  }
  CHECK(changes > 0);
  CHECK(changes <= static_cast<int>(sc.horizon * pi.fs) + 1);
}

TEST_CASE("settling time of a synthetic exponential") {
  const double q0 = 175;
  const auto tr = synthetic(q0, 20, 1e-3, [&](double t) { return q0 + 100 * std::exp(-t); });
  const auto m = compute_metrics(tr, q0);
  REQUIRE(m.settling_time);
  CHECK(*m.settling_time == doctest::Approx(std::log(100 / 8.75)).epsilon(1e-4));
  CHECK(*m.settling_time == doctest::Approx(2.436).epsilon(1e-3));
  CHECK(*m.overshoot == doctest::Approx(100));
  CHECK(*m.steady_state_error < 1e-6);
  CHECK_FALSE(m.recovery_time);

  const auto rec = compute_metrics(tr, q0, 1.0);
  REQUIRE(rec.recovery_time);
  CHECK(*rec.recovery_time == doctest::Approx(*m.settling_time - 1.0).epsilon(1e-6));
}

TEST_CASE("metrics of a constant trace") {
  const auto tr = synthetic(175, 10, 0.01, [](double) { return 175.0; });
  const auto m = compute_metrics(tr, 175);
  CHECK(*m.overshoot == 0);
  CHECK(*m.settling_time == 0);
  CHECK(*m.steady_state_error == 0);
}

TEST_CASE("a trace that never settles") {
  const auto tr = synthetic(175, 10, 0.01, [](double t) { return 175 + 50 * std::sin(t); });
  const auto m = compute_metrics(tr, 175);
  CHECK_FALSE(m.settling_time);
  CHECK(*m.steady_state_error > 0);
  const auto below = synthetic(175, 10, 0.01, [](double) { return 100.0; });
  CHECK(*compute_metrics(below, 175).overshoot == 0);
  CHECK_THROWS_AS(compute_metrics(SimTrace{}, 175), InvalidSimulation);
}

TEST_CASE("halving the step changes the queue by under half a packet") {
  const auto p = reference_network();
  Scenario sc;
  sc.horizon = 30;
  sc.disturbances.push_back(DelayStep{0.02, 15});
  SimOptions coarse, fine;
  coarse.dt = 1e-3;
  fine.dt = 5e-4;
  const auto a = simulate_nonlinear(p, StateFeedback{kDdGain}, sc, coarse, InitialState{1, 0, 0});
  const auto b = simulate_nonlinear(p, StateFeedback{kDdGain}, sc, fine, InitialState{1, 0, 0});
  REQUIRE(b.size() == 2 * a.size() - 1);
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.q[i] - b.q[2 * i]));
  CHECK(worst < 0.5);
}

TEST_CASE("linear and nonlinear models agree for small perturbations") {
  const auto p = reference_network();
  const auto eq = equilibrium(p);
  const auto m = linearize<double>(p, eq);
  Scenario sc;
  sc.horizon = 5;
  const double dW = 1, dq = 5;
  InitialState init{eq.window + dW, p.target_queue + dq, eq.drop_prob};
  init.p = eq.drop_prob + kDdGain.k1() * dW + kDdGain.k2() * dq;
  const auto nl = simulate_nonlinear(p, StateFeedback{kDdGain}, sc, {}, init);
  const auto li = simulate_linear(m, kDdGain, eq.rtt, p, eq, sc, {}, Eigen::Vector2d(dW, dq));
  REQUIRE(nl.size() == li.size());
  const double scale = max_abs_dev(li.q, p.target_queue);
  const double wscale = max_abs_dev(li.W, eq.window);
  double dq_err = 0, dw_err = 0;
  for (std::size_t i = 0; i < nl.size(); ++i) {
    dq_err = std::max(dq_err, std::abs(nl.q[i] - li.q[i]));
    dw_err = std::max(dw_err, std::abs(nl.W[i] - li.W[i]));
  }
  CHECK(dq_err <= 0.1 * scale);
  CHECK(dw_err <= 0.1 * wscale);
}

TEST_CASE("linear trace decays or grows with the oracle abscissa") {
  const auto p = reference_network();
  const auto eq = equilibrium(p);
  const auto m = linearize<double>(p, eq);
  const Eigen::MatrixXd Acl = m.Ad + m.B * kDdGain.matrix();

  auto quarter_ratio = [&](const Gain& K, double h, double horizon) {
    Scenario sc;
    sc.horizon = horizon;
    const auto tr = simulate_linear(m, K, h, p, eq, sc, {}, Eigen::Vector2d(0, 5));
    const std::size_t n = tr.size(), q4 = n / 4;
    return max_abs_dev(tr.q, p.target_queue, n - q4) / max_abs_dev(tr.q, p.target_queue, 0, q4);
  };

  // certified stable range
  CHECK(converged_abscissa(m.A, Acl, 0.3) < 0);
  CHECK(quarter_ratio(kDdGain, 0.3, 40) < 0.1);

  // five times the gain loses stability within a few seconds of delay
  const Gain strong(Eigen::RowVectorXd(5 * kDdGain.k));
  const Eigen::MatrixXd Astrong = m.Ad + m.B * strong.matrix();
  double h_unstable = 0, sigma = 0;
  for (double h : {0.8, 1.0, 1.5, 2.0, 3.0}) {
    sigma = converged_abscissa(m.A, Astrong, h);
    if (sigma > 1e-2) {
      h_unstable = h;
      break;
    }
  }
  REQUIRE(h_unstable > 0);
  const double horizon = std::max(20.0, 4 * std::log(100.0) / sigma);
  CHECK(quarter_ratio(strong, h_unstable, horizon) > 10);
}

TEST_CASE("CSV export") {
  const auto p = reference_network();
  Scenario sc;
  sc.horizon = 0.1;
  const auto tr = simulate_nonlinear(p, ConstantDrop{0.01}, sc, {}, InitialState::at_equilibrium(p));
  std::ostringstream os;
  write_csv(os, tr);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "t_s,W_pkts,q_pkts,p_prob,R_s");
  std::size_t rows = 0;
  std::getline(is, line);
  ++rows;
  CHECK(std::count(line.begin(), line.end(), ',') == 4);
  while (std::getline(is, line)) ++rows;
  CHECK(rows == tr.size());
  std::ostringstream one;
  write_metrics(one, Metrics{0.0, 1.5, std::nullopt, std::nullopt}, "m.");
  CHECK(one.str().find("m.settling_time") != std::string::npos);
  CHECK(one.str().find("none") != std::string::npos);
}

TEST_CASE("invalid simulations") {
  const auto p = reference_network();
  Scenario sc;
  SimOptions big;
  big.dt = 0.05;
  CHECK_THROWS_AS(simulate_nonlinear(p, PiController{}, sc, big), InvalidSimulation);
  sc.disturbances.push_back(CrossTraffic{100, 30, 20});
  CHECK_THROWS_AS(simulate_nonlinear(p, PiController{}, sc), InvalidSimulation);
  Scenario late;
  late.horizon = 10;
  late.disturbances.push_back(DelayStep{0.02, 20});
  CHECK_THROWS_AS(late.validate(), InvalidSimulation);
  Scenario step;
  step.disturbances.push_back(DelayStep{0.02, 5});
  const auto eq = equilibrium(p);
  CHECK_THROWS_AS(simulate_linear(linearize<double>(p, eq), kDdGain, eq.rtt, p, eq, step), InvalidSimulation);
}

TEST_CASE("automatic cross-traffic rate keeps the queue below the buffer") {
  const auto p = reference_network();
  const Controller c = StateFeedback{kDdGain};
  const double rate = default_cross_traffic_rate(p, c, 60, 40, 45, {}, InitialState::at_equilibrium(p));
  CHECK(rate > 0);
  CHECK(rate <= 0.5 * p.capacity);
  Scenario sc;
  sc.horizon = 60;
  sc.disturbances.push_back(CrossTraffic{rate, 40, 45});
  const auto tr = simulate_nonlinear(p, c, sc, {}, InitialState::at_equilibrium(p));
  CHECK(*std::max_element(tr.q.begin(), tr.q.end()) < p.buffer);
}

TEST_CASE("load step") {
  const auto p = reference_network();
  Scenario sc;
  sc.horizon = 30;
  sc.disturbances.push_back(LoadStep{20, 10});
  CHECK(sc.extra_sessions(5) == 0);
  CHECK(sc.extra_sessions(15) == 20);
  CHECK(*sc.last_disturbance_end() == 10);
  const auto tr = simulate_nonlinear(p, StateFeedback{kDdGain}, sc, {}, InitialState::at_equilibrium(p));
  check_clamps(tr, p.buffer);
  CHECK(max_abs_dev(tr.q, p.target_queue, 0, 9000) <= 0.5);
}
