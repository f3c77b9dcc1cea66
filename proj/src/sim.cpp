#include "aqm/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace aqm::sim {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double clamp01(double p) { return std::clamp(p, 0.0, 1.0); }

bool active(double t, double on, double off) { return t >= on && t < off; }

/// Linear interpolation on a uniform grid; times before 0 read `before`.
double lookup(const std::vector<double>& v, double dt, double s, double before) {
  if (s <= 0) return before;
  const double pos = s / dt;
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= v.size()) return v.back();
  const double f = pos - static_cast<double>(i);
  return v[i] + f * (v[i + 1] - v[i]);
}

void check_dt(double dt, double min_delay) {
  if (!(dt > 0) || !std::isfinite(dt)) throw InvalidSimulation("dt must be positive");
  if (!(min_delay > 0)) throw InvalidSimulation("delay must stay positive over the scenario");
  if (dt > min_delay / 20) throw InvalidSimulation("dt too large: need dt <= min(R)/20");
}

std::size_t step_count(double horizon, double dt) {
  return static_cast<std::size_t>(std::llround(horizon / dt));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string describe(const Controller& c) {
  return std::visit(overloaded{[](const StateFeedback& s) {
                                 return "state-feedback k1=" + fmt(s.K.k1()) + " k2=" + fmt(s.K.k2());
                               },
                               [](const PiController& pi) {
                                 return "pi a=" + fmt(pi.a) + " b=" + fmt(pi.b) + " fs=" + fmt(pi.fs);
                               },
                               [](const ConstantDrop& k) { return "constant p=" + fmt(k.p); }},
                    c);
}

void Scenario::validate() const {
  if (!(horizon > 0) || !std::isfinite(horizon)) throw InvalidSimulation("horizon must be positive");
  for (const auto& d : disturbances) {
    std::visit(overloaded{[&](const DelayStep& s) {
                            if (!std::isfinite(s.delta) || s.t_on < 0 || s.t_on > horizon)
                              throw InvalidSimulation("delay step out of range");
                          },
                          [&](const CrossTraffic& x) {
                            if (!(x.rate >= 0) || !std::isfinite(x.rate))
                              throw InvalidSimulation("cross-traffic rate must be >= 0");
                            if (!(0 <= x.t_on && x.t_on <= x.t_off && x.t_off <= horizon))
                              throw InvalidSimulation("cross-traffic window out of range");
                          },
                          [&](const LoadStep& l) {
                            if (!std::isfinite(l.sessions) || l.t_on < 0 || l.t_on > horizon)
                              throw InvalidSimulation("load step out of range");
                          }},
               d);
  }
}

double Scenario::extra_delay(double t) const {
  double d = 0;
  for (const auto& x : disturbances)
    if (const auto* s = std::get_if<DelayStep>(&x); s && t >= s->t_on) d += s->delta;
  return d;
}

double Scenario::cross_rate(double t) const {
  double r = 0;
  for (const auto& x : disturbances)
    if (const auto* c = std::get_if<CrossTraffic>(&x); c && active(t, c->t_on, c->t_off)) r += c->rate;
  return r;
}

double Scenario::extra_sessions(double t) const {
  double n = 0;
  for (const auto& x : disturbances)
    if (const auto* l = std::get_if<LoadStep>(&x); l && t >= l->t_on) n += l->sessions;
  return n;
}

std::optional<double> Scenario::last_disturbance_end() const {
  std::optional<double> end;
  for (const auto& x : disturbances) {
    const double e = std::visit(overloaded{[](const DelayStep& s) { return s.t_on; },
                                           [](const CrossTraffic& c) { return c.t_off; },
                                           [](const LoadStep& l) { return l.t_on; }},
                                x);
    end = end ? std::max(*end, e) : e;
  }
  return end;
}

std::string Scenario::describe() const {
  std::ostringstream os;
  os << "horizon=" << fmt(horizon);
  for (const auto& x : disturbances) {
    std::visit(overloaded{[&](const DelayStep& s) { os << " delay-step(" << fmt(s.delta) << "@" << fmt(s.t_on) << ")"; },
                          [&](const CrossTraffic& c) {
                            os << " cross-traffic(" << fmt(c.rate) << "@" << fmt(c.t_on) << "-" << fmt(c.t_off) << ")";
                          },
                          [&](const LoadStep& l) { os << " load-step(" << fmt(l.sessions) << "@" << fmt(l.t_on) << ")"; }},
               x);
  }
  return os.str();
}

InitialState InitialState::at_equilibrium(const NetworkParams& params) {
  const Equilibrium eq = equilibrium(params);
  return {eq.window, params.target_queue, eq.drop_prob};
}

SimTrace simulate_nonlinear(const NetworkParams& params, const Controller& controller, const Scenario& scenario,
                            const SimOptions& options, std::optional<InitialState> initial) {
  params.validate();
  scenario.validate();
  const Equilibrium eq = equilibrium(params);
  const InitialState init = initial ? *initial : InitialState::at_equilibrium(params);
  if (!std::isfinite(init.W) || !std::isfinite(init.q) || !std::isfinite(init.p) || init.W < 1 || init.q < 0 ||
      init.q > params.buffer || init.p < 0 || init.p > 1)
    throw InvalidSimulation("initial history outside the admissible state set");

  double min_extra = 0;
  for (const auto& d : scenario.disturbances)
    if (const auto* s = std::get_if<DelayStep>(&d)) min_extra = std::min(min_extra, s->delta);
  check_dt(options.dt, params.propagation + min_extra);
  for (const auto& d : scenario.disturbances)
    if (const auto* l = std::get_if<LoadStep>(&d); l && !(params.sessions + l->sessions > 0))
      throw InvalidSimulation("load step leaves no sessions");

  const double dt = options.dt;
  const double C = params.capacity;
  const std::size_t steps = step_count(scenario.horizon, dt);

  SimTrace tr;
  tr.dt = dt;
  tr.params = params;
  tr.controller = describe(controller);
  tr.scenario = scenario.describe();
  for (auto* v : {&tr.t, &tr.W, &tr.q, &tr.p, &tr.R}) v->reserve(steps + 1);

  auto rtt = [&](double t, double q) { return q / C + params.propagation + scenario.extra_delay(t); };
  const double R_init = rtt(0.0, init.q);

  // controller state
  double pi_prev_p = init.p;
  double pi_prev_dq = init.q - params.target_queue;
  std::size_t pi_samples = 0;
  double p_hold = init.p;

  auto emit = [&](double t, double W, double q) {
    return std::visit(
        overloaded{[&](const StateFeedback& s) {
                     return clamp01(eq.drop_prob + s.K.k1() * (W - eq.window) + s.K.k2() * (q - params.target_queue));
                   },
                   [&](const PiController& pi) {
                     if (t + 1e-12 >= static_cast<double>(pi_samples) / pi.fs) {
                       const double dq = q - params.target_queue;
                       p_hold = clamp01(pi_prev_p + pi.a * dq - pi.b * pi_prev_dq);
                       pi_prev_p = p_hold;
                       pi_prev_dq = dq;
                       ++pi_samples;
                     }
                     return p_hold;
                   },
                   [&](const ConstantDrop& k) { return clamp01(k.p); }},
        controller);
  };

  auto deriv = [&](double t, double W, double q) -> std::pair<double, double> {
    W = std::max(W, 1.0);
    q = std::clamp(q, 0.0, params.buffer);
    const double R = rtt(t, q);
    const double s = t - R;
    const double Wd = lookup(tr.W, dt, s, init.W);
    const double pd = lookup(tr.p, dt, s, init.p);
    const double Rd = lookup(tr.R, dt, s, R_init);
    double dW = 1.0 / R - W * Wd * pd / (2.0 * Rd);
    double dq = (params.sessions + scenario.extra_sessions(t)) * W / R - C + scenario.cross_rate(t);
    if (W <= 1.0 && dW < 0) dW = 0;
    if (q <= 0 && dq < 0) dq = 0;
    if (q >= params.buffer && dq > 0) dq = 0;
    return {dW, dq};
  };

  double W = init.W, q = init.q;
  for (std::size_t n = 0;; ++n) {
    const double t = static_cast<double>(n) * dt;
    tr.t.push_back(t);
    tr.W.push_back(W);
    tr.q.push_back(q);
    tr.R.push_back(rtt(t, q));
    tr.p.push_back(emit(t, W, q));
    if (n == steps) break;

    const auto [k1w, k1q] = deriv(t, W, q);
    const auto [k2w, k2q] = deriv(t + dt / 2, W + dt / 2 * k1w, q + dt / 2 * k1q);
    const auto [k3w, k3q] = deriv(t + dt / 2, W + dt / 2 * k2w, q + dt / 2 * k2q);
    const auto [k4w, k4q] = deriv(t + dt, W + dt * k3w, q + dt * k3q);
    W = std::max(1.0, W + dt / 6 * (k1w + 2 * k2w + 2 * k3w + k4w));
    q = std::clamp(q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q), 0.0, params.buffer);
  }
  return tr;
}

SimTrace simulate_linear(const LinearModeld& model, const Gain& K, double h, const NetworkParams& params,
                         const Equilibrium& eq, const Scenario& scenario, const SimOptions& options,
                         const Eigen::Vector2d& initial) {
  model.validate();
  scenario.validate();
  if (model.states() != 2 || model.inputs() != 1 || K.size() != 2)
    throw InvalidSimulation("linear simulation expects the two-state TCP model");
  for (const auto& d : scenario.disturbances)
    if (!std::holds_alternative<CrossTraffic>(d))
      throw InvalidSimulation("linear simulation supports cross traffic only");
  if (!initial.allFinite()) throw InvalidSimulation("initial state must be finite");
  check_dt(options.dt, h);

  const double dt = options.dt;
  const std::size_t steps = step_count(scenario.horizon, dt);
  const Eigen::Matrix2d A = model.A;
  const Eigen::Matrix2d Ad = model.closed_loop_delayed(K.matrix());

  SimTrace tr;
  tr.dt = dt;
  tr.params = params;
  tr.controller = "linear " + describe(StateFeedback{K});
  tr.scenario = scenario.describe();
  std::vector<double> dW, dq;
  dW.reserve(steps + 1);
  dq.reserve(steps + 1);

  auto f = [&](double t, const Eigen::Vector2d& x) -> Eigen::Vector2d {
    const double s = t - h;
    const Eigen::Vector2d xd(lookup(dW, dt, s, initial(0)), lookup(dq, dt, s, initial(1)));
    Eigen::Vector2d dx = A * x + Ad * xd;
    dx(1) += scenario.cross_rate(t);
    return dx;
  };

  Eigen::Vector2d x = initial;
  for (std::size_t n = 0;; ++n) {
    const double t = static_cast<double>(n) * dt;
    dW.push_back(x(0));
    dq.push_back(x(1));
    tr.t.push_back(t);
    tr.W.push_back(eq.window + x(0));
    tr.q.push_back(params.target_queue + x(1));
    tr.p.push_back(eq.drop_prob + K.k.dot(x));
    tr.R.push_back(h);
    if (n == steps) break;
    const Eigen::Vector2d k1 = f(t, x);
    const Eigen::Vector2d k2 = f(t + dt / 2, x + dt / 2 * k1);
    const Eigen::Vector2d k3 = f(t + dt / 2, x + dt / 2 * k2);
    const Eigen::Vector2d k4 = f(t + dt, x + dt * k3);
    x += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return tr;
}

namespace {

/// First time from index `from` after which the band holds to the end,
/// interpolated at the last exit; nullopt when the final sample is outside.
std::optional<double> settle_from(const SimTrace& tr, std::size_t from, double q0, double tol) {
  const std::size_t n = tr.size();
  if (from >= n) return std::nullopt;
  auto outside = [&](std::size_t i) { return std::abs(tr.q[i] - q0) > tol; };
  if (outside(n - 1)) return std::nullopt;
  std::size_t i = n - 1;
  while (i > from && !outside(i - 1)) --i;
  if (i == from) return tr.t[from];
  // crossing between i-1 (outside) and i (inside)
  const double e0 = std::abs(tr.q[i - 1] - q0), e1 = std::abs(tr.q[i] - q0);
  const double f = (e0 - tol) / (e0 - e1);
  return tr.t[i - 1] + f * (tr.t[i] - tr.t[i - 1]);
}

}  // namespace

Metrics compute_metrics(const SimTrace& trace, double q0, std::optional<double> disturbance_end, double band) {
  if (trace.size() == 0) throw InvalidSimulation("empty trace");
  Metrics m;
  const double peak = *std::max_element(trace.q.begin(), trace.q.end());
  m.overshoot = std::max(0.0, peak - q0);
  const double tol = band * q0;
  m.settling_time = settle_from(trace, 0, q0, tol);
  if (m.settling_time) *m.settling_time -= trace.t.front();

  const std::size_t n = trace.size();
  const std::size_t tail = std::max<std::size_t>(1, n / 10);
  double acc = 0;
  for (std::size_t i = n - tail; i < n; ++i) acc += std::abs(trace.q[i] - q0);
  m.steady_state_error = acc / static_cast<double>(tail);

  if (disturbance_end) {
    const auto it = std::lower_bound(trace.t.begin(), trace.t.end(), *disturbance_end);
    if (it != trace.t.end()) {
      const auto s = settle_from(trace, static_cast<std::size_t>(it - trace.t.begin()), q0, tol);
      if (s) m.recovery_time = std::max(0.0, *s - *disturbance_end);
    }
  }
  return m;
}

void write_csv(std::ostream& os, const SimTrace& tr) {
  os << "t_s,W_pkts,q_pkts,p_prob,R_s\n";
  char line[160];
  for (std::size_t i = 0; i < tr.size(); ++i) {
    std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g,%.9g,%.9g\n", tr.t[i], tr.W[i], tr.q[i], tr.p[i], tr.R[i]);
    os << line;
  }
}

void write_metrics(std::ostream& os, const Metrics& m, const std::string& prefix) {
  auto put = [&](const char* key, const std::optional<double>& v) {
    os << prefix << key << '=' << (v ? fmt(*v) : std::string("none")) << '\n';
  };
  put("overshoot_pkts", m.overshoot);
  put("settling_time_s", m.settling_time);
  put("steady_state_error_pkts", m.steady_state_error);
  put("recovery_time_s", m.recovery_time);
}

double default_cross_traffic_rate(const NetworkParams& params, const Controller& controller, double horizon,
                                  double t_on, double t_off, const SimOptions& options,
                                  std::optional<InitialState> initial, double tol) {
  auto below_buffer = [&](double rate) {
    Scenario sc{horizon, {CrossTraffic{rate, t_on, t_off}}};
    const auto tr = simulate_nonlinear(params, controller, sc, options, initial);
    return *std::max_element(tr.q.begin(), tr.q.end()) < params.buffer;
  };
  double lo = 0, hi = 0.5 * params.capacity;
  if (!below_buffer(lo)) return 0;
  if (below_buffer(hi)) return hi;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (below_buffer(mid) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace aqm::sim
