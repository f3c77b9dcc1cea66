#pragma once

// Fixed-step simulation of the delayed TCP/queue fluid dynamics, nonlinear and
// linearized, under pluggable drop-probability controllers.

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "aqm/model.hpp"
#include "aqm/synthesis.hpp"

namespace aqm::sim {

class InvalidSimulation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// p = p0 + k1 (W - W0) + k2 (q - q0), evaluated on the current state.
struct StateFeedback {
  Gain K;
};

/// Velocity-form PI on the queue error, sampled at fs with zero-order hold:
/// p(k) = p(k-1) + a dq(k) - b dq(k-1).
struct PiController {
  double a = 1.822e-5;
  double b = 1.816e-5;
  double fs = 160.0;
};

struct ConstantDrop {
  double p = 0;
};

using Controller = std::variant<StateFeedback, PiController, ConstantDrop>;

std::string describe(const Controller& c);

struct DelayStep {
  double delta = 0;  // seconds added to the propagation delay
  double t_on = 0;
};

struct CrossTraffic {
  double rate = 0;  // packets/second of unresponsive arrivals
  double t_on = 0;
  double t_off = 0;
};

struct LoadStep {
  double sessions = 0;  // added TCP sessions
  double t_on = 0;
};

using Disturbance = std::variant<DelayStep, CrossTraffic, LoadStep>;

struct Scenario {
  double horizon = 60.0;
  std::vector<Disturbance> disturbances;

  void validate() const;
  double extra_delay(double t) const;
  double cross_rate(double t) const;
  double extra_sessions(double t) const;
  /// End of the last disturbance (t_on for steps), if any.
  std::optional<double> last_disturbance_end() const;
  std::string describe() const;
};

struct InitialState {
  double W = 1;
  double q = 0;
  double p = 0;

  static InitialState at_equilibrium(const NetworkParams& params);
};

struct SimOptions {
  double dt = 1e-3;
};

struct SimTrace {
  double dt = 0;
  std::vector<double> t, W, q, p, R;
  NetworkParams params;
  std::string controller;
  std::string scenario;
  std::vector<std::string> notes;

  std::size_t size() const { return t.size(); }
};

/// W' = 1/R - W(t) W(t-R) p(t-R) / (2 R(t-R)),  q' = N W / R - C + cross,
/// R = q/C + Tp + delay step. History on [-R_max, 0] is the constant initial
/// state. Clamps: q in [0, buffer] (saturating q'), W >= 1, p in [0, 1].
SimTrace simulate_nonlinear(const NetworkParams& params, const Controller& controller, const Scenario& scenario,
                            const SimOptions& options = {}, std::optional<InitialState> initial = std::nullopt);

/// x' = A x + (Ad + B K) x(t-h) in deviation coordinates, with cross traffic
/// entering q' additively. Reported values are offset by the operating point;
/// R is reported as h. Delay and load steps are not representable here.
SimTrace simulate_linear(const LinearModeld& model, const Gain& K, double h, const NetworkParams& params,
                         const Equilibrium& eq, const Scenario& scenario, const SimOptions& options = {},
                         const Eigen::Vector2d& initial = Eigen::Vector2d::Zero());

struct Metrics {
  std::optional<double> overshoot;           // packets
  std::optional<double> settling_time;       // seconds, none if it never settles
  std::optional<double> steady_state_error;  // packets
  std::optional<double> recovery_time;       // seconds after the last disturbance ends
};

/// Band is |q - q0| <= band * q0. Recovery is the settling time counted from
/// `disturbance_end` when given.
Metrics compute_metrics(const SimTrace& trace, double q0, std::optional<double> disturbance_end = std::nullopt,
                        double band = 0.05);

void write_csv(std::ostream& os, const SimTrace& trace);
void write_metrics(std::ostream& os, const Metrics& m, const std::string& prefix = "");

/// Largest cross-traffic rate in [0, 0.5 C] over [t_on, t_off] that keeps the
/// queue strictly below the buffer, to `tol` packets/second.
double default_cross_traffic_rate(const NetworkParams& params, const Controller& controller, double horizon,
                                  double t_on, double t_off, const SimOptions& options = {},
                                  std::optional<InitialState> initial = std::nullopt, double tol = 1.0);

}  // namespace aqm::sim
