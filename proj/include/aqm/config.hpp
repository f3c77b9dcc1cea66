#pragma once

// INI run configuration. Sections and keys:
//
//   [network]      N C Tp q0 buffer
//   [uncertainty]  R0_min R0_max
//   [synthesis]    method r feas_tol max_iterations h_tol relaxation_iterations
//                  R0 gain
//   [simulation]   scenario controller initial dt horizon delay_step t_on t_off
//                  cross_rate
//   [output]       dir
//
// Unknown sections or keys are rejected.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "aqm/model.hpp"
#include "aqm/synthesis.hpp"

namespace aqm {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error("invalid configuration: " + what) {}
};

enum class Method { iod, iod_robust, dd };
enum class ScenarioKind { nominal, delay_step, cross_traffic };
enum class ControllerKind { state_feedback, pi };
enum class InitialKind { equilibrium, empty };

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct SynthesisConfig {
  Method method = Method::dd;
  int r = 1;
  double feas_tol = 1e-7;
  int max_iterations = 500;
  double h_tol = 1e-3;
  int relaxation_iterations = 20;
  /// Nominal R0 override, e.g. the rounded 0.246; unset means exact.
  std::optional<double> R0;
  /// Fixed gain for analyze/simulate; unset means synthesize.
  std::optional<Gain> gain;
};

struct SimulationConfig {
  ScenarioKind scenario = ScenarioKind::nominal;
  ControllerKind controller = ControllerKind::state_feedback;
  InitialKind initial = InitialKind::equilibrium;
  double dt = 1e-3;
  double horizon = 60;
  double delay_step = 0.02;
  double t_on = 20;
  double t_off = 45;
  /// Unset picks the largest rate <= C/2 that keeps the queue under the buffer.
  std::optional<double> cross_rate;
};

struct RunConfig {
  NetworkParams network;
  double R0_min = 0.1;
  double R0_max = 0.45;
  SynthesisConfig synthesis;
  SimulationConfig simulation;
  std::string out = "out";

  void validate() const;
  Equilibrium nominal() const;
  sdp::SolverOptions solver() const;
  /// Stable key=value rendering of every field; the hash covers this text.
  std::string canonical() const;
  std::uint32_t hash() const;
};

RunConfig load_config(const std::string& path);
RunConfig parse_config(std::istream& in);

}  // namespace aqm
