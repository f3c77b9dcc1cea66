#pragma once

// Orchestration shared by the command-line tool and the acceptance runner:
// synthesize, certify, cross-check with the spectral oracle, simulate, and
// render everything as ResultRecords.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aqm/config.hpp"
#include "aqm/record.hpp"
#include "aqm/sim.hpp"
#include "aqm/synthesis.hpp"

namespace aqm {

class NoCertificate : public std::runtime_error {
 public:
  NoCertificate(const std::string& what, double best_margin)
      : std::runtime_error("no certificate: " + what), best_margin(best_margin) {}
  double best_margin;
};

/// Raised when the oracle finds a certified closed loop unstable.
class CertificateContradicted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IodReference {
  double R0_min, R0_max;
  Gain K;
};

struct DdReference {
  int r;
  double R0_min, R0_max;
  Gain K;
  double h_m;
};

/// Published robust gains used as reproduction fixtures.
const std::array<IodReference, 2>& iod_reference_gains();
const std::array<DdReference, 4>& dd_reference_gains();

struct OracleCheck {
  double R0 = 0;
  double h = 0;
  double abscissa = 0;
  bool stable = false;
};

/// Closed loop of the model linearized at each R0, probed at each delay in
/// `delays`; a delay <= 0 stands for "h = R0".
std::vector<OracleCheck> oracle_checks(const NetworkParams& params, const Gain& K, std::span<const double> rtts,
                                       std::span<const double> delays);
void record_oracle(ResultRecord& rec, const std::vector<OracleCheck>& checks, const std::string& prefix = "oracle.");

ResultRecord provenance(const RunConfig& cfg, std::optional<long> seed = std::nullopt);

ResultRecord run_equilibrium(const RunConfig& cfg);

struct CertifiedGain {
  Gain gain;
  ResultRecord record;
};

/// Runs cfg.synthesis.method; throws NoCertificate when nothing certifies.
CertifiedGain run_synthesis(const RunConfig& cfg);

/// Certifies a given gain with the analysis matching cfg.synthesis.method.
CertifiedGain run_analysis(const RunConfig& cfg, const Gain& K);

struct SimulationRun {
  sim::SimTrace trace;
  sim::Metrics metrics;
  ResultRecord record;
};

sim::Scenario build_scenario(const RunConfig& cfg, const sim::Controller& controller);
SimulationRun run_simulation(const RunConfig& cfg, const sim::Controller& controller);

/// Writes the files of one reproduction target into `dir` and returns the
/// summary record. Targets: table1 table2 fig1 fig2 fig3.
ResultRecord reproduce(const std::string& target, const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace aqm
