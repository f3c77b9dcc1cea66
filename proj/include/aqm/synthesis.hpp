#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aqm/lmi_blocks.hpp"
#include "aqm/model.hpp"
#include "aqm/sdp.hpp"

namespace aqm {

/// State feedback u = K x, here p = p0 + k1 dW + k2 dq.
struct Gain {
  Eigen::RowVectorXd k;

  Gain() = default;
  explicit Gain(Eigen::RowVectorXd values) : k(std::move(values)) {}
  Gain(double k1, double k2) : k(2) { k << k1, k2; }

  static Gain zero(Eigen::Index n) { return Gain(Eigen::RowVectorXd::Zero(n)); }

  double k1() const { return k(0); }
  double k2() const { return k(1); }
  Eigen::Index size() const { return k.size(); }
  Eigen::MatrixXd matrix() const { return k; }
};

class IllConditionedSynthesis : public std::runtime_error {
 public:
  IllConditionedSynthesis() : std::runtime_error("ill-conditioned synthesis") {}
};

class NoStartingPoint : public std::runtime_error {
 public:
  NoStartingPoint() : std::runtime_error("no DD-stabilizable starting point") {}
};

/// A verdict: either a certificate, or the best margin the solver reached.
template <typename Certificate>
struct Outcome {
  std::optional<Certificate> certificate;
  double margin = 0;
  int iterations = 0;

  explicit operator bool() const { return certificate.has_value(); }
  const Certificate& operator*() const { return *certificate; }
  const Certificate* operator->() const { return &*certificate; }
};

struct IodCertificate {
  Eigen::MatrixXd P;
  Eigen::MatrixXd Q;
  double margin = 0;
};

struct IodSynthesis {
  Gain gain;
  Eigen::MatrixXd R, S, Z;
  double margin = 0;
  /// Re-certification of the returned gain, one per model/vertex.
  std::vector<IodCertificate> certificates;
};

struct DdCertificate {
  Eigen::MatrixXd P, Q, R, X;
  int r = 1;
  double h = 0;
  double margin = 0;
};

struct DdSynthesis {
  Gain gain;
  DdCertificate certificate;  // from the analysis re-check at the same h
  double synthesis_margin = 0;
};

struct RelaxationIteration {
  double h_synthesis = 0;
  double h_analysis = 0;
  Gain gain;
};

struct RelaxationReport {
  Gain initial_gain;
  double h0 = 0;
  std::vector<RelaxationIteration> iterations;
  Gain gain;
  double h_m = 0;
  DdCertificate certificate;
  bool converged = false;
};

struct DelaySearch {
  double h_lo = 1e-3;
  double h_hi = 5.0;
  double tol = 1e-3;
};

struct RelaxationOptions {
  sdp::SolverOptions solver;
  DelaySearch search;
  double h_tol = 1e-3;
  int max_iterations = 20;
  /// Delay of the bootstrap analysis; <= 0 picks R0_min / 2.
  double h0 = 0;
  /// Overrides the analytic IOD gain used for initialization.
  std::optional<Gain> initial_gain;
};

using ModelSpan = std::span<const LinearModeld>;

// -- independent-of-delay --------------------------------------------------

/// [[A'P + PA + Q, P Ad~], [Ad~'P, -Q]] < 0 with Ad~ = Ad + B K; P, Q common to
/// all models given.
Outcome<IodCertificate> iod_analysis(ModelSpan models, const Gain& K, const sdp::SolverOptions& opt = {});
Outcome<IodCertificate> iod_analysis(const LinearModeld& model, const Gain& K, const sdp::SolverOptions& opt = {});

/// Each model separately; one outcome per model.
std::vector<Outcome<IodCertificate>> iod_analysis_per_vertex(ModelSpan models, const Gain& K,
                                                             const sdp::SolverOptions& opt = {});

Outcome<IodSynthesis> iod_synthesize(const LinearModeld& model, const sdp::SolverOptions& opt = {});
Outcome<IodSynthesis> iod_synthesize_robust(const Polytoped& polytope, const sdp::SolverOptions& opt = {});

/// Gain cancelling the delayed term of the nominal model: Ad + B K = 0.
Gain iod_analytic_gain(const NetworkParams& params, const Equilibrium& eq);

// -- delay-dependent -------------------------------------------------------

Outcome<DdCertificate> dd_analysis_step(ModelSpan models, const Gain& K, int r, double h,
                                        const sdp::SolverOptions& opt = {});

/// Slack X fixed, gain free. The gain is re-certified by dd_analysis_step.
Outcome<DdSynthesis> dd_synthesis_step(ModelSpan models, const Eigen::MatrixXd& X, int r, double h,
                                       const sdp::SolverOptions& opt = {});

/// Largest certified h in the search bracket, or nullopt when the lower end
/// already fails.
std::optional<DdCertificate> dd_max_delay(ModelSpan models, const Gain& K, int r, const DelaySearch& search = {},
                                          const sdp::SolverOptions& opt = {});

RelaxationReport dd_relaxation(const Polytoped& polytope, int r, const RelaxationOptions& opt = {});
RelaxationReport dd_relaxation(ModelSpan models, const Gain& initial_gain, double h0, int r,
                               const RelaxationOptions& opt = {});

}  // namespace aqm
