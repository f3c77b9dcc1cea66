#include "aqm/synthesis.hpp"

#include <cmath>
#include <utility>

namespace aqm {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Affine = sdp::AffineMatrix<double>;
using Problem = sdp::LmiProblem<double>;

void check_models(ModelSpan models) {
  if (models.empty()) throw std::invalid_argument("at least one model is required");
  for (const auto& m : models) {
    m.validate();
    if (m.states() != models.front().states() || m.inputs() != models.front().inputs())
      throw sdp::DimensionMismatch("models differ in dimension");
  }
}

void check_gain(const LinearModeld& m, const Gain& K) {
  if (K.size() != m.states() || m.inputs() != 1) throw sdp::DimensionMismatch("gain dimension mismatch");
}

// Diagonal similarity x = D z with power-of-two entries (so every transform
// below is exact in floating point) equalizing the off-diagonal couplings of
// A and Ad across the model set. Uniform margins t*I are meaningless when
// the states live on scales 100x apart, as window and queue do here.
struct Balancing {
  Eigen::VectorXd d;
  std::vector<LinearModeld> models;

  explicit Balancing(ModelSpan src) {
    const Index n = src.front().states();
    MatrixXd weight = MatrixXd::Zero(n, n);
    for (const auto& m : src) weight += m.A.cwiseAbs() + m.Ad.cwiseAbs();
    d = Eigen::VectorXd::Ones(n);
    for (int sweep = 0; sweep < 20; ++sweep) {
      bool changed = false;
      for (Index i = 0; i < n; ++i) {
        double row = 0, col = 0;
        for (Index j = 0; j < n; ++j) {
          if (j == i) continue;
          row += weight(i, j) * d(j) / d(i);
          col += weight(j, i) * d(i) / d(j);
        }
        if (row == 0 || col == 0) continue;
        const double f = std::exp2(std::round(0.5 * std::log2(row / col)));
        if (f != 1.0) {
          d(i) *= f;
          changed = true;
        }
      }
      if (!changed) break;
    }
    const Eigen::VectorXd inv = d.cwiseInverse();
    for (const auto& m : src) {
      LinearModeld z;
      z.A = inv.asDiagonal() * m.A * d.asDiagonal();
      z.Ad = inv.asDiagonal() * m.Ad * d.asDiagonal();
      z.B = inv.asDiagonal() * m.B;
      z.h = m.h;
      models.push_back(std::move(z));
    }
  }

  Gain to_balanced(const Gain& K) const { return Gain(Eigen::RowVectorXd(K.k * d.asDiagonal())); }
  Gain to_original(const Gain& K) const { return Gain(Eigen::RowVectorXd(K.k * d.cwiseInverse().asDiagonal())); }

  /// blockdiag(D^s) applied left and right: M -> Dl M Dr.
  MatrixXd scale(const MatrixXd& M, int left_power, int right_power) const {
    auto expand = [&](Index size, int power) {
      Eigen::VectorXd v(size);
      for (Index i = 0; i < size; ++i) v(i) = std::pow(d(i % d.size()), power);
      return v;
    };
    return expand(M.rows(), left_power).asDiagonal() * M * expand(M.cols(), right_power).asDiagonal();
  }
  /// Lyapunov-type variables: P_x = D^-1 P_z D^-1.
  MatrixXd lyapunov_to_original(const MatrixXd& M) const { return scale(M, -1, -1); }
  MatrixXd lyapunov_to_balanced(const MatrixXd& M) const { return scale(M, 1, 1); }
};

// Largest h in [lo, hi] accepted by probe, given that lo is accepted with
// lo_result. Accepts hi outright when it passes.
template <typename Probe, typename Result>
std::pair<double, Result> bisect_max(Probe&& probe, double lo, Result lo_result, double hi, double tol) {
  if (hi <= lo) return {lo, std::move(lo_result)};
  if (auto top = probe(hi)) return {hi, std::move(*top)};
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (auto res = probe(mid)) {
      lo = mid;
      lo_result = std::move(*res);
    } else {
      hi = mid;
    }
  }
  return {lo, std::move(lo_result)};
}

Affine iod_block(const Affine& P, const Affine& Q, const MatrixXd& A, const MatrixXd& Ad_tilde) {
  return sdp::block_matrix<double>({{A.transpose() * P + P * A + Q, P * Ad_tilde},
                                    {Ad_tilde.transpose() * P, -Q}});
}

struct SynthesisProbe {
  Gain gain;
  double margin = 0;
};

// Synthesis LMI with X fixed; no re-certification.
std::optional<SynthesisProbe> synthesis_probe(ModelSpan models, const MatrixXd& X, int r, double h,
                                              const sdp::SolverOptions& opt) {
  const Index n = models.front().states();
  const Index m = models.front().inputs();
  if (X.rows() != (r + 2) * n || X.cols() != n) throw sdp::DimensionMismatch("slack X has wrong shape");
  if (!X.allFinite()) throw std::invalid_argument("slack X must be finite");
  // (P, Q, R, X) scale together with K untouched; keep the fixed slack well
  // inside the solver's search ball.
  const MatrixXd Xs = X.norm() > 0 ? MatrixXd(X * (std::sqrt(opt.radius) / X.norm())) : X;
  Problem prob;
  const auto P = prob.add_symmetric("P", n);
  const auto Q = prob.add_symmetric("Q", r * n);
  const auto R = prob.add_symmetric("R", n);
  const auto K = prob.add_rectangular("K", m, n);
  const Affine gamma = gamma_expression(prob.var(P), prob.var(Q), prob.var(R), h, r, n);
  const MatrixXd last = block_selector<double>(r + 1, 1, n, r);
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& mdl = models[i];
    const MatrixXd S0 = build_S(mdl, MatrixXd::Zero(m, n), r);
    const Affine XS = Affine(Xs * S0) + MatrixXd(Xs * mdl.B) * prob.var(K) * last;
    prob.add_lmi(gamma + sdp::herm(XS), "vertex" + std::to_string(i));
  }
  const auto sol = sdp::solve_feasibility(prob, opt);
  if (!sol.certified()) return std::nullopt;
  return SynthesisProbe{Gain(Eigen::RowVectorXd(sol["K"].row(0))), sol.margin};
}

}  // namespace

Outcome<IodCertificate> iod_analysis(ModelSpan models, const Gain& K, const sdp::SolverOptions& opt) {
  check_models(models);
  check_gain(models.front(), K);
  const Balancing bal(models);
  const Gain Kz = bal.to_balanced(K);
  const Index n = models.front().states();
  Problem prob;
  const auto P = prob.add_symmetric("P", n);
  const auto Q = prob.add_symmetric("Q", n);
  for (std::size_t i = 0; i < bal.models.size(); ++i) {
    const auto& mdl = bal.models[i];
    prob.add_lmi(iod_block(prob.var(P), prob.var(Q), mdl.A, mdl.closed_loop_delayed(Kz.matrix())),
                 "vertex" + std::to_string(i));
  }
  const auto sol = sdp::solve_feasibility(prob, opt);
  Outcome<IodCertificate> out;
  out.margin = sol.margin;
  out.iterations = sol.iterations;
  if (sol.certified())
    out.certificate = IodCertificate{bal.lyapunov_to_original(sol["P"]), bal.lyapunov_to_original(sol["Q"]), sol.margin};
  return out;
}

Outcome<IodCertificate> iod_analysis(const LinearModeld& model, const Gain& K, const sdp::SolverOptions& opt) {
  return iod_analysis(ModelSpan(&model, 1), K, opt);
}

std::vector<Outcome<IodCertificate>> iod_analysis_per_vertex(ModelSpan models, const Gain& K,
                                                             const sdp::SolverOptions& opt) {
  std::vector<Outcome<IodCertificate>> out;
  out.reserve(models.size());
  for (const auto& m : models) out.push_back(iod_analysis(m, K, opt));
  return out;
}

namespace {

Outcome<IodSynthesis> iod_synthesize_common(ModelSpan models, const sdp::SolverOptions& opt) {
  check_models(models);
  const Balancing bal(models);
  const Index n = models.front().states();
  const Index m = models.front().inputs();
  Problem prob;
  const auto R = prob.add_symmetric("R", n);
  const auto S = prob.add_symmetric("S", n, sdp::Definiteness::none);
  const auto Z = prob.add_rectangular("Z", m, n);
  for (std::size_t i = 0; i < bal.models.size(); ++i) {
    const auto& mdl = bal.models[i];
    const Affine Rv = prob.var(R), Sv = prob.var(S);
    const Affine off = mdl.Ad * Rv + mdl.B * prob.var(Z);
    prob.add_lmi(sdp::block_matrix<double>({{Rv * mdl.A.transpose() + mdl.A * Rv + Sv, off},
                                            {off.transpose(), -Sv}}),
                 "vertex" + std::to_string(i));
  }
  const auto sol = sdp::solve_feasibility(prob, opt);
  Outcome<IodSynthesis> out;
  out.margin = sol.margin;
  out.iterations = sol.iterations;
  if (!sol.certified()) return out;

  const MatrixXd& Rz = sol["R"];
  Eigen::JacobiSVD<MatrixXd> svd(Rz);
  const auto& sv = svd.singularValues();
  const double cond = sv(0) / sv(sv.size() - 1);
  if (!std::isfinite(cond) || cond > 1e12) throw IllConditionedSynthesis();

  // S > 0 is implied by the (2,2) block; assert it on the returned point.
  if (sdp::min_eig(sol["S"]) <= 0) return out;

  IodSynthesis syn;
  const Gain Kz(Eigen::RowVectorXd(Rz.llt().solve(sol["Z"].transpose()).transpose()));
  syn.gain = bal.to_original(Kz);
  // dual-form variables map with D on both sides: R_x = D R_z D, Z_x = Z_z D
  syn.R = bal.scale(Rz, 1, 1);
  syn.S = bal.scale(sol["S"], 1, 1);
  syn.Z = bal.scale(sol["Z"], 0, 1);
  syn.margin = sol.margin;

  for (const auto& v : iod_analysis_per_vertex(models, syn.gain, opt)) {
    if (!v) {
      out.margin = std::min(out.margin, v.margin);
      return out;
    }
    syn.certificates.push_back(*v);
  }
  out.certificate = std::move(syn);
  return out;
}

// DD analysis in balanced coordinates; certificate stays balanced.
Outcome<DdCertificate> dd_analysis_balanced(ModelSpan zmodels, const Gain& Kz, int r, double h,
                                            const sdp::SolverOptions& opt) {
  const Index n = zmodels.front().states();
  Problem prob;
  const auto P = prob.add_symmetric("P", n);
  const auto Q = prob.add_symmetric("Q", r * n);
  const auto R = prob.add_symmetric("R", n);
  const auto X = prob.add_rectangular("X", (r + 2) * n, n);
  const Affine gamma = gamma_expression(prob.var(P), prob.var(Q), prob.var(R), h, r, n);
  for (std::size_t i = 0; i < zmodels.size(); ++i) {
    const MatrixXd S = build_S(zmodels[i], Kz.matrix(), r);
    prob.add_lmi(gamma + sdp::herm(prob.var(X) * S), "vertex" + std::to_string(i));
  }
  const auto sol = sdp::solve_feasibility(prob, opt);
  Outcome<DdCertificate> out;
  out.margin = sol.margin;
  out.iterations = sol.iterations;
  if (sol.certified()) out.certificate = DdCertificate{sol["P"], sol["Q"], sol["R"], sol["X"], r, h, sol.margin};
  return out;
}

DdCertificate dd_to_original(const Balancing& bal, DdCertificate c) {
  c.P = bal.lyapunov_to_original(c.P);
  c.Q = bal.lyapunov_to_original(c.Q);
  c.R = bal.lyapunov_to_original(c.R);
  c.X = bal.scale(c.X, -1, -1);
  return c;
}

MatrixXd slack_to_balanced(const Balancing& bal, const MatrixXd& X) { return bal.scale(X, 1, 1); }

void check_dd_args(int r, double h) {
  if (!(h > 0)) throw std::invalid_argument("delay must be positive");
  if (r < 1) throw std::invalid_argument("r must be >= 1");
}

}  // namespace

Outcome<IodSynthesis> iod_synthesize(const LinearModeld& model, const sdp::SolverOptions& opt) {
  return iod_synthesize_common(ModelSpan(&model, 1), opt);
}

Outcome<IodSynthesis> iod_synthesize_robust(const Polytoped& polytope, const sdp::SolverOptions& opt) {
  return iod_synthesize_common(polytope.vertices, opt);
}

Gain iod_analytic_gain(const NetworkParams& params, const Equilibrium& eq) {
  const double N = params.sessions, C = params.capacity, R0 = eq.rtt;
  const double denom = std::pow(R0 * C, 3);
  return Gain(-2.0 * N * N * N / denom, 2.0 * N * N / denom);
}

Outcome<DdCertificate> dd_analysis_step(ModelSpan models, const Gain& K, int r, double h,
                                        const sdp::SolverOptions& opt) {
  check_models(models);
  check_gain(models.front(), K);
  check_dd_args(r, h);
  const Balancing bal(models);
  auto out = dd_analysis_balanced(bal.models, bal.to_balanced(K), r, h, opt);
  if (out.certificate) out.certificate = dd_to_original(bal, *out.certificate);
  return out;
}

Outcome<DdSynthesis> dd_synthesis_step(ModelSpan models, const MatrixXd& X, int r, double h,
                                       const sdp::SolverOptions& opt) {
  check_models(models);
  check_dd_args(r, h);
  const Balancing bal(models);
  Outcome<DdSynthesis> out;
  const auto probe = synthesis_probe(bal.models, slack_to_balanced(bal, X), r, h, opt);
  if (!probe) {
    out.margin = -1;
    return out;
  }
  const Gain K = bal.to_original(probe->gain);
  const auto check = dd_analysis_step(models, K, r, h, opt);
  out.margin = check.margin;
  out.iterations = check.iterations;
  if (check) out.certificate = DdSynthesis{K, *check, probe->margin};
  return out;
}

std::optional<DdCertificate> dd_max_delay(ModelSpan models, const Gain& K, int r, const DelaySearch& search,
                                          const sdp::SolverOptions& opt) {
  check_models(models);
  check_gain(models.front(), K);
  const Balancing bal(models);
  const Gain Kz = bal.to_balanced(K);
  auto probe = [&](double h) { return dd_analysis_balanced(bal.models, Kz, r, h, opt).certificate; };
  auto low = probe(search.h_lo);
  if (!low) return std::nullopt;
  return dd_to_original(bal, bisect_max(probe, search.h_lo, std::move(*low), search.h_hi, search.tol).second);
}

RelaxationReport dd_relaxation(const Polytoped& polytope, int r, const RelaxationOptions& opt) {
  const Gain K0 = opt.initial_gain ? *opt.initial_gain
                                   : iod_analytic_gain(polytope.params, equilibrium(polytope.params));
  const double h0 = opt.h0 > 0 ? opt.h0 : 0.5 * polytope.rtt_min;
  return dd_relaxation(polytope.vertices, K0, h0, r, opt);
}

RelaxationReport dd_relaxation(ModelSpan models, const Gain& initial_gain, double h0, int r,
                               const RelaxationOptions& opt) {
  check_models(models);
  check_gain(models.front(), initial_gain);
  check_dd_args(r, h0);
  const Balancing bal(models);
  const ModelSpan zmodels(bal.models);
  RelaxationReport report;
  report.initial_gain = initial_gain;
  report.h0 = h0;

  auto start = dd_analysis_balanced(zmodels, bal.to_balanced(initial_gain), r, h0, opt.solver);
  if (!start) throw NoStartingPoint();

  MatrixXd X = start->X;
  double anchor = h0;
  report.gain = initial_gain;
  report.h_m = h0;
  report.certificate = dd_to_original(bal, *start);

  const auto& search = opt.search;
  auto synth = [&](double h) -> std::optional<Gain> {
    auto p = synthesis_probe(zmodels, X, r, h, opt.solver);
    return p ? std::optional<Gain>(p->gain) : std::nullopt;
  };

  Gain previous = bal.to_balanced(initial_gain);
  for (int it = 0; it < opt.max_iterations; ++it) {
    // The previous gain is feasible at the anchor by construction; a fresh
    // solve there can miss since the anchor sits on the analysis boundary.
    auto at_anchor = synth(anchor);
    auto [h_s, Kz] = bisect_max(synth, anchor, at_anchor ? std::move(*at_anchor) : previous, search.h_hi, search.tol);
    previous = Kz;

    auto analyse = [&](double h) { return dd_analysis_balanced(zmodels, Kz, r, h, opt.solver).certificate; };
    auto base = analyse(h_s);
    if (!base) {
      // Only round-off gets here: every synthesis point is an analysis point.
      report.converged = h_s - anchor < opt.h_tol;
      break;
    }
    auto [h_a, cert] = bisect_max(analyse, h_s, std::move(*base), search.h_hi, search.tol);

    const Gain K = bal.to_original(Kz);
    report.iterations.push_back({h_s, h_a, K});
    report.gain = K;
    report.h_m = h_a;
    report.certificate = dd_to_original(bal, cert);
    if (h_a - h_s < opt.h_tol) {
      report.converged = true;
      break;
    }
    anchor = h_a;
    X = cert.X;
  }
  return report;
}

}  // namespace aqm
