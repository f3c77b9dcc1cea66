#include "aqm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "aqm/stability.hpp"

#ifndef AQM_VERSION
#define AQM_VERSION "0.0.0"
#endif

namespace aqm {

namespace {

void put_gain(ResultRecord& rec, const std::string& prefix, const Gain& K) {
  rec.set(prefix + "k1", K.k1());
  rec.set(prefix + "k2", K.k2());
}

std::array<double, 3> sample_rtts(double lo, double hi) { return {lo, 0.5 * (lo + hi), hi}; }

void require_oracle(const std::vector<OracleCheck>& checks) {
  for (const auto& c : checks)
    if (!c.stable)
      throw CertificateContradicted("oracle reports an unstable closed loop at R0=" + format_number(c.R0) +
                                    " h=" + format_number(c.h));
}

/// Delays checked for a DD certificate valid up to h_m: the nominal delay of
/// each sampled model when covered, and h_m itself.
std::vector<OracleCheck> dd_oracle(const NetworkParams& params, const Gain& K, double lo, double hi, double h_m) {
  std::vector<OracleCheck> out;
  for (double R0 : sample_rtts(lo, hi)) {
    std::vector<double> delays{h_m};
    if (R0 <= h_m) delays.insert(delays.begin(), R0);
    const std::array<double, 1> one{R0};
    for (const auto& c : oracle_checks(params, K, one, delays)) out.push_back(c);
  }
  return out;
}

constexpr std::array<double, 3> kIodDelays{-1.0, 1.0, 5.0};

ResultRecord iod_vertex_record(const std::vector<Outcome<IodCertificate>>& verdicts, bool& all) {
  ResultRecord rec;
  all = true;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    rec.set("vertex." + std::to_string(i) + ".certified", bool(verdicts[i]));
    rec.set("vertex." + std::to_string(i) + ".margin", verdicts[i].margin);
    all = all && bool(verdicts[i]);
  }
  rec.set("certified", all);
  return rec;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << text;
}

void write_trace(const std::filesystem::path& path, const sim::SimTrace& tr) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  sim::write_csv(os, tr);
}

ResultRecord metrics_record(const sim::Metrics& m) {
  ResultRecord rec;
  rec.set("overshoot_pkts", m.overshoot);
  rec.set("settling_time_s", m.settling_time);
  rec.set("steady_state_error_pkts", m.steady_state_error);
  rec.set("recovery_time_s", m.recovery_time);
  return rec;
}

/// Certificate + oracle fields for a gain used in a simulation.
ResultRecord dd_gain_record(const NetworkParams& params, const DdReference& ref, const sdp::SolverOptions& solver) {
  ResultRecord rec;
  put_gain(rec, "gain.", ref.K);
  const auto polytope = build_polytope<double>(params, ref.R0_min, ref.R0_max);
  const auto cert = dd_max_delay(polytope.vertices, ref.K, ref.r, {}, solver);
  rec.set("certificate.kind", "dd");
  rec.set("certificate.r", ref.r);
  rec.set("certificate.R0_min", ref.R0_min);
  rec.set("certificate.R0_max", ref.R0_max);
  rec.set("certificate.certified", cert.has_value());
  rec.set("certificate.h_m", cert ? std::optional<double>(cert->h) : std::nullopt);
  rec.set("certificate.margin", cert ? std::optional<double>(cert->margin) : std::nullopt);
  if (cert) record_oracle(rec, dd_oracle(params, ref.K, ref.R0_min, ref.R0_max, cert->h));
  return rec;
}

/// Signed mean offset of q over the final 10% of the trace.
double final_offset(const sim::SimTrace& tr, double q0) {
  const std::size_t n = tr.size(), tail = std::max<std::size_t>(1, n / 10);
  double acc = 0;
  for (std::size_t i = n - tail; i < n; ++i) acc += tr.q[i] - q0;
  return acc / static_cast<double>(tail);
}

/// Spread of q over the final 20%: a converged trace has a flat tail.
double tail_spread(const sim::SimTrace& tr) {
  const std::size_t n = tr.size(), tail = std::max<std::size_t>(1, n / 5);
  const auto [lo, hi] = std::minmax_element(tr.q.end() - static_cast<std::ptrdiff_t>(tail), tr.q.end());
  return *hi - *lo;
}

}  // namespace

const std::array<IodReference, 2>& iod_reference_gains() {
  static const std::array<IodReference, 2> g{{
      {0.1, 0.4, Gain(-0.3709e-3, 0.0062e-3)},
      {0.15, 0.83, Gain(-0.4729e-4, 0.0079e-4)},
  }};
  return g;
}

const std::array<DdReference, 4>& dd_reference_gains() {
  static const std::array<DdReference, 4> g{{
      {1, 0.1, 0.45, Gain(-0.589e-3, 0.0244e-3), 0.56},
      {1, 0.1, 0.5, Gain(-0.321e-3, 0.0204e-3), 0.48},
      {2, 0.1, 0.45, Gain(-0.575e-3, 0.0240e-3), 0.62},
      {2, 0.1, 0.5, Gain(-0.272e-3, 0.0193e-3), 0.52},
  }};
  return g;
}

std::vector<OracleCheck> oracle_checks(const NetworkParams& params, const Gain& K, std::span<const double> rtts,
                                       std::span<const double> delays) {
  std::vector<OracleCheck> out;
  for (double R0 : rtts) {
    const auto model = linearize<double>(params, equilibrium_at_rtt(params, R0));
    const Eigen::MatrixXd Ad = model.closed_loop_delayed(K.matrix());
    for (double d : delays) {
      OracleCheck c;
      c.R0 = R0;
      c.h = d > 0 ? d : R0;
      c.abscissa = converged_abscissa(model.A, Ad, c.h);
      c.stable = c.abscissa < -OracleOptions{}.margin;
      out.push_back(c);
    }
  }
  return out;
}

void record_oracle(ResultRecord& rec, const std::vector<OracleCheck>& checks, const std::string& prefix) {
  bool all = true;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const std::string p = prefix + std::to_string(i) + ".";
    rec.set(p + "R0", checks[i].R0);
    rec.set(p + "h", checks[i].h);
    rec.set(p + "abscissa", checks[i].abscissa);
    rec.set(p + "stable", checks[i].stable);
    all = all && checks[i].stable;
  }
  rec.set(prefix + "all_stable", all);
}

ResultRecord provenance(const RunConfig& cfg, std::optional<long> seed) {
  ResultRecord rec;
  char hash[16];
  std::snprintf(hash, sizeof hash, "%08x", cfg.hash());
  rec.set("provenance.config_hash", std::string(hash));
  rec.set("provenance.version", AQM_VERSION);
  rec.set("provenance.seed", seed ? std::to_string(*seed) : std::string("none"));
  return rec;
}

ResultRecord run_equilibrium(const RunConfig& cfg) {
  const Equilibrium eq = cfg.nominal();
  const auto model = linearize<double>(cfg.network, eq);
  ResultRecord rec;
  rec.set("R0", eq.rtt);
  rec.set("W0", eq.window);
  rec.set("p0", eq.drop_prob);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) rec.set("A." + std::to_string(i) + std::to_string(j), model.A(i, j));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) rec.set("Ad." + std::to_string(i) + std::to_string(j), model.Ad(i, j));
  rec.set("B.0", model.B(0, 0));
  rec.set("B.1", model.B(1, 0));
  rec.set("h", model.h);
  return rec;
}

CertifiedGain run_synthesis(const RunConfig& cfg) {
  const auto solver = cfg.solver();
  const NetworkParams& params = cfg.network;
  const Equilibrium nominal = cfg.nominal();
  CertifiedGain out;
  ResultRecord& rec = out.record;
  rec.set("method", to_string(cfg.synthesis.method));

  switch (cfg.synthesis.method) {
    case Method::iod: {
      const auto model = linearize<double>(params, nominal);
      const auto syn = iod_synthesize(model, solver);
      if (!syn) throw NoCertificate("iod synthesis", syn.margin);
      out.gain = syn->gain;
      put_gain(rec, "gain.", out.gain);
      rec.set("synthesis.margin", syn->margin);
      rec.set("synthesis.solver_iterations", syn.iterations);
      rec.set("certificate.kind", "iod");
      rec.set("certificate.margin", syn->certificates.front().margin);
      rec.set("certificate.R0", nominal.rtt);
      const std::array<double, 1> rtts{nominal.rtt};
      const auto checks = oracle_checks(params, out.gain, rtts, kIodDelays);
      record_oracle(rec, checks);
      require_oracle(checks);
      break;
    }
    case Method::iod_robust: {
      const auto polytope = build_polytope<double>(params, cfg.R0_min, cfg.R0_max);
      const auto syn = iod_synthesize_robust(polytope, solver);
      if (!syn) throw NoCertificate("robust iod synthesis", syn.margin);
      out.gain = syn->gain;
      put_gain(rec, "gain.", out.gain);
      rec.set("synthesis.margin", syn->margin);
      rec.set("synthesis.solver_iterations", syn.iterations);
      rec.set("certificate.kind", "iod-robust");
      rec.set("certificate.R0_min", cfg.R0_min);
      rec.set("certificate.R0_max", cfg.R0_max);
      for (std::size_t i = 0; i < syn->certificates.size(); ++i)
        rec.set("certificate.vertex." + std::to_string(i) + ".margin", syn->certificates[i].margin);
      const auto rtts = sample_rtts(cfg.R0_min, cfg.R0_max);
      const auto checks = oracle_checks(params, out.gain, rtts, kIodDelays);
      record_oracle(rec, checks);
      require_oracle(checks);
      break;
    }
    case Method::dd: {
      const auto polytope = build_polytope<double>(params, cfg.R0_min, cfg.R0_max);
      RelaxationOptions opt;
      opt.solver = solver;
      opt.h_tol = cfg.synthesis.h_tol;
      opt.max_iterations = cfg.synthesis.relaxation_iterations;
      opt.initial_gain = iod_analytic_gain(params, nominal);
      RelaxationReport rep;
      try {
        rep = dd_relaxation(polytope, cfg.synthesis.r, opt);
      } catch (const NoStartingPoint& e) {
        throw NoCertificate(e.what(), 0.0);
      }
      out.gain = rep.gain;
      put_gain(rec, "gain.", out.gain);
      put_gain(rec, "initial_gain.", rep.initial_gain);
      rec.set("relaxation.h0", rep.h0);
      rec.set("relaxation.converged", rep.converged);
      rec.set("relaxation.iterations", static_cast<int>(rep.iterations.size()));
      for (std::size_t i = 0; i < rep.iterations.size(); ++i) {
        const std::string p = "relaxation." + std::to_string(i) + ".";
        rec.set(p + "h_synthesis", rep.iterations[i].h_synthesis);
        rec.set(p + "h_analysis", rep.iterations[i].h_analysis);
        put_gain(rec, p, rep.iterations[i].gain);
      }
      rec.set("certificate.kind", "dd");
      rec.set("certificate.r", cfg.synthesis.r);
      rec.set("certificate.R0_min", cfg.R0_min);
      rec.set("certificate.R0_max", cfg.R0_max);
      rec.set("certificate.h_m", rep.h_m);
      rec.set("certificate.margin", rep.certificate.margin);
      const auto checks = dd_oracle(params, out.gain, cfg.R0_min, cfg.R0_max, rep.h_m);
      record_oracle(rec, checks);
      require_oracle(checks);
      break;
    }
  }
  return out;
}

CertifiedGain run_analysis(const RunConfig& cfg, const Gain& K) {
  const auto solver = cfg.solver();
  const NetworkParams& params = cfg.network;
  CertifiedGain out;
  out.gain = K;
  ResultRecord& rec = out.record;
  rec.set("method", to_string(cfg.synthesis.method));
  put_gain(rec, "gain.", K);

  switch (cfg.synthesis.method) {
    case Method::iod: {
      const Equilibrium nominal = cfg.nominal();
      const auto res = iod_analysis(linearize<double>(params, nominal), K, solver);
      rec.set("certificate.kind", "iod");
      rec.set("certificate.certified", bool(res));
      rec.set("certificate.margin", res.margin);
      if (!res) throw NoCertificate("iod analysis", res.margin);
      const std::array<double, 1> rtts{nominal.rtt};
      const auto checks = oracle_checks(params, K, rtts, kIodDelays);
      record_oracle(rec, checks);
      require_oracle(checks);
      break;
    }
    case Method::iod_robust: {
      const auto polytope = build_polytope<double>(params, cfg.R0_min, cfg.R0_max);
      bool all = false;
      const auto verdicts = iod_analysis_per_vertex(polytope.vertices, K, solver);
      rec.set("certificate.kind", "iod-robust");
      rec.merge(iod_vertex_record(verdicts, all), "certificate.");
      if (!all) {
        double worst = verdicts.front().margin;
        for (const auto& v : verdicts) worst = std::min(worst, v.margin);
        throw NoCertificate("per-vertex iod analysis", worst);
      }
      const auto rtts = sample_rtts(cfg.R0_min, cfg.R0_max);
      const auto checks = oracle_checks(params, K, rtts, kIodDelays);
      record_oracle(rec, checks);
      require_oracle(checks);
      break;
    }
    case Method::dd: {
      const auto polytope = build_polytope<double>(params, cfg.R0_min, cfg.R0_max);
      const auto cert = dd_max_delay(polytope.vertices, K, cfg.synthesis.r, {}, solver);
      rec.set("certificate.kind", "dd");
      rec.set("certificate.r", cfg.synthesis.r);
      rec.set("certificate.certified", cert.has_value());
      rec.set("certificate.h_m", cert ? std::optional<double>(cert->h) : std::nullopt);
      if (!cert) throw NoCertificate("dd analysis at the lower delay bracket", 0.0);
      rec.set("certificate.margin", cert->margin);
      const auto checks = dd_oracle(params, K, cfg.R0_min, cfg.R0_max, cert->h);
      record_oracle(rec, checks);
      require_oracle(checks);
      break;
    }
  }
  return out;
}

namespace {

std::optional<sim::InitialState> initial_state(const RunConfig& cfg) {
  if (cfg.simulation.initial == InitialKind::empty) return sim::InitialState{1.0, 0.0, 0.0};
  return std::nullopt;
}

}  // namespace

sim::Scenario build_scenario(const RunConfig& cfg, const sim::Controller& controller) {
  const auto& s = cfg.simulation;
  sim::Scenario sc{s.horizon, {}};
  switch (s.scenario) {
    case ScenarioKind::nominal:
      break;
    case ScenarioKind::delay_step:
      sc.disturbances.push_back(sim::DelayStep{s.delay_step, s.t_on});
      break;
    case ScenarioKind::cross_traffic: {
      const double rate = s.cross_rate ? *s.cross_rate
                                       : sim::default_cross_traffic_rate(cfg.network, controller, s.horizon, s.t_on,
                                                                         s.t_off, {s.dt}, initial_state(cfg));
      sc.disturbances.push_back(sim::CrossTraffic{rate, s.t_on, s.t_off});
      break;
    }
  }
  return sc;
}

SimulationRun run_simulation(const RunConfig& cfg, const sim::Controller& controller) {
  SimulationRun run;
  const auto scenario = build_scenario(cfg, controller);
  run.trace = sim::simulate_nonlinear(cfg.network, controller, scenario, {cfg.simulation.dt}, initial_state(cfg));
  if (cfg.simulation.scenario == ScenarioKind::cross_traffic && !cfg.simulation.cross_rate)
    run.trace.notes.push_back(
        "cross_rate chosen automatically: burst magnitude is ambiguous, largest rate <= C/2 keeping q below buffer");
  run.metrics = sim::compute_metrics(run.trace, cfg.network.target_queue, scenario.last_disturbance_end());
  ResultRecord& rec = run.record;
  rec.set("controller", run.trace.controller);
  rec.set("scenario", run.trace.scenario);
  rec.set("dt", run.trace.dt);
  rec.set("samples", static_cast<int>(run.trace.size()));
  rec.merge(metrics_record(run.metrics), "metrics.");
  rec.set("final_offset_pkts", final_offset(run.trace, cfg.network.target_queue));
  for (std::size_t i = 0; i < run.trace.notes.size(); ++i) rec.set("note." + std::to_string(i), run.trace.notes[i]);
  return run;
}

ResultRecord reproduce(const std::string& target, const RunConfig& cfg, const std::filesystem::path& dir) {
  static const std::array<std::string, 5> targets{"table1", "table2", "fig1", "fig2", "fig3"};
  if (std::find(targets.begin(), targets.end(), target) == targets.end())
    throw std::invalid_argument("unknown reproduction target '" + target + "'");
  std::filesystem::create_directories(dir);
  const auto solver = cfg.solver();
  const NetworkParams& params = cfg.network;
  ResultRecord rec;
  rec.set("target", target);

  if (target == "table1") {
    int row = 0;
    for (const auto& ref : iod_reference_gains()) {
      const std::string p = "row." + std::to_string(row++) + ".";
      rec.set(p + "R0_min", ref.R0_min);
      rec.set(p + "R0_max", ref.R0_max);
      const auto polytope = build_polytope<double>(params, ref.R0_min, ref.R0_max);
      put_gain(rec, p + "reference.gain.", ref.K);
      bool all = false;
      rec.merge(iod_vertex_record(iod_analysis_per_vertex(polytope.vertices, ref.K, solver), all),
                p + "reference.certificate.");
      const auto rtts = sample_rtts(ref.R0_min, ref.R0_max);
      record_oracle(rec, oracle_checks(params, ref.K, rtts, kIodDelays), p + "reference.oracle.");
      const auto syn = iod_synthesize_robust(polytope, solver);
      rec.set(p + "ours.certified", bool(syn));
      rec.set(p + "ours.synthesis_margin", syn.margin);
      if (syn) {
        put_gain(rec, p + "ours.gain.", syn->gain);
        for (std::size_t i = 0; i < syn->certificates.size(); ++i)
          rec.set(p + "ours.certificate.vertex." + std::to_string(i) + ".margin", syn->certificates[i].margin);
        record_oracle(rec, oracle_checks(params, syn->gain, rtts, kIodDelays), p + "ours.oracle.");
      }
    }
  } else if (target == "table2") {
    int row = 0;
    for (const auto& ref : dd_reference_gains()) {
      const std::string p = "row." + std::to_string(row++) + ".";
      rec.set(p + "r", ref.r);
      rec.set(p + "R0_min", ref.R0_min);
      rec.set(p + "R0_max", ref.R0_max);
      const auto polytope = build_polytope<double>(params, ref.R0_min, ref.R0_max);
      put_gain(rec, p + "reference.gain.", ref.K);
      rec.set(p + "reference.h_m", ref.h_m);
      const auto at_ref = dd_analysis_step(polytope.vertices, ref.K, ref.r, ref.h_m, solver);
      rec.set(p + "reference.certified_at_h_m", bool(at_ref));
      rec.set(p + "reference.margin_at_h_m", at_ref.margin);
      const auto hmax = dd_max_delay(polytope.vertices, ref.K, ref.r, {}, solver);
      rec.set(p + "reference.h_max", hmax ? std::optional<double>(hmax->h) : std::nullopt);
      if (hmax) record_oracle(rec, dd_oracle(params, ref.K, ref.R0_min, ref.R0_max, hmax->h), p + "reference.oracle.");

      RelaxationOptions opt;
      opt.solver = solver;
      opt.h_tol = cfg.synthesis.h_tol;
      opt.max_iterations = cfg.synthesis.relaxation_iterations;
      const auto rep = dd_relaxation(polytope, ref.r, opt);
      put_gain(rec, p + "ours.gain.", rep.gain);
      rec.set(p + "ours.h_m", rep.h_m);
      rec.set(p + "ours.converged", rep.converged);
      rec.set(p + "ours.iterations", static_cast<int>(rep.iterations.size()));
      rec.set(p + "ours.ratio_to_reference", rep.h_m / ref.h_m);
      record_oracle(rec, dd_oracle(params, rep.gain, ref.R0_min, ref.R0_max, rep.h_m), p + "ours.oracle.");
    }
  } else if (target == "fig1") {
    const auto& ref = dd_reference_gains().front();
    RunConfig c = cfg;
    c.simulation.scenario = ScenarioKind::nominal;
    c.simulation.initial = InitialKind::empty;
    const auto k = run_simulation(c, sim::StateFeedback{ref.K});
    const auto pi = run_simulation(c, sim::PiController{});
    write_trace(dir / "fig1_state_feedback.csv", k.trace);
    write_trace(dir / "fig1_pi.csv", pi.trace);
    rec.merge(dd_gain_record(params, ref, solver), "state_feedback.");
    rec.merge(k.record, "state_feedback.");
    rec.merge(pi.record, "pi.");
    const auto& mk = k.metrics;
    const auto& mp = pi.metrics;
    rec.set("faster_settling", mk.settling_time && (!mp.settling_time || *mk.settling_time < *mp.settling_time));
    rec.set("smaller_overshoot", *mk.overshoot < *mp.overshoot);
  } else {
    const auto& ref = dd_reference_gains().front();
    RunConfig c = cfg;
    c.simulation.initial = InitialKind::equilibrium;
    if (target == "fig2") {
      c.simulation.scenario = ScenarioKind::delay_step;
      c.simulation.delay_step = 0.02;
      c.simulation.t_on = 20;
      c.simulation.horizon = 60;
    } else {
      c.simulation.scenario = ScenarioKind::cross_traffic;
      c.simulation.t_on = 40;
      c.simulation.t_off = 45;
      c.simulation.horizon = 80;
    }
    const auto run = run_simulation(c, sim::StateFeedback{ref.K});
    write_trace(dir / (target + ".csv"), run.trace);
    rec.merge(dd_gain_record(params, ref, solver), "state_feedback.");
    rec.merge(run.record, "state_feedback.");
    rec.set("tail_spread_pkts", tail_spread(run.trace));
  }
  write_text(dir / (target + ".txt"), rec.str());
  return rec;
}

}  // namespace aqm
