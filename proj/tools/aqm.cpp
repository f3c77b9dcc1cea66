// aqm: synthesize, certify and simulate state-feedback AQM controllers.
//
// Exit status: 0 ok, 2 configuration error, 3 modeling error,
// 4 no certificate, 5 oracle inconclusive.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "aqm/config.hpp"
#include "aqm/pipeline.hpp"
#include "aqm/stability.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kModel = 3, kNoCertificate = 4, kOracle = 5 };

struct Options {
  std::string config;
  std::string out;
  std::string method;
  int r = 0;
  std::optional<long> seed;
  std::string format = "summary";
  std::string target;
};

aqm::RunConfig load(const Options& o) {
  aqm::RunConfig cfg;
  if (!o.config.empty()) cfg = aqm::load_config(o.config);
  if (!o.method.empty()) cfg.synthesis.method = aqm::parse_method(o.method);
  if (o.r != 0) cfg.synthesis.r = o.r;
  cfg.validate();
  return cfg;
}

void emit(const Options& o, const aqm::RunConfig& cfg, aqm::ResultRecord rec, const std::string& name) {
  aqm::ResultRecord full = aqm::provenance(cfg, o.seed);
  full.merge(rec);
  if (o.format == "summary") full.write(std::cout);
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    std::ofstream os(std::filesystem::path(o.out) / (name + ".txt"));
    full.write(os);
    std::ofstream(std::filesystem::path(o.out) / "config.txt") << cfg.canonical();
  }
}

int cmd_equilibrium(const Options& o) {
  const auto cfg = load(o);
  emit(o, cfg, aqm::run_equilibrium(cfg), "equilibrium");
  return kOk;
}

int cmd_synth(const Options& o) {
  const auto cfg = load(o);
  emit(o, cfg, aqm::run_synthesis(cfg).record, "synth");
  return kOk;
}

int cmd_analyze(const Options& o) {
  const auto cfg = load(o);
  if (!cfg.synthesis.gain) throw aqm::ConfigError("analyze needs synthesis.gain");
  emit(o, cfg, aqm::run_analysis(cfg, *cfg.synthesis.gain).record, "analyze");
  return kOk;
}

int cmd_simulate(const Options& o) {
  const auto cfg = load(o);
  aqm::ResultRecord rec;
  aqm::sim::Controller controller = aqm::sim::PiController{};
  if (cfg.simulation.controller == aqm::ControllerKind::state_feedback) {
    const auto certified = cfg.synthesis.gain ? aqm::run_analysis(cfg, *cfg.synthesis.gain) : aqm::run_synthesis(cfg);
    rec.merge(certified.record);
    controller = aqm::sim::StateFeedback{certified.gain};
  }
  const auto run = aqm::run_simulation(cfg, controller);
  rec.merge(run.record, "simulation.");
  if (o.format == "csv") aqm::sim::write_csv(std::cout, run.trace);
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    std::ofstream os(std::filesystem::path(o.out) / "trace.csv");
    aqm::sim::write_csv(os, run.trace);
  }
  emit(o, cfg, rec, "simulate");
  return kOk;
}

int cmd_reproduce(const Options& o) {
  const auto cfg = load(o);
  const std::string dir = o.out.empty() ? cfg.out : o.out;
  auto rec = aqm::reproduce(o.target, cfg, dir);
  Options quiet = o;
  quiet.out.clear();
  emit(quiet, cfg, rec, o.target);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust state-feedback AQM: synthesis, certification and fluid simulation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--method", o.method, "iod | iod-robust | dd")
        ->check(CLI::IsMember({"iod", "iod-robust", "dd"}));
    sub->add_option("--r", o.r, "delay discretization step")->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "recorded for provenance; all computations are deterministic");
    sub->add_option("--format", o.format, "csv | summary")->check(CLI::IsMember({"csv", "summary"}));
  };

  auto* eq = app.add_subcommand("equilibrium", "operating point and linearized model");
  auto* synth = app.add_subcommand("synth", "synthesize and certify a gain");
  auto* analyze = app.add_subcommand("analyze", "certify the gain given in the config");
  auto* simulate = app.add_subcommand("simulate", "nonlinear fluid simulation");
  auto* repro = app.add_subcommand("reproduce", "regenerate a table or figure bundle");
  for (auto* s : {eq, synth, analyze, simulate, repro}) common(s);
  repro->add_option("target", o.target, "table1 | table2 | fig1 | fig2 | fig3")
      ->required()
      ->check(CLI::IsMember({"table1", "table2", "fig1", "fig2", "fig3"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*eq) return cmd_equilibrium(o);
    if (*synth) return cmd_synth(o);
    if (*analyze) return cmd_analyze(o);
    if (*simulate) return cmd_simulate(o);
    return cmd_reproduce(o);
  } catch (const aqm::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kConfig;
  } catch (const aqm::InvalidParams& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kConfig;
  } catch (const aqm::sim::InvalidSimulation& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kConfig;
  } catch (const aqm::InfeasibleOperatingPoint& e) {
    std::cerr << e.what() << '\n';
    return kModel;
  } catch (const aqm::NoCertificate& e) {
    std::cerr << e.what() << " (best margin " << aqm::format_number(e.best_margin) << ")\n";
    return kNoCertificate;
  } catch (const aqm::IllConditionedSynthesis& e) {
    std::cerr << "no certificate: " << e.what() << '\n';
    return kNoCertificate;
  } catch (const aqm::CertificateContradicted& e) {
    std::cerr << "no certificate: " << e.what() << '\n';
    return kNoCertificate;
  } catch (const aqm::OracleInconclusive& e) {
    std::cerr << e.what() << '\n';
    return kOracle;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
