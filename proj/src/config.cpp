#include "aqm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include <boost/algorithm/string/trim.hpp>
#include <boost/crc.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace aqm {

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"network", {"N", "C", "Tp", "q0", "buffer"}},
      {"uncertainty", {"R0_min", "R0_max"}},
      {"synthesis", {"method", "r", "feas_tol", "max_iterations", "h_tol", "relaxation_iterations", "R0", "gain"}},
      {"simulation",
       {"scenario", "controller", "initial", "dt", "horizon", "delay_step", "t_on", "t_off", "cross_rate"}},
      {"output", {"dir"}},
  };
  return s;
}

double to_double(const std::string& key, std::string v) {
  boost::algorithm::trim(v);
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": not a number: '" + v + "'");
  return out;
}

int to_int(const std::string& key, std::string v) {
  boost::algorithm::trim(v);
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": not an integer: '" + v + "'");
  return out;
}

Gain to_gain(const std::string& key, const std::string& v) {
  std::vector<double> k;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) k.push_back(to_double(key, item));
  if (k.size() != 2) throw ConfigError(key + ": expected two comma-separated entries");
  return Gain(k[0], k[1]);
}

template <typename E>
E pick(const std::string& key, const std::string& v, const std::map<std::string, E>& options) {
  const auto it = options.find(boost::algorithm::trim_copy(v));
  if (it == options.end()) throw ConfigError(key + ": unknown value '" + v + "'");
  return it->second;
}

const std::map<std::string, Method> kMethods{{"iod", Method::iod}, {"iod-robust", Method::iod_robust}, {"dd", Method::dd}};
const std::map<std::string, ScenarioKind> kScenarios{{"nominal", ScenarioKind::nominal},
                                                     {"delay-step", ScenarioKind::delay_step},
                                                     {"cross-traffic", ScenarioKind::cross_traffic}};
const std::map<std::string, ControllerKind> kControllers{{"state-feedback", ControllerKind::state_feedback},
                                                         {"pi", ControllerKind::pi}};
const std::map<std::string, InitialKind> kInitial{{"equilibrium", InitialKind::equilibrium},
                                                  {"empty", InitialKind::empty}};

template <typename E>
std::string name_of(E value, const std::map<std::string, E>& options) {
  for (const auto& [k, v] : options)
    if (v == value) return k;
  return "?";
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(Method m) { return name_of(m, kMethods); }

Method parse_method(const std::string& s) { return pick("method", s, kMethods); }

void RunConfig::validate() const {
  try {
    network.validate();
  } catch (const InvalidParams& e) {
    throw ConfigError(e.what());
  }
  if (!(R0_min > 0) || !(R0_max >= R0_min) || !std::isfinite(R0_max)) throw ConfigError("need 0 < R0_min <= R0_max");
  const auto& s = synthesis;
  if (s.r < 1) throw ConfigError("r must be >= 1");
  if (!(s.feas_tol > 0) || !(s.h_tol > 0)) throw ConfigError("tolerances must be positive");
  if (s.max_iterations < 1 || s.relaxation_iterations < 1) throw ConfigError("iteration caps must be positive");
  if (s.R0 && !(*s.R0 > 0)) throw ConfigError("R0 must be positive");
  if (s.gain && !s.gain->k.allFinite()) throw ConfigError("gain must be finite");
  const auto& m = simulation;
  if (!(m.dt > 0) || !(m.horizon > 0)) throw ConfigError("dt and horizon must be positive");
  if (m.scenario != ScenarioKind::nominal && (m.t_on < 0 || m.t_on > m.horizon))
    throw ConfigError("t_on outside the horizon");
  if (m.scenario == ScenarioKind::cross_traffic && !(m.t_on <= m.t_off && m.t_off <= m.horizon))
    throw ConfigError("need t_on <= t_off <= horizon");
  if (m.cross_rate && !(*m.cross_rate >= 0)) throw ConfigError("cross_rate must be >= 0");
  if (out.empty()) throw ConfigError("output dir must be non-empty");
}

Equilibrium RunConfig::nominal() const {
  return synthesis.R0 ? equilibrium_at_rtt(network, *synthesis.R0) : equilibrium(network);
}

sdp::SolverOptions RunConfig::solver() const {
  sdp::SolverOptions o;
  o.feas_tol = synthesis.feas_tol;
  o.max_iterations = synthesis.max_iterations;
  return o;
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  os << "network.N=" << num(network.sessions) << '\n'
     << "network.C=" << num(network.capacity) << '\n'
     << "network.Tp=" << num(network.propagation) << '\n'
     << "network.q0=" << num(network.target_queue) << '\n'
     << "network.buffer=" << num(network.buffer) << '\n'
     << "uncertainty.R0_min=" << num(R0_min) << '\n'
     << "uncertainty.R0_max=" << num(R0_max) << '\n'
     << "synthesis.method=" << to_string(synthesis.method) << '\n'
     << "synthesis.r=" << synthesis.r << '\n'
     << "synthesis.feas_tol=" << num(synthesis.feas_tol) << '\n'
     << "synthesis.max_iterations=" << synthesis.max_iterations << '\n'
     << "synthesis.h_tol=" << num(synthesis.h_tol) << '\n'
     << "synthesis.relaxation_iterations=" << synthesis.relaxation_iterations << '\n'
     << "synthesis.R0=" << (synthesis.R0 ? num(*synthesis.R0) : "exact") << '\n'
     << "synthesis.gain="
     << (synthesis.gain ? num(synthesis.gain->k1()) + "," + num(synthesis.gain->k2()) : "synthesize") << '\n'
     << "simulation.scenario=" << name_of(simulation.scenario, kScenarios) << '\n'
     << "simulation.controller=" << name_of(simulation.controller, kControllers) << '\n'
     << "simulation.initial=" << name_of(simulation.initial, kInitial) << '\n'
     << "simulation.dt=" << num(simulation.dt) << '\n'
     << "simulation.horizon=" << num(simulation.horizon) << '\n'
     << "simulation.delay_step=" << num(simulation.delay_step) << '\n'
     << "simulation.t_on=" << num(simulation.t_on) << '\n'
     << "simulation.t_off=" << num(simulation.t_off) << '\n'
     << "simulation.cross_rate=" << (simulation.cross_rate ? num(*simulation.cross_rate) : "auto") << '\n'
     << "output.dir=" << out << '\n';
  return os.str();
}

std::uint32_t RunConfig::hash() const {
  const std::string text = canonical();
  boost::crc_32_type crc;
  crc.process_bytes(text.data(), text.size());
  return crc.checksum();
}

RunConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    const auto known = schema().find(section);
    if (known == schema().end()) {
      if (body.empty()) throw ConfigError("key outside any section: '" + section + "'");
      throw ConfigError("unknown section [" + section + "]");
    }
    for (const auto& [key, node] : body) {
      if (!known->second.count(key)) throw ConfigError("unknown key '" + section + "." + key + "'");
      const std::string v = node.get_value<std::string>();
      const std::string full = section + "." + key;
      if (section == "network") {
        const double x = to_double(full, v);
        if (key == "N") cfg.network.sessions = x;
        else if (key == "C") cfg.network.capacity = x;
        else if (key == "Tp") cfg.network.propagation = x;
        else if (key == "q0") cfg.network.target_queue = x;
        else cfg.network.buffer = x;
      } else if (section == "uncertainty") {
        (key == "R0_min" ? cfg.R0_min : cfg.R0_max) = to_double(full, v);
      } else if (section == "synthesis") {
        auto& s = cfg.synthesis;
        if (key == "method") s.method = pick(full, v, kMethods);
        else if (key == "r") s.r = to_int(full, v);
        else if (key == "feas_tol") s.feas_tol = to_double(full, v);
        else if (key == "max_iterations") s.max_iterations = to_int(full, v);
        else if (key == "h_tol") s.h_tol = to_double(full, v);
        else if (key == "relaxation_iterations") s.relaxation_iterations = to_int(full, v);
        else if (key == "R0") s.R0 = to_double(full, v);
        else s.gain = to_gain(full, v);
      } else if (section == "simulation") {
        auto& m = cfg.simulation;
        if (key == "scenario") m.scenario = pick(full, v, kScenarios);
        else if (key == "controller") m.controller = pick(full, v, kControllers);
        else if (key == "initial") m.initial = pick(full, v, kInitial);
        else if (key == "dt") m.dt = to_double(full, v);
        else if (key == "horizon") m.horizon = to_double(full, v);
        else if (key == "delay_step") m.delay_step = to_double(full, v);
        else if (key == "t_on") m.t_on = to_double(full, v);
        else if (key == "t_off") m.t_off = to_double(full, v);
        else m.cross_rate = to_double(full, v);
      } else {
        cfg.out = boost::algorithm::trim_copy(v);
      }
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return parse_config(in);
}

}  // namespace aqm
