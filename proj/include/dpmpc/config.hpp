// INI run configuration: [model], [controller] and [benchmark] sections.

#pragma once

#include "dpmpc/controller.hpp"
#include "dpmpc/simbench.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dpmpc {

struct ConfigError : std::runtime_error {
  int line = 0;
  ConfigError(const std::string& what, int line_no)
      : std::runtime_error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + what : what),
        line(line_no) {}
};

struct RunConfig {
  EpisodeConfig episode;
  RobustnessAxes axes;
  /// Episode length for the robustness sweep; the episode duration if unset.
  std::optional<double> robustness_duration;
};

/// Defaults for one robot: tuned controller options, plant with that robot.
inline RunConfig default_run_config(Robot robot) {
  RunConfig rc;
  rc.episode.plant.robot = robot;
  rc.episode.controller = default_controller_options(robot);
  return rc;
}

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), p);
}

inline double parse_double(const std::string& s) {
  const std::string t = trim(s);
  if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* end = t.data() + t.size();
  auto [p, ec] = std::from_chars(t.data(), end, v);
  if (t.empty() || ec != std::errc() || p != end)
    throw std::invalid_argument("expected a number, got '" + t + "'");
  return v;
}

inline long long parse_int(const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  const char* end = t.data() + t.size();
  auto [p, ec] = std::from_chars(t.data(), end, v);
  if (t.empty() || ec != std::errc() || p != end)
    throw std::invalid_argument("expected an integer, got '" + t + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
  const std::string t = trim(s);
  std::uint64_t v = 0;
  const char* end = t.data() + t.size();
  auto [p, ec] = std::from_chars(t.data(), end, v);
  if (t.empty() || ec != std::errc() || p != end)
    throw std::invalid_argument("expected a non-negative integer, got '" + t + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw std::invalid_argument("expected true/false, got '" + t + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  if (trim(s).empty()) return v;
  for (const auto& item : split(s, ',')) v.push_back(parse_double(item));
  return v;
}

inline std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

inline Vec4 parse_vec4(const std::string& s) {
  const auto v = parse_list(s);
  if (v.size() != 4) throw std::invalid_argument("expected 4 comma-separated numbers");
  return Vec4(v[0], v[1], v[2], v[3]);
}

inline std::string fmt_vec4(const Vec4& v) { return fmt_list({v[0], v[1], v[2], v[3]}); }

inline std::optional<double> parse_opt(const std::string& s) {
  if (trim(s) == "none") return std::nullopt;
  return parse_double(s);
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "none"; }

inline std::vector<Disturbance> parse_disturbances(const std::string& s) {
  const std::string t = trim(s);
  if (t == "none" || t.empty()) return {};
  if (t == "default") return default_disturbances();
  std::vector<Disturbance> out;
  for (const auto& item : split(t, ';')) {
    if (item.empty()) continue;
    const auto f = split(item, ':');
    if (f.size() != 4)
      throw std::invalid_argument("disturbance must be t:joint:torque:duration, got '" + item +
                                  "'");
    Disturbance d;
    d.t = parse_double(f[0]);
    d.joint = f[1] == "active" ? -1 : static_cast<int>(parse_int(f[1]));
    d.torque = parse_double(f[2]);
    d.duration = parse_double(f[3]);
    out.push_back(d);
  }
  return out;
}

inline std::string fmt_disturbances(const std::vector<Disturbance>& ds) {
  if (ds.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& d = ds[i];
    out += (i ? ";" : "") + fmt(d.t) + ":" + (d.joint < 0 ? "active" : std::to_string(d.joint)) +
           ":" + fmt(d.torque) + ":" + fmt(d.duration);
  }
  return out;
}

inline std::vector<std::string> parse_names(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  for (const auto& n : split(s, ',')) {
    scale_parameter(ModelParams{}, n, 1.0);  // validates the name
    out.push_back(n);
  }
  return out;
}

inline std::string fmt_names(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define DPMPC_DBL(sec, name, expr)                                              \
  Field {                                                                       \
    sec, name, [](const RunConfig& c) { return fmt(c.expr); },                  \
        [](RunConfig& c, const std::string& v) { c.expr = parse_double(v); }    \
  }
#define DPMPC_INT(sec, name, expr)                                                          \
  Field {                                                                                   \
    sec, name, [](const RunConfig& c) { return std::to_string(c.expr); },                   \
        [](RunConfig& c, const std::string& v) {                                            \
          c.expr = static_cast<decltype(c.expr)>(parse_int(v));                            \
        }                                                                                   \
  }
#define DPMPC_BOOL(sec, name, expr)                                             \
  Field {                                                                       \
    sec, name, [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.expr = parse_bool(v); }      \
  }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      // [model]
      Field{"model", "robot",
            [](const RunConfig& c) { return std::string(to_string(c.episode.plant.robot)); },
            [](RunConfig& c, const std::string& v) { c.episode.plant.robot = robot_from_string(trim(v)); }},
      DPMPC_DBL("model", "m1", episode.plant.m1),
      DPMPC_DBL("model", "m2", episode.plant.m2),
      DPMPC_DBL("model", "l1", episode.plant.l1),
      DPMPC_DBL("model", "l2", episode.plant.l2),
      DPMPC_DBL("model", "r1", episode.plant.r1),
      DPMPC_DBL("model", "r2", episode.plant.r2),
      DPMPC_DBL("model", "I1", episode.plant.I1),
      DPMPC_DBL("model", "I2", episode.plant.I2),
      DPMPC_DBL("model", "b1", episode.plant.b1),
      DPMPC_DBL("model", "b2", episode.plant.b2),
      DPMPC_DBL("model", "cf1", episode.plant.cf1),
      DPMPC_DBL("model", "cf2", episode.plant.cf2),
      DPMPC_DBL("model", "g", episode.plant.g),
      DPMPC_DBL("model", "tau_max", episode.plant.tau_max),
      DPMPC_DBL("model", "v_max", episode.plant.v_max),
      DPMPC_DBL("model", "friction_smoothing", episode.plant.friction_smoothing),
      // [controller]
      DPMPC_INT("controller", "N_horizon", episode.controller.N_horizon),
      DPMPC_DBL("controller", "prediction_horizon", episode.controller.prediction_horizon),
      DPMPC_INT("controller", "Nlp_max_iter", episode.controller.Nlp_max_iter),
      DPMPC_DBL("controller", "max_solve_time", episode.controller.max_solve_time),
      Field{"controller", "solver_type",
            [](const RunConfig& c) { return std::string(to_string(c.episode.controller.solver_type)); },
            [](RunConfig& c, const std::string& v) {
              c.episode.controller.solver_type = backend_from_string(trim(v));
            }},
      DPMPC_BOOL("controller", "wrap_angle", episode.controller.wrap_angle),
      DPMPC_BOOL("controller", "warm_start", episode.controller.warm_start),
      Field{"controller", "scaling",
            [](const RunConfig& c) { return fmt_list(c.episode.controller.scaling); },
            [](RunConfig& c, const std::string& v) { c.episode.controller.scaling = parse_list(v); }},
      DPMPC_BOOL("controller", "nonuniform_grid", episode.controller.nonuniform_grid),
      DPMPC_BOOL("controller", "use_energy_for_terminal_cost",
                 episode.controller.use_energy_for_terminal_cost),
      DPMPC_BOOL("controller", "fallback_on_solver_fail", episode.controller.fallback_on_solver_fail),
      DPMPC_DBL("controller", "friction_compensation_on_inactive_joint",
                episode.controller.friction_compensation_on_inactive_joint),
      DPMPC_DBL("controller", "mpc_cycle_dt", episode.controller.mpc_cycle_dt),
      DPMPC_BOOL("controller", "pd_tracking", episode.controller.pd_tracking),
      DPMPC_DBL("controller", "outer_cycle_dt", episode.controller.outer_cycle_dt),
      Field{"controller", "pd_KP", [](const RunConfig& c) { return fmt_opt(c.episode.controller.pd_KP); },
            [](RunConfig& c, const std::string& v) { c.episode.controller.pd_KP = parse_opt(v); }},
      Field{"controller", "pd_KD", [](const RunConfig& c) { return fmt_opt(c.episode.controller.pd_KD); },
            [](RunConfig& c, const std::string& v) { c.episode.controller.pd_KD = parse_opt(v); }},
      Field{"controller", "pd_KI", [](const RunConfig& c) { return fmt_opt(c.episode.controller.pd_KI); },
            [](RunConfig& c, const std::string& v) { c.episode.controller.pd_KI = parse_opt(v); }},
      DPMPC_BOOL("controller", "embed_angles", episode.controller.embed_angles),
      Field{"controller", "Q", [](const RunConfig& c) { return fmt_vec4(c.episode.controller.Q); },
            [](RunConfig& c, const std::string& v) { c.episode.controller.Q = parse_vec4(v); }},
      DPMPC_DBL("controller", "R", episode.controller.R),
      Field{"controller", "Qf", [](const RunConfig& c) { return fmt_vec4(c.episode.controller.Qf); },
            [](RunConfig& c, const std::string& v) { c.episode.controller.Qf = parse_vec4(v); }},
      DPMPC_DBL("controller", "energy_weight", episode.controller.energy_weight),
      DPMPC_BOOL("controller", "energy_terminal_keeps_state",
                 episode.controller.energy_terminal_keeps_state),
      DPMPC_DBL("controller", "qp_solver_tolerance", episode.controller.qp_solver_tolerance),
      DPMPC_DBL("controller", "kkt_tolerance", episode.controller.kkt_tolerance),
      DPMPC_INT("controller", "warm_start_iterations", episode.controller.warm_start_iterations),
      DPMPC_DBL("controller", "initial_torque", episode.controller.initial_torque),
      DPMPC_DBL("controller", "integrator_max_step", episode.controller.integrator_max_step),
      // [benchmark]
      DPMPC_DBL("benchmark", "duration", episode.duration),
      DPMPC_DBL("benchmark", "dt_plant", episode.dt_plant),
      Field{"benchmark", "seed", [](const RunConfig& c) { return std::to_string(c.episode.seed); },
            [](RunConfig& c, const std::string& v) { c.episode.seed = parse_u64(v); }},
      DPMPC_DBL("benchmark", "velocity_noise_std", episode.velocity_noise_std),
      DPMPC_DBL("benchmark", "torque_noise_std", episode.torque_noise_std),
      DPMPC_DBL("benchmark", "delay", episode.delay),
      Field{"benchmark", "disturbances",
            [](const RunConfig& c) { return fmt_disturbances(c.episode.disturbances); },
            [](RunConfig& c, const std::string& v) { c.episode.disturbances = parse_disturbances(v); }},
      Field{"benchmark", "initial_state",
            [](const RunConfig& c) { return fmt_vec4(c.episode.initial_state); },
            [](RunConfig& c, const std::string& v) { c.episode.initial_state = parse_vec4(v); }},
      Field{"benchmark", "target", [](const RunConfig& c) { return fmt_vec4(c.episode.target); },
            [](RunConfig& c, const std::string& v) { c.episode.target = parse_vec4(v); }},
      DPMPC_DBL("benchmark", "goal_height_fraction", episode.goal_height_fraction),
      DPMPC_DBL("benchmark", "success_hold_time", episode.success_hold_time),
      DPMPC_INT("benchmark", "record_decimation", episode.record_decimation),
      DPMPC_BOOL("benchmark", "record_timing", episode.record_timing),
      Field{"benchmark", "robustness_parameters",
            [](const RunConfig& c) { return fmt_names(c.axes.parameters); },
            [](RunConfig& c, const std::string& v) { c.axes.parameters = parse_names(v); }},
      Field{"benchmark", "robustness_factors",
            [](const RunConfig& c) { return fmt_list(c.axes.param_factors); },
            [](RunConfig& c, const std::string& v) { c.axes.param_factors = parse_list(v); }},
      Field{"benchmark", "robustness_velocity_noise",
            [](const RunConfig& c) { return fmt_list(c.axes.velocity_noise); },
            [](RunConfig& c, const std::string& v) { c.axes.velocity_noise = parse_list(v); }},
      Field{"benchmark", "robustness_torque_noise",
            [](const RunConfig& c) { return fmt_list(c.axes.torque_noise); },
            [](RunConfig& c, const std::string& v) { c.axes.torque_noise = parse_list(v); }},
      Field{"benchmark", "robustness_delays",
            [](const RunConfig& c) { return fmt_list(c.axes.delays); },
            [](RunConfig& c, const std::string& v) { c.axes.delays = parse_list(v); }},
      Field{"benchmark", "robustness_duration",
            [](const RunConfig& c) { return fmt_opt(c.robustness_duration); },
            [](RunConfig& c, const std::string& v) { c.robustness_duration = parse_opt(v); }},
      DPMPC_INT("benchmark", "workers", axes.workers),
  };
  return f;
}

#undef DPMPC_DBL
#undef DPMPC_INT
#undef DPMPC_BOOL

struct Entry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

inline std::vector<Entry> tokenize(std::istream& in) {
  std::vector<Entry> out;
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    // ';' separates disturbances, so only '#' and a leading ';' start comments
    std::string line = raw;
    if (const auto h = raw.find('#'); h != std::string::npos) line = raw.substr(0, h);
    line = trim(line);
    if (line.empty() || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header '" + line + "'", line_no);
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "controller" && section != "benchmark")
        throw ConfigError("unknown section [" + section + "]", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value", line_no);
    if (section.empty()) throw ConfigError("key outside of a section", line_no);
    out.push_back({section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no});
  }
  return out;
}

}  // namespace config_detail

/// Parses INI text. Defaults come from default_run_config() for the robot
/// named in [model] (or `robot_override`); every key present overrides them.
inline RunConfig parse_config(std::istream& in, std::optional<Robot> robot_override = std::nullopt) {
  using namespace config_detail;
  const auto entries = tokenize(in);

  Robot robot = Robot::Pendubot;
  for (const auto& e : entries) {
    if (e.section == "model" && e.key == "robot") {
      try {
        robot = robot_from_string(e.value);
      } catch (const std::exception& ex) {
        throw ConfigError(ex.what(), e.line);
      }
    }
  }
  if (robot_override) robot = *robot_override;
  RunConfig rc = default_run_config(robot);

  std::vector<std::string> seen;
  for (const auto& e : entries) {
    const Field* field = nullptr;
    for (const auto& f : fields())
      if (e.section == f.section && e.key == f.key) field = &f;
    if (!field) throw ConfigError("unknown key '" + e.key + "' in [" + e.section + "]", e.line);
    const std::string id = e.section + "." + e.key;
    for (const auto& s : seen)
      if (s == id) throw ConfigError("duplicate key '" + e.key + "'", e.line);
    seen.push_back(id);
    if (e.section == "model" && e.key == "robot") continue;
    try {
      field->set(rc, e.value);
    } catch (const std::exception& ex) {
      throw ConfigError(std::string(e.key) + ": " + ex.what(), e.line);
    }
  }
  rc.episode.plant.robot = robot;
  try {
    rc.episode.validate();
  } catch (const std::exception& ex) {
    throw ConfigError(ex.what(), 0);
  }
  return rc;
}

inline RunConfig parse_config(const std::string& text,
                              std::optional<Robot> robot_override = std::nullopt) {
  std::istringstream is(text);
  return parse_config(is, robot_override);
}

inline RunConfig load_config(const std::string& path,
                             std::optional<Robot> robot_override = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'", 0);
  return parse_config(in, robot_override);
}

/// Writes every key; parse_config(serialize_config(c)) reproduces c.
inline std::string serialize_config(const RunConfig& rc) {
  std::string out;
  std::string section;
  for (const auto& f : config_detail::fields()) {
    if (section != f.section) {
      section = f.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(rc) + "\n";
  }
  return out;
}

}  // namespace dpmpc
