#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clockspec/cavity.hpp"
#include "clockspec/hamiltonian.hpp"
#include "clockspec/spectro.hpp"

namespace clockspec {

// Configuration problem, carrying a line-anchored location when one is known.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct FieldSweepConfig {
  double min_T = 0.0;
  double max_T = 0.25;
  int points = 200;
  double theta_deg = 0.0;
  double phi_deg = 0.0;

  double theta_rad() const { return theta_deg * M_PI / 180.0; }
  double phi_rad() const { return phi_deg * M_PI / 180.0; }
};

struct FrequencyGridConfig {
  double min_GHz = 0.01;
  double max_GHz = 14.0;
  int points = 500;
};

struct NormalizationConfig {
  double delta_field_T = 0.012;
  double reference_field_T = 0.25;
};

struct OutputConfig {
  std::string dir = "out";
  std::string format = "csv";  // csv | json
};

// One file drives every subcommand; keys carry their units.
struct RunConfig {
  SpinSystem spin_system;
  FieldSweepConfig field_sweep;
  FrequencyGridConfig frequency_grid;
  double temperature_K = 4.2;
  CouplingDensity coupling;
  BroadeningModel broadening;  // includes the dipolar distribution
  int field_average_samples = 200;
  bool seed_provided = false;  // MC runs refuse to start without a seed
  TransitionOptions transitions;
  CavityModel cavity;
  NormalizationConfig normalization;
  OutputConfig output;
  int threads = 0;  // 0 = machine parallelism

  MapGrid map_grid() const {
    MapGrid g;
    g.field_min_T = field_sweep.min_T;
    g.field_max_T = field_sweep.max_T;
    g.field_points = field_sweep.points;
    g.freq_min_GHz = frequency_grid.min_GHz;
    g.freq_max_GHz = frequency_grid.max_GHz;
    g.freq_points = frequency_grid.points;
    g.theta_rad = field_sweep.theta_rad();
    g.phi_rad = field_sweep.phi_rad();
    return g;
  }

  TransmissionOptions transmission_options() const {
    TransmissionOptions o;
    o.transitions = transitions;
    o.field_average_samples = field_average_samples;
    return o;
  }

  void validate() const {
    spin_system.validate();
    if (field_sweep.points < 1) throw ConfigError("field_sweep.points must be >= 1");
    if (!(field_sweep.max_T > field_sweep.min_T)) {
      throw ConfigError("field_sweep range must be increasing");
    }
    if (frequency_grid.points < 1) throw ConfigError("frequency_grid.points must be >= 1");
    if (!(frequency_grid.max_GHz > frequency_grid.min_GHz)) {
      throw ConfigError("frequency_grid range must be increasing");
    }
    if (!(temperature_K > 0.0)) throw ConfigError("temperature_K must be positive");
    if (coupling.g0_GHz < 0.0) throw ConfigError("coupling.g0_GHz must be non-negative");
    if (!(broadening.t1_s > 0.0) || !(broadening.t2_clock_s > 0.0)) {
      throw ConfigError("broadening times must be positive");
    }
    if (field_average_samples < 1) {
      throw ConfigError("dipolar.field_average_samples must be >= 1");
    }
    try {
      broadening.dipolar.validate();
      cavity.validate();
    } catch (const std::invalid_argument& err) {
      throw ConfigError(err.what());
    }
    if (output.format != "csv" && output.format != "json") {
      throw ConfigError("output.format must be csv or json");
    }
    if (broadening.dipolar.active() && !seed_provided) {
      throw ConfigError(
          "dipolar averaging is enabled: set dipolar.seed (or pass --seed)");
    }
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::string& section,
                       const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "' in " + section);
    }
  }
}

template <typename T>
void fetch(const nlohmann::json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("wrong type for key '") + key + "'");
  }
}

inline DipolarLattice parse_lattice(const nlohmann::json& j) {
  check_keys(j, "dipolar.lattice", {"cell_nm", "sites_frac", "moment_mu_b", "cutoff_nm"});
  DipolarLattice lat;
  if (j.contains("cell_nm")) {
    const auto rows = j.at("cell_nm").get<std::vector<std::vector<double>>>();
    if (rows.size() != 3 || rows[0].size() != 3 || rows[1].size() != 3 ||
        rows[2].size() != 3) {
      throw ConfigError("dipolar.lattice.cell_nm must be a 3x3 array");
    }
    // input rows are the lattice vectors; store them as columns
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) lat.cell_nm(c, r) = rows[static_cast<std::size_t>(r)]
                                                          [static_cast<std::size_t>(c)];
    }
  }
  if (j.contains("sites_frac")) {
    const auto sites = j.at("sites_frac").get<std::vector<std::vector<double>>>();
    lat.sites_frac.clear();
    for (const auto& s : sites) {
      if (s.size() != 3) throw ConfigError("dipolar.lattice.sites_frac entries need 3 values");
      lat.sites_frac.emplace_back(s[0], s[1], s[2]);
    }
  }
  fetch(j, "moment_mu_b", lat.moment_mu_b);
  fetch(j, "cutoff_nm", lat.cutoff_nm);
  return lat;
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, "config root",
                     {"spin_system", "field_sweep", "frequency_grid", "temperature_K",
                      "coupling", "broadening", "dipolar", "transitions", "cavity",
                      "normalization", "output", "threads"});
  RunConfig cfg;

  if (j.contains("spin_system")) {
    const auto& s = j.at("spin_system");
    detail::check_keys(s, "spin_system",
                       {"j_electronic", "i_nuclear", "g_j", "b20_cm1", "b40_cm1",
                        "b60_cm1", "b44_cm1", "a_hyperfine_cm1"});
    detail::fetch(s, "j_electronic", cfg.spin_system.j_electronic);
    detail::fetch(s, "i_nuclear", cfg.spin_system.i_nuclear);
    detail::fetch(s, "g_j", cfg.spin_system.g_j);
    detail::fetch(s, "b20_cm1", cfg.spin_system.b20_cm1);
    detail::fetch(s, "b40_cm1", cfg.spin_system.b40_cm1);
    detail::fetch(s, "b60_cm1", cfg.spin_system.b60_cm1);
    detail::fetch(s, "b44_cm1", cfg.spin_system.b44_cm1);
    detail::fetch(s, "a_hyperfine_cm1", cfg.spin_system.a_hyperfine_cm1);
  }
  if (j.contains("field_sweep")) {
    const auto& s = j.at("field_sweep");
    detail::check_keys(s, "field_sweep", {"min_T", "max_T", "points", "theta_deg", "phi_deg"});
    detail::fetch(s, "min_T", cfg.field_sweep.min_T);
    detail::fetch(s, "max_T", cfg.field_sweep.max_T);
    detail::fetch(s, "points", cfg.field_sweep.points);
    detail::fetch(s, "theta_deg", cfg.field_sweep.theta_deg);
    detail::fetch(s, "phi_deg", cfg.field_sweep.phi_deg);
  }
  if (j.contains("frequency_grid")) {
    const auto& s = j.at("frequency_grid");
    detail::check_keys(s, "frequency_grid", {"min_GHz", "max_GHz", "points"});
    detail::fetch(s, "min_GHz", cfg.frequency_grid.min_GHz);
    detail::fetch(s, "max_GHz", cfg.frequency_grid.max_GHz);
    detail::fetch(s, "points", cfg.frequency_grid.points);
  }
  detail::fetch(j, "temperature_K", cfg.temperature_K);
  if (j.contains("coupling")) {
    const auto& s = j.at("coupling");
    detail::check_keys(s, "coupling", {"g0_GHz", "frequency_exponent", "reference_freq_GHz"});
    detail::fetch(s, "g0_GHz", cfg.coupling.g0_GHz);
    detail::fetch(s, "frequency_exponent", cfg.coupling.frequency_exponent);
    detail::fetch(s, "reference_freq_GHz", cfg.coupling.reference_freq_GHz);
  }
  if (j.contains("broadening")) {
    const auto& s = j.at("broadening");
    detail::check_keys(s, "broadening", {"t1_s", "t2_clock_s", "omega_clock_GHz"});
    detail::fetch(s, "t1_s", cfg.broadening.t1_s);
    detail::fetch(s, "t2_clock_s", cfg.broadening.t2_clock_s);
    detail::fetch(s, "omega_clock_GHz", cfg.broadening.omega_clock_GHz);
  }
  if (j.contains("dipolar")) {
    const auto& s = j.at("dipolar");
    detail::check_keys(s, "dipolar",
                       {"mode", "sigma_T", "mc_samples", "field_average_samples", "seed",
                        "lattice"});
    std::string mode = "gaussian";
    detail::fetch(s, "mode", mode);
    if (mode == "gaussian") {
      cfg.broadening.dipolar.mode = DipolarDistribution::Mode::gaussian;
    } else if (mode == "lattice_mc") {
      cfg.broadening.dipolar.mode = DipolarDistribution::Mode::lattice_mc;
    } else {
      throw ConfigError("dipolar.mode must be gaussian or lattice_mc");
    }
    detail::fetch(s, "sigma_T", cfg.broadening.dipolar.sigma_T);
    detail::fetch(s, "mc_samples", cfg.broadening.dipolar.mc_samples);
    detail::fetch(s, "field_average_samples", cfg.field_average_samples);
    if (s.contains("seed")) {
      detail::fetch(s, "seed", cfg.broadening.dipolar.seed);
      cfg.seed_provided = true;
    }
    if (s.contains("lattice")) {
      cfg.broadening.dipolar.lattice = detail::parse_lattice(s.at("lattice"));
    }
  }
  if (j.contains("transitions")) {
    const auto& s = j.at("transitions");
    detail::check_keys(s, "transitions",
                       {"max_freq_GHz", "matrix_element_floor",
                        "nuclear_projection_window", "drive_tilt_deg"});
    detail::fetch(s, "max_freq_GHz", cfg.transitions.max_freq_GHz);
    detail::fetch(s, "matrix_element_floor", cfg.transitions.matrix_element_floor);
    detail::fetch(s, "nuclear_projection_window", cfg.transitions.nuclear_projection_window);
    double tilt_deg = 0.0;
    detail::fetch(s, "drive_tilt_deg", tilt_deg);
    cfg.transitions.drive_tilt_rad = tilt_deg * M_PI / 180.0;
  }
  if (j.contains("cavity")) {
    const auto& s = j.at("cavity");
    detail::check_keys(s, "cavity",
                       {"omega_r_GHz", "kappa_GHz", "g_n_full_GHz", "concentration_x",
                        "population_weighting", "detuning_window_GHz"});
    detail::fetch(s, "omega_r_GHz", cfg.cavity.omega_r_GHz);
    detail::fetch(s, "kappa_GHz", cfg.cavity.kappa_GHz);
    detail::fetch(s, "g_n_full_GHz", cfg.cavity.g_n_full_GHz);
    detail::fetch(s, "concentration_x", cfg.cavity.concentration_x);
    detail::fetch(s, "population_weighting", cfg.cavity.population_weighting);
    detail::fetch(s, "detuning_window_GHz", cfg.cavity.detuning_window_GHz);
  }
  if (j.contains("normalization")) {
    const auto& s = j.at("normalization");
    detail::check_keys(s, "normalization", {"delta_field_T", "reference_field_T"});
    detail::fetch(s, "delta_field_T", cfg.normalization.delta_field_T);
    detail::fetch(s, "reference_field_T", cfg.normalization.reference_field_T);
  }
  if (j.contains("output")) {
    const auto& s = j.at("output");
    detail::check_keys(s, "output", {"dir", "format"});
    detail::fetch(s, "dir", cfg.output.dir);
    detail::fetch(s, "format", cfg.output.format);
  }
  detail::fetch(j, "threads", cfg.threads);
  return cfg;
}

// Fully resolved configuration: every default materialized, so feeding the
// emission back reproduces the run.
inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["spin_system"] = {{"j_electronic", cfg.spin_system.j_electronic},
                      {"i_nuclear", cfg.spin_system.i_nuclear},
                      {"g_j", cfg.spin_system.g_j},
                      {"b20_cm1", cfg.spin_system.b20_cm1},
                      {"b40_cm1", cfg.spin_system.b40_cm1},
                      {"b60_cm1", cfg.spin_system.b60_cm1},
                      {"b44_cm1", cfg.spin_system.b44_cm1},
                      {"a_hyperfine_cm1", cfg.spin_system.a_hyperfine_cm1}};
  j["field_sweep"] = {{"min_T", cfg.field_sweep.min_T},
                      {"max_T", cfg.field_sweep.max_T},
                      {"points", cfg.field_sweep.points},
                      {"theta_deg", cfg.field_sweep.theta_deg},
                      {"phi_deg", cfg.field_sweep.phi_deg}};
  j["frequency_grid"] = {{"min_GHz", cfg.frequency_grid.min_GHz},
                         {"max_GHz", cfg.frequency_grid.max_GHz},
                         {"points", cfg.frequency_grid.points}};
  j["temperature_K"] = cfg.temperature_K;
  j["coupling"] = {{"g0_GHz", cfg.coupling.g0_GHz},
                   {"frequency_exponent", cfg.coupling.frequency_exponent},
                   {"reference_freq_GHz", cfg.coupling.reference_freq_GHz}};
  j["broadening"] = {{"t1_s", cfg.broadening.t1_s},
                     {"t2_clock_s", cfg.broadening.t2_clock_s},
                     {"omega_clock_GHz", cfg.broadening.omega_clock_GHz}};
  nlohmann::json dip = {
      {"mode", cfg.broadening.dipolar.mode == DipolarDistribution::Mode::gaussian
                   ? "gaussian"
                   : "lattice_mc"},
      {"sigma_T", cfg.broadening.dipolar.sigma_T},
      {"mc_samples", cfg.broadening.dipolar.mc_samples},
      {"field_average_samples", cfg.field_average_samples}};
  if (cfg.seed_provided) dip["seed"] = cfg.broadening.dipolar.seed;
  if (cfg.broadening.dipolar.mode == DipolarDistribution::Mode::lattice_mc) {
    const DipolarLattice& lat = cfg.broadening.dipolar.lattice;
    nlohmann::json cell = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) {
      cell.push_back({lat.cell_nm(0, r), lat.cell_nm(1, r), lat.cell_nm(2, r)});
    }
    nlohmann::json sites = nlohmann::json::array();
    for (const auto& s : lat.sites_frac) sites.push_back({s.x(), s.y(), s.z()});
    dip["lattice"] = {{"cell_nm", std::move(cell)},
                      {"sites_frac", std::move(sites)},
                      {"moment_mu_b", lat.moment_mu_b},
                      {"cutoff_nm", lat.cutoff_nm}};
  }
  j["dipolar"] = std::move(dip);
  j["transitions"] = {{"max_freq_GHz", cfg.transitions.max_freq_GHz},
                      {"matrix_element_floor", cfg.transitions.matrix_element_floor},
                      {"nuclear_projection_window", cfg.transitions.nuclear_projection_window},
                      {"drive_tilt_deg", cfg.transitions.drive_tilt_rad * 180.0 / M_PI}};
  j["cavity"] = {{"omega_r_GHz", cfg.cavity.omega_r_GHz},
                 {"kappa_GHz", cfg.cavity.kappa_GHz},
                 {"g_n_full_GHz", cfg.cavity.g_n_full_GHz},
                 {"concentration_x", cfg.cavity.concentration_x},
                 {"population_weighting", cfg.cavity.population_weighting},
                 {"detuning_window_GHz", cfg.cavity.detuning_window_GHz}};
  j["normalization"] = {{"delta_field_T", cfg.normalization.delta_field_T},
                        {"reference_field_T", cfg.normalization.reference_field_T}};
  j["output"] = {{"dir", cfg.output.dir}, {"format", cfg.output.format}};
  j["threads"] = cfg.threads;
  return j;
}

// Parse a config file. JSON syntax errors are reported with line and column;
// semantic errors quote the offending key and, where possible, its line.
inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& err) {
    std::size_t line = 1, col = 1;
    for (std::size_t k = 0; k + 1 < err.byte && k < text.size(); ++k) {
      if (text[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": " + err.what());
  }
  try {
    return config_from_json(j);
  } catch (const nlohmann::json::exception& err) {
    throw ConfigError(path + ": " + err.what());
  } catch (const ConfigError& err) {
    // best-effort line anchor: first occurrence of a quoted key named in the message
    const std::string what = err.what();
    const std::size_t q1 = what.find('\'');
    const std::size_t q2 = what.find('\'', q1 + 1);
    if (q1 != std::string::npos && q2 != std::string::npos && q2 > q1 + 1) {
      const std::string needle = "\"" + what.substr(q1 + 1, q2 - q1 - 1) + "\"";
      const std::size_t pos = text.find(needle);
      if (pos != std::string::npos) {
        std::size_t line = 1;
        for (std::size_t k = 0; k < pos; ++k) {
          if (text[k] == '\n') ++line;
        }
        throw ConfigError(path + ":" + std::to_string(line) + ": " + what);
      }
    }
    throw ConfigError(path + ": " + what);
  }
}

}  // namespace clockspec
