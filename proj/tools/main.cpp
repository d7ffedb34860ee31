// Command-line driver: level diagrams, clock-transition reports, transmission
// and cavity maps, dipolar bias histograms, and trace fitting, all steered by
// one JSON config. Exit codes: 0 success, 2 configuration error, 3 numerical
// failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clockspec/cavity.hpp"
#include "clockspec/config.hpp"
#include "clockspec/fitlab.hpp"
#include "clockspec/hamiltonian.hpp"
#include "clockspec/io.hpp"
#include "clockspec/spectro.hpp"

namespace fs = std::filesystem;
using namespace clockspec;

namespace {

// fit failed on valid inputs; fit.json already carries the diagnostics
struct FitFailure {
  std::string message;
};

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string format;
  std::uint64_t seed = 0;
  int threads = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
};

void add_common_flags(CLI::App* cmd, CommonFlags& fl) {
  cmd->add_option("--config", fl.config_path, "JSON configuration file");
  fl.seed_opt = cmd->add_option("--seed", fl.seed, "override the dipolar RNG seed");
  fl.threads_opt =
      cmd->add_option("--threads", fl.threads, "worker threads (0 = all cores)");
  cmd->add_option("--out", fl.out_dir, "output directory");
  cmd->add_option("--format", fl.format, "output format")
      ->check(CLI::IsMember({"csv", "json"}));
}

RunConfig resolve_config(const CommonFlags& fl) {
  RunConfig cfg;
  if (!fl.config_path.empty()) cfg = load_config(fl.config_path);
  if (fl.seed_opt->count() > 0) {
    cfg.broadening.dipolar.seed = fl.seed;
    cfg.seed_provided = true;
  }
  if (fl.threads_opt->count() > 0) cfg.threads = fl.threads;
  if (!fl.out_dir.empty()) cfg.output.dir = fl.out_dir;
  if (!fl.format.empty()) cfg.output.format = fl.format;
  cfg.validate();
  return cfg;
}

fs::path prepare_out_dir(const RunConfig& cfg) {
  const fs::path dir(cfg.output.dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory: " + cfg.output.dir);
  write_json((dir / "effective_config.json").string(), config_to_json(cfg));
  return dir;
}

std::vector<EigenSolution> run_sweep(const SpinSpace& space, const RunConfig& cfg,
                                     bool keep_vectors) {
  const std::vector<double> grid = linspace(
      cfg.field_sweep.min_T, cfg.field_sweep.max_T, cfg.field_sweep.points);
  return sweep(space, grid, cfg.field_sweep.theta_rad(), cfg.field_sweep.phi_rad(),
               keep_vectors, cfg.threads);
}

void cmd_levels(const RunConfig& cfg) {
  const fs::path dir = prepare_out_dir(cfg);
  SpinSpace space(cfg.spin_system);
  const std::vector<EigenSolution> diagram = run_sweep(space, cfg, false);
  if (cfg.output.format == "json") {
    write_json((dir / "levels.json").string(), level_diagram_json(diagram));
  } else {
    write_level_diagram_csv((dir / "levels.csv").string(), diagram);
  }
  std::cout << "levels: " << diagram.size() << " field points, "
            << diagram.front().energies_GHz.size() << " levels -> " << dir.string()
            << '\n';
}

void cmd_clock(const RunConfig& cfg) {
  const fs::path dir = prepare_out_dir(cfg);
  SpinSpace space(cfg.spin_system);
  const std::vector<EigenSolution> diagram = run_sweep(space, cfg, false);
  const std::vector<Anticrossing> found = find_anticrossings(space, diagram);
  nlohmann::json rows = nlohmann::json::array();
  for (const Anticrossing& ac : found) {
    rows.push_back({{"field_T", ac.field_center_T},
                    {"gap_GHz", ac.gap_GHz},
                    {"m_I", ac.nuclear_label},
                    {"avoided", ac.avoided}});
  }
  write_json((dir / "clock.json").string(), rows);
  std::cout << "clock: " << found.size() << " anticrossings -> "
            << (dir / "clock.json").string() << '\n';
}

void cmd_map(const RunConfig& cfg) {
  MapGrid grid = cfg.map_grid();
  try {
    grid.validate();
    if (cfg.normalization.reference_field_T < grid.field_min_T ||
        cfg.normalization.reference_field_T > grid.field_max_T) {
      throw std::invalid_argument("normalization.reference_field_T outside the sweep");
    }
    if (!(cfg.normalization.delta_field_T > 0.0) ||
        cfg.normalization.delta_field_T > grid.field_max_T - grid.field_min_T) {
      throw std::invalid_argument("normalization.delta_field_T outside (0, span]");
    }
  } catch (const std::invalid_argument& err) {
    throw ConfigError(err.what());
  }
  const fs::path dir = prepare_out_dir(cfg);
  SpinSpace space(cfg.spin_system);
  const TransmissionMap raw =
      simulate_raw_map(space, grid, cfg.broadening, cfg.coupling, cfg.temperature_K,
                       cfg.transmission_options(), cfg.threads);
  const TransmissionMap normalized = normalize_map(
      raw, cfg.normalization.delta_field_T, cfg.normalization.reference_field_T);
  if (cfg.output.format == "json") {
    write_json((dir / "map_raw.json").string(), map_json(raw));
    write_json((dir / "map_normalized.json").string(), map_json(normalized));
  } else {
    write_map_csv((dir / "map_raw.csv").string(), raw);
    write_map_csv((dir / "map_normalized.csv").string(), normalized);
  }
  nlohmann::json params = {{"temperature_K", cfg.temperature_K},
                           {"g0_GHz", cfg.coupling.g0_GHz},
                           {"delta_field_T", cfg.normalization.delta_field_T},
                           {"reference_field_T", cfg.normalization.reference_field_T},
                           {"field_average_samples", cfg.field_average_samples},
                           {"seed", cfg.broadening.dipolar.seed},
                           {"field_points", grid.field_points},
                           {"freq_points", grid.freq_points}};
  write_json((dir / "map_params.json").string(), params);
  std::cout << "map: " << grid.field_points << " x " << grid.freq_points << " -> "
            << dir.string() << '\n';
}

void cmd_cavity(const RunConfig& cfg) {
  MapGrid grid = cfg.map_grid();
  try {
    grid.validate();
    if (grid.freq_min_GHz > cfg.cavity.omega_r_GHz ||
        grid.freq_max_GHz < cfg.cavity.omega_r_GHz) {
      throw std::invalid_argument("frequency_grid must span cavity.omega_r_GHz");
    }
  } catch (const std::invalid_argument& err) {
    throw ConfigError(err.what());
  }
  const fs::path dir = prepare_out_dir(cfg);
  SpinSpace space(cfg.spin_system);
  const std::vector<EigenSolution> diagram = run_sweep(space, cfg, true);
  const CavityMapResult result =
      cavity_map(space, cfg.cavity, diagram, cfg.broadening, cfg.temperature_K,
                 grid.freq_values(), cfg.transitions, cfg.threads);
  if (cfg.output.format == "json") {
    write_json((dir / "cavity_map.json").string(), map_json(result.map));
    write_json((dir / "kappa_curve.json").string(),
               nlohmann::json{{"field_T", result.map.field_T},
                              {"kappa_eff_GHz", result.kappa_eff_GHz}});
  } else {
    write_map_csv((dir / "cavity_map.csv").string(), result.map);
    write_kappa_curve_csv((dir / "kappa_curve.csv").string(), result.map.field_T,
                          result.kappa_eff_GHz);
  }
  nlohmann::json params = {{"omega_r_GHz", cfg.cavity.omega_r_GHz},
                           {"kappa_GHz", cfg.cavity.kappa_GHz},
                           {"g_n_GHz", cfg.cavity.g_n_GHz()},
                           {"concentration_x", cfg.cavity.concentration_x},
                           {"population_weighting", cfg.cavity.population_weighting},
                           {"detuning_window_GHz", cfg.cavity.detuning_window_GHz},
                           {"temperature_K", cfg.temperature_K}};
  write_json((dir / "cavity_params.json").string(), params);
  const double peak =
      *std::max_element(result.kappa_eff_GHz.begin(), result.kappa_eff_GHz.end());
  std::cout << "cavity: peak width " << fmt_g(peak) << " GHz -> " << dir.string() << '\n';
}

void cmd_dipolar(const RunConfig& cfg) {
  const fs::path dir = prepare_out_dir(cfg);
  const DipolarDistribution& dip = cfg.broadening.dipolar;
  const std::vector<double> samples = dipolar_bias_samples(dip, dip.mc_samples);

  double mean = 0.0;
  for (const double s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (const double s : samples) var += (s - mean) * (s - mean);
  var /= static_cast<double>(samples.size());
  const double sd = std::sqrt(var);

  const double half_range = std::max(4.0 * sd, 1e-12);
  const int bins = 81;
  std::vector<long> count(static_cast<std::size_t>(bins), 0);
  const double bin_width = 2.0 * half_range / bins;
  for (const double s : samples) {
    int b = static_cast<int>(std::floor((s - (mean - half_range)) / bin_width));
    b = std::clamp(b, 0, bins - 1);
    ++count[static_cast<std::size_t>(b)];
  }
  std::vector<double> centers(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    centers[static_cast<std::size_t>(b)] = mean - half_range + (b + 0.5) * bin_width;
  }

  if (cfg.output.format == "json") {
    write_json((dir / "dipolar_histogram.json").string(),
               nlohmann::json{{"bin_center_T", centers}, {"count", count}});
  } else {
    auto out = std::ofstream((dir / "dipolar_histogram.csv").string());
    out << "bin_center_T,count\n";
    for (int b = 0; b < bins; ++b) {
      out << fmt_g(centers[static_cast<std::size_t>(b)]) << ','
          << count[static_cast<std::size_t>(b)] << '\n';
    }
  }
  nlohmann::json summary = {
      {"mode",
       dip.mode == DipolarDistribution::Mode::gaussian ? "gaussian" : "lattice_mc"},
      {"samples", samples.size()},
      {"seed", dip.seed},
      {"mean_T", mean},
      {"std_T", sd},
      {"sigma_model_T", dipolar_sigma_T(dip)}};
  write_json((dir / "dipolar_summary.json").string(), summary);
  std::cout << "dipolar: std " << fmt_g(sd) << " T over " << samples.size()
            << " samples -> " << dir.string() << '\n';
}

struct FitFlags {
  std::string trace_path;
  std::string model;
  double delta_p = 0.0;
  double field_T = 0.0;
  CLI::Option* delta_p_opt = nullptr;
  CLI::Option* field_opt = nullptr;
};

// thermal population difference for the line closest to the trace extremum
double delta_p_from_field(const RunConfig& cfg, const SpinSpace& space,
                          const Trace& trace, double field_T) {
  const EigenSolution sol = space.eigensolve(
      {field_T, cfg.field_sweep.theta_rad(), cfg.field_sweep.phi_rad()}, true);
  const std::vector<Transition> lines = enumerate_transitions(
      space, sol, cfg.broadening, cfg.coupling, cfg.temperature_K, cfg.transitions);
  if (lines.empty()) throw std::runtime_error("no transitions at the requested field");
  std::size_t k_min = 0;
  for (std::size_t k = 1; k < trace.y.size(); ++k) {
    if (trace.y[k] < trace.y[k_min]) k_min = k;
  }
  const double target = trace.x[k_min];
  const Transition* best = &lines.front();
  for (const Transition& t : lines) {
    if (std::abs(t.omega_GHz - target) < std::abs(best->omega_GHz - target)) best = &t;
  }
  return best->delta_p;
}

void cmd_fit(const RunConfig& cfg, const FitFlags& ff) {
  const fs::path dir = prepare_out_dir(cfg);
  const Trace trace = read_trace_csv(ff.trace_path);

  FitResult fit;
  if (ff.model == "lineshape") {
    SpinSpace space(cfg.spin_system);
    double delta_p = 0.0;
    if (ff.delta_p_opt->count() > 0) {
      delta_p = ff.delta_p;
    } else if (ff.field_opt->count() > 0) {
      delta_p = delta_p_from_field(cfg, space, trace, ff.field_T);
    } else {
      throw ConfigError("fit --model lineshape needs --delta-p or --field-T");
    }
    fit = fit_lineshape(trace, delta_p);
  } else {
    SpinSpace space(cfg.spin_system);
    const double omega_r = cfg.cavity.omega_r_GHz;
    auto omega12 = [&](double h) {
      const EigenSolution sol = space.eigensolve(
          {h, cfg.field_sweep.theta_rad(), cfg.field_sweep.phi_rad()}, true);
      const std::vector<Transition> lines = enumerate_transitions(
          space, sol, cfg.broadening, cfg.coupling, cfg.temperature_K, cfg.transitions);
      if (lines.empty()) {
        throw std::runtime_error("no transitions at field " + fmt_g(h) + " T");
      }
      double best = lines.front().omega_GHz;
      for (const Transition& t : lines) {
        if (std::abs(t.omega_GHz - omega_r) < std::abs(best - omega_r)) {
          best = t.omega_GHz;
        }
      }
      return best;
    };
    fit = fit_cavity_width(trace, omega12, omega_r);
  }

  write_json((dir / "fit.json").string(), fit_result_json(fit));
  std::cout << "fit: " << fit.message << ", residual " << fmt_g(fit.residual_norm)
            << " -> " << (dir / "fit.json").string() << '\n';
  if (!fit.converged) throw FitFailure{fit.message};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crystal-field spin spectroscopy toolkit"};
  app.require_subcommand(1);

  CommonFlags fl_levels, fl_clock, fl_map, fl_cavity, fl_dipolar, fl_fit;
  FitFlags ff;

  CLI::App* c_levels = app.add_subcommand("levels", "export the level diagram");
  add_common_flags(c_levels, fl_levels);
  c_levels->callback([&] { cmd_levels(resolve_config(fl_levels)); });

  CLI::App* c_clock = app.add_subcommand("clock", "locate avoided level crossings");
  add_common_flags(c_clock, fl_clock);
  c_clock->callback([&] { cmd_clock(resolve_config(fl_clock)); });

  CLI::App* c_map = app.add_subcommand("map", "simulate the transmission map");
  add_common_flags(c_map, fl_map);
  c_map->callback([&] { cmd_map(resolve_config(fl_map)); });

  CLI::App* c_cavity = app.add_subcommand("cavity", "simulate the cavity-mode map");
  add_common_flags(c_cavity, fl_cavity);
  c_cavity->callback([&] { cmd_cavity(resolve_config(fl_cavity)); });

  CLI::App* c_dipolar = app.add_subcommand("dipolar", "sample the dipolar bias field");
  add_common_flags(c_dipolar, fl_dipolar);
  c_dipolar->callback([&] { cmd_dipolar(resolve_config(fl_dipolar)); });

  CLI::App* c_fit = app.add_subcommand("fit", "fit a measured trace");
  add_common_flags(c_fit, fl_fit);
  c_fit->add_option("--trace", ff.trace_path, "trace CSV (x,y[,sigma])")->required();
  c_fit->add_option("--model", ff.model, "lineshape | cavity")
      ->required()
      ->check(CLI::IsMember({"lineshape", "cavity"}));
  ff.delta_p_opt = c_fit->add_option("--delta-p", ff.delta_p,
                                     "population difference for the lineshape model");
  ff.field_opt = c_fit->add_option(
      "--field-T", ff.field_T, "field at which the trace was taken (derives delta-p)");
  c_fit->callback([&] { cmd_fit(resolve_config(fl_fit), ff); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const FitFailure& e) {
    std::cerr << "fit failed: " << e.message << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
