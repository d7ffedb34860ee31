#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include <clockspec/config.hpp>
#include <clockspec/io.hpp>

using namespace clockspec;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() /
                 ("clockspec_tests_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = scratch_dir() / name;
  std::ofstream out(p);
  out << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(CLOCKSPEC_CLI) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

// small sweep around the third level crossing; cheap enough to run twice
nlohmann::json small_run_json() {
  nlohmann::json j;
  j["field_sweep"] = {{"min_T", 0.11}, {"max_T", 0.125}, {"points", 6}};
  j["frequency_grid"] = {{"min_GHz", 9.0}, {"max_GHz", 9.35}, {"points", 40}};
  j["dipolar"] = {{"seed", 11}, {"field_average_samples", 32}};
  j["normalization"] = {{"delta_field_T", 0.005}, {"reference_field_T", 0.12}};
  return j;
}

}  // namespace

TEST_CASE("defaults survive an empty configuration", "[config]") {
  const RunConfig cfg = config_from_json(nlohmann::json::object());
  CHECK(cfg.temperature_K == 4.2);
  CHECK(cfg.field_average_samples == 200);
  CHECK(!cfg.seed_provided);
  CHECK(cfg.spin_system.j_electronic == 8.0);
  CHECK(cfg.cavity.omega_r_GHz == 11.7);
  CHECK(cfg.normalization.delta_field_T == 0.012);
  CHECK(cfg.output.format == "csv");
}

TEST_CASE("grid and option adapters carry every field", "[config]") {
  RunConfig cfg;
  cfg.field_sweep.theta_deg = 90.0;
  cfg.field_average_samples = 33;
  cfg.transitions.max_freq_GHz = 11.0;
  const MapGrid g = cfg.map_grid();
  CHECK(g.field_min_T == cfg.field_sweep.min_T);
  CHECK(g.field_points == cfg.field_sweep.points);
  CHECK(g.freq_points == cfg.frequency_grid.points);
  CHECK_THAT(g.theta_rad, Catch::Matchers::WithinRel(M_PI / 2.0, 1e-15));
  const TransmissionOptions o = cfg.transmission_options();
  CHECK(o.field_average_samples == 33);
  CHECK(o.transitions.max_freq_GHz == 11.0);
}

TEST_CASE("validation demands an explicit seed for bias averaging", "[config]") {
  RunConfig cfg;  // gaussian sigma is on by default
  try {
    cfg.validate();
    FAIL("expected a configuration error");
  } catch (const ConfigError& err) {
    CHECK(std::string(err.what()).find("seed") != std::string::npos);
  }
  cfg.seed_provided = true;
  CHECK_NOTHROW(cfg.validate());

  cfg.broadening.dipolar.sigma_T = 0.0;
  cfg.seed_provided = false;
  CHECK_NOTHROW(cfg.validate());  // no averaging, no seed needed

  RunConfig bad;
  bad.seed_provided = true;
  bad.output.format = "xml";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.seed_provided = true;
  bad.field_sweep.max_T = bad.field_sweep.min_T;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("configuration parsing rejects unknown keys and wrong types", "[config]") {
  CHECK_THROWS_WITH(config_from_json({{"spin_syste", nlohmann::json::object()}}),
                    Catch::Matchers::ContainsSubstring("unknown key 'spin_syste'"));
  CHECK_THROWS_WITH(config_from_json({{"temperature_K", "warm"}}),
                    Catch::Matchers::ContainsSubstring("wrong type for key 'temperature_K'"));
  CHECK_THROWS_WITH(config_from_json({{"dipolar", {{"mode", "weird"}}}}),
                    Catch::Matchers::ContainsSubstring("gaussian or lattice_mc"));
  CHECK_THROWS_AS(config_from_json({{"field_sweep", {{"pts", 10}}}}), ConfigError);
}

TEST_CASE("file errors carry the offending location", "[config]") {
  const fs::path broken = write_file("broken.json", "{\n  \"x\": oops\n}\n");
  try {
    load_config(broken.string());
    FAIL("expected a configuration error");
  } catch (const ConfigError& err) {
    const std::string what = err.what();
    CHECK(what.find(broken.string()) != std::string::npos);
    CHECK(what.find(":2:") != std::string::npos);
  }

  const fs::path unknown =
      write_file("unknown.json", "{\n  \"spin_syste\": {}\n}\n");
  try {
    load_config(unknown.string());
    FAIL("expected a configuration error");
  } catch (const ConfigError& err) {
    const std::string what = err.what();
    CHECK(what.find("unknown key 'spin_syste'") != std::string::npos);
    CHECK(what.find(":2") != std::string::npos);
  }

  CHECK_THROWS_WITH(load_config((scratch_dir() / "absent.json").string()),
                    Catch::Matchers::ContainsSubstring("cannot open config file"));
}

TEST_CASE("configuration round trip preserves every field", "[config]") {
  RunConfig cfg;
  cfg.spin_system.b44_cm1 = 4e-3;
  cfg.field_sweep = {0.02, 0.2, 77, 15.0, 30.0};
  cfg.frequency_grid = {5.0, 13.0, 333};
  cfg.temperature_K = 1.8;
  cfg.coupling.g0_GHz = 0.013;
  cfg.coupling.frequency_exponent = 1.0;
  cfg.broadening.t1_s = 1e-5;
  cfg.broadening.t2_clock_s = 4e-9;
  cfg.broadening.omega_clock_GHz = 9.2;
  cfg.broadening.dipolar.mode = DipolarDistribution::Mode::lattice_mc;
  cfg.broadening.dipolar.mc_samples = 2000;
  cfg.broadening.dipolar.seed = 42;
  cfg.seed_provided = true;
  cfg.broadening.dipolar.lattice.cell_nm << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0;
  cfg.broadening.dipolar.lattice.sites_frac = {Eigen::Vector3d::Zero(),
                                               Eigen::Vector3d(0.5, 0.5, 0.5)};
  cfg.broadening.dipolar.lattice.moment_mu_b = 4.5;
  cfg.broadening.dipolar.lattice.cutoff_nm = 3.3;
  cfg.field_average_samples = 64;
  cfg.transitions.max_freq_GHz = 12.0;
  cfg.transitions.drive_tilt_rad = M_PI / 6.0;
  cfg.cavity.omega_r_GHz = 11.2;
  cfg.cavity.concentration_x = 0.5;
  cfg.cavity.population_weighting = false;
  cfg.normalization = {0.01, 0.2};
  cfg.output = {"zz", "json"};
  cfg.threads = 3;

  const RunConfig back = config_from_json(config_to_json(cfg));
  CHECK(back.spin_system.b44_cm1 == cfg.spin_system.b44_cm1);
  CHECK(back.field_sweep.points == 77);
  CHECK(back.field_sweep.theta_deg == 15.0);
  CHECK(back.frequency_grid.points == 333);
  CHECK(back.temperature_K == 1.8);
  CHECK(back.coupling.g0_GHz == 0.013);
  CHECK(back.coupling.frequency_exponent == 1.0);
  CHECK(back.broadening.t2_clock_s == 4e-9);
  CHECK(back.broadening.dipolar.mode == DipolarDistribution::Mode::lattice_mc);
  CHECK(back.broadening.dipolar.mc_samples == 2000);
  CHECK(back.broadening.dipolar.seed == 42);
  CHECK(back.seed_provided);
  CHECK((back.broadening.dipolar.lattice.cell_nm - cfg.broadening.dipolar.lattice.cell_nm)
            .norm() == 0.0);
  REQUIRE(back.broadening.dipolar.lattice.sites_frac.size() == 2);
  CHECK((back.broadening.dipolar.lattice.sites_frac[1] - Eigen::Vector3d(0.5, 0.5, 0.5))
            .norm() == 0.0);
  CHECK(back.broadening.dipolar.lattice.moment_mu_b == 4.5);
  CHECK(back.field_average_samples == 64);
  CHECK(back.transitions.max_freq_GHz == 12.0);
  CHECK_THAT(back.transitions.drive_tilt_rad,
             Catch::Matchers::WithinRel(M_PI / 6.0, 1e-12));
  CHECK(back.cavity.omega_r_GHz == 11.2);
  CHECK(back.cavity.concentration_x == 0.5);
  CHECK(!back.cavity.population_weighting);
  CHECK(back.normalization.delta_field_T == 0.01);
  CHECK(back.output.dir == "zz");
  CHECK(back.output.format == "json");
  CHECK(back.threads == 3);

  // gaussian emissions stay lean: no lattice block, no implicit seed
  const nlohmann::json plain = config_to_json(RunConfig{});
  CHECK(!plain.at("dipolar").contains("lattice"));
  CHECK(!plain.at("dipolar").contains("seed"));
}

TEST_CASE("numeric formatting keeps twelve significant digits", "[io]") {
  CHECK(fmt_g(0.05) == "0.05");
  CHECK(fmt_g(1.0 / 3.0) == "0.333333333333");
  CHECK(fmt_g(-2.5e-7) == "-2.5e-07");
  CHECK(fmt_g(0.0) == "0");
}

TEST_CASE("transmission map survives a CSV round trip", "[io]") {
  TransmissionMap map;
  map.field_T = {0.1, 0.15, 0.2};
  map.freq_GHz = {1.5, 2.5, 3.5, 4.5};
  map.values.resize(4, 3);
  for (int q = 0; q < 4; ++q) {
    for (int k = 0; k < 3; ++k) {
      map.values(q, k) = complexd(std::cos(1.0 + q + 2 * k), std::sin(0.3 * q * k) - 0.5);
    }
  }

  const fs::path p = scratch_dir() / "map.csv";
  write_map_csv(p.string(), map);
  const TransmissionMap back = read_map_csv(p.string());
  REQUIRE(back.field_T == map.field_T);
  REQUIRE(back.freq_GHz == map.freq_GHz);
  for (int q = 0; q < 4; ++q) {
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(back.values(q, k) - map.values(q, k)) < 1e-11);
    }
  }
  CHECK(map_rms_difference(map, back) < 1e-11);
  CHECK(map_rms_difference(map, map) == 0.0);

  TransmissionMap other = map;
  other.field_T[1] = 0.16;
  CHECK_THROWS_AS(map_rms_difference(map, other), std::invalid_argument);

  // dropping one row leaves an incomplete grid
  std::string text = slurp(p);
  text.erase(text.rfind("0.2,"));
  write_file("truncated.csv", text);
  CHECK_THROWS_WITH(read_map_csv((scratch_dir() / "truncated.csv").string()),
                    Catch::Matchers::ContainsSubstring("complete grid"));

  write_file("garbled.csv", "field_T,freq_GHz,re_t,im_t,abs_t\n0.1,1.5,xx,0,1\n");
  CHECK_THROWS_WITH(read_map_csv((scratch_dir() / "garbled.csv").string()),
                    Catch::Matchers::ContainsSubstring("malformed map row"));
}

TEST_CASE("trace CSV reading", "[io]") {
  const fs::path plain =
      write_file("trace_plain.csv", "freq_GHz,value\n1.0,2.0\n2.0,3.0\n3.0,4.0\n");
  const Trace a = read_trace_csv(plain.string());
  CHECK(a.x == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(a.y == std::vector<double>{2.0, 3.0, 4.0});
  CHECK(a.sigma.empty());

  const fs::path weighted =
      write_file("trace_sigma.csv", "1.0,2.0,0.1\n2.0,3.0,0.2\n3.0,4.0,0.3\n");
  const Trace b = read_trace_csv(weighted.string());
  CHECK(b.sigma == std::vector<double>{0.1, 0.2, 0.3});

  const fs::path partial =
      write_file("trace_partial.csv", "1.0,2.0,0.1\n2.0,3.0\n3.0,4.0,0.3\n");
  CHECK_THROWS_WITH(read_trace_csv(partial.string()),
                    Catch::Matchers::ContainsSubstring("only some rows"));

  const fs::path garbled = write_file("trace_bad.csv", "1.0,2.0\nnope,3.0\n");
  CHECK_THROWS_WITH(read_trace_csv(garbled.string()),
                    Catch::Matchers::ContainsSubstring("malformed trace row"));
}

TEST_CASE("structured outputs", "[io]") {
  CHECK_THROWS_AS(write_kappa_curve_csv((scratch_dir() / "k.csv").string(),
                                        {0.1, 0.2}, {1.0}),
                  std::invalid_argument);

  FitResult fit;
  fit.parameter_names = {"rate_GHz"};
  fit.units = {"GHz"};
  fit.values = Eigen::VectorXd::Constant(1, 0.05);
  fit.std_errors = Eigen::VectorXd::Constant(1, 1e-4);
  fit.converged = true;
  fit.message = "gradient below tolerance";
  const nlohmann::json j = fit_result_json(fit);
  CHECK(j.at("converged").get<bool>());
  CHECK(j.at("parameters").at(0).at("name").get<std::string>() == "rate_GHz");

  const fs::path p = scratch_dir() / "fit.json";
  write_json(p.string(), j);
  const nlohmann::json back = nlohmann::json::parse(slurp(p));
  CHECK(back == j);
}

TEST_CASE("command line exit codes", "[cli]") {
  CHECK(run_cli("") == 2);
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("levels --config /nonexistent/place.json") == 2);
  CHECK(run_cli("fit --model lineshape") == 2);

  // --seed makes the default config valid; the missing file is then a
  // runtime failure rather than a config error
  const fs::path trace_path = scratch_dir() / "missing_trace.csv";
  CHECK(run_cli("fit --trace " + trace_path.string() +
                " --model lineshape --delta-p 0.05 --seed 7") == 3);
  CHECK(run_cli("fit --trace " + trace_path.string() +
                " --model lineshape --delta-p 0.05") == 2);

  const fs::path degenerate = write_file(
      "degenerate.json", "{\n  \"field_sweep\": {\"points\": 0}\n}\n");
  CHECK(run_cli("levels --config " + degenerate.string()) == 2);

  nlohmann::json cfg = small_run_json();
  const fs::path good = write_file("levels_ok.json", cfg.dump(2));
  const fs::path out = scratch_dir() / "levels_out";
  CHECK(run_cli("levels --config " + good.string() + " --out " + out.string()) == 0);
  CHECK(fs::exists(out / "levels.csv"));
  CHECK(fs::exists(out / "effective_config.json"));
}

TEST_CASE("simulation runs are reproducible byte for byte", "[cli]") {
  const fs::path cfg = write_file("map_small.json", small_run_json().dump(2));
  const fs::path out1 = scratch_dir() / "map_run1";
  const fs::path out2 = scratch_dir() / "map_run2";

  REQUIRE(run_cli("map --config " + cfg.string() + " --threads 2 --out " +
                  out1.string()) == 0);
  REQUIRE(run_cli("map --config " + cfg.string() + " --threads 1 --out " +
                  out2.string()) == 0);
  const std::string raw1 = slurp(out1 / "map_raw.csv");
  CHECK(raw1 == slurp(out2 / "map_raw.csv"));
  CHECK(slurp(out1 / "map_normalized.csv") == slurp(out2 / "map_normalized.csv"));
  CHECK(raw1.find("field_T") == 0);

  // a different seed must change the numbers
  const fs::path out3 = scratch_dir() / "map_run3";
  REQUIRE(run_cli("map --config " + cfg.string() + " --seed 12 --out " +
                  out3.string()) == 0);
  CHECK(raw1 != slurp(out3 / "map_raw.csv"));
}

TEST_CASE("the effective configuration reproduces its own run", "[cli]") {
  const fs::path cfg = write_file("roundtrip.json", small_run_json().dump(2));
  const fs::path out1 = scratch_dir() / "eff_run1";
  const fs::path out2 = scratch_dir() / "eff_run2";

  REQUIRE(run_cli("levels --config " + cfg.string() + " --out " + out1.string()) == 0);
  REQUIRE(run_cli("levels --config " + (out1 / "effective_config.json").string() +
                  " --out " + out2.string()) == 0);
  // the emitted configs agree except for the per-run output directory
  nlohmann::json eff1 = nlohmann::json::parse(slurp(out1 / "effective_config.json"));
  nlohmann::json eff2 = nlohmann::json::parse(slurp(out2 / "effective_config.json"));
  eff1.erase("output");
  eff2.erase("output");
  CHECK(eff1 == eff2);
  CHECK(slurp(out1 / "levels.csv") == slurp(out2 / "levels.csv"));
}
