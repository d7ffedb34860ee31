#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <clockspec/fitlab.hpp>
#include <clockspec/spectro.hpp>

using namespace clockspec;

namespace {

constexpr double true_rate = 0.05;
constexpr double true_width = 0.12;
constexpr double true_center = 9.3;
constexpr double fixed_dp = 0.05;

complexd line_response(double x, double rate, double width, double center, double dp) {
  return 1.0 / (1.0 + rate * dp / complexd(width, center - x)) - 1.0;
}

Trace lineshape_trace(bool complex_data) {
  Trace t;
  t.x = linspace(8.8, 9.8, 161);
  for (const double x : t.x) {
    const complexd v = line_response(x, true_rate, true_width, true_center, fixed_dp);
    if (complex_data) {
      t.y.push_back(v.real());
      t.y_imag.push_back(v.imag());
    } else {
      t.y.push_back(std::abs(v + 1.0) - 1.0);
    }
  }
  return t;
}

constexpr double true_kappa = 0.117;
constexpr double true_gamma = 0.8;
constexpr double true_g = 0.1;

double omega12_linear(double field_T) { return 11.7 + 120.0 * (field_T - 0.15); }

Trace width_curve() {
  Trace t;
  t.x = linspace(0.05, 0.25, 101);
  for (const double h : t.x) {
    const double d = omega12_linear(h) - 11.7;
    t.y.push_back(true_kappa + true_gamma * true_g * true_g / (d * d + true_gamma * true_gamma));
  }
  return t;
}

double max_rel_error(const Eigen::VectorXd& fitted, const Eigen::Vector3d& truth) {
  double worst = 0.0;
  for (int k = 0; k < 3; ++k) {
    worst = std::max(worst, std::abs(fitted[k] - truth[k]) / std::abs(truth[k]));
  }
  return worst;
}

}  // namespace

TEST_CASE("noiseless absorption line roundtrip", "[fitlab]") {
  for (const bool complex_data : {false, true}) {
    const FitResult r = fit_lineshape(lineshape_trace(complex_data), fixed_dp);
    INFO((complex_data ? "complex" : "magnitude") << " data; " << r.message);
    REQUIRE(r.converged);
    CHECK(max_rel_error(r.values, {true_rate, true_width, true_center}) < 1e-6);
    CHECK(r.parameter_names ==
          std::vector<std::string>{"rate_GHz", "width_GHz", "center_GHz"});
    CHECK(r.residual_norm < 1e-8);
    for (int k = 0; k < 3; ++k) {
      CHECK(std::isfinite(r.std_errors[k]));
      CHECK(r.std_errors[k] >= 0.0);
    }
  }
}

TEST_CASE("noiseless dressed-width roundtrip", "[fitlab]") {
  const FitResult r = fit_cavity_width(width_curve(), omega12_linear, 11.7);
  INFO(r.message);
  REQUIRE(r.converged);
  CHECK(max_rel_error(r.values, {true_kappa, true_gamma, true_g}) < 1e-6);
  CHECK(r.parameter_names ==
        std::vector<std::string>{"kappa_GHz", "gamma_GHz", "g_n_GHz"});
}

TEST_CASE("fits tolerate one-percent noise across seeds", "[fitlab]") {
  const auto start = std::chrono::steady_clock::now();

  // noise scale: 1% of the signal amplitude of each model
  const double line_depth = -lineshape_trace(false).y[80];
  const double peak = true_g * true_g / true_gamma;
  std::vector<double> line_errors, width_errors;
  for (unsigned seed = 1; seed <= 50; ++seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.01);

    Trace lt = lineshape_trace(false);
    for (double& y : lt.y) y += noise(rng) * line_depth;
    const FitResult lr = fit_lineshape(lt, fixed_dp);
    REQUIRE(lr.converged);
    line_errors.push_back(max_rel_error(lr.values, {true_rate, true_width, true_center}));

    Trace wc = width_curve();
    for (double& y : wc.y) y += noise(rng) * peak;
    const FitResult wr = fit_cavity_width(wc, omega12_linear, 11.7);
    REQUIRE(wr.converged);
    width_errors.push_back(max_rel_error(wr.values, {true_kappa, true_gamma, true_g}));
  }

  std::sort(line_errors.begin(), line_errors.end());
  std::sort(width_errors.begin(), width_errors.end());
  CHECK(line_errors[25] < 0.05);
  CHECK(width_errors[25] < 0.05);

  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  CHECK(elapsed.count() < 10.0);
}

TEST_CASE("one trace only identifies the product rate times delta_p", "[fitlab]") {
  // fitting with twice the population difference halves the rate
  const FitResult r = fit_lineshape(lineshape_trace(false), 2.0 * fixed_dp);
  REQUIRE(r.converged);
  CHECK_THAT(r.values[0], Catch::Matchers::WithinRel(0.5 * true_rate, 1e-6));
  CHECK_THAT(r.values[1], Catch::Matchers::WithinRel(true_width, 1e-6));
  CHECK_THAT(r.values[2], Catch::Matchers::WithinRel(true_center, 1e-6));
}

TEST_CASE("lineshape fit input rejection", "[fitlab]") {
  const Trace good = lineshape_trace(false);
  CHECK_THROWS_AS(fit_lineshape(good, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(fit_lineshape(good, -0.1), std::invalid_argument);

  Trace flat = good;
  std::fill(flat.y.begin(), flat.y.end(), 0.0);
  CHECK_THROWS_AS(fit_lineshape(flat, fixed_dp), std::invalid_argument);

  Trace edge;
  edge.x = linspace(0.0, 1.0, 21);
  for (const double x : edge.x) edge.y.push_back(-0.02 + 0.001 * x);
  CHECK_THROWS_AS(fit_lineshape(edge, fixed_dp), std::invalid_argument);

  Trace jumbled = good;
  std::swap(jumbled.x[5], jumbled.x[6]);
  CHECK_THROWS_AS(fit_lineshape(jumbled, fixed_dp), std::invalid_argument);

  Trace tiny;
  tiny.x = {1.0, 2.0};
  tiny.y = {0.0, -0.1};
  CHECK_THROWS_AS(fit_lineshape(tiny, fixed_dp), std::invalid_argument);

  Trace bad_sigma = good;
  bad_sigma.sigma.assign(good.x.size(), 1.0);
  bad_sigma.sigma[3] = 0.0;
  CHECK_THROWS_AS(fit_lineshape(bad_sigma, fixed_dp), std::invalid_argument);
}

TEST_CASE("width fit input rejection", "[fitlab]") {
  const Trace good = width_curve();
  CHECK_THROWS_AS(fit_cavity_width(good, std::function<double(double)>{}, 11.7),
                  std::invalid_argument);

  Trace flat = good;
  std::fill(flat.y.begin(), flat.y.end(), true_kappa);
  CHECK_THROWS_AS(fit_cavity_width(flat, omega12_linear, 11.7), std::invalid_argument);

  Trace ramp = good;
  for (std::size_t k = 0; k < ramp.y.size(); ++k) ramp.y[k] = 0.1 + 1e-3 * static_cast<double>(k);
  CHECK_THROWS_AS(fit_cavity_width(ramp, omega12_linear, 11.7), std::invalid_argument);
}

TEST_CASE("optimizer bookkeeping", "[fitlab]") {
  const Trace trace = lineshape_trace(false);

  const FitResult full = fit_lineshape(trace, fixed_dp);
  REQUIRE(full.cost_history.size() >= 2);
  for (std::size_t k = 1; k < full.cost_history.size(); ++k) {
    CHECK(full.cost_history[k] <= full.cost_history[k - 1]);
  }
  CHECK(full.iterations > 0);

  FitOptions frozen;
  frozen.max_iterations = 0;
  const Eigen::Vector3d init(0.04, 0.2, 9.25);
  const FitResult stuck = fit_lineshape(trace, fixed_dp, init, frozen);
  CHECK(!stuck.converged);
  CHECK(stuck.message == "iteration limit reached");
  CHECK(stuck.iterations == 0);
  CHECK((stuck.values - init).norm() == 0.0);
  CHECK(stuck.std_errors.isZero());

  const FitResult already = fit_lineshape(
      trace, fixed_dp, Eigen::Vector3d(true_rate, true_width, true_center));
  CHECK(already.converged);
  CHECK(already.message == "gradient below tolerance");
  CHECK(already.iterations == 0);
}

TEST_CASE("uniform uncertainties only rescale the cost", "[fitlab]") {
  const Trace plain = lineshape_trace(false);
  Trace weighted = plain;
  weighted.sigma.assign(plain.x.size(), 0.37);

  const FitResult a = fit_lineshape(plain, fixed_dp);
  const FitResult b = fit_lineshape(weighted, fixed_dp);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  for (int k = 0; k < 3; ++k) {
    CHECK_THAT(b.values[k], Catch::Matchers::WithinRel(a.values[k], 1e-7));
  }
}
