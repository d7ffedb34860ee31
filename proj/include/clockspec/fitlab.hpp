#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clockspec/spinops.hpp"

namespace clockspec {

// Measured or synthetic 1-D data set. `sigma` (optional) holds per-point
// uncertainties; `y_imag` (optional) turns the ordinate complex.
struct Trace {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> sigma;
  std::vector<double> y_imag;

  void validate() const {
    if (x.size() < 3) throw std::invalid_argument("trace needs at least 3 points");
    if (y.size() != x.size()) throw std::invalid_argument("trace length mismatch");
    if (!sigma.empty() && sigma.size() != x.size()) {
      throw std::invalid_argument("sigma length mismatch");
    }
    if (!y_imag.empty() && y_imag.size() != x.size()) {
      throw std::invalid_argument("imaginary part length mismatch");
    }
    for (std::size_t k = 1; k < x.size(); ++k) {
      if (!((x[k] > x[k - 1]) == (x[1] > x[0])) || x[k] == x[k - 1]) {
        throw std::invalid_argument("abscissa must be strictly monotone");
      }
    }
    for (const double s : sigma) {
      if (!(s > 0.0)) throw std::invalid_argument("uncertainties must be positive");
    }
  }
};

struct FitResult {
  std::vector<std::string> parameter_names;
  std::vector<std::string> units;
  Eigen::VectorXd values;
  Eigen::VectorXd std_errors;
  double residual_norm = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string message;
  std::vector<double> cost_history;  // accepted costs; never increases
};

struct FitOptions {
  int max_iterations = 200;
  double gradient_tol = 1e-10;
  double step_tol = 1e-12;
};

namespace detail {

// residuals and Jacobian at p; r sized n_obs, jac n_obs x n_par
using ResidualFn = std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&,
                                      Eigen::MatrixXd&)>;
using ValidityFn = std::function<bool(const Eigen::VectorXd&)>;

// Damped least squares with Marquardt diagonal scaling. Accepted steps only
// ever lower the cost; invalid parameter vectors count as rejected steps.
inline void levenberg_marquardt(const ResidualFn& eval, const ValidityFn& valid,
                                Eigen::VectorXd& p, const FitOptions& opts,
                                FitResult& result) {
  const int n_par = static_cast<int>(p.size());
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  eval(p, r, jac);
  double cost = r.squaredNorm();
  result.cost_history.push_back(cost);

  double lambda = 1e-3;
  bool converged = false;
  std::string message = "iteration limit reached";
  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * r;
    if (jtr.lpNorm<Eigen::Infinity>() <= opts.gradient_tol * (1.0 + cost)) {
      converged = true;
      message = "gradient below tolerance";
      break;
    }

    bool stepped = false;
    while (lambda < 1e14) {
      Eigen::MatrixXd damped = jtj;
      for (int k = 0; k < n_par; ++k) {
        damped(k, k) += lambda * std::max(jtj(k, k), 1e-30);
      }
      const Eigen::VectorXd step = damped.ldlt().solve(-jtr);
      const Eigen::VectorXd candidate = p + step;
      if (step.allFinite() && valid(candidate)) {
        Eigen::VectorXd r_new;
        Eigen::MatrixXd jac_new;
        eval(candidate, r_new, jac_new);
        const double cost_new = r_new.squaredNorm();
        if (cost_new < cost) {
          const double step_scale = step.norm() / (p.norm() + opts.step_tol);
          p = candidate;
          r.swap(r_new);
          jac.swap(jac_new);
          cost = cost_new;
          result.cost_history.push_back(cost);
          lambda = std::max(lambda / 3.0, 1e-12);
          stepped = true;
          // tiny accepted step with a healthy trust region means we are done
          if (step_scale <= opts.step_tol && lambda <= 1e-2) {
            converged = true;
            message = "step below tolerance";
          }
          break;
        }
      }
      lambda *= 5.0;
    }
    if (!stepped) {
      message = "no acceptable step (damping exhausted)";
      break;
    }
    if (converged) break;
  }

  result.values = p;
  result.residual_norm = std::sqrt(cost);
  result.converged = converged;
  result.iterations = iter;
  result.message = message;

  result.std_errors = Eigen::VectorXd::Zero(n_par);
  if (converged) {
    const int n_obs = static_cast<int>(r.size());
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::MatrixXd cov = jtj.ldlt().solve(Eigen::MatrixXd::Identity(n_par, n_par));
    const double s2 = n_obs > n_par ? cost / (n_obs - n_par) : 1.0;
    for (int k = 0; k < n_par; ++k) {
      result.std_errors[k] = std::sqrt(std::max(s2 * cov(k, k), 0.0));
    }
  }
}

}  // namespace detail

// Absorption line fit: parameters (rate, width, center) of
// t(w) = 1/(1 + rate*delta_p/(width + i(center - w))), against magnitude
// data |t| - 1, or the complex t - 1 when the trace carries an imaginary
// part. delta_p is held fixed: a single trace only identifies the product
// rate*delta_p, so the thermal population difference must come from the
// caller.
inline FitResult fit_lineshape(const Trace& trace, double delta_p,
                               std::optional<Eigen::Vector3d> init = std::nullopt,
                               const FitOptions& opts = {}) {
  trace.validate();
  if (!(delta_p > 0.0)) throw std::invalid_argument("delta_p must be positive");
  const bool complex_fit = !trace.y_imag.empty();
  const std::size_t n = trace.x.size();

  // depth and extremum from the real part (the dip is negative-going)
  std::size_t k_min = 0;
  for (std::size_t k = 1; k < n; ++k) {
    if (trace.y[k] < trace.y[k_min]) k_min = k;
  }
  const double depth = -trace.y[k_min];
  if (!(depth > 1e-12)) throw std::invalid_argument("trace has no resonance dip");
  if (k_min == 0 || k_min == n - 1) {
    throw std::invalid_argument("resonance extremum must be interior to the trace");
  }

  Eigen::VectorXd p(3);
  if (init) {
    p = *init;
  } else {
    const double center = trace.x[k_min];
    // half width at half depth, scanned outward from the dip
    const double half = -0.5 * depth;
    double left = trace.x.front(), right = trace.x.back();
    for (std::size_t k = k_min; k-- > 0;) {
      if (trace.y[k] > half) {
        left = trace.x[k];
        break;
      }
    }
    for (std::size_t k = k_min + 1; k < n; ++k) {
      if (trace.y[k] > half) {
        right = trace.x[k];
        break;
      }
    }
    double width = 0.5 * std::abs(right - left);
    if (!(width > 0.0)) width = 0.1 * std::abs(trace.x.back() - trace.x.front());
    p << depth * width / delta_p, width, center;
  }

  const int n_obs = static_cast<int>(complex_fit ? 2 * n : n);
  auto eval = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r, Eigen::MatrixXd& jac) {
    r.resize(n_obs);
    jac.resize(n_obs, 3);
    const double rate = q[0], width = q[1], center = q[2];
    for (std::size_t k = 0; k < n; ++k) {
      const double wgt = trace.sigma.empty() ? 1.0 : 1.0 / trace.sigma[k];
      const complexd u = 1.0 / complexd(width, center - trace.x[k]);
      const complexd den = 1.0 + rate * delta_p * u;
      const complexd d_rate = delta_p * u;
      const complexd d_width = -rate * delta_p * u * u;
      const complexd d_center = complexd(0.0, -1.0) * rate * delta_p * u * u;
      const Eigen::Index i = static_cast<Eigen::Index>(k);
      if (complex_fit) {
        const complexd t = 1.0 / den - 1.0;
        const complexd scale = -1.0 / (den * den);
        r[2 * i] = wgt * (t.real() - trace.y[k]);
        r[2 * i + 1] = wgt * (t.imag() - trace.y_imag[k]);
        const complexd g0 = scale * d_rate, g1 = scale * d_width, g2 = scale * d_center;
        jac(2 * i, 0) = wgt * g0.real();
        jac(2 * i, 1) = wgt * g1.real();
        jac(2 * i, 2) = wgt * g2.real();
        jac(2 * i + 1, 0) = wgt * g0.imag();
        jac(2 * i + 1, 1) = wgt * g1.imag();
        jac(2 * i + 1, 2) = wgt * g2.imag();
      } else {
        const double mag = std::abs(den);
        r[i] = wgt * (1.0 / mag - 1.0 - trace.y[k]);
        const double scale = -1.0 / (mag * mag * mag);
        jac(i, 0) = wgt * scale * (std::conj(den) * d_rate).real();
        jac(i, 1) = wgt * scale * (std::conj(den) * d_width).real();
        jac(i, 2) = wgt * scale * (std::conj(den) * d_center).real();
      }
    }
  };
  auto valid = [](const Eigen::VectorXd& q) { return q[0] > 0.0 && q[1] > 0.0; };

  FitResult result;
  result.parameter_names = {"rate_GHz", "width_GHz", "center_GHz"};
  result.units = {"GHz", "GHz", "GHz"};
  detail::levenberg_marquardt(eval, valid, p, opts, result);
  return result;
}

// Dressed-cavity-width fit: parameters (kappa, gamma, g_n) of
// keff(H) = kappa + gamma*g_n^2/((omega12(H) - omega_r)^2 + gamma^2),
// with the spin transition frequency supplied as a function of field.
inline FitResult fit_cavity_width(const Trace& curve,
                                  const std::function<double(double)>& omega12_of_field,
                                  double omega_r_GHz,
                                  std::optional<Eigen::Vector3d> init = std::nullopt,
                                  const FitOptions& opts = {}) {
  curve.validate();
  if (!omega12_of_field) throw std::invalid_argument("transition frequency map required");
  const std::size_t n = curve.x.size();

  std::vector<double> detuning(n);
  for (std::size_t k = 0; k < n; ++k) {
    detuning[k] = omega12_of_field(curve.x[k]) - omega_r_GHz;
  }

  std::size_t k_max = 0, k_min = 0;
  for (std::size_t k = 1; k < n; ++k) {
    if (curve.y[k] > curve.y[k_max]) k_max = k;
    if (curve.y[k] < curve.y[k_min]) k_min = k;
  }
  const double peak = curve.y[k_max] - curve.y[k_min];
  if (!(peak > 1e-12)) throw std::invalid_argument("width curve has no peak");
  if (k_max == 0 || k_max == n - 1) {
    throw std::invalid_argument("width peak must be interior to the curve");
  }

  Eigen::VectorXd p(3);
  if (init) {
    p = *init;
  } else {
    const double kappa0 = curve.y[k_min];
    // detuning at half height approximates gamma for a Lorentzian
    const double half = kappa0 + 0.5 * peak;
    double gamma0 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (curve.y[k] >= half) gamma0 = std::max(gamma0, std::abs(detuning[k]));
    }
    if (!(gamma0 > 0.0)) gamma0 = 0.5;
    p << std::max(kappa0, 1e-6), gamma0, std::sqrt(peak * gamma0);
  }

  auto eval = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r, Eigen::MatrixXd& jac) {
    r.resize(static_cast<Eigen::Index>(n));
    jac.resize(static_cast<Eigen::Index>(n), 3);
    const double kappa = q[0], gamma = q[1], g = q[2];
    for (std::size_t k = 0; k < n; ++k) {
      const double wgt = curve.sigma.empty() ? 1.0 : 1.0 / curve.sigma[k];
      const double d2 = detuning[k] * detuning[k];
      const double den = d2 + gamma * gamma;
      const Eigen::Index i = static_cast<Eigen::Index>(k);
      r[i] = wgt * (kappa + gamma * g * g / den - curve.y[k]);
      jac(i, 0) = wgt;
      jac(i, 1) = wgt * g * g * (d2 - gamma * gamma) / (den * den);
      jac(i, 2) = wgt * 2.0 * gamma * g / den;
    }
  };
  auto valid = [](const Eigen::VectorXd& q) {
    return q[0] > 0.0 && q[1] > 0.0 && q[2] > 0.0;
  };

  FitResult result;
  result.parameter_names = {"kappa_GHz", "gamma_GHz", "g_n_GHz"};
  result.units = {"GHz", "GHz", "GHz"};
  detail::levenberg_marquardt(eval, valid, p, opts, result);
  return result;
}

}  // namespace clockspec
