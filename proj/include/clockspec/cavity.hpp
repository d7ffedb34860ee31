#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "clockspec/hamiltonian.hpp"
#include "clockspec/parallel.hpp"
#include "clockspec/spectro.hpp"

namespace clockspec {

// On-chip resonant mode whose linewidth is dressed by the spin ensemble.
// The collective coupling scales with the square root of the spin
// concentration x.
struct CavityModel {
  double omega_r_GHz = 11.7;
  double kappa_GHz = 0.117;    // intrinsic width, omega_r / Q
  double g_n_full_GHz = 0.1;   // collective coupling at x = 1
  double concentration_x = 1.0;
  bool population_weighting = true;   // weight each line by its delta_p
  double detuning_window_GHz = 3.0;   // lines farther from omega_r are dropped

  double g_n_GHz() const { return g_n_full_GHz * std::sqrt(concentration_x); }

  void validate() const {
    if (!(omega_r_GHz > 0.0)) throw std::invalid_argument("omega_r must be positive");
    if (!(kappa_GHz > 0.0)) throw std::invalid_argument("kappa must be positive");
    if (!(concentration_x > 0.0) || concentration_x > 1.0) {
      throw std::invalid_argument("concentration must lie in (0, 1]");
    }
    if (g_n_full_GHz < 0.0) throw std::invalid_argument("coupling must be non-negative");
  }
};

// Dressed width from a single spin line at omega12:
// kappa_eff = kappa + gamma*G^2 / ((omega12 - omega_r)^2 + gamma^2).
inline double effective_kappa(const CavityModel& c, double omega12_GHz, double gamma_GHz) {
  if (!(gamma_GHz > 0.0)) throw std::invalid_argument("gamma must be positive");
  const double g = c.g_n_GHz();
  const double d = omega12_GHz - c.omega_r_GHz;
  return c.kappa_GHz + gamma_GHz * g * g / (d * d + gamma_GHz * gamma_GHz);
}

// Additive extension over every line inside the detuning window. With
// population weighting each term is scaled by delta_p relative to the
// best-polarized line in the window, so a single line always reproduces the
// single-line form; the absolute polarization is part of the calibrated
// collective coupling, not counted twice.
inline double effective_kappa_total(const CavityModel& c,
                                    const std::vector<Transition>& lines) {
  const double g = c.g_n_GHz();
  double kappa = c.kappa_GHz;
  double dp_max = 0.0;
  for (const Transition& t : lines) {
    if (std::abs(t.omega_GHz - c.omega_r_GHz) > c.detuning_window_GHz) continue;
    dp_max = std::max(dp_max, t.delta_p);
  }
  for (const Transition& t : lines) {
    const double d = t.omega_GHz - c.omega_r_GHz;
    if (std::abs(d) > c.detuning_window_GHz) continue;
    if (!(t.gamma_GHz > 0.0)) throw std::invalid_argument("line width must be positive");
    double w = 1.0;
    if (c.population_weighting) {
      if (!(dp_max > 0.0)) continue;  // unpolarized ensemble leaves the mode bare
      w = t.delta_p / dp_max;
    }
    kappa += w * t.gamma_GHz * g * g / (d * d + t.gamma_GHz * t.gamma_GHz);
  }
  return kappa;
}

struct CavityMapResult {
  TransmissionMap map;                 // complex transmission near the mode
  std::vector<double> kappa_eff_GHz;   // dressed width per field point
};

// Transmission around the cavity mode across a level diagram: per field the
// mode appears as a notch of width kappa_eff(H) at omega_r,
// t(w) = 1 - (kappa/2) / (kappa_eff/2 + i(w - omega_r)).
// Dipolar field averaging is not applied here; the ensemble enters only
// through the dressed width.
inline CavityMapResult cavity_map(const SpinSpace& space, const CavityModel& c,
                                  const std::vector<EigenSolution>& diagram,
                                  const BroadeningModel& broadening, double temperature_K,
                                  const std::vector<double>& freq_GHz,
                                  const TransitionOptions& topts = {}, int threads = 0) {
  c.validate();
  if (diagram.empty()) throw std::invalid_argument("level diagram is empty");
  if (freq_GHz.size() < 2 || freq_GHz.front() > c.omega_r_GHz ||
      freq_GHz.back() < c.omega_r_GHz) {
    throw std::invalid_argument("frequency grid must span the cavity mode");
  }

  TransitionOptions opts = topts;
  opts.max_freq_GHz = std::max(opts.max_freq_GHz, c.omega_r_GHz + c.detuning_window_GHz);
  const CouplingDensity no_line_coupling{0.0, 0.0, c.omega_r_GHz};

  CavityMapResult out;
  out.map.freq_GHz = freq_GHz;
  out.map.field_T.resize(diagram.size());
  out.map.info.temperature_K = temperature_K;
  out.map.values.resize(static_cast<Eigen::Index>(freq_GHz.size()),
                        static_cast<Eigen::Index>(diagram.size()));
  out.kappa_eff_GHz.resize(diagram.size());

  parallel_for(diagram.size(), threads, [&](std::size_t k) {
    const EigenSolution* sol = &diagram[k];
    EigenSolution solved;
    if (sol->eigenvectors.size() == 0) {
      solved = space.eigensolve(sol->field, true);
      sol = &solved;
    }
    const std::vector<Transition> lines = enumerate_transitions(
        space, *sol, broadening, no_line_coupling, temperature_K, opts);
    const double keff = effective_kappa_total(c, lines);
    out.kappa_eff_GHz[k] = keff;
    out.map.field_T[k] = diagram[k].field.magnitude_T;
    for (std::size_t q = 0; q < freq_GHz.size(); ++q) {
      out.map.values(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(k)) =
          1.0 - (0.5 * c.kappa_GHz) /
                    complexd(0.5 * keff, freq_GHz[q] - c.omega_r_GHz);
    }
  });
  return out;
}

// C = G^2 / (kappa * gamma); gamma supplied by the caller (depends on the
// concentration through the coherence time).
inline double cooperativity(const CavityModel& c, double gamma_GHz) {
  if (!(gamma_GHz > 0.0)) throw std::invalid_argument("gamma must be positive");
  c.validate();
  const double g = c.g_n_GHz();
  return g * g / (c.kappa_GHz * gamma_GHz);
}

inline bool strong_coupling(const CavityModel& c, double gamma_GHz) {
  if (!(gamma_GHz > 0.0)) throw std::invalid_argument("gamma must be positive");
  return c.g_n_GHz() > std::max(c.kappa_GHz, gamma_GHz);
}

// Concentration at which the collective coupling crosses the larger of
// (kappa, gamma); may exceed 1 when the crossing is out of reach.
inline double strong_coupling_boundary_x(const CavityModel& c, double gamma_GHz) {
  if (!(gamma_GHz > 0.0)) throw std::invalid_argument("gamma must be positive");
  if (!(c.g_n_full_GHz > 0.0)) throw std::invalid_argument("coupling must be positive");
  const double threshold = std::max(c.kappa_GHz, gamma_GHz);
  const double r = threshold / c.g_n_full_GHz;
  return r * r;
}

}  // namespace clockspec
