#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "clockspec/constants.hpp"
#include "clockspec/hamiltonian.hpp"
#include "clockspec/parallel.hpp"
#include "clockspec/rng.hpp"

namespace clockspec {

inline std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 1) throw std::invalid_argument("linspace needs at least one point");
  if (n == 1) return {lo};
  std::vector<double> out(static_cast<std::size_t>(n));
  const double step = (hi - lo) / (n - 1);
  for (int k = 0; k < n; ++k) out[static_cast<std::size_t>(k)] = lo + step * k;
  out.back() = hi;
  return out;
}

// Spin-photon coupling density g(omega) in GHz; constant by default, with an
// optional power law g(w) = g0*(w/w_ref)^(p/2) about a reference frequency.
struct CouplingDensity {
  double g0_GHz = 0.025;
  double frequency_exponent = 0.0;  // p; enters as p/2 so that g^2 scales as w^p
  double reference_freq_GHz = 9.1;

  double at(double omega_GHz) const {
    if (frequency_exponent == 0.0) return g0_GHz;
    if (!(omega_GHz > 0.0)) {
      throw std::invalid_argument("coupling density needs a positive frequency");
    }
    return g0_GHz * std::pow(omega_GHz / reference_freq_GHz, 0.5 * frequency_exponent);
  }
};

// Lattice of like magnetic moments used for Monte Carlo estimates of the
// dipolar bias field along z at a central site.
struct DipolarLattice {
  Eigen::Matrix3d cell_nm = Eigen::Matrix3d::Identity();  // columns = lattice vectors
  std::vector<Eigen::Vector3d> sites_frac = {Eigen::Vector3d::Zero()};
  double moment_mu_b = 5.0;  // g_j*|m_j| along z, in Bohr magnetons
  double cutoff_nm = 5.0;

  // z field at the origin from a +z moment at displacement r
  // (point dipole, T when r is in nm)
  double bias_of_displacement(const Eigen::Vector3d& r_nm) const {
    const PhysicalConstants c{};
    const double r2 = r_nm.squaredNorm();
    const double r = std::sqrt(r2);
    return c.dipole_prefactor_T_nm3 * moment_mu_b *
           (3.0 * r_nm.z() * r_nm.z() / r2 - 1.0) / (r2 * r);
  }

  // displacements of every lattice site within the cutoff, excluding the
  // origin site itself
  std::vector<double> bias_terms_T() const {
    if (!(cutoff_nm > 0.0)) throw std::invalid_argument("cutoff must be positive");
    if (sites_frac.empty()) throw std::invalid_argument("lattice has no sites");
    if (std::abs(cell_nm.determinant()) < 1e-12) {
      throw std::invalid_argument("lattice cell is singular");
    }
    int nmax[3];
    for (int k = 0; k < 3; ++k) {
      const double len = cell_nm.col(k).norm();
      nmax[k] = static_cast<int>(std::ceil(cutoff_nm / len)) + 1;
    }
    std::vector<double> terms;
    for (int n1 = -nmax[0]; n1 <= nmax[0]; ++n1) {
      for (int n2 = -nmax[1]; n2 <= nmax[1]; ++n2) {
        for (int n3 = -nmax[2]; n3 <= nmax[2]; ++n3) {
          const Eigen::Vector3d origin =
              cell_nm * Eigen::Vector3d(static_cast<double>(n1), static_cast<double>(n2),
                                        static_cast<double>(n3));
          for (const Eigen::Vector3d& frac : sites_frac) {
            const Eigen::Vector3d r = origin + cell_nm * frac;
            const double dist = r.norm();
            if (dist < 1e-9 || dist > cutoff_nm) continue;
            terms.push_back(bias_of_displacement(r));
          }
        }
      }
    }
    if (terms.empty()) {
      throw std::invalid_argument("no lattice neighbours inside the cutoff");
    }
    return terms;
  }
};

// Static distribution of dipolar z-field biases seen by the probed spins.
struct DipolarDistribution {
  enum class Mode { gaussian, lattice_mc };

  Mode mode = Mode::gaussian;
  double sigma_T = 6e-3;          // gaussian mode width
  DipolarLattice lattice;         // lattice_mc mode geometry
  int mc_samples = 100000;        // sample count for width characterization
  std::uint64_t seed = 1;

  bool active() const { return mode == Mode::lattice_mc || sigma_T > 0.0; }

  void validate() const {
    if (mode == Mode::gaussian && sigma_T < 0.0) {
      throw std::invalid_argument("gaussian width must be non-negative");
    }
    if (mc_samples < 1000) {
      throw std::invalid_argument("Monte Carlo characterization needs at least 1000 samples");
    }
  }
};

// n deterministic bias samples; sample i depends only on (seed, i).
inline std::vector<double> dipolar_bias_samples(const DipolarDistribution& d, int n) {
  if (n < 1) throw std::invalid_argument("sample count must be positive");
  d.validate();
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  if (d.mode == DipolarDistribution::Mode::gaussian) {
    if (d.sigma_T == 0.0) return out;
    for (int i = 0; i < n; ++i) {
      auto eng = substream_engine(d.seed, static_cast<std::uint64_t>(i));
      std::normal_distribution<double> gauss(0.0, d.sigma_T);
      out[static_cast<std::size_t>(i)] = gauss(eng);
    }
    return out;
  }
  // lattice mode: every neighbour moment points up or down with equal
  // probability (infinite-temperature bath) and the biases add
  const std::vector<double> terms = d.lattice.bias_terms_T();
  for (int i = 0; i < n; ++i) {
    auto eng = substream_engine(d.seed, static_cast<std::uint64_t>(i));
    double sum = 0.0;
    std::uint64_t bits = 0;
    int left = 0;
    for (const double b : terms) {
      if (left == 0) {
        bits = eng();
        left = 64;
      }
      sum += (bits & 1u) ? b : -b;
      bits >>= 1;
      --left;
    }
    out[static_cast<std::size_t>(i)] = sum;
  }
  return out;
}

// RMS width of the bias distribution. Analytic for the gaussian mode; for
// the lattice mode the signs are independent, so the variance is the sum of
// squared per-site terms (no sampling needed).
inline double dipolar_sigma_T(const DipolarDistribution& d) {
  if (d.mode == DipolarDistribution::Mode::gaussian) return d.sigma_T;
  const std::vector<double> terms = d.lattice.bias_terms_T();
  double s2 = 0.0;
  for (const double b : terms) s2 += b * b;
  return std::sqrt(s2);
}

// Relaxation model: fixed T1, and a coherence time that degrades with the
// square of the transition frequency slope away from its minimum. At the
// minimum (frequency omega_clock) the coherence time is t2_clock.
struct BroadeningModel {
  double t1_s = 20e-6;
  double t2_clock_s = 8e-9;
  double omega_clock_GHz = 9.1;
  DipolarDistribution dipolar;

  // coherence time at a transition of frequency omega, seconds
  double t2_of_field(double omega12_GHz) const {
    if (!(omega12_GHz > 0.0)) throw std::invalid_argument("frequency must be positive");
    const double ratio = omega_clock_GHz / omega12_GHz;
    return t2_clock_s * ratio * ratio;
  }

  // homogeneous half-width gamma in GHz (rates add; 1/s -> GHz via 1e-9)
  double homogeneous_width_GHz(double omega12_GHz) const {
    return (1.0 / t1_s + 1.0 / t2_of_field(omega12_GHz)) * 1e-9;
  }
};

// Largest field-to-frequency conversion of an inhomogeneous field width for
// a level pair whose projections move as +/- mj_abs (both branches shift).
inline double max_frequency_broadening_GHz(double mj_abs, double g_j, double sigma_T) {
  const PhysicalConstants c{};
  return 2.0 * mj_abs * g_j * c.bohr_magneton_GHz_per_T * sigma_T;
}

struct Transition {
  int lower = 0;
  int upper = 0;
  double omega_GHz = 0.0;
  double matrix_element = 0.0;  // |<upper| drive |lower>|
  double delta_p = 0.0;         // thermal population difference (lower - upper)
  double gamma_GHz = 0.0;       // homogeneous half-width
  double rate_GHz = 0.0;        // absorption rate into the photon bath
};

struct TransitionOptions {
  double max_freq_GHz = 14.0;
  double matrix_element_floor = 1e-4;
  double nuclear_projection_window = 0.5;  // |<Iz>_a - <Iz>_b| acceptance
  double drive_tilt_rad = 0.0;             // photon field angle from z, in the x-z plane
};

// Boltzmann populations referenced to the lowest level; safe for energy
// spreads far beyond the exponential range.
inline Eigen::VectorXd boltzmann_populations(const Eigen::VectorXd& energies_GHz,
                                             double temperature_K) {
  if (!(temperature_K > 0.0)) throw std::invalid_argument("temperature must be positive");
  const PhysicalConstants c{};
  const double kt = c.boltzmann_GHz_per_K * temperature_K;
  const double e0 = energies_GHz.minCoeff();
  Eigen::VectorXd p = ((e0 - energies_GHz.array()) / kt).exp();
  return p / p.sum();
}

// (exp(-E1/kT) - exp(-E2/kT)) / Z with Z summed over the full spectrum;
// energies referenced to the ground level before exponentiating.
inline double population_difference(double e1_GHz, double e2_GHz,
                                    const Eigen::VectorXd& energies_GHz,
                                    double temperature_K) {
  if (!(temperature_K > 0.0)) throw std::invalid_argument("temperature must be positive");
  const PhysicalConstants c{};
  const double kt = c.boltzmann_GHz_per_K * temperature_K;
  const double e0 = energies_GHz.minCoeff();
  const double z = ((e0 - energies_GHz.array()) / kt).exp().sum();
  return (std::exp((e0 - e1_GHz) / kt) - std::exp((e0 - e2_GHz) / kt)) / z;
}

inline double bose_occupation(double omega_GHz, double temperature_K) {
  if (!(omega_GHz > 0.0)) throw std::invalid_argument("frequency must be positive");
  if (!(temperature_K > 0.0)) throw std::invalid_argument("temperature must be positive");
  const PhysicalConstants c{};
  return 1.0 / std::expm1(omega_GHz / (c.boltzmann_GHz_per_K * temperature_K));
}

// absorption rate 2*pi*g(w)^2*|M|^2*(n(w)+1), in GHz
inline double transition_rate_GHz(const CouplingDensity& coupling, double matrix_element,
                                  double omega_GHz, double temperature_K) {
  if (!(omega_GHz > 0.0)) throw std::invalid_argument("frequency must be positive");
  const double g = coupling.at(omega_GHz);
  return 2.0 * M_PI * g * g * matrix_element * matrix_element *
         (bose_occupation(omega_GHz, temperature_K) + 1.0);
}

// All level pairs the photon can drive: positive frequency below the cutoff,
// matrix element above the floor, nuclear projection conserved. The drive
// operator is Jz, optionally tilted toward Jx.
inline std::vector<Transition> enumerate_transitions(const SpinSpace& space,
                                                     const EigenSolution& sol,
                                                     const BroadeningModel& broadening,
                                                     const CouplingDensity& coupling,
                                                     double temperature_K,
                                                     const TransitionOptions& opts = {}) {
  if (sol.eigenvectors.size() == 0) {
    throw std::invalid_argument("enumerate_transitions requires eigenvectors");
  }
  const int n = static_cast<int>(sol.energies_GHz.size());
  const Eigen::MatrixXcd& v = sol.eigenvectors;

  Eigen::MatrixXcd drive;
  if (opts.drive_tilt_rad == 0.0) {
    // Jz is diagonal in the product basis; scale rows instead of a full product
    drive = v.adjoint() * (space.jz_diagonal().asDiagonal() * v);
  } else {
    const OperatorMatrix op = std::cos(opts.drive_tilt_rad) * space.jz() +
                              std::sin(opts.drive_tilt_rad) * space.jx();
    drive = v.adjoint() * (op * v);
  }

  const Eigen::VectorXd pop = boltzmann_populations(sol.energies_GHz, temperature_K);

  std::vector<Transition> out;
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      const double omega = sol.energies_GHz[b] - sol.energies_GHz[a];
      if (omega > opts.max_freq_GHz) break;  // energies ascending
      if (!(omega > 0.0)) continue;          // degenerate pair carries no line
      if (std::abs(sol.iz_expect[a] - sol.iz_expect[b]) >= opts.nuclear_projection_window) {
        continue;  // drive conserves the nuclear projection
      }
      const double m = std::abs(drive(b, a));
      if (m < opts.matrix_element_floor) continue;
      Transition t;
      t.lower = a;
      t.upper = b;
      t.omega_GHz = omega;
      t.matrix_element = m;
      t.delta_p = pop[a] - pop[b];
      t.gamma_GHz = broadening.homogeneous_width_GHz(omega);
      t.rate_GHz = transition_rate_GHz(coupling, m, omega, temperature_K);
      out.push_back(t);
    }
  }
  return out;
}

// Relative transmission with every line summed inside one denominator:
// t(w) = 1 / (1 + sum_l rate_l*dp_l / (gamma_l + i(w_l - w))).
inline complexd line_sum_transmission(const std::vector<Transition>& lines, double omega_GHz) {
  complexd chi(0.0, 0.0);
  for (const Transition& t : lines) {
    chi += t.rate_GHz * t.delta_p /
           complexd(t.gamma_GHz, t.omega_GHz - omega_GHz);
  }
  return 1.0 / (1.0 + chi);
}

struct TransmissionOptions {
  TransitionOptions transitions;
  int field_average_samples = 200;  // dipolar bias Monte Carlo per field point
};

namespace detail {

inline Eigen::VectorXcd response_column(const SpinSpace& space, const FieldVector& field,
                                        const std::vector<double>& freq_GHz,
                                        const BroadeningModel& broadening,
                                        const CouplingDensity& coupling, double temperature_K,
                                        const TransitionOptions& topts) {
  const EigenSolution sol = space.eigensolve(field, true);
  const std::vector<Transition> lines =
      enumerate_transitions(space, sol, broadening, coupling, temperature_K, topts);
  Eigen::VectorXcd out(static_cast<Eigen::Index>(freq_GHz.size()));
  for (std::size_t k = 0; k < freq_GHz.size(); ++k) {
    out[static_cast<Eigen::Index>(k)] = line_sum_transmission(lines, freq_GHz[k]);
  }
  return out;
}

}  // namespace detail

// Transmission spectrum at one applied field, averaged over the dipolar bias
// distribution (each bias shifts the z component and is solved exactly).
inline Eigen::VectorXcd transmission_trace(const SpinSpace& space, const FieldVector& field,
                                           const std::vector<double>& freq_GHz,
                                           const BroadeningModel& broadening,
                                           const CouplingDensity& coupling,
                                           double temperature_K,
                                           const TransmissionOptions& opts = {},
                                           int threads = 1) {
  std::vector<double> shifts{0.0};
  if (broadening.dipolar.active()) {
    shifts = dipolar_bias_samples(broadening.dipolar, opts.field_average_samples);
  }
  Eigen::MatrixXcd cols(static_cast<Eigen::Index>(freq_GHz.size()),
                        static_cast<Eigen::Index>(shifts.size()));
  parallel_for(shifts.size(), threads, [&](std::size_t s) {
    cols.col(static_cast<Eigen::Index>(s)) =
        detail::response_column(space, field.with_z_shift(shifts[s]), freq_GHz, broadening,
                                coupling, temperature_K, opts.transitions);
  });
  return cols.rowwise().mean();
}

inline complexd transmission(const SpinSpace& space, const FieldVector& field,
                             double omega_GHz, const BroadeningModel& broadening,
                             const CouplingDensity& coupling, double temperature_K,
                             const TransmissionOptions& opts = {}) {
  const std::vector<double> freqs{omega_GHz};
  return transmission_trace(space, field, freqs, broadening, coupling, temperature_K,
                            opts)[0];
}

struct MapGrid {
  double field_min_T = 0.0;
  double field_max_T = 0.25;
  int field_points = 200;
  double freq_min_GHz = 0.01;
  double freq_max_GHz = 14.0;
  int freq_points = 500;
  double theta_rad = 0.0;
  double phi_rad = 0.0;

  void validate() const {
    if (field_points < 2 || freq_points < 2) {
      throw std::invalid_argument("map grid needs at least 2 points per axis");
    }
    if (!(field_max_T > field_min_T) || !(freq_max_GHz > freq_min_GHz)) {
      throw std::invalid_argument("map grid bounds must be increasing");
    }
  }

  std::vector<double> field_values() const {
    return linspace(field_min_T, field_max_T, field_points);
  }
  std::vector<double> freq_values() const {
    return linspace(freq_min_GHz, freq_max_GHz, freq_points);
  }
};

struct MapInfo {
  double temperature_K = 0.0;
  double g0_GHz = 0.0;
  double delta_field_T = 0.0;      // set by normalize_map
  double reference_field_T = 0.0;  // set by normalize_map
  bool normalized = false;
};

struct TransmissionMap {
  std::vector<double> field_T;
  std::vector<double> freq_GHz;
  Eigen::MatrixXcd values;  // freq index is the row, field index the column
  MapInfo info;
};

// Full transmission map. For axial sweeps on a uniform field grid the
// dipolar bias samples are snapped to a refined field grid so each distinct
// field is diagonalized once and shared between map columns; otherwise every
// (column, sample) pair is solved exactly.
inline TransmissionMap simulate_raw_map(const SpinSpace& space, const MapGrid& grid,
                                        const BroadeningModel& broadening,
                                        const CouplingDensity& coupling,
                                        double temperature_K,
                                        const TransmissionOptions& opts = {},
                                        int threads = 0) {
  grid.validate();
  TransmissionMap map;
  map.field_T = grid.field_values();
  map.freq_GHz = grid.freq_values();
  map.info.temperature_K = temperature_K;
  map.info.g0_GHz = coupling.g0_GHz;
  const Eigen::Index nw = static_cast<Eigen::Index>(map.freq_GHz.size());
  const Eigen::Index nf = static_cast<Eigen::Index>(map.field_T.size());
  map.values.resize(nw, nf);

  std::vector<double> shifts{0.0};
  if (broadening.dipolar.active()) {
    shifts = dipolar_bias_samples(broadening.dipolar, opts.field_average_samples);
  }

  const double h = (grid.field_max_T - grid.field_min_T) / (grid.field_points - 1);
  const bool axial = grid.theta_rad == 0.0;
  if (axial && shifts.size() > 1) {
    // aux grid step: fine enough to resolve the bias width, at most 8 per bin
    const double sigma = dipolar_sigma_T(broadening.dipolar);
    const int m = static_cast<int>(
        std::clamp<long>(std::lround(std::ceil(h / std::max(sigma / 4.0, 5e-5))), 1, 8));
    const double step = h / m;
    std::vector<long> offsets(shifts.size());
    for (std::size_t s = 0; s < shifts.size(); ++s) {
      offsets[s] = std::lround(shifts[s] / step);
    }
    std::unordered_map<long, Eigen::Index> slot;  // aux index -> column slot
    std::vector<long> needed;
    for (Eigen::Index k = 0; k < nf; ++k) {
      for (const long off : offsets) {
        const long aux = static_cast<long>(k) * m + off;
        if (slot.emplace(aux, static_cast<Eigen::Index>(needed.size())).second) {
          needed.push_back(aux);
        }
      }
    }
    std::sort(needed.begin(), needed.end());
    for (std::size_t q = 0; q < needed.size(); ++q) {
      slot[needed[q]] = static_cast<Eigen::Index>(q);
    }
    Eigen::MatrixXcd aux_cols(nw, static_cast<Eigen::Index>(needed.size()));
    parallel_for(needed.size(), threads, [&](std::size_t q) {
      const double f = grid.field_min_T + static_cast<double>(needed[q]) * step;
      aux_cols.col(static_cast<Eigen::Index>(q)) = detail::response_column(
          space, {f, 0.0, grid.phi_rad}, map.freq_GHz, broadening, coupling, temperature_K,
          opts.transitions);
    });
    const double inv_n = 1.0 / static_cast<double>(shifts.size());
    for (Eigen::Index k = 0; k < nf; ++k) {
      Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(nw);
      for (const long off : offsets) {
        acc += aux_cols.col(slot.at(static_cast<long>(k) * m + off));
      }
      map.values.col(k) = acc * inv_n;
    }
    return map;
  }

  parallel_for(static_cast<std::size_t>(nf), threads, [&](std::size_t k) {
    const FieldVector base{map.field_T[k], grid.theta_rad, grid.phi_rad};
    Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(nw);
    for (const double dz : shifts) {
      acc += detail::response_column(space, base.with_z_shift(dz), map.freq_GHz, broadening,
                                     coupling, temperature_K, opts.transitions);
    }
    map.values.col(static_cast<Eigen::Index>(k)) =
        acc / static_cast<double>(shifts.size());
  });
  return map;
}

namespace detail {

// column of the map linearly interpolated at an arbitrary field
inline Eigen::VectorXcd interp_column(const TransmissionMap& map, double field_T) {
  const std::vector<double>& f = map.field_T;
  if (field_T <= f.front()) return map.values.col(0);
  if (field_T >= f.back()) return map.values.col(map.values.cols() - 1);
  const auto it = std::upper_bound(f.begin(), f.end(), field_T);
  const Eigen::Index hi = static_cast<Eigen::Index>(it - f.begin());
  const Eigen::Index lo = hi - 1;
  const double w = (field_T - f[static_cast<std::size_t>(lo)]) /
                   (f[static_cast<std::size_t>(hi)] - f[static_cast<std::size_t>(lo)]);
  return (1.0 - w) * map.values.col(lo) + w * map.values.col(hi);
}

}  // namespace detail

// Differential normalization used for presenting the raw map: the signal at
// (w, H) is the transmission change between H and H + delta, divided by the
// spectrum at a quiet reference field. The shifted column is clamped at the
// sweep edge.
inline TransmissionMap normalize_map(const TransmissionMap& raw, double delta_field_T,
                                     double reference_field_T) {
  if (raw.info.normalized) throw std::invalid_argument("map is already normalized");
  if (!(delta_field_T > 0.0)) throw std::invalid_argument("field offset must be positive");
  const double span = raw.field_T.back() - raw.field_T.front();
  if (delta_field_T > span) {
    throw std::invalid_argument("field offset exceeds the sweep span");
  }
  if (reference_field_T < raw.field_T.front() || reference_field_T > raw.field_T.back()) {
    throw std::invalid_argument("reference field lies outside the sweep");
  }
  TransmissionMap out;
  out.field_T = raw.field_T;
  out.freq_GHz = raw.freq_GHz;
  out.info = raw.info;
  out.info.normalized = true;
  out.info.delta_field_T = delta_field_T;
  out.info.reference_field_T = reference_field_T;
  const Eigen::VectorXcd ref = detail::interp_column(raw, reference_field_T);
  out.values.resize(raw.values.rows(), raw.values.cols());
  for (Eigen::Index k = 0; k < raw.values.cols(); ++k) {
    const Eigen::VectorXcd shifted =
        detail::interp_column(raw, raw.field_T[static_cast<std::size_t>(k)] + delta_field_T);
    out.values.col(k) = (raw.values.col(k) - shifted).cwiseQuotient(ref);
  }
  return out;
}

}  // namespace clockspec
