#pragma once

namespace clockspec {

// Single source of truth for unit conversions. Energies are handled in
// frequency units (GHz, i.e. energy divided by the Planck constant)
// throughout the library; crystal-field inputs arrive in cm^-1, magnetic
// fields in Tesla, temperatures in Kelvin.
struct PhysicalConstants {
  static constexpr double cm1_to_GHz = 29.9792458;                // 1 cm^-1 in GHz
  static constexpr double bohr_magneton_GHz_per_T = 13.99624;     // mu_B / h
  static constexpr double boltzmann_GHz_per_K = 20.83661912;      // k_B / h
  // (mu0 / 4 pi) * mu_B expressed in T * nm^3, for point-dipole lattice sums
  static constexpr double dipole_prefactor_T_nm3 = 9.2740100783e-4;
};

}  // namespace clockspec
