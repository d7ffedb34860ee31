#pragma once

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "clockspec/constants.hpp"
#include "clockspec/parallel.hpp"
#include "clockspec/spinops.hpp"

namespace clockspec {

// Crystal-field + hyperfine parameters of a lanthanide ion with one coupled
// nuclear spin. Crystal-field coefficients follow the extended Stevens
// convention and are given in cm^-1; all internal energies are E/h in GHz.
struct SpinSystem {
  double j_electronic = 8.0;
  double i_nuclear = 3.5;
  double g_j = 1.25;
  double b20_cm1 = 0.601;
  double b40_cm1 = 6.93e-3;
  double b60_cm1 = -5.1e-5;
  double b44_cm1 = 3.14e-3;
  double a_hyperfine_cm1 = 2.77e-2;  // A * Jz * Iz, Ising form

  int dimension() const {
    return static_cast<int>(std::lround(2.0 * j_electronic + 1.0)) *
           static_cast<int>(std::lround(2.0 * i_nuclear + 1.0));
  }

  void validate() const {
    AngularMomentumBasis je(j_electronic);  // throws on bad j
    AngularMomentumBasis in(i_nuclear);
    if (!(g_j > 0.0)) throw std::invalid_argument("g_j must be positive");
  }
};

// Static magnetic field in spherical coordinates; theta measured from the
// crystal z axis.
struct FieldVector {
  double magnitude_T = 0.0;
  double theta_rad = 0.0;
  double phi_rad = 0.0;

  Eigen::Vector3d cartesian_T() const {
    return {magnitude_T * std::sin(theta_rad) * std::cos(phi_rad),
            magnitude_T * std::sin(theta_rad) * std::sin(phi_rad),
            magnitude_T * std::cos(theta_rad)};
  }

  static FieldVector along_z(double magnitude_T) { return {magnitude_T, 0.0, 0.0}; }

  // Same transverse components, z component shifted by dz (used for dipolar
  // bias averaging). Result is renormalized back to spherical form.
  FieldVector with_z_shift(double dz_T) const {
    Eigen::Vector3d v = cartesian_T();
    v.z() += dz_T;
    FieldVector out;
    out.magnitude_T = v.norm();
    if (out.magnitude_T < 1e-300) return out;
    out.theta_rad = std::acos(std::clamp(v.z() / out.magnitude_T, -1.0, 1.0));
    out.phi_rad = std::atan2(v.y(), v.x());
    return out;
  }
};

struct EigenSolution {
  FieldVector field;
  Eigen::VectorXd energies_GHz;      // ascending
  Eigen::MatrixXcd eigenvectors;     // columns, empty if not kept
  Eigen::VectorXd jz_expect;         // <Jz> per level
  Eigen::VectorXd iz_expect;         // <Iz> per level
};

inline void check_hermitian_or_throw(const OperatorMatrix& h) {
  if (!is_hermitian(h, 1e-12)) {
    throw std::invalid_argument("Hamiltonian matrix is not Hermitian");
  }
}

// Dense Hermitian diagonalization; eigenvalues ascending.
inline void diagonalize(const OperatorMatrix& h, Eigen::VectorXd& evals,
                        Eigen::MatrixXcd& evecs, bool keep_vectors = true) {
  check_hermitian_or_throw(h);
  Eigen::SelfAdjointEigenSolver<OperatorMatrix> solver;
  solver.compute(h, keep_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("eigensolver failed to converge");
  }
  evals = solver.eigenvalues();
  if (keep_vectors) evecs = solver.eigenvectors();
  else evecs.resize(0, 0);
}

// Precomputed operator cache for one SpinSystem. The field-free part
// (crystal field + hyperfine) never changes across a sweep; only the Zeeman
// term is rebuilt per field point.
class SpinSpace {
 public:
  explicit SpinSpace(const SpinSystem& system) : system_(system) {
    system.validate();
    AngularMomentumBasis je(system.j_electronic);
    AngularMomentumBasis in(system.i_nuclear);
    const int ne = je.dimension();
    const int ni = in.dimension();
    const OperatorMatrix ide = OperatorMatrix::Identity(ne, ne);
    const OperatorMatrix idi = OperatorMatrix::Identity(ni, ni);

    const LadderMatrices le = ladder_matrices(je);
    const LadderMatrices li = ladder_matrices(in);
    const OperatorMatrix jx_e = 0.5 * (le.plus + le.minus);
    const OperatorMatrix jy_e = complexd(0.0, -0.5) * (le.plus - le.minus);

    jx_ = tensor_product(jx_e, idi);
    jy_ = tensor_product(jy_e, idi);
    jz_ = tensor_product(le.z, idi);
    iz_ = tensor_product(ide, li.z);

    const PhysicalConstants c{};
    OperatorMatrix cf = c.cm1_to_GHz *
        (system.b20_cm1 * stevens_operator(je, 2, 0) +
         system.b40_cm1 * stevens_operator(je, 4, 0) +
         system.b60_cm1 * stevens_operator(je, 6, 0) +
         system.b44_cm1 * stevens_operator(je, 4, 4));
    field_free_ = tensor_product(cf, idi) +
                  (system.a_hyperfine_cm1 * c.cm1_to_GHz) * jz_.cwiseProduct(iz_);
    // jz_ and iz_ are diagonal, so the elementwise product equals Jz*Iz.

    jz_diag_ = jz_.diagonal().real();
    iz_diag_ = iz_.diagonal().real();
  }

  const SpinSystem& system() const { return system_; }
  int dimension() const { return static_cast<int>(field_free_.rows()); }
  const OperatorMatrix& jx() const { return jx_; }
  const OperatorMatrix& jy() const { return jy_; }
  const OperatorMatrix& jz() const { return jz_; }
  const OperatorMatrix& iz() const { return iz_; }
  const OperatorMatrix& field_free() const { return field_free_; }
  const Eigen::VectorXd& jz_diagonal() const { return jz_diag_; }
  const Eigen::VectorXd& iz_diagonal() const { return iz_diag_; }

  OperatorMatrix hamiltonian(const FieldVector& field) const {
    const PhysicalConstants c{};
    const Eigen::Vector3d b = field.cartesian_T();
    const double scale = system_.g_j * c.bohr_magneton_GHz_per_T;
    OperatorMatrix h = field_free_;
    if (b.x() != 0.0) h += (scale * b.x()) * jx_;
    if (b.y() != 0.0) h += (scale * b.y()) * jy_;
    if (b.z() != 0.0) h += (scale * b.z()) * jz_;
    return h;
  }

  EigenSolution eigensolve(const FieldVector& field, bool keep_vectors = true) const {
    EigenSolution sol;
    sol.field = field;
    Eigen::MatrixXcd vecs;
    diagonalize(hamiltonian(field), sol.energies_GHz, vecs, true);
    const Eigen::MatrixXd weight = vecs.cwiseAbs2();
    sol.jz_expect = weight.transpose() * jz_diag_;
    sol.iz_expect = weight.transpose() * iz_diag_;
    if (keep_vectors) sol.eigenvectors = std::move(vecs);
    return sol;
  }

 private:
  SpinSystem system_;
  OperatorMatrix jx_, jy_, jz_, iz_;
  OperatorMatrix field_free_;
  Eigen::VectorXd jz_diag_, iz_diag_;
};

inline OperatorMatrix build_hamiltonian(const SpinSystem& system, const FieldVector& field) {
  return SpinSpace(system).hamiltonian(field);
}

// Eigensolutions over a strictly increasing field grid (fixed direction).
inline std::vector<EigenSolution> sweep(const SpinSpace& space,
                                        const std::vector<double>& field_T,
                                        double theta_rad = 0.0, double phi_rad = 0.0,
                                        bool keep_vectors = false, int threads = 0) {
  if (field_T.empty()) throw std::invalid_argument("field grid is empty");
  for (std::size_t k = 1; k < field_T.size(); ++k) {
    if (!(field_T[k] > field_T[k - 1])) {
      throw std::invalid_argument("field grid must be strictly increasing");
    }
  }
  std::vector<EigenSolution> out(field_T.size());
  parallel_for(field_T.size(), threads, [&](std::size_t k) {
    out[k] = space.eigensolve({field_T[k], theta_rad, phi_rad}, keep_vectors);
  });
  return out;
}

// Reorder the levels of `next` to maximize overlap with `prev` (greedy,
// largest overlaps first). Both solutions must carry eigenvectors.
inline std::vector<int> track_levels(const EigenSolution& prev, const EigenSolution& next) {
  if (prev.eigenvectors.size() == 0 || next.eigenvectors.size() == 0) {
    throw std::invalid_argument("track_levels requires eigenvectors");
  }
  const int n = static_cast<int>(prev.eigenvectors.cols());
  Eigen::MatrixXd overlap =
      (prev.eigenvectors.adjoint() * next.eigenvectors).cwiseAbs2();
  std::vector<int> match(n, -1);
  std::vector<bool> used_row(n, false), used_col(n, false);
  for (int pass = 0; pass < n; ++pass) {
    int bi = -1, bj = -1;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
      if (used_row[i]) continue;
      for (int j = 0; j < n; ++j) {
        if (used_col[j]) continue;
        if (overlap(i, j) > best) {
          best = overlap(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    match[bi] = bj;
    used_row[bi] = true;
    used_col[bj] = true;
  }
  return match;
}

// Nearest half-integer to <Iz>, stored doubled to stay integral; exact ties
// resolve toward the smaller |m_I|.
inline long nuclear_label2(double iz_expect) {
  const double two = 2.0 * iz_expect;
  const double lo = std::floor(two), hi = std::ceil(two);
  if (two - lo < hi - two) return static_cast<long>(lo);
  if (hi - two < two - lo) return static_cast<long>(hi);
  return std::abs(lo) <= std::abs(hi) ? static_cast<long>(lo) : static_cast<long>(hi);
}

struct Anticrossing {
  double field_center_T = 0.0;
  double gap_GHz = 0.0;
  int lower_level = 0;
  int upper_level = 0;
  double nuclear_label = 0.0;  // shared <Iz> of the pair, rounded to half-integers
  bool avoided = true;         // false when the refined gap is numerically zero
};

struct AnticrossingOptions {
  double field_tol_T = 1e-4;    // golden-section bracket width at termination
  double gap_floor_GHz = 1e-6;  // below this the crossing is reported as unresolved
};

// Pair selector: given one eigensolution, return index pairs whose gap is
// scanned for local minima. The default groups levels by rounded <Iz>
// (exact quantum number for the Ising hyperfine form) and takes the two
// lowest per group; with no nuclear structure it takes the global two lowest.
using PairSelector = std::function<std::vector<std::pair<int, int>>(const EigenSolution&)>;

inline std::vector<std::pair<int, int>> default_pair_selector(const EigenSolution& sol) {
  const int n = static_cast<int>(sol.energies_GHz.size());
  std::vector<std::pair<int, int>> pairs;
  // group by rounded 2*<Iz>; robust because Iz commutes with the Hamiltonian
  std::vector<std::pair<long, int>> keyed(n);
  for (int k = 0; k < n; ++k) keyed[k] = {nuclear_label2(sol.iz_expect[k]), k};
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::size_t start = 0;
  while (start < keyed.size()) {
    std::size_t stop = start;
    while (stop < keyed.size() && keyed[stop].first == keyed[start].first) ++stop;
    if (stop - start >= 2) {
      // indices within a group keep ascending-energy order
      pairs.emplace_back(keyed[start].second, keyed[start + 1].second);
    }
    start = stop;
  }
  if (pairs.empty() && n >= 2) pairs.emplace_back(0, 1);
  return pairs;
}

namespace detail {

// Worst deviation of 2*<Iz> from an integer across all levels. Near zero the
// nuclear labels are trustworthy; large values signal degenerate mixing
// (exactly zero field, or vanishing hyperfine coupling).
inline double label_fuzz(const EigenSolution& sol) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < sol.iz_expect.size(); ++k) {
    const double two_iz = 2.0 * sol.iz_expect[k];
    worst = std::max(worst, std::abs(two_iz - std::round(two_iz)));
  }
  return worst;
}

// Gap between the pair tracked by nuclear label at field h. `label2` is
// 2*<Iz> rounded; levels are re-identified at every field so the pair stays
// consistent through the crossing region. label2 == LONG_MIN tracks the raw
// index pair instead (used when labels are unreliable).
inline double labeled_gap(const SpinSpace& space, double h, double theta, double phi,
                          long label2, int raw_lower, int raw_upper,
                          int* lower_out = nullptr, int* upper_out = nullptr) {
  const EigenSolution sol = space.eigensolve({h, theta, phi}, false);
  const int n = static_cast<int>(sol.energies_GHz.size());
  int first = -1, second = -1;
  if (label2 != LONG_MIN) {
    for (int k = 0; k < n; ++k) {
      if (nuclear_label2(sol.iz_expect[k]) != label2) continue;
      if (first < 0) {
        first = k;
      } else {
        second = k;
        break;
      }
    }
  }
  if (second < 0) {
    first = raw_lower;
    second = raw_upper;
  }
  if (lower_out) *lower_out = first;
  if (upper_out) *upper_out = second;
  return sol.energies_GHz[second] - sol.energies_GHz[first];
}

inline double golden_minimize(const std::function<double(double)>& f, double a, double b,
                              double tol) {
  constexpr double inv_phi = 0.6180339887498949;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

// Locate avoided level crossings along a field sweep. `diagram` must come
// from sweep() on the same direction; interior local minima of each selected
// pair gap are refined by golden-section search. A boundary minimum at the
// first grid point is kept as well (covers the zero-field crossing when the
// hyperfine coupling vanishes).
inline std::vector<Anticrossing> find_anticrossings(
    const SpinSpace& space, const std::vector<EigenSolution>& diagram,
    const PairSelector& selector = default_pair_selector,
    const AnticrossingOptions& opts = {}) {
  if (diagram.size() < 3) throw std::invalid_argument("need at least 3 sweep points");
  const double theta = diagram.front().field.theta_rad;
  const double phi = diagram.front().field.phi_rad;

  // Anchor the labeling at the grid point with the cleanest <Iz> values;
  // labels are field independent but exact degeneracies (H = 0, A = 0) let
  // the solver mix partner states.
  std::size_t anchor = 0;
  double best_fuzz = detail::label_fuzz(diagram[0]);
  for (std::size_t k = 1; k < diagram.size(); ++k) {
    const double fz = detail::label_fuzz(diagram[k]);
    if (fz < best_fuzz) {
      best_fuzz = fz;
      anchor = k;
    }
  }
  const bool labels_ok = best_fuzz < 0.25;

  std::vector<Anticrossing> found;
  std::vector<std::pair<int, int>> pairs;
  if (labels_ok) {
    pairs = selector(diagram[anchor]);
  } else {
    pairs.emplace_back(0, 1);  // no usable nuclear structure: global two lowest
  }
  for (const auto& [i0, j0] : pairs) {
    const long label2 =
        labels_ok ? nuclear_label2(diagram[anchor].iz_expect[i0]) : LONG_MIN;

    // gap of this pair at every grid point
    std::vector<double> gap(diagram.size());
    for (std::size_t k = 0; k < diagram.size(); ++k) {
      const EigenSolution& sol = diagram[k];
      int first = -1, second = -1;
      const int n = static_cast<int>(sol.energies_GHz.size());
      if (label2 != LONG_MIN) {
        for (int l = 0; l < n; ++l) {
          if (nuclear_label2(sol.iz_expect[l]) != label2) continue;
          if (first < 0) {
            first = l;
          } else {
            second = l;
            break;
          }
        }
      }
      if (second < 0) {
        first = i0;
        second = j0;
      }
      gap[k] = sol.energies_GHz[second] - sol.energies_GHz[first];
    }

    auto gap_at = [&](double h, int* lo = nullptr, int* up = nullptr) {
      return detail::labeled_gap(space, h, theta, phi, label2, i0, j0, lo, up);
    };
    auto record = [&](double h) {
      int lower = 0, upper = 1;
      const double g = gap_at(h, &lower, &upper);
      Anticrossing ac;
      ac.field_center_T = h;
      ac.gap_GHz = g;
      ac.lower_level = lower;
      ac.upper_level = upper;
      ac.nuclear_label = labels_ok ? 0.5 * static_cast<double>(label2) : 0.0;
      ac.avoided = g > opts.gap_floor_GHz;
      found.push_back(ac);
    };
    auto refine = [&](double a, double b) {
      auto f = [&](double h) { return gap_at(h); };
      record(detail::golden_minimize(f, a, b, opts.field_tol_T));
    };

    for (std::size_t k = 1; k + 1 < diagram.size(); ++k) {
      if (gap[k] < gap[k - 1] && gap[k] <= gap[k + 1]) {
        refine(diagram[k - 1].field.magnitude_T, diagram[k + 1].field.magnitude_T);
      }
    }
    // Boundary minimum at the sweep start: kept only when the gap is
    // stationary there (a crossing centered at the edge, e.g. zero hyperfine
    // coupling at zero field). A gap merely rising away from a crossing that
    // lies outside the sweep is not reported.
    if (gap[0] < gap[1]) {
      const double h0 = diagram[0].field.magnitude_T;
      const double h1 = diagram[1].field.magnitude_T;
      const double probe = 0.25 * (h1 - h0);
      const double g_probe = gap_at(h0 + probe);
      if (g_probe < gap[0]) {
        refine(h0, h1);
      } else if ((g_probe - gap[0]) * (h1 - h0) < 0.005 * gap[0] * probe) {
        record(h0);
      }
    }
  }

  std::sort(found.begin(), found.end(),
            [](const Anticrossing& a, const Anticrossing& b) {
              return a.field_center_T < b.field_center_T;
            });
  // merge duplicates from adjacent brackets converging to the same center
  std::vector<Anticrossing> out;
  for (const Anticrossing& ac : found) {
    if (!out.empty() && std::abs(ac.field_center_T - out.back().field_center_T) < 2e-4 &&
        std::lround(2.0 * ac.nuclear_label) == std::lround(2.0 * out.back().nuclear_label)) {
      if (ac.gap_GHz < out.back().gap_GHz) out.back() = ac;
      continue;
    }
    out.push_back(ac);
  }
  return out;
}

}  // namespace clockspec
