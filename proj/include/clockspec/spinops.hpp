#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace clockspec {

using complexd = std::complex<double>;
using OperatorMatrix = Eigen::MatrixXcd;

// Basis of a single angular momentum j; states ordered m = +j, +j-1, ..., -j.
class AngularMomentumBasis {
 public:
  explicit AngularMomentumBasis(double j) : j_(j) {
    const double two_j = 2.0 * j;
    if (!(j >= 0.0) || std::abs(two_j - std::round(two_j)) > 1e-12) {
      throw std::invalid_argument(
          "angular momentum must be a non-negative half-integer, got " + std::to_string(j));
    }
    dimension_ = static_cast<int>(std::lround(two_j)) + 1;
  }

  double j() const { return j_; }
  int dimension() const { return dimension_; }
  // projection quantum number of basis state `index`
  double m(int index) const { return j_ - index; }

 private:
  double j_;
  int dimension_;
};

struct LadderMatrices {
  OperatorMatrix plus;   // J+
  OperatorMatrix minus;  // J-
  OperatorMatrix z;      // Jz
};

// J+ |j m> = sqrt(j(j+1) - m(m+1)) |j m+1>, Jz |j m> = m |j m>.
inline LadderMatrices ladder_matrices(const AngularMomentumBasis& basis) {
  const int n = basis.dimension();
  const double x = basis.j() * (basis.j() + 1.0);
  LadderMatrices out{OperatorMatrix::Zero(n, n), OperatorMatrix::Zero(n, n),
                     OperatorMatrix::Zero(n, n)};
  for (int k = 0; k < n; ++k) out.z(k, k) = basis.m(k);
  for (int k = 1; k < n; ++k) {
    const double m = basis.m(k);
    out.plus(k - 1, k) = std::sqrt(x - m * (m + 1.0));
  }
  out.minus = out.plus.adjoint();
  return out;
}

inline bool is_hermitian(const OperatorMatrix& a, double rel_tol = 1e-12) {
  if (a.rows() != a.cols()) return false;
  const double scale = a.cwiseAbs().maxCoeff();
  if (scale == 0.0) return true;
  return (a - a.adjoint()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

// Extended Stevens operators (Abragam-Bleaney normalization). The axial
// members are polynomials in Jz alone; O_4^4 = (J+^4 + J-^4)/2.
// Supported (k, q): (2,0), (4,0), (6,0), (4,4).
inline OperatorMatrix stevens_operator(const AngularMomentumBasis& basis, int k, int q) {
  const int n = basis.dimension();
  const double x = basis.j() * (basis.j() + 1.0);

  if (q == 0 && (k == 2 || k == 4 || k == 6)) {
    OperatorMatrix out = OperatorMatrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      const double m2 = basis.m(i) * basis.m(i);
      double value = 0.0;
      switch (k) {
        case 2:
          value = 3.0 * m2 - x;
          break;
        case 4:
          value = 35.0 * m2 * m2 - (30.0 * x - 25.0) * m2 + 3.0 * x * x - 6.0 * x;
          break;
        case 6:
          value = 231.0 * m2 * m2 * m2 - (315.0 * x - 735.0) * m2 * m2 +
                  (105.0 * x * x - 525.0 * x + 294.0) * m2 - 5.0 * x * x * x +
                  40.0 * x * x - 60.0 * x;
          break;
      }
      out(i, i) = value;
    }
    return out;
  }

  if (k == 4 && q == 4) {
    const LadderMatrices l = ladder_matrices(basis);
    const OperatorMatrix plus4 = l.plus * l.plus * l.plus * l.plus;
    return 0.5 * (plus4 + plus4.adjoint());
  }

  throw std::invalid_argument("unsupported Stevens operator (k=" + std::to_string(k) +
                              ", q=" + std::to_string(q) +
                              "); supported: (2,0), (4,0), (6,0), (4,4)");
}

// Kronecker product with the left factor's index varying slowest.
inline OperatorMatrix tensor_product(const OperatorMatrix& a, const OperatorMatrix& b) {
  if (a.rows() != a.cols() || b.rows() != b.cols()) {
    throw std::invalid_argument("tensor_product requires square factors");
  }
  const Eigen::Index na = a.rows(), nb = b.rows();
  OperatorMatrix out(na * nb, na * nb);
  for (Eigen::Index i = 0; i < na; ++i) {
    for (Eigen::Index j = 0; j < na; ++j) {
      out.block(i * nb, j * nb, nb, nb) = a(i, j) * b;
    }
  }
  return out;
}

}  // namespace clockspec
