#pragma once

#include "iontrap/units.hpp"

#include <functional>
#include <vector>

namespace iontrap::numerics {

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Eigenvalues ascending; eigenvectors are the matching columns.
struct SymEigen3 {
  Vec3 values;
  Mat3 vectors;
};
SymEigen3 jacobi_eigen(const Mat3& symmetric);

/// Jacobian of f at p by Richardson-extrapolated central differences with
/// base step h (error O(h^4)). Rows index outputs, columns inputs.
Mat3 richardson_jacobian(const std::function<Vec3(const Vec3&)>& f, const Vec3& p, double h);

/// Gradient of a scalar function, same scheme.
Vec3 richardson_gradient(const std::function<double(const Vec3&)>& f, const Vec3& p, double h);

struct SimplexResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Downhill simplex. `scale` sets the initial simplex edge per coordinate.
/// Stops when the spread of vertex values is below ftol (absolute) and the
/// simplex diameter is below xtol.
SimplexResult nelder_mead(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x0,
                          const std::vector<double>& scale, double ftol, double xtol, int max_iterations);

/// Fibonacci lattice of n nearly uniform unit vectors.
std::vector<Vec3> fibonacci_sphere(int n);

}  // namespace iontrap::numerics
