#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <string>

#include "cgpronet/error.hpp"

namespace cgp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr std::size_t kDefaultDenseCap = 2000;

/// Largest node count for which dense N x N code paths are allowed.
/// Overridden by the CGP_DENSE_CAP environment variable.
inline std::size_t dense_cap() {
  if (const char* env = std::getenv("CGP_DENSE_CAP"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long long value = std::strtoull(env, &end, 10);
    if (end != nullptr && *end == '\0' && value > 0) return static_cast<std::size_t>(value);
  }
  return kDefaultDenseCap;
}

inline void require_dense_ok(std::size_t n, const char* what) {
  if (n > dense_cap()) {
    throw ResourceLimit(std::string(what) + ": " + std::to_string(n) + " nodes exceeds dense cap " +
                        std::to_string(dense_cap()));
  }
}

struct SpectralNormResult {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

inline Vector power_iteration_start(Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + 0.5 * std::sin(1.0 + 2.3 * static_cast<double>(i));
  return v.normalized();
}

}  // namespace detail

/// Largest singular value of the operator x -> apply(x), given its adjoint,
/// by power iteration on the normal operator. The start vector is fixed so
/// repeated calls return identical results.
template <class Apply, class ApplyTranspose>
SpectralNormResult spectral_norm_operator(Eigen::Index n, Apply&& apply, ApplyTranspose&& apply_t,
                                          double tol = 1e-13, int max_iterations = 100000) {
  SpectralNormResult result;
  if (n == 0) {
    result.converged = true;
    return result;
  }
  Vector v = detail::power_iteration_start(n);
  double estimate = 0.0;
  for (int it = 1; it <= max_iterations; ++it) {
    const Vector w = apply(v);
    const double next = w.norm();
    result.iterations = it;
    if (!std::isfinite(next)) throw InvalidArgument("spectral_norm: non-finite matrix entries");
    if (next == 0.0) {
      // v lies in the null space; retry from a canonical basis vector before giving up.
      if (it == 1) {
        v = Vector::Unit(n, 0);
        continue;
      }
      result.value = estimate;
      result.converged = true;
      return result;
    }
    Vector u = apply_t(w);
    const double u_norm = u.norm();
    if (std::abs(next - estimate) <= tol * next) {
      result.value = next;
      result.converged = true;
      return result;
    }
    estimate = next;
    if (u_norm == 0.0) break;
    v = u / u_norm;
  }
  result.value = estimate;
  return result;
}

/// Spectral norm of a dense matrix. Non-convergence is reported through the
/// flag rather than thrown.
inline SpectralNormResult spectral_norm(const Matrix& m, double tol = 1e-13, int max_iterations = 100000) {
  if (m.rows() != m.cols()) throw InvalidArgument("spectral_norm: matrix must be square");
  if (!m.allFinite()) throw InvalidArgument("spectral_norm: non-finite matrix entries");
  return spectral_norm_operator(
      m.cols(), [&](const Vector& x) -> Vector { return m * x; },
      [&](const Vector& y) -> Vector { return m.transpose() * y; }, tol, max_iterations);
}

}  // namespace cgp
