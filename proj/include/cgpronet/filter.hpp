#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <utility>
#include <vector>

#include "cgpronet/error.hpp"
#include "cgpronet/graph.hpp"
#include "cgpronet/linalg.hpp"

namespace cgp {

/// Coefficients [c_0, ..., c_order] of the polynomial sum_j c_j A^j.
struct PolyCoeffs {
  std::vector<double> coeffs;

  PolyCoeffs() = default;
  explicit PolyCoeffs(std::vector<double> c) : coeffs(std::move(c)) { validate(); }

  static PolyCoeffs zeros(std::size_t order) { return PolyCoeffs(std::vector<double>(order + 1, 0.0)); }

  std::size_t order() const noexcept { return coeffs.empty() ? 0 : coeffs.size() - 1; }
  std::size_t size() const noexcept { return coeffs.size(); }
  double& operator[](std::size_t j) { return coeffs[j]; }
  double operator[](std::size_t j) const { return coeffs[j]; }

  void validate() const {
    detail::require(!coeffs.empty(), "PolyCoeffs: at least one coefficient required");
    for (double c : coeffs) detail::require(std::isfinite(c), "PolyCoeffs: non-finite coefficient");
  }

  friend bool operator==(const PolyCoeffs&, const PolyCoeffs&) = default;
};

namespace detail {

template <GraphOperator G>
void require_signal(const G& g, const Vector& x, const char* what) {
  if (static_cast<std::size_t>(x.size()) != g.num_nodes()) {
    throw InvalidArgument(std::string(what) + ": signal length " + std::to_string(x.size()) + " does not match " +
                          std::to_string(g.num_nodes()) + " nodes");
  }
}

}  // namespace detail

/// Diffused copies s_j = A^j x for j = 0..order.
template <GraphOperator G>
std::vector<Vector> diffusion_powers(const G& g, const Vector& x, std::size_t order) {
  detail::require_signal(g, x, "diffusion_powers");
  std::vector<Vector> s(order + 1);
  s[0] = x;
  for (std::size_t j = 1; j <= order; ++j) g.multiply(s[j - 1], s[j]);
  return s;
}

/// sum_j c_j A^j x by recursive diffusion; never forms a matrix power.
template <GraphOperator G>
Vector apply_poly(const G& g, const PolyCoeffs& c, const Vector& x) {
  detail::require_signal(g, x, "apply_poly");
  detail::require(!c.coeffs.empty(), "apply_poly: empty coefficients");
  Vector out = c[0] * x;
  Vector s = x, next;
  for (std::size_t j = 1; j < c.size(); ++j) {
    g.multiply(s, next);
    s.swap(next);
    out.noalias() += c[j] * s;
  }
  return out;
}

/// sum_j c_j (A^T)^j y, the adjoint of apply_poly.
template <GraphOperator G>
Vector apply_poly_transpose(const G& g, const PolyCoeffs& c, const Vector& y) {
  detail::require_signal(g, y, "apply_poly_transpose");
  detail::require(!c.coeffs.empty(), "apply_poly_transpose: empty coefficients");
  Vector out = c[0] * y;
  Vector s = y, next;
  for (std::size_t j = 1; j < c.size(); ++j) {
    g.multiply_transpose(s, next);
    s.swap(next);
    out.noalias() += c[j] * s;
  }
  return out;
}

/// Dense polynomial matrix sum_j c_j A^j.
inline Matrix poly_matrix(const Matrix& a, const PolyCoeffs& c) {
  require_dense_ok(static_cast<std::size_t>(a.rows()), "poly_matrix");
  Matrix out = c[0] * Matrix::Identity(a.rows(), a.cols());
  Matrix power = Matrix::Identity(a.rows(), a.cols());
  for (std::size_t j = 1; j < c.size(); ++j) {
    power = power * a;
    out += c[j] * power;
  }
  return out;
}

/// Test oracle: materializes the dense powers of A.
template <GraphOperator G>
Vector apply_poly_dense_oracle(const G& g, const PolyCoeffs& c, const Vector& x) {
  require_dense_ok(g.num_nodes(), "apply_poly_dense_oracle");
  detail::require_signal(g, x, "apply_poly_dense_oracle");
  return poly_matrix(Matrix(g.to_dense()), c) * x;
}

// ---------------------------------------------------------------------------
// Matrix exponential: scaling and squaring with diagonal Pade approximants.

namespace detail {

inline constexpr double kPadeTheta3 = 1.495585217958292e-2;
inline constexpr double kPadeTheta5 = 2.539398330063230e-1;
inline constexpr double kPadeTheta7 = 9.504178996162932e-1;
inline constexpr double kPadeTheta9 = 2.097847961257068e+0;
inline constexpr double kPadeTheta13 = 5.371920351148152e+0;

inline Matrix pade_solve(const Matrix& u, const Matrix& v) { return (v - u).partialPivLu().solve(v + u); }

/// Degree 3, 5, 7 or 9 approximant; b holds the degree+1 coefficients.
inline Matrix pade_low(const Matrix& a, const std::vector<double>& b) {
  const Matrix id = Matrix::Identity(a.rows(), a.cols());
  const Matrix a2 = a * a;
  Matrix even = b[0] * id;
  Matrix odd = b[1] * id;
  Matrix power = id;
  for (std::size_t k = 2; k + 1 < b.size(); k += 2) {
    power = power * a2;
    even += b[k] * power;
    odd += b[k + 1] * power;
  }
  return pade_solve(a * odd, even);
}

inline Matrix pade13(const Matrix& a) {
  static constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                 1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                 670442572800.0,      33522128640.0,       1323241920.0,
                                 40840800.0,          960960.0,            16380.0,
                                 182.0,               1.0};
  const Matrix id = Matrix::Identity(a.rows(), a.cols());
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix u_inner = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id;
  const Matrix u = a * u_inner;
  const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
  return pade_solve(u, v);
}

}  // namespace detail

inline Matrix matrix_exponential(const Matrix& m) {
  detail::require(m.rows() == m.cols(), "matrix_exponential: matrix must be square");
  require_dense_ok(static_cast<std::size_t>(m.rows()), "matrix_exponential");
  detail::require(m.allFinite(), "matrix_exponential: non-finite entries");
  if (m.rows() == 0) return m;
  const double norm1 = m.cwiseAbs().colwise().sum().maxCoeff();
  if (norm1 <= detail::kPadeTheta3) return detail::pade_low(m, {120.0, 60.0, 12.0, 1.0});
  if (norm1 <= detail::kPadeTheta5) return detail::pade_low(m, {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0});
  if (norm1 <= detail::kPadeTheta7)
    return detail::pade_low(m, {17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0});
  if (norm1 <= detail::kPadeTheta9)
    return detail::pade_low(m, {17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0,
                                110880.0, 3960.0, 90.0, 1.0});
  const int s = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / detail::kPadeTheta13))));
  Matrix result = detail::pade13(m / std::ldexp(1.0, s));
  for (int k = 0; k < s; ++k) result = result * result;
  return result;
}

// ---------------------------------------------------------------------------
// Heat kernel filters

/// Filter scale * e^{time * A}.
struct HeatCoeffs {
  double scale = 0.0;
  double time = 0.0;

  friend bool operator==(const HeatCoeffs&, const HeatCoeffs&) = default;
};

/// Memoizes e^{tA} per (graph fingerprint, t). Entries whose time is within
/// the tolerance of a request are reused. Readers share the lock, inserts
/// take it exclusively.
class HeatKernelCache {
 public:
  explicit HeatKernelCache(double time_tolerance = 0.0, std::size_t max_entries = 256)
      : tolerance_(time_tolerance), max_entries_(max_entries) {}

  template <GraphOperator G>
  std::shared_ptr<const Matrix> get(const G& g, double time) {
    const std::uint64_t key = g.fingerprint();
    {
      std::shared_lock lock(mutex_);
      if (auto hit = find(key, time)) return hit;
    }
    auto kernel = std::make_shared<const Matrix>(matrix_exponential(time * Matrix(g.to_dense())));
    std::unique_lock lock(mutex_);
    if (auto hit = find(key, time)) return hit;
    if (entries_.size() >= max_entries_) entries_.clear();
    entries_.emplace(std::make_pair(key, time), kernel);
    return kernel;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  void clear() {
    std::unique_lock lock(mutex_);
    entries_.clear();
  }

 private:
  std::shared_ptr<const Matrix> find(std::uint64_t key, double time) const {
    auto it = entries_.lower_bound({key, time - tolerance_});
    for (; it != entries_.end() && it->first.first == key && it->first.second <= time + tolerance_; ++it) {
      if (std::abs(it->first.second - time) <= tolerance_) return it->second;
    }
    return nullptr;
  }

  double tolerance_;
  std::size_t max_entries_;
  mutable std::shared_mutex mutex_;
  std::map<std::pair<std::uint64_t, double>, std::shared_ptr<const Matrix>> entries_;
};

template <GraphOperator G>
Vector apply_heat(const G& g, const HeatCoeffs& c, const Vector& x, HeatKernelCache* cache = nullptr) {
  detail::require_signal(g, x, "apply_heat");
  detail::require(std::isfinite(c.scale) && std::isfinite(c.time), "apply_heat: non-finite coefficients");
  require_dense_ok(g.num_nodes(), "apply_heat");
  if (c.scale == 0.0) return Vector::Zero(x.size());
  if (cache != nullptr) return c.scale * (*cache->get(g, c.time) * x);
  return c.scale * (matrix_exponential(c.time * Matrix(g.to_dense())) * x);
}

}  // namespace cgp
