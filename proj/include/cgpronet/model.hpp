#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cgpronet/error.hpp"
#include "cgpronet/filter.hpp"
#include "cgpronet/graph.hpp"
#include "cgpronet/linalg.hpp"
#include "cgpronet/random.hpp"

namespace cgp {

enum class Activation { tanh, identity };

inline std::string_view to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "identity" || s == "linear" || s == "none") return Activation::identity;
  throw InvalidArgument("unknown activation '" + std::string(s) + "'");
}

inline Vector activate(Activation a, const Vector& u) {
  return a == Activation::tanh ? Vector(u.array().tanh()) : u;
}

/// sigma'(u), given u.
inline Vector activate_derivative(Activation a, const Vector& u) {
  if (a == Activation::identity) return Vector::Ones(u.size());
  return (1.0 - u.array().tanh().square()).matrix();
}

enum class ModelKind { base, mlp_head, adaptive, shared, heat, var };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::base: return "base";
    case ModelKind::mlp_head: return "mlp_head";
    case ModelKind::adaptive: return "adaptive";
    case ModelKind::shared: return "shared";
    case ModelKind::heat: return "heat";
    case ModelKind::var: return "var";
  }
  return "base";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "base") return ModelKind::base;
  if (s == "mlp_head" || s == "mlp-head") return ModelKind::mlp_head;
  if (s == "adaptive") return ModelKind::adaptive;
  if (s == "shared") return ModelKind::shared;
  if (s == "heat") return ModelKind::heat;
  if (s == "var") return ModelKind::var;
  throw InvalidArgument("unknown model variant '" + std::string(s) + "'");
}

/// Filter coefficient count for lags 1..M: sum of (i+1) = M(M+3)/2.
inline std::size_t filter_coeff_count(std::size_t m) { return m * (m + 3) / 2; }

/// Learnable parameter count. n_nodes is only used by the VAR kind.
inline std::size_t param_count(ModelKind kind, std::size_t m, std::size_t horizons = 1, std::size_t n_nodes = 0) {
  detail::require(m >= 1, "param_count: M must be at least 1");
  switch (kind) {
    case ModelKind::base:
    case ModelKind::shared: return m + filter_coeff_count(m);
    case ModelKind::mlp_head: return m + filter_coeff_count(m) + horizons;
    case ModelKind::adaptive: return m + horizons * filter_coeff_count(m);
    case ModelKind::heat: return 3 * m;
    case ModelKind::var: return m * n_nodes * n_nodes;
  }
  return 0;
}

namespace detail {

template <GraphOperator G>
void require_window(const G& g, const Matrix& window, std::size_t m, const char* what) {
  if (static_cast<std::size_t>(window.rows()) != g.num_nodes() || static_cast<std::size_t>(window.cols()) != m) {
    throw InvalidArgument(std::string(what) + ": window is " + std::to_string(window.rows()) + "x" +
                          std::to_string(window.cols()) + ", expected " + std::to_string(g.num_nodes()) + "x" +
                          std::to_string(m));
  }
}

inline void require_span(std::span<const double> flat, std::size_t expected, const char* what) {
  if (flat.size() != expected) {
    throw InvalidArgument(std::string(what) + ": expected " + std::to_string(expected) + " values, got " +
                          std::to_string(flat.size()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Base model

/// Mixing weights alpha (one per lag) and one polynomial filter per lag;
/// thetas[i - 1] has order i.
struct CgpParams {
  Activation activation = Activation::tanh;
  std::vector<double> alphas;
  std::vector<PolyCoeffs> thetas;

  std::size_t ar_order() const noexcept { return alphas.size(); }
  std::size_t parameter_count() const { return param_count(ModelKind::base, ar_order()); }

  /// alpha_i = 1/M, theta_i1 = 1/M, everything else 0; optional uniform jitter.
  static CgpParams initial(std::size_t m, Activation activation = Activation::tanh, double jitter = 0.0,
                           std::uint64_t seed = 0) {
    detail::require(m >= 1, "CgpParams: M must be at least 1");
    CgpParams p;
    p.activation = activation;
    const double w = 1.0 / static_cast<double>(m);
    p.alphas.assign(m, w);
    for (std::size_t i = 1; i <= m; ++i) {
      PolyCoeffs c = PolyCoeffs::zeros(i);
      c[1] = w;
      p.thetas.push_back(std::move(c));
    }
    if (jitter > 0.0) {
      Rng rng(seed);
      for (double& a : p.alphas) a += uniform(rng, -jitter, jitter);
      for (auto& c : p.thetas)
        for (double& v : c.coeffs) v += uniform(rng, -jitter, jitter);
    }
    return p;
  }

  void validate() const {
    detail::require(!alphas.empty(), "CgpParams: M must be at least 1");
    detail::require(thetas.size() == alphas.size(), "CgpParams: need one filter per lag");
    for (std::size_t i = 0; i < thetas.size(); ++i) {
      detail::require(thetas[i].size() == i + 2,
                      "CgpParams: filter for lag " + std::to_string(i + 1) + " must have " + std::to_string(i + 2) +
                          " coefficients");
      thetas[i].validate();
    }
    for (double a : alphas) detail::require(std::isfinite(a), "CgpParams: non-finite alpha");
  }

  friend bool operator==(const CgpParams&, const CgpParams&) = default;
};

/// Same shape as CgpParams, holding derivatives.
struct Gradients {
  std::vector<double> alphas;
  std::vector<std::vector<double>> thetas;

  static Gradients zeros_like(const CgpParams& p) {
    Gradients g;
    g.alphas.assign(p.ar_order(), 0.0);
    for (const auto& c : p.thetas) g.thetas.emplace_back(c.size(), 0.0);
    return g;
  }
};

inline std::vector<double> flatten(const CgpParams& p) {
  std::vector<double> out(p.alphas);
  for (const auto& c : p.thetas) out.insert(out.end(), c.coeffs.begin(), c.coeffs.end());
  return out;
}

inline void unflatten(CgpParams& p, std::span<const double> flat) {
  detail::require_span(flat, p.parameter_count(), "unflatten");
  std::size_t k = 0;
  for (double& a : p.alphas) a = flat[k++];
  for (auto& c : p.thetas)
    for (double& v : c.coeffs) v = flat[k++];
}

inline std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out(g.alphas);
  for (const auto& c : g.thetas) out.insert(out.end(), c.begin(), c.end());
  return out;
}

/// Diffused copies of each lag of one window: lags[i - 1][j] = A^j x_{k-i}, j = 0..i.
/// They do not depend on the parameters, so training computes them once.
struct WindowPowers {
  std::vector<std::vector<Vector>> lags;
};

template <GraphOperator G>
WindowPowers window_powers(const G& g, const Matrix& window) {
  const auto m = static_cast<std::size_t>(window.cols());
  detail::require_window(g, window, m, "window_powers");
  WindowPowers wp;
  wp.lags.reserve(m);
  for (std::size_t i = 1; i <= m; ++i) wp.lags.push_back(diffusion_powers(g, Vector(window.col(static_cast<Eigen::Index>(m - i))), i));
  return wp;
}

namespace detail {

inline Vector filter_from_powers(const PolyCoeffs& c, const std::vector<Vector>& s) {
  Vector u = c[0] * s[0];
  for (std::size_t j = 1; j < c.size(); ++j) u.noalias() += c[j] * s[j];
  return u;
}

inline void require_powers(const CgpParams& p, const WindowPowers& wp) {
  require(wp.lags.size() == p.ar_order(), "forward: window powers do not match the AR order");
}

}  // namespace detail

inline Vector forward(const CgpParams& p, const WindowPowers& wp) {
  detail::require_powers(p, wp);
  Vector out = Vector::Zero(wp.lags[0][0].size());
  for (std::size_t i = 0; i < p.ar_order(); ++i)
    out.noalias() += p.alphas[i] * activate(p.activation, detail::filter_from_powers(p.thetas[i], wp.lags[i]));
  return out;
}

/// sum_i alpha_i sigma(P(A, theta_i) x_{k-i}); window columns are oldest first.
template <GraphOperator G>
Vector forward(const CgpParams& p, const G& g, const Matrix& window) {
  detail::require_window(g, window, p.ar_order(), "forward");
  detail::require(p.thetas.size() == p.ar_order(), "forward: need one filter per lag");
  const std::size_t m = p.ar_order();
  Vector out = Vector::Zero(window.rows());
  for (std::size_t i = 1; i <= m; ++i) {
    const Vector u = apply_poly(g, p.thetas[i - 1], Vector(window.col(static_cast<Eigen::Index>(m - i))));
    out.noalias() += p.alphas[i - 1] * activate(p.activation, u);
  }
  return out;
}

/// Adds the gradient of <upstream, forward> to grad (flat layout of flatten(CgpParams)).
inline void accumulate_gradient(const CgpParams& p, const WindowPowers& wp, const Vector& upstream,
                                std::span<double> grad) {
  detail::require_powers(p, wp);
  std::size_t offset = p.ar_order();
  for (std::size_t i = 0; i < p.ar_order(); ++i) {
    const Vector u = detail::filter_from_powers(p.thetas[i], wp.lags[i]);
    grad[i] += upstream.dot(activate(p.activation, u));
    const Vector d = p.alphas[i] * upstream.cwiseProduct(activate_derivative(p.activation, u));
    for (std::size_t j = 0; j < p.thetas[i].size(); ++j) grad[offset + j] += d.dot(wp.lags[i][j]);
    offset += p.thetas[i].size();
  }
}

/// Analytic gradients of <upstream, forward(p, g, window)>. When window_grad is
/// given it receives the gradient with respect to the window entries.
template <GraphOperator G>
Gradients backward(const CgpParams& p, const G& g, const Matrix& window, const Vector& upstream,
                   Matrix* window_grad = nullptr) {
  detail::require_window(g, window, p.ar_order(), "backward");
  detail::require_signal(g, upstream, "backward");
  const std::size_t m = p.ar_order();
  Gradients out = Gradients::zeros_like(p);
  if (window_grad != nullptr) window_grad->setZero(window.rows(), window.cols());
  for (std::size_t i = 1; i <= m; ++i) {
    const auto col = static_cast<Eigen::Index>(m - i);
    const auto s = diffusion_powers(g, Vector(window.col(col)), i);
    const PolyCoeffs& c = p.thetas[i - 1];
    const Vector u = detail::filter_from_powers(c, s);
    out.alphas[i - 1] = upstream.dot(activate(p.activation, u));
    const Vector d = p.alphas[i - 1] * upstream.cwiseProduct(activate_derivative(p.activation, u));
    for (std::size_t j = 0; j < c.size(); ++j) out.thetas[i - 1][j] = d.dot(s[j]);
    if (window_grad != nullptr) window_grad->col(col) += apply_poly_transpose(g, c, d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heat-kernel variant

/// alpha_i and (scale c_i, time t_i) per lag: sum_i alpha_i sigma(c_i e^{t_i A} x_{k-i}).
struct HeatParams {
  Activation activation = Activation::tanh;
  std::vector<double> alphas;
  std::vector<HeatCoeffs> heat;

  std::size_t ar_order() const noexcept { return alphas.size(); }
  std::size_t parameter_count() const { return param_count(ModelKind::heat, ar_order()); }

  /// alpha_i = 1/M, c_i = 1/M, t_i = 1.
  static HeatParams initial(std::size_t m, Activation activation = Activation::tanh) {
    detail::require(m >= 1, "HeatParams: M must be at least 1");
    HeatParams p;
    p.activation = activation;
    const double w = 1.0 / static_cast<double>(m);
    p.alphas.assign(m, w);
    p.heat.assign(m, HeatCoeffs{w, 1.0});
    return p;
  }

  void validate() const {
    detail::require(!alphas.empty(), "HeatParams: M must be at least 1");
    detail::require(heat.size() == alphas.size(), "HeatParams: need one heat kernel per lag");
  }

  friend bool operator==(const HeatParams&, const HeatParams&) = default;
};

inline std::vector<double> flatten(const HeatParams& p) {
  std::vector<double> out(p.alphas);
  for (const auto& h : p.heat) out.push_back(h.scale);
  for (const auto& h : p.heat) out.push_back(h.time);
  return out;
}

inline void unflatten(HeatParams& p, std::span<const double> flat) {
  detail::require_span(flat, p.parameter_count(), "unflatten");
  const std::size_t m = p.ar_order();
  for (std::size_t i = 0; i < m; ++i) {
    p.alphas[i] = flat[i];
    p.heat[i].scale = flat[m + i];
    p.heat[i].time = flat[2 * m + i];
  }
}

/// Dense kernels e^{t_i A} for every lag, plus A for time derivatives.
struct HeatKernels {
  Matrix adjacency;
  std::vector<Matrix> kernels;
};

template <GraphOperator G>
HeatKernels heat_kernels(const HeatParams& p, const G& g, HeatKernelCache* cache = nullptr) {
  require_dense_ok(g.num_nodes(), "heat_kernels");
  HeatKernels hk;
  hk.adjacency = g.to_dense();
  for (const auto& h : p.heat) {
    detail::require(std::isfinite(h.time) && std::isfinite(h.scale), "heat_kernels: non-finite coefficients");
    hk.kernels.push_back(cache != nullptr ? *cache->get(g, h.time) : matrix_exponential(h.time * hk.adjacency));
  }
  return hk;
}

inline Vector forward_heat(const HeatParams& p, const HeatKernels& hk, const Matrix& window) {
  const std::size_t m = p.ar_order();
  detail::require(hk.kernels.size() == m, "forward_heat: kernel count does not match the AR order");
  detail::require(window.cols() == static_cast<Eigen::Index>(m) && window.rows() == hk.adjacency.rows(),
                  "forward_heat: window shape mismatch");
  Vector out = Vector::Zero(window.rows());
  for (std::size_t i = 1; i <= m; ++i) {
    const Vector u = p.heat[i - 1].scale * (hk.kernels[i - 1] * window.col(static_cast<Eigen::Index>(m - i)));
    out.noalias() += p.alphas[i - 1] * activate(p.activation, u);
  }
  return out;
}

template <GraphOperator G>
Vector forward_heat(const HeatParams& p, const G& g, const Matrix& window, HeatKernelCache* cache = nullptr) {
  detail::require_window(g, window, p.ar_order(), "forward_heat");
  return forward_heat(p, heat_kernels(p, g, cache), window);
}

/// Gradient of <upstream, forward_heat> into grad. The time derivative uses
/// d/dt e^{tA} = A e^{tA}.
inline void accumulate_gradient(const HeatParams& p, const HeatKernels& hk, const Matrix& window,
                                const Vector& upstream, std::span<double> grad) {
  const std::size_t m = p.ar_order();
  for (std::size_t i = 1; i <= m; ++i) {
    const Vector kx = hk.kernels[i - 1] * window.col(static_cast<Eigen::Index>(m - i));
    const double c = p.heat[i - 1].scale;
    const Vector u = c * kx;
    grad[i - 1] += upstream.dot(activate(p.activation, u));
    const Vector d = p.alphas[i - 1] * upstream.cwiseProduct(activate_derivative(p.activation, u));
    grad[m + i - 1] += d.dot(kx);
    grad[2 * m + i - 1] += c * d.dot(hk.adjacency * kx);
  }
}

// ---------------------------------------------------------------------------
// Unconstrained VAR: sum_i R_i x_{k-i} with dense N x N matrices.

struct VarParams {
  std::vector<Matrix> coeffs;

  std::size_t ar_order() const noexcept { return coeffs.size(); }
  std::size_t num_nodes() const noexcept { return coeffs.empty() ? 0 : static_cast<std::size_t>(coeffs[0].rows()); }
  std::size_t parameter_count() const { return param_count(ModelKind::var, ar_order(), 1, num_nodes()); }

  static VarParams initial(std::size_t m, std::size_t n) {
    detail::require(m >= 1 && n >= 1, "VarParams: M and N must be positive");
    require_dense_ok(n, "VarParams");
    VarParams p;
    p.coeffs.assign(m, Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
    return p;
  }

  friend bool operator==(const VarParams& a, const VarParams& b) {
    if (a.coeffs.size() != b.coeffs.size()) return false;
    for (std::size_t i = 0; i < a.coeffs.size(); ++i)
      if (a.coeffs[i] != b.coeffs[i]) return false;
    return true;
  }
};

inline std::vector<double> flatten(const VarParams& p) {
  std::vector<double> out;
  out.reserve(p.parameter_count());
  for (const auto& r : p.coeffs) out.insert(out.end(), r.data(), r.data() + r.size());
  return out;
}

inline void unflatten(VarParams& p, std::span<const double> flat) {
  detail::require_span(flat, p.parameter_count(), "unflatten");
  std::size_t k = 0;
  for (auto& r : p.coeffs)
    for (Eigen::Index e = 0; e < r.size(); ++e) r.data()[e] = flat[k++];
}

inline Vector forward_var(const VarParams& p, const Matrix& window) {
  const std::size_t m = p.ar_order();
  detail::require(window.cols() == static_cast<Eigen::Index>(m) &&
                      window.rows() == static_cast<Eigen::Index>(p.num_nodes()),
                  "forward_var: window shape mismatch");
  Vector out = Vector::Zero(window.rows());
  for (std::size_t i = 1; i <= m; ++i) out.noalias() += p.coeffs[i - 1] * window.col(static_cast<Eigen::Index>(m - i));
  return out;
}

inline void accumulate_gradient(const VarParams& p, const Matrix& window, const Vector& upstream,
                                std::span<double> grad) {
  const std::size_t m = p.ar_order();
  const auto n = static_cast<Eigen::Index>(p.num_nodes());
  std::size_t offset = 0;
  for (std::size_t i = 1; i <= m; ++i) {
    Eigen::Map<Matrix> g(grad.data() + offset, n, n);
    g.noalias() += upstream * window.col(static_cast<Eigen::Index>(m - i)).transpose();
    offset += static_cast<std::size_t>(n * n);
  }
}

// ---------------------------------------------------------------------------
// Multi-horizon variants

enum class MultiHorizonVariant { mlp_head, adaptive, shared };

inline ModelKind to_model_kind(MultiHorizonVariant v) {
  switch (v) {
    case MultiHorizonVariant::mlp_head: return ModelKind::mlp_head;
    case MultiHorizonVariant::adaptive: return ModelKind::adaptive;
    case MultiHorizonVariant::shared: return ModelKind::shared;
  }
  return ModelKind::shared;
}

inline MultiHorizonVariant to_multi_horizon(ModelKind k) {
  switch (k) {
    case ModelKind::mlp_head: return MultiHorizonVariant::mlp_head;
    case ModelKind::adaptive: return MultiHorizonVariant::adaptive;
    case ModelKind::shared: return MultiHorizonVariant::shared;
    default: throw InvalidArgument("variant '" + std::string(to_string(k)) + "' is not multi-horizon");
  }
}

/// mlp_head: column h is sigma(head[h] * y) with y the base output.
/// adaptive: horizon h runs the base model with its own filters on the M most
/// recent columns of [history, earlier predictions]; alphas are shared.
/// shared: the same recursion with base.thetas for every horizon.
struct MultiHorizonParams {
  MultiHorizonVariant variant = MultiHorizonVariant::shared;
  std::size_t horizons = 1;
  CgpParams base;
  std::vector<double> head;
  std::vector<std::vector<PolyCoeffs>> per_horizon_thetas;

  std::size_t ar_order() const noexcept { return base.ar_order(); }
  std::size_t parameter_count() const { return param_count(to_model_kind(variant), ar_order(), horizons); }

  static MultiHorizonParams initial(MultiHorizonVariant variant, std::size_t m, std::size_t horizons,
                                    Activation activation = Activation::tanh) {
    detail::require(horizons >= 1, "MultiHorizonParams: H must be at least 1");
    MultiHorizonParams p;
    p.variant = variant;
    p.horizons = horizons;
    p.base = CgpParams::initial(m, activation);
    if (variant == MultiHorizonVariant::mlp_head) p.head.assign(horizons, 1.0);
    if (variant == MultiHorizonVariant::adaptive) p.per_horizon_thetas.assign(horizons, p.base.thetas);
    return p;
  }

  /// Parameters used at horizon h (0-based) by the recursive variants.
  CgpParams horizon_params(std::size_t h) const {
    CgpParams p = base;
    if (variant == MultiHorizonVariant::adaptive) p.thetas = per_horizon_thetas[h];
    return p;
  }

  void validate() const {
    detail::require(horizons >= 1, "MultiHorizonParams: H must be at least 1");
    base.validate();
    if (variant == MultiHorizonVariant::mlp_head)
      detail::require(head.size() == horizons, "MultiHorizonParams: head must have H entries");
    if (variant == MultiHorizonVariant::adaptive) {
      detail::require(per_horizon_thetas.size() == horizons, "MultiHorizonParams: need H filter sets");
      for (const auto& t : per_horizon_thetas) {
        CgpParams probe = base;
        probe.thetas = t;
        probe.validate();
      }
    }
  }

  friend bool operator==(const MultiHorizonParams&, const MultiHorizonParams&) = default;
};

inline std::vector<double> flatten(const MultiHorizonParams& p) {
  std::vector<double> out(p.base.alphas);
  switch (p.variant) {
    case MultiHorizonVariant::shared: {
      for (const auto& c : p.base.thetas) out.insert(out.end(), c.coeffs.begin(), c.coeffs.end());
      break;
    }
    case MultiHorizonVariant::mlp_head: {
      for (const auto& c : p.base.thetas) out.insert(out.end(), c.coeffs.begin(), c.coeffs.end());
      out.insert(out.end(), p.head.begin(), p.head.end());
      break;
    }
    case MultiHorizonVariant::adaptive: {
      for (const auto& set : p.per_horizon_thetas)
        for (const auto& c : set) out.insert(out.end(), c.coeffs.begin(), c.coeffs.end());
      break;
    }
  }
  return out;
}

inline void unflatten(MultiHorizonParams& p, std::span<const double> flat) {
  detail::require_span(flat, p.parameter_count(), "unflatten");
  std::size_t k = 0;
  for (double& a : p.base.alphas) a = flat[k++];
  auto read_set = [&](std::vector<PolyCoeffs>& set) {
    for (auto& c : set)
      for (double& v : c.coeffs) v = flat[k++];
  };
  if (p.variant == MultiHorizonVariant::adaptive) {
    for (auto& set : p.per_horizon_thetas) read_set(set);
    p.base.thetas = p.per_horizon_thetas.front();
  } else {
    read_set(p.base.thetas);
  }
  if (p.variant == MultiHorizonVariant::mlp_head)
    for (double& h : p.head) h = flat[k++];
}

/// N x H forecast.
template <GraphOperator G>
Matrix forecast_multi(const MultiHorizonParams& p, const G& g, const Matrix& window) {
  detail::require(p.horizons >= 1, "forecast_multi: H must be at least 1");
  detail::require_window(g, window, p.ar_order(), "forecast_multi");
  const auto n = window.rows();
  const auto m = static_cast<Eigen::Index>(p.ar_order());
  const auto h_count = static_cast<Eigen::Index>(p.horizons);
  Matrix out(n, h_count);
  if (p.variant == MultiHorizonVariant::mlp_head) {
    detail::require(p.head.size() == p.horizons, "forecast_multi: head must have H entries");
    const Vector y = forward(p.base, g, window);
    for (Eigen::Index h = 0; h < h_count; ++h)
      out.col(h) = activate(p.base.activation, Vector(p.head[static_cast<std::size_t>(h)] * y));
    return out;
  }
  if (p.variant == MultiHorizonVariant::adaptive)
    detail::require(p.per_horizon_thetas.size() == p.horizons, "forecast_multi: need H filter sets");
  Matrix ext(n, m + h_count);
  ext.leftCols(m) = window;
  for (Eigen::Index h = 0; h < h_count; ++h) {
    const Vector pred = p.variant == MultiHorizonVariant::adaptive
                            ? forward(p.horizon_params(static_cast<std::size_t>(h)), g, Matrix(ext.middleCols(h, m)))
                            : forward(p.base, g, Matrix(ext.middleCols(h, m)));
    ext.col(m + h) = pred;
    out.col(h) = pred;
  }
  return out;
}

/// Gradient of <upstream, forecast_multi> (upstream is N x H) into grad.
template <GraphOperator G>
void accumulate_gradient(const MultiHorizonParams& p, const G& g, const Matrix& window, const Matrix& upstream,
                         std::span<double> grad) {
  detail::require_window(g, window, p.ar_order(), "accumulate_gradient");
  detail::require(upstream.rows() == window.rows() && upstream.cols() == static_cast<Eigen::Index>(p.horizons),
                  "accumulate_gradient: upstream must be N x H");
  const std::size_t m = p.ar_order();
  const std::size_t block = filter_coeff_count(m);
  auto add = [&](const Gradients& gr, std::size_t theta_offset) {
    for (std::size_t i = 0; i < m; ++i) grad[i] += gr.alphas[i];
    std::size_t k = theta_offset;
    for (const auto& c : gr.thetas)
      for (double v : c) grad[k++] += v;
  };

  if (p.variant == MultiHorizonVariant::mlp_head) {
    const Vector y = forward(p.base, g, window);
    Vector dy = Vector::Zero(y.size());
    for (std::size_t h = 0; h < p.horizons; ++h) {
      const Vector z = p.head[h] * y;
      const Vector d = upstream.col(static_cast<Eigen::Index>(h)).cwiseProduct(activate_derivative(p.base.activation, z));
      grad[m + block + h] += d.dot(y);
      dy.noalias() += p.head[h] * d;
    }
    add(backward(p.base, g, window, dy), m);
    return;
  }

  const auto n = window.rows();
  const auto mi = static_cast<Eigen::Index>(m);
  const auto h_count = static_cast<Eigen::Index>(p.horizons);
  Matrix ext(n, mi + h_count);
  ext.leftCols(mi) = window;
  std::vector<CgpParams> hp;
  for (Eigen::Index h = 0; h < h_count; ++h) {
    hp.push_back(p.variant == MultiHorizonVariant::adaptive ? p.horizon_params(static_cast<std::size_t>(h)) : p.base);
    ext.col(mi + h) = forward(hp.back(), g, Matrix(ext.middleCols(h, mi)));
  }
  Matrix ext_grad = Matrix::Zero(n, mi + h_count);
  ext_grad.rightCols(h_count) = upstream;
  Matrix window_grad;
  for (Eigen::Index h = h_count - 1; h >= 0; --h) {
    const Vector up = ext_grad.col(mi + h);
    const Gradients gr = backward(hp[static_cast<std::size_t>(h)], g, Matrix(ext.middleCols(h, mi)), up, &window_grad);
    ext_grad.middleCols(h, mi) += window_grad;
    add(gr, p.variant == MultiHorizonVariant::adaptive ? m + static_cast<std::size_t>(h) * block : m);
  }
}

}  // namespace cgp
