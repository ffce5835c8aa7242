#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgpronet/error.hpp"
#include "cgpronet/filter.hpp"
#include "cgpronet/graph.hpp"
#include "cgpronet/io.hpp"
#include "cgpronet/random.hpp"
#include "cgpronet/train.hpp"

namespace cgp {

enum class GraphKind { er, sbm };

struct SynthConfig {
  std::size_t n_nodes = 100;
  std::size_t length = 100;
  std::size_t ar_order = 3;
  GraphKind graph = GraphKind::er;
  double p = 0.03;
  std::size_t communities = 3;
  double p_in = 0.3;
  double p_out = 0.01;
  /// +inf gives a noiseless trajectory.
  double snr_db = 0.0;
  /// Compute the noise scale once at the first generated step instead of every step.
  bool fixed_eta = false;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(n_nodes >= 1, "SynthConfig: N must be positive");
    detail::require(ar_order >= 1, "SynthConfig: M must be positive");
    detail::require(length > ar_order, "SynthConfig: K must exceed M");
    detail::require(!std::isnan(snr_db), "SynthConfig: snr_db is NaN");
    if (graph == GraphKind::er) detail::require(p >= 0.0 && p <= 1.0, "SynthConfig: p must lie in [0, 1]");
  }
};

struct GroundTruth {
  DirectedGraph graph;
  std::vector<PolyCoeffs> coeffs;
  TimeSeries series;
  /// w_k per column; the first M columns are zero.
  Matrix noise;
  /// eta_k per column; the first M entries are zero.
  std::vector<double> eta;
};

/// theta_1 = [0, 1]; for lags i >= 2 each theta_ij has magnitude U(0.45, 1),
/// a random sign, and is divided by 2^(i+j+1).
inline std::vector<PolyCoeffs> gen_coeffs(std::size_t m, std::uint64_t seed) {
  detail::require(m >= 1, "gen_coeffs: M must be at least 1");
  Rng rng(seed);
  std::vector<PolyCoeffs> out;
  out.emplace_back(std::vector<double>{0.0, 1.0});
  for (std::size_t i = 2; i <= m; ++i) {
    std::vector<double> c(i + 1);
    for (std::size_t j = 0; j <= i; ++j) {
      const double magnitude = uniform(rng, 0.45, 1.0);
      const double sign = bernoulli(rng, 0.5) ? 1.0 : -1.0;
      c[j] = sign * magnitude / std::ldexp(1.0, static_cast<int>(i + j + 1));
    }
    out.emplace_back(std::move(c));
  }
  return out;
}

namespace detail {

inline Vector process_signal(const DirectedGraph& g, const std::vector<PolyCoeffs>& coeffs, const Matrix& x,
                             Eigen::Index k) {
  Vector s = Vector::Zero(x.rows());
  for (std::size_t i = 1; i <= coeffs.size(); ++i)
    s.array() += apply_poly(g, coeffs[i - 1], Vector(x.col(k - static_cast<Eigen::Index>(i)))).array().tanh();
  return s;
}

}  // namespace detail

/// x_k = sum_i tanh(P(A, theta_i) x_{k-i}) + eta_k w_k with
/// eta_k = 10^(-snr/20) ||signal_k|| / ||w_k||.
inline GroundTruth gen_series(const DirectedGraph& g, const std::vector<PolyCoeffs>& coeffs, std::size_t length,
                              double snr_db, std::uint64_t seed, bool fixed_eta = false) {
  const std::size_t m = coeffs.size();
  detail::require(m >= 1, "gen_series: at least one filter required");
  detail::require(length > m, "gen_series: K must exceed M");
  detail::require(!std::isnan(snr_db), "gen_series: snr_db is NaN");
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  const auto k_total = static_cast<Eigen::Index>(length);
  const auto mi = static_cast<Eigen::Index>(m);
  Rng rng(seed);
  GroundTruth gt;
  gt.graph = g;
  gt.coeffs = coeffs;
  Matrix x = Matrix::Zero(n, k_total);
  gt.noise = Matrix::Zero(n, k_total);
  gt.eta.assign(length, 0.0);
  for (Eigen::Index k = 0; k < mi; ++k)
    for (Eigen::Index i = 0; i < n; ++i) x(i, k) = standard_normal(rng);
  const double ratio = std::isinf(snr_db) && snr_db > 0 ? 0.0 : std::pow(10.0, -snr_db / 20.0);
  double eta_fixed = -1.0;
  for (Eigen::Index k = mi; k < k_total; ++k) {
    const Vector s = detail::process_signal(g, coeffs, x, k);
    Vector w(n);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = standard_normal(rng);
    const double w_norm = w.norm();
    double eta = (ratio == 0.0 || w_norm == 0.0) ? 0.0 : ratio * s.norm() / w_norm;
    if (fixed_eta) {
      if (eta_fixed < 0.0) eta_fixed = eta;
      eta = eta_fixed;
    }
    gt.noise.col(k) = w;
    gt.eta[static_cast<std::size_t>(k)] = eta;
    x.col(k) = s + eta * w;
    if (!x.col(k).allFinite()) throw Error("gen_series: non-finite value at step " + std::to_string(k));
  }
  gt.series = TimeSeries(std::move(x));
  return gt;
}

inline DirectedGraph generate_graph(const SynthConfig& c) {
  const std::uint64_t seed = derive_seed(c.seed, 0);
  return c.graph == GraphKind::er ? gen_erdos_renyi(c.n_nodes, c.p, seed)
                                  : gen_sbm(c.n_nodes, c.communities, c.p_in, c.p_out, seed);
}

/// Graph, coefficients and trajectory from independent streams of one seed.
inline GroundTruth generate(const SynthConfig& c) {
  c.validate();
  const DirectedGraph g = generate_graph(c);
  return gen_series(g, gen_coeffs(c.ar_order, derive_seed(c.seed, 1)), c.length, c.snr_db, derive_seed(c.seed, 2),
                    c.fixed_eta);
}

/// Re-runs the recursion from stored initial conditions, noise and eta.
inline TimeSeries replay(const GroundTruth& gt) {
  const std::size_t m = gt.coeffs.size();
  Matrix x = Matrix::Zero(gt.series.values.rows(), gt.series.values.cols());
  x.leftCols(static_cast<Eigen::Index>(m)) = gt.series.values.leftCols(static_cast<Eigen::Index>(m));
  for (Eigen::Index k = static_cast<Eigen::Index>(m); k < x.cols(); ++k)
    x.col(k) = detail::process_signal(gt.graph, gt.coeffs, x, k) + gt.eta[static_cast<std::size_t>(k)] * gt.noise.col(k);
  return TimeSeries(std::move(x));
}

inline nlohmann::json double_json(double v) {
  if (std::isfinite(v)) return v;
  return io::format_double(v);
}

inline nlohmann::json synth_config_json(const SynthConfig& c) {
  return {{"N", c.n_nodes},
          {"K", c.length},
          {"M", c.ar_order},
          {"graph", c.graph == GraphKind::er ? "er" : "sbm"},
          {"p", c.p},
          {"communities", c.communities},
          {"p_in", c.p_in},
          {"p_out", c.p_out},
          {"snr_db", double_json(c.snr_db)},
          {"fixed_eta", c.fixed_eta},
          {"seed", c.seed}};
}

inline nlohmann::json manifest_json(const SynthConfig& c, const GroundTruth& gt) {
  nlohmann::json coeffs = nlohmann::json::array();
  for (const auto& pc : gt.coeffs) coeffs.push_back(pc.coeffs);
  return {{"config", synth_config_json(c)},
          {"coefficients", coeffs},
          {"eta", gt.eta},
          {"num_edges", gt.graph.num_edges()},
          {"graph_file", "graph.csv"},
          {"series_file", "series.csv"},
          {"noise_file", "noise.csv"}};
}

/// Writes graph.csv, series.csv, noise.csv and manifest.json into dir.
inline void export_ground_truth(const std::filesystem::path& dir, const SynthConfig& c, const GroundTruth& gt) {
  save_graph_csv(dir / "graph.csv", gt.graph);
  save_series_csv(dir / "series.csv", gt.series);
  save_series_csv(dir / "noise.csv", TimeSeries(gt.noise));
  io::write_atomic(dir / "manifest.json", manifest_json(c, gt).dump(2) + "\n");
}

}  // namespace cgp
