#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cgpronet/error.hpp"
#include "cgpronet/io.hpp"
#include "cgpronet/linalg.hpp"
#include "cgpronet/random.hpp"

namespace cgp {

struct Edge {
  std::size_t source = 0;
  std::size_t target = 0;
  double weight = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Sparse weighted digraph stored as compressed rows keyed by source node.
/// The adjacency entry A(source, target) holds the edge weight, so
/// (A x)_i sums weight * x_target over the out-edges of node i.
/// Instances are immutable after construction.
class DirectedGraph {
 public:
  DirectedGraph() = default;

  /// Validates and sorts an edge list. Rejects out-of-range indices,
  /// self-loops, duplicate pairs and non-finite weights.
  static DirectedGraph from_edges(std::size_t n_nodes, std::vector<Edge> edges) {
    detail::require(n_nodes > 0, "graph: n_nodes must be positive");
    for (const Edge& e : edges) {
      detail::require(e.source < n_nodes && e.target < n_nodes,
                      "graph: edge (" + std::to_string(e.source) + ", " + std::to_string(e.target) +
                          ") out of range for " + std::to_string(n_nodes) + " nodes");
      detail::require(e.source != e.target, "graph: self-loop at node " + std::to_string(e.source));
      detail::require(std::isfinite(e.weight), "graph: non-finite edge weight");
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
      return a.source != b.source ? a.source < b.source : a.target < b.target;
    });
    for (std::size_t k = 1; k < edges.size(); ++k) {
      detail::require(edges[k].source != edges[k - 1].source || edges[k].target != edges[k - 1].target,
                      "graph: duplicate edge (" + std::to_string(edges[k].source) + ", " +
                          std::to_string(edges[k].target) + ")");
    }
    DirectedGraph g;
    g.n_ = n_nodes;
    g.offsets_.assign(n_nodes + 1, 0);
    g.targets_.reserve(edges.size());
    g.weights_.reserve(edges.size());
    for (const Edge& e : edges) {
      ++g.offsets_[e.source + 1];
      g.targets_.push_back(e.target);
      g.weights_.push_back(e.weight);
    }
    std::partial_sum(g.offsets_.begin(), g.offsets_.end(), g.offsets_.begin());
    return g;
  }

  /// Keeps every nonzero off-diagonal entry. Diagonal entries must be zero.
  static DirectedGraph from_dense(const Matrix& a) {
    detail::require(a.rows() == a.cols(), "graph: adjacency must be square");
    std::vector<Edge> edges;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index j = 0; j < a.cols(); ++j) {
        if (a(i, j) == 0.0) continue;
        detail::require(i != j, "graph: nonzero diagonal entry");
        edges.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), a(i, j)});
      }
    }
    return from_edges(static_cast<std::size_t>(a.rows()), std::move(edges));
  }

  std::size_t num_nodes() const noexcept { return n_; }
  std::size_t num_edges() const noexcept { return targets_.size(); }

  const std::vector<std::size_t>& row_offsets() const noexcept { return offsets_; }
  const std::vector<std::size_t>& targets() const noexcept { return targets_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(num_edges());
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k) out.push_back({i, targets_[k], weights_[k]});
    return out;
  }

  /// y = A x.
  void multiply(const Vector& x, Vector& y) const {
    y.resize(static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i) {
      double acc = 0.0;
      for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k) acc += weights_[k] * x[static_cast<Eigen::Index>(targets_[k])];
      y[static_cast<Eigen::Index>(i)] = acc;
    }
  }

  /// y = A^T x.
  void multiply_transpose(const Vector& x, Vector& y) const {
    y.setZero(static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i) {
      const double xi = x[static_cast<Eigen::Index>(i)];
      for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k) y[static_cast<Eigen::Index>(targets_[k])] += weights_[k] * xi;
    }
  }

  Matrix to_dense() const {
    Matrix a = Matrix::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k)
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(targets_[k])) = weights_[k];
    return a;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double w : weights_) s += w * w;
    return std::sqrt(s);
  }

  /// Content hash; equal graphs hash equal.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL ^ n_;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 1099511628211ULL;
    };
    for (std::size_t i = 0; i < targets_.size(); ++i) {
      mix(targets_[i]);
      std::uint64_t bits = 0;
      std::memcpy(&bits, &weights_[i], sizeof bits);
      mix(bits);
    }
    for (std::size_t o : offsets_) mix(o);
    return h;
  }

  friend bool operator==(const DirectedGraph&, const DirectedGraph&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> targets_;
  std::vector<double> weights_;
};

/// Dense adjacency used where perturbations fill the whole matrix
/// (including the diagonal).
class DenseOperator {
 public:
  explicit DenseOperator(Matrix a) : a_(std::move(a)) {
    detail::require(a_.rows() == a_.cols(), "dense operator: matrix must be square");
    detail::require(a_.allFinite(), "dense operator: non-finite entries");
  }

  std::size_t num_nodes() const noexcept { return static_cast<std::size_t>(a_.rows()); }
  void multiply(const Vector& x, Vector& y) const { y.noalias() = a_ * x; }
  void multiply_transpose(const Vector& x, Vector& y) const { y.noalias() = a_.transpose() * x; }
  const Matrix& to_dense() const noexcept { return a_; }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xCBF29CE484222325ULL ^ static_cast<std::uint64_t>(a_.rows());
    for (Eigen::Index k = 0; k < a_.size(); ++k) {
      std::uint64_t bits = 0;
      const double v = a_.data()[k];
      std::memcpy(&bits, &v, sizeof bits);
      h ^= bits;
      h *= 1099511628211ULL;
    }
    return h;
  }

 private:
  Matrix a_;
};

/// Anything a graph filter can diffuse a signal over.
template <class G>
concept GraphOperator = requires(const G& g, const Vector& x, Vector& y) {
  { g.num_nodes() } -> std::convertible_to<std::size_t>;
  g.multiply(x, y);
  g.multiply_transpose(x, y);
  { g.to_dense() } -> std::convertible_to<Matrix>;
  { g.fingerprint() } -> std::convertible_to<std::uint64_t>;
};

// ---------------------------------------------------------------------------
// Generators

namespace detail {

inline double signed_edge_weight(Rng& rng) {
  // Half the edges are negative: magnitudes in [0.1, 0.3] either way.
  const bool positive = bernoulli(rng, 0.5);
  return positive ? uniform(rng, 0.1, 0.3) : uniform(rng, -0.3, -0.1);
}

inline void require_probability(double p, const char* name) {
  require(p >= 0.0 && p <= 1.0, std::string(name) + " must lie in [0, 1]");
}

}  // namespace detail

/// Directed Erdos-Renyi graph: every ordered pair i != j is an edge with
/// probability p.
inline DirectedGraph gen_erdos_renyi(std::size_t n, double p, std::uint64_t seed) {
  detail::require(n > 0, "gen_erdos_renyi: n must be positive");
  detail::require_probability(p, "gen_erdos_renyi: p");
  Rng rng(seed);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (bernoulli(rng, p)) edges.push_back({i, j, detail::signed_edge_weight(rng)});
    }
  }
  return DirectedGraph::from_edges(n, std::move(edges));
}

/// Community of node i when n nodes are split into near-equal contiguous blocks.
inline std::size_t sbm_block(std::size_t node, std::size_t n, std::size_t communities) {
  return node * communities / n;
}

/// Directed stochastic block model with contiguous near-equal communities.
inline DirectedGraph gen_sbm(std::size_t n, std::size_t communities, double p_in, double p_out, std::uint64_t seed) {
  detail::require(n > 0, "gen_sbm: n must be positive");
  detail::require(communities > 0 && communities <= n, "gen_sbm: communities must lie in [1, n]");
  detail::require_probability(p_in, "gen_sbm: p_in");
  detail::require_probability(p_out, "gen_sbm: p_out");
  Rng rng(seed);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double p = sbm_block(i, n, communities) == sbm_block(j, n, communities) ? p_in : p_out;
      if (bernoulli(rng, p)) edges.push_back({i, j, detail::signed_edge_weight(rng)});
    }
  }
  return DirectedGraph::from_edges(n, std::move(edges));
}

/// Euclidean distances between the rows of a coordinate matrix.
inline Matrix pairwise_distances(const Matrix& coords) {
  const Eigen::Index n = coords.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (coords.row(i) - coords.row(j)).norm();
  return d;
}

/// Standard deviation of the off-diagonal distances; the default kernel width.
inline double default_kernel_width(const Matrix& distances) {
  const Eigen::Index n = distances.rows();
  if (n < 2) return 0.0;
  double mean = 0.0;
  double count = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) {
        mean += distances(i, j);
        count += 1.0;
      }
  mean /= count;
  double var = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) var += (distances(i, j) - mean) * (distances(i, j) - mean);
  return std::sqrt(var / count);
}

inline constexpr double kDefaultKernelThreshold = 0.1;

/// Thresholded Gaussian kernel graph: w_ij = exp(-d_ij^2 / width^2), kept
/// only when it exceeds the threshold. The result is symmetric.
inline DirectedGraph graph_from_distances(const Matrix& distances, double kernel_width,
                                          double threshold = kDefaultKernelThreshold) {
  detail::require(distances.rows() == distances.cols() && distances.rows() > 0,
                  "graph_from_distances: distance matrix must be square and non-empty");
  detail::require(distances.allFinite(), "graph_from_distances: non-finite distance");
  detail::require(kernel_width > 0.0 && std::isfinite(kernel_width), "graph_from_distances: kernel_width must be positive");
  detail::require(threshold >= 0.0 && threshold < 1.0, "graph_from_distances: threshold must lie in [0, 1)");
  const Eigen::Index n = distances.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    detail::require(distances(i, i) == 0.0, "graph_from_distances: nonzero diagonal distance");
    for (Eigen::Index j = i + 1; j < n; ++j)
      detail::require(distances(i, j) == distances(j, i), "graph_from_distances: distance matrix not symmetric");
  }
  std::vector<Edge> edges;
  const double w2 = kernel_width * kernel_width;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double w = std::exp(-distances(i, j) * distances(i, j) / w2);
      if (w > threshold) edges.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), w});
    }
  }
  return DirectedGraph::from_edges(static_cast<std::size_t>(n), std::move(edges));
}

inline DirectedGraph graph_from_distances(const Matrix& distances) {
  const double width = default_kernel_width(distances);
  detail::require(width > 0.0, "graph_from_distances: default kernel width is zero; pass one explicitly");
  return graph_from_distances(distances, width, kDefaultKernelThreshold);
}

// ---------------------------------------------------------------------------
// Perturbation

/// A graph together with a dense additive perturbation E, scaled so that
/// 20 log10(||A||_F / ||E||_F) equals snr_db.
struct PerturbedGraph {
  DirectedGraph base;
  Matrix perturbation;
  double snr_db = 0.0;

  Matrix perturbed_adjacency() const { return base.to_dense() + perturbation; }
  DenseOperator perturbed_operator() const { return DenseOperator(perturbed_adjacency()); }
};

inline double snr_scale(double snr_db) { return std::pow(10.0, -snr_db / 20.0); }

inline PerturbedGraph perturb(const DirectedGraph& g, double snr_db, std::uint64_t seed) {
  detail::require(g.num_edges() > 0, "perturb: graph has no edges");
  detail::require(!std::isnan(snr_db), "perturb: snr_db is NaN");
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Rng rng(seed);
  Matrix e(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) e(i, j) = standard_normal(rng);
  e *= g.frobenius_norm() / e.norm() * snr_scale(snr_db);
  return {g, std::move(e), snr_db};
}

// ---------------------------------------------------------------------------
// Spectral quantities

/// ||A^i||_2 for i = 1..m. Dense powers below the cap; above it, power
/// iteration on the implicit operator A^i (unless implicit is disallowed).
inline std::vector<double> power_norms(const DirectedGraph& g, std::size_t m, bool allow_implicit = true) {
  detail::require(m >= 1, "power_norms: m must be at least 1");
  std::vector<double> out;
  out.reserve(m);
  if (g.num_nodes() <= dense_cap()) {
    const Matrix a = g.to_dense();
    Matrix power = a;
    for (std::size_t i = 1; i <= m; ++i) {
      out.push_back(spectral_norm(power).value);
      if (i < m) power = power * a;
    }
    return out;
  }
  if (!allow_implicit) {
    throw ResourceLimit("power_norms: " + std::to_string(g.num_nodes()) + " nodes exceeds dense cap " +
                        std::to_string(dense_cap()) + " and implicit mode is disabled");
  }
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  for (std::size_t i = 1; i <= m; ++i) {
    auto apply = [&](const Vector& x) {
      Vector cur = x, next;
      for (std::size_t k = 0; k < i; ++k) {
        g.multiply(cur, next);
        cur.swap(next);
      }
      return cur;
    };
    auto apply_t = [&](const Vector& x) {
      Vector cur = x, next;
      for (std::size_t k = 0; k < i; ++k) {
        g.multiply_transpose(cur, next);
        cur.swap(next);
      }
      return cur;
    };
    out.push_back(spectral_norm_operator(n, apply, apply_t).value);
  }
  return out;
}

inline std::vector<double> power_norms(const Matrix& a, std::size_t m) {
  detail::require(m >= 1, "power_norms: m must be at least 1");
  require_dense_ok(static_cast<std::size_t>(a.rows()), "power_norms");
  std::vector<double> out;
  Matrix power = a;
  for (std::size_t i = 1; i <= m; ++i) {
    out.push_back(spectral_norm(power).value);
    if (i < m) power = power * a;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string graph_to_csv(const DirectedGraph& g) {
  std::string out = "src,dst,weight\n";
  for (const Edge& e : g.edges()) {
    out += std::to_string(e.source);
    out += ',';
    out += std::to_string(e.target);
    out += ',';
    out += io::format_double(e.weight);
    out += '\n';
  }
  return out;
}

inline void save_graph_csv(const std::filesystem::path& path, const DirectedGraph& g) {
  io::write_atomic(path, graph_to_csv(g));
}

/// Loads an edge list with header "src,dst,weight". When n_nodes is zero the
/// node count is one past the largest index seen.
inline DirectedGraph load_graph_csv(const std::filesystem::path& path, std::size_t n_nodes = 0) {
  const auto rows = io::read_csv(path);
  if (rows.empty()) throw ParseError("graph file " + path.string() + " is empty", 0, 0);
  const auto& header = rows.front();
  if (header.fields.size() != 3 || header.fields[0] != "src" || header.fields[1] != "dst" ||
      header.fields[2] != "weight") {
    throw ParseError("graph file " + path.string() + ": expected header src,dst,weight", header.line, 1);
  }
  std::vector<Edge> edges;
  std::size_t max_index = 0;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != 3)
      throw ParseError("graph file " + path.string() + ": expected 3 fields", row.line, row.fields.size());
    const auto src = io::parse_int(row.fields[0]);
    const auto dst = io::parse_int(row.fields[1]);
    const auto w = io::parse_double(row.fields[2]);
    if (!src || *src < 0) throw ParseError("graph file " + path.string() + ": bad source index", row.line, 1);
    if (!dst || *dst < 0) throw ParseError("graph file " + path.string() + ": bad target index", row.line, 2);
    if (!w || !std::isfinite(*w)) throw ParseError("graph file " + path.string() + ": bad weight", row.line, 3);
    edges.push_back({static_cast<std::size_t>(*src), static_cast<std::size_t>(*dst), *w});
    max_index = std::max({max_index, edges.back().source, edges.back().target});
  }
  const std::size_t n = n_nodes > 0 ? n_nodes : (edges.empty() ? 1 : max_index + 1);
  try {
    return DirectedGraph::from_edges(n, std::move(edges));
  } catch (const InvalidArgument& e) {
    throw ParseError("graph file " + path.string() + ": " + e.what(), 0, 0);
  }
}

/// Distance matrix CSV: N rows of N numbers, no header.
inline Matrix load_matrix_csv(const std::filesystem::path& path) {
  const auto rows = io::read_csv(path);
  if (rows.empty()) throw ParseError("matrix file " + path.string() + " is empty", 0, 0);
  const std::size_t cols = rows.front().fields.size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].fields.size() != cols)
      throw ParseError("matrix file " + path.string() + ": ragged row", rows[r].line, rows[r].fields.size());
    for (std::size_t c = 0; c < cols; ++c) {
      const auto v = io::parse_double(rows[r].fields[c]);
      if (!v) throw ParseError("matrix file " + path.string() + ": non-numeric cell", rows[r].line, c + 1);
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = *v;
    }
  }
  return m;
}

inline std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out += ',';
      out += io::format_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

}  // namespace cgp
