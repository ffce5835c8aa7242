#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include "cgpronet/error.hpp"
#include "cgpronet/filter.hpp"
#include "cgpronet/graph.hpp"
#include "cgpronet/linalg.hpp"
#include "cgpronet/model.hpp"
#include "cgpronet/random.hpp"
#include "cgpronet/synth.hpp"
#include "cgpronet/train.hpp"

namespace cgp {

// ---------------------------------------------------------------------------
// Metrics and baselines

struct MetricsReport {
  double mse = 0.0;
  /// sqrt(sum err^2 / sum target^2).
  double rmse = 0.0;
  /// sum err^2 / sum target^2, the square of rmse.
  double rse = 0.0;
  double mae = 0.0;
  double rmae = 0.0;
  /// Mean of |err| / |target| over entries with a nonzero target.
  double mape = 0.0;
};

inline MetricsReport metrics(const Matrix& pred, const Matrix& target) {
  detail::require(pred.rows() == target.rows() && pred.cols() == target.cols(), "metrics: shape mismatch");
  detail::require(pred.size() > 0, "metrics: empty input");
  const auto err = (pred - target).array();
  const double count = static_cast<double>(pred.size());
  const double sq = err.square().sum();
  const double abs_err = err.abs().sum();
  const double t_sq = target.array().square().sum();
  const double t_abs = target.array().abs().sum();
  MetricsReport r;
  r.mse = sq / count;
  r.mae = abs_err / count;
  r.rse = t_sq > 0.0 ? sq / t_sq : (sq > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  r.rmse = std::sqrt(r.rse);
  r.rmae = t_abs > 0.0 ? abs_err / t_abs : (abs_err > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  double ratio_sum = 0.0;
  double ratio_count = 0.0;
  for (Eigen::Index k = 0; k < pred.size(); ++k) {
    const double t = target.data()[k];
    if (t == 0.0) continue;
    ratio_sum += std::abs(pred.data()[k] - t) / std::abs(t);
    ratio_count += 1.0;
  }
  r.mape = ratio_count > 0.0 ? ratio_sum / ratio_count : 0.0;
  return r;
}

enum class BaselineKind { avg, last };

inline Vector baseline_forecast(const Matrix& window, BaselineKind kind) {
  detail::require(window.cols() >= 1, "baseline_forecast: window needs at least one column");
  return kind == BaselineKind::avg ? Vector(window.rowwise().mean()) : Vector(window.col(window.cols() - 1));
}

/// Baseline forecast of every sample, repeated over the H target columns.
inline StackedForecast baseline_dataset(const WindowDataset& data, BaselineKind kind) {
  detail::require(data.size() > 0, "baseline_dataset: empty dataset");
  const auto n = data.targets[0].rows();
  const auto h = data.targets[0].cols();
  StackedForecast out{Matrix(n, h * static_cast<Eigen::Index>(data.size())),
                      Matrix(n, h * static_cast<Eigen::Index>(data.size()))};
  for (std::size_t s = 0; s < data.size(); ++s) {
    const Vector f = baseline_forecast(data.windows[s], kind);
    const auto col = static_cast<Eigen::Index>(s) * h;
    for (Eigen::Index j = 0; j < h; ++j) out.pred.col(col + j) = f;
    out.target.middleCols(col, h) = data.targets[s];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Norms and spectral quantities

/// Sum of column 2-norms, or the largest column norm when use_max is set.
inline double mixed_norm(const Matrix& x, bool use_max = false) {
  detail::require(x.allFinite(), "mixed_norm: non-finite entries");
  double out = 0.0;
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    const double c = x.col(k).norm();
    out = use_max ? std::max(out, c) : out + c;
  }
  return out;
}

/// Largest real part over the eigenvalues.
inline double spectral_abscissa(const Matrix& a) {
  require_dense_ok(static_cast<std::size_t>(a.rows()), "spectral_abscissa");
  Eigen::EigenSolver<Matrix> solver(a, false);
  detail::require(solver.info() == Eigen::Success, "spectral_abscissa: eigensolver failed");
  return solver.eigenvalues().real().maxCoeff();
}

/// Largest eigenvalue of the symmetric part (A + A^T) / 2.
inline double log_norm(const Matrix& a) {
  require_dense_ok(static_cast<std::size_t>(a.rows()), "log_norm");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
  detail::require(solver.info() == Eigen::Success, "log_norm: eigensolver failed");
  return solver.eigenvalues().maxCoeff();
}

// ---------------------------------------------------------------------------
// Stability bounds for the discrete filters

/// max over i = 1..M of ((L + delta)^i - L^i) / delta; at delta = 0 the limit i L^(i-1).
inline double hat_L(double l, double delta, std::size_t m) {
  detail::require(m >= 1, "hat_L: M must be at least 1");
  detail::require(l >= 0.0 && delta >= 0.0, "hat_L: L and delta must be non-negative");
  double best = 0.0;
  for (std::size_t i = 1; i <= m; ++i) {
    const auto e = static_cast<double>(i);
    double v = 0.0;
    if (delta == 0.0) {
      v = e * std::pow(l, e - 1.0);
    } else {
      // Sum form of ((L+d)^i - L^i)/d avoids cancellation for tiny delta.
      for (std::size_t k = 0; k < i; ++k)
        v += std::pow(l + delta, static_cast<double>(k)) * std::pow(l, static_cast<double>(i - 1 - k));
    }
    best = std::max(best, v);
  }
  return best;
}

struct BoundInputs {
  double L = 0.0;
  double delta_A = 0.0;
  double rho_theta = 0.0;
  double delta_theta = 0.0;
  double rho_alpha = 0.0;
  double delta_alpha = 0.0;
  std::size_t M = 1;
  double X_norm = 0.0;

  void validate() const {
    detail::require(L >= 0 && delta_A >= 0 && rho_theta >= 0 && delta_theta >= 0 && rho_alpha >= 0 &&
                        delta_alpha >= 0 && X_norm >= 0,
                    "BoundInputs: all quantities must be non-negative");
    detail::require(M >= 1, "BoundInputs: M must be at least 1");
  }
};

/// Bound on ||P(A + E, theta + e)||_2 for one lag.
inline double bound_filter_norm(const BoundInputs& b, double rho_theta_i, double delta_theta_i) {
  b.validate();
  return (rho_theta_i + delta_theta_i) * (b.L + b.delta_A * hat_L(b.L, b.delta_A, b.M));
}

/// Bound on ||P(A + E, theta + e) - P(A, theta)||_2 for one lag.
inline double bound_filter_stability(const BoundInputs& b, double rho_theta_i, double delta_theta_i) {
  b.validate();
  const double h = hat_L(b.L, b.delta_A, b.M);
  return rho_theta_i * b.delta_A * h + delta_theta_i * (b.L + b.delta_A * h);
}

/// Bound on the change of the one-step prediction under perturbed graph,
/// filters and mixing weights.
inline double bound_prediction(const BoundInputs& b) {
  b.validate();
  const double h = hat_L(b.L, b.delta_A, b.M);
  const double grown = b.L + b.delta_A * h;
  return b.rho_alpha * (b.rho_theta * b.delta_A * h + b.delta_theta * grown) * b.X_norm +
         b.delta_alpha * (b.rho_theta + b.delta_theta) * grown * b.X_norm;
}

/// L for the bounds: the largest ||A^i||_2 over i = 1..M, raised to at least 1
/// because the identity term of every filter has norm 1.
inline double bound_L(const std::vector<double>& power_norms_of_a) {
  double l = 1.0;
  for (double v : power_norms_of_a) l = std::max(l, v);
  return l;
}

// ---------------------------------------------------------------------------
// Heat-kernel bounds

struct HeatBoundInputs {
  double spectral_abscissa = 0.0;
  double log_norm = 0.0;
  double norm_A = 0.0;
  double delta_A = 0.0;
  double rho_alpha = 0.0;
  double rho_theta = 0.0;
  double rho_t = 0.0;
  std::size_t M = 1;
  double X_norm = 0.0;
};

inline HeatBoundInputs heat_bound_inputs(const Matrix& a) {
  HeatBoundInputs hb;
  hb.spectral_abscissa = spectral_abscissa(a);
  hb.log_norm = log_norm(a);
  hb.norm_A = spectral_norm(a).value;
  return hb;
}

/// Bound on ||e^{(A+E)t} - e^{At}||_2 for t >= 0.
inline double bound_heat_lemma(double t, double norm_e, const HeatBoundInputs& hb) {
  detail::require(t >= 0.0, "bound_heat_lemma: t must be non-negative");
  return t * norm_e * std::exp((hb.log_norm - hb.spectral_abscissa + hb.norm_A + norm_e) * t);
}

/// M rho_alpha rho_theta rho_t delta_A e^{(mu - alpha + ||A|| + delta_A) rho_t} ||X||.
inline double bound_heat(const HeatBoundInputs& hb) {
  return static_cast<double>(hb.M) * hb.rho_alpha * hb.rho_theta * hb.rho_t * hb.delta_A *
         std::exp((hb.log_norm - hb.spectral_abscissa + hb.norm_A + hb.delta_A) * hb.rho_t) * hb.X_norm;
}

// ---------------------------------------------------------------------------
// Empirical bound verification

struct BoundCheck {
  std::string name;
  std::size_t checks = 0;
  std::size_t violations = 0;
  /// Largest observed lhs / rhs.
  double max_ratio = 0.0;

  void record(double lhs, double rhs) {
    ++checks;
    const bool ok = lhs <= rhs * (1.0 + 1e-12) + 1e-14;
    if (!ok) ++violations;
    if (rhs > 0.0) max_ratio = std::max(max_ratio, lhs / rhs);
    else if (lhs > 0.0) max_ratio = std::numeric_limits<double>::infinity();
  }
};

struct BoundVerificationConfig {
  std::size_t instances = 100;
  std::size_t min_nodes = 5;
  std::size_t max_nodes = 30;
  std::size_t max_order = 5;
  double min_snr_db = -15.0;
  double max_snr_db = 15.0;
  double max_time = 1.0;
  /// Relative size of the coefficient perturbations.
  double coeff_noise = 0.1;
  std::uint64_t seed = 0;
};

struct BoundVerificationReport {
  std::vector<BoundCheck> checks;

  std::size_t total_violations() const {
    std::size_t v = 0;
    for (const auto& c : checks) v += c.violations;
    return v;
  }
};

namespace detail {

inline double l1(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

}  // namespace detail

/// Draws random perturbed instances and compares each bound with the dense
/// oracle value of the quantity it bounds.
inline BoundVerificationReport verify_bounds(const BoundVerificationConfig& c) {
  detail::require(c.min_nodes >= 2 && c.min_nodes <= c.max_nodes, "verify_bounds: invalid node range");
  detail::require(c.max_order >= 1, "verify_bounds: max_order must be at least 1");
  BoundCheck prop1{"filter_norm"}, prop2{"filter_stability"}, thm1{"prediction"}, lemma{"heat_lemma"},
      heat_thm{"heat_prediction"};
  for (std::size_t inst = 0; inst < c.instances; ++inst) {
    Rng rng(derive_seed(c.seed, inst));
    const auto n = static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(c.min_nodes, c.max_nodes)(rng));
    const auto m = static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(1, c.max_order)(rng));
    const double p = uniform(rng, 0.05, 0.5);
    DirectedGraph g = gen_erdos_renyi(n, p, rng());
    if (g.num_edges() == 0) g = DirectedGraph::from_edges(n, {{0, 1, 0.2}});
    const double snr = uniform(rng, c.min_snr_db, c.max_snr_db);
    const PerturbedGraph pg = perturb(g, snr, rng());
    const Matrix a = g.to_dense();
    const Matrix a_hat = pg.perturbed_adjacency();
    const DenseOperator op_hat(a_hat);

    CgpParams clean;
    clean.activation = Activation::tanh;
    for (std::size_t i = 1; i <= m; ++i) {
      std::vector<double> th(i + 1);
      for (double& v : th) v = uniform(rng, -1.0, 1.0);
      clean.thetas.emplace_back(std::move(th));
      clean.alphas.push_back(uniform(rng, -1.0, 1.0));
    }
    CgpParams pert = clean;
    for (auto& th : pert.thetas)
      for (double& v : th.coeffs) v += c.coeff_noise * uniform(rng, -1.0, 1.0);
    for (double& v : pert.alphas) v += c.coeff_noise * uniform(rng, -1.0, 1.0);

    BoundInputs b;
    b.M = m;
    b.L = bound_L(power_norms(a, m));
    b.delta_A = spectral_norm(pg.perturbation).value;
    b.rho_alpha = detail::l1(clean.alphas);
    std::vector<double> da(m);
    for (std::size_t i = 0; i < m; ++i) da[i] = pert.alphas[i] - clean.alphas[i];
    b.delta_alpha = detail::l1(da);
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> dt(clean.thetas[i].size());
      for (std::size_t j = 0; j < dt.size(); ++j) dt[j] = pert.thetas[i][j] - clean.thetas[i][j];
      const double rho_i = detail::l1(clean.thetas[i].coeffs);
      const double delta_i = detail::l1(dt);
      b.rho_theta = std::max(b.rho_theta, rho_i);
      b.delta_theta = std::max(b.delta_theta, delta_i);
      const Matrix p_hat = poly_matrix(a_hat, pert.thetas[i]);
      const Matrix p_clean = poly_matrix(a, clean.thetas[i]);
      prop1.record(spectral_norm(p_hat).value, bound_filter_norm(b, rho_i, delta_i));
      prop2.record(spectral_norm(p_hat - p_clean).value, bound_filter_stability(b, rho_i, delta_i));
    }
    Matrix window(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    for (Eigen::Index k = 0; k < window.size(); ++k) window.data()[k] = standard_normal(rng);
    b.X_norm = mixed_norm(window);
    thm1.record((forward(pert, op_hat, window) - forward(clean, g, window)).norm(), bound_prediction(b));

    // Heat kernels: the lemma per lag time and the aggregate prediction bound.
    HeatBoundInputs hb = heat_bound_inputs(a);
    hb.delta_A = b.delta_A;
    hb.M = m;
    hb.X_norm = b.X_norm;
    HeatParams heat;
    heat.activation = Activation::tanh;
    for (std::size_t i = 0; i < m; ++i) {
      heat.alphas.push_back(uniform(rng, -1.0, 1.0));
      heat.heat.push_back({uniform(rng, -1.0, 1.0), uniform(rng, 0.0, c.max_time)});
      const double t = heat.heat.back().time;
      const Matrix diff = matrix_exponential(t * a_hat) - matrix_exponential(t * a);
      lemma.record(spectral_norm(diff).value, bound_heat_lemma(t, b.delta_A, hb));
      hb.rho_alpha = std::max(hb.rho_alpha, std::abs(heat.alphas.back()));
      hb.rho_theta = std::max(hb.rho_theta, std::abs(heat.heat.back().scale));
      hb.rho_t = std::max(hb.rho_t, t);
    }
    heat_thm.record((forward_heat(heat, op_hat, window) - forward_heat(heat, g, window)).norm(), bound_heat(hb));
  }
  return {{prop1, prop2, thm1, lemma, heat_thm}};
}

// ---------------------------------------------------------------------------
// Stability experiment: train on the clean graph, evaluate on perturbed copies.

struct StabilityConfig {
  std::vector<double> p_grid{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<double> snr_grid{15.0, 0.0, -15.0};
  std::size_t trials = 5;
  std::size_t n_nodes = 100;
  std::size_t length = 100;
  std::size_t ar_order = 10;
  /// Noise level of the generated series (+inf for noiseless trajectories).
  double generation_snr_db = std::numeric_limits<double>::infinity();
  SplitSpec split{};
  TrainConfig train{};
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct StabilityCell {
  double p = 0.0;
  double snr_db = 0.0;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> trials;
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

/// One (p, trial) run: rMSE on the test split for each graph SNR.
inline std::vector<double> stability_trial(const StabilityConfig& c, double p, std::uint64_t trial_seed) {
  SynthConfig sc;
  sc.n_nodes = c.n_nodes;
  sc.length = c.length;
  sc.ar_order = c.ar_order;
  sc.p = p;
  sc.snr_db = c.generation_snr_db;
  sc.seed = trial_seed;
  const GroundTruth gt = generate(sc);
  const SplitSeries parts = split(gt.series, c.split);
  const auto train_set = make_windows(parts.train, c.ar_order, 1);
  const auto val_set = make_windows(parts.val, c.ar_order, 1);
  const auto test_set = make_windows(parts.test, c.ar_order, 1);
  TrainConfig tc = c.train;
  tc.threads = 1;
  const auto report = train(CgpParams::initial(c.ar_order), gt.graph, train_set, val_set, tc);
  std::vector<double> out;
  for (std::size_t s = 0; s < c.snr_grid.size(); ++s) {
    const double snr = c.snr_grid[s];
    if (std::isinf(snr) && snr > 0) {
      const auto f = predict_dataset(report.best_params, gt.graph, test_set);
      out.push_back(metrics(f.pred, f.target).rmse);
      continue;
    }
    const PerturbedGraph pg = perturb(gt.graph, snr, derive_seed(trial_seed, 100 + s));
    const auto f = predict_dataset(report.best_params, pg.perturbed_operator(), test_set);
    out.push_back(metrics(f.pred, f.target).rmse);
  }
  return out;
}

/// Cells ordered by p, then SNR. Trials run in parallel; results are
/// reduced by (p, trial) index so the table does not depend on threads.
inline std::vector<StabilityCell> run_stability_experiment(const StabilityConfig& c) {
  detail::require(c.trials >= 1, "run_stability_experiment: trials must be at least 1");
  detail::require(!c.p_grid.empty() && !c.snr_grid.empty(), "run_stability_experiment: empty grid");
  const std::size_t jobs = c.p_grid.size() * c.trials;
  std::vector<std::vector<double>> results(jobs);
  detail::parallel_for(jobs, c.threads, [&](std::size_t job) {
    const std::size_t pi = job / c.trials;
    const std::size_t t = job % c.trials;
    results[job] = stability_trial(c, c.p_grid[pi], derive_seed(derive_seed(c.seed, pi), t));
  });
  std::vector<StabilityCell> cells;
  for (std::size_t pi = 0; pi < c.p_grid.size(); ++pi) {
    for (std::size_t s = 0; s < c.snr_grid.size(); ++s) {
      StabilityCell cell;
      cell.p = c.p_grid[pi];
      cell.snr_db = c.snr_grid[s];
      for (std::size_t t = 0; t < c.trials; ++t) cell.trials.push_back(results[pi * c.trials + t][s]);
      std::tie(cell.mean, cell.std) = mean_std(cell.trials);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

inline std::string stability_to_csv(const std::vector<StabilityCell>& cells) {
  std::string out = "p,snr_db,mean_rmse,std_rmse,trials\n";
  for (const auto& c : cells)
    out += io::format_double(c.p) + "," + io::format_double(c.snr_db) + "," + io::format_double(c.mean) + "," +
           io::format_double(c.std) + "," + std::to_string(c.trials.size()) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Ablation over non-linearity and regularization

struct AblationConfig {
  std::size_t realizations = 10;
  std::size_t n_nodes = 30;
  std::size_t length = 100;
  std::size_t ar_order = 3;
  double p = 0.03;
  double snr_db = 0.0;
  double reg_weight = 0.01;
  SplitSpec split{};
  TrainConfig train{};
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct AblationVariant {
  std::string name;
  bool var = false;
  Activation activation = Activation::identity;
  RegKind regularizer = RegKind::none;
};

/// The seven rows, from the unconstrained VAR to the full model.
inline std::vector<AblationVariant> ablation_variants() {
  return {{"var", true, Activation::identity, RegKind::none},
          {"filter", false, Activation::identity, RegKind::none},
          {"filter+l1", false, Activation::identity, RegKind::l1},
          {"filter+l2", false, Activation::identity, RegKind::l2},
          {"filter+tanh", false, Activation::tanh, RegKind::none},
          {"filter+tanh+l2", false, Activation::tanh, RegKind::l2},
          {"filter+tanh+l1", false, Activation::tanh, RegKind::l1}};
}

struct AblationRow {
  std::string name;
  std::size_t parameters = 0;
  double mean_mse = 0.0;
  double std_mse = 0.0;
  double mean_rmse = 0.0;
  std::vector<double> mse;
  std::vector<double> rmse;
};

inline std::vector<AblationRow> run_ablation(const AblationConfig& c) {
  detail::require(c.realizations >= 1, "run_ablation: realizations must be at least 1");
  const auto variants = ablation_variants();
  std::vector<std::vector<MetricsReport>> results(c.realizations, std::vector<MetricsReport>(variants.size()));
  detail::parallel_for(c.realizations, c.threads, [&](std::size_t r) {
    SynthConfig sc;
    sc.n_nodes = c.n_nodes;
    sc.length = c.length;
    sc.ar_order = c.ar_order;
    sc.p = c.p;
    sc.snr_db = c.snr_db;
    sc.seed = derive_seed(c.seed, r);
    const GroundTruth gt = generate(sc);
    const SplitSeries parts = split(gt.series, c.split);
    const auto train_set = make_windows(parts.train, c.ar_order, 1);
    const auto val_set = make_windows(parts.val, c.ar_order, 1);
    const auto test_set = make_windows(parts.test, c.ar_order, 1);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      TrainConfig tc = c.train;
      tc.threads = 1;
      tc.regularizer = variants[v].regularizer;
      tc.reg_weight = c.reg_weight;
      if (variants[v].var) {
        const auto rep = train(VarParams::initial(c.ar_order, c.n_nodes), gt.graph, train_set, val_set, tc);
        const auto f = predict_dataset(rep.best_params, gt.graph, test_set);
        results[r][v] = metrics(f.pred, f.target);
      } else {
        const auto rep =
            train(CgpParams::initial(c.ar_order, variants[v].activation), gt.graph, train_set, val_set, tc);
        const auto f = predict_dataset(rep.best_params, gt.graph, test_set);
        results[r][v] = metrics(f.pred, f.target);
      }
    }
  });
  std::vector<AblationRow> rows;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    AblationRow row;
    row.name = variants[v].name;
    row.parameters = variants[v].var ? param_count(ModelKind::var, c.ar_order, 1, c.n_nodes)
                                     : param_count(ModelKind::base, c.ar_order);
    for (std::size_t r = 0; r < c.realizations; ++r) {
      row.mse.push_back(results[r][v].mse);
      row.rmse.push_back(results[r][v].rmse);
    }
    std::tie(row.mean_mse, row.std_mse) = mean_std(row.mse);
    row.mean_rmse = mean_std(row.rmse).first;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,parameters,mean_mse,std_mse,mean_rmse\n";
  for (const auto& r : rows)
    out += r.name + "," + std::to_string(r.parameters) + "," + io::format_double(r.mean_mse) + "," +
           io::format_double(r.std_mse) + "," + io::format_double(r.mean_rmse) + "\n";
  return out;
}

}  // namespace cgp
