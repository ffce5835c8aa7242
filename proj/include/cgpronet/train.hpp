#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cgpronet/error.hpp"
#include "cgpronet/graph.hpp"
#include "cgpronet/io.hpp"
#include "cgpronet/linalg.hpp"
#include "cgpronet/model.hpp"

namespace cgp {

/// N x K observations; column k is the graph signal at time k.
struct TimeSeries {
  Matrix values;

  TimeSeries() = default;
  explicit TimeSeries(Matrix v) : values(std::move(v)) {}

  std::size_t num_nodes() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t length() const noexcept { return static_cast<std::size_t>(values.cols()); }
  TimeSeries slice(std::size_t begin, std::size_t count) const {
    return TimeSeries(values.middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)));
  }
};

// ---------------------------------------------------------------------------
// Series CSV: one row per node, first field the node id, then one column per
// time step. A header row starting with a non-integer field is skipped.

inline std::string series_to_csv(const TimeSeries& s) {
  std::string out = "node";
  for (std::size_t k = 0; k < s.length(); ++k) out += "," + std::to_string(k);
  out += '\n';
  for (Eigen::Index i = 0; i < s.values.rows(); ++i) {
    out += std::to_string(i);
    for (Eigen::Index k = 0; k < s.values.cols(); ++k) {
      out += ',';
      out += io::format_double(s.values(i, k));
    }
    out += '\n';
  }
  return out;
}

inline void save_series_csv(const std::filesystem::path& path, const TimeSeries& s) {
  io::write_atomic(path, series_to_csv(s));
}

/// Missing cells ("", "nan", "NA") are rejected unless forward_fill is set, in
/// which case they repeat the previous time step of the same node.
inline TimeSeries load_series_csv(const std::filesystem::path& path, bool forward_fill = false) {
  auto rows = io::read_csv(path);
  if (rows.empty()) throw ParseError("series file " + path.string() + " is empty", 0, 0);
  if (!io::parse_int(rows.front().fields.front())) rows.erase(rows.begin());
  if (rows.empty()) throw ParseError("series file " + path.string() + " has no data rows", 0, 0);
  const std::size_t width = rows.front().fields.size();
  if (width < 2) throw ParseError("series file " + path.string() + ": no time columns", rows.front().line, 1);
  Matrix values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != width)
      throw ParseError("series file " + path.string() + ": row has " + std::to_string(row.fields.size()) +
                           " fields, expected " + std::to_string(width),
                       row.line, row.fields.size());
    const auto id = io::parse_int(row.fields[0]);
    if (!id || *id != static_cast<long long>(r))
      throw ParseError("series file " + path.string() + ": node ids must be 0..N-1 in order", row.line, 1);
    for (std::size_t c = 1; c < width; ++c) {
      const std::string& cell = row.fields[c];
      const bool missing = cell.empty() || cell == "nan" || cell == "NaN" || cell == "NA";
      const auto ri = static_cast<Eigen::Index>(r);
      const auto ci = static_cast<Eigen::Index>(c - 1);
      if (missing) {
        if (!forward_fill) throw ParseError("series file " + path.string() + ": missing value", row.line, c + 1);
        if (c == 1) throw ParseError("series file " + path.string() + ": cannot forward-fill the first time step", row.line, c + 1);
        values(ri, ci) = values(ri, ci - 1);
        continue;
      }
      const auto v = io::parse_double(cell);
      if (!v || !std::isfinite(*v))
        throw ParseError("series file " + path.string() + ": non-numeric value '" + cell + "'", row.line, c + 1);
      values(ri, ci) = *v;
    }
  }
  return TimeSeries(std::move(values));
}

// ---------------------------------------------------------------------------
// Windows and splits

/// Sample s pairs window columns s..s+M-1 with targets s+M..s+M+H-1.
struct WindowDataset {
  std::size_t ar_order = 0;
  std::size_t horizons = 0;
  std::vector<Matrix> windows;
  std::vector<Matrix> targets;

  std::size_t size() const noexcept { return windows.size(); }
};

inline WindowDataset make_windows(const TimeSeries& series, std::size_t m, std::size_t horizons) {
  detail::require(m >= 1 && horizons >= 1, "make_windows: M and H must be at least 1");
  const std::size_t k = series.length();
  if (k < m + horizons)
    throw InvalidArgument("make_windows: series of length " + std::to_string(k) + " is shorter than M + H = " +
                          std::to_string(m + horizons));
  WindowDataset d;
  d.ar_order = m;
  d.horizons = horizons;
  const std::size_t count = k - m - horizons + 1;
  for (std::size_t s = 0; s < count; ++s) {
    d.windows.emplace_back(series.values.middleCols(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(m)));
    d.targets.emplace_back(
        series.values.middleCols(static_cast<Eigen::Index>(s + m), static_cast<Eigen::Index>(horizons)));
  }
  return d;
}

struct SplitSpec {
  double train = 0.5;
  double val = 0.25;
  double test = 0.25;

  void validate() const {
    detail::require(train >= 0 && val >= 0 && test >= 0, "SplitSpec: fractions must be non-negative");
    detail::require(std::abs(train + val + test - 1.0) <= 1e-12, "SplitSpec: fractions must sum to 1");
  }
};

struct SplitSeries {
  TimeSeries train;
  TimeSeries val;
  TimeSeries test;
};

/// Chronological slices of floor(frac * K); the remainder goes to test.
inline SplitSeries split(const TimeSeries& series, const SplitSpec& spec) {
  spec.validate();
  const std::size_t k = series.length();
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(k)));
  const auto n_val = static_cast<std::size_t>(std::floor(spec.val * static_cast<double>(k)));
  detail::require(n_train + n_val <= k, "split: fractions exceed the series length");
  const std::size_t n_test = k - n_train - n_val;
  detail::require(n_train > 0 && n_val > 0 && n_test > 0,
                  "split: a slice is empty for K = " + std::to_string(k));
  return {series.slice(0, n_train), series.slice(n_train, n_val), series.slice(n_train + n_val, n_test)};
}

// ---------------------------------------------------------------------------
// Losses and regularizers

enum class LossKind { mse, mae };
enum class RegKind { none, l1, l2 };

inline std::string_view to_string(LossKind k) { return k == LossKind::mse ? "mse" : "mae"; }
inline std::string_view to_string(RegKind k) { return k == RegKind::none ? "none" : (k == RegKind::l1 ? "l1" : "l2"); }

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "mse") return LossKind::mse;
  if (s == "mae") return LossKind::mae;
  throw InvalidArgument("unknown loss '" + std::string(s) + "'");
}

inline RegKind parse_reg_kind(std::string_view s) {
  if (s == "none") return RegKind::none;
  if (s == "l1") return RegKind::l1;
  if (s == "l2") return RegKind::l2;
  throw InvalidArgument("unknown regularizer '" + std::string(s) + "'");
}

inline double loss(const Matrix& pred, const Matrix& target, LossKind kind) {
  detail::require(pred.rows() == target.rows() && pred.cols() == target.cols(), "loss: shape mismatch");
  detail::require(pred.size() > 0, "loss: empty input");
  const auto diff = (pred - target).array();
  const double total = kind == LossKind::mse ? diff.square().sum() : diff.abs().sum();
  return total / static_cast<double>(pred.size());
}

inline double regularizer(std::span<const double> flat, RegKind kind) {
  double s = 0.0;
  if (kind == RegKind::l1)
    for (double v : flat) s += std::abs(v);
  if (kind == RegKind::l2)
    for (double v : flat) s += v * v;
  return s;
}

template <class P>
double regularizer(const P& params, RegKind kind) {
  const auto flat = flatten(params);
  return regularizer(std::span<const double>(flat), kind);
}

/// Adds weight * d(regularizer)/d(flat) to grad. The l1 subgradient at 0 is 0.
inline void add_regularizer_gradient(std::span<const double> flat, RegKind kind, double weight, std::span<double> grad) {
  if (kind == RegKind::none || weight == 0.0) return;
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const double v = flat[k];
    grad[k] += kind == RegKind::l1 ? weight * static_cast<double>((v > 0.0) - (v < 0.0)) : 2.0 * weight * v;
  }
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> first;
  std::vector<double> second;
  long step = 0;

  explicit AdamState(std::size_t n = 0) : first(n, 0.0), second(n, 0.0) {}
};

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& c) {
  detail::require(params.size() == grads.size() && state.first.size() == params.size(), "adam_step: size mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.first[k] = c.beta1 * state.first[k] + (1.0 - c.beta1) * grads[k];
    state.second[k] = c.beta2 * state.second[k] + (1.0 - c.beta2) * grads[k] * grads[k];
    const double m_hat = state.first[k] / bc1;
    const double v_hat = state.second[k] / bc2;
    params[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Model adapters: how the training loop evaluates each parameter type.

template <class P, class G>
struct ModelAdapter;

template <GraphOperator G>
struct ModelAdapter<CgpParams, G> {
  using Sample = WindowPowers;
  const G& graph;

  void refresh(const CgpParams&) {}
  Sample prepare(const Matrix& window) const { return window_powers(graph, window); }
  Matrix predict(const CgpParams& p, const Sample& s) const { return forward(p, s); }
  void gradient(const CgpParams& p, const Sample& s, const Matrix& upstream, std::span<double> grad) const {
    accumulate_gradient(p, s, Vector(upstream.col(0)), grad);
  }
};

template <GraphOperator G>
struct ModelAdapter<HeatParams, G> {
  using Sample = Matrix;
  const G& graph;
  HeatKernels kernels{};

  void refresh(const HeatParams& p) { kernels = heat_kernels(p, graph); }
  Sample prepare(const Matrix& window) const {
    detail::require_window(graph, window, static_cast<std::size_t>(window.cols()), "prepare");
    return window;
  }
  Matrix predict(const HeatParams& p, const Sample& s) const { return forward_heat(p, kernels, s); }
  void gradient(const HeatParams& p, const Sample& s, const Matrix& upstream, std::span<double> grad) const {
    accumulate_gradient(p, kernels, s, Vector(upstream.col(0)), grad);
  }
};

template <GraphOperator G>
struct ModelAdapter<VarParams, G> {
  using Sample = Matrix;
  const G& graph;

  void refresh(const VarParams&) {}
  Sample prepare(const Matrix& window) const { return window; }
  Matrix predict(const VarParams& p, const Sample& s) const { return forward_var(p, s); }
  void gradient(const VarParams& p, const Sample& s, const Matrix& upstream, std::span<double> grad) const {
    accumulate_gradient(p, s, Vector(upstream.col(0)), grad);
  }
};

template <GraphOperator G>
struct ModelAdapter<MultiHorizonParams, G> {
  using Sample = Matrix;
  const G& graph;

  void refresh(const MultiHorizonParams&) {}
  Sample prepare(const Matrix& window) const { return window; }
  Matrix predict(const MultiHorizonParams& p, const Sample& s) const { return forecast_multi(p, graph, s); }
  void gradient(const MultiHorizonParams& p, const Sample& s, const Matrix& upstream, std::span<double> grad) const {
    accumulate_gradient(p, graph, s, upstream, grad);
  }
};

inline std::size_t horizons_of(const CgpParams&) { return 1; }
inline std::size_t horizons_of(const HeatParams&) { return 1; }
inline std::size_t horizons_of(const VarParams&) { return 1; }
inline std::size_t horizons_of(const MultiHorizonParams& p) { return p.horizons; }

// ---------------------------------------------------------------------------
// Deterministic parallel reduction

namespace detail {

/// Runs body(k) for k in [0, count) on up to `threads` threads with a static
/// contiguous partition.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, count));
  if (workers <= 1) {
    for (std::size_t k = 0; k < count; ++k) body(k);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = w * count / workers; k < (w + 1) * count / workers; ++k) body(k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Pairwise tree sum whose shape depends only on the number of terms.
inline void tree_reduce(std::vector<std::vector<double>>& parts) {
  for (std::size_t stride = 1; stride < parts.size(); stride *= 2)
    for (std::size_t k = 0; k + stride < parts.size(); k += 2 * stride)
      for (std::size_t e = 0; e < parts[k].size(); ++e) parts[k][e] += parts[k + stride][e];
}

inline double tree_sum(std::vector<double> values) {
  for (std::size_t stride = 1; stride < values.size(); stride *= 2)
    for (std::size_t k = 0; k + stride < values.size(); k += 2 * stride) values[k] += values[k + stride];
  return values.empty() ? 0.0 : values[0];
}

inline Matrix loss_gradient(const Matrix& pred, const Matrix& target, LossKind kind, double scale) {
  if (kind == LossKind::mse) return (2.0 * scale) * (pred - target);
  return scale * (pred - target).unaryExpr([](double d) { return static_cast<double>((d > 0.0) - (d < 0.0)); });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 1000;
  RegKind regularizer = RegKind::none;
  double reg_weight = 0.01;
  LossKind loss = LossKind::mse;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const {
    detail::require(learning_rate > 0.0 && std::isfinite(learning_rate), "TrainConfig: learning_rate must be positive");
    detail::require(epochs >= 0, "TrainConfig: epochs must be non-negative");
    detail::require(reg_weight >= 0.0 && std::isfinite(reg_weight), "TrainConfig: reg_weight must be non-negative");
  }
};

inline constexpr double kDivergenceThreshold = 1e12;

template <class P>
struct TrainReport {
  P best_params;
  /// Objective (data loss plus weighted regularizer) at the start of each epoch.
  std::vector<double> train_loss;
  /// Validation data loss at the start of each epoch.
  std::vector<double> val_loss;
  int best_epoch = -1;
  double seconds = 0.0;
};

/// Data loss over a dataset, without gradients.
template <class P, GraphOperator G>
double dataset_loss(const P& params, const G& g, const WindowDataset& data, LossKind kind) {
  ModelAdapter<P, G> adapter{g};
  adapter.refresh(params);
  std::vector<double> per(data.size());
  for (std::size_t s = 0; s < data.size(); ++s)
    per[s] = loss(adapter.predict(params, adapter.prepare(data.windows[s])), data.targets[s], kind) *
             static_cast<double>(data.targets[s].size());
  double count = 0.0;
  for (const auto& t : data.targets) count += static_cast<double>(t.size());
  return detail::tree_sum(std::move(per)) / count;
}

/// Full-batch training: one Adam step per epoch on data loss plus
/// reg_weight * regularizer; returns the parameters of the epoch with the
/// lowest validation loss. Epoch e records losses at the parameters before
/// its update.
template <class P, GraphOperator G>
TrainReport<P> train(const P& initial, const G& g, const WindowDataset& train_set, const WindowDataset& val_set,
                     const TrainConfig& config) {
  config.validate();
  detail::require(train_set.size() > 0 && val_set.size() > 0, "train: empty train or validation set");
  const auto start = std::chrono::steady_clock::now();
  TrainReport<P> report;
  report.best_params = initial;
  if (config.epochs == 0) return report;

  ModelAdapter<P, G> adapter{g};
  using Sample = typename ModelAdapter<P, G>::Sample;
  std::vector<Sample> train_samples(train_set.size()), val_samples(val_set.size());
  detail::parallel_for(train_set.size(), config.threads,
                       [&](std::size_t s) { train_samples[s] = adapter.prepare(train_set.windows[s]); });
  detail::parallel_for(val_set.size(), config.threads,
                       [&](std::size_t s) { val_samples[s] = adapter.prepare(val_set.windows[s]); });

  double train_count = 0.0, val_count = 0.0;
  for (const auto& t : train_set.targets) train_count += static_cast<double>(t.size());
  for (const auto& t : val_set.targets) val_count += static_cast<double>(t.size());

  P params = initial;
  std::vector<double> flat = flatten(params);
  AdamState state(flat.size());
  const AdamConfig adam{config.learning_rate};
  double best_val = std::numeric_limits<double>::infinity();
  int last_finite_epoch = -1;
  double last_finite_loss = std::numeric_limits<double>::quiet_NaN();

  std::vector<std::vector<double>> grads(train_set.size());
  std::vector<double> train_terms(train_set.size()), val_terms(val_set.size());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    adapter.refresh(params);
    detail::parallel_for(train_set.size(), config.threads, [&](std::size_t s) {
      const Matrix pred = adapter.predict(params, train_samples[s]);
      const Matrix& target = train_set.targets[s];
      train_terms[s] = loss(pred, target, config.loss) * static_cast<double>(target.size());
      grads[s].assign(flat.size(), 0.0);
      adapter.gradient(params, train_samples[s], detail::loss_gradient(pred, target, config.loss, 1.0 / train_count),
                       grads[s]);
    });
    detail::parallel_for(val_set.size(), config.threads, [&](std::size_t s) {
      val_terms[s] = loss(adapter.predict(params, val_samples[s]), val_set.targets[s], config.loss) *
                     static_cast<double>(val_set.targets[s].size());
    });
    const double reg = config.regularizer == RegKind::none ? 0.0 : regularizer(std::span<const double>(flat), config.regularizer);
    const double objective = detail::tree_sum(train_terms) / train_count + config.reg_weight * reg;
    const double val = detail::tree_sum(val_terms) / val_count;
    if (!std::isfinite(objective) || objective > kDivergenceThreshold || !std::isfinite(val)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " (loss " +
                                io::format_double(objective) + ")",
                            epoch, last_finite_epoch, last_finite_loss);
    }
    last_finite_epoch = epoch;
    last_finite_loss = objective;
    report.train_loss.push_back(objective);
    report.val_loss.push_back(val);
    if (val < best_val) {
      best_val = val;
      report.best_epoch = epoch;
      report.best_params = params;
    }
    detail::tree_reduce(grads);
    std::vector<double>& total = grads[0];
    add_regularizer_gradient(flat, config.regularizer, config.reg_weight, total);
    adam_step(flat, total, state, adam);
    unflatten(params, flat);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Splits the series, windows each slice independently and trains.
template <class P, GraphOperator G>
TrainReport<P> train(const P& initial, const G& g, const TimeSeries& series, const SplitSpec& spec,
                     const TrainConfig& config) {
  const SplitSeries parts = split(series, spec);
  const std::size_t m = initial.ar_order();
  const std::size_t h = horizons_of(initial);
  return train(initial, g, make_windows(parts.train, m, h), make_windows(parts.val, m, h), config);
}

/// Predictions and targets of every sample, concatenated column-wise (N x S*H).
struct StackedForecast {
  Matrix pred;
  Matrix target;
};

template <class P, GraphOperator G>
StackedForecast predict_dataset(const P& params, const G& g, const WindowDataset& data, unsigned threads = 1) {
  detail::require(data.size() > 0, "predict_dataset: empty dataset");
  ModelAdapter<P, G> adapter{g};
  adapter.refresh(params);
  const auto n = data.targets[0].rows();
  const auto h = data.targets[0].cols();
  StackedForecast out{Matrix(n, h * static_cast<Eigen::Index>(data.size())),
                      Matrix(n, h * static_cast<Eigen::Index>(data.size()))};
  detail::parallel_for(data.size(), threads, [&](std::size_t s) {
    const auto col = static_cast<Eigen::Index>(s) * h;
    out.pred.middleCols(col, h) = adapter.predict(params, adapter.prepare(data.windows[s]));
    out.target.middleCols(col, h) = data.targets[s];
  });
  return out;
}

inline std::string curves_to_csv(const std::vector<double>& train_loss, const std::vector<double>& val_loss) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < train_loss.size(); ++e)
    out += std::to_string(e) + "," + io::format_double(train_loss[e]) + "," + io::format_double(val_loss[e]) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Optional per-node standardization with statistics from the training slice.

struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const TimeSeries& train) {
    Standardizer s;
    const auto k = static_cast<double>(train.length());
    s.mean = train.values.rowwise().mean();
    s.scale = ((train.values.colwise() - s.mean).array().square().rowwise().sum() / k).sqrt().matrix();
    for (Eigen::Index i = 0; i < s.scale.size(); ++i)
      if (!(s.scale[i] > 0.0)) s.scale[i] = 1.0;
    return s;
  }

  TimeSeries transform(const TimeSeries& x) const {
    return TimeSeries(((x.values.colwise() - mean).array().colwise() / scale.array()).matrix());
  }
  Matrix inverse(const Matrix& z) const { return ((z.array().colwise() * scale.array()).matrix().colwise() + mean); }
};

}  // namespace cgp
