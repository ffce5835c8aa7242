// Command-line front end: generate | train | eval | stability | bounds | ablate | plot.

#include <CLI11.hpp>

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cgpronet/cgpronet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitBoundViolation = 5;

struct ConfigError : cgp::Error {
  using cgp::Error::Error;
};
struct DataError : cgp::Error {
  using cgp::Error::Error;
};

using Config = std::map<std::string, std::string>;

struct KeySpec {
  const char* name;
  const char* fallback;
  const char* help;
  std::set<std::string> commands;
};

// clang-format off
const std::vector<KeySpec> kKeys = {
  {"seed", "0", "random seed", {"generate", "train", "eval", "stability", "bounds", "ablate"}},
  {"threads", "1", "worker threads", {"train", "eval", "stability", "ablate"}},
  {"N", "100", "number of nodes", {"generate", "stability", "ablate"}},
  {"K", "100", "number of time steps", {"generate", "stability", "ablate"}},
  {"M", "3", "autoregressive order", {"generate", "train", "ablate"}},
  {"M", "10", "autoregressive order", {"stability"}},
  {"graph", "er", "graph model: er | sbm", {"generate"}},
  {"p", "0.03", "edge probability (er)", {"generate", "ablate"}},
  {"communities", "3", "number of communities (sbm)", {"generate"}},
  {"p_in", "0.3", "intra-community edge probability (sbm)", {"generate"}},
  {"p_out", "0.01", "inter-community edge probability (sbm)", {"generate"}},
  {"snr", "0", "series noise SNR in dB (inf for noiseless)", {"generate", "ablate"}},
  {"fixed_eta", "false", "compute the noise scale once instead of per step", {"generate"}},
  {"data", "", "directory holding graph.csv and series.csv", {"train", "eval"}},
  {"graph_file", "", "edge-list CSV (overrides data)", {"train", "eval"}},
  {"series_file", "", "series CSV (overrides data)", {"train", "eval"}},
  {"distances_file", "", "sensor distance matrix CSV; builds a kernel graph", {"train", "eval"}},
  {"kernel_width", "auto", "kernel width for distances_file", {"train", "eval"}},
  {"threshold", "0.1", "kernel threshold for distances_file", {"train", "eval"}},
  {"forward_fill", "false", "fill missing series cells from the previous step", {"train", "eval"}},
  {"variant", "base", "base | mlp_head | adaptive | shared | heat | var", {"train"}},
  {"H", "1", "forecast horizons", {"train"}},
  {"activation", "tanh", "tanh | identity", {"train"}},
  {"lr", "0.01", "learning rate", {"train", "stability", "ablate"}},
  {"epochs", "1000", "training epochs", {"train", "stability", "ablate"}},
  {"regularizer", "none", "none | l1 | l2", {"train"}},
  {"lambda", "0.01", "regularization weight", {"train", "ablate"}},
  {"loss", "mse", "mse | mae", {"train"}},
  {"split", "0.5,0.25,0.25", "train,val,test fractions", {"train", "eval", "stability", "ablate"}},
  {"standardize", "false", "per-node standardization from the training slice", {"train"}},
  {"init_jitter", "0", "uniform jitter added to the initial parameters", {"train"}},
  {"checkpoint", "", "checkpoint JSON to evaluate", {"eval"}},
  {"slice", "test", "test | val | train | all", {"eval"}},
  {"perturb_snr", "inf", "evaluate on a perturbed graph with this SNR in dB", {"eval"}},
  {"p_grid", "0.1,0.3,0.5,0.7,0.9", "edge probabilities", {"stability"}},
  {"snr_grid", "15,0,-15", "graph perturbation SNRs in dB", {"stability"}},
  {"trials", "5", "trials per cell", {"stability"}},
  {"gen_snr", "inf", "series noise SNR in dB for generated data", {"stability"}},
  {"instances", "100", "random instances", {"bounds"}},
  {"min_nodes", "5", "smallest graph", {"bounds"}},
  {"max_nodes", "30", "largest graph", {"bounds"}},
  {"max_order", "5", "largest autoregressive order", {"bounds"}},
  {"min_snr", "-15", "lowest perturbation SNR in dB", {"bounds"}},
  {"max_snr", "15", "highest perturbation SNR in dB", {"bounds"}},
  {"max_time", "1", "largest heat-kernel time", {"bounds"}},
  {"coeff_noise", "0.1", "coefficient perturbation size", {"bounds"}},
  {"realizations", "10", "synthetic realizations", {"ablate"}},
  {"input", "", "CSV to plot (stability, curves or ablation layout)", {"plot"}},
  {"kind", "line", "line | heatmap", {"plot"}},
  {"title", "", "plot title", {"plot"}},
};
// clang-format on

const std::map<std::string, Config> kPresets = {
    {"table1-snr", {{"N", "100"}, {"M", "3"}, {"K", "100"}, {"p", "0.03"}, {"snr", "0"}}},
    {"table1-K", {{"N", "100"}, {"M", "3"}, {"K", "100"}, {"p", "0.03"}, {"snr", "0"}}},
    {"table1-N", {{"N", "100"}, {"M", "3"}, {"K", "100"}, {"p", "0.03"}, {"snr", "-10"}}},
    {"table1-M", {{"N", "1000"}, {"M", "3"}, {"K", "100"}, {"p", "0.03"}, {"snr", "0"}}},
    {"sbm", {{"graph", "sbm"}, {"communities", "3"}, {"p_in", "0.3"}, {"p_out", "0.01"}}},
    {"ablation", {{"N", "30"}, {"M", "3"}, {"K", "100"}, {"p", "0.03"}, {"snr", "0"}}},
    {"stability", {{"N", "100"}, {"M", "10"}, {"K", "100"}}},
};

bool key_applies(const KeySpec& k, const std::string& command) { return k.commands.count(command) > 0; }

Config parse_config_file(const fs::path& path) {
  std::string text;
  try {
    text = cgp::io::read_text(path);
  } catch (const cgp::IoError& e) {
    throw ConfigError(e.what());
  }
  Config out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    const std::string line(cgp::io::trim(std::string_view(text).substr(start, end - start)));
    ++line_no;
    start = end + 1;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    out[std::string(cgp::io::trim(line.substr(0, eq)))] = std::string(cgp::io::trim(line.substr(eq + 1)));
    if (end == text.size()) break;
  }
  return out;
}

std::string config_to_text(const std::string& command, const Config& c) {
  std::string out = "command=" + command + "\n";
  for (const auto& [k, v] : c) out += k + "=" + v + "\n";
  return out;
}

// Typed accessors. Every failure is a configuration error.

const std::string& get(const Config& c, const std::string& key) {
  const auto it = c.find(key);
  if (it == c.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

double get_double(const Config& c, const std::string& key) {
  const auto v = cgp::io::parse_double(get(c, key));
  if (!v || std::isnan(*v)) throw ConfigError("config key '" + key + "' is not a number: '" + get(c, key) + "'");
  return *v;
}

double get_finite(const Config& c, const std::string& key) {
  const double v = get_double(c, key);
  if (!std::isfinite(v)) throw ConfigError("config key '" + key + "' must be finite");
  return v;
}

long long get_int(const Config& c, const std::string& key, long long min_value) {
  const auto v = cgp::io::parse_int(get(c, key));
  if (!v) throw ConfigError("config key '" + key + "' is not an integer: '" + get(c, key) + "'");
  if (*v < min_value) throw ConfigError("config key '" + key + "' must be at least " + std::to_string(min_value));
  return *v;
}

std::size_t get_size(const Config& c, const std::string& key, long long min_value = 1) {
  return static_cast<std::size_t>(get_int(c, key, min_value));
}

bool get_bool(const Config& c, const std::string& key) {
  const std::string& v = get(c, key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
}

std::vector<double> get_list(const Config& c, const std::string& key) {
  std::vector<double> out;
  for (const auto& f : cgp::io::split_fields(get(c, key))) {
    const auto v = cgp::io::parse_double(f);
    if (!v || std::isnan(*v)) throw ConfigError("config key '" + key + "' has a non-numeric entry '" + f + "'");
    out.push_back(*v);
  }
  return out;
}

cgp::SplitSpec get_split(const Config& c) {
  const auto f = get_list(c, "split");
  if (f.size() != 3) throw ConfigError("split must have three fractions");
  cgp::SplitSpec s{f[0], f[1], f[2]};
  try {
    s.validate();
  } catch (const cgp::InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

template <class F>
auto as_config(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const cgp::InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

cgp::TrainConfig get_train_config(const Config& c) {
  cgp::TrainConfig t;
  t.learning_rate = get_finite(c, "lr");
  t.epochs = static_cast<int>(get_int(c, "epochs", 0));
  t.seed = static_cast<std::uint64_t>(get_int(c, "seed", 0));
  t.threads = static_cast<unsigned>(get_size(c, "threads"));
  if (c.count("regularizer")) t.regularizer = as_config([&] { return cgp::parse_reg_kind(get(c, "regularizer")); });
  if (c.count("lambda")) t.reg_weight = get_finite(c, "lambda");
  if (c.count("loss")) t.loss = as_config([&] { return cgp::parse_loss_kind(get(c, "loss")); });
  as_config([&] {
    t.validate();
    return 0;
  });
  return t;
}

json num(double v) { return cgp::double_json(v); }

json metrics_json(const cgp::MetricsReport& m) {
  return {{"mse", num(m.mse)}, {"rmse", num(m.rmse)}, {"rse", num(m.rse)},
          {"mae", num(m.mae)}, {"rmae", num(m.rmae)}, {"mape", num(m.mape)}};
}

void write_json(const fs::path& path, const json& j) { cgp::io::write_atomic(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Data loading

struct Dataset {
  cgp::DirectedGraph graph;
  cgp::TimeSeries series;
};

Dataset load_dataset(const Config& c) {
  const fs::path data_dir = get(c, "data");
  fs::path graph_path = get(c, "graph_file");
  fs::path series_path = get(c, "series_file");
  const fs::path distances_path = get(c, "distances_file");
  if (series_path.empty()) {
    if (data_dir.empty()) throw ConfigError("no input: set --data or --series_file");
    series_path = data_dir / "series.csv";
  }
  if (graph_path.empty() && distances_path.empty()) {
    if (data_dir.empty()) throw ConfigError("no graph: set --data, --graph_file or --distances_file");
    graph_path = data_dir / "graph.csv";
  }
  const bool ffill = get_bool(c, "forward_fill");
  const std::string width_text = get(c, "kernel_width");
  const double threshold = get_finite(c, "threshold");
  const double width = width_text == "auto" ? 0.0 : get_finite(c, "kernel_width");
  try {
    Dataset d;
    d.series = cgp::load_series_csv(series_path, ffill);
    if (!distances_path.empty()) {
      const cgp::Matrix dist = cgp::load_matrix_csv(distances_path);
      d.graph = width_text == "auto" ? cgp::graph_from_distances(dist)
                                     : cgp::graph_from_distances(dist, width, threshold);
    } else {
      d.graph = cgp::load_graph_csv(graph_path, d.series.num_nodes());
    }
    if (d.graph.num_nodes() != d.series.num_nodes())
      throw DataError("graph has " + std::to_string(d.graph.num_nodes()) + " nodes but the series has " +
                      std::to_string(d.series.num_nodes()) + " rows");
    return d;
  } catch (const cgp::InvalidArgument& e) {
    throw DataError(e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands

int cmd_generate(const Config& c, const fs::path& out) {
  cgp::SynthConfig s;
  s.n_nodes = get_size(c, "N");
  s.length = get_size(c, "K");
  s.ar_order = get_size(c, "M");
  const std::string graph = get(c, "graph");
  if (graph != "er" && graph != "sbm") throw ConfigError("graph must be er or sbm");
  s.graph = graph == "er" ? cgp::GraphKind::er : cgp::GraphKind::sbm;
  s.p = get_finite(c, "p");
  s.communities = get_size(c, "communities");
  s.p_in = get_finite(c, "p_in");
  s.p_out = get_finite(c, "p_out");
  s.snr_db = get_double(c, "snr");
  s.fixed_eta = get_bool(c, "fixed_eta");
  s.seed = static_cast<std::uint64_t>(get_int(c, "seed", 0));
  as_config([&] {
    s.validate();
    if (s.graph == cgp::GraphKind::sbm) {
      cgp::detail::require(s.communities <= s.n_nodes, "communities must not exceed N");
      cgp::detail::require(s.p_in >= 0 && s.p_in <= 1 && s.p_out >= 0 && s.p_out <= 1, "p_in and p_out must lie in [0, 1]");
    }
    return 0;
  });
  const cgp::GroundTruth gt = cgp::generate(s);
  cgp::export_ground_truth(out, s, gt);
  std::printf("generated N=%zu K=%zu M=%zu edges=%zu -> %s\n", s.n_nodes, s.length, s.ar_order, gt.graph.num_edges(),
              out.string().c_str());
  return kExitOk;
}

cgp::AnyModel initial_model(const Config& c, std::size_t n_nodes) {
  const cgp::ModelKind kind = as_config([&] { return cgp::parse_model_kind(get(c, "variant")); });
  const std::size_t m = get_size(c, "M");
  const std::size_t h = get_size(c, "H");
  const cgp::Activation act = as_config([&] { return cgp::parse_activation(get(c, "activation")); });
  const double jitter = get_finite(c, "init_jitter");
  const auto seed = static_cast<std::uint64_t>(get_int(c, "seed", 0));
  if (h != 1 && (kind == cgp::ModelKind::base || kind == cgp::ModelKind::heat || kind == cgp::ModelKind::var))
    throw ConfigError("variant " + get(c, "variant") + " predicts one step; set H=1 or use a multi-horizon variant");
  switch (kind) {
    case cgp::ModelKind::base: return cgp::CgpParams::initial(m, act, jitter, seed);
    case cgp::ModelKind::heat: return cgp::HeatParams::initial(m, act);
    case cgp::ModelKind::var: return as_config([&] { return cgp::VarParams::initial(m, n_nodes); });
    default: {
      auto p = cgp::MultiHorizonParams::initial(cgp::to_multi_horizon(kind), m, h, act);
      if (jitter > 0.0) {
        p.base = cgp::CgpParams::initial(m, act, jitter, seed);
        if (p.variant == cgp::MultiHorizonVariant::adaptive) p.per_horizon_thetas.assign(h, p.base.thetas);
      }
      return p;
    }
  }
}

struct SliceSets {
  cgp::WindowDataset train, val, test;
};

SliceSets make_sets(const cgp::SplitSeries& parts, std::size_t m, std::size_t h) {
  try {
    return {cgp::make_windows(parts.train, m, h), cgp::make_windows(parts.val, m, h), cgp::make_windows(parts.test, m, h)};
  } catch (const cgp::InvalidArgument& e) {
    throw DataError(std::string(e.what()) + " (a split slice is too short for M + H)");
  }
}

template <cgp::GraphOperator G>
cgp::StackedForecast predict_any(const cgp::AnyModel& model, const G& g, const cgp::WindowDataset& d, unsigned threads) {
  return std::visit([&](const auto& p) { return cgp::predict_dataset(p, g, d, threads); }, model);
}

json evaluation_json(const cgp::StackedForecast& f, const cgp::WindowDataset& d,
                     const std::optional<cgp::Standardizer>& st) {
  cgp::Matrix pred = f.pred, target = f.target;
  cgp::WindowDataset raw = d;
  if (st) {
    pred = st->inverse(pred);
    target = st->inverse(target);
    for (auto& w : raw.windows) w = st->inverse(w);
    for (auto& t : raw.targets) t = st->inverse(t);
  }
  const auto avg = cgp::baseline_dataset(raw, cgp::BaselineKind::avg);
  const auto last = cgp::baseline_dataset(raw, cgp::BaselineKind::last);
  return {{"model", metrics_json(cgp::metrics(pred, target))},
          {"avg", metrics_json(cgp::metrics(avg.pred, avg.target))},
          {"last", metrics_json(cgp::metrics(last.pred, last.target))},
          {"samples", d.size()}};
}

int cmd_train(const Config& c, const fs::path& out) {
  const cgp::TrainConfig tc = get_train_config(c);
  const cgp::SplitSpec spec = get_split(c);
  const bool standardize = get_bool(c, "standardize");
  get_size(c, "M");
  get_size(c, "H");
  Dataset d = load_dataset(c);
  cgp::AnyModel init = initial_model(c, d.series.num_nodes());
  const std::size_t m = cgp::model_ar_order(init);
  const std::size_t h = cgp::model_horizons(init);
  cgp::SplitSeries parts;
  try {
    parts = cgp::split(d.series, spec);
  } catch (const cgp::InvalidArgument& e) {
    throw DataError(e.what());
  }
  std::optional<cgp::Standardizer> st;
  if (standardize) {
    st = cgp::Standardizer::fit(parts.train);
    parts = {st->transform(parts.train), st->transform(parts.val), st->transform(parts.test)};
  }
  const SliceSets sets = make_sets(parts, m, h);

  cgp::AnyModel best;
  std::vector<double> train_curve, val_curve;
  int best_epoch = -1;
  double seconds = 0.0;
  std::visit(
      [&](const auto& p) {
        const auto report = cgp::train(p, d.graph, sets.train, sets.val, tc);
        best = report.best_params;
        train_curve = report.train_loss;
        val_curve = report.val_loss;
        best_epoch = report.best_epoch;
        seconds = report.seconds;
      },
      init);

  cgp::save_checkpoint(out / "checkpoint.json", best);
  cgp::io::write_atomic(out / "curves.csv", cgp::curves_to_csv(train_curve, val_curve));
  json metrics = evaluation_json(predict_any(best, d.graph, sets.test, tc.threads), sets.test, st);
  metrics["split"] = "test";
  metrics["best_epoch"] = best_epoch;
  write_json(out / "metrics.json", metrics);
  json report = {{"best_epoch", best_epoch},
                 {"epochs", tc.epochs},
                 {"parameter_count", cgp::model_parameter_count(best)},
                 {"train_loss", json::array()},
                 {"val_loss", json::array()},
                 {"best_params", cgp::checkpoint_to_json(best)}};
  for (double v : train_curve) report["train_loss"].push_back(num(v));
  for (double v : val_curve) report["val_loss"].push_back(num(v));
  if (st) {
    report["standardizer"] = {{"mean", std::vector<double>(st->mean.data(), st->mean.data() + st->mean.size())},
                              {"scale", std::vector<double>(st->scale.data(), st->scale.data() + st->scale.size())}};
  }
  write_json(out / "report.json", report);
  write_json(out / "timing.json", {{"seconds", seconds}});
  const auto& mm = metrics["model"];
  std::printf("trained %s (%zu parameters): best epoch %d, test rmse %s\n",
              std::string(cgp::to_string(cgp::model_kind(best))).c_str(), cgp::model_parameter_count(best), best_epoch,
              mm["rmse"].dump().c_str());
  return kExitOk;
}

int cmd_eval(const Config& c, const fs::path& out) {
  const fs::path ckpt = get(c, "checkpoint");
  if (ckpt.empty()) throw ConfigError("eval needs --checkpoint");
  const cgp::SplitSpec spec = get_split(c);
  const std::string slice = get(c, "slice");
  if (slice != "test" && slice != "val" && slice != "train" && slice != "all")
    throw ConfigError("slice must be test, val, train or all");
  const double psnr = get_double(c, "perturb_snr");
  const auto threads = static_cast<unsigned>(get_size(c, "threads"));
  const auto seed = static_cast<std::uint64_t>(get_int(c, "seed", 0));
  cgp::AnyModel model;
  try {
    model = cgp::load_checkpoint(ckpt);
  } catch (const cgp::InvalidArgument& e) {
    throw DataError(e.what());
  }
  Dataset d = load_dataset(c);
  if (const auto* v = std::get_if<cgp::VarParams>(&model); v && v->num_nodes() != d.series.num_nodes())
    throw DataError("checkpoint VAR model has " + std::to_string(v->num_nodes()) + " nodes but the data has " +
                    std::to_string(d.series.num_nodes()));
  const std::size_t m = cgp::model_ar_order(model);
  const std::size_t h = cgp::model_horizons(model);
  cgp::TimeSeries part = d.series;
  if (slice != "all") {
    try {
      const auto parts = cgp::split(d.series, spec);
      part = slice == "test" ? parts.test : (slice == "val" ? parts.val : parts.train);
    } catch (const cgp::InvalidArgument& e) {
      throw DataError(e.what());
    }
  }
  cgp::WindowDataset set;
  try {
    set = cgp::make_windows(part, m, h);
  } catch (const cgp::InvalidArgument& e) {
    throw DataError(e.what());
  }
  json metrics;
  if (std::isinf(psnr) && psnr > 0) {
    metrics = evaluation_json(predict_any(model, d.graph, set, threads), set, std::nullopt);
  } else {
    const cgp::PerturbedGraph pg = cgp::perturb(d.graph, psnr, seed);
    metrics = evaluation_json(predict_any(model, pg.perturbed_operator(), set, threads), set, std::nullopt);
  }
  metrics["split"] = slice;
  metrics["perturb_snr"] = num(psnr);
  write_json(out / "metrics.json", metrics);
  std::printf("eval %s: rmse %s (avg %s, last %s)\n", slice.c_str(), metrics["model"]["rmse"].dump().c_str(),
              metrics["avg"]["rmse"].dump().c_str(), metrics["last"]["rmse"].dump().c_str());
  return kExitOk;
}

int cmd_stability(const Config& c, const fs::path& out) {
  cgp::StabilityConfig s;
  s.p_grid = get_list(c, "p_grid");
  s.snr_grid = get_list(c, "snr_grid");
  s.trials = get_size(c, "trials");
  s.n_nodes = get_size(c, "N");
  s.length = get_size(c, "K");
  s.ar_order = get_size(c, "M");
  s.generation_snr_db = get_double(c, "gen_snr");
  s.split = get_split(c);
  s.train = get_train_config(c);
  s.seed = static_cast<std::uint64_t>(get_int(c, "seed", 0));
  s.threads = static_cast<unsigned>(get_size(c, "threads"));
  if (s.p_grid.empty() || s.snr_grid.empty()) throw ConfigError("p_grid and snr_grid must be non-empty");
  for (double p : s.p_grid)
    if (p < 0.0 || p > 1.0) throw ConfigError("p_grid entries must lie in [0, 1]");
  const auto cells = cgp::run_stability_experiment(s);
  cgp::io::write_atomic(out / "stability.csv", cgp::stability_to_csv(cells));
  std::string lines;
  for (const auto& cell : cells) {
    json j = {{"p", cell.p}, {"snr_db", num(cell.snr_db)}, {"mean_rmse", num(cell.mean)}, {"std_rmse", num(cell.std)},
              {"trials", json::array()}};
    for (double v : cell.trials) j["trials"].push_back(num(v));
    lines += j.dump() + "\n";
  }
  cgp::io::write_atomic(out / "stability_cells.jsonl", lines);
  std::printf("stability: %zu cells -> %s\n", cells.size(), (out / "stability.csv").string().c_str());
  return kExitOk;
}

int cmd_bounds(const Config& c, const fs::path& out) {
  cgp::BoundVerificationConfig b;
  b.instances = get_size(c, "instances");
  b.min_nodes = get_size(c, "min_nodes", 2);
  b.max_nodes = get_size(c, "max_nodes", 2);
  b.max_order = get_size(c, "max_order");
  b.min_snr_db = get_finite(c, "min_snr");
  b.max_snr_db = get_finite(c, "max_snr");
  b.max_time = get_finite(c, "max_time");
  b.coeff_noise = get_finite(c, "coeff_noise");
  b.seed = static_cast<std::uint64_t>(get_int(c, "seed", 0));
  if (b.min_nodes > b.max_nodes) throw ConfigError("min_nodes must not exceed max_nodes");
  if (b.min_snr_db > b.max_snr_db) throw ConfigError("min_snr must not exceed max_snr");
  if (b.max_time < 0.0) throw ConfigError("max_time must be non-negative");
  const auto report = cgp::verify_bounds(b);
  std::string text = "bound,checks,violations,max_ratio\n";
  json j = json::array();
  for (const auto& ch : report.checks) {
    text += ch.name + "," + std::to_string(ch.checks) + "," + std::to_string(ch.violations) + "," +
            cgp::io::format_double(ch.max_ratio) + "\n";
    j.push_back({{"bound", ch.name}, {"checks", ch.checks}, {"violations", ch.violations}, {"max_ratio", num(ch.max_ratio)}});
  }
  text += "violations: " + std::to_string(report.total_violations()) + "\n";
  cgp::io::write_atomic(out / "bounds_report.txt", text);
  write_json(out / "bounds.json", {{"checks", j}, {"violations", report.total_violations()}});
  std::fputs(text.c_str(), stdout);
  return report.total_violations() == 0 ? kExitOk : kExitBoundViolation;
}

int cmd_ablate(const Config& c, const fs::path& out) {
  cgp::AblationConfig a;
  a.realizations = get_size(c, "realizations");
  a.n_nodes = get_size(c, "N");
  a.length = get_size(c, "K");
  a.ar_order = get_size(c, "M");
  a.p = get_finite(c, "p");
  a.snr_db = get_double(c, "snr");
  a.reg_weight = get_finite(c, "lambda");
  a.split = get_split(c);
  a.train = get_train_config(c);
  a.seed = static_cast<std::uint64_t>(get_int(c, "seed", 0));
  a.threads = static_cast<unsigned>(get_size(c, "threads"));
  if (a.p < 0.0 || a.p > 1.0) throw ConfigError("p must lie in [0, 1]");
  const auto rows = cgp::run_ablation(a);
  cgp::io::write_atomic(out / "ablation.csv", cgp::ablation_to_csv(rows));
  std::string lines;
  for (const auto& r : rows) {
    json j = {{"variant", r.name}, {"parameters", r.parameters}, {"mse", json::array()}, {"rmse", json::array()}};
    for (double v : r.mse) j["mse"].push_back(num(v));
    for (double v : r.rmse) j["rmse"].push_back(num(v));
    lines += j.dump() + "\n";
  }
  cgp::io::write_atomic(out / "ablation.jsonl", lines);
  for (const auto& r : rows) std::printf("%-16s mse %.6g  rmse %.6g\n", r.name.c_str(), r.mean_mse, r.mean_rmse);
  return kExitOk;
}

/// Builds a plot table from one of the CSV layouts this tool writes.
cgp::plot::Table plot_table(const fs::path& input, const std::string& title) {
  std::vector<cgp::io::CsvRow> rows;
  try {
    rows = cgp::io::read_csv(input);
  } catch (const cgp::IoError& e) {
    throw DataError(e.what());
  }
  if (rows.size() < 2) throw DataError("plot input " + input.string() + " has no data rows");
  const auto& header = rows.front().fields;
  auto value = [&](const cgp::io::CsvRow& r, std::size_t col) {
    if (col >= r.fields.size()) throw cgp::ParseError("plot input: missing column", r.line, col + 1);
    const auto v = cgp::io::parse_double(r.fields[col]);
    if (!v) throw cgp::ParseError("plot input: non-numeric cell", r.line, col + 1);
    return *v;
  };
  cgp::plot::Table t;
  t.title = title;
  if (!header.empty() && header[0] == "p") {
    t.x_label = "edge probability p";
    t.y_label = "rMSE";
    if (t.title.empty()) t.title = "stability";
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const std::string name = "SNR " + rows[r].fields.at(1) + " dB";
      auto it = std::find_if(t.series.begin(), t.series.end(), [&](const auto& s) { return s.name == name; });
      if (it == t.series.end()) {
        t.series.push_back({name, {}, {}});
        it = t.series.end() - 1;
      }
      it->x.push_back(value(rows[r], 0));
      it->y.push_back(value(rows[r], 2));
    }
  } else if (!header.empty() && header[0] == "epoch") {
    t.x_label = "epoch";
    t.y_label = "loss";
    if (t.title.empty()) t.title = "loss curves";
    t.series = {{"train", {}, {}}, {"val", {}, {}}};
    for (std::size_t r = 1; r < rows.size(); ++r) {
      t.series[0].x.push_back(value(rows[r], 0));
      t.series[0].y.push_back(value(rows[r], 1));
      t.series[1].x.push_back(value(rows[r], 0));
      t.series[1].y.push_back(value(rows[r], 2));
    }
  } else if (!header.empty() && header[0] == "variant") {
    t.x_label = "variant index";
    t.y_label = "mean MSE";
    if (t.title.empty()) t.title = "ablation";
    for (std::size_t r = 1; r < rows.size(); ++r)
      t.series.push_back({rows[r].fields.at(0), {static_cast<double>(r - 1)}, {value(rows[r], 2)}});
  } else {
    throw DataError("plot input " + input.string() + ": unrecognized header");
  }
  return t;
}

int cmd_plot(const Config& c, const fs::path& out) {
  const fs::path input = get(c, "input");
  if (input.empty()) throw ConfigError("plot needs --input");
  const std::string kind = get(c, "kind");
  if (kind != "line" && kind != "heatmap") throw ConfigError("kind must be line or heatmap");
  cgp::plot::Table t;
  try {
    t = plot_table(input, get(c, "title"));
  } catch (const cgp::ParseError& e) {
    throw DataError(e.what());
  }
  const auto o = cgp::plot::emit_plotdata(t, kind == "line" ? cgp::plot::Kind::line : cgp::plot::Kind::heatmap);
  cgp::io::write_atomic(out / "plot.dat", o.columns);
  cgp::io::write_atomic(out / "plot.svg", o.svg);
  std::printf("plot: %zu series -> %s\n", t.series.size(), (out / "plot.svg").string().c_str());
  return kExitOk;
}

using Handler = int (*)(const Config&, const fs::path&);

struct Command {
  std::string name;
  std::string help;
  Handler handler;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Command> commands = {
      {"generate", "generate a synthetic graph process", cmd_generate},
      {"train", "train a model and write a checkpoint", cmd_train},
      {"eval", "evaluate a checkpoint", cmd_eval},
      {"stability", "train on clean graphs, evaluate on perturbed ones", cmd_stability},
      {"bounds", "check the stability bounds on random instances", cmd_bounds},
      {"ablate", "compare non-linearity and regularization choices", cmd_ablate},
      {"plot", "render a result CSV as gnuplot columns and SVG", cmd_plot},
  };

  CLI::App app{"Graph-process forecasting toolkit"};
  app.require_subcommand(1);
  struct CommandOptions {
    CLI::App* app = nullptr;
    std::string out = ".";
    std::string config_file;
    std::string preset;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
  };
  std::vector<CommandOptions> opts(commands.size());
  for (std::size_t i = 0; i < commands.size(); ++i) {
    auto& o = opts[i];
    o.app = app.add_subcommand(commands[i].name, commands[i].help);
    o.app->add_option("--out", o.out, "output directory");
    o.app->add_option("--config", o.config_file, "key=value config file");
    o.app->add_option("--preset", o.preset, "named settings: table1-snr, table1-K, table1-N, table1-M, sbm, ablation, stability");
    for (const auto& k : kKeys)
      if (key_applies(k, commands[i].name))
        o.options[k.name] = o.app->add_option(std::string("--") + k.name, o.values[k.name], k.help);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!opts[i].app->parsed()) continue;
    const auto& o = opts[i];
    const std::string& name = commands[i].name;
    Config cfg;
    try {
      for (const auto& k : kKeys)
        if (key_applies(k, name)) cfg[k.name] = k.fallback;
      auto apply = [&](const Config& src, const std::string& origin) {
        for (const auto& [k, v] : src) {
          if (k == "command") {
            if (v != name) throw ConfigError(origin + " was written for command '" + v + "'");
            continue;
          }
          if (!cfg.count(k)) {
            if (origin.rfind("preset", 0) == 0) continue;
            throw ConfigError(origin + ": unknown key '" + k + "' for command " + name);
          }
          cfg[k] = v;
        }
      };
      if (!o.preset.empty()) {
        const auto it = kPresets.find(o.preset);
        if (it == kPresets.end()) throw ConfigError("unknown preset '" + o.preset + "'");
        apply(it->second, "preset " + o.preset);
      }
      if (!o.config_file.empty()) apply(parse_config_file(o.config_file), o.config_file);
      for (const auto& [k, opt] : o.options)
        if (opt->count() > 0) cfg[k] = o.values.at(k);
    } catch (const cgp::Error& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return kExitConfig;
    }

    const fs::path out = o.out;
    try {
      cgp::io::write_atomic(out / "config.txt", config_to_text(name, cfg));
      return commands[i].handler(cfg, out);
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return kExitConfig;
    } catch (const cgp::ResourceLimit& e) {
      std::fprintf(stderr, "resource limit: %s\n", e.what());
      return kExitConfig;
    } catch (const cgp::DivergenceError& e) {
      std::fprintf(stderr, "divergence: %s (last finite epoch %d)\n", e.what(), e.last_finite_epoch());
      return kExitDivergence;
    } catch (const DataError& e) {
      std::fprintf(stderr, "data error: %s\n", e.what());
      return kExitData;
    } catch (const cgp::ParseError& e) {
      std::fprintf(stderr, "data error: %s\n", e.what());
      return kExitData;
    } catch (const cgp::IoError& e) {
      std::fprintf(stderr, "i/o error: %s\n", e.what());
      return kExitData;
    } catch (const cgp::InvalidArgument& e) {
      std::fprintf(stderr, "data error: %s\n", e.what());
      return kExitData;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 1;
    }
  }
  return kExitConfig;
}
