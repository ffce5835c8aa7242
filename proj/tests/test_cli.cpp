#include "test_util.hpp"

#include <sys/wait.h>

#include <fstream>
#include <map>
#include <sstream>

using namespace cgp;
using namespace cgp::test;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "cgp_cli_test.log";
  const std::string cmd = std::string(CGP_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = io::read_text(log);
  return r;
}

std::map<std::string, std::string> read_config(const fs::path& path) {
  std::map<std::string, std::string> out;
  std::istringstream in(io::read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

nlohmann::json read_json(const fs::path& path) { return nlohmann::json::parse(io::read_text(path)); }

fs::path small_dataset(const std::string& name, const std::string& extra = "") {
  const auto dir = temp_dir(name);
  const auto r = run("generate --out " + dir.string() + " --N 12 --K 60 --M 3 --p 0.2 --seed 3 " + extra);
  EXPECT_EQ(r.code, 0) << r.output;
  return dir;
}

void expect_same_files(const fs::path& a, const fs::path& b, bool include_config = true) {
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    if (name == "timing.json" || (!include_config && name == "config.txt")) continue;
    ASSERT_TRUE(fs::exists(b / name)) << name;
    EXPECT_EQ(io::read_text(entry.path()), io::read_text(b / name)) << name;
    ++compared;
  }
  EXPECT_GT(compared, 0u);
}

}  // namespace

TEST(CliGenerate, MinimalRunRoundTrips) {
  const auto dir = temp_dir("cli_gen_min");
  const auto r = run("generate --out " + dir.string() + " --N 3 --K 5 --M 2 --p 0.5 --seed 1");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto gt = generate({.n_nodes = 3, .length = 5, .ar_order = 2, .p = 0.5, .seed = 1});
  EXPECT_EQ(load_graph_csv(dir / "graph.csv", 3), gt.graph);
  EXPECT_EQ(load_series_csv(dir / "series.csv").values, gt.series.values);
  EXPECT_EQ(read_json(dir / "manifest.json")["config"]["N"], 3);
  EXPECT_EQ(read_config(dir / "config.txt")["command"], "generate");
}

TEST(CliGenerate, Presets) {
  const auto dir = temp_dir("cli_preset");
  ASSERT_EQ(run("generate --preset table1-snr --out " + dir.string()).code, 0);
  auto cfg = read_config(dir / "config.txt");
  EXPECT_EQ(cfg["N"], "100");
  EXPECT_EQ(cfg["M"], "3");
  EXPECT_EQ(cfg["K"], "100");
  EXPECT_EQ(cfg["p"], "0.03");
  const auto big = temp_dir("cli_preset_m");
  ASSERT_EQ(run("generate --preset table1-M --out " + big.string()).code, 0);
  cfg = read_config(big / "config.txt");
  EXPECT_EQ(cfg["N"], "1000");
  EXPECT_EQ(cfg["K"], "100");
  EXPECT_EQ(run("generate --preset nope --out " + dir.string()).code, 2);
}

TEST(CliTrain, DefaultsAndOutputs) {
  const auto data = small_dataset("cli_train_data");
  const auto out = temp_dir("cli_train");
  const auto r = run("train --data " + data.string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  auto cfg = read_config(out / "config.txt");
  EXPECT_EQ(cfg["lr"], "0.01");
  EXPECT_EQ(cfg["epochs"], "1000");
  EXPECT_EQ(cfg["M"], "3");
  for (const char* f : {"checkpoint.json", "curves.csv", "metrics.json", "report.json", "timing.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto curves = io::read_csv(out / "curves.csv");
  EXPECT_EQ(curves.size(), 1001u);
  EXPECT_EQ(curves[0].fields, (std::vector<std::string>{"epoch", "train_loss", "val_loss"}));
  const auto m = read_json(out / "metrics.json");
  EXPECT_TRUE(m.contains("model"));
  EXPECT_TRUE(m.contains("avg"));
  EXPECT_TRUE(m.contains("last"));
}

TEST(CliTrain, AdaptiveSixHorizonsHas57Parameters) {
  const auto data = small_dataset("cli_adaptive_data");
  const auto out = temp_dir("cli_adaptive");
  ASSERT_EQ(run("train --data " + data.string() + " --out " + out.string() + " --variant adaptive --H 6 --epochs 5").code, 0);
  EXPECT_EQ(read_json(out / "checkpoint.json")["parameter_count"], 57);
  EXPECT_EQ(model_parameter_count(load_checkpoint(out / "checkpoint.json")), 57u);
}

TEST(CliTrain, ZeroEpochsWritesInitialization) {
  const auto data = small_dataset("cli_zero_data");
  const auto out = temp_dir("cli_zero");
  ASSERT_EQ(run("train --data " + data.string() + " --out " + out.string() + " --epochs 0").code, 0);
  const auto ck = load_checkpoint(out / "checkpoint.json");
  ASSERT_TRUE(std::holds_alternative<CgpParams>(ck));
  EXPECT_EQ(flatten(std::get<CgpParams>(ck)), flatten(CgpParams::initial(3)));
}

TEST(CliTrain, RerunAndArchivedConfigAreByteIdentical) {
  const auto data = small_dataset("cli_det_data");
  const auto a = temp_dir("cli_det_a"), b = temp_dir("cli_det_b"), c = temp_dir("cli_det_c");
  const std::string args = "train --data " + data.string() + " --epochs 50 --regularizer l1 --seed 4 --out ";
  ASSERT_EQ(run(args + a.string()).code, 0);
  ASSERT_EQ(run(args + b.string() + " --threads 2").code, 0);
  expect_same_files(a, b, false);
  ASSERT_EQ(run("train --config " + (a / "config.txt").string() + " --out " + c.string()).code, 0);
  expect_same_files(a, c);
}

TEST(CliTrain, ExitCodes) {
  const auto data = small_dataset("cli_exit_data");
  const auto out = temp_dir("cli_exit");
  EXPECT_EQ(run("train --data " + data.string() + " --out " + out.string() + " --lr -1").code, 2);
  EXPECT_EQ(run("train --data " + data.string() + " --out " + out.string() + " --variant lstm").code, 2);
  EXPECT_EQ(run("train --out " + out.string()).code, 2);
  io::write_atomic(out / "bad.cfg", "bogus_key=1\n");
  EXPECT_EQ(run("train --config " + (out / "bad.cfg").string() + " --data " + data.string() + " --out " + out.string()).code, 2);

  fs::copy_file(data / "graph.csv", out / "graph.csv", fs::copy_options::overwrite_existing);
  io::write_atomic(out / "series.csv", "node,0,1,2,3,4,5,6,7\n0,1,2,3,x,5,6,7,8\n");
  const auto bad = run("train --graph_file " + (out / "graph.csv").string() + " --series_file " +
                       (out / "series.csv").string() + " --out " + out.string());
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.output.find("row 2"), std::string::npos) << bad.output;
  EXPECT_NE(bad.output.find("column 5"), std::string::npos) << bad.output;

  const auto big = temp_dir("cli_diverge_data");
  Rng rng(3);
  const auto g = gen_erdos_renyi(6, 0.4, 2);
  save_graph_csv(big / "graph.csv", g);
  save_series_csv(big / "series.csv", TimeSeries(random_matrix(rng, 6, 60, 1e3)));
  const auto div = run("train --data " + big.string() + " --out " + out.string() +
                       " --activation identity --lr 50 --epochs 500");
  EXPECT_EQ(div.code, 4) << div.output;
}

TEST(CliEval, NoiselessTrainingDataAndMismatch) {
  const auto data = small_dataset("cli_eval_data", "--snr inf");
  const auto out = temp_dir("cli_eval_train");
  ASSERT_EQ(run("train --data " + data.string() + " --out " + out.string() + " --epochs 300").code, 0);
  const auto ev = temp_dir("cli_eval");
  ASSERT_EQ(run("eval --data " + data.string() + " --checkpoint " + (out / "checkpoint.json").string() +
                " --slice train --out " + ev.string()).code, 0);
  const auto m = read_json(ev / "metrics.json");
  EXPECT_LE(m["model"]["mse"].get<double>(), 1e-3);

  const auto other = temp_dir("cli_eval_other");
  ASSERT_EQ(run("generate --out " + other.string() + " --N 7 --K 40 --seed 2").code, 0);
  const auto var_out = temp_dir("cli_eval_var");
  ASSERT_EQ(run("train --data " + data.string() + " --out " + var_out.string() + " --variant var --epochs 2").code, 0);
  const auto mismatch = run("eval --data " + other.string() + " --checkpoint " + (var_out / "checkpoint.json").string() +
                            " --out " + ev.string());
  EXPECT_EQ(mismatch.code, 3);
  EXPECT_NE(mismatch.output.find("nodes"), std::string::npos) << mismatch.output;
}

TEST(CliStability, MinimalGrid) {
  const auto out = temp_dir("cli_stab");
  const auto r = run("stability --out " + out.string() +
                     " --trials 1 --p_grid 0.1 --snr_grid 15 --N 15 --K 60 --M 3 --epochs 20");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = io::read_csv(out / "stability.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].fields, (std::vector<std::string>{"p", "snr_db", "mean_rmse", "std_rmse", "trials"}));
  EXPECT_EQ(rows[1].fields[0], "0.10000000000000001");
  EXPECT_EQ(rows[1].fields[4], "1");
}

TEST(CliBounds, DefaultGridHasNoViolations) {
  const auto out = temp_dir("cli_bounds");
  const auto r = run("bounds --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(io::read_text(out / "bounds_report.txt").find("violations: 0"), std::string::npos);
}

TEST(CliAblate, SmallRunAndPlot) {
  const auto out = temp_dir("cli_ablate");
  ASSERT_EQ(run("ablate --out " + out.string() + " --realizations 2 --N 10 --K 60 --epochs 20").code, 0);
  const auto rows = io::read_csv(out / "ablation.csv");
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[1].fields[0], "var");
  EXPECT_EQ(rows[1].fields[1], "300");
  const auto plot_dir = temp_dir("cli_ablate_plot");
  ASSERT_EQ(run("plot --input " + (out / "ablation.csv").string() + " --out " + plot_dir.string()).code, 0);
  EXPECT_TRUE(fs::exists(plot_dir / "plot.svg"));
}

TEST(CliPlot, StabilityAndCurveLayouts) {
  const auto dir = temp_dir("cli_plot");
  io::write_atomic(dir / "stab.csv",
                   "p,snr_db,mean_rmse,std_rmse,trials\n0.1,15,0.1,0.01,5\n0.1,0,0.5,0.01,5\n"
                   "0.3,15,0.2,0.01,5\n0.3,0,0.6,0.01,5\n");
  ASSERT_EQ(run("plot --input " + (dir / "stab.csv").string() + " --out " + (dir / "s").string()).code, 0);
  const auto stab = io::read_text(dir / "s" / "plot.dat");
  EXPECT_NE(stab.find("# SNR 15 dB"), std::string::npos) << stab;
  EXPECT_NE(stab.find("# SNR 0 dB"), std::string::npos) << stab;
  io::write_atomic(dir / "curves.csv", curves_to_csv({1.0, 0.5, 0.25}, {1.5, 0.7, 0.6}));
  ASSERT_EQ(run("plot --input " + (dir / "curves.csv").string() + " --out " + (dir / "c").string()).code, 0);
  const auto curves = io::read_text(dir / "c" / "plot.dat");
  EXPECT_NE(curves.find("# train"), std::string::npos);
  EXPECT_NE(curves.find("# val"), std::string::npos);
  io::write_atomic(dir / "empty.csv", "p,snr_db,mean_rmse,std_rmse,trials\n");
  EXPECT_NE(run("plot --input " + (dir / "empty.csv").string() + " --out " + (dir / "e").string()).code, 0);
}
