#include "test_util.hpp"

#include <fstream>
#include <limits>

using namespace cgp;
using namespace cgp::test;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector signal_at(const GroundTruth& gt, Eigen::Index k) {
  Vector s = Vector::Zero(gt.series.values.rows());
  for (std::size_t i = 1; i <= gt.coeffs.size(); ++i)
    s += apply_poly(gt.graph, gt.coeffs[i - 1], Vector(gt.series.values.col(k - static_cast<Eigen::Index>(i))))
             .array()
             .tanh()
             .matrix();
  return s;
}

}  // namespace

TEST(GenCoeffs, FirstLagFixed) {
  const auto c = gen_coeffs(1, 5);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].coeffs, (std::vector<double>{0.0, 1.0}));
  for (std::uint64_t seed = 0; seed < 10; ++seed) EXPECT_EQ(gen_coeffs(4, seed)[0].coeffs, c[0].coeffs);
}

TEST(GenCoeffs, ScaledMagnitudesInRange) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto c = gen_coeffs(5, seed);
    for (std::size_t i = 2; i <= 5; ++i) {
      ASSERT_EQ(c[i - 1].order(), i);
      for (std::size_t j = 0; j <= i; ++j) {
        const double unscaled = std::abs(c[i - 1][j]) * std::ldexp(1.0, static_cast<int>(i + j + 1));
        EXPECT_GE(unscaled, 0.45);
        EXPECT_LE(unscaled, 1.0);
      }
    }
  }
}

TEST(GenCoeffs, MeanMagnitudeAndSignBalance) {
  const int runs = 4000;
  double mean = 0.0;
  int positive = 0;
  for (int s = 0; s < runs; ++s) {
    const auto c = gen_coeffs(2, static_cast<std::uint64_t>(s));
    mean += std::abs(c[1][1]) * 16.0;
    positive += c[1][0] > 0;
  }
  mean /= runs;
  // U(0.45, 1) has mean 0.725 and standard deviation 0.55 / sqrt(12).
  EXPECT_NEAR(mean, 0.725, 4 * 0.1588 / std::sqrt(runs));
  EXPECT_NEAR(positive / static_cast<double>(runs), 0.5, 4 * 0.5 / std::sqrt(runs));
}

TEST(GenSeries, NoiselessLimitIsExactRecursion) {
  const auto gt = generate({.n_nodes = 20, .length = 40, .ar_order = 3, .p = 0.2, .snr_db = kInf, .seed = 2});
  for (Eigen::Index k = 3; k < 40; ++k) {
    EXPECT_EQ(gt.eta[static_cast<std::size_t>(k)], 0.0);
    EXPECT_EQ(Vector(gt.series.values.col(k)), signal_at(gt, k));
  }
}

TEST(GenSeries, PerStepNoiseRatio) {
  for (double snr : {0.0, 20.0, -10.0}) {
    const auto gt = generate({.n_nodes = 25, .length = 30, .ar_order = 3, .p = 0.2, .snr_db = snr, .seed = 4});
    for (Eigen::Index k = 3; k < 30; ++k) {
      const Vector s = signal_at(gt, k);
      const double noise = (gt.eta[static_cast<std::size_t>(k)] * gt.noise.col(k)).norm();
      EXPECT_NEAR(noise / s.norm(), std::pow(10.0, -snr / 20.0), 1e-12 * std::pow(10.0, -snr / 20.0));
    }
  }
}

TEST(GenSeries, FixedEtaKeepsFirstScale) {
  const auto gt = generate({.n_nodes = 20, .length = 30, .ar_order = 2, .p = 0.2, .snr_db = 5, .fixed_eta = true, .seed = 6});
  for (std::size_t k = 2; k < 30; ++k) EXPECT_EQ(gt.eta[k], gt.eta[2]);
  EXPECT_GT(gt.eta[2], 0.0);
}

TEST(GenSeries, ReplayReproducesSeries) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    SynthConfig c;
    c.n_nodes = rand_int(rng, 2, 40);
    c.ar_order = rand_int(rng, 1, 5);
    c.length = c.ar_order + rand_int(rng, 1, 60);
    c.p = uniform(rng, 0.0, 0.4);
    c.snr_db = uniform(rng, -20, 20);
    c.seed = rng();
    const auto gt = generate(c);
    EXPECT_LE((replay(gt).values - gt.series.values).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GenSeries, EntriesBounded) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    SynthConfig c;
    c.n_nodes = rand_int(rng, 2, 40);
    c.ar_order = rand_int(rng, 1, 5);
    c.length = 60;
    c.p = uniform(rng, 0.0, 0.5);
    c.snr_db = uniform(rng, -20, 20);
    c.seed = rng();
    const auto gt = generate(c);
    const double m = static_cast<double>(c.ar_order);
    for (Eigen::Index k = static_cast<Eigen::Index>(c.ar_order); k < 60; ++k)
      for (Eigen::Index i = 0; i < gt.series.values.rows(); ++i)
        EXPECT_LE(std::abs(gt.series.values(i, k)), m + std::abs(gt.eta[static_cast<std::size_t>(k)] * gt.noise(i, k)) + 1e-12);
  }
}

TEST(GenSeries, SameSeedSameGroundTruth) {
  const SynthConfig c{.n_nodes = 30, .length = 50, .ar_order = 3, .graph = GraphKind::sbm, .seed = 9};
  const auto a = generate(c), b = generate(c);
  EXPECT_EQ(a.graph, b.graph);
  EXPECT_EQ(a.series.values, b.series.values);
  EXPECT_EQ(a.noise, b.noise);
  EXPECT_EQ(a.eta, b.eta);
  SynthConfig d = c;
  d.seed = 10;
  EXPECT_NE(generate(d).series.values, a.series.values);
}

TEST(GenSeries, RejectsInvalidConfig) {
  EXPECT_THROW(generate({.n_nodes = 5, .length = 3, .ar_order = 3}), InvalidArgument);
  EXPECT_THROW(generate({.n_nodes = 5, .length = 10, .ar_order = 3, .p = 1.5}), InvalidArgument);
  EXPECT_THROW(generate({.n_nodes = 5, .length = 10, .ar_order = 3, .snr_db = std::nan("")}), InvalidArgument);
  EXPECT_THROW(gen_coeffs(0, 1), InvalidArgument);
}

TEST(Export, FilesRoundTrip) {
  const auto dir = temp_dir("synth_export");
  const SynthConfig c{.n_nodes = 15, .length = 30, .ar_order = 3, .p = 0.2, .snr_db = 10, .seed = 12};
  const auto gt = generate(c);
  export_ground_truth(dir, c, gt);
  EXPECT_EQ(load_graph_csv(dir / "graph.csv", 15), gt.graph);
  EXPECT_EQ(load_series_csv(dir / "series.csv").values, gt.series.values);
  EXPECT_EQ(load_series_csv(dir / "noise.csv").values, gt.noise);
  const auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  EXPECT_EQ(manifest["config"]["seed"], 12);
  EXPECT_EQ(manifest["coefficients"].size(), 3u);
  EXPECT_EQ(manifest["coefficients"][2].get<std::vector<double>>(), gt.coeffs[2].coeffs);
  EXPECT_EQ(manifest["eta"].get<std::vector<double>>(), gt.eta);
  const SynthConfig noiseless{.n_nodes = 5, .length = 8, .ar_order = 2, .snr_db = kInf, .seed = 1};
  EXPECT_EQ(synth_config_json(noiseless)["snr_db"], "inf");
}
