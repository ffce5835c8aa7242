#include "test_util.hpp"

#include <Eigen/Eigenvalues>
#include <numeric>

using namespace cgp;
using namespace cgp::test;

namespace {

Vector linear_cgp_oracle(const CgpParams& p, const DirectedGraph& g, const Matrix& window) {
  const Matrix a = g.to_dense();
  const std::size_t m = p.ar_order();
  Vector out = Vector::Zero(window.rows());
  for (std::size_t i = 1; i <= m; ++i)
    out += p.alphas[i - 1] * (poly_matrix(a, p.thetas[i - 1]) * window.col(static_cast<Eigen::Index>(m - i)));
  return out;
}

Matrix permutation(Rng& rng, std::size_t n) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Matrix p = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) p(static_cast<Eigen::Index>(i), idx[i]) = 1.0;
  return p;
}

double weighted(const Vector& up, const Vector& y) { return up.dot(y); }
double weighted(const Matrix& up, const Matrix& y) { return up.cwiseProduct(y).sum(); }

}  // namespace

TEST(ParamCount, KnownCounts) {
  EXPECT_EQ(param_count(ModelKind::base, 3), 12u);
  EXPECT_EQ(param_count(ModelKind::base, 6), 33u);
  EXPECT_EQ(param_count(ModelKind::base, 9), 63u);
  EXPECT_EQ(param_count(ModelKind::heat, 5), 15u);
  EXPECT_EQ(param_count(ModelKind::shared, 3, 6), 12u);
  const std::size_t hs[] = {3, 6, 9}, head[] = {15, 18, 21}, adaptive[] = {30, 57, 84};
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(param_count(ModelKind::mlp_head, 3, hs[k]), head[k]);
    EXPECT_EQ(param_count(ModelKind::adaptive, 3, hs[k]), adaptive[k]);
    for (auto v : {MultiHorizonVariant::mlp_head, MultiHorizonVariant::adaptive, MultiHorizonVariant::shared}) {
      const auto p = MultiHorizonParams::initial(v, 3, hs[k]);
      EXPECT_EQ(flatten(p).size(), p.parameter_count());
    }
  }
  EXPECT_EQ(param_count(ModelKind::var, 2, 1, 4), 32u);
  EXPECT_THROW(param_count(ModelKind::base, 0), InvalidArgument);
}

TEST(CgpParams, InitialAndShapes) {
  for (std::size_t m = 1; m <= 8; ++m) {
    const auto p = CgpParams::initial(m);
    EXPECT_EQ(flatten(p).size(), p.parameter_count());
    for (std::size_t i = 1; i <= m; ++i) {
      EXPECT_EQ(p.thetas[i - 1].size(), i + 1);
      EXPECT_DOUBLE_EQ(p.thetas[i - 1][1], 1.0 / static_cast<double>(m));
      EXPECT_EQ(p.thetas[i - 1][0], 0.0);
    }
    const auto j = CgpParams::initial(m, Activation::tanh, 0.1, 4);
    const auto base = flatten(p), jittered = flatten(j);
    for (std::size_t k = 0; k < base.size(); ++k) EXPECT_LE(std::abs(base[k] - jittered[k]), 0.1);
  }
}

TEST(CgpParams, FlattenRoundTrip) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_params(rng, rand_int(rng, 1, 6), Activation::tanh);
    CgpParams q = CgpParams::initial(p.ar_order());
    unflatten(q, flatten(p));
    EXPECT_EQ(flatten(q), flatten(p));
    const std::vector<double> short_span(2);
    EXPECT_THROW(unflatten(q, short_span), InvalidArgument);
  }
}

TEST(Forward, ZeroFiltersGiveZero) {
  Rng rng(2);
  const auto g = random_graph(rng, 7, 0.3);
  CgpParams p = CgpParams::initial(3);
  for (auto& c : p.thetas) c = PolyCoeffs::zeros(c.order());
  EXPECT_EQ(forward(p, g, random_matrix(rng, 7, 3)), Vector::Zero(7));
}

TEST(Forward, IdentityFilterPassthrough) {
  Rng rng(3);
  const auto g = random_graph(rng, 5, 0.4);
  CgpParams p;
  p.activation = Activation::identity;
  p.alphas = {1.0};
  p.thetas = {PolyCoeffs({1.0, 0.0})};
  const Matrix w = random_matrix(rng, 5, 1);
  EXPECT_EQ(forward(p, g, w), Vector(w.col(0)));
}

TEST(Forward, ShapeErrors) {
  const auto g = gen_erdos_renyi(5, 0.3, 1);
  const auto p = CgpParams::initial(3);
  EXPECT_THROW(forward(p, g, Matrix::Zero(5, 2)), InvalidArgument);
  EXPECT_THROW(forward(p, g, Matrix::Zero(4, 3)), InvalidArgument);
  EXPECT_THROW(backward(p, g, Matrix::Zero(5, 3), Vector::Zero(4)), InvalidArgument);
}

TEST(Forward, LinearReductionMatchesDenseOracle) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto g = random_graph(rng, rand_int(rng, 2, 30), uniform(rng, 0.02, 0.5));
    auto p = random_params(rng, t == 0 ? 2 : rand_int(rng, 1, 5), Activation::identity);
    std::fill(p.alphas.begin(), p.alphas.end(), 1.0);
    const Matrix w = random_matrix(rng, g.num_nodes(), p.ar_order());
    EXPECT_LE((forward(p, g, w) - linear_cgp_oracle(p, g, w)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((forward(p, window_powers(g, w)) - forward(p, g, w)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, PermutationEquivariance) {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const auto g = random_graph(rng, rand_int(rng, 2, 25), uniform(rng, 0.05, 0.5));
    const auto p = random_params(rng, rand_int(rng, 1, 4), t % 2 ? Activation::tanh : Activation::identity);
    const Matrix perm = permutation(rng, g.num_nodes());
    const auto pg = DirectedGraph::from_dense(perm * g.to_dense() * perm.transpose());
    const Matrix w = random_matrix(rng, g.num_nodes(), p.ar_order());
    const Vector lhs = forward(p, pg, perm * w);
    const Vector rhs = perm * forward(p, g, w);
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Forward, TanhOutputBounded) {
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const auto g = random_graph(rng, rand_int(rng, 2, 20), uniform(rng, 0.05, 0.8));
    const auto p = random_params(rng, rand_int(rng, 1, 5), Activation::tanh, 2.0);
    double bound = 0.0;
    for (double a : p.alphas) bound += std::abs(a);
    const Vector y = forward(p, g, random_matrix(rng, g.num_nodes(), p.ar_order(), 2.0));
    EXPECT_LT(y.cwiseAbs().maxCoeff(), bound);
    // Saturated inputs reach the bound only through rounding.
    const Vector big = forward(p, g, random_matrix(rng, g.num_nodes(), p.ar_order(), 100.0));
    EXPECT_LE(big.cwiseAbs().maxCoeff(), bound);
  }
}

TEST(Backward, ZeroUpstreamAndLinearClosedForm) {
  Rng rng(7);
  const auto g = random_graph(rng, 6, 0.4);
  const auto p = random_params(rng, 3, Activation::tanh);
  const Matrix w = random_matrix(rng, 6, 3);
  for (double v : flatten(backward(p, g, w, Vector::Zero(6)))) EXPECT_EQ(v, 0.0);

  CgpParams lin;
  lin.activation = Activation::identity;
  lin.alphas = {1.0};
  lin.thetas = {PolyCoeffs({0.3, -0.2})};
  const Matrix w1 = random_matrix(rng, 6, 1);
  const Vector up = random_vector(rng, 6);
  EXPECT_DOUBLE_EQ(backward(lin, g, w1, up).thetas[0][0], up.dot(w1.col(0)));
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(8);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const auto g = random_graph(rng, t == 0 ? 10 : rand_int(rng, 2, 15), uniform(rng, 0.1, 0.5));
    const auto p = random_params(rng, t == 0 ? 3 : rand_int(rng, 1, 4), t % 3 ? Activation::tanh : Activation::identity);
    const Matrix w = random_matrix(rng, g.num_nodes(), p.ar_order());
    const Vector up = random_vector(rng, g.num_nodes());
    const auto f = [&](const std::vector<double>& flat) {
      CgpParams q = p;
      unflatten(q, flat);
      return up.dot(forward(q, g, w));
    };
    const auto analytic = flatten(backward(p, g, w, up));
    worst = std::max(worst, max_rel_error(analytic, fd_gradient(f, flatten(p))));
    std::vector<double> cached(analytic.size(), 0.0);
    accumulate_gradient(p, window_powers(g, w), up, cached);
    worst = std::max(worst, max_rel_error(analytic, cached));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Backward, WindowGradientMatchesFiniteDifferences) {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const auto g = random_graph(rng, rand_int(rng, 2, 10), 0.3);
    const auto p = random_params(rng, rand_int(rng, 1, 4), Activation::tanh);
    const Matrix w = random_matrix(rng, g.num_nodes(), p.ar_order());
    const Vector up = random_vector(rng, g.num_nodes());
    Matrix wg;
    backward(p, g, w, up, &wg);
    const auto f = [&](const std::vector<double>& flat) {
      return up.dot(forward(p, g, Matrix(Eigen::Map<const Matrix>(flat.data(), w.rows(), w.cols()))));
    };
    const std::vector<double> flat(w.data(), w.data() + w.size());
    EXPECT_LE(max_rel_error(std::vector<double>(wg.data(), wg.data() + wg.size()), fd_gradient(f, flat)), 1e-5);
  }
}

TEST(Heat, Examples) {
  Rng rng(10);
  const auto g = random_graph(rng, 6, 0.4);
  const Matrix w = random_matrix(rng, 6, 3);
  HeatParams zero = HeatParams::initial(3);
  for (auto& h : zero.heat) h.scale = 0.0;
  EXPECT_EQ(forward_heat(zero, g, w), Vector::Zero(6));

  HeatParams at_zero = HeatParams::initial(3);
  CgpParams poly = CgpParams::initial(3);
  for (std::size_t i = 0; i < 3; ++i) {
    at_zero.heat[i] = {uniform(rng, -1, 1), 0.0};
    at_zero.alphas[i] = poly.alphas[i] = uniform(rng, -1, 1);
    poly.thetas[i] = PolyCoeffs::zeros(i + 1);
    poly.thetas[i][0] = at_zero.heat[i].scale;
  }
  EXPECT_LE((forward_heat(at_zero, g, w) - forward(poly, g, w)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(HeatParams::initial(5).parameter_count(), 15u);
}

TEST(Heat, MatchesEigenOracle) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const auto g = diagonalizable_graph(rng, 8, 0.4);
    HeatParams p = HeatParams::initial(3);
    for (std::size_t i = 0; i < 3; ++i) {
      p.alphas[i] = uniform(rng, -1, 1);
      p.heat[i] = {uniform(rng, -2, 2), uniform(rng, 0, 3)};
    }
    const Matrix w = random_matrix(rng, 8, 3);
    Vector oracle = Vector::Zero(8);
    for (std::size_t i = 1; i <= 3; ++i) {
      const Vector u = p.heat[i - 1].scale * (expm_eigen_oracle(p.heat[i - 1].time * g.to_dense()) * w.col(3 - i));
      oracle += p.alphas[i - 1] * u.array().tanh().matrix();
    }
    EXPECT_LE((forward_heat(p, g, w) - oracle).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Heat, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto g = random_graph(rng, rand_int(rng, 2, 10), 0.4);
    const std::size_t m = rand_int(rng, 1, 4);
    HeatParams p = HeatParams::initial(m);
    for (std::size_t i = 0; i < m; ++i) {
      p.alphas[i] = uniform(rng, -1, 1);
      p.heat[i] = {uniform(rng, -1, 1), uniform(rng, 0, 2)};
    }
    const Matrix w = random_matrix(rng, g.num_nodes(), m);
    const Vector up = random_vector(rng, g.num_nodes());
    const auto f = [&](const std::vector<double>& flat) {
      HeatParams q = p;
      unflatten(q, flat);
      return up.dot(forward_heat(q, g, w));
    };
    std::vector<double> grad(3 * m, 0.0);
    accumulate_gradient(p, heat_kernels(p, g), w, up, grad);
    EXPECT_LE(max_rel_error(grad, fd_gradient(f, flatten(p))), 1e-5);
  }
}

TEST(Var, ForwardAndGradient) {
  Rng rng(13);
  VarParams p = VarParams::initial(2, 4);
  EXPECT_EQ(p.parameter_count(), 32u);
  const Matrix w = random_matrix(rng, 4, 2);
  EXPECT_EQ(forward_var(p, w), Vector::Zero(4));
  for (auto& r : p.coeffs) r = random_matrix(rng, 4, 4);
  EXPECT_LE((forward_var(p, w) - (p.coeffs[0] * w.col(1) + p.coeffs[1] * w.col(0))).norm(), 1e-14);
  const Vector up = random_vector(rng, 4);
  const auto f = [&](const std::vector<double>& flat) {
    VarParams q = p;
    unflatten(q, flat);
    return up.dot(forward_var(q, w));
  };
  std::vector<double> grad(32, 0.0);
  accumulate_gradient(p, w, up, grad);
  EXPECT_LE(max_rel_error(grad, fd_gradient(f, flatten(p))), 1e-6);
}

TEST(MultiHorizon, SharedWithOneHorizonMatchesBase) {
  Rng rng(14);
  for (int t = 0; t < 20; ++t) {
    const auto g = random_graph(rng, rand_int(rng, 2, 15), 0.3);
    auto p = MultiHorizonParams::initial(MultiHorizonVariant::shared, rand_int(rng, 1, 4), 1);
    p.base = random_params(rng, p.ar_order(), Activation::tanh);
    const Matrix w = random_matrix(rng, g.num_nodes(), p.ar_order());
    const Matrix out = forecast_multi(p, g, w);
    ASSERT_EQ(out.cols(), 1);
    EXPECT_LE((Vector(out.col(0)) - forward(p.base, g, w)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MultiHorizon, AdaptiveUnrollsRecursion) {
  const auto g = DirectedGraph::from_edges(3, {{0, 1, 0.5}, {1, 2, -0.4}, {2, 0, 0.3}});
  Rng rng(15);
  auto p = MultiHorizonParams::initial(MultiHorizonVariant::adaptive, 2, 2, Activation::identity);
  p.base.alphas = {0.7, -0.4};
  for (auto& set : p.per_horizon_thetas)
    for (auto& c : set)
      for (double& v : c.coeffs) v = uniform(rng, -1, 1);
  const Matrix w = random_matrix(rng, 3, 2);
  const Matrix out = forecast_multi(p, g, w);
  const Vector first = forward(p.horizon_params(0), g, w);
  Matrix next(3, 2);
  next << w.col(1), first;
  EXPECT_LE((Vector(out.col(0)) - first).norm(), 1e-14);
  EXPECT_LE((Vector(out.col(1)) - forward(p.horizon_params(1), g, next)).norm(), 1e-14);
}

TEST(MultiHorizon, MlpHeadIsOuterExpansion) {
  Rng rng(16);
  const auto g = random_graph(rng, 6, 0.3);
  auto p = MultiHorizonParams::initial(MultiHorizonVariant::mlp_head, 3, 4);
  p.head = {0.5, -1.0, 2.0, 0.1};
  const Matrix w = random_matrix(rng, 6, 3);
  const Vector y = forward(p.base, g, w);
  const Matrix out = forecast_multi(p, g, w);
  for (int h = 0; h < 4; ++h) EXPECT_LE((Vector(out.col(h)) - Vector((p.head[h] * y).array().tanh())).norm(), 1e-14);
}

TEST(MultiHorizon, RejectsZeroHorizons) {
  EXPECT_THROW(MultiHorizonParams::initial(MultiHorizonVariant::shared, 3, 0), InvalidArgument);
  auto p = MultiHorizonParams::initial(MultiHorizonVariant::shared, 2, 1);
  p.horizons = 0;
  EXPECT_THROW(forecast_multi(p, gen_erdos_renyi(3, 0.5, 1), Matrix::Zero(3, 2)), InvalidArgument);
}

TEST(MultiHorizon, GradientsMatchFiniteDifferences) {
  Rng rng(17);
  for (auto variant : {MultiHorizonVariant::mlp_head, MultiHorizonVariant::adaptive, MultiHorizonVariant::shared}) {
    for (int t = 0; t < 10; ++t) {
      const auto g = random_graph(rng, rand_int(rng, 2, 10), 0.3);
      auto p = MultiHorizonParams::initial(variant, rand_int(rng, 1, 3), rand_int(rng, 1, 4),
                                           t % 2 ? Activation::tanh : Activation::identity);
      std::vector<double> flat = flatten(p);
      for (double& v : flat) v = uniform(rng, -0.8, 0.8);
      unflatten(p, flat);
      const Matrix w = random_matrix(rng, g.num_nodes(), p.ar_order());
      const Matrix up = random_matrix(rng, g.num_nodes(), p.horizons);
      const auto f = [&](const std::vector<double>& x) {
        auto q = p;
        unflatten(q, x);
        return weighted(up, forecast_multi(q, g, w));
      };
      std::vector<double> grad(flat.size(), 0.0);
      accumulate_gradient(p, g, w, up, grad);
      EXPECT_LE(max_rel_error(grad, fd_gradient(f, flat)), 1e-5) << static_cast<int>(variant);
    }
  }
}

TEST(Activation, ParseAndNames) {
  EXPECT_EQ(parse_activation("tanh"), Activation::tanh);
  EXPECT_EQ(parse_activation("identity"), Activation::identity);
  EXPECT_THROW(parse_activation("relu"), InvalidArgument);
  for (auto k : {ModelKind::base, ModelKind::mlp_head, ModelKind::adaptive, ModelKind::shared, ModelKind::heat,
                 ModelKind::var})
    EXPECT_EQ(parse_model_kind(to_string(k)), k);
}
