#include "test_util.hpp"

using namespace cgp;
using namespace cgp::test;

namespace {

std::vector<double> flat_of(const AnyModel& m) {
  return std::visit([](const auto& p) { return flatten(p); }, m);
}

AnyModel randomized(AnyModel m, Rng& rng) {
  std::visit(
      [&](auto& p) {
        auto flat = flatten(p);
        for (double& v : flat) v = standard_normal(rng) / 3.0;
        unflatten(p, flat);
      },
      m);
  return m;
}

}  // namespace

TEST(Checkpoint, LosslessRoundTripForEveryVariant) {
  Rng rng(1);
  const auto dir = temp_dir("checkpoint");
  const std::vector<AnyModel> models = {
      CgpParams::initial(3),
      CgpParams::initial(4, Activation::identity),
      MultiHorizonParams::initial(MultiHorizonVariant::mlp_head, 3, 6),
      MultiHorizonParams::initial(MultiHorizonVariant::adaptive, 3, 6),
      MultiHorizonParams::initial(MultiHorizonVariant::shared, 2, 4),
      HeatParams::initial(5),
      VarParams::initial(2, 4),
  };
  for (const auto& base : models) {
    const AnyModel m = randomized(base, rng);
    save_checkpoint(dir / "ck.json", m);
    const AnyModel back = load_checkpoint(dir / "ck.json");
    EXPECT_EQ(back.index(), m.index());
    EXPECT_EQ(model_kind(back), model_kind(m));
    EXPECT_EQ(model_parameter_count(back), model_parameter_count(m));
    EXPECT_EQ(model_horizons(back), model_horizons(m));
    EXPECT_EQ(flat_of(back), flat_of(m));
    EXPECT_EQ(checkpoint_to_json(m)["parameter_count"], model_parameter_count(m));
  }
  EXPECT_EQ(model_parameter_count(models[3]), 57u);
}

TEST(Checkpoint, ExtremeValuesSurvive) {
  CgpParams p = CgpParams::initial(2);
  p.alphas = {std::nextafter(1.0, 2.0), 5e-324};
  p.thetas[1][2] = -1.2345678901234567e300;
  const AnyModel back = checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(p).dump()));
  EXPECT_EQ(flat_of(back), flatten(p));
}

TEST(Checkpoint, RejectsMalformedDocuments) {
  const auto dir = temp_dir("checkpoint_bad");
  auto j = checkpoint_to_json(CgpParams::initial(3));
  auto wrong_order = j;
  wrong_order["thetas"][1] = std::vector<double>{1.0};
  EXPECT_THROW(checkpoint_from_json(wrong_order), InvalidArgument);
  auto unknown = j;
  unknown["variant"] = "lstm";
  EXPECT_THROW(checkpoint_from_json(unknown), InvalidArgument);
  auto short_alpha = j;
  short_alpha["alphas"] = std::vector<double>{1.0};
  EXPECT_THROW(checkpoint_from_json(short_alpha), InvalidArgument);
  io::write_atomic(dir / "garbage.json", "{not json");
  EXPECT_THROW(load_checkpoint(dir / "garbage.json"), ParseError);
  EXPECT_THROW(load_checkpoint(dir / "absent.json"), IoError);
}

TEST(Plot, SinglePoint) {
  const plot::Table t{"one", "x", "y", {{"s", {1.0}, {2.0}}}};
  const auto out = plot::emit_plotdata(t, plot::Kind::line);
  EXPECT_EQ(out.columns, "# one\n# x y\n# s\n1 2\n");
  EXPECT_NE(out.svg.find("<svg"), std::string::npos);
  EXPECT_NE(out.svg.find("</svg>"), std::string::npos);
}

TEST(Plot, DeterministicAndSeriesBlocks) {
  const plot::Table t{"curves", "epoch", "loss", {{"train", {0, 1, 2}, {3, 2, 1}}, {"val", {0, 1, 2}, {4, 3, 2.5}}}};
  const auto a = plot::emit_plotdata(t, plot::Kind::line);
  const auto b = plot::emit_plotdata(t, plot::Kind::line);
  EXPECT_EQ(a.columns, b.columns);
  EXPECT_EQ(a.svg, b.svg);
  EXPECT_NE(a.columns.find("\n\n\n# val\n"), std::string::npos);
  const auto heat = plot::emit_plotdata(t, plot::Kind::heatmap);
  EXPECT_NE(heat.svg.find("<rect"), std::string::npos);
}

TEST(Plot, Errors) {
  EXPECT_THROW(plot::emit_plotdata({"t", "x", "y", {}}, plot::Kind::line), InvalidArgument);
  EXPECT_THROW(plot::emit_plotdata({"t", "x", "y", {{"s", {}, {}}}}, plot::Kind::line), InvalidArgument);
  EXPECT_THROW(plot::emit_plotdata({"t", "x", "y", {{"s", {1, 2}, {1}}}}, plot::Kind::line), InvalidArgument);
}
