#include <gtest/gtest.h>

#include "maskfield/dataio.hpp"
#include "maskfield/pipeline.hpp"
#include "test_util.hpp"

using namespace maskfield;

namespace {

const SceneDataset& tiny_dataset() {
  static const SceneDataset ds = [] {
    SceneOptions so;
    so.width = so.height = 24;
    so.num_views = 8;
    return make_dataset(generate_scene(1, 2, false, so), {}, "tiny");
  }();
  return ds;
}

TrainConfig tiny_config(Backend b = Backend::kGrid) {
  TrainConfig c;
  c.backend = b;
  c.d_m = 4;
  c.n_k = 8;
  c.hidden = 16;
  c.grid_resolution = 20;
  c.splat_count = 800;
  c.splat_radius = 0.04;
  c.n_samples = 24;
  c.ray_batch = 384;
  c.stage1_steps = 300;
  c.stage2_steps = 60;
  c.seed = 3;
  return c;
}

// stage-1 result shared by the stage-2 tests
const TrainState& trained_geometry() {
  static const TrainState st = [] {
    TrainState s = init_state(tiny_dataset(), tiny_config());
    train_geometry(tiny_dataset(), tiny_config(), s);
    return s;
  }();
  return st;
}

TrainState round_trip(const TrainConfig& cfg, const TrainState& st) {
  return decode_checkpoint(encode_checkpoint(cfg, st)).state;
}

}  // namespace

TEST(Trainer, GeometryLossDecreases) {
  TrainConfig cfg = tiny_config();
  cfg.stage1_steps = 300;
  TrainState st = init_state(tiny_dataset(), cfg);
  std::vector<double> seen;
  const GeometryResult r = train_geometry(tiny_dataset(), cfg, st, [&](std::int64_t, double l) { seen.push_back(l); });
  ASSERT_EQ(r.loss_history.size(), 300u);
  EXPECT_EQ(seen, r.loss_history);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += r.loss_history[i];
    last += r.loss_history[290 + i];
  }
  EXPECT_LT(last, 0.5 * first);
  EXPECT_EQ(trained_geometry().stage1_step, 300);
  EXPECT_LT(photometric_mse(tiny_dataset(), trained_geometry().model.field, tiny_config()), 0.02);
}

TEST(Trainer, SplatGeometryLossDecreases) {
  TrainConfig cfg = tiny_config(Backend::kSplat);
  cfg.stage1_steps = 80;
  TrainState st = init_state(tiny_dataset(), cfg);
  const GeometryResult r = train_geometry(tiny_dataset(), cfg, st);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += r.loss_history[i];
    last += r.loss_history[70 + i];
  }
  EXPECT_LT(last, first);
}

TEST(Trainer, GeometryResumeIsBitwise) {
  TrainConfig cfg = tiny_config();
  cfg.stage1_steps = 20;
  TrainState full = init_state(tiny_dataset(), cfg);
  train_geometry(tiny_dataset(), cfg, full);
  TrainConfig half = cfg;
  half.stage1_steps = 10;
  TrainState a = init_state(tiny_dataset(), half);
  train_geometry(tiny_dataset(), half, a);
  TrainState b = round_trip(half, a);
  train_geometry(tiny_dataset(), cfg, b);
  EXPECT_TRUE(b.model.field == full.model.field);
  EXPECT_EQ(b.opt_geometry, full.opt_geometry);
  EXPECT_EQ(b.opt_color, full.opt_color);
  EXPECT_TRUE(b.rng == full.rng);
}

TEST(Trainer, MaskStageLeavesGeometryAloneAndLearns) {
  TrainState st = trained_geometry();
  TrainConfig cfg = tiny_config();
  cfg.stage2_steps = 200;
  const auto density = geometry_params(st.model.field);
  const auto color = color_params(st.model.field);
  const MaskFieldResult r = train_maskfield(tiny_dataset(), cfg, st);
  EXPECT_EQ(geometry_params(st.model.field), density);
  EXPECT_EQ(color_params(st.model.field), color);
  ASSERT_EQ(r.history.size(), 200u);
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += r.history[i].loss.l_total;
    last += r.history[180 + i].loss.l_total;
  }
  EXPECT_LT(last, 0.7 * first);
  for (const auto& h : r.history) {
    EXPECT_NEAR(h.loss.l_total, h.loss.l_distill + cfg.loss.w_extra * h.loss.l_extra, 1e-12);
  }
}

TEST(Trainer, MaskResumeIsBitwise) {
  TrainConfig cfg = tiny_config();
  cfg.stage2_steps = 30;
  TrainState full = trained_geometry();
  train_maskfield(tiny_dataset(), cfg, full);
  TrainConfig half = cfg;
  half.stage2_steps = 13;
  TrainState a = trained_geometry();
  train_maskfield(tiny_dataset(), half, a);
  TrainState b = round_trip(half, a);
  train_maskfield(tiny_dataset(), cfg, b);
  EXPECT_TRUE(b.model.field == full.model.field);
  EXPECT_TRUE(b.model.bank == full.model.bank);
  EXPECT_EQ(b.opt_feature, full.opt_feature);
  EXPECT_EQ(b.opt_semantic, full.opt_semantic);
  EXPECT_EQ(b.stage2_step, 30);
}

TEST(Trainer, SupervisedViewSelection) {
  TrainConfig cfg = tiny_config();
  const auto all = supervised_views(tiny_dataset(), cfg);
  EXPECT_EQ(all, (std::vector<int>{0, 1, 2, 4, 5, 6}));
  cfg.view_fraction = 0.5;
  const auto half = supervised_views(tiny_dataset(), cfg);
  EXPECT_EQ(half.size(), 3u);
  EXPECT_EQ(half, supervised_views(tiny_dataset(), cfg));
  for (int v : half) EXPECT_EQ(tiny_dataset().views[v].split, "train");
  cfg.view_fraction = 0.01;
  EXPECT_EQ(supervised_views(tiny_dataset(), cfg).size(), 1u);
}

TEST(Trainer, RejectsInconsistentSetups) {
  TrainConfig cfg = tiny_config();
  cfg.n_k = 1;  // views carry two masks
  TrainState st = init_state(tiny_dataset(), cfg);
  st.model.field = trained_geometry().model.field;
  EXPECT_THROW(train_maskfield(tiny_dataset(), cfg, st), ValidationError);
  TrainConfig bad = tiny_config();
  bad.d_s = 16;
  EXPECT_THROW(init_state(tiny_dataset(), bad), ValidationError);
  TrainConfig dm = tiny_config();
  dm.d_m = 8;
  TrainState s4 = trained_geometry();
  EXPECT_THROW(train_maskfield(tiny_dataset(), dm, s4), ValidationError);
}

TEST(Trainer, FeatureDimensionSwapKeepsGeometry) {
  TrainConfig cfg = tiny_config();
  cfg.d_m = 7;
  const TrainState st = with_feature_dim(tiny_dataset(), trained_geometry(), cfg);
  EXPECT_EQ(feature_dim(st.model.field), 7);
  EXPECT_EQ(st.model.bank.d_m, 7);
  EXPECT_EQ(geometry_params(st.model.field), geometry_params(trained_geometry().model.field));
  EXPECT_EQ(feature_params(st.model.field).size(), geometry_params(st.model.field).size() * 7);
}

TEST(Trainer, PipelineGradcheckBothBackends) {
  for (Backend b : {Backend::kGrid, Backend::kSplat}) {
    PipelineProblem pb = make_pipeline_problem(b, 11);
    const PipelineGradcheckReport r = pipeline_gradcheck(pb, 40, 1e-4, 5);
    EXPECT_LT(r.max_rel_error, 1e-4) << to_string(b);
    EXPECT_EQ(r.coords_checked, 200u);
  }
}

TEST(Trainer, GradcheckCatchesAWrongGradient) {
  std::vector<double> x{0.3, -0.2};
  auto loss = [&] { return x[0] * x[0] + 3 * x[1]; };
  const std::vector<double> right{0.6, 3.0}, wrong{0.6, 2.0};
  EXPECT_LT(gradcheck(loss, x, right, {}).max_rel_error, 1e-8);
  EXPECT_GT(gradcheck(loss, x, wrong, {}).max_rel_error, 0.1);
}

TEST(Trainer, GradcheckOnQuadraticAndOnePercentCorruption) {
  std::vector<double> x = testutil::random_vector(300, 8, 1.0, 3.0);
  auto half_norm = [&] {
    double s = 0;
    for (double v : x) s += 0.5 * v * v;
    return s;
  };
  const std::vector<double> exact = x;
  EXPECT_LT(gradcheck(half_norm, x, exact, {}).max_rel_error, 1e-8);
  std::vector<double> off = exact;
  for (double& v : off) v *= 1.01;
  EXPECT_GT(gradcheck(half_norm, x, off, {}).max_rel_error, 5e-3);
  EXPECT_EQ(x, exact);  // parameters restored
}

TEST(Trainer, ThreadedTrainingAgreesWithSingleThread) {
  TrainConfig cfg = tiny_config();
  cfg.stage1_steps = 60;
  cfg.stage2_steps = 30;
  TrainState a = trained_geometry(), b = trained_geometry();
  const auto ra = train_maskfield(tiny_dataset(), cfg, a);
  cfg.threads = 3;
  const auto rb = train_maskfield(tiny_dataset(), cfg, b);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  EXPECT_NEAR(ra.history.back().loss.l_total, rb.history.back().loss.l_total, 1e-5);
  TrainState g1 = init_state(tiny_dataset(), tiny_config()), g3 = g1;
  TrainConfig c1 = tiny_config(), c3 = tiny_config();
  c1.stage1_steps = c3.stage1_steps = 40;
  c3.threads = 3;
  const auto h1 = train_geometry(tiny_dataset(), c1, g1), h3 = train_geometry(tiny_dataset(), c3, g3);
  EXPECT_NEAR(h1.loss_history.back(), h3.loss_history.back(), 1e-5);
}
