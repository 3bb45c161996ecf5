#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracle.hpp"
#include "protoaudit/numerics/ops.hpp"
#include "protoaudit/trainer/trainer.hpp"

using namespace protoaudit;
using namespace protoaudit::trainer;
using numerics::Tensor;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.joint_epochs = 4;
  c.projection_interval = 2;
  c.last_layer_epochs = 3;
  c.batch_size = 4;
  c.seed = 7;
  return c;
}

// Per-image cluster/separation costs straight from the definitions.
std::pair<double, double> hand_costs(const ProtoNetModel& model, const sourcebench::ImageRecord& rec) {
  const auto z = model.encode(rec.pixels);
  double own = 1e300, other = 1e300;
  const auto& bank = model.prototypes();
  const std::size_t d = bank.depth();
  for (std::size_t m = 0; m < bank.size(); ++m) {
    const auto dist = protonet::patch_distances(z, std::span<const float>(bank.vectors.raw() + m * d, d));
    const double mn = *std::min_element(dist.begin(), dist.end());
    if (bank.owner_class[m] == rec.label) own = std::min(own, mn);
    else other = std::min(other, mn);
  }
  return {own, other};
}

}  // namespace

TEST(TrainConfig, RejectsBadSchedules) {
  TrainConfig c;
  c.projection_interval = 7;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.joint_lr = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.max_grad_norm = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(SelectModel, EarliestBestOnTies) {
  const std::vector<double> acc{0.6, 0.8, 0.8};
  EXPECT_EQ(select_model(std::span<const double>(acc)), 1u);
  EXPECT_THROW(select_model(std::span<const double>()), std::invalid_argument);
}

TEST(ClusterSeparation, MatchesHandComputation) {
  const auto model = ProtoNetModel::create(fixtures::tiny_arch(), 1);
  const auto images = fixtures::tiny_images(3, 2);
  double cl = 0, sep = 0;
  for (const auto& r : images) {
    const auto [o, t] = hand_costs(model, r);
    cl += o;
    sep += t;
  }
  cl /= images.size();
  sep /= images.size();
  const auto loss = cluster_separation(model, images);
  EXPECT_NEAR(loss.cluster_cost, cl, 1e-5);
  EXPECT_NEAR(loss.separation_cost, sep, 1e-5);
  EXPECT_NEAR(loss.total, loss.cross_entropy + 0.8 * cl - 0.08 * sep, 1e-5);
}

TEST(ClusterSeparationProperty, InvariantUnderDuplicatePrototype) {
  auto arch = fixtures::tiny_arch();
  arch.prototypes_per_class = 3;
  auto far = ProtoNetModel::create(arch, 3);
  const auto images = fixtures::tiny_images(3, 4);
  const std::size_t d = arch.prototype_depth;
  const auto c0 = far.prototypes().prototypes_of(0);
  auto dup = far;
  for (std::size_t k = 0; k < d; ++k) {
    far.prototypes().vectors.at(c0[2], k) = 50.0f;
    dup.prototypes().vectors.at(c0[2], k) = dup.prototypes().vectors.at(c0[0], k);
  }
  const auto a = cluster_separation(far, images);
  const auto b = cluster_separation(dup, images);
  EXPECT_EQ(a.cluster_cost, b.cluster_cost);
  EXPECT_EQ(a.separation_cost, b.separation_cost);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  auto arch = fixtures::tiny_arch();
  const auto model = ProtoNetModel::create(arch, 5).cast<double>();
  auto img = oracle::random_tensor({1, 8, 8}, 6, 0, 1).cast<double>();
  const LossCoefficients coef;
  const auto base = evaluate_objective(model, img, 1, coef, true);
  const double h = 1e-6;
  auto check = [&](auto mutate, double analytic) {
    auto plus = model;
    auto minus = model;
    mutate(plus, h);
    mutate(minus, -h);
    const double fd = (evaluate_objective(plus, img, 1, coef, false).loss.total -
                       evaluate_objective(minus, img, 1, coef, false).loss.total) /
                      (2 * h);
    EXPECT_NEAR(analytic, fd, 1e-6 + 1e-4 * std::abs(fd));
  };
  for (std::size_t i = 0; i < 6; ++i) {
    check([&](auto& m, double e) { m.backbone().params()[0].weight[i * 5] += e; }, base.grads.backbone.grads[0].weight[i * 5]);
    check([&](auto& m, double e) { m.addon().params()[0].weight[i] += e; }, base.grads.addon.grads[0].weight[i]);
    check([&](auto& m, double e) { m.prototypes().vectors[i] += e; }, base.grads.prototypes[i]);
  }
  check([&](auto& m, double e) { m.backbone().params()[0].bias[1] += e; }, base.grads.backbone.grads[0].bias[1]);
  check([&](auto& m, double e) { m.last_layer()[3] += e; }, base.grads.last_layer[3]);
}

TEST(GradientClip, RescalesOnlyAboveCap) {
  ModelGradients<float> g;
  g.backbone.grads.resize(1);
  g.backbone.grads[0].weight = Tensor({2}, std::vector<float>{3, 0});
  g.addon.grads.resize(1);
  g.addon.grads[0].bias = Tensor({1}, std::vector<float>{4});
  g.prototypes = Tensor({1, 2}, std::vector<float>{0, 12});
  g.last_layer = Tensor({1}, std::vector<float>{100});
  EXPECT_DOUBLE_EQ(joint_gradient_norm(g), 13.0);
  auto off = g;
  EXPECT_FALSE(clip_gradients(off, 0.0));
  EXPECT_FALSE(clip_gradients(off, 13.5));
  EXPECT_EQ(off.prototypes, g.prototypes);
  EXPECT_TRUE(clip_gradients(g, 1.0));
  EXPECT_NEAR(joint_gradient_norm(g), 1.0, 1e-6);
  EXPECT_FLOAT_EQ(g.backbone.grads[0].weight[0], 3.0f / 13);
  EXPECT_FLOAT_EQ(g.addon.grads[0].bias[0], 4.0f / 13);
  EXPECT_FLOAT_EQ(g.prototypes[1], 12.0f / 13);
  EXPECT_FLOAT_EQ(g.last_layer[0], 100.0f);
}

TEST(JointTrain, LossDecreasesOnToySet) {
  auto model = ProtoNetModel::create(fixtures::tiny_arch(), 30);
  const auto train = fixtures::tiny_images(8, 31);
  auto cfg = tiny_config();
  cfg.joint_epochs = 5;
  cfg.projection_interval = 5;
  const auto r = joint_train(model, train, {}, cfg);
  ASSERT_EQ(r.checkpoints.size(), 5u);
  EXPECT_LT(r.checkpoints[4].train_loss.total, r.checkpoints[0].train_loss.total);
}

TEST(JointTrain, ScheduleAndProjectionCount) {
  auto model = ProtoNetModel::create(fixtures::tiny_arch(), 8);
  const auto train = fixtures::tiny_images(4, 9);
  const auto val = fixtures::tiny_images(2, 10);
  const auto last_before = model.last_layer();
  std::vector<std::size_t> seen;
  const auto r = joint_train(model, train, val, tiny_config(), [&](const EpochSnapshot& s) { seen.push_back(s.epoch); });
  EXPECT_EQ(r.projection_events, 2u);
  EXPECT_EQ(r.checkpoints.size(), 4u);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3, 4}));
  for (std::size_t e = 0; e < 4; ++e) {
    EXPECT_EQ(r.checkpoints[e].projected, (e + 1) % 2 == 0);
    EXPECT_EQ(r.checkpoints[e].model.prototypes().projected(), r.checkpoints[e].projected);
  }
  EXPECT_EQ(model.last_layer(), last_before);
}

TEST(JointTrain, DeterministicForFixedSeed) {
  const auto train = fixtures::tiny_images(4, 11);
  auto a = ProtoNetModel::create(fixtures::tiny_arch(), 12);
  auto b = a;
  joint_train(a, train, {}, tiny_config());
  joint_train(b, train, {}, tiny_config());
  EXPECT_EQ(feature_parameter_hash(a), feature_parameter_hash(b));
  auto c = ProtoNetModel::create(fixtures::tiny_arch(), 12);
  auto cfg = tiny_config();
  cfg.seed = 99;
  joint_train(c, train, {}, cfg);
  EXPECT_NE(feature_parameter_hash(a), feature_parameter_hash(c));
}

TEST(LastLayer, LeavesFeaturesUntouched) {
  auto model = ProtoNetModel::create(fixtures::tiny_arch(), 13);
  const auto train = fixtures::tiny_images(4, 14);
  model.project_prototypes(train);
  const auto hash = feature_parameter_hash(model);
  const auto w0 = model.last_layer();
  const auto snaps = train_last_layer(model, train, train, tiny_config());
  EXPECT_EQ(snaps.size(), 3u);
  EXPECT_EQ(feature_parameter_hash(model), hash);
  EXPECT_NE(model.last_layer(), w0);
  for (const auto& s : snaps) EXPECT_TRUE(s.projected);
}

TEST(LastLayer, ZeroLearningRateKeepsWeights) {
  auto model = ProtoNetModel::create(fixtures::tiny_arch(), 15);
  const auto train = fixtures::tiny_images(4, 16);
  auto cfg = tiny_config();
  cfg.last_layer_lr = 0.0;
  const auto w0 = model.last_layer();
  train_last_layer(model, train, {}, cfg);
  EXPECT_EQ(model.last_layer(), w0);
}

TEST(LastLayer, L1ShrinksNonOwnerWeights) {
  const auto train = fixtures::tiny_images(4, 17);
  auto base = ProtoNetModel::create(fixtures::tiny_arch(), 18);
  auto heavy = base;
  auto cfg = tiny_config();
  cfg.last_layer_epochs = 5;
  train_last_layer(base, train, {}, cfg);
  cfg.coefficients.l1 = 1.0;
  train_last_layer(heavy, train, {}, cfg);
  auto off_mass = [](const ProtoNetModel& m) {
    double s = 0;
    for (std::size_t j = 0; j < m.prototypes().size(); ++j) s += std::abs(m.last_layer().at(1 - m.prototypes().owner_class[j], j));
    return s;
  };
  EXPECT_LT(off_mass(heavy), off_mass(base));
}

TEST(LastLayer, L1StepIsLambdaTimesSign) {
  const auto train = fixtures::tiny_images(3, 23);
  auto base = ProtoNetModel::create(fixtures::tiny_arch(), 24);
  base.last_layer().at(0, 2) = 0.25f;  // a positive non-owner connection
  auto reg = base;
  auto cfg = tiny_config();
  cfg.last_layer_epochs = 1;
  cfg.batch_size = train.size();
  cfg.momentum = 0.0;
  cfg.last_layer_lr = 0.1;
  cfg.coefficients.l1 = 0.0;
  const auto w0 = base.last_layer();
  train_last_layer(base, train, {}, cfg);
  cfg.coefficients.l1 = 0.5;
  train_last_layer(reg, train, {}, cfg);
  const auto& owners = base.prototypes().owner_class;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t j = 0; j < owners.size(); ++j) {
      const double diff = reg.last_layer().at(c, j) - base.last_layer().at(c, j);
      const double sign = w0.at(c, j) > 0 ? 1.0 : -1.0;
      const double expected = owners[j] == static_cast<int>(c) ? 0.0 : -0.1 * 0.5 * sign;
      EXPECT_NEAR(diff, expected, 1e-6) << c << "," << j;
    }
  }
}

TEST(TrainProtonet, SelectsProjectedCheckpoint) {
  auto model = ProtoNetModel::create(fixtures::tiny_arch(), 19);
  const auto train = fixtures::tiny_images(4, 20);
  const auto val = fixtures::tiny_images(3, 21);
  const auto out = train_protonet(model, train, val, tiny_config());
  EXPECT_EQ(out.checkpoints.size(), 7u);
  EXPECT_TRUE(out.best().projected);
  EXPECT_TRUE(out.best().model.prototypes().projected());
  for (const auto& c : out.checkpoints) {
    if (c.projected) EXPECT_LE(c.val_accuracy, out.best().val_accuracy);
  }
}

TEST(JointTrain, RejectsEmptyTrainingSet) {
  auto model = ProtoNetModel::create(fixtures::tiny_arch(), 22);
  EXPECT_THROW(joint_train(model, {}, {}, tiny_config()), std::invalid_argument);
}
