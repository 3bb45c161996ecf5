#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracle.hpp"
#include "protoaudit/numerics/ops.hpp"
#include "protoaudit/prp/relevance.hpp"

using namespace protoaudit;
using namespace protoaudit::prp;
using numerics::Tensor;
using protonet::Architecture;

namespace {

std::vector<sourcebench::ImageRecord> random_images(std::size_t per_class, std::uint64_t seed) {
  std::vector<sourcebench::ImageRecord> out;
  for (int label = 0; label < 2; ++label) {
    for (std::size_t i = 0; i < per_class; ++i) {
      sourcebench::ImageRecord r;
      r.id = 100 * label + i + 1;
      r.label = label;
      r.pixels = oracle::random_tensor({1, 64, 64}, seed + r.id, 0, 1);
      out.push_back(std::move(r));
    }
  }
  return out;
}

ProtoNetModel projected_default(bool bias, std::uint64_t seed) {
  Architecture arch;
  arch.bias = bias;
  auto model = ProtoNetModel::create(arch, seed);
  model.project_prototypes(random_images(2, seed * 10));
  return model;
}

double total(const Tensor& t) { return numerics::sum(t); }

}  // namespace

TEST(Zplus, SplitsByPositiveContribution) {
  const Tensor x({2, 1, 1}, {1, 1});
  const Tensor w({1, 2, 1, 1}, {3, 1});
  const auto layer = numerics::LayerSpec::conv2d(2, 1, 1, 0, false);
  const auto r = zplus_conv(x, w, Tensor(), layer, Tensor({1, 1, 1}, {4}));
  EXPECT_NEAR(r[0], 3.0, 1e-6);
  EXPECT_NEAR(r[1], 1.0, 1e-6);
}

TEST(Zplus, NegativeWeightsReceiveNothing) {
  const Tensor x({2, 1, 1}, {1, 1});
  const Tensor w({1, 2, 1, 1}, {3, -1});
  const auto layer = numerics::LayerSpec::conv2d(2, 1, 1, 0, false);
  const auto r = zplus_conv(x, w, Tensor(), layer, Tensor({1, 1, 1}, {2}));
  EXPECT_NEAR(r[0], 2.0, 1e-6);
  EXPECT_EQ(r[1], 0.0f);
}

TEST(Prp, SingleConvToyReturnsSeedOnThePixel) {
  Architecture arch;
  arch.input_height = arch.input_width = 1;
  arch.conv_channels = {};
  arch.prototype_depth = 1;
  arch.prototypes_per_class = 1;
  arch.bias = false;
  auto model = ProtoNetModel::create(arch, 1);
  model.addon().params()[0].weight[0] = 2.0f;
  std::vector<sourcebench::ImageRecord> set(2);
  for (int c = 0; c < 2; ++c) {
    set[c].id = c + 1;
    set[c].label = c;
    set[c].pixels = Tensor({1, 1, 1}, {0.7f});
  }
  model.project_prototypes(set);
  const auto map = prp_map(model, set[0].pixels, 0);
  ASSERT_EQ(map.values.shape(), (numerics::Shape{1, 1}));
  EXPECT_NEAR(map.values[0], std::log(1e4), 1e-4);
}

TEST(Prp, RejectsUnprojectedModel) {
  const auto model = ProtoNetModel::create({}, 2);
  EXPECT_THROW(prp_map(model, Tensor({1, 64, 64}, 0.5f), 0), UnprojectedModelError);
}

TEST(PrpProperty, ConservesScoreWithoutBiases) {
  const auto model = projected_default(false, 3);
  const auto images = random_images(3, 77);
  for (std::size_t k = 0; k < images.size(); ++k) {
    const std::size_t m = (k * 7) % 20;
    PropagationTrace trace;
    const auto map = prp_map(model, images[k].pixels, m, {}, images[k].id, &trace);
    const double score = model.forward(images[k].pixels).scores[m];
    EXPECT_LT(oracle::rel_err(total(map.values), score), 1e-3);
    for (double s : trace.layer_sums) EXPECT_LT(oracle::rel_err(s, score), 1e-3);
  }
}

TEST(PrpProperty, NonNegativeAndLocal) {
  const auto model = projected_default(true, 4);
  const auto images = random_images(2, 88);
  for (const auto& rec : images) {
    for (std::size_t m : {0u, 13u}) {
      const auto map = prp_map(model, rec.pixels, m);
      const auto a = model.activation_map(rec.pixels, m);
      const auto box = receptive_field(model, a.h, a.w);
      for (std::size_t y = 0; y < 64; ++y) {
        for (std::size_t x = 0; x < 64; ++x) {
          const float v = map.values.at(y, x);
          EXPECT_GE(v, 0.0f);
          if (!box.contains(y, x)) EXPECT_EQ(v, 0.0f);
        }
      }
    }
  }
}

TEST(ReceptiveField, DefaultArchitectureByHand) {
  const auto model = ProtoNetModel::create({}, 5);
  const auto corner = receptive_field(model, 0, 0);
  EXPECT_EQ(corner.y0, 0u);
  EXPECT_EQ(corner.y1, 14u);
  EXPECT_EQ(corner.x1, 14u);
  const auto mid = receptive_field(model, 4, 4);
  EXPECT_EQ(mid.y0, 25u);
  EXPECT_EQ(mid.y1, 46u);
  EXPECT_EQ(mid.x0, 25u);
  EXPECT_EQ(mid.x1, 46u);
  const auto last = receptive_field(model, 7, 7);
  EXPECT_EQ(last.y1, 63u);
}

TEST(Upsample, ConstantMapStaysConstant) {
  const auto up = bilinear_upsample(Tensor({8, 8}, 0.25f), 64, 64);
  for (float v : up.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Upsample, CheckerCenterIsHalf) {
  const auto up = bilinear_upsample(Tensor({2, 2}, {0, 1, 1, 0}), 3, 3);
  EXPECT_FLOAT_EQ(up.at(1, 1), 0.5f);
  EXPECT_FLOAT_EQ(up.at(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(up.at(0, 2), 1.0f);
}

TEST(Upsample, MatchesPointwiseOracle) {
  const auto m = oracle::random_tensor({8, 8}, 6, 0, 1);
  const auto up = bilinear_upsample(m, 64, 64);
  for (std::size_t y = 0; y < 64; y += 5)
    for (std::size_t x = 0; x < 64; x += 3)
      EXPECT_NEAR(up.at(y, x), oracle::bilinear_at(m, y * 7.0 / 63.0, x * 7.0 / 63.0), 1e-5);
}

TEST(Upsample, HeatmapIsEnlargedActivationMap) {
  const auto model = projected_default(true, 7);
  const auto img = oracle::random_tensor({1, 64, 64}, 8, 0, 1);
  const auto map = upsample_heatmap(model, img, 3);
  EXPECT_EQ(map.method, Method::kUpsample);
  EXPECT_EQ(map.values, bilinear_upsample(model.activation_map(img, 3).values, 64, 64));
}

TEST(GlobalMap, HandNormalization) {
  Tensor a({2, 2}), b({2, 2});
  a[0] = 2;
  b[3] = 4;
  const std::vector<Tensor> maps{a, b};
  const auto g = max_normalized_sum(maps);
  EXPECT_FLOAT_EQ(g[0], 0.5f);
  EXPECT_FLOAT_EQ(g[3], 1.0f);
  EXPECT_EQ(g[1], 0.0f);
  const std::vector<Tensor> zeros{Tensor({2, 2})};
  EXPECT_EQ(max_normalized_sum(zeros), Tensor({2, 2}));
}

TEST(GlobalMap, DuplicateSourcesCountOnce) {
  auto model = projected_default(true, 9);
  auto& bank = model.prototypes();
  const auto own = bank.prototypes_of(1);
  for (std::size_t m : own) {
    for (std::size_t d = 0; d < bank.depth(); ++d) bank.vectors.at(m, d) = bank.vectors.at(own[0], d);
    bank.source[m] = bank.source[own[0]];
  }
  EXPECT_EQ(unique_prototypes(model, 1), std::vector<std::size_t>{own[0]});
  const auto img = oracle::random_tensor({1, 64, 64}, 10, 0, 1);
  const auto single = prp_map(model, img, own[0]).values;
  const std::vector<Tensor> one{single};
  EXPECT_EQ(global_class_map(model, img, 1, Method::kPrp).values, max_normalized_sum(one));
}

TEST(TopK, TiesGoToSmallerId) {
  const std::vector<double> scores{3, 9, 9, 1};
  const std::vector<std::uint64_t> ids{4, 7, 2, 1};
  const auto order = rank_by_score(scores, ids);
  EXPECT_EQ(order[0], 2u);
  EXPECT_EQ(order[1], 1u);
}

TEST(TopKProperty, MatchesFullSortOracle) {
  numerics::Rng rng(11);
  std::vector<double> scores(200);
  std::vector<std::uint64_t> ids(200);
  for (std::size_t i = 0; i < 200; ++i) {
    scores[i] = static_cast<double>(rng.below(20));
    ids[i] = 1000 - i * 3;
  }
  std::vector<std::pair<double, std::uint64_t>> want;
  for (std::size_t i = 0; i < 200; ++i) want.push_back({-scores[i], ids[i]});
  std::sort(want.begin(), want.end());
  const auto order = rank_by_score(scores, ids);
  for (std::size_t r = 0; r < 200; ++r) EXPECT_EQ(ids[order[r]], want[r].second);
}

TEST(TopK, SingleImageAndTruncation) {
  const auto model = projected_default(true, 12);
  auto set = random_images(1, 13);
  set.resize(1);
  const auto r = topk_activated(model, set, 0, 3);
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_EQ(r.entries[0].image_id, set[0].id);
  EXPECT_TRUE(r.truncated);
  EXPECT_THROW(topk_activated(model, set, 0, 0), std::invalid_argument);
}

TEST(PrpConfig, RejectsBadTemperature) {
  PropagationConfig c;
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
