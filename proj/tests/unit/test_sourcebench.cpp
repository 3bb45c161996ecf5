#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "protoaudit/numerics/rng.hpp"
#include "protoaudit/sourcebench/generator.hpp"
#include "protoaudit/sourcebench/manifest.hpp"
#include "protoaudit/sourcebench/mixer.hpp"
#include "protoaudit/sourcebench/pgm.hpp"

using namespace protoaudit;
using namespace protoaudit::sourcebench;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.pool_size = 20;
  c.val_size = 10;
  c.test_size = 9;
  return c;
}

const Pools& small_pools() {
  static const Pools pools = generate_pools(small_config());
  return pools;
}

struct Cells {
  std::size_t n[2][2] = {{0, 0}, {0, 0}};  // [label][hospital]
};

Cells count(const Dataset& d) {
  Cells c;
  for (const auto& r : d) ++c.n[r.label][static_cast<int>(r.hospital)];
  return c;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("protoaudit_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Generator, DeterministicForFixedSeed) {
  const auto a = generate_pools(small_config());
  const auto& b = small_pools();
  const auto fa = a.flatten(), fb = b.flatten();
  ASSERT_EQ(fa.size(), fb.size());
  for (std::size_t i = 0; i < fa.size(); ++i) {
    EXPECT_EQ(fa[i].id, fb[i].id);
    EXPECT_EQ(fa[i].pixels, fb[i].pixels);
    EXPECT_EQ(fa[i].tag_mask, fb[i].tag_mask);
  }
  auto other = small_config();
  other.seed = 43;
  EXPECT_NE(generate_pools(other).flatten()[0].pixels, fa[0].pixels);
}

TEST(Generator, ZeroTagStrengthLeavesPhantomUntouched) {
  numerics::Rng rng(5);
  for (int label = 0; label < 2; ++label) {
    const auto params = draw_phantom(rng, label, Mode::kPneumonia);
    for (auto h : {Hospital::kH1, Hospital::kH2}) {
      RenderOptions no_tag;
      no_tag.tag = false;
      const auto with = render_phantom(params, h, 0.0, 0.3);
      const auto without = render_phantom(params, h, 0.0, 0.3, no_tag);
      EXPECT_EQ(with.pixels, without.pixels);
      EXPECT_FALSE(mask_empty(with.tag_mask));
    }
  }
}

TEST(Generator, LesionContrastMatchesSetting) {
  numerics::Rng rng(6);
  for (int i = 0; i < 10; ++i) {
    const auto params = draw_phantom(rng, kPositive, Mode::kPneumonia);
    RenderOptions bare;
    bare.lesion = false;
    const auto with = render_phantom(params, Hospital::kH1, 0.5, 0.3);
    const auto base = render_phantom(params, Hospital::kH1, 0.5, 0.3, bare);
    double diff = 0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < kImagePixels; ++p) {
      if (!with.lesion_mask[p]) continue;
      diff += with.pixels[p] - base.pixels[p];
      ++n;
    }
    ASSERT_GT(n, 0u);
    EXPECT_NEAR(diff / n, 0.3, 0.05);
  }
}

TEST(Generator, RecordInvariants) {
  std::set<std::uint64_t> ids;
  for (const auto& r : small_pools().flatten()) {
    EXPECT_TRUE(ids.insert(r.id).second);
    EXPECT_EQ(r.pixels.shape(), (numerics::Shape{1, 64, 64}));
    for (float v : r.pixels.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    EXPECT_FALSE(mask_empty(r.tag_mask));
    EXPECT_EQ(!mask_empty(r.lesion_mask), r.label == kPositive);
    EXPECT_EQ(hospital_from_tag(r.tag_mask), r.hospital);
  }
}

TEST(Generator, TagsSitInOppositeTopCorners) {
  const auto h1 = tag_glyph(Hospital::kH1), h2 = tag_glyph(Hospital::kH2);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      if (h1[y * 64 + x]) EXPECT_TRUE(y < 32 && x < 32);
      if (h2[y * 64 + x]) EXPECT_TRUE(y < 32 && x >= 32);
    }
}

TEST(Generator, AbnormalityModeUsesEveryArchetype) {
  numerics::Rng rng(7);
  std::set<LesionKind> kinds;
  for (int i = 0; i < 60; ++i) kinds.insert(draw_phantom(rng, kPositive, Mode::kAbnormality).lesion);
  EXPECT_EQ(kinds.size(), 3u);
  EXPECT_EQ(draw_phantom(rng, kNegative, Mode::kAbnormality).lesion, LesionKind::kNone);
}

TEST(GeneratorConfig, PresetAndValidation) {
  const auto p = GeneratorConfig::reference_sizes();
  EXPECT_EQ(p.pool_size, 1099u);
  EXPECT_EQ(2 * p.val_size, 374u);
  EXPECT_EQ(2 * p.test_size, 290u);
  auto bad = small_config();
  bad.tag_strength = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = small_config();
  bad.pool_size = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Mixer, ZeroPercentComposition) {
  const auto d = mix_train(MixSpec(0), small_pools());
  const auto c = count(d);
  EXPECT_EQ(c.n[kPositive][0], 0u);
  EXPECT_EQ(c.n[kPositive][1], 20u);
  EXPECT_EQ(c.n[kNegative][0], 20u);
  EXPECT_EQ(c.n[kNegative][1], 0u);
}

TEST(Mixer, HundredMirrorsZero) {
  const auto c = count(mix_train(MixSpec(100), small_pools()));
  EXPECT_EQ(c.n[kPositive][0], 20u);
  EXPECT_EQ(c.n[kNegative][1], 20u);
  EXPECT_EQ(c.n[kPositive][1] + c.n[kNegative][0], 0u);
}

TEST(Mixer, FiftyIsQuarterSplit) {
  const auto c = count(mix_train(MixSpec(50), small_pools()));
  for (int l = 0; l < 2; ++l)
    for (int h = 0; h < 2; ++h) EXPECT_EQ(c.n[l][h], 10u);
}

TEST(MixerProperty, BalancedDisjointAndConstantSize) {
  const auto& pools = small_pools();
  std::set<std::uint64_t> test_ids;
  for (auto v : all_test_variants())
    for (const auto& r : build_test(v, pools)) test_ids.insert(r.id);
  for (int x : sweep_points()) {
    const auto train = mix_train(MixSpec(x), pools);
    const auto val = mix_validation(MixSpec(x), pools);
    EXPECT_EQ(train.size(), 40u);
    EXPECT_EQ(val.size(), 20u);
    const auto ct = count(train);
    EXPECT_EQ(ct.n[0][0] + ct.n[0][1], ct.n[1][0] + ct.n[1][1]);
    EXPECT_EQ(ct.n[kPositive][0], split_counts(x, 20).h1);
    EXPECT_EQ(ct.n[kNegative][0], split_counts(100 - x, 20).h1);
    std::set<std::uint64_t> train_ids;
    for (const auto& r : train) train_ids.insert(r.id);
    for (const auto& r : val) {
      EXPECT_EQ(train_ids.count(r.id), 0u);
      EXPECT_EQ(test_ids.count(r.id), 0u);
    }
    for (const auto& r : train) EXPECT_EQ(test_ids.count(r.id), 0u);
  }
}

TEST(Mixer, RoundingSendsRemainderToH2) {
  EXPECT_EQ(split_counts(30, 9).h1, 3u);
  EXPECT_EQ(split_counts(30, 9).h2, 6u);
  EXPECT_EQ(split_counts(50, 9).h1, 5u);
  EXPECT_THROW(split_counts(101, 9), std::invalid_argument);
}

TEST(Mixer, RejectsBadPercentages) {
  EXPECT_THROW(MixSpec(15), std::invalid_argument);
  EXPECT_THROW(MixSpec(-10), std::invalid_argument);
  EXPECT_EQ(MixSpec(30).name(), "30H1-70H2");
}

TEST(TestSets, TableCompositions) {
  const auto& pools = small_pools();
  const auto a = count(build_test(TestVariant::kTest100H1, pools));
  EXPECT_EQ(a.n[kPositive][0], 9u);
  EXPECT_EQ(a.n[kPositive][1], 0u);
  EXPECT_EQ(a.n[kNegative][0], 0u);
  EXPECT_EQ(a.n[kNegative][1], 9u);
  const auto b = count(build_test(TestVariant::kTest100H2, pools));
  for (int l = 0; l < 2; ++l)
    for (int h = 0; h < 2; ++h) EXPECT_EQ(b.n[l][h], a.n[l][1 - h]);
  const auto c = count(build_test(TestVariant::kTest5050, pools));
  for (int l = 0; l < 2; ++l)
    for (int h = 0; h < 2; ++h) EXPECT_EQ(c.n[l][h], 5u);
}

TEST(Manifest, EmptyManifestGivesEmptyDataset) {
  const auto dir = temp_dir("empty_manifest");
  std::ofstream(dir / "m.csv") << kManifestHeader << "\n";
  EXPECT_TRUE(load_manifest(dir / "m.csv").empty());
}

TEST(Manifest, HandWrittenRows) {
  const auto dir = temp_dir("hand_manifest");
  std::vector<std::uint8_t> px(64 * 64, 128);
  write_pgm(dir / "a.pgm", 64, 64, px);
  write_pgm(dir / "b.pgm", 64, 64, px);
  std::ofstream(dir / "m.csv") << kManifestHeader << "\n7,a.pgm,P,H2,test\n9,b.pgm,NP,H1,train\n";
  const auto d = load_manifest(dir / "m.csv");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].id, 7u);
  EXPECT_EQ(d[0].label, kPositive);
  EXPECT_EQ(d[0].hospital, Hospital::kH2);
  EXPECT_EQ(d[0].split, Split::kTest);
  EXPECT_EQ(d[1].label, kNegative);
  EXPECT_TRUE(d[1].tag_mask.empty());
  EXPECT_FLOAT_EQ(d[1].pixels[0], 128.0f / 255.0f);
}

TEST(Manifest, RoundTripKeepsPixels) {
  const auto dir = temp_dir("roundtrip_manifest");
  const auto& pool = small_pools().at(Hospital::kH1, kPositive, Split::kVal);
  const auto path = write_manifest(pool, dir, Mode::kPneumonia);
  const auto back = load_manifest(path);
  ASSERT_EQ(back.size(), pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    EXPECT_EQ(back[i].id, pool[i].id);
    EXPECT_EQ(back[i].label, pool[i].label);
    EXPECT_EQ(back[i].pixels, pool[i].pixels);
  }
}

TEST(Manifest, RejectsBadInput) {
  const auto dir = temp_dir("bad_manifest");
  std::ofstream(dir / "hdr.csv") << "id,file\n";
  EXPECT_THROW(load_manifest(dir / "hdr.csv"), FormatError);
  std::ofstream(dir / "missing.csv") << kManifestHeader << "\n1,nope.pgm,P,H1,train\n";
  EXPECT_THROW(load_manifest(dir / "missing.csv"), FormatError);
  std::ofstream(dir / "cols.csv") << kManifestHeader << "\n1,a.pgm,P\n";
  EXPECT_THROW(load_manifest(dir / "cols.csv"), FormatError);
  std::ofstream(dir / "a.pgm", std::ios::binary) << "P6\n64 64\n255\n";
  std::ofstream(dir / "color.csv") << kManifestHeader << "\n1,a.pgm,P,H1,train\n";
  EXPECT_THROW(load_manifest(dir / "color.csv"), FormatError);
  EXPECT_THROW(load_manifest(dir / "absent.csv"), FormatError);
}

TEST(Pgm, QuantizesAndReloads) {
  EXPECT_EQ(quantize(0.0f), 0);
  EXPECT_EQ(quantize(1.0f), 255);
  EXPECT_EQ(quantize(0.5f), 128);
  const auto dir = temp_dir("pgm");
  const auto& img = small_pools().at(Hospital::kH2, kNegative, Split::kTest)[0].pixels;
  write_pgm(dir / "x.pgm", img);
  const auto g = read_pgm(dir / "x.pgm");
  EXPECT_EQ(g.width, 64u);
  EXPECT_EQ(g.maxval, 255u);
  EXPECT_EQ(to_tensor(g), img);
}
