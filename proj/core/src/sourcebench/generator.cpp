#include "protoaudit/sourcebench/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace protoaudit::sourcebench {

std::string to_string(Hospital h) { return h == Hospital::kH1 ? "H1" : "H2"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

std::string to_string(Mode m) { return m == Mode::kPneumonia ? "pneumonia" : "abnormality"; }

std::string class_name(int label, Mode mode) {
  if (mode == Mode::kPneumonia) return label == kPositive ? "P" : "NP";
  return label == kPositive ? "abnormal" : "normal";
}

Hospital hospital_from_string(const std::string& s) {
  if (s == "H1") return Hospital::kH1;
  if (s == "H2") return Hospital::kH2;
  throw std::invalid_argument("unknown hospital '" + s + "' (expected H1 or H2)");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, val or test)");
}

Mode mode_from_string(const std::string& s) {
  if (s == "pneumonia") return Mode::kPneumonia;
  if (s == "abnormality") return Mode::kAbnormality;
  throw std::invalid_argument("unknown mode '" + s + "' (expected pneumonia or abnormality)");
}

int class_from_string(const std::string& s) {
  if (s == "P" || s == "abnormal" || s == "1") return kPositive;
  if (s == "NP" || s == "normal" || s == "0") return kNegative;
  throw std::invalid_argument("unknown class '" + s + "'");
}

void GeneratorConfig::validate() const {
  if (pool_size < 1 || val_size < 1 || test_size < 1) {
    throw std::invalid_argument("GeneratorConfig: sizes must be >= 1");
  }
  if (!(tag_strength >= 0.0 && tag_strength <= 1.0)) {
    throw std::invalid_argument("GeneratorConfig: tag_strength must lie in [0,1]");
  }
  if (!(lesion_contrast >= 0.0 && lesion_contrast <= 1.0)) {
    throw std::invalid_argument("GeneratorConfig: lesion_contrast must lie in [0,1]");
  }
  if (pool_size >= 100000 || val_size >= 100000 || test_size >= 100000) {
    throw std::invalid_argument("GeneratorConfig: sizes must stay below 100000");
  }
}

std::size_t GeneratorConfig::size_of(Split split) const {
  switch (split) {
    case Split::kTrain: return pool_size;
    case Split::kVal: return val_size;
    case Split::kTest: return test_size;
  }
  return pool_size;
}

GeneratorConfig GeneratorConfig::reference_sizes() {
  GeneratorConfig c;
  c.pool_size = 1099;
  c.val_size = 187;
  c.test_size = 145;
  return c;
}

namespace {

constexpr std::size_t kN = kImageSize;

// 3x5 glyphs, rows top to bottom, 3 bits each (MSB = left column).
constexpr std::array<std::uint8_t, 5> kGlyphL{0b100, 0b100, 0b100, 0b100, 0b111};
constexpr std::array<std::uint8_t, 5> kGlyph1{0b010, 0b110, 0b010, 0b010, 0b111};
constexpr std::array<std::uint8_t, 5> kGlyphR{0b110, 0b101, 0b110, 0b101, 0b101};
constexpr std::array<std::uint8_t, 5> kGlyph2{0b111, 0b001, 0b111, 0b100, 0b111};


constexpr std::size_t kTagTop = 3;
constexpr std::size_t kTagScale = 2;
constexpr std::size_t kTagLeftH1 = 3;
constexpr std::size_t kTagLeftH2 = 47;

void stamp_glyph(Mask& mask, const std::array<std::uint8_t, 5>& glyph, std::size_t top,
                 std::size_t left) {
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      if (!((glyph[r] >> (2 - c)) & 1u)) continue;
      for (std::size_t dy = 0; dy < kTagScale; ++dy) {
        for (std::size_t dx = 0; dx < kTagScale; ++dx) {
          mask[(top + r * kTagScale + dy) * kN + left + c * kTagScale + dx] = 1;
        }
      }
    }
  }
}

double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

Mask tag_glyph(Hospital hospital) {
  Mask mask(kImagePixels, 0);
  const std::size_t glyph_width = 3 * kTagScale + kTagScale;
  if (hospital == Hospital::kH1) {
    stamp_glyph(mask, kGlyphL, kTagTop, kTagLeftH1);
    stamp_glyph(mask, kGlyph1, kTagTop, kTagLeftH1 + glyph_width);
  } else {
    stamp_glyph(mask, kGlyphR, kTagTop, kTagLeftH2);
    stamp_glyph(mask, kGlyph2, kTagTop, kTagLeftH2 + glyph_width);
  }
  return mask;
}

Hospital hospital_from_tag(const Mask& tag_mask) {
  if (tag_mask.size() != kImagePixels || mask_empty(tag_mask)) {
    throw std::invalid_argument("hospital_from_tag: empty tag mask");
  }
  double sum_x = 0.0, count = 0.0;
  for (std::size_t i = 0; i < tag_mask.size(); ++i) {
    if (!tag_mask[i]) continue;
    sum_x += static_cast<double>(i % kN);
    count += 1.0;
  }
  return sum_x / count < kN / 2.0 ? Hospital::kH1 : Hospital::kH2;
}

PhantomParams draw_phantom(numerics::Rng& rng, int label, Mode mode) {
  PhantomParams p;
  p.body_level = rng.uniform(0.25, 0.35);
  p.gradient_y = rng.uniform(-0.08, 0.08);
  p.gradient_x = rng.uniform(-0.05, 0.05);
  p.lung_level = rng.uniform(0.08, 0.16);
  const double shift_x = rng.uniform(-2.0, 2.0);
  const double spread = rng.uniform(-1.5, 1.5);
  p.lung_cx[0] = 20.0 + shift_x - spread;
  p.lung_cx[1] = 44.0 + shift_x + spread;
  p.lung_cy = 35.0 + rng.uniform(-2.0, 2.0);
  p.lung_ax = rng.uniform(8.0, 10.0);
  p.lung_ay = rng.uniform(15.0, 18.0);
  p.rib_period = rng.uniform(5.0, 7.0);
  p.rib_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.rib_amplitude = rng.uniform(0.02, 0.05);
  p.noise_sigma = 0.03;
  p.noise_seed = rng.next_u64();

  if (label != kPositive) return p;
  const int side = rng.below(2) == 0 ? 0 : 1;
  p.lesion_cx = p.lung_cx[side] + rng.uniform(-0.45, 0.45) * p.lung_ax;
  p.lesion_cy = p.lung_cy + rng.uniform(-0.55, 0.55) * p.lung_ay;
  p.lesion_angle = rng.uniform(0.0, std::numbers::pi);
  LesionKind kind = LesionKind::kOpacity;
  if (mode == Mode::kAbnormality) {
    kind = static_cast<LesionKind>(1 + rng.below(3));
  }
  p.lesion = kind;
  switch (kind) {
    case LesionKind::kOpacity:
      p.lesion_ax = rng.uniform(3.0, 5.5);
      p.lesion_ay = rng.uniform(3.0, 5.5);
      break;
    case LesionKind::kStreak:
      p.lesion_ax = rng.uniform(6.0, 9.0);
      p.lesion_ay = rng.uniform(1.0, 1.5);
      break;
    case LesionKind::kNodule:
      p.lesion_ax = p.lesion_ay = rng.uniform(2.0, 3.0);
      break;
    case LesionKind::kNone:
      break;
  }
  return p;
}

RenderedImage render_phantom(const PhantomParams& p, Hospital hospital, double tag_strength,
                             double lesion_contrast, const RenderOptions& options) {
  RenderedImage img;
  img.pixels = numerics::Tensor({1, kN, kN});
  img.tag_mask = tag_glyph(hospital);
  img.lesion_mask.assign(kImagePixels, 0);
  numerics::Rng noise(p.noise_seed);

  const double cos_a = std::cos(p.lesion_angle), sin_a = std::sin(p.lesion_angle);
  const double lesion_gain = p.lesion == LesionKind::kNodule ? 1.5 : 1.0;
  const bool draw_lesion = options.lesion && p.lesion != LesionKind::kNone;
  const double blur_edge = 1.0 + 2.0 / std::max(1.0, std::min(p.lesion_ax, p.lesion_ay));

  for (std::size_t y = 0; y < kN; ++y) {
    for (std::size_t x = 0; x < kN; ++x) {
      const double fy = static_cast<double>(y), fx = static_cast<double>(x);
      const double gy = fy / (kN - 1) - 0.5, gx = fx / (kN - 1) - 0.5;

      double v = 0.08 + 0.04 * gy;
      const double body_r = std::hypot((fx - 32.0) / 28.0, (fy - 38.0) / 30.0);
      const double body = 1.0 - smoothstep(0.95, 1.05, body_r);
      const double tissue = p.body_level + p.gradient_y * gy + p.gradient_x * gx;
      v = v * (1.0 - body) + tissue * body;

      for (double cx : p.lung_cx) {
        const double r = std::hypot((fx - cx) / p.lung_ax, (fy - p.lung_cy) / p.lung_ay);
        const double inside = 1.0 - smoothstep(0.9, 1.1, r);
        if (inside <= 0.0) continue;
        const double lung = p.lung_level +
                            p.rib_amplitude * std::sin(2.0 * std::numbers::pi * fy / p.rib_period + p.rib_phase);
        v = v * (1.0 - inside) + lung * inside;
      }

      if (draw_lesion) {
        const double dx = fx - p.lesion_cx, dy = fy - p.lesion_cy;
        const double u = (cos_a * dx + sin_a * dy) / p.lesion_ax;
        const double w = (-sin_a * dx + cos_a * dy) / p.lesion_ay;
        const double q = std::sqrt(u * u + w * w);
        double f = 0.0;
        if (q <= 1.0) {
          f = 1.0;
          img.lesion_mask[y * kN + x] = 1;
        } else if (q < blur_edge) {
          f = 1.0 - smoothstep(1.0, blur_edge, q);
        }
        v += lesion_gain * lesion_contrast * f;
      }

      if (options.noise) v += p.noise_sigma * noise.normal();
      if (options.tag && img.tag_mask[y * kN + x]) v += tag_strength;
      v = std::clamp(v, 0.0, 1.0);
      img.pixels[y * kN + x] = static_cast<float>(std::round(v * 255.0) / 255.0);
    }
  }
  if (!options.tag) img.tag_mask.assign(kImagePixels, 0);
  return img;
}

std::uint64_t record_id(Split split, Hospital h, int label, std::size_t index) {
  return ((static_cast<std::uint64_t>(split) * 2 + static_cast<std::uint64_t>(h)) * 2 +
          static_cast<std::uint64_t>(label)) * 100000 + index + 1;
}

ImageRecord generate_record(const GeneratorConfig& config, Split split, Hospital h, int label,
                            std::size_t index, const RenderOptions& options) {
  numerics::Rng rng(numerics::derive_seed(
      config.seed, {static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(h),
                    static_cast<std::uint64_t>(label), index}));
  const PhantomParams params = draw_phantom(rng, label, config.mode);
  RenderedImage img = render_phantom(params, h, config.tag_strength, config.lesion_contrast, options);
  ImageRecord rec;
  rec.id = record_id(split, h, label, index);
  rec.pixels = std::move(img.pixels);
  rec.label = label;
  rec.hospital = h;
  rec.split = split;
  rec.tag_mask = std::move(img.tag_mask);
  rec.lesion_mask = std::move(img.lesion_mask);
  return rec;
}

Pools generate_pools(const GeneratorConfig& config) {
  config.validate();
  std::array<Dataset, 12> cells;
  Pools pools(config, std::move(cells));
  for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (Hospital h : {Hospital::kH1, Hospital::kH2}) {
      for (int label : {kNegative, kPositive}) {
        Dataset& cell = pools.at(h, label, split);
        const std::size_t n = config.size_of(split);
        cell.reserve(n);
        for (std::size_t i = 0; i < n; ++i) cell.push_back(generate_record(config, split, h, label, i));
      }
    }
  }
  return pools;
}

std::size_t Pools::total() const {
  std::size_t n = 0;
  for (const auto& c : cells_) n += c.size();
  return n;
}

Pools Pools::from_records(const GeneratorConfig& config, const Dataset& records) {
  Pools pools(config, {});
  for (const auto& rec : records) pools.at(rec.hospital, rec.label, rec.split).push_back(rec);
  for (auto& cell : pools.cells_) {
    std::sort(cell.begin(), cell.end(),
              [](const ImageRecord& a, const ImageRecord& b) { return a.id < b.id; });
  }
  return pools;
}

Dataset Pools::flatten() const {
  Dataset out;
  out.reserve(total());
  for (const auto& c : cells_) out.insert(out.end(), c.begin(), c.end());
  return out;
}

}  // namespace protoaudit::sourcebench
