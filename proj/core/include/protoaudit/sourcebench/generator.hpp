#pragma once

#include <array>
#include <cstdint>

#include "protoaudit/numerics/rng.hpp"
#include "protoaudit/sourcebench/record.hpp"

namespace protoaudit::sourcebench {

struct GeneratorConfig {
  std::uint64_t seed = 42;
  std::size_t pool_size = 512;  // per (hospital, class), training split
  std::size_t val_size = 128;   // per (hospital, class)
  std::size_t test_size = 128;  // per (hospital, class)
  double tag_strength = 0.5;
  double lesion_contrast = 0.3;
  Mode mode = Mode::kPneumonia;

  void validate() const;
  std::size_t size_of(Split split) const;

  /// 1099 training images per (hospital, class), 187 validation and 145 test,
  /// i.e. 374 validation and 290 test images per hospital.
  static GeneratorConfig reference_sizes();
};

enum class LesionKind : std::uint8_t { kNone, kOpacity, kStreak, kNodule };

/// Per-image random draw of the phantom's anatomy and pathology.
struct PhantomParams {
  double body_level = 0.5;
  double gradient_y = 0.0;
  double gradient_x = 0.0;
  double lung_level = 0.25;
  double lung_cx[2] = {20.0, 44.0};
  double lung_cy = 34.0;
  double lung_ax = 9.0;
  double lung_ay = 17.0;
  double rib_period = 6.0;
  double rib_phase = 0.0;
  double rib_amplitude = 0.04;
  double noise_sigma = 0.03;
  std::uint64_t noise_seed = 0;

  LesionKind lesion = LesionKind::kNone;
  double lesion_cx = 0.0;
  double lesion_cy = 0.0;
  double lesion_ax = 4.0;
  double lesion_ay = 4.0;
  double lesion_angle = 0.0;
};

struct RenderOptions {
  bool lesion = true;
  bool tag = true;
  bool noise = true;
};

struct RenderedImage {
  numerics::Tensor pixels;  // [1,64,64], quantized to 8 bits
  Mask tag_mask;
  Mask lesion_mask;
};

PhantomParams draw_phantom(numerics::Rng& rng, int label, Mode mode);

/// Procedural chest phantom: background gradient, two elliptical lung fields
/// with sinusoidal rib texture and Gaussian noise, optional lesion, and the
/// hospital's corner tag added at `tag_strength`.
RenderedImage render_phantom(const PhantomParams& params, Hospital hospital,
                             double tag_strength, double lesion_contrast,
                             const RenderOptions& options = {});

/// Glyph block of each hospital (H1 top-left, H2 top-right).
Mask tag_glyph(Hospital hospital);

/// Hospital whose tag occupies the mask, by tag position.
Hospital hospital_from_tag(const Mask& tag_mask);

class Pools {
 public:
  Pools() = default;
  Pools(GeneratorConfig config, std::array<Dataset, 12> cells)
      : config_(config), cells_(std::move(cells)) {}

  const GeneratorConfig& config() const noexcept { return config_; }
  const Dataset& at(Hospital h, int label, Split split) const { return cells_[index(h, label, split)]; }
  Dataset& at(Hospital h, int label, Split split) { return cells_[index(h, label, split)]; }
  std::size_t total() const;

  /// Regroups a flat list (e.g. from a manifest) into cells.
  static Pools from_records(const GeneratorConfig& config, const Dataset& records);
  Dataset flatten() const;

 private:
  static std::size_t index(Hospital h, int label, Split split) {
    return (static_cast<std::size_t>(split) * 2 + static_cast<std::size_t>(h)) * 2 +
           static_cast<std::size_t>(label);
  }

  GeneratorConfig config_;
  std::array<Dataset, 12> cells_;
};

/// Stable id: split, hospital, class and index packed in decimal fields.
std::uint64_t record_id(Split split, Hospital h, int label, std::size_t index);

ImageRecord generate_record(const GeneratorConfig& config, Split split, Hospital h, int label,
                            std::size_t index, const RenderOptions& options = {});

Pools generate_pools(const GeneratorConfig& config);

}  // namespace protoaudit::sourcebench
