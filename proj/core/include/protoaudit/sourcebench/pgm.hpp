#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "protoaudit/numerics/tensor.hpp"

namespace protoaudit::sourcebench {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::uint32_t maxval = 255;
  std::vector<std::uint16_t> pixels;  // row-major
};

/// Reads binary (P5) or ASCII (P2) graymaps with maxval up to 65535.
/// Colour or bitmap variants raise FormatError.
GrayImage read_pgm(const std::filesystem::path& path);

/// Writes 8-bit binary P5.
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels);

/// round(v * 255) after clamping to [0,1].
std::uint8_t quantize(float v);

/// Writes a [H,W] or [1,H,W] tensor of values in [0,1].
void write_pgm(const std::filesystem::path& path, const numerics::Tensor& image);

/// [1,H,W] tensor of value / maxval.
numerics::Tensor to_tensor(const GrayImage& image);

}  // namespace protoaudit::sourcebench
