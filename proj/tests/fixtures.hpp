#pragma once

#include <vector>

#include "oracle.hpp"
#include "protoaudit/protonet/model.hpp"
#include "protoaudit/sourcebench/record.hpp"

namespace fixtures {

using protoaudit::protonet::Architecture;
using protoaudit::protonet::ProtoNetModel;
using protoaudit::sourcebench::ImageRecord;

/// 1x8x8 input, one conv block of 4 channels, depth 3, 2 prototypes per class.
inline Architecture tiny_arch(bool bias = true) {
  Architecture a;
  a.input_height = a.input_width = 8;
  a.conv_channels = {4};
  a.prototype_depth = 3;
  a.prototypes_per_class = 2;
  a.bias = bias;
  return a;
}

inline std::vector<ImageRecord> tiny_images(std::size_t per_class, std::uint64_t seed, std::size_t side = 8) {
  std::vector<ImageRecord> out;
  for (int label = 0; label < 2; ++label) {
    for (std::size_t i = 0; i < per_class; ++i) {
      ImageRecord r;
      r.id = static_cast<std::uint64_t>(label) * 1000 + i + 1;
      r.label = label;
      r.pixels = oracle::random_tensor({1, side, side}, seed + r.id, 0.0, 1.0);
      // A bright bar on the right for positives makes the toy set learnable.
      if (label == 1) {
        for (std::size_t y = 0; y < side; ++y) r.pixels[y * side + side - 2] = 1.0f;
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace fixtures
