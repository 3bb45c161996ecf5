#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoaudit/numerics/tensor.hpp"

namespace protoaudit::sourcebench {

inline constexpr std::size_t kImageSize = 64;
inline constexpr std::size_t kImagePixels = kImageSize * kImageSize;

enum class Hospital : std::uint8_t { kH1 = 0, kH2 = 1 };
enum class Split : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };
enum class Mode : std::uint8_t { kPneumonia = 0, kAbnormality = 1 };

// Class ids: 0 = negative (NP / normal), 1 = positive (P / abnormal).
inline constexpr int kNegative = 0;
inline constexpr int kPositive = 1;

std::string to_string(Hospital h);
std::string to_string(Split s);
std::string to_string(Mode m);
std::string class_name(int label, Mode mode);
Hospital hospital_from_string(const std::string& s);
Split split_from_string(const std::string& s);
Mode mode_from_string(const std::string& s);
/// Accepts P/NP, abnormal/normal, 1/0.
int class_from_string(const std::string& s);

/// Row-major 64x64 boolean mask.
using Mask = std::vector<std::uint8_t>;

inline bool mask_empty(const Mask& m) {
  for (auto v : m) {
    if (v) return false;
  }
  return true;
}

struct ImageRecord {
  std::uint64_t id = 0;
  numerics::Tensor pixels;  // [1,64,64], values in [0,1]
  int label = kNegative;
  Hospital hospital = Hospital::kH1;
  Split split = Split::kTrain;
  Mask tag_mask;     // empty vector when unknown (ingested data)
  Mask lesion_mask;  // empty vector when unknown
};

using Dataset = std::vector<ImageRecord>;

}  // namespace protoaudit::sourcebench
