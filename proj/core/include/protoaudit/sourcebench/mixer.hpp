#pragma once

#include <string>
#include <vector>

#include "protoaudit/sourcebench/generator.hpp"

namespace protoaudit::sourcebench {

/// xH1-yH2 composition: x percent of the positive class from H1, the rest
/// from H2; the negative class mirrors it so both classes stay balanced.
struct MixSpec {
  int x = 50;

  explicit MixSpec(int x_percent);
  int y() const { return 100 - x; }
  std::string name() const;  // e.g. "30H1-70H2"
};

/// All eleven compositions 0, 10, ..., 100.
std::vector<int> sweep_points();

enum class TestVariant { kTest100H1, kTest100H2, kTest5050 };

std::string to_string(TestVariant v);
TestVariant test_variant_from_string(const std::string& s);
std::vector<TestVariant> all_test_variants();

struct CellCount {
  std::size_t h1 = 0;
  std::size_t h2 = 0;
};

/// Images drawn from H1 for a share of `pct` percent of `class_size`,
/// rounded half up; the remainder comes from H2.
CellCount split_counts(int pct, std::size_t class_size);

/// Mixed train or validation set for `spec` (first images of each cell by
/// index). Throws std::out_of_range when a cell is too small.
Dataset mix(const MixSpec& spec, const Pools& pools, Split split);
Dataset mix_train(const MixSpec& spec, const Pools& pools);
Dataset mix_validation(const MixSpec& spec, const Pools& pools);

/// Controlled test sets:
///   Test-100H1: P all from H1, NP all from H2;
///   Test-100H2: P all from H2, NP all from H1;
///   Test-50-50: both classes half from each hospital.
Dataset build_test(TestVariant variant, const Pools& pools);

}  // namespace protoaudit::sourcebench
