#include "protoaudit/sourcebench/mixer.hpp"

#include <stdexcept>

namespace protoaudit::sourcebench {

MixSpec::MixSpec(int x_percent) : x(x_percent) {
  if (x < 0 || x > 100 || x % 10 != 0) {
    throw std::invalid_argument("mix percentage must be one of 0, 10, ..., 100 (got " +
                                std::to_string(x) + ")");
  }
}

std::string MixSpec::name() const {
  return std::to_string(x) + "H1-" + std::to_string(y()) + "H2";
}

std::vector<int> sweep_points() {
  std::vector<int> xs;
  for (int x = 0; x <= 100; x += 10) xs.push_back(x);
  return xs;
}

std::string to_string(TestVariant v) {
  switch (v) {
    case TestVariant::kTest100H1: return "Test-100H1";
    case TestVariant::kTest100H2: return "Test-100H2";
    case TestVariant::kTest5050: return "Test-50-50";
  }
  return "Test-50-50";
}

TestVariant test_variant_from_string(const std::string& s) {
  if (s == "Test-100H1" || s == "100H1") return TestVariant::kTest100H1;
  if (s == "Test-100H2" || s == "100H2") return TestVariant::kTest100H2;
  if (s == "Test-50-50" || s == "50-50") return TestVariant::kTest5050;
  throw std::invalid_argument("unknown test variant '" + s + "'");
}

std::vector<TestVariant> all_test_variants() {
  return {TestVariant::kTest100H1, TestVariant::kTest100H2, TestVariant::kTest5050};
}

CellCount split_counts(int pct, std::size_t class_size) {
  if (pct < 0 || pct > 100) throw std::invalid_argument("percentage out of range");
  const std::size_t h1 = (static_cast<std::size_t>(pct) * class_size + 50) / 100;
  return {h1, class_size - h1};
}

namespace {

void take(Dataset& out, const Dataset& cell, std::size_t count, const std::string& what) {
  if (count > cell.size()) {
    throw std::out_of_range(what + ": requested " + std::to_string(count) + " images but pool holds " +
                            std::to_string(cell.size()));
  }
  out.insert(out.end(), cell.begin(), cell.begin() + static_cast<std::ptrdiff_t>(count));
}

}  // namespace

Dataset mix(const MixSpec& spec, const Pools& pools, Split split) {
  const std::size_t class_size = pools.config().size_of(split);
  const CellCount pos = split_counts(spec.x, class_size);
  const CellCount neg = split_counts(100 - spec.x, class_size);
  Dataset out;
  out.reserve(2 * class_size);
  const std::string ctx = "mix " + spec.name() + " " + to_string(split);
  take(out, pools.at(Hospital::kH1, kPositive, split), pos.h1, ctx);
  take(out, pools.at(Hospital::kH2, kPositive, split), pos.h2, ctx);
  take(out, pools.at(Hospital::kH1, kNegative, split), neg.h1, ctx);
  take(out, pools.at(Hospital::kH2, kNegative, split), neg.h2, ctx);
  return out;
}

Dataset mix_train(const MixSpec& spec, const Pools& pools) { return mix(spec, pools, Split::kTrain); }

Dataset mix_validation(const MixSpec& spec, const Pools& pools) { return mix(spec, pools, Split::kVal); }

Dataset build_test(TestVariant variant, const Pools& pools) {
  const std::size_t n = pools.config().test_size;
  int pos_h1_pct = 50;
  int neg_h1_pct = 50;
  if (variant == TestVariant::kTest100H1) {
    pos_h1_pct = 100;
    neg_h1_pct = 0;
  } else if (variant == TestVariant::kTest100H2) {
    pos_h1_pct = 0;
    neg_h1_pct = 100;
  }
  const CellCount pos = split_counts(pos_h1_pct, n);
  const CellCount neg = split_counts(neg_h1_pct, n);
  const std::string ctx = to_string(variant);
  Dataset out;
  if (variant == TestVariant::kTest5050) {
    // Half of each cell, not the rounding remainder.
    const std::size_t half = (n + 1) / 2;
    take(out, pools.at(Hospital::kH1, kPositive, Split::kTest), half, ctx);
    take(out, pools.at(Hospital::kH2, kPositive, Split::kTest), half, ctx);
    take(out, pools.at(Hospital::kH1, kNegative, Split::kTest), half, ctx);
    take(out, pools.at(Hospital::kH2, kNegative, Split::kTest), half, ctx);
    return out;
  }
  take(out, pools.at(Hospital::kH1, kPositive, Split::kTest), pos.h1, ctx);
  take(out, pools.at(Hospital::kH2, kPositive, Split::kTest), pos.h2, ctx);
  take(out, pools.at(Hospital::kH1, kNegative, Split::kTest), neg.h1, ctx);
  take(out, pools.at(Hospital::kH2, kNegative, Split::kTest), neg.h2, ctx);
  return out;
}

}  // namespace protoaudit::sourcebench
