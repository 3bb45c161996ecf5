#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "protoaudit/numerics/rng.hpp"
#include "protoaudit/prp/relevance.hpp"
#include "protoaudit/sourcebench/record.hpp"

namespace protoaudit::metrics {

using numerics::Tensor;
using protonet::ProtoNetModel;
using sourcebench::ImageRecord;

/// Fraction of correctly classified images. Throws on an empty dataset.
double accuracy(const ProtoNetModel& model, std::span<const ImageRecord> dataset);

/// Replaces the floor(fraction * pixels) least activated pixels (ascending
/// heatmap value, ties to the smaller flat index) with U[0,1) samples drawn
/// from `rng` in rank order.
Tensor mask_least_activated(const Tensor& image, const Tensor& heatmap, double fraction,
                            numerics::Rng& rng);

/// One (prototype, image) term: original score s and score o after masking.
struct ScorePair {
  double original = 0.0;
  double masked = 0.0;
};

/// 100/(n*K) * sum max(0, s - o) / s over all terms.
double average_drop(std::span<const ScorePair> terms);
/// 100/(n*K) * sum [s < o] over all terms.
double average_increase(std::span<const ScorePair> terms);

struct FaithfulnessResult {
  prp::Method method = prp::Method::kPrp;
  double average_drop = 0.0;
  double average_increase = 0.0;
  std::size_t n = 0;  // prototypes of the predicted class
  std::size_t K = 0;  // images
};

/// Masking protocol over the predicted-class prototypes of every image; one
/// masked forward pass per (prototype, image). The masking noise of a term is
/// seeded from `seed`, the image content and the prototype id, so both
/// methods see the same noise and the result ignores dataset order and ids.
FaithfulnessResult faithfulness(const ProtoNetModel& model, std::span<const ImageRecord> dataset,
                                prp::Method method, std::uint64_t seed,
                                const prp::PropagationConfig& config = {});

double average_drop(const ProtoNetModel& model, std::span<const ImageRecord> dataset,
                    prp::Method method, std::uint64_t seed);
double average_increase(const ProtoNetModel& model, std::span<const ImageRecord> dataset,
                        prp::Method method, std::uint64_t seed);

/// Share of the map's mass inside the mask; 0 for an all-zero map.
double tag_relevance_mass(const prp::RelevanceMap& map, const sourcebench::Mask& tag_mask);

struct SourceHistogram {
  // counts[class][hospital]
  std::vector<std::array<std::size_t, 2>> counts;
};

/// Source hospital of every prototype, grouped by owner class. Throws
/// prp::UnprojectedModelError on an unprojected model and
/// std::invalid_argument when a source image is not in `dataset`.
SourceHistogram prototype_source_histogram(const ProtoNetModel& model,
                                           std::span<const ImageRecord> dataset);

struct TagMassReport {
  std::vector<double> per_prototype;      // PRP map of the source image
  std::vector<double> per_class_mean;
  std::vector<int> source_hospital;       // per prototype, 0 = H1, 1 = H2
  double overall_mean = 0.0;
};

/// Tag relevance mass of every prototype on its own source image.
TagMassReport tag_mass_report(const ProtoNetModel& model, std::span<const ImageRecord> train_set,
                              const prp::PropagationConfig& config = {});

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace protoaudit::metrics
