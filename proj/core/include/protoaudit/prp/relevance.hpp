#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "protoaudit/protonet/model.hpp"
#include "protoaudit/sourcebench/record.hpp"

namespace protoaudit::prp {

using numerics::Tensor;
using protonet::ProtoNetModel;

enum class Method { kPrp, kUpsample };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

enum class BiasPolicy {
  kIgnore,  // biases take no part in redistribution
  kAbsorb,  // positive biases enter the denominator and swallow their share
};

struct PropagationConfig {
  double epsilon = 1e-9;
  BiasPolicy bias = BiasPolicy::kIgnore;
  double temperature = 1.0;

  void validate() const;
};

struct RelevanceMap {
  Tensor values;  // [H, W] at input resolution
  std::size_t prototype = 0;
  std::uint64_t image_id = 0;
  Method method = Method::kPrp;
};

/// Relevance totals at each stage, from the seed down to the input pixels.
/// stage_names[i] labels layer_sums[i].
struct PropagationTrace {
  std::vector<std::string> stage_names;
  std::vector<double> layer_sums;
};

class UnprojectedModelError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// z+ redistribution of `relevance` (shaped like the conv output) onto the
/// conv input `x`.
Tensor zplus_conv(const Tensor& x, const Tensor& weight, const Tensor& bias,
                  const numerics::LayerSpec& layer, const Tensor& relevance,
                  const PropagationConfig& config = {});

/// Decomposes the similarity score s_m of `prototype` on `image` into input
/// pixel relevances.
///
/// The score enters at the winning patch of the prototype's activation map.
/// There it is split over the D feature channels by softmin weights
/// w_d = exp(-(z_d - p_d)^2 / tau) / sum_d' exp(-(z_d' - p_d')^2 / tau), so
/// channels that match the prototype receive the most. Sigmoid and ReLU pass
/// relevance through unchanged, max-pooling routes it to the recorded
/// argmax, and every convolution uses the z+ rule
///   R_j = x_j * sum_k w+_jk R_k / (sum_j' x_j' w+_j'k + eps).
/// With non-negative inputs the map is non-negative and, on a bias-free
/// model, sums to s_m up to the eps leakage.
RelevanceMap prp_map(const ProtoNetModel& model, const Tensor& image, std::size_t prototype,
                     const PropagationConfig& config = {}, std::uint64_t image_id = 0,
                     PropagationTrace* trace = nullptr);

/// Bilinear resize with aligned corners.
Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w);

/// The model-agnostic baseline: bilinear enlargement of a_m to input size.
RelevanceMap upsample_heatmap(const ProtoNetModel& model, const Tensor& image,
                              std::size_t prototype, std::uint64_t image_id = 0);

RelevanceMap explain(const ProtoNetModel& model, const Tensor& image, std::size_t prototype,
                     Method method, const PropagationConfig& config = {},
                     std::uint64_t image_id = 0);

/// Prototypes of `class_id` with distinct (source image, source patch),
/// keeping the first of each group.
std::vector<std::size_t> unique_prototypes(const ProtoNetModel& model, int class_id);

/// Pixelwise sum over unique class prototypes, scaled so the max is 1.
RelevanceMap global_class_map(const ProtoNetModel& model, const Tensor& image, int class_id,
                              Method method, const PropagationConfig& config = {},
                              std::uint64_t image_id = 0);

/// Sum of maps scaled so the max is 1; all-zero input stays zero.
Tensor max_normalized_sum(std::span<const Tensor> maps);

struct ActivatedImage {
  std::uint64_t image_id = 0;
  double score = 0.0;
  RelevanceMap map;
};

struct TopKResult {
  std::vector<ActivatedImage> entries;
  bool truncated = false;  // k exceeded the dataset size
};

/// Images with the highest s_m, descending; ties go to the smaller image id.
TopKResult topk_activated(const ProtoNetModel& model,
                          std::span<const sourcebench::ImageRecord> dataset,
                          std::size_t prototype, std::size_t k,
                          const PropagationConfig& config = {});

/// Rank order used by topk_activated, exposed for reuse: indices sorted by
/// descending score, ties by ascending id.
std::vector<std::size_t> rank_by_score(std::span<const double> scores,
                                       std::span<const std::uint64_t> ids);

struct PixelBox {
  std::size_t y0 = 0, y1 = 0;  // inclusive
  std::size_t x0 = 0, x1 = 0;
  bool contains(std::size_t y, std::size_t x) const {
    return y >= y0 && y <= y1 && x >= x0 && x <= x1;
  }
};

/// Input pixels that can influence feature cell (h, w), clipped to the image.
PixelBox receptive_field(const ProtoNetModel& model, std::size_t h, std::size_t w);

}  // namespace protoaudit::prp
