#include "protoaudit/prp/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace protoaudit::prp {

using numerics::LayerKind;
using numerics::Network;
using numerics::Shape;

std::string to_string(Method m) { return m == Method::kPrp ? "PRP" : "UPSAMPLE"; }

Method method_from_string(const std::string& s) {
  if (s == "PRP" || s == "prp") return Method::kPrp;
  if (s == "UPSAMPLE" || s == "upsample") return Method::kUpsample;
  throw std::invalid_argument("unknown explanation method '" + s + "'");
}

void PropagationConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("PropagationConfig: epsilon must be > 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("PropagationConfig: temperature must be > 0");
}

namespace {

void require_finite(const Tensor& t, const std::string& stage) {
  if (!t.all_finite()) throw std::runtime_error("prp: non-finite relevance at " + stage);
}

Tensor positive_part(const Tensor& t) {
  Tensor out = t;
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor propagate(const Network<float>& net, const numerics::ForwardCache<float>& cache,
                 Tensor relevance, const PropagationConfig& config, const std::string& prefix,
                 PropagationTrace* trace) {
  for (std::size_t i = net.layers().size(); i-- > 0;) {
    const auto& layer = net.layers()[i];
    const Tensor& x = cache.inputs[i];
    switch (layer.kind) {
      case LayerKind::kConv2d:
        relevance = zplus_conv(x, net.params()[i].weight, net.params()[i].bias, layer, relevance, config);
        break;
      case LayerKind::kMaxPool2d:
        relevance = numerics::maxpool2d_backward(relevance, cache.pool_argmax[i], x.shape());
        break;
      case LayerKind::kRelu:
      case LayerKind::kSigmoid:
        break;
      case LayerKind::kDense:
        throw std::logic_error("prp: dense layers are not part of the feature extractor");
    }
    const std::string stage = prefix + "." + std::to_string(i) + "." + numerics::to_string(layer.kind);
    require_finite(relevance, stage);
    if (trace) {
      trace->stage_names.push_back(stage);
      trace->layer_sums.push_back(numerics::sum(relevance));
    }
  }
  return relevance;
}

Tensor collapse_channels(const Tensor& r) {
  const std::size_t c = r.dim(0), h = r.dim(1), w = r.dim(2);
  Tensor out({h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) acc += r[ch * h * w + p];
    out[p] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace

Tensor zplus_conv(const Tensor& x, const Tensor& weight, const Tensor& bias,
                  const numerics::LayerSpec& layer, const Tensor& relevance,
                  const PropagationConfig& config) {
  const Tensor w_plus = positive_part(weight);
  Tensor b_plus;
  const Tensor* bias_ptr = nullptr;
  if (config.bias == BiasPolicy::kAbsorb && !bias.empty()) {
    b_plus = positive_part(bias);
    bias_ptr = &b_plus;
  }
  Tensor z = numerics::conv2d_forward(x, w_plus, bias_ptr, layer.geometry());
  Tensor ratio(z.shape());
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double denom = static_cast<double>(z[k]) + config.epsilon;
    ratio[k] = static_cast<float>(static_cast<double>(relevance[k]) / denom);
  }
  Tensor back = numerics::conv2d_transpose(ratio, w_plus, x.shape(), layer.geometry());
  for (std::size_t j = 0; j < back.size(); ++j) back[j] *= x[j];
  return back;
}

RelevanceMap prp_map(const ProtoNetModel& model, const Tensor& image, std::size_t prototype,
                     const PropagationConfig& config, std::uint64_t image_id,
                     PropagationTrace* trace) {
  config.validate();
  if (!model.prototypes().projected()) {
    throw UnprojectedModelError("prp_map requires projected prototypes");
  }
  if (prototype >= model.prototypes().size()) throw std::out_of_range("prototype id out of range");

  const auto fwd = model.forward(image, true);
  const double score = fwd.scores[prototype];
  const std::size_t patch = fwd.score_argmax[prototype];
  const std::size_t depth = model.prototypes().depth();
  const std::size_t patches = fwd.z.dim(1) * fwd.z.dim(2);
  const float* proto = model.prototypes().vectors.raw() + prototype * depth;

  std::vector<double> residual(depth);
  for (std::size_t d = 0; d < depth; ++d) {
    const double diff = static_cast<double>(fwd.z[d * patches + patch]) - proto[d];
    residual[d] = diff * diff / config.temperature;
  }
  const double shift = *std::min_element(residual.begin(), residual.end());
  std::vector<double> weight(depth);
  double norm = 0.0;
  for (std::size_t d = 0; d < depth; ++d) {
    weight[d] = std::exp(-(residual[d] - shift));
    norm += weight[d];
  }
  Tensor relevance(fwd.z.shape());
  for (std::size_t d = 0; d < depth; ++d) {
    relevance[d * patches + patch] = static_cast<float>(score * weight[d] / norm);
  }
  if (trace) {
    trace->stage_names = {"score", "prototype_layer"};
    trace->layer_sums = {score, numerics::sum(relevance)};
  }

  relevance = propagate(model.addon(), fwd.addon_cache, std::move(relevance), config, "addon", trace);
  relevance = propagate(model.backbone(), fwd.backbone_cache, std::move(relevance), config, "backbone", trace);

  RelevanceMap map;
  map.values = collapse_channels(relevance);
  map.prototype = prototype;
  map.image_id = image_id;
  map.method = Method::kPrp;
  return map;
}

Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  if (map.rank() != 2) throw numerics::ShapeError("bilinear_upsample expects [H,W]");
  const std::size_t in_h = map.dim(0), in_w = map.dim(1);
  Tensor out({out_h, out_w});
  auto source = [](std::size_t i, std::size_t in, std::size_t out_n) {
    if (in == 1 || out_n == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out_n - 1);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = source(y, in_h, out_h);
    const auto y0 = std::min(static_cast<std::size_t>(sy), in_h - 1);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = source(x, in_w, out_w);
      const auto x0 = std::min(static_cast<std::size_t>(sx), in_w - 1);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = (1.0 - fx) * map.at(y0, x0) + fx * map.at(y0, x1);
      const double bottom = (1.0 - fx) * map.at(y1, x0) + fx * map.at(y1, x1);
      out.at(y, x) = static_cast<float>((1.0 - fy) * top + fy * bottom);
    }
  }
  return out;
}

RelevanceMap upsample_heatmap(const ProtoNetModel& model, const Tensor& image,
                              std::size_t prototype, std::uint64_t image_id) {
  const auto act = model.activation_map(image, prototype);
  RelevanceMap map;
  map.values = bilinear_upsample(act.values, model.architecture().input_height,
                                 model.architecture().input_width);
  map.prototype = prototype;
  map.image_id = image_id;
  map.method = Method::kUpsample;
  return map;
}

RelevanceMap explain(const ProtoNetModel& model, const Tensor& image, std::size_t prototype,
                     Method method, const PropagationConfig& config, std::uint64_t image_id) {
  return method == Method::kPrp ? prp_map(model, image, prototype, config, image_id)
                                : upsample_heatmap(model, image, prototype, image_id);
}

std::vector<std::size_t> unique_prototypes(const ProtoNetModel& model, int class_id) {
  const auto& bank = model.prototypes();
  std::vector<std::size_t> out;
  std::vector<std::tuple<std::uint64_t, std::uint32_t, std::uint32_t>> seen;
  for (std::size_t m : bank.prototypes_of(class_id)) {
    if (!bank.source[m]) {
      out.push_back(m);
      continue;
    }
    const auto key = std::make_tuple(bank.source[m]->image_id, bank.source[m]->h, bank.source[m]->w);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);
    out.push_back(m);
  }
  return out;
}

Tensor max_normalized_sum(std::span<const Tensor> maps) {
  if (maps.empty()) throw std::invalid_argument("max_normalized_sum: no maps");
  Tensor total(maps.front().shape());
  for (const auto& m : maps) {
    if (m.shape() != total.shape()) throw numerics::ShapeError("max_normalized_sum: shape mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) total[i] += m[i];
  }
  const float peak = *std::max_element(total.data().begin(), total.data().end());
  if (peak > 0.0f) {
    for (float& v : total.data()) v /= peak;
  }
  return total;
}

RelevanceMap global_class_map(const ProtoNetModel& model, const Tensor& image, int class_id,
                              Method method, const PropagationConfig& config,
                              std::uint64_t image_id) {
  std::vector<Tensor> maps;
  for (std::size_t m : unique_prototypes(model, class_id)) {
    maps.push_back(explain(model, image, m, method, config, image_id).values);
  }
  RelevanceMap out;
  if (maps.empty()) {
    out.values = Tensor({model.architecture().input_height, model.architecture().input_width});
  } else {
    out.values = max_normalized_sum(maps);
  }
  out.prototype = 0;
  out.image_id = image_id;
  out.method = method;
  return out;
}

std::vector<std::size_t> rank_by_score(std::span<const double> scores,
                                       std::span<const std::uint64_t> ids) {
  if (scores.size() != ids.size()) throw std::invalid_argument("rank_by_score: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  return order;
}

TopKResult topk_activated(const ProtoNetModel& model,
                          std::span<const sourcebench::ImageRecord> dataset,
                          std::size_t prototype, std::size_t k,
                          const PropagationConfig& config) {
  if (k < 1) throw std::invalid_argument("topk_activated: k must be >= 1");
  std::vector<double> scores(dataset.size());
  std::vector<std::uint64_t> ids(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    scores[i] = model.similarity_scores(dataset[i].pixels).at(prototype).score;
    ids[i] = dataset[i].id;
  }
  const auto order = rank_by_score(scores, ids);
  TopKResult result;
  result.truncated = k > dataset.size();
  const std::size_t take = std::min(k, dataset.size());
  for (std::size_t r = 0; r < take; ++r) {
    const auto& rec = dataset[order[r]];
    result.entries.push_back(
        {rec.id, scores[order[r]], prp_map(model, rec.pixels, prototype, config, rec.id)});
  }
  return result;
}

PixelBox receptive_field(const ProtoNetModel& model, std::size_t h, std::size_t w) {
  std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(h), y1 = y0;
  std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(w), x1 = x0;
  auto walk = [&](const Network<float>& net) {
    for (std::size_t i = net.layers().size(); i-- > 0;) {
      const auto& l = net.layers()[i];
      if (l.kind == LayerKind::kConv2d) {
        const auto s = static_cast<std::ptrdiff_t>(l.stride);
        const auto p = static_cast<std::ptrdiff_t>(l.padding);
        y0 = y0 * s - p;
        y1 = y1 * s - p + static_cast<std::ptrdiff_t>(l.kernel_h) - 1;
        x0 = x0 * s - p;
        x1 = x1 * s - p + static_cast<std::ptrdiff_t>(l.kernel_w) - 1;
      } else if (l.kind == LayerKind::kMaxPool2d) {
        const auto win = static_cast<std::ptrdiff_t>(l.window);
        y0 *= win;
        y1 = y1 * win + win - 1;
        x0 *= win;
        x1 = x1 * win + win - 1;
      }
    }
  };
  walk(model.addon());
  walk(model.backbone());
  const auto max_y = static_cast<std::ptrdiff_t>(model.architecture().input_height) - 1;
  const auto max_x = static_cast<std::ptrdiff_t>(model.architecture().input_width) - 1;
  PixelBox box;
  box.y0 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y0, 0, max_y));
  box.y1 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y1, 0, max_y));
  box.x0 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x0, 0, max_x));
  box.x1 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x1, 0, max_x));
  return box;
}

}  // namespace protoaudit::prp
