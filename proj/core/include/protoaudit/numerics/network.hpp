#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "protoaudit/numerics/ops.hpp"

namespace protoaudit::numerics {

enum class LayerKind { kConv2d, kRelu, kMaxPool2d, kSigmoid, kDense };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t in_channels = 0;   // conv: C_in, dense: N
  std::size_t out_channels = 0;  // conv: C_out, dense: C
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 2;  // maxpool
  bool bias = false;

  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel,
                          std::size_t padding, bool bias, std::size_t stride = 1);
  static LayerSpec relu();
  static LayerSpec sigmoid();
  static LayerSpec maxpool2d(std::size_t window);
  static LayerSpec dense(std::size_t in, std::size_t out, bool bias);

  bool has_parameters() const {
    return kind == LayerKind::kConv2d || kind == LayerKind::kDense;
  }
  Conv2dGeometry geometry() const { return {stride, padding}; }
  void validate() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Activations recorded by a caching forward pass; `inputs[i]` is the input
/// of layer i and `inputs.back()` the final output.
template <typename T>
struct ForwardCache {
  std::vector<BasicTensor<T>> inputs;
  std::vector<std::vector<std::uint32_t>> pool_argmax;  // per layer, empty if not a pool

  bool valid() const { return !inputs.empty(); }
  const BasicTensor<T>& output() const { return inputs.back(); }
};

template <typename T>
struct LayerParams {
  BasicTensor<T> weight;
  BasicTensor<T> bias;  // empty when the layer has no bias
};

/// Per-parameter gradient buffers aligned with Network::params().
template <typename T>
struct GradientTape {
  std::vector<LayerParams<T>> grads;
  BasicTensor<T> input_grad;  // populated on request

  void accumulate(const GradientTape& other, T scale);
  void scale(T factor);
};

/// Ordered stack of layers over a single (un-batched) sample.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(std::vector<LayerSpec> layers, Shape input_shape);

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const noexcept { return shapes_.back(); }
  /// Shape entering each layer, followed by the output shape.
  const std::vector<Shape>& shapes() const noexcept { return shapes_; }

  std::vector<LayerParams<T>>& params() noexcept { return params_; }
  const std::vector<LayerParams<T>>& params() const noexcept { return params_; }

  std::size_t parameter_count() const;

  BasicTensor<T> forward(const BasicTensor<T>& input) const;
  ForwardCache<T> forward_cached(const BasicTensor<T>& input) const;

  /// Reverse-mode pass from `grad_output` (gradient of the loss w.r.t. the
  /// network output). Throws std::logic_error when `cache` is empty.
  GradientTape<T> backward(const ForwardCache<T>& cache,
                           const BasicTensor<T>& grad_output,
                           bool need_input_grad = false) const;

  GradientTape<T> zero_tape() const;

  template <typename U>
  Network<U> cast() const;

 private:
  std::vector<LayerSpec> layers_;
  Shape input_shape_;
  std::vector<Shape> shapes_;
  std::vector<LayerParams<T>> params_;
};

/// Output shape of `layer` applied to `in`; also validates geometry.
Shape infer_output_shape(const LayerSpec& layer, const Shape& in);

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out(layers_, input_shape_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].weight.empty()) out.params()[i].weight = params_[i].weight.template cast<U>();
    if (!params_[i].bias.empty()) out.params()[i].bias = params_[i].bias.template cast<U>();
  }
  return out;
}

}  // namespace protoaudit::numerics
