#include "protoaudit/numerics/network.hpp"

#include <stdexcept>

namespace protoaudit::numerics {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool2d: return "maxpool2d";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kDense: return "dense";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "conv2d") return LayerKind::kConv2d;
  if (name == "relu") return LayerKind::kRelu;
  if (name == "maxpool2d") return LayerKind::kMaxPool2d;
  if (name == "sigmoid") return LayerKind::kSigmoid;
  if (name == "dense") return LayerKind::kDense;
  throw std::invalid_argument("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel,
                            std::size_t padding, bool bias, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kConv2d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = kernel;
  s.padding = padding;
  s.stride = stride;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::kSigmoid;
  return s;
}

LayerSpec LayerSpec::maxpool2d(std::size_t window) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool2d;
  s.window = window;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.in_channels = in;
  s.out_channels = out;
  s.bias = bias;
  return s;
}

void LayerSpec::validate() const {
  switch (kind) {
    case LayerKind::kConv2d:
      if (kernel_h < 1 || kernel_w < 1) throw ShapeError("conv2d kernel dims must be >= 1");
      if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
      if (in_channels < 1 || out_channels < 1) throw ShapeError("conv2d channels must be >= 1");
      break;
    case LayerKind::kMaxPool2d:
      if (window < 1) throw ShapeError("maxpool2d window must be >= 1");
      break;
    case LayerKind::kDense:
      if (in_channels < 1 || out_channels < 1) throw ShapeError("dense dims must be >= 1");
      break;
    default:
      break;
  }
}

Shape infer_output_shape(const LayerSpec& layer, const Shape& in) {
  layer.validate();
  switch (layer.kind) {
    case LayerKind::kConv2d: {
      if (in.size() != 3 || in[0] != layer.in_channels) {
        throw ShapeError("conv2d expects [" + std::to_string(layer.in_channels) +
                         ",H,W], got " + shape_to_string(in));
      }
      return {layer.out_channels, conv_output_extent(in[1], layer.kernel_h, layer.geometry()),
              conv_output_extent(in[2], layer.kernel_w, layer.geometry())};
    }
    case LayerKind::kMaxPool2d:
      if (in.size() != 3 || in[1] % layer.window || in[2] % layer.window) {
        throw ShapeError("maxpool2d window does not divide " + shape_to_string(in));
      }
      return {in[0], in[1] / layer.window, in[2] / layer.window};
    case LayerKind::kDense:
      if (shape_numel(in) != layer.in_channels) {
        throw ShapeError("dense expects " + std::to_string(layer.in_channels) + " inputs");
      }
      return {layer.out_channels};
    case LayerKind::kRelu:
    case LayerKind::kSigmoid:
      return in;
  }
  return in;
}

template <typename T>
void GradientTape<T>::accumulate(const GradientTape& other, T scale) {
  if (other.grads.size() != grads.size()) throw ShapeError("gradient tapes are not aligned");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto add = [scale](BasicTensor<T>& dst, const BasicTensor<T>& src) {
      if (src.empty()) return;
      if (dst.shape() != src.shape()) throw ShapeError("gradient buffer shape mismatch");
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
    };
    add(grads[i].weight, other.grads[i].weight);
    add(grads[i].bias, other.grads[i].bias);
  }
}

template <typename T>
void GradientTape<T>::scale(T factor) {
  for (auto& g : grads) {
    for (T& v : g.weight.data()) v *= factor;
    for (T& v : g.bias.data()) v *= factor;
  }
}

template <typename T>
Network<T>::Network(std::vector<LayerSpec> layers, Shape input_shape)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)) {
  shapes_.push_back(input_shape_);
  params_.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    shapes_.push_back(infer_output_shape(l, shapes_.back()));
    if (l.kind == LayerKind::kConv2d) {
      params_[i].weight = BasicTensor<T>({l.out_channels, l.in_channels, l.kernel_h, l.kernel_w});
      if (l.bias) params_[i].bias = BasicTensor<T>({l.out_channels});
    } else if (l.kind == LayerKind::kDense) {
      params_[i].weight = BasicTensor<T>({l.out_channels, l.in_channels});
      if (l.bias) params_[i].bias = BasicTensor<T>({l.out_channels});
    }
  }
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.weight.size() + p.bias.size();
  return n;
}

template <typename T>
BasicTensor<T> Network<T>::forward(const BasicTensor<T>& input) const {
  return forward_cached(input).inputs.back();
}

template <typename T>
ForwardCache<T> Network<T>::forward_cached(const BasicTensor<T>& input) const {
  if (input.shape() != input_shape_) {
    throw ShapeError("network input must be " + shape_to_string(input_shape_) + ", got " +
                     shape_to_string(input.shape()));
  }
  ForwardCache<T> cache;
  cache.inputs.reserve(layers_.size() + 1);
  cache.pool_argmax.resize(layers_.size());
  cache.inputs.push_back(input);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const BasicTensor<T>& x = cache.inputs.back();
    const BasicTensor<T>* bias = params_[i].bias.empty() ? nullptr : &params_[i].bias;
    switch (l.kind) {
      case LayerKind::kConv2d:
        cache.inputs.push_back(conv2d_forward(x, params_[i].weight, bias, l.geometry()));
        break;
      case LayerKind::kRelu:
        cache.inputs.push_back(relu_forward(x));
        break;
      case LayerKind::kSigmoid:
        cache.inputs.push_back(sigmoid_forward(x));
        break;
      case LayerKind::kMaxPool2d: {
        auto pooled = maxpool2d_forward(x, l.window);
        cache.pool_argmax[i] = std::move(pooled.argmax);
        cache.inputs.push_back(std::move(pooled.output));
        break;
      }
      case LayerKind::kDense:
        cache.inputs.push_back(dense_forward(x, params_[i].weight, bias));
        break;
    }
  }
  return cache;
}

template <typename T>
GradientTape<T> Network<T>::zero_tape() const {
  GradientTape<T> tape;
  tape.grads.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].weight.empty()) tape.grads[i].weight = BasicTensor<T>::zeros_like(params_[i].weight);
    if (!params_[i].bias.empty()) tape.grads[i].bias = BasicTensor<T>::zeros_like(params_[i].bias);
  }
  return tape;
}

template <typename T>
GradientTape<T> Network<T>::backward(const ForwardCache<T>& cache,
                                     const BasicTensor<T>& grad_output,
                                     bool need_input_grad) const {
  if (!cache.valid() || cache.inputs.size() != layers_.size() + 1) {
    throw std::logic_error("backward called without a cached forward pass");
  }
  if (grad_output.shape() != cache.output().shape()) {
    throw ShapeError("backward seed gradient must match network output shape");
  }
  GradientTape<T> tape = zero_tape();
  BasicTensor<T> grad = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const LayerSpec& l = layers_[i];
    const BasicTensor<T>& x = cache.inputs[i];
    const bool want_input = i > 0 || need_input_grad;
    switch (l.kind) {
      case LayerKind::kConv2d: {
        auto g = conv2d_backward(x, params_[i].weight, l.bias, grad, l.geometry(), want_input);
        tape.grads[i].weight = std::move(g.kernel);
        if (l.bias) tape.grads[i].bias = std::move(g.bias);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::kRelu:
        grad = relu_backward(x, grad);
        break;
      case LayerKind::kSigmoid:
        grad = sigmoid_backward(cache.inputs[i + 1], grad);
        break;
      case LayerKind::kMaxPool2d:
        grad = maxpool2d_backward(grad, cache.pool_argmax[i], x.shape());
        break;
      case LayerKind::kDense: {
        auto g = dense_backward(x, params_[i].weight, l.bias, grad);
        tape.grads[i].weight = std::move(g.weight);
        if (l.bias) tape.grads[i].bias = std::move(g.bias);
        grad = g.input.reshaped(x.shape());
        break;
      }
    }
  }
  if (need_input_grad) tape.input_grad = std::move(grad);
  return tape;
}

template struct GradientTape<float>;
template struct GradientTape<double>;
template class Network<float>;
template class Network<double>;

}  // namespace protoaudit::numerics
