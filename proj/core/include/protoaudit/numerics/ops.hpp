#pragma once

#include <cstdint>
#include <vector>

#include "protoaudit/numerics/tensor.hpp"

namespace protoaudit::numerics {

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output extent of a convolution along one axis; throws ShapeError when the
/// window does not tile the padded input exactly.
std::size_t conv_output_extent(std::size_t extent, std::size_t kernel,
                               Conv2dGeometry geom);

// Cross-correlation, input [C_in,H,W], kernel [C_out,C_in,kh,kw].
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input,
                              const BasicTensor<T>& kernel,
                              const BasicTensor<T>* bias, Conv2dGeometry geom);

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> input;   // empty unless requested
  BasicTensor<T> kernel;
  BasicTensor<T> bias;    // empty when the layer has no bias
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input,
                               const BasicTensor<T>& kernel, bool has_bias,
                               const BasicTensor<T>& grad_output,
                               Conv2dGeometry geom, bool need_input_grad);

/// Transposed correlation: scatters `grad_output` [C_out,H',W'] back through
/// `kernel` onto an input of shape `input_shape`. Shared by backprop and by
/// relevance redistribution.
template <typename T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& grad_output,
                                const BasicTensor<T>& kernel,
                                const Shape& input_shape, Conv2dGeometry geom);

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  // Flat index into the input tensor of the winning element for each output cell.
  std::vector<std::uint32_t> argmax;
};

template <typename T>
PoolResult<T> maxpool2d_forward(const BasicTensor<T>& input, std::size_t window);

/// Routes each output gradient to its recorded argmax.
template <typename T>
BasicTensor<T> maxpool2d_backward(const BasicTensor<T>& grad_output,
                                  const std::vector<std::uint32_t>& argmax,
                                  const Shape& input_shape);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

/// Subgradient 0 at exactly 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& grad_output);

template <typename T>
BasicTensor<T> sigmoid_forward(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& output,
                                const BasicTensor<T>& grad_output);

// input [N], weight [C,N], bias [C]
template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight,
                             const BasicTensor<T>* bias);

template <typename T>
struct DenseGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, bool has_bias,
                             const BasicTensor<T>& grad_output);

}  // namespace protoaudit::numerics
