#include "protoaudit/numerics/ops.hpp"

#include <Eigen/Core>
#include <sstream>

namespace protoaudit::numerics {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel,
                               Conv2dGeometry geom) {
  if (geom.stride == 0) throw ShapeError("conv2d stride must be >= 1");
  if (kernel == 0) throw ShapeError("conv2d kernel dims must be >= 1");
  const std::size_t padded = extent + 2 * geom.padding;
  if (padded < kernel) throw ShapeError("conv2d kernel larger than padded input");
  if ((padded - kernel) % geom.stride != 0) {
    throw ShapeError("conv2d output dims are not integral");
  }
  return (padded - kernel) / geom.stride + 1;
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvDims {
  std::size_t cin, h, w, cout, kh, kw, oh, ow;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

template <typename T>
ConvDims conv_dims(const Shape& input, const BasicTensor<T>& kernel,
                   Conv2dGeometry geom) {
  if (input.size() != 3) throw ShapeError("conv2d input must be [C,H,W]");
  if (kernel.rank() != 4) throw ShapeError("conv2d kernel must be [C_out,C_in,kh,kw]");
  if (kernel.dim(1) != input[0]) {
    throw ShapeError("conv2d channel mismatch: input " + shape_to_string(input) +
                     " kernel " + shape_to_string(kernel.shape()));
  }
  ConvDims d{input[0], input[1], input[2], kernel.dim(0),
             kernel.dim(2), kernel.dim(3), 0, 0};
  d.oh = conv_output_extent(d.h, d.kh, geom);
  d.ow = conv_output_extent(d.w, d.kw, geom);
  return d;
}

bool is_pointwise(const ConvDims& d, Conv2dGeometry geom) {
  return d.kh == 1 && d.kw == 1 && geom.stride == 1 && geom.padding == 0;
}

// col[(ci*kh + ky)*kw + kx, oy*ow + ox]
template <typename T>
std::vector<T> im2col(const T* in, const ConvDims& d, Conv2dGeometry geom) {
  std::vector<T> col(d.patch() * d.pixels(), T{0});
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  const auto stride = static_cast<std::ptrdiff_t>(geom.stride);
  const auto ih = static_cast<std::ptrdiff_t>(d.h);
  const auto iw = static_cast<std::ptrdiff_t>(d.w);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    const T* plane = in + ci * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx, ++row) {
        T* dst = col.data() + row * d.pixels();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy) * stride +
                                   static_cast<std::ptrdiff_t>(ky) - pad;
          if (y < 0 || y >= ih) continue;
          const T* src_row = plane + y * iw;
          T* dst_row = dst + oy * d.ow;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox) * stride +
                                     static_cast<std::ptrdiff_t>(kx) - pad;
            if (x >= 0 && x < iw) dst_row[ox] = src_row[x];
          }
        }
      }
    }
  }
  return col;
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, Conv2dGeometry geom, T* out) {
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  const auto stride = static_cast<std::ptrdiff_t>(geom.stride);
  const auto ih = static_cast<std::ptrdiff_t>(d.h);
  const auto iw = static_cast<std::ptrdiff_t>(d.w);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    T* plane = out + ci * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx, ++row) {
        const T* src = col + row * d.pixels();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy) * stride +
                                   static_cast<std::ptrdiff_t>(ky) - pad;
          if (y < 0 || y >= ih) continue;
          T* dst_row = plane + y * iw;
          const T* src_row = src + oy * d.ow;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox) * stride +
                                     static_cast<std::ptrdiff_t>(kx) - pad;
            if (x >= 0 && x < iw) dst_row[x] += src_row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input,
                              const BasicTensor<T>& kernel,
                              const BasicTensor<T>* bias, Conv2dGeometry geom) {
  const ConvDims d = conv_dims(input.shape(), kernel, geom);
  if (bias && (bias->rank() != 1 || bias->dim(0) != d.cout)) {
    throw ShapeError("conv2d bias must be [C_out]");
  }
  BasicTensor<T> out({d.cout, d.oh, d.ow});
  std::vector<T> col;
  const T* col_ptr = input.raw();
  if (!is_pointwise(d, geom)) {
    col = im2col(input.raw(), d, geom);
    col_ptr = col.data();
  }
  ConstMatMap<T> k(kernel.raw(), static_cast<Eigen::Index>(d.cout),
                   static_cast<Eigen::Index>(d.patch()));
  ConstMatMap<T> c(col_ptr, static_cast<Eigen::Index>(d.patch()),
                   static_cast<Eigen::Index>(d.pixels()));
  MatMap<T> o(out.raw(), static_cast<Eigen::Index>(d.cout),
              static_cast<Eigen::Index>(d.pixels()));
  o.noalias() = k * c;
  if (bias) {
    for (std::size_t co = 0; co < d.cout; ++co) {
      o.row(static_cast<Eigen::Index>(co)).array() += (*bias)[co];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& grad_output,
                                const BasicTensor<T>& kernel,
                                const Shape& input_shape, Conv2dGeometry geom) {
  const ConvDims d = conv_dims(input_shape, kernel, geom);
  if (grad_output.shape() != Shape{d.cout, d.oh, d.ow}) {
    throw ShapeError("conv2d_transpose: gradient shape " +
                     shape_to_string(grad_output.shape()) + " mismatches output");
  }
  ConstMatMap<T> k(kernel.raw(), static_cast<Eigen::Index>(d.cout),
                   static_cast<Eigen::Index>(d.patch()));
  ConstMatMap<T> g(grad_output.raw(), static_cast<Eigen::Index>(d.cout),
                   static_cast<Eigen::Index>(d.pixels()));
  BasicTensor<T> result(input_shape);
  if (is_pointwise(d, geom)) {
    MatMap<T> r(result.raw(), static_cast<Eigen::Index>(d.patch()),
                static_cast<Eigen::Index>(d.pixels()));
    r.noalias() = k.transpose() * g;
    return result;
  }
  std::vector<T> dcol(d.patch() * d.pixels());
  MatMap<T> dc(dcol.data(), static_cast<Eigen::Index>(d.patch()),
               static_cast<Eigen::Index>(d.pixels()));
  dc.noalias() = k.transpose() * g;
  col2im_add(dcol.data(), d, geom, result.raw());
  return result;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input,
                               const BasicTensor<T>& kernel, bool has_bias,
                               const BasicTensor<T>& grad_output,
                               Conv2dGeometry geom, bool need_input_grad) {
  const ConvDims d = conv_dims(input.shape(), kernel, geom);
  if (grad_output.shape() != Shape{d.cout, d.oh, d.ow}) {
    throw ShapeError("conv2d_backward: gradient shape mismatch");
  }
  Conv2dGrads<T> grads;
  std::vector<T> col;
  const T* col_ptr = input.raw();
  if (!is_pointwise(d, geom)) {
    col = im2col(input.raw(), d, geom);
    col_ptr = col.data();
  }
  ConstMatMap<T> c(col_ptr, static_cast<Eigen::Index>(d.patch()),
                   static_cast<Eigen::Index>(d.pixels()));
  ConstMatMap<T> g(grad_output.raw(), static_cast<Eigen::Index>(d.cout),
                   static_cast<Eigen::Index>(d.pixels()));
  grads.kernel = BasicTensor<T>(kernel.shape());
  MatMap<T> dk(grads.kernel.raw(), static_cast<Eigen::Index>(d.cout),
               static_cast<Eigen::Index>(d.patch()));
  dk.noalias() = g * c.transpose();
  if (has_bias) {
    grads.bias = BasicTensor<T>({d.cout});
    for (std::size_t co = 0; co < d.cout; ++co) {
      double acc = 0.0;
      const T* row = grad_output.raw() + co * d.pixels();
      for (std::size_t p = 0; p < d.pixels(); ++p) acc += static_cast<double>(row[p]);
      grads.bias[co] = static_cast<T>(acc);
    }
  }
  if (need_input_grad) {
    grads.input = conv2d_transpose(grad_output, kernel, input.shape(), geom);
  }
  return grads;
}

template <typename T>
PoolResult<T> maxpool2d_forward(const BasicTensor<T>& input, std::size_t window) {
  if (input.rank() != 3) throw ShapeError("maxpool2d input must be [C,H,W]");
  if (window == 0) throw ShapeError("maxpool2d window must be >= 1");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % window != 0 || w % window != 0) {
    throw ShapeError("maxpool2d window " + std::to_string(window) +
                     " does not divide input " + shape_to_string(input.shape()));
  }
  const std::size_t oh = h / window, ow = w / window;
  PoolResult<T> res{BasicTensor<T>({c, oh, ow}), std::vector<std::uint32_t>(c * oh * ow)};
  std::size_t cell = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++cell) {
        std::size_t best = (ch * h + oy * window) * w + ox * window;
        T best_v = input[best];
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = (ch * h + oy * window + ky) * w + ox * window + kx;
            if (input[idx] > best_v) {
              best_v = input[idx];
              best = idx;
            }
          }
        }
        res.output[cell] = best_v;
        res.argmax[cell] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return res;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const BasicTensor<T>& grad_output,
                                  const std::vector<std::uint32_t>& argmax,
                                  const Shape& input_shape) {
  if (argmax.size() != grad_output.size()) {
    throw ShapeError("maxpool2d_backward: argmax map does not match gradient");
  }
  BasicTensor<T> grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_output[i];
  return grad;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& grad_output) {
  if (input.shape() != grad_output.shape()) throw ShapeError("relu_backward shape mismatch");
  BasicTensor<T> grad = grad_output;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > T{0})) grad[i] = T{0};
  }
  return grad;
}

template <typename T>
BasicTensor<T> sigmoid_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (T& v : out.data()) {
    // Split by sign so exp never overflows.
    if (v >= T{0}) {
      v = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T{1} + e);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& output,
                                const BasicTensor<T>& grad_output) {
  if (output.shape() != grad_output.shape()) throw ShapeError("sigmoid_backward shape mismatch");
  BasicTensor<T> grad = grad_output;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    grad[i] *= output[i] * (T{1} - output[i]);
  }
  return grad;
}

template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight,
                             const BasicTensor<T>* bias) {
  if (weight.rank() != 2 || input.size() != weight.dim(1)) {
    throw ShapeError("dense: weight " + shape_to_string(weight.shape()) +
                     " incompatible with input of " + std::to_string(input.size()) +
                     " elements");
  }
  const std::size_t rows = weight.dim(0), cols = weight.dim(1);
  if (bias && (bias->rank() != 1 || bias->dim(0) != rows)) {
    throw ShapeError("dense bias must be [C]");
  }
  BasicTensor<T> out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = bias ? static_cast<double>((*bias)[r]) : 0.0;
    const T* w = weight.raw() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      acc += static_cast<double>(w[c]) * static_cast<double>(input[c]);
    }
    out[r] = static_cast<T>(acc);
  }
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, bool has_bias,
                             const BasicTensor<T>& grad_output) {
  const std::size_t rows = weight.dim(0), cols = weight.dim(1);
  if (grad_output.size() != rows || input.size() != cols) {
    throw ShapeError("dense_backward shape mismatch");
  }
  DenseGrads<T> g;
  g.input = BasicTensor<T>(input.shape());
  g.weight = BasicTensor<T>(weight.shape());
  for (std::size_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      acc += static_cast<double>(weight[r * cols + c]) * static_cast<double>(grad_output[r]);
    }
    g.input[c] = static_cast<T>(acc);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      g.weight[r * cols + c] = grad_output[r] * input[c];
    }
  }
  if (has_bias) g.bias = grad_output.reshaped({rows});
  return g;
}

#define PROTOAUDIT_INSTANTIATE_OPS(T)                                              \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&, \
                                         const BasicTensor<T>*, Conv2dGeometry);   \
  template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&,                  \
                                          const BasicTensor<T>&, bool,            \
                                          const BasicTensor<T>&, Conv2dGeometry,  \
                                          bool);                                  \
  template BasicTensor<T> conv2d_transpose(const BasicTensor<T>&,                 \
                                           const BasicTensor<T>&, const Shape&,   \
                                           Conv2dGeometry);                       \
  template PoolResult<T> maxpool2d_forward(const BasicTensor<T>&, std::size_t);   \
  template BasicTensor<T> maxpool2d_backward(const BasicTensor<T>&,               \
                                             const std::vector<std::uint32_t>&,   \
                                             const Shape&);                       \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                    \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> sigmoid_forward(const BasicTensor<T>&);                 \
  template BasicTensor<T> sigmoid_backward(const BasicTensor<T>&,                 \
                                           const BasicTensor<T>&);                \
  template BasicTensor<T> dense_forward(const BasicTensor<T>&, const BasicTensor<T>&, \
                                        const BasicTensor<T>*);                   \
  template DenseGrads<T> dense_backward(const BasicTensor<T>&, const BasicTensor<T>&, \
                                        bool, const BasicTensor<T>&);

PROTOAUDIT_INSTANTIATE_OPS(float)
PROTOAUDIT_INSTANTIATE_OPS(double)

#undef PROTOAUDIT_INSTANTIATE_OPS

}  // namespace protoaudit::numerics
