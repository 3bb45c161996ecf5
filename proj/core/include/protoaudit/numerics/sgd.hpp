#pragma once

#include <stdexcept>
#include <vector>

#include "protoaudit/numerics/tensor.hpp"

namespace protoaudit::numerics {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One momentum-SGD update: v <- momentum*v + g; p <- p - lr*v.
/// Leaves `param` untouched and throws NumericalError if the result would be
/// non-finite.
template <typename T>
void sgd_step(BasicTensor<T>& param, const BasicTensor<T>& grad,
              BasicTensor<T>& velocity, double lr, double momentum) {
  if (param.shape() != grad.shape() || param.shape() != velocity.shape()) {
    throw ShapeError("sgd_step: parameter, gradient and velocity shapes differ");
  }
  if (!(lr >= 0.0)) throw std::invalid_argument("sgd_step: learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("sgd_step: momentum must lie in [0,1)");
  }
  std::vector<T> next_v(param.size());
  std::vector<T> next_p(param.size());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double v = momentum * static_cast<double>(velocity[i]) + static_cast<double>(grad[i]);
    const double p = static_cast<double>(param[i]) - lr * v;
    next_v[i] = static_cast<T>(v);
    next_p[i] = static_cast<T>(p);
    if (!std::isfinite(next_v[i]) || !std::isfinite(next_p[i])) {
      throw NumericalError("sgd_step produced a non-finite update");
    }
  }
  std::copy(next_v.begin(), next_v.end(), velocity.data().begin());
  std::copy(next_p.begin(), next_p.end(), param.data().begin());
}

/// Momentum buffers for a fixed list of parameter tensors.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  /// `params[i]` is updated with `grads[i]`; velocities are created lazily on
  /// the first call and must stay aligned afterwards.
  void step(const std::vector<BasicTensor<T>*>& params,
            const std::vector<const BasicTensor<T>*>& grads) {
    if (params.size() != grads.size()) throw ShapeError("SgdMomentum: misaligned lists");
    if (velocity_.empty()) {
      for (const auto* p : params) velocity_.emplace_back(p->shape());
    }
    if (velocity_.size() != params.size()) throw ShapeError("SgdMomentum: parameter list changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
      sgd_step(*params[i], *grads[i], velocity_[i], lr_, momentum_);
    }
  }

  /// Drops the momentum history.
  void reset() { velocity_.clear(); }

  double learning_rate() const noexcept { return lr_; }
  double momentum() const noexcept { return momentum_; }

 private:
  double lr_;
  double momentum_;
  std::vector<BasicTensor<T>> velocity_;
};

}  // namespace protoaudit::numerics
