#pragma once

#include <map>
#include <string>

#include "splitwire/autodiff.hpp"

namespace splitwire {

/// SGD with heavy-ball momentum in velocity form:
///   v <- momentum * v + g
///   theta <- theta - lr * v
/// With momentum 0 this is exactly theta <- theta - lr * g.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum);

  double lr() const noexcept { return lr_; }
  double momentum() const noexcept { return momentum_; }

  /// Every parameter in `params` needs a gradient of matching dims.
  void step(ParameterSet& params, const Gradients& grads);

  const Tensor* velocity(const std::string& name) const;

 private:
  double lr_;
  double momentum_;
  std::map<std::string, Tensor> velocity_;
};

}  // namespace splitwire
