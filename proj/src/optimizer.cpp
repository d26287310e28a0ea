#include "splitwire/optimizer.hpp"

#include <cmath>

namespace splitwire {

SgdMomentum::SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::Config, "learning rate must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::Config, "momentum must be in [0,1)");
}

void SgdMomentum::step(ParameterSet& params, const Gradients& grads) {
  // Validate everything first so a failed step leaves no parameter half-updated.
  for (const auto& p : params) {
    auto it = grads.find(p.name);
    require(it != grads.end(), ErrorKind::Contract, "sgd_step: missing gradient for parameter '" + p.name + "'");
    require(it->second.dims() == p.value.dims() && it->second.dtype() == p.value.dtype(), ErrorKind::Shape,
            "sgd_step: gradient for '" + p.name + "' has dims " + shape_string(it->second.dims()) + ", expected " +
                shape_string(p.value.dims()));
  }
  for (auto& p : params) {
    const Tensor& g = grads.at(p.name);
    auto [vit, fresh] = velocity_.try_emplace(p.name, Tensor(p.value.dims(), p.value.dtype()));
    Tensor& v = vit->second;
    require(v.dims() == p.value.dims(), ErrorKind::Contract, "sgd_step: velocity dims drifted for '" + p.name + "'");
    dispatch(p.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T lr = static_cast<T>(lr_);
      const T mu = static_cast<T>(momentum_);
      auto th = p.value.data<T>();
      auto vd = v.data<T>();
      auto gd = g.data<T>();
      for (std::size_t i = 0; i < th.size(); ++i) {
        vd[i] = mu * vd[i] + gd[i];
        th[i] -= lr * vd[i];
      }
    });
  }
}

const Tensor* SgdMomentum::velocity(const std::string& name) const {
  auto it = velocity_.find(name);
  return it == velocity_.end() ? nullptr : &it->second;
}

}  // namespace splitwire
