#pragma once

#include <string>
#include <vector>

#include "mdcl/tensor.hpp"

namespace mdcl {

// Adam with bias correction. Parameters are updated in place; a parameter
// whose grad buffer was never touched in the backward pass is treated as
// having zero gradient (its moments still decay). Any non-finite gradient
// aborts the step with the parameter's name in the error.
template <typename T>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor<T>>> params, T lr, T beta1 = T(0.9),
       T beta2 = T(0.999), T eps = T(1e-8));

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }
  std::int64_t steps() const { return t_; }

  void step();
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::vector<T>> m_, v_;
  T lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

using AdamF = Adam<float>;

}  // namespace mdcl
