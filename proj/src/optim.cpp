#include "mdcl/optim.hpp"

#include <cmath>

namespace mdcl {

template <typename T>
Adam<T>::Adam(std::vector<std::pair<std::string, Tensor<T>>> params, T lr, T beta1, T beta2,
              T eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& [name, p] : params_) {
    check(p.defined() && p.requires_grad(), "adam: '" + name + "' is not a trainable leaf");
    m_.emplace_back(p.size(), T(0));
    v_.emplace_back(p.size(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
  const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& [name, p] = params_[k];
    auto val = p.values_mut();
    auto grad = p.grad();
    T* m = m_[k].data();
    T* v = v_[k].data();
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const T g = grad.empty() ? T(0) : grad[i];
      if (!std::isfinite(g)) fail("adam: non-finite gradient in '" + name + "'");
      m[i] = beta1_ * m[i] + (T(1) - beta1_) * g;
      v[i] = beta2_ * v[i] + (T(1) - beta2_) * g * g;
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace mdcl
