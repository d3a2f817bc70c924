#include "posttrain/adam.h"

#include <algorithm>
#include <cmath>

#include "posttrain/error.h"

namespace posttrain {

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    state_.first_moment.emplace_back(p.numel(), T(0));
    state_.second_moment.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
double Adam<T>::rate_for(std::int64_t step) const {
  if (options_.warmup_steps <= 0) return options_.learning_rate;
  const double frac = std::min(
      1.0, static_cast<double>(step) / static_cast<double>(options_.warmup_steps));
  return options_.learning_rate * frac;
}

template <typename T>
double Adam<T>::current_learning_rate() const {
  return rate_for(std::max<std::int64_t>(state_.step, 1));
}

template <typename T>
void Adam<T>::step() {
  const std::int64_t t = ++state_.step;
  const double lr = rate_for(t);
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto data = p.data();
    auto grad = p.grad();
    auto& m = state_.first_moment[i];
    auto& v = state_.second_moment[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j];
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / c1;
      const double v_hat = vj / c2;
      data[j] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + options_.epsilon));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void Adam<T>::load_state(AdamState<T> state) {
  if (state.first_moment.size() != params_.size() ||
      state.second_moment.size() != params_.size()) {
    throw InvalidArgument("Adam state does not match parameter count");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (state.first_moment[i].size() != params_[i].numel() ||
        state.second_moment[i].size() != params_[i].numel()) {
      throw InvalidArgument("Adam moment buffer " + std::to_string(i) +
                            " does not match its parameter");
    }
  }
  state_ = std::move(state);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace posttrain
