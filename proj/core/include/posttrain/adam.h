#pragma once

#include <cstdint>
#include <vector>

#include "posttrain/tensor.h"

namespace posttrain {

struct AdamOptions {
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Linear warmup over this many steps; 0 disables it.
  std::int64_t warmup_steps = 0;
};

template <typename T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

// Adam with bias correction. Reads parameter grads, never clears them.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamOptions options);

  void step();
  void zero_grad();

  // Learning rate used by the most recent step (or the next one before any).
  double current_learning_rate() const;

  const AdamOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  const AdamState<T>& state() const { return state_; }
  // Shapes must match the managed parameters.
  void load_state(AdamState<T> state);
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  double rate_for(std::int64_t step) const;

  std::vector<Tensor<T>> params_;
  AdamOptions options_;
  AdamState<T> state_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace posttrain
