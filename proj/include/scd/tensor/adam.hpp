#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scd/tensor/tensor.hpp"

namespace scd {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam. Parameters whose requires_grad flag is off at step()
// time are skipped entirely, so frozen tensors stay bitwise unchanged.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamOptions options);

  // Applies one update to every trainable parameter, then zeroes their
  // gradients. Throws ContractError if a trainable parameter has no gradient
  // and NonFiniteError if a gradient or updated value is not finite.
  void step();

  void zero_grad();

  std::int64_t step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }
  std::size_t size() const { return params_.size(); }
  std::span<const double> first_moment(std::size_t i) const { return m_[i]; }
  std::span<const double> second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamOptions options_;
  std::int64_t step_ = 0;
};

}  // namespace scd
