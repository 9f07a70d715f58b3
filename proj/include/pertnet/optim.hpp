#pragma once

#include "pertnet/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace pertnet {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Per-parameter first/second moment estimates plus the shared step counter.
// Construct with the shapes of the parameters that will be updated; every
// adam_step call must then pass parameters and gradients with exactly those
// shapes, in the same order.
class AdamState {
public:
  AdamState(AdamConfig config, const std::vector<Shape>& param_shapes);

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }
  std::size_t param_count() const { return m_.size(); }

  const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

private:
  friend void adam_step(AdamState& state, std::span<Tensor* const> params,
                        std::span<const Tensor* const> grads);

  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

// One in-place Adam update with bias correction. params[i]/grads[i] must match
// the shapes the state was constructed with. A non-finite gradient component
// raises std::domain_error before any state is touched, so the caller can
// abort a run without corrupting parameters or moments.
void adam_step(AdamState& state, std::span<Tensor* const> params,
               std::span<const Tensor* const> grads);

}  // namespace pertnet
