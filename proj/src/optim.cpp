#include "pertnet/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pertnet {

AdamState::AdamState(AdamConfig config, const std::vector<Shape>& param_shapes)
    : config_(config) {
  if (!(config_.lr > 0.0f) || !std::isfinite(config_.lr)) {
    throw std::invalid_argument("AdamState: lr must be positive and finite, got " +
                                std::to_string(config_.lr));
  }
  if (!(config_.beta1 >= 0.0f && config_.beta1 < 1.0f)) {
    throw std::invalid_argument("AdamState: beta1 must lie in [0,1), got " +
                                std::to_string(config_.beta1));
  }
  if (!(config_.beta2 >= 0.0f && config_.beta2 < 1.0f)) {
    throw std::invalid_argument("AdamState: beta2 must lie in [0,1), got " +
                                std::to_string(config_.beta2));
  }
  if (!(config_.eps > 0.0f)) {
    throw std::invalid_argument("AdamState: eps must be positive, got " +
                                std::to_string(config_.eps));
  }
  if (param_shapes.empty()) {
    throw std::invalid_argument("AdamState: no parameter shapes given");
  }
  m_.reserve(param_shapes.size());
  v_.reserve(param_shapes.size());
  for (const Shape& s : param_shapes) {
    m_.push_back(Tensor::full(s, 0.0f));
    v_.push_back(Tensor::full(s, 0.0f));
  }
}

void adam_step(AdamState& state, std::span<Tensor* const> params,
               std::span<const Tensor* const> grads) {
  const std::size_t n = state.m_.size();
  if (params.size() != n || grads.size() != n) {
    throw std::invalid_argument(
        "adam_step: expected " + std::to_string(n) + " params/grads, got " +
        std::to_string(params.size()) + "/" + std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (params[i] == nullptr || grads[i] == nullptr) {
      throw std::invalid_argument("adam_step: null tensor at slot " + std::to_string(i));
    }
    if (!params[i]->same_shape(state.m_[i])) {
      throw std::invalid_argument("adam_step: param " + std::to_string(i) + " shape " +
                                  shape_str(params[i]->shape()) + " does not match state shape " +
                                  shape_str(state.m_[i].shape()));
    }
    if (!grads[i]->same_shape(state.m_[i])) {
      throw std::invalid_argument("adam_step: grad " + std::to_string(i) + " shape " +
                                  shape_str(grads[i]->shape()) + " does not match state shape " +
                                  shape_str(state.m_[i].shape()));
    }
    if (!grads[i]->all_finite()) {
      throw std::domain_error("adam_step: non-finite gradient at slot " + std::to_string(i));
    }
  }

  const AdamConfig& c = state.config_;
  state.steps_ += 1;
  // Bias-correction factors in double; the per-element update stays f32.
  const double t = static_cast<double>(state.steps_);
  const float inv_bc1 = static_cast<float>(1.0 / (1.0 - std::pow(static_cast<double>(c.beta1), t)));
  const float inv_bc2 = static_cast<float>(1.0 / (1.0 - std::pow(static_cast<double>(c.beta2), t)));

  for (std::size_t i = 0; i < n; ++i) {
    Eigen::ArrayXf& m = state.m_[i].flat();
    Eigen::ArrayXf& v = state.v_[i].flat();
    const Eigen::ArrayXf& g = grads[i]->flat();
    m = c.beta1 * m + (1.0f - c.beta1) * g;
    v = c.beta2 * v + (1.0f - c.beta2) * g.square();
    params[i]->flat() -= c.lr * (m * inv_bc1) / ((v * inv_bc2).sqrt() + c.eps);
  }
}

}  // namespace pertnet
