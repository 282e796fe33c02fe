#include "dapr/nn/adam.h"

#include <cmath>
#include <stdexcept>

namespace dapr::nn {

AdamState::AdamState(std::size_t n, AdamConfig config)
    : config_(config), m_(n, 0.0), v_(n, 0.0) {}

void AdamState::step(ParamVector& params, double lr, const SegmentFilter& filter) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (params.size() != m_.size()) {
    throw ShapeError("adam: state sized for " + std::to_string(m_.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  auto w = params.values();
  auto g = params.grads();
  for (const auto& seg : params.segments()) {
    if (filter && !filter(seg)) continue;
    const std::size_t end = seg.offset + seg.size();
    for (std::size_t i = seg.offset; i < end; ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * g[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

void adam_update(ParamVector& params, AdamState& state, double lr,
                 const SegmentFilter& filter) {
  state.step(params, lr, filter);
}

}  // namespace dapr::nn
