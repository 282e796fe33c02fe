#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dapr/nn/param_vector.h"

namespace dapr::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Segments for which the filter returns false are left untouched, moments
// included.
using SegmentFilter = std::function<bool(const Segment&)>;

class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(std::size_t n, AdamConfig config = {});

  // One bias-corrected Adam step using the gradients stored in `params`.
  // Gradients are left as they are; the caller zeroes them.
  void step(ParamVector& params, double lr, const SegmentFilter& filter = {});

  std::uint64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  std::size_t size() const { return m_.size(); }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t steps_ = 0;
};

void adam_update(ParamVector& params, AdamState& state, double lr,
                 const SegmentFilter& filter = {});

}  // namespace dapr::nn
