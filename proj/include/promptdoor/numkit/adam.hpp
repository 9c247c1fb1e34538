#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "promptdoor/numkit/graph.hpp"

namespace promptdoor::numkit {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are bound to the parameter list
// given at construction; apply() must be called with the same list.
class Adam {
 public:
  Adam(std::span<Parameter* const> params, AdamConfig config = {});

  void apply();
  void set_lr(double lr) { config_.lr = lr; }

  std::size_t step() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return config_; }
  const std::vector<Tensor2>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor2>& second_moments() const noexcept { return v_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor2> m_;
  std::vector<Tensor2> v_;
  AdamConfig config_;
  std::size_t step_ = 0;
};

}  // namespace promptdoor::numkit
