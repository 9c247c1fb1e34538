#include "promptdoor/numkit/adam.hpp"

#include <cmath>

#include "promptdoor/error.hpp"

namespace promptdoor::numkit {

Adam::Adam(std::span<Parameter* const> params, AdamConfig config)
    : params_(params.begin(), params.end()), config_(config) {
  require(config_.lr >= 0.0, ErrorKind::kConfig, "learning rate must be non-negative");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void Adam::apply() {
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (!p.trainable) continue;
    auto value = p.value.flat();
    auto grad = p.grad.flat();
    auto m = m_[k].flat();
    auto v = v_[k].flat();
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      value[i] -= config_.lr * update;
    }
    check_finite(value, p.name.c_str());
  }
}

}  // namespace promptdoor::numkit
