#include "promptdoor/numkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "promptdoor/error.hpp"

namespace promptdoor::numkit {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, ErrorKind::kInvalidArgument,
          "tensor data length " + std::to_string(data_.size()) + " does not match " +
              std::to_string(rows_) + "x" + std::to_string(cols_));
}

void Tensor2::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor2::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void check_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumericFault, std::string("non-finite value in ") + where);
  }
}

std::vector<double> softmax(std::span<const double> logits) {
  require(!logits.empty(), ErrorKind::kInvalidArgument, "softmax of empty input");
  check_finite(logits, "softmax input");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::kInvalidArgument, "dot of unequal lengths");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::kInvalidArgument, "cosine of unequal lengths");
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) fail(ErrorKind::kDegenerateInput, "cosine of a zero-norm vector");
  const double c = dot(a, b) / (na * nb);
  if (!std::isfinite(c)) fail(ErrorKind::kNumericFault, "non-finite cosine");
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace promptdoor::numkit
