#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "jsdmp/autodiff.hpp"
#include "jsdmp/error.hpp"

namespace jsdmp {

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 5e-4;
};

/// Bias-corrected Adam with decoupled weight decay (applied to the parameter
/// before the moment update).
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  std::size_t step_count() const noexcept { return step_; }

  void step(std::span<Parameter* const> params) {
    if (first_.empty()) {
      for (auto* p : params) {
        first_.emplace_back(p->value.rows(), p->value.cols());
        second_.emplace_back(p->value.rows(), p->value.cols());
      }
    }
    if (first_.size() != params.size()) {
      throw StateError("Adam state tracks " + std::to_string(first_.size()) + " parameters, got " +
                       std::to_string(params.size()));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Parameter& p = *params[k];
      if (!p.value.same_shape(first_[k]) || !p.grad.same_shape(p.value)) {
        throw DimensionError("Adam moment/gradient shape mismatch for parameter '" + p.name + "'");
      }
      for (double g : p.grad.values()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
    }

    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      if (!p.trainable) continue;
      Matrix& m = first_[k];
      Matrix& v = second_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        p.value[i] -= cfg_.learning_rate * cfg_.weight_decay * p.value[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p.value[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

  const std::vector<Matrix>& first_moments() const noexcept { return first_; }
  const std::vector<Matrix>& second_moments() const noexcept { return second_; }

 private:
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
};

}  // namespace jsdmp
