// Copyright 2026 The vqau Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef VQAU_OPTIM_HPP_
#define VQAU_OPTIM_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "vqau/autograd.hpp"

namespace vqau::ag {

/// Learning-rate schedule evaluated at the number of completed steps.
struct Schedule {
  enum class Kind { kConstant, kHalving, kWarmup };

  Kind kind = Kind::kConstant;
  double base_lr = 4e-4;
  std::vector<long> milestones;  // kHalving: halve once per milestone <= step
  double warmup_start_lr = 1e-5;
  long warmup_steps = 0;         // kWarmup: linear ramp to base_lr

  static Schedule constant(double lr) { return {Kind::kConstant, lr, {}, 0.0, 0}; }
  static Schedule halving(double lr, std::vector<long> milestones) {
    return {Kind::kHalving, lr, std::move(milestones), 0.0, 0};
  }
  static Schedule warmup(double start, double lr, long steps) {
    return {Kind::kWarmup, lr, {}, start, steps};
  }

  double lr(long step) const {
    switch (kind) {
      case Kind::kConstant:
        return base_lr;
      case Kind::kHalving: {
        const auto n = std::count_if(milestones.begin(), milestones.end(),
                                     [step](long m) { return m <= step; });
        return base_lr * std::pow(0.5, static_cast<double>(n));
      }
      case Kind::kWarmup:
        if (warmup_steps <= 0 || step >= warmup_steps) return base_lr;
        return warmup_start_lr +
               (base_lr - warmup_start_lr) * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    return base_lr;
  }
};

/// Adam with bias correction. The schedule is consulted before each update.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Value<T>> params, Schedule schedule, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), schedule_(std::move(schedule)), beta1_(beta1), beta2_(beta2),
        eps_(eps) {
    for (const auto& p : params_) {
      m_.push_back(Mat<T>::Zero(p.rows(), p.cols()));
      v_.push_back(Mat<T>::Zero(p.rows(), p.cols()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    lr_ = schedule_.lr(steps_);
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    const T step_size = static_cast<T>(lr_ / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_), eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      const Mat<T>& g = p.grad();
      require<ShapeError>(g.rows() == m_[i].rows() && g.cols() == m_[i].cols(),
                          "adam: gradient shape changed");
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
      p.mutable_data().array() -=
          step_size * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
    }
  }

  long steps() const { return steps_; }
  double last_lr() const { return lr_; }
  const Schedule& schedule() const { return schedule_; }
  const std::vector<Value<T>>& params() const { return params_; }
  const Mat<T>& first_moment(std::size_t i) const { return m_[i]; }
  const Mat<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Value<T>> params_;
  std::vector<Mat<T>> m_, v_;
  Schedule schedule_;
  double beta1_, beta2_, eps_;
  long steps_ = 0;
  double lr_ = 0.0;
};

}  // namespace vqau::ag

#endif  // VQAU_OPTIM_HPP_
