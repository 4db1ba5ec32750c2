#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "patchlens/nn/tape.hpp"

namespace patchlens::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
};

enum class LrDecay { None, InverseSqrt };

/// Linear warmup to the peak rate over `warmup_steps`, then either flat or
/// inverse-square-root decay.
struct WarmupSchedule {
  double peak = 1e-3;
  std::size_t warmup_steps = 100;
  LrDecay decay = LrDecay::None;

  double at(std::size_t step) const {
    const double s = static_cast<double>(step + 1);
    const double w = static_cast<double>(std::max<std::size_t>(warmup_steps, 1));
    if (s < w) return peak * s / w;
    if (decay == LrDecay::InverseSqrt) return peak * std::sqrt(w / s);
    return peak;
  }
};

template <class T>
class Adam {
public:
  Adam(ParameterSet<T>& params, AdamOptions opt) : params_(params), opt_(opt) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.push_back(Matrix<T>::Zero(params[i].value.rows(), params[i].value.cols()));
      v_.push_back(Matrix<T>::Zero(params[i].value.rows(), params[i].value.cols()));
    }
  }

  /// Returns the pre-clip global gradient norm.
  double step(double lr) {
    double sq = 0;
    for (std::size_t i = 0; i < params_.size(); ++i) sq += static_cast<double>(params_[i].grad.squaredNorm());
    const double norm = std::sqrt(sq);
    const double clip = (opt_.clip_norm > 0 && norm > opt_.clip_norm) ? opt_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      Matrix<T> g = p.grad * static_cast<T>(clip);
      if (opt_.weight_decay > 0) g += p.value * static_cast<T>(opt_.weight_decay);
      m_[i] = m_[i] * static_cast<T>(opt_.beta1) + g * static_cast<T>(1 - opt_.beta1);
      v_[i] = v_[i] * static_cast<T>(opt_.beta2) + g.cwiseProduct(g) * static_cast<T>(1 - opt_.beta2);
      auto mhat = m_[i].array() / static_cast<T>(bc1);
      auto vhat = v_[i].array() / static_cast<T>(bc2);
      p.value.array() -= static_cast<T>(lr) * mhat / (vhat.sqrt() + static_cast<T>(opt_.eps));
    }
    return norm;
  }

  std::size_t steps() const { return t_; }

private:
  ParameterSet<T>& params_;
  AdamOptions opt_;
  std::vector<Matrix<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace patchlens::nn
