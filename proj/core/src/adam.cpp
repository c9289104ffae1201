#include "rdrl/adam.hpp"

#include <algorithm>
#include <cmath>

#include "rdrl/errors.hpp"

namespace rdrl::ad {

double LrSchedule::at(std::size_t step) const {
  if (decay_steps == 0) return initial;
  if (step >= decay_steps) return final;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(decay_steps));
  return initial + (final - initial) * frac;
}

AdamState::AdamState(const ParamSet& params, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& t : params.tensors()) {
    m_.push_back(Matrix::Zero(t.rows(), t.cols()));
    v_.push_back(Matrix::Zero(t.rows(), t.cols()));
  }
}

void AdamState::apply(ParamSet& params, const std::vector<Matrix>& grads) {
  if (grads.size() != params.size() || m_.size() != params.size()) {
    throw InvalidArgument("adam_step: tensor count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols()) {
      throw InvalidArgument("adam_step: gradient shape mismatch");
    }
  }
  double clip = 1.0;
  if (cfg_.max_grad_norm > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > cfg_.max_grad_norm) clip = cfg_.max_grad_norm / norm;
  }

  const double lr = cfg_.lr.at(step_);
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = (clip * grads[i].array());
    m_[i].array() = cfg_.beta1 * m_[i].array() + (1.0 - cfg_.beta1) * g;
    v_[i].array() = cfg_.beta2 * v_[i].array() + (1.0 - cfg_.beta2) * g.square();
    params[i].array() -=
        lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

double ScalarAdam::apply(double value, double grad) {
  const double lr = cfg_.lr.at(step_);
  ++step_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad * grad;
  const double mhat = m_ / (1.0 - std::pow(cfg_.beta1, static_cast<double>(step_)));
  const double vhat = v_ / (1.0 - std::pow(cfg_.beta2, static_cast<double>(step_)));
  return value - lr * mhat / (std::sqrt(vhat) + cfg_.eps);
}

}  // namespace rdrl::ad
