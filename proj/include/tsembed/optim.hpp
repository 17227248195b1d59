#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tsembed/embedder.hpp"
#include "tsembed/errors.hpp"

namespace tsembed {

// AdamW with decoupled weight decay:
//   t <- t+1
//   m <- b1*m + (1-b1)*g          v <- b2*v + (1-b2)*g^2
//   theta <- theta - lr*( m_hat/(sqrt(v_hat)+eps) + weight_decay*theta )
// with bias-corrected m_hat = m/(1-b1^t), v_hat = v/(1-b2^t).
struct OptimizerState {
  std::int64_t step = 0;
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

inline OptimizerState make_optimizer_state(const EmbedderParams& params,
                                           double weight_decay = 0.01) {
  OptimizerState st;
  st.m = zero_like(params);
  st.v = zero_like(params);
  st.weight_decay = weight_decay;
  return st;
}

inline void adamw_step(EmbedderParams& params,
                       const std::vector<Eigen::MatrixXd>& grads,
                       OptimizerState& state, double lr) {
  if (!(lr > 0.0)) throw UsageError("learning rate must be > 0");
  if (grads.size() != params.tensors.size() ||
      state.m.size() != params.tensors.size())
    throw ShapeMismatch("optimizer state/grads not parallel to params");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    Eigen::MatrixXd& theta = params.tensors[i].value;
    const Eigen::MatrixXd& g = grads[i];
    if (g.rows() != theta.rows() || g.cols() != theta.cols())
      throw ShapeMismatch("gradient shape differs from parameter shape");
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
    const Eigen::MatrixXd m_hat = state.m[i] / bc1;
    const Eigen::MatrixXd v_hat = state.v[i] / bc2;
    theta -= lr * (m_hat.array() / (v_hat.array().sqrt() + state.eps)).matrix();
    theta -= lr * state.weight_decay * theta;
  }
}

// 1cycle policy: cosine warmup from max_lr/div to max_lr over the first
// pct_start fraction of steps, then cosine annealing down to max_lr/final_div.
struct LRSchedule {
  double max_lr = 1e-3;
  std::int64_t total_steps = 1000;
  double pct_start = 0.3;
  double div = 25.0;
  double final_div = 1e4;
};

inline void validate_schedule(const LRSchedule& s) {
  if (s.total_steps < 2) throw UsageError("schedule needs total_steps >= 2");
  if (!(s.pct_start > 0.0) || !(s.pct_start < 1.0))
    throw UsageError("pct_start must be in (0, 1)");
  if (!(s.max_lr > 0.0) || !(s.div > 0.0) || !(s.final_div > 0.0))
    throw UsageError("schedule rates must be > 0");
}

inline double onecycle_lr(const LRSchedule& sched, std::int64_t step) {
  validate_schedule(sched);
  if (step < 0 || step >= sched.total_steps)
    throw UsageError("schedule step out of range");
  constexpr double kPi = 3.14159265358979323846;
  std::int64_t peak = static_cast<std::int64_t>(
      std::ceil(sched.pct_start * static_cast<double>(sched.total_steps)));
  if (peak < 1) peak = 1;
  if (peak > sched.total_steps - 2) peak = sched.total_steps - 2;
  if (peak < 1) peak = 1;  // total_steps == 2
  const double low = sched.max_lr / sched.div;
  const double final_lr = sched.max_lr / sched.final_div;
  if (step <= peak) {
    const double u = static_cast<double>(step) / static_cast<double>(peak);
    return low + (sched.max_lr - low) * 0.5 * (1.0 - std::cos(kPi * u));
  }
  const double u = static_cast<double>(step - peak) /
                   static_cast<double>(sched.total_steps - 1 - peak);
  return final_lr + (sched.max_lr - final_lr) * 0.5 * (1.0 + std::cos(kPi * u));
}

}  // namespace tsembed
