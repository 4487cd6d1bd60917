#include "bootrl/optim.hpp"

#include <cmath>

#include "bootrl/errors.hpp"

namespace bootrl::lm {

Adam::Adam(std::size_t n_params, Options opts) : opts_(opts) {
  m_.assign(n_params, 0.0f);
  v_.assign(n_params, 0.0f);
}

void Adam::step(std::vector<float>& params, std::vector<float>& grads,
                double lr_scale) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ConfigError("optimizer state does not match parameter count");
  }
  double norm_sq = 0.0;
  for (float g : grads) {
    norm_sq += static_cast<double>(g) * static_cast<double>(g);
  }
  last_norm_ = std::sqrt(norm_sq);
  if (opts_.clip_norm > 0.0 && last_norm_ > opts_.clip_norm) {
    const float scale = static_cast<float>(opts_.clip_norm / last_norm_);
    for (float& g : grads) g *= scale;
  }

  beta1_pow_ *= opts_.beta1;
  beta2_pow_ *= opts_.beta2;
  const double lr = opts_.lr * lr_scale;
  const float b1 = static_cast<float>(opts_.beta1);
  const float b2 = static_cast<float>(opts_.beta2);
  const double inv_bias1 = 1.0 / (1.0 - beta1_pow_);
  const double inv_bias2 = 1.0 / (1.0 - beta2_pow_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g * g;
    const double mhat = static_cast<double>(m_[i]) * inv_bias1;
    const double vhat = static_cast<double>(v_[i]) * inv_bias2;
    params[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + opts_.eps));
  }
}

double cosine_decay(std::size_t step, std::size_t total_steps, double floor) {
  if (total_steps == 0) return 1.0;
  const double x = std::min(1.0, static_cast<double>(step) /
                                     static_cast<double>(total_steps));
  const double cos_part = 0.5 * (1.0 + std::cos(x * M_PI));
  return floor + (1.0 - floor) * cos_part;
}

}  // namespace bootrl::lm
