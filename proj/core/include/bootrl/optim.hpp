#pragma once

#include <cstdint>
#include <vector>

namespace bootrl::lm {

/// Adam with bias correction and global gradient-norm clipping.
class Adam {
 public:
  struct Options {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // 0 disables clipping
  };

  Adam(std::size_t n_params, Options opts);

  /// One update. `lr_scale` multiplies the base learning rate (cosine
  /// schedules etc.). Grads are clipped in place when clip_norm > 0.
  void step(std::vector<float>& params, std::vector<float>& grads,
            double lr_scale = 1.0);

  /// Global L2 norm of the last (pre-clip) gradient, for diagnostics.
  double last_grad_norm() const { return last_norm_; }

 private:
  Options opts_;
  std::vector<float> m_;
  std::vector<float> v_;
  double beta1_pow_ = 1.0;
  double beta2_pow_ = 1.0;
  double last_norm_ = 0.0;
};

/// Cosine decay from 1 at step 0 to `floor` at total_steps.
double cosine_decay(std::size_t step, std::size_t total_steps,
                    double floor = 0.05);

}  // namespace bootrl::lm
