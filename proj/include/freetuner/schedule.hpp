#pragma once

#include "freetuner/tensor.hpp"

#include <vector>

namespace ft {

/// Linear-beta schedule rescaled to T steps. beta is indexed 1..T (index 0
/// unused), alpha_bar indexed 0..T with alpha_bar[0] = 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;
};

/// beta_t linear from 1e-4*(1000/T) to 0.02*(1000/T). Betas are clamped to
/// <= 0.999: the rescaled endpoint exceeds 1 for T <= 20, which would break
/// the 0 < beta < 1 invariant (inactive at the configured T=50).
NoiseSchedule make_schedule(int T);

/// z_t = sqrt(abar_t) z + sqrt(1-abar_t) eps.
Tensor add_noise(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& sched);

/// z0_hat = (z_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t).
Tensor predict_x0(const Tensor& z_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched);

/// Deterministic DDIM update: z_{t-1} = sqrt(abar_{t-1}) z0_hat + sqrt(1-abar_{t-1}) eps_hat.
Tensor ddim_step(const Tensor& z_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched);

/// Algebraic inverse of ddim_step under a fixed eps_hat: recovers z_t from z_{t-1}.
Tensor invert_ddim_step(const Tensor& z_prev, int t, const Tensor& eps_hat, const NoiseSchedule& sched);

}  // namespace ft
