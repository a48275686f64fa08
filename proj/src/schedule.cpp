#include "freetuner/schedule.hpp"

#include "freetuner/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ft {

NoiseSchedule make_schedule(int T) {
    check_arg(T >= 2, "schedule needs at least 2 steps");
    const double scale = 1000.0 / T;
    const double beta_min = 1e-4 * scale;
    const double beta_max = 0.02 * scale;
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        double b = beta_min + (beta_max - beta_min) * (t - 1) / (T - 1);
        b = std::min(b, 0.999);
        s.beta[static_cast<std::size_t>(t)] = b;
        s.alpha_bar[static_cast<std::size_t>(t)] = s.alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - b);
    }
    return s;
}

namespace {
void check_t(const NoiseSchedule& s, int t, int lo) {
    check_arg(t >= lo && t <= s.T, "timestep " + std::to_string(t) + " out of range");
}
}  // namespace

Tensor add_noise(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& sched) {
    check_t(sched, t, 0);
    check_arg(z.shape() == eps.shape(), "add_noise shape mismatch");
    const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    return add(mul_scalar(z, std::sqrt(ab)), mul_scalar(eps, std::sqrt(1.0 - ab)));
}

Tensor predict_x0(const Tensor& z_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched) {
    check_t(sched, t, 0);
    check_arg(z_t.shape() == eps_hat.shape(), "predict_x0 shape mismatch");
    const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    if (ab <= 1e-12)
        throw DegenerateTimestepError("alpha_bar at t=" + std::to_string(t) + " below numeric floor");
    return mul_scalar(sub(z_t, mul_scalar(eps_hat, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
}

Tensor ddim_step(const Tensor& z_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched) {
    check_t(sched, t, 1);
    const double ab_prev = sched.alpha_bar[static_cast<std::size_t>(t) - 1];
    Tensor x0 = predict_x0(z_t, t, eps_hat, sched);
    return add(mul_scalar(x0, std::sqrt(ab_prev)), mul_scalar(eps_hat, std::sqrt(1.0 - ab_prev)));
}

Tensor invert_ddim_step(const Tensor& z_prev, int t, const Tensor& eps_hat, const NoiseSchedule& sched) {
    check_t(sched, t, 1);
    check_arg(z_prev.shape() == eps_hat.shape(), "invert_ddim_step shape mismatch");
    const double ab_prev = sched.alpha_bar[static_cast<std::size_t>(t) - 1];
    const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    // x0 implied by (z_{t-1}, eps_hat), then re-noise to level t.
    Tensor x0 = mul_scalar(sub(z_prev, mul_scalar(eps_hat, std::sqrt(1.0 - ab_prev))),
                           1.0 / std::sqrt(ab_prev));
    return add(mul_scalar(x0, std::sqrt(ab)), mul_scalar(eps_hat, std::sqrt(1.0 - ab)));
}

}  // namespace ft
