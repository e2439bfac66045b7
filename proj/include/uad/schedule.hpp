#pragma once

#include <vector>

namespace uad {

// Per-timestep variance schedule. Timesteps are 1-indexed: t in [1, T];
// betas[t-1] is the variance added at step t, alphas_cum[t-1] is the running
// product of (1 - beta_s) for s = 1..t.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> betas;
    std::vector<double> alphas_cum;

    double beta(int t) const;       // 1-indexed
    double alpha_cum(int t) const;  // 1-indexed
    bool valid_t(int t) const { return t >= 1 && t <= steps; }
};

// Linear beta schedule (DDPM default shape; endpoints configurable).
NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);

// Serializable description of a linear schedule; the training schedule is
// stored in checkpoints so inference rebuilds the identical one.
struct ScheduleSpec {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    NoiseSchedule build() const { return make_linear_schedule(steps, beta_start, beta_end); }
    bool operator==(const ScheduleSpec&) const = default;
};

}  // namespace uad
