#include "uad/schedule.hpp"

#include <stdexcept>
#include <string>

namespace uad {

double NoiseSchedule::beta(int t) const {
    if (!valid_t(t)) throw std::out_of_range("timestep out of range: " + std::to_string(t));
    return betas[static_cast<size_t>(t) - 1];
}

double NoiseSchedule::alpha_cum(int t) const {
    if (!valid_t(t)) throw std::out_of_range("timestep out of range: " + std::to_string(t));
    return alphas_cum[static_cast<size_t>(t) - 1];
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("schedule: steps must be >= 1");
    if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
        throw std::invalid_argument("schedule: beta endpoints must lie in (0,1)");
    if (beta_start > beta_end)
        throw std::invalid_argument("schedule: beta_start must not exceed beta_end");

    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(static_cast<size_t>(steps));
    s.alphas_cum.resize(static_cast<size_t>(steps));
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        double b = steps == 1 ? beta_start
                              : beta_start + (beta_end - beta_start) * i / (steps - 1.0);
        s.betas[static_cast<size_t>(i)] = b;
        prod *= 1.0 - b;
        s.alphas_cum[static_cast<size_t>(i)] = prod;
    }
    return s;
}

}  // namespace uad
