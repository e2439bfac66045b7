#include "uad/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace uad {

namespace {

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

void require_valid_t(const NoiseSchedule& sched, int t) {
    if (!sched.valid_t(t))
        throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " +
                                std::to_string(sched.steps) + "]");
}

}  // namespace

ImageTensor forward_diffuse(const ImageTensor& x0, int t, const ImageTensor& eps,
                            const NoiseSchedule& sched) {
    require_same_shape(x0, eps, "forward_diffuse");
    require_valid_t(sched, t);
    const double a = sched.alpha_cum(t);
    const double sa = std::sqrt(a);
    const double sb = std::sqrt(1.0 - a);
    ImageTensor out(x0.height, x0.width, x0.channels, ValueRange::unbounded());
    for (size_t i = 0; i < x0.size(); ++i) out.values[i] = sa * x0.values[i] + sb * eps.values[i];
    return out;
}

ImageTensor estimate_x0(const ImageTensor& xt, int t, const ImageTensor& eps_pred,
                        const NoiseSchedule& sched) {
    require_same_shape(xt, eps_pred, "estimate_x0");
    require_valid_t(sched, t);
    const double a = sched.alpha_cum(t);
    if (a < 1e-12) throw std::domain_error("estimate_x0: degenerate timestep, alpha_cum ~ 0");
    const double inv_sa = 1.0 / std::sqrt(a);
    const double sb = std::sqrt(1.0 - a);
    ImageTensor out(xt.height, xt.width, xt.channels, ValueRange::unbounded());
    for (size_t i = 0; i < xt.size(); ++i)
        out.values[i] = (xt.values[i] - sb * eps_pred.values[i]) * inv_sa;
    return out;
}

ImageTensor reverse_step(const ImageTensor& xt, int t, const ImageTensor& eps_pred,
                         const NoiseSchedule& sched, double sigma_t, const ImageTensor& noise) {
    if (t < 2) throw std::invalid_argument("reverse_step: t = 1 has no predecessor");
    require_valid_t(sched, t);
    require_same_shape(xt, eps_pred, "reverse_step");
    if (sigma_t < 0.0) throw std::invalid_argument("reverse_step: sigma_t must be >= 0");
    const bool stochastic = sigma_t > 0.0;
    if (stochastic) require_same_shape(xt, noise, "reverse_step noise");

    ImageTensor x0 = estimate_x0(xt, t, eps_pred, sched);
    const double a_prev = sched.alpha_cum(t - 1);
    const double sa = std::sqrt(a_prev);
    const double sb = std::sqrt(1.0 - a_prev);
    ImageTensor out(xt.height, xt.width, xt.channels, ValueRange::unbounded());
    for (size_t i = 0; i < xt.size(); ++i) {
        double v = sa * x0.values[i] + sb * eps_pred.values[i];
        if (stochastic) v += sigma_t * noise.values[i];
        out.values[i] = v;
    }
    return out;
}

double diffusion_loss(const ImageTensor& eps_pred, const ImageTensor& eps_true) {
    require_same_shape(eps_pred, eps_true, "diffusion_loss");
    double acc = 0.0;
    for (size_t i = 0; i < eps_pred.size(); ++i) {
        const double d = eps_pred.values[i] - eps_true.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps_pred.size());
}

ImageTensor diffusion_loss_grad(const ImageTensor& eps_pred, const ImageTensor& eps_true) {
    require_same_shape(eps_pred, eps_true, "diffusion_loss_grad");
    ImageTensor g(eps_pred.height, eps_pred.width, eps_pred.channels, ValueRange::unbounded());
    const double scale = 2.0 / static_cast<double>(eps_pred.size());
    for (size_t i = 0; i < eps_pred.size(); ++i)
        g.values[i] = scale * (eps_pred.values[i] - eps_true.values[i]);
    return g;
}

}  // namespace uad
