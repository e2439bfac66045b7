#pragma once

#include "uad/image.hpp"
#include "uad/schedule.hpp"

namespace uad {

// x_t = sqrt(a_t) x_0 + sqrt(1 - a_t) eps, with a_t the cumulative alpha.
ImageTensor forward_diffuse(const ImageTensor& x0, int t, const ImageTensor& eps,
                            const NoiseSchedule& sched);

// Denoised-observation estimate: (x_t - sqrt(1 - a_t) eps_pred) / sqrt(a_t).
ImageTensor estimate_x0(const ImageTensor& xt, int t, const ImageTensor& eps_pred,
                        const NoiseSchedule& sched);

// One deterministic-capable reverse step:
//   sqrt(a_{t-1}) * estimate_x0(xt, t, eps_pred) + sqrt(1 - a_{t-1}) * eps_pred
//   + sigma_t * noise.
// Requires t >= 2. `noise` may be empty when sigma_t == 0.
ImageTensor reverse_step(const ImageTensor& xt, int t, const ImageTensor& eps_pred,
                         const NoiseSchedule& sched, double sigma_t,
                         const ImageTensor& noise = {});

// Mean squared error over all elements.
double diffusion_loss(const ImageTensor& eps_pred, const ImageTensor& eps_true);

// Gradient of diffusion_loss with respect to eps_pred: 2 (pred - true) / N.
ImageTensor diffusion_loss_grad(const ImageTensor& eps_pred, const ImageTensor& eps_true);

}  // namespace uad
