#include "dmtv/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dmtv {

NoiseSchedule::NoiseSchedule(int T)
    : NoiseSchedule(T, 1e-4 * (1000.0 / T), 2e-2 * (1000.0 / T)) {}

NoiseSchedule::NoiseSchedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw std::invalid_argument("NoiseSchedule: T must be at least 2");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start < beta_end))
        throw std::invalid_argument("NoiseSchedule: need 0 < beta_start < beta_end < 1 (T=" +
                                    std::to_string(T) + " scales the endpoints out of range)");
    betas_.resize(T);
    alpha_bar_.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        betas_[t] = beta_start + (beta_end - beta_start) * double(t) / double(T - 1);
        prod *= 1.0 - betas_[t];
        alpha_bar_[t] = prod;
    }
}

double NoiseSchedule::beta(int t) const {
    if (t < 0 || t >= T()) throw std::out_of_range("NoiseSchedule: t out of range");
    return betas_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t >= T()) throw std::out_of_range("NoiseSchedule: t out of range");
    return alpha_bar_[t];
}

Tensor to_latent(const Tensor& frames) {
    Tensor z(frames.shape());
    for (int64_t i = 0; i < frames.numel(); ++i) {
        const double v = frames[i];
        if (v < 0.0 || v > 1.0)
            throw std::invalid_argument("to_latent: pixel value outside [0,1]");
        z[i] = 2.0 * v - 1.0;
    }
    return z;
}

Tensor from_latent(const Tensor& z) {
    Tensor f(z.shape());
    for (int64_t i = 0; i < z.numel(); ++i) {
        const double v = 0.5 * (z[i] + 1.0);
        f[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }
    return f;
}

LatentVideo encode_latent(const VideoClip& clip) {
    return LatentVideo{to_latent(clip.frames), LatentSpace::pixel};
}

Tensor decode_latent(const LatentVideo& z) { return from_latent(z.values); }

Tensor forward_diffuse(const NoiseSchedule& ns, const Tensor& z0, int t, const Tensor& eps) {
    if (!z0.same_shape(eps)) throw std::invalid_argument("forward_diffuse: shape mismatch");
    const double ab = ns.alpha_bar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor zt(z0.shape());
    for (int64_t i = 0; i < z0.numel(); ++i) zt[i] = a * z0[i] + b * eps[i];
    return zt;
}

Tensor predict_x0(const NoiseSchedule& ns, const Tensor& zt, int t, const Tensor& eps_hat) {
    if (!zt.same_shape(eps_hat)) throw std::invalid_argument("predict_x0: shape mismatch");
    const double ab = ns.alpha_bar(t);
    if (ab < 1e-8) throw std::invalid_argument("predict_x0: alpha_bar too small to invert");
    const double b = std::sqrt(1.0 - ab), inv_a = 1.0 / std::sqrt(ab);
    Tensor z0(zt.shape());
    for (int64_t i = 0; i < zt.numel(); ++i) z0[i] = (zt[i] - b * eps_hat[i]) * inv_a;
    return z0;
}

Value predict_x0_value(const NoiseSchedule& ns, const Value& zt, int t, const Value& eps_hat) {
    const double ab = ns.alpha_bar(t);
    if (ab < 1e-8) throw std::invalid_argument("predict_x0: alpha_bar too small to invert");
    const double b = std::sqrt(1.0 - ab), inv_a = 1.0 / std::sqrt(ab);
    return mul_scalar(sub(zt, mul_scalar(eps_hat, b)), inv_a);
}

Tensor cfg_noise(const Tensor& eps_cond, const Tensor& eps_uncond, double scale) {
    if (!eps_cond.same_shape(eps_uncond)) throw std::invalid_argument("cfg_noise: shape mismatch");
    Tensor out(eps_cond.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = eps_uncond[i] + scale * (eps_cond[i] - eps_uncond[i]);
    return out;
}

Tensor ddim_sample(const NoiseSchedule& ns, const GuidedEpsFn& eps_fn,
                   const std::vector<int64_t>& shape, const DdimParams& params,
                   std::vector<Tensor>* trajectory) {
    if (params.steps < 1 || params.steps > ns.T())
        throw std::invalid_argument("ddim_sample: steps must be in [1, T]");

    // Evenly spaced timesteps hitting both 0 and T-1, walked high to low.
    auto timestep = [&](int i) {
        if (params.steps == 1) return ns.T() - 1;
        return int(int64_t(i) * (ns.T() - 1) / (params.steps - 1));
    };

    Rng rng(params.seed);
    Tensor z(shape);
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.normal();
    if (trajectory) trajectory->push_back(z.clone());

    for (int i = params.steps - 1; i >= 0; --i) {
        const int t = timestep(i);
        Tensor eps;
        // scale 1 needs no unconditional pass and scale 0 no conditional one.
        if (params.guidance_scale == 1.0) {
            eps = eps_fn(z, t, true);
        } else if (params.guidance_scale == 0.0) {
            eps = eps_fn(z, t, false);
        } else {
            eps = cfg_noise(eps_fn(z, t, true), eps_fn(z, t, false), params.guidance_scale);
        }
        Tensor zhat0 = predict_x0(ns, z, t, eps);
        if (i == 0) {
            if (trajectory) trajectory->push_back(zhat0.clone());
            return zhat0;
        }
        const double ab_prev = ns.alpha_bar(timestep(i - 1));
        const double a = std::sqrt(ab_prev), b = std::sqrt(1.0 - ab_prev);
        for (int64_t k = 0; k < z.numel(); ++k) z[k] = a * zhat0[k] + b * eps[k];
        if (trajectory) trajectory->push_back(z.clone());
    }
    return z;  // unreachable; the i == 0 branch returns
}

}  // namespace dmtv
