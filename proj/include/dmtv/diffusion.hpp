#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dmtv/graph.hpp"
#include "dmtv/rng.hpp"
#include "dmtv/synthdata.hpp"
#include "dmtv/tensor.hpp"

namespace dmtv {

// Linear beta schedule. The endpoints are [1e-4, 2e-2] at T = 1000 and are
// rescaled by 1000/T otherwise, so a shortened schedule accumulates the same
// total noise and sampling can still start from (nearly) pure noise.
class NoiseSchedule {
public:
    explicit NoiseSchedule(int T = 1000);
    NoiseSchedule(int T, double beta_start, double beta_end);

    int T() const { return static_cast<int>(betas_.size()); }
    double beta(int t) const;
    double alpha_bar(int t) const;

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bar_;
};

enum class LatentSpace { pixel, compressed };

struct LatentVideo {
    Tensor values;  // [F, C', H', W']
    LatentSpace space = LatentSpace::pixel;
};

// Identity compressor: affine [0,1] -> [-1,1]. to_latent rejects
// out-of-range pixels; from_latent clamps, so decoded samples are always
// writable as frames.
Tensor to_latent(const Tensor& frames);
Tensor from_latent(const Tensor& z);

// Seam for a learned autoencoder; everything ships with the identity codec.
struct LatentCodec {
    virtual ~LatentCodec() = default;
    virtual Tensor encode(const Tensor& frames) const = 0;
    virtual Tensor decode(const Tensor& z) const = 0;
};

struct IdentityCodec : LatentCodec {
    Tensor encode(const Tensor& frames) const override { return to_latent(frames); }
    Tensor decode(const Tensor& z) const override { return from_latent(z); }
};

LatentVideo encode_latent(const VideoClip& clip);
Tensor decode_latent(const LatentVideo& z);

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
Tensor forward_diffuse(const NoiseSchedule& ns, const Tensor& z0, int t, const Tensor& eps);

// zhat0 = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
Tensor predict_x0(const NoiseSchedule& ns, const Tensor& zt, int t, const Tensor& eps_hat);
// Same inversion on the graph, so losses on zhat0 reach the noise prediction.
Value predict_x0_value(const NoiseSchedule& ns, const Value& zt, int t, const Value& eps_hat);

// eps_uncond + scale * (eps_cond - eps_uncond)
Tensor cfg_noise(const Tensor& eps_cond, const Tensor& eps_uncond, double scale);

// Noise prediction for one latent video at step t; `conditional` selects the
// caption-conditioned or the empty-caption pass.
using GuidedEpsFn = std::function<Tensor(const Tensor& zt, int t, bool conditional)>;

struct DdimParams {
    int steps = 50;
    double guidance_scale = 9.0;
    uint64_t seed = 0;
};

// Deterministic DDIM (eta = 0). Starts from seeded standard normal noise,
// walks an evenly spaced descending timestep sequence, and returns the final
// step's zhat0. trajectory, when given, receives the initial noise, every
// intermediate z_t, and the returned zhat0.
Tensor ddim_sample(const NoiseSchedule& ns, const GuidedEpsFn& eps_fn,
                   const std::vector<int64_t>& shape, const DdimParams& params,
                   std::vector<Tensor>* trajectory = nullptr);

}  // namespace dmtv
