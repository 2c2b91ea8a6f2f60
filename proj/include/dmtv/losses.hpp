#pragma once

#include <string>
#include <vector>

#include "dmtv/denoiser.hpp"
#include "dmtv/motionfeat.hpp"
#include "dmtv/synthdata.hpp"

namespace dmtv {

struct LossWeights {
    double alpha = 0.1;  // text-motion
    double beta = 0.3;   // embedding regularizer
    double gamma = 0.1;  // video-motion
};

// Plain numbers for logging. total = diffusion + alpha*text_motion
// + beta*reg + gamma*video_motion.
struct LossBreakdown {
    double diffusion = 0.0;
    double text_motion = 0.0;
    double reg = 0.0;
    double video_motion = 0.0;
    double total = 0.0;
    LossWeights weights;
};

std::string loss_csv_header();
std::string loss_csv_row(int64_t step, const LossBreakdown& b);

// Mean squared error between the drawn and the predicted noise.
Value loss_diffusion(const Value& eps, const Value& eps_hat);

// Mean over layers of -cos(attention-map flow, reference flow). Both lists
// are indexed by layer; entries are [F-1, 2, Hi, Wi] at that layer's size.
Value loss_text_motion_from_flows(const std::vector<Value>& map_flows,
                                  const std::vector<Tensor>& reference_flows);

// Full pipeline: slice the [eot] key position from every captured map, treat
// each slice as a single-channel video and estimate its flow, then compare
// against the clip's analytic flow downsampled to the layer's resolution.
Value loss_text_motion(const AttentionCapture& capture, int eot_index, const VideoClip& clip,
                       int flow_iters = 50, double lambda_smooth = 0.1);

// -cos(pooled motion embedding, frozen image embedding of the middle frame).
Value loss_reg(const Value& motion_pooled, const Tensor& image_emb);

// MSE between consecutive-frame differences of the clean and the
// reconstructed latent video. Insensitive to one global constant offset.
Value loss_video_motion(const Value& z0, const Value& z0_hat);

struct WeightedLoss {
    Value total;          // graph node, backward target
    LossBreakdown parts;  // detached numbers for logging
};

// Weighted combination of the four objectives. Inputs must be scalar graph
// nodes; a non-finite part aborts with a diagnostic naming the term.
WeightedLoss loss_total(const Value& diffusion, const Value& text_motion, const Value& reg,
                        const Value& video_motion, const LossWeights& w = {});

}  // namespace dmtv
