#pragma once

#include <vector>

#include "dmtv/graph.hpp"
#include "dmtv/tensor.hpp"

namespace dmtv {

// Horn-Schunck optical flow between consecutive frames, built from graph ops
// so gradients reach the input video (needed when the "video" is a stack of
// attention maps). video is [F,H,W]; result is [F-1,2,H,W] with channel 0 the
// x component and channel 1 the y component, y pointing down.
// residual_log, when given, receives the mean squared brightness-constancy
// error after each iteration (averaged over all frame pairs).
Value flow_estimate_value(const Value& video, int iters = 50, double lambda_smooth = 0.1,
                          std::vector<double>* residual_log = nullptr);

// Plain-tensor front end. Accepts [F,H,W] or [F,C,H,W]; multi-channel input
// is averaged to one channel first.
Tensor flow_estimate(const Tensor& video, int iters = 50, double lambda_smooth = 0.1,
                     std::vector<double>* residual_log = nullptr);

// Area-average a dense flow field [F-1,2,H,W] to (target_h, target_w) and
// rescale the components into units of the smaller grid: x by target_w/W,
// y by target_h/H. Target must divide the source resolution.
Tensor flow_reference(const Tensor& flow_full, int target_h, int target_w);

// Average-pool every frame of [F,C,H,W] to (target_h, target_w).
Tensor downsample_video(const Tensor& video, int target_h, int target_w);

// Consecutive frame difference along axis 0: z[1:] - z[:-1].
Tensor frame_difference(const Tensor& z);
Value frame_difference_value(const Value& z);

// a.b / (|a||b| + eps) over flat arrays; 0 when either norm is below eps.
double safe_cosine_flat(const std::vector<double>& a, const std::vector<double>& b,
                        double eps = 1e-8);
double safe_cosine_flat(const Tensor& a, const Tensor& b, double eps = 1e-8);

}  // namespace dmtv
