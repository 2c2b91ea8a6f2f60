#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmtv/diffusion.hpp"
#include "dmtv/encoders.hpp"
#include "dmtv/synthdata.hpp"
#include "dmtv/tensor.hpp"
#include "dmtv/trainer.hpp"

namespace dmtv {

// Both motion measures for one clip [F,C,H,W]: the flow-based score and a
// frame-difference cross-check that needs no flow solver. Multi-channel
// frames are averaged to one channel before the flow estimate.
struct MotionStats {
    double flow_score = 0.0;  // mean L2 norm of the estimated flow, pixels/frame
    double frame_diff = 0.0;  // mean |z[f+1] - z[f]| over all elements
};

MotionStats motion_dynamics(const Tensor& frames, int flow_iters = 50,
                            double lambda_smooth = 0.1);

// First corpus direction word found in the caption; throws when there is none.
Direction caption_direction(const std::string& caption);

// 1 when the dominant estimated flow direction (argmax over left/right/up/down
// of the summed signed components) matches the caption's direction word,
// 0 otherwise. When both summed components are below 1e-3 in magnitude there
// is no dominant direction and the clip counts as a disagreement, so a static
// clip never matches a motion caption.
int direction_agreement(const Tensor& frames, const std::string& caption,
                        int flow_iters = 50, double lambda_smooth = 0.1);

// Mean over frames of safe_cosine(pooled caption embedding, frame embedding).
double alignment_score(const Tensor& frames, const std::string& caption,
                       const TextEncoder& content, const ImageEncoder& image,
                       const Vocab& vocab);

// Noise predictor closure for ddim_sample: encodes the caption and the empty
// caption once, then answers conditional and unconditional queries through
// the UNet evaluation path. The model must outlive the returned function.
GuidedEpsFn model_eps_fn(const Models& m, const std::string& caption);

struct EvalVariant {
    std::string name;
    std::string checkpoint;  // path of a weights file for the same architecture
};

struct VariantMetrics {
    std::string variant;
    double motion_dynamics = 0.0;      // mean frame-difference magnitude
    double flow_score = 0.0;           // mean flow magnitude, pixels/frame
    double direction_agreement = 0.0;  // fraction of samples matching the caption
    double alignment = 0.0;            // mean text-frame cosine
};

struct EvalReport {
    std::vector<VariantMetrics> variants;
    int n_samples = 0;  // videos per prompt per variant
    uint64_t seed = 0;
};

struct EvalOptions {
    int n_samples = 1;
    uint64_t seed = 0;
    DdimParams ddim;  // the seed field is replaced per (prompt, sample) pair
    int flow_iters = 50;
    double lambda_smooth = 0.1;
    std::string out_dir;  // when non-empty: report.csv plus one chart per metric
};

// Loads each variant checkpoint into the model in turn (the last one stays
// loaded), samples n_samples videos per prompt with deterministic per-sample
// noise shared across variants, and averages every metric. Every prompt must
// contain a direction word so the agreement metric is defined for all rows.
EvalReport compare_variants(Models& m, const std::vector<EvalVariant>& variants,
                            const std::vector<std::string>& prompts,
                            const EvalOptions& opts = {});

// Long-form rows, one per (variant, metric) pair:
// variant,metric,value,n_samples,seed
std::string eval_csv_header();
void write_eval_csv(const std::string& path, const EvalReport& report);

// One single-series bar chart per metric, grouped by variant, written as
// <dir>/<metric>.bmp.
void write_eval_charts(const std::string& dir, const EvalReport& report);

}  // namespace dmtv
