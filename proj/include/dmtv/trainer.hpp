#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dmtv/denoiser.hpp"
#include "dmtv/diffusion.hpp"
#include "dmtv/encoders.hpp"
#include "dmtv/losses.hpp"
#include "dmtv/synthdata.hpp"

namespace dmtv {

// Architecture description shared by every pipeline stage. The derived hash
// guards checkpoints against loading into a different topology.
struct ModelConfig {
    TextEncoderConfig text;
    ImageEncoderConfig image;
    DenoiserConfig denoiser;
    int schedule_steps = 1000;
};

uint64_t architecture_hash(const ModelConfig& cfg, int64_t vocab_size);

// All live parameters for one run: two text towers sharing one architecture,
// the frozen image tower, the denoiser, and the contrastive temperature.
// Group prefixes: "content.", "motion.", "image.", "clip.", "unet.", "mblocks.".
struct Models {
    ModelConfig cfg;
    Vocab vocab;
    ParamStore ps;
    TextEncoder content;
    TextEncoder motion;
    ImageEncoder image;
    UNet unet;
    NoiseSchedule schedule;

    Models(const ModelConfig& cfg, const Vocab& vocab, uint64_t init_seed);
    Models(const Models&) = delete;
    Models& operator=(const Models&) = delete;

    uint64_t hash() const { return architecture_hash(cfg, vocab.size()); }
};

struct CheckpointMeta {
    int32_t version = 1;
    int64_t step = 0;
    std::vector<uint64_t> rng_state;
    bool has_optimizer = false;
};

// Single-file container: version, architecture hash, step, RNG state, every
// parameter by name, and optionally the optimizer moments. Loading verifies
// the hash and the full parameter set before touching any weight.
void save_checkpoint(const std::string& path, const Models& m, int64_t step,
                     const std::vector<uint64_t>& rng_state, const Adam* opt = nullptr);
CheckpointMeta load_checkpoint(const std::string& path, Models& m, Adam* opt = nullptr);

enum class TrainStage { base, demo };

// Switches that remove a training component; nothing here ever adds one.
// A disabled loss reports 0 in the breakdown.
struct AblationFlags {
    bool text_motion = false;
    bool reg = false;
    bool video_motion = false;
    bool motion_encoder = false;
    bool motion_blocks = false;
};

struct TrainConfig {
    TrainStage stage = TrainStage::demo;
    LossWeights weights;
    double lr_min = 1e-5;
    double lr_max = 5e-5;
    int batch_size = 4;
    int steps = 200;
    double text_drop_prob = 0.1;
    uint64_t seed = 0;
    AblationFlags ablation;
    int checkpoint_interval = 500;
    int flow_iters = 50;
    double lambda_smooth = 0.1;
};

// One-cycle policy: linear ramp lo -> hi over the first 30% of the steps,
// cosine decay back to lo over the rest.
double one_cycle_lr(int64_t step, int64_t total_steps, double lo, double hi);

struct TrainSet {
    std::vector<VideoClip> clips;
};

TrainSet load_train_set(const std::string& corpus_dir);

// Owns the frozen/trainable partition and the optimizer for one stage.
// Stage base updates only "unet." with the noise-prediction loss; stage demo
// updates only "motion." and "mblocks." with the full objective.
class Trainer {
public:
    Trainer(Models& m, const TrainConfig& cfg);

    // One optimization step: per sample draws t, noise, and the text-drop
    // coin from streams keyed by (seed, step, sample), so interrupted and
    // continuous runs see identical randomness.
    LossBreakdown train_step(const std::vector<const VideoClip*>& batch);
    // Samples the batch (uniform with replacement) and steps.
    LossBreakdown train_step_auto(const TrainSet& data);
    std::vector<const VideoClip*> sample_batch(const TrainSet& data) const;

    // The text-drop coin for (step, sample), identical to what train_step
    // draws; one coin per sample covers both encoders.
    bool would_drop(int64_t step, int64_t sample) const;

    int64_t step() const { return step_; }
    void set_step(int64_t s) { step_ = s; }
    Adam& optimizer() { return *opt_; }
    int64_t dropped_captions() const { return dropped_; }
    int64_t drop_coins() const { return coins_; }
    const AblationFlags& effective_ablation() const { return abl_; }

private:
    Models& m_;
    TrainConfig cfg_;
    AblationFlags abl_;
    std::unique_ptr<Adam> opt_;
    int64_t step_ = 0;
    int64_t dropped_ = 0;
    int64_t coins_ = 0;
};

struct TrainRunOptions {
    std::string out_dir = "train_out";
    std::string init_checkpoint;  // pretraining or base-stage artifact; "" = fresh weights
    bool resume = false;          // continue the run stored in init_checkpoint
};

struct TrainResult {
    std::string final_checkpoint;
    std::string loss_csv;
    std::vector<LossBreakdown> history;  // one entry per executed step
    int64_t first_step = 0;
    int64_t dropped_captions = 0;
    int64_t drop_coins = 0;
};

// Full stage driver: loads the starting checkpoint, applies the stage
// initialization (demo copies the content tower into the motion tower),
// steps to cfg.steps, checkpoints every cfg.checkpoint_interval steps, and
// writes the loss log. A non-finite loss aborts with the last good
// checkpoint named in the exception.
TrainResult run_training(Models& m, const TrainConfig& cfg, const TrainSet& data,
                         const TrainRunOptions& opts = {});

}  // namespace dmtv
