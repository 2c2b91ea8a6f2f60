#pragma once

#include <string>
#include <vector>

#include "dmtv/nn.hpp"

namespace dmtv {

enum class EncoderTag { content, motion };

// Head-averaged cross-attention maps, one per motion conditioning block, in
// execution order. Every map is [Hi, Wi, F, S] and row-stochastic over S.
struct AttentionCapture {
    std::vector<Value> maps;
    std::vector<std::string> layer_ids;
    EncoderTag encoder_tag = EncoderTag::motion;
};

// Slices key position eot_index out of every map: [Hi, Wi, F] per layer.
std::vector<Value> eot_map(const AttentionCapture& capture, int eot_index);

struct DenoiserConfig {
    int in_channels = 3;
    int frames = 8;
    int input_hw = 16;  // square inputs; each channel_mult level halves it
    int base_channels = 32;
    std::vector<int> channel_mult = {1, 2};
    int heads = 4;
    int head_dim = 0;  // 0 derives base_channels / heads
    std::vector<int> attn_resolutions;  // empty = transformers at every level
    int text_dim = 64;
    int time_steps = 1000;
    int norm_groups = 8;
};

// Per-frame transformer: spatial self-attention, cross-attention over the
// content tokens, feed-forward. Zero-initialized output projection makes it
// start as the identity.
struct SpatialTransformer {
    SpatialTransformer() = default;
    SpatialTransformer(ParamStore& ps, const std::string& name, int ch, int heads, int text_dim,
                       int norm_groups, Rng& rng);

    // h [F, ch, Hi, Wi], content_tokens [S, d]
    Value forward(const Value& h, const Value& content_tokens) const;

    int ch = 0, heads = 0;
    GroupNormLayer gn;
    Conv2dLayer pin, pout;
    LayerNormLayer ln1, ln2, ln3;
    Linear q, k, v, o;
    Linear xq, xk, xv, xo;
    Linear f1, f2;
};

// Per-location temporal transformer: self-attention over frames, then
// cross-attention whose keys come from the motion tokens (the captured maps),
// then a gated feed-forward. Linear in/out projections, zero-initialized out.
struct MotionTransformer {
    MotionTransformer() = default;
    MotionTransformer(ParamStore& ps, const std::string& name, int ch, int heads, int text_dim,
                      int norm_groups, int frames, Rng& rng);

    // h [F, ch, Hi, Wi], motion_tokens [S, d]. capture_to, when non-null,
    // receives the head-averaged cross-attention map [Hi, Wi, F, S].
    Value forward(const Value& h, const Value& motion_tokens, Value* capture_to) const;

    int ch = 0, heads = 0;
    GroupNormLayer gn;
    Linear pin, pout;
    Param* pos = nullptr;  // [F, ch] temporal position table
    LayerNormLayer ln1, ln2, ln3;
    Linear q, k, v, o;
    Linear xq, xk, xv, xo;
    Linear f1, f2;  // f1 doubles the hidden width for the gate
};

struct DenoiseOptions {
    bool capture = false;
    bool use_motion_blocks = true;
};

struct DenoiseResult {
    Value eps_hat;  // same shape as the input latent
    AttentionCapture capture;
};

// Factorized spatio-temporal U-Net noise predictor. Base-model parameters
// live under "unet.", motion conditioning blocks under "mblocks.", so the
// fine-tuning stage can address them as separate checkpoint groups.
class UNet {
public:
    UNet() = default;
    UNet(ParamStore& ps, const DenoiserConfig& cfg, Rng& rng);

    // zt [F, C, H, W] with H = W = input_hw; token arrays are [S, text_dim].
    DenoiseResult forward(const Value& zt, int t, const Value& content_tokens,
                          const Value& motion_tokens, const DenoiseOptions& opts = {}) const;
    // Evaluation shortcut: no recording, plain tensors in and out.
    Tensor predict_noise(const Tensor& zt, int t, const Tensor& content_tokens,
                         const Tensor& motion_tokens) const;

    const DenoiserConfig& config() const { return cfg_; }
    // Transformer sites in execution order ("d0", ..., "m", ..., "u0").
    const std::vector<std::string>& attention_sites() const { return sites_; }
    int motion_block_count() const { return static_cast<int>(sites_.size()); }

private:
    struct ResBlock {
        ResBlock() = default;
        ResBlock(ParamStore& ps, const std::string& name, int ch_in, int ch_out, int temb_dim,
                 int norm_groups, Rng& rng);
        Value forward(const Value& x, const Value& temb) const;

        int ch_out = 0;
        GroupNormLayer gn1, gn2;
        Conv2dLayer c1, c2, skip;
        Linear emb;
        bool has_skip = false;
    };

    struct Level {
        ResBlock res;
        SpatialTransformer sp;
        MotionTransformer mo;
        Conv2dLayer resize;  // down conv on the way in, up conv on the way out
        bool attended = false;
    };

    Value time_embedding(int t) const;

    DenoiserConfig cfg_;
    int temb_dim_ = 0;
    Linear temb_l1_, temb_l2_;
    Conv2dLayer cin_;
    std::vector<Level> down_, up_;
    ResBlock mid_res0_, mid_res1_;
    SpatialTransformer mid_sp_;
    MotionTransformer mid_mo_;
    bool mid_attended_ = false;
    GroupNormLayer out_gn_;
    Conv2dLayer out_c_;
    std::vector<std::string> sites_;
};

}  // namespace dmtv
