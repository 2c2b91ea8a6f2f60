#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dmtv/nn.hpp"

namespace dmtv {

// Fixed-width token ids laid out as [bos, words..., eot, pad...].
struct TokenSequence {
    std::vector<int64_t> ids;
    int eot_index = 0;

    std::vector<bool> pad_mask() const;
};

// Closed word list with four reserved control tokens at fixed ids. The file
// format is one token per line, line number = id.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEot = 2;
    static constexpr int kUnk = 3;

    Vocab() = default;
    // Reserved tokens first, then `words` in the given order. Duplicate or
    // reserved-looking entries throw.
    static Vocab build(const std::vector<std::string>& words);
    static Vocab load(const std::string& path);
    void save(const std::string& path) const;

    // Unknown words map to [unk]; they never error and are never dropped.
    int id(const std::string& w) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// Splits on whitespace. Throws when the caption needs more than seq_len - 2
// slots (bos and eot are always present).
TokenSequence tokenize(const Vocab& vocab, const std::string& caption, int seq_len);
// Joins the word tokens back; identity on captions made of in-vocab words.
std::string detokenize(const Vocab& vocab, const TokenSequence& t);

struct TextEncoderConfig {
    int seq_len = 16;
    int d = 64;
    int blocks = 2;
    int heads = 4;
    int mlp_mult = 4;
    bool causal = false;
};

// Transformer text tower. All parameters live under `prefix` in the store,
// so copy_params(ps, "content.", "motion.") turns a second instance into an
// exact clone, which is how the motion encoder starts.
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(ParamStore& ps, const std::string& prefix, const TextEncoderConfig& cfg,
                int vocab_size, Rng& rng);

    // -> [B, S, d]
    Value forward(const std::vector<TokenSequence>& batch) const;
    // token array plus the matching batch -> [B, d], row b = tokens[b, eot_b].
    Value pool_eot(const Value& tokens, const std::vector<TokenSequence>& batch) const;
    // Convenience for evaluation paths: pooled rows, no recording. [B, d]
    Tensor encode_pooled(const std::vector<TokenSequence>& batch) const;

    const TextEncoderConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }

private:
    struct Block {
        LayerNormLayer ln1;
        Linear q, k, v, o;
        LayerNormLayer ln2;
        Linear fc1, fc2;
    };

    Value self_attention(const Block& blk, const Value& x, const Tensor& mask) const;

    TextEncoderConfig cfg_;
    std::string prefix_;
    EmbeddingLayer tok_;
    Param* pos_ = nullptr;
    std::vector<Block> blocks_;
    LayerNormLayer ln_f_;
};

struct ImageEncoderConfig {
    int in_channels = 3;
    int h = 16;
    int w = 16;
    int base_channels = 16;
    int d = 64;
};

// Two stride-2 convolutions and a flattening linear head. The head keeps
// spatial layout, so the embedding can encode where the shape sits, which is
// the only single-frame cue correlated with direction and speed words.
class ImageEncoder {
public:
    ImageEncoder() = default;
    ImageEncoder(ParamStore& ps, const std::string& prefix, const ImageEncoderConfig& cfg, Rng& rng);

    // [N, C, H, W] -> [N, d]; throws on a shape other than the configured one.
    Value forward(const Value& frames) const;
    // Single frame [C, H, W] -> [d] without recording.
    Tensor encode_image(const Tensor& frame) const;

    const ImageEncoderConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }

private:
    ImageEncoderConfig cfg_;
    std::string prefix_;
    Conv2dLayer c1_, c2_;
    Linear head_;
    int flat_dim_ = 0;
};

// Symmetric InfoNCE over matched rows: both directions of cross-entropy on
// scaled cosine logits, averaged. text and images are [B, d], logit_scale has
// one element (log of the inverse temperature).
Value clip_info_nce(const Value& text, const Value& images, const Value& logit_scale);

struct ContrastiveConfig {
    int steps = 300;
    int batch_size = 32;
    double lr = 3e-3;
    uint64_t seed = 1;
};

struct ContrastiveStats {
    std::vector<double> loss_history;  // one entry per step
};

// Trains the content text tower and the image tower on (caption, middle
// frame) pairs, then freezes both. Creates "clip.logit_scale" (init 0, so the
// first-step loss sits near ln(batch_size)) and leaves it frozen too.
ContrastiveStats pretrain_contrastive(ParamStore& ps, TextEncoder& content, ImageEncoder& image,
                                      const Vocab& vocab, const std::vector<std::string>& captions,
                                      const Tensor& mid_frames, const ContrastiveConfig& cfg);

// Fraction of captions whose own image is the cosine argmax. Ties resolve to
// the lowest index, so the score is deterministic.
double retrieval_top1(const TextEncoder& content, const ImageEncoder& image, const Vocab& vocab,
                      const std::vector<std::string>& captions, const Tensor& frames);

// Caption plus middle frame of every corpus clip, in manifest order.
// Frames come back as one [N, C, H, W] tensor.
std::pair<std::vector<std::string>, Tensor> load_caption_frame_pairs(const std::string& corpus_dir);

}  // namespace dmtv
