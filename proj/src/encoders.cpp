#include "dmtv/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dmtv/synthdata.hpp"

namespace dmtv {

namespace {

const char* kReserved[4] = {"[pad]", "[bos]", "[eot]", "[unk]"};

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

// Additive attention mask, full score shape [B*heads, S, S]. Keys past a
// sample's eot are unreachable from every query, so pad rows never leak into
// real token states.
Tensor attention_mask(const std::vector<TokenSequence>& batch, int heads, int S, bool causal) {
    const int64_t B = static_cast<int64_t>(batch.size());
    Tensor m({B * heads, S, S});
    int64_t at = 0;
    for (int64_t b = 0; b < B; ++b) {
        const int eot = batch[b].eot_index;
        for (int h = 0; h < heads; ++h)
            for (int q = 0; q < S; ++q)
                for (int k = 0; k < S; ++k, ++at) {
                    const bool blocked = k > eot || (causal && k > q);
                    m[at] = blocked ? -1e9 : 0.0;
                }
    }
    return m;
}

}  // namespace

std::vector<bool> TokenSequence::pad_mask() const {
    std::vector<bool> m(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) m[i] = ids[i] == Vocab::kPad;
    return m;
}

Vocab Vocab::build(const std::vector<std::string>& words) {
    Vocab v;
    for (const char* r : kReserved) {
        v.index_[r] = static_cast<int>(v.tokens_.size());
        v.tokens_.push_back(r);
    }
    for (const auto& w : words) {
        if (w.empty()) throw std::invalid_argument("Vocab: empty word");
        if (v.index_.count(w)) throw std::invalid_argument("Vocab: duplicate word " + w);
        v.index_[w] = static_cast<int>(v.tokens_.size());
        v.tokens_.push_back(w);
    }
    return v;
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("Vocab: cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    if (lines.size() < 4) throw std::runtime_error("Vocab: file too short: " + path);
    for (int i = 0; i < 4; ++i)
        if (lines[i] != kReserved[i])
            throw std::runtime_error("Vocab: reserved token mismatch at line " + std::to_string(i));
    return build({lines.begin() + 4, lines.end()});
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("Vocab: cannot write " + path);
    for (const auto& t : tokens_) out << t << "\n";
}

int Vocab::id(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Vocab: bad token id " + std::to_string(id));
    return tokens_[id];
}

TokenSequence tokenize(const Vocab& vocab, const std::string& caption, int seq_len) {
    const auto words = split_words(caption);
    if (static_cast<int>(words.size()) > seq_len - 2)
        throw std::invalid_argument("tokenize: caption needs " + std::to_string(words.size() + 2) +
                                    " slots but seq_len is " + std::to_string(seq_len));
    TokenSequence t;
    t.ids.assign(seq_len, Vocab::kPad);
    t.ids[0] = Vocab::kBos;
    for (size_t i = 0; i < words.size(); ++i) t.ids[i + 1] = vocab.id(words[i]);
    t.eot_index = static_cast<int>(words.size()) + 1;
    t.ids[t.eot_index] = Vocab::kEot;
    return t;
}

std::string detokenize(const Vocab& vocab, const TokenSequence& t) {
    std::string out;
    for (int i = 1; i < t.eot_index; ++i) {
        if (i > 1) out += ' ';
        out += vocab.token(static_cast<int>(t.ids[i]));
    }
    return out;
}

TextEncoder::TextEncoder(ParamStore& ps, const std::string& prefix, const TextEncoderConfig& cfg,
                         int vocab_size, Rng& rng)
    : cfg_(cfg), prefix_(prefix) {
    if (cfg.d % cfg.heads != 0)
        throw std::invalid_argument("TextEncoder: d must be divisible by heads");
    if (cfg.seq_len < 2 || cfg.blocks < 1 || vocab_size < 4)
        throw std::invalid_argument("TextEncoder: bad config");
    tok_ = EmbeddingLayer(ps, prefix + "tok", vocab_size, cfg.d, rng);
    pos_ = &ps.create(prefix + "pos", {cfg.seq_len, cfg.d});
    fill_normal(pos_->val, rng, 0.01);
    blocks_.resize(cfg.blocks);
    for (int i = 0; i < cfg.blocks; ++i) {
        const std::string base = prefix + "b" + std::to_string(i) + ".";
        Block& blk = blocks_[i];
        blk.ln1 = LayerNormLayer(ps, base + "ln1", cfg.d);
        blk.q = Linear(ps, base + "q", cfg.d, cfg.d, rng);
        blk.k = Linear(ps, base + "k", cfg.d, cfg.d, rng);
        blk.v = Linear(ps, base + "v", cfg.d, cfg.d, rng);
        blk.o = Linear(ps, base + "o", cfg.d, cfg.d, rng);
        blk.ln2 = LayerNormLayer(ps, base + "ln2", cfg.d);
        blk.fc1 = Linear(ps, base + "fc1", cfg.d, cfg.d * cfg.mlp_mult, rng);
        blk.fc2 = Linear(ps, base + "fc2", cfg.d * cfg.mlp_mult, cfg.d, rng);
    }
    ln_f_ = LayerNormLayer(ps, prefix + "lnf", cfg.d);
}

Value TextEncoder::self_attention(const Block& blk, const Value& x, const Tensor& mask) const {
    const int64_t B = x.shape(0);
    const int dh = cfg_.d / cfg_.heads;
    Value q = split_heads(blk.q.forward3(x), cfg_.heads);
    Value k = split_heads(blk.k.forward3(x), cfg_.heads);
    Value v = split_heads(blk.v.forward3(x), cfg_.heads);
    Value scores = mul_scalar(bmm(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(double(dh)));
    Value attn = softmax_last(scores, &mask);
    return blk.o.forward3(merge_heads(bmm(attn, v), B, cfg_.heads));
}

Value TextEncoder::forward(const std::vector<TokenSequence>& batch) const {
    if (batch.empty()) throw std::invalid_argument("TextEncoder: empty batch");
    const int64_t B = static_cast<int64_t>(batch.size());
    const int S = cfg_.seq_len;
    std::vector<int64_t> flat;
    flat.reserve(B * S);
    for (const auto& t : batch) {
        if (static_cast<int>(t.ids.size()) != S)
            throw std::invalid_argument("TextEncoder: sequence length mismatch");
        if (t.eot_index < 1 || t.eot_index >= S)
            throw std::invalid_argument("TextEncoder: eot index out of range");
        flat.insert(flat.end(), t.ids.begin(), t.ids.end());
    }
    Value x = reshape(tok_.forward(flat), {B, S, cfg_.d});
    x = add_bcast0(x, pos_->value());
    const Tensor mask = attention_mask(batch, cfg_.heads, S, cfg_.causal);
    for (const Block& blk : blocks_) {
        x = add(x, self_attention(blk, blk.ln1.forward(x), mask));
        x = add(x, blk.fc2.forward3(gelu(blk.fc1.forward3(blk.ln2.forward(x)))));
    }
    return ln_f_.forward(x);
}

Value TextEncoder::pool_eot(const Value& tokens, const std::vector<TokenSequence>& batch) const {
    const int64_t B = tokens.shape(0);
    if (B != static_cast<int64_t>(batch.size()))
        throw std::invalid_argument("pool_eot: batch size mismatch");
    const int64_t S = tokens.shape(1);
    std::vector<int64_t> rows(B);
    for (int64_t b = 0; b < B; ++b) rows[b] = b * S + batch[b].eot_index;
    return embedding_rows(reshape(tokens, {B * S, tokens.shape(2)}), rows);
}

Tensor TextEncoder::encode_pooled(const std::vector<TokenSequence>& batch) const {
    NoGradGuard ng;
    Value tokens = forward(batch);
    return pool_eot(tokens, batch).val();
}

ImageEncoder::ImageEncoder(ParamStore& ps, const std::string& prefix, const ImageEncoderConfig& cfg,
                           Rng& rng)
    : cfg_(cfg), prefix_(prefix) {
    if (cfg.h < 4 || cfg.w < 4) throw std::invalid_argument("ImageEncoder: frame too small");
    const int h2 = (cfg.h - 1) / 2 + 1, w2 = (cfg.w - 1) / 2 + 1;
    const int h4 = (h2 - 1) / 2 + 1, w4 = (w2 - 1) / 2 + 1;
    flat_dim_ = 2 * cfg.base_channels * h4 * w4;
    c1_ = Conv2dLayer(ps, prefix + "c1", cfg.in_channels, cfg.base_channels, 3, 2, 1, rng);
    c2_ = Conv2dLayer(ps, prefix + "c2", cfg.base_channels, 2 * cfg.base_channels, 3, 2, 1, rng);
    head_ = Linear(ps, prefix + "head", flat_dim_, cfg.d, rng);
}

Value ImageEncoder::forward(const Value& frames) const {
    const auto& s = frames.shape();
    if (s.size() != 4 || s[1] != cfg_.in_channels || s[2] != cfg_.h || s[3] != cfg_.w)
        throw std::invalid_argument("ImageEncoder: expected [N," + std::to_string(cfg_.in_channels) +
                                    "," + std::to_string(cfg_.h) + "," + std::to_string(cfg_.w) +
                                    "], got " + Tensor::shape_str(s));
    Value x = silu(c1_.forward(frames));
    x = silu(c2_.forward(x));
    return head_.forward(reshape(x, {s[0], flat_dim_}));
}

Tensor ImageEncoder::encode_image(const Tensor& frame) const {
    NoGradGuard ng;
    Tensor batched = frame.reshaped({1, frame.shape(0), frame.shape(1), frame.shape(2)});
    return forward(Value::constant(batched)).val().reshaped({cfg_.d});
}

Value clip_info_nce(const Value& text, const Value& images, const Value& logit_scale) {
    if (text.shape(0) != images.shape(0) || text.shape(1) != images.shape(1))
        throw std::invalid_argument("clip_info_nce: embedding shape mismatch");
    const int64_t B = text.shape(0);
    Value tn = l2_normalize_rows(text);
    Value im = l2_normalize_rows(images);
    Value logits = scale_by(matmul(tn, permute(im, {1, 0})), exp(logit_scale));
    std::vector<int64_t> diag(B);
    std::iota(diag.begin(), diag.end(), 0);
    Value per_text = mean_all(select_index_last(log_softmax_last(logits), diag));
    Value per_image = mean_all(select_index_last(log_softmax_last(permute(logits, {1, 0})), diag));
    return mul_scalar(add(per_text, per_image), -0.5);
}

ContrastiveStats pretrain_contrastive(ParamStore& ps, TextEncoder& content, ImageEncoder& image,
                                      const Vocab& vocab, const std::vector<std::string>& captions,
                                      const Tensor& mid_frames, const ContrastiveConfig& cfg) {
    const int64_t N = static_cast<int64_t>(captions.size());
    if (cfg.batch_size < 2) throw std::invalid_argument("pretrain_contrastive: batch_size < 2");
    if (N < cfg.batch_size)
        throw std::invalid_argument("pretrain_contrastive: fewer pairs than batch_size");
    if (mid_frames.shape(0) != N)
        throw std::invalid_argument("pretrain_contrastive: captions/frames count mismatch");

    Param* existing = ps.find("clip.logit_scale");
    Param& ls = existing ? *existing : ps.create("clip.logit_scale", {1});
    ls.val[0] = 0.0;
    ls.trainable = true;

    std::vector<TokenSequence> tokens;
    tokens.reserve(N);
    for (const auto& c : captions) tokens.push_back(tokenize(vocab, c, content.config().seq_len));

    std::vector<Param*> train = ps.with_prefix(content.prefix());
    {
        auto img = ps.with_prefix(image.prefix());
        train.insert(train.end(), img.begin(), img.end());
    }
    train.push_back(&ls);
    Adam opt(train, cfg.lr);

    Rng rng = Rng::from_stream(cfg.seed, 0xc199);
    std::vector<int64_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    int64_t cursor = N;  // forces a shuffle on the first step

    const int64_t C = mid_frames.shape(1), H = mid_frames.shape(2), W = mid_frames.shape(3);
    const int64_t frame_elems = C * H * W;

    ContrastiveStats stats;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<TokenSequence> bt(cfg.batch_size);
        Tensor bf({cfg.batch_size, C, H, W});
        for (int i = 0; i < cfg.batch_size; ++i) {
            if (cursor >= N) {
                for (int64_t j = N - 1; j > 0; --j)
                    std::swap(order[j], order[rng.uniform_index(j + 1)]);
                cursor = 0;
            }
            const int64_t pick = order[cursor++];
            bt[i] = tokens[pick];
            for (int64_t e = 0; e < frame_elems; ++e)
                bf[i * frame_elems + e] = mid_frames[pick * frame_elems + e];
        }
        Tape tape;
        opt.zero_grad();
        Value pooled = content.pool_eot(content.forward(bt), bt);
        Value img = image.forward(Value::constant(bf));
        Value loss = clip_info_nce(pooled, img, ls.value());
        tape.backward(loss);
        opt.step();
        stats.loss_history.push_back(loss.val()[0]);
    }

    ps.set_trainable_prefix(content.prefix(), false);
    ps.set_trainable_prefix(image.prefix(), false);
    ls.trainable = false;
    return stats;
}

double retrieval_top1(const TextEncoder& content, const ImageEncoder& image, const Vocab& vocab,
                      const std::vector<std::string>& captions, const Tensor& frames) {
    NoGradGuard ng;
    const int64_t N = static_cast<int64_t>(captions.size());
    if (N == 0 || frames.shape(0) != N)
        throw std::invalid_argument("retrieval_top1: captions/frames count mismatch");
    std::vector<TokenSequence> tokens;
    tokens.reserve(N);
    for (const auto& c : captions) tokens.push_back(tokenize(vocab, c, content.config().seq_len));
    Tensor te = content.encode_pooled(tokens);
    Tensor ie = image.forward(Value::constant(frames)).val();

    const int64_t d = te.shape(1);
    auto norm_row = [&](Tensor& t, int64_t r) {
        double s = 0.0;
        for (int64_t k = 0; k < d; ++k) s += t[r * d + k] * t[r * d + k];
        s = std::sqrt(s) + 1e-12;
        for (int64_t k = 0; k < d; ++k) t[r * d + k] /= s;
    };
    for (int64_t r = 0; r < N; ++r) {
        norm_row(te, r);
        norm_row(ie, r);
    }
    int hits = 0;
    for (int64_t i = 0; i < N; ++i) {
        int64_t best = 0;
        double best_sim = -2.0;
        for (int64_t j = 0; j < N; ++j) {
            double sim = 0.0;
            for (int64_t k = 0; k < d; ++k) sim += te[i * d + k] * ie[j * d + k];
            if (sim > best_sim) {
                best_sim = sim;
                best = j;
            }
        }
        if (best == i) ++hits;
    }
    return double(hits) / double(N);
}

std::pair<std::vector<std::string>, Tensor> load_caption_frame_pairs(const std::string& corpus_dir) {
    const CorpusManifest man = load_manifest(corpus_dir);
    if (man.clips.empty()) throw std::runtime_error("load_caption_frame_pairs: empty corpus");
    const int64_t N = static_cast<int64_t>(man.clips.size());
    Tensor frames({N, man.C, man.H, man.W});
    std::vector<std::string> captions;
    captions.reserve(N);
    const int64_t elems = int64_t(man.C) * man.H * man.W;
    const int mid = man.F / 2;
    for (int64_t i = 0; i < N; ++i) {
        const VideoClip clip = load_clip(corpus_dir, man.clips[i]);
        captions.push_back(clip.caption);
        for (int64_t e = 0; e < elems; ++e) frames[i * elems + e] = clip.frames[mid * elems + e];
    }
    return {std::move(captions), std::move(frames)};
}

}  // namespace dmtv
