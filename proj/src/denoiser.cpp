#include "dmtv/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dmtv {

namespace {

// Keys or values [S, ch] -> [batch*heads, S, dh], repeated for every batch row.
Value cross_heads(const Value& kv, int heads, int64_t batch) {
    const int64_t S = kv.shape(0), ch = kv.shape(1);
    return tile_dim0(permute(reshape(kv, {S, heads, ch / heads}), {1, 0, 2}), batch);
}

Tensor sinusoidal_embedding(int t, int dim) {
    Tensor e({1, dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double f = std::exp(-std::log(10000.0) * double(i) / double(half));
        e[i] = std::sin(t * f);
        e[half + i] = std::cos(t * f);
    }
    return e;
}

}  // namespace

std::vector<Value> eot_map(const AttentionCapture& capture, int eot_index) {
    std::vector<Value> out;
    out.reserve(capture.maps.size());
    for (const Value& m : capture.maps) {
        if (eot_index < 0 || eot_index >= m.shape(3))
            throw std::out_of_range("eot_map: eot index " + std::to_string(eot_index) +
                                    " outside S=" + std::to_string(m.shape(3)));
        out.push_back(reshape(slice_dim(m, 3, eot_index, 1), {m.shape(0), m.shape(1), m.shape(2)}));
    }
    return out;
}

SpatialTransformer::SpatialTransformer(ParamStore& ps, const std::string& name, int ch_, int heads_,
                                       int text_dim, int norm_groups, Rng& rng)
    : ch(ch_), heads(heads_) {
    gn = GroupNormLayer(ps, name + "gn", norm_groups, ch);
    pin = Conv2dLayer(ps, name + "pin", ch, ch, 1, 1, 0, rng);
    ln1 = LayerNormLayer(ps, name + "ln1", ch);
    q = Linear(ps, name + "q", ch, ch, rng);
    k = Linear(ps, name + "k", ch, ch, rng);
    v = Linear(ps, name + "v", ch, ch, rng);
    o = Linear(ps, name + "o", ch, ch, rng);
    ln2 = LayerNormLayer(ps, name + "ln2", ch);
    xq = Linear(ps, name + "xq", ch, ch, rng);
    xk = Linear(ps, name + "xk", text_dim, ch, rng);
    xv = Linear(ps, name + "xv", text_dim, ch, rng);
    xo = Linear(ps, name + "xo", ch, ch, rng);
    ln3 = LayerNormLayer(ps, name + "ln3", ch);
    f1 = Linear(ps, name + "f1", ch, 4 * ch, rng);
    f2 = Linear(ps, name + "f2", 4 * ch, ch, rng);
    pout = Conv2dLayer(ps, name + "pout", ch, ch, 1, 1, 0, rng, /*zero_init=*/true);
}

Value SpatialTransformer::forward(const Value& h, const Value& content_tokens) const {
    const int64_t F = h.shape(0), Hi = h.shape(2), Wi = h.shape(3);
    const int64_t N = Hi * Wi;
    const double scale = 1.0 / std::sqrt(double(ch / heads));

    Value x = pin.forward(gn.forward(h));
    x = reshape(permute(x, {0, 2, 3, 1}), {F, N, int64_t(ch)});
    {
        Value y = ln1.forward(x);
        Value qq = split_heads(q.forward3(y), heads);
        Value kk = split_heads(k.forward3(y), heads);
        Value vv = split_heads(v.forward3(y), heads);
        Value at = softmax_last(mul_scalar(bmm(qq, permute(kk, {0, 2, 1})), scale));
        x = add(x, o.forward3(merge_heads(bmm(at, vv), F, heads)));
    }
    {
        Value y = ln2.forward(x);
        Value qq = split_heads(xq.forward3(y), heads);
        Value kk = cross_heads(xk.forward(content_tokens), heads, F);
        Value vv = cross_heads(xv.forward(content_tokens), heads, F);
        Value at = softmax_last(mul_scalar(bmm(qq, permute(kk, {0, 2, 1})), scale));
        x = add(x, xo.forward3(merge_heads(bmm(at, vv), F, heads)));
    }
    x = add(x, f2.forward3(gelu(f1.forward3(ln3.forward(x)))));
    x = permute(reshape(x, {F, Hi, Wi, int64_t(ch)}), {0, 3, 1, 2});
    return add(h, pout.forward(x));
}

MotionTransformer::MotionTransformer(ParamStore& ps, const std::string& name, int ch_, int heads_,
                                     int text_dim, int norm_groups, int frames, Rng& rng)
    : ch(ch_), heads(heads_) {
    gn = GroupNormLayer(ps, name + "gn", norm_groups, ch);
    pin = Linear(ps, name + "pin", ch, ch, rng);
    pos = &ps.create(name + "pos", {frames, ch});
    fill_normal(pos->val, rng, 0.01);
    ln1 = LayerNormLayer(ps, name + "ln1", ch);
    q = Linear(ps, name + "q", ch, ch, rng);
    k = Linear(ps, name + "k", ch, ch, rng);
    v = Linear(ps, name + "v", ch, ch, rng);
    o = Linear(ps, name + "o", ch, ch, rng);
    ln2 = LayerNormLayer(ps, name + "ln2", ch);
    xq = Linear(ps, name + "xq", ch, ch, rng);
    xk = Linear(ps, name + "xk", text_dim, ch, rng);
    xv = Linear(ps, name + "xv", text_dim, ch, rng);
    xo = Linear(ps, name + "xo", ch, ch, rng);
    ln3 = LayerNormLayer(ps, name + "ln3", ch);
    f1 = Linear(ps, name + "f1", ch, 8 * ch, rng);  // two gate halves of width 4*ch
    f2 = Linear(ps, name + "f2", 4 * ch, ch, rng);
    pout = Linear(ps, name + "pout", ch, ch, rng, /*zero_init=*/true);
}

Value MotionTransformer::forward(const Value& h, const Value& motion_tokens,
                                 Value* capture_to) const {
    const int64_t F = h.shape(0), Hi = h.shape(2), Wi = h.shape(3);
    const int64_t N = Hi * Wi;
    const double scale = 1.0 / std::sqrt(double(ch / heads));

    Value x = reshape(permute(gn.forward(h), {2, 3, 0, 1}), {N, F, int64_t(ch)});
    x = pin.forward3(x);
    x = add_bcast0(x, pos->value());
    {
        Value y = ln1.forward(x);
        Value qq = split_heads(q.forward3(y), heads);
        Value kk = split_heads(k.forward3(y), heads);
        Value vv = split_heads(v.forward3(y), heads);
        Value at = softmax_last(mul_scalar(bmm(qq, permute(kk, {0, 2, 1})), scale));
        x = add(x, o.forward3(merge_heads(bmm(at, vv), N, heads)));
    }
    {
        const int64_t S = motion_tokens.shape(0);
        Value y = ln2.forward(x);
        Value qq = split_heads(xq.forward3(y), heads);
        Value kk = cross_heads(xk.forward(motion_tokens), heads, N);
        Value vv = cross_heads(xv.forward(motion_tokens), heads, N);
        Value at = softmax_last(mul_scalar(bmm(qq, permute(kk, {0, 2, 1})), scale));
        if (capture_to)
            *capture_to = reshape(mean_dim(reshape(at, {N, int64_t(heads), F, S}), 1),
                                  {Hi, Wi, F, S});
        x = add(x, xo.forward3(merge_heads(bmm(at, vv), N, heads)));
    }
    {
        Value g = f1.forward3(ln3.forward(x));
        Value a = slice_dim(g, 2, 0, 4 * ch);
        Value b = slice_dim(g, 2, 4 * ch, 4 * ch);
        x = add(x, f2.forward3(mul(a, gelu(b))));
    }
    x = pout.forward3(x);
    return add(h, permute(reshape(x, {Hi, Wi, F, int64_t(ch)}), {2, 3, 0, 1}));
}

UNet::ResBlock::ResBlock(ParamStore& ps, const std::string& name, int ch_in, int ch_out_,
                         int temb_dim, int norm_groups, Rng& rng)
    : ch_out(ch_out_) {
    gn1 = GroupNormLayer(ps, name + "gn1", norm_groups, ch_in);
    c1 = Conv2dLayer(ps, name + "c1", ch_in, ch_out, 3, 1, 1, rng);
    emb = Linear(ps, name + "emb", temb_dim, ch_out, rng);
    gn2 = GroupNormLayer(ps, name + "gn2", norm_groups, ch_out);
    c2 = Conv2dLayer(ps, name + "c2", ch_out, ch_out, 3, 1, 1, rng, /*zero_init=*/true);
    has_skip = ch_in != ch_out;
    if (has_skip) skip = Conv2dLayer(ps, name + "skip", ch_in, ch_out, 1, 1, 0, rng);
}

Value UNet::ResBlock::forward(const Value& x, const Value& temb) const {
    Value h = c1.forward(silu(gn1.forward(x)));
    h = add_channel_bias(h, reshape(emb.forward(silu(temb)), {int64_t(ch_out)}));
    h = c2.forward(silu(gn2.forward(h)));
    return add(h, has_skip ? skip.forward(x) : x);
}

UNet::UNet(ParamStore& ps, const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int L = static_cast<int>(cfg.channel_mult.size());
    if (L < 1) throw std::invalid_argument("UNet: channel_mult must not be empty");
    if (cfg.base_channels % 2 != 0)
        throw std::invalid_argument("UNet: base_channels must be even");
    const int head_dim = cfg.head_dim ? cfg.head_dim : cfg.base_channels / cfg.heads;
    if (head_dim * cfg.heads != cfg.base_channels)
        throw std::invalid_argument("UNet: heads * head_dim must equal base_channels");
    if (cfg.input_hw % (1 << (L - 1)) != 0)
        throw std::invalid_argument("UNet: input_hw not divisible across levels");

    std::vector<int> res(L), chs(L);
    for (int i = 0; i < L; ++i) {
        res[i] = cfg.input_hw >> i;
        chs[i] = cfg.base_channels * cfg.channel_mult[i];
        if (chs[i] % head_dim != 0)
            throw std::invalid_argument("UNet: level width not divisible by head_dim");
        if (chs[i] % cfg.norm_groups != 0)
            throw std::invalid_argument("UNet: level width not divisible by norm_groups");
    }
    auto attended = [&](int level) {
        if (cfg.attn_resolutions.empty()) return true;
        return std::find(cfg.attn_resolutions.begin(), cfg.attn_resolutions.end(), res[level]) !=
               cfg.attn_resolutions.end();
    };
    for (int r : cfg.attn_resolutions)
        if (std::find(res.begin(), res.end(), r) == res.end())
            throw std::invalid_argument("UNet: attn resolution " + std::to_string(r) +
                                        " never occurs in the down path");

    temb_dim_ = 4 * cfg.base_channels;
    temb_l1_ = Linear(ps, "unet.temb.l1", cfg.base_channels, temb_dim_, rng);
    temb_l2_ = Linear(ps, "unet.temb.l2", temb_dim_, temb_dim_, rng);
    cin_ = Conv2dLayer(ps, "unet.cin", cfg.in_channels, cfg.base_channels, 3, 1, 1, rng);

    down_.resize(L);
    up_.resize(L);
    int ch_prev = cfg.base_channels;
    for (int i = 0; i < L; ++i) {
        const std::string id = std::to_string(i);
        Level& lv = down_[i];
        lv.res = ResBlock(ps, "unet.d" + id + ".res.", ch_prev, chs[i], temb_dim_,
                          cfg.norm_groups, rng);
        lv.attended = attended(i);
        if (lv.attended) {
            const int nh = chs[i] / head_dim;
            lv.sp = SpatialTransformer(ps, "unet.d" + id + ".sp.", chs[i], nh, cfg.text_dim,
                                       cfg.norm_groups, rng);
            lv.mo = MotionTransformer(ps, "mblocks.d" + id + ".", chs[i], nh, cfg.text_dim,
                                      cfg.norm_groups, cfg.frames, rng);
            sites_.push_back("d" + id);
        }
        if (i + 1 < L)
            lv.resize = Conv2dLayer(ps, "unet.d" + id + ".down", chs[i], chs[i], 3, 2, 1, rng);
        ch_prev = chs[i];
    }

    const int ch_bot = chs[L - 1];
    mid_res0_ = ResBlock(ps, "unet.m.res0.", ch_bot, ch_bot, temb_dim_, cfg.norm_groups, rng);
    mid_attended_ = attended(L - 1);
    if (mid_attended_) {
        const int nh = ch_bot / head_dim;
        mid_sp_ = SpatialTransformer(ps, "unet.m.sp.", ch_bot, nh, cfg.text_dim,
                                     cfg.norm_groups, rng);
        mid_mo_ = MotionTransformer(ps, "mblocks.m.", ch_bot, nh, cfg.text_dim,
                                    cfg.norm_groups, cfg.frames, rng);
        sites_.push_back("m");
    }
    mid_res1_ = ResBlock(ps, "unet.m.res1.", ch_bot, ch_bot, temb_dim_, cfg.norm_groups, rng);

    for (int i = L - 1; i >= 0; --i) {
        const std::string id = std::to_string(i);
        Level& lv = up_[i];
        const int ch_above = i == L - 1 ? chs[i] : chs[i + 1];
        lv.res = ResBlock(ps, "unet.u" + id + ".res.", chs[i] + ch_above, chs[i], temb_dim_,
                          cfg.norm_groups, rng);
        lv.attended = attended(i);
        if (lv.attended) {
            const int nh = chs[i] / head_dim;
            lv.sp = SpatialTransformer(ps, "unet.u" + id + ".sp.", chs[i], nh, cfg.text_dim,
                                       cfg.norm_groups, rng);
            lv.mo = MotionTransformer(ps, "mblocks.u" + id + ".", chs[i], nh, cfg.text_dim,
                                      cfg.norm_groups, cfg.frames, rng);
            sites_.push_back("u" + id);
        }
        if (i > 0) lv.resize = Conv2dLayer(ps, "unet.u" + id + ".up", chs[i], chs[i], 3, 1, 1, rng);
    }

    out_gn_ = GroupNormLayer(ps, "unet.out.gn", cfg.norm_groups, cfg.base_channels);
    out_c_ = Conv2dLayer(ps, "unet.out.c", cfg.base_channels, cfg.in_channels, 3, 1, 1, rng,
                         /*zero_init=*/true);
}

Value UNet::time_embedding(int t) const {
    Value e = Value::constant(sinusoidal_embedding(t, cfg_.base_channels));
    return temb_l2_.forward(silu(temb_l1_.forward(e)));
}

DenoiseResult UNet::forward(const Value& zt, int t, const Value& content_tokens,
                            const Value& motion_tokens, const DenoiseOptions& opts) const {
    const auto& s = zt.shape();
    if (s.size() != 4 || s[0] != cfg_.frames || s[1] != cfg_.in_channels ||
        s[2] != cfg_.input_hw || s[3] != cfg_.input_hw)
        throw std::invalid_argument("UNet: latent shape mismatch, got " + Tensor::shape_str(s));
    if (t < 0 || t >= cfg_.time_steps) throw std::out_of_range("UNet: t out of range");
    for (const Value* tok : {&content_tokens, &motion_tokens})
        if (tok->shape().size() != 2 || tok->shape(1) != cfg_.text_dim)
            throw std::invalid_argument("UNet: token array must be [S, text_dim]");

    const int L = static_cast<int>(down_.size());
    DenoiseResult out;
    Value temb = time_embedding(t);
    Value h = cin_.forward(zt);

    auto run_motion = [&](const MotionTransformer& mo, const std::string& id, Value x) {
        if (!opts.use_motion_blocks) return x;
        Value cap;
        x = mo.forward(x, motion_tokens, opts.capture ? &cap : nullptr);
        if (opts.capture) {
            out.capture.maps.push_back(cap);
            out.capture.layer_ids.push_back(id);
        }
        return x;
    };

    std::vector<Value> skips(L);
    for (int i = 0; i < L; ++i) {
        h = down_[i].res.forward(h, temb);
        if (down_[i].attended) {
            h = down_[i].sp.forward(h, content_tokens);
            h = run_motion(down_[i].mo, "d" + std::to_string(i), h);
        }
        skips[i] = h;
        if (i + 1 < L) h = down_[i].resize.forward(h);
    }

    h = mid_res0_.forward(h, temb);
    if (mid_attended_) {
        h = mid_sp_.forward(h, content_tokens);
        h = run_motion(mid_mo_, "m", h);
    }
    h = mid_res1_.forward(h, temb);

    for (int i = L - 1; i >= 0; --i) {
        h = concat_dim(h, skips[i], 1);
        h = up_[i].res.forward(h, temb);
        if (up_[i].attended) {
            h = up_[i].sp.forward(h, content_tokens);
            h = run_motion(up_[i].mo, "u" + std::to_string(i), h);
        }
        if (i > 0) h = up_[i].resize.forward(upsample_nearest2x(h));
    }

    out.eps_hat = out_c_.forward(silu(out_gn_.forward(h)));
    return out;
}

Tensor UNet::predict_noise(const Tensor& zt, int t, const Tensor& content_tokens,
                           const Tensor& motion_tokens) const {
    NoGradGuard ng;
    return forward(Value::constant(zt), t, Value::constant(content_tokens),
                   Value::constant(motion_tokens))
        .eps_hat.val();
}

}  // namespace dmtv
