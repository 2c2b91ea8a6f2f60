#include "dmtv/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "dmtv/io_util.hpp"

namespace dmtv {

namespace {

constexpr uint64_t kCheckpointMagic = 0x74706b63766d7464ULL;  // "dmtvckpt"
constexpr int32_t kCheckpointVersion = 1;

// Stream tags for per-step randomness; fixed so runs are resumable.
constexpr uint64_t kStreamBatch = 0x62617463;
constexpr uint64_t kStreamTime = 0x74696d65;
constexpr uint64_t kStreamEps = 0x6e6f6973;
constexpr uint64_t kStreamDrop = 0x64726f70;
constexpr uint64_t kStreamLoop = 0x6c6f6f70;

ModelConfig validated(ModelConfig cfg) {
    if (cfg.denoiser.text_dim != cfg.text.d)
        throw std::invalid_argument("ModelConfig: denoiser text_dim differs from text d");
    if (cfg.image.d != cfg.text.d)
        throw std::invalid_argument("ModelConfig: image and text embeddings differ in d");
    if (cfg.image.in_channels != cfg.denoiser.in_channels)
        throw std::invalid_argument("ModelConfig: image tower channels differ from latents");
    if (cfg.image.h != cfg.denoiser.input_hw || cfg.image.w != cfg.denoiser.input_hw)
        throw std::invalid_argument("ModelConfig: image tower resolution differs from latents");
    if (cfg.denoiser.time_steps != cfg.schedule_steps)
        throw std::invalid_argument("ModelConfig: denoiser timestep range differs from schedule");
    return cfg;
}

Tensor frame_slice(const Tensor& frames, int f) {
    const int64_t n = frames.shape(1) * frames.shape(2) * frames.shape(3);
    Tensor out({frames.shape(1), frames.shape(2), frames.shape(3)});
    for (int64_t i = 0; i < n; ++i) out[i] = frames[f * n + i];
    return out;
}

}  // namespace

uint64_t architecture_hash(const ModelConfig& cfg, int64_t vocab_size) {
    std::ostringstream os;
    const auto& t = cfg.text;
    os << "text:" << t.seq_len << ',' << t.d << ',' << t.blocks << ',' << t.heads << ','
       << t.mlp_mult << ',' << (t.causal ? 1 : 0);
    const auto& i = cfg.image;
    os << ";image:" << i.in_channels << ',' << i.h << ',' << i.w << ',' << i.base_channels
       << ',' << i.d;
    const auto& d = cfg.denoiser;
    os << ";denoiser:" << d.in_channels << ',' << d.frames << ',' << d.input_hw << ','
       << d.base_channels << ",[";
    for (int m : d.channel_mult) os << m << ' ';
    os << "]," << d.heads << ',' << d.head_dim << ",[";
    for (int r : d.attn_resolutions) os << r << ' ';
    os << "]," << d.text_dim << ',' << d.time_steps << ',' << d.norm_groups;
    os << ";T:" << cfg.schedule_steps << ";vocab:" << vocab_size;
    return fnv1a64(os.str());
}

Models::Models(const ModelConfig& mc, const Vocab& v, uint64_t init_seed)
    : cfg(validated(mc)), vocab(v), schedule(cfg.schedule_steps) {
    Rng rng = Rng::from_stream(init_seed, 0x6d6f64656c);
    content = TextEncoder(ps, "content.", cfg.text, vocab.size(), rng);
    motion = TextEncoder(ps, "motion.", cfg.text, vocab.size(), rng);
    image = ImageEncoder(ps, "image.", cfg.image, rng);
    ps.create("clip.logit_scale", {1});
    unet = UNet(ps, cfg.denoiser, rng);
}

void save_checkpoint(const std::string& path, const Models& m, int64_t step,
                     const std::vector<uint64_t>& rng_state, const Adam* opt) {
    std::vector<uint8_t> buf;
    append_u64(buf, kCheckpointMagic);
    append_i32(buf, kCheckpointVersion);
    append_u64(buf, m.hash());
    append_i64(buf, step);
    append_u64(buf, rng_state.size());
    for (uint64_t w : rng_state) append_u64(buf, w);

    const auto& params = m.ps.all();
    append_i64(buf, static_cast<int64_t>(params.size()));
    for (const Param* p : params) {
        append_str(buf, p->name);
        append_i32(buf, p->val.ndim());
        for (int64_t dim : p->val.shape()) append_i64(buf, dim);
        for (int64_t i = 0; i < p->val.numel(); ++i) append_f64(buf, p->val[i]);
    }

    append_i32(buf, opt ? 1 : 0);
    if (opt) {
        Adam& o = *const_cast<Adam*>(opt);
        append_i64(buf, o.step_count());
        append_i64(buf, static_cast<int64_t>(o.params().size()));
        for (size_t i = 0; i < o.params().size(); ++i) {
            append_str(buf, o.params()[i]->name);
            const Tensor& mm = o.m()[i];
            const Tensor& vv = o.v()[i];
            append_i64(buf, mm.numel());
            for (int64_t k = 0; k < mm.numel(); ++k) append_f64(buf, mm[k]);
            for (int64_t k = 0; k < vv.numel(); ++k) append_f64(buf, vv[k]);
        }
    }
    write_file_bytes(path, buf);
}

CheckpointMeta load_checkpoint(const std::string& path, Models& m, Adam* opt) {
    const std::vector<uint8_t> buf = read_file_bytes(path);
    size_t pos = 0;
    if (read_u64(buf, pos) != kCheckpointMagic)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    CheckpointMeta meta;
    meta.version = read_i32(buf, pos);
    if (meta.version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(meta.version));
    const uint64_t hash = read_u64(buf, pos);
    if (hash != m.hash())
        throw std::runtime_error("checkpoint: architecture hash mismatch, file " + hex64(hash) +
                                 " vs models " + hex64(m.hash()));
    meta.step = read_i64(buf, pos);
    const uint64_t rng_len = read_u64(buf, pos);
    meta.rng_state.resize(rng_len);
    for (uint64_t i = 0; i < rng_len; ++i) meta.rng_state[i] = read_u64(buf, pos);

    const int64_t count = read_i64(buf, pos);
    if (count != static_cast<int64_t>(m.ps.all().size()))
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (int64_t i = 0; i < count; ++i) {
        const std::string name = read_str(buf, pos);
        Param* p = m.ps.find(name);
        if (!p) throw std::runtime_error("checkpoint: unknown parameter " + name);
        const int32_t nd = read_i32(buf, pos);
        std::vector<int64_t> shape(nd);
        for (int32_t k = 0; k < nd; ++k) shape[k] = read_i64(buf, pos);
        if (shape != p->val.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        for (int64_t k = 0; k < p->val.numel(); ++k) p->val[k] = read_f64(buf, pos);
    }

    meta.has_optimizer = read_i32(buf, pos) != 0;
    if (opt) {
        if (!meta.has_optimizer)
            throw std::runtime_error("checkpoint: no optimizer state to resume from");
        opt->set_step_count(read_i64(buf, pos));
        const int64_t ocount = read_i64(buf, pos);
        std::unordered_map<std::string, size_t> index;
        for (size_t i = 0; i < opt->params().size(); ++i) index[opt->params()[i]->name] = i;
        if (ocount != static_cast<int64_t>(index.size()))
            throw std::runtime_error("checkpoint: optimizer parameter set mismatch");
        for (int64_t i = 0; i < ocount; ++i) {
            const std::string name = read_str(buf, pos);
            auto it = index.find(name);
            if (it == index.end())
                throw std::runtime_error("checkpoint: optimizer state for unknown param " + name);
            Tensor& mm = opt->m()[it->second];
            Tensor& vv = opt->v()[it->second];
            const int64_t n = read_i64(buf, pos);
            if (n != mm.numel())
                throw std::runtime_error("checkpoint: optimizer state size mismatch for " + name);
            for (int64_t k = 0; k < n; ++k) mm[k] = read_f64(buf, pos);
            for (int64_t k = 0; k < n; ++k) vv[k] = read_f64(buf, pos);
        }
    }
    return meta;
}

double one_cycle_lr(int64_t step, int64_t total_steps, double lo, double hi) {
    if (total_steps <= 1) return hi;
    const double x = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    const double warm = 0.3;
    if (x <= warm) return lo + (hi - lo) * (x / warm);
    const double y = (x - warm) / (1.0 - warm);
    return lo + (hi - lo) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * y));
}

TrainSet load_train_set(const std::string& corpus_dir) {
    TrainSet set;
    const CorpusManifest manifest = load_manifest(corpus_dir);
    set.clips.reserve(manifest.clips.size());
    for (const ManifestEntry& e : manifest.clips) set.clips.push_back(load_clip(corpus_dir, e));
    return set;
}

Trainer::Trainer(Models& m, const TrainConfig& cfg) : m_(m), cfg_(cfg) {
    if (cfg.text_drop_prob < 0.0 || cfg.text_drop_prob > 1.0)
        throw std::invalid_argument("Trainer: text_drop_prob outside [0,1]");
    if (cfg.batch_size < 1) throw std::invalid_argument("Trainer: batch_size must be positive");
    if (cfg.steps < 1) throw std::invalid_argument("Trainer: steps must be positive");
    if (cfg.lr_min <= 0.0 || cfg.lr_max < cfg.lr_min)
        throw std::invalid_argument("Trainer: need 0 < lr_min <= lr_max");

    abl_ = cfg.ablation;
    if (cfg_.stage == TrainStage::base) {
        // The base stage is plain text-to-video diffusion: no motion losses,
        // no motion conditioning.
        abl_.text_motion = abl_.reg = abl_.video_motion = true;
        abl_.motion_encoder = abl_.motion_blocks = true;
    }

    m_.ps.set_trainable_prefix("content.", false);
    m_.ps.set_trainable_prefix("image.", false);
    m_.ps.set_trainable_prefix("clip.", false);
    if (cfg_.stage == TrainStage::base) {
        m_.ps.set_trainable_prefix("unet.", true);
        m_.ps.set_trainable_prefix("motion.", false);
        m_.ps.set_trainable_prefix("mblocks.", false);
    } else {
        m_.ps.set_trainable_prefix("unet.", false);
        m_.ps.set_trainable_prefix("motion.", !abl_.motion_encoder);
        m_.ps.set_trainable_prefix("mblocks.", !abl_.motion_blocks);
    }
    opt_ = std::make_unique<Adam>(m_.ps.trainable(), cfg_.lr_min);
}

bool Trainer::would_drop(int64_t step, int64_t sample) const {
    Rng rng = Rng::from_stream(cfg_.seed, kStreamDrop, static_cast<uint64_t>(step),
                               static_cast<uint64_t>(sample));
    return rng.uniform() < cfg_.text_drop_prob;
}

std::vector<const VideoClip*> Trainer::sample_batch(const TrainSet& data) const {
    if (data.clips.empty()) throw std::invalid_argument("Trainer: train set is empty");
    Rng rng = Rng::from_stream(cfg_.seed, kStreamBatch, static_cast<uint64_t>(step_), 0);
    std::vector<const VideoClip*> batch;
    batch.reserve(cfg_.batch_size);
    for (int i = 0; i < cfg_.batch_size; ++i)
        batch.push_back(&data.clips[rng.uniform_index(data.clips.size())]);
    return batch;
}

LossBreakdown Trainer::train_step(const std::vector<const VideoClip*>& batch) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const uint64_t s = static_cast<uint64_t>(step_);
    const int64_t seq = m_.cfg.text.seq_len;
    const int64_t d = m_.cfg.text.d;
    const bool demo = cfg_.stage == TrainStage::demo;
    const bool blocks_on = demo && !abl_.motion_blocks;
    const bool tm_on = blocks_on && !abl_.text_motion;
    const bool rg_on = demo && !abl_.reg;
    const bool vm_on = demo && !abl_.video_motion;
    const bool motion_trains = demo && !abl_.motion_encoder;

    m_.ps.zero_grad();
    Tape tape;

    Value d_acc, tm_acc, rg_acc, vm_acc;
    bool tm_any = false, rg_any = false, vm_any = false;
    for (size_t j = 0; j < batch.size(); ++j) {
        const VideoClip& clip = *batch[j];

        Rng r_t = Rng::from_stream(cfg_.seed, kStreamTime, s, j);
        const int t = static_cast<int>(r_t.uniform_index(m_.schedule.T()));
        const bool drop = would_drop(step_, static_cast<int64_t>(j));
        ++coins_;
        if (drop) ++dropped_;
        const TokenSequence toks =
            tokenize(m_.vocab, drop ? "" : clip.caption, m_.cfg.text.seq_len);

        const Tensor z0 = to_latent(clip.frames);
        Tensor eps(z0.shape());
        Rng r_eps = Rng::from_stream(cfg_.seed, kStreamEps, s, j);
        fill_normal(eps, r_eps, 1.0);
        const Tensor zt = forward_diffuse(m_.schedule, z0, t, eps);

        Value content_tok;
        {
            NoGradGuard ng;
            content_tok =
                Value::constant(m_.content.forward({toks}).val().reshaped({seq, d}));
        }

        Value motion_tok = content_tok;
        Value motion_pooled;
        if (demo) {
            if (motion_trains) {
                Value mt = m_.motion.forward({toks});
                motion_tok = reshape(mt, {seq, d});
                if (rg_on) motion_pooled = reshape(m_.motion.pool_eot(mt, {toks}), {d});
            } else {
                NoGradGuard ng;
                Value mt = m_.motion.forward({toks});
                motion_tok = Value::constant(mt.val().reshaped({seq, d}));
                if (rg_on)
                    motion_pooled =
                        Value::constant(m_.motion.pool_eot(mt, {toks}).val().reshaped({d}));
            }
        }

        DenoiseOptions opts;
        opts.use_motion_blocks = blocks_on;
        opts.capture = tm_on;
        DenoiseResult res =
            m_.unet.forward(Value::constant(zt), t, content_tok, motion_tok, opts);

        Value dj = loss_diffusion(Value::constant(eps), res.eps_hat);
        d_acc = j == 0 ? dj : add(d_acc, dj);

        if (tm_on) {
            Value tj = loss_text_motion(res.capture, toks.eot_index, clip, cfg_.flow_iters,
                                        cfg_.lambda_smooth);
            tm_acc = tm_any ? add(tm_acc, tj) : tj;
            tm_any = true;
        }
        if (rg_on) {
            Tensor emb;
            {
                NoGradGuard ng;
                emb = m_.image.encode_image(
                    frame_slice(clip.frames, m_.cfg.denoiser.frames / 2));
            }
            Value rj = loss_reg(motion_pooled, emb);
            rg_acc = rg_any ? add(rg_acc, rj) : rj;
            rg_any = true;
        }
        if (vm_on) {
            Value zhat0 = predict_x0_value(m_.schedule, Value::constant(zt), t, res.eps_hat);
            Value vj = loss_video_motion(Value::constant(z0), zhat0);
            vm_acc = vm_any ? add(vm_acc, vj) : vj;
            vm_any = true;
        }
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    const Value zero = Value::constant(Tensor({1}, 0.0));
    WeightedLoss wl = loss_total(mul_scalar(d_acc, inv),
                                 tm_any ? mul_scalar(tm_acc, inv) : zero,
                                 rg_any ? mul_scalar(rg_acc, inv) : zero,
                                 vm_any ? mul_scalar(vm_acc, inv) : zero, cfg_.weights);
    tape.backward(wl.total);
    opt_->set_lr(one_cycle_lr(step_, cfg_.steps, cfg_.lr_min, cfg_.lr_max));
    opt_->step();
    ++step_;
    return wl.parts;
}

LossBreakdown Trainer::train_step_auto(const TrainSet& data) {
    return train_step(sample_batch(data));
}

TrainResult run_training(Models& m, const TrainConfig& cfg, const TrainSet& data,
                         const TrainRunOptions& opts) {
    if (data.clips.empty()) throw std::invalid_argument("run_training: train set is empty");
    std::filesystem::create_directories(opts.out_dir);

    Trainer trainer(m, cfg);
    int64_t start = 0;
    if (!opts.init_checkpoint.empty()) {
        if (!file_exists(opts.init_checkpoint))
            throw std::runtime_error("run_training: missing pretraining fixture " +
                                     opts.init_checkpoint);
        const CheckpointMeta meta =
            load_checkpoint(opts.init_checkpoint, m, opts.resume ? &trainer.optimizer() : nullptr);
        if (opts.resume) {
            start = meta.step;
            trainer.set_step(start);
        }
    }
    if (cfg.stage == TrainStage::demo && !opts.resume)
        copy_params(m.ps, "content.", "motion.");

    TrainResult result;
    result.first_step = start;
    std::vector<std::string> rows;
    std::string last_checkpoint =
        opts.init_checkpoint.empty() ? "(none)" : opts.init_checkpoint;

    auto flush_csv = [&]() {
        const std::string csv_path = opts.out_dir + "/loss.csv";
        std::ofstream os(csv_path, std::ios::binary);
        os << loss_csv_header() << '\n';
        for (const std::string& r : rows) os << r << '\n';
        result.loss_csv = csv_path;
    };

    for (int64_t s = start; s < cfg.steps; ++s) {
        LossBreakdown parts;
        try {
            parts = trainer.train_step_auto(data);
        } catch (const std::runtime_error& e) {
            flush_csv();
            throw std::runtime_error("training aborted at step " + std::to_string(s) + ": " +
                                     e.what() + "; last good checkpoint: " + last_checkpoint);
        }
        rows.push_back(loss_csv_row(s, parts));
        result.history.push_back(parts);
        if (cfg.checkpoint_interval > 0 && (s + 1) % cfg.checkpoint_interval == 0 &&
            s + 1 < cfg.steps) {
            const std::string path =
                opts.out_dir + "/ckpt_step" + std::to_string(s + 1) + ".bin";
            save_checkpoint(path, m, s + 1,
                            Rng::from_stream(cfg.seed, kStreamLoop, s + 1).state(),
                            &trainer.optimizer());
            last_checkpoint = path;
        }
    }

    const std::string final_path = opts.out_dir + "/ckpt_final.bin";
    save_checkpoint(final_path, m, cfg.steps,
                    Rng::from_stream(cfg.seed, kStreamLoop, cfg.steps).state(),
                    &trainer.optimizer());
    result.final_checkpoint = final_path;
    result.dropped_captions = trainer.dropped_captions();
    result.drop_coins = trainer.drop_coins();
    flush_csv();
    return result;
}

}  // namespace dmtv
