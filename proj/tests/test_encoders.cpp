#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "dmtv/encoders.hpp"
#include "dmtv/motionfeat.hpp"
#include "dmtv/synthdata.hpp"
#include "doctest.h"

using namespace dmtv;

namespace {

std::string fresh_dir(const std::string& name) {
    const std::string dir = "test_tmp/" + name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

Vocab corpus_vocab() { return Vocab::build(caption_vocabulary()); }

std::vector<double> pooled_row(const Tensor& pooled, int64_t b) {
    const int64_t d = pooled.shape(1);
    std::vector<double> out(d);
    for (int64_t k = 0; k < d; ++k) out[k] = pooled[b * d + k];
    return out;
}

}  // namespace

TEST_SUITE("encoders") {

TEST_CASE("vocabulary pins reserved ids and survives a file round-trip") {
    Vocab v = corpus_vocab();
    CHECK(v.size() == 4 + 27);
    CHECK(v.id("[pad]") == Vocab::kPad);
    CHECK(v.id("[bos]") == Vocab::kBos);
    CHECK(v.id("[eot]") == Vocab::kEot);
    CHECK(v.id("[unk]") == Vocab::kUnk);
    CHECK(v.token(0) == "[pad]");
    CHECK(v.token(3) == "[unk]");
    CHECK(v.id("circle") >= 4);
    CHECK(v.id("no-such-word") == Vocab::kUnk);
    CHECK_THROWS_AS(v.token(v.size()), std::out_of_range);
    CHECK_THROWS_AS(Vocab::build({"red", "red"}), std::invalid_argument);

    const std::string dir = fresh_dir("vocab_roundtrip");
    v.save(dir + "/vocab.txt");
    Vocab loaded = Vocab::load(dir + "/vocab.txt");
    CHECK(loaded.size() == v.size());
    for (int i = 0; i < v.size(); ++i) CHECK(loaded.token(i) == v.token(i));
    CHECK_THROWS_AS(Vocab::load(dir + "/missing.txt"), std::runtime_error);
}

TEST_CASE("tokenize lays out bos, words, eot, then padding") {
    Vocab v = corpus_vocab();
    const int S = 16;

    TokenSequence empty = tokenize(v, "", S);
    CHECK(empty.eot_index == 1);
    CHECK(empty.ids[0] == Vocab::kBos);
    CHECK(empty.ids[1] == Vocab::kEot);
    for (int i = 2; i < S; ++i) CHECK(empty.ids[i] == Vocab::kPad);

    TokenSequence eleven = tokenize(v, "a a a a a a a a a a a", S);
    CHECK(eleven.eot_index == 12);
    CHECK(eleven.ids[12] == Vocab::kEot);
    const auto mask = eleven.pad_mask();
    for (int i = 0; i <= 12; ++i) CHECK_FALSE(mask[i]);
    for (int i = 13; i < S; ++i) CHECK(mask[i]);

    TokenSequence corpus = tokenize(v, render_caption(SceneSpec{}), S);
    CHECK(corpus.eot_index == 14);  // 13 template words plus [bos]
}

TEST_CASE("tokenize maps unknown words to unk and rejects overlong captions") {
    Vocab v = corpus_vocab();
    TokenSequence t = tokenize(v, "a glorious circle", 16);
    CHECK(t.ids[1] == v.id("a"));
    CHECK(t.ids[2] == Vocab::kUnk);
    CHECK(t.ids[3] == v.id("circle"));
    CHECK(t.eot_index == 4);

    CHECK_THROWS_AS(tokenize(v, "a b c d e", 6), std::invalid_argument);
    CHECK_NOTHROW(tokenize(v, "a b c d", 6));
}

TEST_CASE("detokenize inverts tokenize on 1000 sampled corpus captions") {
    Vocab v = corpus_vocab();
    Rng rng(20260818);
    for (int i = 0; i < 1000; ++i) {
        const std::string caption = render_caption(sample_spec(rng));
        const TokenSequence t = tokenize(v, caption, 16);
        CHECK(detokenize(v, t) == caption);
    }
}

TEST_CASE("text encoder is deterministic and pools the eot row") {
    Vocab v = corpus_vocab();
    ParamStore ps;
    Rng rng(7);
    TextEncoderConfig tc;
    tc.d = 32;
    TextEncoder enc(ps, "content.", tc, v.size(), rng);

    std::vector<TokenSequence> batch = {
        tokenize(v, "a big red circle moves slowly toward the left on the plain background", 16),
        tokenize(v, "a small blue star drifts quickly toward the up on the striped background", 16),
    };
    Tensor a = enc.encode_pooled(batch);
    Tensor b = enc.encode_pooled(batch);
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK(all_finite(a));

    NoGradGuard ng;
    Value tokens = enc.forward(batch);
    Value pooled = enc.pool_eot(tokens, batch);
    for (int64_t s = 0; s < 2; ++s) {
        const int eot = batch[s].eot_index;
        for (int64_t k = 0; k < tc.d; ++k) {
            const double from_tokens = tokens.val()[(s * 16 + eot) * tc.d + k];
            CHECK(pooled.val()[s * tc.d + k] == from_tokens);
        }
    }

    // Captions differing in one content word already separate at init.
    const double cos = safe_cosine_flat(pooled_row(a, 0), pooled_row(a, 1));
    CHECK(cos < 0.999999);

    TokenSequence bad = batch[0];
    bad.ids.push_back(0);
    CHECK_THROWS_AS(enc.forward({bad}), std::invalid_argument);
}

TEST_CASE("causal config stops early positions from seeing later words") {
    Vocab v = corpus_vocab();
    ParamStore ps;
    Rng rng(11);
    TextEncoderConfig tc;
    tc.d = 32;
    tc.causal = true;
    TextEncoder enc(ps, "content.", tc, v.size(), rng);

    std::vector<TokenSequence> batch = {
        tokenize(v, "a big red circle", 16),
        tokenize(v, "a big red star", 16),
    };
    NoGradGuard ng;
    Tensor tokens = enc.forward(batch).val();
    // States at position 1 (the shared word "a") depend only on the prefix.
    for (int64_t k = 0; k < tc.d; ++k)
        CHECK(tokens[(0 * 16 + 1) * tc.d + k] == doctest::Approx(tokens[(1 * 16 + 1) * tc.d + k]).epsilon(1e-12));
}

TEST_CASE("motion encoder starts as an exact copy of the content encoder") {
    Vocab v = corpus_vocab();
    ParamStore ps;
    Rng rng(13);
    TextEncoderConfig tc;
    tc.d = 32;
    TextEncoder content(ps, "content.", tc, v.size(), rng);
    TextEncoder motion(ps, "motion.", tc, v.size(), rng);

    CHECK(max_param_diff(ps, "content.", "motion.") > 0.0);  // fresh init differs
    copy_params(ps, "content.", "motion.");
    CHECK(max_param_diff(ps, "content.", "motion.") == 0.0);

    std::vector<TokenSequence> batch = {tokenize(v, render_caption(SceneSpec{}), 16)};
    CHECK(max_abs_diff(content.encode_pooled(batch), motion.encode_pooled(batch)) == 0.0);

    const auto groups = ps.group_names();
    CHECK(std::count(groups.begin(), groups.end(), "content") == 1);
    CHECK(std::count(groups.begin(), groups.end(), "motion") == 1);
}

TEST_CASE("image encoder is deterministic, finite on zeros, strict on shape") {
    ParamStore ps;
    Rng rng(17);
    ImageEncoderConfig ic;
    ic.h = 12;
    ic.w = 12;
    ic.base_channels = 8;
    ic.d = 16;
    ImageEncoder enc(ps, "image.", ic, rng);

    Tensor frame({3, 12, 12});
    fill_uniform(frame, rng, 0.0, 1.0);
    Tensor a = enc.encode_image(frame);
    Tensor b = enc.encode_image(frame);
    CHECK(a.shape(0) == 16);
    CHECK(max_abs_diff(a, b) == 0.0);

    Tensor zeros({3, 12, 12});
    CHECK(all_finite(enc.encode_image(zeros)));

    Tensor wrong({1, 3, 16, 16});
    CHECK_THROWS_AS(enc.forward(Value::constant(wrong)), std::invalid_argument);
}

TEST_CASE("symmetric info nce sits near ln batch at initialization") {
    Vocab v = corpus_vocab();
    ParamStore ps;
    Rng rng(19);
    TextEncoderConfig tc;
    tc.d = 32;
    TextEncoder text(ps, "content.", tc, v.size(), rng);
    ImageEncoderConfig ic;
    ic.base_channels = 8;
    ic.d = 32;
    ImageEncoder image(ps, "image.", ic, rng);

    const int B = 16;
    Rng sampler(23);
    std::vector<TokenSequence> batch;
    for (int i = 0; i < B; ++i) batch.push_back(tokenize(v, render_caption(sample_spec(sampler)), 16));
    Tensor frames({B, 3, 16, 16});
    fill_uniform(frames, sampler, 0.0, 1.0);

    NoGradGuard ng;
    Value pooled = text.pool_eot(text.forward(batch), batch);
    Value img = image.forward(Value::constant(frames));
    Value loss = clip_info_nce(pooled, img, Value::constant(Tensor::scalar(0.0)));
    CHECK(loss.val()[0] == doctest::Approx(std::log(double(B))).epsilon(0.08));
}

TEST_CASE("short contrastive run learns retrieval and freezes both towers") {
    const std::string dir = fresh_dir("encoders_pretrain");
    build_corpus(48, 4, 16, 16, 99, dir);
    auto [captions, frames] = load_caption_frame_pairs(dir);
    REQUIRE(captions.size() == 48);
    REQUIRE(frames.shape(0) == 48);

    Vocab v = corpus_vocab();
    ParamStore ps;
    Rng rng(31);
    TextEncoderConfig tc;
    tc.d = 32;
    TextEncoder content(ps, "content.", tc, v.size(), rng);
    ImageEncoderConfig ic;
    ic.base_channels = 8;
    ic.d = 32;
    ImageEncoder image(ps, "image.", ic, rng);

    ContrastiveConfig cc;
    cc.steps = 240;
    cc.batch_size = 16;
    cc.lr = 4e-3;
    cc.seed = 5;
    CHECK_THROWS_AS(
        pretrain_contrastive(ps, content, image, v, {captions[0]}, frames, cc),
        std::invalid_argument);
    ContrastiveStats stats = pretrain_contrastive(ps, content, image, v, captions, frames, cc);
    REQUIRE(int(stats.loss_history.size()) == cc.steps);

    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        head += stats.loss_history[i] / 10.0;
        tail += stats.loss_history[cc.steps - 10 + i] / 10.0;
    }
    CHECK(tail < 0.6 * head);

    // Retrieval on the training pairs beats 1-in-48 chance by a wide margin.
    CHECK(retrieval_top1(content, image, v, captions, frames) > 0.25);

    // Both towers and the temperature are frozen now.
    for (Param* p : ps.trainable()) {
        CHECK(p->name.rfind("content.", 0) != 0);
        CHECK(p->name.rfind("image.", 0) != 0);
        CHECK(p->name.rfind("clip.", 0) != 0);
    }

    // A backward pass through the frozen tower reaches trainable probes only.
    Param& probe = ps.create("probe.mix", {tc.d});
    probe.val.fill(0.5);
    ps.zero_grad();
    std::vector<TokenSequence> batch = {tokenize(v, captions[0], 16), tokenize(v, captions[1], 16)};
    {
        Tape tape;
        Value pooled = content.pool_eot(content.forward(batch), batch);
        Value mixed = mul(reshape(pooled, {2 * tc.d}), tile_dim0(probe.value(), 2));
        tape.backward(mean_all(mixed));
    }
    CHECK(max_abs(probe.grad) > 0.0);
    for (Param* p : ps.with_prefix("content.")) CHECK(max_abs(p->grad) == 0.0);
}

}  // TEST_SUITE
