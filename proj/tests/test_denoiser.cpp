#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "dmtv/denoiser.hpp"

using namespace dmtv;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig c;
    c.in_channels = 2;
    c.frames = 3;
    c.input_hw = 8;
    c.base_channels = 8;
    c.channel_mult = {1, 2};
    c.heads = 2;  // head_dim derives to 4
    c.text_dim = 16;
    c.time_steps = 64;
    c.norm_groups = 4;
    return c;
}

Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed, double stddev = 1.0) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    fill_normal(t, rng, stddev);
    return t;
}

void randomize_prefix(ParamStore& ps, const std::string& prefix, uint64_t seed, double stddev) {
    Rng rng(seed);
    for (Param* p : ps.with_prefix(prefix)) fill_normal(p->val, rng, stddev);
}

void zero_matching(ParamStore& ps, const std::string& needle) {
    for (Param* p : ps.all())
        if (p->name.find(needle) != std::string::npos) p->val.fill(0.0);
}

double max_abs_grad(ParamStore& ps, const std::string& prefix) {
    double worst = 0.0;
    for (Param* p : ps.with_prefix(prefix)) worst = std::max(worst, max_abs(p->grad));
    return worst;
}

}  // namespace

TEST_SUITE("denoiser") {

TEST_CASE("config validation rejects inconsistent geometry") {
    Rng rng(1);
    {
        ParamStore ps;
        DenoiserConfig c = tiny_config();
        c.head_dim = 3;  // 2 heads * 3 != 8 base channels
        CHECK_THROWS_AS(UNet(ps, c, rng), std::invalid_argument);
    }
    {
        ParamStore ps;
        DenoiserConfig c = tiny_config();
        c.attn_resolutions = {16};  // down path only produces 8 and 4
        CHECK_THROWS_AS(UNet(ps, c, rng), std::invalid_argument);
    }
    {
        ParamStore ps;
        DenoiserConfig c = tiny_config();
        c.input_hw = 9;  // cannot halve once for the second level
        CHECK_THROWS_AS(UNet(ps, c, rng), std::invalid_argument);
    }
    {
        ParamStore ps;
        DenoiserConfig c = tiny_config();
        c.norm_groups = 3;  // widths 8 and 16 are not multiples of 3
        CHECK_THROWS_AS(UNet(ps, c, rng), std::invalid_argument);
    }
    {
        ParamStore ps;
        DenoiserConfig c = tiny_config();
        c.channel_mult = {};
        CHECK_THROWS_AS(UNet(ps, c, rng), std::invalid_argument);
    }
}

TEST_CASE("forward validates latent shape, timestep and token width") {
    ParamStore ps;
    Rng rng(2);
    UNet net(ps, tiny_config(), rng);
    const Tensor zt = random_tensor({3, 2, 8, 8}, 11);
    const Tensor tok = random_tensor({5, 16}, 12);

    CHECK_THROWS_AS(net.predict_noise(random_tensor({3, 2, 8, 4}, 13), 0, tok, tok),
                    std::invalid_argument);
    CHECK_THROWS_AS(net.predict_noise(random_tensor({4, 2, 8, 8}, 14), 0, tok, tok),
                    std::invalid_argument);
    CHECK_THROWS_AS(net.predict_noise(zt, -1, tok, tok), std::out_of_range);
    CHECK_THROWS_AS(net.predict_noise(zt, 64, tok, tok), std::out_of_range);
    CHECK_THROWS_AS(net.predict_noise(zt, 0, random_tensor({5, 8}, 15), tok),
                    std::invalid_argument);
    CHECK_THROWS_AS(net.predict_noise(zt, 0, tok, random_tensor({5, 8}, 16)),
                    std::invalid_argument);
    CHECK_NOTHROW(net.predict_noise(zt, 63, tok, tok));
}

TEST_CASE("output keeps the input latent shape at the reference size") {
    ParamStore ps;
    Rng rng(3);
    DenoiserConfig c;  // defaults: 32 base channels, mult [1,2], 4 heads
    c.frames = 16;
    c.input_hw = 32;
    UNet net(ps, c, rng);
    CHECK(ps.total_elems() <= 2'000'000);

    const Tensor zt = random_tensor({16, 3, 32, 32}, 21);
    const Tensor tok = random_tensor({4, 64}, 22);
    const Tensor eps = net.predict_noise(zt, 500, tok, tok);
    CHECK(eps.shape() == std::vector<int64_t>{16, 3, 32, 32});

    CHECK(net.attention_sites() ==
          std::vector<std::string>{"d0", "d1", "m", "u1", "u0"});
    CHECK(net.motion_block_count() == 5);

    const auto groups = ps.group_names();
    CHECK(std::count(groups.begin(), groups.end(), "unet") == 1);
    CHECK(std::count(groups.begin(), groups.end(), "mblocks") == 1);
}

TEST_CASE("capture returns one row-stochastic map per motion block") {
    ParamStore ps;
    Rng rng(4);
    UNet net(ps, tiny_config(), rng);
    randomize_prefix(ps, "", 41, 0.2);  // move away from the zero-init special case

    const Value zt = Value::constant(random_tensor({3, 2, 8, 8}, 42));
    const Value tok = Value::constant(random_tensor({5, 16}, 43));
    NoGradGuard ng;
    DenoiseOptions opts;
    opts.capture = true;
    DenoiseResult r = net.forward(zt, 7, tok, tok, opts);

    CHECK(r.capture.encoder_tag == EncoderTag::motion);
    REQUIRE(r.capture.maps.size() == 5);
    CHECK(r.capture.layer_ids ==
          std::vector<std::string>{"d0", "d1", "m", "u1", "u0"});

    const std::vector<std::vector<int64_t>> want = {
        {8, 8, 3, 5}, {4, 4, 3, 5}, {4, 4, 3, 5}, {4, 4, 3, 5}, {8, 8, 3, 5}};
    for (size_t i = 0; i < r.capture.maps.size(); ++i) {
        const Tensor& m = r.capture.maps[i].val();
        REQUIRE(m.shape() == want[i]);
        const int64_t rows = m.numel() / 5;
        for (int64_t row = 0; row < rows; ++row) {
            double sum = 0.0;
            for (int64_t s = 0; s < 5; ++s) {
                const double v = m[row * 5 + s];
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("restricting attention resolutions shrinks the motion block list") {
    ParamStore ps;
    Rng rng(5);
    DenoiserConfig c = tiny_config();
    c.attn_resolutions = {4};
    UNet net(ps, c, rng);
    CHECK(net.attention_sites() == std::vector<std::string>{"d1", "m", "u1"});
    CHECK(net.motion_block_count() == 3);

    NoGradGuard ng;
    DenoiseOptions opts;
    opts.capture = true;
    DenoiseResult r = net.forward(Value::constant(random_tensor({3, 2, 8, 8}, 51)), 0,
                                  Value::constant(random_tensor({2, 16}, 52)),
                                  Value::constant(random_tensor({2, 16}, 53)), opts);
    CHECK(r.capture.maps.size() == 3);
    CHECK(r.eps_hat.shape() == std::vector<int64_t>{3, 2, 8, 8});
}

TEST_CASE("fresh motion blocks leave the base network output untouched") {
    ParamStore ps;
    Rng rng(6);
    UNet net(ps, tiny_config(), rng);
    // Base weights get nonzero values, motion blocks keep their initialization.
    randomize_prefix(ps, "unet.", 61, 0.2);

    const Value zt = Value::constant(random_tensor({3, 2, 8, 8}, 62));
    const Value tok = Value::constant(random_tensor({4, 16}, 63));
    NoGradGuard ng;
    DenoiseOptions with, without;
    without.use_motion_blocks = false;
    const Tensor a = net.forward(zt, 9, tok, tok, with).eps_hat.val();
    const Tensor b = net.forward(zt, 9, tok, tok, without).eps_hat.val();
    CHECK(max_abs(a) > 0.0);
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("without temporal mixing, permuting input frames permutes the output") {
    ParamStore ps;
    Rng rng(7);
    UNet net(ps, tiny_config(), rng);
    randomize_prefix(ps, "unet.", 71, 0.2);  // motion blocks stay identity

    const Tensor zt = random_tensor({3, 2, 8, 8}, 72);
    const std::vector<int> perm = {2, 0, 1};
    Tensor ztp({3, 2, 8, 8});
    const int64_t frame = 2 * 8 * 8;
    for (int f = 0; f < 3; ++f)
        for (int64_t i = 0; i < frame; ++i) ztp[f * frame + i] = zt[perm[f] * frame + i];

    const Tensor tok = random_tensor({4, 16}, 73);
    const Tensor out = net.predict_noise(zt, 30, tok, tok);
    const Tensor outp = net.predict_noise(ztp, 30, tok, tok);
    for (int f = 0; f < 3; ++f)
        for (int64_t i = 0; i < frame; ++i)
            CHECK(outp[f * frame + i] == out[perm[f] * frame + i]);
}

TEST_CASE("spatial transformer treats uniform captions as a single token") {
    ParamStore ps;
    Rng rng(8);
    SpatialTransformer sp(ps, "sp.", 8, 2, 16, 4, rng);
    randomize_prefix(ps, "sp.", 81, 0.3);  // activate the zero-initialized projection

    const Value h = Value::constant(random_tensor({2, 8, 2, 2}, 82));
    Tensor row = random_tensor({1, 16}, 83);
    Tensor tiled({4, 16});
    for (int64_t s = 0; s < 4; ++s)
        for (int64_t j = 0; j < 16; ++j) tiled[s * 16 + j] = row[j];

    NoGradGuard ng;
    const Tensor many = sp.forward(h, Value::constant(tiled)).val();
    const Tensor one = sp.forward(h, Value::constant(row)).val();
    CHECK(max_abs_diff(many, one) < 1e-12);
}

TEST_CASE("motion block with zeroed key projection attends uniformly") {
    ParamStore ps;
    Rng rng(9);
    MotionTransformer mo(ps, "mo.", 8, 2, 16, 4, 3, rng);
    randomize_prefix(ps, "mo.", 91, 0.3);
    zero_matching(ps, ".xk.");

    const Value h = Value::constant(random_tensor({3, 8, 4, 4}, 92));
    const Value tok = Value::constant(random_tensor({2, 16}, 93));
    NoGradGuard ng;
    Value cap;
    mo.forward(h, tok, &cap);
    REQUIRE(cap.shape() == std::vector<int64_t>{4, 4, 3, 2});
    for (int64_t i = 0; i < cap.numel(); ++i)
        CHECK(cap.val()[i] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("zeroed cross-attention projections make the output caption-blind") {
    ParamStore ps;
    Rng rng(10);
    UNet net(ps, tiny_config(), rng);
    randomize_prefix(ps, "", 101, 0.2);
    zero_matching(ps, ".xk.");
    zero_matching(ps, ".xv.");

    const Tensor zt = random_tensor({3, 2, 8, 8}, 102);
    const Tensor tok_a = random_tensor({5, 16}, 103);
    const Tensor tok_b = random_tensor({5, 16}, 104);
    const Tensor a = net.predict_noise(zt, 12, tok_a, tok_a);
    const Tensor b = net.predict_noise(zt, 12, tok_b, tok_b);
    CHECK(max_abs(a) > 0.0);
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("captured maps backpropagate into motion weights and motion tokens") {
    ParamStore ps;
    Rng rng(11);
    UNet net(ps, tiny_config(), rng);

    Tensor mt_val = random_tensor({4, 16}, 111);
    Tensor mt_grad({4, 16});
    Tensor ct_val = random_tensor({4, 16}, 112);
    Tensor ct_grad({4, 16});

    Tape tape;
    DenoiseOptions opts;
    opts.capture = true;
    DenoiseResult r = net.forward(Value::constant(random_tensor({3, 2, 8, 8}, 113)), 5,
                                  Value::leaf(ct_val, ct_grad), Value::leaf(mt_val, mt_grad),
                                  opts);
    Value loss = mean_all(r.capture.maps[0]);
    for (size_t i = 1; i < r.capture.maps.size(); ++i)
        loss = add(loss, mean_all(r.capture.maps[i]));
    tape.backward(loss);

    CHECK(max_abs(mt_grad) > 0.0);
    CHECK(max_abs_grad(ps, "mblocks.") > 0.0);
    // The content path only reaches the maps through zero-initialized output
    // projections, so at step 0 its influence is exactly zero.
    CHECK(max_abs(ct_grad) == 0.0);
}

TEST_CASE("eot_map slices one key position out of every captured map") {
    Tensor m({2, 2, 2, 3});
    for (int64_t row = 0; row < 8; ++row) {
        const double a = 1.0 + row, b = 2.0 + 0.5 * row, c = 0.25;
        const double z = a + b + c;
        m[row * 3 + 0] = a / z;
        m[row * 3 + 1] = b / z;
        m[row * 3 + 2] = c / z;
    }
    AttentionCapture cap;
    cap.maps = {Value::constant(m)};
    cap.layer_ids = {"d0"};

    const std::vector<Value> sliced = eot_map(cap, 1);
    REQUIRE(sliced.size() == 1);
    REQUIRE(sliced[0].shape() == std::vector<int64_t>{2, 2, 2});
    for (int64_t row = 0; row < 8; ++row)
        CHECK(sliced[0].val()[row] == m[row * 3 + 1]);

    Tensor uniform({2, 2, 2, 3}, 1.0 / 3.0);
    cap.maps = {Value::constant(uniform)};
    for (const Value& v : eot_map(cap, 2))
        for (int64_t i = 0; i < v.numel(); ++i) CHECK(v.val()[i] == 1.0 / 3.0);

    CHECK_THROWS_AS(eot_map(cap, 3), std::out_of_range);
    CHECK_THROWS_AS(eot_map(cap, -1), std::out_of_range);
}

TEST_CASE("evaluation passes are deterministic") {
    ParamStore ps;
    Rng rng(12);
    UNet net(ps, tiny_config(), rng);
    randomize_prefix(ps, "", 121, 0.2);

    const Tensor zt = random_tensor({3, 2, 8, 8}, 122);
    const Tensor ct = random_tensor({3, 16}, 123);
    const Tensor mt = random_tensor({3, 16}, 124);
    const Tensor a = net.predict_noise(zt, 40, ct, mt);
    const Tensor b = net.predict_noise(zt, 40, ct, mt);
    CHECK(max_abs_diff(a, b) == 0.0);

    // The recording pass computes the same numbers as the shortcut.
    Tape tape;
    const Tensor c = net.forward(Value::constant(zt), 40, Value::constant(ct),
                                 Value::constant(mt))
                         .eps_hat.val();
    CHECK(max_abs_diff(a, c) == 0.0);
}

}  // TEST_SUITE
