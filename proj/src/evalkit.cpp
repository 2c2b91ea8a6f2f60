#include "dmtv/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dmtv/graph.hpp"
#include "dmtv/io_util.hpp"
#include "dmtv/motionfeat.hpp"
#include "dmtv/rng.hpp"

namespace dmtv {

namespace {

constexpr uint64_t kStreamEval = 0x6576616c;

// Signed flow sums below this magnitude mean no dominant direction.
constexpr double kTieThreshold = 1e-3;

Tensor frame_slice(const Tensor& frames, int64_t f) {
    const int64_t n = frames.shape(1) * frames.shape(2) * frames.shape(3);
    Tensor out({frames.shape(1), frames.shape(2), frames.shape(3)});
    for (int64_t i = 0; i < n; ++i) out[i] = frames[f * n + i];
    return out;
}

double mean_abs(const Tensor& t) {
    double acc = 0.0;
    for (int64_t i = 0; i < t.numel(); ++i) acc += std::abs(t[i]);
    return acc / static_cast<double>(t.numel());
}

// Mean L2 norm of the flow vectors in [F-1,2,H,W].
double mean_flow_magnitude(const Tensor& flow) {
    const int64_t pairs = flow.shape(0), per = flow.shape(2) * flow.shape(3);
    double acc = 0.0;
    for (int64_t f = 0; f < pairs; ++f)
        for (int64_t i = 0; i < per; ++i) {
            const double u = flow[(f * 2 + 0) * per + i];
            const double v = flow[(f * 2 + 1) * per + i];
            acc += std::sqrt(u * u + v * v);
        }
    return acc / static_cast<double>(pairs * per);
}

// Argmax over left/right/up/down of the summed signed components, y pointing
// down. `tied` is set when both sums sit inside the tie threshold.
Direction dominant_direction(const Tensor& flow, bool& tied) {
    const int64_t pairs = flow.shape(0), per = flow.shape(2) * flow.shape(3);
    double su = 0.0, sv = 0.0;
    for (int64_t f = 0; f < pairs; ++f)
        for (int64_t i = 0; i < per; ++i) {
            su += flow[(f * 2 + 0) * per + i];
            sv += flow[(f * 2 + 1) * per + i];
        }
    tied = std::abs(su) < kTieThreshold && std::abs(sv) < kTieThreshold;
    const double score[4] = {-su, su, -sv, sv};
    const Direction dirs[4] = {Direction::left, Direction::right, Direction::up,
                               Direction::down};
    int best = 0;
    for (int k = 1; k < 4; ++k)
        if (score[k] > score[best]) best = k;
    return dirs[best];
}

// Fixed metric order shared by the CSV and the chart files.
std::vector<std::pair<std::string, double>> metric_rows(const VariantMetrics& v) {
    return {{"motion_dynamics", v.motion_dynamics},
            {"flow_score", v.flow_score},
            {"direction_agreement", v.direction_agreement},
            {"alignment", v.alignment}};
}

}  // namespace

MotionStats motion_dynamics(const Tensor& frames, int flow_iters, double lambda_smooth) {
    MotionStats out;
    out.flow_score = mean_flow_magnitude(flow_estimate(frames, flow_iters, lambda_smooth));
    out.frame_diff = mean_abs(frame_difference(frames));
    return out;
}

Direction caption_direction(const std::string& caption) {
    std::istringstream ss(caption);
    std::string w;
    while (ss >> w)
        for (Direction d :
             {Direction::left, Direction::right, Direction::up, Direction::down})
            if (w == word(d)) return d;
    throw std::invalid_argument("caption_direction: no direction word in \"" + caption +
                                "\"");
}

int direction_agreement(const Tensor& frames, const std::string& caption, int flow_iters,
                        double lambda_smooth) {
    const Direction want = caption_direction(caption);
    bool tied = false;
    const Direction got =
        dominant_direction(flow_estimate(frames, flow_iters, lambda_smooth), tied);
    return (!tied && got == want) ? 1 : 0;
}

double alignment_score(const Tensor& frames, const std::string& caption,
                       const TextEncoder& content, const ImageEncoder& image,
                       const Vocab& vocab) {
    if (frames.ndim() != 4)
        throw std::invalid_argument("alignment_score: frames must be [F,C,H,W]");
    const Tensor pooled =
        content.encode_pooled({tokenize(vocab, caption, content.config().seq_len)});
    const int64_t F = frames.shape(0);
    double acc = 0.0;
    for (int64_t f = 0; f < F; ++f)
        acc += safe_cosine_flat(pooled, image.encode_image(frame_slice(frames, f)));
    return acc / static_cast<double>(F);
}

GuidedEpsFn model_eps_fn(const Models& m, const std::string& caption) {
    const int64_t seq = m.cfg.text.seq_len, d = m.cfg.text.d;
    Tensor content_c, motion_c, content_u, motion_u;
    {
        NoGradGuard ng;
        const TokenSequence toks = tokenize(m.vocab, caption, m.cfg.text.seq_len);
        const TokenSequence none = tokenize(m.vocab, "", m.cfg.text.seq_len);
        content_c = m.content.forward({toks}).val().reshaped({seq, d});
        motion_c = m.motion.forward({toks}).val().reshaped({seq, d});
        content_u = m.content.forward({none}).val().reshaped({seq, d});
        motion_u = m.motion.forward({none}).val().reshaped({seq, d});
    }
    return [&m, content_c, motion_c, content_u, motion_u](const Tensor& zt, int t,
                                                          bool conditional) {
        return conditional ? m.unet.predict_noise(zt, t, content_c, motion_c)
                           : m.unet.predict_noise(zt, t, content_u, motion_u);
    };
}

EvalReport compare_variants(Models& m, const std::vector<EvalVariant>& variants,
                            const std::vector<std::string>& prompts,
                            const EvalOptions& opts) {
    if (variants.empty()) throw std::invalid_argument("compare_variants: no variants");
    if (prompts.empty()) throw std::invalid_argument("compare_variants: no prompts");
    if (opts.n_samples < 1)
        throw std::invalid_argument("compare_variants: n_samples must be >= 1");

    std::vector<Direction> wanted;
    wanted.reserve(prompts.size());
    for (const auto& p : prompts) wanted.push_back(caption_direction(p));

    const auto& dc = m.cfg.denoiser;
    const std::vector<int64_t> shape = {dc.frames, dc.in_channels, dc.input_hw,
                                        dc.input_hw};

    EvalReport report;
    report.n_samples = opts.n_samples;
    report.seed = opts.seed;

    for (const auto& var : variants) {
        load_checkpoint(var.checkpoint, m);
        VariantMetrics acc;
        acc.variant = var.name;
        for (size_t p = 0; p < prompts.size(); ++p) {
            const GuidedEpsFn eps = model_eps_fn(m, prompts[p]);
            for (int s = 0; s < opts.n_samples; ++s) {
                DdimParams params = opts.ddim;
                // One noise stream per (prompt, sample), shared across
                // variants so comparisons are paired.
                params.seed = Rng::from_stream(opts.seed, kStreamEval,
                                               static_cast<uint64_t>(p),
                                               static_cast<uint64_t>(s))
                                  .next_u64();
                const Tensor frames =
                    from_latent(ddim_sample(m.schedule, eps, shape, params));
                const Tensor flow =
                    flow_estimate(frames, opts.flow_iters, opts.lambda_smooth);
                acc.motion_dynamics += mean_abs(frame_difference(frames));
                acc.flow_score += mean_flow_magnitude(flow);
                bool tied = false;
                const Direction got = dominant_direction(flow, tied);
                if (!tied && got == wanted[p]) acc.direction_agreement += 1.0;
                acc.alignment +=
                    alignment_score(frames, prompts[p], m.content, m.image, m.vocab);
            }
        }
        const double inv =
            1.0 / static_cast<double>(prompts.size() * static_cast<size_t>(opts.n_samples));
        acc.motion_dynamics *= inv;
        acc.flow_score *= inv;
        acc.direction_agreement *= inv;
        acc.alignment *= inv;
        report.variants.push_back(std::move(acc));
    }

    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        write_eval_csv(opts.out_dir + "/report.csv", report);
        write_eval_charts(opts.out_dir, report);
    }
    return report;
}

std::string eval_csv_header() { return "variant,metric,value,n_samples,seed"; }

void write_eval_csv(const std::string& path, const EvalReport& report) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_eval_csv: cannot open " + path);
    os << eval_csv_header() << '\n';
    for (const auto& v : report.variants)
        for (const auto& [metric, value] : metric_rows(v))
            os << v.variant << ',' << metric << ',' << format_double(value) << ','
               << report.n_samples << ',' << report.seed << '\n';
    if (!os) throw std::runtime_error("write_eval_csv: write failed for " + path);
}

void write_eval_charts(const std::string& dir, const EvalReport& report) {
    if (report.variants.empty())
        throw std::invalid_argument("write_eval_charts: empty report");
    std::filesystem::create_directories(dir);
    std::vector<std::string> groups;
    groups.reserve(report.variants.size());
    for (const auto& v : report.variants) groups.push_back(v.variant);

    const auto metrics = metric_rows(report.variants.front());
    for (size_t k = 0; k < metrics.size(); ++k) {
        std::vector<std::vector<double>> values;
        values.reserve(report.variants.size());
        for (const auto& v : report.variants)
            values.push_back({metric_rows(v)[k].second});
        write_bar_chart_bmp(dir + "/" + metrics[k].first + ".bmp", groups,
                            {metrics[k].first}, values);
    }
}

}  // namespace dmtv
