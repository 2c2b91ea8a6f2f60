#include "dmtv/losses.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace dmtv {

namespace {

double scalar_part(const Value& v, const char* term) {
    if (v.numel() != 1)
        throw std::invalid_argument(std::string("loss_total: ") + term + " is not a scalar");
    const double x = v.val()[0];
    if (!std::isfinite(x))
        throw std::runtime_error(std::string("loss_total: ") + term + " is not finite (" +
                                 std::to_string(x) + ")");
    return x;
}

}  // namespace

std::string loss_csv_header() {
    return "step,diffusion,text_motion,reg,video_motion,total";
}

std::string loss_csv_row(int64_t step, const LossBreakdown& b) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << step << ',' << b.diffusion << ',' << b.text_motion << ',' << b.reg << ','
       << b.video_motion << ',' << b.total;
    return os.str();
}

Value loss_diffusion(const Value& eps, const Value& eps_hat) {
    if (eps.shape() != eps_hat.shape())
        throw std::invalid_argument("loss_diffusion: shape mismatch, " +
                                    Tensor::shape_str(eps.shape()) + " vs " +
                                    Tensor::shape_str(eps_hat.shape()));
    return mse(eps, eps_hat);
}

Value loss_text_motion_from_flows(const std::vector<Value>& map_flows,
                                  const std::vector<Tensor>& reference_flows) {
    if (map_flows.empty() || map_flows.size() != reference_flows.size())
        throw std::invalid_argument("loss_text_motion: need one reference flow per layer");
    Value acc;
    for (size_t i = 0; i < map_flows.size(); ++i) {
        if (map_flows[i].shape() != reference_flows[i].shape())
            throw std::invalid_argument("loss_text_motion: flow shape mismatch at layer " +
                                        std::to_string(i));
        Value c = cosine(map_flows[i], Value::constant(reference_flows[i]));
        acc = i == 0 ? c : add(acc, c);
    }
    return mul_scalar(acc, -1.0 / static_cast<double>(map_flows.size()));
}

Value loss_text_motion(const AttentionCapture& capture, int eot_index, const VideoClip& clip,
                       int flow_iters, double lambda_smooth) {
    if (capture.maps.empty())
        throw std::invalid_argument("loss_text_motion: capture holds no attention maps");
    if (clip.flow_gt.numel() == 0)
        throw std::invalid_argument("loss_text_motion: clip has no flow ground truth");
    const int64_t F = clip.flow_gt.shape(0) + 1;

    std::vector<Value> map_flows;
    std::vector<Tensor> refs;
    map_flows.reserve(capture.maps.size());
    refs.reserve(capture.maps.size());
    for (const Value& slice : eot_map(capture, eot_index)) {
        if (slice.shape(2) != F)
            throw std::invalid_argument("loss_text_motion: map frames do not match the clip");
        const int64_t Hi = slice.shape(0), Wi = slice.shape(1);
        Value video = permute(slice, {2, 0, 1});
        map_flows.push_back(flow_estimate_value(video, flow_iters, lambda_smooth));
        refs.push_back(flow_reference(clip.flow_gt, static_cast<int>(Hi), static_cast<int>(Wi)));
    }
    return loss_text_motion_from_flows(map_flows, refs);
}

Value loss_reg(const Value& motion_pooled, const Tensor& image_emb) {
    if (motion_pooled.numel() != image_emb.numel())
        throw std::invalid_argument("loss_reg: embedding width mismatch, " +
                                    std::to_string(motion_pooled.numel()) + " vs " +
                                    std::to_string(image_emb.numel()));
    return mul_scalar(cosine(motion_pooled, Value::constant(image_emb)), -1.0);
}

Value loss_video_motion(const Value& z0, const Value& z0_hat) {
    if (z0.shape() != z0_hat.shape())
        throw std::invalid_argument("loss_video_motion: shape mismatch, " +
                                    Tensor::shape_str(z0.shape()) + " vs " +
                                    Tensor::shape_str(z0_hat.shape()));
    if (z0.shape(0) < 2)
        throw std::invalid_argument("loss_video_motion: need at least two frames");
    return mse(frame_difference_value(z0), frame_difference_value(z0_hat));
}

WeightedLoss loss_total(const Value& diffusion, const Value& text_motion, const Value& reg,
                        const Value& video_motion, const LossWeights& w) {
    if (w.alpha < 0 || w.beta < 0 || w.gamma < 0)
        throw std::invalid_argument("loss_total: weights must be non-negative");

    WeightedLoss out;
    out.parts.diffusion = scalar_part(diffusion, "diffusion");
    out.parts.text_motion = scalar_part(text_motion, "text_motion");
    out.parts.reg = scalar_part(reg, "reg");
    out.parts.video_motion = scalar_part(video_motion, "video_motion");
    out.parts.weights = w;

    out.total = add(add(diffusion, mul_scalar(text_motion, w.alpha)),
                    add(mul_scalar(reg, w.beta), mul_scalar(video_motion, w.gamma)));
    out.parts.total = out.total.val()[0];
    if (!std::isfinite(out.parts.total))
        throw std::runtime_error("loss_total: combined loss is not finite");
    return out;
}

}  // namespace dmtv
