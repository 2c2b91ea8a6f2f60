#include "dmtv/motionfeat.hpp"

#include <cmath>
#include <stdexcept>

namespace dmtv {

namespace {

// Weighted neighbour average used by the Horn-Schunck update.
constexpr double kAvg[9] = {1.0 / 12, 1.0 / 6, 1.0 / 12,
                            1.0 / 6, 0.0, 1.0 / 6,
                            1.0 / 12, 1.0 / 6, 1.0 / 12};
// Central differences, y pointing down.
constexpr double kDx[9] = {0, 0, 0, -0.5, 0, 0.5, 0, 0, 0};
constexpr double kDy[9] = {0, -0.5, 0, 0, 0, 0, 0, 0.5, 0};

Value filter3x3(const Value& x, const double k[9]) {
    return conv3x3_valid_const(pad_replicate1(x), k);
}

}  // namespace

Value flow_estimate_value(const Value& video, int iters, double lambda_smooth,
                          std::vector<double>* residual_log) {
    if (video.val().ndim() != 3)
        throw std::invalid_argument("flow_estimate: video must be [F,H,W]");
    const int64_t F = video.shape(0), H = video.shape(1), W = video.shape(2);
    if (F < 2) throw std::invalid_argument("flow_estimate: need at least 2 frames");
    if (iters < 1) throw std::invalid_argument("flow_estimate: iters must be positive");

    const int64_t N = F - 1;
    Value prev = slice_dim(video, 0, 0, N);
    Value next = slice_dim(video, 0, 1, N);
    Value avg = mul_scalar(add(prev, next), 0.5);
    Value ix = filter3x3(avg, kDx);
    Value iy = filter3x3(avg, kDy);
    Value it = sub(next, prev);
    Value den = add_scalar(add(square(ix), square(iy)), lambda_smooth);

    Value u = Value::constant(Tensor::zeros({N, H, W}));
    Value v = Value::constant(Tensor::zeros({N, H, W}));
    if (residual_log) residual_log->clear();
    for (int step = 0; step < iters; ++step) {
        Value ubar = filter3x3(u, kAvg);
        Value vbar = filter3x3(v, kAvg);
        Value num = add(add(mul(ix, ubar), mul(iy, vbar)), it);
        Value frac = div(num, den);
        u = sub(ubar, mul(ix, frac));
        v = sub(vbar, mul(iy, frac));
        if (residual_log) {
            double acc = 0.0;
            const Tensor &uv = u.val(), &vv = v.val();
            for (int64_t i = 0; i < uv.numel(); ++i) {
                const double r = ix.val()[i] * uv[i] + iy.val()[i] * vv[i] + it.val()[i];
                acc += r * r;
            }
            residual_log->push_back(acc / static_cast<double>(uv.numel()));
        }
    }
    Value u4 = reshape(u, {N, 1, H, W});
    Value v4 = reshape(v, {N, 1, H, W});
    return concat_dim(u4, v4, 1);
}

Tensor flow_estimate(const Tensor& video, int iters, double lambda_smooth,
                     std::vector<double>* residual_log) {
    Tensor mono;
    if (video.ndim() == 3) {
        mono = video;
    } else if (video.ndim() == 4) {
        const int64_t F = video.shape(0), C = video.shape(1), H = video.shape(2), W = video.shape(3);
        mono = Tensor({F, H, W});
        for (int64_t f = 0; f < F; ++f)
            for (int64_t i = 0; i < H * W; ++i) {
                double s = 0.0;
                for (int64_t c = 0; c < C; ++c) s += video[(f * C + c) * H * W + i];
                mono[f * H * W + i] = s / static_cast<double>(C);
            }
    } else {
        throw std::invalid_argument("flow_estimate: video must be [F,H,W] or [F,C,H,W]");
    }
    NoGradGuard ng;
    return flow_estimate_value(Value::constant(mono), iters, lambda_smooth, residual_log).val();
}

Tensor flow_reference(const Tensor& flow_full, int target_h, int target_w) {
    if (flow_full.ndim() != 4 || flow_full.shape(1) != 2)
        throw std::invalid_argument("flow_reference: flow must be [F-1,2,H,W]");
    const int64_t H = flow_full.shape(2), W = flow_full.shape(3);
    Tensor pooled = downsample_video(flow_full, target_h, target_w);
    const double sx = static_cast<double>(target_w) / static_cast<double>(W);
    const double sy = static_cast<double>(target_h) / static_cast<double>(H);
    const int64_t N = pooled.shape(0);
    const int64_t plane = static_cast<int64_t>(target_h) * target_w;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < plane; ++i) {
            pooled[(n * 2 + 0) * plane + i] *= sx;
            pooled[(n * 2 + 1) * plane + i] *= sy;
        }
    return pooled;
}

Tensor downsample_video(const Tensor& video, int target_h, int target_w) {
    if (video.ndim() != 4)
        throw std::invalid_argument("downsample_video: video must be [F,C,H,W]");
    const int64_t F = video.shape(0), C = video.shape(1), H = video.shape(2), W = video.shape(3);
    if (target_h < 1 || target_w < 1 || H % target_h != 0 || W % target_w != 0)
        throw std::invalid_argument("downsample_video: target must divide the source resolution");
    const int64_t bh = H / target_h, bw = W / target_w;
    Tensor out({F, C, target_h, target_w});
    for (int64_t p = 0; p < F * C; ++p) {
        const double* src = video.data() + p * H * W;
        double* dst = out.data() + p * static_cast<int64_t>(target_h) * target_w;
        for (int64_t th = 0; th < target_h; ++th)
            for (int64_t tw = 0; tw < target_w; ++tw) {
                double s = 0.0;
                for (int64_t dh = 0; dh < bh; ++dh)
                    for (int64_t dw = 0; dw < bw; ++dw)
                        s += src[(th * bh + dh) * W + tw * bw + dw];
                dst[th * target_w + tw] = s / static_cast<double>(bh * bw);
            }
    }
    return out;
}

Tensor frame_difference(const Tensor& z) {
    if (z.ndim() < 1 || z.shape(0) < 2)
        throw std::invalid_argument("frame_difference: need at least 2 frames");
    NoGradGuard ng;
    return frame_difference_value(Value::constant(z)).val();
}

Value frame_difference_value(const Value& z) {
    const int64_t F = z.shape(0);
    if (F < 2) throw std::invalid_argument("frame_difference: need at least 2 frames");
    return sub(slice_dim(z, 0, 1, F - 1), slice_dim(z, 0, 0, F - 1));
}

double safe_cosine_flat(const std::vector<double>& a, const std::vector<double>& b, double eps) {
    if (a.size() != b.size())
        throw std::invalid_argument("safe_cosine: length mismatch");
    double num = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < eps || nb < eps) return 0.0;
    return num / (na * nb + eps);
}

double safe_cosine_flat(const Tensor& a, const Tensor& b, double eps) {
    if (a.numel() != b.numel())
        throw std::invalid_argument("safe_cosine: length mismatch");
    std::vector<double> av(a.data(), a.data() + a.numel());
    std::vector<double> bv(b.data(), b.data() + b.numel());
    return safe_cosine_flat(av, bv, eps);
}

}  // namespace dmtv
