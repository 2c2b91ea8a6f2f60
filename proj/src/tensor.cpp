#include "dmtv/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace dmtv {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("max_abs_diff: shape mismatch " +
                                    Tensor::shape_str(a.shape()) + " vs " +
                                    Tensor::shape_str(b.shape()));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a[i]));
    return m;
}

bool all_finite(const Tensor& a) {
    for (int64_t i = 0; i < a.numel(); ++i)
        if (!std::isfinite(a[i])) return false;
    return true;
}

}  // namespace dmtv
