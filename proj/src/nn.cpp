#include "dmtv/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dmtv {

Param& ParamStore::create(const std::string& name, std::vector<int64_t> shape) {
    if (by_name_.count(name))
        throw std::invalid_argument("ParamStore: duplicate param name " + name);
    params_.push_back(Param{name, Tensor(std::move(shape)), Tensor(), true});
    Param& p = params_.back();
    p.grad = Tensor::zeros(p.val.shape());
    order_.push_back(&p);
    by_name_[name] = &p;
    return p;
}

Param* ParamStore::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

std::vector<Param*> ParamStore::trainable() const {
    std::vector<Param*> out;
    for (Param* p : order_)
        if (p->trainable) out.push_back(p);
    return out;
}

std::vector<Param*> ParamStore::with_prefix(const std::string& prefix) const {
    std::vector<Param*> out;
    for (Param* p : order_)
        if (p->name.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
}

void ParamStore::zero_grad() {
    for (Param* p : order_) p->grad.fill(0.0);
}

void ParamStore::set_trainable_prefix(const std::string& prefix, bool trainable) {
    bool hit = false;
    for (Param* p : order_)
        if (p->name.rfind(prefix, 0) == 0) {
            p->trainable = trainable;
            hit = true;
        }
    if (!hit)
        throw std::invalid_argument("ParamStore: no params under prefix " + prefix);
}

int64_t ParamStore::total_elems() const {
    int64_t n = 0;
    for (const Param* p : order_) n += p->val.numel();
    return n;
}

std::vector<std::string> ParamStore::group_names() const {
    std::vector<std::string> out;
    for (const Param* p : order_) {
        const auto dot = p->name.find('.');
        std::string g = dot == std::string::npos ? p->name : p->name.substr(0, dot);
        bool seen = false;
        for (const auto& s : out)
            if (s == g) { seen = true; break; }
        if (!seen) out.push_back(g);
    }
    return out;
}

void fill_normal(Tensor& t, Rng& rng, double stddev) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
}

void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
}

void copy_params(ParamStore& ps, const std::string& src_prefix, const std::string& dst_prefix) {
    auto src = ps.with_prefix(src_prefix);
    if (src.empty())
        throw std::invalid_argument("copy_params: no params under prefix " + src_prefix);
    for (Param* s : src) {
        const std::string dst_name = dst_prefix + s->name.substr(src_prefix.size());
        Param* d = ps.find(dst_name);
        if (!d) throw std::invalid_argument("copy_params: missing destination " + dst_name);
        if (!d->val.same_shape(s->val))
            throw std::invalid_argument("copy_params: shape mismatch at " + dst_name);
        for (int64_t i = 0; i < s->val.numel(); ++i) d->val[i] = s->val[i];
    }
}

double max_param_diff(ParamStore& ps, const std::string& a_prefix, const std::string& b_prefix) {
    auto a = ps.with_prefix(a_prefix);
    if (a.empty())
        throw std::invalid_argument("max_param_diff: no params under prefix " + a_prefix);
    double worst = 0.0;
    for (Param* pa : a) {
        const std::string b_name = b_prefix + pa->name.substr(a_prefix.size());
        Param* pb = ps.find(b_name);
        if (!pb) throw std::invalid_argument("max_param_diff: missing " + b_name);
        worst = std::max(worst, max_abs_diff(pa->val, pb->val));
    }
    return worst;
}

Linear::Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng,
               bool zero_init, bool bias) {
    w = &ps.create(name + ".w", {out, in});
    if (!zero_init)
        fill_normal(w->val, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    if (bias) b = &ps.create(name + ".b", {out});
}

Value Linear::forward(const Value& x) const {
    return linear(x, w->value(), b ? b->value() : Value());
}

Value Linear::forward3(const Value& x) const {
    if (x.val().ndim() != 3)
        throw std::invalid_argument("Linear::forward3 expects [B,T,D]");
    const int64_t B = x.shape(0), T = x.shape(1), D = x.shape(2);
    Value flat = reshape(x, {B * T, D});
    Value y = forward(flat);
    return reshape(y, {B, T, y.shape(1)});
}

LayerNormLayer::LayerNormLayer(ParamStore& ps, const std::string& name, int64_t dim) {
    g = &ps.create(name + ".g", {dim});
    g->val.fill(1.0);
    b = &ps.create(name + ".b", {dim});
}

GroupNormLayer::GroupNormLayer(ParamStore& ps, const std::string& name, int groups_in,
                               int64_t channels) {
    groups = groups_in;
    g = &ps.create(name + ".g", {channels});
    g->val.fill(1.0);
    b = &ps.create(name + ".b", {channels});
}

Conv2dLayer::Conv2dLayer(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout,
                         int k, int stride_in, int pad_in, Rng& rng, bool zero_init) {
    stride = stride_in;
    pad = pad_in;
    w = &ps.create(name + ".w", {cout, cin, k, k});
    if (!zero_init)
        fill_normal(w->val, rng, 1.0 / std::sqrt(static_cast<double>(cin * k * k)));
    b = &ps.create(name + ".b", {cout});
}

EmbeddingLayer::EmbeddingLayer(ParamStore& ps, const std::string& name, int64_t count,
                               int64_t dim, Rng& rng) {
    table = &ps.create(name + ".table", {count, dim});
    fill_normal(table->val, rng, 0.02);
}

Value split_heads(const Value& x, int heads) {
    if (x.val().ndim() != 3)
        throw std::invalid_argument("split_heads expects [B,T,D]");
    const int64_t B = x.shape(0), T = x.shape(1), D = x.shape(2);
    if (D % heads != 0)
        throw std::invalid_argument("split_heads: heads must divide feature dim");
    const int64_t dh = D / heads;
    Value r = reshape(x, {B, T, heads, dh});
    Value p = permute(r, {0, 2, 1, 3});
    return reshape(p, {B * heads, T, dh});
}

Value merge_heads(const Value& x, int64_t batch, int heads) {
    if (x.val().ndim() != 3)
        throw std::invalid_argument("merge_heads expects [B*heads,T,dh]");
    const int64_t T = x.shape(1), dh = x.shape(2);
    Value r = reshape(x, {batch, heads, T, dh});
    Value p = permute(r, {0, 2, 1, 3});
    return reshape(p, {batch, T, static_cast<int64_t>(heads) * dh});
}

Value mse(const Value& a, const Value& b) {
    return mean_all(square(sub(a, b)));
}

Value cosine(const Value& a, const Value& b, double eps) {
    Value num = sum_all(mul(a, b));
    Value na = sqrt(add_scalar(sum_all(square(a)), eps));
    Value nb = sqrt(add_scalar(sum_all(square(b)), eps));
    return div(num, mul(na, nb));
}

Value l2_normalize_rows(const Value& x, double eps) {
    if (x.val().ndim() != 2)
        throw std::invalid_argument("l2_normalize_rows expects [N,D]");
    const int64_t N = x.shape(0), D = x.shape(1);
    // norm per row, tiled back over the row.
    Value sq = square(x);
    Value row_sum = mean_dim(sq, 1);                       // [N], mean not sum
    Value norms = sqrt(add_scalar(mul_scalar(row_sum, static_cast<double>(D)), eps));
    // Expand [N] -> [N,D] by permuting a tiled copy.
    Value tiled = tile_dim0(reshape(norms, {1, N}), D);    // [D,N]
    Value expanded = permute(tiled, {1, 0});               // [N,D]
    return div(x, expanded);
}

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Param* p : params_) {
        m_.push_back(Tensor::zeros(p->val.shape()));
        v_.push_back(Tensor::zeros(p->val.shape()));
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Param* p = params_[i];
        if (!p->trainable) continue;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < p->val.numel(); ++j) {
            const double g = p->grad[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            const double mh = m[j] / bc1;
            const double vh = v[j] / bc2;
            p->val[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (Param* p : params_) p->grad.fill(0.0);
}

}  // namespace dmtv
