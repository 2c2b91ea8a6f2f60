#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmtv/graph.hpp"
#include "dmtv/rng.hpp"
#include "dmtv/tensor.hpp"

namespace dmtv {

// Named trainable tensor. grad is allocated up front and shared with every
// leaf node created from this param, so per-sample backward passes
// accumulate into one buffer until the optimizer consumes it.
struct Param {
    std::string name;
    Tensor val;
    Tensor grad;
    bool trainable = true;

    Value value() const {
        return trainable ? Value::leaf(val, grad) : Value::constant(val);
    }
};

// Registry of params in creation order. Names are dot paths; the segment
// before the first dot is the checkpoint group.
class ParamStore {
public:
    Param& create(const std::string& name, std::vector<int64_t> shape);
    Param* find(const std::string& name);
    const std::vector<Param*>& all() const { return order_; }
    std::vector<Param*> trainable() const;
    std::vector<Param*> with_prefix(const std::string& prefix) const;

    void zero_grad();
    void set_trainable_prefix(const std::string& prefix, bool trainable);
    int64_t total_elems() const;
    std::vector<std::string> group_names() const;

private:
    std::deque<Param> params_;
    std::vector<Param*> order_;
    std::unordered_map<std::string, Param*> by_name_;
};

void fill_normal(Tensor& t, Rng& rng, double stddev);
void fill_uniform(Tensor& t, Rng& rng, double lo, double hi);

// Copies values from every "src_prefix..." param into the matching
// "dst_prefix..." param. Both sides must already exist with equal shapes.
void copy_params(ParamStore& ps, const std::string& src_prefix, const std::string& dst_prefix);
// Largest |a - b| over the paired params, for copy and freeze checks.
double max_param_diff(ParamStore& ps, const std::string& a_prefix, const std::string& b_prefix);

struct Linear {
    Param* w = nullptr;
    Param* b = nullptr;

    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng,
           bool zero_init = false, bool bias = true);

    // x [N,in] -> [N,out]
    Value forward(const Value& x) const;
    // x [B,T,in] -> [B,T,out]
    Value forward3(const Value& x) const;
};

struct LayerNormLayer {
    Param* g = nullptr;
    Param* b = nullptr;

    LayerNormLayer() = default;
    LayerNormLayer(ParamStore& ps, const std::string& name, int64_t dim);

    Value forward(const Value& x) const { return layernorm_last(x, g->value(), b->value()); }
};

struct GroupNormLayer {
    int groups = 1;
    Param* g = nullptr;
    Param* b = nullptr;

    GroupNormLayer() = default;
    GroupNormLayer(ParamStore& ps, const std::string& name, int groups, int64_t channels);

    Value forward(const Value& x) const { return groupnorm(x, groups, g->value(), b->value()); }
};

struct Conv2dLayer {
    Param* w = nullptr;
    Param* b = nullptr;
    int stride = 1;
    int pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout,
                int k, int stride, int pad, Rng& rng, bool zero_init = false);

    Value forward(const Value& x) const { return conv2d(x, w->value(), b->value(), stride, pad); }
};

struct EmbeddingLayer {
    Param* table = nullptr;

    EmbeddingLayer() = default;
    EmbeddingLayer(ParamStore& ps, const std::string& name, int64_t count, int64_t dim, Rng& rng);

    Value forward(const std::vector<int64_t>& ids) const {
        return embedding_rows(table->value(), ids);
    }
};

// [B,T,heads*dh] -> [B*heads,T,dh]
Value split_heads(const Value& x, int heads);
// [B*heads,T,dh] -> [B,T,heads*dh]
Value merge_heads(const Value& x, int64_t batch, int heads);

// Scalar helpers built from graph ops. Cosine flattens its inputs.
Value mse(const Value& a, const Value& b);
Value cosine(const Value& a, const Value& b, double eps = 1e-8);
Value l2_normalize_rows(const Value& x, double eps = 1e-8);

class Adam {
public:
    Adam(std::vector<Param*> params, double lr,
         double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void step();
    void zero_grad();
    int64_t step_count() const { return t_; }

    // Serialized as flat doubles per param (m then v), used by checkpoints.
    std::vector<Param*>& params() { return params_; }
    std::vector<Tensor>& m() { return m_; }
    std::vector<Tensor>& v() { return v_; }
    void set_step_count(int64_t t) { t_ = t; }

private:
    std::vector<Param*> params_;
    std::vector<Tensor> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace dmtv
