#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dmtv/tensor.hpp"

namespace dmtv {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One step of a recorded computation. backward_fn reads this->grad and
// accumulates into the parents' grads. Parents are held by shared_ptr so a
// leaf stays alive for the whole backward pass even when nothing else
// references it.
struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    std::function<void()> backward_fn;
    std::vector<NodePtr> parents;
};

// Records nodes in creation order, which is already a valid topological
// order, so backward() is a single reverse sweep. Tapes nest; the most
// recently constructed one receives new nodes.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current();

    void record(NodePtr n) { nodes_.push_back(std::move(n)); }
    void backward(const class Value& loss);
    size_t size() const { return nodes_.size(); }

private:
    std::vector<NodePtr> nodes_;
    Tape* prev_ = nullptr;
};

// Scoped switch that disables recording (sampling, evaluation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();

private:
    bool prev_;
};

bool grad_enabled();

// Handle to a Node. Cheap to copy.
class Value {
public:
    Value() = default;
    explicit Value(NodePtr n) : node_(std::move(n)) {}

    // Trainable leaf. grad_storage is aliased, not copied, so accumulated
    // gradients land in the caller's buffer (normally Param::grad).
    static Value leaf(const Tensor& val, const Tensor& grad_storage);
    // Non-differentiable input.
    static Value constant(const Tensor& val);

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& val() const { return node_->val; }
    Tensor& grad() { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::vector<int64_t>& shape() const { return node_->val.shape(); }
    int64_t shape(int i) const { return node_->val.shape(i); }
    int64_t numel() const { return node_->val.numel(); }
    const NodePtr& node() const { return node_; }

    // Same value, cut out of the graph.
    Value detach() const { return constant(node_->val); }

private:
    NodePtr node_;
};

// Elementwise, shapes must match exactly.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);

// p is tiled along the flattened leading axis: out[i] = x[i] + p[i % p.numel].
// Covers [B,...tail] + [...tail] broadcasts.
Value add_bcast0(const Value& x, const Value& p);
// x is [N,C,H,W], b is [C].
Value add_channel_bias(const Value& x, const Value& b);

Value add_scalar(const Value& x, double c);
Value mul_scalar(const Value& x, double c);
// s has one element; out = s * x. Gradient reaches both.
Value scale_by(const Value& x, const Value& s);

Value exp(const Value& x);
Value log(const Value& x);
Value sqrt(const Value& x);
Value square(const Value& x);
Value silu(const Value& x);
Value gelu(const Value& x);
Value tanh(const Value& x);

// x [N,K], w [M,K], b [M] or undefined; returns x w^T + b, shape [N,M].
Value linear(const Value& x, const Value& w, const Value& b);
Value matmul(const Value& a, const Value& b);
// a [B,N,K], b [B,K,M] -> [B,N,M].
Value bmm(const Value& a, const Value& b);

Value reshape(const Value& x, std::vector<int64_t> shape);
Value permute(const Value& x, const std::vector<int>& perm);
// Repeats the whole tensor `times` along a new leading extent:
// out dim0 = times * x dim0, out[i] = x[i % x.numel].
Value tile_dim0(const Value& x, int64_t times);
Value concat_dim(const Value& a, const Value& b, int dim);
Value slice_dim(const Value& x, int dim, int64_t start, int64_t len);

// Softmax over the last axis. mask, when given, is added to the logits and
// is tiled along leading axes (numel must divide x.numel).
Value softmax_last(const Value& x, const Tensor* mask = nullptr);
Value log_softmax_last(const Value& x);
// x [B,C]; out[b] = x[b, ids[b]].
Value select_index_last(const Value& x, const std::vector<int64_t>& ids);

Value layernorm_last(const Value& x, const Value& gamma, const Value& beta, double eps = 1e-5);
// x [N,C,H,W]; statistics per (sample, group).
Value groupnorm(const Value& x, int groups, const Value& gamma, const Value& beta, double eps = 1e-5);

// Zero padding. w [Cout,Cin,kh,kw], b [Cout] or undefined.
Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad);
Value upsample_nearest2x(const Value& x);

// x [N,H,W] -> [N,H+2,W+2], edges repeated.
Value pad_replicate1(const Value& x);
// Valid 3x3 correlation with a fixed (non-learned) kernel, x [N,H,W].
Value conv3x3_valid_const(const Value& x, const double k[9]);

// table [V,D]; out [ids.size(),D].
Value embedding_rows(const Value& table, const std::vector<int64_t>& ids);

Value sum_all(const Value& x);   // -> [1]
Value mean_all(const Value& x);  // -> [1]
// Mean over one axis, which is squeezed from the output shape.
Value mean_dim(const Value& x, int dim);

}  // namespace dmtv
