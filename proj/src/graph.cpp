#include "dmtv/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dmtv {

namespace {

thread_local Tape* g_tape = nullptr;
thread_local bool g_grad = true;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

// Creates the result node and, when anything upstream is trainable and a
// tape is live, registers it for backward. set_backward must be called on
// the returned node only when it requires grad.
NodePtr make_result(Tensor val, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    bool req = g_grad && g_tape != nullptr;
    if (req) {
        bool any = false;
        for (const auto& p : parents)
            if (p && p->requires_grad) { any = true; break; }
        req = any;
    }
    n->requires_grad = req;
    if (req) {
        n->parents = std::move(parents);
        n->grad = Tensor::zeros(n->val.shape());
        g_tape->record(n);
    }
    return n;
}

std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * shape[static_cast<size_t>(i) + 1];
    return st;
}

}  // namespace

Tape::Tape() : prev_(g_tape) { g_tape = this; }

Tape::~Tape() { g_tape = prev_; }

Tape* Tape::current() { return g_tape; }

void Tape::backward(const Value& loss) {
    check(loss.defined() && loss.numel() == 1, "backward: loss must be a scalar");
    if (!loss.requires_grad())
        throw std::logic_error("backward: loss was not recorded (no trainable input or grad disabled)");
    loss.node()->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

NoGradGuard::NoGradGuard() : prev_(g_grad) { g_grad = false; }

NoGradGuard::~NoGradGuard() { g_grad = prev_; }

bool grad_enabled() { return g_grad; }

Value Value::leaf(const Tensor& val, const Tensor& grad_storage) {
    check(val.same_shape(grad_storage), "leaf: grad storage shape mismatch");
    auto n = std::make_shared<Node>();
    n->val = val;
    n->grad = grad_storage;
    n->requires_grad = g_grad && g_tape != nullptr;
    return Value(std::move(n));
}

Value Value::constant(const Tensor& val) {
    auto n = std::make_shared<Node>();
    n->val = val;
    return Value(std::move(n));
}

Value add(const Value& a, const Value& b) {
    check(a.val().same_shape(b.val()), "add: shape mismatch");
    Tensor out = a.val().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b.val()[i];
    auto n = make_result(std::move(out), {a.node(), b.node()});
    if (n->requires_grad) {
        Node* an = a.node().get();
        Node* bn = b.node().get();
        Node* self = n.get();
        n->backward_fn = [an, bn, self] {
            const Tensor& g = self->grad;
            if (an->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i) an->grad[i] += g[i];
            if (bn->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i) bn->grad[i] += g[i];
        };
    }
    return Value(n);
}

Value sub(const Value& a, const Value& b) {
    check(a.val().same_shape(b.val()), "sub: shape mismatch");
    Tensor out = a.val().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.val()[i];
    auto n = make_result(std::move(out), {a.node(), b.node()});
    if (n->requires_grad) {
        Node* an = a.node().get();
        Node* bn = b.node().get();
        Node* self = n.get();
        n->backward_fn = [an, bn, self] {
            const Tensor& g = self->grad;
            if (an->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i) an->grad[i] += g[i];
            if (bn->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i) bn->grad[i] -= g[i];
        };
    }
    return Value(n);
}

Value mul(const Value& a, const Value& b) {
    check(a.val().same_shape(b.val()), "mul: shape mismatch");
    Tensor out = a.val().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.val()[i];
    auto n = make_result(std::move(out), {a.node(), b.node()});
    if (n->requires_grad) {
        Node* an = a.node().get();
        Node* bn = b.node().get();
        Node* self = n.get();
        n->backward_fn = [an, bn, self] {
            const Tensor& g = self->grad;
            if (an->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i) an->grad[i] += g[i] * bn->val[i];
            if (bn->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i) bn->grad[i] += g[i] * an->val[i];
        };
    }
    return Value(n);
}

Value div(const Value& a, const Value& b) {
    check(a.val().same_shape(b.val()), "div: shape mismatch");
    Tensor out = a.val().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] /= b.val()[i];
    auto n = make_result(std::move(out), {a.node(), b.node()});
    if (n->requires_grad) {
        Node* an = a.node().get();
        Node* bn = b.node().get();
        Node* self = n.get();
        n->backward_fn = [an, bn, self] {
            const Tensor& g = self->grad;
            if (an->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i) an->grad[i] += g[i] / bn->val[i];
            if (bn->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i)
                    bn->grad[i] -= g[i] * self->val[i] / bn->val[i];
        };
    }
    return Value(n);
}

Value add_bcast0(const Value& x, const Value& p) {
    const int64_t pn = p.numel();
    check(pn > 0 && x.numel() % pn == 0, "add_bcast0: p.numel must divide x.numel");
    Tensor out = x.val().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += p.val()[i % pn];
    auto n = make_result(std::move(out), {x.node(), p.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* pn_ = p.node().get();
        Node* self = n.get();
        const int64_t m = pn;
        n->backward_fn = [xn, pn_, self, m] {
            const Tensor& g = self->grad;
            if (xn->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i) xn->grad[i] += g[i];
            if (pn_->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i) pn_->grad[i % m] += g[i];
        };
    }
    return Value(n);
}

Value add_channel_bias(const Value& x, const Value& b) {
    check(x.val().ndim() == 4, "add_channel_bias: x must be [N,C,H,W]");
    const int64_t N = x.shape(0), C = x.shape(1), HW = x.shape(2) * x.shape(3);
    check(b.numel() == C, "add_channel_bias: bias length must equal C");
    Tensor out = x.val().clone();
    for (int64_t nn = 0; nn < N; ++nn)
        for (int64_t c = 0; c < C; ++c) {
            double* row = out.data() + (nn * C + c) * HW;
            const double bc = b.val()[c];
            for (int64_t i = 0; i < HW; ++i) row[i] += bc;
        }
    auto n = make_result(std::move(out), {x.node(), b.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* bn = b.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, bn, self, N, C, HW] {
            const Tensor& g = self->grad;
            if (xn->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i) xn->grad[i] += g[i];
            if (bn->requires_grad)
                for (int64_t nn = 0; nn < N; ++nn)
                    for (int64_t c = 0; c < C; ++c) {
                        const double* row = g.data() + (nn * C + c) * HW;
                        double s = 0.0;
                        for (int64_t i = 0; i < HW; ++i) s += row[i];
                        bn->grad[c] += s;
                    }
        };
    }
    return Value(n);
}

Value add_scalar(const Value& x, double c) {
    Tensor out = x.val().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self] {
            for (int64_t i = 0; i < self->grad.numel(); ++i) xn->grad[i] += self->grad[i];
        };
    }
    return Value(n);
}

Value mul_scalar(const Value& x, double c) {
    Tensor out = x.val().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, c] {
            for (int64_t i = 0; i < self->grad.numel(); ++i) xn->grad[i] += c * self->grad[i];
        };
    }
    return Value(n);
}

Value scale_by(const Value& x, const Value& s) {
    check(s.numel() == 1, "scale_by: scale must have one element");
    const double sv = s.val()[0];
    Tensor out = x.val().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= sv;
    auto n = make_result(std::move(out), {x.node(), s.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* sn = s.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, sn, self] {
            const Tensor& g = self->grad;
            const double sv2 = sn->val[0];
            if (xn->requires_grad)
                for (int64_t i = 0; i < g.numel(); ++i) xn->grad[i] += sv2 * g[i];
            if (sn->requires_grad) {
                double acc = 0.0;
                for (int64_t i = 0; i < g.numel(); ++i) acc += g[i] * xn->val[i];
                sn->grad[0] += acc;
            }
        };
    }
    return Value(n);
}

namespace {

Value unary_op(const Value& x, const char* name,
               double (*f)(double), double (*df)(double, double)) {
    (void)name;
    Tensor out = x.val().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(out[i]);
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, df] {
            for (int64_t i = 0; i < self->grad.numel(); ++i)
                xn->grad[i] += self->grad[i] * df(xn->val[i], self->val[i]);
        };
    }
    return Value(n);
}

}  // namespace

Value exp(const Value& x) {
    return unary_op(x, "exp", [](double v) { return std::exp(v); },
                    [](double, double y) { return y; });
}

Value log(const Value& x) {
    return unary_op(x, "log", [](double v) { return std::log(v); },
                    [](double v, double) { return 1.0 / v; });
}

Value sqrt(const Value& x) {
    return unary_op(x, "sqrt", [](double v) { return std::sqrt(v); },
                    [](double, double y) { return 0.5 / y; });
}

Value square(const Value& x) {
    return unary_op(x, "square", [](double v) { return v * v; },
                    [](double v, double) { return 2.0 * v; });
}

Value silu(const Value& x) {
    return unary_op(x, "silu",
                    [](double v) { return v / (1.0 + std::exp(-v)); },
                    [](double v, double) {
                        const double s = 1.0 / (1.0 + std::exp(-v));
                        return s * (1.0 + v * (1.0 - s));
                    });
}

Value gelu(const Value& x) {
    return unary_op(x, "gelu",
                    [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
                    [](double v, double) {
                        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                        return cdf + v * pdf;
                    });
}

Value tanh(const Value& x) {
    return unary_op(x, "tanh", [](double v) { return std::tanh(v); },
                    [](double, double y) { return 1.0 - y * y; });
}

Value linear(const Value& x, const Value& w, const Value& b) {
    check(x.val().ndim() == 2 && w.val().ndim() == 2, "linear: x and w must be 2-d");
    const int64_t N = x.shape(0), K = x.shape(1), M = w.shape(0);
    check(w.shape(1) == K, "linear: inner dimensions differ");
    const bool has_bias = b.defined();
    if (has_bias) check(b.numel() == M, "linear: bias length must equal out features");
    Tensor out({N, M});
    const double* xd = x.val().data();
    const double* wd = w.val().data();
    for (int64_t i = 0; i < N; ++i) {
        double* orow = out.data() + i * M;
        if (has_bias)
            for (int64_t j = 0; j < M; ++j) orow[j] = b.val()[j];
        const double* xrow = xd + i * K;
        for (int64_t j = 0; j < M; ++j) {
            const double* wrow = wd + j * K;
            double acc = 0.0;
            for (int64_t k = 0; k < K; ++k) acc += xrow[k] * wrow[k];
            orow[j] += acc;
        }
    }
    std::vector<NodePtr> parents = {x.node(), w.node()};
    if (has_bias) parents.push_back(b.node());
    auto n = make_result(std::move(out), std::move(parents));
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* wn = w.node().get();
        Node* bn = has_bias ? b.node().get() : nullptr;
        Node* self = n.get();
        n->backward_fn = [xn, wn, bn, self, N, K, M] {
            const Tensor& g = self->grad;
            if (xn->requires_grad) {
                for (int64_t i = 0; i < N; ++i) {
                    const double* grow = g.data() + i * M;
                    double* xgrow = xn->grad.data() + i * K;
                    for (int64_t j = 0; j < M; ++j) {
                        const double gij = grow[j];
                        if (gij == 0.0) continue;
                        const double* wrow = wn->val.data() + j * K;
                        for (int64_t k = 0; k < K; ++k) xgrow[k] += gij * wrow[k];
                    }
                }
            }
            if (wn->requires_grad) {
                for (int64_t i = 0; i < N; ++i) {
                    const double* grow = g.data() + i * M;
                    const double* xrow = xn->val.data() + i * K;
                    for (int64_t j = 0; j < M; ++j) {
                        const double gij = grow[j];
                        if (gij == 0.0) continue;
                        double* wgrow = wn->grad.data() + j * K;
                        for (int64_t k = 0; k < K; ++k) wgrow[k] += gij * xrow[k];
                    }
                }
            }
            if (bn && bn->requires_grad) {
                for (int64_t i = 0; i < N; ++i) {
                    const double* grow = g.data() + i * M;
                    for (int64_t j = 0; j < M; ++j) bn->grad[j] += grow[j];
                }
            }
        };
    }
    return Value(n);
}

Value matmul(const Value& a, const Value& b) {
    check(a.val().ndim() == 2 && b.val().ndim() == 2, "matmul: inputs must be 2-d");
    const int64_t N = a.shape(0), K = a.shape(1), M = b.shape(1);
    check(b.shape(0) == K, "matmul: inner dimensions differ");
    Tensor out({N, M});
    const double* ad = a.val().data();
    const double* bd = b.val().data();
    for (int64_t i = 0; i < N; ++i) {
        double* orow = out.data() + i * M;
        const double* arow = ad + i * K;
        for (int64_t k = 0; k < K; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = bd + k * M;
            for (int64_t j = 0; j < M; ++j) orow[j] += av * brow[j];
        }
    }
    auto n = make_result(std::move(out), {a.node(), b.node()});
    if (n->requires_grad) {
        Node* an = a.node().get();
        Node* bn = b.node().get();
        Node* self = n.get();
        n->backward_fn = [an, bn, self, N, K, M] {
            const Tensor& g = self->grad;
            if (an->requires_grad) {
                // dA = g B^T
                for (int64_t i = 0; i < N; ++i) {
                    const double* grow = g.data() + i * M;
                    double* agrow = an->grad.data() + i * K;
                    for (int64_t k = 0; k < K; ++k) {
                        const double* brow = bn->val.data() + k * M;
                        double acc = 0.0;
                        for (int64_t j = 0; j < M; ++j) acc += grow[j] * brow[j];
                        agrow[k] += acc;
                    }
                }
            }
            if (bn->requires_grad) {
                // dB = A^T g
                for (int64_t i = 0; i < N; ++i) {
                    const double* arow = an->val.data() + i * K;
                    const double* grow = g.data() + i * M;
                    for (int64_t k = 0; k < K; ++k) {
                        const double av = arow[k];
                        if (av == 0.0) continue;
                        double* bgrow = bn->grad.data() + k * M;
                        for (int64_t j = 0; j < M; ++j) bgrow[j] += av * grow[j];
                    }
                }
            }
        };
    }
    return Value(n);
}

Value bmm(const Value& a, const Value& b) {
    check(a.val().ndim() == 3 && b.val().ndim() == 3, "bmm: inputs must be 3-d");
    const int64_t B = a.shape(0), N = a.shape(1), K = a.shape(2), M = b.shape(2);
    check(b.shape(0) == B && b.shape(1) == K, "bmm: batch or inner dimensions differ");
    Tensor out({B, N, M});
    for (int64_t t = 0; t < B; ++t) {
        const double* ad = a.val().data() + t * N * K;
        const double* bd = b.val().data() + t * K * M;
        double* od = out.data() + t * N * M;
        for (int64_t i = 0; i < N; ++i) {
            const double* arow = ad + i * K;
            double* orow = od + i * M;
            for (int64_t k = 0; k < K; ++k) {
                const double av = arow[k];
                if (av == 0.0) continue;
                const double* brow = bd + k * M;
                for (int64_t j = 0; j < M; ++j) orow[j] += av * brow[j];
            }
        }
    }
    auto n = make_result(std::move(out), {a.node(), b.node()});
    if (n->requires_grad) {
        Node* an = a.node().get();
        Node* bn = b.node().get();
        Node* self = n.get();
        n->backward_fn = [an, bn, self, B, N, K, M] {
            for (int64_t t = 0; t < B; ++t) {
                const double* gd = self->grad.data() + t * N * M;
                const double* ad = an->val.data() + t * N * K;
                const double* bd = bn->val.data() + t * K * M;
                if (an->requires_grad) {
                    double* agd = an->grad.data() + t * N * K;
                    for (int64_t i = 0; i < N; ++i) {
                        const double* grow = gd + i * M;
                        double* agrow = agd + i * K;
                        for (int64_t k = 0; k < K; ++k) {
                            const double* brow = bd + k * M;
                            double acc = 0.0;
                            for (int64_t j = 0; j < M; ++j) acc += grow[j] * brow[j];
                            agrow[k] += acc;
                        }
                    }
                }
                if (bn->requires_grad) {
                    double* bgd = bn->grad.data() + t * K * M;
                    for (int64_t i = 0; i < N; ++i) {
                        const double* arow = ad + i * K;
                        const double* grow = gd + i * M;
                        for (int64_t k = 0; k < K; ++k) {
                            const double av = arow[k];
                            if (av == 0.0) continue;
                            double* bgrow = bgd + k * M;
                            for (int64_t j = 0; j < M; ++j) bgrow[j] += av * grow[j];
                        }
                    }
                }
            }
        };
    }
    return Value(n);
}

Value reshape(const Value& x, std::vector<int64_t> shape) {
    Tensor out = x.val().reshaped(std::move(shape)).clone();
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self] {
            for (int64_t i = 0; i < self->grad.numel(); ++i) xn->grad[i] += self->grad[i];
        };
    }
    return Value(n);
}

Value permute(const Value& x, const std::vector<int>& perm) {
    const auto& xs = x.shape();
    const int nd = x.val().ndim();
    check(static_cast<int>(perm.size()) == nd, "permute: axis list length mismatch");
    std::vector<int64_t> oshape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) oshape[static_cast<size_t>(i)] = xs[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    const auto xstr = strides_of(xs);
    const auto ostr = strides_of(oshape);
    // src_stride[i] walks the input when output axis i advances.
    std::vector<int64_t> sstr(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) sstr[static_cast<size_t>(i)] = xstr[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    const int64_t total = x.numel();
    Tensor out(oshape);
    std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
    int64_t src = 0;
    for (int64_t o = 0; o < total; ++o) {
        out[o] = x.val()[src];
        for (int d = nd - 1; d >= 0; --d) {
            idx[static_cast<size_t>(d)]++;
            src += sstr[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < oshape[static_cast<size_t>(d)]) break;
            src -= sstr[static_cast<size_t>(d)] * oshape[static_cast<size_t>(d)];
            idx[static_cast<size_t>(d)] = 0;
        }
    }
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, sstr, oshape, nd, total] {
            std::vector<int64_t> idx2(static_cast<size_t>(nd), 0);
            int64_t src2 = 0;
            for (int64_t o = 0; o < total; ++o) {
                xn->grad[src2] += self->grad[o];
                for (int d = nd - 1; d >= 0; --d) {
                    idx2[static_cast<size_t>(d)]++;
                    src2 += sstr[static_cast<size_t>(d)];
                    if (idx2[static_cast<size_t>(d)] < oshape[static_cast<size_t>(d)]) break;
                    src2 -= sstr[static_cast<size_t>(d)] * oshape[static_cast<size_t>(d)];
                    idx2[static_cast<size_t>(d)] = 0;
                }
            }
        };
    }
    return Value(n);
}

Value tile_dim0(const Value& x, int64_t times) {
    check(times >= 1, "tile_dim0: times must be positive");
    const int64_t xn_ = x.numel();
    std::vector<int64_t> oshape = x.shape();
    check(!oshape.empty(), "tile_dim0: input must have at least one axis");
    oshape[0] *= times;
    Tensor out(oshape);
    for (int64_t t = 0; t < times; ++t)
        for (int64_t i = 0; i < xn_; ++i) out[t * xn_ + i] = x.val()[i];
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, times, xn_] {
            for (int64_t t = 0; t < times; ++t)
                for (int64_t i = 0; i < xn_; ++i) xn->grad[i] += self->grad[t * xn_ + i];
        };
    }
    return Value(n);
}

namespace {

// Views a tensor as [outer, dim_extent, inner] around axis `dim`.
void split_around(const std::vector<int64_t>& shape, int dim,
                  int64_t& outer, int64_t& extent, int64_t& inner) {
    outer = 1;
    for (int i = 0; i < dim; ++i) outer *= shape[static_cast<size_t>(i)];
    extent = shape[static_cast<size_t>(dim)];
    inner = 1;
    for (size_t i = static_cast<size_t>(dim) + 1; i < shape.size(); ++i) inner *= shape[i];
}

}  // namespace

Value concat_dim(const Value& a, const Value& b, int dim) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    check(as.size() == bs.size(), "concat_dim: rank mismatch");
    check(dim >= 0 && dim < static_cast<int>(as.size()), "concat_dim: bad axis");
    for (size_t i = 0; i < as.size(); ++i)
        check(static_cast<int>(i) == dim || as[i] == bs[i], "concat_dim: shape mismatch off-axis");
    std::vector<int64_t> oshape = as;
    oshape[static_cast<size_t>(dim)] += bs[static_cast<size_t>(dim)];
    int64_t outer, ea, inner;
    split_around(as, dim, outer, ea, inner);
    const int64_t eb = bs[static_cast<size_t>(dim)];
    Tensor out(oshape);
    for (int64_t o = 0; o < outer; ++o) {
        double* dst = out.data() + o * (ea + eb) * inner;
        const double* pa = a.val().data() + o * ea * inner;
        const double* pb = b.val().data() + o * eb * inner;
        for (int64_t i = 0; i < ea * inner; ++i) dst[i] = pa[i];
        for (int64_t i = 0; i < eb * inner; ++i) dst[ea * inner + i] = pb[i];
    }
    auto n = make_result(std::move(out), {a.node(), b.node()});
    if (n->requires_grad) {
        Node* an = a.node().get();
        Node* bn = b.node().get();
        Node* self = n.get();
        n->backward_fn = [an, bn, self, outer, ea, eb, inner] {
            for (int64_t o = 0; o < outer; ++o) {
                const double* g = self->grad.data() + o * (ea + eb) * inner;
                if (an->requires_grad) {
                    double* ga = an->grad.data() + o * ea * inner;
                    for (int64_t i = 0; i < ea * inner; ++i) ga[i] += g[i];
                }
                if (bn->requires_grad) {
                    double* gb = bn->grad.data() + o * eb * inner;
                    for (int64_t i = 0; i < eb * inner; ++i) gb[i] += g[ea * inner + i];
                }
            }
        };
    }
    return Value(n);
}

Value slice_dim(const Value& x, int dim, int64_t start, int64_t len) {
    const auto& xs = x.shape();
    check(dim >= 0 && dim < static_cast<int>(xs.size()), "slice_dim: bad axis");
    check(start >= 0 && len >= 0 && start + len <= xs[static_cast<size_t>(dim)],
          "slice_dim: range out of bounds");
    std::vector<int64_t> oshape = xs;
    oshape[static_cast<size_t>(dim)] = len;
    int64_t outer, extent, inner;
    split_around(xs, dim, outer, extent, inner);
    Tensor out(oshape);
    for (int64_t o = 0; o < outer; ++o) {
        const double* src = x.val().data() + (o * extent + start) * inner;
        double* dst = out.data() + o * len * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] = src[i];
    }
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, outer, extent, inner, start, len] {
            for (int64_t o = 0; o < outer; ++o) {
                double* dst = xn->grad.data() + (o * extent + start) * inner;
                const double* g = self->grad.data() + o * len * inner;
                for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
            }
        };
    }
    return Value(n);
}

Value softmax_last(const Value& x, const Tensor* mask) {
    const auto& xs = x.shape();
    check(!xs.empty(), "softmax_last: input must have at least one axis");
    const int64_t S = xs.back();
    const int64_t rows = x.numel() / S;
    int64_t mn = 0;
    if (mask) {
        mn = mask->numel();
        check(mn > 0 && x.numel() % mn == 0, "softmax_last: mask numel must divide input numel");
    }
    Tensor out(xs);
    for (int64_t r = 0; r < rows; ++r) {
        const double* xrow = x.val().data() + r * S;
        double* orow = out.data() + r * S;
        double mx = -1e300;
        for (int64_t j = 0; j < S; ++j) {
            double v = xrow[j];
            if (mask) v += (*mask)[(r * S + j) % mn];
            orow[j] = v;
            if (v > mx) mx = v;
        }
        double sum = 0.0;
        for (int64_t j = 0; j < S; ++j) {
            orow[j] = std::exp(orow[j] - mx);
            sum += orow[j];
        }
        for (int64_t j = 0; j < S; ++j) orow[j] /= sum;
    }
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, rows, S] {
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = self->val.data() + r * S;
                const double* g = self->grad.data() + r * S;
                double dot = 0.0;
                for (int64_t j = 0; j < S; ++j) dot += g[j] * y[j];
                double* xg = xn->grad.data() + r * S;
                for (int64_t j = 0; j < S; ++j) xg[j] += y[j] * (g[j] - dot);
            }
        };
    }
    return Value(n);
}

Value log_softmax_last(const Value& x) {
    const auto& xs = x.shape();
    check(!xs.empty(), "log_softmax_last: input must have at least one axis");
    const int64_t S = xs.back();
    const int64_t rows = x.numel() / S;
    Tensor out(xs);
    for (int64_t r = 0; r < rows; ++r) {
        const double* xrow = x.val().data() + r * S;
        double* orow = out.data() + r * S;
        double mx = -1e300;
        for (int64_t j = 0; j < S; ++j) mx = std::max(mx, xrow[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < S; ++j) sum += std::exp(xrow[j] - mx);
        const double lse = mx + std::log(sum);
        for (int64_t j = 0; j < S; ++j) orow[j] = xrow[j] - lse;
    }
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, rows, S] {
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = self->val.data() + r * S;
                const double* g = self->grad.data() + r * S;
                double gsum = 0.0;
                for (int64_t j = 0; j < S; ++j) gsum += g[j];
                double* xg = xn->grad.data() + r * S;
                for (int64_t j = 0; j < S; ++j) xg[j] += g[j] - std::exp(y[j]) * gsum;
            }
        };
    }
    return Value(n);
}

Value select_index_last(const Value& x, const std::vector<int64_t>& ids) {
    check(x.val().ndim() == 2, "select_index_last: input must be [B,C]");
    const int64_t B = x.shape(0), C = x.shape(1);
    check(static_cast<int64_t>(ids.size()) == B, "select_index_last: one index per row required");
    Tensor out({B});
    for (int64_t i = 0; i < B; ++i) {
        check(ids[static_cast<size_t>(i)] >= 0 && ids[static_cast<size_t>(i)] < C,
              "select_index_last: index out of range");
        out[i] = x.val()[i * C + ids[static_cast<size_t>(i)]];
    }
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        auto ids_copy = ids;
        n->backward_fn = [xn, self, ids_copy, C] {
            for (int64_t i = 0; i < self->grad.numel(); ++i)
                xn->grad[i * C + ids_copy[static_cast<size_t>(i)]] += self->grad[i];
        };
    }
    return Value(n);
}

Value layernorm_last(const Value& x, const Value& gamma, const Value& beta, double eps) {
    const auto& xs = x.shape();
    check(!xs.empty(), "layernorm_last: input must have at least one axis");
    const int64_t D = xs.back();
    const int64_t rows = x.numel() / D;
    check(gamma.numel() == D && beta.numel() == D, "layernorm_last: affine size mismatch");
    Tensor out(xs);
    Tensor xhat(xs);
    Tensor rstd({rows});
    for (int64_t r = 0; r < rows; ++r) {
        const double* xrow = x.val().data() + r * D;
        double mu = 0.0;
        for (int64_t j = 0; j < D; ++j) mu += xrow[j];
        mu /= static_cast<double>(D);
        double var = 0.0;
        for (int64_t j = 0; j < D; ++j) {
            const double d = xrow[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(D);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = rs;
        double* hrow = xhat.data() + r * D;
        double* orow = out.data() + r * D;
        for (int64_t j = 0; j < D; ++j) {
            hrow[j] = (xrow[j] - mu) * rs;
            orow[j] = gamma.val()[j] * hrow[j] + beta.val()[j];
        }
    }
    auto n = make_result(std::move(out), {x.node(), gamma.node(), beta.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* gn = gamma.node().get();
        Node* bn = beta.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, gn, bn, self, xhat, rstd, rows, D] {
            for (int64_t r = 0; r < rows; ++r) {
                const double* g = self->grad.data() + r * D;
                const double* h = xhat.data() + r * D;
                if (gn->requires_grad || bn->requires_grad) {
                    for (int64_t j = 0; j < D; ++j) {
                        if (gn->requires_grad) gn->grad[j] += g[j] * h[j];
                        if (bn->requires_grad) bn->grad[j] += g[j];
                    }
                }
                if (xn->requires_grad) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t j = 0; j < D; ++j) {
                        const double gh = g[j] * gn->val[j];
                        m1 += gh;
                        m2 += gh * h[j];
                    }
                    m1 /= static_cast<double>(D);
                    m2 /= static_cast<double>(D);
                    double* xg = xn->grad.data() + r * D;
                    for (int64_t j = 0; j < D; ++j) {
                        const double gh = g[j] * gn->val[j];
                        xg[j] += rstd[r] * (gh - m1 - h[j] * m2);
                    }
                }
            }
        };
    }
    return Value(n);
}

Value groupnorm(const Value& x, int groups, const Value& gamma, const Value& beta, double eps) {
    check(x.val().ndim() == 4, "groupnorm: x must be [N,C,H,W]");
    const int64_t N = x.shape(0), C = x.shape(1), HW = x.shape(2) * x.shape(3);
    check(groups > 0 && C % groups == 0, "groupnorm: groups must divide channels");
    check(gamma.numel() == C && beta.numel() == C, "groupnorm: affine size mismatch");
    const int64_t Cg = C / groups;
    const int64_t gsz = Cg * HW;
    Tensor out(x.shape());
    Tensor xhat(x.shape());
    Tensor rstd({N * groups});
    for (int64_t nn = 0; nn < N; ++nn) {
        for (int64_t g = 0; g < groups; ++g) {
            const int64_t base = (nn * C + g * Cg) * HW;
            const double* xd = x.val().data() + base;
            double mu = 0.0;
            for (int64_t i = 0; i < gsz; ++i) mu += xd[i];
            mu /= static_cast<double>(gsz);
            double var = 0.0;
            for (int64_t i = 0; i < gsz; ++i) {
                const double d = xd[i] - mu;
                var += d * d;
            }
            var /= static_cast<double>(gsz);
            const double rs = 1.0 / std::sqrt(var + eps);
            rstd[nn * groups + g] = rs;
            double* hd = xhat.data() + base;
            double* od = out.data() + base;
            for (int64_t c = 0; c < Cg; ++c) {
                const double ga = gamma.val()[g * Cg + c];
                const double be = beta.val()[g * Cg + c];
                for (int64_t i = 0; i < HW; ++i) {
                    const double h = (xd[c * HW + i] - mu) * rs;
                    hd[c * HW + i] = h;
                    od[c * HW + i] = ga * h + be;
                }
            }
        }
    }
    auto n = make_result(std::move(out), {x.node(), gamma.node(), beta.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* gn = gamma.node().get();
        Node* bn = beta.node().get();
        Node* self = n.get();
        const int64_t G = groups;
        n->backward_fn = [xn, gn, bn, self, xhat, rstd, N, C, HW, Cg, gsz, G] {
            for (int64_t nn = 0; nn < N; ++nn) {
                for (int64_t g = 0; g < G; ++g) {
                    const int64_t base = (nn * C + g * Cg) * HW;
                    const double* grad = self->grad.data() + base;
                    const double* h = xhat.data() + base;
                    if (gn->requires_grad || bn->requires_grad) {
                        for (int64_t c = 0; c < Cg; ++c) {
                            double sg = 0.0, sb = 0.0;
                            for (int64_t i = 0; i < HW; ++i) {
                                sg += grad[c * HW + i] * h[c * HW + i];
                                sb += grad[c * HW + i];
                            }
                            if (gn->requires_grad) gn->grad[g * Cg + c] += sg;
                            if (bn->requires_grad) bn->grad[g * Cg + c] += sb;
                        }
                    }
                    if (xn->requires_grad) {
                        double m1 = 0.0, m2 = 0.0;
                        for (int64_t c = 0; c < Cg; ++c) {
                            const double ga = gn->val[g * Cg + c];
                            for (int64_t i = 0; i < HW; ++i) {
                                const double gh = grad[c * HW + i] * ga;
                                m1 += gh;
                                m2 += gh * h[c * HW + i];
                            }
                        }
                        m1 /= static_cast<double>(gsz);
                        m2 /= static_cast<double>(gsz);
                        const double rs = rstd[nn * G + g];
                        double* xg = xn->grad.data() + base;
                        for (int64_t c = 0; c < Cg; ++c) {
                            const double ga = gn->val[g * Cg + c];
                            for (int64_t i = 0; i < HW; ++i) {
                                const double gh = grad[c * HW + i] * ga;
                                xg[c * HW + i] += rs * (gh - m1 - h[c * HW + i] * m2);
                            }
                        }
                    }
                }
            }
        };
    }
    return Value(n);
}

Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad) {
    check(x.val().ndim() == 4 && w.val().ndim() == 4, "conv2d: x and w must be 4-d");
    const int64_t N = x.shape(0), Cin = x.shape(1), H = x.shape(2), W = x.shape(3);
    const int64_t Cout = w.shape(0), kh = w.shape(2), kw = w.shape(3);
    check(w.shape(1) == Cin, "conv2d: channel mismatch");
    check(stride >= 1 && pad >= 0, "conv2d: bad stride or padding");
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    check(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than padded input");
    const bool has_bias = b.defined();
    if (has_bias) check(b.numel() == Cout, "conv2d: bias length must equal out channels");
    Tensor out({N, Cout, Ho, Wo});
    const double* xd = x.val().data();
    const double* wd = w.val().data();
    for (int64_t nn = 0; nn < N; ++nn) {
        for (int64_t co = 0; co < Cout; ++co) {
            double* oplane = out.data() + (nn * Cout + co) * Ho * Wo;
            if (has_bias) {
                const double bv = b.val()[co];
                for (int64_t i = 0; i < Ho * Wo; ++i) oplane[i] = bv;
            }
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const double* xplane = xd + (nn * Cin + ci) * H * W;
                const double* wk = wd + (co * Cin + ci) * kh * kw;
                for (int64_t oh = 0; oh < Ho; ++oh) {
                    for (int64_t ow = 0; ow < Wo; ++ow) {
                        double acc = 0.0;
                        const int64_t ih0 = oh * stride - pad;
                        const int64_t iw0 = ow * stride - pad;
                        for (int64_t u = 0; u < kh; ++u) {
                            const int64_t ih = ih0 + u;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t v = 0; v < kw; ++v) {
                                const int64_t iw = iw0 + v;
                                if (iw < 0 || iw >= W) continue;
                                acc += xplane[ih * W + iw] * wk[u * kw + v];
                            }
                        }
                        oplane[oh * Wo + ow] += acc;
                    }
                }
            }
        }
    }
    std::vector<NodePtr> parents = {x.node(), w.node()};
    if (has_bias) parents.push_back(b.node());
    auto n = make_result(std::move(out), std::move(parents));
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* wn = w.node().get();
        Node* bn = has_bias ? b.node().get() : nullptr;
        Node* self = n.get();
        n->backward_fn = [xn, wn, bn, self, N, Cin, H, W, Cout, kh, kw, Ho, Wo, stride, pad] {
            const Tensor& g = self->grad;
            for (int64_t nn = 0; nn < N; ++nn) {
                for (int64_t co = 0; co < Cout; ++co) {
                    const double* gplane = g.data() + (nn * Cout + co) * Ho * Wo;
                    if (bn && bn->requires_grad) {
                        double s = 0.0;
                        for (int64_t i = 0; i < Ho * Wo; ++i) s += gplane[i];
                        bn->grad[co] += s;
                    }
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        const double* xplane = xn->val.data() + (nn * Cin + ci) * H * W;
                        const double* wk = wn->val.data() + (co * Cin + ci) * kh * kw;
                        double* xgplane = xn->requires_grad
                            ? xn->grad.data() + (nn * Cin + ci) * H * W : nullptr;
                        double* wgk = wn->requires_grad
                            ? wn->grad.data() + (co * Cin + ci) * kh * kw : nullptr;
                        for (int64_t oh = 0; oh < Ho; ++oh) {
                            for (int64_t ow = 0; ow < Wo; ++ow) {
                                const double gv = gplane[oh * Wo + ow];
                                if (gv == 0.0) continue;
                                const int64_t ih0 = oh * stride - pad;
                                const int64_t iw0 = ow * stride - pad;
                                for (int64_t u = 0; u < kh; ++u) {
                                    const int64_t ih = ih0 + u;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int64_t v = 0; v < kw; ++v) {
                                        const int64_t iw = iw0 + v;
                                        if (iw < 0 || iw >= W) continue;
                                        if (xgplane) xgplane[ih * W + iw] += gv * wk[u * kw + v];
                                        if (wgk) wgk[u * kw + v] += gv * xplane[ih * W + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return Value(n);
}

Value upsample_nearest2x(const Value& x) {
    check(x.val().ndim() == 4, "upsample_nearest2x: x must be [N,C,H,W]");
    const int64_t NC = x.shape(0) * x.shape(1), H = x.shape(2), W = x.shape(3);
    Tensor out({x.shape(0), x.shape(1), 2 * H, 2 * W});
    for (int64_t p = 0; p < NC; ++p) {
        const double* src = x.val().data() + p * H * W;
        double* dst = out.data() + p * 4 * H * W;
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w) {
                const double v = src[h * W + w];
                dst[(2 * h) * 2 * W + 2 * w] = v;
                dst[(2 * h) * 2 * W + 2 * w + 1] = v;
                dst[(2 * h + 1) * 2 * W + 2 * w] = v;
                dst[(2 * h + 1) * 2 * W + 2 * w + 1] = v;
            }
    }
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, NC, H, W] {
            for (int64_t p = 0; p < NC; ++p) {
                double* xg = xn->grad.data() + p * H * W;
                const double* g = self->grad.data() + p * 4 * H * W;
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w)
                        xg[h * W + w] += g[(2 * h) * 2 * W + 2 * w] +
                                         g[(2 * h) * 2 * W + 2 * w + 1] +
                                         g[(2 * h + 1) * 2 * W + 2 * w] +
                                         g[(2 * h + 1) * 2 * W + 2 * w + 1];
            }
        };
    }
    return Value(n);
}

Value pad_replicate1(const Value& x) {
    check(x.val().ndim() == 3, "pad_replicate1: x must be [N,H,W]");
    const int64_t N = x.shape(0), H = x.shape(1), W = x.shape(2);
    Tensor out({N, H + 2, W + 2});
    for (int64_t nn = 0; nn < N; ++nn) {
        const double* src = x.val().data() + nn * H * W;
        double* dst = out.data() + nn * (H + 2) * (W + 2);
        for (int64_t h = 0; h < H + 2; ++h) {
            const int64_t sh = std::min(std::max(h - 1, int64_t{0}), H - 1);
            for (int64_t w = 0; w < W + 2; ++w) {
                const int64_t sw = std::min(std::max(w - 1, int64_t{0}), W - 1);
                dst[h * (W + 2) + w] = src[sh * W + sw];
            }
        }
    }
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, N, H, W] {
            for (int64_t nn = 0; nn < N; ++nn) {
                double* xg = xn->grad.data() + nn * H * W;
                const double* g = self->grad.data() + nn * (H + 2) * (W + 2);
                for (int64_t h = 0; h < H + 2; ++h) {
                    const int64_t sh = std::min(std::max(h - 1, int64_t{0}), H - 1);
                    for (int64_t w = 0; w < W + 2; ++w) {
                        const int64_t sw = std::min(std::max(w - 1, int64_t{0}), W - 1);
                        xg[sh * W + sw] += g[h * (W + 2) + w];
                    }
                }
            }
        };
    }
    return Value(n);
}

Value conv3x3_valid_const(const Value& x, const double k[9]) {
    check(x.val().ndim() == 3, "conv3x3_valid_const: x must be [N,H,W]");
    const int64_t N = x.shape(0), H = x.shape(1), W = x.shape(2);
    check(H >= 3 && W >= 3, "conv3x3_valid_const: input smaller than kernel");
    const int64_t Ho = H - 2, Wo = W - 2;
    std::vector<double> kv(k, k + 9);
    Tensor out({N, Ho, Wo});
    for (int64_t nn = 0; nn < N; ++nn) {
        const double* src = x.val().data() + nn * H * W;
        double* dst = out.data() + nn * Ho * Wo;
        for (int64_t h = 0; h < Ho; ++h)
            for (int64_t w = 0; w < Wo; ++w) {
                double acc = 0.0;
                for (int64_t u = 0; u < 3; ++u)
                    for (int64_t v = 0; v < 3; ++v)
                        acc += src[(h + u) * W + w + v] * kv[static_cast<size_t>(u * 3 + v)];
                dst[h * Wo + w] = acc;
            }
    }
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, kv, N, H, W, Ho, Wo] {
            for (int64_t nn = 0; nn < N; ++nn) {
                double* xg = xn->grad.data() + nn * H * W;
                const double* g = self->grad.data() + nn * Ho * Wo;
                for (int64_t h = 0; h < Ho; ++h)
                    for (int64_t w = 0; w < Wo; ++w) {
                        const double gv = g[h * Wo + w];
                        if (gv == 0.0) continue;
                        for (int64_t u = 0; u < 3; ++u)
                            for (int64_t v = 0; v < 3; ++v)
                                xg[(h + u) * W + w + v] += gv * kv[static_cast<size_t>(u * 3 + v)];
                    }
            }
        };
    }
    return Value(n);
}

Value embedding_rows(const Value& table, const std::vector<int64_t>& ids) {
    check(table.val().ndim() == 2, "embedding_rows: table must be [V,D]");
    const int64_t V = table.shape(0), D = table.shape(1);
    const int64_t S = static_cast<int64_t>(ids.size());
    Tensor out({S, D});
    for (int64_t s = 0; s < S; ++s) {
        const int64_t id = ids[static_cast<size_t>(s)];
        check(id >= 0 && id < V, "embedding_rows: id out of range");
        const double* src = table.val().data() + id * D;
        double* dst = out.data() + s * D;
        for (int64_t j = 0; j < D; ++j) dst[j] = src[j];
    }
    auto n = make_result(std::move(out), {table.node()});
    if (n->requires_grad) {
        Node* tn = table.node().get();
        Node* self = n.get();
        auto ids_copy = ids;
        n->backward_fn = [tn, self, ids_copy, D] {
            for (size_t s = 0; s < ids_copy.size(); ++s) {
                double* dst = tn->grad.data() + ids_copy[s] * D;
                const double* g = self->grad.data() + static_cast<int64_t>(s) * D;
                for (int64_t j = 0; j < D; ++j) dst[j] += g[j];
            }
        };
    }
    return Value(n);
}

Value sum_all(const Value& x) {
    double s = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x.val()[i];
    auto n = make_result(Tensor::scalar(s), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self] {
            const double g = self->grad[0];
            for (int64_t i = 0; i < xn->grad.numel(); ++i) xn->grad[i] += g;
        };
    }
    return Value(n);
}

Value mean_all(const Value& x) {
    const int64_t m = x.numel();
    double s = 0.0;
    for (int64_t i = 0; i < m; ++i) s += x.val()[i];
    auto n = make_result(Tensor::scalar(s / static_cast<double>(m)), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, m] {
            const double g = self->grad[0] / static_cast<double>(m);
            for (int64_t i = 0; i < m; ++i) xn->grad[i] += g;
        };
    }
    return Value(n);
}

Value mean_dim(const Value& x, int dim) {
    const auto& xs = x.shape();
    check(dim >= 0 && dim < static_cast<int>(xs.size()), "mean_dim: bad axis");
    int64_t outer, extent, inner;
    split_around(xs, dim, outer, extent, inner);
    std::vector<int64_t> oshape;
    for (size_t i = 0; i < xs.size(); ++i)
        if (static_cast<int>(i) != dim) oshape.push_back(xs[i]);
    if (oshape.empty()) oshape.push_back(1);
    Tensor out(oshape);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            double s = 0.0;
            for (int64_t e = 0; e < extent; ++e)
                s += x.val()[(o * extent + e) * inner + i];
            out[o * inner + i] = s / static_cast<double>(extent);
        }
    auto n = make_result(std::move(out), {x.node()});
    if (n->requires_grad) {
        Node* xn = x.node().get();
        Node* self = n.get();
        n->backward_fn = [xn, self, outer, extent, inner] {
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    const double g = self->grad[o * inner + i] / static_cast<double>(extent);
                    for (int64_t e = 0; e < extent; ++e)
                        xn->grad[(o * extent + e) * inner + i] += g;
                }
        };
    }
    return Value(n);
}

}  // namespace dmtv
