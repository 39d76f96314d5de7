#pragma once

// Reverse-mode autodiff over float tensors. A Graph is a per-step tape:
// ops compute values eagerly at construction and record a closure that
// accumulates gradients into their parents. Creation order is topological,
// so backward() is a single reverse sweep. Heavy ops (conv, matmul) go
// through Eigen GEMM on im2col buffers; everything is single-threaded and
// deterministic for a fixed seed.

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "segface/core/tensor.hpp"

namespace segface {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

// Learnable tensor plus its Adam state. Owned by model classes; graphs
// reference it via Graph::param().
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m, adam_v;

    Param() = default;
    Param(std::string n, Tensor init) : name(std::move(n)), value(std::move(init)) {
        grad = Tensor(value.shape);
        adam_m = Tensor(value.shape);
        adam_v = Tensor(value.shape);
    }
    void zero_grad() { grad.fill(0.0f); }
};

struct Node {
    Tensor val;
    Tensor grad;  // allocated on first accumulation
    bool need_grad = false;
    std::function<void()> back;  // reads this->grad, accumulates into parents

    Tensor& g() {
        if (grad.empty()) grad = Tensor(val.shape);
        return grad;
    }
    bool has_grad() const { return !grad.empty(); }
};

class Graph {
public:
    Node* input(Tensor t) {
        Node* n = alloc();
        n->val = std::move(t);
        return n;
    }

    // Differentiable leaf without a Param behind it (gradient-check tests).
    Node* leaf(Tensor t) {
        Node* n = alloc();
        n->val = std::move(t);
        n->need_grad = true;
        return n;
    }

    Node* param(Param& p) {
        Node* n = alloc();
        n->val = p.value;  // copy: cheap relative to activations, keeps aliasing out
        n->need_grad = true;
        bindings_.push_back({n, &p});
        return n;
    }

    // Parameter whose value participates but which receives no gradient
    // (frozen expert inside TSG training, frozen D inside G step).
    Node* frozen(const Param& p) {
        Node* n = alloc();
        n->val = p.value;
        return n;
    }

    void backward(Node* loss) {
        if (loss->val.numel() != 1) throw InvalidInput("backward expects a scalar loss");
        loss->g()[0] = 1.0f;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = *it;
            if (n.back && n.has_grad()) n.back();
        }
        for (auto& [node, p] : bindings_) {
            if (!node->has_grad()) continue;
            for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += node->grad[i];
        }
    }

    Node* alloc() {
        nodes_.emplace_back();
        return &nodes_.back();
    }

    size_t size() const { return nodes_.size(); }

private:
    std::deque<Node> nodes_;  // stable addresses
    std::vector<std::pair<Node*, Param*>> bindings_;
};

namespace detail {

inline void axpy(Tensor& dst, const Tensor& src, float a = 1.0f) {
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += a * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

inline Node* add(Graph& g, Node* a, Node* b) {
    if (!a->val.same_shape(b->val)) throw InvalidInput("add: shape mismatch");
    Node* out = g.alloc();
    out->val = a->val;
    detail::axpy(out->val, b->val);
    out->need_grad = a->need_grad || b->need_grad;
    if (out->need_grad)
        out->back = [out, a, b] {
            if (a->need_grad) detail::axpy(a->g(), out->grad);
            if (b->need_grad) detail::axpy(b->g(), out->grad);
        };
    return out;
}

inline Node* sub(Graph& g, Node* a, Node* b) {
    if (!a->val.same_shape(b->val)) throw InvalidInput("sub: shape mismatch");
    Node* out = g.alloc();
    out->val = a->val;
    detail::axpy(out->val, b->val, -1.0f);
    out->need_grad = a->need_grad || b->need_grad;
    if (out->need_grad)
        out->back = [out, a, b] {
            if (a->need_grad) detail::axpy(a->g(), out->grad);
            if (b->need_grad) detail::axpy(b->g(), out->grad, -1.0f);
        };
    return out;
}

inline Node* mul(Graph& g, Node* a, Node* b) {
    if (!a->val.same_shape(b->val)) throw InvalidInput("mul: shape mismatch");
    Node* out = g.alloc();
    out->val = Tensor(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val[i] = a->val[i] * b->val[i];
    out->need_grad = a->need_grad || b->need_grad;
    if (out->need_grad)
        out->back = [out, a, b] {
            if (a->need_grad) {
                Tensor& ga = a->g();
                for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += out->grad[i] * b->val[i];
            }
            if (b->need_grad) {
                Tensor& gb = b->g();
                for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += out->grad[i] * a->val[i];
            }
        };
    return out;
}

inline Node* scale(Graph& g, Node* a, float s) {
    Node* out = g.alloc();
    out->val = Tensor(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val[i] = a->val[i] * s;
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a, s] { detail::axpy(a->g(), out->grad, s); };
    return out;
}

inline Node* add_scalar(Graph& g, Node* a, float s) {
    Node* out = g.alloc();
    out->val = Tensor(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val[i] = a->val[i] + s;
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a] { detail::axpy(a->g(), out->grad); };
    return out;
}

// (1,C,H,W) -> (N,C,H,W); used for learned constant inputs.
inline Node* tile_batch(Graph& g, Node* a, int n) {
    if (a->val.dim(0) != 1) throw InvalidInput("tile_batch: leading dim must be 1");
    Node* out = g.alloc();
    std::vector<int> shape = a->val.shape;
    shape[0] = n;
    out->val = Tensor(shape);
    const int64_t block = a->val.numel();
    for (int b = 0; b < n; ++b)
        std::copy(a->val.v.begin(), a->val.v.end(), out->val.v.begin() + b * block);
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a, n, block] {
            Tensor& ga = a->g();
            for (int b = 0; b < n; ++b)
                for (int64_t i = 0; i < block; ++i) ga[i] += out->grad[b * block + i];
        };
    return out;
}

inline Node* leaky_relu(Graph& g, Node* a, float slope = 0.2f) {
    Node* out = g.alloc();
    out->val = Tensor(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) {
        float x = a->val[i];
        out->val[i] = x >= 0.0f ? x : slope * x;
    }
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a, slope] {
            Tensor& ga = a->g();
            for (int64_t i = 0; i < ga.numel(); ++i)
                ga[i] += out->grad[i] * (a->val[i] >= 0.0f ? 1.0f : slope);
        };
    return out;
}

inline Node* relu(Graph& g, Node* a) { return leaky_relu(g, a, 0.0f); }

inline Node* sigmoid(Graph& g, Node* a) {
    Node* out = g.alloc();
    out->val = Tensor(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i)
        out->val[i] = 1.0f / (1.0f + std::exp(-a->val[i]));
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a] {
            Tensor& ga = a->g();
            for (int64_t i = 0; i < ga.numel(); ++i) {
                float y = out->val[i];
                ga[i] += out->grad[i] * y * (1.0f - y);
            }
        };
    return out;
}

inline Node* tanh_op(Graph& g, Node* a) {
    Node* out = g.alloc();
    out->val = Tensor(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val[i] = std::tanh(a->val[i]);
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a] {
            Tensor& ga = a->g();
            for (int64_t i = 0; i < ga.numel(); ++i) {
                float y = out->val[i];
                ga[i] += out->grad[i] * (1.0f - y * y);
            }
        };
    return out;
}

// log(1 + e^x), numerically stable.
inline Node* softplus(Graph& g, Node* a) {
    Node* out = g.alloc();
    out->val = Tensor(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) {
        float x = a->val[i];
        out->val[i] = x > 0.0f ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a] {
            Tensor& ga = a->g();
            for (int64_t i = 0; i < ga.numel(); ++i)
                ga[i] += out->grad[i] / (1.0f + std::exp(-a->val[i]));
        };
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Node* reshape(Graph& g, Node* a, std::vector<int> shape) {
    if (Tensor::count(shape) != a->val.numel()) throw InvalidInput("reshape: element count mismatch");
    Node* out = g.alloc();
    out->val = Tensor(shape, a->val.v);
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a] { detail::axpy(a->g(), out->grad); };
    return out;
}

inline Node* concat_channels(Graph& g, const std::vector<Node*>& xs) {
    if (xs.empty()) throw InvalidInput("concat_channels: empty input list");
    int n = xs[0]->val.dim(0), h = xs[0]->val.dim(2), w = xs[0]->val.dim(3);
    int ctot = 0;
    for (Node* x : xs) {
        if (x->val.rank() != 4 || x->val.dim(0) != n || x->val.dim(2) != h || x->val.dim(3) != w)
            throw InvalidInput("concat_channels: incompatible shapes");
        ctot += x->val.dim(1);
    }
    Node* out = g.alloc();
    out->val = Tensor({n, ctot, h, w});
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int b = 0; b < n; ++b) {
        int co = 0;
        for (Node* x : xs) {
            int c = x->val.dim(1);
            std::copy_n(x->val.data() + (static_cast<int64_t>(b) * c) * plane, c * plane,
                        out->val.data() + (static_cast<int64_t>(b) * ctot + co) * plane);
            co += c;
        }
    }
    for (Node* x : xs) out->need_grad = out->need_grad || x->need_grad;
    if (out->need_grad)
        out->back = [out, xs, n, ctot, plane] {
            for (int b = 0; b < n; ++b) {
                int co = 0;
                for (Node* x : xs) {
                    int c = x->val.dim(1);
                    if (x->need_grad) {
                        float* gx = x->g().data() + (static_cast<int64_t>(b) * c) * plane;
                        const float* go = out->grad.data() + (static_cast<int64_t>(b) * ctot + co) * plane;
                        for (int64_t i = 0; i < c * plane; ++i) gx[i] += go[i];
                    }
                    co += c;
                }
            }
        };
    return out;
}

inline Node* slice_channels(Graph& g, Node* a, int c0, int c1) {
    int n = a->val.dim(0), c = a->val.dim(1), h = a->val.dim(2), w = a->val.dim(3);
    if (c0 < 0 || c1 > c || c0 >= c1) throw InvalidInput("slice_channels: bad range");
    Node* out = g.alloc();
    out->val = Tensor({n, c1 - c0, h, w});
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int b = 0; b < n; ++b)
        std::copy_n(a->val.data() + (static_cast<int64_t>(b) * c + c0) * plane, (c1 - c0) * plane,
                    out->val.data() + static_cast<int64_t>(b) * (c1 - c0) * plane);
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a, c0, c1, c, n, plane] {
            for (int b = 0; b < n; ++b) {
                float* ga = a->g().data() + (static_cast<int64_t>(b) * c + c0) * plane;
                const float* go = out->grad.data() + static_cast<int64_t>(b) * (c1 - c0) * plane;
                for (int64_t i = 0; i < (c1 - c0) * plane; ++i) ga[i] += go[i];
            }
        };
    return out;
}

// Row slice on the H axis of (N, C, H, W); used for lower-half crops.
inline Node* slice_rows(Graph& g, Node* a, int r0, int r1) {
    int n = a->val.dim(0), c = a->val.dim(1), h = a->val.dim(2), w = a->val.dim(3);
    if (r0 < 0 || r1 > h || r0 >= r1) throw InvalidInput("slice_rows: bad range");
    Node* out = g.alloc();
    out->val = Tensor({n, c, r1 - r0, w});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            std::copy_n(a->val.data() + ((static_cast<int64_t>(b) * c + ch) * h + r0) * w,
                        static_cast<int64_t>(r1 - r0) * w,
                        out->val.data() + ((static_cast<int64_t>(b) * c + ch) * (r1 - r0)) * w);
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a, r0, r1, n, c, h, w] {
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    float* ga = a->g().data() + ((static_cast<int64_t>(b) * c + ch) * h + r0) * w;
                    const float* go =
                        out->grad.data() + ((static_cast<int64_t>(b) * c + ch) * (r1 - r0)) * w;
                    for (int64_t i = 0; i < static_cast<int64_t>(r1 - r0) * w; ++i) ga[i] += go[i];
                }
        };
    return out;
}

inline Node* slice_cols(Graph& g, Node* a, int c0, int c1) {
    if (a->val.rank() != 2) throw InvalidInput("slice_cols: rank-2 input expected");
    int r = a->val.dim(0), c = a->val.dim(1);
    if (c0 < 0 || c1 > c || c0 >= c1) throw InvalidInput("slice_cols: bad range");
    Node* out = g.alloc();
    out->val = Tensor({r, c1 - c0});
    for (int i = 0; i < r; ++i)
        std::copy_n(a->val.data() + static_cast<int64_t>(i) * c + c0, c1 - c0,
                    out->val.data() + static_cast<int64_t>(i) * (c1 - c0));
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a, c0, c1, r, c] {
            for (int i = 0; i < r; ++i) {
                float* ga = a->g().data() + static_cast<int64_t>(i) * c + c0;
                const float* go = out->grad.data() + static_cast<int64_t>(i) * (c1 - c0);
                for (int j = 0; j < c1 - c0; ++j) ga[j] += go[j];
            }
        };
    return out;
}

inline Node* concat_cols(Graph& g, const std::vector<Node*>& xs) {
    if (xs.empty()) throw InvalidInput("concat_cols: empty input list");
    int r = xs[0]->val.dim(0);
    int ctot = 0;
    for (Node* x : xs) {
        if (x->val.rank() != 2 || x->val.dim(0) != r) throw InvalidInput("concat_cols: shape mismatch");
        ctot += x->val.dim(1);
    }
    Node* out = g.alloc();
    out->val = Tensor({r, ctot});
    for (int i = 0; i < r; ++i) {
        int co = 0;
        for (Node* x : xs) {
            int c = x->val.dim(1);
            std::copy_n(x->val.data() + static_cast<int64_t>(i) * c, c,
                        out->val.data() + static_cast<int64_t>(i) * ctot + co);
            co += c;
        }
    }
    for (Node* x : xs) out->need_grad = out->need_grad || x->need_grad;
    if (out->need_grad)
        out->back = [out, xs, r, ctot] {
            for (int i = 0; i < r; ++i) {
                int co = 0;
                for (Node* x : xs) {
                    int c = x->val.dim(1);
                    if (x->need_grad) {
                        float* gx = x->g().data() + static_cast<int64_t>(i) * c;
                        const float* go = out->grad.data() + static_cast<int64_t>(i) * ctot + co;
                        for (int j = 0; j < c; ++j) gx[j] += go[j];
                    }
                    co += c;
                }
            }
        };
    return out;
}

// (N, C) -> (N, C, H, W), constant over space. Used to inject embeddings
// at a bottleneck.
inline Node* broadcast_spatial(Graph& g, Node* a, int h, int w) {
    if (a->val.rank() != 2) throw InvalidInput("broadcast_spatial: rank-2 input expected");
    int n = a->val.dim(0), c = a->val.dim(1);
    Node* out = g.alloc();
    out->val = Tensor({n, c, h, w});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            float x = a->val.at(b, ch);
            float* p = out->val.data() + (static_cast<int64_t>(b) * c + ch) * h * w;
            std::fill_n(p, static_cast<int64_t>(h) * w, x);
        }
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a, n, c, h, w] {
            Tensor& ga = a->g();
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    const float* p = out->grad.data() + (static_cast<int64_t>(b) * c + ch) * h * w;
                    float s = 0.0f;
                    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) s += p[i];
                    ga.at(b, ch) += s;
                }
        };
    return out;
}

inline Node* upsample_nearest2x(Graph& g, Node* a) {
    int n = a->val.dim(0), c = a->val.dim(1), h = a->val.dim(2), w = a->val.dim(3);
    Node* out = g.alloc();
    out->val = Tensor({n, c, 2 * h, 2 * w});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < 2 * h; ++i)
                for (int j = 0; j < 2 * w; ++j)
                    out->val.at(b, ch, i, j) = a->val.at(b, ch, i / 2, j / 2);
    out->need_grad = a->need_grad;
    if (out->need_grad)
        out->back = [out, a, n, c, h, w] {
            Tensor& ga = a->g();
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch)
                    for (int i = 0; i < 2 * h; ++i)
                        for (int j = 0; j < 2 * w; ++j)
                            ga.at(b, ch, i / 2, j / 2) += out->grad.at(b, ch, i, j);
        };
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// C = op(A) * op(B) for rank-2 nodes.
inline Node* matmul(Graph& g, Node* a, Node* b, bool trans_a = false, bool trans_b = false) {
    if (a->val.rank() != 2 || b->val.rank() != 2) throw InvalidInput("matmul: rank-2 inputs expected");
    int m = trans_a ? a->val.dim(1) : a->val.dim(0);
    int k = trans_a ? a->val.dim(0) : a->val.dim(1);
    int k2 = trans_b ? b->val.dim(1) : b->val.dim(0);
    int n = trans_b ? b->val.dim(0) : b->val.dim(1);
    if (k != k2) throw InvalidInput("matmul: inner dimension mismatch");
    Node* out = g.alloc();
    out->val = Tensor({m, n});
    {
        ECMap A(a->val.data(), a->val.dim(0), a->val.dim(1));
        ECMap B(b->val.data(), b->val.dim(0), b->val.dim(1));
        EMap C(out->val.data(), m, n);
        if (!trans_a && !trans_b) C.noalias() = A * B;
        else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
        else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
        else C.noalias() = A.transpose() * B.transpose();
    }
    out->need_grad = a->need_grad || b->need_grad;
    if (out->need_grad)
        out->back = [out, a, b, trans_a, trans_b, m, n] {
            ECMap G(out->grad.data(), m, n);
            ECMap A(a->val.data(), a->val.dim(0), a->val.dim(1));
            ECMap B(b->val.data(), b->val.dim(0), b->val.dim(1));
            if (a->need_grad) {
                EMap GA(a->g().data(), a->val.dim(0), a->val.dim(1));
                if (!trans_a && !trans_b) GA.noalias() += G * B.transpose();
                else if (!trans_a && trans_b) GA.noalias() += G * B;
                else if (trans_a && !trans_b) GA.noalias() += B * G.transpose();
                else GA.noalias() += B.transpose() * G.transpose();
            }
            if (b->need_grad) {
                EMap GB(b->g().data(), b->val.dim(0), b->val.dim(1));
                if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
                else if (trans_a && !trans_b) GB.noalias() += A * G;
                else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
                else GB.noalias() += G.transpose() * A.transpose();
            }
        };
    return out;
}

// x:(N,K)  w:(F,K)  b:(F) -> (N,F)
inline Node* linear(Graph& g, Node* x, Node* w, Node* b) {
    Node* y = matmul(g, x, w, false, true);
    if (!b) return y;
    int n = y->val.dim(0), f = y->val.dim(1);
    if (b->val.numel() != f) throw InvalidInput("linear: bias size mismatch");
    Node* out = g.alloc();
    out->val = y->val;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j) out->val.at(i, j) += b->val[j];
    out->need_grad = y->need_grad || b->need_grad;
    if (out->need_grad)
        out->back = [out, y, b, n, f] {
            if (y->need_grad) detail::axpy(y->g(), out->grad);
            if (b->need_grad) {
                Tensor& gb = b->g();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < f; ++j) gb[j] += out->grad.at(i, j);
            }
        };
    return out;
}

// ---------------------------------------------------------------------------
// Convolutions (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

// x:(C,H,W) -> cols:(C*kh*kw, oh*ow)
inline void im2col(const float* x, int c, int h, int w, int kh, int kw, int stride, int pad,
                   int oh, int ow, float* cols) {
    for (int ch = 0; ch < c; ++ch)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                float* dst = cols + ((static_cast<int64_t>(ch) * kh + ki) * kw + kj) *
                                        (static_cast<int64_t>(oh) * ow);
                for (int oi = 0; oi < oh; ++oi) {
                    int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) {
                        std::fill_n(dst + static_cast<int64_t>(oi) * ow, ow, 0.0f);
                        continue;
                    }
                    const float* src = x + (static_cast<int64_t>(ch) * h + ii) * w;
                    for (int oj = 0; oj < ow; ++oj) {
                        int jj = oj * stride - pad + kj;
                        dst[static_cast<int64_t>(oi) * ow + oj] =
                            (jj >= 0 && jj < w) ? src[jj] : 0.0f;
                    }
                }
            }
}

// scatter-add inverse of im2col
inline void col2im_add(const float* cols, int c, int h, int w, int kh, int kw, int stride, int pad,
                       int oh, int ow, float* x) {
    for (int ch = 0; ch < c; ++ch)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                const float* src = cols + ((static_cast<int64_t>(ch) * kh + ki) * kw + kj) *
                                              (static_cast<int64_t>(oh) * ow);
                for (int oi = 0; oi < oh; ++oi) {
                    int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    float* dst = x + (static_cast<int64_t>(ch) * h + ii) * w;
                    for (int oj = 0; oj < ow; ++oj) {
                        int jj = oj * stride - pad + kj;
                        if (jj >= 0 && jj < w) dst[jj] += src[static_cast<int64_t>(oi) * ow + oj];
                    }
                }
            }
}

}  // namespace detail

// x:(N,Cin,H,W)  w:(Cout,Cin,kh,kw)  b:(Cout) or null
inline Node* conv2d(Graph& g, Node* x, Node* w, Node* b, int stride = 1, int pad = -1) {
    int n = x->val.dim(0), cin = x->val.dim(1), h = x->val.dim(2), wd = x->val.dim(3);
    int cout = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
    if (w->val.dim(1) != cin) throw InvalidInput("conv2d: channel mismatch");
    if (pad < 0) pad = kh / 2;
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (wd + 2 * pad - kw) / stride + 1;
    const int kdim = cin * kh * kw;
    const int64_t pixels = static_cast<int64_t>(oh) * ow;

    Node* out = g.alloc();
    out->val = Tensor({n, cout, oh, ow});
    // Cols are rebuilt in backward rather than cached: trades FLOPs for memory.
    {
        std::vector<float> cols(static_cast<size_t>(kdim) * pixels);
        ECMap W(w->val.data(), cout, kdim);
        for (int bi = 0; bi < n; ++bi) {
            detail::im2col(x->val.data() + static_cast<int64_t>(bi) * cin * h * wd, cin, h, wd, kh,
                           kw, stride, pad, oh, ow, cols.data());
            ECMap C(cols.data(), kdim, pixels);
            EMap Y(out->val.data() + static_cast<int64_t>(bi) * cout * pixels, cout, pixels);
            Y.noalias() = W * C;
            if (b) {
                float* y = out->val.data() + static_cast<int64_t>(bi) * cout * pixels;
                for (int co = 0; co < cout; ++co) {
                    float bb = b->val[co];
                    for (int64_t i = 0; i < pixels; ++i) y[static_cast<int64_t>(co) * pixels + i] += bb;
                }
            }
        }
    }
    out->need_grad = x->need_grad || w->need_grad || (b && b->need_grad);
    if (out->need_grad)
        out->back = [out, x, w, b, n, cin, h, wd, cout, kh, kw, stride, pad, oh, ow, kdim, pixels] {
            std::vector<float> cols(static_cast<size_t>(kdim) * pixels);
            std::vector<float> dcols(static_cast<size_t>(kdim) * pixels);
            for (int bi = 0; bi < n; ++bi) {
                ECMap GY(out->grad.data() + static_cast<int64_t>(bi) * cout * pixels, cout, pixels);
                if (w->need_grad || x->need_grad)
                    detail::im2col(x->val.data() + static_cast<int64_t>(bi) * cin * h * wd, cin, h,
                                   wd, kh, kw, stride, pad, oh, ow, cols.data());
                if (w->need_grad) {
                    ECMap C(cols.data(), kdim, pixels);
                    EMap GW(w->g().data(), cout, kdim);
                    GW.noalias() += GY * C.transpose();
                }
                if (x->need_grad) {
                    ECMap W(w->val.data(), cout, kdim);
                    EMap DC(dcols.data(), kdim, pixels);
                    DC.noalias() = W.transpose() * GY;
                    detail::col2im_add(dcols.data(), cin, h, wd, kh, kw, stride, pad, oh, ow,
                                       x->g().data() + static_cast<int64_t>(bi) * cin * h * wd);
                }
                if (b && b->need_grad) {
                    Tensor& gb = b->g();
                    const float* gy = out->grad.data() + static_cast<int64_t>(bi) * cout * pixels;
                    for (int co = 0; co < cout; ++co) {
                        float s = 0.0f;
                        for (int64_t i = 0; i < pixels; ++i) s += gy[static_cast<int64_t>(co) * pixels + i];
                        gb[co] += s;
                    }
                }
            }
        };
    return out;
}

// Transposed conv. x:(N,Cin,H,W)  w:(Cin,Cout,kh,kw)  output (N,Cout,(H-1)*s-2p+kh, ...)
inline Node* conv_transpose2d(Graph& g, Node* x, Node* w, Node* b, int stride = 2, int pad = 1) {
    int n = x->val.dim(0), cin = x->val.dim(1), h = x->val.dim(2), wd = x->val.dim(3);
    if (w->val.dim(0) != cin) throw InvalidInput("conv_transpose2d: channel mismatch");
    int cout = w->val.dim(1), kh = w->val.dim(2), kw = w->val.dim(3);
    int oh = (h - 1) * stride - 2 * pad + kh;
    int ow = (wd - 1) * stride - 2 * pad + kw;
    const int kdim = cout * kh * kw;
    const int64_t in_pix = static_cast<int64_t>(h) * wd;

    Node* out = g.alloc();
    out->val = Tensor({n, cout, oh, ow});
    {
        std::vector<float> cols(static_cast<size_t>(kdim) * in_pix);
        ECMap W(w->val.data(), cin, kdim);
        for (int bi = 0; bi < n; ++bi) {
            ECMap X(x->val.data() + static_cast<int64_t>(bi) * cin * in_pix, cin, in_pix);
            EMap C(cols.data(), kdim, in_pix);
            C.noalias() = W.transpose() * X;
            // col2im over the *output* geometry: input pixels play the role of
            // conv output positions.
            detail::col2im_add(cols.data(), cout, oh, ow, kh, kw, stride, pad, h, wd,
                               out->val.data() + static_cast<int64_t>(bi) * cout * oh * ow);
            if (b) {
                float* y = out->val.data() + static_cast<int64_t>(bi) * cout * oh * ow;
                for (int co = 0; co < cout; ++co) {
                    float bb = b->val[co];
                    for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i)
                        y[static_cast<int64_t>(co) * oh * ow + i] += bb;
                }
            }
        }
    }
    out->need_grad = x->need_grad || w->need_grad || (b && b->need_grad);
    if (out->need_grad)
        out->back = [out, x, w, b, n, cin, h, wd, cout, kh, kw, stride, pad, oh, ow, kdim, in_pix] {
            std::vector<float> cols(static_cast<size_t>(kdim) * in_pix);
            for (int bi = 0; bi < n; ++bi) {
                // im2col of dY at the input geometry turns the data gradient
                // into an ordinary convolution.
                detail::im2col(out->grad.data() + static_cast<int64_t>(bi) * cout * oh * ow, cout,
                               oh, ow, kh, kw, stride, pad, h, wd, cols.data());
                ECMap C(cols.data(), kdim, in_pix);
                if (x->need_grad) {
                    ECMap W(w->val.data(), cin, kdim);
                    EMap GX(x->g().data() + static_cast<int64_t>(bi) * cin * in_pix, cin, in_pix);
                    GX.noalias() += W * C;  // (cin,kdim)*(kdim,in_pix)
                }
                if (w->need_grad) {
                    ECMap X(x->val.data() + static_cast<int64_t>(bi) * cin * in_pix, cin, in_pix);
                    EMap GW(w->g().data(), cin, kdim);
                    GW.noalias() += X * C.transpose();
                }
                if (b && b->need_grad) {
                    Tensor& gb = b->g();
                    const float* gy = out->grad.data() + static_cast<int64_t>(bi) * cout * oh * ow;
                    for (int co = 0; co < cout; ++co) {
                        float s = 0.0f;
                        for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i)
                            s += gy[static_cast<int64_t>(co) * oh * ow + i];
                        gb[co] += s;
                    }
                }
            }
        };
    return out;
}

// ---------------------------------------------------------------------------
// Normalization, pooling, softmax
// ---------------------------------------------------------------------------

inline Node* instance_norm(Graph& g, Node* x, Node* gamma, Node* beta, float eps = 1e-5f) {
    int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    const int64_t m = static_cast<int64_t>(h) * w;
    Node* out = g.alloc();
    out->val = Tensor({n, c, h, w});
    auto* stats = new std::vector<float>(static_cast<size_t>(n) * c * 2);  // mu, inv_sigma
    std::shared_ptr<std::vector<float>> stats_sp(stats);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const float* p = x->val.data() + (static_cast<int64_t>(b) * c + ch) * m;
            double mu = 0.0;
            for (int64_t i = 0; i < m; ++i) mu += p[i];
            mu /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                double d = p[i] - mu;
                var += d * d;
            }
            var /= static_cast<double>(m);
            float inv = 1.0f / std::sqrt(static_cast<float>(var) + eps);
            (*stats)[(static_cast<size_t>(b) * c + ch) * 2] = static_cast<float>(mu);
            (*stats)[(static_cast<size_t>(b) * c + ch) * 2 + 1] = inv;
            float ga = gamma->val[ch], be = beta->val[ch];
            float* q = out->val.data() + (static_cast<int64_t>(b) * c + ch) * m;
            for (int64_t i = 0; i < m; ++i)
                q[i] = (p[i] - static_cast<float>(mu)) * inv * ga + be;
        }
    out->need_grad = x->need_grad || gamma->need_grad || beta->need_grad;
    if (out->need_grad)
        out->back = [out, x, gamma, beta, stats_sp, n, c, m] {
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    float mu = (*stats_sp)[(static_cast<size_t>(b) * c + ch) * 2];
                    float inv = (*stats_sp)[(static_cast<size_t>(b) * c + ch) * 2 + 1];
                    float ga = gamma->val[ch];
                    const float* p = x->val.data() + (static_cast<int64_t>(b) * c + ch) * m;
                    const float* go = out->grad.data() + (static_cast<int64_t>(b) * c + ch) * m;
                    double sum_g = 0.0, sum_gy = 0.0;
                    for (int64_t i = 0; i < m; ++i) {
                        float y = (p[i] - mu) * inv;
                        sum_g += go[i];
                        sum_gy += static_cast<double>(go[i]) * y;
                    }
                    if (gamma->need_grad) gamma->g()[ch] += static_cast<float>(sum_gy);
                    if (beta->need_grad) beta->g()[ch] += static_cast<float>(sum_g);
                    if (x->need_grad) {
                        float* gx = x->g().data() + (static_cast<int64_t>(b) * c + ch) * m;
                        float mg = static_cast<float>(sum_g / static_cast<double>(m));
                        float mgy = static_cast<float>(sum_gy / static_cast<double>(m));
                        for (int64_t i = 0; i < m; ++i) {
                            float y = (p[i] - mu) * inv;
                            gx[i] += ga * inv * (go[i] - mg - y * mgy);
                        }
                    }
                }
        };
    return out;
}

// (N,C,H,W) -> (N,C) spatial mean
inline Node* global_avg_pool(Graph& g, Node* x) {
    int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    const int64_t m = static_cast<int64_t>(h) * w;
    Node* out = g.alloc();
    out->val = Tensor({n, c});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const float* p = x->val.data() + (static_cast<int64_t>(b) * c + ch) * m;
            double s = 0.0;
            for (int64_t i = 0; i < m; ++i) s += p[i];
            out->val.at(b, ch) = static_cast<float>(s / static_cast<double>(m));
        }
    out->need_grad = x->need_grad;
    if (out->need_grad)
        out->back = [out, x, n, c, m] {
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    float gv = out->grad.at(b, ch) / static_cast<float>(m);
                    float* gx = x->g().data() + (static_cast<int64_t>(b) * c + ch) * m;
                    for (int64_t i = 0; i < m; ++i) gx[i] += gv;
                }
        };
    return out;
}

// Per-pixel softmax over the channel axis of (N,C,H,W).
inline Node* softmax_channels(Graph& g, Node* x) {
    int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    const int64_t m = static_cast<int64_t>(h) * w;
    Node* out = g.alloc();
    out->val = Tensor({n, c, h, w});
    for (int b = 0; b < n; ++b)
        for (int64_t i = 0; i < m; ++i) {
            float mx = -1e30f;
            for (int ch = 0; ch < c; ++ch)
                mx = std::max(mx, x->val[(static_cast<int64_t>(b) * c + ch) * m + i]);
            float z = 0.0f;
            for (int ch = 0; ch < c; ++ch) {
                float e = std::exp(x->val[(static_cast<int64_t>(b) * c + ch) * m + i] - mx);
                out->val[(static_cast<int64_t>(b) * c + ch) * m + i] = e;
                z += e;
            }
            for (int ch = 0; ch < c; ++ch)
                out->val[(static_cast<int64_t>(b) * c + ch) * m + i] /= z;
        }
    out->need_grad = x->need_grad;
    if (out->need_grad)
        out->back = [out, x, n, c, m] {
            for (int b = 0; b < n; ++b)
                for (int64_t i = 0; i < m; ++i) {
                    float dot = 0.0f;
                    for (int ch = 0; ch < c; ++ch) {
                        int64_t k = (static_cast<int64_t>(b) * c + ch) * m + i;
                        dot += out->grad[k] * out->val[k];
                    }
                    for (int ch = 0; ch < c; ++ch) {
                        int64_t k = (static_cast<int64_t>(b) * c + ch) * m + i;
                        x->g()[k] += out->val[k] * (out->grad[k] - dot);
                    }
                }
        };
    return out;
}

// Row-wise softmax on (R, C); attention weights.
inline Node* softmax_rows(Graph& g, Node* x) {
    int r = x->val.dim(0), c = x->val.dim(1);
    Node* out = g.alloc();
    out->val = Tensor({r, c});
    for (int i = 0; i < r; ++i) {
        float mx = -1e30f;
        for (int j = 0; j < c; ++j) mx = std::max(mx, x->val.at(i, j));
        float z = 0.0f;
        for (int j = 0; j < c; ++j) {
            float e = std::exp(x->val.at(i, j) - mx);
            out->val.at(i, j) = e;
            z += e;
        }
        for (int j = 0; j < c; ++j) out->val.at(i, j) /= z;
    }
    out->need_grad = x->need_grad;
    if (out->need_grad)
        out->back = [out, x, r, c] {
            for (int i = 0; i < r; ++i) {
                float dot = 0.0f;
                for (int j = 0; j < c; ++j) dot += out->grad.at(i, j) * out->val.at(i, j);
                for (int j = 0; j < c; ++j)
                    x->g().at(i, j) += out->val.at(i, j) * (out->grad.at(i, j) - dot);
            }
        };
    return out;
}

// ---------------------------------------------------------------------------
// Losses and reductions
// ---------------------------------------------------------------------------

inline Node* mean_all(Graph& g, Node* x) {
    Node* out = g.alloc();
    double s = 0.0;
    for (int64_t i = 0; i < x->val.numel(); ++i) s += x->val[i];
    const float inv = 1.0f / static_cast<float>(x->val.numel());
    out->val = Tensor::scalar(static_cast<float>(s) * inv);
    out->need_grad = x->need_grad;
    if (out->need_grad)
        out->back = [out, x, inv] {
            Tensor& gx = x->g();
            float gv = out->grad[0] * inv;
            for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gv;
        };
    return out;
}

inline Node* sum_all(Graph& g, Node* x) {
    Node* out = g.alloc();
    double s = 0.0;
    for (int64_t i = 0; i < x->val.numel(); ++i) s += x->val[i];
    out->val = Tensor::scalar(static_cast<float>(s));
    out->need_grad = x->need_grad;
    if (out->need_grad)
        out->back = [out, x] {
            Tensor& gx = x->g();
            float gv = out->grad[0];
            for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gv;
        };
    return out;
}

inline Node* l1_loss(Graph& g, Node* a, Node* b) {
    if (!a->val.same_shape(b->val)) throw InvalidInput("l1_loss: shape mismatch");
    Node* out = g.alloc();
    double s = 0.0;
    for (int64_t i = 0; i < a->val.numel(); ++i) s += std::fabs(a->val[i] - b->val[i]);
    const float inv = 1.0f / static_cast<float>(a->val.numel());
    out->val = Tensor::scalar(static_cast<float>(s) * inv);
    out->need_grad = a->need_grad || b->need_grad;
    if (out->need_grad)
        out->back = [out, a, b, inv] {
            float gv = out->grad[0] * inv;
            for (int64_t i = 0; i < a->val.numel(); ++i) {
                float sgn = a->val[i] > b->val[i] ? 1.0f : (a->val[i] < b->val[i] ? -1.0f : 0.0f);
                if (a->need_grad) a->g()[i] += gv * sgn;
                if (b->need_grad) b->g()[i] -= gv * sgn;
            }
        };
    return out;
}

inline Node* mse_loss(Graph& g, Node* a, Node* b) {
    if (!a->val.same_shape(b->val)) throw InvalidInput("mse_loss: shape mismatch");
    Node* out = g.alloc();
    double s = 0.0;
    for (int64_t i = 0; i < a->val.numel(); ++i) {
        double d = a->val[i] - b->val[i];
        s += d * d;
    }
    const float inv = 1.0f / static_cast<float>(a->val.numel());
    out->val = Tensor::scalar(static_cast<float>(s) * inv);
    out->need_grad = a->need_grad || b->need_grad;
    if (out->need_grad)
        out->back = [out, a, b, inv] {
            float gv = out->grad[0] * inv * 2.0f;
            for (int64_t i = 0; i < a->val.numel(); ++i) {
                float d = a->val[i] - b->val[i];
                if (a->need_grad) a->g()[i] += gv * d;
                if (b->need_grad) b->g()[i] -= gv * d;
            }
        };
    return out;
}

// Fused softmax + NLL over (N,C,...) logits with integer targets and
// per-class weights (pass empty weights for plain CE). Mean over all
// positions. Targets outside [0, C) raise.
inline Node* cross_entropy(Graph& g, Node* logits, const IntGrid& targets,
                           const std::vector<float>& class_weights = {}) {
    int n = logits->val.dim(0), c = logits->val.dim(1);
    int64_t m = 1;
    for (int d = 2; d < logits->val.rank(); ++d) m *= logits->val.dim(d);
    if (targets.numel() != static_cast<int64_t>(n) * m)
        throw InvalidInput("cross_entropy: target count mismatch");
    if (!class_weights.empty() && static_cast<int>(class_weights.size()) != c)
        throw InvalidInput("cross_entropy: weight count mismatch");

    auto soft = std::make_shared<Tensor>(logits->val.shape);
    double loss = 0.0;
    const int64_t total = static_cast<int64_t>(n) * m;
    for (int b = 0; b < n; ++b)
        for (int64_t i = 0; i < m; ++i) {
            int t = targets.v[static_cast<size_t>(b) * m + i];
            if (t < 0 || t >= c)
                throw InvalidInput("cross_entropy: target label " + std::to_string(t) +
                                   " outside [0," + std::to_string(c) + ")");
            float mx = -1e30f;
            for (int ch = 0; ch < c; ++ch)
                mx = std::max(mx, logits->val[(static_cast<int64_t>(b) * c + ch) * m + i]);
            double z = 0.0;
            for (int ch = 0; ch < c; ++ch)
                z += std::exp(static_cast<double>(logits->val[(static_cast<int64_t>(b) * c + ch) * m + i]) - mx);
            double logz = std::log(z) + mx;
            float wc = class_weights.empty() ? 1.0f : class_weights[static_cast<size_t>(t)];
            loss += wc * (logz - logits->val[(static_cast<int64_t>(b) * c + t) * m + i]);
            for (int ch = 0; ch < c; ++ch) {
                int64_t k = (static_cast<int64_t>(b) * c + ch) * m + i;
                (*soft)[k] = static_cast<float>(
                    std::exp(static_cast<double>(logits->val[k]) - logz));
            }
        }
    Node* out = g.alloc();
    out->val = Tensor::scalar(static_cast<float>(loss / static_cast<double>(total)));
    out->need_grad = logits->need_grad;
    if (out->need_grad) {
        auto tgt = std::make_shared<IntGrid>(targets);
        auto wts = std::make_shared<std::vector<float>>(class_weights);
        out->back = [out, logits, soft, tgt, wts, n, c, m, total] {
            float gv = out->grad[0] / static_cast<float>(total);
            Tensor& gx = logits->g();
            for (int b = 0; b < n; ++b)
                for (int64_t i = 0; i < m; ++i) {
                    int t = tgt->v[static_cast<size_t>(b) * m + i];
                    float wc = wts->empty() ? 1.0f : (*wts)[static_cast<size_t>(t)];
                    for (int ch = 0; ch < c; ++ch) {
                        int64_t k = (static_cast<int64_t>(b) * c + ch) * m + i;
                        float p = (*soft)[k];
                        gx[k] += gv * wc * (p - (ch == t ? 1.0f : 0.0f));
                    }
                }
        };
    }
    return out;
}

// Row-wise cosine similarity of (N,D) embeddings with the epsilon-guarded
// denominator max(|a||b|, eps).
inline Node* cosine_rows(Graph& g, Node* a, Node* b, float eps = 1e-8f) {
    if (!a->val.same_shape(b->val) || a->val.rank() != 2)
        throw InvalidInput("cosine_rows: (N,D) inputs of equal shape expected");
    int n = a->val.dim(0), d = a->val.dim(1);
    Node* out = g.alloc();
    out->val = Tensor({n});
    auto cache = std::make_shared<Tensor>(Tensor({n, 3}));  // |a|, |b|, denom
    for (int i = 0; i < n; ++i) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int j = 0; j < d; ++j) {
            float av = a->val.at(i, j), bv = b->val.at(i, j);
            dot += static_cast<double>(av) * bv;
            na += static_cast<double>(av) * av;
            nb += static_cast<double>(bv) * bv;
        }
        float la = static_cast<float>(std::sqrt(na)), lb = static_cast<float>(std::sqrt(nb));
        float denom = std::max(la * lb, eps);
        cache->at(i, 0) = la;
        cache->at(i, 1) = lb;
        cache->at(i, 2) = denom;
        out->val[i] = static_cast<float>(dot) / denom;
    }
    out->need_grad = a->need_grad || b->need_grad;
    if (out->need_grad)
        out->back = [out, a, b, cache, n, d, eps] {
            for (int i = 0; i < n; ++i) {
                float la = cache->at(i, 0), lb = cache->at(i, 1), denom = cache->at(i, 2);
                float gv = out->grad[i];
                if (gv == 0.0f) continue;
                float cosv = out->val[i];
                bool guarded = la * lb < eps;  // denominator pinned at eps: d(denom)=0
                for (int j = 0; j < d; ++j) {
                    float av = a->val.at(i, j), bv = b->val.at(i, j);
                    if (a->need_grad) {
                        float term = bv / denom;
                        if (!guarded && la > 0.0f) term -= cosv * av / (la * la);
                        a->g().at(i, j) += gv * term;
                    }
                    if (b->need_grad) {
                        float term = av / denom;
                        if (!guarded && lb > 0.0f) term -= cosv * bv / (lb * lb);
                        b->g().at(i, j) += gv * term;
                    }
                }
            }
        };
    return out;
}

// ---------------------------------------------------------------------------
// Region pooling / gathering (mask-conditioned ops)
// ---------------------------------------------------------------------------

// Mean-pool feature vectors per region label. features:(N,F,h,w),
// labels:(N,h,w) -> (N*C, F) rows ordered n-major. `present` gets one flag
// per row; absent regions produce zero rows.
inline Node* region_mean_pool(Graph& g, Node* features, const IntGrid& labels, int num_classes,
                              std::vector<uint8_t>* present = nullptr) {
    int n = features->val.dim(0), f = features->val.dim(1);
    int h = features->val.dim(2), w = features->val.dim(3);
    if (labels.numel() != static_cast<int64_t>(n) * h * w)
        throw InvalidInput("region_mean_pool: label grid mismatch");
    const int64_t m = static_cast<int64_t>(h) * w;
    Node* out = g.alloc();
    out->val = Tensor({n * num_classes, f});
    auto counts = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n) * num_classes, 0);
    for (int b = 0; b < n; ++b)
        for (int64_t i = 0; i < m; ++i) {
            int lab = labels.v[static_cast<size_t>(b) * m + i];
            if (lab < 0 || lab >= num_classes) throw InvalidInput("region_mean_pool: label out of range");
            (*counts)[static_cast<size_t>(b) * num_classes + lab]++;
            for (int ch = 0; ch < f; ++ch)
                out->val.at(b * num_classes + lab, ch) +=
                    features->val[(static_cast<int64_t>(b) * f + ch) * m + i];
        }
    for (int b = 0; b < n; ++b)
        for (int c = 0; c < num_classes; ++c) {
            int64_t cnt = (*counts)[static_cast<size_t>(b) * num_classes + c];
            if (cnt > 0)
                for (int ch = 0; ch < f; ++ch) out->val.at(b * num_classes + c, ch) /= static_cast<float>(cnt);
        }
    if (present) {
        present->assign(static_cast<size_t>(n) * num_classes, 0);
        for (size_t i = 0; i < counts->size(); ++i) (*present)[i] = (*counts)[i] > 0 ? 1 : 0;
    }
    out->need_grad = features->need_grad;
    if (out->need_grad) {
        auto labs = std::make_shared<IntGrid>(labels);
        out->back = [out, features, labs, counts, n, f, m, num_classes] {
            Tensor& gx = features->g();
            for (int b = 0; b < n; ++b)
                for (int64_t i = 0; i < m; ++i) {
                    int lab = labs->v[static_cast<size_t>(b) * m + i];
                    float invc = 1.0f / static_cast<float>((*counts)[static_cast<size_t>(b) * num_classes + lab]);
                    for (int ch = 0; ch < f; ++ch)
                        gx[(static_cast<int64_t>(b) * f + ch) * m + i] +=
                            out->grad.at(b * num_classes + lab, ch) * invc;
                }
        };
    }
    return out;
}

// Replace absent-region rows with learned defaults. rows:(N*C,F),
// defaults:(C,F); row n*C+c takes defaults row c when present[n*C+c]==0.
inline Node* rows_or_default(Graph& g, Node* rows, Node* defaults,
                             const std::vector<uint8_t>& present, int num_classes) {
    int total = rows->val.dim(0), f = rows->val.dim(1);
    if (defaults->val.dim(0) != num_classes || defaults->val.dim(1) != f)
        throw InvalidInput("rows_or_default: defaults shape mismatch");
    Node* out = g.alloc();
    out->val = Tensor({total, f});
    for (int r = 0; r < total; ++r) {
        const float* src = present[static_cast<size_t>(r)]
                               ? rows->val.data() + static_cast<int64_t>(r) * f
                               : defaults->val.data() + static_cast<int64_t>(r % num_classes) * f;
        std::copy_n(src, f, out->val.data() + static_cast<int64_t>(r) * f);
    }
    out->need_grad = rows->need_grad || defaults->need_grad;
    if (out->need_grad) {
        auto pres = std::make_shared<std::vector<uint8_t>>(present);
        out->back = [out, rows, defaults, pres, total, f, num_classes] {
            for (int r = 0; r < total; ++r) {
                const float* go = out->grad.data() + static_cast<int64_t>(r) * f;
                if ((*pres)[static_cast<size_t>(r)]) {
                    if (rows->need_grad) {
                        float* gr = rows->g().data() + static_cast<int64_t>(r) * f;
                        for (int j = 0; j < f; ++j) gr[j] += go[j];
                    }
                } else if (defaults->need_grad) {
                    float* gd = defaults->g().data() + static_cast<int64_t>(r % num_classes) * f;
                    for (int j = 0; j < f; ++j) gd[j] += go[j];
                }
            }
        };
    }
    return out;
}

// Stack rank-2 nodes along dim 0.
inline Node* concat_rows(Graph& g, const std::vector<Node*>& xs) {
    if (xs.empty()) throw InvalidInput("concat_rows: empty input list");
    int c = xs[0]->val.dim(1);
    int rtot = 0;
    for (Node* x : xs) {
        if (x->val.rank() != 2 || x->val.dim(1) != c) throw InvalidInput("concat_rows: shape mismatch");
        rtot += x->val.dim(0);
    }
    Node* out = g.alloc();
    out->val = Tensor({rtot, c});
    int64_t off = 0;
    for (Node* x : xs) {
        std::copy(x->val.v.begin(), x->val.v.end(), out->val.v.begin() + off);
        off += x->val.numel();
    }
    for (Node* x : xs) out->need_grad = out->need_grad || x->need_grad;
    if (out->need_grad)
        out->back = [out, xs] {
            int64_t pos = 0;
            for (Node* x : xs) {
                if (x->need_grad) {
                    Tensor& gx = x->g();
                    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += out->grad[pos + i];
                }
                pos += x->val.numel();
            }
        };
    return out;
}

// Gather rows of a (R,C) matrix by fixed indices.
inline Node* select_rows(Graph& g, Node* x, const std::vector<int>& idx) {
    if (x->val.rank() != 2) throw InvalidInput("select_rows: rank-2 input expected");
    int r = x->val.dim(0), c = x->val.dim(1);
    Node* out = g.alloc();
    out->val = Tensor({static_cast<int>(idx.size()), c});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= r) throw InvalidInput("select_rows: index out of range");
        std::copy_n(x->val.data() + static_cast<int64_t>(idx[i]) * c, c,
                    out->val.data() + static_cast<int64_t>(i) * c);
    }
    out->need_grad = x->need_grad;
    if (out->need_grad) {
        auto ids = std::make_shared<std::vector<int>>(idx);
        out->back = [out, x, ids, c] {
            for (size_t i = 0; i < ids->size(); ++i) {
                float* gx = x->g().data() + static_cast<int64_t>((*ids)[i]) * c;
                const float* go = out->grad.data() + static_cast<int64_t>(i) * c;
                for (int j = 0; j < c; ++j) gx[j] += go[j];
            }
        };
    }
    return out;
}

// Per-pixel gather of per-region rows: rows:(N*C,K), labels:(N,h,w) ->
// (N,K,h,w) where the vector at pixel (i,j) is rows[n*C + label(i,j)].
// This is how per-region style data becomes a spatial map.
inline Node* gather_region_rows(Graph& g, Node* rows, const IntGrid& labels, int num_classes,
                                int h, int w) {
    int f = rows->val.dim(1);
    int n = rows->val.dim(0) / num_classes;
    if (labels.numel() != static_cast<int64_t>(n) * h * w)
        throw InvalidInput("gather_region_rows: label grid mismatch");
    const int64_t m = static_cast<int64_t>(h) * w;
    Node* out = g.alloc();
    out->val = Tensor({n, f, h, w});
    for (int b = 0; b < n; ++b)
        for (int64_t i = 0; i < m; ++i) {
            int lab = labels.v[static_cast<size_t>(b) * m + i];
            if (lab < 0 || lab >= num_classes) throw InvalidInput("gather_region_rows: label out of range");
            for (int ch = 0; ch < f; ++ch)
                out->val[(static_cast<int64_t>(b) * f + ch) * m + i] =
                    rows->val.at(b * num_classes + lab, ch);
        }
    out->need_grad = rows->need_grad;
    if (out->need_grad) {
        auto labs = std::make_shared<IntGrid>(labels);
        out->back = [out, rows, labs, n, f, m, num_classes] {
            Tensor& gr = rows->g();
            for (int b = 0; b < n; ++b)
                for (int64_t i = 0; i < m; ++i) {
                    int lab = labs->v[static_cast<size_t>(b) * m + i];
                    for (int ch = 0; ch < f; ++ch)
                        gr.at(b * num_classes + lab, ch) +=
                            out->grad[(static_cast<int64_t>(b) * f + ch) * m + i];
                }
        };
    }
    return out;
}

}  // namespace segface
