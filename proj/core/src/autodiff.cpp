#include "mixforge/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mixforge {

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

int thread_id() {
#ifdef _OPENMP
    return omp_get_thread_num();
#else
    return 0;
#endif
}

bool any_requires(const std::vector<Value>& parents) {
    for (const auto& p : parents) {
        if (p->requires_grad) return true;
    }
    return false;
}

Value new_node(Tensor val, std::vector<Value> parents) {
    auto n = std::make_shared<ValueNode>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    n->requires_grad = any_requires(n->parents);
    return n;
}

std::int64_t trailing_numel(const std::vector<int>& shape, int from_dim) {
    std::int64_t n = 1;
    for (std::size_t i = static_cast<std::size_t>(from_dim); i < shape.size(); ++i) n *= shape[i];
    return n;
}

}  // namespace

Value make_value(Tensor t, bool requires_grad) {
    auto n = std::make_shared<ValueNode>();
    n->val = std::move(t);
    n->requires_grad = requires_grad;
    return n;
}

Value make_leaf(Tensor t) { return make_value(std::move(t), true); }

Value detach(const Value& a) { return make_value(a->val, false); }

void backward(const Value& root) {
    if (root->val.numel() != 1) throw InternalError("backward: root must be a scalar");
    if (!root->requires_grad) return;

    // Reverse post-order DFS over parent edges gives a child-before-parent
    // topological order, so each node's gradient is complete before it runs
    // its own backward closure.
    struct Frame {
        ValueNode* node;
        std::size_t next;
    };
    std::vector<ValueNode*> order;
    std::unordered_set<ValueNode*> visited;
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            ValueNode* p = f.node->parents[f.next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad.fill(0);
    root->grad[0] = 1;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        ValueNode* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

Value add(const Value& a, const Value& b) {
    check_same_shape(a->val, b->val, "add");
    Tensor out = a->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b->val[i];
    Value n = new_node(std::move(out), {a, b});
    if (n->requires_grad) {
        n->backward_fn = [a, b](ValueNode& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::int64_t i = 0; i < self.grad.numel(); ++i) b->grad[i] += self.grad[i];
            }
        };
    }
    return n;
}

Value sub(const Value& a, const Value& b) {
    check_same_shape(a->val, b->val, "sub");
    Tensor out = a->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b->val[i];
    Value n = new_node(std::move(out), {a, b});
    if (n->requires_grad) {
        n->backward_fn = [a, b](ValueNode& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::int64_t i = 0; i < self.grad.numel(); ++i) b->grad[i] -= self.grad[i];
            }
        };
    }
    return n;
}

Value mul(const Value& a, const Value& b) {
    check_same_shape(a->val, b->val, "mul");
    Tensor out = a->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b->val[i];
    Value n = new_node(std::move(out), {a, b});
    if (n->requires_grad) {
        n->backward_fn = [a, b](ValueNode& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::int64_t i = 0; i < self.grad.numel(); ++i)
                    a->grad[i] += self.grad[i] * b->val[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::int64_t i = 0; i < self.grad.numel(); ++i)
                    b->grad[i] += self.grad[i] * a->val[i];
            }
        };
    }
    return n;
}

Value scale(const Value& a, Scalar c) {
    Tensor out = a->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    Value n = new_node(std::move(out), {a});
    if (n->requires_grad) {
        n->backward_fn = [a, c](ValueNode& self) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += c * self.grad[i];
        };
    }
    return n;
}

Value mul_scalar_value(const Value& x, const Value& s) {
    if (s->val.numel() != 1) throw InternalError("mul_scalar_value: s must be rank-0");
    const Scalar sv = s->val[0];
    Tensor out = x->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= sv;
    Value n = new_node(std::move(out), {x, s});
    if (n->requires_grad) {
        n->backward_fn = [x, s, sv](ValueNode& self) {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::int64_t i = 0; i < self.grad.numel(); ++i)
                    x->grad[i] += sv * self.grad[i];
            }
            if (s->requires_grad) {
                s->ensure_grad();
                Scalar acc = 0;
                for (std::int64_t i = 0; i < self.grad.numel(); ++i)
                    acc += self.grad[i] * x->val[i];
                s->grad[0] += acc;
            }
        };
    }
    return n;
}

Value vexp(const Value& a) {
    Tensor out = a->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
    Value n = new_node(std::move(out), {a});
    if (n->requires_grad) {
        n->backward_fn = [a](ValueNode& self) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i)
                a->grad[i] += self.grad[i] * self.val[i];
        };
    }
    return n;
}

Value vsigmoid(const Value& a) {
    Tensor out = a->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const Scalar x = out[i];
        // Branch on sign for numerical stability at large |x|.
        out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    Value n = new_node(std::move(out), {a});
    if (n->requires_grad) {
        n->backward_fn = [a](ValueNode& self) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
                const Scalar s = self.val[i];
                a->grad[i] += self.grad[i] * s * (1.0 - s);
            }
        };
    }
    return n;
}

Value add_scalar(const Value& a, Scalar c) {
    Tensor out = a->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += c;
    Value n = new_node(std::move(out), {a});
    if (n->requires_grad) {
        n->backward_fn = [a](ValueNode& self) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i];
        };
    }
    return n;
}

Value relu(const Value& a) {
    Tensor out = a->val;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0 ? out[i] : 0;
    Value n = new_node(std::move(out), {a});
    if (n->requires_grad) {
        n->backward_fn = [a](ValueNode& self) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i)
                if (a->val[i] > 0) a->grad[i] += self.grad[i];
        };
    }
    return n;
}

Value reshape(const Value& a, std::vector<int> shape) {
    Tensor out = a->val.reshaped(std::move(shape));
    Value n = new_node(std::move(out), {a});
    if (n->requires_grad) {
        n->backward_fn = [a](ValueNode& self) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i];
        };
    }
    return n;
}

Value slice_dim1(const Value& a, int start, int len) {
    const auto& shape = a->val.shape();
    if (shape.size() < 2) throw InternalError("slice_dim1 needs rank >= 2");
    const int d0 = shape[0], d1 = shape[1];
    if (start < 0 || len <= 0 || start + len > d1) throw InternalError("slice_dim1 out of range");
    const std::int64_t rest = trailing_numel(shape, 2);
    std::vector<int> out_shape = shape;
    out_shape[1] = len;
    Tensor out(out_shape);
    for (int i = 0; i < d0; ++i)
        for (int j = 0; j < len; ++j)
            std::memcpy(out.data() + (static_cast<std::int64_t>(i) * len + j) * rest,
                        a->val.data() + (static_cast<std::int64_t>(i) * d1 + start + j) * rest,
                        static_cast<std::size_t>(rest) * sizeof(Scalar));
    Value n = new_node(std::move(out), {a});
    if (n->requires_grad) {
        n->backward_fn = [a, d0, d1, start, len, rest](ValueNode& self) {
            a->ensure_grad();
            for (int i = 0; i < d0; ++i)
                for (int j = 0; j < len; ++j) {
                    Scalar* dst = a->grad.data() + (static_cast<std::int64_t>(i) * d1 + start + j) * rest;
                    const Scalar* src =
                        self.grad.data() + (static_cast<std::int64_t>(i) * len + j) * rest;
                    for (std::int64_t r = 0; r < rest; ++r) dst[r] += src[r];
                }
        };
    }
    return n;
}

Value concat_dim1(const std::vector<Value>& xs) {
    if (xs.empty()) throw InternalError("concat_dim1: empty input");
    const auto& s0 = xs[0]->val.shape();
    if (s0.size() < 2) throw InternalError("concat_dim1 needs rank >= 2");
    const int d0 = s0[0];
    const std::int64_t rest = trailing_numel(s0, 2);
    int d1_total = 0;
    for (const auto& x : xs) {
        const auto& s = x->val.shape();
        if (s.size() != s0.size() || s[0] != d0 || trailing_numel(s, 2) != rest)
            throw InputError("concat_dim1: incompatible shapes");
        for (std::size_t k = 2; k < s.size(); ++k)
            if (s[k] != s0[k]) throw InputError("concat_dim1: incompatible shapes");
        d1_total += s[1];
    }
    std::vector<int> out_shape = s0;
    out_shape[1] = d1_total;
    Tensor out(out_shape);
    int offset = 0;
    for (const auto& x : xs) {
        const int c = x->val.shape()[1];
        for (int i = 0; i < d0; ++i)
            std::memcpy(out.data() + (static_cast<std::int64_t>(i) * d1_total + offset) * rest,
                        x->val.data() + static_cast<std::int64_t>(i) * c * rest,
                        static_cast<std::size_t>(c) * rest * sizeof(Scalar));
        offset += c;
    }
    Value n = new_node(std::move(out), std::vector<Value>(xs.begin(), xs.end()));
    if (n->requires_grad) {
        n->backward_fn = [xs, d0, d1_total, rest](ValueNode& self) {
            int off = 0;
            for (const auto& x : xs) {
                const int c = x->val.shape()[1];
                if (x->requires_grad) {
                    x->ensure_grad();
                    for (int i = 0; i < d0; ++i) {
                        Scalar* dst = x->grad.data() + static_cast<std::int64_t>(i) * c * rest;
                        const Scalar* src =
                            self.grad.data() + (static_cast<std::int64_t>(i) * d1_total + off) * rest;
                        for (std::int64_t r = 0; r < static_cast<std::int64_t>(c) * rest; ++r)
                            dst[r] += src[r];
                    }
                }
                off += c;
            }
        };
    }
    return n;
}

Value mean_all(const Value& x) {
    const std::int64_t m = x->val.numel();
    if (m == 0) throw InternalError("mean_all of empty tensor");
    Tensor out = Tensor::scalar(x->val.sum() / static_cast<Scalar>(m));
    Value n = new_node(std::move(out), {x});
    if (n->requires_grad) {
        n->backward_fn = [x, m](ValueNode& self) {
            x->ensure_grad();
            const Scalar g = self.grad[0] / static_cast<Scalar>(m);
            for (std::int64_t i = 0; i < m; ++i) x->grad[i] += g;
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Value linear(const Value& x, const Value& w, const Value& b) {
    const auto& xs = x->val.shape();
    const auto& ws = w->val.shape();
    if (xs.size() != 2 || ws.size() != 2 || b->val.rank() != 1)
        throw InternalError("linear: bad ranks");
    const int B = xs[0], D = xs[1], O = ws[0];
    if (ws[1] != D || b->val.dim(0) != O) throw InputError("linear: dimension mismatch");

    Tensor out({B, O});
    {
        CMapMat X(x->val.data(), B, D);
        CMapMat W(w->val.data(), O, D);
        MapMat Y(out.data(), B, O);
        Y.noalias() = X * W.transpose();
        for (int i = 0; i < B; ++i)
            for (int o = 0; o < O; ++o) out.at2(i, o) += b->val[o];
    }
    Value n = new_node(std::move(out), {x, w, b});
    if (n->requires_grad) {
        n->backward_fn = [x, w, b, B, D, O](ValueNode& self) {
            CMapMat G(self.grad.data(), B, O);
            if (x->requires_grad) {
                x->ensure_grad();
                MapMat DX(x->grad.data(), B, D);
                CMapMat W(w->val.data(), O, D);
                DX.noalias() += G * W;
            }
            if (w->requires_grad) {
                w->ensure_grad();
                MapMat DW(w->grad.data(), O, D);
                CMapMat X(x->val.data(), B, D);
                DW.noalias() += G.transpose() * X;
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int i = 0; i < B; ++i)
                    for (int o = 0; o < O; ++o) b->grad[o] += self.grad.at2(i, o);
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    int B, C, H, W;
    int O, kh, kw;
    int stride, pad;
    int OH, OW;
};

// x: one sample (C,H,W) -> col (C*kh*kw, OH*OW)
void im2col(const Scalar* x, const ConvDims& d, Scalar* col) {
    const int HW = d.H * d.W;
    const int OHW = d.OH * d.OW;
    for (int c = 0; c < d.C; ++c) {
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                Scalar* row = col + (static_cast<std::int64_t>(c) * d.kh * d.kw + ki * d.kw + kj) * OHW;
                for (int oh = 0; oh < d.OH; ++oh) {
                    const int ih = oh * d.stride + ki - d.pad;
                    if (ih < 0 || ih >= d.H) {
                        std::fill(row + oh * d.OW, row + (oh + 1) * d.OW, Scalar(0));
                        continue;
                    }
                    const Scalar* src = x + c * HW + ih * d.W;
                    for (int ow = 0; ow < d.OW; ++ow) {
                        const int iw = ow * d.stride + kj - d.pad;
                        row[oh * d.OW + ow] = (iw >= 0 && iw < d.W) ? src[iw] : Scalar(0);
                    }
                }
            }
        }
    }
}

// dcol (C*kh*kw, OH*OW) scattered back into one sample's dx (C,H,W)
void col2im_add(const Scalar* dcol, const ConvDims& d, Scalar* dx) {
    const int HW = d.H * d.W;
    const int OHW = d.OH * d.OW;
    for (int c = 0; c < d.C; ++c) {
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const Scalar* row =
                    dcol + (static_cast<std::int64_t>(c) * d.kh * d.kw + ki * d.kw + kj) * OHW;
                for (int oh = 0; oh < d.OH; ++oh) {
                    const int ih = oh * d.stride + ki - d.pad;
                    if (ih < 0 || ih >= d.H) continue;
                    Scalar* dst = dx + c * HW + ih * d.W;
                    for (int ow = 0; ow < d.OW; ++ow) {
                        const int iw = ow * d.stride + kj - d.pad;
                        if (iw >= 0 && iw < d.W) dst[iw] += row[oh * d.OW + ow];
                    }
                }
            }
        }
    }
}

}  // namespace

Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad) {
    const auto& xs = x->val.shape();
    const auto& ws = w->val.shape();
    if (xs.size() != 4 || ws.size() != 4 || b->val.rank() != 1)
        throw InternalError("conv2d: bad ranks");
    ConvDims d;
    d.B = xs[0];
    d.C = xs[1];
    d.H = xs[2];
    d.W = xs[3];
    d.O = ws[0];
    d.kh = ws[2];
    d.kw = ws[3];
    d.stride = stride;
    d.pad = pad;
    if (ws[1] != d.C) throw InputError("conv2d: channel mismatch");
    if (b->val.dim(0) != d.O) throw InputError("conv2d: bias size mismatch");
    if (stride < 1 || pad < 0) throw InputError("conv2d: bad stride/pad");
    d.OH = (d.H + 2 * pad - d.kh) / stride + 1;
    d.OW = (d.W + 2 * pad - d.kw) / stride + 1;
    if (d.OH < 1 || d.OW < 1) throw InputError("conv2d: kernel larger than padded input");

    const int CKK = d.C * d.kh * d.kw;
    const int OHW = d.OH * d.OW;
    Tensor out({d.B, d.O, d.OH, d.OW});
    {
        CMapMat Wm(w->val.data(), d.O, CKK);
#pragma omp parallel for schedule(static)
        for (int bi = 0; bi < d.B; ++bi) {
            std::vector<Scalar> col(static_cast<std::size_t>(CKK) * OHW);
            im2col(x->val.data() + static_cast<std::int64_t>(bi) * d.C * d.H * d.W, d, col.data());
            CMapMat Col(col.data(), CKK, OHW);
            MapMat Y(out.data() + static_cast<std::int64_t>(bi) * d.O * OHW, d.O, OHW);
            Y.noalias() = Wm * Col;
            for (int o = 0; o < d.O; ++o) Y.row(o).array() += b->val[o];
        }
    }

    Value n = new_node(std::move(out), {x, w, b});
    if (n->requires_grad) {
        n->backward_fn = [x, w, b, d, CKK, OHW](ValueNode& self) {
            const bool need_dx = x->requires_grad;
            const bool need_dw = w->requires_grad;
            const bool need_db = b->requires_grad;
            if (need_dx) x->ensure_grad();
            if (need_dw) w->ensure_grad();
            if (need_db) b->ensure_grad();

            const int nt = max_threads();
            std::vector<std::vector<Scalar>> dw_local, db_local;
            if (need_dw)
                dw_local.assign(static_cast<std::size_t>(nt),
                                std::vector<Scalar>(static_cast<std::size_t>(d.O) * CKK, 0));
            if (need_db)
                db_local.assign(static_cast<std::size_t>(nt),
                                std::vector<Scalar>(static_cast<std::size_t>(d.O), 0));

            CMapMat Wm(w->val.data(), d.O, CKK);
#pragma omp parallel for schedule(static)
            for (int bi = 0; bi < d.B; ++bi) {
                const int t = thread_id();
                CMapMat G(self.grad.data() + static_cast<std::int64_t>(bi) * d.O * OHW, d.O, OHW);
                if (need_dw || need_db) {
                    if (need_dw) {
                        std::vector<Scalar> col(static_cast<std::size_t>(CKK) * OHW);
                        im2col(x->val.data() + static_cast<std::int64_t>(bi) * d.C * d.H * d.W, d,
                               col.data());
                        CMapMat Col(col.data(), CKK, OHW);
                        MapMat DW(dw_local[static_cast<std::size_t>(t)].data(), d.O, CKK);
                        DW.noalias() += G * Col.transpose();
                    }
                    if (need_db) {
                        Scalar* db = db_local[static_cast<std::size_t>(t)].data();
                        for (int o = 0; o < d.O; ++o) db[o] += G.row(o).sum();
                    }
                }
                if (need_dx) {
                    std::vector<Scalar> dcol(static_cast<std::size_t>(CKK) * OHW);
                    MapMat DCol(dcol.data(), CKK, OHW);
                    DCol.noalias() = Wm.transpose() * G;
                    col2im_add(dcol.data(), d,
                               x->grad.data() + static_cast<std::int64_t>(bi) * d.C * d.H * d.W);
                }
            }
            // Fixed-order reduction keeps results reproducible for a given
            // thread count.
            if (need_dw)
                for (int t = 0; t < nt; ++t)
                    for (std::int64_t i = 0; i < w->grad.numel(); ++i)
                        w->grad[i] += dw_local[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
            if (need_db)
                for (int t = 0; t < nt; ++t)
                    for (int o = 0; o < d.O; ++o)
                        b->grad[o] += db_local[static_cast<std::size_t>(t)][static_cast<std::size_t>(o)];
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

Value maxpool2(const Value& x) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw InternalError("maxpool2 needs NCHW");
    const int B = s[0], C = s[1], H = s[2], W = s[3];
    const int OH = H / 2, OW = W / 2;
    if (OH < 1 || OW < 1) throw InputError("maxpool2: input too small");
    Tensor out({B, C, OH, OW});
    const bool track = any_requires({x});
    auto argmax = std::make_shared<std::vector<std::int64_t>>();
    if (track) argmax->resize(static_cast<std::size_t>(out.numel()));

#pragma omp parallel for schedule(static)
    for (int bc = 0; bc < B * C; ++bc) {
        const Scalar* src = x->val.data() + static_cast<std::int64_t>(bc) * H * W;
        Scalar* dst = out.data() + static_cast<std::int64_t>(bc) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow) {
                std::int64_t best_idx = static_cast<std::int64_t>(2 * oh) * W + 2 * ow;
                Scalar best = src[best_idx];
                for (int di = 0; di < 2; ++di)
                    for (int dj = 0; dj < 2; ++dj) {
                        const std::int64_t idx =
                            static_cast<std::int64_t>(2 * oh + di) * W + 2 * ow + dj;
                        if (src[idx] > best) {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                dst[oh * OW + ow] = best;
                if (track)
                    (*argmax)[static_cast<std::size_t>(
                        static_cast<std::int64_t>(bc) * OH * OW + oh * OW + ow)] =
                        static_cast<std::int64_t>(bc) * H * W + best_idx;
            }
        }
    }

    Value n = new_node(std::move(out), {x});
    if (n->requires_grad) {
        n->backward_fn = [x, argmax](ValueNode& self) {
            x->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i)
                x->grad[(*argmax)[static_cast<std::size_t>(i)]] += self.grad[i];
        };
    }
    return n;
}

Value global_avg_pool(const Value& x) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw InternalError("global_avg_pool needs NCHW");
    const int B = s[0], C = s[1], H = s[2], W = s[3];
    const int HW = H * W;
    Tensor out({B, C});
    for (int bc = 0; bc < B * C; ++bc) {
        const Scalar* src = x->val.data() + static_cast<std::int64_t>(bc) * HW;
        Scalar acc = 0;
        for (int i = 0; i < HW; ++i) acc += src[i];
        out[bc] = acc / HW;
    }
    Value n = new_node(std::move(out), {x});
    if (n->requires_grad) {
        n->backward_fn = [x, B, C, HW](ValueNode& self) {
            x->ensure_grad();
            for (int bc = 0; bc < B * C; ++bc) {
                const Scalar g = self.grad[bc] / HW;
                Scalar* dst = x->grad.data() + static_cast<std::int64_t>(bc) * HW;
                for (int i = 0; i < HW; ++i) dst[i] += g;
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// Softmax over channels
// ---------------------------------------------------------------------------

Value softmax_channels(const Value& x) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw InternalError("softmax_channels needs (B,K,H,W)");
    const int B = s[0], K = s[1], H = s[2], W = s[3];
    const std::int64_t HW = static_cast<std::int64_t>(H) * W;
    Tensor out(s);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        const Scalar* xb = x->val.data() + static_cast<std::int64_t>(b) * K * HW;
        Scalar* yb = out.data() + static_cast<std::int64_t>(b) * K * HW;
        for (std::int64_t p = 0; p < HW; ++p) {
            Scalar mx = xb[p];
            for (int k = 1; k < K; ++k) mx = std::max(mx, xb[k * HW + p]);
            Scalar denom = 0;
            for (int k = 0; k < K; ++k) {
                const Scalar e = std::exp(xb[k * HW + p] - mx);
                yb[k * HW + p] = e;
                denom += e;
            }
            for (int k = 0; k < K; ++k) yb[k * HW + p] /= denom;
        }
    }
    Value n = new_node(std::move(out), {x});
    if (n->requires_grad) {
        n->backward_fn = [x, B, K, HW](ValueNode& self) {
            x->ensure_grad();
#pragma omp parallel for schedule(static)
            for (int b = 0; b < B; ++b) {
                const Scalar* y = self.val.data() + static_cast<std::int64_t>(b) * K * HW;
                const Scalar* g = self.grad.data() + static_cast<std::int64_t>(b) * K * HW;
                Scalar* dx = x->grad.data() + static_cast<std::int64_t>(b) * K * HW;
                for (std::int64_t p = 0; p < HW; ++p) {
                    Scalar dot = 0;
                    for (int k = 0; k < K; ++k) dot += g[k * HW + p] * y[k * HW + p];
                    for (int k = 0; k < K; ++k)
                        dx[k * HW + p] += y[k * HW + p] * (g[k * HW + p] - dot);
                }
            }
        };
    }
    return n;
}

Value mul_channels(const Value& x, const Value& m) {
    const auto& xs = x->val.shape();
    const auto& ms = m->val.shape();
    if (xs.size() != 4 || ms.size() != 4) throw InternalError("mul_channels needs NCHW");
    if (ms[1] != 1 || ms[0] != xs[0] || ms[2] != xs[2] || ms[3] != xs[3])
        throw InputError("mul_channels: map must be (B,1,H,W) matching x");
    const int B = xs[0], C = xs[1];
    const std::int64_t HW = static_cast<std::int64_t>(xs[2]) * xs[3];
    Tensor out(xs);
    for (int b = 0; b < B; ++b) {
        const Scalar* mp = m->val.data() + static_cast<std::int64_t>(b) * HW;
        for (int c = 0; c < C; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * HW;
            const Scalar* xp = x->val.data() + base;
            Scalar* op = out.data() + base;
            for (std::int64_t i = 0; i < HW; ++i) op[i] = xp[i] * mp[i];
        }
    }
    Value n = new_node(std::move(out), {x, m});
    if (n->requires_grad) {
        n->backward_fn = [x, m, B, C, HW](ValueNode& self) {
            if (x->requires_grad) {
                x->ensure_grad();
                for (int b = 0; b < B; ++b) {
                    const Scalar* mp = m->val.data() + static_cast<std::int64_t>(b) * HW;
                    for (int c = 0; c < C; ++c) {
                        const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * HW;
                        const Scalar* g = self.grad.data() + base;
                        Scalar* dx = x->grad.data() + base;
                        for (std::int64_t i = 0; i < HW; ++i) dx[i] += g[i] * mp[i];
                    }
                }
            }
            if (m->requires_grad) {
                m->ensure_grad();
                for (int b = 0; b < B; ++b) {
                    Scalar* dm = m->grad.data() + static_cast<std::int64_t>(b) * HW;
                    for (int c = 0; c < C; ++c) {
                        const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * HW;
                        const Scalar* g = self.grad.data() + base;
                        const Scalar* xp = x->val.data() + base;
                        for (std::int64_t i = 0; i < HW; ++i) dm[i] += g[i] * xp[i];
                    }
                }
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

Value batch_norm2d(const Value& x, const Value& gamma, const Value& beta, Tensor* running_mean,
                   Tensor* running_var, bool training, double momentum, double eps) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw InternalError("batch_norm2d needs NCHW");
    const int B = s[0], C = s[1], H = s[2], W = s[3];
    if (gamma->val.numel() != C || beta->val.numel() != C) throw InputError("batch_norm2d: bad affine size");
    if (running_mean->numel() != C || running_var->numel() != C)
        throw InputError("batch_norm2d: bad running stats size");
    const std::int64_t HW = static_cast<std::int64_t>(H) * W;
    const std::int64_t m = static_cast<std::int64_t>(B) * HW;

    Tensor out(s);
    auto mean = std::make_shared<Tensor>(Tensor({C}));
    auto inv_std = std::make_shared<Tensor>(Tensor({C}));

    if (training) {
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c) {
            Scalar sum = 0, sq = 0;
            for (int b = 0; b < B; ++b) {
                const Scalar* src = x->val.data() + (static_cast<std::int64_t>(b) * C + c) * HW;
                for (std::int64_t i = 0; i < HW; ++i) {
                    sum += src[i];
                    sq += src[i] * src[i];
                }
            }
            const Scalar mu = sum / static_cast<Scalar>(m);
            Scalar var = sq / static_cast<Scalar>(m) - mu * mu;
            var = std::max(var, Scalar(0));
            (*mean)[c] = mu;
            (*inv_std)[c] = Scalar(1) / std::sqrt(var + eps);
            const Scalar unbiased = m > 1 ? var * static_cast<Scalar>(m) / static_cast<Scalar>(m - 1) : var;
            (*running_mean)[c] = (1 - momentum) * (*running_mean)[c] + momentum * mu;
            (*running_var)[c] = (1 - momentum) * (*running_var)[c] + momentum * unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            (*mean)[c] = (*running_mean)[c];
            (*inv_std)[c] = Scalar(1) / std::sqrt((*running_var)[c] + eps);
        }
    }

#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const Scalar mu = (*mean)[c], is = (*inv_std)[c];
        const Scalar g = gamma->val[c], bta = beta->val[c];
        for (int b = 0; b < B; ++b) {
            const Scalar* src = x->val.data() + (static_cast<std::int64_t>(b) * C + c) * HW;
            Scalar* dst = out.data() + (static_cast<std::int64_t>(b) * C + c) * HW;
            for (std::int64_t i = 0; i < HW; ++i) dst[i] = g * (src[i] - mu) * is + bta;
        }
    }

    Value n = new_node(std::move(out), {x, gamma, beta});
    if (n->requires_grad) {
        n->backward_fn = [x, gamma, beta, mean, inv_std, training, B, C, HW, m](ValueNode& self) {
            const bool need_dx = x->requires_grad;
            if (need_dx) x->ensure_grad();
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
#pragma omp parallel for schedule(static)
            for (int c = 0; c < C; ++c) {
                const Scalar mu = (*mean)[c], is = (*inv_std)[c], gam = gamma->val[c];
                Scalar sum_g = 0, sum_gx = 0;
                for (int b = 0; b < B; ++b) {
                    const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * HW;
                    const Scalar* g = self.grad.data() + base;
                    const Scalar* xv = x->val.data() + base;
                    for (std::int64_t i = 0; i < HW; ++i) {
                        sum_g += g[i];
                        sum_gx += g[i] * (xv[i] - mu) * is;
                    }
                }
                if (gamma->requires_grad) gamma->grad[c] += sum_gx;
                if (beta->requires_grad) beta->grad[c] += sum_g;
                if (!need_dx) continue;
                if (training) {
                    const Scalar mg = sum_g / static_cast<Scalar>(m);
                    const Scalar mgx = sum_gx / static_cast<Scalar>(m);
                    for (int b = 0; b < B; ++b) {
                        const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * HW;
                        const Scalar* g = self.grad.data() + base;
                        const Scalar* xv = x->val.data() + base;
                        Scalar* dx = x->grad.data() + base;
                        for (std::int64_t i = 0; i < HW; ++i) {
                            const Scalar xhat = (xv[i] - mu) * is;
                            dx[i] += gam * is * (g[i] - mg - xhat * mgx);
                        }
                    }
                } else {
                    const Scalar k = gam * is;
                    for (int b = 0; b < B; ++b) {
                        const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * HW;
                        const Scalar* g = self.grad.data() + base;
                        Scalar* dx = x->grad.data() + base;
                        for (std::int64_t i = 0; i < HW; ++i) dx[i] += k * g[i];
                    }
                }
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// Affine grid sampling
// ---------------------------------------------------------------------------

namespace {

// Mirror p into [0, n-1] (corner-aligned reflection); `slope` reports the
// derivative of the mapped coordinate w.r.t. p (+1/-1, 0 for degenerate n).
Scalar reflect_coord(Scalar p, int n, Scalar& slope) {
    if (n <= 1) {
        slope = 0;
        return 0;
    }
    const Scalar span = 2 * static_cast<Scalar>(n - 1);
    Scalar q = std::fmod(p, span);
    slope = 1;
    if (q < 0) q += span;
    if (q > static_cast<Scalar>(n - 1)) {
        q = span - q;
        slope = -1;
    }
    return std::clamp(q, Scalar(0), static_cast<Scalar>(n - 1));
}

}  // namespace

Value grid_sample_affine(const Value& x, const Value& theta, WarpPadding padding) {
    const auto& xs = x->val.shape();
    const auto& ts = theta->val.shape();
    if (xs.size() != 4) throw InternalError("grid_sample_affine: x must be NCHW");
    if (ts.size() != 3 || ts[1] != 2 || ts[2] != 3)
        throw InternalError("grid_sample_affine: theta must be (B,2,3)");
    if (ts[0] != xs[0]) throw InputError("grid_sample_affine: batch mismatch");
    if (!theta->val.all_finite()) throw NumericError("grid_sample_affine: non-finite theta");
    const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const std::int64_t HW = static_cast<std::int64_t>(H) * W;

    Tensor out(xs);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        const Scalar* th = theta->val.data() + static_cast<std::int64_t>(b) * 6;
        const Scalar* xb = x->val.data() + static_cast<std::int64_t>(b) * C * HW;
        Scalar* yb = out.data() + static_cast<std::int64_t>(b) * C * HW;
        for (int i = 0; i < H; ++i) {
            const Scalar yn = H > 1 ? 2 * static_cast<Scalar>(i) / (H - 1) - 1 : 0;
            for (int j = 0; j < W; ++j) {
                const Scalar xn = W > 1 ? 2 * static_cast<Scalar>(j) / (W - 1) - 1 : 0;
                const Scalar sx = th[0] * xn + th[1] * yn + th[2];
                const Scalar sy = th[3] * xn + th[4] * yn + th[5];
                Scalar px = (sx + 1) / 2 * (W - 1);
                Scalar py = (sy + 1) / 2 * (H - 1);
                if (padding == WarpPadding::kReflect) {
                    Scalar sl;
                    px = reflect_coord(px, W, sl);
                    py = reflect_coord(py, H, sl);
                }
                const int x0 = static_cast<int>(std::floor(px));
                const int y0 = static_cast<int>(std::floor(py));
                const Scalar fx = px - x0, fy = py - y0;
                for (int c = 0; c < C; ++c) {
                    const Scalar* plane = xb + static_cast<std::int64_t>(c) * HW;
                    auto tap = [&](int yy, int xx) -> Scalar {
                        return (yy >= 0 && yy < H && xx >= 0 && xx < W)
                                   ? plane[static_cast<std::int64_t>(yy) * W + xx]
                                   : Scalar(0);
                    };
                    const Scalar v00 = tap(y0, x0), v01 = tap(y0, x0 + 1);
                    const Scalar v10 = tap(y0 + 1, x0), v11 = tap(y0 + 1, x0 + 1);
                    yb[static_cast<std::int64_t>(c) * HW + i * W + j] =
                        (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
                }
            }
        }
    }

    Value n = new_node(std::move(out), {x, theta});
    if (n->requires_grad) {
        n->backward_fn = [x, theta, padding, B, C, H, W, HW](ValueNode& self) {
            const bool need_dx = x->requires_grad;
            const bool need_dt = theta->requires_grad;
            if (need_dx) x->ensure_grad();
            if (need_dt) theta->ensure_grad();
#pragma omp parallel for schedule(static)
            for (int b = 0; b < B; ++b) {
                const Scalar* th = theta->val.data() + static_cast<std::int64_t>(b) * 6;
                const Scalar* xb = x->val.data() + static_cast<std::int64_t>(b) * C * HW;
                const Scalar* gb = self.grad.data() + static_cast<std::int64_t>(b) * C * HW;
                Scalar* dxb = need_dx ? x->grad.data() + static_cast<std::int64_t>(b) * C * HW : nullptr;
                Scalar dth[6] = {0, 0, 0, 0, 0, 0};
                for (int i = 0; i < H; ++i) {
                    const Scalar yn = H > 1 ? 2 * static_cast<Scalar>(i) / (H - 1) - 1 : 0;
                    for (int j = 0; j < W; ++j) {
                        const Scalar xn = W > 1 ? 2 * static_cast<Scalar>(j) / (W - 1) - 1 : 0;
                        const Scalar sx = th[0] * xn + th[1] * yn + th[2];
                        const Scalar sy = th[3] * xn + th[4] * yn + th[5];
                        Scalar px = (sx + 1) / 2 * (W - 1);
                        Scalar py = (sy + 1) / 2 * (H - 1);
                        Scalar slx = 1, sly = 1;
                        if (padding == WarpPadding::kReflect) {
                            px = reflect_coord(px, W, slx);
                            py = reflect_coord(py, H, sly);
                        }
                        const int x0 = static_cast<int>(std::floor(px));
                        const int y0 = static_cast<int>(std::floor(py));
                        const Scalar fx = px - x0, fy = py - y0;
                        Scalar dpx = 0, dpy = 0;
                        for (int c = 0; c < C; ++c) {
                            const Scalar g = gb[static_cast<std::int64_t>(c) * HW + i * W + j];
                            if (g == 0) continue;
                            const Scalar* plane = xb + static_cast<std::int64_t>(c) * HW;
                            auto in_bounds = [&](int yy, int xx) {
                                return yy >= 0 && yy < H && xx >= 0 && xx < W;
                            };
                            auto tap = [&](int yy, int xx) -> Scalar {
                                return in_bounds(yy, xx)
                                           ? plane[static_cast<std::int64_t>(yy) * W + xx]
                                           : Scalar(0);
                            };
                            const Scalar v00 = tap(y0, x0), v01 = tap(y0, x0 + 1);
                            const Scalar v10 = tap(y0 + 1, x0), v11 = tap(y0 + 1, x0 + 1);
                            if (need_dt) {
                                dpx += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                                dpy += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                            }
                            if (need_dx) {
                                Scalar* dplane = dxb + static_cast<std::int64_t>(c) * HW;
                                auto scatter = [&](int yy, int xx, Scalar wgt) {
                                    if (in_bounds(yy, xx))
                                        dplane[static_cast<std::int64_t>(yy) * W + xx] += g * wgt;
                                };
                                scatter(y0, x0, (1 - fy) * (1 - fx));
                                scatter(y0, x0 + 1, (1 - fy) * fx);
                                scatter(y0 + 1, x0, fy * (1 - fx));
                                scatter(y0 + 1, x0 + 1, fy * fx);
                            }
                        }
                        if (need_dt) {
                            const Scalar dsx = dpx * slx * (W - 1) / 2;
                            const Scalar dsy = dpy * sly * (H - 1) / 2;
                            dth[0] += dsx * xn;
                            dth[1] += dsx * yn;
                            dth[2] += dsx;
                            dth[3] += dsy * xn;
                            dth[4] += dsy * yn;
                            dth[5] += dsy;
                        }
                    }
                }
                if (need_dt) {
                    Scalar* dst = theta->grad.data() + static_cast<std::int64_t>(b) * 6;
                    for (int q = 0; q < 6; ++q) dst[q] += dth[q];
                }
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// Soft cross entropy
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw InternalError("softmax_rows needs (B,C)");
    const int B = logits.dim(0), C = logits.dim(1);
    Tensor p({B, C});
    for (int b = 0; b < B; ++b) {
        Scalar mx = logits.at2(b, 0);
        for (int c = 1; c < C; ++c) mx = std::max(mx, logits.at2(b, c));
        Scalar denom = 0;
        for (int c = 0; c < C; ++c) {
            const Scalar e = std::exp(logits.at2(b, c) - mx);
            p.at2(b, c) = e;
            denom += e;
        }
        for (int c = 0; c < C; ++c) p.at2(b, c) /= denom;
    }
    return p;
}

Value soft_cross_entropy_loss(const Value& logits, const Tensor& soft_labels) {
    const auto& ls = logits->val.shape();
    if (ls.size() != 2) throw InternalError("soft_cross_entropy_loss: logits must be (B,C)");
    check_same_shape(logits->val, soft_labels, "soft_cross_entropy_loss");
    const int B = ls[0], C = ls[1];
    for (int b = 0; b < B; ++b) {
        Scalar row = 0;
        for (int c = 0; c < C; ++c) {
            const Scalar y = soft_labels.at2(b, c);
            if (y < -1e-6) throw InputError("soft label has a negative entry");
            row += y;
        }
        if (std::abs(row - 1) > 1e-6) throw InputError("soft label off the simplex");
    }

    auto labels = std::make_shared<Tensor>(soft_labels);
    auto probs = std::make_shared<Tensor>(softmax_rows(logits->val));
    Scalar loss = 0;
    for (int b = 0; b < B; ++b) {
        Scalar mx = logits->val.at2(b, 0);
        for (int c = 1; c < C; ++c) mx = std::max(mx, logits->val.at2(b, c));
        Scalar denom = 0;
        for (int c = 0; c < C; ++c) denom += std::exp(logits->val.at2(b, c) - mx);
        const Scalar lse = mx + std::log(denom);
        Scalar row_sum = 0, dot = 0;
        for (int c = 0; c < C; ++c) {
            row_sum += labels->at2(b, c);
            dot += labels->at2(b, c) * logits->val.at2(b, c);
        }
        loss += lse * row_sum - dot;
    }
    loss /= B;

    Value n = new_node(Tensor::scalar(loss), {logits});
    if (n->requires_grad) {
        n->backward_fn = [logits, labels, probs, B, C](ValueNode& self) {
            logits->ensure_grad();
            const Scalar g = self.grad[0] / B;
            for (int b = 0; b < B; ++b) {
                Scalar row_sum = 0;
                for (int c = 0; c < C; ++c) row_sum += labels->at2(b, c);
                for (int c = 0; c < C; ++c)
                    logits->grad.at2(b, c) += g * (probs->at2(b, c) * row_sum - labels->at2(b, c));
            }
        };
    }
    return n;
}

}  // namespace mixforge
