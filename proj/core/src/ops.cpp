// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "voxcal/rng.hpp"

namespace voxcal::ops {

namespace {

// Tracks inputs on the active tape (registering requires_grad leaves lazily)
// and records the op when any input is tracked.
struct OpCtx {
    Tape* tape = Tape::active();
    std::vector<int64_t> nodes;
    bool tracked = false;

    void add(const Tensor& t) {
        int64_t id = -1;
        if (tape) {
            if (tape->tracks(t)) {
                id = t.meta()->node;
            } else if (t.requires_grad()) {
                id = tape->register_leaf(t);
            }
        }
        nodes.push_back(id);
        if (id >= 0) tracked = true;
    }

    void finish(Tensor& out, const char* op, Tape::BackwardFn fn) {
        if (tape && tracked) {
            const int64_t id = tape->record(op, nodes, out.numel(), std::move(fn));
            tape->bind(out, id);
            out.set_requires_grad(true);
        }
    }
};

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw InvalidArgument(std::string(op) + ": shapes must match, got " +
                              shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

int64_t ceil_div(int64_t a, int64_t b) { return a > 0 ? (a + b - 1) / b : a / b; }
int64_t floor_div(int64_t a, int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

struct Bcast {
    Shape out;
    std::vector<int64_t> sa, sb; // per-axis element strides; 0 on broadcast axes
};

std::vector<int64_t> aligned_strides(const Shape& s, const Shape& out) {
    const int64_t rank = int64_t(out.size());
    const int64_t off = rank - int64_t(s.size());
    std::vector<int64_t> strides(size_t(rank), 0);
    int64_t acc = 1;
    for (int64_t d = int64_t(s.size()) - 1; d >= 0; --d) {
        strides[size_t(d + off)] = (s[size_t(d)] == 1 && out[size_t(d + off)] != 1) ? 0 : acc;
        acc *= s[size_t(d)];
    }
    return strides;
}

Bcast make_bcast(const char* op, const Shape& a, const Shape& b) {
    Bcast bc;
    const size_t rank = std::max(a.size(), b.size());
    bc.out.resize(rank);
    for (size_t d = 0; d < rank; ++d) {
        const int64_t ea = d < rank - a.size() ? 1 : a[d - (rank - a.size())];
        const int64_t eb = d < rank - b.size() ? 1 : b[d - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1) {
            throw InvalidArgument(std::string(op) + ": shapes not broadcastable, got " +
                                  shape_str(a) + " vs " + shape_str(b));
        }
        bc.out[d] = std::max(ea, eb);
    }
    bc.sa = aligned_strides(a, bc.out);
    bc.sb = aligned_strides(b, bc.out);
    return bc;
}

// Walks the output index space once, calling f(out_flat, a_off, b_off).
template <class F>
void bcast_walk(const Bcast& bc, F f) {
    const int64_t rank = int64_t(bc.out.size());
    const int64_t n = shape_numel(bc.out);
    std::vector<int64_t> idx(size_t(rank), 0);
    int64_t ao = 0, bo = 0;
    for (int64_t i = 0; i < n; ++i) {
        f(i, ao, bo);
        for (int64_t d = rank - 1; d >= 0; --d) {
            ++idx[size_t(d)];
            ao += bc.sa[size_t(d)];
            bo += bc.sb[size_t(d)];
            if (idx[size_t(d)] < bc.out[size_t(d)]) break;
            idx[size_t(d)] = 0;
            ao -= bc.sa[size_t(d)] * bc.out[size_t(d)];
            bo -= bc.sb[size_t(d)] * bc.out[size_t(d)];
        }
    }
}

enum class BinKind { Add, Sub, Mul };

Tensor binary_elementwise(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
    const Bcast bc = make_bcast(name, a.shape(), b.shape());
    Tensor out(bc.out);
    {
        const float* pa = a.data().data();
        const float* pb = b.data().data();
        float* po = out.mutable_data().data();
        switch (kind) {
            case BinKind::Add:
                bcast_walk(bc, [&](int64_t i, int64_t ao, int64_t bo) { po[i] = pa[ao] + pb[bo]; });
                break;
            case BinKind::Sub:
                bcast_walk(bc, [&](int64_t i, int64_t ao, int64_t bo) { po[i] = pa[ao] - pb[bo]; });
                break;
            case BinKind::Mul:
                bcast_walk(bc, [&](int64_t i, int64_t ao, int64_t bo) { po[i] = pa[ao] * pb[bo]; });
                break;
        }
    }

    OpCtx ctx;
    ctx.add(a);
    ctx.add(b);
    if (!(ctx.tape && ctx.tracked)) return out;

    auto abuf = a.buffer();
    auto bbuf = b.buffer();
    const int64_t na = a.numel(), nb = b.numel();
    ctx.finish(out, name, [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        // Accumulate in double then fold into the shared f32 buffers so the
        // broadcast-axis sums stay accurate.
        std::vector<double> da, db;
        if (gin[0]) da.assign(size_t(na), 0.0);
        if (gin[1]) db.assign(size_t(nb), 0.0);
        const float* pa = abuf->data();
        const float* pb = bbuf->data();
        bcast_walk(bc, [&](int64_t i, int64_t ao, int64_t bo) {
            const double gv = g[size_t(i)];
            switch (kind) {
                case BinKind::Add:
                    if (gin[0]) da[size_t(ao)] += gv;
                    if (gin[1]) db[size_t(bo)] += gv;
                    break;
                case BinKind::Sub:
                    if (gin[0]) da[size_t(ao)] += gv;
                    if (gin[1]) db[size_t(bo)] -= gv;
                    break;
                case BinKind::Mul:
                    if (gin[0]) da[size_t(ao)] += gv * pb[bo];
                    if (gin[1]) db[size_t(bo)] += gv * pa[ao];
                    break;
            }
        });
        if (gin[0])
            for (int64_t i = 0; i < na; ++i) (*gin[0])[size_t(i)] += float(da[size_t(i)]);
        if (gin[1])
            for (int64_t i = 0; i < nb; ++i) (*gin[1])[size_t(i)] += float(db[size_t(i)]);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Unary elementwise
// ---------------------------------------------------------------------------

template <class Fwd, class MakeBwd>
Tensor unary_elementwise(const char* name, const Tensor& x, Fwd fwd, MakeBwd make_bwd) {
    const int64_t n = x.numel();
    Tensor out(x.shape());
    const float* px = x.data().data();
    float* po = out.mutable_data().data();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);

    OpCtx ctx;
    ctx.add(x);
    if (ctx.tape && ctx.tracked) ctx.finish(out, name, make_bwd(out));
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Binary / unary ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise("add", BinKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_elementwise("sub", BinKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_elementwise("mul", BinKind::Mul, a, b); }

Tensor relu(const Tensor& x) {
    auto xbuf = x.buffer();
    const int64_t n = x.numel();
    return unary_elementwise(
        "relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
        [&](const Tensor&) {
            return [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
                if (!gin[0]) return;
                for (int64_t i = 0; i < n; ++i)
                    if ((*xbuf)[size_t(i)] > 0.0f) (*gin[0])[size_t(i)] += g[size_t(i)];
            };
        });
}

Tensor leaky_relu(const Tensor& x, float alpha) {
    auto xbuf = x.buffer();
    const int64_t n = x.numel();
    return unary_elementwise(
        "leaky_relu", x, [alpha](float v) { return v > 0.0f ? v : alpha * v; },
        [&](const Tensor&) {
            return [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
                if (!gin[0]) return;
                for (int64_t i = 0; i < n; ++i) {
                    const float s = (*xbuf)[size_t(i)] > 0.0f ? 1.0f : alpha;
                    (*gin[0])[size_t(i)] += s * g[size_t(i)];
                }
            };
        });
}

Tensor sigmoid(const Tensor& x) {
    const int64_t n = x.numel();
    return unary_elementwise(
        "sigmoid", x,
        [](float v) {
            const double d = double(v);
            return float(d >= 0.0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d)));
        },
        [&](const Tensor& out) {
            auto ybuf = out.buffer();
            return [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
                if (!gin[0]) return;
                for (int64_t i = 0; i < n; ++i) {
                    const float y = (*ybuf)[size_t(i)];
                    (*gin[0])[size_t(i)] += y * (1.0f - y) * g[size_t(i)];
                }
            };
        });
}

Tensor tanh(const Tensor& x) {
    const int64_t n = x.numel();
    return unary_elementwise(
        "tanh", x, [](float v) { return float(std::tanh(double(v))); },
        [&](const Tensor& out) {
            auto ybuf = out.buffer();
            return [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
                if (!gin[0]) return;
                for (int64_t i = 0; i < n; ++i) {
                    const float y = (*ybuf)[size_t(i)];
                    (*gin[0])[size_t(i)] += (1.0f - y * y) * g[size_t(i)];
                }
            };
        });
}

Tensor softplus(const Tensor& x) {
    auto xbuf = x.buffer();
    const int64_t n = x.numel();
    return unary_elementwise(
        "softplus", x,
        [](float v) {
            const double d = double(v);
            return float(std::max(d, 0.0) + std::log1p(std::exp(-std::abs(d))));
        },
        [&](const Tensor&) {
            return [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
                if (!gin[0]) return;
                for (int64_t i = 0; i < n; ++i) {
                    const double d = double((*xbuf)[size_t(i)]);
                    const double s = d >= 0.0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
                    (*gin[0])[size_t(i)] += float(s) * g[size_t(i)];
                }
            };
        });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0]) {
        throw InvalidArgument("matmul: need [m,k] x [k,n], got " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));
    }
    const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out(Shape{m, n});
    {
        const float* pa = a.data().data();
        const float* pb = b.data().data();
        float* po = out.mutable_data().data();
        for (int64_t i = 0; i < m; ++i) {
            float* orow = po + i * n;
            for (int64_t kk = 0; kk < k; ++kk) {
                const float av = pa[i * k + kk];
                const float* brow = pb + kk * n;
                for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }

    OpCtx ctx;
    ctx.add(a);
    ctx.add(b);
    if (!(ctx.tape && ctx.tracked)) return out;

    auto abuf = a.buffer();
    auto bbuf = b.buffer();
    ctx.finish(out, "matmul", [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        const float* pa = abuf->data();
        const float* pb = bbuf->data();
        if (gin[0]) { // dA = dC * B^T
            float* ga = gin[0]->data();
            for (int64_t i = 0; i < m; ++i) {
                const float* grow = g.data() + i * n;
                for (int64_t kk = 0; kk < k; ++kk) {
                    const float* brow = pb + kk * n;
                    double acc = 0.0;
                    for (int64_t j = 0; j < n; ++j) acc += double(grow[j]) * double(brow[j]);
                    ga[i * k + kk] += float(acc);
                }
            }
        }
        if (gin[1]) { // dB = A^T * dC
            float* gb = gin[1]->data();
            for (int64_t i = 0; i < m; ++i) {
                const float* grow = g.data() + i * n;
                for (int64_t kk = 0; kk < k; ++kk) {
                    const float av = pa[i * k + kk];
                    float* gbrow = gb + kk * n;
                    for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// reshape / concat / slice
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel()) {
        throw InvalidArgument("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.numel()) +
                              " elements, target " + shape_str(new_shape) + " has " +
                              std::to_string(shape_numel(new_shape)));
    }
    Tensor out(std::move(new_shape), std::vector<float>(x.data().begin(), x.data().end()));

    OpCtx ctx;
    ctx.add(x);
    const int64_t n = x.numel();
    ctx.finish(out, "reshape", [n](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        if (!gin[0]) return;
        for (int64_t i = 0; i < n; ++i) (*gin[0])[size_t(i)] += g[size_t(i)];
    });
    return out;
}

Tensor concat(const std::vector<Tensor>& xs, int64_t axis) {
    if (xs.empty()) throw InvalidArgument("concat: need at least one input");
    const Shape& s0 = xs[0].shape();
    if (axis < 0 || axis >= int64_t(s0.size())) {
        throw InvalidArgument("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
    }
    Shape out_shape = s0;
    for (size_t i = 1; i < xs.size(); ++i) {
        const Shape& si = xs[i].shape();
        if (si.size() != s0.size()) {
            throw InvalidArgument("concat: rank mismatch, " + shape_str(s0) + " vs " + shape_str(si));
        }
        for (size_t d = 0; d < s0.size(); ++d) {
            if (int64_t(d) != axis && si[d] != s0[d]) {
                throw InvalidArgument("concat: shapes differ off-axis, " + shape_str(s0) + " vs " +
                                      shape_str(si));
            }
        }
        out_shape[size_t(axis)] += si[size_t(axis)];
    }

    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= s0[size_t(d)];
    for (int64_t d = axis + 1; d < int64_t(s0.size()); ++d) inner *= s0[size_t(d)];
    const int64_t out_axis = out_shape[size_t(axis)];

    Tensor out(out_shape);
    float* po = out.mutable_data().data();
    std::vector<int64_t> axis_offsets(xs.size());
    {
        int64_t off = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            axis_offsets[i] = off;
            const int64_t len = xs[i].shape()[size_t(axis)];
            const float* pi = xs[i].data().data();
            for (int64_t o = 0; o < outer; ++o) {
                std::memcpy(po + (o * out_axis + off) * inner, pi + o * len * inner,
                            size_t(len * inner) * sizeof(float));
            }
            off += len;
        }
    }

    OpCtx ctx;
    for (const auto& x : xs) ctx.add(x);
    if (!(ctx.tape && ctx.tracked)) return out;

    std::vector<int64_t> lens(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) lens[i] = xs[i].shape()[size_t(axis)];
    ctx.finish(out, "concat", [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        for (size_t i = 0; i < gin.size(); ++i) {
            if (!gin[i]) continue;
            float* gi = gin[i]->data();
            for (int64_t o = 0; o < outer; ++o) {
                const float* src = g.data() + (o * out_axis + axis_offsets[i]) * inner;
                float* dst = gi + o * lens[i] * inner;
                for (int64_t j = 0; j < lens[i] * inner; ++j) dst[j] += src[j];
            }
        }
    });
    return out;
}

Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t len) {
    const Shape& s = x.shape();
    if (axis < 0 || axis >= int64_t(s.size())) {
        throw InvalidArgument("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    if (len <= 0 || start < 0 || start + len > s[size_t(axis)]) {
        throw InvalidArgument("slice: range [" + std::to_string(start) + ", " +
                              std::to_string(start + len) + ") invalid for axis extent " +
                              std::to_string(s[size_t(axis)]));
    }
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= s[size_t(d)];
    for (int64_t d = axis + 1; d < int64_t(s.size()); ++d) inner *= s[size_t(d)];
    const int64_t in_axis = s[size_t(axis)];

    Shape out_shape = s;
    out_shape[size_t(axis)] = len;
    Tensor out(out_shape);
    {
        const float* px = x.data().data();
        float* po = out.mutable_data().data();
        for (int64_t o = 0; o < outer; ++o) {
            std::memcpy(po + o * len * inner, px + (o * in_axis + start) * inner,
                        size_t(len * inner) * sizeof(float));
        }
    }

    OpCtx ctx;
    ctx.add(x);
    ctx.finish(out, "slice", [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        if (!gin[0]) return;
        float* gx = gin[0]->data();
        for (int64_t o = 0; o < outer; ++o) {
            const float* src = g.data() + o * len * inner;
            float* dst = gx + (o * in_axis + start) * inner;
            for (int64_t j = 0; j < len * inner; ++j) dst[j] += src[j];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// softmax / reductions
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int64_t axis) {
    const Shape& s = x.shape();
    if (axis < 0 || axis >= int64_t(s.size())) {
        throw InvalidArgument("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    int64_t outer = 1, inner = 1;
    const int64_t k = s[size_t(axis)];
    for (int64_t d = 0; d < axis; ++d) outer *= s[size_t(d)];
    for (int64_t d = axis + 1; d < int64_t(s.size()); ++d) inner *= s[size_t(d)];

    Tensor out(s);
    {
        const float* px = x.data().data();
        float* po = out.mutable_data().data();
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t i = 0; i < inner; ++i) {
                const int64_t base = o * k * inner + i;
                float mx = px[base];
                for (int64_t j = 1; j < k; ++j) mx = std::max(mx, px[base + j * inner]);
                double denom = 0.0;
                for (int64_t j = 0; j < k; ++j) denom += std::exp(double(px[base + j * inner]) - double(mx));
                for (int64_t j = 0; j < k; ++j) {
                    po[base + j * inner] =
                        float(std::exp(double(px[base + j * inner]) - double(mx)) / denom);
                }
            }
        }
    }

    OpCtx ctx;
    ctx.add(x);
    if (!(ctx.tape && ctx.tracked)) return out;

    auto ybuf = out.buffer();
    ctx.finish(out, "softmax", [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        if (!gin[0]) return;
        float* gx = gin[0]->data();
        const float* py = ybuf->data();
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t i = 0; i < inner; ++i) {
                const int64_t base = o * k * inner + i;
                double dot = 0.0;
                for (int64_t j = 0; j < k; ++j)
                    dot += double(g[size_t(base + j * inner)]) * double(py[base + j * inner]);
                for (int64_t j = 0; j < k; ++j) {
                    const int64_t e = base + j * inner;
                    gx[e] += py[e] * (g[size_t(e)] - float(dot));
                }
            }
        }
    });
    return out;
}

Tensor sum(const Tensor& x) {
    const int64_t n = x.numel();
    double acc = 0.0;
    for (float v : x.data()) acc += double(v);
    Tensor out = Tensor::scalar(float(acc));

    OpCtx ctx;
    ctx.add(x);
    ctx.finish(out, "sum", [n](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        if (!gin[0]) return;
        for (int64_t i = 0; i < n; ++i) (*gin[0])[size_t(i)] += g[0];
    });
    return out;
}

Tensor mean(const Tensor& x) {
    const int64_t n = x.numel();
    double acc = 0.0;
    for (float v : x.data()) acc += double(v);
    Tensor out = Tensor::scalar(float(acc / double(n)));

    OpCtx ctx;
    ctx.add(x);
    ctx.finish(out, "mean", [n](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        if (!gin[0]) return;
        const float gv = g[0] / float(n);
        for (int64_t i = 0; i < n; ++i) (*gin[0])[size_t(i)] += gv;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

namespace {

struct Conv2dDims {
    int64_t n, ci, h, w, co, kh, kw, s, p, ho, wo;
};

Conv2dDims conv2d_dims(const char* op, const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
    if (x.dim() != 4 || w.dim() != 4) {
        throw InvalidArgument(std::string(op) + ": need x [N,C,H,W] and w [Co,Ci,kh,kw], got " +
                              shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    if (x.shape()[1] != w.shape()[1]) {
        throw InvalidArgument(std::string(op) + ": channel mismatch, x " + shape_str(x.shape()) +
                              " vs w " + shape_str(w.shape()));
    }
    if (stride < 1 || pad < 0) throw InvalidArgument(std::string(op) + ": stride must be >=1, pad >=0");
    Conv2dDims d{x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3],
                 w.shape()[0], w.shape()[2], w.shape()[3], stride, pad, 0, 0};
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw) {
        throw InvalidArgument(std::string(op) + ": kernel " + shape_str(w.shape()) +
                              " larger than padded input " + shape_str(x.shape()));
    }
    return d;
}

// valid output range [lo, hi) for one kernel tap: in = out*s - p + k must land in [0, extent)
void tap_range(int64_t extent_in, int64_t extent_out, int64_t s, int64_t p, int64_t k,
               int64_t& lo, int64_t& hi) {
    lo = std::max<int64_t>(0, ceil_div(p - k, s));
    hi = std::min(extent_out, floor_div(extent_in - 1 + p - k, s) + 1);
}

void conv2d_fwd(const float* x, const float* w, float* y, const Conv2dDims& d) {
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t co = 0; co < d.co; ++co) {
            float* yplane = y + (n * d.co + co) * d.ho * d.wo;
            for (int64_t ci = 0; ci < d.ci; ++ci) {
                const float* xplane = x + (n * d.ci + ci) * d.h * d.w;
                for (int64_t kh = 0; kh < d.kh; ++kh) {
                    int64_t ho_lo, ho_hi;
                    tap_range(d.h, d.ho, d.s, d.p, kh, ho_lo, ho_hi);
                    for (int64_t kw = 0; kw < d.kw; ++kw) {
                        const float wv = w[((co * d.ci + ci) * d.kh + kh) * d.kw + kw];
                        int64_t wo_lo, wo_hi;
                        tap_range(d.w, d.wo, d.s, d.p, kw, wo_lo, wo_hi);
                        for (int64_t ho = ho_lo; ho < ho_hi; ++ho) {
                            const int64_t hi = ho * d.s - d.p + kh;
                            const float* xrow = xplane + hi * d.w + (wo_lo * d.s - d.p + kw);
                            float* yrow = yplane + ho * d.wo + wo_lo;
                            const int64_t cnt = wo_hi - wo_lo;
                            if (d.s == 1) {
                                for (int64_t i = 0; i < cnt; ++i) yrow[i] += wv * xrow[i];
                            } else {
                                for (int64_t i = 0; i < cnt; ++i) yrow[i] += wv * xrow[i * d.s];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_bwd_input(const float* g, const float* w, float* gx, const Conv2dDims& d) {
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t co = 0; co < d.co; ++co) {
            const float* gplane = g + (n * d.co + co) * d.ho * d.wo;
            for (int64_t ci = 0; ci < d.ci; ++ci) {
                float* gxplane = gx + (n * d.ci + ci) * d.h * d.w;
                for (int64_t kh = 0; kh < d.kh; ++kh) {
                    int64_t ho_lo, ho_hi;
                    tap_range(d.h, d.ho, d.s, d.p, kh, ho_lo, ho_hi);
                    for (int64_t kw = 0; kw < d.kw; ++kw) {
                        const float wv = w[((co * d.ci + ci) * d.kh + kh) * d.kw + kw];
                        int64_t wo_lo, wo_hi;
                        tap_range(d.w, d.wo, d.s, d.p, kw, wo_lo, wo_hi);
                        for (int64_t ho = ho_lo; ho < ho_hi; ++ho) {
                            const int64_t hi = ho * d.s - d.p + kh;
                            float* gxrow = gxplane + hi * d.w + (wo_lo * d.s - d.p + kw);
                            const float* grow = gplane + ho * d.wo + wo_lo;
                            const int64_t cnt = wo_hi - wo_lo;
                            if (d.s == 1) {
                                for (int64_t i = 0; i < cnt; ++i) gxrow[i] += wv * grow[i];
                            } else {
                                for (int64_t i = 0; i < cnt; ++i) gxrow[i * d.s] += wv * grow[i];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_bwd_weight(const float* g, const float* x, float* gw, const Conv2dDims& d) {
    for (int64_t co = 0; co < d.co; ++co) {
        for (int64_t ci = 0; ci < d.ci; ++ci) {
            for (int64_t kh = 0; kh < d.kh; ++kh) {
                int64_t ho_lo, ho_hi;
                tap_range(d.h, d.ho, d.s, d.p, kh, ho_lo, ho_hi);
                for (int64_t kw = 0; kw < d.kw; ++kw) {
                    int64_t wo_lo, wo_hi;
                    tap_range(d.w, d.wo, d.s, d.p, kw, wo_lo, wo_hi);
                    double acc = 0.0;
                    for (int64_t n = 0; n < d.n; ++n) {
                        const float* gplane = g + (n * d.co + co) * d.ho * d.wo;
                        const float* xplane = x + (n * d.ci + ci) * d.h * d.w;
                        for (int64_t ho = ho_lo; ho < ho_hi; ++ho) {
                            const int64_t hi = ho * d.s - d.p + kh;
                            const float* xrow = xplane + hi * d.w + (wo_lo * d.s - d.p + kw);
                            const float* grow = gplane + ho * d.wo + wo_lo;
                            const int64_t cnt = wo_hi - wo_lo;
                            if (d.s == 1) {
                                for (int64_t i = 0; i < cnt; ++i) acc += double(grow[i]) * double(xrow[i]);
                            } else {
                                for (int64_t i = 0; i < cnt; ++i)
                                    acc += double(grow[i]) * double(xrow[i * d.s]);
                            }
                        }
                    }
                    gw[((co * d.ci + ci) * d.kh + kh) * d.kw + kw] += float(acc);
                }
            }
        }
    }
}

struct Conv3dDims {
    int64_t n, ci, in_d, in_h, in_w, co, kd, kh, kw, s, p, od, oh, ow;
};

Conv3dDims conv3d_dims(const char* op, const Tensor& x, const Tensor& w, int64_t stride, int64_t pad,
                       bool transposed) {
    if (x.dim() != 5 || w.dim() != 5) {
        throw InvalidArgument(std::string(op) + ": need x [N,C,D,H,W] and 5-d weights, got " +
                              shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const int64_t w_in_ch = transposed ? w.shape()[0] : w.shape()[1];
    if (x.shape()[1] != w_in_ch) {
        throw InvalidArgument(std::string(op) + ": channel mismatch, x " + shape_str(x.shape()) +
                              " vs w " + shape_str(w.shape()));
    }
    if (stride < 1 || pad < 0) throw InvalidArgument(std::string(op) + ": stride must be >=1, pad >=0");
    Conv3dDims d{x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[4],
                 transposed ? w.shape()[1] : w.shape()[0],
                 w.shape()[2], w.shape()[3], w.shape()[4], stride, pad, 0, 0, 0};
    if (transposed) {
        d.od = (d.in_d - 1) * stride - 2 * pad + d.kd;
        d.oh = (d.in_h - 1) * stride - 2 * pad + d.kh;
        d.ow = (d.in_w - 1) * stride - 2 * pad + d.kw;
        if (d.od < 1 || d.oh < 1 || d.ow < 1) {
            throw InvalidArgument(std::string(op) + ": empty output for input " + shape_str(x.shape()));
        }
    } else {
        if (d.in_d + 2 * pad < d.kd || d.in_h + 2 * pad < d.kh || d.in_w + 2 * pad < d.kw) {
            throw InvalidArgument(std::string(op) + ": kernel " + shape_str(w.shape()) +
                                  " larger than padded input " + shape_str(x.shape()));
        }
        d.od = (d.in_d + 2 * pad - d.kd) / stride + 1;
        d.oh = (d.in_h + 2 * pad - d.kh) / stride + 1;
        d.ow = (d.in_w + 2 * pad - d.kw) / stride + 1;
    }
    return d;
}

void conv3d_fwd(const float* x, const float* w, float* y, const Conv3dDims& d) {
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t co = 0; co < d.co; ++co) {
            float* yvol = y + (n * d.co + co) * d.od * d.oh * d.ow;
            for (int64_t ci = 0; ci < d.ci; ++ci) {
                const float* xvol = x + (n * d.ci + ci) * d.in_d * d.in_h * d.in_w;
                for (int64_t kd = 0; kd < d.kd; ++kd) {
                    int64_t zo_lo, zo_hi;
                    tap_range(d.in_d, d.od, d.s, d.p, kd, zo_lo, zo_hi);
                    for (int64_t kh = 0; kh < d.kh; ++kh) {
                        int64_t yo_lo, yo_hi;
                        tap_range(d.in_h, d.oh, d.s, d.p, kh, yo_lo, yo_hi);
                        for (int64_t kw = 0; kw < d.kw; ++kw) {
                            const float wv = w[(((co * d.ci + ci) * d.kd + kd) * d.kh + kh) * d.kw + kw];
                            int64_t xo_lo, xo_hi;
                            tap_range(d.in_w, d.ow, d.s, d.p, kw, xo_lo, xo_hi);
                            const int64_t cnt = xo_hi - xo_lo;
                            for (int64_t zo = zo_lo; zo < zo_hi; ++zo) {
                                const int64_t zi = zo * d.s - d.p + kd;
                                for (int64_t yo = yo_lo; yo < yo_hi; ++yo) {
                                    const int64_t yi = yo * d.s - d.p + kh;
                                    const float* xrow =
                                        xvol + (zi * d.in_h + yi) * d.in_w + (xo_lo * d.s - d.p + kw);
                                    float* yrow = yvol + (zo * d.oh + yo) * d.ow + xo_lo;
                                    if (d.s == 1) {
                                        for (int64_t i = 0; i < cnt; ++i) yrow[i] += wv * xrow[i];
                                    } else {
                                        for (int64_t i = 0; i < cnt; ++i) yrow[i] += wv * xrow[i * d.s];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3d_bwd_input(const float* g, const float* w, float* gx, const Conv3dDims& d) {
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t co = 0; co < d.co; ++co) {
            const float* gvol = g + (n * d.co + co) * d.od * d.oh * d.ow;
            for (int64_t ci = 0; ci < d.ci; ++ci) {
                float* gxvol = gx + (n * d.ci + ci) * d.in_d * d.in_h * d.in_w;
                for (int64_t kd = 0; kd < d.kd; ++kd) {
                    int64_t zo_lo, zo_hi;
                    tap_range(d.in_d, d.od, d.s, d.p, kd, zo_lo, zo_hi);
                    for (int64_t kh = 0; kh < d.kh; ++kh) {
                        int64_t yo_lo, yo_hi;
                        tap_range(d.in_h, d.oh, d.s, d.p, kh, yo_lo, yo_hi);
                        for (int64_t kw = 0; kw < d.kw; ++kw) {
                            const float wv = w[(((co * d.ci + ci) * d.kd + kd) * d.kh + kh) * d.kw + kw];
                            int64_t xo_lo, xo_hi;
                            tap_range(d.in_w, d.ow, d.s, d.p, kw, xo_lo, xo_hi);
                            const int64_t cnt = xo_hi - xo_lo;
                            for (int64_t zo = zo_lo; zo < zo_hi; ++zo) {
                                const int64_t zi = zo * d.s - d.p + kd;
                                for (int64_t yo = yo_lo; yo < yo_hi; ++yo) {
                                    const int64_t yi = yo * d.s - d.p + kh;
                                    float* gxrow =
                                        gxvol + (zi * d.in_h + yi) * d.in_w + (xo_lo * d.s - d.p + kw);
                                    const float* grow = gvol + (zo * d.oh + yo) * d.ow + xo_lo;
                                    if (d.s == 1) {
                                        for (int64_t i = 0; i < cnt; ++i) gxrow[i] += wv * grow[i];
                                    } else {
                                        for (int64_t i = 0; i < cnt; ++i) gxrow[i * d.s] += wv * grow[i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3d_bwd_weight(const float* g, const float* x, float* gw, const Conv3dDims& d) {
    for (int64_t co = 0; co < d.co; ++co) {
        for (int64_t ci = 0; ci < d.ci; ++ci) {
            for (int64_t kd = 0; kd < d.kd; ++kd) {
                int64_t zo_lo, zo_hi;
                tap_range(d.in_d, d.od, d.s, d.p, kd, zo_lo, zo_hi);
                for (int64_t kh = 0; kh < d.kh; ++kh) {
                    int64_t yo_lo, yo_hi;
                    tap_range(d.in_h, d.oh, d.s, d.p, kh, yo_lo, yo_hi);
                    for (int64_t kw = 0; kw < d.kw; ++kw) {
                        int64_t xo_lo, xo_hi;
                        tap_range(d.in_w, d.ow, d.s, d.p, kw, xo_lo, xo_hi);
                        const int64_t cnt = xo_hi - xo_lo;
                        double acc = 0.0;
                        for (int64_t n = 0; n < d.n; ++n) {
                            const float* gvol = g + (n * d.co + co) * d.od * d.oh * d.ow;
                            const float* xvol = x + (n * d.ci + ci) * d.in_d * d.in_h * d.in_w;
                            for (int64_t zo = zo_lo; zo < zo_hi; ++zo) {
                                const int64_t zi = zo * d.s - d.p + kd;
                                for (int64_t yo = yo_lo; yo < yo_hi; ++yo) {
                                    const int64_t yi = yo * d.s - d.p + kh;
                                    const float* xrow =
                                        xvol + (zi * d.in_h + yi) * d.in_w + (xo_lo * d.s - d.p + kw);
                                    const float* grow = gvol + (zo * d.oh + yo) * d.ow + xo_lo;
                                    if (d.s == 1) {
                                        for (int64_t i = 0; i < cnt; ++i)
                                            acc += double(grow[i]) * double(xrow[i]);
                                    } else {
                                        for (int64_t i = 0; i < cnt; ++i)
                                            acc += double(grow[i]) * double(xrow[i * d.s]);
                                    }
                                }
                            }
                        }
                        gw[(((co * d.ci + ci) * d.kd + kd) * d.kh + kh) * d.kw + kw] += float(acc);
                    }
                }
            }
        }
    }
}

// Transposed conv: y[zo] gathers x[zi] where zo = zi*s - p + k. The forward
// scatters over inputs; input/weight gradients reuse the same tap ranges.
void convt3d_fwd(const float* x, const float* w, float* y, const Conv3dDims& d) {
    // d.in_* are the input extents, d.o* the (larger) output extents.
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t ci = 0; ci < d.ci; ++ci) {
            const float* xvol = x + (n * d.ci + ci) * d.in_d * d.in_h * d.in_w;
            for (int64_t co = 0; co < d.co; ++co) {
                float* yvol = y + (n * d.co + co) * d.od * d.oh * d.ow;
                for (int64_t kd = 0; kd < d.kd; ++kd) {
                    int64_t zi_lo, zi_hi;
                    tap_range(d.od, d.in_d, d.s, d.p, kd, zi_lo, zi_hi);
                    for (int64_t kh = 0; kh < d.kh; ++kh) {
                        int64_t yi_lo, yi_hi;
                        tap_range(d.oh, d.in_h, d.s, d.p, kh, yi_lo, yi_hi);
                        for (int64_t kw = 0; kw < d.kw; ++kw) {
                            const float wv = w[(((ci * d.co + co) * d.kd + kd) * d.kh + kh) * d.kw + kw];
                            int64_t xi_lo, xi_hi;
                            tap_range(d.ow, d.in_w, d.s, d.p, kw, xi_lo, xi_hi);
                            const int64_t cnt = xi_hi - xi_lo;
                            for (int64_t zi = zi_lo; zi < zi_hi; ++zi) {
                                const int64_t zo = zi * d.s - d.p + kd;
                                for (int64_t yi = yi_lo; yi < yi_hi; ++yi) {
                                    const int64_t yo = yi * d.s - d.p + kh;
                                    const float* xrow = xvol + (zi * d.in_h + yi) * d.in_w + xi_lo;
                                    float* yrow =
                                        yvol + (zo * d.oh + yo) * d.ow + (xi_lo * d.s - d.p + kw);
                                    if (d.s == 1) {
                                        for (int64_t i = 0; i < cnt; ++i) yrow[i] += wv * xrow[i];
                                    } else {
                                        for (int64_t i = 0; i < cnt; ++i) yrow[i * d.s] += wv * xrow[i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void convt3d_bwd_input(const float* g, const float* w, float* gx, const Conv3dDims& d) {
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t ci = 0; ci < d.ci; ++ci) {
            float* gxvol = gx + (n * d.ci + ci) * d.in_d * d.in_h * d.in_w;
            for (int64_t co = 0; co < d.co; ++co) {
                const float* gvol = g + (n * d.co + co) * d.od * d.oh * d.ow;
                for (int64_t kd = 0; kd < d.kd; ++kd) {
                    int64_t zi_lo, zi_hi;
                    tap_range(d.od, d.in_d, d.s, d.p, kd, zi_lo, zi_hi);
                    for (int64_t kh = 0; kh < d.kh; ++kh) {
                        int64_t yi_lo, yi_hi;
                        tap_range(d.oh, d.in_h, d.s, d.p, kh, yi_lo, yi_hi);
                        for (int64_t kw = 0; kw < d.kw; ++kw) {
                            const float wv = w[(((ci * d.co + co) * d.kd + kd) * d.kh + kh) * d.kw + kw];
                            int64_t xi_lo, xi_hi;
                            tap_range(d.ow, d.in_w, d.s, d.p, kw, xi_lo, xi_hi);
                            const int64_t cnt = xi_hi - xi_lo;
                            for (int64_t zi = zi_lo; zi < zi_hi; ++zi) {
                                const int64_t zo = zi * d.s - d.p + kd;
                                for (int64_t yi = yi_lo; yi < yi_hi; ++yi) {
                                    const int64_t yo = yi * d.s - d.p + kh;
                                    float* gxrow = gxvol + (zi * d.in_h + yi) * d.in_w + xi_lo;
                                    const float* grow =
                                        gvol + (zo * d.oh + yo) * d.ow + (xi_lo * d.s - d.p + kw);
                                    if (d.s == 1) {
                                        for (int64_t i = 0; i < cnt; ++i) gxrow[i] += wv * grow[i];
                                    } else {
                                        for (int64_t i = 0; i < cnt; ++i) gxrow[i] += wv * grow[i * d.s];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void convt3d_bwd_weight(const float* g, const float* x, float* gw, const Conv3dDims& d) {
    for (int64_t ci = 0; ci < d.ci; ++ci) {
        for (int64_t co = 0; co < d.co; ++co) {
            for (int64_t kd = 0; kd < d.kd; ++kd) {
                int64_t zi_lo, zi_hi;
                tap_range(d.od, d.in_d, d.s, d.p, kd, zi_lo, zi_hi);
                for (int64_t kh = 0; kh < d.kh; ++kh) {
                    int64_t yi_lo, yi_hi;
                    tap_range(d.oh, d.in_h, d.s, d.p, kh, yi_lo, yi_hi);
                    for (int64_t kw = 0; kw < d.kw; ++kw) {
                        int64_t xi_lo, xi_hi;
                        tap_range(d.ow, d.in_w, d.s, d.p, kw, xi_lo, xi_hi);
                        const int64_t cnt = xi_hi - xi_lo;
                        double acc = 0.0;
                        for (int64_t n = 0; n < d.n; ++n) {
                            const float* gvol = g + (n * d.co + co) * d.od * d.oh * d.ow;
                            const float* xvol = x + (n * d.ci + ci) * d.in_d * d.in_h * d.in_w;
                            for (int64_t zi = zi_lo; zi < zi_hi; ++zi) {
                                const int64_t zo = zi * d.s - d.p + kd;
                                for (int64_t yi = yi_lo; yi < yi_hi; ++yi) {
                                    const int64_t yo = yi * d.s - d.p + kh;
                                    const float* xrow = xvol + (zi * d.in_h + yi) * d.in_w + xi_lo;
                                    const float* grow =
                                        gvol + (zo * d.oh + yo) * d.ow + (xi_lo * d.s - d.p + kw);
                                    if (d.s == 1) {
                                        for (int64_t i = 0; i < cnt; ++i)
                                            acc += double(xrow[i]) * double(grow[i]);
                                    } else {
                                        for (int64_t i = 0; i < cnt; ++i)
                                            acc += double(xrow[i]) * double(grow[i * d.s]);
                                    }
                                }
                            }
                        }
                        gw[(((ci * d.co + co) * d.kd + kd) * d.kh + kh) * d.kw + kw] += float(acc);
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
    const Conv2dDims d = conv2d_dims("conv2d", x, w, stride, pad);
    Tensor out(Shape{d.n, d.co, d.ho, d.wo});
    conv2d_fwd(x.data().data(), w.data().data(), out.mutable_data().data(), d);

    OpCtx ctx;
    ctx.add(x);
    ctx.add(w);
    if (!(ctx.tape && ctx.tracked)) return out;

    auto xbuf = x.buffer();
    auto wbuf = w.buffer();
    ctx.finish(out, "conv2d", [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        if (gin[0]) conv2d_bwd_input(g.data(), wbuf->data(), gin[0]->data(), d);
        if (gin[1]) conv2d_bwd_weight(g.data(), xbuf->data(), gin[1]->data(), d);
    });
    return out;
}

Tensor conv3d(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
    const Conv3dDims d = conv3d_dims("conv3d", x, w, stride, pad, /*transposed=*/false);
    Tensor out(Shape{d.n, d.co, d.od, d.oh, d.ow});
    conv3d_fwd(x.data().data(), w.data().data(), out.mutable_data().data(), d);

    OpCtx ctx;
    ctx.add(x);
    ctx.add(w);
    if (!(ctx.tape && ctx.tracked)) return out;

    auto xbuf = x.buffer();
    auto wbuf = w.buffer();
    ctx.finish(out, "conv3d", [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        if (gin[0]) conv3d_bwd_input(g.data(), wbuf->data(), gin[0]->data(), d);
        if (gin[1]) conv3d_bwd_weight(g.data(), xbuf->data(), gin[1]->data(), d);
    });
    return out;
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
    const Conv3dDims d = conv3d_dims("conv_transpose3d", x, w, stride, pad, /*transposed=*/true);
    Tensor out(Shape{d.n, d.co, d.od, d.oh, d.ow});
    convt3d_fwd(x.data().data(), w.data().data(), out.mutable_data().data(), d);

    OpCtx ctx;
    ctx.add(x);
    ctx.add(w);
    if (!(ctx.tape && ctx.tracked)) return out;

    auto xbuf = x.buffer();
    auto wbuf = w.buffer();
    ctx.finish(out, "conv_transpose3d",
               [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
                   if (gin[0]) convt3d_bwd_input(g.data(), wbuf->data(), gin[0]->data(), d);
                   if (gin[1]) convt3d_bwd_weight(g.data(), xbuf->data(), gin[1]->data(), d);
               });
    return out;
}

// ---------------------------------------------------------------------------
// instance_norm / dropout
// ---------------------------------------------------------------------------

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    if (x.dim() < 3) {
        throw InvalidArgument("instance_norm: need [N,C,spatial...], got " + shape_str(x.shape()));
    }
    const int64_t n = x.shape()[0], c = x.shape()[1];
    const int64_t m = x.numel() / (n * c);
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw InvalidArgument("instance_norm: gamma/beta must be [C]=" + std::to_string(c) + ", got " +
                              shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    }
    if (m < 2) {
        throw InvalidArgument("instance_norm: needs at least 2 spatial elements per channel, got " +
                              shape_str(x.shape()));
    }

    Tensor out(x.shape());
    auto xhat = std::make_shared<std::vector<float>>(size_t(x.numel()));
    auto invstd = std::make_shared<std::vector<float>>(size_t(n * c));
    {
        const float* px = x.data().data();
        const float* pg = gamma.data().data();
        const float* pb = beta.data().data();
        float* po = out.mutable_data().data();
        for (int64_t i = 0; i < n * c; ++i) {
            const float* grp = px + i * m;
            double s1 = 0.0, s2 = 0.0;
            for (int64_t j = 0; j < m; ++j) {
                s1 += double(grp[j]);
                s2 += double(grp[j]) * double(grp[j]);
            }
            const double mu = s1 / double(m);
            const double var = std::max(0.0, s2 / double(m) - mu * mu);
            const double is = 1.0 / std::sqrt(var + double(eps));
            (*invstd)[size_t(i)] = float(is);
            const float gc = pg[i % c], bc = pb[i % c];
            for (int64_t j = 0; j < m; ++j) {
                const float xh = float((double(grp[j]) - mu) * is);
                (*xhat)[size_t(i * m + j)] = xh;
                po[i * m + j] = gc * xh + bc;
            }
        }
    }

    OpCtx ctx;
    ctx.add(x);
    ctx.add(gamma);
    ctx.add(beta);
    if (!(ctx.tape && ctx.tracked)) return out;

    auto gbuf = gamma.buffer();
    ctx.finish(out, "instance_norm",
               [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
                   const float* pg = gbuf->data();
                   for (int64_t i = 0; i < n * c; ++i) {
                       const float* grow = g.data() + i * m;
                       const float* xh = xhat->data() + i * m;
                       double s1 = 0.0, s2 = 0.0;
                       for (int64_t j = 0; j < m; ++j) {
                           s1 += double(grow[j]);
                           s2 += double(grow[j]) * double(xh[j]);
                       }
                       if (gin[0]) {
                           const double gc = double(pg[i % c]);
                           const double is = double((*invstd)[size_t(i)]);
                           const double m1 = s1 / double(m), m2 = s2 / double(m);
                           float* gx = gin[0]->data() + i * m;
                           for (int64_t j = 0; j < m; ++j) {
                               gx[j] += float(gc * is * (double(grow[j]) - m1 - double(xh[j]) * m2));
                           }
                       }
                       if (gin[1]) (*gin[1])[size_t(i % c)] += float(s2);
                       if (gin[2]) (*gin[2])[size_t(i % c)] += float(s1);
                   }
               });
    return out;
}

Tensor dropout(const Tensor& x, float rate, uint64_t seed) {
    if (rate < 0.0f || rate >= 1.0f) {
        throw InvalidArgument("dropout: rate must be in [0,1), got " + std::to_string(rate));
    }
    const int64_t n = x.numel();
    auto mask = std::make_shared<std::vector<float>>(size_t(n));
    {
        Rng rng(seed);
        const float keep_scale = 1.0f / (1.0f - rate);
        for (int64_t i = 0; i < n; ++i) {
            (*mask)[size_t(i)] = rng.uniform() < double(rate) ? 0.0f : keep_scale;
        }
    }
    Tensor out(x.shape());
    {
        const float* px = x.data().data();
        float* po = out.mutable_data().data();
        for (int64_t i = 0; i < n; ++i) po[i] = px[i] * (*mask)[size_t(i)];
    }

    OpCtx ctx;
    ctx.add(x);
    ctx.finish(out, "dropout", [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        if (!gin[0]) return;
        for (int64_t i = 0; i < n; ++i) (*gin[0])[size_t(i)] += g[size_t(i)] * (*mask)[size_t(i)];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape("l1_loss", pred, target);
    const int64_t n = pred.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += std::abs(double(pred.at(i)) - double(target.at(i)));
    Tensor out = Tensor::scalar(float(acc / double(n)));

    OpCtx ctx;
    ctx.add(pred);
    ctx.add(target);
    if (!(ctx.tape && ctx.tracked)) return out;

    auto pbuf = pred.buffer();
    auto tbuf = target.buffer();
    ctx.finish(out, "l1_loss", [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        const float gv = g[0] / float(n);
        for (int64_t i = 0; i < n; ++i) {
            const float diff = (*pbuf)[size_t(i)] - (*tbuf)[size_t(i)];
            const float s = diff > 0.0f ? 1.0f : (diff < 0.0f ? -1.0f : 0.0f);
            if (gin[0]) (*gin[0])[size_t(i)] += s * gv;
            if (gin[1]) (*gin[1])[size_t(i)] -= s * gv;
        }
    });
    return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape("mse_loss", pred, target);
    const int64_t n = pred.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double diff = double(pred.at(i)) - double(target.at(i));
        acc += diff * diff;
    }
    Tensor out = Tensor::scalar(float(acc / double(n)));

    OpCtx ctx;
    ctx.add(pred);
    ctx.add(target);
    if (!(ctx.tape && ctx.tracked)) return out;

    auto pbuf = pred.buffer();
    auto tbuf = target.buffer();
    ctx.finish(out, "mse_loss", [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
        const float gv = 2.0f * g[0] / float(n);
        for (int64_t i = 0; i < n; ++i) {
            const float diff = (*pbuf)[size_t(i)] - (*tbuf)[size_t(i)];
            if (gin[0]) (*gin[0])[size_t(i)] += diff * gv;
            if (gin[1]) (*gin[1])[size_t(i)] -= diff * gv;
        }
    });
    return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    check_same_shape("bce_with_logits", logits, targets);
    const int64_t n = logits.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double x = double(logits.at(i)), t = double(targets.at(i));
        acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    Tensor out = Tensor::scalar(float(acc / double(n)));

    OpCtx ctx;
    ctx.add(logits);
    ctx.add(targets);
    if (!(ctx.tape && ctx.tracked)) return out;

    auto lbuf = logits.buffer();
    auto tbuf = targets.buffer();
    ctx.finish(out, "bce_with_logits",
               [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
                   const float gv = g[0] / float(n);
                   for (int64_t i = 0; i < n; ++i) {
                       const double x = double((*lbuf)[size_t(i)]);
                       const double s =
                           x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                       if (gin[0]) (*gin[0])[size_t(i)] += float(s - double((*tbuf)[size_t(i)])) * gv;
                       if (gin[1]) (*gin[1])[size_t(i)] -= float(x) * gv;
                   }
               });
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
    if (logits.dim() != 2) {
        throw InvalidArgument("cross_entropy: logits must be [N,K], got " + shape_str(logits.shape()));
    }
    const int64_t n = logits.shape()[0], k = logits.shape()[1];
    if (int64_t(labels.size()) != n) {
        throw InvalidArgument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(n) + " rows");
    }
    for (int64_t lab : labels) {
        if (lab < 0 || lab >= k) {
            throw InvalidArgument("cross_entropy: label " + std::to_string(lab) + " out of range [0," +
                                  std::to_string(k) + ")");
        }
    }

    auto probs = std::make_shared<std::vector<float>>(size_t(n * k));
    double acc = 0.0;
    {
        const float* px = logits.data().data();
        for (int64_t i = 0; i < n; ++i) {
            const float* row = px + i * k;
            double mx = double(row[0]);
            for (int64_t j = 1; j < k; ++j) mx = std::max(mx, double(row[j]));
            double denom = 0.0;
            for (int64_t j = 0; j < k; ++j) denom += std::exp(double(row[j]) - mx);
            for (int64_t j = 0; j < k; ++j) {
                (*probs)[size_t(i * k + j)] = float(std::exp(double(row[j]) - mx) / denom);
            }
            acc += (mx + std::log(denom)) - double(row[labels[size_t(i)]]);
        }
    }
    Tensor out = Tensor::scalar(float(acc / double(n)));

    OpCtx ctx;
    ctx.add(logits);
    if (!(ctx.tape && ctx.tracked)) return out;

    auto labs = std::make_shared<std::vector<int64_t>>(labels);
    ctx.finish(out, "cross_entropy",
               [=](const std::vector<float>& g, const std::vector<std::vector<float>*>& gin) {
                   if (!gin[0]) return;
                   const float gv = g[0] / float(n);
                   for (int64_t i = 0; i < n; ++i) {
                       for (int64_t j = 0; j < k; ++j) {
                           const float onehot = j == (*labs)[size_t(i)] ? 1.0f : 0.0f;
                           (*gin[0])[size_t(i * k + j)] += ((*probs)[size_t(i * k + j)] - onehot) * gv;
                       }
                   }
               });
    return out;
}

// ---------------------------------------------------------------------------
// Attrs + dispatch
// ---------------------------------------------------------------------------

int64_t Attrs::get_int(const std::string& k) const {
    auto it = values_.find(k);
    if (it == values_.end()) throw InvalidArgument("missing attribute '" + k + "'");
    if (const auto* v = std::get_if<int64_t>(&it->second)) return *v;
    throw InvalidArgument("attribute '" + k + "' is not an integer");
}

double Attrs::get_float(const std::string& k) const {
    auto it = values_.find(k);
    if (it == values_.end()) throw InvalidArgument("missing attribute '" + k + "'");
    if (const auto* v = std::get_if<double>(&it->second)) return *v;
    if (const auto* v = std::get_if<int64_t>(&it->second)) return double(*v);
    throw InvalidArgument("attribute '" + k + "' is not a number");
}

const std::vector<int64_t>& Attrs::get_ints(const std::string& k) const {
    auto it = values_.find(k);
    if (it == values_.end()) throw InvalidArgument("missing attribute '" + k + "'");
    if (const auto* v = std::get_if<std::vector<int64_t>>(&it->second)) return *v;
    throw InvalidArgument("attribute '" + k + "' is not an integer list");
}

int64_t Attrs::get_int_or(const std::string& k, int64_t fallback) const {
    return has(k) ? get_int(k) : fallback;
}

double Attrs::get_float_or(const std::string& k, double fallback) const {
    return has(k) ? get_float(k) : fallback;
}

namespace {

void need_inputs(const std::string& kind, const std::vector<Tensor>& in, size_t n) {
    if (in.size() != n) {
        throw InvalidArgument(kind + ": expected " + std::to_string(n) + " inputs, got " +
                              std::to_string(in.size()));
    }
}

} // namespace

Tensor apply_primitive(const std::string& kind, const std::vector<Tensor>& in, const Attrs& attrs) {
    if (kind == "add") { need_inputs(kind, in, 2); return add(in[0], in[1]); }
    if (kind == "sub") { need_inputs(kind, in, 2); return sub(in[0], in[1]); }
    if (kind == "mul") { need_inputs(kind, in, 2); return mul(in[0], in[1]); }
    if (kind == "matmul") { need_inputs(kind, in, 2); return matmul(in[0], in[1]); }
    if (kind == "reshape") { need_inputs(kind, in, 1); return reshape(in[0], attrs.get_ints("shape")); }
    if (kind == "concat") {
        if (in.empty()) throw InvalidArgument("concat: need at least one input");
        return concat(in, attrs.get_int("axis"));
    }
    if (kind == "slice") {
        need_inputs(kind, in, 1);
        return slice(in[0], attrs.get_int("axis"), attrs.get_int("start"), attrs.get_int("len"));
    }
    if (kind == "relu") { need_inputs(kind, in, 1); return relu(in[0]); }
    if (kind == "leaky_relu") {
        need_inputs(kind, in, 1);
        return leaky_relu(in[0], float(attrs.get_float("alpha")));
    }
    if (kind == "sigmoid") { need_inputs(kind, in, 1); return sigmoid(in[0]); }
    if (kind == "tanh") { need_inputs(kind, in, 1); return tanh(in[0]); }
    if (kind == "softplus") { need_inputs(kind, in, 1); return softplus(in[0]); }
    if (kind == "softmax") { need_inputs(kind, in, 1); return softmax(in[0], attrs.get_int("axis")); }
    if (kind == "sum") { need_inputs(kind, in, 1); return sum(in[0]); }
    if (kind == "mean") { need_inputs(kind, in, 1); return mean(in[0]); }
    if (kind == "conv2d") {
        need_inputs(kind, in, 2);
        return conv2d(in[0], in[1], attrs.get_int("stride"), attrs.get_int("pad"));
    }
    if (kind == "conv3d") {
        need_inputs(kind, in, 2);
        return conv3d(in[0], in[1], attrs.get_int("stride"), attrs.get_int("pad"));
    }
    if (kind == "conv_transpose3d") {
        need_inputs(kind, in, 2);
        return conv_transpose3d(in[0], in[1], attrs.get_int("stride"), attrs.get_int("pad"));
    }
    if (kind == "instance_norm") {
        need_inputs(kind, in, 3);
        return instance_norm(in[0], in[1], in[2], float(attrs.get_float_or("eps", 1e-5)));
    }
    if (kind == "dropout") {
        need_inputs(kind, in, 1);
        return dropout(in[0], float(attrs.get_float("rate")), uint64_t(attrs.get_int("seed")));
    }
    if (kind == "l1_loss") { need_inputs(kind, in, 2); return l1_loss(in[0], in[1]); }
    if (kind == "mse_loss") { need_inputs(kind, in, 2); return mse_loss(in[0], in[1]); }
    if (kind == "bce_with_logits") { need_inputs(kind, in, 2); return bce_with_logits(in[0], in[1]); }
    if (kind == "cross_entropy") {
        need_inputs(kind, in, 1);
        return cross_entropy(in[0], attrs.get_ints("labels"));
    }
    throw InvalidArgument("unknown primitive id '" + kind + "'");
}

Shape broadcast_shape(const Shape& a, const Shape& b) { return make_bcast("broadcast", a, b).out; }

} // namespace voxcal::ops
