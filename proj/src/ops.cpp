#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "kernels.hpp"
#include "lrformer/cost.hpp"
#include "lrformer/errors.hpp"
#include "lrformer/tensor.hpp"

namespace lrf {

using detail::OpClass;

namespace {

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " +
                             std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

// inner = numel(b) when b's shape is a trailing suffix of a's shape.
std::size_t suffix_inner(const Shape& a, const Shape& b, const char* op) {
    if (b.size() > a.size() || !std::equal(b.rbegin(), b.rend(), a.rbegin())) {
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
    }
    return shape_numel(b);
}

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
bool wants_grad(const NodePtr<T>& n) {
    if (!n->requires_grad) {
        return false;
    }
    n->ensure_grad();
    return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const std::size_t inner = suffix_inner(a.shape(), b.shape(), "add");
    BasicTensor<T> out(a.shape());
    auto o = out.data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t base = 0; base < o.size(); base += inner) {
        for (std::size_t j = 0; j < inner; ++j) {
            o[base + j] = ad[base + j] + bd[j];
        }
    }
    if (detail::should_record<T>({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        detail::record<T>(out, {&a, &b}, [an, bn, on, inner] {
            const auto& g = on->grad;
            if (wants_grad(an)) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    an->grad[i] += g[i];
                }
            }
            if (wants_grad(bn)) {
                for (std::size_t base = 0; base < g.size(); base += inner) {
                    for (std::size_t j = 0; j < inner; ++j) {
                        bn->grad[j] += g[base + j];
                    }
                }
            }
        });
    }
    detail::check_finite(out, "add");
    return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const std::size_t inner = suffix_inner(a.shape(), b.shape(), "mul");
    BasicTensor<T> out(a.shape());
    auto o = out.data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t base = 0; base < o.size(); base += inner) {
        for (std::size_t j = 0; j < inner; ++j) {
            o[base + j] = ad[base + j] * bd[j];
        }
    }
    if (detail::should_record<T>({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        detail::record<T>(out, {&a, &b}, [an, bn, on, inner] {
            const auto& g = on->grad;
            if (wants_grad(an)) {
                for (std::size_t base = 0; base < g.size(); base += inner) {
                    for (std::size_t j = 0; j < inner; ++j) {
                        an->grad[base + j] += g[base + j] * bn->data[j];
                    }
                }
            }
            if (wants_grad(bn)) {
                for (std::size_t base = 0; base < g.size(); base += inner) {
                    for (std::size_t j = 0; j < inner; ++j) {
                        bn->grad[j] += g[base + j] * an->data[base + j];
                    }
                }
            }
        });
    }
    detail::check_finite(out, "mul");
    return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
    BasicTensor<T> out(a.shape());
    auto o = out.data();
    auto ad = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = ad[i] * factor;
    }
    if (detail::should_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        detail::record<T>(out, {&a}, [an, on, factor] {
            if (wants_grad(an)) {
                for (std::size_t i = 0; i < on->grad.size(); ++i) {
                    an->grad[i] += on->grad[i] * factor;
                }
            }
        });
    }
    detail::check_finite(out, "scale");
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t n = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), p = b.dim(-1);
    if (k != k2) {
        throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const Shape abatch(a.shape().begin(), a.shape().end() - 2);
    const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    const std::size_t rb = std::max(abatch.size(), bbatch.size());
    Shape obatch(rb);
    for (std::size_t i = 0; i < rb; ++i) {
        const std::size_t ea = i + abatch.size() >= rb ? abatch[i + abatch.size() - rb] : 1;
        const std::size_t eb = i + bbatch.size() >= rb ? bbatch[i + bbatch.size() - rb] : 1;
        if (ea != eb && ea != 1 && eb != 1) {
            throw DimensionError("matmul: batch dims not broadcastable: " + shape_str(a.shape()) + " x " +
                                 shape_str(b.shape()));
        }
        obatch[i] = std::max(ea, eb);
    }
    // Offsets (in matrices) of a and b for every output batch index.
    const std::size_t nb = shape_numel(obatch);
    std::vector<std::size_t> aoff(nb), boff(nb);
    for (std::size_t idx = 0; idx < nb; ++idx) {
        std::size_t rem = idx, ao = 0, bo = 0, astride = 1, bstride = 1;
        for (std::size_t d = rb; d-- > 0;) {
            const std::size_t coord = rem % obatch[d];
            rem /= obatch[d];
            if (d + abatch.size() >= rb) {
                const std::size_t ea = abatch[d + abatch.size() - rb];
                ao += (ea == 1 ? 0 : coord) * astride;
                astride *= ea;
            }
            if (d + bbatch.size() >= rb) {
                const std::size_t eb = bbatch[d + bbatch.size() - rb];
                bo += (eb == 1 ? 0 : coord) * bstride;
                bstride *= eb;
            }
        }
        aoff[idx] = ao;
        boff[idx] = bo;
    }
    Shape oshape = obatch;
    oshape.push_back(n);
    oshape.push_back(p);
    BasicTensor<T> out(oshape);
    {
        const T* ad = a.data().data();
        const T* bd = b.data().data();
        T* od = out.data().data();
        for (std::size_t idx = 0; idx < nb; ++idx) {
            kernels::mm_acc(n, k, p, ad + aoff[idx] * n * k, bd + boff[idx] * k * p, od + idx * n * p);
        }
    }
    detail::note_cost(OpClass::contraction, static_cast<std::uint64_t>(nb) * n * k * p);
    if (detail::should_record<T>({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        detail::record<T>(out, {&a, &b}, [an, bn, on, aoff, boff, n, k, p] {
            const T* g = on->grad.data();
            const bool ga = wants_grad(an);
            const bool gb = wants_grad(bn);
            for (std::size_t idx = 0; idx < aoff.size(); ++idx) {
                const T* gi = g + idx * n * p;
                if (ga) {
                    kernels::mm_bt_acc(n, k, p, gi, bn->data.data() + boff[idx] * k * p,
                                       an->grad.data() + aoff[idx] * n * k);
                }
                if (gb) {
                    kernels::mm_at_acc(n, k, p, an->data.data() + aoff[idx] * n * k, gi,
                                       bn->grad.data() + boff[idx] * k * p);
                }
            }
        });
    }
    detail::check_finite(out, "matmul");
    return out;
}

// ---------------------------------------------------------------------------
// layout
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    BasicTensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
    if (detail::should_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        detail::record<T>(out, {&a}, [an, on] {
            if (wants_grad(an)) {
                for (std::size_t i = 0; i < on->grad.size(); ++i) {
                    an->grad[i] += on->grad[i];
                }
            }
        });
    }
    return out;
}

namespace {

// Source strides of each output axis of a permutation.
std::vector<std::size_t> permuted_strides(const Shape& in, const std::vector<int>& perm) {
    const std::size_t r = in.size();
    std::vector<std::size_t> istride(r, 1);
    for (std::size_t d = r; d-- > 1;) {
        istride[d - 1] = istride[d] * in[d];
    }
    std::vector<std::size_t> out(r);
    for (std::size_t d = 0; d < r; ++d) {
        out[d] = istride[static_cast<std::size_t>(perm[d])];
    }
    return out;
}

// Calls fn(dst, src) for every innermost output row, where dst is the row's
// output offset and src the source offset of its first element.
template <typename F>
void for_each_row(const Shape& oshape, const std::vector<std::size_t>& sstride, F&& fn) {
    const std::size_t r = oshape.size();
    if (r == 0 || shape_numel(oshape) == 0) {
        if (r == 0) {
            fn(std::size_t{0}, std::size_t{0});
        }
        return;
    }
    const std::size_t len = oshape.back();
    const std::size_t rows = shape_numel(oshape) / len;
    std::vector<std::size_t> coord(r, 0);
    std::size_t src = 0;
    for (std::size_t row = 0; row < rows; ++row) {
        fn(row * len, src);
        for (std::size_t d = r - 1; d-- > 0;) {
            if (++coord[d] < oshape[d]) {
                src += sstride[d];
                break;
            }
            src -= (oshape[d] - 1) * sstride[d];
            coord[d] = 0;
        }
    }
}

}  // namespace

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<int>& perm) {
    const std::size_t r = a.rank();
    if (perm.size() != r) {
        throw DimensionError("permute: permutation length differs from rank");
    }
    std::vector<bool> seen(r, false);
    Shape oshape(r);
    for (std::size_t d = 0; d < r; ++d) {
        const auto p = static_cast<std::size_t>(perm[d]);
        if (perm[d] < 0 || p >= r || seen[p]) {
            throw DimensionError("permute: invalid permutation");
        }
        seen[p] = true;
        oshape[d] = a.shape()[p];
    }
    auto sstride = permuted_strides(a.shape(), perm);
    const std::size_t len = r == 0 ? 1 : oshape.back();
    const std::size_t inner = r == 0 ? 1 : sstride.back();
    BasicTensor<T> out(oshape);
    {
        T* o = out.data().data();
        const T* ad = a.data().data();
        for_each_row(oshape, sstride, [&](std::size_t dst, std::size_t src) {
            if (inner == 1) {
                std::copy_n(ad + src, len, o + dst);
            } else {
                for (std::size_t j = 0; j < len; ++j) {
                    o[dst + j] = ad[src + j * inner];
                }
            }
        });
    }
    if (detail::should_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        detail::record<T>(out, {&a}, [an, on, oshape, sstride, len, inner] {
            if (wants_grad(an)) {
                const T* g = on->grad.data();
                T* ag = an->grad.data();
                for_each_row(oshape, sstride, [&](std::size_t dst, std::size_t src) {
                    for (std::size_t j = 0; j < len; ++j) {
                        ag[src + j * inner] += g[dst + j];
                    }
                });
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis) {
    if (parts.empty()) {
        throw UsageError("concat: no inputs");
    }
    const Shape& first = parts.front().shape();
    const std::size_t ax = normalize_axis(axis, first.size(), "concat");
    Shape oshape = first;
    oshape[ax] = 0;
    for (const auto& t : parts) {
        if (t.rank() != first.size()) {
            throw DimensionError("concat: rank mismatch");
        }
        for (std::size_t d = 0; d < first.size(); ++d) {
            if (d != ax && t.shape()[d] != first[d]) {
                throw DimensionError("concat: extent mismatch " + shape_str(t.shape()) + " vs " + shape_str(first));
            }
        }
        oshape[ax] += t.shape()[ax];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < ax; ++d) {
        outer *= first[d];
    }
    for (std::size_t d = ax + 1; d < first.size(); ++d) {
        inner *= first[d];
    }
    BasicTensor<T> out(oshape);
    const std::size_t orow = oshape[ax] * inner;
    std::vector<std::size_t> chunk(parts.size()), start(parts.size());
    std::size_t acc = 0;
    for (std::size_t j = 0; j < parts.size(); ++j) {
        chunk[j] = parts[j].shape()[ax] * inner;
        start[j] = acc;
        acc += chunk[j];
    }
    auto o = out.data();
    for (std::size_t j = 0; j < parts.size(); ++j) {
        auto src = parts[j].data();
        for (std::size_t r = 0; r < outer; ++r) {
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * chunk[j]), chunk[j],
                        o.begin() + static_cast<std::ptrdiff_t>(r * orow + start[j]));
        }
    }
    bool any = false;
    for (const auto& t : parts) {
        any = any || detail::should_record<T>({&t});
    }
    if (any) {
        std::vector<NodePtr<T>> nodes;
        for (const auto& t : parts) {
            nodes.push_back(t.node());
        }
        auto on = out.node();
        out.node()->requires_grad = true;
        auto inputs = nodes;
        default_tape<T>().record(on, std::move(inputs), [nodes, on, chunk, start, outer, orow] {
            for (std::size_t j = 0; j < nodes.size(); ++j) {
                if (!wants_grad(nodes[j])) {
                    continue;
                }
                for (std::size_t r = 0; r < outer; ++r) {
                    for (std::size_t i = 0; i < chunk[j]; ++i) {
                        nodes[j]->grad[r * chunk[j] + i] += on->grad[r * orow + start[j] + i];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization and activations
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
    std::size_t outer = 1, inner = 1;
    const std::size_t len = x.shape()[ax];
    for (std::size_t d = 0; d < ax; ++d) {
        outer *= x.shape()[d];
    }
    for (std::size_t d = ax + 1; d < x.rank(); ++d) {
        inner *= x.shape()[d];
    }
    BasicTensor<T> out(x.shape());
    auto xd = x.data();
    auto o = out.data();
    for (std::size_t r = 0; r < outer; ++r) {
        for (std::size_t c = 0; c < inner; ++c) {
            const std::size_t base = r * len * inner + c;
            T mx = xd[base];
            for (std::size_t i = 1; i < len; ++i) {
                mx = std::max(mx, xd[base + i * inner]);
            }
            T s{};
            for (std::size_t i = 0; i < len; ++i) {
                const T e = std::exp(xd[base + i * inner] - mx);
                o[base + i * inner] = e;
                s += e;
            }
            for (std::size_t i = 0; i < len; ++i) {
                o[base + i * inner] /= s;
            }
        }
    }
    detail::note_cost(OpClass::pointwise, x.numel());
    if (detail::should_record<T>({&x})) {
        auto xn = x.node(), on = out.node();
        detail::record<T>(out, {&x}, [xn, on, outer, inner, len] {
            if (!wants_grad(xn)) {
                return;
            }
            const auto& y = on->data;
            const auto& g = on->grad;
            for (std::size_t r = 0; r < outer; ++r) {
                for (std::size_t c = 0; c < inner; ++c) {
                    const std::size_t base = r * len * inner + c;
                    T dot{};
                    for (std::size_t i = 0; i < len; ++i) {
                        dot += g[base + i * inner] * y[base + i * inner];
                    }
                    for (std::size_t i = 0; i < len; ++i) {
                        const std::size_t j = base + i * inner;
                        xn->grad[j] += y[j] * (g[j] - dot);
                    }
                }
            }
        });
    }
    detail::check_finite(out, "softmax");
    return out;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps) {
    if (x.rank() < 1) {
        throw DimensionError("layer_norm: input must have rank >= 1");
    }
    const std::size_t c = x.dim(-1);
    if (gamma.numel() != c || beta.numel() != c) {
        throw DimensionError("layer_norm: gamma/beta extent differs from last axis " + std::to_string(c));
    }
    if (!(eps > T{0})) {
        throw ConfigError("layer_norm: eps must be positive");
    }
    const std::size_t rows = x.numel() / c;
    BasicTensor<T> out(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto rstd = std::make_shared<std::vector<T>>(rows);
    auto xd = x.data();
    auto o = out.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xd.data() + r * c;
        T mu{};
        for (std::size_t i = 0; i < c; ++i) {
            mu += row[i];
        }
        mu /= static_cast<T>(c);
        T var{};
        for (std::size_t i = 0; i < c; ++i) {
            var += (row[i] - mu) * (row[i] - mu);
        }
        var /= static_cast<T>(c);
        const T rs = T{1} / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t i = 0; i < c; ++i) {
            const T h = (row[i] - mu) * rs;
            (*xhat)[r * c + i] = h;
            o[r * c + i] = h * gd[i] + bd[i];
        }
    }
    detail::note_cost(OpClass::pointwise, x.numel());
    if (detail::should_record<T>({&x, &gamma, &beta})) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        detail::record<T>(out, {&x, &gamma, &beta}, [xn, gn, bn, on, xhat, rstd, rows, c] {
            const auto& g = on->grad;
            const bool gx = wants_grad(xn);
            const bool gg = wants_grad(gn);
            const bool gb = wants_grad(bn);
            std::vector<T> dh(c);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gr = g.data() + r * c;
                const T* hr = xhat->data() + r * c;
                T mean_dh{}, mean_dh_h{};
                for (std::size_t i = 0; i < c; ++i) {
                    if (gg) {
                        gn->grad[i] += gr[i] * hr[i];
                    }
                    if (gb) {
                        bn->grad[i] += gr[i];
                    }
                    dh[i] = gr[i] * gn->data[i];
                    mean_dh += dh[i];
                    mean_dh_h += dh[i] * hr[i];
                }
                if (!gx) {
                    continue;
                }
                mean_dh /= static_cast<T>(c);
                mean_dh_h /= static_cast<T>(c);
                for (std::size_t i = 0; i < c; ++i) {
                    xn->grad[r * c + i] += (*rstd)[r] * (dh[i] - mean_dh - hr[i] * mean_dh_h);
                }
            }
        });
    }
    detail::check_finite(out, "layer_norm");
    return out;
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
    BasicTensor<T> out(x.shape());
    auto xd = x.data();
    auto o = out.data();
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = T{0.5} * xd[i] * (T{1} + std::erf(xd[i] * inv_sqrt2));
    }
    detail::note_cost(OpClass::pointwise, x.numel());
    if (detail::should_record<T>({&x})) {
        auto xn = x.node(), on = out.node();
        detail::record<T>(out, {&x}, [xn, on, inv_sqrt2] {
            if (!wants_grad(xn)) {
                return;
            }
            const T inv_sqrt_2pi = static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                const T v = xn->data[i];
                const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
                const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
                xn->grad[i] += on->grad[i] * (cdf + v * pdf);
            }
        });
    }
    detail::check_finite(out, "gelu");
    return out;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace {

struct ConvGeom {
    std::size_t batch, cin, h, w, cout, k, stride, pad, groups, ho, wo;
    std::size_t cin_g() const { return cin / groups; }
    std::size_t cout_g() const { return cout / groups; }
    bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
    bool depthwise() const { return groups == cin && cin == cout; }
};

// cols[(c*k + ki)*k + kj][oy*wo + ox] for the channel slice [c0, c0 + cin_g).
template <typename T>
void im2col(const ConvGeom& g, const T* x, std::size_t c0, T* cols) {
    const std::size_t hw_out = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin_g(); ++c) {
        const T* plane = x + (c0 + c) * g.h * g.w;
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                T* row = cols + ((c * g.k + ki) * g.k + kj) * hw_out;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill_n(dst, g.wo, T{});
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{} : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const ConvGeom& g, const T* cols, std::size_t c0, T* dx) {
    const std::size_t hw_out = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin_g(); ++c) {
        T* plane = dx + (c0 + c) * g.h * g.w;
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const T* row = cols + ((c * g.k + ki) * g.k + kj) * hw_out;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        continue;
                    }
                    T* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
                            dst[ix] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

// Output columns ox with 0 <= ox*stride + kj - pad < w.
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeom& g, std::size_t kj) {
    const std::size_t lo = kj >= g.pad ? 0 : (g.pad - kj + g.stride - 1) / g.stride;
    if (g.w + g.pad <= kj) {
        return {0, 0};
    }
    const std::size_t lim = g.w + g.pad - kj;  // ox*stride < lim
    const std::size_t hi = std::min(g.wo, (lim + g.stride - 1) / g.stride);
    return {std::min(lo, hi), hi};
}

template <typename T>
void depthwise_forward(const ConvGeom& g, const T* x, const T* w, T* y) {
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t c = 0; c < g.cin; ++c) {
            const T* plane = x + (b * g.cin + c) * g.h * g.w;
            const T* kern = w + c * g.k * g.k;
            T* out = y + (b * g.cout + c) * g.ho * g.wo;
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
                for (std::size_t ki = 0; ki < g.k; ++ki) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    T* dst = out + oy * g.wo;
                    for (std::size_t kj = 0; kj < g.k; ++kj) {
                        const T wv = kern[ki * g.k + kj];
                        const auto [lo, hi] = valid_columns(g, kj);
                        for (std::size_t ox = lo; ox < hi; ++ox) {
                            dst[ox] += wv * src[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void depthwise_backward(const ConvGeom& g, const T* x, const T* w, const T* gy, T* dx, T* dw) {
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t c = 0; c < g.cin; ++c) {
            const T* plane = x + (b * g.cin + c) * g.h * g.w;
            const T* kern = w + c * g.k * g.k;
            const T* go = gy + (b * g.cout + c) * g.ho * g.wo;
            T* dplane = dx ? dx + (b * g.cin + c) * g.h * g.w : nullptr;
            T* dkern = dw ? dw + c * g.k * g.k : nullptr;
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
                for (std::size_t ki = 0; ki < g.k; ++ki) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        continue;
                    }
                    const std::size_t row = static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t kj = 0; kj < g.k; ++kj) {
                        const T wv = kern[ki * g.k + kj];
                        T acc{};
                        for (std::size_t ox = 0; ox < g.wo; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
                                const T gv = go[oy * g.wo + ox];
                                acc += gv * plane[row + static_cast<std::size_t>(ix)];
                                if (dplane) {
                                    dplane[row + static_cast<std::size_t>(ix)] += gv * wv;
                                }
                            }
                        }
                        if (dkern) {
                            dkern[ki * g.k + kj] += acc;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const std::type_identity_t<BasicTensor<T>>* bias, Conv2dOptions opt) {
    if (x.rank() != 4 || w.rank() != 4) {
        throw DimensionError("conv2d: expected 4-d input and weight, got " + shape_str(x.shape()) + " and " +
                             shape_str(w.shape()));
    }
    if (opt.groups == 0 || opt.stride == 0) {
        throw ConfigError("conv2d: groups and stride must be positive");
    }
    ConvGeom g{};
    g.batch = x.dim(0);
    g.cin = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.cout = w.dim(0);
    g.k = w.dim(2);
    g.stride = opt.stride;
    g.pad = opt.pad;
    g.groups = opt.groups;
    if (g.cin % g.groups != 0 || g.cout % g.groups != 0) {
        throw ConfigError("conv2d: channels " + std::to_string(g.cin) + "->" + std::to_string(g.cout) +
                          " not divisible by groups " + std::to_string(g.groups));
    }
    if (w.dim(1) != g.cin_g() || w.dim(3) != g.k) {
        throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                             shape_str(x.shape()));
    }
    if (g.k % 2 == 0) {
        throw ConfigError("conv2d: kernel size must be odd");
    }
    if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
        throw DimensionError("conv2d: kernel larger than padded input");
    }
    if (bias != nullptr && bias->numel() != g.cout) {
        throw DimensionError("conv2d: bias extent differs from output channels");
    }
    g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

    BasicTensor<T> out(Shape{g.batch, g.cout, g.ho, g.wo});
    const T* xd = x.data().data();
    const T* wd = w.data().data();
    T* yd = out.data().data();
    const std::size_t hw_out = g.ho * g.wo;
    const std::size_t ck = g.cin_g() * g.k * g.k;
    if (g.depthwise()) {
        depthwise_forward(g, xd, wd, yd);
    } else {
        std::vector<T> cols(g.pointwise() ? 0 : ck * hw_out);
        for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t grp = 0; grp < g.groups; ++grp) {
                const T* src;
                if (g.pointwise()) {
                    src = xd + (b * g.cin + grp * g.cin_g()) * hw_out;
                } else {
                    im2col(g, xd + b * g.cin * g.h * g.w, grp * g.cin_g(), cols.data());
                    src = cols.data();
                }
                kernels::mm_acc(g.cout_g(), ck, hw_out, wd + grp * g.cout_g() * ck, src,
                                yd + (b * g.cout + grp * g.cout_g()) * hw_out);
            }
        }
    }
    if (bias != nullptr) {
        auto bd = bias->data();
        for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t c = 0; c < g.cout; ++c) {
                T* plane = yd + (b * g.cout + c) * hw_out;
                for (std::size_t i = 0; i < hw_out; ++i) {
                    plane[i] += bd[c];
                }
            }
        }
    }
    detail::note_cost(OpClass::contraction, static_cast<std::uint64_t>(g.batch) * hw_out * g.cout * ck);

    if (detail::should_record<T>({&x, &w, bias})) {
        auto xn = x.node(), wn = w.node(), on = out.node();
        auto bn = bias ? bias->node() : NodePtr<T>{};
        detail::record<T>(out, {&x, &w, bias}, [xn, wn, bn, on, g] {
            const T* gy = on->grad.data();
            const std::size_t hw = g.ho * g.wo;
            const std::size_t ckk = g.cin_g() * g.k * g.k;
            const bool gx = wants_grad(xn);
            const bool gw = wants_grad(wn);
            if (bn && wants_grad(bn)) {
                for (std::size_t b = 0; b < g.batch; ++b) {
                    for (std::size_t c = 0; c < g.cout; ++c) {
                        const T* plane = gy + (b * g.cout + c) * hw;
                        T s{};
                        for (std::size_t i = 0; i < hw; ++i) {
                            s += plane[i];
                        }
                        bn->grad[c] += s;
                    }
                }
            }
            if (!gx && !gw) {
                return;
            }
            if (g.depthwise()) {
                depthwise_backward(g, xn->data.data(), wn->data.data(), gy, gx ? xn->grad.data() : nullptr,
                                   gw ? wn->grad.data() : nullptr);
                return;
            }
            std::vector<T> cols(ckk * hw);
            std::vector<T> dcols(g.pointwise() ? 0 : ckk * hw);
            for (std::size_t b = 0; b < g.batch; ++b) {
                for (std::size_t grp = 0; grp < g.groups; ++grp) {
                    const T* gyg = gy + (b * g.cout + grp * g.cout_g()) * hw;
                    const T* wg = wn->data.data() + grp * g.cout_g() * ckk;
                    const std::size_t xoff = (b * g.cin + grp * g.cin_g()) * hw;
                    if (gw) {
                        const T* src;
                        if (g.pointwise()) {
                            src = xn->data.data() + xoff;
                        } else {
                            im2col(g, xn->data.data() + b * g.cin * g.h * g.w, grp * g.cin_g(), cols.data());
                            src = cols.data();
                        }
                        kernels::mm_bt_acc(g.cout_g(), ckk, hw, gyg, src, wn->grad.data() + grp * g.cout_g() * ckk);
                    }
                    if (gx) {
                        if (g.pointwise()) {
                            kernels::mm_at_acc(g.cout_g(), ckk, hw, wg, gyg, xn->grad.data() + xoff);
                        } else {
                            std::fill(dcols.begin(), dcols.end(), T{});
                            kernels::mm_at_acc(g.cout_g(), ckk, hw, wg, gyg, dcols.data());
                            col2im_acc(g, dcols.data(), grp * g.cin_g(), xn->grad.data() + b * g.cin * g.h * g.w);
                        }
                    }
                }
            }
        });
    }
    detail::check_finite(out, "conv2d");
    return out;
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

std::size_t pool_bin_begin(std::size_t i, std::size_t in, std::size_t out) {
    return (i * in) / out;
}

std::size_t pool_bin_end(std::size_t i, std::size_t in, std::size_t out) {
    return ((i + 1) * in + out - 1) / out;
}

template <typename T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 4) {
        throw DimensionError("adaptive_avg_pool2d: expected [B,C,H,W], got " + shape_str(x.shape()));
    }
    if (out_h == 0 || out_w == 0) {
        throw ConfigError("adaptive_avg_pool2d: zero output extent");
    }
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (out_h > h || out_w > w) {
        throw ConfigError("adaptive_avg_pool2d: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                          " larger than input " + std::to_string(h) + "x" + std::to_string(w));
    }
    if (out_h == h && out_w == w) {
        return reshape(x, x.shape());
    }
    BasicTensor<T> out(Shape{x.dim(0), x.dim(1), out_h, out_w});
    auto xd = x.data();
    auto o = out.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < out_h; ++i) {
            const std::size_t r0 = pool_bin_begin(i, h, out_h), r1 = pool_bin_end(i, h, out_h);
            for (std::size_t j = 0; j < out_w; ++j) {
                const std::size_t c0 = pool_bin_begin(j, w, out_w), c1 = pool_bin_end(j, w, out_w);
                T s{};
                for (std::size_t r = r0; r < r1; ++r) {
                    for (std::size_t c = c0; c < c1; ++c) {
                        s += xd[(p * h + r) * w + c];
                    }
                }
                o[(p * out_h + i) * out_w + j] = s / static_cast<T>((r1 - r0) * (c1 - c0));
            }
        }
    }
    detail::note_cost(OpClass::pooling, x.numel());
    if (detail::should_record<T>({&x})) {
        auto xn = x.node(), on = out.node();
        detail::record<T>(out, {&x}, [xn, on, planes, h, w, out_h, out_w] {
            if (!wants_grad(xn)) {
                return;
            }
            for (std::size_t p = 0; p < planes; ++p) {
                for (std::size_t i = 0; i < out_h; ++i) {
                    const std::size_t r0 = pool_bin_begin(i, h, out_h), r1 = pool_bin_end(i, h, out_h);
                    for (std::size_t j = 0; j < out_w; ++j) {
                        const std::size_t c0 = pool_bin_begin(j, w, out_w), c1 = pool_bin_end(j, w, out_w);
                        const T g = on->grad[(p * out_h + i) * out_w + j] / static_cast<T>((r1 - r0) * (c1 - c0));
                        for (std::size_t r = r0; r < r1; ++r) {
                            for (std::size_t c = c0; c < c1; ++c) {
                                xn->grad[(p * h + r) * w + c] += g;
                            }
                        }
                    }
                }
            }
        });
    }
    detail::check_finite(out, "adaptive_avg_pool2d");
    return out;
}

namespace {

struct Tap {
    std::size_t i0, i1;
    double frac;  // weight of i1
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        if (src < 0) {
            src = 0;
        }
        auto i0 = static_cast<std::size_t>(src);
        if (i0 > in - 1) {
            i0 = in - 1;
        }
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        taps[o] = Tap{i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 4) {
        throw DimensionError("bilinear_resize: expected [B,C,H,W], got " + shape_str(x.shape()));
    }
    if (out_h == 0 || out_w == 0) {
        throw ConfigError("bilinear_resize: zero output extent");
    }
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (out_h == h && out_w == w) {
        return reshape(x, x.shape());
    }
    auto ty = std::make_shared<std::vector<Tap>>(bilinear_taps(h, out_h));
    auto tx = std::make_shared<std::vector<Tap>>(bilinear_taps(w, out_w));
    BasicTensor<T> out(Shape{x.dim(0), x.dim(1), out_h, out_w});
    auto xd = x.data();
    auto o = out.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* plane = xd.data() + p * h * w;
        for (std::size_t i = 0; i < out_h; ++i) {
            const Tap& a = (*ty)[i];
            const T fy = static_cast<T>(a.frac);
            for (std::size_t j = 0; j < out_w; ++j) {
                const Tap& b = (*tx)[j];
                const T fx = static_cast<T>(b.frac);
                const T top = plane[a.i0 * w + b.i0] * (T{1} - fx) + plane[a.i0 * w + b.i1] * fx;
                const T bot = plane[a.i1 * w + b.i0] * (T{1} - fx) + plane[a.i1 * w + b.i1] * fx;
                o[(p * out_h + i) * out_w + j] = top * (T{1} - fy) + bot * fy;
            }
        }
    }
    detail::note_cost(OpClass::resample, 4 * out.numel());
    if (detail::should_record<T>({&x})) {
        auto xn = x.node(), on = out.node();
        detail::record<T>(out, {&x}, [xn, on, ty, tx, planes, h, w, out_h, out_w] {
            if (!wants_grad(xn)) {
                return;
            }
            for (std::size_t p = 0; p < planes; ++p) {
                T* dplane = xn->grad.data() + p * h * w;
                for (std::size_t i = 0; i < out_h; ++i) {
                    const Tap& a = (*ty)[i];
                    const T fy = static_cast<T>(a.frac);
                    for (std::size_t j = 0; j < out_w; ++j) {
                        const Tap& b = (*tx)[j];
                        const T fx = static_cast<T>(b.frac);
                        const T g = on->grad[(p * out_h + i) * out_w + j];
                        dplane[a.i0 * w + b.i0] += g * (T{1} - fy) * (T{1} - fx);
                        dplane[a.i0 * w + b.i1] += g * (T{1} - fy) * fx;
                        dplane[a.i1 * w + b.i0] += g * fy * (T{1} - fx);
                        dplane[a.i1 * w + b.i1] += g * fy * fx;
                    }
                }
            }
        });
    }
    detail::check_finite(out, "bilinear_resize");
    return out;
}

#define LRF_INSTANTIATE_OPS(T)                                                                                 \
    template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);                              \
    template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                              \
    template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                                                \
    template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                           \
    template BasicTensor<T> reshape<T>(const BasicTensor<T>&, Shape);                                          \
    template BasicTensor<T> permute<T>(const BasicTensor<T>&, const std::vector<int>&);                        \
    template BasicTensor<T> concat<T>(const std::vector<BasicTensor<T>>&, int);                                \
    template BasicTensor<T> softmax<T>(const BasicTensor<T>&, int);                                            \
    template BasicTensor<T> layer_norm<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                          T);                                                                  \
    template BasicTensor<T> gelu<T>(const BasicTensor<T>&);                                                    \
    template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*,     \
                                      Conv2dOptions);                                                          \
    template BasicTensor<T> adaptive_avg_pool2d<T>(const BasicTensor<T>&, std::size_t, std::size_t);           \
    template BasicTensor<T> bilinear_resize<T>(const BasicTensor<T>&, std::size_t, std::size_t);

LRF_INSTANTIATE_OPS(float)
LRF_INSTANTIATE_OPS(double)

}  // namespace lrf

namespace lrf {

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const std::type_identity_t<BasicTensor<T>>* bias) {
    auto y = matmul(x, weight);
    return bias != nullptr ? add(y, *bias) : y;
}

template <typename T>
BasicTensor<T> map_to_tokens(const BasicTensor<T>& x) {
    if (x.rank() != 4) {
        throw DimensionError("map_to_tokens: expected [B,C,H,W], got " + shape_str(x.shape()));
    }
    auto t = permute(x, {0, 2, 3, 1});
    return reshape(t, {x.dim(0), x.dim(2) * x.dim(3), x.dim(1)});
}

template <typename T>
BasicTensor<T> tokens_to_map(const BasicTensor<T>& x, std::size_t h, std::size_t w) {
    if (x.rank() != 3 || x.dim(1) != h * w) {
        throw DimensionError("tokens_to_map: " + shape_str(x.shape()) + " is not [B," + std::to_string(h * w) +
                             ",C]");
    }
    auto t = reshape(x, {x.dim(0), h, w, x.dim(2)});
    return permute(t, {0, 3, 1, 2});
}

template BasicTensor<float> linear<float>(const Tensor&, const Tensor&, const Tensor*);
template BasicTensor<double> linear<double>(const Tensor64&, const Tensor64&, const Tensor64*);
template BasicTensor<float> map_to_tokens<float>(const Tensor&);
template BasicTensor<double> map_to_tokens<double>(const Tensor64&);
template BasicTensor<float> tokens_to_map<float>(const Tensor&, std::size_t, std::size_t);
template BasicTensor<double> tokens_to_map<double>(const Tensor64&, std::size_t, std::size_t);

}  // namespace lrf
