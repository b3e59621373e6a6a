#include "lrformer/attention.hpp"

#include <algorithm>
#include <cmath>

#include "lrformer/cost.hpp"
#include "lrformer/errors.hpp"

namespace lrf {

std::string to_string(AttentionScheme s) {
    switch (s) {
        case AttentionScheme::vanilla:
            return "vanilla";
        case AttentionScheme::downsampled:
            return "downsampled";
        case AttentionScheme::lrsa:
            return "lrsa";
    }
    return "?";
}

AttentionScheme parse_attention_scheme(const std::string& name) {
    if (name == "vanilla") {
        return AttentionScheme::vanilla;
    }
    if (name == "downsampled") {
        return AttentionScheme::downsampled;
    }
    if (name == "lrsa") {
        return AttentionScheme::lrsa;
    }
    throw ConfigError("unknown attention scheme '" + name + "'");
}

void AttentionConfig::validate() const {
    if (channels == 0 || head_dim == 0 || channels % head_dim != 0) {
        throw ConfigError("attention: channels " + std::to_string(channels) + " not divisible by head_dim " +
                          std::to_string(head_dim));
    }
    if (pooled.h == 0 || pooled.w == 0) {
        throw ConfigError("attention: pooled grid must be at least 1x1");
    }
    if (scheme == AttentionScheme::downsampled && downsample_ratio == 0) {
        throw ConfigError("attention: downsample ratio must be >= 1");
    }
    if (kv_pyramid) {
        if (pyramid_sizes.empty()) {
            throw ConfigError("attention: kv_pyramid enabled with no pyramid sizes");
        }
        for (std::size_t i = 0; i < pyramid_sizes.size(); ++i) {
            const Grid& g = pyramid_sizes[i];
            if (g.h == 0 || g.w == 0 || g.h > pooled.h || g.w > pooled.w) {
                throw ConfigError("attention: pyramid grid exceeds the pooled grid");
            }
            if (i > 0 && !(g.tokens() < pyramid_sizes[i - 1].tokens())) {
                throw ConfigError("attention: pyramid sizes must be strictly decreasing");
            }
        }
    }
}

std::vector<Grid> segmentation_pyramid() {
    return {{12, 12}, {8, 8}, {6, 6}, {4, 4}};
}

std::vector<Grid> classification_pyramid() {
    return {{6, 6}, {3, 3}, {2, 2}};
}

std::vector<Grid> halving_pyramid(Grid pooled) {
    std::vector<Grid> out{pooled};
    for (int i = 0; i < 2; ++i) {
        const Grid& last = out.back();
        Grid next{std::max<std::size_t>(1, last.h / 2), std::max<std::size_t>(1, last.w / 2)};
        if (next.tokens() >= last.tokens()) {
            break;
        }
        out.push_back(next);
    }
    return out;
}

namespace {

template <typename T>
BasicTensor<T> project(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
    CostContext ctx(CostCategory::attn_proj, true);
    return linear(x, w, &b);
}

template <typename T>
void check_params(const AttentionParams<T>& p, std::size_t c) {
    for (const auto* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
        if (w->shape() != Shape{c, c}) {
            throw DimensionError("attention: projection weight " + shape_str(w->shape()) + " is not " +
                                 std::to_string(c) + "x" + std::to_string(c));
        }
    }
}

}  // namespace

template <typename T>
BasicTensor<T> mhsa_core(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         std::size_t heads, AttentionTrace* trace) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
        throw DimensionError("mhsa_core: expected [B,N,C] tensors");
    }
    const std::size_t b = q.dim(0), nq = q.dim(1), c = q.dim(2), nkv = k.dim(1);
    if (k.shape() != v.shape() || k.dim(0) != b || k.dim(2) != c) {
        throw DimensionError("mhsa_core: incompatible Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                             ", V " + shape_str(v.shape()));
    }
    if (heads == 0 || c % heads != 0) {
        throw ConfigError("mhsa_core: channels " + std::to_string(c) + " not divisible by " + std::to_string(heads) +
                          " heads");
    }
    if (nq == 0 || nkv == 0) {
        throw DimensionError("mhsa_core: empty token set");
    }
    if (trace != nullptr) {
        trace->q_tokens = nq;
        trace->kv_tokens = nkv;
    }
    const std::size_t dh = c / heads;
    CostContext ctx(CostCategory::attn_core, true);
    auto qh = permute(reshape(q, {b, nq, heads, dh}), {0, 2, 1, 3});   // [B,h,Nq,dh]
    auto kt = permute(reshape(k, {b, nkv, heads, dh}), {0, 2, 3, 1});  // [B,h,dh,Nkv]
    auto vh = permute(reshape(v, {b, nkv, heads, dh}), {0, 2, 1, 3});  // [B,h,Nkv,dh]
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    auto scores = scale(matmul(qh, kt), inv_sqrt_dk);
    auto weights = softmax(scores, -1);
    auto out = matmul(weights, vh);  // [B,h,Nq,dh]
    return reshape(permute(out, {0, 2, 1, 3}), {b, nq, c});
}

template <typename T>
BasicTensor<T> attend_vanilla(const BasicTensor<T>& tokens, const AttentionParams<T>& p, std::size_t heads,
                              AttentionTrace* trace) {
    if (tokens.rank() != 3) {
        throw DimensionError("attend_vanilla: expected [B,N,C], got " + shape_str(tokens.shape()));
    }
    check_params(p, tokens.dim(2));
    auto q = project(tokens, p.wq, p.bq);
    auto k = project(tokens, p.wk, p.bk);
    auto v = project(tokens, p.wv, p.bv);
    auto o = mhsa_core(q, k, v, heads, trace);
    if (trace != nullptr) {
        trace->pooled = false;
    }
    return project(o, p.wo, p.bo);
}

template <typename T>
BasicTensor<T> attend_downsampled(const BasicTensor<T>& tokens, std::size_t h, std::size_t w,
                                  const AttentionParams<T>& p, std::size_t heads, std::size_t s_r,
                                  AttentionTrace* trace) {
    if (s_r == 0) {
        throw ConfigError("attend_downsampled: ratio must be >= 1");
    }
    if (tokens.rank() != 3 || tokens.dim(1) != h * w) {
        throw DimensionError("attend_downsampled: tokens " + shape_str(tokens.shape()) + " do not match " +
                             std::to_string(h) + "x" + std::to_string(w));
    }
    check_params(p, tokens.dim(2));
    const std::size_t gh = (h + s_r - 1) / s_r, gw = (w + s_r - 1) / s_r;
    BasicTensor<T> kv_src = tokens;
    if (gh != h || gw != w) {
        CostContext ctx(CostCategory::attn_proj, true);
        kv_src = map_to_tokens(adaptive_avg_pool2d(tokens_to_map(tokens, h, w), gh, gw));
    }
    auto q = project(tokens, p.wq, p.bq);
    auto k = project(kv_src, p.wk, p.bk);
    auto v = project(kv_src, p.wv, p.bv);
    auto o = mhsa_core(q, k, v, heads, trace);
    if (trace != nullptr) {
        trace->pooled = gh != h || gw != w;
    }
    return project(o, p.wo, p.bo);
}

template <typename T>
BasicTensor<T> pyramid_pool_tokens(const BasicTensor<T>& f, const std::vector<Grid>& sizes) {
    if (sizes.empty()) {
        throw ConfigError("pyramid_pool_tokens: no pyramid sizes");
    }
    if (f.rank() != 4) {
        throw DimensionError("pyramid_pool_tokens: expected [B,C,H,W], got " + shape_str(f.shape()));
    }
    std::vector<BasicTensor<T>> levels;
    levels.reserve(sizes.size());
    for (const Grid& g : sizes) {
        const std::size_t gh = std::min(g.h, f.dim(2)), gw = std::min(g.w, f.dim(3));
        levels.push_back(map_to_tokens(adaptive_avg_pool2d(f, gh, gw)));
    }
    return levels.size() == 1 ? levels.front() : concat(levels, 1);
}

template <typename T>
BasicTensor<T> attend_lrsa(const BasicTensor<T>& f, const AttentionParams<T>& p, const AttentionConfig& cfg,
                           AttentionTrace* trace) {
    if (f.rank() != 4) {
        throw DimensionError("attend_lrsa: expected [B,C,H,W], got " + shape_str(f.shape()));
    }
    if (f.dim(1) != cfg.channels) {
        throw DimensionError("attend_lrsa: input has " + std::to_string(f.dim(1)) + " channels, config " +
                             std::to_string(cfg.channels));
    }
    const std::size_t h = f.dim(2), w = f.dim(3);
    CostContext ctx(CostCategory::attn_proj, true);
    if (h * w <= cfg.pooled.tokens()) {
        auto out = attend_vanilla(map_to_tokens(f), p, cfg.heads(), trace);
        return tokens_to_map(out, h, w);
    }
    const std::size_t gh = std::min(cfg.pooled.h, h), gw = std::min(cfg.pooled.w, w);
    auto pooled_map = adaptive_avg_pool2d(f, gh, gw);
    auto pooled = map_to_tokens(pooled_map);
    BasicTensor<T> kv_src = pooled;
    if (cfg.kv_pyramid) {
        kv_src = pyramid_pool_tokens(cfg.pyramid_source == PyramidSource::input ? f : pooled_map, cfg.pyramid_sizes);
    }
    auto q = project(pooled, p.wq, p.bq);
    auto k = project(kv_src, p.wk, p.bk);
    auto v = project(kv_src, p.wv, p.bv);
    auto o = project(mhsa_core(q, k, v, cfg.heads(), trace), p.wo, p.bo);
    if (trace != nullptr) {
        trace->pooled = true;
    }
    return bilinear_resize(tokens_to_map(o, gh, gw), h, w);
}

template <typename T>
BasicTensor<T> attend(const BasicTensor<T>& f, const AttentionParams<T>& p, const AttentionConfig& cfg,
                      AttentionTrace* trace) {
    switch (cfg.scheme) {
        case AttentionScheme::lrsa:
            return attend_lrsa(f, p, cfg, trace);
        case AttentionScheme::vanilla:
            return tokens_to_map(attend_vanilla(map_to_tokens(f), p, cfg.heads(), trace), f.dim(2), f.dim(3));
        case AttentionScheme::downsampled:
            return tokens_to_map(attend_downsampled(map_to_tokens(f), f.dim(2), f.dim(3), p, cfg.heads(),
                                                    cfg.downsample_ratio, trace),
                                 f.dim(2), f.dim(3));
    }
    throw ConfigError("attend: unknown scheme");
}

#define LRF_INSTANTIATE_ATTENTION(T)                                                                            \
    template BasicTensor<T> mhsa_core<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,   \
                                         std::size_t, AttentionTrace*);                                         \
    template BasicTensor<T> attend_vanilla<T>(const BasicTensor<T>&, const AttentionParams<T>&, std::size_t,    \
                                              AttentionTrace*);                                                 \
    template BasicTensor<T> attend_downsampled<T>(const BasicTensor<T>&, std::size_t, std::size_t,              \
                                                  const AttentionParams<T>&, std::size_t, std::size_t,          \
                                                  AttentionTrace*);                                             \
    template BasicTensor<T> pyramid_pool_tokens<T>(const BasicTensor<T>&, const std::vector<Grid>&);            \
    template BasicTensor<T> attend_lrsa<T>(const BasicTensor<T>&, const AttentionParams<T>&,                    \
                                           const AttentionConfig&, AttentionTrace*);                            \
    template BasicTensor<T> attend<T>(const BasicTensor<T>&, const AttentionParams<T>&, const AttentionConfig&, \
                                      AttentionTrace*);

LRF_INSTANTIATE_ATTENTION(float)
LRF_INSTANTIATE_ATTENTION(double)

}  // namespace lrf
