#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lrformer/tensor.hpp"

namespace lrf {

enum class AttentionScheme { vanilla, downsampled, lrsa };

// Where the K/V pyramid takes its input from.
enum class PyramidSource { input, pooled };

std::string to_string(AttentionScheme s);
AttentionScheme parse_attention_scheme(const std::string& name);

struct Grid {
    std::size_t h = 1;
    std::size_t w = 1;

    std::size_t tokens() const { return h * w; }
    bool operator==(const Grid&) const = default;
};

struct AttentionConfig {
    std::size_t channels = 0;
    std::size_t head_dim = 0;
    AttentionScheme scheme = AttentionScheme::lrsa;
    Grid pooled{16, 16};
    std::size_t downsample_ratio = 1;  // downsampled scheme only
    bool kv_pyramid = false;
    std::vector<Grid> pyramid_sizes;
    PyramidSource pyramid_source = PyramidSource::input;

    std::size_t heads() const { return channels / head_dim; }
    // Throws ConfigError when an invariant does not hold.
    void validate() const;
};

// K/V pyramid grids whose token total stays close to the pooled size, so the
// score matrix is about m x m.
std::vector<Grid> segmentation_pyramid();    // 12², 8², 6², 4² (260 tokens)
std::vector<Grid> classification_pyramid();  // 6², 3², 2² (49 tokens)
// Halving pyramid starting at the pooled grid: g, g/2, g/4.
std::vector<Grid> halving_pyramid(Grid pooled);

// Projection weights are stored [C_in, C_out] (tokens multiply from the left).
template <typename T>
struct AttentionParams {
    BasicTensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

// Shapes seen by the attention core during the last call.
struct AttentionTrace {
    std::size_t q_tokens = 0;
    std::size_t kv_tokens = 0;
    bool pooled = false;
};

// Per-head scaled dot-product attention over [B, N, C] token tensors, heads
// concatenated back to C. No output projection.
template <typename T>
BasicTensor<T> mhsa_core(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         std::size_t heads, AttentionTrace* trace = nullptr);

// Full-resolution attention over tokens [B, N, C].
template <typename T>
BasicTensor<T> attend_vanilla(const BasicTensor<T>& tokens, const AttentionParams<T>& p, std::size_t heads,
                              AttentionTrace* trace = nullptr);

// Queries at full resolution; keys/values from the (h, w) map average-pooled
// by ratio s_r to ceil(h/s_r) x ceil(w/s_r).
template <typename T>
BasicTensor<T> attend_downsampled(const BasicTensor<T>& tokens, std::size_t h, std::size_t w,
                                  const AttentionParams<T>& p, std::size_t heads, std::size_t s_r,
                                  AttentionTrace* trace = nullptr);

// Adaptive-average-pools f: [B, C, H, W] to each grid and concatenates the
// flattened results along the token axis: [B, sum(g.h*g.w), C]. Grids larger
// than the input are clamped to it.
template <typename T>
BasicTensor<T> pyramid_pool_tokens(const BasicTensor<T>& f, const std::vector<Grid>& sizes);

// Low-resolution self-attention over a [B, C, H, W] map: pool to cfg.pooled,
// attend there, project, and bilinearly resize back to (H, W). Maps with
// H*W <= pooled tokens skip pooling and run vanilla attention.
template <typename T>
BasicTensor<T> attend_lrsa(const BasicTensor<T>& f, const AttentionParams<T>& p, const AttentionConfig& cfg,
                           AttentionTrace* trace = nullptr);

// Dispatches on cfg.scheme; input and output are [B, C, H, W].
template <typename T>
BasicTensor<T> attend(const BasicTensor<T>& f, const AttentionParams<T>& p, const AttentionConfig& cfg,
                      AttentionTrace* trace = nullptr);

}  // namespace lrf
