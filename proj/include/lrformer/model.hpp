#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lrformer/attention.hpp"
#include "lrformer/tensor.hpp"

namespace lrf {

enum class Task { segmentation, classification };

std::string to_string(Task t);
Task parse_task(const std::string& name);

struct StageSpec {
    std::size_t channels = 0;
    std::size_t head_dim = 0;
    std::size_t ffn_ratio = 4;
    std::size_t depth = 1;
};

struct VariantSpec {
    std::string name;
    std::array<StageSpec, 4> stages{};
    Task task = Task::segmentation;
    std::size_t num_classes = 150;
    std::size_t in_channels = 3;

    // Segmentation decoder.
    std::size_t decoder_width = 0;
    std::size_t decoder_head_dim = 32;
    std::size_t decoder_ffn_ratio = 4;

    // Classification head: pool -> LN -> [linear -> GELU] -> linear.
    // head_hidden = 0 drops the hidden layer.
    std::size_t head_hidden = 1280;

    // Attention settings shared by every encoder block.
    AttentionScheme scheme = AttentionScheme::lrsa;
    Grid pooled{16, 16};
    bool kv_pyramid = true;
    std::vector<Grid> pyramid_sizes;
    PyramidSource pyramid_source = PyramidSource::input;
    // Per-stage ratio used only when scheme == downsampled.
    std::array<std::size_t, 4> downsample_ratios{8, 4, 2, 1};

    bool cpe = true;         // 3x3 depthwise conv with residual before attention
    bool ffn_dwconv = true;  // 3x3 depthwise conv with residual inside the FFN
    bool layer_scale = false;
    double layer_scale_init = 1e-6;

    void validate() const;
    AttentionConfig stage_attention(std::size_t stage) const;
    AttentionConfig decoder_attention() const;
    std::size_t total_depth() const;
};

// Registered names: T, S, B, L, XL, micro.
std::vector<std::string> variant_names();
// Registered spec with task defaults applied (pooled grid 16x16 and the
// segmentation pyramid, or 7x7 and the classification pyramid).
VariantSpec variant_spec(const std::string& name, Task task, std::size_t num_classes);

// Named parameters in insertion order.
template <typename T>
class BasicParamStore {
  public:
    void add(const std::string& name, BasicTensor<T> t);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const BasicTensor<T>& get(const std::string& name) const;
    BasicTensor<T>& get(const std::string& name);
    std::size_t size() const { return entries_.size(); }
    std::size_t numel() const;

    std::vector<std::pair<std::string, BasicTensor<T>>>& entries() { return entries_; }
    const std::vector<std::pair<std::string, BasicTensor<T>>>& entries() const { return entries_; }

    void set_requires_grad(bool on);
    void zero_grad();

    template <typename U>
    BasicParamStore<U> cast() const;

  private:
    std::vector<std::pair<std::string, BasicTensor<T>>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = BasicParamStore<float>;
using ParamStore64 = BasicParamStore<double>;

struct ParamShape {
    std::string name;
    Shape shape;
};

// Every parameter of spec in forward order, without allocating storage.
std::vector<ParamShape> param_shapes(const VariantSpec& spec);

// Adds every parameter of spec, zero-filled, in forward order.
template <typename T>
void declare_params(BasicParamStore<T>& store, const VariantSpec& spec);

// Initialization by name: *.weight of rank 2 -> truncated normal (std 0.02,
// cut at 2 std); rank 4 -> normal with std sqrt(2 / fan_out); *.bias and
// *.beta -> 0; *.gamma -> 1; *.scale -> spec.layer_scale_init;
// decoder.classifier.weight -> 0 so initial predictions are uniform. Each tensor
// draws from its own stream keyed by (seed, name).
template <typename T>
void init_params(BasicParamStore<T>& store, std::uint64_t seed, double layer_scale_init = 1e-6);

template <typename T>
struct BasicModel {
    VariantSpec spec;
    BasicParamStore<T> params;
};

using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

Model build_variant(const VariantSpec& spec, std::uint64_t seed);
Model build_variant(const std::string& name, Task task, std::size_t num_classes, std::uint64_t seed);

struct BlockConfig {
    AttentionConfig attn;
    std::size_t ffn_ratio = 4;
    bool cpe = true;
    bool ffn_dwconv = true;
    bool layer_scale = false;
};

template <typename T>
BasicTensor<T> ffn_forward(const BasicTensor<T>& f, const BasicParamStore<T>& ps, const std::string& prefix,
                           const BlockConfig& cfg);

template <typename T>
BasicTensor<T> basic_block_forward(const BasicTensor<T>& f, const BasicParamStore<T>& ps, const std::string& prefix,
                                   const BlockConfig& cfg, AttentionTrace* trace = nullptr);

// 7x7 stride-4 conv + LayerNorm.
template <typename T>
BasicTensor<T> stem_forward(const BasicTensor<T>& image, const BasicParamStore<T>& ps);

// 3x3 stride-2 conv + LayerNorm producing the input of zero-based stage 1..3.
template <typename T>
BasicTensor<T> patch_embed_forward(const BasicTensor<T>& f, const BasicParamStore<T>& ps, std::size_t stage);

template <typename T>
std::array<BasicTensor<T>, 4> encoder_forward(const BasicTensor<T>& image, const BasicModel<T>& model);

// Logits at stride 8.
template <typename T>
BasicTensor<T> decoder_forward(const BasicTensor<T>& f2, const BasicTensor<T>& f3, const BasicTensor<T>& f4,
                               const BasicModel<T>& model);

// Encoder + decoder, logits bilinearly resized to the input size.
template <typename T>
BasicTensor<T> segment_forward(const BasicTensor<T>& image, const BasicModel<T>& model);

// [B, num_classes]
template <typename T>
BasicTensor<T> classifier_forward(const BasicTensor<T>& image, const BasicModel<T>& model);

// Segmentation forward pass split into units (stem, each patch embed, each
// block, the decoder steps) with cached unit outputs, so a pass can restart
// at the first unit whose parameters changed. Used by finite-difference
// checks; run() equals segment_forward.
template <typename T>
class SegmentationRunner {
  public:
    SegmentationRunner(const BasicModel<T>& model, BasicTensor<T> image);

    std::size_t unit_count() const { return units_.size(); }
    // Index of the first unit that reads the parameter.
    std::size_t unit_of(const std::string& param_name) const;
    // Full pass; refreshes the cache.
    BasicTensor<T> run();
    // Runs units [from, end) on the cached outputs of earlier units without
    // modifying the cache.
    BasicTensor<T> rerun_from(std::size_t from);

  private:
    struct Unit {
        std::string param_prefix;
        std::function<BasicTensor<T>(const std::vector<BasicTensor<T>>&)> fn;
    };
    const BasicModel<T>& model_;
    BasicTensor<T> image_;
    std::vector<Unit> units_;
    std::vector<BasicTensor<T>> cache_;
    bool primed_ = false;
};

// Parameter-block name helpers.
std::string block_prefix(std::size_t stage, std::size_t block);
BlockConfig stage_block_config(const VariantSpec& spec, std::size_t stage);
BlockConfig decoder_block_config(const VariantSpec& spec);

}  // namespace lrf
