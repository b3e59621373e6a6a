#include "lrformer/model.hpp"

#include <algorithm>
#include <cmath>

#include "lrformer/errors.hpp"
#include "lrformer/rng.hpp"

namespace lrf {

namespace {

constexpr double kNormEps = 1e-6;

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

VariantSpec make_spec(const std::string& name, std::array<std::size_t, 4> c, std::array<std::size_t, 4> ch,
                      std::array<std::size_t, 4> e, std::array<std::size_t, 4> n, std::size_t d) {
    VariantSpec s;
    s.name = name;
    for (std::size_t i = 0; i < 4; ++i) {
        s.stages[i] = StageSpec{c[i], ch[i], e[i], n[i]};
    }
    s.decoder_width = d;
    return s;
}

}  // namespace

std::string to_string(Task t) {
    return t == Task::segmentation ? "segmentation" : "classification";
}

Task parse_task(const std::string& name) {
    if (name == "seg" || name == "segmentation") {
        return Task::segmentation;
    }
    if (name == "cls" || name == "classification") {
        return Task::classification;
    }
    throw ConfigError("unknown task '" + name + "' (expected seg or cls)");
}

void VariantSpec::validate() const {
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& s = stages[i];
        if (s.depth == 0 || s.ffn_ratio == 0) {
            throw ConfigError("variant " + name + ": stage " + std::to_string(i + 1) + " needs depth and ffn ratio >= 1");
        }
        stage_attention(i).validate();
    }
    if (num_classes == 0 || in_channels == 0) {
        throw ConfigError("variant " + name + ": num_classes and in_channels must be >= 1");
    }
    if (task == Task::segmentation) {
        if (decoder_ffn_ratio == 0) {
            throw ConfigError("variant " + name + ": decoder ffn ratio must be >= 1");
        }
        decoder_attention().validate();
    }
}

AttentionConfig VariantSpec::stage_attention(std::size_t stage) const {
    AttentionConfig cfg;
    cfg.channels = stages.at(stage).channels;
    cfg.head_dim = stages.at(stage).head_dim;
    cfg.scheme = scheme;
    cfg.pooled = pooled;
    cfg.downsample_ratio = downsample_ratios.at(stage);
    cfg.kv_pyramid = kv_pyramid;
    cfg.pyramid_sizes = pyramid_sizes;
    cfg.pyramid_source = pyramid_source;
    return cfg;
}

AttentionConfig VariantSpec::decoder_attention() const {
    AttentionConfig cfg;
    cfg.channels = decoder_width;
    cfg.head_dim = decoder_head_dim;
    cfg.scheme = scheme;
    cfg.pooled = pooled;
    cfg.downsample_ratio = downsample_ratios[1];
    return cfg;
}

std::size_t VariantSpec::total_depth() const {
    std::size_t n = 0;
    for (const auto& s : stages) {
        n += s.depth;
    }
    return n;
}

std::vector<std::string> variant_names() {
    return {"T", "S", "B", "L", "XL", "micro"};
}

VariantSpec variant_spec(const std::string& name, Task task, std::size_t num_classes) {
    VariantSpec s;
    if (name == "T") {
        s = make_spec(name, {48, 96, 240, 384}, {24, 24, 24, 24}, {8, 8, 4, 4}, {2, 2, 6, 3}, 256);
    } else if (name == "S") {
        s = make_spec(name, {64, 128, 320, 512}, {32, 32, 32, 32}, {8, 8, 4, 4}, {3, 3, 12, 3}, 384);
    } else if (name == "B") {
        s = make_spec(name, {80, 160, 400, 512}, {40, 40, 40, 32}, {8, 8, 4, 4}, {4, 4, 15, 8}, 512);
    } else if (name == "L") {
        s = make_spec(name, {96, 192, 480, 640}, {48, 48, 48, 40}, {8, 8, 4, 4}, {4, 6, 18, 8}, 640);
    } else if (name == "XL") {
        s = make_spec(name, {128, 256, 640, 768}, {64, 64, 64, 48}, {8, 8, 4, 4}, {4, 8, 22, 8}, 768);
    } else if (name == "micro") {
        s = make_spec(name, {16, 32, 64, 96}, {16, 16, 16, 16}, {4, 4, 4, 4}, {1, 1, 2, 1}, 64);
        s.decoder_head_dim = 16;
        s.head_hidden = 0;
    } else {
        throw ConfigError("unknown variant '" + name + "' (expected T, S, B, L, XL or micro)");
    }
    s.task = task;
    s.num_classes = num_classes;
    if (task == Task::classification) {
        s.pooled = {7, 7};
        s.pyramid_sizes = classification_pyramid();
    } else if (name == "micro") {
        s.pooled = {8, 8};
        s.pyramid_sizes = {{6, 6}, {4, 4}, {2, 2}};
    } else {
        s.pyramid_sizes = segmentation_pyramid();
    }
    s.validate();
    return s;
}

template <typename T>
void BasicParamStore<T>::add(const std::string& name, BasicTensor<T> t) {
    if (index_.count(name) != 0) {
        throw ConfigError("param store: duplicate parameter '" + name + "'");
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(t));
}

template <typename T>
const BasicTensor<T>& BasicParamStore<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ConfigError("param store: missing parameter '" + name + "'");
    }
    return entries_[it->second].second;
}

template <typename T>
BasicTensor<T>& BasicParamStore<T>::get(const std::string& name) {
    return const_cast<BasicTensor<T>&>(std::as_const(*this).get(name));
}

template <typename T>
std::size_t BasicParamStore<T>::numel() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) {
        n += t.numel();
    }
    return n;
}

template <typename T>
void BasicParamStore<T>::set_requires_grad(bool on) {
    for (auto& [name, t] : entries_) {
        t.set_requires_grad(on);
    }
}

template <typename T>
void BasicParamStore<T>::zero_grad() {
    for (auto& [name, t] : entries_) {
        t.zero_grad();
    }
}

template <typename T>
template <typename U>
BasicParamStore<U> BasicParamStore<T>::cast() const {
    BasicParamStore<U> out;
    for (const auto& [name, t] : entries_) {
        out.add(name, t.template cast<U>());
    }
    return out;
}

namespace {

using ShapeList = std::vector<ParamShape>;

void add_conv(ShapeList& ps, const std::string& p, std::size_t out, std::size_t in, std::size_t k) {
    ps.push_back({p + ".weight", {out, in, k, k}});
    ps.push_back({p + ".bias", {out}});
}

void add_linear(ShapeList& ps, const std::string& p, std::size_t in, std::size_t out) {
    ps.push_back({p + ".weight", {in, out}});
    ps.push_back({p + ".bias", {out}});
}

void add_norm(ShapeList& ps, const std::string& p, std::size_t c) {
    ps.push_back({p + ".gamma", {c}});
    ps.push_back({p + ".beta", {c}});
}

void add_block(ShapeList& ps, const std::string& p, std::size_t c, const BlockConfig& cfg) {
    const std::size_t hidden = cfg.ffn_ratio * c;
    if (cfg.cpe) {
        add_conv(ps, p + ".cpe", c, 1, 3);
    }
    add_norm(ps, p + ".attn.norm", c);
    for (const char* proj : {"q", "k", "v", "o"}) {
        add_linear(ps, p + ".attn." + proj, c, c);
    }
    if (cfg.layer_scale) {
        ps.push_back({p + ".attn.scale", {c}});
    }
    add_norm(ps, p + ".ffn.norm", c);
    add_linear(ps, p + ".ffn.fc1", c, hidden);
    if (cfg.ffn_dwconv) {
        add_conv(ps, p + ".ffn.dw", hidden, 1, 3);
    }
    add_linear(ps, p + ".ffn.fc2", hidden, c);
    if (cfg.layer_scale) {
        ps.push_back({p + ".ffn.scale", {c}});
    }
}

}  // namespace

std::string block_prefix(std::size_t stage, std::size_t block) {
    return "stage" + std::to_string(stage + 1) + ".block" + std::to_string(block + 1);
}

BlockConfig stage_block_config(const VariantSpec& spec, std::size_t stage) {
    return BlockConfig{spec.stage_attention(stage), spec.stages.at(stage).ffn_ratio, spec.cpe, spec.ffn_dwconv,
                       spec.layer_scale};
}

BlockConfig decoder_block_config(const VariantSpec& spec) {
    return BlockConfig{spec.decoder_attention(), spec.decoder_ffn_ratio, spec.cpe, spec.ffn_dwconv, spec.layer_scale};
}

std::vector<ParamShape> param_shapes(const VariantSpec& spec) {
    spec.validate();
    ShapeList ps;
    const auto& st = spec.stages;
    add_conv(ps, "stem.conv", st[0].channels, spec.in_channels, 7);
    add_norm(ps, "stem.norm", st[0].channels);
    for (std::size_t i = 0; i < 4; ++i) {
        if (i > 0) {
            const std::string e = "embed" + std::to_string(i + 1);
            add_conv(ps, e + ".conv", st[i].channels, st[i - 1].channels, 3);
            add_norm(ps, e + ".norm", st[i].channels);
        }
        for (std::size_t j = 0; j < st[i].depth; ++j) {
            add_block(ps, block_prefix(i, j), st[i].channels, stage_block_config(spec, i));
        }
    }
    if (spec.task == Task::segmentation) {
        const std::size_t d = spec.decoder_width;
        add_conv(ps, "decoder.squeeze", d, st[1].channels + st[2].channels + st[3].channels, 1);
        add_block(ps, "decoder.block1", d, decoder_block_config(spec));
        add_conv(ps, "decoder.fuse", d, d + st[3].channels, 1);
        add_block(ps, "decoder.block2", d, decoder_block_config(spec));
        add_conv(ps, "decoder.classifier", spec.num_classes, d, 1);
    } else {
        const std::size_t c4 = st[3].channels;
        add_norm(ps, "head.norm", c4);
        std::size_t width = c4;
        if (spec.head_hidden > 0) {
            add_linear(ps, "head.pre", c4, spec.head_hidden);
            width = spec.head_hidden;
        }
        add_linear(ps, "head.fc", width, spec.num_classes);
    }
    return ps;
}

template <typename T>
void declare_params(BasicParamStore<T>& ps, const VariantSpec& spec) {
    for (auto& p : param_shapes(spec)) {
        ps.add(p.name, BasicTensor<T>(std::move(p.shape)));
    }
}

template <typename T>
void init_params(BasicParamStore<T>& store, std::uint64_t seed, double layer_scale_init) {
    for (auto& [name, t] : store.entries()) {
        RandomStream rng(seed, name);
        auto d = t.data();
        if (ends_with(name, ".bias") || ends_with(name, ".beta")) {
            std::fill(d.begin(), d.end(), T{0});
        } else if (ends_with(name, ".gamma")) {
            std::fill(d.begin(), d.end(), T{1});
        } else if (ends_with(name, ".scale")) {
            std::fill(d.begin(), d.end(), static_cast<T>(layer_scale_init));
        } else if (name == "decoder.classifier.weight") {
            std::fill(d.begin(), d.end(), T{0});
        } else if (ends_with(name, ".weight") && t.rank() == 2) {
            for (auto& v : d) {
                v = static_cast<T>(rng.truncated_normal(0.02, 0.04));
            }
        } else if (ends_with(name, ".weight") && t.rank() == 4) {
            const bool depthwise = ends_with(name, ".cpe.weight") || ends_with(name, ".dw.weight");
            const std::size_t k2 = t.dim(2) * t.dim(3);
            const std::size_t fan_out = depthwise ? k2 : k2 * t.dim(0);
            const double std = std::sqrt(2.0 / static_cast<double>(fan_out));
            for (auto& v : d) {
                v = static_cast<T>(std * rng.normal());
            }
        } else {
            throw ConfigError("init_params: no rule for parameter '" + name + "'");
        }
    }
}

Model build_variant(const VariantSpec& spec, std::uint64_t seed) {
    Model m{spec, {}};
    declare_params(m.params, spec);
    init_params(m.params, seed, spec.layer_scale_init);
    return m;
}

Model build_variant(const std::string& name, Task task, std::size_t num_classes, std::uint64_t seed) {
    return build_variant(variant_spec(name, task, num_classes), seed);
}

namespace {

template <typename T>
BasicTensor<T> norm_map(const BasicTensor<T>& x, const BasicParamStore<T>& ps, const std::string& p) {
    auto t = layer_norm(map_to_tokens(x), ps.get(p + ".gamma"), ps.get(p + ".beta"), static_cast<T>(kNormEps));
    return tokens_to_map(t, x.dim(2), x.dim(3));
}

template <typename T>
BasicTensor<T> conv(const BasicTensor<T>& x, const BasicParamStore<T>& ps, const std::string& p,
                    Conv2dOptions opt = {}) {
    return conv2d(x, ps.get(p + ".weight"), &ps.get(p + ".bias"), opt);
}

template <typename T>
BasicTensor<T> depthwise(const BasicTensor<T>& x, const BasicParamStore<T>& ps, const std::string& p) {
    return conv(x, ps, p, Conv2dOptions{1, 1, x.dim(1)});
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicParamStore<T>& ps, const std::string& p) {
    return linear(x, ps.get(p + ".weight"), &ps.get(p + ".bias"));
}

template <typename T>
AttentionParams<T> attention_params(const BasicParamStore<T>& ps, const std::string& p) {
    return {ps.get(p + ".q.weight"), ps.get(p + ".q.bias"), ps.get(p + ".k.weight"), ps.get(p + ".k.bias"),
            ps.get(p + ".v.weight"), ps.get(p + ".v.bias"), ps.get(p + ".o.weight"), ps.get(p + ".o.bias")};
}

template <typename T>
BasicTensor<T> channel_scale(const BasicTensor<T>& x, const BasicTensor<T>& scale) {
    return tokens_to_map(mul(map_to_tokens(x), scale), x.dim(2), x.dim(3));
}

void check_map(const Shape& s, std::size_t channels, const char* what) {
    if (s.size() != 4 || s[1] != channels) {
        throw DimensionError(std::string(what) + ": expected [B," + std::to_string(channels) + ",H,W], got " +
                             shape_str(s));
    }
}

}  // namespace

template <typename T>
BasicTensor<T> ffn_forward(const BasicTensor<T>& f, const BasicParamStore<T>& ps, const std::string& prefix,
                           const BlockConfig& cfg) {
    const std::size_t h = f.dim(2), w = f.dim(3);
    auto hidden = tokens_to_map(dense(map_to_tokens(f), ps, prefix + ".fc1"), h, w);
    if (cfg.ffn_dwconv) {
        hidden = add(hidden, depthwise(hidden, ps, prefix + ".dw"));
    }
    hidden = gelu(hidden);
    return tokens_to_map(dense(map_to_tokens(hidden), ps, prefix + ".fc2"), h, w);
}

template <typename T>
BasicTensor<T> basic_block_forward(const BasicTensor<T>& f, const BasicParamStore<T>& ps, const std::string& prefix,
                                   const BlockConfig& cfg, AttentionTrace* trace) {
    check_map(f.shape(), cfg.attn.channels, "basic_block_forward");
    BasicTensor<T> x = f;
    if (cfg.cpe) {
        x = add(x, depthwise(x, ps, prefix + ".cpe"));
    }
    auto a = attend(norm_map(x, ps, prefix + ".attn.norm"), attention_params(ps, prefix + ".attn"), cfg.attn, trace);
    if (cfg.layer_scale) {
        a = channel_scale(a, ps.get(prefix + ".attn.scale"));
    }
    x = add(x, a);
    auto m = ffn_forward(norm_map(x, ps, prefix + ".ffn.norm"), ps, prefix + ".ffn", cfg);
    if (cfg.layer_scale) {
        m = channel_scale(m, ps.get(prefix + ".ffn.scale"));
    }
    return add(x, m);
}

template <typename T>
BasicTensor<T> stem_forward(const BasicTensor<T>& image, const BasicParamStore<T>& ps) {
    return norm_map(conv(image, ps, "stem.conv", Conv2dOptions{4, 3, 1}), ps, "stem.norm");
}

template <typename T>
BasicTensor<T> patch_embed_forward(const BasicTensor<T>& f, const BasicParamStore<T>& ps, std::size_t stage) {
    const std::string e = "embed" + std::to_string(stage + 1);
    return norm_map(conv(f, ps, e + ".conv", Conv2dOptions{2, 1, 1}), ps, e + ".norm");
}

template <typename T>
std::array<BasicTensor<T>, 4> encoder_forward(const BasicTensor<T>& image, const BasicModel<T>& model) {
    const auto& spec = model.spec;
    check_map(image.shape(), spec.in_channels, "encoder_forward");
    if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0 || image.dim(2) == 0 || image.dim(3) == 0) {
        throw DimensionError("encoder_forward: image extents " + shape_str(image.shape()) +
                             " must be positive multiples of 32");
    }
    std::array<BasicTensor<T>, 4> feats;
    BasicTensor<T> x = stem_forward(image, model.params);
    for (std::size_t i = 0; i < 4; ++i) {
        if (i > 0) {
            x = patch_embed_forward(x, model.params, i);
        }
        const auto cfg = stage_block_config(spec, i);
        for (std::size_t j = 0; j < spec.stages[i].depth; ++j) {
            x = basic_block_forward(x, model.params, block_prefix(i, j), cfg);
        }
        feats[i] = x;
    }
    return feats;
}

template <typename T>
BasicTensor<T> decoder_forward(const BasicTensor<T>& f2, const BasicTensor<T>& f3, const BasicTensor<T>& f4,
                               const BasicModel<T>& model) {
    const auto& spec = model.spec;
    if (spec.task != Task::segmentation) {
        throw UsageError("decoder_forward: model was built for classification");
    }
    const auto& st = spec.stages;
    check_map(f2.shape(), st[1].channels, "decoder_forward F2");
    check_map(f3.shape(), st[2].channels, "decoder_forward F3");
    check_map(f4.shape(), st[3].channels, "decoder_forward F4");
    auto half = [](std::size_t n) { return (n + 1) / 2; };
    if (f3.dim(0) != f2.dim(0) || f4.dim(0) != f2.dim(0) || f3.dim(2) != half(f2.dim(2)) ||
        f3.dim(3) != half(f2.dim(3)) || f4.dim(2) != half(f3.dim(2)) || f4.dim(3) != half(f3.dim(3))) {
        throw UsageError("decoder_forward: feature grids " + shape_str(f2.shape()) + ", " + shape_str(f3.shape()) +
                         ", " + shape_str(f4.shape()) + " do not come from one encoder pass");
    }
    const std::size_t h = f2.dim(2), w = f2.dim(3);
    auto f3r = bilinear_resize(f3, h, w);
    auto f4r = bilinear_resize(f4, h, w);
    const auto cfg = decoder_block_config(spec);
    auto x = conv(concat<T>({f2, f3r, f4r}, 1), model.params, "decoder.squeeze");
    x = basic_block_forward(x, model.params, "decoder.block1", cfg);
    x = conv(concat<T>({x, f4r}, 1), model.params, "decoder.fuse");
    x = basic_block_forward(x, model.params, "decoder.block2", cfg);
    return conv(x, model.params, "decoder.classifier");
}

template <typename T>
BasicTensor<T> segment_forward(const BasicTensor<T>& image, const BasicModel<T>& model) {
    auto f = encoder_forward(image, model);
    return bilinear_resize(decoder_forward(f[1], f[2], f[3], model), image.dim(2), image.dim(3));
}

template <typename T>
BasicTensor<T> classifier_forward(const BasicTensor<T>& image, const BasicModel<T>& model) {
    if (model.spec.task != Task::classification) {
        throw UsageError("classifier_forward: model was built for segmentation");
    }
    auto f = encoder_forward(image, model);
    const std::size_t b = image.dim(0), c4 = model.spec.stages[3].channels;
    auto pooled = reshape(adaptive_avg_pool2d(f[3], 1, 1), {b, c4});
    const auto& ps = model.params;
    auto x = layer_norm(pooled, ps.get("head.norm.gamma"), ps.get("head.norm.beta"), static_cast<T>(kNormEps));
    if (model.spec.head_hidden > 0) {
        x = gelu(dense(x, ps, "head.pre"));
    }
    return dense(x, ps, "head.fc");
}

template <typename T>
SegmentationRunner<T>::SegmentationRunner(const BasicModel<T>& model, BasicTensor<T> image)
    : model_(model), image_(std::move(image)) {
    const auto& spec = model.spec;
    if (spec.task != Task::segmentation) {
        throw UsageError("SegmentationRunner: model was built for classification");
    }
    const auto& ps = model.params;
    // Unit u reads out[u - 1] unless noted; out[u] is its output.
    auto prev = [](std::size_t u) { return u - 1; };
    units_.push_back({"stem.", [this](const auto&) {
                          check_map(image_.shape(), model_.spec.in_channels, "SegmentationRunner");
                          return stem_forward(image_, model_.params);
                      }});
    std::array<std::size_t, 4> stage_end{};
    for (std::size_t i = 0; i < 4; ++i) {
        if (i > 0) {
            const std::size_t u = units_.size();
            units_.push_back({"embed" + std::to_string(i + 1) + ".", [&ps, u, i, prev](const auto& out) {
                                  return patch_embed_forward(out[prev(u)], ps, i);
                              }});
        }
        const auto cfg = stage_block_config(spec, i);
        for (std::size_t j = 0; j < spec.stages[i].depth; ++j) {
            const std::size_t u = units_.size();
            const std::string prefix = block_prefix(i, j);
            units_.push_back({prefix + ".", [&ps, u, cfg, prefix, prev](const auto& out) {
                                  return basic_block_forward(out[prev(u)], ps, prefix, cfg);
                              }});
        }
        stage_end[i] = units_.size() - 1;
    }
    const auto dcfg = decoder_block_config(spec);
    const std::size_t f4r = units_.size();
    units_.push_back({"", [stage_end](const auto& out) {
                          const auto& f2 = out[stage_end[1]];
                          return bilinear_resize(out[stage_end[3]], f2.dim(2), f2.dim(3));
                      }});
    units_.push_back({"decoder.squeeze.", [&ps, stage_end, f4r](const auto& out) {
                          const auto& f2 = out[stage_end[1]];
                          auto f3r = bilinear_resize(out[stage_end[2]], f2.dim(2), f2.dim(3));
                          return conv(concat<T>({f2, f3r, out[f4r]}, 1), ps, "decoder.squeeze");
                      }});
    std::size_t u = units_.size();
    units_.push_back({"decoder.block1.", [&ps, u, dcfg, prev](const auto& out) {
                          return basic_block_forward(out[prev(u)], ps, "decoder.block1", dcfg);
                      }});
    u = units_.size();
    units_.push_back({"decoder.fuse.", [&ps, u, f4r, prev](const auto& out) {
                          return conv(concat<T>({out[prev(u)], out[f4r]}, 1), ps, "decoder.fuse");
                      }});
    u = units_.size();
    units_.push_back({"decoder.block2.", [&ps, u, dcfg, prev](const auto& out) {
                          return basic_block_forward(out[prev(u)], ps, "decoder.block2", dcfg);
                      }});
    u = units_.size();
    units_.push_back({"decoder.classifier.", [&ps, u, prev](const auto& out) {
                          return conv(out[prev(u)], ps, "decoder.classifier");
                      }});
    u = units_.size();
    units_.push_back({"", [this, u, prev](const auto& out) {
                          return bilinear_resize(out[prev(u)], image_.dim(2), image_.dim(3));
                      }});
}

template <typename T>
std::size_t SegmentationRunner<T>::unit_of(const std::string& param_name) const {
    for (std::size_t u = 0; u < units_.size(); ++u) {
        const auto& p = units_[u].param_prefix;
        if (!p.empty() && param_name.compare(0, p.size(), p) == 0) {
            return u;
        }
    }
    throw ConfigError("SegmentationRunner: parameter '" + param_name + "' is not read by any unit");
}

template <typename T>
BasicTensor<T> SegmentationRunner<T>::run() {
    std::vector<BasicTensor<T>> out(units_.size());
    for (std::size_t u = 0; u < units_.size(); ++u) {
        out[u] = units_[u].fn(out);
    }
    cache_ = std::move(out);
    primed_ = true;
    return cache_.back();
}

template <typename T>
BasicTensor<T> SegmentationRunner<T>::rerun_from(std::size_t from) {
    if (!primed_) {
        throw UsageError("SegmentationRunner: run() must precede rerun_from()");
    }
    if (from >= units_.size()) {
        throw UsageError("SegmentationRunner: start unit out of range");
    }
    std::vector<BasicTensor<T>> out = cache_;
    for (std::size_t u = from; u < units_.size(); ++u) {
        out[u] = units_[u].fn(out);
    }
    return out.back();
}

#define LRF_INSTANTIATE_MODEL(T)                                                                                   \
    template class BasicParamStore<T>;                                                                             \
    template void declare_params<T>(BasicParamStore<T>&, const VariantSpec&);                                      \
    template void init_params<T>(BasicParamStore<T>&, std::uint64_t, double);                                      \
    template BasicTensor<T> ffn_forward<T>(const BasicTensor<T>&, const BasicParamStore<T>&, const std::string&,   \
                                           const BlockConfig&);                                                    \
    template BasicTensor<T> basic_block_forward<T>(const BasicTensor<T>&, const BasicParamStore<T>&,               \
                                                   const std::string&, const BlockConfig&, AttentionTrace*);       \
    template BasicTensor<T> stem_forward<T>(const BasicTensor<T>&, const BasicParamStore<T>&);                     \
    template BasicTensor<T> patch_embed_forward<T>(const BasicTensor<T>&, const BasicParamStore<T>&, std::size_t); \
    template std::array<BasicTensor<T>, 4> encoder_forward<T>(const BasicTensor<T>&, const BasicModel<T>&);        \
    template BasicTensor<T> decoder_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                               const BasicModel<T>&);                                              \
    template BasicTensor<T> segment_forward<T>(const BasicTensor<T>&, const BasicModel<T>&);                       \
    template BasicTensor<T> classifier_forward<T>(const BasicTensor<T>&, const BasicModel<T>&);                    \
    template class SegmentationRunner<T>;

LRF_INSTANTIATE_MODEL(float)
LRF_INSTANTIATE_MODEL(double)

template BasicParamStore<double> BasicParamStore<float>::cast<double>() const;
template BasicParamStore<float> BasicParamStore<double>::cast<float>() const;

}  // namespace lrf
