#include "lrformer/analyzer.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "lrformer/errors.hpp"

namespace lrf {

std::uint64_t FlopsReport::total(CostCategory c) const {
    std::uint64_t sum = 0;
    for (const auto& l : layers) {
        if (l.category == c) {
            sum += l.macs;
        }
    }
    return sum;
}

std::uint64_t FlopsReport::headline() const {
    std::uint64_t sum = 0;
    for (const auto& l : layers) {
        if (is_headline(l.category)) {
            sum += l.macs;
        }
    }
    return sum;
}

std::uint64_t FlopsReport::grand_total() const {
    std::uint64_t sum = 0;
    for (const auto& l : layers) {
        sum += l.macs;
    }
    return sum;
}

std::uint64_t FlopsReport::attention_interp() const {
    std::uint64_t sum = 0;
    for (const auto& l : layers) {
        if (l.in_attention && l.category == CostCategory::interp) {
            sum += l.macs;
        }
    }
    return sum;
}

std::uint64_t count_params(const VariantSpec& spec) {
    std::uint64_t n = 0;
    for (const auto& p : param_shapes(spec)) {
        std::uint64_t k = 1;
        for (auto e : p.shape) {
            k *= e;
        }
        n += k;
    }
    return n;
}

namespace {

using u64 = std::uint64_t;

class Walker {
  public:
    explicit Walker(FlopsReport& r) : r_(r) {}

    void add(const std::string& name, CostCategory c, u64 macs, bool in_attention = false) {
        r_.layers.push_back({name, c, macs, in_attention});
    }

    // Conv with zero padding; returns the output extents.
    std::pair<u64, u64> conv(const std::string& name, u64 cin, u64 cout, u64 h, u64 w, u64 k, u64 stride, u64 pad,
                             u64 groups = 1) {
        const u64 ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
        add(name, CostCategory::conv, ho * wo * cout * (cin / groups) * k * k);
        return {ho, wo};
    }

    void norm(const std::string& name, u64 elements) { add(name, CostCategory::norm_act, elements); }

    void mhsa(const std::string& p, u64 nq, u64 nkv, u64 c, u64 heads) {
        add(p + ".scores", CostCategory::attn_core, nq * nkv * c, true);
        add(p + ".softmax", CostCategory::norm_act, heads * nq * nkv, true);
        add(p + ".aggregate", CostCategory::attn_core, nq * nkv * c, true);
    }

    void proj(const std::string& name, u64 tokens, u64 c) { add(name, CostCategory::attn_proj, tokens * c * c, true); }

    void attention(const std::string& p, const AttentionConfig& cfg, u64 h, u64 w) {
        const u64 c = cfg.channels, heads = cfg.heads(), n = h * w;
        auto vanilla = [&] {
            proj(p + ".q", n, c);
            proj(p + ".k", n, c);
            proj(p + ".v", n, c);
            mhsa(p, n, n, c, heads);
            proj(p + ".o", n, c);
        };
        switch (cfg.scheme) {
            case AttentionScheme::vanilla:
                vanilla();
                return;
            case AttentionScheme::downsampled: {
                const u64 s = cfg.downsample_ratio;
                const u64 gh = (h + s - 1) / s, gw = (w + s - 1) / s;
                if (gh != h || gw != w) {
                    add(p + ".pool", CostCategory::other, c * n, true);
                }
                proj(p + ".q", n, c);
                proj(p + ".k", gh * gw, c);
                proj(p + ".v", gh * gw, c);
                mhsa(p, n, gh * gw, c, heads);
                proj(p + ".o", n, c);
                return;
            }
            case AttentionScheme::lrsa:
                break;
        }
        if (n <= cfg.pooled.tokens()) {
            vanilla();
            return;
        }
        const u64 gh = std::min<u64>(cfg.pooled.h, h), gw = std::min<u64>(cfg.pooled.w, w), m = gh * gw;
        add(p + ".pool", CostCategory::other, c * n, true);
        u64 nkv = m;
        if (cfg.kv_pyramid) {
            const bool from_input = cfg.pyramid_source == PyramidSource::input;
            const u64 sh = from_input ? h : gh, sw = from_input ? w : gw;
            nkv = 0;
            for (std::size_t i = 0; i < cfg.pyramid_sizes.size(); ++i) {
                const Grid& g = cfg.pyramid_sizes[i];
                add(p + ".pyramid" + std::to_string(i + 1), CostCategory::other, c * sh * sw, true);
                nkv += std::min<u64>(g.h, sh) * std::min<u64>(g.w, sw);
            }
        }
        proj(p + ".q", m, c);
        proj(p + ".k", nkv, c);
        proj(p + ".v", nkv, c);
        mhsa(p, m, nkv, c, heads);
        proj(p + ".o", m, c);
        add(p + ".upsample", CostCategory::interp, 4 * c * n, true);
    }

    void block(const std::string& p, const BlockConfig& cfg, u64 h, u64 w) {
        const u64 c = cfg.attn.channels, n = h * w, hidden = cfg.ffn_ratio * c;
        if (cfg.cpe) {
            conv(p + ".cpe", c, c, h, w, 3, 1, 1, c);
        }
        norm(p + ".attn.norm", n * c);
        attention(p + ".attn", cfg.attn, h, w);
        norm(p + ".ffn.norm", n * c);
        add(p + ".ffn.fc1", CostCategory::conv, n * c * hidden);
        if (cfg.ffn_dwconv) {
            conv(p + ".ffn.dw", hidden, hidden, h, w, 3, 1, 1, hidden);
        }
        norm(p + ".ffn.gelu", n * hidden);
        add(p + ".ffn.fc2", CostCategory::conv, n * hidden * c);
    }

  private:
    FlopsReport& r_;
};

}  // namespace

FlopsReport count_flops(const VariantSpec& spec, std::size_t h, std::size_t w) {
    spec.validate();
    if (h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0) {
        throw DimensionError("count_flops: input " + std::to_string(h) + "x" + std::to_string(w) +
                             " must be positive multiples of 32");
    }
    FlopsReport report;
    Walker walk(report);
    const auto& st = spec.stages;
    std::array<std::pair<u64, u64>, 4> grid{};
    auto [gh, gw] = walk.conv("stem.conv", spec.in_channels, st[0].channels, h, w, 7, 4, 3);
    walk.norm("stem.norm", gh * gw * st[0].channels);
    for (std::size_t i = 0; i < 4; ++i) {
        if (i > 0) {
            const std::string e = "embed" + std::to_string(i + 1);
            std::tie(gh, gw) = walk.conv(e + ".conv", st[i - 1].channels, st[i].channels, gh, gw, 3, 2, 1);
            walk.norm(e + ".norm", gh * gw * st[i].channels);
        }
        const auto cfg = stage_block_config(spec, i);
        for (std::size_t j = 0; j < st[i].depth; ++j) {
            walk.block(block_prefix(i, j), cfg, gh, gw);
        }
        grid[i] = {gh, gw};
    }
    if (spec.task == Task::segmentation) {
        const auto [h2, w2] = grid[1];
        const u64 n2 = h2 * w2, d = spec.decoder_width;
        walk.add("decoder.resize3", CostCategory::interp, 4 * st[2].channels * n2);
        walk.add("decoder.resize4", CostCategory::interp, 4 * st[3].channels * n2);
        walk.conv("decoder.squeeze", st[1].channels + st[2].channels + st[3].channels, d, h2, w2, 1, 1, 0);
        const auto cfg = decoder_block_config(spec);
        walk.block("decoder.block1", cfg, h2, w2);
        walk.conv("decoder.fuse", d + st[3].channels, d, h2, w2, 1, 1, 0);
        walk.block("decoder.block2", cfg, h2, w2);
        walk.conv("decoder.classifier", d, spec.num_classes, h2, w2, 1, 1, 0);
        walk.add("upsample", CostCategory::interp, 4 * spec.num_classes * h * w);
    } else {
        const auto [h4, w4] = grid[3];
        const u64 c4 = st[3].channels;
        walk.add("head.pool", CostCategory::other, c4 * h4 * w4);
        walk.norm("head.norm", c4);
        u64 width = c4;
        if (spec.head_hidden > 0) {
            walk.add("head.pre", CostCategory::conv, c4 * spec.head_hidden);
            walk.norm("head.gelu", spec.head_hidden);
            width = spec.head_hidden;
        }
        walk.add("head.fc", CostCategory::conv, width * spec.num_classes);
    }
    return report;
}

std::uint64_t attention_flops(const FlopsReport& report) {
    return report.total(CostCategory::attn_core) + report.attention_interp();
}

std::string to_string(CostScheme s) {
    switch (s) {
        case CostScheme::vanilla:
            return "vanilla";
        case CostScheme::downsampled:
            return "downsampled";
        case CostScheme::lrsa:
            return "lrsa";
        case CostScheme::window:
            return "window";
        case CostScheme::factorized:
            return "factorized";
    }
    return "?";
}

CostScheme parse_cost_scheme(const std::string& name) {
    for (auto s : {CostScheme::vanilla, CostScheme::downsampled, CostScheme::lrsa, CostScheme::window,
                   CostScheme::factorized}) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw ConfigError("unknown attention scheme '" + name +
                      "' (expected vanilla, downsampled, lrsa, window or factorized)");
}

SchemeCost scheme_cost(CostScheme scheme, double n, double c, double param) {
    if (!(n > 0) || !(c > 0)) {
        throw ConfigError("scheme_cost: N and C must be positive");
    }
    if (scheme != CostScheme::vanilla && !(param > 0)) {
        throw ConfigError("scheme_cost: " + to_string(scheme) + " needs a positive scheme constant");
    }
    SchemeCost out{scheme, "", 0};
    switch (scheme) {
        case CostScheme::vanilla:
            out.formula = "4NC^2 + 2N^2C";
            out.macs = 4 * n * c * c + 2 * n * n * c;
            break;
        case CostScheme::downsampled: {
            const double nkv = std::max(1.0, n / (param * param));
            const double pool = param > 1 ? n * c : 0;
            out.formula = "NC + 2NC^2 + 2(N/s_r^2)C^2 + 2N(N/s_r^2)C";
            out.macs = pool + 2 * n * c * c + 2 * nkv * c * c + 2 * n * nkv * c;
            break;
        }
        case CostScheme::lrsa: {
            const double m = std::min(param, n);
            if (m == n) {
                out.formula = "4NC^2 + 2N^2C";
                out.macs = 4 * n * c * c + 2 * n * n * c;
            } else {
                out.formula = "5NC + 4mC^2 + 2m^2C";
                out.macs = 5 * n * c + 4 * m * c * c + 2 * m * m * c;
            }
            break;
        }
        case CostScheme::window:
            out.formula = "4NC^2 + 2N(w^2)C";
            out.macs = 4 * n * c * c + 2 * n * param * param * c;
            break;
        case CostScheme::factorized:
            out.formula = "4NC^2 + 2NC*d_h";
            out.macs = 4 * n * c * c + 2 * n * c * param;
            break;
    }
    return out;
}

TableFormat parse_table_format(const std::string& name) {
    if (name == "text") {
        return TableFormat::text;
    }
    if (name == "csv") {
        return TableFormat::csv;
    }
    throw ConfigError("unknown table format '" + name + "' (expected text or csv)");
}

ComparisonRow comparison_row(const VariantSpec& spec, std::size_t h, std::size_t w) {
    const auto report = count_flops(spec, h, w);
    return {spec.name, h, w, count_params(spec), report.headline(), attention_flops(report)};
}

namespace {

std::string scaled(double v, double unit, const char* suffix, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v / unit << suffix;
    return os.str();
}

}  // namespace

void emit_comparison_table(std::ostream& os, const std::vector<ComparisonRow>& rows, TableFormat format) {
    auto input = [](const ComparisonRow& r) { return std::to_string(r.input_h) + "x" + std::to_string(r.input_w); };
    if (format == TableFormat::csv) {
        os << "variant,input,params,flops_mac,att_flops_mac\n";
        for (const auto& r : rows) {
            os << r.variant << ',' << input(r) << ',' << r.params << ',' << r.flops << ',' << r.att_flops << '\n';
        }
    } else {
        os << std::left << std::setw(9) << "variant" << std::setw(11) << "input" << std::right << std::setw(10)
           << "params" << std::setw(11) << "FLOPs" << std::setw(11) << "Att.FLOPs" << '\n';
        for (const auto& r : rows) {
            os << std::left << std::setw(9) << r.variant << std::setw(11) << input(r) << std::right << std::setw(10)
               << scaled(double(r.params), 1e6, "M", 2) << std::setw(11) << scaled(double(r.flops), 1e9, "G", 2)
               << std::setw(11) << scaled(double(r.att_flops), 1e9, "G", 3) << '\n';
        }
    }
    if (!os) {
        throw Error("emit_comparison_table: write failed");
    }
}

}  // namespace lrf
