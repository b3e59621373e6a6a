#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "lrformer/cost.hpp"
#include "lrformer/model.hpp"

namespace lrf {

// All counts are multiply-accumulates; one MAC is reported as one FLOP.
struct LayerCost {
    std::string name;
    CostCategory category = CostCategory::other;
    std::uint64_t macs = 0;
    bool in_attention = false;
};

struct FlopsReport {
    std::vector<LayerCost> layers;

    std::uint64_t total(CostCategory c) const;
    // attn_core + attn_proj + conv + interp.
    std::uint64_t headline() const;
    std::uint64_t grand_total() const;
    // Bilinear resampling issued inside attention operators.
    std::uint64_t attention_interp() const;
};

template <typename T>
std::uint64_t count_params(const BasicParamStore<T>& store) {
    return store.numel();
}
std::uint64_t count_params(const VariantSpec& spec);

// Walks the architecture graph for one H x W image without executing it.
// Mirrors operator-level counting: convs and linears by their contraction
// size, attention scores and aggregation, 4 MACs per bilinear output,
// one add per pooled input element (other), one op per normalized or
// activated element (norm_act).
FlopsReport count_flops(const VariantSpec& spec, std::size_t h, std::size_t w);

// Attention core plus the upsampling inside attention; projections excluded.
std::uint64_t attention_flops(const FlopsReport& report);

enum class CostScheme { vanilla, downsampled, lrsa, window, factorized };

std::string to_string(CostScheme s);
CostScheme parse_cost_scheme(const std::string& name);

struct SchemeCost {
    CostScheme scheme = CostScheme::lrsa;
    std::string formula;  // polynomial in N, C and the scheme constant
    double macs = 0;
};

// Cost of one attention layer on N tokens of width C. param is the pooled
// token count m (lrsa), the reduction ratio s_r (downsampled), the window
// side (window) or the head width (factorized); vanilla ignores it.
SchemeCost scheme_cost(CostScheme scheme, double n, double c, double param = 0);

struct ComparisonRow {
    std::string variant;
    std::size_t input_h = 0;
    std::size_t input_w = 0;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    std::uint64_t att_flops = 0;
};

enum class TableFormat { text, csv };

TableFormat parse_table_format(const std::string& name);
ComparisonRow comparison_row(const VariantSpec& spec, std::size_t h, std::size_t w);
void emit_comparison_table(std::ostream& os, const std::vector<ComparisonRow>& rows, TableFormat format);

}  // namespace lrf
