#include "lrformer/cost.hpp"

namespace lrf {

namespace {

thread_local CostCounter* t_counter = nullptr;
thread_local CostCategory t_category = CostCategory::conv;
thread_local bool t_in_attention = false;

}  // namespace

std::string_view to_string(CostCategory c) {
    switch (c) {
        case CostCategory::attn_core:
            return "attn_core";
        case CostCategory::attn_proj:
            return "attn_proj";
        case CostCategory::conv:
            return "conv";
        case CostCategory::interp:
            return "interp";
        case CostCategory::norm_act:
            return "norm_act";
        case CostCategory::other:
            return "other";
    }
    return "?";
}

bool is_headline(CostCategory c) {
    return c != CostCategory::norm_act && c != CostCategory::other;
}

void CostCounter::add(CostCategory c, std::uint64_t macs, bool in_attention) {
    totals_[static_cast<std::size_t>(c)] += macs;
    if (in_attention && c == CostCategory::interp) {
        attention_interp_ += macs;
    }
}

std::uint64_t CostCounter::headline() const {
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < kCostCategoryCount; ++i) {
        if (is_headline(static_cast<CostCategory>(i))) {
            sum += totals_[i];
        }
    }
    return sum;
}

std::uint64_t CostCounter::grand_total() const {
    std::uint64_t sum = 0;
    for (auto t : totals_) {
        sum += t;
    }
    return sum;
}

void CostCounter::reset() {
    totals_.fill(0);
    attention_interp_ = 0;
}

CountingScope::CountingScope(CostCounter& counter) : previous_(t_counter) {
    t_counter = &counter;
}

CountingScope::~CountingScope() {
    t_counter = previous_;
}

CostContext::CostContext(CostCategory contraction_category, bool in_attention)
    : prev_category_(t_category), prev_attention_(t_in_attention) {
    t_category = contraction_category;
    t_in_attention = in_attention;
}

CostContext::~CostContext() {
    t_category = prev_category_;
    t_in_attention = prev_attention_;
}

namespace detail {

void note_cost(OpClass cls, std::uint64_t macs) {
    if (t_counter == nullptr) {
        return;
    }
    switch (cls) {
        case OpClass::contraction:
            t_counter->add(t_category, macs, t_in_attention);
            break;
        case OpClass::resample:
            t_counter->add(CostCategory::interp, macs, t_in_attention);
            break;
        case OpClass::pooling:
            t_counter->add(CostCategory::other, macs, t_in_attention);
            break;
        case OpClass::pointwise:
            t_counter->add(CostCategory::norm_act, macs, t_in_attention);
            break;
    }
}

}  // namespace detail

}  // namespace lrf
