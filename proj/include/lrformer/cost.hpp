#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace lrf {

// Buckets for multiply-accumulate accounting. Only attn_core, attn_proj,
// conv and interp enter headline totals; norm_act and other are reported
// but excluded.
enum class CostCategory : std::uint8_t { attn_core, attn_proj, conv, interp, norm_act, other };

inline constexpr std::size_t kCostCategoryCount = 6;

std::string_view to_string(CostCategory c);
bool is_headline(CostCategory c);

// Operator-level MAC counter. Install with CountingScope; every operator in
// tensor-core reports to the counter active on the calling thread.
class CostCounter {
  public:
    void add(CostCategory c, std::uint64_t macs, bool in_attention);

    std::uint64_t total(CostCategory c) const { return totals_[static_cast<std::size_t>(c)]; }
    // MACs of bilinear resampling issued from inside an attention operator.
    std::uint64_t attention_interp() const { return attention_interp_; }
    std::uint64_t headline() const;
    std::uint64_t grand_total() const;
    void reset();

  private:
    std::array<std::uint64_t, kCostCategoryCount> totals_{};
    std::uint64_t attention_interp_ = 0;
};

class CountingScope {
  public:
    explicit CountingScope(CostCounter& counter);
    ~CountingScope();
    CountingScope(const CountingScope&) = delete;
    CountingScope& operator=(const CountingScope&) = delete;

  private:
    CostCounter* previous_;
};

// Tags contractions (matmul, conv) issued inside the scope with a category
// and marks whether they belong to an attention operator.
class CostContext {
  public:
    CostContext(CostCategory contraction_category, bool in_attention);
    ~CostContext();
    CostContext(const CostContext&) = delete;
    CostContext& operator=(const CostContext&) = delete;

  private:
    CostCategory prev_category_;
    bool prev_attention_;
};

namespace detail {

enum class OpClass { contraction, resample, pooling, pointwise };

void note_cost(OpClass cls, std::uint64_t macs);

}  // namespace detail

}  // namespace lrf
