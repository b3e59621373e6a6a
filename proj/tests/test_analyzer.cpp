#include <sstream>

#include "doctest.h"
#include "lrformer/analyzer.hpp"
#include "lrformer/errors.hpp"
#include "test_util.hpp"

using namespace lrf;
using lrf::test::random_tensor;

namespace {

CostCounter instrumented(const Model& m, std::size_t h, std::size_t w) {
    CostCounter counter;
    NoGradGuard no_grad;
    auto x = random_tensor<float>({1, 3, h, w}, 1);
    CountingScope scope(counter);
    if (m.spec.task == Task::segmentation) {
        segment_forward(x, m);
    } else {
        classifier_forward(x, m);
    }
    return counter;
}

void check_matches_instrumented(const VariantSpec& spec, std::size_t h, std::size_t w) {
    INFO(spec.name << " " << to_string(spec.task) << " " << h << "x" << w);
    const auto report = count_flops(spec, h, w);
    const auto counter = instrumented(build_variant(spec, 0), h, w);
    for (std::size_t i = 0; i < kCostCategoryCount; ++i) {
        const auto c = static_cast<CostCategory>(i);
        INFO(to_string(c));
        CHECK(report.total(c) == counter.total(c));
    }
    CHECK(report.attention_interp() == counter.attention_interp());
    CHECK(report.headline() == counter.headline());
}

double rel(double got, double want) {
    return std::abs(got / want - 1.0);
}

// Headline-plus-pooling MACs of one attention call on a C x h x w map.
double attention_call_macs(const AttentionConfig& cfg, std::size_t h, std::size_t w) {
    AttentionParams<float> p;
    const std::size_t c = cfg.channels;
    for (auto* t : {&p.wq, &p.wk, &p.wv, &p.wo}) *t = random_tensor<float>({c, c}, 2, "w", -0.1, 0.1);
    for (auto* t : {&p.bq, &p.bk, &p.bv, &p.bo}) *t = Tensor({c});
    CostCounter counter;
    NoGradGuard no_grad;
    auto f = random_tensor<float>({1, c, h, w}, 3);
    CountingScope scope(counter);
    attend(f, p, cfg);
    return double(counter.grand_total() - counter.total(CostCategory::norm_act));
}

}  // namespace

TEST_CASE("parameter count of a single linear layer") {
    ParamStore ps;
    ps.add("fc.weight", Tensor({4, 3}));
    ps.add("fc.bias", Tensor({3}));
    CHECK(count_params(ps) == 15);
}

TEST_CASE("analytic parameter count equals the built store") {
    for (const char* name : {"micro", "T"}) {
        for (auto task : {Task::segmentation, Task::classification}) {
            auto spec = variant_spec(name, task, 19);
            CHECK(count_params(spec) == count_params(build_variant(spec, 0).params));
        }
    }
    auto spec = variant_spec("micro", Task::segmentation, 2);
    spec.layer_scale = true;
    spec.cpe = false;
    CHECK(count_params(spec) == count_params(build_variant(spec, 0).params));
}

TEST_CASE("parameter counts of the large variants") {
    CHECK(rel(double(count_params(variant_spec("L", Task::segmentation, 150))), 113e6) <= 0.10);
    CHECK(rel(double(count_params(variant_spec("B", Task::segmentation, 150))), 69e6) <= 0.10);
    CHECK(rel(double(count_params(variant_spec("S", Task::classification, 1000))), 30e6) <= 0.10);
    CHECK(rel(double(count_params(variant_spec("L", Task::classification, 1000))), 101e6) <= 0.10);
}

TEST_CASE("pointwise conv MAC count") {
    CostCounter counter;
    NoGradGuard no_grad;
    CountingScope scope(counter);
    conv2d(Tensor({1, 64, 128, 128}), Tensor({64, 64, 1, 1}), nullptr);
    CHECK(counter.total(CostCategory::conv) == 67108864);
    CHECK(counter.headline() == 67108864);
}

TEST_CASE("analytic FLOPs equal instrumented counting") {
    check_matches_instrumented(variant_spec("micro", Task::segmentation, 2), 64, 64);
    check_matches_instrumented(variant_spec("micro", Task::segmentation, 7), 96, 160);
    check_matches_instrumented(variant_spec("micro", Task::classification, 10), 224, 224);
    check_matches_instrumented(variant_spec("S", Task::segmentation, 150), 128, 128);
    check_matches_instrumented(variant_spec("S", Task::classification, 1000), 64, 96);

    auto spec = variant_spec("micro", Task::segmentation, 2);
    spec.pyramid_source = PyramidSource::pooled;
    check_matches_instrumented(spec, 128, 64);
    spec = variant_spec("micro", Task::segmentation, 2);
    spec.kv_pyramid = false;
    spec.cpe = false;
    spec.ffn_dwconv = false;
    spec.layer_scale = true;
    check_matches_instrumented(spec, 64, 64);
    spec = variant_spec("micro", Task::segmentation, 2);
    spec.scheme = AttentionScheme::downsampled;
    check_matches_instrumented(spec, 64, 96);
    spec.scheme = AttentionScheme::vanilla;
    check_matches_instrumented(spec, 64, 64);
}

TEST_CASE("report totals are sums over layers") {
    const auto r = count_flops(variant_spec("T", Task::segmentation, 150), 256, 256);
    std::uint64_t sum = 0, by_category = 0;
    for (const auto& l : r.layers) sum += l.macs;
    for (std::size_t i = 0; i < kCostCategoryCount; ++i) by_category += r.total(static_cast<CostCategory>(i));
    CHECK(r.grand_total() == sum);
    CHECK(by_category == sum);
    CHECK(r.headline() == sum - r.total(CostCategory::norm_act) - r.total(CostCategory::other));
    CHECK(attention_flops(r) == r.total(CostCategory::attn_core) + r.attention_interp());
    CHECK(r.attention_interp() < r.total(CostCategory::interp));
}

TEST_CASE("FLOPs grow with input area and parameters do not") {
    const auto spec = variant_spec("S", Task::segmentation, 150);
    std::uint64_t prev = 0;
    for (std::size_t s : {64, 128, 256, 512, 1024}) {
        const auto f = count_flops(spec, s, s).headline();
        CHECK(f > prev);
        prev = f;
    }
    CHECK(count_flops(spec, 256, 512).headline() > count_flops(spec, 256, 256).headline());
    CHECK_THROWS_AS(count_flops(spec, 500, 512), DimensionError);
    CHECK_THROWS_AS(count_flops(spec, 0, 512), DimensionError);
}

TEST_CASE("FLOPs of the reference configurations") {
    const auto s = variant_spec("S", Task::segmentation, 150);
    CHECK(rel(double(count_flops(s, 512, 512).headline()), 40e9) <= 0.15);
    CHECK(rel(double(count_flops(s, 1024, 1024).headline()), 145e9) <= 0.15);
    CHECK(rel(double(count_flops(s, 1536, 1536).headline()), 319e9) <= 0.15);
    CHECK(rel(double(count_flops(variant_spec("T", Task::segmentation, 150), 512, 512).headline()), 17e9) <= 0.15);
    CHECK(rel(double(count_flops(variant_spec("S", Task::classification, 1000), 224, 224).headline()), 4.7e9) <=
          0.15);
}

TEST_CASE("attention FLOPs of LRSA stay nearly flat with resolution") {
    const auto s = variant_spec("S", Task::segmentation, 150);
    const double a512 = double(attention_flops(count_flops(s, 512, 512)));
    const double a1024 = double(attention_flops(count_flops(s, 1024, 1024)));
    const double a1536 = double(attention_flops(count_flops(s, 1536, 1536)));
    CHECK(rel(a512, 0.8e9) <= 0.25);
    CHECK(rel(a1024, 0.9e9) <= 0.25);
    CHECK(rel(a1536, 1.1e9) <= 0.25);
    CHECK(a1536 / a512 <= 1.5);
    CHECK(a1024 / a512 < 2.0);

    auto ds = s;
    ds.scheme = AttentionScheme::downsampled;
    const double d512 = double(attention_flops(count_flops(ds, 512, 512)));
    const double d1536 = double(attention_flops(count_flops(ds, 1536, 1536)));
    CHECK(d1536 / d512 >= 50.0);
}

TEST_CASE("scheme cost polynomials") {
    for (double n : {1024.0, 16384.0, 262144.0}) {
        const double l1 = scheme_cost(CostScheme::lrsa, n, 64, 256).macs;
        const double l2 = scheme_cost(CostScheme::lrsa, 2 * n, 64, 256).macs;
        CHECK(l2 / l1 < 2.05);
    }
    const double v1 = scheme_cost(CostScheme::vanilla, 1e6, 64).macs;
    const double v2 = scheme_cost(CostScheme::vanilla, 2e6, 64).macs;
    CHECK(v2 / v1 == doctest::Approx(4.0).epsilon(0.01));
    const double w1 = scheme_cost(CostScheme::window, 1e6, 64, 7).macs;
    CHECK(scheme_cost(CostScheme::window, 2e6, 64, 7).macs / w1 == doctest::Approx(2.0));
    const double f1 = scheme_cost(CostScheme::factorized, 1e6, 64, 32).macs;
    CHECK(scheme_cost(CostScheme::factorized, 2e6, 64, 32).macs / f1 == doctest::Approx(2.0));
    const double d1 = scheme_cost(CostScheme::downsampled, 1e6, 64, 8).macs;
    CHECK(scheme_cost(CostScheme::downsampled, 2e6, 64, 8).macs / d1 > 3.5);
    CHECK(scheme_cost(CostScheme::lrsa, 100, 64, 256).macs == scheme_cost(CostScheme::vanilla, 100, 64).macs);
    CHECK(scheme_cost(CostScheme::lrsa, 16384, 64, 256).formula == "5NC + 4mC^2 + 2m^2C");
    CHECK_THROWS_AS(scheme_cost(CostScheme::lrsa, 0, 64, 256), ConfigError);
    CHECK_THROWS_AS(scheme_cost(CostScheme::window, 100, 64, 0), ConfigError);
    CHECK_THROWS_AS(parse_cost_scheme("swin"), ConfigError);
    CHECK(parse_cost_scheme("factorized") == CostScheme::factorized);
}

TEST_CASE("scheme cost equals instrumented attention") {
    AttentionConfig cfg;
    cfg.channels = 64;
    cfg.head_dim = 32;
    cfg.pooled = {16, 16};
    const double lrsa = attention_call_macs(cfg, 128, 128);
    CHECK(rel(scheme_cost(CostScheme::lrsa, 16384, 64, 256).macs, lrsa) <= 0.01);

    cfg.scheme = AttentionScheme::downsampled;
    cfg.downsample_ratio = 4;
    CHECK(rel(scheme_cost(CostScheme::downsampled, 4096, 64, 4).macs, attention_call_macs(cfg, 64, 64)) <= 0.01);

    cfg.scheme = AttentionScheme::vanilla;
    CHECK(rel(scheme_cost(CostScheme::vanilla, 1024, 64).macs, attention_call_macs(cfg, 32, 32)) <= 0.01);
}

TEST_CASE("comparison table") {
    const auto s = variant_spec("S", Task::segmentation, 150);
    std::vector<ComparisonRow> rows;
    for (std::size_t in : {512, 1024}) rows.push_back(comparison_row(s, in, in));
    std::ostringstream a, b, t;
    emit_comparison_table(a, rows, TableFormat::csv);
    emit_comparison_table(b, rows, TableFormat::csv);
    emit_comparison_table(t, rows, TableFormat::text);
    CHECK(a.str() == b.str());
    std::istringstream lines(a.str());
    std::string header, row1;
    std::getline(lines, header);
    std::getline(lines, row1);
    CHECK(header == "variant,input,params,flops_mac,att_flops_mac");
    const auto r = rows.front();
    CHECK(row1 == "S,512x512," + std::to_string(r.params) + "," + std::to_string(r.flops) + "," +
                      std::to_string(r.att_flops));
    CHECK(t.str().find("Att.FLOPs") != std::string::npos);
    CHECK_THROWS_AS(parse_table_format("json"), ConfigError);
}
