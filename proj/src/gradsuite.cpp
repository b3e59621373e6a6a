#include "lrformer/gradsuite.hpp"

#include <chrono>

#include "lrformer/attention.hpp"
#include "lrformer/model.hpp"
#include "lrformer/rng.hpp"
#include "lrformer/toyseg.hpp"

namespace lrf {

bool SuiteReport::passed() const {
    for (const auto& e : entries) {
        if (!e.passed) {
            return false;
        }
    }
    return !entries.empty();
}

double SuiteReport::max_rel_err() const {
    double m = 0;
    for (const auto& e : entries) {
        m = std::max(m, e.result.max_rel_err);
    }
    return m;
}

namespace {

using Clock = std::chrono::steady_clock;

class Suite {
  public:
    explicit Suite(const SuiteOptions& opt) : opt_(opt) {}

    Tensor64 rand(Shape shape, const std::string& tag, double lo = -1, double hi = 1) {
        RandomStream rng(opt_.seed, "gradsuite/" + tag);
        Tensor64 t(std::move(shape));
        for (auto& v : t.data()) {
            v = rng.uniform(lo, hi);
        }
        return t;
    }

    // sum(f() * fixed random probe) so every output element matters.
    void check(const std::string& name, std::vector<NamedTensor64> in, const std::function<Tensor64()>& f) {
        Tensor64 probe;
        {
            NoGradGuard no_grad;
            probe = rand(f().shape(), name + "/probe");
        }
        GradCheckOptions g;
        g.eps = opt_.eps;
        g.seed = opt_.seed;
        run(name, [&] { return check_gradients(std::move(in), [&] { return sum(mul(f(), probe)); }, g); });
    }

    void run(const std::string& name, const std::function<GradCheckResult()>& fn) {
        const auto t0 = Clock::now();
        SuiteEntry e{name, fn(), 0, false};
        e.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        e.passed = e.result.checked > 0 && e.result.max_rel_err < opt_.tol;
        if (opt_.on_result) {
            opt_.on_result(e);
        }
        report.entries.push_back(std::move(e));
    }

    AttentionParams<double> attention_params(std::size_t c, const std::string& tag) {
        return {rand({c, c}, tag + "/wq", -0.5, 0.5), rand({c}, tag + "/bq"), rand({c, c}, tag + "/wk", -0.5, 0.5),
                rand({c}, tag + "/bk"), rand({c, c}, tag + "/wv", -0.5, 0.5), rand({c}, tag + "/bv"),
                rand({c, c}, tag + "/wo", -0.5, 0.5), rand({c}, tag + "/bo")};
    }

    static std::vector<NamedTensor64> with_params(std::vector<NamedTensor64> in, const AttentionParams<double>& p) {
        const std::pair<const char*, const Tensor64*> named[] = {{"wq", &p.wq}, {"bq", &p.bq}, {"wk", &p.wk},
                                                                 {"bk", &p.bk}, {"wv", &p.wv}, {"bv", &p.bv},
                                                                 {"wo", &p.wo}, {"bo", &p.bo}};
        for (const auto& [n, t] : named) {
            in.push_back({n, *t});
        }
        return in;
    }

    SuiteReport report;

  private:
    const SuiteOptions& opt_;
};

void operator_checks(Suite& s) {
    auto x = s.rand({2, 3, 5}, "x");
    auto y = s.rand({5}, "y");
    auto same = s.rand({2, 3, 5}, "same");
    s.check("add", {{"x", x}, {"y", same}}, [&] { return add(x, same); });
    s.check("add_broadcast", {{"x", x}, {"y", y}}, [&] { return add(x, y); });
    s.check("mul", {{"x", x}, {"y", same}}, [&] { return mul(x, same); });
    s.check("mul_broadcast", {{"x", x}, {"y", y}}, [&] { return mul(x, y); });
    s.check("scale", {{"x", x}}, [&] { return scale(x, 2.5); });
    auto a = s.rand({2, 3, 4}, "a"), b = s.rand({4, 5}, "b");
    s.check("matmul", {{"a", a}, {"b", b}}, [&] { return matmul(a, b); });
    auto ab = s.rand({2, 1, 3, 4}, "ab"), bb = s.rand({3, 4, 2}, "bb");
    s.check("matmul_batched", {{"a", ab}, {"b", bb}}, [&] { return matmul(ab, bb); });
    s.check("reshape_permute", {{"x", x}}, [&] { return reshape(permute(x, {2, 0, 1}), {5, 6}); });
    auto x2 = s.rand({2, 2, 5}, "x2");
    s.check("concat", {{"x", x}, {"x2", x2}}, [&] { return concat<double>({x, x2}, 1); });
    s.check("softmax_inner", {{"x", x}}, [&] { return softmax(x, 1); });
    s.check("softmax_last", {{"x", x}}, [&] { return softmax(x, -1); });
    auto g = s.rand({5}, "gamma"), be = s.rand({5}, "beta");
    s.check("layer_norm", {{"x", x}, {"gamma", g}, {"beta", be}}, [&] { return layer_norm(x, g, be, 1e-6); });
    s.check("gelu", {{"x", x}}, [&] { return gelu(x); });
    auto w = s.rand({5, 4}, "w"), wb = s.rand({4}, "wb");
    s.check("linear", {{"x", x}, {"w", w}, {"b", wb}}, [&] { return linear(x, w, &wb); });
    s.check("sum", {{"x", x}}, [&] { return reshape(sum(x), {1}); });
    s.check("mean", {{"x", x}}, [&] { return reshape(mean(x), {1}); });

    auto img = s.rand({1, 4, 6, 6}, "img");
    auto k = s.rand({6, 2, 3, 3}, "k"), kb = s.rand({6}, "kb");
    s.check("conv2d_grouped_strided", {{"x", img}, {"w", k}, {"b", kb}},
            [&] { return conv2d(img, k, &kb, Conv2dOptions{2, 1, 2}); });
    auto k7 = s.rand({3, 4, 7, 7}, "k7"), kb7 = s.rand({3}, "kb7");
    auto big = s.rand({1, 4, 9, 9}, "big");
    s.check("conv2d_7x7_stride4", {{"x", big}, {"w", k7}, {"b", kb7}},
            [&] { return conv2d(big, k7, &kb7, Conv2dOptions{4, 3, 1}); });
    auto dw = s.rand({4, 1, 3, 3}, "dw"), dwb = s.rand({4}, "dwb");
    s.check("conv2d_depthwise", {{"x", img}, {"w", dw}, {"b", dwb}},
            [&] { return conv2d(img, dw, &dwb, Conv2dOptions{1, 1, 4}); });
    auto pw = s.rand({3, 4, 1, 1}, "pw");
    s.check("conv2d_pointwise", {{"x", img}, {"w", pw}}, [&] { return conv2d(img, pw, nullptr); });
    s.check("adaptive_avg_pool2d", {{"x", img}}, [&] { return adaptive_avg_pool2d(img, 4, 3); });
    s.check("bilinear_up", {{"x", img}}, [&] { return bilinear_resize(img, 9, 11); });
    s.check("bilinear_down", {{"x", img}}, [&] { return bilinear_resize(img, 4, 3); });
    s.check("tokens_roundtrip", {{"x", img}}, [&] { return tokens_to_map(scale(map_to_tokens(img), 1.5), 6, 6); });

    auto logits = s.rand({2, 3, 2, 2}, "logits", -2, 2);
    std::vector<std::int32_t> labels{0, 1, 2, 1, 2, 2, 0, 1};
    s.check("cross_entropy", {{"logits", logits}}, [&] { return reshape(cross_entropy(logits, labels), {1}); });
}

void attention_checks(Suite& s) {
    const std::size_t c = 8, heads = 2;
    auto q = s.rand({2, 5, c}, "q"), k = s.rand({2, 7, c}, "k"), v = s.rand({2, 7, c}, "v");
    s.check("mhsa_core", {{"q", q}, {"k", k}, {"v", v}}, [&] { return mhsa_core(q, k, v, heads); });

    auto tokens = s.rand({1, 12, c}, "tokens");
    auto p = s.attention_params(c, "vanilla");
    s.check("attend_vanilla", Suite::with_params({{"x", tokens}}, p),
            [&] { return attend_vanilla(tokens, p, heads); });
    s.check("attend_downsampled", Suite::with_params({{"x", tokens}}, p),
            [&] { return attend_downsampled(tokens, 3, 4, p, heads, 2); });

    auto f = s.rand({1, c, 7, 9}, "f");
    AttentionConfig cfg;
    cfg.channels = c;
    cfg.head_dim = c / heads;
    cfg.pooled = {3, 3};
    s.check("pyramid_pool_tokens", {{"x", f}}, [&] { return pyramid_pool_tokens(f, {{3, 3}, {2, 2}, {1, 1}}); });
    s.check("attend_lrsa", Suite::with_params({{"x", f}}, p), [&] { return attend_lrsa(f, p, cfg); });
    cfg.kv_pyramid = true;
    cfg.pyramid_sizes = {{3, 3}, {2, 2}, {1, 1}};
    s.check("attend_lrsa_pyramid", Suite::with_params({{"x", f}}, p), [&] { return attend_lrsa(f, p, cfg); });
}

void block_check(Suite& s) {
    auto spec = variant_spec("micro", Task::segmentation, 2);
    auto cfg = stage_block_config(spec, 0);
    cfg.attn.pooled = {4, 4};
    cfg.attn.pyramid_sizes = {{3, 3}, {2, 2}};
    ParamStore64 full;
    declare_params(full, spec);
    ParamStore64 ps;
    std::vector<NamedTensor64> in;
    auto x = s.rand({1, spec.stages[0].channels, 8, 8}, "block/x");
    in.push_back({"x", x});
    const std::string prefix = block_prefix(0, 0);
    for (const auto& [name, t] : full.entries()) {
        if (name.rfind(prefix + ".", 0) == 0) {
            auto r = s.rand(t.shape(), "block/" + name, -0.3, 0.3);
            ps.add(name, r);
            in.push_back({name, r});
        }
    }
    s.check("basic_block", std::move(in), [&] { return basic_block_forward(x, ps, prefix, cfg); });
}

void model_check(Suite& s, const SuiteOptions& opt) {
    auto built = build_variant("micro", Task::segmentation, 2, opt.seed);
    Model64 m{built.spec, built.params.cast<double>()};
    // The classifier starts at zero, which would zero every upstream gradient.
    auto& cls = m.params.get("decoder.classifier.weight");
    auto r = s.rand(cls.shape(), "model/classifier", -0.5, 0.5);
    std::copy(r.data().begin(), r.data().end(), cls.data().begin());

    auto image = s.rand({1, 3, 64, 64}, "model/image", 0, 1);
    auto probe = s.rand({1, 2, 64, 64}, "model/probe");
    SegmentationRunner<double> runner(m, image);
    std::vector<NamedTensor64> in;
    std::vector<std::size_t> unit;
    for (auto& [name, t] : m.params.entries()) {
        in.push_back({name, t});
        unit.push_back(runner.unit_of(name));
    }
    GradCheckOptions g;
    g.eps = opt.eps;
    g.seed = opt.seed;
    g.sample_fraction = opt.model_fraction;
    s.run("micro_segmentation_model", [&] {
        return check_gradients_indexed(
            std::move(in),
            [&](std::optional<std::size_t> k) {
                return mean(mul(k ? runner.rerun_from(unit[*k]) : runner.run(), probe));
            },
            g);
    });
}

}  // namespace

SuiteReport run_gradient_suite(const SuiteOptions& opt) {
    const auto t0 = Clock::now();
    Suite s(opt);
    operator_checks(s);
    attention_checks(s);
    block_check(s);
    if (opt.include_model) {
        model_check(s, opt);
    }
    s.report.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return s.report;
}

}  // namespace lrf
