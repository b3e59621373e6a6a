#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lrformer/analyzer.hpp"
#include "lrformer/errors.hpp"
#include "lrformer/gradsuite.hpp"
#include "lrformer/io.hpp"
#include "lrformer/toyseg.hpp"

using namespace lrf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string giga(std::uint64_t macs) { return fmt("%.3f", double(macs) / 1e9); }
std::string mega(std::uint64_t n) { return fmt("%.3f", double(n) / 1e6); }

void require_image_size(std::size_t h, std::size_t w) {
    if (h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0) {
        throw ConfigError("input " + std::to_string(h) + "x" + std::to_string(w) +
                          " must be a positive multiple of 32 on both sides");
    }
}

VariantSpec make_spec(const std::string& variant, const std::string& task, std::size_t classes,
                      const std::string& scheme) {
    const Task t = parse_task(task);
    if (classes == 0) {
        classes = t == Task::segmentation ? 150 : 1000;
    }
    auto spec = variant_spec(variant, t, classes);
    spec.scheme = parse_attention_scheme(scheme);
    spec.validate();
    return spec;
}

struct ModelArgs {
    std::string variant = "micro";
    std::size_t classes = 2;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--variant", variant, "Variant the weights belong to")->capture_default_str();
        cmd->add_option("--classes", classes, "Number of classes")->capture_default_str()->check(CLI::Range(2, 255));
    }
    VariantSpec spec() const { return variant_spec(variant, Task::segmentation, classes); }
};

void print_metrics(std::ostream& os, const Metrics& m) {
    os << "pixel_accuracy " << fmt("%.6f", m.pixel_accuracy) << "\n";
    os << "miou " << fmt("%.6f", m.miou) << "\n";
    for (std::size_t k = 0; k < m.iou.size(); ++k) {
        os << "iou_" << k << " " << (std::isnan(m.iou[k]) ? std::string("nan") : fmt("%.6f", m.iou[k])) << "\n";
    }
}

// info ----------------------------------------------------------------------

struct InfoArgs {
    std::string variant = "S";
    std::string task = "seg";
    std::size_t classes = 0;
    std::vector<std::size_t> input{512};
    std::string scheme = "lrsa";
};

int run_info(const InfoArgs& a) {
    const auto spec = make_spec(a.variant, a.task, a.classes, a.scheme);
    const std::size_t h = a.input[0];
    const std::size_t w = a.input.size() > 1 ? a.input[1] : h;
    require_image_size(h, w);
    const auto report = count_flops(spec, h, w);
    auto& out = std::cout;
    out << "variant " << spec.name << "\n";
    out << "task " << to_string(spec.task) << "\n";
    out << "classes " << spec.num_classes << "\n";
    out << "input " << h << "x" << w << "\n";
    out << "scheme " << to_string(spec.scheme) << "\n";
    for (std::size_t s = 0; s < 4; ++s) {
        const auto& st = spec.stages[s];
        const auto cfg = spec.stage_attention(s);
        out << "stage" << s + 1 << " channels " << st.channels << " depth " << st.depth << " heads "
            << st.channels / st.head_dim << " ffn_ratio " << st.ffn_ratio << " grid " << h / (4u << s) << "x"
            << w / (4u << s) << " pooled " << cfg.pooled.h << "x" << cfg.pooled.w << "\n";
    }
    if (spec.task == Task::segmentation) {
        out << "decoder width " << spec.decoder_width << "\n";
        out << "output " << spec.num_classes << "x" << h << "x" << w << "\n";
    } else {
        out << "output " << spec.num_classes << "\n";
    }
    const auto params = count_params(spec);
    out << "params " << params << " (" << mega(params) << " M)\n";
    out << "flops " << report.headline() << " (" << giga(report.headline()) << " G)\n";
    out << "attention_flops " << attention_flops(report) << " (" << giga(attention_flops(report)) << " G)\n";
    for (auto c : {CostCategory::attn_core, CostCategory::attn_proj, CostCategory::conv, CostCategory::interp,
                   CostCategory::norm_act, CostCategory::other}) {
        out << "macs_" << to_string(c) << " " << report.total(c) << "\n";
    }
    return kExitOk;
}

// flops ---------------------------------------------------------------------

struct FlopsArgs {
    std::vector<std::string> variants{"S"};
    std::string task = "seg";
    std::size_t classes = 0;
    std::vector<std::size_t> inputs{512};
    std::string format = "text";
    std::string scheme = "lrsa";
};

int run_flops(const FlopsArgs& a) {
    const auto format = parse_table_format(a.format);
    std::vector<ComparisonRow> rows;
    for (const auto& v : a.variants) {
        const auto spec = make_spec(v, a.task, a.classes, a.scheme);
        for (auto s : a.inputs) {
            require_image_size(s, s);
            rows.push_back(comparison_row(spec, s, s));
        }
    }
    emit_comparison_table(std::cout, rows, format);
    return kExitOk;
}

// compare-attention -----------------------------------------------------------

struct CompareArgs {
    std::vector<std::string> schemes{"vanilla", "downsampled", "lrsa"};
    std::size_t channels = 64;
    std::vector<std::size_t> sizes{64, 128, 256};
    std::size_t pooled = 256;
    std::size_t ratio = 8;
    std::size_t window = 7;
    std::size_t head_dim = 32;
    std::string format = "text";
};

int run_compare(const CompareArgs& a) {
    const auto format = parse_table_format(a.format);
    std::vector<CostScheme> schemes;
    for (const auto& s : a.schemes) {
        schemes.push_back(parse_cost_scheme(s));
    }
    auto param_of = [&](CostScheme s) -> double {
        switch (s) {
            case CostScheme::lrsa: return double(a.pooled);
            case CostScheme::downsampled: return double(a.ratio);
            case CostScheme::window: return double(a.window);
            case CostScheme::factorized: return double(a.head_dim);
            case CostScheme::vanilla: break;
        }
        return 0;
    };
    auto& out = std::cout;
    if (format == TableFormat::csv) {
        out << "scheme,size,tokens,channels,macs\n";
    } else {
        const double largest = double(*std::max_element(a.sizes.begin(), a.sizes.end()));
        for (auto s : schemes) {
            out << to_string(s) << ": " << scheme_cost(s, largest * largest, double(a.channels), param_of(s)).formula
                << "\n";
        }
        out << "\n";
        char line[160];
        std::snprintf(line, sizeof line, "%-12s %8s %10s %16s %10s\n", "scheme", "size", "tokens", "macs",
                      "vs_vanilla");
        out << line;
    }
    for (auto side : a.sizes) {
        if (side == 0) {
            throw ConfigError("sizes must be positive");
        }
        const double n = double(side) * double(side);
        const double vanilla = scheme_cost(CostScheme::vanilla, n, double(a.channels)).macs;
        for (auto s : schemes) {
            const double macs = scheme_cost(s, n, double(a.channels), param_of(s)).macs;
            if (format == TableFormat::csv) {
                out << to_string(s) << "," << side << "x" << side << "," << std::size_t(n) << "," << a.channels
                    << "," << fmt("%.0f", macs) << "\n";
            } else {
                char line[160];
                std::snprintf(line, sizeof line, "%-12s %8s %10zu %16.0f %10.4f\n", to_string(s).c_str(),
                              (std::to_string(side) + "x" + std::to_string(side)).c_str(), std::size_t(n), macs,
                              macs / vanilla);
                out << line;
            }
        }
    }
    return kExitOk;
}

// gradcheck -------------------------------------------------------------------

struct GradArgs {
    std::uint64_t seed = 0;
    double tol = 1e-3;
    double eps = 1e-4;
    double fraction = 0.05;
    bool skip_model = false;
};

int run_gradcheck(const GradArgs& a) {
    SuiteOptions opt;
    opt.seed = a.seed;
    opt.tol = a.tol;
    opt.eps = a.eps;
    opt.model_fraction = a.fraction;
    opt.include_model = !a.skip_model;
    opt.on_result = [](const SuiteEntry& e) {
        char line[200];
        std::snprintf(line, sizeof line, "%-26s checked %7zu max_rel_err %.3e %s\n", e.name.c_str(),
                      e.result.checked, e.result.max_rel_err, e.passed ? "PASS" : "FAIL");
        std::cout << line << std::flush;
        std::cerr << "  " << e.name << ": " << fmt("%.1f", e.seconds) << " s, worst " << e.result.worst << "\n";
    };
    const auto report = run_gradient_suite(opt);
    const bool ok = report.passed();
    std::cout << "gradcheck " << (ok ? "PASS" : "FAIL") << " max_rel_err " << fmt("%.3e", report.max_rel_err())
              << " tol " << fmt("%g", a.tol) << "\n";
    std::cerr << "gradcheck took " << fmt("%.1f", report.seconds) << " s\n";
    return ok ? kExitOk : kExitNumerical;
}

// train-toy / eval-toy ----------------------------------------------------------

struct TrainArgs {
    TrainConfig cfg;
    std::string out;
    std::string log;
    std::size_t eval_samples = 32;
};

void write_log_csv(const std::string& path, const std::vector<StepLog>& log) {
    std::ostringstream os;
    os << "step,lr,loss\n";
    for (const auto& s : log) {
        os << s.step << "," << fmt("%.9g", s.lr) << "," << fmt("%.9g", s.loss) << "\n";
    }
    const auto text = os.str();
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

int run_train(TrainArgs a) {
    require_image_size(a.cfg.size, a.cfg.size);
    if (a.cfg.steps == 0 || a.cfg.batch == 0) {
        throw ConfigError("steps and batch must be positive");
    }
    std::cerr << "training " << a.cfg.variant << " for " << a.cfg.steps << " steps (batch " << a.cfg.batch
              << ", " << a.cfg.size << "x" << a.cfg.size << ", seed " << a.cfg.seed << ")\n";
    const auto result = train_toy(a.cfg);
    if (!a.out.empty()) {
        save_weights(result.model.params, a.out);
        std::cerr << "wrote " << a.out << "\n";
    }
    if (!a.log.empty()) {
        write_log_csv(a.log, result.log);
        std::cerr << "wrote " << a.log << "\n";
    }
    std::cout << "initial_loss " << fmt("%.6f", result.initial_loss) << "\n";
    std::cout << "final_loss " << fmt("%.6f", result.final_loss) << "\n";
    if (a.eval_samples > 0) {
        const auto held_out = generate_dataset(a.cfg.seed, a.eval_samples, a.cfg.size, a.cfg.classes, "eval");
        print_metrics(std::cout, evaluate(result.model, held_out));
    }
    return kExitOk;
}

struct EvalArgs {
    ModelArgs model;
    std::string weights;
    std::uint64_t seed = 0;
    std::size_t samples = 32;
    std::size_t size = 64;
};

int run_eval(const EvalArgs& a) {
    require_image_size(a.size, a.size);
    const auto model = load_model(a.model.spec(), a.weights);
    const auto data = generate_dataset(a.seed, a.samples, a.size, a.model.classes, "eval");
    print_metrics(std::cout, evaluate(model, data));
    return kExitOk;
}

// segment -----------------------------------------------------------------------

struct SegmentArgs {
    ModelArgs model;
    std::string weights;
    std::string image;
    std::string out;
};

int run_segment(const SegmentArgs& a) {
    const auto model = load_model(a.model.spec(), a.weights);
    const auto image = read_image(a.image);
    const auto mask = predict(model, image);
    write_mask(a.out, mask);
    std::vector<std::size_t> counts(a.model.classes, 0);
    for (auto l : mask.labels) {
        ++counts[std::size_t(l)];
    }
    std::cout << "size " << mask.height << "x" << mask.width << "\n";
    for (std::size_t k = 0; k < counts.size(); ++k) {
        std::cout << "class_" << k << "_pixels " << counts[k] << "\n";
    }
    std::cerr << "wrote " << a.out << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LRFormer: low-resolution self-attention models, cost analysis and toy segmentation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "lrformer 1.0");

    InfoArgs info;
    auto* info_cmd = app.add_subcommand("info", "Architecture summary, parameter and FLOP counts");
    info_cmd->add_option("--variant", info.variant, "T, S, B, L, XL or micro")->capture_default_str();
    info_cmd->add_option("--task", info.task, "seg or cls")->capture_default_str();
    info_cmd->add_option("--classes", info.classes, "Number of classes (default 150 for seg, 1000 for cls)");
    info_cmd->add_option("--input", info.input, "Input size H [W]")->expected(1, 2)->capture_default_str();
    info_cmd->add_option("--scheme", info.scheme, "Attention scheme: lrsa, downsampled or vanilla")
        ->capture_default_str();

    FlopsArgs flops;
    auto* flops_cmd = app.add_subcommand("flops", "Params/FLOPs/attention-FLOPs table over input sizes");
    flops_cmd->add_option("--variant", flops.variants, "Variants, comma separated")->delimiter(',')
        ->capture_default_str();
    flops_cmd->add_option("--task", flops.task, "seg or cls")->capture_default_str();
    flops_cmd->add_option("--classes", flops.classes, "Number of classes (default 150 for seg, 1000 for cls)");
    flops_cmd->add_option("--input", flops.inputs, "Square input sizes")->expected(1, -1)->capture_default_str();
    flops_cmd->add_option("--format", flops.format, "text or csv")->capture_default_str();
    flops_cmd->add_option("--scheme", flops.scheme, "Attention scheme: lrsa, downsampled or vanilla")
        ->capture_default_str();

    CompareArgs cmp;
    auto* cmp_cmd = app.add_subcommand("compare-attention", "Analytic cost of attention schemes on an s x s map");
    cmp_cmd->add_option("--schemes", cmp.schemes, "vanilla, downsampled, lrsa, window, factorized")
        ->delimiter(',')
        ->capture_default_str();
    cmp_cmd->add_option("--channels", cmp.channels, "Token width C")->capture_default_str();
    cmp_cmd->add_option("--sizes", cmp.sizes, "Map sides s (N = s*s)")->expected(1, -1)->capture_default_str();
    cmp_cmd->add_option("--pooled", cmp.pooled, "Pooled token count m (lrsa)")->capture_default_str();
    cmp_cmd->add_option("--ratio", cmp.ratio, "Reduction ratio (downsampled)")->capture_default_str();
    cmp_cmd->add_option("--window", cmp.window, "Window side (window)")->capture_default_str();
    cmp_cmd->add_option("--head-dim", cmp.head_dim, "Head width (factorized)")->capture_default_str();
    cmp_cmd->add_option("--format", cmp.format, "text or csv")->capture_default_str();

    GradArgs grad;
    auto* grad_cmd = app.add_subcommand("gradcheck", "64-bit finite-difference gradient suite");
    grad_cmd->add_option("--seed", grad.seed, "Seed for inputs and sampling")->capture_default_str();
    grad_cmd->add_option("--tol", grad.tol, "Maximum relative error")->capture_default_str();
    grad_cmd->add_option("--eps", grad.eps, "Central-difference step")->capture_default_str();
    grad_cmd->add_option("--fraction", grad.fraction, "Sampled share of each model parameter tensor")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    grad_cmd->add_flag("--skip-model", grad.skip_model, "Skip the full micro model check");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train-toy", "Train on the synthetic shapes dataset");
    train_cmd->add_option("--steps", train.cfg.steps, "Optimizer steps")->capture_default_str();
    train_cmd->add_option("--seed", train.cfg.seed, "Seed for init, data and batches")->capture_default_str();
    train_cmd->add_option("--size", train.cfg.size, "Image side")->capture_default_str();
    train_cmd->add_option("--batch", train.cfg.batch, "Batch size")->capture_default_str();
    train_cmd->add_option("--classes", train.cfg.classes, "Classes including background")
        ->capture_default_str()
        ->check(CLI::Range(2, 255));
    train_cmd->add_option("--variant", train.cfg.variant, "Model variant")->capture_default_str();
    train_cmd->add_option("--lr", train.cfg.optim.lr, "Peak learning rate")->capture_default_str();
    train_cmd->add_option("--train-samples", train.cfg.train_samples, "Training set size")->capture_default_str();
    train_cmd->add_option("--eval-samples", train.eval_samples, "Held-out images evaluated after training")
        ->capture_default_str();
    train_cmd->add_option("--out", train.out, "Weights file to write");
    train_cmd->add_option("--log", train.log, "CSV file for step,lr,loss");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval-toy", "Evaluate weights on held-out synthetic images");
    eval_cmd->add_option("--weights", eval.weights, "Weights file")->required();
    eval_cmd->add_option("--seed", eval.seed, "Dataset seed")->capture_default_str();
    eval_cmd->add_option("--samples", eval.samples, "Number of images")->capture_default_str();
    eval_cmd->add_option("--size", eval.size, "Image side")->capture_default_str();
    eval.model.add_to(eval_cmd);

    SegmentArgs seg;
    auto* seg_cmd = app.add_subcommand("segment", "Predict a label mask for a PPM image");
    seg_cmd->add_option("--weights", seg.weights, "Weights file")->required();
    seg_cmd->add_option("--image", seg.image, "Input P6 PPM")->required();
    seg_cmd->add_option("--out", seg.out, "Output P5 PGM mask")->required();
    seg.model.add_to(seg_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*info_cmd) return run_info(info);
        if (*flops_cmd) return run_flops(flops);
        if (*cmp_cmd) return run_compare(cmp);
        if (*grad_cmd) return run_gradcheck(grad);
        if (*train_cmd) return run_train(train);
        if (*eval_cmd) return run_eval(eval);
        if (*seg_cmd) return run_segment(seg);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
