#include "lrformer/toyseg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "lrformer/errors.hpp"
#include "lrformer/rng.hpp"

namespace lrf {

namespace {

constexpr double kMinForeground = 0.05;
constexpr double kMaxForeground = 0.60;
constexpr double kPixelNoise = 0.08;

void draw_shape(RandomStream& rng, std::vector<std::int32_t>& mask, std::size_t size, std::int32_t label) {
    const double s = static_cast<double>(size);
    if (rng.below(2) == 0) {
        const auto w = static_cast<std::size_t>(rng.uniform(s / 6, s / 2));
        const auto h = static_cast<std::size_t>(rng.uniform(s / 6, s / 2));
        const std::size_t x0 = rng.below(size - w + 1), y0 = rng.below(size - h + 1);
        for (std::size_t y = y0; y < y0 + h; ++y) {
            std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(y * size + x0), w, label);
        }
    } else {
        const double rx = rng.uniform(s / 12, s / 4), ry = rng.uniform(s / 12, s / 4);
        const double cx = rng.uniform(rx, s - rx), cy = rng.uniform(ry, s - ry);
        for (std::size_t y = 0; y < size; ++y) {
            const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
            for (std::size_t x = 0; x < size; ++x) {
                const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
                if (dx * dx + dy * dy <= 1.0) {
                    mask[y * size + x] = label;
                }
            }
        }
    }
}

Sample make_sample(RandomStream& rng, std::size_t size, std::size_t classes) {
    std::vector<std::int32_t> mask(size * size);
    for (int attempt = 0;; ++attempt) {
        if (attempt == 1000) {
            throw Error("generate_dataset: could not place shapes with the required foreground fraction");
        }
        std::fill(mask.begin(), mask.end(), 0);
        const std::size_t shapes = 1 + rng.below(3);
        for (std::size_t k = 0; k < shapes; ++k) {
            draw_shape(rng, mask, size, static_cast<std::int32_t>(1 + rng.below(classes - 1)));
        }
        const auto fg = static_cast<double>(std::count_if(mask.begin(), mask.end(), [](auto v) { return v != 0; }));
        const double frac = fg / static_cast<double>(mask.size());
        if (frac >= kMinForeground && frac <= kMaxForeground) {
            break;
        }
    }
    // Background colours are dark, foreground colours bright; each class gets
    // its own colour per sample.
    std::vector<std::array<double, 3>> colour(classes);
    for (std::size_t k = 0; k < classes; ++k) {
        for (auto& c : colour[k]) {
            c = k == 0 ? rng.uniform(0.05, 0.45) : rng.uniform(0.55, 0.95);
        }
    }
    Tensor image({3, size, size});
    auto d = image.data();
    const std::size_t plane = size * size;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            const double v = colour[static_cast<std::size_t>(mask[i])][c] + kPixelNoise * rng.normal();
            d[c * plane + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return Sample{image, LabelMap{size, size, std::move(mask)}};
}

}  // namespace

std::vector<Sample> generate_dataset(std::uint64_t seed, std::size_t count, std::size_t size, std::size_t classes,
                                     const std::string& split) {
    if (size == 0 || size % 32 != 0) {
        throw ConfigError("generate_dataset: size " + std::to_string(size) + " must be a positive multiple of 32");
    }
    if (count == 0) {
        throw ConfigError("generate_dataset: count must be >= 1");
    }
    if (classes < 2 || classes > 255) {
        throw ConfigError("generate_dataset: classes must be in [2, 255]");
    }
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        RandomStream rng(seed, "toyseg/" + split + "/" + std::to_string(i));
        out.push_back(make_sample(rng, size, classes));
    }
    return out;
}

Tensor stack_images(const std::vector<const Sample*>& batch) {
    if (batch.empty()) {
        throw UsageError("stack_images: empty batch");
    }
    const Shape& s = batch.front()->image.shape();
    Tensor out({batch.size(), s[0], s[1], s[2]});
    auto d = out.data();
    const std::size_t n = batch.front()->image.numel();
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (batch[b]->image.shape() != s) {
            throw DimensionError("stack_images: samples differ in shape");
        }
        std::copy_n(batch[b]->image.data().begin(), n, d.begin() + static_cast<std::ptrdiff_t>(b * n));
    }
    return out;
}

std::vector<std::int32_t> stack_labels(const std::vector<const Sample*>& batch) {
    std::vector<std::int32_t> out;
    for (const auto* s : batch) {
        out.insert(out.end(), s->mask.labels.begin(), s->mask.labels.end());
    }
    return out;
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, const std::vector<std::int32_t>& labels) {
    if (logits.rank() != 4) {
        throw DimensionError("cross_entropy: expected [B,K,H,W] logits, got " + shape_str(logits.shape()));
    }
    const std::size_t b = logits.dim(0), k = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
    const std::size_t pixels = b * plane;
    if (labels.size() != pixels) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(pixels) + " pixels");
    }
    for (std::size_t i = 0; i < pixels; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
            throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at pixel " + std::to_string(i) +
                            " is outside [0, " + std::to_string(k) + ")");
        }
    }
    auto x = logits.data();
    // Softmax probabilities kept for the backward pass.
    auto probs = std::make_shared<std::vector<T>>(x.size());
    double total = 0;
    for (std::size_t n = 0; n < b; ++n) {
        const std::size_t base = n * k * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                mx = std::max(mx, x[base + c * plane + p]);
            }
            T z{0};
            for (std::size_t c = 0; c < k; ++c) {
                const T e = std::exp(x[base + c * plane + p] - mx);
                (*probs)[base + c * plane + p] = e;
                z += e;
            }
            for (std::size_t c = 0; c < k; ++c) {
                (*probs)[base + c * plane + p] /= z;
            }
            const auto label = static_cast<std::size_t>(labels[n * plane + p]);
            total += static_cast<double>(std::log(z) + mx - x[base + label * plane + p]);
        }
    }
    auto out = BasicTensor<T>::scalar(static_cast<T>(total / static_cast<double>(pixels)));
    if (detail::should_record<T>({&logits})) {
        auto ln = logits.node(), on = out.node();
        detail::record<T>(out, {&logits}, [ln, on, probs, labels, b, k, plane, pixels] {
            if (!ln->requires_grad) {
                return;
            }
            ln->ensure_grad();
            const T g = on->grad[0] / static_cast<T>(pixels);
            for (std::size_t n = 0; n < b; ++n) {
                const std::size_t base = n * k * plane;
                for (std::size_t c = 0; c < k; ++c) {
                    for (std::size_t p = 0; p < plane; ++p) {
                        const std::size_t i = base + c * plane + p;
                        const T onehot = static_cast<std::size_t>(labels[n * plane + p]) == c ? T{1} : T{0};
                        ln->grad[i] += g * ((*probs)[i] - onehot);
                    }
                }
            }
        });
    }
    detail::check_finite(out, "cross_entropy");
    return out;
}

bool decays(const std::string& name) {
    auto ends = [&name](const std::string& s) {
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    return !ends(".gamma") && !ends(".beta");
}

template <typename T>
AdamW<T>::AdamW(const BasicParamStore<T>& store, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& [name, t] : store.entries()) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

template <typename T>
void AdamW<T>::step(BasicParamStore<T>& store, double lr) {
    if (store.size() != m_.size()) {
        throw UsageError("AdamW: parameter store changed since construction");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& [name, t] = store.entries()[i];
        auto p = t.data();
        auto g = t.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        if (m.size() != p.size()) {
            throw UsageError("AdamW: parameter '" + name + "' changed shape");
        }
        const double decay = decays(name) ? lr * cfg_.weight_decay : 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
            double pj = static_cast<double>(p[j]);
            pj -= decay * pj;
            pj -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
            p[j] = static_cast<T>(pj);
        }
    }
}

double poly_lr(double base, std::size_t step, std::size_t total, double power) {
    if (total == 0 || step >= total) {
        return 0.0;
    }
    return base * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total), power);
}

namespace {

std::vector<const Sample*> pick_batch(const std::vector<Sample>& data, RandomStream& rng, std::size_t batch) {
    std::vector<const Sample*> out;
    for (std::size_t i = 0; i < batch; ++i) {
        out.push_back(&data[rng.below(data.size())]);
    }
    return out;
}

}  // namespace

TrainResult train_toy(const TrainConfig& cfg) {
    if (cfg.batch == 0) {
        throw ConfigError("train_toy: batch must be >= 1");
    }
    TrainResult result{build_variant(variant_spec(cfg.variant, Task::segmentation, cfg.classes), cfg.seed), {}, 0, 0};
    auto& model = result.model;
    const auto data = generate_dataset(cfg.seed, cfg.train_samples, cfg.size, cfg.classes, "train");
    RandomStream batches(cfg.seed, "toyseg/batches");
    {
        RandomStream first = batches;
        const auto batch = pick_batch(data, first, cfg.batch);
        NoGradGuard no_grad;
        result.initial_loss = cross_entropy(segment_forward(stack_images(batch), model), stack_labels(batch)).item();
    }
    result.final_loss = result.initial_loss;
    AdamW<float> opt(model.params, cfg.optim);
    model.params.set_requires_grad(true);
    auto& tape = default_tape<float>();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const auto batch = pick_batch(data, batches, cfg.batch);
        const double lr = poly_lr(cfg.optim.lr, step, cfg.steps, cfg.power);
        tape.clear();
        model.params.zero_grad();
        auto loss = cross_entropy(segment_forward(stack_images(batch), model), stack_labels(batch));
        backward(loss);
        opt.step(model.params, lr);
        result.final_loss = loss.item();
        result.log.push_back({step, lr, result.final_loss});
    }
    tape.clear();
    model.params.zero_grad();
    model.params.set_requires_grad(false);
    return result;
}

Metrics confusion_metrics(const std::vector<std::int32_t>& truth, const std::vector<std::int32_t>& prediction,
                          std::size_t classes) {
    if (truth.size() != prediction.size()) {
        throw DimensionError("confusion_metrics: truth and prediction differ in size");
    }
    Metrics m;
    m.classes = classes;
    m.confusion.assign(classes * classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto t = truth[i], p = prediction[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes || static_cast<std::size_t>(p) >= classes) {
            throw DataError("confusion_metrics: label outside [0, " + std::to_string(classes) + ") at pixel " +
                            std::to_string(i));
        }
        ++m.confusion[static_cast<std::size_t>(t) * classes + static_cast<std::size_t>(p)];
    }
    std::uint64_t correct = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        correct += m.confusion[c * classes + c];
    }
    m.pixel_accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
    double sum = 0;
    std::size_t defined = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t j = 0; j < classes; ++j) {
            row += m.confusion[c * classes + j];
            col += m.confusion[j * classes + c];
        }
        const std::uint64_t tp = m.confusion[c * classes + c];
        const std::uint64_t uni = row + col - tp;
        if (uni == 0) {
            m.iou.push_back(std::numeric_limits<double>::quiet_NaN());
        } else {
            m.iou.push_back(static_cast<double>(tp) / static_cast<double>(uni));
            sum += m.iou.back();
            ++defined;
        }
    }
    m.miou = defined == 0 ? 0.0 : sum / static_cast<double>(defined);
    return m;
}

LabelMap predict(const Model& model, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != model.spec.in_channels) {
        throw DimensionError("predict: expected [" + std::to_string(model.spec.in_channels) + ",H,W], got " +
                             shape_str(image.shape()));
    }
    const std::size_t h = image.dim(1), w = image.dim(2);
    // Zero-pad bottom and right to multiples of 32, then crop the logits.
    const std::size_t ph = (h + 31) / 32 * 32, pw = (w + 31) / 32 * 32;
    Tensor x({1, image.dim(0), ph, pw});
    auto src = image.data();
    auto dst = x.data();
    for (std::size_t c = 0; c < image.dim(0); ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((c * h + y) * w), w,
                        dst.begin() + static_cast<std::ptrdiff_t>((c * ph + y) * pw));
        }
    }
    NoGradGuard no_grad;
    const auto logits = segment_forward(x, model);
    const std::size_t k = logits.dim(1), plane = ph * pw;
    auto l = logits.data();
    LabelMap out{h, w, std::vector<std::int32_t>(h * w)};
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
            const std::size_t p = y * pw + xx;
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c) {
                if (l[c * plane + p] > l[best * plane + p]) {
                    best = c;
                }
            }
            out.labels[y * w + xx] = static_cast<std::int32_t>(best);
        }
    }
    return out;
}

Metrics evaluate(const Model& model, const std::vector<Sample>& dataset) {
    std::vector<std::int32_t> truth, pred;
    for (const auto& s : dataset) {
        const auto p = predict(model, s.image);
        truth.insert(truth.end(), s.mask.labels.begin(), s.mask.labels.end());
        pred.insert(pred.end(), p.labels.begin(), p.labels.end());
    }
    return confusion_metrics(truth, pred, model.spec.num_classes);
}

template BasicTensor<float> cross_entropy<float>(const BasicTensor<float>&, const std::vector<std::int32_t>&);
template BasicTensor<double> cross_entropy<double>(const BasicTensor<double>&, const std::vector<std::int32_t>&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace lrf
