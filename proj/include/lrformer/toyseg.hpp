#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrformer/io.hpp"
#include "lrformer/model.hpp"

namespace lrf {

struct Sample {
    Tensor image;  // [3, H, W] in [0, 1]
    LabelMap mask;
};

// Each sample draws 1-3 rectangles and ellipses of classes 1..classes-1 on a
// noisy class-0 background; foreground covers 5-60% of the pixels. split
// keys an independent stream, so "train" and "eval" never share samples.
std::vector<Sample> generate_dataset(std::uint64_t seed, std::size_t count, std::size_t size,
                                     std::size_t classes = 2, const std::string& split = "train");

// Stacks samples into [B, 3, H, W] and a flat label vector.
Tensor stack_images(const std::vector<const Sample*>& batch);
std::vector<std::int32_t> stack_labels(const std::vector<const Sample*>& batch);

// Mean over pixels of -log softmax(logits)[label]; logits [B, K, H, W],
// labels in [b][y][x] order.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, const std::vector<std::int32_t>& labels);

struct AdamWConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// LayerNorm gains and offsets are not decayed.
bool decays(const std::string& param_name);

template <typename T>
class AdamW {
  public:
    AdamW(const BasicParamStore<T>& store, AdamWConfig cfg);

    // One update from the gradients accumulated in store; a parameter
    // without a gradient is treated as having a zero gradient.
    void step(BasicParamStore<T>& store, double lr);
    std::size_t steps() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

  private:
    AdamWConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// lr * (1 - step / total)^power
double poly_lr(double base, std::size_t step, std::size_t total, double power = 1.0);

struct TrainConfig {
    std::string variant = "micro";
    std::size_t steps = 200;
    std::size_t batch = 4;
    std::size_t size = 64;
    std::size_t classes = 2;
    std::size_t train_samples = 256;
    std::uint64_t seed = 0;
    double power = 1.0;
    AdamWConfig optim;
};

struct StepLog {
    std::size_t step = 0;
    double lr = 0;
    double loss = 0;
};

struct TrainResult {
    Model model;
    std::vector<StepLog> log;
    double initial_loss = 0;  // loss on the first batch before any update
    double final_loss = 0;    // loss of the last step
};

TrainResult train_toy(const TrainConfig& cfg);

struct Metrics {
    std::size_t classes = 0;
    std::vector<std::uint64_t> confusion;  // [truth][prediction]
    double pixel_accuracy = 0;
    std::vector<double> iou;  // NaN for classes absent from both truth and prediction
    double miou = 0;          // mean over classes with a defined IoU
};

Metrics confusion_metrics(const std::vector<std::int32_t>& truth, const std::vector<std::int32_t>& prediction,
                          std::size_t classes);

// Argmax over classes of the logits resized to the input size.
LabelMap predict(const Model& model, const Tensor& image);
Metrics evaluate(const Model& model, const std::vector<Sample>& dataset);

}  // namespace lrf
