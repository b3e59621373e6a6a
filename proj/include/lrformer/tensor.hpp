#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace lrf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) {
            grad.assign(data.size(), T{});
        }
    }
};

// Dense row-major array with shared ownership of its storage. Copies of a
// BasicTensor alias the same node; use clone() for a deep copy.
template <typename T>
class BasicTensor {
  public:
    using value_type = T;

    BasicTensor();
    explicit BasicTensor(Shape shape, T fill = T{});
    BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
    static BasicTensor full(Shape shape, T value) { return BasicTensor(std::move(shape), value); }
    static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(int axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    std::span<T> data() { return node_->data; }
    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    BasicTensor clone() const;
    BasicTensor detach() const;  // deep copy without gradient participation

    template <typename U>
    BasicTensor<U> cast() const;

    const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

  private:
    std::shared_ptr<TensorNode<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Wengert list of recorded operations. Entries are appended in execution
// order, so inputs always precede the operations consuming them; backward
// walks the list once in reverse and then clears it.
template <typename T>
class Tape {
  public:
    using NodePtr = std::shared_ptr<TensorNode<T>>;

    void record(NodePtr output, std::vector<NodePtr> inputs, std::function<void()> backward_fn);
    void backward(const BasicTensor<T>& loss);
    void clear() { entries_.clear(); }
    std::size_t size() const { return entries_.size(); }

  private:
    struct Entry {
        NodePtr output;
        std::vector<NodePtr> inputs;
        std::function<void()> backward_fn;
    };
    std::vector<Entry> entries_;
};

// The tape operators record onto; one per thread and scalar type.
template <typename T>
Tape<T>& default_tape();

bool grad_enabled();

class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

// ---------------------------------------------------------------------------
// Operators. Every operator records itself on default_tape<T>() when grad
// mode is on and any input requires grad. Outputs are checked for NaN/Inf.
// ---------------------------------------------------------------------------

// Elementwise a + b. b may match a's shape or any trailing suffix of it
// (bias over the last axes).
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Elementwise a * b with the same suffix broadcasting as add.
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

// [.., n, k] x [.., k, p] -> [.., n, p]; batch dims broadcast numpy-style.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<int>& perm);

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis);

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis);

// Normalizes over the last axis, then applies gamma/beta of that extent.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps);

// Exact erf-based GELU.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t groups = 1;
};

// Cross-correlation with zero padding. x: [B, C_in, H, W],
// w: [C_out, C_in/groups, k, k], bias: [C_out] or nullptr.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const std::type_identity_t<BasicTensor<T>>* bias, Conv2dOptions opt = {});

// Row bin i spans [floor(i*H/out_h), ceil((i+1)*H/out_h)); same for columns.
template <typename T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w);

// Half-pixel-center bilinear resampling without corner alignment.
template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

// Convenience: loss.backward() on the default tape.
template <typename T>
void backward(const BasicTensor<T>& loss);

// Central-difference gradient of a scalar function with respect to x.
// f is evaluated with x perturbed in place and must be deterministic.
template <typename T>
BasicTensor<T> finite_diff_grad(const std::function<T(const BasicTensor<T>&)>& f, BasicTensor<T>& x, T eps);

// Bin bounds used by adaptive_avg_pool2d, exposed for tests and cost models.
std::size_t pool_bin_begin(std::size_t i, std::size_t in, std::size_t out);
std::size_t pool_bin_end(std::size_t i, std::size_t in, std::size_t out);

namespace detail {

template <typename T>
bool should_record(std::initializer_list<const BasicTensor<T>*> inputs);

// Appends an operation to the default tape and flags output as requiring
// grad. backward_fn reads output.node()->grad and accumulates into inputs.
template <typename T>
void record(const BasicTensor<T>& output, std::initializer_list<const BasicTensor<T>*> inputs,
            std::function<void()> backward_fn);

template <typename T>
void check_finite(const BasicTensor<T>& t, const char* op);

}  // namespace detail

}  // namespace lrf

namespace lrf {

// x: [.., C_in], weight: [C_in, C_out], bias: [C_out] or nullptr.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const std::type_identity_t<BasicTensor<T>>* bias);

// [B, C, H, W] -> [B, H*W, C]
template <typename T>
BasicTensor<T> map_to_tokens(const BasicTensor<T>& x);

// [B, H*W, C] -> [B, C, H, W]
template <typename T>
BasicTensor<T> tokens_to_map(const BasicTensor<T>& x, std::size_t h, std::size_t w);

}  // namespace lrf
