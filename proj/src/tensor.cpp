#include "lrformer/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "lrformer/cost.hpp"
#include "lrformer/errors.hpp"

namespace lrf {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

thread_local bool t_grad_enabled = true;

}  // namespace

bool grad_enabled() {
    return t_grad_enabled;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
    t_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
    t_grad_enabled = previous_;
}

template <typename T>
BasicTensor<T>::BasicTensor() : node_(std::make_shared<TensorNode<T>>()) {
    node_->data.assign(1, T{});
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : node_(std::make_shared<TensorNode<T>>()) {
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename T>
std::size_t BasicTensor<T>::dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
    }
    return node_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) {
        throw UsageError("tensor: item() on tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) {
        throw DimensionError("tensor: index rank mismatch");
    }
    std::size_t off = 0;
    std::size_t i = 0;
    for (auto v : index) {
        if (v >= node_->shape[i]) {
            throw DimensionError("tensor: index out of range");
        }
        off = off * node_->shape[i] + v;
        ++i;
    }
    return node_->data[off];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    BasicTensor out(node_->shape, node_->data, node_->requires_grad);
    out.node_->grad = node_->grad;
    return out;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
    return BasicTensor(node_->shape, node_->data, false);
}

template <typename T>
template <typename U>
BasicTensor<U> BasicTensor<T>::cast() const {
    std::vector<U> values(node_->data.begin(), node_->data.end());
    return BasicTensor<U>(node_->shape, std::move(values), false);
}

template <typename T>
void Tape<T>::record(NodePtr output, std::vector<NodePtr> inputs, std::function<void()> backward_fn) {
    entries_.push_back(Entry{std::move(output), std::move(inputs), std::move(backward_fn)});
}

template <typename T>
void Tape<T>::backward(const BasicTensor<T>& loss) {
    if (loss.numel() != 1) {
        clear();
        throw UsageError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    if (entries_.empty()) {
        throw UsageError("backward: tape is empty (loss does not depend on any tensor requiring grad)");
    }
    auto& root = *loss.node();
    root.ensure_grad();
    root.grad[0] += T{1};
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.empty()) {
            continue;  // not on a path to the loss
        }
        it->backward_fn();
    }
    clear();
}

template <typename T>
Tape<T>& default_tape() {
    thread_local Tape<T> tape;
    return tape;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
    default_tape<T>().backward(loss);
}

namespace detail {

template <typename T>
bool should_record(std::initializer_list<const BasicTensor<T>*> inputs) {
    if (!grad_enabled()) {
        return false;
    }
    for (const auto* t : inputs) {
        if (t != nullptr && t->requires_grad()) {
            return true;
        }
    }
    return false;
}

template <typename T>
void record(const BasicTensor<T>& output, std::initializer_list<const BasicTensor<T>*> inputs,
            std::function<void()> backward_fn) {
    std::vector<typename Tape<T>::NodePtr> nodes;
    nodes.reserve(inputs.size());
    for (const auto* t : inputs) {
        if (t != nullptr) {
            nodes.push_back(t->node());
        }
    }
    output.node()->requires_grad = true;
    default_tape<T>().record(output.node(), std::move(nodes), std::move(backward_fn));
}

template <typename T>
void check_finite(const BasicTensor<T>& t, const char* op) {
    constexpr T kMax = std::numeric_limits<T>::max();
    bool bad = false;
    for (T v : t.data()) {
        bad |= !(std::abs(v) <= kMax);
    }
    if (bad) {
        throw NumericalError(std::string(op) + ": produced a non-finite value");
    }
}

}  // namespace detail

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    T s{};
    for (T v : x.data()) {
        s += v;
    }
    auto out = BasicTensor<T>::scalar(s);
    if (detail::should_record<T>({&x})) {
        auto xn = x.node();
        auto on = out.node();
        detail::record<T>(out, {&x}, [xn, on] {
            if (!xn->requires_grad) {
                return;
            }
            xn->ensure_grad();
            const T g = on->grad[0];
            for (auto& v : xn->grad) {
                v += g;
            }
        });
    }
    detail::check_finite(out, "sum");
    return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
    return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> finite_diff_grad(const std::function<T(const BasicTensor<T>&)>& f, BasicTensor<T>& x, T eps) {
    if (!(eps > T{0})) {
        throw UsageError("finite_diff_grad: eps must be positive");
    }
    NoGradGuard no_grad;
    BasicTensor<T> g(x.shape());
    auto xs = x.data();
    auto gs = g.data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const T saved = xs[i];
        xs[i] = saved + eps;
        const T fp = f(x);
        xs[i] = saved - eps;
        const T fm = f(x);
        xs[i] = saved;
        gs[i] = (fp - fm) / (T{2} * eps);
    }
    return g;
}

#define LRF_INSTANTIATE_CORE(T)                                                                       \
    template class BasicTensor<T>;                                                                    \
    template class Tape<T>;                                                                           \
    template Tape<T>& default_tape<T>();                                                              \
    template void backward<T>(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> sum<T>(const BasicTensor<T>&);                                            \
    template BasicTensor<T> mean<T>(const BasicTensor<T>&);                                           \
    template BasicTensor<T> finite_diff_grad<T>(const std::function<T(const BasicTensor<T>&)>&,      \
                                                BasicTensor<T>&, T);                                  \
    template bool detail::should_record<T>(std::initializer_list<const BasicTensor<T>*>);             \
    template void detail::record<T>(const BasicTensor<T>&, std::initializer_list<const BasicTensor<T>*>, \
                                    std::function<void()>);                                           \
    template void detail::check_finite<T>(const BasicTensor<T>&, const char*);

LRF_INSTANTIATE_CORE(float)
LRF_INSTANTIATE_CORE(double)

template BasicTensor<double> BasicTensor<float>::cast<double>() const;
template BasicTensor<float> BasicTensor<double>::cast<float>() const;
template BasicTensor<float> BasicTensor<float>::cast<float>() const;
template BasicTensor<double> BasicTensor<double>::cast<double>() const;

}  // namespace lrf
