#include "pfa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace pfa {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw ShapeError("shape " + shape_str(shape) + " has a non-positive dimension");
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

std::uint64_t Rng::mix(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finalizer over the combined key
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    // top 53 bits -> [0,1)
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

template <typename T>
Tensor<T> random_uniform(Rng& rng, Shape shape, T lo, T hi) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) {
        v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    }
    return t;
}

template <typename T>
Tensor<T> random_normal(Rng& rng, Shape shape, T stddev) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) {
        v = static_cast<T>(rng.normal() * static_cast<double>(stddev));
    }
    return t;
}

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
    if (grad.numel() == 0) {
        grad = Tensor<T>(value.shape);
    }
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        grad.data[i] += g.data[i];
    }
}

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad, std::string name) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->name = std::move(name);
    return node;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
    return leaf(std::move(value), false);
}

template <typename T>
bool any_requires_grad(const std::vector<Var<T>>& vars) {
    return std::any_of(vars.begin(), vars.end(), [](const Var<T>& v) { return v->requires_grad; });
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(const Tensor<T>&)> backprop) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = any_requires_grad(parents);
    if (node->requires_grad) {
        node->parents = std::move(parents);
        node->backprop = std::move(backprop);
    }
    return node;
}

namespace {

template <typename T>
void topo_visit(const Var<T>& node, std::unordered_set<const Node<T>*>& seen,
                std::vector<Var<T>>& order) {
    // Iterative DFS; graphs recorded over a whole batch get deep.
    struct Frame {
        Var<T> node;
        std::size_t next_parent = 0;
    };
    std::vector<Frame> stack;
    if (!seen.insert(node.get()).second) return;
    stack.push_back({node});
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            Var<T> parent = top.node->parents[top.next_parent++];
            if (seen.insert(parent.get()).second) {
                stack.push_back({std::move(parent)});
            }
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }
}

}  // namespace

template <typename T>
void backward(const Var<T>& loss, bool retain_graph) {
    if (loss->value.numel() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " +
                         shape_str(loss->value.shape));
    }
    if (!loss->requires_grad) {
        throw Error("backward called on a graph with no trainable leaves");
    }
    if (loss->graph_consumed) {
        throw Error("backward: graph already consumed (pass retain_graph to reuse it)");
    }
    std::unordered_set<const Node<T>*> seen;
    std::vector<Var<T>> order;  // parents before children
    topo_visit(loss, seen, order);

    loss->accumulate(Tensor<T>({1}, T(1)));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>& node = **it;
        if (!node.backprop) continue;  // leaves keep their accumulated gradient
        if (node.grad.numel() != 0) {
            node.backprop(node.grad);
        }
        if (!retain_graph) {
            node.backprop = nullptr;
            node.parents.clear();
        }
        node.grad = Tensor<T>();  // interior gradients are transient
    }
    if (!retain_graph) {
        loss->graph_consumed = true;
    }
}

template struct Tensor<float>;
template struct Tensor<double>;
template struct Node<float>;
template struct Node<double>;

template Tensor<float> random_uniform<float>(Rng&, Shape, float, float);
template Tensor<double> random_uniform<double>(Rng&, Shape, double, double);
template Tensor<float> random_normal<float>(Rng&, Shape, float);
template Tensor<double> random_normal<double>(Rng&, Shape, double);

template Var<float> leaf<float>(Tensor<float>, bool, std::string);
template Var<double> leaf<double>(Tensor<double>, bool, std::string);
template Var<float> constant<float>(Tensor<float>);
template Var<double> constant<double>(Tensor<double>);
template bool any_requires_grad<float>(const std::vector<Var<float>>&);
template bool any_requires_grad<double>(const std::vector<Var<double>>&);
template Var<float> make_op<float>(Tensor<float>, std::vector<Var<float>>,
                                   std::function<void(const Tensor<float>&)>);
template Var<double> make_op<double>(Tensor<double>, std::vector<Var<double>>,
                                     std::function<void(const Tensor<double>&)>);
template void backward<float>(const Var<float>&, bool);
template void backward<double>(const Var<double>&, bool);

}  // namespace pfa
