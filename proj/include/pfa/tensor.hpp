#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfa {

// Error taxonomy. ShapeError/IoError/ConfigError map to the distinct failure
// classes the CLI reports; everything derives from Error so call sites can
// catch broadly.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

/// Dense row-major tensor. Canonical layouts: [N,C,H,W] for image-like data,
/// [C] for vectors, [Cout,Cin,kh,kw] for convolution kernels.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
    Tensor(Shape s, T fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != shape_numel(shape)) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
    }

    std::size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    // [N,C,H,W] indexing; hot loops index `data` directly instead.
    T& at4(int n, int c, int h, int w) {
        return data[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }
    T at4(int n, int c, int h, int w) const {
        return data[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }
    T& at2(int n, int c) { return data[static_cast<std::size_t>(n) * dim(1) + c]; }
    T at2(int n, int c) const { return data[static_cast<std::size_t>(n) * dim(1) + c]; }

    bool same_shape_as(const Tensor& other) const { return same_shape(shape, other.shape); }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T value) { return Tensor(std::move(s), value); }
};

/// Deterministic RNG used everywhere seeds matter. Built on mt19937_64 with
/// explicit bit-to-double conversion and Box-Muller normals, so streams are
/// identical across standard library implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Stream key for (seed, index) substreams; splitmix64-style mix.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t index);

    std::uint64_t next_u64() { return engine_(); }
    double uniform();  // [0, 1)
    double uniform(double lo, double hi);
    int uniform_int(int lo, int hi);  // inclusive bounds
    double normal();                  // standard normal

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <typename T>
Tensor<T> random_uniform(Rng& rng, Shape shape, T lo, T hi);
template <typename T>
Tensor<T> random_normal(Rng& rng, Shape shape, T stddev);

// ---------------------------------------------------------------------------
// Autodiff graph
// ---------------------------------------------------------------------------

template <typename T>
struct Node;
template <typename T>
using Var = std::shared_ptr<Node<T>>;

/// One recorded operation (or leaf) in the computation graph. `backprop`
/// routes this node's gradient to its parents; op closures capture parent
/// Vars plus whatever intermediates the backward pass needs. Values are
/// immutable once the node is built (the optimizer's in-place update is the
/// documented exception, applied between graphs).
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation; same shape as value
    bool requires_grad = false;
    bool graph_consumed = false;  // set on the loss node by a non-retaining backward
    std::string name;             // nonempty for named parameters
    std::vector<Var<T>> parents;
    std::function<void(const Tensor<T>& upstream)> backprop;  // empty for leaves

    bool is_leaf() const { return !backprop; }
    void accumulate(const Tensor<T>& g);
    void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false, std::string name = "");

/// Leaf that never receives a gradient (inputs, targets, fixed kernels).
template <typename T>
Var<T> constant(Tensor<T> value);

template <typename T>
bool any_requires_grad(const std::vector<Var<T>>& vars);

/// Builds an op node. The output requires a gradient iff any parent does;
/// `backprop` is dropped entirely for all-constant subgraphs.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(const Tensor<T>&)> backprop);

/// Reverse-mode sweep from a scalar loss (numel()==1). Visits each reachable
/// node exactly once in reverse topological order and accumulates gradients
/// into every requires_grad leaf. The recorded graph is dismantled as it is
/// consumed unless retain_graph is set; with retain_graph, a second backward
/// over the same forward pass adds on top of existing leaf gradients.
template <typename T>
void backward(const Var<T>& loss, bool retain_graph = false);

}  // namespace pfa
