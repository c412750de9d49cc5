#pragma once

#include <vector>

#include "pfa/tensor.hpp"

namespace pfa {

enum class Padding { kSame, kValid };
enum class Unary { kRelu, kSigmoid, kTanh, kAbs };

/// 2-D convolution over [N,Cin,H,W] with kernel [Cout,Cin,kh,kw] and bias
/// [Cout]. Zero padding outside the image; the effective kernel extent is
/// dilation*(k-1)+1. kSame keeps the spatial size and is defined for stride 1
/// only; kValid gives H' = floor((H - dilation*(kh-1) - 1)/stride) + 1.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride = 1,
              int dilation = 1, Padding padding = Padding::kSame);

template <typename T>
Var<T> pointwise(Unary kind, const Var<T>& x);

template <typename T>
Var<T> relu(const Var<T>& x) {
    return pointwise(Unary::kRelu, x);
}
/// Output pinned strictly inside (0,1): saturated values are nudged to the
/// nearest representable neighbour so downstream logs stay finite.
template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return pointwise(Unary::kSigmoid, x);
}
template <typename T>
Var<T> tanh(const Var<T>& x) {
    return pointwise(Unary::kTanh, x);
}
template <typename T>
Var<T> abs(const Var<T>& x) {
    return pointwise(Unary::kAbs, x);
}

/// Square window pooling, window == stride, spatial dims must divide exactly.
/// Backward routes the gradient to the argmax position; ties break to the
/// first occurrence in row-major order.
template <typename T>
Var<T> max_pool2d(const Var<T>& x, int window = 2, int stride = 2);

/// [N,C,H,W] -> [N,C], each channel averaged over its spatial positions.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

/// Affine map W v + b for v:[N,Cin], W:[Cout,Cin], b:[Cout] -> [N,Cout].
template <typename T>
Var<T> dense(const Var<T>& v, const Var<T>& weight, const Var<T>& bias);

/// Concatenates along the channel axis; inputs must share N, H, W.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs);

/// Bilinear upsample by an integer factor. Source coordinate for output
/// index i is (i + 0.5)/factor - 0.5, clamped to the valid range (half-pixel
/// centers with edge clamp). Constants are preserved exactly.
template <typename T>
Var<T> bilinear_upsample(const Var<T>& x, int factor);

/// Elementwise product with broadcasting: w is either a per-channel gate
/// [N,C] or a single-channel spatial gate [N,1,H,W].
template <typename T>
Var<T> broadcast_mul(const Var<T>& x, const Var<T>& w);

/// Full reductions to a scalar tensor (shape [1]); accumulation in double.
template <typename T>
Var<T> reduce_sum(const Var<T>& x);
template <typename T>
Var<T> reduce_mean(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& x, T factor);

/// Plain-tensor channel slice [c_begin, c_end); shared by concat's backward
/// and the tests.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c_begin, int c_end);

namespace detail {
/// C(MxN) = A(MxK) * B(KxN), optionally accumulating into C. Fixed loop
/// order, sequential: results are bitwise reproducible.
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void transpose(int rows, int cols, const T* src, T* dst);
}  // namespace detail

}  // namespace pfa
