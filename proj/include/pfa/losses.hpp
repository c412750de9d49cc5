#pragma once

#include "pfa/ops.hpp"
#include "pfa/tensor.hpp"

namespace pfa {

/// Eq-level loss settings. alpha blends the saliency term against the
/// boundary term; alpha_s balances positive vs negative pixels inside the
/// saliency term. clamp_eps keeps the logs finite.
struct LossConfig {
    double alpha_s = 0.528;
    double alpha = 1.0;
    double clamp_eps = 1e-7;
};

/// Sum is the textbook definition; mean divides by the pixel count so the
/// learning rate is resolution-independent (the training default).
enum class LossMode { kSum, kMean };

/// Class-balanced pixelwise cross-entropy:
///   L_S = -sum_i [ alpha_s * Y_i * log(P_i) + (1-alpha_s) * (1-Y_i) * log(1-P_i) ]
/// P is clamped to [eps, 1-eps] before the logs. Gradient flows to pred only;
/// target is treated as data.
template <typename T>
Var<T> weighted_bce(const Var<T>& pred, const Var<T>& target, double alpha_s,
                    double clamp_eps = 1e-7, LossMode mode = LossMode::kSum);

/// Boundary extraction: tanh(|conv(M, K_laplace)|) with the 4-neighbour
/// Laplace kernel [[0,1,0],[1,-4,1],[0,1,0]], zero-padded. Input must be a
/// single-channel map; output lands in [0,1) and is differentiable.
template <typename T>
Var<T> laplace_edge(const Var<T>& m);

/// Unweighted cross-entropy between the boundary maps of prediction and
/// ground truth: targets are the soft values laplace_edge(Y), not binarized.
template <typename T>
Var<T> edge_bce(const Var<T>& pred, const Var<T>& target, double clamp_eps = 1e-7,
                LossMode mode = LossMode::kSum);

/// alpha * L_S + (1-alpha) * L_B. The degenerate settings short-circuit:
/// alpha == 1 is exactly weighted_bce, alpha == 0 exactly edge_bce.
template <typename T>
Var<T> total_loss(const Var<T>& pred, const Var<T>& target, const LossConfig& cfg,
                  LossMode mode = LossMode::kSum);

}  // namespace pfa
