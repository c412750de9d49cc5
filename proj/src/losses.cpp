#include "pfa/losses.hpp"

#include <cmath>

namespace pfa {

namespace {

// Shared core of both cross-entropy losses. pos_w/neg_w weight the target=1
// and target=0 terms; accumulation runs in double.
template <typename T>
Var<T> bce_core(const Var<T>& pred, const Var<T>& target, double pos_w, double neg_w, double eps,
                LossMode mode, const char* what) {
    const Tensor<T>& p = pred->value;
    const Tensor<T>& y = target->value;
    if (!p.same_shape_as(y)) {
        throw ShapeError(std::string(what) + ": prediction " + shape_str(p.shape) +
                         " vs target " + shape_str(y.shape));
    }
    const std::size_t count = p.numel();
    const double lo = eps, hi = 1.0 - eps;
    double loss = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double pc = std::min(std::max(static_cast<double>(p.data[i]), lo), hi);
        const double yi = static_cast<double>(y.data[i]);
        loss -= pos_w * yi * std::log(pc) + neg_w * (1.0 - yi) * std::log(1.0 - pc);
    }
    const double norm = mode == LossMode::kMean ? 1.0 / static_cast<double>(count) : 1.0;
    Tensor<T> out({1}, static_cast<T>(loss * norm));

    auto backprop = [pred, target, pos_w, neg_w, lo, hi, norm, count](const Tensor<T>& up) {
        if (!pred->requires_grad) return;
        const double g0 = static_cast<double>(up.data[0]) * norm;
        Tensor<T> g(pred->value.shape);
        for (std::size_t i = 0; i < count; ++i) {
            const double pv = static_cast<double>(pred->value.data[i]);
            if (pv <= lo || pv >= hi) continue;  // clamp region: flat
            const double yi = static_cast<double>(target->value.data[i]);
            g.data[i] = static_cast<T>(g0 * (-pos_w * yi / pv + neg_w * (1.0 - yi) / (1.0 - pv)));
        }
        pred->accumulate(g);
    };
    return make_op<T>(std::move(out), {pred, target}, std::move(backprop));
}

template <typename T>
const Var<T>& laplace_kernel() {
    static const Var<T> k = constant(Tensor<T>(
        {1, 1, 3, 3}, std::vector<T>{T(0), T(1), T(0), T(1), T(-4), T(1), T(0), T(1), T(0)}));
    return k;
}

template <typename T>
const Var<T>& zero_bias1() {
    static const Var<T> b = constant(Tensor<T>({1}));
    return b;
}

}  // namespace

template <typename T>
Var<T> weighted_bce(const Var<T>& pred, const Var<T>& target, double alpha_s, double clamp_eps,
                    LossMode mode) {
    return bce_core(pred, target, alpha_s, 1.0 - alpha_s, clamp_eps, mode, "weighted_bce");
}

template <typename T>
Var<T> laplace_edge(const Var<T>& m) {
    const Tensor<T>& v = m->value;
    if (v.rank() != 4 || v.dim(1) != 1) {
        throw ShapeError("laplace_edge: expected a single-channel map [N,1,H,W], got " +
                         shape_str(v.shape));
    }
    return tanh(abs(conv2d(m, laplace_kernel<T>(), zero_bias1<T>(), 1, 1, Padding::kSame)));
}

template <typename T>
Var<T> edge_bce(const Var<T>& pred, const Var<T>& target, double clamp_eps, LossMode mode) {
    if (!pred->value.same_shape_as(target->value)) {
        throw ShapeError("edge_bce: prediction " + shape_str(pred->value.shape) + " vs target " +
                         shape_str(target->value.shape));
    }
    Var<T> edge_p = laplace_edge(pred);
    // ground-truth boundary map is data: rebuilt outside the gradient path
    Var<T> edge_y = laplace_edge(constant(target->value));
    return bce_core(edge_p, edge_y, 1.0, 1.0, clamp_eps, mode, "edge_bce");
}

template <typename T>
Var<T> total_loss(const Var<T>& pred, const Var<T>& target, const LossConfig& cfg, LossMode mode) {
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0 || cfg.alpha_s < 0.0 || cfg.alpha_s > 1.0) {
        throw ConfigError("total_loss: alpha and alpha_s must lie in [0,1]");
    }
    if (cfg.alpha == 1.0) {
        return weighted_bce(pred, target, cfg.alpha_s, cfg.clamp_eps, mode);
    }
    if (cfg.alpha == 0.0) {
        return edge_bce(pred, target, cfg.clamp_eps, mode);
    }
    Var<T> ls = weighted_bce(pred, target, cfg.alpha_s, cfg.clamp_eps, mode);
    Var<T> lb = edge_bce(pred, target, cfg.clamp_eps, mode);
    return add(scale(ls, static_cast<T>(cfg.alpha)), scale(lb, static_cast<T>(1.0 - cfg.alpha)));
}

#define PFA_INSTANTIATE_LOSSES(T)                                                            \
    template Var<T> weighted_bce<T>(const Var<T>&, const Var<T>&, double, double, LossMode); \
    template Var<T> laplace_edge<T>(const Var<T>&);                                          \
    template Var<T> edge_bce<T>(const Var<T>&, const Var<T>&, double, LossMode);             \
    template Var<T> total_loss<T>(const Var<T>&, const Var<T>&, const LossConfig&, LossMode);

PFA_INSTANTIATE_LOSSES(float)
PFA_INSTANTIATE_LOSSES(double)

#undef PFA_INSTANTIATE_LOSSES

}  // namespace pfa
