#include "pfa/pfa_net.hpp"

#include <cmath>

namespace pfa {

void PfaConfig::validate() const {
    backbone.validate();
    if (cpfe.branch_channels < 1) {
        throw ConfigError("cpfe: branch channels must be positive");
    }
    for (int d : cpfe.dilations) {
        if (d < 1) throw ConfigError("cpfe: dilation rates must be >= 1");
    }
    if (ca_reduction < 1 || cpfe.pyramid_channels() % ca_reduction != 0) {
        throw ConfigError("channel attention: pyramid channels " +
                          std::to_string(cpfe.pyramid_channels()) + " not divisible by reduction " +
                          std::to_string(ca_reduction));
    }
    if (sa_kernel < 1 || sa_kernel % 2 == 0) {
        throw ConfigError("spatial attention: kernel length " + std::to_string(sa_kernel) +
                          " must be odd");
    }
    if (cpfe.pyramid_channels() % 2 != 0) {
        throw ConfigError("spatial attention: pyramid channels must be even for the C/2 branches");
    }
}

namespace {

template <typename T>
Tensor<T> he_dense_init(Rng& rng, int cout, int cin) {
    return random_normal<T>(rng, {cout, cin}, static_cast<T>(std::sqrt(2.0 / cin)));
}

}  // namespace

// ---------------------------------------------------------------------------
// CPFE
// ---------------------------------------------------------------------------

template <typename T>
CpfeLevel<T> CpfeLevel<T>::build(const CpfeConfig& cfg, int in_channels, ModelParams<T>& params,
                                 Rng& rng, const std::string& prefix) {
    CpfeLevel<T> level;
    level.dilations = cfg.dilations;
    const int bc = cfg.branch_channels;
    level.w1x1 = params.add(prefix + ".branch1x1.weight", he_conv_init<T>(rng, bc, in_channels, 1, 1));
    level.b1x1 = params.add(prefix + ".branch1x1.bias", Tensor<T>({bc}));
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string name = prefix + ".dil" + std::to_string(cfg.dilations[i]);
        level.wd[i] = params.add(name + ".weight", he_conv_init<T>(rng, bc, in_channels, 3, 3));
        level.bd[i] = params.add(name + ".bias", Tensor<T>({bc}));
    }
    return level;
}

template <typename T>
Var<T> CpfeLevel<T>::forward(const Var<T>& f) const {
    std::vector<Var<T>> branches;
    branches.push_back(relu(conv2d(f, w1x1, b1x1, 1, 1, Padding::kSame)));
    for (std::size_t i = 0; i < 3; ++i) {
        branches.push_back(relu(conv2d(f, wd[i], bd[i], 1, dilations[i], Padding::kSame)));
    }
    return concat_channels(branches);
}

// ---------------------------------------------------------------------------
// Channel attention
// ---------------------------------------------------------------------------

template <typename T>
ChannelAttention<T> ChannelAttention<T>::build(int channels, int reduction, ModelParams<T>& params,
                                               Rng& rng, const std::string& prefix) {
    if (channels % reduction != 0) {
        throw ConfigError("channel attention: " + std::to_string(channels) +
                          " channels not divisible by reduction " + std::to_string(reduction));
    }
    const int mid = channels / reduction;
    ChannelAttention<T> ca;
    ca.fc1_w = params.add(prefix + ".fc1.weight", he_dense_init<T>(rng, mid, channels));
    ca.fc1_b = params.add(prefix + ".fc1.bias", Tensor<T>({mid}));
    ca.fc2_w = params.add(prefix + ".fc2.weight", he_dense_init<T>(rng, channels, mid));
    ca.fc2_b = params.add(prefix + ".fc2.bias", Tensor<T>({channels}));
    return ca;
}

template <typename T>
std::pair<Var<T>, Var<T>> ChannelAttention<T>::forward(const Var<T>& f) const {
    Var<T> pooled = global_avg_pool(f);
    Var<T> gate = sigmoid(dense(relu(dense(pooled, fc1_w, fc1_b)), fc2_w, fc2_b));
    return {gate, broadcast_mul(f, gate)};
}

// ---------------------------------------------------------------------------
// Spatial attention
// ---------------------------------------------------------------------------

template <typename T>
SpatialAttention<T> SpatialAttention<T>::build(int channels, int kernel, ModelParams<T>& params,
                                               Rng& rng, const std::string& prefix) {
    if (kernel % 2 == 0) {
        throw ConfigError("spatial attention: kernel length must be odd, got " +
                          std::to_string(kernel));
    }
    const int mid = channels / 2;
    SpatialAttention<T> sa;
    sa.a1_w = params.add(prefix + ".a1.weight", he_conv_init<T>(rng, mid, channels, 1, kernel));
    sa.a1_b = params.add(prefix + ".a1.bias", Tensor<T>({mid}));
    sa.a2_w = params.add(prefix + ".a2.weight", he_conv_init<T>(rng, 1, mid, kernel, 1));
    sa.a2_b = params.add(prefix + ".a2.bias", Tensor<T>({1}));
    sa.b1_w = params.add(prefix + ".b1.weight", he_conv_init<T>(rng, mid, channels, kernel, 1));
    sa.b1_b = params.add(prefix + ".b1.bias", Tensor<T>({mid}));
    sa.b2_w = params.add(prefix + ".b2.weight", he_conv_init<T>(rng, 1, mid, 1, kernel));
    sa.b2_b = params.add(prefix + ".b2.bias", Tensor<T>({1}));
    return sa;
}

template <typename T>
Var<T> SpatialAttention<T>::forward(const Var<T>& f_h) const {
    Var<T> branch_a = conv2d(conv2d(f_h, a1_w, a1_b), a2_w, a2_b);
    Var<T> branch_b = conv2d(conv2d(f_h, b1_w, b1_b), b2_w, b2_b);
    return sigmoid(add(branch_a, branch_b));
}

// ---------------------------------------------------------------------------
// Low-level combination
// ---------------------------------------------------------------------------

template <typename T>
LowLevelCombine<T> LowLevelCombine<T>::build(int ch1, int ch2, ModelParams<T>& params, Rng& rng,
                                             const std::string& prefix) {
    LowLevelCombine<T> low;
    const int out = PfaNet<T>::kLowChannels;
    low.w1 = params.add(prefix + ".side1.weight", he_conv_init<T>(rng, out, ch1, 3, 3));
    low.b1 = params.add(prefix + ".side1.bias", Tensor<T>({out}));
    low.w2 = params.add(prefix + ".side2.weight", he_conv_init<T>(rng, out, ch2, 3, 3));
    low.b2 = params.add(prefix + ".side2.bias", Tensor<T>({out}));
    return low;
}

template <typename T>
Var<T> LowLevelCombine<T>::forward(const Var<T>& low1, const Var<T>& low2) const {
    if (low1->value.dim(2) != 2 * low2->value.dim(2) ||
        low1->value.dim(3) != 2 * low2->value.dim(3)) {
        throw ShapeError("low_level_combine: low2 " + shape_str(low2->value.shape) +
                         " must be at exactly half of low1 " + shape_str(low1->value.shape));
    }
    Var<T> s1 = relu(conv2d(low1, w1, b1));
    Var<T> s2 = bilinear_upsample(relu(conv2d(low2, w2, b2)), 2);
    return concat_channels<T>({s1, s2});
}

// ---------------------------------------------------------------------------
// Full network
// ---------------------------------------------------------------------------

template <typename T>
PfaNet<T> PfaNet<T>::build(const PfaConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    PfaNet<T> net;
    net.cfg_ = cfg;
    Rng rng(seed);
    net.backbone_ = Backbone<T>::build(cfg.backbone, net.params_, rng);
    const auto& ch = cfg.backbone.stage_channels;
    for (int i = 0; i < 3; ++i) {
        net.cpfe_[static_cast<std::size_t>(i)] =
            CpfeLevel<T>::build(cfg.cpfe, ch[static_cast<std::size_t>(i + 2)], net.params_, rng,
                                "cpfe.level" + std::to_string(i + 3));
    }
    const int pyr = cfg.cpfe.pyramid_channels();
    net.ca_ = ChannelAttention<T>::build(pyr, cfg.ca_reduction, net.params_, rng, "ca");
    net.sa_ = SpatialAttention<T>::build(pyr, cfg.sa_kernel, net.params_, rng, "sa");
    net.low_ = LowLevelCombine<T>::build(ch[0], ch[1], net.params_, rng, "low");
    net.fuse_high_w_ = net.params_.add("fuse.high.weight", he_conv_init<T>(rng, kFuseChannels, pyr, 1, 1));
    net.fuse_high_b_ = net.params_.add("fuse.high.bias", Tensor<T>({kFuseChannels}));
    net.fuse_low_w_ = net.params_.add("fuse.low.weight",
                                      he_conv_init<T>(rng, kFuseChannels, 2 * kLowChannels, 1, 1));
    net.fuse_low_b_ = net.params_.add("fuse.low.bias", Tensor<T>({kFuseChannels}));
    net.out_w_ = net.params_.add("fuse.out.weight", he_conv_init<T>(rng, 1, 2 * kFuseChannels, 3, 3));
    net.out_b_ = net.params_.add("fuse.out.bias", Tensor<T>({1}));
    return net;
}

template <typename T>
Var<T> PfaNet<T>::cpfe_pyramid(const Var<T>& high3, const Var<T>& high4, const Var<T>& high5) const {
    if (high3->value.dim(2) != 2 * high4->value.dim(2) ||
        high4->value.dim(2) != 2 * high5->value.dim(2) ||
        high3->value.dim(3) != 2 * high4->value.dim(3) ||
        high4->value.dim(3) != 2 * high5->value.dim(3)) {
        throw ShapeError("cpfe_pyramid: high-level taps must sit on the 1/4, 1/8, 1/16 ladder, got " +
                         shape_str(high3->value.shape) + ", " + shape_str(high4->value.shape) +
                         ", " + shape_str(high5->value.shape));
    }
    Var<T> p3 = cpfe_[0].forward(high3);
    Var<T> p4 = bilinear_upsample(cpfe_[1].forward(high4), 2);
    Var<T> p5 = bilinear_upsample(cpfe_[2].forward(high5), 4);
    return concat_channels<T>({p3, p4, p5});
}

template <typename T>
PfaOutput<T> PfaNet<T>::forward(const Var<T>& image) const {
    SideOutputs<T> sides = backbone_.forward_sides(image);

    // High path: pyramid features, channel gate, then the spatial gate is
    // derived from the gated feature itself.
    Var<T> pyramid = cpfe_pyramid(sides.high3, sides.high4, sides.high5);
    auto [ca_gate, high_gated] = ca_.forward(pyramid);
    Var<T> sa_gate = sa_.forward(high_gated);

    // Low path, gated spatially at full resolution.
    Var<T> low = low_.forward(sides.low1, sides.low2);
    Var<T> low_gated = broadcast_mul(low, bilinear_upsample(sa_gate, 4));

    // Fusion: both paths to 32 channels at input resolution, concat, 3x3, sigmoid.
    Var<T> high_full = bilinear_upsample(high_gated, 4);
    Var<T> high_red = conv2d(high_full, fuse_high_w_, fuse_high_b_);
    Var<T> low_red = conv2d(low_gated, fuse_low_w_, fuse_low_b_);
    Var<T> fused = concat_channels<T>({high_red, low_red});
    Var<T> map = sigmoid(conv2d(fused, out_w_, out_b_));

    return PfaOutput<T>{map, AttentionWeights<T>{ca_gate, sa_gate}};
}

template struct CpfeLevel<float>;
template struct CpfeLevel<double>;
template struct ChannelAttention<float>;
template struct ChannelAttention<double>;
template struct SpatialAttention<float>;
template struct SpatialAttention<double>;
template struct LowLevelCombine<float>;
template struct LowLevelCombine<double>;
template class PfaNet<float>;
template class PfaNet<double>;

}  // namespace pfa
