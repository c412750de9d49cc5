#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "pfa/backbone.hpp"
#include "pfa/ops.hpp"
#include "pfa/params.hpp"
#include "pfa/tensor.hpp"

namespace pfa {

/// One pyramid level: a 1x1 reduction plus three dilated 3x3 branches, each
/// `branch_channels` wide, each ReLU'd, channel-concatenated. Per-level output
/// is (dilations+1) * branch_channels channels at the input resolution.
struct CpfeConfig {
    std::array<int, 3> dilations{3, 5, 7};
    int branch_channels = 32;

    int level_channels() const { return (static_cast<int>(dilations.size()) + 1) * branch_channels; }
    int pyramid_channels() const { return 3 * level_channels(); }
};

/// Full model shape: backbone plus head knobs. The low-level side convs and
/// the fusion reductions are fixed at 32 channels.
struct PfaConfig {
    BackboneConfig backbone;
    CpfeConfig cpfe;
    int ca_reduction = 4;  // channel-attention bottleneck divisor
    int sa_kernel = 9;     // separable spatial-attention kernel length (odd)

    void validate() const;
};

template <typename T>
struct AttentionWeights {
    Var<T> ca;  // [N,C] channel gate, entries in (0,1)
    Var<T> sa;  // [N,1,H/4,W/4] spatial gate, entries in (0,1)
};

template <typename T>
struct PfaOutput {
    Var<T> map;  // [N,1,H,W] saliency probabilities in (0,1)
    AttentionWeights<T> attention;
};

template <typename T>
struct CpfeLevel {
    Var<T> w1x1, b1x1;
    std::array<Var<T>, 3> wd, bd;  // dilated branches
    std::array<int, 3> dilations;

    static CpfeLevel build(const CpfeConfig& cfg, int in_channels, ModelParams<T>& params,
                           Rng& rng, const std::string& prefix);
    Var<T> forward(const Var<T>& f) const;
};

/// Squeeze-style gate: global average pool, two FC layers around a ReLU
/// bottleneck (C -> C/reduction -> C), sigmoid. Returns the gate and the
/// gated feature.
template <typename T>
struct ChannelAttention {
    Var<T> fc1_w, fc1_b, fc2_w, fc2_b;

    static ChannelAttention build(int channels, int reduction, ModelParams<T>& params, Rng& rng,
                                  const std::string& prefix);
    std::pair<Var<T>, Var<T>> forward(const Var<T>& f) const;  // (ca, f_weighted)
};

/// Two symmetric separable branches over the gated high-level feature:
/// (1xk then kx1) and (kx1 then 1xk), intermediate width C/2, final width 1,
/// summed and squashed. Output is one gate map at the input resolution.
template <typename T>
struct SpatialAttention {
    Var<T> a1_w, a1_b, a2_w, a2_b;  // 1xk C->C/2, then kx1 C/2->1
    Var<T> b1_w, b1_b, b2_w, b2_b;  // kx1 C->C/2, then 1xk C/2->1

    static SpatialAttention build(int channels, int kernel, ModelParams<T>& params, Rng& rng,
                                  const std::string& prefix);
    Var<T> forward(const Var<T>& f_h) const;
};

/// Each low-level tap passes a 3x3/32-channel conv + ReLU; the half-resolution
/// one is upsampled x2 and both are concatenated at full resolution.
template <typename T>
struct LowLevelCombine {
    Var<T> w1, b1, w2, b2;

    static LowLevelCombine build(int ch1, int ch2, ModelParams<T>& params, Rng& rng,
                                 const std::string& prefix);
    Var<T> forward(const Var<T>& low1, const Var<T>& low2) const;
};

template <typename T>
class PfaNet {
  public:
    static constexpr int kLowChannels = 32;   // low-level side conv width
    static constexpr int kFuseChannels = 32;  // 1x1 reduction width in the fusion head

    /// Deterministic for a given seed: one init stream, fixed registration
    /// order (backbone, cpfe, ca, sa, low, fuse).
    static PfaNet build(const PfaConfig& cfg, std::uint64_t seed);

    PfaOutput<T> forward(const Var<T>& image) const;

    /// Pyramid over the three high-level taps, concatenated at 1/4 resolution.
    Var<T> cpfe_pyramid(const Var<T>& high3, const Var<T>& high4, const Var<T>& high5) const;

    ModelParams<T>& params() { return params_; }
    const ModelParams<T>& params() const { return params_; }
    const PfaConfig& config() const { return cfg_; }
    const Backbone<T>& backbone() const { return backbone_; }
    const ChannelAttention<T>& channel_attention() const { return ca_; }
    const SpatialAttention<T>& spatial_attention() const { return sa_; }
    const LowLevelCombine<T>& low_combine() const { return low_; }

  private:
    PfaConfig cfg_;
    ModelParams<T> params_;
    Backbone<T> backbone_;
    std::array<CpfeLevel<T>, 3> cpfe_;
    ChannelAttention<T> ca_;
    SpatialAttention<T> sa_;
    LowLevelCombine<T> low_;
    Var<T> fuse_high_w_, fuse_high_b_;  // 1x1, pyramid -> 32
    Var<T> fuse_low_w_, fuse_low_b_;    // 1x1, 64 -> 32
    Var<T> out_w_, out_b_;              // 3x3, 64 -> 1
};

}  // namespace pfa
