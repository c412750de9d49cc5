#pragma once

#include <array>
#include <cstdint>

#include "pfa/ops.hpp"
#include "pfa/params.hpp"
#include "pfa/tensor.hpp"

namespace pfa {

/// VGG-style five-stage backbone shape. The desk-scale default keeps training
/// cheap; the reference widths [64,128,256,512,512] with [2,2,3,3,3] convs per
/// stage instantiate the full VGG-16 feature stack for shape checks.
struct BackboneConfig {
    std::array<int, 5> stage_channels{8, 16, 32, 32, 32};
    std::array<int, 5> convs_per_stage{2, 2, 3, 3, 3};
    std::array<int, 2> input_size{64, 64};  // H, W; both divisible by 16

    static BackboneConfig reference_vgg16() {
        BackboneConfig cfg;
        cfg.stage_channels = {64, 128, 256, 512, 512};
        cfg.convs_per_stage = {2, 2, 3, 3, 3};
        return cfg;
    }
    void validate() const;
};

/// The five side taps the detection head consumes: low1/low2 at full and 1/2
/// resolution, high3/high4/high5 at 1/4, 1/8, 1/16.
template <typename T>
struct SideOutputs {
    Var<T> low1, low2, high3, high4, high5;
};

/// All kernels are 3x3, stride 1, same padding, ReLU after each conv, 2x2 max
/// pool between stages. He-initialized (sigma^2 = 2/fan_in), zero biases; the
/// network trains from scratch -- there is no pretrained-weight import.
template <typename T>
class Backbone {
  public:
    /// Registers parameters under "backbone.stage<i>.conv<j>" in `params`,
    /// drawing initial values from `rng` in registration order.
    static Backbone build(const BackboneConfig& cfg, ModelParams<T>& params, Rng& rng);

    /// image is [N,3,H,W] with H, W divisible by 16 (any such size works; the
    /// configured input_size is only the training default).
    SideOutputs<T> forward_sides(const Var<T>& image) const;

    const BackboneConfig& config() const { return cfg_; }

  private:
    struct ConvLayer {
        Var<T> weight, bias;
    };
    BackboneConfig cfg_;
    std::array<std::vector<ConvLayer>, 5> stages_;
};

/// Convenience wrapper matching the one-call build contract: fresh registry,
/// deterministic for a given seed.
template <typename T>
ModelParams<T> build_backbone(const BackboneConfig& cfg, std::uint64_t seed);

/// He-initialized conv kernel [cout,cin,kh,kw]; shared by the head modules.
template <typename T>
Tensor<T> he_conv_init(Rng& rng, int cout, int cin, int kh, int kw);

}  // namespace pfa
