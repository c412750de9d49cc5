#include "pfa/backbone.hpp"

#include <cmath>

namespace pfa {

void BackboneConfig::validate() const {
    for (int c : stage_channels) {
        if (c < 1) throw ConfigError("backbone: stage channel counts must be positive");
    }
    for (int c : convs_per_stage) {
        if (c < 1) throw ConfigError("backbone: convs per stage must be positive");
    }
    if (input_size[0] % 16 != 0 || input_size[1] % 16 != 0 || input_size[0] <= 0 ||
        input_size[1] <= 0) {
        throw ConfigError("backbone: input size " + std::to_string(input_size[0]) + "x" +
                          std::to_string(input_size[1]) + " must be positive and divisible by 16");
    }
}

template <typename T>
Tensor<T> he_conv_init(Rng& rng, int cout, int cin, int kh, int kw) {
    const double fan_in = static_cast<double>(cin) * kh * kw;
    return random_normal<T>(rng, {cout, cin, kh, kw}, static_cast<T>(std::sqrt(2.0 / fan_in)));
}

template <typename T>
Backbone<T> Backbone<T>::build(const BackboneConfig& cfg, ModelParams<T>& params, Rng& rng) {
    cfg.validate();
    Backbone<T> net;
    net.cfg_ = cfg;
    int in_ch = 3;
    for (int s = 0; s < 5; ++s) {
        const int out_ch = cfg.stage_channels[static_cast<std::size_t>(s)];
        const int convs = cfg.convs_per_stage[static_cast<std::size_t>(s)];
        for (int j = 0; j < convs; ++j) {
            const std::string prefix =
                "backbone.stage" + std::to_string(s + 1) + ".conv" + std::to_string(j + 1);
            ConvLayer layer;
            layer.weight = params.add(prefix + ".weight", he_conv_init<T>(rng, out_ch, in_ch, 3, 3));
            layer.bias = params.add(prefix + ".bias", Tensor<T>({out_ch}));
            net.stages_[static_cast<std::size_t>(s)].push_back(layer);
            in_ch = out_ch;
        }
    }
    return net;
}

template <typename T>
SideOutputs<T> Backbone<T>::forward_sides(const Var<T>& image) const {
    const Tensor<T>& v = image->value;
    if (v.rank() != 4 || v.dim(1) != 3) {
        throw ShapeError("backbone: image must be [N,3,H,W], got " + shape_str(v.shape));
    }
    if (v.dim(2) % 16 != 0 || v.dim(3) % 16 != 0) {
        throw ShapeError("backbone: image size " + std::to_string(v.dim(2)) + "x" +
                         std::to_string(v.dim(3)) + " must be divisible by 16");
    }
    std::array<Var<T>, 5> taps;
    Var<T> x = image;
    for (int s = 0; s < 5; ++s) {
        for (const ConvLayer& layer : stages_[static_cast<std::size_t>(s)]) {
            x = relu(conv2d(x, layer.weight, layer.bias));
        }
        taps[static_cast<std::size_t>(s)] = x;  // side tap: last conv of the stage, post-ReLU
        if (s < 4) {
            x = max_pool2d(x);
        }
    }
    return SideOutputs<T>{taps[0], taps[1], taps[2], taps[3], taps[4]};
}

template <typename T>
ModelParams<T> build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
    ModelParams<T> params;
    Rng rng(seed);
    Backbone<T>::build(cfg, params, rng);
    return params;
}

template class Backbone<float>;
template class Backbone<double>;
template ModelParams<float> build_backbone<float>(const BackboneConfig&, std::uint64_t);
template ModelParams<double> build_backbone<double>(const BackboneConfig&, std::uint64_t);
template Tensor<float> he_conv_init<float>(Rng&, int, int, int, int);
template Tensor<double> he_conv_init<double>(Rng&, int, int, int, int);

}  // namespace pfa
