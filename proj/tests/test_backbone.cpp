#include "doctest.h"
#include "pfa/backbone.hpp"
#include "pfa/losses.hpp"

using namespace pfa;

namespace {

Var<float> image(int h, int w, float fill = 0.25f) {
    return constant(Tensor<float>({1, 3, h, w}, fill));
}

}  // namespace

TEST_CASE("desk-config parameter census") {
    // 3->8,8 | 16,16 | 32,32,32 | 32x3 | 32x3 kernels, all 3x3 + biases
    ModelParams<float> params = build_backbone<float>(BackboneConfig{}, 1);
    CHECK(params.size() == 26);  // 13 convs, weight + bias each
    CHECK(params.total_scalars() == 82920);
}

TEST_CASE("builds are deterministic per seed") {
    ModelParams<float> a = build_backbone<float>(BackboneConfig{}, 7);
    ModelParams<float> b = build_backbone<float>(BackboneConfig{}, 7);
    ModelParams<float> c = build_backbone<float>(BackboneConfig{}, 8);
    auto ita = a.begin();
    auto itb = b.begin();
    bool any_differs_from_c = false;
    auto itc = c.begin();
    for (; ita != a.end(); ++ita, ++itb, ++itc) {
        CHECK(ita->second->value.data == itb->second->value.data);  // bitwise
        any_differs_from_c =
            any_differs_from_c || ita->second->value.data != itc->second->value.data;
    }
    CHECK(any_differs_from_c);
}

TEST_CASE("config validation") {
    BackboneConfig bad;
    bad.stage_channels[2] = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    BackboneConfig odd;
    odd.input_size = {60, 64};  // not divisible by 16
    CHECK_THROWS_AS(odd.validate(), ConfigError);

    BackboneConfig degenerate;
    degenerate.stage_channels = {1, 1, 1, 1, 1};
    ModelParams<float> params;
    Rng rng(3);
    Backbone<float> net = Backbone<float>::build(degenerate, params, rng);
    auto sides = net.forward_sides(image(32, 32));
    CHECK(sides.high5->value.shape == Shape{1, 1, 2, 2});
}

TEST_CASE("side outputs sit on the resolution ladder") {
    ModelParams<float> params;
    Rng rng(5);
    Backbone<float> net = Backbone<float>::build(BackboneConfig{}, params, rng);

    auto check_ladder = [&](int h, int w) {
        auto s = net.forward_sides(image(h, w));
        CHECK(s.low1->value.shape == Shape{1, 8, h, w});
        CHECK(s.low2->value.shape == Shape{1, 16, h / 2, w / 2});
        CHECK(s.high3->value.shape == Shape{1, 32, h / 4, w / 4});
        CHECK(s.high4->value.shape == Shape{1, 32, h / 8, w / 8});
        CHECK(s.high5->value.shape == Shape{1, 32, h / 16, w / 16});
    };
    check_ladder(64, 64);
    check_ladder(128, 128);  // doubling the input doubles every side
    check_ladder(48, 80);    // rectangular works too

    CHECK_THROWS_AS(net.forward_sides(image(60, 64)), ShapeError);
    CHECK_THROWS_AS(net.forward_sides(constant(Tensor<float>({1, 4, 64, 64}))), ShapeError);
}

TEST_CASE("zero image with zero biases gives zero side outputs") {
    ModelParams<float> params;
    Rng rng(2);
    Backbone<float> net = Backbone<float>::build(BackboneConfig{}, params, rng);
    auto s = net.forward_sides(image(32, 32, 0.0f));
    for (const Var<float>* side : {&s.low1, &s.low2, &s.high3, &s.high4, &s.high5}) {
        for (float v : (*side)->value.data) CHECK(v == 0.0f);
    }
}

TEST_CASE("forward is bitwise deterministic") {
    ModelParams<float> params;
    Rng rng(9);
    Backbone<float> net = Backbone<float>::build(BackboneConfig{}, params, rng);
    Rng img_rng(4);
    Tensor<float> img = random_uniform<float>(img_rng, {1, 3, 32, 32}, 0.0f, 1.0f);
    auto a = net.forward_sides(constant(img));
    auto b = net.forward_sides(constant(img));
    CHECK(a.high5->value.data == b.high5->value.data);
    CHECK(a.low1->value.data == b.low1->value.data);
}

TEST_CASE("every backbone parameter gets gradient from any side output") {
    BackboneConfig cfg;
    cfg.stage_channels = {2, 2, 2, 2, 2};
    cfg.convs_per_stage = {1, 1, 1, 1, 1};
    for (int seed : {1, 2, 3}) {
        ModelParams<float> params;
        Rng rng(static_cast<std::uint64_t>(seed));
        Backbone<float> net = Backbone<float>::build(cfg, params, rng);
        Rng img_rng(100 + static_cast<std::uint64_t>(seed));
        auto s = net.forward_sides(constant(random_uniform<float>(img_rng, {1, 3, 16, 16}, 0.0f, 1.0f)));
        // sum of the deepest side reaches everything upstream
        backward(reduce_sum(s.high5));
        for (const auto& [name, p] : params) {
            CAPTURE(name);
            REQUIRE(p->grad.numel() == p->value.numel());
            double total = 0;
            for (float g : p->grad.data) total += std::abs(static_cast<double>(g));
            CHECK(total > 0.0);
        }
    }
}
