#include <cmath>

#include "doctest.h"
#include "pfa/gradcheck.hpp"
#include "pfa/losses.hpp"

using namespace pfa;

namespace {

Var<double> scalar_map(double v) { return constant(Tensor<double>({1, 1, 1, 1}, v)); }

}  // namespace

TEST_CASE("weighted_bce single-pixel values") {
    const double ln2 = std::log(2.0);
    // Y=1, P=0.5: alpha_s * ln 2
    auto l1 = weighted_bce(scalar_map(0.5), scalar_map(1.0), 0.528);
    CHECK(l1->value.data[0] == doctest::Approx(0.528 * ln2).epsilon(1e-12));
    // Y=0, P=0.5: (1-alpha_s) * ln 2
    auto l0 = weighted_bce(scalar_map(0.5), scalar_map(0.0), 0.528);
    CHECK(l0->value.data[0] == doctest::Approx(0.472 * ln2).epsilon(1e-12));
}

TEST_CASE("weighted_bce is ~0 at a perfect binary prediction (clamp floor)") {
    Tensor<double> y({1, 1, 2, 2}, std::vector<double>{1, 0, 1, 0});
    auto l = weighted_bce(constant(y), constant(y), 0.528);
    // each matched pixel costs at most -log(1 - eps)
    CHECK(l->value.data[0] <= 4 * 0.528 * -std::log(1.0 - 1e-7) + 1e-12);
    CHECK(l->value.data[0] >= 0.0);
}

TEST_CASE("weighted_bce shape mismatch and modes") {
    CHECK_THROWS_AS(weighted_bce(scalar_map(0.5), constant(Tensor<double>({1, 1, 2, 2})), 0.5),
                    ShapeError);

    Rng rng(4);
    auto p = constant(random_uniform<double>(rng, {1, 1, 4, 4}, 0.2, 0.8));
    Tensor<double> y({1, 1, 4, 4});
    for (auto& v : y.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    auto sum = weighted_bce(p, constant(y), 0.3, 1e-7, LossMode::kSum)->value.data[0];
    auto mean = weighted_bce(p, constant(y), 0.3, 1e-7, LossMode::kMean)->value.data[0];
    CHECK(mean == doctest::Approx(sum / 16.0).epsilon(1e-12));
}

TEST_CASE("alpha_s = 0.5 halves the plain BCE sum") {
    Rng rng(8);
    auto p = constant(random_uniform<double>(rng, {1, 1, 3, 3}, 0.1, 0.9));
    Tensor<double> y({1, 1, 3, 3});
    for (auto& v : y.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;

    const double weighted = weighted_bce(p, constant(y), 0.5)->value.data[0];
    double plain = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) {
        const double pv = p->value.data[i];
        plain -= y.data[i] * std::log(pv) + (1 - y.data[i]) * std::log(1 - pv);
    }
    CHECK(weighted == doctest::Approx(0.5 * plain).epsilon(1e-9));
}

TEST_CASE("weighted_bce in one pixel is convex with its minimum at the target") {
    for (double target : {0.0, 1.0}) {
        double prev_diff = -1e9;
        double best_p = -1, best_v = 1e9;
        double last = 0;
        for (int k = 1; k <= 99; ++k) {
            const double pv = k / 100.0;
            const double v =
                weighted_bce(scalar_map(pv), scalar_map(target), 0.528)->value.data[0];
            if (v < best_v) {
                best_v = v;
                best_p = pv;
            }
            if (k > 1) {
                const double diff = v - last;
                CHECK(diff >= prev_diff - 1e-12);  // increasing increments = convex
                prev_diff = diff;
            }
            last = v;
        }
        CHECK(best_p == doctest::Approx(target == 1.0 ? 0.99 : 0.01));
    }
}

TEST_CASE("laplace_edge hand responses") {
    SUBCASE("constant maps have no boundary") {
        auto e = laplace_edge(constant(Tensor<double>({1, 1, 5, 5}, 0.7)))->value;
        for (double v : e.data) CHECK(v == doctest::Approx(0.0));
    }
    SUBCASE("unit impulse: tanh(4) at the peak, tanh(1) at its 4-neighbours") {
        Tensor<double> m({1, 1, 5, 5});
        m.at4(0, 0, 2, 2) = 1.0;
        auto e = laplace_edge(constant(m))->value;
        CHECK(e.at4(0, 0, 2, 2) == doctest::Approx(std::tanh(4.0)).epsilon(1e-9));
        CHECK(e.at4(0, 0, 1, 2) == doctest::Approx(std::tanh(1.0)).epsilon(1e-9));
        CHECK(e.at4(0, 0, 3, 2) == doctest::Approx(std::tanh(1.0)).epsilon(1e-9));
        CHECK(e.at4(0, 0, 2, 1) == doctest::Approx(std::tanh(1.0)).epsilon(1e-9));
        CHECK(e.at4(0, 0, 2, 3) == doctest::Approx(std::tanh(1.0)).epsilon(1e-9));
        CHECK(e.at4(0, 0, 0, 0) == doctest::Approx(0.0));
    }
    SUBCASE("vertical step responds on both adjacent columns") {
        Tensor<double> m({1, 1, 6, 6});
        for (int y = 0; y < 6; ++y)
            for (int x = 3; x < 6; ++x) m.at4(0, 0, y, x) = 1.0;
        auto e = laplace_edge(constant(m))->value;
        for (int y = 1; y < 5; ++y) {
            CHECK(e.at4(0, 0, y, 2) == doctest::Approx(std::tanh(1.0)).epsilon(1e-9));
            CHECK(e.at4(0, 0, y, 3) == doctest::Approx(std::tanh(1.0)).epsilon(1e-9));
            CHECK(e.at4(0, 0, y, 1) == doctest::Approx(0.0));
            CHECK(e.at4(0, 0, y, 4) == doctest::Approx(0.0));
        }
    }
    SUBCASE("multi-channel input is rejected") {
        CHECK_THROWS_AS(laplace_edge(constant(Tensor<double>({1, 2, 4, 4}))), ShapeError);
    }
}

TEST_CASE("laplace_edge is translation-equivariant away from borders") {
    Rng rng(21);
    Tensor<double> m({1, 1, 10, 10});
    // place a small random patch, then the same patch shifted by (1,2)
    Tensor<double> shifted({1, 1, 10, 10});
    for (int y = 2; y < 5; ++y) {
        for (int x = 2; x < 5; ++x) {
            const double v = rng.uniform();
            m.at4(0, 0, y, x) = v;
            shifted.at4(0, 0, y + 1, x + 2) = v;
        }
    }
    auto e1 = laplace_edge(constant(m))->value;
    auto e2 = laplace_edge(constant(shifted))->value;
    for (int y = 1; y < 7; ++y) {
        for (int x = 1; x < 6; ++x) {
            CHECK(e2.at4(0, 0, y + 1, x + 2) == doctest::Approx(e1.at4(0, 0, y, x)).epsilon(1e-12));
        }
    }
}

TEST_CASE("edge_bce") {
    SUBCASE("identical maps sit at the soft-target entropy minimum") {
        Rng rng(31);
        Tensor<double> y = random_uniform<double>(rng, {1, 1, 6, 6}, 0.0, 1.0);
        const double at_target = edge_bce(constant(y), constant(y))->value.data[0];

        // cross-entropy against the soft boundary target bottoms out at its entropy
        Tensor<double> edge_y = laplace_edge(constant(y))->value;
        double entropy = 0.0;
        for (double t : edge_y.data) {
            const double tc = std::min(std::max(t, 1e-7), 1.0 - 1e-7);
            entropy -= t * std::log(tc) + (1 - t) * std::log(1 - tc);
        }
        CHECK(at_target == doctest::Approx(entropy).epsilon(1e-9));

        // and any perturbed prediction costs at least as much
        for (double delta : {-0.15, 0.1, 0.3}) {
            Tensor<double> p = y;
            for (auto& v : p.data) v = std::min(1.0, std::max(0.0, v + delta));
            CHECK(edge_bce(constant(p), constant(y))->value.data[0] >= at_target - 1e-9);
        }
    }
    SUBCASE("two constant maps cost ~0") {
        auto l = edge_bce(constant(Tensor<double>({1, 1, 4, 4}, 0.3)),
                          constant(Tensor<double>({1, 1, 4, 4}, 0.9)));
        CHECK(l->value.data[0] == doctest::Approx(0.0).epsilon(1e-5));
    }
    SUBCASE("gradient w.r.t. the prediction matches finite differences") {
        const GradCheckResult r = run_op_gradcheck("edge_bce", 123, 4);
        CHECK_MESSAGE(r.pass, "max_rel_err=", r.max_rel_err);
    }
}

TEST_CASE("total_loss mixing") {
    Rng rng(6);
    auto p = constant(random_uniform<double>(rng, {1, 1, 8, 8}, 0.15, 0.85));
    Tensor<double> yt({1, 1, 8, 8});
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) yt.at4(0, 0, y, x) = 1.0;
    auto y = constant(yt);

    LossConfig cfg;
    const double ls = weighted_bce(p, y, cfg.alpha_s)->value.data[0];
    const double lb = edge_bce(p, y)->value.data[0];

    cfg.alpha = 1.0;
    CHECK(total_loss(p, y, cfg)->value.data[0] == ls);  // exactly the saliency term
    cfg.alpha = 0.0;
    CHECK(total_loss(p, y, cfg)->value.data[0] == lb);
    cfg.alpha = 0.7;
    CHECK(total_loss(p, y, cfg)->value.data[0] ==
          doctest::Approx(0.7 * ls + 0.3 * lb).epsilon(1e-12));

    cfg.alpha = 1.5;
    CHECK_THROWS_AS(total_loss(p, y, cfg), ConfigError);
}

TEST_CASE("losses stay finite at extreme predictions") {
    for (double pv : {0.0, 1.0, 1e-30, 1.0 - 1e-16}) {
        auto l = weighted_bce(scalar_map(pv), scalar_map(1.0), 0.528);
        CHECK(std::isfinite(l->value.data[0]));
    }
}
