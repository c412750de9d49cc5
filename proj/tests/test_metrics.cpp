#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pfa/metrics.hpp"

using namespace pfa;

namespace {

Tensor<float> fmap(Shape s, std::vector<float> v) { return Tensor<float>(std::move(s), std::move(v)); }

// Straight-line re-implementation of the whole report, kept deliberately
// independent of the library code paths (no shared helpers).
MetricsReport brute_force_report(const std::vector<std::pair<Tensor<float>, Tensor<float>>>& pairs) {
    MetricsReport r{};
    r.n_images = static_cast<int>(pairs.size());
    for (const auto& [p, y] : pairs) {
        for (int k = 0; k < 256; ++k) {
            const double t = k / 255.0;
            long tp = 0, pred = 0, pos = 0;
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const bool b = static_cast<double>(p.data[i]) >= t;
                const bool g = y.data[i] != 0.0f;
                tp += (b && g);
                pred += b;
                pos += g;
            }
            const double prec = pred == 0 ? 1.0 : double(tp) / double(pred);
            const double rec = pos == 0 ? 1.0 : double(tp) / double(pos);
            r.precision[static_cast<std::size_t>(k)] += prec / pairs.size();
            r.recall[static_cast<std::size_t>(k)] += rec / pairs.size();
        }
        double mean_p = 0;
        for (float v : p.data) mean_p += v;
        mean_p /= static_cast<double>(p.numel());
        const double t = std::min(1.0, 2.0 * mean_p);
        long tp = 0, pred = 0, pos = 0;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const bool b = static_cast<double>(p.data[i]) >= t;
            const bool g = y.data[i] != 0.0f;
            tp += (b && g);
            pred += b;
            pos += g;
        }
        const double prec = pred == 0 ? 1.0 : double(tp) / double(pred);
        const double rec = pos == 0 ? 1.0 : double(tp) / double(pos);
        const double denom = 0.3 * prec + rec;
        r.adaptive_f += (denom == 0 ? 0.0 : 1.3 * prec * rec / denom) / pairs.size();
        double abs_sum = 0;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            abs_sum += std::abs(double(p.data[i]) - double(y.data[i]));
        }
        r.mae += abs_sum / static_cast<double>(p.numel()) / pairs.size();
    }
    for (int k = 0; k < 256; ++k) {
        const double pr = r.precision[static_cast<std::size_t>(k)];
        const double rc = r.recall[static_cast<std::size_t>(k)];
        const double denom = 0.3 * pr + rc;
        r.f_curve[static_cast<std::size_t>(k)] = denom == 0 ? 0.0 : 1.3 * pr * rc / denom;
        r.max_f = std::max(r.max_f, r.f_curve[static_cast<std::size_t>(k)]);
    }
    return r;
}

std::vector<std::pair<Tensor<float>, Tensor<float>>> random_pairs(Rng& rng, int n, int h, int w) {
    std::vector<std::pair<Tensor<float>, Tensor<float>>> out;
    for (int i = 0; i < n; ++i) {
        Tensor<float> p = random_uniform<float>(rng, {1, h, w}, 0.0f, 1.0f);
        Tensor<float> y({1, h, w});
        for (auto& v : y.data) v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
        out.emplace_back(std::move(p), std::move(y));
    }
    return out;
}

}  // namespace

TEST_CASE("pr_at_threshold hand counts") {
    auto y = fmap({1, 1, 4}, {1, 1, 0, 0});
    auto p = fmap({1, 1, 4}, {0.9f, 0.4f, 0.6f, 0.1f});
    auto pr = pr_at_threshold(p, y, 0.5);
    CHECK(pr.precision == doctest::Approx(0.5));
    CHECK(pr.recall == doctest::Approx(0.5));

    SUBCASE("perfect binary prediction") {
        auto exact = pr_at_threshold(y, y, 0.5);
        CHECK(exact.precision == 1.0);
        CHECK(exact.recall == 1.0);
    }
    SUBCASE("empty prediction convention") {
        auto low = fmap({1, 1, 4}, {0.4f, 0.4f, 0.4f, 0.4f});
        auto pr2 = pr_at_threshold(low, y, 0.5);
        CHECK(pr2.precision == 1.0);
        CHECK(pr2.recall == 0.0);
    }
    SUBCASE("empty truth convention") {
        auto none = fmap({1, 1, 4}, {0, 0, 0, 0});
        CHECK(pr_at_threshold(p, none, 0.5).recall == 1.0);
    }
    SUBCASE("binarization uses >=") {
        auto half = fmap({1, 1, 2}, {0.5f, 0.49f});
        auto yy = fmap({1, 1, 2}, {1, 0});
        auto pr3 = pr_at_threshold(half, yy, 0.5);
        CHECK(pr3.precision == 1.0);  // only the 0.5 pixel is predicted
        CHECK(pr3.recall == 1.0);
    }
    SUBCASE("non-binary truth is rejected") {
        auto soft = fmap({1, 1, 4}, {0.5f, 0, 1, 0});
        CHECK_THROWS_AS(pr_at_threshold(p, soft, 0.5), Error);
    }
}

TEST_CASE("f_measure values") {
    CHECK(f_measure(1.0, 1.0) == doctest::Approx(1.0));
    CHECK(f_measure(0.8, 0.6) == doctest::Approx(0.742857142857).epsilon(1e-9));
    CHECK(f_measure(0.0, 0.0) == 0.0);
}

TEST_CASE("mae values and symmetry") {
    auto y = fmap({1, 2, 2}, {1, 0, 1, 0});
    CHECK(mae(y, y) == 0.0);

    auto inv = fmap({1, 2, 2}, {0, 1, 0, 1});
    CHECK(mae(inv, y) == doctest::Approx(1.0));

    auto quarter = fmap({1, 2, 2}, {0.25f, 0.25f, 0.25f, 0.25f});
    auto zeros = fmap({1, 2, 2}, {0, 0, 0, 0});
    CHECK(mae(quarter, zeros) == doctest::Approx(0.25));

    // mae(P,Y) == mae(1-P, 1-Y)
    Rng rng(3);
    auto p = random_uniform<float>(rng, {1, 3, 3}, 0.0f, 1.0f);
    Tensor<float> yb({1, 3, 3});
    for (auto& v : yb.data) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    Tensor<float> pi = p, yi = yb;
    for (auto& v : pi.data) v = 1.0f - v;
    for (auto& v : yi.data) v = 1.0f - v;
    CHECK(mae(p, yb) == doctest::Approx(mae(pi, yi)).epsilon(1e-12));

    CHECK_THROWS_AS(mae(p, fmap({1, 1, 2}, {0, 0})), ShapeError);
}

TEST_CASE("evaluate_dataset against the brute-force oracle") {
    Rng rng(1234);
    auto pairs = random_pairs(rng, 5, 8, 8);
    const MetricsReport a = evaluate_dataset(pairs);
    const MetricsReport b = brute_force_report(pairs);
    CHECK(a.n_images == b.n_images);
    CHECK(std::abs(a.max_f - b.max_f) <= 1e-9);
    CHECK(std::abs(a.adaptive_f - b.adaptive_f) <= 1e-9);
    CHECK(std::abs(a.mae - b.mae) <= 1e-9);
    for (int k = 0; k < 256; ++k) {
        CHECK(std::abs(a.precision[static_cast<std::size_t>(k)] - b.precision[static_cast<std::size_t>(k)]) <= 1e-9);
        CHECK(std::abs(a.recall[static_cast<std::size_t>(k)] - b.recall[static_cast<std::size_t>(k)]) <= 1e-9);
        CHECK(std::abs(a.f_curve[static_cast<std::size_t>(k)] - b.f_curve[static_cast<std::size_t>(k)]) <= 1e-9);
    }
}

TEST_CASE("evaluate_dataset structural properties") {
    Rng rng(99);
    auto pairs = random_pairs(rng, 3, 8, 8);
    const MetricsReport r = evaluate_dataset(pairs);

    SUBCASE("perfect prediction pins the summary") {
        std::vector<std::pair<Tensor<float>, Tensor<float>>> exact;
        for (auto& [p, y] : pairs) exact.emplace_back(y, y);
        const MetricsReport pr = evaluate_dataset(exact);
        CHECK(pr.max_f == doctest::Approx(1.0));
        CHECK(pr.mae == doctest::Approx(0.0));
    }
    SUBCASE("fields bounded, max_f dominates the curve") {
        for (int k = 0; k < 256; ++k) {
            const auto ks = static_cast<std::size_t>(k);
            CHECK(r.precision[ks] >= 0.0);
            CHECK(r.precision[ks] <= 1.0);
            CHECK(r.recall[ks] >= 0.0);
            CHECK(r.recall[ks] <= 1.0);
            CHECK(r.max_f >= r.f_curve[ks]);
        }
        CHECK(r.mae >= 0.0);
        CHECK(r.mae <= 1.0);
    }
    SUBCASE("recall is non-increasing in the threshold") {
        for (int k = 1; k < 256; ++k) {
            CHECK(r.recall[static_cast<std::size_t>(k)] <=
                  r.recall[static_cast<std::size_t>(k - 1)] + 1e-12);
        }
    }
    SUBCASE("duplicating every pair changes nothing") {
        auto doubled = pairs;
        doubled.insert(doubled.end(), pairs.begin(), pairs.end());
        const MetricsReport d = evaluate_dataset(doubled);
        CHECK(d.max_f == doctest::Approx(r.max_f).epsilon(1e-12));
        CHECK(d.mae == doctest::Approx(r.mae).epsilon(1e-12));
        CHECK(d.adaptive_f == doctest::Approx(r.adaptive_f).epsilon(1e-12));
    }
    SUBCASE("permutation invariance") {
        auto shuffled = pairs;
        std::swap(shuffled[0], shuffled[2]);
        const MetricsReport s = evaluate_dataset(shuffled);
        CHECK(s.max_f == doctest::Approx(r.max_f).epsilon(1e-12));
        CHECK(s.mae == doctest::Approx(r.mae).epsilon(1e-12));
    }
    SUBCASE("threaded evaluation matches single-threaded exactly") {
        const MetricsReport t = evaluate_dataset(pairs, 3);
        CHECK(t.max_f == r.max_f);
        CHECK(t.mae == r.mae);
        CHECK(t.adaptive_f == r.adaptive_f);
    }
    SUBCASE("empty dataset is an error") {
        CHECK_THROWS_AS(evaluate_dataset({}), Error);
    }
}

TEST_CASE("metrics CSV emission") {
    Rng rng(7);
    auto pairs = random_pairs(rng, 2, 8, 8);
    const MetricsReport r = evaluate_dataset(pairs);
    const auto dir = std::filesystem::temp_directory_path() / "pfa_metrics_csv_test";
    std::filesystem::create_directories(dir);
    const std::string curve = (dir / "curve.csv").string();
    const std::string summary = (dir / "summary.csv").string();
    write_curve_csv(r, curve);
    write_summary_csv(r, summary);

    std::ifstream in(curve, std::ios::binary);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "threshold,precision,recall,f_measure");
    int rows = 0;
    bool has_cr = false;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
        has_cr = has_cr || line.find('\r') != std::string::npos;
        if (rows == 1) {
            CHECK(line.substr(0, 9) == "0.000000,");  // 6 decimal places, LF only
        }
    }
    CHECK(rows == 256);
    CHECK_FALSE(has_cr);

    std::ifstream ins(summary, std::ios::binary);
    REQUIRE(std::getline(ins, line));
    CHECK(line == "metric,value");
    std::vector<std::string> names;
    while (std::getline(ins, line)) {
        if (!line.empty()) names.push_back(line.substr(0, line.find(',')));
    }
    CHECK(names == std::vector<std::string>{"max_f", "adaptive_f", "mae"});
    std::filesystem::remove_all(dir);
}
