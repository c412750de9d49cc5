#include "pfa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

namespace pfa {

namespace {

void require_binary(const Tensor<float>& truth) {
    for (float v : truth.data) {
        if (v != 0.0f && v != 1.0f) {
            throw Error("metrics: ground truth must be binary, found value " + std::to_string(v));
        }
    }
}

void require_same_shape(const Tensor<float>& pred, const Tensor<float>& truth, const char* what) {
    if (!pred.same_shape_as(truth)) {
        throw ShapeError(std::string(what) + ": prediction " + shape_str(pred.shape) +
                         " vs truth " + shape_str(truth.shape));
    }
}

struct ImageStats {
    std::array<PrPoint, 256> curve;
    double adaptive_f = 0.0;
    double mae = 0.0;
};

PrPoint pr_counts(const Tensor<float>& pred, const Tensor<float>& truth, double threshold) {
    std::size_t predicted = 0, truth_pos = 0, hits = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const bool b = static_cast<double>(pred.data[i]) >= threshold;
        const bool y = truth.data[i] != 0.0f;
        predicted += b;
        truth_pos += y;
        hits += b && y;
    }
    PrPoint p;
    p.precision = predicted == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(predicted);
    p.recall = truth_pos == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(truth_pos);
    return p;
}

ImageStats image_stats(const Tensor<float>& pred, const Tensor<float>& truth) {
    ImageStats s;
    for (int k = 0; k < 256; ++k) {
        s.curve[static_cast<std::size_t>(k)] = pr_counts(pred, truth, k / 255.0);
    }
    double mean_p = 0.0;
    for (float v : pred.data) mean_p += static_cast<double>(v);
    mean_p /= static_cast<double>(pred.numel());
    const PrPoint at = pr_counts(pred, truth, std::min(1.0, 2.0 * mean_p));
    s.adaptive_f = f_measure(at.precision, at.recall);
    s.mae = mae(pred, truth);
    return s;
}

}  // namespace

PrPoint pr_at_threshold(const Tensor<float>& pred, const Tensor<float>& truth, double threshold) {
    require_same_shape(pred, truth, "pr_at_threshold");
    require_binary(truth);
    return pr_counts(pred, truth, threshold);
}

double f_measure(double precision, double recall, double beta2) {
    const double denom = beta2 * precision + recall;
    if (denom == 0.0) return 0.0;
    return (1.0 + beta2) * precision * recall / denom;
}

double mae(const Tensor<float>& pred, const Tensor<float>& truth) {
    require_same_shape(pred, truth, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        s += std::abs(static_cast<double>(pred.data[i]) - static_cast<double>(truth.data[i]));
    }
    return s / static_cast<double>(pred.numel());
}

MetricsReport evaluate_dataset(const std::vector<std::pair<Tensor<float>, Tensor<float>>>& pairs,
                               int threads) {
    if (pairs.empty()) {
        throw Error("evaluate_dataset: empty dataset");
    }
    for (const auto& [p, y] : pairs) {
        require_same_shape(p, y, "evaluate_dataset");
        require_binary(y);
    }
    std::vector<ImageStats> stats(pairs.size());
    const int workers = std::max(1, threads);
    if (workers == 1 || pairs.size() == 1) {
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            stats[i] = image_stats(pairs[i].first, pairs[i].second);
        }
    } else {
        // results land in per-image slots; aggregation below stays ordered
        std::vector<std::thread> pool;
        std::size_t chunk = (pairs.size() + workers - 1) / static_cast<std::size_t>(workers);
        for (int t = 0; t < workers; ++t) {
            const std::size_t lo = static_cast<std::size_t>(t) * chunk;
            const std::size_t hi = std::min(pairs.size(), lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi] {
                for (std::size_t i = lo; i < hi; ++i) {
                    stats[i] = image_stats(pairs[i].first, pairs[i].second);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    MetricsReport report;
    report.n_images = static_cast<int>(pairs.size());
    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    for (const ImageStats& s : stats) {
        for (int k = 0; k < 256; ++k) {
            report.precision[static_cast<std::size_t>(k)] += s.curve[static_cast<std::size_t>(k)].precision;
            report.recall[static_cast<std::size_t>(k)] += s.curve[static_cast<std::size_t>(k)].recall;
        }
        report.adaptive_f += s.adaptive_f;
        report.mae += s.mae;
    }
    report.adaptive_f *= inv_n;
    report.mae *= inv_n;
    for (int k = 0; k < 256; ++k) {
        report.precision[static_cast<std::size_t>(k)] *= inv_n;
        report.recall[static_cast<std::size_t>(k)] *= inv_n;
        report.f_curve[static_cast<std::size_t>(k)] =
            f_measure(report.precision[static_cast<std::size_t>(k)],
                      report.recall[static_cast<std::size_t>(k)]);
        report.max_f = std::max(report.max_f, report.f_curve[static_cast<std::size_t>(k)]);
    }
    return report;
}

void write_curve_csv(const MetricsReport& report, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) {
        throw IoError("cannot open " + path + " for writing");
    }
    std::fprintf(f, "threshold,precision,recall,f_measure\n");
    for (int k = 0; k < 256; ++k) {
        std::fprintf(f, "%.6f,%.6f,%.6f,%.6f\n", k / 255.0,
                     report.precision[static_cast<std::size_t>(k)],
                     report.recall[static_cast<std::size_t>(k)],
                     report.f_curve[static_cast<std::size_t>(k)]);
    }
    std::fclose(f);
}

void write_summary_csv(const MetricsReport& report, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) {
        throw IoError("cannot open " + path + " for writing");
    }
    std::fprintf(f, "metric,value\n");
    std::fprintf(f, "max_f,%.6f\n", report.max_f);
    std::fprintf(f, "adaptive_f,%.6f\n", report.adaptive_f);
    std::fprintf(f, "mae,%.6f\n", report.mae);
    std::fclose(f);
}

}  // namespace pfa
