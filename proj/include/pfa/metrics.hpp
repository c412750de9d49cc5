#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "pfa/tensor.hpp"

namespace pfa {

struct PrPoint {
    double precision = 0.0;
    double recall = 0.0;
};

/// Dataset-level evaluation summary. Curves are averaged pointwise over
/// images at thresholds k/255, k = 0..255; f_curve applies the F-measure to
/// the averaged precision/recall at each threshold. max_f maximizes over the
/// curve; adaptive_f averages per-image F at the per-image threshold
/// min(1, 2*mean(P)). The same Eq.-12 formula backs both summaries -- which
/// thresholding convention a published table used is often unstated, so both
/// are reported.
struct MetricsReport {
    std::array<double, 256> precision{};
    std::array<double, 256> recall{};
    std::array<double, 256> f_curve{};
    double max_f = 0.0;
    double adaptive_f = 0.0;
    double mae = 0.0;
    int n_images = 0;
};

/// Binarizes pred at `threshold` (>=), counts against a strictly binary
/// truth map. Empty-denominator conventions: precision = 1 when nothing is
/// predicted, recall = 1 when the truth is empty.
PrPoint pr_at_threshold(const Tensor<float>& pred, const Tensor<float>& truth, double threshold);

/// (1+b2) P R / (b2 P + R); 0 when the denominator vanishes.
double f_measure(double precision, double recall, double beta2 = 0.3);

/// Mean absolute difference over all pixels of one image.
double mae(const Tensor<float>& pred, const Tensor<float>& truth);

/// Runs every pair through the 256-threshold sweep and the scalar summaries.
/// Per-image work may run on `threads` workers; aggregation always happens in
/// input-list order, so the result is identical for any thread count.
MetricsReport evaluate_dataset(const std::vector<std::pair<Tensor<float>, Tensor<float>>>& pairs,
                               int threads = 1);

/// threshold,precision,recall,f_measure; 256 rows, 6 decimals, LF endings.
void write_curve_csv(const MetricsReport& report, const std::string& path);
/// metric,value rows: max_f, adaptive_f, mae.
void write_summary_csv(const MetricsReport& report, const std::string& path);

}  // namespace pfa
