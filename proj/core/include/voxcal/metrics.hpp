// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace voxcal {

// Regression metrics over predicted vs groundtruth energies. Computed in
// double so the maeom == 100*mae/mean(gt) identity holds to 1e-9.

/// (1/N) * sum |pred_i - gt_i|
double mae(std::span<const double> pred, std::span<const double> gt);

/// (100/N') * sum |pred_i - gt_i| / gt_i over samples with gt_i > 0.
/// `excluded`, when given, receives the number of skipped samples; an input
/// with every sample excluded is rejected.
double mape(std::span<const double> pred, std::span<const double> gt, int64_t* excluded = nullptr);

/// 100 * mae / mean(gt); mean(gt) must be positive.
double maeom(std::span<const double> pred, std::span<const double> gt);

struct MetricsReport {
    int64_t n = 0;
    double mae_kcal = 0.0;
    double mape_pct = 0.0;
    double maeom_pct = 0.0;
    double mean_gt_kcal = 0.0;
    int64_t mape_excluded = 0;
};

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> gt);

/// One evaluated configuration of the ablation table.
struct AblationRow {
    std::string config; // "module2_only" | "module1_2" | "full"
    uint64_t seed = 0;
    MetricsReport report;
};

struct ScatterPoint {
    double pred, gt;
};

/// Writes metrics.csv (columns: config, seed, n, mae_kcal, mape_pct,
/// maeom_pct, mean_gt_kcal) and a self-contained scatter.svg of predicted vs
/// groundtruth energy with a y=x guide line.
void emit_report(const std::vector<AblationRow>& rows, const std::vector<ScatterPoint>& points,
                 const std::string& out_dir);

std::string render_scatter_svg(const std::vector<ScatterPoint>& points);

/// Median of per-seed values (average of the middle pair for even counts).
double median(std::vector<double> values);

} // namespace voxcal
