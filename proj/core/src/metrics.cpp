// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "voxcal/errors.hpp"

namespace voxcal {

namespace {

void check_lengths(std::span<const double> pred, std::span<const double> gt) {
    if (pred.size() != gt.size()) {
        throw InvalidArgument("metrics: length mismatch, " + std::to_string(pred.size()) + " vs " +
                              std::to_string(gt.size()));
    }
    if (pred.empty()) throw InvalidArgument("metrics: empty input");
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

} // namespace

double mae(std::span<const double> pred, std::span<const double> gt) {
    check_lengths(pred, gt);
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - gt[i]);
    return acc / double(pred.size());
}

double mape(std::span<const double> pred, std::span<const double> gt, int64_t* excluded) {
    check_lengths(pred, gt);
    double acc = 0.0;
    int64_t used = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (gt[i] > 0.0) {
            acc += std::abs(pred[i] - gt[i]) / gt[i];
            ++used;
        }
    }
    if (excluded) *excluded = int64_t(pred.size()) - used;
    if (used == 0) throw InvalidArgument("mape: every sample has non-positive groundtruth");
    return 100.0 * acc / double(used);
}

double maeom(std::span<const double> pred, std::span<const double> gt) {
    check_lengths(pred, gt);
    double mean_gt = 0.0;
    for (double v : gt) mean_gt += v;
    mean_gt /= double(gt.size());
    if (!(mean_gt > 0.0)) throw InvalidArgument("maeom: mean groundtruth must be positive");
    return 100.0 * mae(pred, gt) / mean_gt;
}

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> gt) {
    MetricsReport r;
    r.n = int64_t(pred.size());
    r.mae_kcal = mae(pred, gt);
    r.mape_pct = mape(pred, gt, &r.mape_excluded);
    r.maeom_pct = maeom(pred, gt);
    double mean_gt = 0.0;
    for (double v : gt) mean_gt += v;
    r.mean_gt_kcal = mean_gt / double(gt.size());
    return r;
}

double median(std::vector<double> values) {
    if (values.empty()) throw InvalidArgument("median: empty input");
    std::sort(values.begin(), values.end());
    const size_t mid = values.size() / 2;
    if (values.size() % 2 == 1) return values[mid];
    return 0.5 * (values[mid - 1] + values[mid]);
}

std::string render_scatter_svg(const std::vector<ScatterPoint>& points) {
    const int size = 480, margin = 48;
    const int plot = size - 2 * margin;

    double vmax = 1.0;
    for (const auto& p : points) vmax = std::max({vmax, p.pred, p.gt});
    vmax *= 1.05;

    auto sx = [&](double v) { return margin + v / vmax * plot; };
    auto sy = [&](double v) { return size - margin - v / vmax * plot; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
       << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
    os << "  <rect width=\"" << size << "\" height=\"" << size << "\" fill=\"white\"/>\n";
    os << "  <rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << plot << "\" height=\""
       << plot << "\" fill=\"none\" stroke=\"#444\"/>\n";
    // y = x guide
    os << "  <line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(vmax / 1.05)
       << "\" y2=\"" << sy(vmax / 1.05)
       << "\" stroke=\"#999\" stroke-dasharray=\"5,4\"/>\n";
    // ticks
    for (int t = 0; t <= 4; ++t) {
        const double v = vmax * t / 4.0;
        os << "  <text x=\"" << sx(v) << "\" y=\"" << size - margin + 18
           << "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#333\">" << fmt(v) << "</text>\n";
        os << "  <text x=\"" << margin - 6 << "\" y=\"" << sy(v) + 4
           << "\" font-size=\"11\" text-anchor=\"end\" fill=\"#333\">" << fmt(v) << "</text>\n";
    }
    os << "  <text x=\"" << size / 2 << "\" y=\"" << size - 8
       << "\" font-size=\"13\" text-anchor=\"middle\" fill=\"#111\">groundtruth energy (kCal)</text>\n";
    os << "  <text x=\"14\" y=\"" << size / 2
       << "\" font-size=\"13\" text-anchor=\"middle\" fill=\"#111\" transform=\"rotate(-90 14 "
       << size / 2 << ")\">predicted energy (kCal)</text>\n";
    for (const auto& p : points) {
        os << "  <circle cx=\"" << sx(p.gt) << "\" cy=\"" << sy(p.pred)
           << "\" r=\"3\" fill=\"#3172ad\" fill-opacity=\"0.65\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void emit_report(const std::vector<AblationRow>& rows, const std::vector<ScatterPoint>& points,
                 const std::string& out_dir) {
    if (rows.empty()) throw InvalidArgument("emit_report: no rows");
    std::filesystem::create_directories(out_dir);

    const auto csv_path = std::filesystem::path(out_dir) / "metrics.csv";
    std::ofstream cs(csv_path, std::ios::trunc);
    if (!cs) throw IoError("cannot write " + csv_path.string());
    cs << "config,seed,n,mae_kcal,mape_pct,maeom_pct,mean_gt_kcal\n";
    for (const auto& r : rows) {
        cs << r.config << "," << r.seed << "," << r.report.n << "," << fmt(r.report.mae_kcal) << ","
           << fmt(r.report.mape_pct) << "," << fmt(r.report.maeom_pct) << ","
           << fmt(r.report.mean_gt_kcal) << "\n";
    }
    if (!cs) throw IoError("failed writing " + csv_path.string());

    const auto svg_path = std::filesystem::path(out_dir) / "scatter.svg";
    std::ofstream sv(svg_path, std::ios::trunc);
    if (!sv) throw IoError("cannot write " + svg_path.string());
    sv << render_scatter_svg(points);
    if (!sv) throw IoError("failed writing " + svg_path.string());
}

} // namespace voxcal
