#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nusg/tensor.hpp"

namespace nusg {

struct ConfusionMatrix {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    int64_t total() const { return tp + fp + tn + fn; }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        tp += o.tp, fp += o.fp, tn += o.tn, fn += o.fn;
        return *this;
    }
};

/// Prediction is positive where pred >= threshold; ground truth is positive
/// where gt >= 0.5.
template <typename T>
ConfusionMatrix confusion(const Tensor<T>& pred, const Tensor<T>& gt, double threshold = 0.5);

/// Percentages. A zero denominator yields 0.
struct RatioMetrics {
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
};

RatioMetrics metrics_from_confusion(const ConfusionMatrix& cm);

/// Mean of foreground and background IoU, as a percentage. A class absent
/// from both prediction and ground truth has IoU 1.
double miou_from_confusion(const ConfusionMatrix& cm);

template <typename T>
double miou(const Tensor<T>& pred, const Tensor<T>& gt, double threshold = 0.5);

/// Mean absolute difference per image (leading dim), averaged over images.
template <typename T>
double mae(const Tensor<T>& pred, const Tensor<T>& gt);

/// One row of an evaluation report.
struct MetricsReport {
    std::string model;
    double recall = 0.0, precision = 0.0, miou = 0.0, mae = 0.0, f1 = 0.0;
    std::optional<double> params_mb, flops_g, inference_s;
    ConfusionMatrix confusion;
    int64_t images = 0;
};

MetricsReport make_report(const std::string& model, const ConfusionMatrix& cm, double mae_value, int64_t images);

/// "model,recall,precision,miou,mae,f1,params_mb,flops_g,inference_s"
const std::string& report_csv_header();
std::string report_csv_row(const MetricsReport& r);

/// JSON mirror of the rows plus the counting conventions used.
std::string report_json(const std::vector<MetricsReport>& rows, const std::string& flops_convention = "");

void write_report(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                  const std::vector<MetricsReport>& rows, const std::string& flops_convention = "");

}  // namespace nusg
