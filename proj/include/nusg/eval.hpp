#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nusg/data.hpp"
#include "nusg/metrics.hpp"
#include "nusg/model.hpp"

namespace nusg {

struct EvalOptions {
    int input_size = 320;
    double threshold = 0.5;
};

/// Eval-mode forward over every record; the fused map is scored against the
/// mask at input_size. One confusion matrix accumulates over all pixels.
MetricsReport evaluate(const Model<float>& model, const std::vector<data::SampleRecord>& records,
                       const EvalOptions& opt, const std::string& name);

/// Bypass mode: scores pred_dir/<stem>.png (8-bit, value/255 as probability)
/// against each record's mask at the mask's own resolution.
MetricsReport evaluate_predictions(const std::filesystem::path& pred_dir,
                                   const std::vector<data::SampleRecord>& records, double threshold,
                                   const std::string& name);

/// Fused probability map for one image, resized back to the source size.
/// Values in (0,1), shape 1 x H x W.
Tensor32 predict_image(const Model<float>& model, const std::filesystem::path& image, int input_size);

/// 8-bit grayscale PNG: round(255 p), or {0,255} when a threshold is given.
void write_probability_png(const Tensor32& prob, const std::filesystem::path& out,
                           std::optional<double> threshold = std::nullopt);

struct BenchResult {
    double median_s = 0.0;
    std::vector<double> runs_s;
    Shape input_shape;
    std::string hardware;
};

/// Median wall time of `timed_runs` single-image eval forwards after
/// `warmup_runs` untimed ones. timed_runs must be at least 5.
BenchResult bench_inference(const Model<float>& model, const Shape& input_shape, int warmup_runs = 3,
                            int timed_runs = 20);

/// CPU model, logical core count and BLAS threads.
std::string hardware_descriptor();

double median(std::vector<double> values);

}  // namespace nusg
