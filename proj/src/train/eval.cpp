#include "nusg/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "nusg/runtime.hpp"

namespace nusg {

namespace {

Tensor32 read_mask(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw std::runtime_error("cannot decode mask " + path.string());
    Tensor32 t(Shape{1, 1, m.rows, m.cols});
    float* o = t.data().data();
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) o[y * m.cols + x] = m.at<uint8_t>(y, x) >= 128 ? 1.0f : 0.0f;
    return t;
}

}  // namespace

MetricsReport evaluate(const Model<float>& model, const std::vector<data::SampleRecord>& records,
                       const EvalOptions& opt, const std::string& name) {
    if (records.empty()) throw std::invalid_argument("nothing to evaluate");
    NoGradGuard no_grad;
    ConfusionMatrix cm;
    double mae_sum = 0.0;
    for (const auto& r : records) {
        const data::Sample s = data::load_sample(r, opt.input_size, opt.input_size);
        const Tensor32 x(Shape{1, 3, opt.input_size, opt.input_size}, std::vector<float>(s.image.data().begin(), s.image.data().end()));
        const Tensor32 gt(Shape{1, 1, opt.input_size, opt.input_size}, std::vector<float>(s.mask.data().begin(), s.mask.data().end()));
        const Tensor32 fused = model.forward(x, NormMode::kEval).fused;
        cm += confusion(fused, gt, opt.threshold);
        mae_sum += mae(fused, gt);
    }
    return make_report(name, cm, mae_sum / static_cast<double>(records.size()), static_cast<int64_t>(records.size()));
}

MetricsReport evaluate_predictions(const std::filesystem::path& pred_dir,
                                   const std::vector<data::SampleRecord>& records, double threshold,
                                   const std::string& name) {
    if (records.empty()) throw std::invalid_argument("nothing to evaluate");
    ConfusionMatrix cm;
    double mae_sum = 0.0;
    for (const auto& r : records) {
        const auto pred_path = pred_dir / (r.stem + ".png");
        cv::Mat p = cv::imread(pred_path.string(), cv::IMREAD_GRAYSCALE);
        if (p.empty()) throw std::runtime_error("missing or undecodable prediction " + pred_path.string());
        const Tensor32 gt = read_mask(r.mask_path);
        if (p.rows != gt.dim(2) || p.cols != gt.dim(3)) {
            throw std::runtime_error("prediction " + pred_path.string() + " is " + std::to_string(p.cols) + "x" +
                                     std::to_string(p.rows) + " but its mask is " + std::to_string(gt.dim(3)) + "x" +
                                     std::to_string(gt.dim(2)));
        }
        Tensor32 prob(gt.shape());
        float* o = prob.data().data();
        for (int y = 0; y < p.rows; ++y)
            for (int x = 0; x < p.cols; ++x) o[y * p.cols + x] = static_cast<float>(p.at<uint8_t>(y, x)) / 255.0f;
        cm += confusion(prob, gt, threshold);
        mae_sum += mae(prob, gt);
    }
    return make_report(name, cm, mae_sum / static_cast<double>(records.size()), static_cast<int64_t>(records.size()));
}

Tensor32 predict_image(const Model<float>& model, const std::filesystem::path& image, int input_size) {
    NoGradGuard no_grad;
    const Tensor32 rgb = data::read_rgb(image);
    const int src_h = static_cast<int>(rgb.dim(1)), src_w = static_cast<int>(rgb.dim(2));
    const Tensor32 norm = data::normalize_image(rgb, input_size, input_size);
    const Tensor32 x(Shape{1, 3, input_size, input_size}, std::vector<float>(norm.data().begin(), norm.data().end()));
    Tensor32 fused = model.forward(x, NormMode::kEval).fused;
    cv::Mat small(input_size, input_size, CV_32F, fused.data().data());
    cv::Mat full;
    cv::resize(small, full, cv::Size(src_w, src_h), 0, 0, cv::INTER_LINEAR);
    Tensor32 out(Shape{1, src_h, src_w});
    for (int y = 0; y < src_h; ++y)
        for (int x = 0; x < src_w; ++x) out.data()[y * src_w + x] = std::clamp(full.at<float>(y, x), 0.0f, 1.0f);
    return out;
}

void write_probability_png(const Tensor32& prob, const std::filesystem::path& out, std::optional<double> threshold) {
    const int h = static_cast<int>(prob.dim(prob.rank() - 2)), w = static_cast<int>(prob.dim(prob.rank() - 1));
    cv::Mat img(h, w, CV_8U);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double p = prob.data()[y * w + x];
            img.at<uint8_t>(y, x) =
                threshold ? (p >= *threshold ? 255 : 0) : static_cast<uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0));
        }
    if (!cv::imwrite(out.string(), img)) throw std::runtime_error("cannot write " + out.string());
}

double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of nothing");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

BenchResult bench_inference(const Model<float>& model, const Shape& input_shape, int warmup_runs, int timed_runs) {
    if (timed_runs < 5) throw std::invalid_argument("benchmark needs at least 5 timed runs, got " + std::to_string(timed_runs));
    if (warmup_runs < 0) throw std::invalid_argument("warmup runs cannot be negative");
    require_model_input(input_shape);
    if (input_shape[0] != 1) throw std::invalid_argument("benchmark times a single image; batch must be 1");
    NoGradGuard no_grad;
    std::mt19937_64 rng(0);
    std::uniform_real_distribution<float> u(-2.0f, 2.0f);
    Tensor32 x(input_shape);
    for (float& v : x.data()) v = u(rng);
    for (int i = 0; i < warmup_runs; ++i) model.forward(x, NormMode::kEval);
    BenchResult r;
    r.input_shape = input_shape;
    for (int i = 0; i < timed_runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        model.forward(x, NormMode::kEval);
        r.runs_s.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    r.median_s = median(r.runs_s);
    r.hardware = hardware_descriptor();
    return r;
}

std::string hardware_descriptor() {
    std::string cpu = "unknown cpu";
    std::ifstream f("/proc/cpuinfo");
    for (std::string line; std::getline(f, line);) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', colon + 1));
            break;
        }
    }
    return cpu + "; " + std::to_string(std::thread::hardware_concurrency()) + " logical cores; " +
           std::to_string(compute_threads()) + " BLAS threads";
}

}  // namespace nusg
