#include "nusg/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace nusg {

namespace {

template <typename T>
void require_same(const Tensor<T>& pred, const Tensor<T>& gt, const char* what) {
    if (pred.shape() != gt.shape()) {
        throw std::invalid_argument(std::string(what) + " shape mismatch: prediction " + shape_str(pred.shape()) +
                                    " vs target " + shape_str(gt.shape()));
    }
}

double ratio(int64_t num, int64_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::setprecision(10) << v;
    return ss.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

}  // namespace

template <typename T>
ConfusionMatrix confusion(const Tensor<T>& pred, const Tensor<T>& gt, double threshold) {
    require_same(pred, gt, "confusion");
    ConfusionMatrix cm;
    const auto p = pred.data();
    const auto g = gt.data();
    for (size_t i = 0; i < p.size(); ++i) {
        const bool pp = p[i] >= threshold;
        const bool gp = g[i] >= T(0.5);
        if (pp && gp) ++cm.tp;
        else if (pp) ++cm.fp;
        else if (gp) ++cm.fn;
        else ++cm.tn;
    }
    return cm;
}

RatioMetrics metrics_from_confusion(const ConfusionMatrix& cm) {
    RatioMetrics m;
    const double r = ratio(cm.tp, cm.tp + cm.fn);
    const double p = ratio(cm.tp, cm.tp + cm.fp);
    m.recall = 100.0 * r;
    m.precision = 100.0 * p;
    m.f1 = p + r == 0.0 ? 0.0 : 100.0 * 2.0 * p * r / (p + r);
    return m;
}

double miou_from_confusion(const ConfusionMatrix& cm) {
    auto iou = [](int64_t hit, int64_t den) { return den == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(den); };
    const double fg = iou(cm.tp, cm.tp + cm.fp + cm.fn);
    const double bg = iou(cm.tn, cm.tn + cm.fn + cm.fp);
    return 100.0 * (fg + bg) / 2.0;
}

template <typename T>
double miou(const Tensor<T>& pred, const Tensor<T>& gt, double threshold) {
    return miou_from_confusion(confusion(pred, gt, threshold));
}

template <typename T>
double mae(const Tensor<T>& pred, const Tensor<T>& gt) {
    require_same(pred, gt, "mae");
    if (pred.numel() == 0) throw std::invalid_argument("mae of an empty tensor");
    const int64_t n = pred.dim(0), per = pred.numel() / n;
    const auto p = pred.data();
    const auto g = gt.data();
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t k = 0; k < per; ++k) acc += std::abs(static_cast<double>(p[i * per + k]) - g[i * per + k]);
        total += acc / static_cast<double>(per);
    }
    return total / static_cast<double>(n);
}

MetricsReport make_report(const std::string& model, const ConfusionMatrix& cm, double mae_value, int64_t images) {
    const RatioMetrics m = metrics_from_confusion(cm);
    MetricsReport r;
    r.model = model;
    r.recall = m.recall;
    r.precision = m.precision;
    r.f1 = m.f1;
    r.miou = miou_from_confusion(cm);
    r.mae = mae_value;
    r.confusion = cm;
    r.images = images;
    return r;
}

const std::string& report_csv_header() {
    static const std::string h = "model,recall,precision,miou,mae,f1,params_mb,flops_g,inference_s";
    return h;
}

std::string report_csv_row(const MetricsReport& r) {
    if (r.model.find_first_of(",\"\n") != std::string::npos) {
        throw std::invalid_argument("model name cannot contain commas, quotes or newlines: " + r.model);
    }
    return r.model + "," + fmt(r.recall) + "," + fmt(r.precision) + "," + fmt(r.miou) + "," + fmt(r.mae) + "," +
           fmt(r.f1) + "," + fmt(r.params_mb) + "," + fmt(r.flops_g) + "," + fmt(r.inference_s);
}

std::string report_json(const std::vector<MetricsReport>& rows, const std::string& flops_convention) {
    nlohmann::ordered_json j;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json row{{"model", r.model},  {"recall", r.recall}, {"precision", r.precision},
                                   {"miou", r.miou},    {"mae", r.mae},       {"f1", r.f1},
                                   {"images", r.images}};
        row["params_mb"] = r.params_mb ? nlohmann::ordered_json(*r.params_mb) : nullptr;
        row["flops_g"] = r.flops_g ? nlohmann::ordered_json(*r.flops_g) : nullptr;
        row["inference_s"] = r.inference_s ? nlohmann::ordered_json(*r.inference_s) : nullptr;
        row["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
        j["rows"].push_back(row);
    }
    j["conventions"] = {
        {"aggregation", "one confusion matrix accumulated over all pixels of all images (micro average)"},
        {"threshold", "prediction positive where probability >= threshold"},
        {"zero_denominator", "recall, precision and f1 are 0 when their denominator is 0"},
        {"empty_class_iou", "a class absent from both prediction and ground truth has IoU 1"},
        {"mae", "per-image mean absolute difference, averaged over images"},
        {"params_mb", "learnable values x 4 bytes / 2^20"},
        {"flops", flops_convention}};
    return j.dump(2);
}

void write_report(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                  const std::vector<MetricsReport>& rows, const std::string& flops_convention) {
    {
        std::ofstream f(csv_path);
        if (!f) throw std::runtime_error("cannot write " + csv_path.string());
        f << report_csv_header() << "\n";
        for (const auto& r : rows) f << report_csv_row(r) << "\n";
    }
    std::ofstream f(json_path);
    if (!f) throw std::runtime_error("cannot write " + json_path.string());
    f << report_json(rows, flops_convention) << "\n";
}

template ConfusionMatrix confusion(const Tensor<float>&, const Tensor<float>&, double);
template ConfusionMatrix confusion(const Tensor<double>&, const Tensor<double>&, double);
template double miou(const Tensor<float>&, const Tensor<float>&, double);
template double miou(const Tensor<double>&, const Tensor<double>&, double);
template double mae(const Tensor<float>&, const Tensor<float>&);
template double mae(const Tensor<double>&, const Tensor<double>&);

}  // namespace nusg
