#include "nusg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace nusg::data {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::vector<fs::path> list_files(const fs::path& dir, const std::vector<std::string>& exts) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string ext = lower(e.path().extension().string());
        if (std::find(exts.begin(), exts.end(), ext) != exts.end()) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

cv::Mat plane(Tensor32& t, int64_t c) {
    return cv::Mat(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)), CV_32F,
                   t.data().data() + c * t.dim(1) * t.dim(2));
}

// Applies `op` to every channel plane of a C x H x W tensor.
template <typename Op>
Tensor32 per_plane(const Tensor32& in, Op op) {
    Tensor32 src = in.clone();
    Tensor32 out(in.shape());
    for (int64_t c = 0; c < in.dim(0); ++c) {
        cv::Mat dst = plane(out, c);
        op(plane(src, c), dst);
    }
    return out;
}

void rebinarize(Tensor32& mask) {
    for (float& v : mask.data()) v = v >= 0.5f ? 1.0f : 0.0f;
}

}  // namespace

ScanResult scan_dataset(const fs::path& root) {
    const auto images = list_files(root / "images", {".png", ".jpg", ".jpeg"});
    const auto masks = list_files(root / "masks", {".png"});
    std::map<std::string, fs::path> by_stem;
    ScanResult r;
    for (const auto& m : masks) by_stem[m.stem().string()] = m;
    std::map<std::string, SampleRecord> paired;
    for (const auto& img : images) {
        const std::string stem = img.stem().string();
        auto it = by_stem.find(stem);
        if (it == by_stem.end() || paired.count(stem)) {
            r.unmatched.push_back(img);
            continue;
        }
        paired[stem] = {img, it->second, stem};
    }
    for (const auto& [stem, m] : by_stem)
        if (!paired.count(stem)) r.unmatched.push_back(m);
    for (auto& [stem, rec] : paired) r.records.push_back(std::move(rec));
    std::sort(r.unmatched.begin(), r.unmatched.end());
    if (r.records.empty()) {
        throw std::runtime_error("no image/mask pairs under " + root.string() +
                                 " (expected images/*.png|jpg|jpeg and masks/*.png with matching names)");
    }
    return r;
}

void write_manifest(const fs::path& path, const std::vector<fs::path>& unmatched) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    for (const auto& p : unmatched) f << p.string() << "\n";
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split(const std::vector<SampleRecord>& records,
                                                                      double fraction, uint64_t seed) {
    const size_t n = records.size();
    if (n < 2) throw std::invalid_argument("split needs at least 2 records, got " + std::to_string(n));
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::invalid_argument("train fraction must be in (0, 1), got " + std::to_string(fraction));
    }
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    const size_t n_train = static_cast<size_t>(std::llround(fraction * static_cast<double>(n)));
    std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> out;
    for (size_t i = 0; i < n; ++i) (i < n_train ? out.first : out.second).push_back(records[order[i]]);
    return out;
}

Tensor32 read_rgb(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw std::runtime_error("cannot decode image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    const int h = rgb.rows, w = rgb.cols;
    Tensor32 out(Shape{3, h, w});
    float* o = out.data().data();
    for (int y = 0; y < h; ++y) {
        const cv::Vec3b* row = rgb.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) o[(c * h + y) * w + x] = static_cast<float>(row[x][c]) / 255.0f;
    }
    return out;
}

Tensor32 normalize_image(const Tensor32& rgb01, int height, int width) {
    Tensor32 out(Shape{3, height, width});
    Tensor32 src = rgb01.clone();
    for (int64_t c = 0; c < 3; ++c) {
        cv::Mat dst;
        cv::resize(plane(src, c), dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
        cv::Mat target = plane(out, c);
        dst.convertTo(target, CV_32F, 1.0 / kStd[c], -kMean[c] / kStd[c]);
    }
    return out;
}

Sample load_sample(const SampleRecord& record, int height, int width) {
    if (height < 1 || width < 1) throw std::invalid_argument("load size must be positive");
    Sample s;
    s.image = normalize_image(read_rgb(record.image_path), height, width);
    cv::Mat m = cv::imread(record.mask_path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw std::runtime_error("cannot decode mask " + record.mask_path.string());
    if (m.depth() != CV_8U) throw std::runtime_error("mask is not 8-bit: " + record.mask_path.string());
    cv::Mat resized;
    cv::resize(m, resized, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
    s.mask = Tensor32(Shape{1, height, width});
    float* o = s.mask.data().data();
    for (int y = 0; y < height; ++y) {
        const uint8_t* row = resized.ptr<uint8_t>(y);
        for (int x = 0; x < width; ++x) o[y * width + x] = row[x] >= 128 ? 1.0f : 0.0f;
    }
    return s;
}

AugmentPolicy AugmentPolicy::none() {
    AugmentPolicy p;
    p.hflip = p.vflip = p.zoom = p.rotate = false;
    return p;
}

void AugmentPolicy::validate() const {
    for (double p : {p_hflip, p_vflip, p_zoom, p_rotate})
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("augmentation probability must be in [0, 1]");
    if (!(zoom_min >= 1.0 && zoom_max >= zoom_min)) {
        throw std::invalid_argument("zoom range must satisfy 1 <= zoom_min <= zoom_max");
    }
    if (!(max_degrees >= 0.0)) throw std::invalid_argument("rotation range must be non-negative");
}

Sample augment(const Sample& in, const AugmentPolicy& policy, std::mt19937_64& rng) {
    policy.validate();
    const int h = static_cast<int>(in.image.dim(1)), w = static_cast<int>(in.image.dim(2));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    // Every draw happens regardless of the enable flags, so toggling one
    // transform does not shift the random stream of the others.
    const bool do_h = u01(rng) < policy.p_hflip && policy.hflip;
    const bool do_v = u01(rng) < policy.p_vflip && policy.vflip;
    const bool do_zoom = u01(rng) < policy.p_zoom && policy.zoom;
    const double zoom = policy.zoom_min + (policy.zoom_max - policy.zoom_min) * u01(rng);
    const bool do_rot = u01(rng) < policy.p_rotate && policy.rotate;
    const double degrees = (2.0 * u01(rng) - 1.0) * policy.max_degrees;

    std::array<std::pair<float, float>, 3> range;
    for (int64_t c = 0; c < 3; ++c) {
        const float* p = in.image.data().data() + c * h * w;
        auto [lo, hi] = std::minmax_element(p, p + h * w);
        range[c] = {*lo, *hi};
    }

    Sample s{in.image.clone(), in.mask.clone()};
    auto both = [&](auto img_op, auto mask_op) {
        s.image = per_plane(s.image, img_op);
        s.mask = per_plane(s.mask, mask_op);
    };
    if (do_h) {
        auto f = [](cv::Mat src, cv::Mat dst) { cv::flip(src, dst, 1); };
        both(f, f);
    }
    if (do_v) {
        auto f = [](cv::Mat src, cv::Mat dst) { cv::flip(src, dst, 0); };
        both(f, f);
    }
    if (do_zoom && zoom > 1.0) {
        const int zw = std::max(w, static_cast<int>(std::lround(w * zoom)));
        const int zh = std::max(h, static_cast<int>(std::lround(h * zoom)));
        const cv::Rect crop((zw - w) / 2, (zh - h) / 2, w, h);
        auto make = [&](int interp) {
            return [=](cv::Mat src, cv::Mat dst) {
                cv::Mat big;
                cv::resize(src, big, cv::Size(zw, zh), 0, 0, interp);
                big(crop).copyTo(dst);
            };
        };
        both(make(cv::INTER_LINEAR), make(cv::INTER_NEAREST));
        rebinarize(s.mask);
    }
    if (do_rot && degrees != 0.0) {
        const cv::Mat rot = cv::getRotationMatrix2D(cv::Point2f((w - 1) / 2.0f, (h - 1) / 2.0f), degrees, 1.0);
        both([&](cv::Mat src, cv::Mat dst) {
                 cv::warpAffine(src, dst, rot, cv::Size(w, h), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
             },
             [&](cv::Mat src, cv::Mat dst) {
                 cv::warpAffine(src, dst, rot, cv::Size(w, h), cv::INTER_NEAREST, cv::BORDER_CONSTANT, cv::Scalar(0));
             });
        rebinarize(s.mask);
    }
    for (int64_t c = 0; c < 3; ++c) {
        float* p = s.image.data().data() + c * h * w;
        for (int64_t i = 0; i < h * w; ++i) p[i] = std::clamp(p[i], range[c].first, range[c].second);
    }
    return s;
}

std::mt19937_64 sample_rng(uint64_t seed, uint64_t index, uint64_t epoch) {
    return std::mt19937_64(mix(mix(mix(seed) ^ index) ^ (epoch * 0x632be59bd9b4e019ull)));
}

Batch make_batch(const std::vector<Sample>& samples, const std::vector<size_t>& indices) {
    if (indices.empty()) throw std::invalid_argument("empty batch");
    const Shape& is = samples.at(indices[0]).image.shape();
    const Shape& ms = samples.at(indices[0]).mask.shape();
    const int64_t n = static_cast<int64_t>(indices.size());
    Batch b{Tensor32(Shape{n, is[0], is[1], is[2]}), Tensor32(Shape{n, ms[0], ms[1], ms[2]})};
    for (int64_t i = 0; i < n; ++i) {
        const Sample& s = samples.at(indices[i]);
        if (s.image.shape() != is || s.mask.shape() != ms) {
            throw std::invalid_argument("batch samples differ in shape: " + shape_str(s.image.shape()) + " vs " +
                                        shape_str(is));
        }
        std::copy(s.image.data().begin(), s.image.data().end(), b.images.data().begin() + i * s.image.numel());
        std::copy(s.mask.data().begin(), s.mask.data().end(), b.masks.data().begin() + i * s.mask.numel());
    }
    return b;
}

}  // namespace nusg::data
