#pragma once

// Synthetic eye images for tests: a skin-toned background with noise, an
// elliptical sclera region with a dark iris disc. The mask marks the whole
// eye ellipse.

#include <filesystem>
#include <random>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace synthetic {

struct EyePair {
    cv::Mat image;  // 8-bit BGR
    cv::Mat mask;   // 8-bit, 0 or 255
};

inline EyePair make_eye(int width, int height, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    EyePair p;
    p.image = cv::Mat(height, width, CV_8UC3, cv::Scalar(90 + 40 * u(rng), 120 + 40 * u(rng), 170 + 50 * u(rng)));
    cv::Mat noise(height, width, CV_8UC3);
    cv::randu(noise, cv::Scalar::all(0), cv::Scalar::all(30));
    p.image += noise;
    const cv::Point center(static_cast<int>(width * (0.4 + 0.2 * u(rng))), static_cast<int>(height * (0.4 + 0.2 * u(rng))));
    const cv::Size axes(static_cast<int>(width * (0.22 + 0.12 * u(rng))), static_cast<int>(height * (0.12 + 0.08 * u(rng))));
    const double angle = -15.0 + 30.0 * u(rng);
    p.mask = cv::Mat::zeros(height, width, CV_8U);
    cv::ellipse(p.mask, center, axes, angle, 0, 360, cv::Scalar(255), cv::FILLED);
    cv::ellipse(p.image, center, axes, angle, 0, 360, cv::Scalar(225, 230, 235), cv::FILLED);
    const int r = std::max(2, std::min(axes.width, axes.height) * 7 / 10);
    cv::circle(p.image, center, r, cv::Scalar(40 + 40 * u(rng), 60 + 30 * u(rng), 90), cv::FILLED);
    cv::circle(p.image, center, std::max(1, r / 3), cv::Scalar(10, 10, 10), cv::FILLED);
    return p;
}

/// Writes root/images/<stem>.<ext> and root/masks/<stem>.png for n samples.
inline void write_dataset(const std::filesystem::path& root, int n, int width, int height, uint64_t seed,
                          const std::string& ext = "png") {
    std::filesystem::create_directories(root / "images");
    std::filesystem::create_directories(root / "masks");
    for (int i = 0; i < n; ++i) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "eye_%04d", i);
        EyePair p = make_eye(width, height, seed * 1000003ull + static_cast<uint64_t>(i));
        cv::imwrite((root / "images" / (std::string(stem) + "." + ext)).string(), p.image);
        cv::imwrite((root / "masks" / (std::string(stem) + ".png")).string(), p.mask);
    }
}

}  // namespace synthetic
