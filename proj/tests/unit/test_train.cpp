#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <unistd.h>

#include "../support/synthetic.hpp"
#include "nusg/checkpoint.hpp"
#include "nusg/eval.hpp"
#include "nusg/train.hpp"

using namespace nusg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name)
        : path(fs::temp_directory_path() / ("nusg_train_" + std::to_string(::getpid()) + "_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

nn::StateList<double> scalar_param(double theta, double grad) {
    Tensor64 p({1}, theta, true);
    p.impl()->ensure_grad();
    p.grad()[0] = grad;
    return {{"theta", p, true}};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<data::Sample> toy_samples(int n, int size, uint64_t seed) {
    std::vector<data::Sample> out;
    for (int i = 0; i < n; ++i) {
        auto eye = synthetic::make_eye(size, size, seed + i);
        data::Sample s{Tensor32(Shape{3, size, size}), Tensor32(Shape{1, size, size})};
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const auto px = eye.image.at<cv::Vec3b>(y, x);
                for (int c = 0; c < 3; ++c)
                    s.image.data()[(c * size + y) * size + x] = (px[2 - c] / 255.0f - data::kMean[c]) / data::kStd[c];
                s.mask.data()[y * size + x] = eye.mask.at<uint8_t>(y, x) ? 1.0f : 0.0f;
            }
        out.push_back(std::move(s));
    }
    return out;
}

TrainConfig tiny_config(const fs::path& dir) {
    TrainConfig c;
    c.arch = "res-u2net-lite";
    c.input_size = 64;
    c.batch_size = 2;
    c.steps = 3;
    c.seed = 11;
    c.checkpoint = dir / "ck.nusg";
    c.log = dir / "log.csv";
    c.checkpoint_every = 2;
    return c;
}

}  // namespace

TEST_CASE("adamw with zero gradient is pure decoupled decay") {
    auto p = scalar_param(1.0, 0.0);
    AdamW<double> opt(p);
    opt.step(0.001);
    CHECK(p[0].tensor.data()[0] == doctest::Approx(0.99999).epsilon(1e-15));
}

TEST_CASE("adamw first step from zero with unit gradient") {
    auto p = scalar_param(0.0, 1.0);
    AdamW<double> opt(p);
    opt.step(0.001);
    CHECK(std::abs(p[0].tensor.data()[0] - (-0.001 / (1.0 + 1e-8))) <= 1e-15);
    CHECK(opt.steps() == 1);
}

TEST_CASE("adamw matches an independent scalar trace over two steps") {
    const double lr = 0.003, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
    const double grads[2] = {0.7, -1.3};
    double theta = 0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        const double g = grads[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        theta = theta - lr * mh / (std::sqrt(vh) + eps) - lr * wd * theta;
    }
    auto p = scalar_param(0.5, grads[0]);
    AdamW<double> opt(p);
    opt.step(lr);
    p[0].tensor.grad()[0] = grads[1];
    opt.step(lr);
    CHECK(std::abs(p[0].tensor.data()[0] - theta) <= 1e-12);
    CHECK(opt.second_moment()[0][0] >= 0.0);
}

TEST_CASE("adamw without decay or momentum is sign-scaled sgd") {
    Tensor64 p({4}, std::vector<double>{0.1, -0.2, 0.3, 0.0}, true);
    p.impl()->ensure_grad();
    const std::vector<double> g{0.5, -2.0, 1e-3, 0.0};
    std::copy(g.begin(), g.end(), p.grad().begin());
    AdamW<double> opt({{"p", p, true}}, {.beta1 = 0.0, .beta2 = 0.0, .eps = 1e-8, .weight_decay = 0.0});
    const std::vector<double> before(p.data().begin(), p.data().end());
    opt.step(0.01);
    for (size_t i = 0; i < 4; ++i)
        CHECK(p.data()[i] == doctest::Approx(before[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adamw rejects a NaN gradient, names the parameter and changes nothing") {
    auto a = scalar_param(1.0, 0.5);
    auto b = scalar_param(2.0, std::nan(""));
    b[0].name = "de1/rsu/in/conv/weight";
    nn::StateList<double> both{a[0], b[0]};
    AdamW<double> opt(both);
    try {
        opt.step(0.1);
        FAIL("expected rejection");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("de1/rsu/in/conv/weight") != std::string::npos);
    }
    CHECK(a[0].tensor.data()[0] == 1.0);
    CHECK(opt.steps() == 0);
}

TEST_CASE("schedule closed form") {
    const Schedule s{.base_lr = 1e-3, .warmup_steps = 10, .total_steps = 110};
    CHECK(lr_at(0, s) == 0.0);
    CHECK(std::abs(lr_at(10, s) - 1e-3) <= 1e-12);
    CHECK(std::abs(lr_at(60, s) - 5e-4) <= 1e-12);
    CHECK(std::abs(lr_at(110, s)) <= 1e-12);
    CHECK(lr_at(500, s) == 0.0);
    CHECK(std::abs(lr_at(5, s) - 5e-4) <= 1e-12);
    // Both branches meet at W.
    const double warm_limit = s.base_lr * 10.0 / 10.0;
    const double cos_limit = s.base_lr * 0.5 * (1.0 + std::cos(0.0));
    CHECK(std::abs(warm_limit - cos_limit) <= 1e-12);
    for (int64_t k = 1; k <= 10; ++k) CHECK(lr_at(k, s) >= lr_at(k - 1, s));
    for (int64_t k = 11; k <= 110; ++k) CHECK(lr_at(k, s) <= lr_at(k - 1, s));
}

TEST_CASE("schedule validation") {
    CHECK_THROWS_AS(lr_at(0, Schedule{.base_lr = 1e-3, .warmup_steps = 5, .total_steps = 5}), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(-1, Schedule{.base_lr = 1e-3, .warmup_steps = 0, .total_steps = 5}), std::invalid_argument);
    CHECK(lr_at(0, Schedule{.base_lr = 1e-3, .warmup_steps = 0, .total_steps = 5}) == 1e-3);
}

TEST_CASE("batch plans cover each epoch exactly once and are seeded") {
    std::multiset<size_t> seen;
    for (int64_t s = 0; s < 7; ++s) {
        auto plan = plan_batch(7, 3, s, 5);
        for (size_t i = 0; i < plan.indices.size(); ++i)
            if (plan.epochs[i] == 1) seen.insert(plan.indices[i]);
    }
    CHECK(seen.size() == 7);
    CHECK(std::set<size_t>(seen.begin(), seen.end()).size() == 7);
    CHECK(plan_batch(7, 3, 4, 5).indices == plan_batch(7, 3, 4, 5).indices);
}

TEST_CASE("train loop logs every step, checkpoints, and is bitwise repeatable") {
    TempDir d("loop");
    auto samples = toy_samples(3, 64, 1);
    auto source = [&](size_t i) { return samples.at(i); };
    TrainConfig c = tiny_config(d.path);
    auto m1 = Model<float>::build(Arch::kResU2NetLite, c.seed);
    auto log1 = train_loop(m1, samples.size(), source, c);
    REQUIRE(log1.size() == 3);
    for (size_t i = 0; i < 3; ++i) CHECK(log1[i].step == static_cast<int64_t>(i + 1));
    const std::string ck1 = slurp(c.checkpoint);
    std::ifstream f(c.log);
    std::string header;
    std::getline(f, header);
    CHECK(header == "step,loss,lr,wall_ms");
    int rows = 0;
    for (std::string line; std::getline(f, line);) ++rows;
    CHECK(rows == 3);

    auto m2 = Model<float>::build(Arch::kResU2NetLite, c.seed);
    auto log2 = train_loop(m2, samples.size(), source, c);
    for (size_t i = 0; i < 3; ++i) CHECK(log1[i].loss == log2[i].loss);
    CHECK(slurp(c.checkpoint) == ck1);
}

TEST_CASE("a NaN loss aborts and keeps the last good checkpoint") {
    TempDir d("nan");
    auto samples = toy_samples(2, 64, 2);
    TrainConfig c = tiny_config(d.path);
    auto model = Model<float>::build(Arch::kU2NetLite, 1);
    save_checkpoint(c.checkpoint, model.state());
    const std::string before = slurp(c.checkpoint);
    samples[1].image.data()[5] = std::nanf("");
    c.augment = data::AugmentPolicy::none();
    CHECK_THROWS_AS(train_loop(model, samples.size(), [&](size_t i) { return samples.at(i); }, c), std::runtime_error);
    CHECK(slurp(c.checkpoint) == before);
}

TEST_CASE("train from a dataset directory with train_fraction 1 uses every record") {
    TempDir d("dir");
    synthetic::write_dataset(d.path / "data", 3, 80, 60, 3);
    TrainConfig c = tiny_config(d.path);
    c.data_root = d.path / "data";
    c.train_fraction = 1.0;
    c.steps = 1;
    auto r = train(c);
    CHECK(r.train_records.size() == 3);
    CHECK(r.test_records.empty());
    CHECK(load_model(c.checkpoint).arch() == Arch::kResU2NetLite);
    c.train_fraction = 0.67;
    r = train(c);
    CHECK(r.train_records.size() == 2);
    CHECK(r.test_records.size() == 1);
}

TEST_CASE("config validation rejects bad values") {
    TrainConfig c;
    c.arch = "foo";
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.input_size = 100;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.warmup_steps = c.steps;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("bypass evaluation of masks against themselves is perfect") {
    TempDir d("bypass");
    synthetic::write_dataset(d.path, 3, 40, 30, 4);
    auto recs = data::scan_dataset(d.path).records;
    auto r = evaluate_predictions(d.path / "masks", recs, 0.5, "self");
    CHECK(r.recall == 100.0);
    CHECK(r.precision == 100.0);
    CHECK(r.miou == 100.0);
    CHECK(r.f1 == 100.0);
    CHECK(r.mae == 0.0);
}

TEST_CASE("bypass evaluation reproduces the 2x2 hand case") {
    TempDir d("hand");
    fs::create_directories(d.path / "images");
    fs::create_directories(d.path / "masks");
    fs::create_directories(d.path / "pred");
    cv::imwrite((d.path / "images" / "h.png").string(), cv::Mat(2, 2, CV_8UC3, cv::Scalar::all(0)));
    cv::Mat gt = (cv::Mat_<uint8_t>(2, 2) << 255, 255, 0, 0);
    cv::Mat pred = (cv::Mat_<uint8_t>(2, 2) << 230, 102, 153, 26);  // 0.9, 0.4, 0.6, 0.1
    cv::imwrite((d.path / "masks" / "h.png").string(), gt);
    cv::imwrite((d.path / "pred" / "h.png").string(), pred);
    auto r = evaluate_predictions(d.path / "pred", data::scan_dataset(d.path).records, 0.5, "hand");
    CHECK(r.confusion.tp == 1);
    CHECK(r.confusion.fn == 1);
    CHECK(r.confusion.fp == 1);
    CHECK(r.confusion.tn == 1);
    CHECK(r.mae == doctest::Approx((25.0 + 153.0 + 153.0 + 26.0) / 255.0 / 4.0));
}

TEST_CASE("model evaluation and inference contracts") {
    TempDir d("infer");
    synthetic::write_dataset(d.path, 2, 90, 70, 5);
    auto recs = data::scan_dataset(d.path).records;
    auto model = Model<float>::build(Arch::kU2NetLite, 2);
    auto report = evaluate(model, recs, {.input_size = 64, .threshold = 0.5}, "u2net-lite");
    CHECK(report.images == 2);
    CHECK(report.confusion.total() == 2 * 64 * 64);

    Tensor32 prob = predict_image(model, recs[0].image_path, 64);
    CHECK(prob.shape() == Shape{1, 70, 90});
    write_probability_png(prob, d.path / "soft.png");
    write_probability_png(prob, d.path / "soft2.png");
    CHECK(slurp(d.path / "soft.png") == slurp(d.path / "soft2.png"));
    write_probability_png(prob, d.path / "hard.png", 0.5);
    cv::Mat hard = cv::imread((d.path / "hard.png").string(), cv::IMREAD_UNCHANGED);
    CHECK(hard.cols == 90);
    CHECK(hard.rows == 70);
    for (int y = 0; y < hard.rows; ++y)
        for (int x = 0; x < hard.cols; ++x) CHECK((hard.at<uint8_t>(y, x) == 0 || hard.at<uint8_t>(y, x) == 255));
}

TEST_CASE("benchmark reports the median and rejects too few runs") {
    CHECK(median({5.0, 1.0, 3.0}) == 3.0);
    CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
    auto lite = Model<float>::build(Arch::kU2NetLite, 1);
    CHECK_THROWS_AS(bench_inference(lite, {1, 3, 64, 64}, 0, 1), std::invalid_argument);
    auto r = bench_inference(lite, {1, 3, 64, 64}, 1, 5);
    CHECK(r.runs_s.size() == 5);
    CHECK(r.median_s == median(r.runs_s));
    CHECK(r.hardware.find("BLAS threads") != std::string::npos);
}

TEST_CASE("lite inference is faster than the full model") {
    auto lite = Model<float>::build(Arch::kU2NetLite, 1);
    auto full = Model<float>::build(Arch::kU2Net, 1);
    const double tl = bench_inference(lite, {1, 3, 64, 64}, 1, 5).median_s;
    const double tf = bench_inference(full, {1, 3, 64, 64}, 1, 5).median_s;
    CHECK(tl < tf);
}
