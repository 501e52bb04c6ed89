#include <doctest.h>

#include <json.hpp>
#include <random>
#include <set>

#include "nusg/metrics.hpp"

using namespace nusg;

namespace {

Tensor64 grid(const Shape& s, std::vector<double> v) { return Tensor64(s, std::move(v)); }

Tensor64 random_binary(std::mt19937_64& rng, double frac) {
    std::bernoulli_distribution b(frac);
    Tensor64 t({1, 1, 16, 16});
    for (double& v : t.data()) v = b(rng) ? 1.0 : 0.0;
    return t;
}

Tensor64 hflip(const Tensor64& t) {
    Tensor64 out(t.shape());
    const int64_t h = t.dim(2), w = t.dim(3);
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) out.at({0, 0, i, j}) = t.at({0, 0, i, w - 1 - j});
    return out;
}

// Pixel sets per class, then ratios by set algebra.
struct Oracle {
    double recall, precision, f1, miou, mae;
};

Oracle brute_force(const Tensor64& pred, const Tensor64& gt) {
    std::set<int> pf, pb, gf, gb;
    double abs_sum = 0.0;
    int idx = 0;
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j, ++idx) {
            const double p = pred.at({0, 0, i, j}), g = gt.at({0, 0, i, j});
            (p >= 0.5 ? pf : pb).insert(idx);
            (g >= 0.5 ? gf : gb).insert(idx);
            abs_sum += std::abs(p - g);
        }
    auto inter = [](const std::set<int>& a, const std::set<int>& b) {
        int n = 0;
        for (int x : a) n += static_cast<int>(b.count(x));
        return n;
    };
    auto uni = [&](const std::set<int>& a, const std::set<int>& b) {
        return static_cast<int>(a.size() + b.size()) - inter(a, b);
    };
    Oracle o{};
    const int tp = inter(pf, gf);
    const double r = gf.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(gf.size());
    const double p = pf.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(pf.size());
    o.recall = 100.0 * r;
    o.precision = 100.0 * p;
    o.f1 = (p + r) == 0.0 ? 0.0 : 100.0 * 2.0 * p * r / (p + r);
    const double iou_f = uni(pf, gf) == 0 ? 1.0 : static_cast<double>(tp) / uni(pf, gf);
    const double iou_b = uni(pb, gb) == 0 ? 1.0 : static_cast<double>(inter(pb, gb)) / uni(pb, gb);
    o.miou = 100.0 * (iou_f + iou_b) / 2.0;
    o.mae = abs_sum / 256.0;
    return o;
}

}  // namespace

TEST_CASE("confusion counts: identical, inverted and hand-counted 2x2") {
    std::mt19937_64 rng(1);
    Tensor64 g = random_binary(rng, 0.4);
    auto same = confusion(g, g);
    CHECK(same.fp == 0);
    CHECK(same.fn == 0);
    Tensor64 inv(g.shape());
    for (int64_t i = 0; i < g.numel(); ++i) inv.data()[i] = 1.0 - g.data()[i];
    auto flipped = confusion(inv, g);
    CHECK(flipped.tp == 0);
    CHECK(flipped.tn == 0);
    auto cm = confusion(grid({1, 1, 2, 2}, {0.9, 0.4, 0.6, 0.1}), grid({1, 1, 2, 2}, {1, 1, 0, 0}));
    CHECK(cm.tp == 1);
    CHECK(cm.fn == 1);
    CHECK(cm.fp == 1);
    CHECK(cm.tn == 1);
    CHECK(cm.total() == 4);
}

TEST_CASE("threshold is inclusive") {
    auto cm = confusion(grid({2}, {0.5, 0.4999}), grid({2}, {1, 1}));
    CHECK(cm.tp == 1);
    CHECK(cm.fn == 1);
}

TEST_CASE("ratio metrics from confusion counts") {
    auto perfect = metrics_from_confusion({.tp = 50, .fp = 0, .tn = 10, .fn = 0});
    CHECK(perfect.recall == 100.0);
    CHECK(perfect.precision == 100.0);
    CHECK(perfect.f1 == 100.0);
    auto m = metrics_from_confusion({.tp = 8, .fp = 2, .tn = 0, .fn = 4});
    CHECK(m.recall == doctest::Approx(200.0 / 3.0));
    CHECK(m.precision == doctest::Approx(80.0));
    CHECK(m.f1 == doctest::Approx(100.0 * 2 * 0.8 * (2.0 / 3.0) / (0.8 + 2.0 / 3.0)));
    CHECK(m.f1 == doctest::Approx(72.727).epsilon(1e-4));
    auto eq = metrics_from_confusion({.tp = 6, .fp = 3, .tn = 5, .fn = 3});
    CHECK(eq.f1 == doctest::Approx(eq.precision));
    auto empty = metrics_from_confusion({.tp = 0, .fp = 0, .tn = 9, .fn = 0});
    CHECK(empty.recall == 0.0);
    CHECK(empty.precision == 0.0);
    CHECK(empty.f1 == 0.0);
}

TEST_CASE("miou examples") {
    std::mt19937_64 rng(2);
    Tensor64 g = random_binary(rng, 0.5);
    CHECK(miou(g, g) == 100.0);
    Tensor64 half({1, 1, 2, 2}, std::vector<double>{1, 1, 0, 0}), inv({1, 1, 2, 2}, std::vector<double>{0, 0, 1, 1});
    CHECK(miou(inv, half) == 0.0);
    // 4x4, 8 foreground; prediction hits 6 of them plus 1 false foreground.
    Tensor64 gt({1, 1, 4, 4}), pr({1, 1, 4, 4});
    for (int i = 0; i < 8; ++i) gt.data()[i] = 1.0;
    for (int i = 0; i < 6; ++i) pr.data()[i] = 1.0;
    pr.data()[10] = 1.0;
    // Expected IoUs come from explicit pixel sets.
    std::set<int> pf{0, 1, 2, 3, 4, 5, 10}, gf{0, 1, 2, 3, 4, 5, 6, 7}, pb, gb;
    for (int i = 0; i < 16; ++i) {
        if (!pf.count(i)) pb.insert(i);
        if (!gf.count(i)) gb.insert(i);
    }
    auto iou = [](const std::set<int>& a, const std::set<int>& b) {
        std::set<int> u(a);
        u.insert(b.begin(), b.end());
        int n = 0;
        for (int x : a) n += static_cast<int>(b.count(x));
        return static_cast<double>(n) / static_cast<double>(u.size());
    };
    CHECK(iou(pf, gf) == doctest::Approx(6.0 / 9.0));
    CHECK(miou(pr, gt) == doctest::Approx(100.0 * (iou(pf, gf) + iou(pb, gb)) / 2.0));
}

TEST_CASE("empty class counts as IoU 1") {
    Tensor64 zeros({1, 1, 3, 3});
    CHECK(miou(zeros, zeros) == 100.0);
    CHECK(miou_from_confusion({.tp = 0, .fp = 1, .tn = 8, .fn = 0}) == doctest::Approx(100.0 * (0.0 + 8.0 / 9.0) / 2));
}

TEST_CASE("mae examples") {
    std::mt19937_64 rng(3);
    Tensor64 g = random_binary(rng, 0.5);
    CHECK(mae(g, g) == 0.0);
    Tensor64 inv(g.shape());
    for (int64_t i = 0; i < g.numel(); ++i) inv.data()[i] = 1.0 - g.data()[i];
    CHECK(mae(inv, g) == 1.0);
    Tensor64 off(g.shape());
    for (int64_t i = 0; i < g.numel(); ++i) off.data()[i] = g.data()[i] == 1.0 ? 0.9 : 0.1;
    CHECK(mae(off, g) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("mae averages per image before the batch") {
    Tensor64 p({2, 1, 1, 2}, std::vector<double>{1, 1, 0, 0.5}), g({2, 1, 1, 2});
    CHECK(mae(p, g) == doctest::Approx((1.0 + 0.25) / 2.0));
}

TEST_CASE("metrics agree with a brute-force pixel-set oracle") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> frac(0.0, 1.0), u(0.0, 1.0);
    for (int trial = 0; trial < 2000; ++trial) {
        Tensor64 g = random_binary(rng, frac(rng));
        Tensor64 p({1, 1, 16, 16});
        for (double& v : p.data()) v = u(rng);
        const Oracle o = brute_force(p, g);
        const auto cm = confusion(p, g);
        const auto m = metrics_from_confusion(cm);
        CHECK(std::abs(m.recall - o.recall) <= 1e-12);
        CHECK(std::abs(m.precision - o.precision) <= 1e-12);
        CHECK(std::abs(m.f1 - o.f1) <= 1e-12);
        CHECK(std::abs(miou_from_confusion(cm) - o.miou) <= 1e-12);
        CHECK(std::abs(mae(p, g) - o.mae) <= 1e-12);
    }
}

TEST_CASE("metrics are invariant under a joint horizontal flip") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor64 g = random_binary(rng, 0.3), p = random_binary(rng, 0.5);
        const auto a = confusion(p, g), b = confusion(hflip(p), hflip(g));
        CHECK(miou_from_confusion(a) == miou_from_confusion(b));
        CHECK(metrics_from_confusion(a).f1 == metrics_from_confusion(b).f1);
    }
}

TEST_CASE("report CSV header and JSON mirror") {
    CHECK(report_csv_header() == "model,recall,precision,miou,mae,f1,params_mb,flops_g,inference_s");
    auto r = make_report("res-u2net-lite", {.tp = 8, .fp = 2, .tn = 6, .fn = 4}, 0.125, 2);
    r.params_mb = 4.5;
    const std::string row = report_csv_row(r);
    CHECK(row.starts_with("res-u2net-lite,66.66666667,80,"));
    CHECK(row.ends_with(",4.5,,"));
    auto j = nlohmann::json::parse(report_json({r}, "macs"));
    CHECK(j["rows"][0]["miou"].get<double>() == doctest::Approx(r.miou));
    CHECK(j["rows"][0]["flops_g"].is_null());
    CHECK(j["conventions"]["flops"] == "macs");
    r.model = "a,b";
    CHECK_THROWS_AS(report_csv_row(r), std::invalid_argument);
}
