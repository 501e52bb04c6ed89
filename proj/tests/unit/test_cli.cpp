#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include "../support/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / ("nusg_cli_" + std::to_string(::getpid()));

struct Run {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Run nusg(const std::string& args) {
    fs::create_directories(kWork);
    const fs::path out = kWork / "stdout.txt", err = kWork / "stderr.txt";
    const std::string cmd = std::string(NUSG_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

fs::path write_file(const std::string& name, const std::string& text) {
    fs::create_directories(kWork);
    std::ofstream(kWork / name) << text;
    return kWork / name;
}

double value_of(const std::string& out, const std::string& key) {
    const auto pos = out.find(key + "=");
    REQUIRE(pos != std::string::npos);
    return std::stod(out.substr(pos + key.size() + 1));
}

// Trains a 2-step lite model once and reuses it.
const fs::path& trained_checkpoint() {
    static const fs::path ck = [] {
        synthetic::write_dataset(kWork / "toy", 3, 96, 72, 21);
        const auto cfg = write_file("train.cfg",
                                    "# toy run\n"
                                    "arch = res-u2net-lite\n"
                                    "data_root = toy\n"
                                    "input_size = 64\n"
                                    "train_fraction = 1.0\n"
                                    "batch_size = 2\n"
                                    "steps = 2\n"
                                    "checkpoint = toy.nusg\n"
                                    "log = toy_log.csv\n");
        Run r = nusg("train --quiet --config " + cfg.string());
        REQUIRE(r.code == 0);
        return kWork / "toy.nusg";
    }();
    return ck;
}

struct Cleanup {
    ~Cleanup() { fs::remove_all(kWork); }
} cleanup;

}  // namespace

TEST_CASE("train writes a checkpoint and a per-step log") {
    const fs::path& ck = trained_checkpoint();
    CHECK(fs::exists(ck));
    std::istringstream log(slurp(kWork / "toy_log.csv"));
    std::string line;
    std::getline(log, line);
    CHECK(line == "step,loss,lr,wall_ms");
    int rows = 0;
    while (std::getline(log, line)) ++rows;
    CHECK(rows == 2);
}

TEST_CASE("train config errors exit 2 and name the key") {
    auto bad_arch = write_file("bad_arch.cfg", "arch = foo\ndata_root = toy\n");
    Run r = nusg("train --config " + bad_arch.string());
    CHECK(r.code == 2);
    CHECK(r.err.find("arch") != std::string::npos);
    auto unknown = write_file("unknown.cfg", "data_root = toy\nlearning_rate = 0.1\n");
    r = nusg("train --config " + unknown.string());
    CHECK(r.code == 2);
    CHECK(r.err.find("learning_rate") != std::string::npos);
    CHECK(nusg("train --config " + (kWork / "missing.cfg").string()).code == 2);
    CHECK(nusg("train").code == 2);
}

TEST_CASE("eval writes the canonical header and scores masks perfectly in bypass mode") {
    synthetic::write_dataset(kWork / "evalset", 2, 40, 30, 22);
    const auto csv = kWork / "self.csv";
    Run r = nusg("eval --data " + (kWork / "evalset").string() + " --pred-dir " + (kWork / "evalset" / "masks").string() +
                 " --out " + csv.string());
    REQUIRE(r.code == 0);
    std::istringstream in(slurp(csv));
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "model,recall,precision,miou,mae,f1,params_mb,flops_g,inference_s");
    CHECK(row.starts_with("predictions,100,100,100,0,100,"));
    CHECK(fs::exists(kWork / "self.json"));
}

TEST_CASE("eval bypass mode reproduces the 2x2 hand case") {
    const fs::path root = kWork / "hand";
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    fs::create_directories(root / "pred");
    cv::imwrite((root / "images" / "h.png").string(), cv::Mat(2, 2, CV_8UC3, cv::Scalar::all(0)));
    cv::Mat gt = (cv::Mat_<uint8_t>(2, 2) << 255, 255, 0, 0);
    cv::Mat pred = (cv::Mat_<uint8_t>(2, 2) << 230, 102, 153, 26);
    cv::imwrite((root / "masks" / "h.png").string(), gt);
    cv::imwrite((root / "pred" / "h.png").string(), pred);
    Run r = nusg("eval --data " + root.string() + " --pred-dir " + (root / "pred").string() + " --out " +
                 (kWork / "hand.csv").string());
    REQUIRE(r.code == 0);
    // tp = fp = fn = tn = 1: recall = precision = f1 = 50, fg IoU 1/3, bg IoU 1/3.
    CHECK(r.out.find("predictions,50,50,33.33333333,") != std::string::npos);
}

TEST_CASE("eval with a checkpoint of the wrong architecture exits 1") {
    Run r = nusg("eval --checkpoint " + trained_checkpoint().string() + " --arch u2net-lite --data " +
                 (kWork / "toy").string() + " --out " + (kWork / "wrong.csv").string());
    CHECK(r.code == 1);
    r = nusg("eval --checkpoint " + trained_checkpoint().string() + " --size 64 --data " + (kWork / "toy").string() +
             " --out " + (kWork / "ok.csv").string());
    CHECK(r.code == 0);
    CHECK(r.out.find("res-u2net-lite,") != std::string::npos);
}

TEST_CASE("infer keeps the source size, thresholds to 0/255, and is repeatable") {
    const fs::path img = kWork / "toy" / "images" / "eye_0000.png";
    const fs::path a = kWork / "a.png", b = kWork / "b.png", t = kWork / "t.png";
    const std::string base = "infer --size 64 --checkpoint " + trained_checkpoint().string() + " --image " + img.string();
    REQUIRE(nusg(base + " --out " + a.string()).code == 0);
    REQUIRE(nusg(base + " --out " + b.string()).code == 0);
    CHECK(slurp(a) == slurp(b));
    cv::Mat soft = cv::imread(a.string(), cv::IMREAD_UNCHANGED);
    CHECK(soft.cols == 96);
    CHECK(soft.rows == 72);
    REQUIRE(nusg(base + " --threshold 0.5 --out " + t.string()).code == 0);
    cv::Mat hard = cv::imread(t.string(), cv::IMREAD_UNCHANGED);
    std::set<int> values;
    for (int y = 0; y < hard.rows; ++y)
        for (int x = 0; x < hard.cols; ++x) values.insert(hard.at<uint8_t>(y, x));
    for (int v : values) CHECK((v == 0 || v == 255));
    write_file("junk.png", "not an image");
    CHECK(nusg("infer --checkpoint " + trained_checkpoint().string() + " --image " + (kWork / "junk.png").string() +
               " --out " + (kWork / "j.png").string())
              .code == 1);
}

TEST_CASE("summary reports the parameter budgets") {
    Run r = nusg("summary --arch u2net");
    REQUIRE(r.code == 0);
    CHECK(std::abs(value_of(r.out, "params_mb") - 167.83) <= 0.01 * 167.83);
    r = nusg("summary --arch res-u2net-lite");
    REQUIRE(r.code == 0);
    CHECK(std::abs(value_of(r.out, "params_mb") - 4.63) <= 0.10 * 4.63);
    CHECK(nusg("summary --arch foo").code == 2);
}

TEST_CASE("gradcheck passes, lists each op once, and fails on the broken fixture") {
    Run r = nusg("gradcheck");
    CHECK(r.code == 0);
    std::istringstream in(r.out);
    std::multiset<std::string> names;
    for (std::string line; std::getline(in, line);)
        if (line.find("max_rel_error=") != std::string::npos) names.insert(line.substr(0, line.find(' ')));
    for (const char* op : {"conv2d", "maxpool2d", "upsample_bilinear", "concat_channels", "relu", "sigmoid", "add",
                           "mul", "scale", "gate", "sum", "mean", "batchnorm2d", "conv_bn_relu", "rsu4", "rsu4f",
                           "res_connect", "bce", "focal_term", "deep_supervision_loss"}) {
        CHECK_MESSAGE(names.count(op) == 1, op);
    }
    Run broken = nusg("gradcheck --include-broken-fixture");
    CHECK(broken.code == 1);
    CHECK(broken.out.find("broken_fixture") != std::string::npos);
}

TEST_CASE("bench validates the run count and reports hardware") {
    CHECK(nusg("bench --arch u2net-lite --runs 1").code == 2);
    Run r = nusg("bench --arch u2net-lite --runs 5 --warmup 1 --size 64");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("hardware=") != std::string::npos);
    CHECK(value_of(r.out, "median_s_per_image") > 0.0);
    CHECK(nusg("bench --checkpoint " + trained_checkpoint().string() + " --runs 5 --size 64").code == 0);
}

TEST_CASE("malformed NUSG_THREADS is a usage error") {
    CHECK(nusg("summary --arch u2net-lite").code == 0);
    const std::string tail = std::string(NUSG_CLI_PATH) + " summary --arch u2net-lite >/dev/null 2>&1";
    const int bad = std::system(("NUSG_THREADS=abc " + tail).c_str());
    const int good = std::system(("NUSG_THREADS=1 " + tail).c_str());
    CHECK(WEXITSTATUS(bad) == 2);
    CHECK(WEXITSTATUS(good) == 0);
}
