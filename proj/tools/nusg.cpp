#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nusg/checkpoint.hpp"
#include "nusg/config.hpp"
#include "nusg/eval.hpp"
#include "nusg/gradcheck.hpp"
#include "nusg/ops.hpp"
#include "nusg/runtime.hpp"
#include "nusg/train.hpp"

namespace fs = std::filesystem;
using namespace nusg;

namespace {

// Exit code 2: bad flags, bad config, bad values supplied by the user.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Arch arch_arg(const std::string& id) {
    try {
        return parse_arch(id);
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--arch: ") + e.what());
    }
}

// Negative control for the gradient suite: doubles the forward but reports a
// backward of 3x, so finite differences must disagree.
Tensor64 broken_double(const Tensor64& x) {
    std::vector<double> out(x.values());
    for (double& v : out) v *= 2.0;
    return make_result<double>("broken_double", x.shape(), std::move(out), {x}, [](TensorImpl<double>& node) {
        auto& in = *node.inputs[0];
        if (!in.requires_grad) return;
        in.ensure_grad();
        for (size_t i = 0; i < in.grad.size(); ++i) in.grad[i] += 3.0 * node.grad[i];
    });
}

GradCheckCase broken_fixture() {
    return {"broken_fixture", [] {
                std::mt19937_64 rng(999);
                std::vector<Tensor64> in{random_tensor({2, 3}, rng)};
                RandomProjection probe({2, 3}, 999);
                return grad_check([&] { return probe(broken_double(in[0])); }, in);
            }};
}

int cmd_train(const fs::path& config_path, bool quiet) {
    if (!fs::exists(config_path)) throw UsageError("config file not found: " + config_path.string());
    TrainConfig config;
    try {
        config = load_train_config(config_path);
    } catch (const ConfigError& e) {
        throw UsageError(e.key().empty() ? e.what() : "config key '" + e.key() + "': " + e.what());
    }
    auto progress = [&](const TrainRecord& r, const Model<float>&) {
        if (!quiet && (r.step == 1 || r.step % 10 == 0 || r.step == config.steps)) {
            std::cerr << "step " << r.step << "/" << config.steps << " loss " << r.loss << " lr " << r.lr << "\n";
        }
    };
    TrainResult result = train(config, progress);
    if (!result.unmatched.empty()) {
        fs::path manifest = config.log;
        manifest.replace_extension(".unmatched.txt");
        data::write_manifest(manifest, result.unmatched);
        std::cerr << "warning: " << result.unmatched.size() << " unmatched files listed in " << manifest << "\n";
    }
    std::cout << "steps=" << result.log.size() << "\n"
              << "final_loss=" << result.log.back().loss << "\n"
              << "train_records=" << result.train_records.size() << "\n"
              << "test_records=" << result.test_records.size() << "\n"
              << "checkpoint=" << result.checkpoint.string() << "\n"
              << "log=" << config.log.string() << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint, data, out, pred_dir, arch, subset = "all";
    int size = 320;
    double threshold = 0.5, train_fraction = 0.8;
    uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
    if (a.checkpoint.empty() == a.pred_dir.empty()) throw UsageError("eval needs exactly one of --checkpoint or --pred-dir");
    if (a.subset != "all" && a.subset != "test") throw UsageError("--subset must be all or test");
    std::optional<Arch> arch;
    if (!a.arch.empty()) arch = arch_arg(a.arch);
    auto records = data::scan_dataset(a.data).records;
    if (a.subset == "test") records = data::split(records, a.train_fraction, a.seed).second;

    MetricsReport report;
    std::string convention;
    if (!a.pred_dir.empty()) {
        report = evaluate_predictions(a.pred_dir, records, a.threshold, "predictions");
    } else {
        Model<float> model = load_model(a.checkpoint, arch);
        report = evaluate(model, records, {.input_size = a.size, .threshold = a.threshold}, arch_id(model.arch()));
        report.params_mb = count_params(model).megabytes;
        const FlopReport flops = count_flops(model, {1, 3, a.size, a.size});
        report.flops_g = flops.gmacs();
        convention = "flops_g column holds multiply-accumulates (x1e9) at the evaluation size; " + flops.convention();
    }
    fs::path json = a.out;
    json.replace_extension(".json");
    write_report(a.out, json, {report}, convention);
    std::cout << report_csv_header() << "\n" << report_csv_row(report) << "\n";
    return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& image, const std::string& out,
              std::optional<double> threshold, int size, const std::string& arch_id_arg) {
    if (threshold && !(*threshold >= 0.0 && *threshold <= 1.0)) throw UsageError("--threshold must be in [0, 1]");
    std::optional<Arch> arch;
    if (!arch_id_arg.empty()) arch = arch_arg(arch_id_arg);
    Model<float> model = load_model(checkpoint, arch);
    Tensor32 prob = predict_image(model, image, size);
    write_probability_png(prob, out, threshold);
    std::cout << "wrote " << out << " (" << prob.dim(2) << "x" << prob.dim(1) << ")\n";
    return 0;
}

int cmd_bench(const std::string& checkpoint, const std::string& arch_id_arg, int runs, int warmup, int size) {
    if (runs < 5) throw UsageError("--runs must be at least 5, got " + std::to_string(runs));
    if (checkpoint.empty() && arch_id_arg.empty()) throw UsageError("bench needs --checkpoint or --arch");
    std::optional<Arch> arch;
    if (!arch_id_arg.empty()) arch = arch_arg(arch_id_arg);
    Model<float> model = checkpoint.empty() ? Model<float>::build(*arch, 0) : load_model(checkpoint, arch);
    const BenchResult r = bench_inference(model, {1, 3, size, size}, warmup, runs);
    std::cout << "arch=" << arch_id(model.arch()) << "\n"
              << "input=" << shape_str(r.input_shape) << "\n"
              << "runs=" << r.runs_s.size() << "\n"
              << "median_s_per_image=" << std::setprecision(6) << r.median_s << "\n"
              << "hardware=" << r.hardware << "\n";
    return 0;
}

int cmd_summary(const std::string& id, int size) {
    const Arch arch = arch_arg(id);
    if (size < 64 || size % 32 != 0) throw UsageError("--size must be a multiple of 32 and at least 64");
    Model<float> model(arch);
    const ParamCount pc = count_params(model);
    const FlopReport fr = count_flops(model, {1, 3, size, size});
    std::cout << std::fixed << std::setprecision(3) << "arch=" << id << "\n"
              << "params=" << pc.count << "\n"
              << "params_mb=" << pc.megabytes << "\n"
              << "input=" << shape_str(fr.input_shape) << "\n"
              << "gmacs=" << fr.gmacs() << "\n"
              << "gflops=" << fr.gflops() << "\n"
              << "conv_layers=" << fr.conv_layers << "\n"
              << "convention=" << fr.convention() << "\n";
    return 0;
}

int cmd_gradcheck(bool include_broken, double tolerance) {
    std::vector<GradCheckCase> cases = tensor_grad_cases();
    for (auto& c : nn::block_grad_cases()) cases.push_back(std::move(c));
    for (auto& c : loss_grad_cases()) cases.push_back(std::move(c));
    if (include_broken) cases.push_back(broken_fixture());
    const GradCheckReport report = run_grad_suite(cases, tolerance);
    for (const auto& [name, r] : report.rows) {
        std::cout << std::left << std::setw(24) << name << " max_rel_error=" << std::scientific << std::setprecision(3)
                  << r.max_rel_error << " coords=" << std::defaultfloat << r.coordinates << " "
                  << (r.max_rel_error < tolerance ? "ok" : "FAIL") << "\n";
    }
    std::cout << (report.passed() ? "all ops within " : "some ops exceed ") << tolerance << "\n";
    return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Eye-region segmentation toolkit: train, evaluate, infer, benchmark, inspect."};
    app.require_subcommand(1);
    std::function<int()> action;

    std::string config;
    bool quiet = false;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a key=value config file");
    train_cmd->add_option("--config", config, "Config file")->required();
    train_cmd->add_flag("--quiet", quiet, "No per-step progress on stderr");
    train_cmd->callback([&] { action = [&] { return cmd_train(config, quiet); }; });

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint (or a directory of predictions) on a dataset");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
    eval_cmd->add_option("--data", ev.data, "Dataset root with images/ and masks/")->required();
    eval_cmd->add_option("--out", ev.out, "Report CSV path (a .json mirror is written beside it)")->required();
    eval_cmd->add_option("--pred-dir", ev.pred_dir, "Score <stem>.png predictions instead of running a model");
    eval_cmd->add_option("--arch", ev.arch, "Expected architecture");
    eval_cmd->add_option("--size", ev.size, "Evaluation input size");
    eval_cmd->add_option("--threshold", ev.threshold, "Binarization threshold");
    eval_cmd->add_option("--subset", ev.subset, "all | test (seeded split)");
    eval_cmd->add_option("--seed", ev.seed, "Split seed for --subset test");
    eval_cmd->add_option("--train-fraction", ev.train_fraction, "Split fraction for --subset test");
    eval_cmd->callback([&] { action = [&] { return cmd_eval(ev); }; });

    std::string ck, image, out, arch;
    std::optional<double> threshold;
    int size = 320;
    auto* infer_cmd = app.add_subcommand("infer", "Write a probability (or binary) mask PNG for one image");
    infer_cmd->add_option("--checkpoint", ck, "Model checkpoint")->required();
    infer_cmd->add_option("--image", image, "Input image")->required();
    infer_cmd->add_option("--out", out, "Output PNG")->required();
    infer_cmd->add_option("--threshold", threshold, "Write 0/255 instead of probabilities");
    infer_cmd->add_option("--size", size, "Network input size");
    infer_cmd->add_option("--arch", arch, "Expected architecture");
    infer_cmd->callback([&] { action = [&] { return cmd_infer(ck, image, out, threshold, size, arch); }; });

    int runs = 20, warmup = 3;
    auto* bench_cmd = app.add_subcommand("bench", "Median single-image inference time");
    bench_cmd->add_option("--checkpoint", ck, "Model checkpoint");
    bench_cmd->add_option("--arch", arch, "Architecture (random weights when no checkpoint)");
    bench_cmd->add_option("--runs", runs, "Timed runs (>= 5)");
    bench_cmd->add_option("--warmup", warmup, "Untimed warmup runs");
    bench_cmd->add_option("--size", size, "Input size");
    bench_cmd->callback([&] { action = [&] { return cmd_bench(ck, arch, runs, warmup, size); }; });

    auto* summary_cmd = app.add_subcommand("summary", "Parameter and operation counts for an architecture");
    summary_cmd->add_option("--arch", arch, "Architecture id")->required();
    summary_cmd->add_option("--size", size, "Input size for operation counts");
    summary_cmd->callback([&] { action = [&] { return cmd_summary(arch, size); }; });

    bool broken = false;
    double tolerance = 1e-4;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op and block");
    gc_cmd->add_flag("--include-broken-fixture", broken, "Add an op with a wrong backward (negative control)");
    gc_cmd->add_option("--tolerance", tolerance, "Maximum relative error");
    gc_cmd->callback([&] { action = [&] { return cmd_gradcheck(broken, tolerance); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    if (!apply_thread_env()) {
        std::cerr << "error: NUSG_THREADS must be a positive integer\n";
        return 2;
    }
    try {
        return action();
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
