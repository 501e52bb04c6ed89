#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nusg/blocks.hpp"
#include "nusg/data.hpp"
#include "nusg/loss.hpp"
#include "nusg/model.hpp"

namespace nusg {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Decoupled weight decay Adam:
///   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///   p -= lr * mhat / (sqrt(vhat) + eps) + lr * wd * p
/// A parameter that received no gradient is treated as g = 0.
template <typename T>
class AdamW {
public:
    AdamW(nn::StateList<T> params, AdamWOptions opt = {});

    /// Throws std::runtime_error naming the first parameter whose gradient is
    /// not finite. Nothing is modified in that case.
    void step(double lr);

    int64_t steps() const { return t_; }
    const nn::StateList<T>& params() const { return params_; }
    const std::vector<std::vector<T>>& first_moment() const { return m_; }
    const std::vector<std::vector<T>>& second_moment() const { return v_; }

private:
    nn::StateList<T> params_;
    AdamWOptions opt_;
    std::vector<std::vector<T>> m_, v_;
    int64_t t_ = 0;
};

struct Schedule {
    double base_lr = 1e-3;
    int64_t warmup_steps = 0;  // W
    int64_t total_steps = 1;   // T

    void validate() const;
};

/// base * s / W during warmup, then base * (1 + cos(pi (s - W) / (T - W))) / 2.
/// Zero for s >= T.
double lr_at(int64_t step, const Schedule& schedule);

enum class LossKind { kBce, kFocal };

struct TrainConfig {
    std::string arch = "res-u2net-lite";
    std::filesystem::path data_root;
    int input_size = 320;
    double train_fraction = 0.8;  // 1.0 trains on every record
    uint64_t seed = 0;
    int batch_size = 4;
    int64_t steps = 1000;
    std::optional<int64_t> warmup_steps;  // default: steps / 10
    double base_lr = 1e-3;
    AdamWOptions adamw;
    LossKind loss = LossKind::kBce;
    FocalOptions focal;
    data::AugmentPolicy augment;
    std::filesystem::path checkpoint = "model.nusg";
    std::filesystem::path log = "train_log.csv";
    int64_t checkpoint_every = 100;

    Schedule schedule() const;
    void validate() const;
};

struct TrainRecord {
    int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;  // since the start of training
};

struct TrainResult {
    std::vector<TrainRecord> log;
    std::vector<data::SampleRecord> train_records;
    std::vector<data::SampleRecord> test_records;
    std::vector<std::filesystem::path> unmatched;  // dataset files without a partner
    std::filesystem::path checkpoint;
};

/// Called after each step with the freshly updated model.
using StepCallback = std::function<void(const TrainRecord&, const Model<float>&)>;

/// Seeded training run. Writes the log CSV (step,loss,lr,wall_ms) as it goes
/// and checkpoints atomically every `checkpoint_every` steps and at the end.
/// A non-finite loss or gradient aborts with std::runtime_error and leaves
/// the last good checkpoint in place.
TrainResult train(const TrainConfig& config, const StepCallback& on_step = {});

/// Returns the un-augmented sample for a record index.
using SampleSource = std::function<data::Sample(size_t)>;

/// The loop behind train(): `count` samples drawn through `source`. Empty
/// checkpoint or log paths in the config skip those outputs.
std::vector<TrainRecord> train_loop(Model<float>& model, size_t count, const SampleSource& source,
                                    const TrainConfig& config, const StepCallback& on_step = {});

/// Batch composition for a step: indices into the training set. Each epoch
/// is a seeded permutation; batches run across epoch boundaries.
struct BatchPlan {
    std::vector<size_t> indices;
    std::vector<uint64_t> epochs;  // epoch of each index, keys augmentation
};
BatchPlan plan_batch(size_t count, int batch_size, int64_t step_index, uint64_t seed);

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace nusg
