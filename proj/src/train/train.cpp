#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "nusg/checkpoint.hpp"
#include "nusg/train.hpp"

namespace nusg {

namespace {

uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::vector<size_t> epoch_order(size_t count, uint64_t seed, uint64_t epoch) {
    std::vector<size_t> order(count);
    for (size_t i = 0; i < count; ++i) order[i] = i;
    std::mt19937_64 rng(mix(seed ^ mix(epoch + 1)));
    for (size_t i = count - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    return order;
}

}  // namespace

Schedule TrainConfig::schedule() const {
    Schedule s;
    s.base_lr = base_lr;
    s.total_steps = steps;
    s.warmup_steps = warmup_steps.value_or(steps / 10);
    return s;
}

void TrainConfig::validate() const {
    parse_arch(arch);
    if (input_size < 64 || input_size % 32 != 0) {
        throw std::invalid_argument("input_size must be a multiple of 32 and at least 64, got " +
                                    std::to_string(input_size));
    }
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
        throw std::invalid_argument("train_fraction must be in (0, 1], got " + std::to_string(train_fraction));
    }
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (steps < 1) throw std::invalid_argument("steps must be positive");
    if (checkpoint_every < 1) throw std::invalid_argument("checkpoint_every must be positive");
    schedule().validate();
    augment.validate();
    if (focal.gamma < 0.0 || focal.alpha < 0.0 || focal.alpha > 1.0 || focal.mu_ref <= 0.0 || focal.lambda_max < 1.0) {
        throw std::invalid_argument("focal options need gamma >= 0, alpha in [0,1], mu_ref > 0, lambda_max >= 1");
    }
}

BatchPlan plan_batch(size_t count, int batch_size, int64_t step_index, uint64_t seed) {
    if (count == 0) throw std::invalid_argument("no training samples");
    BatchPlan plan;
    const uint64_t start = static_cast<uint64_t>(step_index) * static_cast<uint64_t>(batch_size);
    uint64_t cached_epoch = UINT64_MAX;
    std::vector<size_t> order;
    for (uint64_t k = start; k < start + static_cast<uint64_t>(batch_size); ++k) {
        const uint64_t epoch = k / count;
        if (epoch != cached_epoch) {
            order = epoch_order(count, seed, epoch);
            cached_epoch = epoch;
        }
        plan.indices.push_back(order[k % count]);
        plan.epochs.push_back(epoch);
    }
    return plan;
}

std::vector<TrainRecord> train_loop(Model<float>& model, size_t count, const SampleSource& source,
                                    const TrainConfig& config, const StepCallback& on_step) {
    config.validate();
    const Schedule schedule = config.schedule();
    const nn::StateList<float> params = model.parameters();
    AdamW<float> opt(params, config.adamw);

    std::ofstream log;
    if (!config.log.empty()) {
        log.open(config.log, std::ios::trunc);
        if (!log) throw std::runtime_error("cannot write log " + config.log.string());
        log << "step,loss,lr,wall_ms\n" << std::setprecision(10);
    }

    std::vector<TrainRecord> records;
    const auto t0 = std::chrono::steady_clock::now();
    for (int64_t s = 0; s < config.steps; ++s) {
        const BatchPlan plan = plan_batch(count, config.batch_size, s, config.seed);
        std::vector<data::Sample> samples;
        std::vector<size_t> order;
        for (size_t i = 0; i < plan.indices.size(); ++i) {
            auto rng = data::sample_rng(config.seed, plan.indices[i], plan.epochs[i]);
            samples.push_back(data::augment(source(plan.indices[i]), config.augment, rng));
            order.push_back(i);
        }
        const data::Batch batch = data::make_batch(samples, order);

        const int64_t step = s + 1;
        const double lr = lr_at(step, schedule);
        for (auto p : params) p.tensor.zero_grad();
        auto outputs = model.forward(batch.images, NormMode::kTrain);
        Tensor32 loss = config.loss == LossKind::kBce ? deep_supervision_loss(outputs, batch.masks)
                                                      : weighted_focal_loss(outputs, batch.masks, config.focal);
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
            throw std::runtime_error("non-finite loss at step " + std::to_string(step) +
                                     "; last good checkpoint kept at " + config.checkpoint.string());
        }
        backward(loss);
        opt.step(lr);

        TrainRecord rec{step, loss_value, lr,
                        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()};
        records.push_back(rec);
        if (log) log << rec.step << "," << rec.loss << "," << rec.lr << "," << rec.wall_ms << "\n" << std::flush;
        if (!config.checkpoint.empty() && (step % config.checkpoint_every == 0 || step == config.steps)) {
            save_checkpoint(config.checkpoint, model.state());
        }
        if (on_step) on_step(rec, model);
    }
    return records;
}

TrainResult train(const TrainConfig& config, const StepCallback& on_step) {
    config.validate();
    const auto scan = data::scan_dataset(config.data_root);
    TrainResult result;
    result.unmatched = scan.unmatched;
    if (config.train_fraction >= 1.0) {
        result.train_records = scan.records;
    } else {
        std::tie(result.train_records, result.test_records) = data::split(scan.records, config.train_fraction, config.seed);
    }
    auto model = Model<float>::build(parse_arch(config.arch), config.seed);
    const auto& recs = result.train_records;
    const int size = config.input_size;
    result.log = train_loop(
        model, recs.size(), [&](size_t i) { return data::load_sample(recs.at(i), size, size); }, config, on_step);
    result.checkpoint = config.checkpoint;
    return result;
}

}  // namespace nusg
