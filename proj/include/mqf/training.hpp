#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqf/adam.hpp"
#include "mqf/model.hpp"

namespace mqf {

struct TrainingConfig {
    std::string scheme = "forking";  // forking: every step is an FCT; cutting: one random FCT
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    double lr_decay = 1.0;  // per-epoch multiplier on adam.lr; 1 = constant rate
    AdamConfig adam;
    LossWeights loss_weights;
};

void validate(const TrainingConfig& cfg, const ModelSpec& spec);

struct TrainResult {
    std::vector<double> epoch_loss;  // mean loss per live term, one entry per epoch
    std::size_t series_used = 0;
    std::size_t series_skipped = 0;
    std::size_t adam_steps = 0;
};

// Mini-batch Adam over per-series computation records. Gradients for the
// series of one batch may be computed on cfg.threads workers; they are merged
// in series order, so results are bit-identical for any thread count.
TrainResult train(MQModel& model, const std::vector<ModelInputs>& series,
                  const TrainingConfig& cfg);

}  // namespace mqf
