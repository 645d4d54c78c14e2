#pragma once

#include <string>
#include <vector>

#include "phonssm/data.hpp"
#include "phonssm/model.hpp"

namespace phonssm {

/// Optimization settings. Defaults are the reference configuration; desk
/// runs (acceptance, CLI examples) override batch/epochs/warmup downward.
struct TrainConfig {
    double lr = 3e-4;
    double weight_decay = 1e-2;
    int batch = 128;
    int epochs = 100;
    int warmup_epochs = 10;
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = hardware default
    double val_fraction = 0.1;
    bool augment = true;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct AdamState {
    std::vector<Tensor> m, v;
    long step = 0;
};

/// One decoupled-weight-decay Adam update. `params` and `grads` are aligned
/// with for_each_param order; decay multiplies θ by (1 - lr·wd) separately
/// from the adaptive step.
void adamw_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                AdamState& state, double lr, double weight_decay);

/// Linear warmup to the peak then cosine decay to zero.
double lr_at(long step, long total_steps, long warmup_steps, double peak_lr);

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    std::vector<std::string> metric_lines;
    double final_val_acc = 0.0;
    double first_ortho = 0.0;
    double last_ortho = 0.0;
};

/// Full training loop: seeded shuffling, augmentation, AdamW with the
/// warmup/cosine schedule, prototype re-normalization after every step, and
/// one JSON metrics line per epoch. Aborts with a diagnostic dump on a
/// non-finite loss.
TrainResult train_model(const ModelConfig& cfg, const TrainConfig& tc,
                        const DatasetFile& train_ds, const std::string& out_dir);

}  // namespace phonssm
