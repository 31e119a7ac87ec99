#pragma once

#include <string>
#include <vector>

#include "residua/model.hpp"
#include "residua/tensor.hpp"

namespace residua {

struct AdamState {
    ParamStore m;
    ParamStore v;
    long long t = 0;
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 8;
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    std::uint64_t seed = 0;
    bool shuffle = true;
};

struct TrainLog {
    std::vector<double> mean_loss;  // one entry per completed epoch
    std::vector<double> seconds;
};

/// One training image: (1,1,h,w) intensities in [0,1]. `source` names the
/// file (or synthetic id) for error messages.
struct TrainSample {
    std::string source;
    bool anomalous = false;
    Tensor4 image;
};

struct TrainOutcome {
    AdamState opt;
    TrainLog log;
};

AdamState make_adam_state(const ArchitectureSpec& arch, const TrainConfig& cfg);

/// One Adam update over every learnable array; running stats and the
/// non-learnable entries of m/v are untouched.
void adam_step(const ArchitectureSpec& arch, ParamStore& params, ParamStore& grads,
               AdamState& state);

/// Shuffled minibatch MSE training, cfg.epochs epochs. Rejects anomalous
/// samples and mixed image sizes; deterministic given cfg.seed.
TrainOutcome train(const ArchitectureSpec& arch, ParamStore& params,
                   const std::vector<TrainSample>& samples, const TrainConfig& cfg);

/// Tab-separated rows "epoch<TAB>mean_loss<TAB>seconds", newline-terminated.
std::string train_log_tsv(const TrainLog& log);

} // namespace residua
