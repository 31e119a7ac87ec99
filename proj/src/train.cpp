#include "residua/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>

#include "residua/errors.hpp"
#include "residua/ops.hpp"

namespace residua {

namespace {

void check_config(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ValueError("train: epochs must be >= 1");
    if (cfg.batch_size < 2) throw ValueError("train: batch_size must be >= 2");
    if (cfg.lr < 0.0f) throw ValueError("train: lr must be >= 0");
}

Tensor4 gather_batch(const std::vector<TrainSample>& samples,
                     const std::vector<std::size_t>& idx, std::size_t from, std::size_t count) {
    const Shape4 s = samples[idx[from]].image.shape;
    Tensor4 batch(static_cast<int>(count), s.c, s.h, s.w);
    const std::size_t plane = samples[idx[from]].image.data.size();
    for (std::size_t b = 0; b < count; ++b) {
        std::memcpy(batch.plane(static_cast<int>(b), 0), samples[idx[from + b]].image.data.data(),
                    plane * sizeof(float));
    }
    return batch;
}

} // namespace

AdamState make_adam_state(const ArchitectureSpec& arch, const TrainConfig& cfg) {
    AdamState state;
    state.m = zeros_like_params(arch);
    state.v = zeros_like_params(arch);
    state.lr = cfg.lr;
    state.beta1 = cfg.beta1;
    state.beta2 = cfg.beta2;
    state.eps = cfg.eps;
    return state;
}

void adam_step(const ArchitectureSpec& arch, ParamStore& params, ParamStore& grads,
               AdamState& state) {
    auto pv = named_views(arch, params);
    auto gv = named_views(arch, grads);
    auto mv = named_views(arch, state.m);
    auto vv = named_views(arch, state.v);
    if (pv.size() != gv.size()) throw ShapeError("adam_step: gradient store shape mismatch");

    state.t += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), state.t);
    const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), state.t);
    const double lr = state.lr;
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double eps = state.eps;

    for (std::size_t i = 0; i < pv.size(); ++i) {
        if (!pv[i].learnable) continue;
        std::vector<float>& theta = *pv[i].flat;
        const std::vector<float>& g = *gv[i].flat;
        std::vector<float>& m = *mv[i].flat;
        std::vector<float>& v = *vv[i].flat;
        if (theta.size() != g.size()) {
            throw ShapeError("adam_step: gradient for '" + pv[i].name + "' has wrong size");
        }
        for (std::size_t e = 0; e < theta.size(); ++e) {
            const double ge = g[e];
            const double me = b1 * m[e] + (1.0 - b1) * ge;
            const double ve = b2 * v[e] + (1.0 - b2) * ge * ge;
            m[e] = static_cast<float>(me);
            v[e] = static_cast<float>(ve);
            const double mhat = me / bc1;
            const double vhat = ve / bc2;
            theta[e] = static_cast<float>(theta[e] - lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

TrainOutcome train(const ArchitectureSpec& arch, ParamStore& params,
                   const std::vector<TrainSample>& samples, const TrainConfig& cfg) {
    check_config(cfg);
    if (samples.empty()) throw DataError("train: no training samples");
    const Shape4 first = samples.front().image.shape;
    for (const TrainSample& s : samples) {
        if (s.anomalous) {
            throw DataError("train: anomalous sample '" + s.source + "' in the training set");
        }
        if (!(s.image.shape == first)) {
            throw ShapeError("train: image '" + s.source + "' is " +
                             std::to_string(s.image.shape.h) + "x" +
                             std::to_string(s.image.shape.w) + ", expected " +
                             std::to_string(first.h) + "x" + std::to_string(first.w));
        }
    }

    TrainOutcome out;
    out.opt = make_adam_state(arch, cfg);
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        if (cfg.shuffle) {
            Rng rng(cfg.seed + static_cast<std::uint64_t>(epoch));
            idx = shuffled_indices(samples.size(), rng);
        }
        double loss_acc = 0.0;
        for (std::size_t from = 0; from < idx.size(); from += cfg.batch_size) {
            const std::size_t count =
                std::min(static_cast<std::size_t>(cfg.batch_size), idx.size() - from);
            Tensor4 batch = gather_batch(samples, idx, from, count);
            ForwardResult fr = forward(arch, params, batch, Mode::Train);
            MseResult mr = mse_loss(fr.reconstruction, batch);
            ParamStore grads = backward(arch, params, fr.cache, mr.grad_pred);
            adam_step(arch, params, grads, out.opt);
            loss_acc += mr.loss * static_cast<double>(count);
        }
        const auto ended = std::chrono::steady_clock::now();
        out.log.mean_loss.push_back(loss_acc / static_cast<double>(samples.size()));
        out.log.seconds.push_back(std::chrono::duration<double>(ended - started).count());
    }
    return out;
}

std::string train_log_tsv(const TrainLog& log) {
    std::ostringstream os;
    os.precision(10);
    for (std::size_t e = 0; e < log.mean_loss.size(); ++e) {
        os << (e + 1) << '\t' << log.mean_loss[e] << '\t' << log.seconds[e] << '\n';
    }
    return os.str();
}

} // namespace residua
