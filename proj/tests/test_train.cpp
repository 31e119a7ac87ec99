#include "doctest.h"

#include <cmath>
#include <cstring>
#include <sstream>

#include "residua/errors.hpp"
#include "residua/train.hpp"

using namespace residua;

namespace {

// Single-parameter architecture stand-in: drive adam_step through the
// real store machinery with a 1x1 conv net.
ArchitectureSpec tiny_arch() {
    ArchitectureSpec arch;
    arch.input_channels = 1;
    arch.downsample_factor = 1;
    LayerSpec l;
    l.name = "only";
    l.kind = LayerKind::Conv;
    l.kernel = 1;
    l.stride = 1;
    l.filters = 1;
    l.input_sources = {"input"};
    l.normalized = false;
    arch.layers = {l};
    return arch;
}

std::vector<TrainSample> textured_samples(int count, int hw, std::uint64_t seed) {
    std::vector<TrainSample> out;
    Rng rng(seed);
    Tensor4 base(Shape4{1, 1, hw, hw});
    for (int h = 0; h < hw; ++h)
        for (int w = 0; w < hw; ++w)
            base.at(0, 0, h, w) =
                0.5f + 0.2f * std::sin(0.4f * static_cast<float>(h)) +
                0.15f * std::cos(0.3f * static_cast<float>(w)) +
                0.02f * static_cast<float>(rng.next_normal());
    for (int i = 0; i < count; ++i) {
        out.push_back({"sample_" + std::to_string(i), false, base});
    }
    return out;
}

} // namespace

TEST_CASE("adam first and second steps match hand evaluation") {
    ArchitectureSpec arch = tiny_arch();
    ParamStore params = zeros_like_params(arch);
    params.layers[0].conv.weight.data[0] = 0.0f;
    ParamStore grads = zeros_like_params(arch);
    TrainConfig cfg;
    AdamState state = make_adam_state(arch, cfg);

    grads.layers[0].conv.weight.data[0] = 1.0f;
    grads.layers[0].conv.bias[0] = 1.0f;
    adam_step(arch, params, grads, state);
    CHECK(state.t == 1);
    CHECK(params.layers[0].conv.weight.data[0] ==
          doctest::Approx(-9.99999e-4).epsilon(1e-5));

    adam_step(arch, params, grads, state);
    CHECK(params.layers[0].conv.weight.data[0] == doctest::Approx(-2e-3).epsilon(1e-3));
    CHECK(std::abs(params.layers[0].conv.weight.data[0] + 2e-3) < 1e-6);
}

TEST_CASE("adam zero gradient with zero state leaves params fixed") {
    ArchitectureSpec arch = tiny_arch();
    ParamStore params = zeros_like_params(arch);
    params.layers[0].conv.weight.data[0] = 0.75f;
    ParamStore grads = zeros_like_params(arch);
    TrainConfig cfg;
    AdamState state = make_adam_state(arch, cfg);
    adam_step(arch, params, grads, state);
    CHECK(params.layers[0].conv.weight.data[0] == 0.75f);
}

TEST_CASE("adam with lr zero advances moments but not params") {
    ArchitectureSpec arch = tiny_arch();
    ParamStore params = zeros_like_params(arch);
    params.layers[0].conv.weight.data[0] = 0.5f;
    ParamStore grads = zeros_like_params(arch);
    grads.layers[0].conv.weight.data[0] = 2.0f;
    TrainConfig cfg;
    cfg.lr = 0.0f;
    AdamState state = make_adam_state(arch, cfg);
    adam_step(arch, params, grads, state);
    CHECK(state.t == 1);
    CHECK(state.m.layers[0].conv.weight.data[0] != 0.0f);
    CHECK(state.v.layers[0].conv.weight.data[0] > 0.0f);
    CHECK(params.layers[0].conv.weight.data[0] == 0.5f);
}

TEST_CASE("adam update magnitude is bounded") {
    ArchitectureSpec arch = tiny_arch();
    ParamStore params = zeros_like_params(arch);
    ParamStore grads = zeros_like_params(arch);
    TrainConfig cfg;
    AdamState state = make_adam_state(arch, cfg);
    // Bound from the optimizer's construction: |step| <= lr*(1-b1)/sqrt(1-b2)
    // once that ratio exceeds 1, with slack for eps and rounding.
    const double bound = 1e-3 * 0.1 / std::sqrt(1.0 - 0.999) + 1e-6;
    Rng rng(77);
    for (int step = 0; step < 200; ++step) {
        grads.layers[0].conv.weight.data[0] = static_cast<float>(rng.next_normal() * 3.0);
        const float before = params.layers[0].conv.weight.data[0];
        adam_step(arch, params, grads, state);
        const float after = params.layers[0].conv.weight.data[0];
        CHECK(std::abs(static_cast<double>(after) - before) <= bound);
    }
}

TEST_CASE("train rejects bad configs and bad sets") {
    ArchitectureSpec arch = build_default_architecture();
    Rng rng(5);
    ParamStore params = init_params(arch, rng);

    std::vector<TrainSample> ok = textured_samples(4, 24, 11);
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(train(arch, params, ok, cfg), ValueError);
    cfg.epochs = 1;
    cfg.batch_size = 1;
    CHECK_THROWS_AS(train(arch, params, ok, cfg), ValueError);
    cfg.batch_size = 2;

    CHECK_THROWS_AS(train(arch, params, {}, cfg), DataError);

    std::vector<TrainSample> tainted = textured_samples(4, 24, 11);
    tainted[2].anomalous = true;
    tainted[2].source = "bad_apple.pgm";
    CHECK_THROWS_WITH_AS(train(arch, params, tainted, cfg),
                         doctest::Contains("bad_apple.pgm"), DataError);

    std::vector<TrainSample> mixed = textured_samples(3, 24, 11);
    auto odd = textured_samples(1, 32, 12);
    odd[0].source = "odd_size.pgm";
    mixed.push_back(odd[0]);
    CHECK_THROWS_WITH_AS(train(arch, params, mixed, cfg),
                         doctest::Contains("odd_size.pgm"), ShapeError);
}

TEST_CASE("one epoch produces one log row and a sane loss") {
    ArchitectureSpec arch = build_default_architecture();
    Rng rng(6);
    ParamStore params = init_params(arch, rng);
    std::vector<TrainSample> samples = textured_samples(4, 24, 13);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.seed = 3;
    TrainOutcome out = train(arch, params, samples, cfg);
    REQUIRE(out.log.mean_loss.size() == 1);
    REQUIRE(out.log.seconds.size() == 1);
    CHECK(out.log.mean_loss[0] > 0.0);
    CHECK(std::isfinite(out.log.mean_loss[0]));
    CHECK(out.opt.t == 1);
}

TEST_CASE("training is deterministic given the seed") {
    ArchitectureSpec arch = build_default_architecture();
    std::vector<TrainSample> samples = textured_samples(6, 24, 17);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 3;
    cfg.seed = 42;

    Rng ra(9), rb(9);
    ParamStore pa = init_params(arch, ra);
    ParamStore pb = init_params(arch, rb);
    TrainOutcome oa = train(arch, pa, samples, cfg);
    TrainOutcome ob = train(arch, pb, samples, cfg);

    CHECK(oa.log.mean_loss == ob.log.mean_loss);
    auto va = named_views(arch, pa);
    auto vb = named_views(arch, pb);
    for (std::size_t i = 0; i < va.size(); ++i) {
        CHECK(std::memcmp(va[i].flat->data(), vb[i].flat->data(),
                          va[i].flat->size() * sizeof(float)) == 0);
    }
}

TEST_CASE("short overfit run drives the loss down") {
    ArchitectureSpec arch = build_default_architecture();
    Rng rng(21);
    ParamStore params = init_params(arch, rng);
    std::vector<TrainSample> samples = textured_samples(8, 24, 23);
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.batch_size = 4;
    cfg.seed = 1;
    TrainOutcome out = train(arch, params, samples, cfg);
    REQUIRE(out.log.mean_loss.size() == 12);
    CHECK(out.log.mean_loss.back() < out.log.mean_loss.front());
}

TEST_CASE("train log serializes as tab-separated rows") {
    TrainLog log;
    log.mean_loss = {0.5, 0.25};
    log.seconds = {1.25, 1.5};
    const std::string text = train_log_tsv(log);
    std::istringstream is(text);
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "1\t0.5\t1.25");
    REQUIRE(std::getline(is, line));
    CHECK(line == "2\t0.25\t1.5");
    CHECK_FALSE(std::getline(is, line));
}
