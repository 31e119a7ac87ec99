#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "residua/errors.hpp"
#include "residua/model.hpp"

using namespace residua;
namespace fs = std::filesystem;

namespace {

std::vector<int> kernels_of(const ArchitectureSpec& arch, std::size_t from, std::size_t to) {
    std::vector<int> ks;
    for (std::size_t i = from; i < to; ++i) ks.push_back(arch.layers[i].kernel);
    return ks;
}

bool stores_equal(const ArchitectureSpec& arch, ParamStore& a, ParamStore& b) {
    auto va = named_views(arch, a);
    auto vb = named_views(arch, b);
    if (va.size() != vb.size()) return false;
    for (std::size_t i = 0; i < va.size(); ++i) {
        if (va[i].name != vb[i].name) return false;
        if (va[i].flat->size() != vb[i].flat->size()) return false;
        if (std::memcmp(va[i].flat->data(), vb[i].flat->data(),
                        va[i].flat->size() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

fs::path temp_file(const std::string& stem) {
    return fs::temp_directory_path() / ("residua_test_" + stem);
}

} // namespace

TEST_CASE("default architecture matches the fixed layout") {
    ArchitectureSpec arch = build_default_architecture();
    REQUIRE(arch.layers.size() == 10);
    validate_architecture(arch);

    CHECK(kernels_of(arch, 0, 5) == std::vector<int>{11, 9, 7, 5, 3});
    CHECK(kernels_of(arch, 5, 9) == std::vector<int>{3, 5, 7, 9});
    CHECK(arch.layers.back().kernel == 11);
    CHECK(arch.layers.back().normalized == false);
    CHECK(arch.layers.back().kind == LayerKind::Conv);

    for (const char* name : {"x7", "x8", "x9"}) {
        auto it = std::find_if(arch.layers.begin(), arch.layers.end(),
                               [&](const LayerSpec& l) { return l.name == name; });
        REQUIRE(it != arch.layers.end());
        CHECK(it->input_sources.size() == 2);
        CHECK(it->kind == LayerKind::ConvTranspose);
    }
    for (std::size_t i = 0; i + 1 < 5; ++i) {
        CHECK(arch.layers[i].kernel >= arch.layers[i + 1].kernel);
    }
}

TEST_CASE("architecture validation rejects broken specs") {
    ArchitectureSpec arch = build_default_architecture();

    SUBCASE("stride composition must restore the input size") {
        arch.layers[8].stride = 1;  // x9 no longer upsamples
        CHECK_THROWS_AS(validate_architecture(arch), ValueError);
    }
    SUBCASE("unknown source") {
        arch.layers[3].input_sources = {"nope"};
        CHECK_THROWS_AS(validate_architecture(arch), ValueError);
    }
    SUBCASE("duplicate name") {
        arch.layers[4].name = "x2";
        CHECK_THROWS_AS(validate_architecture(arch), ValueError);
    }
    SUBCASE("concat of different spatial sizes") {
        arch.layers[6].input_sources = {"x6", "x2"};  // x2 is H/4, x6 is H/8
        CHECK_THROWS_AS(validate_architecture(arch), ValueError);
    }
    SUBCASE("even kernel") {
        arch.layers[0].kernel = 10;
        CHECK_THROWS_AS(validate_architecture(arch), ValueError);
    }
    SUBCASE("final channels must match the input") {
        arch.layers.back().filters = 3;
        CHECK_THROWS_AS(validate_architecture(arch), ValueError);
    }
}

TEST_CASE("init_params determinism and statistics") {
    ArchitectureSpec arch = build_default_architecture();
    Rng r1(99), r2(99);
    ParamStore a = init_params(arch, r1);
    ParamStore b = init_params(arch, r2);
    CHECK(stores_equal(arch, a, b));

    for (const NamedParam& v : named_views(arch, a)) {
        if (v.name.ends_with(".gamma") || v.name.ends_with(".running_var")) {
            for (float x : *v.flat) CHECK(x == 1.0f);
        }
        if (v.name.ends_with(".bias") || v.name.ends_with(".beta") ||
            v.name.ends_with(".running_mean")) {
            for (float x : *v.flat) CHECK(x == 0.0f);
        }
    }

    const Tensor4& w1 = a.layers[0].conv.weight;
    CHECK(w1.shape == Shape4{32, 1, 11, 11});
    double mean = 0.0;
    for (float x : w1.data) mean += x;
    mean /= static_cast<double>(w1.data.size());
    double var = 0.0;
    for (float x : w1.data) var += (x - mean) * (x - mean);
    var /= static_cast<double>(w1.data.size());
    const double want = std::sqrt(2.0 / 121.0);
    CHECK(std::sqrt(var) == doctest::Approx(want).epsilon(0.10));
}

TEST_CASE("forward shape contract") {
    ArchitectureSpec arch = build_default_architecture();
    Rng rng(41);
    ParamStore params = init_params(arch, rng);

    for (const Shape4 s : {Shape4{1, 1, 64, 64}, Shape4{1, 1, 200, 160}, Shape4{2, 1, 24, 24}}) {
        Tensor4 x = randn(s, rng, 0.5f, 0.1f);
        ForwardResult r = forward(arch, params, x, Mode::Eval);
        CHECK(r.reconstruction.shape == s);
        CHECK(r.reconstruction.all_finite());
    }
}

TEST_CASE("forward rejects bad input sizes naming the dimension") {
    ArchitectureSpec arch = build_default_architecture();
    Rng rng(42);
    ParamStore params = init_params(arch, rng);

    Tensor4 bad_w = randn({1, 1, 104, 50}, rng, 0.0f, 1.0f);
    CHECK_THROWS_WITH_AS(forward(arch, params, bad_w, Mode::Eval),
                         doctest::Contains("50"), ShapeError);

    Tensor4 bad_h = randn({1, 1, 100, 48}, rng, 0.0f, 1.0f);
    CHECK_THROWS_WITH_AS(forward(arch, params, bad_h, Mode::Eval),
                         doctest::Contains("100"), ShapeError);

    Tensor4 tiny = randn({1, 1, 16, 64}, rng, 0.0f, 1.0f);
    CHECK_THROWS_WITH_AS(forward(arch, params, tiny, Mode::Eval),
                         doctest::Contains("16"), ShapeError);

    Tensor4 two_channel = randn({1, 2, 64, 64}, rng, 0.0f, 1.0f);
    CHECK_THROWS_AS(forward(arch, params, two_channel, Mode::Eval), ShapeError);
}

TEST_CASE("eval forward is pure, train forward touches only running stats") {
    ArchitectureSpec arch = build_default_architecture();
    Rng rng(43);
    ParamStore params = init_params(arch, rng);
    Tensor4 x = randn({2, 1, 24, 24}, rng, 0.5f, 0.1f);

    ForwardResult e1 = forward(arch, params, x, Mode::Eval);
    ForwardResult e2 = forward(arch, params, x, Mode::Eval);
    CHECK(std::memcmp(e1.reconstruction.data.data(), e2.reconstruction.data.data(),
                      e1.reconstruction.data.size() * sizeof(float)) == 0);

    ParamStore before = params;
    forward(arch, params, x, Mode::Train);
    CHECK(std::memcmp(params.layers[0].conv.weight.data.data(),
                      before.layers[0].conv.weight.data.data(),
                      params.layers[0].conv.weight.data.size() * sizeof(float)) == 0);
    CHECK(params.layers[0].bn.gamma == before.layers[0].bn.gamma);
    CHECK(params.layers[0].bn.running_mean != before.layers[0].bn.running_mean);
}

TEST_CASE("backward trivial and determinism") {
    ArchitectureSpec arch = build_default_architecture();
    Rng rng(44);
    ParamStore params = init_params(arch, rng);
    Tensor4 x = randn({2, 1, 24, 24}, rng, 0.5f, 0.1f);

    SUBCASE("zero grad_recon gives a zero store") {
        ForwardResult r = forward(arch, params, x, Mode::Train);
        Tensor4 zeros = tensor_fill(r.reconstruction.shape, 0.0f);
        ParamStore g = backward(arch, params, r.cache, zeros);
        for (const NamedParam& v : named_views(arch, g)) {
            for (float val : *v.flat) CHECK(val == 0.0f);
        }
    }
    SUBCASE("identical runs give bitwise-identical gradients") {
        Rng ga(7), gb(7);
        ParamStore pa = params, pb = params;
        ForwardResult ra = forward(arch, pa, x, Mode::Train);
        ForwardResult rb = forward(arch, pb, x, Mode::Train);
        Tensor4 proj_a = randn(ra.reconstruction.shape, ga, 0.0f, 1.0f);
        Tensor4 proj_b = randn(rb.reconstruction.shape, gb, 0.0f, 1.0f);
        ParamStore grad_a = backward(arch, pa, ra.cache, proj_a);
        ParamStore grad_b = backward(arch, pb, rb.cache, proj_b);
        CHECK(stores_equal(arch, grad_a, grad_b));
    }
    SUBCASE("eval cache is rejected") {
        ForwardResult r = forward(arch, params, x, Mode::Eval);
        Tensor4 zeros = tensor_fill(r.reconstruction.shape, 0.0f);
        CHECK_THROWS_AS(backward(arch, params, r.cache, zeros), StateError);
    }
}

// Central differences on a ReLU network straddle activation kinks for
// unlucky step sizes, so each sampled parameter is probed at several
// steps and agreement at any one of them counts. A wrong gradient
// formula disagrees at every step.
TEST_CASE("whole-model finite differences on sampled parameters") {
    ArchitectureSpec arch = build_default_architecture();
    Rng rng(45);
    ParamStore params = init_params(arch, rng);
    Tensor4 x = randn({2, 1, 24, 24}, rng, 0.5f, 0.1f);

    auto loss = [&](ParamStore& p) {
        ForwardResult r = forward(arch, p, x, Mode::Train);
        return mse_loss(r.reconstruction, x).loss;
    };

    ForwardResult r = forward(arch, params, x, Mode::Train);
    MseResult m = mse_loss(r.reconstruction, x);
    ParamStore grads = backward(arch, params, r.cache, m.grad_pred);

    auto pviews = named_views(arch, params);
    auto gviews = named_views(arch, grads);
    REQUIRE(pviews.size() == gviews.size());

    std::vector<std::size_t> learnable;
    for (std::size_t i = 0; i < pviews.size(); ++i)
        if (pviews[i].learnable) learnable.push_back(i);

    Rng pick(46);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t vi = learnable[pick.next_below(static_cast<std::uint32_t>(
            learnable.size()))];
        std::vector<float>& arr = *pviews[vi].flat;
        const std::size_t ei = pick.next_below(static_cast<std::uint32_t>(arr.size()));
        const float keep = arr[ei];
        const double analytic = (*gviews[vi].flat)[ei];

        // Agreement at any step passes. A coordinate whose gradient sits at
        // the float32 forward-noise floor is unresolvable at every step; it
        // shows up as the FD estimates scattering across steps more than
        // they deviate from the analytic value, whereas a wrong formula
        // gives tightly clustered estimates away from it.
        ParamStore scratch = params;
        std::vector<float>& sarr = *named_views(arch, scratch)[vi].flat;
        bool agreed = false;
        bool first = true;
        double lo = 0.0, hi = 0.0, nearest = 0.0;
        for (const float h : {1e-3f, 5e-4f, 2.5e-4f, 2e-3f, 4e-3f}) {
            sarr[ei] = keep + h;
            const double up = loss(scratch);
            sarr[ei] = keep - h;
            const double dn = loss(scratch);
            sarr[ei] = keep;
            const double numeric = (up - dn) / (2.0 * static_cast<double>(h));
            const double dist = std::abs(analytic - numeric);
            if (first || numeric < lo) lo = numeric;
            if (first || numeric > hi) hi = numeric;
            if (first || dist < nearest) nearest = dist;
            first = false;
            if (dist <= 1e-2 * std::max(std::abs(analytic), std::abs(numeric)) + 1e-4) {
                agreed = true;
                break;
            }
        }
        INFO(pviews[vi].name, "[", ei, "] analytic ", analytic, " fd range [", lo, ", ", hi,
             "]");
        CHECK((agreed || hi - lo > nearest));
    }
}

// The directional derivative along the analytic gradient equals its
// squared norm; kink effects average out over the full parameter vector.
TEST_CASE("whole-model directional derivative matches the gradient norm") {
    ArchitectureSpec arch = build_default_architecture();
    Rng rng(45);
    ParamStore params = init_params(arch, rng);
    Tensor4 x = randn({2, 1, 24, 24}, rng, 0.5f, 0.1f);

    auto loss = [&](ParamStore& p) {
        ForwardResult r = forward(arch, p, x, Mode::Train);
        return mse_loss(r.reconstruction, x).loss;
    };
    ForwardResult r = forward(arch, params, x, Mode::Train);
    MseResult m = mse_loss(r.reconstruction, x);
    ParamStore grads = backward(arch, params, r.cache, m.grad_pred);

    auto pviews = named_views(arch, params);
    auto gviews = named_views(arch, grads);

    double gnorm2 = 0.0;
    for (std::size_t vi = 0; vi < gviews.size(); ++vi) {
        if (!pviews[vi].learnable) continue;
        for (float g : *gviews[vi].flat) gnorm2 += static_cast<double>(g) * g;
    }
    REQUIRE(gnorm2 > 0.0);

    const double t = 3e-3;
    ParamStore up = params, dn = params;
    auto uv = named_views(arch, up);
    auto dv = named_views(arch, dn);
    for (std::size_t vi = 0; vi < pviews.size(); ++vi) {
        if (!pviews[vi].learnable) continue;
        const std::vector<float>& g = *gviews[vi].flat;
        for (std::size_t e = 0; e < g.size(); ++e) {
            (*uv[vi].flat)[e] += static_cast<float>(t * g[e]);
            (*dv[vi].flat)[e] -= static_cast<float>(t * g[e]);
        }
    }
    const double directional = (loss(up) - loss(dn)) / (2.0 * t);
    CHECK(std::abs(directional / gnorm2 - 1.0) <= 2e-2);
}

TEST_CASE("checkpoint round trip and corruption handling") {
    ArchitectureSpec arch = build_default_architecture();
    Rng rng(47);
    ParamStore params = init_params(arch, rng);
    // Make running stats non-trivial so the round trip covers them.
    Tensor4 x = randn({2, 1, 24, 24}, rng, 0.5f, 0.1f);
    forward(arch, params, x, Mode::Train);

    const fs::path path = temp_file("ckpt.bin");
    save_checkpoint(arch, params, path.string());

    SUBCASE("round trip is bitwise identical") {
        ParamStore loaded = load_checkpoint(arch, path.string());
        CHECK(stores_equal(arch, params, loaded));

        ForwardResult before = forward(arch, params, x, Mode::Eval);
        ForwardResult after = forward(arch, loaded, x, Mode::Eval);
        CHECK(std::memcmp(before.reconstruction.data.data(), after.reconstruction.data.data(),
                          before.reconstruction.data.size() * sizeof(float)) == 0);
    }
    SUBCASE("zero-byte file") {
        const fs::path empty = temp_file("empty.bin");
        std::ofstream(empty, std::ios::binary | std::ios::trunc).flush();
        CHECK_THROWS_AS(load_checkpoint(arch, empty.string()), FormatError);
        fs::remove(empty);
    }
    SUBCASE("bad magic") {
        std::string bytes;
        {
            std::ifstream in(path, std::ios::binary);
            bytes.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        }
        bytes[0] = 'X';
        const fs::path bad = temp_file("badmagic.bin");
        std::ofstream(bad, std::ios::binary | std::ios::trunc) << bytes;
        CHECK_THROWS_AS(load_checkpoint(arch, bad.string()), FormatError);
        fs::remove(bad);
    }
    SUBCASE("truncated file") {
        std::string bytes;
        {
            std::ifstream in(path, std::ios::binary);
            bytes.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        }
        bytes.resize(bytes.size() / 2);
        const fs::path cut = temp_file("truncated.bin");
        std::ofstream(cut, std::ios::binary | std::ios::trunc) << bytes;
        CHECK_THROWS_AS(load_checkpoint(arch, cut.string()), FormatError);
        fs::remove(cut);
    }
    SUBCASE("trailing garbage") {
        std::string bytes;
        {
            std::ifstream in(path, std::ios::binary);
            bytes.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        }
        bytes.push_back('\0');
        const fs::path tail = temp_file("trailing.bin");
        std::ofstream(tail, std::ios::binary | std::ios::trunc) << bytes;
        CHECK_THROWS_AS(load_checkpoint(arch, tail.string()), FormatError);
        fs::remove(tail);
    }
    fs::remove(path);
}
