#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "residua/errors.hpp"
#include "residua/eval.hpp"
#include "residua/image.hpp"

using namespace residua;
namespace fs = std::filesystem;

namespace {

SegMask mask_of(int h, int w, std::initializer_list<int> ones) {
    SegMask m;
    m.h = h;
    m.w = w;
    m.pix.assign(static_cast<std::size_t>(h) * w, 0);
    for (int i : ones) {
        m.pix[static_cast<std::size_t>(i)] = 1;
    }
    return m;
}

SegMask random_mask(int h, int w, Rng& rng, double density) {
    SegMask m;
    m.h = h;
    m.w = w;
    m.pix.resize(static_cast<std::size_t>(h) * w);
    for (auto& p : m.pix) {
        p = rng.next_uniform() < density ? 1 : 0;
    }
    return m;
}

struct Counts {
    long long tp = 0, fp = 0, fn = 0, tn = 0;
};

// Deliberately naive per-pixel walk, kept independent of the library's
// accumulation so the two can disagree.
Counts count_by_hand(const SegMask& pred, const SegMask& truth) {
    Counts c;
    for (int y = 0; y < pred.h; ++y) {
        for (int x = 0; x < pred.w; ++x) {
            const bool p = pred.at(y, x) != 0;
            const bool t = truth.at(y, x) != 0;
            if (p && t) {
                ++c.tp;
            } else if (p && !t) {
                ++c.fp;
            } else if (!p && t) {
                ++c.fn;
            } else {
                ++c.tn;
            }
        }
    }
    return c;
}

ResidualMap residual_of(int h, int w, std::vector<float> values) {
    ResidualMap r;
    r.h = h;
    r.w = w;
    r.values = std::move(values);
    return r;
}

} // namespace

TEST_CASE("residual map is the signed pixel difference") {
    Tensor4 x(1, 1, 1, 3);
    x.data = {0.8f, 0.2f, 0.5f};
    Tensor4 recon(1, 1, 1, 3);
    recon.data = {0.5f, 0.6f, 0.5f};
    ResidualMap r = residual_map(x, recon, "probe");
    CHECK(r.source == "probe");
    CHECK(r.values[0] == doctest::Approx(0.3));
    CHECK(r.values[1] == doctest::Approx(-0.4));
    CHECK(r.values[2] == 0.0f);

    ResidualMap identity = residual_map(x, x);
    for (float v : identity.values) {
        CHECK(v == 0.0f);
    }

    Tensor4 other(1, 1, 1, 4);
    CHECK_THROWS_AS(residual_map(x, other), ShapeError);
    Tensor4 batch(2, 1, 1, 3);
    CHECK_THROWS_AS(residual_map(batch, batch), ShapeError);
}

TEST_CASE("threshold keeps magnitudes strictly above t") {
    ResidualMap r = residual_of(1, 3, {0.3f, -0.4f, 0.05f});
    SegMask m = apply_threshold(r, 0.1f);
    CHECK(m.pix == std::vector<std::uint8_t>{1, 1, 0});

    SegMask at_zero = apply_threshold(r, 0.0f);
    CHECK(at_zero.pix == std::vector<std::uint8_t>{1, 1, 1});

    ResidualMap flat = residual_of(2, 2, {0.0f, 0.0f, 0.0f, 0.0f});
    SegMask empty = apply_threshold(flat, 0.01f);
    for (auto p : empty.pix) {
        CHECK(p == 0);
    }

    CHECK_THROWS_AS(apply_threshold(r, -0.5f), ValueError);
}

TEST_CASE("masks shrink monotonically as the threshold grows") {
    Rng rng(404);
    ResidualMap r;
    r.h = 16;
    r.w = 16;
    r.values.resize(256);
    for (auto& v : r.values) {
        v = static_cast<float>(rng.next_normal() * 0.2);
    }
    float prev_t = 0.0f;
    SegMask prev = apply_threshold(r, prev_t);
    for (float t : {0.05f, 0.1f, 0.2f, 0.4f}) {
        SegMask cur = apply_threshold(r, t);
        long long cur_on = 0;
        long long prev_on = 0;
        for (std::size_t i = 0; i < cur.pix.size(); ++i) {
            CHECK(cur.pix[i] <= prev.pix[i]);
            cur_on += cur.pix[i];
            prev_on += prev.pix[i];
        }
        CHECK(cur_on <= prev_on);
        prev = cur;
    }
}

TEST_CASE("evaluate matches the hand counter on random masks") {
    Rng rng(505);
    for (int trial = 0; trial < 12; ++trial) {
        const int h = 1 + static_cast<int>(rng.next_below(32));
        const int w = 1 + static_cast<int>(rng.next_below(32));
        std::vector<SegMask> preds;
        std::vector<SegMask> truths;
        Counts expect;
        for (int i = 0; i < 3; ++i) {
            preds.push_back(random_mask(h, w, rng, 0.3));
            truths.push_back(random_mask(h, w, rng, 0.2));
            const Counts c = count_by_hand(preds.back(), truths.back());
            expect.tp += c.tp;
            expect.fp += c.fp;
            expect.fn += c.fn;
            expect.tn += c.tn;
        }
        const EvalReport rep = evaluate_micro(preds, truths);
        CHECK(rep.tp == expect.tp);
        CHECK(rep.fp == expect.fp);
        CHECK(rep.fn == expect.fn);
        CHECK(rep.tn == expect.tn);
        CHECK(rep.tp + rep.fp + rep.fn + rep.tn == 3LL * h * w);

        const double p = expect.tp + expect.fp > 0
                             ? double(expect.tp) / double(expect.tp + expect.fp)
                             : 0.0;
        const double q = expect.tp + expect.fn > 0
                             ? double(expect.tp) / double(expect.tp + expect.fn)
                             : 0.0;
        const double f = p + q > 0 ? 2 * p * q / (p + q) : 0.0;
        CHECK(rep.precision == doctest::Approx(p).epsilon(1e-12));
        CHECK(rep.recall == doctest::Approx(q).epsilon(1e-12));
        CHECK(rep.f1 == doctest::Approx(f).epsilon(1e-12));
    }
}

TEST_CASE("constructed confusion counts give the known f1") {
    // 2 TP, 1 FP, 2 FN on a 3x3 grid: P = 2/3, R = 1/2, F1 = 4/7.
    SegMask pred = mask_of(3, 3, {0, 1, 2});
    SegMask truth = mask_of(3, 3, {0, 1, 4, 5});
    EvalReport rep = evaluate_micro({pred}, {truth});
    CHECK(rep.tp == 2);
    CHECK(rep.fp == 1);
    CHECK(rep.fn == 2);
    CHECK(rep.tn == 4);
    CHECK(rep.precision == doctest::Approx(2.0 / 3.0));
    CHECK(rep.recall == doctest::Approx(0.5));
    CHECK(rep.f1 == doctest::Approx(4.0 / 7.0).epsilon(1e-9));
}

TEST_CASE("degenerate and perfect predictions") {
    SegMask truth = mask_of(2, 2, {1, 2});

    EvalReport perfect = evaluate_micro({truth}, {truth});
    CHECK(perfect.f1 == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);

    SegMask nothing = mask_of(2, 2, {});
    EvalReport miss = evaluate_micro({nothing}, {truth});
    CHECK(miss.precision == 0.0);
    CHECK(miss.recall == 0.0);
    CHECK(miss.f1 == 0.0);

    CHECK_THROWS_AS(evaluate_micro({truth, truth}, {truth}), ValueError);
    SegMask odd = mask_of(2, 3, {});
    CHECK_THROWS_AS(evaluate_micro({odd}, {truth}), ShapeError);
}

TEST_CASE("micro aggregate equals the per-image report for one image") {
    Rng rng(606);
    SegMask pred = random_mask(8, 8, rng, 0.4);
    SegMask truth = random_mask(8, 8, rng, 0.4);
    EvalReport micro = evaluate_micro({pred}, {truth});
    std::vector<EvalReport> per = evaluate_per_image({pred}, {truth});
    REQUIRE(per.size() == 1);
    CHECK(per[0].granularity == Granularity::PerImage);
    CHECK(micro.granularity == Granularity::Aggregate);
    CHECK(per[0].tp == micro.tp);
    CHECK(per[0].fp == micro.fp);
    CHECK(per[0].fn == micro.fn);
    CHECK(per[0].tn == micro.tn);
    CHECK(per[0].f1 == micro.f1);
}

TEST_CASE("fixed and stat policies resolve to hand values") {
    CHECK(select_threshold(ThresholdPolicy::fixed(0.25f), {}) == 0.25f);
    CHECK_THROWS_AS(ThresholdPolicy::fixed(-0.1f), ValueError);

    ResidualMap r = residual_of(1, 2, {0.1f, -0.3f});
    CHECK(select_threshold(ThresholdPolicy::stat(0.0f), {r}) == doctest::Approx(0.2));
    // mean 0.2, population std 0.1
    CHECK(select_threshold(ThresholdPolicy::stat(1.0f), {r}) == doctest::Approx(0.3));
    CHECK(select_threshold(ThresholdPolicy::stat(3.0f), {r}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(select_threshold(ThresholdPolicy::stat(0.0f), {}), ValueError);
}

TEST_CASE("sweep picks the best threshold and breaks ties upward") {
    // One defect pixel at 0.9, noise pixel at 0.2: t = 0.1 keeps the noise
    // (FP), larger t removes it while keeping the defect.
    ResidualMap r = residual_of(1, 4, {0.9f, 0.2f, 0.0f, 0.0f});
    std::vector<SegMask> truths = {mask_of(1, 4, {0})};

    const float picked =
        select_threshold(ThresholdPolicy::sweep({0.1f, 0.5f}), {r}, &truths);
    CHECK(picked == 0.5f);
}

TEST_CASE("sweep table rows cross-check against direct evaluation") {
    Rng rng(707);
    ResidualMap r;
    r.h = 12;
    r.w = 12;
    r.values.resize(144);
    for (auto& v : r.values) {
        v = static_cast<float>(rng.next_normal() * 0.15);
    }
    SegMask truth = random_mask(12, 12, rng, 0.2);

    const std::vector<float> grid = {0.0f, 0.05f, 0.1f, 0.2f, 0.3f};
    const auto table = sweep_table({r}, {truth}, grid);
    REQUIRE(table.size() == grid.size());
    long long prev_fp = table[0].report.fp;
    for (std::size_t i = 0; i < table.size(); ++i) {
        const EvalReport direct = evaluate_micro({apply_threshold(r, grid[i])}, {truth});
        CHECK(table[i].report.tp == direct.tp);
        CHECK(table[i].report.fp == direct.fp);
        CHECK(table[i].report.f1 == direct.f1);
        CHECK(table[i].report.fp <= prev_fp);
        prev_fp = table[i].report.fp;
    }

    CHECK_THROWS_AS(sweep_table({r}, {}, grid), ValueError);
    CHECK_THROWS_AS(ThresholdPolicy::sweep({}), ValueError);
    CHECK_THROWS_AS(ThresholdPolicy::sweep({0.2f, 0.1f}), ValueError);
    CHECK_THROWS_AS(select_threshold(ThresholdPolicy::sweep({0.1f}), {r}, nullptr),
                    ValueError);
}

TEST_CASE("sweep ties go to the larger threshold") {
    ResidualMap r = residual_of(1, 2, {0.9f, 0.0f});
    SegMask truth = mask_of(1, 2, {0});
    std::vector<SegMask> truths = {truth};
    // Both candidates give a perfect mask; the larger one must win.
    const float picked = select_threshold(ThresholdPolicy::sweep({0.1f, 0.2f}),
                                          {r}, &truths);
    CHECK(picked == 0.2f);
}

TEST_CASE("default sweep grid spans zero to the residual peak") {
    ResidualMap r = residual_of(1, 3, {0.1f, -0.63f, 0.2f});
    const auto grid = default_sweep_grid({r});
    REQUIRE(grid.size() == 64);
    CHECK(grid.front() == 0.0f);
    CHECK(grid.back() == doctest::Approx(0.63).epsilon(1e-6));
    for (std::size_t i = 1; i < grid.size(); ++i) {
        CHECK(grid[i] > grid[i - 1]);
    }

    ResidualMap flat = residual_of(1, 2, {0.0f, 0.0f});
    const auto degenerate = default_sweep_grid({flat});
    REQUIRE(degenerate.size() == 1);
    CHECK(degenerate[0] == 0.0f);
}

TEST_CASE("report serializes as key tab value lines") {
    EvalReport rep;
    rep.tp = 2;
    rep.fp = 1;
    rep.fn = 2;
    rep.tn = 4;
    rep.precision = 2.0 / 3.0;
    rep.recall = 0.5;
    rep.f1 = 4.0 / 7.0;
    const std::string text = report_kv(rep);
    std::istringstream is(text);
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "tp\t2");
    REQUIRE(std::getline(is, line));
    CHECK(line == "fp\t1");
    REQUIRE(std::getline(is, line));
    CHECK(line == "fn\t2");
    REQUIRE(std::getline(is, line));
    CHECK(line == "tn\t4");
    REQUIRE(std::getline(is, line));
    CHECK(line.substr(0, 10) == "precision\t");
    REQUIRE(std::getline(is, line));
    CHECK(line.substr(0, 7) == "recall\t");
    REQUIRE(std::getline(is, line));
    CHECK(line.substr(0, 3) == "f1\t");
}

TEST_CASE("overlay layout arithmetic and determinism") {
    const int hw = 64;
    Tensor4 x(1, 1, hw, hw, 0.5f);
    ResidualMap r;
    r.h = hw;
    r.w = hw;
    r.values.assign(static_cast<std::size_t>(hw) * hw, 0.0f);
    r.values[10] = 0.4f;
    SegMask mask = mask_of(hw, hw, {10});
    SegMask truth = mask_of(hw, hw, {10, 11});

    const fs::path three = fs::temp_directory_path() / "residua_overlay3.pgm";
    const fs::path four = fs::temp_directory_path() / "residua_overlay4.pgm";
    emit_overlay(x, r, mask, nullptr, three.string());
    emit_overlay(x, r, mask, &truth, four.string());

    GrayImage8 p3 = decode_gray8(three.string());
    CHECK(p3.h == hw);
    CHECK(p3.w == 3 * hw + 2 * 4);
    CHECK(p3.at(0, hw) == 128);
    CHECK(p3.at(0, 0) == 128);

    GrayImage8 p4 = decode_gray8(four.string());
    CHECK(p4.w == 4 * hw + 3 * 4);
    // Truth panel begins after three images and three gutters.
    CHECK(p4.at(0, 3 * (hw + 4) + 11) == 255);

    emit_overlay(x, r, mask, nullptr, three.string());
    GrayImage8 again = decode_gray8(three.string());
    CHECK(again.pix == p3.pix);

    SegMask small = mask_of(8, 8, {});
    CHECK_THROWS_AS(emit_overlay(x, r, small, nullptr, three.string()), ShapeError);
    fs::remove(three);
    fs::remove(four);
}
