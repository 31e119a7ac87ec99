#include "doctest.h"

#include <cmath>
#include <cstring>

#include "residua/errors.hpp"
#include "residua/tensor.hpp"

using namespace residua;

TEST_CASE("tensor_fill basic") {
    Tensor4 z = tensor_fill({1, 1, 2, 2}, 0.0f);
    CHECK(z.data.size() == 4);
    for (float v : z.data) CHECK(v == 0.0f);

    Tensor4 s = tensor_fill({1, 1, 1, 1}, 3.5f);
    CHECK(s.data.size() == 1);
    CHECK(s.data[0] == 3.5f);

    Tensor4 ones = tensor_fill({2, 3, 4, 5}, 1.0f);
    CHECK(ones.data.size() == 120);
    double sum = 0.0;
    for (float v : ones.data) sum += v;
    CHECK(sum == 120.0);
}

TEST_CASE("tensor_fill rejects zero dims") {
    CHECK_THROWS_AS(tensor_fill({0, 1, 2, 2}, 0.0f), ShapeError);
    CHECK_THROWS_AS(tensor_fill({1, 1, 0, 2}, 0.0f), ShapeError);
}

TEST_CASE("randn degenerate std") {
    Rng rng(7);
    Tensor4 t = randn({1, 2, 3, 3}, rng, 1.25f, 0.0f);
    for (float v : t.data) CHECK(v == 1.25f);
}

TEST_CASE("randn determinism") {
    Rng a(123), b(123);
    Tensor4 ta = randn({2, 1, 4, 4}, a, 0.0f, 1.0f);
    Tensor4 tb = randn({2, 1, 4, 4}, b, 0.0f, 1.0f);
    CHECK(std::memcmp(ta.data.data(), tb.data.data(),
                      ta.data.size() * sizeof(float)) == 0);
}

TEST_CASE("randn sample statistics, seed 42") {
    Rng rng(42);
    Tensor4 t = randn({1, 1, 100, 100}, rng, 0.0f, 1.0f);
    double mean = 0.0;
    for (float v : t.data) mean += v;
    mean /= static_cast<double>(t.data.size());
    double var = 0.0;
    for (float v : t.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(t.data.size());
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 0.05);
}

TEST_CASE("randn rejects negative std") {
    Rng rng(1);
    CHECK_THROWS_AS(randn({1, 1, 1, 1}, rng, 0.0f, -1.0f), ValueError);
}

TEST_CASE("elementwise sub and mul") {
    Rng rng(5);
    Tensor4 x = randn({1, 2, 3, 3}, rng, 0.0f, 1.0f);
    Tensor4 d = elementwise(x, x, BinaryOp::Sub);
    for (float v : d.data) CHECK(v == 0.0f);

    Tensor4 a = tensor_fill({1, 1, 1, 1}, 0.8f);
    Tensor4 b = tensor_fill({1, 1, 1, 1}, 0.5f);
    Tensor4 r = elementwise(a, b, BinaryOp::Sub);
    CHECK(r.data[0] == doctest::Approx(0.3f));

    Tensor4 m1(Shape4{1, 1, 1, 2});
    m1.data = {2.0f, 3.0f};
    Tensor4 m2(Shape4{1, 1, 1, 2});
    m2.data = {4.0f, 5.0f};
    Tensor4 p = elementwise(m1, m2, BinaryOp::Mul);
    CHECK(p.data[0] == 8.0f);
    CHECK(p.data[1] == 15.0f);
}

TEST_CASE("elementwise shape mismatch") {
    Tensor4 a = tensor_fill({1, 1, 2, 2}, 0.0f);
    Tensor4 b = tensor_fill({1, 1, 2, 3}, 0.0f);
    CHECK_THROWS_AS(elementwise(a, b, BinaryOp::Add), ShapeError);
}

TEST_CASE("elementwise sub then add round trip") {
    Rng rng(9);
    Tensor4 x = randn({1, 2, 4, 4}, rng, 0.0f, 1.0f);
    Tensor4 y = randn({1, 2, 4, 4}, rng, 0.0f, 1.0f);
    Tensor4 back = elementwise(elementwise(x, y, BinaryOp::Sub), y, BinaryOp::Add);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(x.data[i]).epsilon(1e-6));
}

TEST_CASE("channel_concat shapes and ordering") {
    Rng rng(11);
    Tensor4 a = randn({1, 2, 4, 4}, rng, 0.0f, 1.0f);
    Tensor4 b = randn({1, 3, 4, 4}, rng, 0.0f, 1.0f);
    Tensor4 c = channel_concat(a, b);
    CHECK(c.shape == Shape4{1, 5, 4, 4});
    for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w)
            CHECK(c.at(0, 0, h, w) == a.at(0, 0, h, w));

    Tensor4 z = tensor_fill({1, 2, 4, 4}, 0.0f);
    Tensor4 az = channel_concat(a, z);
    for (int ch = 0; ch < 2; ++ch)
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 4; ++w)
                CHECK(az.at(0, ch, h, w) == a.at(0, ch, h, w));
}

TEST_CASE("channel_concat associativity") {
    Rng rng(13);
    Tensor4 a = randn({2, 1, 3, 3}, rng, 0.0f, 1.0f);
    Tensor4 b = randn({2, 2, 3, 3}, rng, 0.0f, 1.0f);
    Tensor4 c = randn({2, 3, 3, 3}, rng, 0.0f, 1.0f);
    Tensor4 left = channel_concat(channel_concat(a, b), c);
    Tensor4 right = channel_concat(a, channel_concat(b, c));
    CHECK(left.shape == right.shape);
    CHECK(std::memcmp(left.data.data(), right.data.data(),
                      left.data.size() * sizeof(float)) == 0);
}

TEST_CASE("channel_concat mismatch") {
    Tensor4 a = tensor_fill({1, 1, 4, 4}, 0.0f);
    Tensor4 b = tensor_fill({1, 1, 5, 4}, 0.0f);
    CHECK_THROWS_AS(channel_concat(a, b), ShapeError);
    Tensor4 c = tensor_fill({2, 1, 4, 4}, 0.0f);
    CHECK_THROWS_AS(channel_concat(a, c), ShapeError);
}

TEST_CASE("zero_pad") {
    Rng rng(17);
    Tensor4 x = randn({1, 1, 2, 2}, rng, 0.0f, 1.0f);

    Tensor4 same = zero_pad(x, 0);
    CHECK(same.shape == x.shape);
    CHECK(std::memcmp(same.data.data(), x.data.data(),
                      x.data.size() * sizeof(float)) == 0);

    Tensor4 p = zero_pad(x, 1);
    CHECK(p.shape == Shape4{1, 1, 4, 4});
    CHECK(p.at(0, 0, 0, 0) == 0.0f);
    CHECK(p.at(0, 0, 0, 3) == 0.0f);
    CHECK(p.at(0, 0, 3, 0) == 0.0f);
    CHECK(p.at(0, 0, 3, 3) == 0.0f);
    CHECK(p.at(0, 0, 1, 1) == x.at(0, 0, 0, 0));

    double sx = 0.0, sp = 0.0;
    for (float v : x.data) sx += v;
    for (float v : p.data) sp += v;
    CHECK(sx == sp);

    CHECK_THROWS_AS(zero_pad(x, -1), ValueError);
}

TEST_CASE("rng streams are independent and deterministic") {
    Rng a = Rng::stream(42, 0);
    Rng b = Rng::stream(42, 0);
    Rng c = Rng::stream(42, 1);
    std::uint64_t va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
}

TEST_CASE("rng uniform in (0,1] and next_below bounded") {
    Rng rng(314);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.next_uniform();
        CHECK(u > 0.0);
        CHECK(u <= 1.0);
    }
    for (int i = 0; i < 1000; ++i) CHECK(rng.next_below(7) < 7);
    CHECK_THROWS_AS(rng.next_below(0), ValueError);
}

TEST_CASE("all_finite flags bad values") {
    Tensor4 t = tensor_fill({1, 1, 1, 2}, 1.0f);
    CHECK(t.all_finite());
    t.data[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
}
