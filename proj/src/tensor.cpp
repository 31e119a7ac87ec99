#include "residua/tensor.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace residua {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_dims(Shape4 s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
        throw ShapeError("tensor dims must all be >= 1, got (" + std::to_string(s.n) + "," +
                         std::to_string(s.c) + "," + std::to_string(s.h) + "," +
                         std::to_string(s.w) + ")");
    }
}

void check_same_shape(const Tensor4& a, const Tensor4& b, const char* what) {
    if (!(a.shape == b.shape)) {
        throw ShapeError(std::string(what) + ": shape mismatch");
    }
}

} // namespace

Tensor4::Tensor4(int n, int c, int h, int w, float fill) : Tensor4(Shape4{n, c, h, w}, fill) {}

Tensor4::Tensor4(Shape4 s, float fill) : shape(s) {
    check_dims(s);
    data.assign(static_cast<std::size_t>(s.numel()), fill);
}

bool Tensor4::all_finite() const {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::uint64_t Rng::next_u64() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double Rng::next_uniform() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double Rng::next_normal() {
    double u1 = next_uniform();
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

std::uint32_t Rng::next_below(std::uint32_t n) {
    if (n == 0) throw ValueError("Rng::next_below: n must be > 0");
    return static_cast<std::uint32_t>(next_u64() % n);
}

Rng Rng::stream(std::uint64_t seed, std::uint64_t k) {
    Rng mixer(seed ^ (0x9e3779b97f4a7c15ull * (k + 0x632be59bd9b4e019ull)));
    return Rng(mixer.next_u64());
}

Tensor4 tensor_fill(Shape4 shape, float value) {
    return Tensor4(shape, value);
}

Tensor4 randn(Shape4 shape, Rng& rng, float mean, float std) {
    if (std < 0.0f) throw ValueError("randn: std must be >= 0");
    Tensor4 out(shape);
    for (float& v : out.data) {
        v = mean + std * static_cast<float>(rng.next_normal());
    }
    return out;
}

Tensor4 elementwise(const Tensor4& a, const Tensor4& b, BinaryOp op) {
    check_same_shape(a, b, "elementwise");
    Tensor4 out(a.shape);
    const float* pa = a.ptr();
    const float* pb = b.ptr();
    float* po = out.ptr();
    const std::int64_t n = a.size();
    switch (op) {
        case BinaryOp::Add:
            for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
            break;
        case BinaryOp::Sub:
            for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
            break;
        case BinaryOp::Mul:
            for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
            break;
    }
    return out;
}

Tensor4 channel_concat(const Tensor4& a, const Tensor4& b) {
    if (a.shape.n != b.shape.n || a.shape.h != b.shape.h || a.shape.w != b.shape.w) {
        throw ShapeError("channel_concat: batch/spatial dims must match");
    }
    Tensor4 out(a.shape.n, a.shape.c + b.shape.c, a.shape.h, a.shape.w);
    const std::int64_t plane = static_cast<std::int64_t>(a.shape.h) * a.shape.w;
    for (int n = 0; n < a.shape.n; ++n) {
        std::memcpy(out.plane(n, 0), a.plane(n, 0), sizeof(float) * plane * a.shape.c);
        std::memcpy(out.plane(n, a.shape.c), b.plane(n, 0), sizeof(float) * plane * b.shape.c);
    }
    return out;
}

Tensor4 zero_pad(const Tensor4& x, int pad) {
    if (pad < 0) throw ValueError("zero_pad: pad must be >= 0");
    if (pad == 0) return x;
    Tensor4 out(x.shape.n, x.shape.c, x.shape.h + 2 * pad, x.shape.w + 2 * pad);
    for (int n = 0; n < x.shape.n; ++n) {
        for (int c = 0; c < x.shape.c; ++c) {
            const float* src = x.plane(n, c);
            float* dst = out.plane(n, c) + static_cast<std::int64_t>(pad) * out.shape.w + pad;
            for (int h = 0; h < x.shape.h; ++h) {
                std::memcpy(dst + static_cast<std::int64_t>(h) * out.shape.w,
                            src + static_cast<std::int64_t>(h) * x.shape.w,
                            sizeof(float) * x.shape.w);
            }
        }
    }
    return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.next_below(static_cast<std::uint32_t>(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

} // namespace residua
