#pragma once

#include <cstdint>
#include <vector>

#include "residua/errors.hpp"

namespace residua {

/// Rank-4 shape in NCHW order.
struct Shape4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    bool operator==(const Shape4&) const = default;
    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }
};

/// Dense rank-4 tensor, 32-bit float, row-major NCHW.
/// All dimensions are >= 1; data.size() == shape.numel().
struct Tensor4 {
    Shape4 shape;
    std::vector<float> data;

    Tensor4() = default;
    Tensor4(int n, int c, int h, int w, float fill = 0.0f);
    explicit Tensor4(Shape4 s, float fill = 0.0f);

    std::int64_t size() const { return shape.numel(); }

    std::int64_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::int64_t>(n) * shape.c + c) * shape.h + h) * shape.w + w;
    }
    float& at(int n, int c, int h, int w) { return data[index(n, c, h, w)]; }
    float at(int n, int c, int h, int w) const { return data[index(n, c, h, w)]; }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    /// Pointer to the start of one (n, c) plane.
    float* plane(int n, int c) { return data.data() + index(n, c, 0, 0); }
    const float* plane(int n, int c) const { return data.data() + index(n, c, 0, 0); }

    bool all_finite() const;
};

/// Deterministic generator: SplitMix64 over a 64-bit counter state.
/// The integer stream is identical on every platform for a given seed.
/// Gaussians come from uniforms via Box-Muller.
struct Rng {
    explicit Rng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64();
    /// Uniform double in (0, 1], 53-bit resolution.
    double next_uniform();
    /// Standard normal draw (consumes exactly two uniforms).
    double next_normal();
    /// Uniform integer in [0, n); n must be > 0.
    std::uint32_t next_below(std::uint32_t n);

    /// Independent deterministic stream k derived from a base seed.
    static Rng stream(std::uint64_t seed, std::uint64_t k);

    std::uint64_t state;
};

/// Fisher-Yates permutation of [0, n). std::shuffle is avoided because its
/// permutation is not pinned down across standard libraries.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

enum class BinaryOp { Add, Sub, Mul };

Tensor4 tensor_fill(Shape4 shape, float value);
Tensor4 randn(Shape4 shape, Rng& rng, float mean, float std);
Tensor4 elementwise(const Tensor4& a, const Tensor4& b, BinaryOp op);
/// Concatenate along the channel axis: a's channels first.
Tensor4 channel_concat(const Tensor4& a, const Tensor4& b);
/// Zero-pad the spatial dims by `pad` on every side.
Tensor4 zero_pad(const Tensor4& x, int pad);

} // namespace residua
