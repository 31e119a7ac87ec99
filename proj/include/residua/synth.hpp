#pragma once

#include <cstdint>
#include <string>

#include "residua/data.hpp"
#include "residua/tensor.hpp"

namespace residua {

/// One oriented sinusoid of the base texture.
struct TextureWave {
    float cycles = 3.0f;           // periods across the image width
    float orientation_deg = 0.0f;  // wavefront normal direction
    float amplitude = 0.1f;        // contribution around the 0.5 mean, <= 0.15
};

/// Deterministic texture-with-defects dataset description. The defaults give
/// a set that trains in minutes while keeping defects clearly salient: the
/// intensity shift must stay at least three noise sigmas.
struct SynthConfig {
    int h = 64;
    int w = 64;
    TextureWave wave1{3.0f, 30.0f, 0.12f};
    TextureWave wave2{7.0f, 115.0f, 0.06f};
    float noise_sigma = 0.03f;

    int defect_min_len = 15;   // polyline steps, px
    int defect_max_len = 40;
    int defect_min_width = 1;  // stamp side, px
    int defect_max_width = 2;
    float defect_delta = 0.35f;  // intensity shift magnitude; sign is drawn

    int n_train = 200;
    int n_val = 20;
    int n_test_normal = 50;
    int n_test_anomalous = 50;
    std::uint64_t seed = 0;
};

/// ValueError when the config violates its invariants (dimensions not
/// multiples of 8 or under 24, amplitudes over 0.15, delta under 3 sigma, ...).
void validate_synth_config(const SynthConfig& cfg);

/// Defect-free texture for global image index idx: 0.5 + the two waves with
/// per-image random phases + Gaussian noise, clipped to [0, 1].
Tensor4 render_base(const SynthConfig& cfg, std::uint64_t idx);

struct DefectImage {
    Tensor4 image;
    SegMask mask;
};

/// The anomalous twin of render_base(cfg, idx): identical off the defect, a
/// random-walk polyline shifted by ±defect_delta on it. The mask marks the
/// shifted pixels exactly.
DefectImage render_defect(const SynthConfig& cfg, std::uint64_t idx);

/// Write the whole dataset (images, masks, manifest.tsv) under out_dir and
/// return the manifest. Bitwise deterministic for a given config.
DatasetManifest gen_synthetic(const SynthConfig& cfg, const std::string& out_dir);

} // namespace residua
