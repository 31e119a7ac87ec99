#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "residua/tensor.hpp"

namespace residua {

/// Signed per-pixel difference input − reconstruction. Magnitudes are taken
/// only when a threshold is applied, so bright and dark defects both count.
struct ResidualMap {
    std::string source;
    int h = 0;
    int w = 0;
    std::vector<float> values;

    float at(int y, int x) const { return values[static_cast<std::size_t>(y) * w + x]; }
};

/// Binary segmentation, 1 == defect.
struct SegMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> pix;

    std::uint8_t& at(int y, int x) { return pix[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return pix[static_cast<std::size_t>(y) * w + x]; }
};

enum class Granularity { PerImage, Aggregate };

/// Pixel-level confusion counts with derived precision/recall/F1.
/// Degenerate denominators yield 0 rather than NaN.
struct EvalReport {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
    long long tn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    Granularity granularity = Granularity::Aggregate;
};

/// How the segmentation threshold is chosen.
struct ThresholdPolicy {
    enum class Kind { Fixed, Stat, Sweep };

    Kind kind = Kind::Fixed;
    float t = 0.0f;           // Fixed
    float k = 3.0f;           // Stat: t = mean + k * std of |R| over normal maps
    std::vector<float> grid;  // Sweep: candidate thresholds, strictly increasing

    static ThresholdPolicy fixed(float t);
    static ThresholdPolicy stat(float k);
    static ThresholdPolicy sweep(std::vector<float> grid);
};

/// R = input − reconstruction, both (1, 1, h, w).
ResidualMap residual_map(const Tensor4& x, const Tensor4& recon, std::string source = "");

/// mask[i] = 1 iff |r[i]| > t. Negative t is rejected.
SegMask apply_threshold(const ResidualMap& r, float t);

/// Resolve a policy to a concrete threshold. Stat pools |R| statistics over
/// the given maps (they must come from normal validation images); sweep
/// maximizes micro F1 against the aligned truths, ties toward the larger t.
float select_threshold(const ThresholdPolicy& policy,
                       const std::vector<ResidualMap>& residuals,
                       const std::vector<SegMask>* truths = nullptr);

/// One sweep candidate with the metrics it achieves.
struct SweepRow {
    float t = 0.0f;
    EvalReport report;
};

std::vector<SweepRow> sweep_table(const std::vector<ResidualMap>& residuals,
                                  const std::vector<SegMask>& truths,
                                  const std::vector<float>& grid);

/// count evenly spaced values covering [0, max |R|] over the maps.
std::vector<float> default_sweep_grid(const std::vector<ResidualMap>& residuals,
                                      int count = 64);

/// Micro aggregation: counts summed over all pairs, then one P/R/F1.
EvalReport evaluate_micro(const std::vector<SegMask>& preds,
                          const std::vector<SegMask>& truths);

/// One report per aligned pair.
std::vector<EvalReport> evaluate_per_image(const std::vector<SegMask>& preds,
                                           const std::vector<SegMask>& truths);

/// Flat key<TAB>value serialization: tp, fp, fn, tn, precision, recall, f1.
std::string report_kv(const EvalReport& report);

/// Side-by-side grayscale panel: input | residual heat | mask | truth (if
/// given), separated by 4 px mid-gray gutters, written as PGM.
void emit_overlay(const Tensor4& x, const ResidualMap& r, const SegMask& mask,
                  const SegMask* truth, const std::string& path);

} // namespace residua
