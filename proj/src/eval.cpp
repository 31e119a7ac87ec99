#include "residua/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "residua/errors.hpp"
#include "residua/image.hpp"

namespace residua {

namespace {

void check_image_shape(const Tensor4& x, const char* what) {
    if (x.shape.n != 1 || x.shape.c != 1) {
        throw ShapeError(std::string(what) + " must be a (1, 1, h, w) tensor");
    }
}

void check_pair_geometry(const SegMask& pred, const SegMask& truth, std::size_t i) {
    if (pred.h != truth.h || pred.w != truth.w) {
        throw ShapeError("mask pair " + std::to_string(i) + " disagrees on size: " +
                         std::to_string(pred.h) + "x" + std::to_string(pred.w) + " vs " +
                         std::to_string(truth.h) + "x" + std::to_string(truth.w));
    }
}

void finish_rates(EvalReport& r) {
    r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
    r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
    const double denom = r.precision + r.recall;
    r.f1 = denom > 0.0 ? 2.0 * r.precision * r.recall / denom : 0.0;
}

void accumulate_counts(const SegMask& pred, const SegMask& truth, EvalReport& r) {
    for (std::size_t i = 0; i < pred.pix.size(); ++i) {
        const bool p = pred.pix[i] != 0;
        const bool t = truth.pix[i] != 0;
        r.tp += (p && t);
        r.fp += (p && !t);
        r.fn += (!p && t);
        r.tn += (!p && !t);
    }
}

double max_abs_residual(const std::vector<ResidualMap>& residuals) {
    double top = 0.0;
    for (const ResidualMap& r : residuals) {
        for (float v : r.values) {
            top = std::max(top, static_cast<double>(std::abs(v)));
        }
    }
    return top;
}

} // namespace

ThresholdPolicy ThresholdPolicy::fixed(float t) {
    if (!(t >= 0.0f)) {
        throw ValueError("fixed threshold must be >= 0");
    }
    ThresholdPolicy p;
    p.kind = Kind::Fixed;
    p.t = t;
    return p;
}

ThresholdPolicy ThresholdPolicy::stat(float k) {
    if (!std::isfinite(k)) {
        throw ValueError("stat policy factor must be finite");
    }
    ThresholdPolicy p;
    p.kind = Kind::Stat;
    p.k = k;
    return p;
}

ThresholdPolicy ThresholdPolicy::sweep(std::vector<float> grid) {
    if (grid.empty()) {
        throw ValueError("sweep grid is empty");
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] >= 0.0f)) {
            throw ValueError("sweep grid values must be >= 0");
        }
        if (i > 0 && !(grid[i] > grid[i - 1])) {
            throw ValueError("sweep grid must be strictly increasing");
        }
    }
    ThresholdPolicy p;
    p.kind = Kind::Sweep;
    p.grid = std::move(grid);
    return p;
}

ResidualMap residual_map(const Tensor4& x, const Tensor4& recon, std::string source) {
    check_image_shape(x, "input");
    check_image_shape(recon, "reconstruction");
    if (!(x.shape == recon.shape)) {
        throw ShapeError("input and reconstruction sizes differ: " +
                         std::to_string(x.shape.h) + "x" + std::to_string(x.shape.w) +
                         " vs " + std::to_string(recon.shape.h) + "x" +
                         std::to_string(recon.shape.w));
    }
    ResidualMap r;
    r.source = std::move(source);
    r.h = x.shape.h;
    r.w = x.shape.w;
    r.values.resize(x.data.size());
    for (std::size_t i = 0; i < r.values.size(); ++i) {
        r.values[i] = x.data[i] - recon.data[i];
        if (!std::isfinite(r.values[i])) {
            throw ValueError("non-finite residual value from " +
                             (r.source.empty() ? std::string("<unnamed>") : r.source));
        }
    }
    return r;
}

SegMask apply_threshold(const ResidualMap& r, float t) {
    if (!(t >= 0.0f)) {
        throw ValueError("threshold must be >= 0");
    }
    SegMask mask;
    mask.h = r.h;
    mask.w = r.w;
    mask.pix.resize(r.values.size());
    for (std::size_t i = 0; i < r.values.size(); ++i) {
        mask.pix[i] = std::abs(r.values[i]) > t ? 1 : 0;
    }
    return mask;
}

float select_threshold(const ThresholdPolicy& policy,
                       const std::vector<ResidualMap>& residuals,
                       const std::vector<SegMask>* truths) {
    switch (policy.kind) {
    case ThresholdPolicy::Kind::Fixed:
        return policy.t;
    case ThresholdPolicy::Kind::Stat: {
        std::size_t count = 0;
        double sum = 0.0;
        double sum_sq = 0.0;
        for (const ResidualMap& r : residuals) {
            for (float v : r.values) {
                const double a = std::abs(static_cast<double>(v));
                sum += a;
                sum_sq += a * a;
                ++count;
            }
        }
        if (count == 0) {
            throw ValueError("stat policy needs at least one residual map");
        }
        const double mean = sum / static_cast<double>(count);
        const double var = std::max(0.0, sum_sq / static_cast<double>(count) - mean * mean);
        return static_cast<float>(mean + policy.k * std::sqrt(var));
    }
    case ThresholdPolicy::Kind::Sweep: {
        if (truths == nullptr) {
            throw ValueError("sweep policy needs ground-truth masks");
        }
        const std::vector<SweepRow> table = sweep_table(residuals, *truths, policy.grid);
        float best_t = table.front().t;
        double best_f1 = -1.0;
        for (const SweepRow& row : table) {
            if (row.report.f1 >= best_f1) {
                best_f1 = row.report.f1;
                best_t = row.t;
            }
        }
        return best_t;
    }
    }
    throw ValueError("unknown threshold policy");
}

std::vector<SweepRow> sweep_table(const std::vector<ResidualMap>& residuals,
                                  const std::vector<SegMask>& truths,
                                  const std::vector<float>& grid) {
    ThresholdPolicy::sweep(grid);
    if (residuals.empty()) {
        throw ValueError("sweep needs at least one labeled residual map");
    }
    if (residuals.size() != truths.size()) {
        throw ValueError("sweep residual and truth lists are misaligned: " +
                         std::to_string(residuals.size()) + " vs " +
                         std::to_string(truths.size()));
    }
    std::vector<SweepRow> table;
    table.reserve(grid.size());
    for (float t : grid) {
        std::vector<SegMask> preds;
        preds.reserve(residuals.size());
        for (const ResidualMap& r : residuals) {
            preds.push_back(apply_threshold(r, t));
        }
        SweepRow row;
        row.t = t;
        row.report = evaluate_micro(preds, truths);
        table.push_back(std::move(row));
    }
    return table;
}

std::vector<float> default_sweep_grid(const std::vector<ResidualMap>& residuals, int count) {
    if (count < 1) {
        throw ValueError("sweep grid size must be >= 1");
    }
    const double top = max_abs_residual(residuals);
    if (top <= 0.0) {
        return {0.0f};
    }
    std::vector<float> grid;
    grid.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        grid.push_back(static_cast<float>(top * i / std::max(1, count - 1)));
    }
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
}

EvalReport evaluate_micro(const std::vector<SegMask>& preds,
                          const std::vector<SegMask>& truths) {
    if (preds.size() != truths.size()) {
        throw ValueError("prediction and truth lists are misaligned: " +
                         std::to_string(preds.size()) + " vs " +
                         std::to_string(truths.size()));
    }
    EvalReport report;
    report.granularity = Granularity::Aggregate;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        check_pair_geometry(preds[i], truths[i], i);
        accumulate_counts(preds[i], truths[i], report);
    }
    finish_rates(report);
    return report;
}

std::vector<EvalReport> evaluate_per_image(const std::vector<SegMask>& preds,
                                           const std::vector<SegMask>& truths) {
    if (preds.size() != truths.size()) {
        throw ValueError("prediction and truth lists are misaligned: " +
                         std::to_string(preds.size()) + " vs " +
                         std::to_string(truths.size()));
    }
    std::vector<EvalReport> reports;
    reports.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        check_pair_geometry(preds[i], truths[i], i);
        EvalReport report;
        report.granularity = Granularity::PerImage;
        accumulate_counts(preds[i], truths[i], report);
        finish_rates(report);
        reports.push_back(report);
    }
    return reports;
}

std::string report_kv(const EvalReport& report) {
    std::ostringstream os;
    os << "tp\t" << report.tp << "\n";
    os << "fp\t" << report.fp << "\n";
    os << "fn\t" << report.fn << "\n";
    os << "tn\t" << report.tn << "\n";
    os << std::setprecision(10);
    os << "precision\t" << report.precision << "\n";
    os << "recall\t" << report.recall << "\n";
    os << "f1\t" << report.f1 << "\n";
    return os.str();
}

void emit_overlay(const Tensor4& x, const ResidualMap& r, const SegMask& mask,
                  const SegMask* truth, const std::string& path) {
    check_image_shape(x, "input");
    const int h = x.shape.h;
    const int w = x.shape.w;
    if (r.h != h || r.w != w || mask.h != h || mask.w != w ||
        (truth != nullptr && (truth->h != h || truth->w != w))) {
        throw ShapeError("overlay panels disagree on size");
    }

    constexpr int kGutter = 4;
    constexpr std::uint8_t kGutterValue = 128;
    const int panels = truth != nullptr ? 4 : 3;

    GrayImage8 out;
    out.h = h;
    out.w = panels * w + (panels - 1) * kGutter;
    out.pix.assign(static_cast<std::size_t>(out.h) * out.w, kGutterValue);

    double top = 0.0;
    for (float v : r.values) {
        top = std::max(top, static_cast<double>(std::abs(v)));
    }

    const auto paint = [&](int panel, const auto& value_at) {
        const int x0 = panel * (w + kGutter);
        for (int y = 0; y < h; ++y) {
            for (int c = 0; c < w; ++c) {
                out.at(y, x0 + c) = value_at(y, c);
            }
        }
    };
    paint(0, [&](int y, int c) {
        const float v = std::clamp(x.at(0, 0, y, c), 0.0f, 1.0f);
        return static_cast<std::uint8_t>(std::lround(v * 255.0f));
    });
    paint(1, [&](int y, int c) {
        const double v = top > 0.0 ? std::abs(r.at(y, c)) / top : 0.0;
        return static_cast<std::uint8_t>(std::lround(v * 255.0));
    });
    paint(2, [&](int y, int c) { return mask.at(y, c) ? 255 : 0; });
    if (truth != nullptr) {
        paint(3, [&](int y, int c) { return truth->at(y, c) ? 255 : 0; });
    }
    save_pgm(out, path);
}

} // namespace residua
