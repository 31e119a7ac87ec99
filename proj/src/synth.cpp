#include "residua/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "residua/errors.hpp"

namespace fs = std::filesystem;

namespace residua {

namespace {

// Stream tags: even streams feed the base texture, odd streams the defect,
// so a defect image shares its base bits with its defect-free twin.
Rng base_stream(const SynthConfig& cfg, std::uint64_t idx) {
    return Rng::stream(cfg.seed, idx * 2);
}

Rng defect_stream(const SynthConfig& cfg, std::uint64_t idx) {
    return Rng::stream(cfg.seed, idx * 2 + 1);
}

void check_wave(const TextureWave& wave) {
    if (!(wave.amplitude >= 0.0f) || wave.amplitude > 0.15f) {
        throw ValueError("texture amplitude must lie in [0, 0.15]");
    }
    if (!(wave.cycles > 0.0f)) {
        throw ValueError("texture cycle count must be positive");
    }
}

std::string index_name(const char* split, const char* label, int idx) {
    std::ostringstream os;
    os << split << "_" << label << "_";
    os.width(4);
    os.fill('0');
    os << idx;
    return os.str();
}

} // namespace

void validate_synth_config(const SynthConfig& cfg) {
    if (cfg.h < 24 || cfg.w < 24 || cfg.h % 8 != 0 || cfg.w % 8 != 0) {
        throw ValueError("synthetic image dims must be multiples of 8, at least 24");
    }
    check_wave(cfg.wave1);
    check_wave(cfg.wave2);
    if (!(cfg.noise_sigma >= 0.0f)) {
        throw ValueError("noise sigma must be >= 0");
    }
    if (cfg.defect_min_len < 1 || cfg.defect_max_len < cfg.defect_min_len) {
        throw ValueError("defect length range is empty");
    }
    if (cfg.defect_min_width < 1 || cfg.defect_max_width < cfg.defect_min_width ||
        cfg.defect_max_width > 8) {
        throw ValueError("defect width range is empty or unreasonably wide");
    }
    if (!(cfg.defect_delta > 0.0f) || cfg.defect_delta > 1.0f) {
        throw ValueError("defect delta must lie in (0, 1]");
    }
    if (cfg.defect_delta < 3.0f * cfg.noise_sigma) {
        throw ValueError("defect delta must be at least 3 noise sigmas to stay salient");
    }
    if (cfg.n_train < 0 || cfg.n_val < 0 || cfg.n_test_normal < 0 ||
        cfg.n_test_anomalous < 0) {
        throw ValueError("image counts must be >= 0");
    }
    if (cfg.n_train + cfg.n_val + cfg.n_test_normal + cfg.n_test_anomalous < 1) {
        throw ValueError("the dataset needs at least one image");
    }
}

Tensor4 render_base(const SynthConfig& cfg, std::uint64_t idx) {
    validate_synth_config(cfg);
    Rng rng = base_stream(cfg, idx);
    const double phase1 = rng.next_uniform() * 2.0 * std::numbers::pi;
    const double phase2 = rng.next_uniform() * 2.0 * std::numbers::pi;

    Tensor4 out(1, 1, cfg.h, cfg.w);
    const auto wave_term = [&](const TextureWave& wave, double phase, int y, int x) {
        const double rad = wave.orientation_deg * std::numbers::pi / 180.0;
        const double along = x * std::cos(rad) + y * std::sin(rad);
        return wave.amplitude *
               std::sin(2.0 * std::numbers::pi * wave.cycles * along / cfg.w + phase);
    };
    for (int y = 0; y < cfg.h; ++y) {
        for (int x = 0; x < cfg.w; ++x) {
            double v = 0.5 + wave_term(cfg.wave1, phase1, y, x) +
                       wave_term(cfg.wave2, phase2, y, x) +
                       cfg.noise_sigma * rng.next_normal();
            out.at(0, 0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

DefectImage render_defect(const SynthConfig& cfg, std::uint64_t idx) {
    DefectImage result;
    result.image = render_base(cfg, idx);
    result.mask.h = cfg.h;
    result.mask.w = cfg.w;
    result.mask.pix.assign(static_cast<std::size_t>(cfg.h) * cfg.w, 0);

    Rng rng = defect_stream(cfg, idx);
    const int len = cfg.defect_min_len +
                    static_cast<int>(rng.next_below(
                        static_cast<std::uint32_t>(cfg.defect_max_len - cfg.defect_min_len + 1)));
    const int width = cfg.defect_min_width +
                      static_cast<int>(rng.next_below(static_cast<std::uint32_t>(
                          cfg.defect_max_width - cfg.defect_min_width + 1)));
    const float delta = rng.next_below(2) == 0 ? cfg.defect_delta : -cfg.defect_delta;

    double y = 1.0 + rng.next_uniform() * (cfg.h - 2 - width);
    double x = 1.0 + rng.next_uniform() * (cfg.w - 2 - width);
    double heading = rng.next_uniform() * 2.0 * std::numbers::pi;

    const auto stamp = [&](double cy, double cx) {
        const int top = std::clamp(static_cast<int>(std::lround(cy)), 0, cfg.h - width);
        const int left = std::clamp(static_cast<int>(std::lround(cx)), 0, cfg.w - width);
        for (int dy = 0; dy < width; ++dy) {
            for (int dx = 0; dx < width; ++dx) {
                result.mask.at(top + dy, left + dx) = 1;
            }
        }
    };

    for (int step = 0; step < len; ++step) {
        stamp(y, x);
        heading += 0.35 * rng.next_normal();
        y = std::clamp(y + std::sin(heading), 0.0, cfg.h - 1.0);
        x = std::clamp(x + std::cos(heading), 0.0, cfg.w - 1.0);
    }

    for (int py = 0; py < cfg.h; ++py) {
        for (int px = 0; px < cfg.w; ++px) {
            if (result.mask.at(py, px)) {
                const float v = result.image.at(0, 0, py, px) + delta;
                result.image.at(0, 0, py, px) = std::clamp(v, 0.0f, 1.0f);
            }
        }
    }
    return result;
}

DatasetManifest gen_synthetic(const SynthConfig& cfg, const std::string& out_dir) {
    validate_synth_config(cfg);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) {
        throw IoError("cannot create output directory: " + out_dir);
    }

    DatasetManifest manifest;
    manifest.root = fs::path(out_dir).generic_string();

    std::uint64_t global = 0;
    const auto emit_normal = [&](const char* split_word, Split split, int count) {
        for (int i = 0; i < count; ++i, ++global) {
            const std::string stem = index_name(split_word, "normal", i);
            ImageRecord rec;
            rec.path = stem + ".pgm";
            rec.split = split;
            save_grayscale(render_base(cfg, global), resolve_path(manifest, rec.path));
            manifest.records.push_back(std::move(rec));
        }
    };
    emit_normal("train", Split::Train, cfg.n_train);
    emit_normal("val", Split::Val, cfg.n_val);
    emit_normal("test", Split::Test, cfg.n_test_normal);
    for (int i = 0; i < cfg.n_test_anomalous; ++i, ++global) {
        const std::string stem = index_name("test", "anomalous", i);
        ImageRecord rec;
        rec.path = stem + ".pgm";
        rec.split = Split::Test;
        rec.label = Label::Anomalous;
        rec.mask_path = stem + "_mask.pgm";
        const DefectImage made = render_defect(cfg, global);
        save_grayscale(made.image, resolve_path(manifest, rec.path));
        save_mask(made.mask, resolve_path(manifest, rec.mask_path));
        manifest.records.push_back(std::move(rec));
    }

    validate_manifest(manifest, true);
    save_manifest(manifest, (fs::path(out_dir) / "manifest.tsv").string());
    return manifest;
}

} // namespace residua
