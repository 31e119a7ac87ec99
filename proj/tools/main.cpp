// residua command-line pipeline: synthetic data generation, dataset
// preparation, training, inference, threshold sweeps, and evaluation.
//
// Exit codes: 0 success, 1 runtime or data error, 2 usage error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "residua/data.hpp"
#include "residua/errors.hpp"
#include "residua/eval.hpp"
#include "residua/hostenv.hpp"
#include "residua/image.hpp"
#include "residua/model.hpp"
#include "residua/synth.hpp"
#include "residua/tensor.hpp"
#include "residua/train.hpp"

namespace fs = std::filesystem;
using namespace residua;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

// Predicted-mask file name for a manifest-relative image path: path
// separators collapse to "__" so flat prediction directories stay
// collision-free across dataset subdirectories.
std::string mask_file_name(const std::string& rel) {
    std::string stem = rel;
    const std::size_t dot = stem.find_last_of('.');
    const std::size_t sep = stem.find_last_of("/\\");
    if (dot != std::string::npos && (sep == std::string::npos || dot > sep)) {
        stem.resize(dot);
    }
    for (char& c : stem) {
        if (c == '/' || c == '\\') c = '_';
    }
    return stem + "_mask.pgm";
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw IoError("write to '" + path + "' failed");
}

// Resolved settings of one subcommand as flat `key = value` lines, loadable
// back through --config. Values with spaces are quoted.
std::string resolved_config_text(const CLI::App& cmd) {
    std::ostringstream os;
    for (const CLI::Option* opt : cmd.get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string name = opt->get_lnames().front();
        if (name == "help" || name == "config") continue;
        std::vector<std::string> values = opt->results();
        if (values.empty()) {
            if (opt->get_expected_min() == 0) {
                values.push_back("false");  // unpassed flag
            } else if (!opt->get_default_str().empty()) {
                values.push_back(opt->get_default_str());
            } else {
                continue;  // optional value never supplied
            }
        } else if (opt->get_expected_min() == 0) {
            values.assign(1, "true");
        }
        os << name << " =";
        for (const std::string& v : values) {
            const bool quote = v.empty() || v.find_first_of(" \t#\"") != std::string::npos;
            os << ' ' << (quote ? "\"" + v + "\"" : v);
        }
        os << '\n';
    }
    return os.str();
}

void echo_config(const CLI::App& cmd, const std::string& run_dir) {
    write_text((fs::path(run_dir) / "config.resolved").string(), resolved_config_text(cmd));
}

// Splits a config value into argv-style tokens; double quotes group a token
// that holds whitespace.
std::vector<std::string> split_config_value(const std::string& v, const std::string& where) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    bool token_started = false;
    for (char c : v) {
        if (quoted) {
            if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
            token_started = true;
        } else if (c == ' ' || c == '\t') {
            if (token_started) out.push_back(cur);
            cur.clear();
            token_started = false;
        } else {
            cur += c;
            token_started = true;
        }
    }
    if (quoted) throw FormatError(where + ": unterminated quote");
    if (token_started) out.push_back(cur);
    return out;
}

struct ConfigEntry {
    std::string key;
    std::vector<std::string> values;
};

std::string trimmed(const std::string& s) {
    const std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Flat `key = value` lines with # comments. Optional [section] headers scope
// the keys below them to one subcommand; keys under a foreign section are
// skipped, keys before any section apply everywhere.
std::vector<ConfigEntry> read_config_file(const std::string& path, const std::string& subcmd) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::vector<ConfigEntry> entries;
    std::string line;
    int lineno = 0;
    bool active = true;
    while (std::getline(in, line)) {
        lineno += 1;
        const std::string where = path + " line " + std::to_string(lineno);
        line = trimmed(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw FormatError(where + ": unterminated section header");
            active = trimmed(line.substr(1, line.size() - 2)) == subcmd;
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(where + ": expected key = value");
        const std::string key = trimmed(line.substr(0, eq));
        if (key.empty()) throw FormatError(where + ": empty key");
        if (!active) continue;
        entries.push_back({key, split_config_value(trimmed(line.substr(eq + 1)), where)});
    }
    return entries;
}

// Replaces `--config <file>` with the file's settings as ordinary tokens,
// skipping keys the command line already provides so flags keep precedence.
std::vector<std::string> expand_args(int argc, char** argv,
                                     const std::vector<std::string>& sub_names) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::size_t sub_at = args.size();
    std::string subcmd;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (std::find(sub_names.begin(), sub_names.end(), args[i]) != sub_names.end()) {
            sub_at = i;
            subcmd = args[i];
            break;
        }
    }
    if (sub_at == args.size()) return args;

    std::string cfg_path;
    for (std::size_t i = sub_at + 1; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw ValueError("--config needs a file path");
            cfg_path = args[i + 1];
            args.erase(args.begin() + i, args.begin() + i + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            cfg_path = args[i].substr(9);
            args.erase(args.begin() + i);
            break;
        }
    }
    if (cfg_path.empty()) return args;

    for (const ConfigEntry& entry : read_config_file(cfg_path, subcmd)) {
        const std::string flag = "--" + entry.key;
        bool given = false;
        for (std::size_t i = sub_at + 1; i < args.size() && !given; ++i) {
            given = args[i] == flag || args[i].rfind(flag + "=", 0) == 0;
        }
        if (given) continue;
        if (entry.values.size() == 1 && entry.values[0] == "false") continue;
        args.push_back(flag);
        if (!(entry.values.size() == 1 && entry.values[0] == "true")) {
            for (const std::string& v : entry.values) args.push_back(v);
        }
    }
    return args;
}

std::optional<Split> parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    return std::nullopt;  // "all"
}

std::vector<ImageRecord> select_records(const DatasetManifest& m, const std::string& split) {
    std::optional<Split> want = parse_split(split);
    std::vector<ImageRecord> out;
    for (const ImageRecord& r : m.records) {
        if (!want || r.split == *want) out.push_back(r);
    }
    return out;
}

ResidualMap compute_residual(const ArchitectureSpec& arch, ParamStore& params, const Tensor4& x,
                             const std::string& source) {
    ForwardResult fr = forward(arch, params, x, Mode::Eval);
    return residual_map(x, fr.reconstruction, source);
}

// Ground truth for a record: its mask file when present, all-background
// otherwise (normal images have no defect pixels by definition).
SegMask truth_for(const DatasetManifest& m, const ImageRecord& rec, int h, int w) {
    if (rec.mask_path.empty()) {
        SegMask zero;
        zero.h = h;
        zero.w = w;
        zero.pix.assign(static_cast<std::size_t>(h) * w, 0);
        return zero;
    }
    SegMask truth = load_mask(resolve_path(m, rec.mask_path));
    if (truth.h != h || truth.w != w) {
        throw ShapeError("mask " + rec.mask_path + " is " + std::to_string(truth.h) + "x" +
                         std::to_string(truth.w) + " but image " + rec.path + " is " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    return truth;
}

struct PolicySpec {
    ThresholdPolicy policy;
    bool needs_normal_val = false;
};

// "fixed:<t>", "stat", or "stat:<k>".
PolicySpec parse_policy(const std::string& text) {
    const std::size_t colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string tail = colon == std::string::npos ? "" : text.substr(colon + 1);
    auto parse_float = [&](const std::string& s) {
        std::size_t used = 0;
        float v = 0.0f;
        try {
            v = std::stof(s, &used);
        } catch (const std::exception&) {
            throw ValueError("policy '" + text + "': cannot parse number '" + s + "'");
        }
        if (used != s.size()) {
            throw ValueError("policy '" + text + "': cannot parse number '" + s + "'");
        }
        return v;
    };
    if (head == "fixed") {
        if (tail.empty()) throw ValueError("policy 'fixed' needs a value, e.g. fixed:0.25");
        return {ThresholdPolicy::fixed(parse_float(tail)), false};
    }
    if (head == "stat") {
        PolicySpec spec{ThresholdPolicy::stat(tail.empty() ? 3.0f : parse_float(tail)), true};
        return spec;
    }
    throw ValueError("unknown policy '" + text + "' (expected fixed:<t> or stat[:<k>])");
}

int usage_error(const std::string& msg) {
    std::cerr << "usage error: " << msg << "\n";
    return kExitUsage;
}

// ---------------------------------------------------------------- gen-synth

struct GenSynthArgs {
    std::string out;
    SynthConfig cfg;
};

int cmd_gen_synth(const CLI::App& cmd, const GenSynthArgs& a) {
    try {
        validate_synth_config(a.cfg);
    } catch (const ValueError& e) {
        return usage_error(e.what());
    }
    DatasetManifest m = gen_synthetic(a.cfg, a.out);
    echo_config(cmd, a.out);
    int by_split[3] = {0, 0, 0};
    int anomalous = 0;
    for (const ImageRecord& r : m.records) {
        by_split[static_cast<int>(r.split)] += 1;
        if (r.label == Label::Anomalous) anomalous += 1;
    }
    std::cout << "manifest " << (fs::path(a.out) / "manifest.tsv").string() << "\n"
              << "train " << by_split[static_cast<int>(Split::Train)] << "\n"
              << "val " << by_split[static_cast<int>(Split::Val)] << "\n"
              << "test " << by_split[static_cast<int>(Split::Test)] << "\n"
              << "anomalous " << anomalous << "\n";
    return 0;
}

// ------------------------------------------------------------------ prepare

struct PrepareArgs {
    std::string root;
    std::string layout = "flat";
    std::string out;
    std::uint64_t seed = 0;
    SplitFracs fracs;
    int patch_h = 200;
    int patch_w = 160;
};

int cmd_prepare(const PrepareArgs& a) {
    Layout layout;
    if (a.layout == "flat") {
        layout = Layout::Flat;
    } else if (a.layout == "dagm") {
        layout = Layout::DagmLike;
    } else if (a.layout == "rsdds") {
        layout = Layout::RsddsLike;
    } else {
        return usage_error("unknown layout '" + a.layout + "'");
    }
    std::vector<std::string> warnings;
    DatasetManifest m;
    try {
        m = build_manifest(a.root, layout, a.fracs, a.seed, &warnings, a.patch_h, a.patch_w);
    } catch (const ValueError& e) {
        return usage_error(e.what());
    }
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
    const std::string out =
        a.out.empty() ? (fs::path(a.root) / "manifest.tsv").string() : a.out;
    save_manifest(m, out);
    std::cout << "manifest " << out << "\n"
              << "records " << m.records.size() << "\n";
    return 0;
}

// -------------------------------------------------------------------- train

struct TrainArgs {
    std::string manifest;
    std::string out;
    TrainConfig cfg;
};

int cmd_train(const CLI::App& cmd, const TrainArgs& a) {
    DatasetManifest m = load_manifest(a.manifest);
    validate_manifest(m, true);
    std::vector<TrainSample> samples;
    for (const ImageRecord& r : m.records) {
        if (r.split != Split::Train) continue;
        TrainSample s;
        s.source = r.path;
        s.anomalous = r.label == Label::Anomalous;
        s.image = load_grayscale(resolve_path(m, r.path));
        samples.push_back(std::move(s));
    }
    if (samples.empty()) {
        throw DataError("train split of '" + a.manifest + "' is empty");
    }
    ArchitectureSpec arch = build_default_architecture();
    Rng rng(a.cfg.seed);
    ParamStore params = init_params(arch, rng);
    TrainOutcome outcome = train(arch, params, samples, a.cfg);

    fs::create_directories(a.out);
    const std::string ckpt = (fs::path(a.out) / "model.aeckpt").string();
    save_checkpoint(arch, params, ckpt);
    write_text((fs::path(a.out) / "train.log").string(), train_log_tsv(outcome.log));
    echo_config(cmd, a.out);
    std::cout << "checkpoint " << ckpt << "\n"
              << "epochs " << outcome.log.mean_loss.size() << "\n"
              << "final_epoch_loss " << fmt(outcome.log.mean_loss.back()) << "\n";
    return 0;
}

// -------------------------------------------------------------------- infer

struct InferArgs {
    std::string checkpoint;
    std::string manifest;
    std::vector<std::string> images;
    std::string out;
    std::string split = "test";
    double threshold = -1.0;  // < 0 means unset
    std::string policy;
    bool overlay = false;
};

int cmd_infer(const CLI::App& cmd, const InferArgs& a) {
    const bool has_threshold = a.threshold >= 0.0;
    if (has_threshold == !a.policy.empty()) {
        return usage_error("pass exactly one of --threshold and --policy");
    }
    if (a.manifest.empty() == a.images.empty()) {
        return usage_error("pass exactly one of --manifest and --images");
    }
    PolicySpec spec;
    if (has_threshold) {
        spec.policy = ThresholdPolicy::fixed(static_cast<float>(a.threshold));
    } else {
        try {
            spec = parse_policy(a.policy);
        } catch (const ValueError& e) {
            return usage_error(e.what());
        }
        if (spec.needs_normal_val && a.manifest.empty()) {
            return usage_error("--policy stat needs --manifest (its normal val split sets t)");
        }
    }

    ArchitectureSpec arch = build_default_architecture();
    ParamStore params = load_checkpoint(arch, a.checkpoint);

    DatasetManifest m;
    struct WorkItem {
        std::string rel;
        std::string abs;
        const ImageRecord* rec = nullptr;
    };
    std::vector<WorkItem> work;
    if (!a.manifest.empty()) {
        m = load_manifest(a.manifest);
        for (const ImageRecord& r : select_records(m, a.split)) {
            // record pointers into m.records stay valid; re-find by path
            for (const ImageRecord& owned : m.records) {
                if (owned.path == r.path) {
                    work.push_back({owned.path, resolve_path(m, owned.path), &owned});
                    break;
                }
            }
        }
    } else {
        for (const std::string& p : a.images) work.push_back({p, p, nullptr});
    }
    if (work.empty()) {
        throw DataError("nothing to infer: split '" + a.split + "' selected no images");
    }

    float t = 0.0f;
    if (spec.policy.kind == ThresholdPolicy::Kind::Stat) {
        std::vector<ResidualMap> val_maps;
        for (const ImageRecord& r : m.records) {
            if (r.split != Split::Val || r.label != Label::Normal) continue;
            Tensor4 x = load_grayscale(resolve_path(m, r.path));
            val_maps.push_back(compute_residual(arch, params, x, r.path));
        }
        if (val_maps.empty()) {
            throw DataError("--policy stat: manifest has no normal val images");
        }
        t = select_threshold(spec.policy, val_maps);
    } else {
        t = select_threshold(spec.policy, {});
    }

    fs::create_directories(fs::path(a.out) / "masks");
    if (a.overlay) fs::create_directories(fs::path(a.out) / "overlays");

    std::ostringstream tsv;
    tsv << "# path\tmax_abs_residual\tmean_abs_residual\tpositive_pixels\n";
    std::cout << "threshold " << fmt(t) << "\n";
    int failures = 0;
    for (const WorkItem& item : work) {
        try {
            Tensor4 x = load_grayscale(item.abs);
            ResidualMap r = compute_residual(arch, params, x, item.rel);
            SegMask mask = apply_threshold(r, t);
            save_mask(mask, (fs::path(a.out) / "masks" / mask_file_name(item.rel)).string());

            double max_abs = 0.0, sum_abs = 0.0;
            for (float v : r.values) {
                const double av = std::abs(static_cast<double>(v));
                max_abs = std::max(max_abs, av);
                sum_abs += av;
            }
            long long positive = 0;
            for (std::uint8_t p : mask.pix) positive += p;
            std::ostringstream line;
            line << item.rel << '\t' << fmt(max_abs) << '\t'
                 << fmt(sum_abs / static_cast<double>(r.values.size())) << '\t' << positive
                 << '\n';
            tsv << line.str();
            std::cout << line.str();

            if (a.overlay) {
                SegMask truth;
                const bool has_truth = item.rec != nullptr && !item.rec->mask_path.empty();
                if (has_truth) truth = truth_for(m, *item.rec, mask.h, mask.w);
                std::string overlay_name = mask_file_name(item.rel);
                overlay_name.replace(overlay_name.size() - 9, 9, "_overlay.pgm");
                emit_overlay(x, r, mask, has_truth ? &truth : nullptr,
                             (fs::path(a.out) / "overlays" / overlay_name).string());
            }
        } catch (const Error& e) {
            failures += 1;
            std::cerr << "error: " << item.rel << ": " << e.what() << "\n";
        }
    }
    write_text((fs::path(a.out) / "residuals.tsv").string(), tsv.str());
    echo_config(cmd, a.out);
    if (failures > 0) {
        std::cerr << failures << " of " << work.size() << " images failed\n";
        return kExitRuntime;
    }
    return 0;
}

// -------------------------------------------------------------------- sweep

struct SweepArgs {
    std::string checkpoint;
    std::string manifest;
    std::string out;
    std::string split = "test";
    int grid_count = 64;
    std::string grid;
};

int cmd_sweep(const CLI::App& cmd, const SweepArgs& a) {
    std::vector<float> grid;
    if (!a.grid.empty()) {
        std::istringstream in(a.grid);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            try {
                std::size_t used = 0;
                grid.push_back(std::stof(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                return usage_error("--grid: cannot parse '" + tok + "'");
            }
        }
        if (grid.empty()) return usage_error("--grid: no values");
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (grid[i] < 0.0f || (i > 0 && grid[i] <= grid[i - 1])) {
                return usage_error("--grid must be non-negative and strictly increasing");
            }
        }
    } else if (a.grid_count < 1) {
        return usage_error("--grid-count must be at least 1");
    }

    ArchitectureSpec arch = build_default_architecture();
    ParamStore params = load_checkpoint(arch, a.checkpoint);
    DatasetManifest m = load_manifest(a.manifest);
    std::vector<ImageRecord> records = select_records(m, a.split);
    if (records.empty()) {
        throw DataError("sweep: split '" + a.split + "' selected no images");
    }

    std::vector<ResidualMap> residuals;
    std::vector<SegMask> truths;
    for (const ImageRecord& r : records) {
        Tensor4 x = load_grayscale(resolve_path(m, r.path));
        residuals.push_back(compute_residual(arch, params, x, r.path));
        truths.push_back(truth_for(m, r, x.shape.h, x.shape.w));
    }
    if (grid.empty()) grid = default_sweep_grid(residuals, a.grid_count);

    std::vector<SweepRow> rows = sweep_table(residuals, truths, grid);
    std::ostringstream table;
    table << "# t\tprecision\trecall\tf1\n";
    float best_t = rows.front().t;
    double best_f1 = -1.0;
    for (const SweepRow& row : rows) {
        table << fmt(row.t) << '\t' << fmt(row.report.precision) << '\t'
              << fmt(row.report.recall) << '\t' << fmt(row.report.f1) << '\n';
        if (row.report.f1 >= best_f1) {
            best_f1 = row.report.f1;
            best_t = row.t;
        }
    }
    std::cout << table.str() << "best_t " << fmt(best_t) << "\n"
              << "best_f1 " << fmt(best_f1) << "\n";
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        write_text((fs::path(a.out) / "sweep.tsv").string(), table.str());
        echo_config(cmd, a.out);
    }
    return 0;
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
    std::string manifest;
    std::string pred;
    std::string out;
    std::string split = "test";
    std::string granularity = "aggregate";
};

int cmd_eval(const CLI::App& cmd, const EvalArgs& a) {
    if (a.granularity != "aggregate" && a.granularity != "per-image") {
        return usage_error("--granularity must be aggregate or per-image");
    }
    DatasetManifest m = load_manifest(a.manifest);
    std::vector<ImageRecord> records = select_records(m, a.split);
    if (records.empty()) {
        throw DataError("eval: split '" + a.split + "' selected no images");
    }

    std::vector<SegMask> preds;
    std::vector<SegMask> truths;
    for (const ImageRecord& r : records) {
        const std::string pred_path = (fs::path(a.pred) / mask_file_name(r.path)).string();
        if (!fs::exists(pred_path)) {
            throw DataError("missing prediction for " + r.path + " (expected " + pred_path +
                            ")");
        }
        preds.push_back(load_mask(pred_path));
        Tensor4 x = load_grayscale(resolve_path(m, r.path));
        truths.push_back(truth_for(m, r, x.shape.h, x.shape.w));
    }

    EvalReport aggregate = evaluate_micro(preds, truths);
    std::vector<EvalReport> per_image = evaluate_per_image(preds, truths);

    std::ostringstream per_tsv;
    per_tsv << "# path\ttp\tfp\tfn\ttn\tprecision\trecall\tf1\n";
    double mean_f1 = 0.0;
    for (std::size_t i = 0; i < per_image.size(); ++i) {
        const EvalReport& rep = per_image[i];
        per_tsv << records[i].path << '\t' << rep.tp << '\t' << rep.fp << '\t' << rep.fn << '\t'
                << rep.tn << '\t' << fmt(rep.precision) << '\t' << fmt(rep.recall) << '\t'
                << fmt(rep.f1) << '\n';
        mean_f1 += rep.f1;
    }
    mean_f1 /= static_cast<double>(per_image.size());

    if (!a.out.empty()) {
        fs::create_directories(a.out);
        write_text((fs::path(a.out) / "report.tsv").string(), report_kv(aggregate));
        write_text((fs::path(a.out) / "per_image.tsv").string(), per_tsv.str());
        echo_config(cmd, a.out);
    }
    std::cout << report_kv(aggregate);
    if (a.granularity == "per-image") {
        std::cout << "mean_per_image_f1\t" << fmt(mean_f1) << "\n";
    }
    std::cout << "f1 " << fmt(aggregate.f1) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    adopt_native_blas_kernel(argv);

    CLI::App app{"residua: defect segmentation from autoencoder reconstruction residuals"};
    app.require_subcommand(1);

    // --config is expanded into plain tokens before parsing; the option here
    // only documents it and absorbs the flag if expansion never ran.
    std::string config_sink;
    auto add_config_opt = [&config_sink](CLI::App* sub) {
        sub->add_option("--config", config_sink,
                        "flat key = value settings file; explicit flags win");
    };

    GenSynthArgs gen;
    CLI::App* gen_cmd = app.add_subcommand(
        "gen-synth", "Generate a synthetic textured dataset with a manifest");
    add_config_opt(gen_cmd);
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_option("--seed", gen.cfg.seed, "rng seed")->capture_default_str();
    gen_cmd->add_option("--height", gen.cfg.h, "image height")->capture_default_str();
    gen_cmd->add_option("--width", gen.cfg.w, "image width")->capture_default_str();
    gen_cmd->add_option("--n-train", gen.cfg.n_train, "normal training images")
        ->capture_default_str();
    gen_cmd->add_option("--n-val", gen.cfg.n_val, "normal validation images")
        ->capture_default_str();
    gen_cmd->add_option("--n-test-normal", gen.cfg.n_test_normal, "normal test images")
        ->capture_default_str();
    gen_cmd->add_option("--n-test-anomalous", gen.cfg.n_test_anomalous, "defective test images")
        ->capture_default_str();
    gen_cmd->add_option("--noise-sigma", gen.cfg.noise_sigma, "additive gaussian noise std")
        ->capture_default_str();
    gen_cmd->add_option("--defect-delta", gen.cfg.defect_delta, "defect intensity shift")
        ->capture_default_str();
    gen_cmd->add_option("--defect-min-len", gen.cfg.defect_min_len, "min polyline steps")
        ->capture_default_str();
    gen_cmd->add_option("--defect-max-len", gen.cfg.defect_max_len, "max polyline steps")
        ->capture_default_str();
    gen_cmd->add_option("--defect-min-width", gen.cfg.defect_min_width, "min stroke width")
        ->capture_default_str();
    gen_cmd->add_option("--defect-max-width", gen.cfg.defect_max_width, "max stroke width")
        ->capture_default_str();
    gen_cmd->add_option("--wave1-cycles", gen.cfg.wave1.cycles, "first wave cycles across width")
        ->capture_default_str();
    gen_cmd->add_option("--wave1-orientation", gen.cfg.wave1.orientation_deg,
                        "first wave orientation, degrees")
        ->capture_default_str();
    gen_cmd->add_option("--wave1-amplitude", gen.cfg.wave1.amplitude, "first wave amplitude")
        ->capture_default_str();
    gen_cmd->add_option("--wave2-cycles", gen.cfg.wave2.cycles, "second wave cycles across width")
        ->capture_default_str();
    gen_cmd->add_option("--wave2-orientation", gen.cfg.wave2.orientation_deg,
                        "second wave orientation, degrees")
        ->capture_default_str();
    gen_cmd->add_option("--wave2-amplitude", gen.cfg.wave2.amplitude, "second wave amplitude")
        ->capture_default_str();

    PrepareArgs prep;
    CLI::App* prep_cmd = app.add_subcommand(
        "prepare", "Scan an image directory into a split manifest");
    add_config_opt(prep_cmd);
    prep_cmd->add_option("--root", prep.root, "dataset root directory")->required();
    prep_cmd->add_option("--layout", prep.layout, "flat, dagm, or rsdds")->capture_default_str();
    prep_cmd->add_option("--out", prep.out, "manifest output path (default <root>/manifest.tsv)");
    prep_cmd->add_option("--seed", prep.seed, "split shuffle seed")->capture_default_str();
    prep_cmd->add_option("--frac-train", prep.fracs.train, "normal-image train fraction")
        ->capture_default_str();
    prep_cmd->add_option("--frac-val", prep.fracs.val, "normal-image val fraction")
        ->capture_default_str();
    prep_cmd->add_option("--frac-test", prep.fracs.test_normal, "normal-image test fraction")
        ->capture_default_str();
    prep_cmd->add_option("--patch-height", prep.patch_h, "patch height (rsdds layout)")
        ->capture_default_str();
    prep_cmd->add_option("--patch-width", prep.patch_w, "patch width (rsdds layout)")
        ->capture_default_str();

    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand(
        "train", "Train the autoencoder on the manifest's train split");
    add_config_opt(train_cmd);
    train_cmd->add_option("--manifest", tr.manifest, "dataset manifest")->required();
    train_cmd->add_option("--out", tr.out, "run directory")->required();
    train_cmd->add_option("--epochs", tr.cfg.epochs, "training epochs")->capture_default_str();
    train_cmd->add_option("--batch-size", tr.cfg.batch_size, "minibatch size")
        ->capture_default_str();
    train_cmd->add_option("--lr", tr.cfg.lr, "adam learning rate")->capture_default_str();
    train_cmd->add_option("--seed", tr.cfg.seed, "init and shuffle seed")->capture_default_str();

    InferArgs inf;
    CLI::App* infer_cmd = app.add_subcommand(
        "infer", "Segment defects in images with a trained checkpoint");
    add_config_opt(infer_cmd);
    infer_cmd->add_option("--checkpoint", inf.checkpoint, "trained model checkpoint")->required();
    infer_cmd->add_option("--manifest", inf.manifest, "dataset manifest");
    infer_cmd->add_option("--images", inf.images, "explicit image paths");
    infer_cmd->add_option("--out", inf.out, "run directory")->required();
    infer_cmd->add_option("--split", inf.split, "manifest split: train, val, test, all")
        ->capture_default_str();
    infer_cmd->add_option("--threshold", inf.threshold, "fixed segmentation threshold");
    infer_cmd->add_option("--policy", inf.policy, "threshold policy: fixed:<t> or stat[:<k>]");
    infer_cmd->add_flag("--overlay", inf.overlay, "also write side-by-side overlay panels");

    SweepArgs sw;
    CLI::App* sweep_cmd = app.add_subcommand(
        "sweep", "Score a threshold grid against labeled images");
    add_config_opt(sweep_cmd);
    sweep_cmd->add_option("--checkpoint", sw.checkpoint, "trained model checkpoint")->required();
    sweep_cmd->add_option("--manifest", sw.manifest, "dataset manifest")->required();
    sweep_cmd->add_option("--out", sw.out, "optional run directory for sweep.tsv");
    sweep_cmd->add_option("--split", sw.split, "manifest split: train, val, test, all")
        ->capture_default_str();
    sweep_cmd->add_option("--grid-count", sw.grid_count, "evenly spaced candidate count")
        ->capture_default_str();
    sweep_cmd->add_option("--grid", sw.grid, "explicit comma-separated thresholds");

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand(
        "eval", "Compare predicted masks against manifest ground truth");
    add_config_opt(eval_cmd);
    eval_cmd->add_option("--manifest", ev.manifest, "dataset manifest")->required();
    eval_cmd->add_option("--pred", ev.pred, "directory of predicted masks")->required();
    eval_cmd->add_option("--out", ev.out, "optional run directory for reports");
    eval_cmd->add_option("--split", ev.split, "manifest split: train, val, test, all")
        ->capture_default_str();
    eval_cmd->add_option("--granularity", ev.granularity, "aggregate or per-image")
        ->capture_default_str();

    std::vector<std::string> args;
    try {
        args = expand_args(argc, argv,
                           {"gen-synth", "prepare", "train", "infer", "sweep", "eval"});
    } catch (const Error& e) {
        return usage_error(e.what());
    }
    std::reverse(args.begin(), args.end());  // parse(vector) wants reversed argv
    try {
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen_synth(*gen_cmd, gen);
        if (prep_cmd->parsed()) return cmd_prepare(prep);
        if (train_cmd->parsed()) return cmd_train(*train_cmd, tr);
        if (infer_cmd->parsed()) return cmd_infer(*infer_cmd, inf);
        if (sweep_cmd->parsed()) return cmd_sweep(*sweep_cmd, sw);
        if (eval_cmd->parsed()) return cmd_eval(*eval_cmd, ev);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
