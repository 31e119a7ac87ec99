#include "residua/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "residua/errors.hpp"

namespace fs = std::filesystem;

namespace residua {

namespace {

constexpr const char* kHeader = "#residua-manifest v1";

bool recognized_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".pgm" || ext == ".ppm" || ext == ".png" || ext == ".jpg" ||
           ext == ".jpeg";
}

std::vector<std::string> list_images(const fs::path& dir) {
    std::vector<std::string> names;
    if (!fs::is_directory(dir)) {
        return names;
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && recognized_extension(entry.path())) {
            names.push_back(entry.path().filename().generic_string());
        }
    }
    std::sort(names.begin(), names.end());
    return names;
}

Split parse_split(const std::string& word, std::size_t line_no) {
    if (word == "train") return Split::Train;
    if (word == "val") return Split::Val;
    if (word == "test") return Split::Test;
    throw FormatError("manifest line " + std::to_string(line_no) + ": unknown split '" +
                      word + "'");
}

Label parse_label(const std::string& word, std::size_t line_no) {
    if (word == "normal") return Label::Normal;
    if (word == "anomalous") return Label::Anomalous;
    throw FormatError("manifest line " + std::to_string(line_no) + ": unknown label '" +
                      word + "'");
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t from = 0;
    while (true) {
        const std::size_t at = line.find('\t', from);
        if (at == std::string::npos) {
            fields.push_back(line.substr(from));
            return fields;
        }
        fields.push_back(line.substr(from, at - from));
        from = at + 1;
    }
}

void check_fracs(const SplitFracs& fracs) {
    if (fracs.train < 0.0 || fracs.val < 0.0 || fracs.test_normal < 0.0) {
        throw ValueError("split fractions must be >= 0");
    }
    const double sum = fracs.train + fracs.val + fracs.test_normal;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ValueError("split fractions must sum to 1");
    }
}

struct SplitPlan {
    std::set<std::size_t> train;
    std::set<std::size_t> val;
};

// Membership is decided on a shuffle of the sorted name list; the manifest
// itself lists records in sorted order so identical seeds give identical
// files byte for byte.
SplitPlan plan_splits(std::size_t n, const SplitFracs& fracs, std::uint64_t seed) {
    const auto n_train = static_cast<std::size_t>(std::floor(fracs.train * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(fracs.val * static_cast<double>(n)));
    Rng rng(seed);
    const std::vector<std::size_t> order = shuffled_indices(n, rng);
    SplitPlan plan;
    for (std::size_t i = 0; i < n_train && i < n; ++i) {
        plan.train.insert(order[i]);
    }
    for (std::size_t i = n_train; i < n_train + n_val && i < n; ++i) {
        plan.val.insert(order[i]);
    }
    return plan;
}

std::string patch_stem(const std::string& filename, int r0, int c0) {
    return fs::path(filename).stem().generic_string() + "_r" + std::to_string(r0) +
           "_c" + std::to_string(c0) + ".pgm";
}

void append_sorted_block(std::vector<ImageRecord>& out, std::vector<ImageRecord> block) {
    std::sort(block.begin(), block.end(),
              [](const ImageRecord& a, const ImageRecord& b) { return a.path < b.path; });
    out.insert(out.end(), block.begin(), block.end());
}

DatasetManifest assemble(const std::string& root, std::vector<ImageRecord> normals,
                         std::vector<ImageRecord> anomalous, const SplitFracs& fracs,
                         std::uint64_t seed, std::vector<std::string>* warnings) {
    std::sort(normals.begin(), normals.end(),
              [](const ImageRecord& a, const ImageRecord& b) { return a.path < b.path; });
    const SplitPlan plan = plan_splits(normals.size(), fracs, seed);

    std::vector<ImageRecord> train_block, val_block, test_block;
    for (std::size_t i = 0; i < normals.size(); ++i) {
        ImageRecord rec = normals[i];
        if (plan.train.count(i)) {
            rec.split = Split::Train;
            train_block.push_back(std::move(rec));
        } else if (plan.val.count(i)) {
            rec.split = Split::Val;
            val_block.push_back(std::move(rec));
        } else {
            rec.split = Split::Test;
            test_block.push_back(std::move(rec));
        }
    }
    for (ImageRecord& rec : anomalous) {
        rec.split = Split::Test;
        rec.label = Label::Anomalous;
    }

    if (anomalous.empty() && warnings != nullptr) {
        warnings->push_back("no anomalous images found; the test split has no positives");
    }

    DatasetManifest m;
    m.root = root;
    append_sorted_block(m.records, std::move(train_block));
    append_sorted_block(m.records, std::move(val_block));
    append_sorted_block(m.records, std::move(test_block));
    append_sorted_block(m.records, std::move(anomalous));
    return m;
}

DatasetManifest build_flat(const fs::path& root, const SplitFracs& fracs,
                           std::uint64_t seed, std::vector<std::string>* warnings) {
    std::vector<ImageRecord> normals;
    for (const std::string& name : list_images(root / "normal")) {
        ImageRecord rec;
        rec.path = "normal/" + name;
        normals.push_back(std::move(rec));
    }
    if (normals.empty()) {
        throw DataError("no normal images under " + (root / "normal").generic_string());
    }
    std::vector<ImageRecord> anomalous;
    for (const std::string& name : list_images(root / "anomalous")) {
        const std::string mask = "masks/" + fs::path(name).stem().generic_string() + ".pgm";
        if (!fs::exists(root / mask)) {
            throw DataError("anomalous image " + name + " has no mask at " + mask);
        }
        ImageRecord rec;
        rec.path = "anomalous/" + name;
        rec.mask_path = mask;
        anomalous.push_back(std::move(rec));
    }
    return assemble(root.generic_string(), std::move(normals), std::move(anomalous),
                    fracs, seed, warnings);
}

DatasetManifest build_dagm_like(const fs::path& root, const SplitFracs& fracs,
                                std::uint64_t seed, std::vector<std::string>* warnings) {
    std::vector<ImageRecord> normals;
    std::vector<ImageRecord> anomalous;
    for (const std::string& name : list_images(root)) {
        const fs::path file(name);
        const std::string mask =
            "Label/" + file.stem().generic_string() + "_label" + file.extension().generic_string();
        ImageRecord rec;
        rec.path = name;
        if (fs::exists(root / mask)) {
            rec.mask_path = mask;
            anomalous.push_back(std::move(rec));
        } else {
            normals.push_back(std::move(rec));
        }
    }
    if (normals.empty()) {
        throw DataError("no defect-free images under " + root.generic_string());
    }
    return assemble(root.generic_string(), std::move(normals), std::move(anomalous),
                    fracs, seed, warnings);
}

DatasetManifest build_rsdds_like(const fs::path& root, const SplitFracs& fracs,
                                 std::uint64_t seed, std::vector<std::string>* warnings,
                                 int patch_h, int patch_w) {
    const std::vector<std::string> names = list_images(root / "images");
    if (names.empty()) {
        throw DataError("no images under " + (root / "images").generic_string());
    }
    fs::create_directories(root / "patches" / "images");
    fs::create_directories(root / "patches" / "gt");

    std::vector<ImageRecord> normals;
    std::vector<ImageRecord> anomalous;
    for (const std::string& name : names) {
        const fs::path gt = root / "gt" / name;
        if (!fs::exists(gt)) {
            throw DataError("image " + name + " has no ground truth under gt/");
        }
        const Tensor4 image = load_grayscale((root / "images" / name).string());
        const SegMask mask = load_mask(gt.string());
        for (const Patch& patch : extract_patches(image, &mask, patch_h, patch_w)) {
            const std::string leaf = patch_stem(name, patch.row0, patch.col0);
            ImageRecord rec;
            rec.path = "patches/images/" + leaf;
            save_grayscale(patch.image, (root / rec.path).string());
            if (patch.label == Label::Anomalous) {
                rec.mask_path = "patches/gt/" + leaf;
                save_mask(patch.mask, (root / rec.mask_path).string());
                anomalous.push_back(std::move(rec));
            } else {
                normals.push_back(std::move(rec));
            }
        }
    }
    if (normals.empty()) {
        throw DataError("patch extraction produced no defect-free patches under " +
                        root.generic_string());
    }
    DatasetManifest m = assemble(root.generic_string(), std::move(normals),
                                 std::move(anomalous), fracs, seed, warnings);
    m.patch_h = patch_h;
    m.patch_w = patch_w;
    return m;
}

} // namespace

std::string split_name(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "?";
}

std::string label_name(Label l) {
    return l == Label::Normal ? "normal" : "anomalous";
}

std::string resolve_path(const DatasetManifest& manifest, const std::string& relative) {
    if (manifest.root.empty()) {
        return relative;
    }
    return (fs::path(manifest.root) / relative).generic_string();
}

void validate_manifest(const DatasetManifest& manifest, bool check_files) {
    std::set<std::string> seen;
    for (const ImageRecord& rec : manifest.records) {
        if (rec.path.empty()) {
            throw DataError("manifest record with an empty path");
        }
        if (!seen.insert(rec.path).second) {
            throw DataError("duplicate manifest path: " + rec.path);
        }
        if (rec.split == Split::Train && rec.label != Label::Normal) {
            throw DataError("anomalous record in the train split: " + rec.path);
        }
        if (rec.label == Label::Anomalous && rec.mask_path.empty()) {
            throw DataError("anomalous record without a mask: " + rec.path);
        }
        if (check_files) {
            if (!fs::exists(resolve_path(manifest, rec.path))) {
                throw DataError("manifest references a missing file: " + rec.path);
            }
            if (!rec.mask_path.empty() && !fs::exists(resolve_path(manifest, rec.mask_path))) {
                throw DataError("manifest references a missing mask: " + rec.mask_path);
            }
        }
    }
}

std::string manifest_to_text(const DatasetManifest& manifest) {
    std::ostringstream os;
    os << kHeader << "\n";
    if (manifest.patch_h > 0 && manifest.patch_w > 0) {
        os << "#patch " << manifest.patch_h << " " << manifest.patch_w << "\n";
    }
    for (const ImageRecord& rec : manifest.records) {
        os << rec.path << "\t" << split_name(rec.split) << "\t" << label_name(rec.label)
           << "\t" << (rec.mask_path.empty() ? "-" : rec.mask_path) << "\n";
    }
    return os.str();
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    validate_manifest(manifest, false);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    const std::string text = manifest_to_text(manifest);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw IoError("write failure on " + path);
    }
}

DatasetManifest load_manifest(const std::string& path, bool check_files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open manifest: " + path);
    }
    DatasetManifest manifest;
    const fs::path parent = fs::path(path).parent_path();
    manifest.root = parent.empty() ? std::string(".") : parent.generic_string();

    std::string line;
    std::size_t line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line_no == 1) {
            if (line != kHeader) {
                throw FormatError("not a manifest (bad header): " + path);
            }
            saw_header = true;
            continue;
        }
        if (line.empty()) {
            continue;
        }
        if (line[0] == '#') {
            std::istringstream meta(line);
            std::string tag;
            meta >> tag;
            if (tag == "#patch") {
                if (!(meta >> manifest.patch_h >> manifest.patch_w) ||
                    manifest.patch_h < 1 || manifest.patch_w < 1) {
                    throw FormatError("manifest line " + std::to_string(line_no) +
                                      ": malformed #patch entry");
                }
            }
            continue;
        }
        const std::vector<std::string> fields = split_tabs(line);
        if (fields.size() != 4) {
            throw FormatError("manifest line " + std::to_string(line_no) +
                              ": expected 4 tab-separated fields, got " +
                              std::to_string(fields.size()));
        }
        ImageRecord rec;
        rec.path = fields[0];
        rec.split = parse_split(fields[1], line_no);
        rec.label = parse_label(fields[2], line_no);
        rec.mask_path = fields[3] == "-" ? std::string() : fields[3];
        manifest.records.push_back(std::move(rec));
    }
    if (!saw_header) {
        throw FormatError("not a manifest (empty file): " + path);
    }
    validate_manifest(manifest, check_files);
    return manifest;
}

std::vector<Patch> extract_patches(const Tensor4& image, const SegMask* mask,
                                   int patch_h, int patch_w) {
    if (image.shape.n != 1 || image.shape.c != 1) {
        throw ShapeError("extract_patches expects a (1, 1, h, w) tensor");
    }
    if (patch_h < 1 || patch_w < 1) {
        throw ValueError("patch size must be >= 1");
    }
    const int h = image.shape.h;
    const int w = image.shape.w;
    if (h < patch_h || w < patch_w) {
        throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " is smaller than the patch " + std::to_string(patch_h) + "x" +
                         std::to_string(patch_w));
    }
    if (mask != nullptr && (mask->h != h || mask->w != w)) {
        throw ShapeError("mask size does not match the image");
    }

    const auto anchors = [](int dim, int tile) {
        std::vector<int> at;
        for (int a = 0; a + tile <= dim; a += tile) {
            at.push_back(a);
        }
        if (at.back() + tile < dim) {
            at.push_back(dim - tile);
        }
        return at;
    };

    std::vector<Patch> patches;
    for (int r0 : anchors(h, patch_h)) {
        for (int c0 : anchors(w, patch_w)) {
            Patch p;
            p.row0 = r0;
            p.col0 = c0;
            p.image = Tensor4(1, 1, patch_h, patch_w);
            p.mask.h = patch_h;
            p.mask.w = patch_w;
            p.mask.pix.assign(static_cast<std::size_t>(patch_h) * patch_w, 0);
            bool any = false;
            for (int y = 0; y < patch_h; ++y) {
                for (int x = 0; x < patch_w; ++x) {
                    p.image.at(0, 0, y, x) = image.at(0, 0, r0 + y, c0 + x);
                    if (mask != nullptr && mask->at(r0 + y, c0 + x) != 0) {
                        p.mask.at(y, x) = 1;
                        any = true;
                    }
                }
            }
            p.label = any ? Label::Anomalous : Label::Normal;
            patches.push_back(std::move(p));
        }
    }
    return patches;
}

DatasetManifest build_manifest(const std::string& root, Layout layout,
                               const SplitFracs& fracs, std::uint64_t seed,
                               std::vector<std::string>* warnings, int patch_h,
                               int patch_w) {
    check_fracs(fracs);
    const fs::path base(root);
    if (!fs::is_directory(base)) {
        throw DataError("dataset root is not a directory: " + root);
    }
    DatasetManifest manifest;
    switch (layout) {
    case Layout::Flat:
        manifest = build_flat(base, fracs, seed, warnings);
        break;
    case Layout::DagmLike:
        manifest = build_dagm_like(base, fracs, seed, warnings);
        break;
    case Layout::RsddsLike:
        manifest = build_rsdds_like(base, fracs, seed, warnings, patch_h, patch_w);
        break;
    }
    validate_manifest(manifest, true);
    return manifest;
}

SegMask load_mask(const std::string& path) {
    const GrayImage8 img = decode_gray8(path);
    SegMask mask;
    mask.h = img.h;
    mask.w = img.w;
    mask.pix.resize(img.pix.size());
    for (std::size_t i = 0; i < img.pix.size(); ++i) {
        if (img.pix[i] != 0 && img.pix[i] != 255) {
            throw FormatError("mask is not binary (value " + std::to_string(img.pix[i]) +
                              "): " + path);
        }
        mask.pix[i] = img.pix[i] == 255 ? 1 : 0;
    }
    return mask;
}

void save_mask(const SegMask& mask, const std::string& path) {
    GrayImage8 img;
    img.h = mask.h;
    img.w = mask.w;
    img.pix.resize(mask.pix.size());
    for (std::size_t i = 0; i < mask.pix.size(); ++i) {
        if (mask.pix[i] > 1) {
            throw ValueError("mask values must be 0 or 1");
        }
        img.pix[i] = mask.pix[i] ? 255 : 0;
    }
    save_pgm(img, path);
}

} // namespace residua
