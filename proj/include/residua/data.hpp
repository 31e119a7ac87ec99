#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "residua/eval.hpp"
#include "residua/image.hpp"
#include "residua/tensor.hpp"

namespace residua {

enum class Split { Train, Val, Test };
enum class Label { Normal, Anomalous };

std::string split_name(Split s);
std::string label_name(Label l);

/// One dataset entry. path and mask_path are relative to the manifest root;
/// an empty mask_path means none.
struct ImageRecord {
    std::string path;
    Split split = Split::Train;
    Label label = Label::Normal;
    std::string mask_path;
};

/// Ordered record list anchored at a root directory. patch_h/patch_w record
/// the patch geometry when the records were produced by extraction (0 = not
/// patched).
struct DatasetManifest {
    std::string root;
    std::vector<ImageRecord> records;
    int patch_h = 0;
    int patch_w = 0;
};

/// Absolute location of a record's image (or of any manifest-relative path).
std::string resolve_path(const DatasetManifest& manifest, const std::string& relative);

/// Structural checks: unique paths, normal-only train split, masks present on
/// every anomalous record. With check_files, every referenced file must exist
/// under root. Violations raise DataError.
void validate_manifest(const DatasetManifest& manifest, bool check_files);

std::string manifest_to_text(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::string& path);
/// Parse + validate; root is the manifest file's directory.
DatasetManifest load_manifest(const std::string& path, bool check_files = true);

/// Directory conventions build_manifest understands:
///   Flat       root/normal/*, root/anomalous/*, root/masks/<stem>.pgm
///   DagmLike   root/*.<ext> with Label/<stem>_label.<ext> for defect images
///   RsddsLike  root/images/* + root/gt/<same name>; images are cut into
///              patches (written under root/patches/) and patches are labeled
///              by their mask content
enum class Layout { Flat, DagmLike, RsddsLike };

/// Fractions of the normal images per split; must sum to 1. Anomalous images
/// never enter train or val — they all go to test.
struct SplitFracs {
    double train = 0.8;
    double val = 0.1;
    double test_normal = 0.1;
};

/// One extracted patch. row0/col0 anchor it in the source image.
struct Patch {
    Tensor4 image;
    SegMask mask;
    Label label = Label::Normal;
    int row0 = 0;
    int col0 = 0;
};

/// Non-overlapping tiles from the top-left, plus one end-anchored tile per
/// dimension when a remainder strip is left over. A patch is anomalous iff
/// its mask window holds at least one positive pixel.
std::vector<Patch> extract_patches(const Tensor4& image, const SegMask* mask,
                                   int patch_h = 200, int patch_w = 160);

/// Scan a directory in one of the known layouts and produce a validated,
/// seed-deterministic manifest. Normal images are split per fracs; all
/// anomalous images go to test. Degenerate-but-legal situations (such as no
/// anomalous images at all) append to warnings when it is non-null.
DatasetManifest build_manifest(const std::string& root, Layout layout,
                               const SplitFracs& fracs, std::uint64_t seed,
                               std::vector<std::string>* warnings = nullptr,
                               int patch_h = 200, int patch_w = 160);

/// Binary mask files: 8-bit grayscale, exactly {0, 255}. Anything in between
/// is a FormatError, not a warning.
SegMask load_mask(const std::string& path);
void save_mask(const SegMask& mask, const std::string& path);

} // namespace residua
