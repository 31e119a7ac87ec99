// Python bindings: the training / reconstruction / thresholding / scoring
// surface of the library on numpy arrays. Images are 2-D float32 in [0, 1],
// residuals 2-D float32 (signed), masks 2-D bool.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "residua/data.hpp"
#include "residua/errors.hpp"
#include "residua/eval.hpp"
#include "residua/image.hpp"
#include "residua/model.hpp"
#include "residua/synth.hpp"
#include "residua/tensor.hpp"
#include "residua/train.hpp"

namespace py = pybind11;
using namespace residua;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using BoolArray = py::array_t<bool, py::array::c_style | py::array::forcecast>;

Tensor4 image_from_array(const FloatArray& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-D (h, w) image array");
    const int h = static_cast<int>(a.shape(0));
    const int w = static_cast<int>(a.shape(1));
    Tensor4 t(1, 1, h, w);
    std::memcpy(t.ptr(), a.data(), sizeof(float) * static_cast<std::size_t>(h) * w);
    return t;
}

py::array_t<float> array_from_image(const Tensor4& t) {
    py::array_t<float> out({t.shape.h, t.shape.w});
    std::memcpy(out.mutable_data(), t.ptr(),
                sizeof(float) * static_cast<std::size_t>(t.shape.h) * t.shape.w);
    return out;
}

ResidualMap residual_from_array(const FloatArray& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-D (h, w) residual array");
    ResidualMap r;
    r.h = static_cast<int>(a.shape(0));
    r.w = static_cast<int>(a.shape(1));
    r.values.assign(a.data(), a.data() + r.h * static_cast<std::size_t>(r.w));
    return r;
}

SegMask mask_from_array(const BoolArray& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-D (h, w) mask array");
    SegMask m;
    m.h = static_cast<int>(a.shape(0));
    m.w = static_cast<int>(a.shape(1));
    m.pix.resize(static_cast<std::size_t>(m.h) * m.w);
    const bool* src = a.data();
    for (std::size_t i = 0; i < m.pix.size(); ++i) m.pix[i] = src[i] ? 1 : 0;
    return m;
}

py::array_t<bool> array_from_mask(const SegMask& m) {
    py::array_t<bool> out({m.h, m.w});
    bool* dst = out.mutable_data();
    for (std::size_t i = 0; i < m.pix.size(); ++i) dst[i] = m.pix[i] != 0;
    return out;
}

std::vector<ResidualMap> residuals_from_list(const std::vector<FloatArray>& arrays) {
    std::vector<ResidualMap> out;
    out.reserve(arrays.size());
    for (const auto& a : arrays) out.push_back(residual_from_array(a));
    return out;
}

std::vector<SegMask> masks_from_list(const std::vector<BoolArray>& arrays) {
    std::vector<SegMask> out;
    out.reserve(arrays.size());
    for (const auto& a : arrays) out.push_back(mask_from_array(a));
    return out;
}

py::dict report_to_dict(const EvalReport& r) {
    py::dict d;
    d["tp"] = r.tp;
    d["fp"] = r.fp;
    d["fn"] = r.fn;
    d["tn"] = r.tn;
    d["precision"] = r.precision;
    d["recall"] = r.recall;
    d["f1"] = r.f1;
    return d;
}

/// Skip-connected convolutional autoencoder with its parameters.
class Model {
  public:
    explicit Model(std::uint64_t seed) : arch_(build_default_architecture()) {
        Rng rng(seed);
        params_ = init_params(arch_, rng);
    }

    static Model load(const std::string& path) {
        Model m(0);
        m.params_ = load_checkpoint(m.arch_, path);
        return m;
    }

    void save(const std::string& path) { save_checkpoint(arch_, params_, path); }

    py::array_t<float> reconstruct(const FloatArray& image) {
        Tensor4 x = image_from_array(image);
        Tensor4 recon = [&] {
            py::gil_scoped_release release;
            return forward(arch_, params_, x, Mode::Eval).reconstruction;
        }();
        return array_from_image(recon);
    }

    py::array_t<float> residual(const FloatArray& image) {
        Tensor4 x = image_from_array(image);
        ResidualMap r = [&] {
            py::gil_scoped_release release;
            Tensor4 recon = forward(arch_, params_, x, Mode::Eval).reconstruction;
            return residual_map(x, recon);
        }();
        py::array_t<float> out({r.h, r.w});
        std::memcpy(out.mutable_data(), r.values.data(), sizeof(float) * r.values.size());
        return out;
    }

    std::vector<double> fit(const std::vector<FloatArray>& images, int epochs, int batch_size,
                            double lr, std::uint64_t seed, bool shuffle) {
        std::vector<TrainSample> samples;
        samples.reserve(images.size());
        for (std::size_t i = 0; i < images.size(); ++i) {
            samples.push_back(
                {"array_" + std::to_string(i), false, image_from_array(images[i])});
        }
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.lr = static_cast<float>(lr);
        cfg.seed = seed;
        cfg.shuffle = shuffle;
        py::gil_scoped_release release;
        TrainOutcome out = train(arch_, params_, samples, cfg);
        return out.log.mean_loss;
    }

    std::vector<std::string> parameter_names() {
        std::vector<std::string> names;
        for (const NamedParam& v : named_views(arch_, params_)) names.push_back(v.name);
        return names;
    }

    int downsample_factor() const { return arch_.downsample_factor; }

  private:
    ArchitectureSpec arch_;
    ParamStore params_;
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Autoencoder-based surface defect segmentation";

    py::register_exception<Error>(m, "ResiduaError", PyExc_RuntimeError);

    py::class_<Model>(m, "Model",
                      "Skip-connected convolutional autoencoder for defect-free textures")
        .def(py::init<std::uint64_t>(), py::arg("seed") = 0)
        .def_static("load", &Model::load, py::arg("path"),
                    "Load a model from a checkpoint file")
        .def("save", &Model::save, py::arg("path"), "Write a checkpoint file")
        .def("reconstruct", &Model::reconstruct, py::arg("image"),
             "Reconstruct a 2-D float image; dims must be multiples of 8, at least 24")
        .def("residual", &Model::residual, py::arg("image"),
             "Signed residual image - reconstruction as a 2-D float array")
        .def("fit", &Model::fit, py::arg("images"), py::arg("epochs") = 50,
             py::arg("batch_size") = 8, py::arg("lr") = 1e-3, py::arg("seed") = 0,
             py::arg("shuffle") = true,
             "Train on defect-free images; returns the per-epoch mean loss")
        .def("parameter_names", &Model::parameter_names,
             "Qualified names of every parameter array")
        .def_property_readonly("downsample_factor", &Model::downsample_factor);

    m.def(
        "threshold",
        [](const FloatArray& residual, float t) {
            return array_from_mask(apply_threshold(residual_from_array(residual), t));
        },
        py::arg("residual"), py::arg("t"),
        "Binary defect mask: |residual| > t, as a 2-D bool array");

    m.def(
        "evaluate",
        [](const std::vector<BoolArray>& preds, const std::vector<BoolArray>& truths) {
            return report_to_dict(evaluate_micro(masks_from_list(preds), masks_from_list(truths)));
        },
        py::arg("preds"), py::arg("truths"),
        "Micro-averaged pixel confusion counts and precision/recall/F1");

    m.def(
        "sweep",
        [](const std::vector<FloatArray>& residuals, const std::vector<BoolArray>& truths,
           std::optional<std::vector<float>> grid, int count) {
            std::vector<ResidualMap> rs = residuals_from_list(residuals);
            std::vector<SegMask> ts = masks_from_list(truths);
            const std::vector<float> g = grid ? *grid : default_sweep_grid(rs, count);
            py::list rows;
            for (const SweepRow& row : sweep_table(rs, ts, g)) {
                py::dict d = report_to_dict(row.report);
                d["t"] = row.t;
                rows.append(d);
            }
            return rows;
        },
        py::arg("residuals"), py::arg("truths"), py::arg("grid") = py::none(),
        py::arg("count") = 64,
        "Threshold sweep table: one dict of metrics per candidate threshold");

    m.def(
        "stat_threshold",
        [](const std::vector<FloatArray>& residuals, float k) {
            return select_threshold(ThresholdPolicy::stat(k), residuals_from_list(residuals));
        },
        py::arg("residuals"), py::arg("k") = 3.0f,
        "mean + k * std of |residual| pooled over normal validation maps");

    m.def(
        "generate_synthetic",
        [](const std::string& out_dir, int height, int width, int n_train, int n_val,
           int n_test_normal, int n_test_anomalous, std::uint64_t seed) {
            SynthConfig cfg;
            cfg.h = height;
            cfg.w = width;
            cfg.n_train = n_train;
            cfg.n_val = n_val;
            cfg.n_test_normal = n_test_normal;
            cfg.n_test_anomalous = n_test_anomalous;
            cfg.seed = seed;
            validate_synth_config(cfg);
            gen_synthetic(cfg, out_dir);
            return out_dir + "/manifest.tsv";
        },
        py::arg("out_dir"), py::arg("height") = 64, py::arg("width") = 64,
        py::arg("n_train") = 200, py::arg("n_val") = 20, py::arg("n_test_normal") = 50,
        py::arg("n_test_anomalous") = 50, py::arg("seed") = 0,
        "Write a textured dataset with seeded defects; returns the manifest path");

    m.def(
        "read_image",
        [](const std::string& path) { return array_from_image(load_grayscale(path)); },
        py::arg("path"), "Load a grayscale PGM/PNG/JPEG as a 2-D float array in [0, 1]");

    m.def(
        "read_mask",
        [](const std::string& path) { return array_from_mask(load_mask(path)); },
        py::arg("path"), "Load a binary mask image as a 2-D bool array");
}
