#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>

#include "degan/config.hpp"
#include "degan/data.hpp"
#include "degan/errors.hpp"
#include "degan/fer.hpp"
#include "degan/gradcheck.hpp"
#include "degan/model.hpp"
#include "degan/training.hpp"

namespace py = pybind11;
using namespace degan;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(std::span<const double> values, std::vector<py::ssize_t> shape) {
    Array out(shape);
    std::copy(values.begin(), values.end(), out.mutable_data());
    return out;
}

Shape shape_of(const Array& a) {
    Shape s;
    for (py::ssize_t i = 0; i < a.ndim(); ++i) s.push_back(static_cast<std::size_t>(a.shape(i)));
    return s;
}

Tensor to_tensor(const Array& a) {
    return Tensor(shape_of(a), std::vector<double>(a.data(), a.data() + a.size()));
}

// N x S x S or N x 1 x S x S arrays become N x 1 x S x S image tensors.
Tensor image_batch(const Array& a) {
    if (a.ndim() == 3) {
        return Tensor({static_cast<std::size_t>(a.shape(0)), 1, static_cast<std::size_t>(a.shape(1)),
                       static_cast<std::size_t>(a.shape(2))},
                      std::vector<double>(a.data(), a.data() + a.size()));
    }
    if (a.ndim() == 4) return to_tensor(a);
    throw DimensionError("expected an N x S x S or N x 1 x S x S image array");
}

data::Image to_image(const Array& a) {
    if (a.ndim() != 2) throw DimensionError("expected a 2-D image array");
    data::Image img(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
    return img;
}

Array from_image(const data::Image& img) {
    return to_numpy(img.pixels, {static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width)});
}

Array stack(std::span<const data::Image> images) {
    if (images.empty()) return Array(std::vector<py::ssize_t>{0, 0, 0});
    const auto h = images[0].height, w = images[0].width;
    Array out({static_cast<py::ssize_t>(images.size()), static_cast<py::ssize_t>(h), static_cast<py::ssize_t>(w)});
    double* dst = out.mutable_data();
    for (const auto& img : images) dst = std::copy(img.pixels.begin(), img.pixels.end(), dst);
    return out;
}

Array tensor_to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    return to_numpy(t.data(), shape);
}

/// DeGanModel plus the random stream used by train_step and transfers.
struct PyModel {
    DeGanModel model;
    std::mt19937_64 rng;
};

py::dict dataset_dict(const data::SynthDataset& ds) {
    std::vector<data::Image> images;
    std::vector<int> y_e, y_id;
    for (const auto& s : ds.samples) {
        images.push_back(s.image);
        y_e.push_back(s.y_e);
        y_id.push_back(s.y_id);
    }
    py::dict d;
    d["images"] = stack(images);
    d["y_e"] = y_e;
    d["y_id"] = y_id;
    d["clean"] = stack(ds.clean);
    return d;
}

fer::RepresentationSet reps_from(const Array& values, const std::vector<int>& y_e, const std::vector<int>& y_id) {
    if (values.ndim() != 2) throw DimensionError("representations must be a 2-D array");
    fer::RepresentationSet r;
    r.dim = static_cast<std::size_t>(values.shape(1));
    r.values.assign(values.data(), values.data() + values.size());
    r.y_e = y_e;
    r.y_id = y_id;
    r.validate();
    return r;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Disentangled expression GAN core: tensors, networks, training and evaluation";

    auto base = py::register_exception<Error>(m, "DeganError", PyExc_RuntimeError);
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<LabelError>(m, "LabelError", base.ptr());
    py::register_exception<ContractError>(m, "ContractError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<StateError>(m, "StateError", base.ptr());
    py::register_exception<DegenerateDataError>(m, "DegenerateDataError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

    // Tensor-level checks
    m.def("conv2d", [](const Array& x, const Array& k, std::size_t stride, std::size_t padding) {
        return tensor_to_numpy(conv2d(to_tensor(x), to_tensor(k), stride, padding));
    }, py::arg("input"), py::arg("kernel"), py::arg("stride") = 1, py::arg("padding") = 0);
    m.def("conv2d_transpose", [](const Array& x, const Array& k, std::size_t stride, std::size_t padding) {
        return tensor_to_numpy(conv2d_transpose(to_tensor(x), to_tensor(k), stride, padding));
    }, py::arg("input"), py::arg("kernel"), py::arg("stride") = 1, py::arg("padding") = 0);
    m.def("softmax_cross_entropy", [](const Array& logits, const std::vector<int>& targets) {
        const auto ce = softmax_cross_entropy(to_tensor(logits), targets);
        return py::make_tuple(ce.loss.item(), to_numpy(ce.probabilities, {logits.shape(0), logits.shape(1)}));
    }, py::arg("logits"), py::arg("targets"));
    m.def("gradcheck", [](std::uint64_t seed) {
        const auto r = run_gradcheck_suite(seed);
        py::dict cases;
        for (const auto& c : r.cases) cases[py::str(c.name)] = c.max_error;
        py::dict out;
        out["max_error"] = r.max_error;
        out["passed"] = r.passed();
        out["cases"] = cases;
        return out;
    }, py::arg("seed") = 1, "Run the finite-difference suite; returns the worst relative error per case.");

    // Losses
    m.def("generator_loss", [](const Array& expr_logits, const Array& id_logits, const std::vector<int>& y_e,
                               const std::vector<int>& y_idx) {
        return generator_loss({to_tensor(expr_logits), to_tensor(id_logits)}, y_e, y_idx).total.item();
    }, py::arg("expr_logits"), py::arg("id_logits"), py::arg("y_e"), py::arg("y_idx"));
    m.def("discriminator_loss", [](const Array& real_expr, const Array& real_id, const std::vector<int>& y_e,
                                   const std::vector<int>& y_id, const Array& fake_expr, const Array& fake_id) {
        return discriminator_loss({to_tensor(real_expr), to_tensor(real_id)}, y_e, y_id,
                                  {to_tensor(fake_expr), to_tensor(fake_id)})
            .total.item();
    }, py::arg("real_expr"), py::arg("real_id"), py::arg("y_e"), py::arg("y_id"), py::arg("fake_expr"),
       py::arg("fake_id"));

    // Data
    m.def("load_image", [](const std::filesystem::path& p) { return from_image(data::load_image(p)); });
    m.def("save_image", [](const Array& img, const std::filesystem::path& p) { data::save_image(to_image(img), p); });
    m.def("rotate", [](const Array& img, double deg) { return from_image(data::rotate(to_image(img), deg)); });
    m.def("hflip", [](const Array& img) { return from_image(data::hflip(to_image(img))); });
    m.def("augment", [](const Array& img, std::size_t crop_size, std::vector<double> angles, bool flip) {
        data::AugmentationSpec spec;
        spec.crop_size = crop_size;
        spec.angles = std::move(angles);
        spec.hflip = flip;
        std::vector<data::Image> out;
        for (auto& s : data::augment({to_image(img), 0, 0}, spec)) out.push_back(std::move(s.image));
        return stack(out);
    }, py::arg("image"), py::arg("crop_size") = 75,
       py::arg("angles") = data::AugmentationSpec{}.angles, py::arg("hflip") = true);
    m.def("synth_dataset", [](std::size_t ids, std::size_t exprs, std::size_t per_cell, std::size_t size,
                              std::uint64_t seed) {
        return dataset_dict(data::synth_dataset({ids, exprs, per_cell, size, seed}));
    }, py::arg("n_ids") = 8, py::arg("n_exprs") = 6, py::arg("samples_per_cell") = 10, py::arg("image_size") = 32,
       py::arg("seed") = 7);
    m.def("write_synth_dataset", [](const std::filesystem::path& out, std::size_t ids, std::size_t exprs,
                                    std::size_t per_cell, std::size_t size, std::uint64_t seed,
                                    const std::vector<int>& held_out) {
        data::write_dataset(data::synth_dataset({ids, exprs, per_cell, size, seed}), out, held_out);
        return (out / "manifest.txt").string();
    }, py::arg("out"), py::arg("n_ids") = 8, py::arg("n_exprs") = 6, py::arg("samples_per_cell") = 10,
       py::arg("image_size") = 32, py::arg("seed") = 7, py::arg("held_out") = std::vector<int>{});

    // Model
    py::class_<PyModel>(m, "Model")
        .def(py::init([](std::size_t n_expr, std::size_t n_id, std::size_t image_size, std::size_t rep_dim,
                         std::size_t noise_dim, std::vector<std::size_t> channels, std::uint64_t seed) {
                 DeGanConfig c;
                 c.n_expr = n_expr;
                 c.n_id = n_id;
                 c.image_size = image_size;
                 c.rep_dim = rep_dim;
                 c.noise_dim = noise_dim;
                 c.conv_channels = std::move(channels);
                 c.seed = seed;
                 return PyModel{DeGanModel(c), std::mt19937_64(seed)};
             }),
             py::arg("n_expr") = 6, py::arg("n_id") = 8, py::arg("image_size") = 32, py::arg("rep_dim") = 350,
             py::arg("noise_dim") = 50, py::arg("conv_channels") = std::vector<std::size_t>{16, 32, 64},
             py::arg("seed") = 7)
        .def_static("load", [](const std::filesystem::path& p) {
            auto model = DeGanModel::load(p);
            const auto seed = model.config().seed;
            return PyModel{std::move(model), std::mt19937_64(seed)};
        })
        .def("save", [](const PyModel& self, const std::filesystem::path& p) { self.model.save(p); })
        .def_property_readonly("steps_taken", [](const PyModel& self) { return self.model.steps_taken(); })
        .def_property_readonly("rep_dim", [](const PyModel& self) { return self.model.config().rep_dim; })
        .def_property_readonly("image_size", [](const PyModel& self) { return self.model.config().image_size; })
        .def("encode", [](const PyModel& self, const Array& images) {
            return tensor_to_numpy(self.model.encode(image_batch(images)));
        }, "Expression representations for an N x S x S image batch.")
        .def("discriminate", [](const PyModel& self, const Array& images) {
            const auto d = self.model.discriminate(image_batch(images));
            return py::make_tuple(tensor_to_numpy(d.expr_logits), tensor_to_numpy(d.id_logits));
        })
        .def("transfer", [](PyModel& self, const Array& image, std::size_t target_id) {
            const auto img = to_image(image);
            const auto z = NoiseVector::sample(self.model.config().noise_dim, self.rng);
            data::Image out(img.height, img.width);
            out.pixels = self.model.transfer_expression(img.pixels, target_id, z);
            return from_image(out);
        }, py::arg("image"), py::arg("target_id"))
        .def("train_step", [](PyModel& self, const Array& images, const std::vector<int>& y_e,
                              const std::vector<int>& y_id) {
            const auto r = self.model.train_step({image_batch(images), y_e, y_id}, self.rng);
            py::dict d;
            d["step"] = r.step;
            d["d_loss"] = r.d_loss;
            d["g_loss"] = r.g_loss;
            d["k"] = r.k;
            return d;
        }, py::arg("images"), py::arg("y_e"), py::arg("y_id"));

    m.def("train", [](const std::filesystem::path& config_path, const std::string& manifest,
                      std::optional<std::size_t> total_steps) {
        auto run = config::load_run_config(config_path);
        config::apply_environment(run);
        if (!manifest.empty()) run.manifest = manifest;
        if (total_steps) run.total_steps = *total_steps;
        const auto td = prepare_training_data(run, data::load_manifest(run.manifest));
        auto result = train_degan(run, td);
        py::list log;
        for (const auto& r : result.log) log.append(py::make_tuple(r.step, r.d_loss, r.g_loss, r.k));
        const auto seed = result.model.config().seed;
        return py::make_tuple(PyModel{std::move(result.model), std::mt19937_64(seed)}, log);
    }, py::arg("config"), py::arg("manifest") = "", py::arg("total_steps") = py::none(),
       "Train from a run config; returns (model, [(step, d_loss, g_loss, k), ...]).");

    // Evaluation
    m.def("evaluate_predictions", [](const std::vector<int>& pred, const std::vector<int>& truth, std::size_t k) {
        return fer::evaluate_predictions(pred, truth, k).accuracy;
    }, py::arg("predicted"), py::arg("truth"), py::arg("n_classes"));
    m.def("expression_accuracy", [](const Array& train, const std::vector<int>& train_e, const Array& test,
                                    const std::vector<int>& test_e, std::uint64_t seed) {
        const std::vector<int> ids_train(train_e.size(), 0), ids_test(test_e.size(), 0);
        fer::MlpConfig cfg;
        cfg.seed = seed;
        const auto tr = fer::train_mlp(reps_from(train, train_e, ids_train), fer::Target::Expression, cfg);
        return fer::evaluate(tr.classifier, reps_from(test, test_e, ids_test), fer::Target::Expression).accuracy;
    }, py::arg("train"), py::arg("train_labels"), py::arg("test"), py::arg("test_labels"), py::arg("seed") = 0,
       "Shallow-MLP expression accuracy (percent) on the test rows.");
    m.def("identity_probe", [](const Array& reps, const std::vector<int>& y_e, const std::vector<int>& y_id,
                               double test_fraction, std::uint64_t seed) {
        const auto r = reps_from(reps, y_e, y_id);
        fer::MlpConfig cfg;
        cfg.seed = seed;
        return fer::identity_probe(r, fer::stratified_cell_split(r, test_fraction), cfg);
    }, py::arg("reps"), py::arg("y_e"), py::arg("y_id"), py::arg("test_fraction") = 0.3, py::arg("seed") = 0,
       "Identity accuracy (percent) of the shallow MLP on a per-cell stratified split.");
}
