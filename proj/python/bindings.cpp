// SPDX-License-Identifier: Apache-2.0
#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "alum/adversarial.hpp"
#include "alum/checkpoint.hpp"
#include "alum/cli.hpp"
#include "alum/data.hpp"
#include "alum/error.hpp"
#include "alum/optim.hpp"
#include "alum/vocab.hpp"

namespace py = pybind11;
using namespace alum;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    std::vector<Real> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    double* dst = out.mutable_data();
    for (std::size_t i = 0; i < t.numel(); ++i) dst[i] = t[i];
    return out;
}

py::dict labeled_split(const ClassificationDataset& ds) {
    py::list texts, labels;
    for (const auto& e : ds.examples) {
        texts.append(e.text);
        labels.append(ds.label_names.at(static_cast<std::size_t>(e.label)));
    }
    py::dict d;
    d["text"] = texts;
    d["label"] = labels;
    return d;
}

} // namespace

PYBIND11_MODULE(_alum, m) {
    m.doc() = "Adversarial pre-training and fine-tuning of toy transformer encoders";

    py::register_exception<Error>(m, "AlumError", PyExc_RuntimeError);

    m.def("mask_rate", &mask_rate, py::arg("progress"), "MLM corruption rate at a training progress in [0, 1].");

    m.def(
        "lr_at",
        [](std::size_t step, double peak_lr, std::size_t total_steps, double warmup_fraction) {
            OptimizerConfig c;
            c.peak_lr = peak_lr;
            c.total_steps = total_steps;
            c.warmup_fraction = warmup_fraction;
            c.validate();
            return lr_at(step, c);
        },
        py::arg("step"), py::arg("peak_lr") = 1e-4, py::arg("total_steps") = 4000, py::arg("warmup_fraction") = 0.01,
        "Learning rate of the linear warmup/decay schedule at a 0-based step.");

    m.def(
        "corrupt_mlm",
        [](const std::vector<std::int32_t>& ids, double rate, std::size_t vocab_size, std::uint64_t seed) {
            Rng rng = make_rng(seed);
            Corruption c = corrupt_mlm(ids, rate, vocab_size, rng);
            return py::make_tuple(c.input_ids, c.mlm_targets);
        },
        py::arg("ids"), py::arg("rate"), py::arg("vocab_size"), py::arg("seed") = 1,
        "Returns (input_ids, mlm_targets); unselected targets are -1.");

    m.def(
        "project_linf", [](const Array& delta, double epsilon) { return to_array(projected_linf(to_tensor(delta), epsilon)); },
        py::arg("delta"), py::arg("epsilon"), "Clamps every entry into [-epsilon, epsilon].");

    m.def(
        "vat_divergence",
        [](const Array& p, const Array& q, const std::string& kind) {
            return vat_divergence(to_tensor(p), to_tensor(q), parse_vat_loss(kind));
        },
        py::arg("p_clean"), py::arg("p_perturbed"), py::arg("kind") = "kl_symmetric",
        "Mean row divergence between [rows, classes] probability arrays.");

    py::class_<Vocab>(m, "Vocab")
        .def_static("load", [](const std::filesystem::path& p) { return Vocab::load(p); }, py::arg("path"))
        .def("save", &Vocab::save, py::arg("path"))
        .def("encode", &Vocab::encode, py::arg("text"))
        .def("decode", [](const Vocab& v, const std::vector<std::int32_t>& ids) { return v.decode(ids); },
             py::arg("ids"))
        .def("token", &Vocab::token, py::arg("id"))
        .def("__len__", &Vocab::size)
        .def_property_readonly("merges", [](const Vocab& v) {
            py::list out;
            for (const auto& mg : v.merges()) out.append(py::make_tuple(mg.first, mg.second));
            return out;
        });

    m.def(
        "train_bpe",
        [](const std::vector<std::string>& lines, std::size_t target_size) { return train_bpe(lines, target_size); },
        py::arg("lines"), py::arg("target_size"), "Trains a byte-pair vocabulary of at most target_size entries.");

    m.def(
        "make_synthetic",
        [](std::uint64_t seed, std::size_t n_train, std::size_t n_dev, std::size_t n_test, std::size_t n_docs) {
            SyntheticConfig c;
            c.seed = seed;
            c.n_train = n_train;
            c.n_dev = n_dev;
            c.n_test = n_test;
            c.n_docs = n_docs;
            c.validate();
            const SyntheticTask t = make_synthetic(c);
            py::dict d;
            d["corpus"] = t.corpus;
            d["train"] = labeled_split(t.train);
            d["dev"] = labeled_split(t.dev);
            d["test"] = labeled_split(t.test);
            d["triggers"] = py::make_tuple(t.trigger_a, t.trigger_b);
            return d;
        },
        py::arg("seed") = 7, py::arg("n_train") = 5000, py::arg("n_dev") = 500, py::arg("n_test") = 1000,
        py::arg("n_docs") = 600, "Generates the synthetic classification task in memory.");

    m.def(
        "checkpoint_info",
        [](const std::filesystem::path& p) {
            const Checkpoint ck = load_checkpoint(p);
            py::dict d;
            d["model"] = model_config_json(ck.model);
            d["vocab_size"] = ck.vocab.size();
            py::dict params;
            for (const auto& [name, t] : ck.params.tensors) params[py::str(name)] = to_array(t);
            d["params"] = params;
            d["has_state"] = ck.state.has_value();
            return d;
        },
        py::arg("path"), "Model config (JSON), vocabulary size and parameter arrays of a checkpoint.");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one command-line invocation in-process; returns (exit_code, stdout, stderr).");

    m.def("file_hash", [](const std::filesystem::path& p) { return file_hash(p); }, py::arg("path"));
}
