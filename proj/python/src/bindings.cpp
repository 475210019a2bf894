#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "elsnet/checkpoint.hpp"
#include "elsnet/config.hpp"
#include "elsnet/errors.hpp"
#include "elsnet/esm.hpp"
#include "elsnet/gradcheck.hpp"
#include "elsnet/metrics.hpp"
#include "elsnet/pcem.hpp"
#include "elsnet/phantom.hpp"
#include "elsnet/trainer.hpp"

namespace py = pybind11;
using namespace elsnet;
using nlohmann::json;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Mask to_mask(const U8Array& a) {
  if (a.ndim() != 2) throw py::value_error("mask must be 2-D");
  Mask m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.labels.begin());
  return m;
}

Tensor64 to_tensor(const F64Array& a) {
  Dims d(a.shape(), a.shape() + a.ndim());
  return Tensor64::from(std::move(d), std::vector<double>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> copy_array(std::vector<py::ssize_t> shape, const T* data) {
  return py::array_t<T>(std::move(shape), data);
}

py::array_t<float> image_array(const Image& im) {
  return copy_array<float>({static_cast<py::ssize_t>(im.height), static_cast<py::ssize_t>(im.width)},
                           im.pixels.data());
}

py::array_t<std::uint8_t> mask_array(const Mask& m) {
  return copy_array<std::uint8_t>({static_cast<py::ssize_t>(m.height), static_cast<py::ssize_t>(m.width)},
                                  m.labels.data());
}

py::dict sample_dict(const Sample& s) {
  py::dict d;
  d["id"] = s.id;
  d["image"] = image_array(s.image);
  d["mask"] = mask_array(s.mask);
  return d;
}

PipelineConfig config_from(const std::string& text) {
  json j = json::parse(text);
  check_known_keys(json(PipelineConfig{}), j);
  auto c = j.get<PipelineConfig>();
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_elsnet, m) {
  m.doc() = "Exemplar-learning segmentation core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  m.def("version", &version_string);

  m.def(
      "resolve_config",
      [](const std::filesystem::path& file, const std::vector<std::string>& overrides) {
        return json(resolve_config(file, overrides)).dump();
      },
      py::arg("file") = std::filesystem::path{}, py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "generate_phantoms",
      [](std::uint64_t seed, const std::string& config, const std::filesystem::path& out) {
        const auto c = config_from(config);
        save_dataset(generate_phantom_dataset(seed, c.phantom), out);
      },
      py::arg("seed"), py::arg("config"), py::arg("out"));

  m.def(
      "load_split",
      [](const std::filesystem::path& root, const std::string& name) {
        const Dataset data = load_dataset(root);
        py::list out;
        for (const auto& s : data.split(name)) out.append(sample_dict(s));
        return out;
      },
      py::arg("root"), py::arg("split"));

  m.def(
      "synthesize",
      [](const std::filesystem::path& root, int count, std::uint64_t seed, const std::string& config) {
        const auto c = config_from(config);
        const auto set = esm::build_synthetic_set(load_dataset(root), count, c.esm, seed);
        py::list out;
        for (std::size_t i = 0; i < set.samples.size(); ++i) {
          py::dict d = sample_dict(set.samples[i]);
          d["log"] = esm::log_to_json(set.logs[i]).dump();
          out.append(d);
        }
        return out;
      },
      py::arg("root"), py::arg("count"), py::arg("seed"), py::arg("config"));

  m.def(
      "dsc", [](const U8Array& p, const U8Array& g, int k) { return dsc(to_mask(p), to_mask(g), k); },
      py::arg("pred"), py::arg("gt"), py::arg("k"));
  m.def(
      "hd95", [](const U8Array& p, const U8Array& g, int k) { return hd95(to_mask(p), to_mask(g), k); },
      py::arg("pred"), py::arg("gt"), py::arg("k"));
  m.def(
      "seg_loss", [](const F64Array& logits, const U8Array& t) { return seg_loss(to_tensor(logits), to_mask(t)).item(); },
      py::arg("logits"), py::arg("target"));

  m.def(
      "prototypes",
      [](const F64Array& x, const U8Array& mask, int categories) {
        py::list out;
        for (const auto& p : pcem::compute_prototypes(to_tensor(x), to_mask(mask), categories)) {
          if (!p.present) {
            out.append(py::none());
            continue;
          }
          out.append(copy_array<double>({static_cast<py::ssize_t>(p.v.numel())}, p.v.data().data()));
        }
        return out;
      },
      py::arg("embedding"), py::arg("mask"), py::arg("categories"));

  m.def(
      "run_pipeline",
      [](const std::string& config, const std::filesystem::path& root, const std::filesystem::path& out) {
        const auto c = config_from(config);
        const Dataset data = load_dataset(root);
        RunOptions o;
        o.out_dir = out;
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(c, data, o);
        }
        return json(r.final_report()).dump();
      },
      py::arg("config"), py::arg("root"), py::arg("out") = std::filesystem::path{});

  m.def(
      "evaluate",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& root, const std::string& split) {
        const Dataset data = load_dataset(root);
        const auto seg = make_segmenter(load_checkpoint(checkpoint));
        return json(evaluate(*seg, data.split(split), data.manifest.num_classes)).dump();
      },
      py::arg("checkpoint"), py::arg("root"), py::arg("split") = "test");

  m.def(
      "grad_check",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& r : run_grad_check_suite(seed)) {
          py::dict d;
          d["name"] = r.name;
          d["probed"] = r.probed;
          d["max_rel"] = r.max_rel;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 1);
}
