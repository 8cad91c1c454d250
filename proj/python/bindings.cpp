#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cfa/config.hpp"
#include "cfa/errors.hpp"
#include "cfa/evaluator.hpp"
#include "cfa/patterns.hpp"
#include "cfa/recon_net.hpp"
#include "cfa/sensor.hpp"
#include "cfa/trainer.hpp"

namespace py = pybind11;
using namespace cfa;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor(std::move(shape), std::move(data));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

IntArray pattern_array(const HardPattern& p) {
  IntArray out({p.period(), p.period()});
  std::copy(p.channels().begin(), p.channels().end(), out.mutable_data());
  return out;
}

HardPattern to_pattern(const IntArray& a) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw DimensionError("pattern must be a square 2-D array");
  return {static_cast<int>(a.shape(0)), std::vector<int>(a.data(), a.data() + a.size())};
}

RgbImage to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("image must be [H x W x 3]");
  return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
          std::vector<double>(a.data(), a.data() + a.size())};
}

Array image_array(const RgbImage& img) { return to_array(img.tensor()); }

py::dict output_dict(const ReconOutput& out) {
  py::dict d;
  d["y_hat"] = to_array(out.y_hat);
  d["f"] = to_array(out.f);
  d["lambda"] = to_array(out.lambda);
  return d;
}

TrainData to_data(const std::vector<Array>& train, const std::vector<Array>& val) {
  TrainData data;
  for (const auto& a : train) data.train.push_back(to_image(a));
  for (const auto& a : val) data.val.push_back(to_image(a));
  return data;
}

py::list log_list(const TrainLog& log) {
  py::list out;
  for (const auto& e : log.entries) {
    py::dict d;
    d["iteration"] = e.iteration;
    d["train_loss"] = e.train_loss;
    d["val_loss"] = e.val_loss;
    d["mean_entropy"] = e.mean_entropy;
    d["lr"] = e.lr;
    d["pattern"] = pattern_array(e.pattern);
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_cfalearn, m) {
  m.doc() = "Learned sensor multiplexing patterns with a two-path demosaicking network";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  // sensor layer
  m.def("alpha_at", [](std::int64_t t, double gamma) { return AnnealSchedule{gamma}.alpha_at(t); }, py::arg("t"),
        py::arg("gamma") = 2.5e-5);
  m.def("soft_select", [](const Array& w, double alpha) { return to_array(soft_select(to_tensor(w), alpha)); },
        py::arg("logits"), py::arg("alpha"));
  m.def("harden", [](const Array& w) { return pattern_array(harden(to_tensor(w))); }, py::arg("logits"));
  m.def("measure", [](const Array& sel, const Array& x) { return to_array(measure(to_tensor(sel), to_tensor(x))); },
        py::arg("selection"), py::arg("x"));
  m.def("mean_entropy", [](const Array& sel) { return mean_entropy(to_tensor(sel)); }, py::arg("selection"));

  // patterns
  m.def("bayer_pattern", [](int p) { return pattern_array(bayer_pattern(p)); }, py::arg("period"));
  m.def("cfz_pattern", [](int p, int rate) { return pattern_array(cfz_pattern(p, rate)); }, py::arg("period"),
        py::arg("rate") = 4);
  m.def("census", [](const IntArray& p) { return to_pattern(p).census(); }, py::arg("pattern"));
  m.def("format_pattern", [](const IntArray& p) { return format_pattern(to_pattern(p)); }, py::arg("pattern"));
  m.def("parse_pattern", [](const std::string& text) { return pattern_array(parse_pattern(text)); }, py::arg("text"));
  m.def("write_pattern", [](const IntArray& p, const std::filesystem::path& path) { write_pattern(to_pattern(p), path); },
        py::arg("pattern"), py::arg("path"));
  m.def("read_pattern", [](const std::filesystem::path& path) { return pattern_array(read_pattern(path)); },
        py::arg("path"));
  m.def("bilinear_demosaick",
        [](const Array& s, const IntArray& p) { return to_array(bilinear_demosaick(to_tensor(s), to_pattern(p))); },
        py::arg("mosaic"), py::arg("pattern"));

  // data
  m.def("build_channels", [](const Array& rgb) { return to_array(build_channels(to_image(rgb))); }, py::arg("rgb"));
  m.def("add_noise", [](const Array& x, double std, std::uint64_t seed) { return to_array(add_noise(to_tensor(x), std, seed)); },
        py::arg("x"), py::arg("std"), py::arg("seed"));
  m.def("split_dataset",
        [](const std::vector<std::string>& ids, std::size_t n_test, std::size_t n_val, std::uint64_t seed) {
          const auto s = split_dataset(ids, n_test, n_val, seed);
          py::dict d;
          d["train"] = s.train;
          d["val"] = s.val;
          d["test"] = s.test;
          return d;
        },
        py::arg("ids"), py::arg("n_test"), py::arg("n_val"), py::arg("seed"));
  m.def("synthetic_image", [](std::size_t h, std::size_t w, std::uint64_t seed) { return image_array(synthetic_image(h, w, seed)); },
        py::arg("height"), py::arg("width"), py::arg("seed"));
  m.def("load_image", [](const std::filesystem::path& p) { return image_array(load_image(p)); }, py::arg("path"));
  m.def("save_image", [](const Array& img, const std::filesystem::path& p, int bits) { save_image(to_image(img), p, bits); },
        py::arg("image"), py::arg("path"), py::arg("bits") = 8);
  m.def("sample_patch_pairs",
        [](const std::vector<Array>& images, int period, std::size_t batch, std::uint64_t seed, std::uint64_t stream,
           double noise_std) {
          std::vector<RgbImage> imgs;
          for (const auto& a : images) imgs.push_back(to_image(a));
          const auto b = sample_patch_pairs(imgs, period, batch, seed, stream, noise_std);
          py::dict d;
          d["x"] = to_array(b.x);
          d["y"] = to_array(b.y);
          d["image_index"] = b.image_index;
          d["top"] = b.top;
          d["left"] = b.left;
          return d;
        },
        py::arg("images"), py::arg("period"), py::arg("batch"), py::arg("seed"), py::arg("stream") = 0,
        py::arg("noise_std") = 0.0);

  // network
  py::class_<NetParams>(m, "NetParams")
      .def_property_readonly("period", [](const NetParams& p) { return p.shape.period; })
      .def_property_readonly("proposals", [](const NetParams& p) { return p.shape.proposals; })
      .def_property_readonly("features", [](const NetParams& p) { return p.shape.features; })
      .def_property_readonly("w_log", [](const NetParams& p) { return to_array(p.w_log); })
      .def_property_readonly("w_mix", [](const NetParams& p) { return to_array(p.w_mix); })
      .def_property_readonly("w_gate", [](const NetParams& p) { return to_array(p.w_gate); });
  m.def("init_params",
        [](int period, int proposals, int features, std::uint64_t seed, bool normalize_gates) {
          return init_params(NetShape{period, proposals, features, normalize_gates}, seed);
        },
        py::arg("period") = 8, py::arg("proposals") = 24, py::arg("features") = 128, py::arg("seed") = 0,
        py::arg("normalize_gates") = false);
  m.def("reconstruct", [](const Array& patches, const NetParams& p) { return output_dict(reconstruct(to_tensor(patches), p)); },
        py::arg("patches"), py::arg("params"));
  m.def("pad_mosaic", [](const Array& s, const IntArray& pat) { return to_array(pad_mosaic(to_tensor(s), to_pattern(pat))); },
        py::arg("mosaic"), py::arg("pattern"));
  m.def("reconstruct_image",
        [](const Array& s, const IntArray& pat, const NetParams& p) {
          return to_array(reconstruct_image(to_tensor(s), to_pattern(pat), p));
        },
        py::arg("mosaic"), py::arg("pattern"), py::arg("params"));

  // evaluation
  m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_tensor(a), to_tensor(b)); }, py::arg("reference"),
        py::arg("recon"));
  m.def("quantile", [](std::vector<double> v, double q) { return quantile_nearest_rank(std::move(v), q); },
        py::arg("values"), py::arg("q"));
  m.def("simulate_capture",
        [](const Array& img, const IntArray& p, double noise, std::uint64_t seed) {
          return to_array(simulate_capture(to_image(img), to_pattern(p), noise, seed));
        },
        py::arg("image"), py::arg("pattern"), py::arg("noise_std") = 0.0, py::arg("seed") = 0);
  m.def("render_pattern", [](const IntArray& p, int scale) { return image_array(render_pattern(to_pattern(p), scale)); },
        py::arg("pattern"), py::arg("scale") = 1);

  // training
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](int period, int proposals, int features) {
             TrainConfig c;
             c.net = NetShape{period, proposals, features, false};
             return c;
           }),
           py::arg("period") = 8, py::arg("proposals") = 24, py::arg("features") = 128)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("iters", &TrainConfig::iters)
      .def_readwrite("gamma", &TrainConfig::gamma)
      .def_readwrite("reference_iters", &TrainConfig::reference_iters)
      .def_readwrite("noise_std", &TrainConfig::noise_std)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("validate_every", &TrainConfig::validate_every)
      .def_readwrite("fine_tune_iters", &TrainConfig::fine_tune_iters)
      .def_readwrite("fine_tune_lr", &TrainConfig::fine_tune_lr)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("val_patches", &TrainConfig::val_patches)
      .def_readwrite("log_init_scale", &TrainConfig::log_init_scale)
      .def_readwrite("log_init_radius", &TrainConfig::log_init_radius)
      .def_property_readonly("effective_gamma", &TrainConfig::effective_gamma);
  m.def("train_joint",
        [](const TrainConfig& c, const std::vector<Array>& train, const std::vector<Array>& val) {
          const auto data = to_data(train, val);
          const auto r = train_joint(c, data);
          py::dict d;
          d["logits"] = to_array(r.sensor.logits());
          d["pattern"] = pattern_array(r.pattern);
          d["params"] = r.params;
          d["log"] = log_list(r.log);
          return d;
        },
        py::arg("config"), py::arg("train_images"), py::arg("val_images"));
  m.def("train_fixed",
        [](const IntArray& pattern, const TrainConfig& c, const std::vector<Array>& train, const std::vector<Array>& val) {
          const auto data = to_data(train, val);
          TrainLog log;
          auto params = train_fixed(to_pattern(pattern), c, data, &log);
          py::dict d;
          d["params"] = std::move(params);
          d["log"] = log_list(log);
          return d;
        },
        py::arg("pattern"), py::arg("config"), py::arg("train_images"), py::arg("val_images"));
  m.def("load_checkpoint",
        [](const std::filesystem::path& path) {
          const auto st = load_checkpoint(path);
          py::dict d;
          d["mode"] = st.mode == TrainMode::joint ? "joint" : "fixed";
          d["iteration"] = st.iteration;
          d["pattern"] = pattern_array(st.pattern());
          d["params"] = st.params;
          d["log"] = log_list(st.log);
          return d;
        },
        py::arg("path"));
}
