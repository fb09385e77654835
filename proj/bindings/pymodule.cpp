// Python bindings: numpy-facing wrappers around the core ops, model, and
// metrics. Arrays are BCHW float64 for tensor ops and HWC float64 in [0,1]
// for image utilities, matching the C++ conventions.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hpun/image.hpp"
#include "hpun/metrics.hpp"
#include "hpun/model.hpp"
#include "hpun/ops.hpp"
#include "hpun/reconcile.hpp"
#include "hpun/resize.hpp"
#include "hpun/serialize.hpp"
#include "hpun/trainer.hpp"

namespace py = pybind11;
using namespace hpun;

namespace {

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> tensor_from_numpy(const Arr& a) {
    if (a.ndim() != 4) throw ShapeError("expected a 4-D (B,C,H,W) array");
    Shape4 s{a.shape(0), a.shape(1), a.shape(2), a.shape(3)};
    Tensor<double> t = zeros<double>(s);
    std::copy(a.data(), a.data() + s.numel(), t.data->begin());
    return t;
}

Arr numpy_from_tensor(const Tensor<double>& t) {
    Arr a({t.shape.n, t.shape.c, t.shape.h, t.shape.w});
    std::copy(t.data->begin(), t.data->end(), a.mutable_data());
    return a;
}

ImageBuf image_from_numpy(const Arr& a) {
    if (a.ndim() != 3) throw ShapeError("expected a 3-D (H,W,C) array");
    ImageBuf img(a.shape(1), a.shape(0), a.shape(2));
    std::copy(a.data(), a.data() + img.pix.size(), img.pix.begin());
    return img;
}

Arr numpy_from_image(const ImageBuf& img) {
    Arr a({img.height, img.width, img.channels});
    std::copy(img.pix.begin(), img.pix.end(), a.mutable_data());
    return a;
}

// float32 model behind a double-precision numpy facade (inference only).
struct PyModel {
    ModelSpec spec;
    Model<float> model;

    PyModel(const std::string& preset, int64_t scale, uint64_t seed)
        : spec(ModelSpec::preset(preset, scale)), model(build<float>(spec, seed)) {}

    void load(const std::string& path) { model = load_model<float>(path); spec = model.spec; }

    Arr forward(const Arr& x) {
        auto xt = tensor_from_numpy(x);
        Tensor<float> xf = zeros<float>(xt.shape);
        for (size_t i = 0; i < xt.data->size(); ++i)
            (*xf.data)[i] = static_cast<float>((*xt.data)[i]);
        auto yf = model.forward(xf);
        Tensor<double> y = zeros<double>(yf.shape);
        for (size_t i = 0; i < yf.data->size(); ++i) (*y.data)[i] = (*yf.data)[i];
        return numpy_from_tensor(y);
    }

    // HWC [0,1] RGB in, HWC [0,1] RGB out.
    Arr upscale(const Arr& lr) {
        auto img = image_from_numpy(lr);
        auto x = image_to_tensor<float>(img);
        auto y = model.forward(x);
        auto out = tensor_to_image(y);
        out.clamp01();
        return numpy_from_image(out);
    }
};

}  // namespace

PYBIND11_MODULE(_hpun, m) {
    m.doc() = "Hybrid pixel-unshuffled super-resolution: core ops, model, metrics";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    // --- tensor ops (forward only, BCHW float64) ---
    m.def("pixel_unshuffle",
          [](const Arr& x, int64_t r) { return numpy_from_tensor(pixel_unshuffle(tensor_from_numpy(x), r)); },
          py::arg("x"), py::arg("r"));
    m.def("pixel_shuffle",
          [](const Arr& x, int64_t r) { return numpy_from_tensor(pixel_shuffle(tensor_from_numpy(x), r)); },
          py::arg("x"), py::arg("r"));
    m.def("bilinear_up2",
          [](const Arr& x) { return numpy_from_tensor(bilinear_up2(tensor_from_numpy(x))); });
    m.def("nearest_up2",
          [](const Arr& x) { return numpy_from_tensor(nearest_up2(tensor_from_numpy(x))); });
    m.def("maxpool_s1",
          [](const Arr& x, int64_t k) { return numpy_from_tensor(maxpool_s1(tensor_from_numpy(x), k)); },
          py::arg("x"), py::arg("k") = 3);
    m.def("relu", [](const Arr& x) { return numpy_from_tensor(relu(tensor_from_numpy(x))); });
    m.def("conv2d",
          [](const Arr& x, const Arr& w, py::object bias, int64_t stride, int64_t padding,
             int64_t groups) {
              auto xt = tensor_from_numpy(x);
              auto wt = tensor_from_numpy(w);
              ConvSpec spec;
              spec.in_channels = xt.shape.c;
              spec.out_channels = wt.shape.n;
              spec.kernel_h = wt.shape.h;
              spec.kernel_w = wt.shape.w;
              spec.stride = stride;
              spec.padding = padding;
              spec.groups = groups;
              spec.has_bias = !bias.is_none();
              if (spec.has_bias) {
                  auto bt = tensor_from_numpy(bias.cast<Arr>());
                  return numpy_from_tensor(conv2d(xt, spec, wt, &bt));
              }
              return numpy_from_tensor(conv2d<double>(xt, spec, wt, nullptr));
          },
          py::arg("x"), py::arg("w"), py::arg("bias") = py::none(), py::arg("stride") = 1,
          py::arg("padding") = 0, py::arg("groups") = 1);

    // --- imaging ---
    m.def("bicubic_resize",
          [](const Arr& img, double scl, bool antialias) {
              return numpy_from_image(bicubic_resize(image_from_numpy(img), scl, antialias));
          },
          py::arg("img"), py::arg("scale"), py::arg("antialias") = true);
    m.def("rgb_to_y",
          [](const Arr& img) { return numpy_from_image(rgb_to_y(image_from_numpy(img))); });
    m.def("read_png", [](const std::string& p) { return numpy_from_image(read_png(p)); });
    m.def("write_png",
          [](const std::string& p, const Arr& img) { write_png(p, image_from_numpy(img)); });

    // --- metrics ---
    m.def("psnr",
          [](const Arr& a, const Arr& b, int64_t crop) {
              return psnr(image_from_numpy(a), image_from_numpy(b), crop);
          },
          py::arg("a"), py::arg("b"), py::arg("border_crop") = 0);
    m.def("ssim",
          [](const Arr& a, const Arr& b, int64_t crop) {
              return ssim(image_from_numpy(a), image_from_numpy(b), crop);
          },
          py::arg("a"), py::arg("b"), py::arg("border_crop") = 0);
    m.def("nme",
          [](const Arr& shallow, const Arr& deep, double threshold) {
              auto r = nme(tensor_from_numpy(shallow), tensor_from_numpy(deep), threshold);
              py::dict d;
              d["nme"] = r.nme_scalar;
              d["threshold"] = r.threshold;
              py::array_t<double> map({r.map_h, r.map_w});
              std::copy(r.error_map.begin(), r.error_map.end(), map.mutable_data());
              d["error_map"] = map;
              py::array_t<double> bin({r.map_h, r.map_w});
              std::copy(r.binarized.begin(), r.binarized.end(), bin.mutable_data());
              d["binarized"] = bin;
              return d;
          },
          py::arg("shallow"), py::arg("deep"), py::arg("threshold") = -1.0);

    // --- model + counting ---
    py::class_<PyModel>(m, "Model")
        .def(py::init<const std::string&, int64_t, uint64_t>(), py::arg("preset") = "toy",
             py::arg("scale") = 4, py::arg("seed") = 0)
        .def("load", &PyModel::load, py::arg("path"))
        .def("forward", &PyModel::forward, py::arg("x"))
        .def("upscale", &PyModel::upscale, py::arg("lr"))
        .def_property_readonly("scale", [](const PyModel& s) { return s.spec.scale; })
        .def_property_readonly("channels", [](const PyModel& s) { return s.spec.channels; });

    m.def("count_costs",
          [](const std::string& preset, int64_t scale, int64_t hr_w, int64_t hr_h) {
              auto rep = count_costs(ModelSpec::preset(preset, scale), hr_w, hr_h);
              py::dict d;
              d["params"] = rep.total_params;
              d["params_no_bias"] = rep.total_params_no_bias;
              d["multi_adds"] = rep.total_multi_adds;
              py::list rows;
              for (const auto& r : rep.rows) {
                  py::dict row;
                  row["name"] = r.name;
                  row["params"] = r.params;
                  row["multi_adds"] = r.multi_adds;
                  rows.append(row);
              }
              d["rows"] = rows;
              return d;
          },
          py::arg("preset"), py::arg("scale") = 4, py::arg("hr_width") = 1280,
          py::arg("hr_height") = 720);
}
