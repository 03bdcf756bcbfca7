#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdio>
#include <cstring>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "fusionboost/backbones.hpp"
#include "fusionboost/booster.hpp"
#include "fusionboost/image.hpp"
#include "fusionboost/metrics.hpp"

#ifndef FB_TOOL_VERSION
#define FB_TOOL_VERSION "0.0.0"
#endif

namespace py = pybind11;
using namespace py::literals;
using namespace fb;

namespace {

// Images cross the boundary as 2-D float32 arrays in [0, 1].
using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

GrayImage to_image(const Array& arr) {
  if (arr.ndim() != 2) throw std::invalid_argument("expected a 2-D array (h, w)");
  GrayImage img(int(arr.shape(0)), int(arr.shape(1)));
  std::memcpy(img.data.data(), arr.data(), sizeof(float) * img.data.size());
  return img;
}

py::array_t<float> to_array(const GrayImage& img) {
  py::array_t<float> arr(std::vector<py::ssize_t>{img.h, img.w});
  std::memcpy(arr.mutable_data(), img.data.data(), sizeof(float) * img.data.size());
  return arr;
}

BoosterConfig make_config(int k, int epochs, int batch, float lr, int patch,
                          int patches_per_pair, std::uint64_t seed) {
  BoosterConfig cfg;
  cfg.k = k;
  cfg.epochs = epochs;
  cfg.batch = batch;
  cfg.lr = lr;
  cfg.patch = patch;
  cfg.patches_per_pair = patches_per_pair;
  cfg.seed = seed;
  return cfg;
}

std::vector<FusedTriple> make_triples(const std::vector<std::tuple<Array, Array, Array>>& pairs) {
  std::vector<FusedTriple> data;
  data.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "p%03zu", i);
    data.push_back({id, to_image(std::get<0>(pairs[i])), to_image(std::get<1>(pairs[i])),
                    to_image(std::get<2>(pairs[i]))});
  }
  return data;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "FusionBooster core: fusion backbones, booster training, and quality metrics";
  m.attr("__version__") = FB_TOOL_VERSION;

  // --- imaging --------------------------------------------------------------
  m.def(
      "synth_pair",
      [](const std::string& scenario, int h, int w, std::uint64_t seed) {
        const SynthPair p = synth_pair(scenario_from_string(scenario), h, w, seed);
        return py::make_tuple(to_array(p.a), to_array(p.b));
      },
      "scenario"_a, "h"_a, "w"_a, "seed"_a = 1,
      "Deterministic synthetic source pair; scenario is exposure, focus, or modality.");
  m.def(
      "load_image", [](const std::string& path) { return to_array(load_image(path)); },
      "path"_a, "Load a PGM or PNG image as a float32 array in [0, 1].");
  m.def(
      "save_image", [](const Array& img, const std::string& path) { save_image(to_image(img), path); },
      "img"_a, "path"_a, "Write an image as PGM or PNG, chosen by extension.");
  m.def(
      "average_filter",
      [](const Array& img, int k) { return to_array(average_filter(to_image(img), k)); },
      "img"_a, "k"_a, "Box mean over a (2k+1)^2 window with replicate padding.");

  // --- backbones ------------------------------------------------------------
  m.def(
      "fuse",
      [](const std::string& backbone, const Array& a, const Array& b, int pyramid_levels) {
        return to_array(fuse(backbone_from_string(backbone), to_image(a), to_image(b),
                             pyramid_levels));
      },
      "backbone"_a, "a"_a, "b"_a, "pyramid_levels"_a = 3,
      "Stage-one fusion with the mean, max, or pyramid backbone.");
  m.def(
      "degrade",
      [](const Array& img, float noise_sigma, int blur_k, float contrast, std::uint64_t seed) {
        DegradeSpec spec;
        spec.noise_sigma = noise_sigma;
        spec.blur_k = blur_k;
        spec.contrast = contrast;
        spec.seed = seed;
        return to_array(degrade(to_image(img), spec));
      },
      "img"_a, "noise_sigma"_a = 0.0f, "blur_k"_a = 0, "contrast"_a = 1.0f, "seed"_a = 0,
      "Emulate an artifact-laden backbone: blur, contrast loss, then noise.");

  // --- booster --------------------------------------------------------------
  m.def(
      "booster_layer",
      [](const Array& part, const Array& source, int k) {
        return to_array(booster_layer(to_image(part), to_image(source), k));
      },
      "part"_a, "source"_a, "k"_a,
      "Swap a component's base layer for the clean source, keeping its detail.");
  m.def(
      "enhance_renorm",
      [](const Array& img, int k) { return to_array(enhance_renorm(to_image(img), k)); },
      "img"_a, "k"_a, "Unsharp enhancement with display-range renormalization.");

  py::class_<TrainedBooster>(m, "Booster", "Trained probe units plus assembling module")
      .def(
          "boost",
          [](const TrainedBooster& tb, const Array& fused, const Array& a, const Array& b,
             std::optional<int> k) {
            return to_array(boost_image(tb.probe_a, tb.probe_b, tb.ase, to_image(fused),
                                        to_image(a), to_image(b), k.value_or(tb.cfg.k)));
          },
          "fused"_a, "a"_a, "b"_a, "k"_a = py::none(),
          "Full test-time pipeline; k defaults to the training configuration.")
      .def(
          "probe",
          [](const TrainedBooster& tb, const Array& fused) {
            auto [pa, pb] = probe_forward(tb.probe_a, tb.probe_b, to_image(fused));
            return py::make_tuple(to_array(pa), to_array(pb));
          },
          "fused"_a, "Reconstruct both source components from the fused image.")
      .def(
          "assemble",
          [](const TrainedBooster& tb, const Array& part_a, const Array& part_b) {
            return to_array(ase_forward(tb.ase, to_image(part_a), to_image(part_b)));
          },
          "part_a"_a, "part_b"_a, "Recombine two components with the assembling module.")
      .def(
          "save", [](const TrainedBooster& tb, const std::string& path) { save_checkpoint(path, tb); },
          "path"_a, "Write the binary checkpoint (atomic, checksummed).")
      .def_static(
          "load", [](const std::string& path) { return load_checkpoint(path); }, "path"_a,
          "Reload a checkpoint written by save().")
      .def_property_readonly("config",
                             [](const TrainedBooster& tb) {
                               py::dict d;
                               d["k"] = tb.cfg.k;
                               d["epochs"] = tb.cfg.epochs;
                               d["batch"] = tb.cfg.batch;
                               d["lr"] = tb.cfg.lr;
                               d["patch"] = tb.cfg.patch;
                               d["patches_per_pair"] = tb.cfg.patches_per_pair;
                               d["seed"] = tb.cfg.seed;
                               return d;
                             })
      .def_property_readonly("losses", [](const TrainedBooster& tb) {
        py::dict d;
        d["per_a"] = tb.traces.per_a;
        d["per_b"] = tb.traces.per_b;
        d["rec"] = tb.traces.rec;
        return d;
      });

  m.def(
      "train_booster",
      [](const std::vector<std::tuple<Array, Array, Array>>& pairs, int k, int epochs, int batch,
         float lr, int patch, int patches_per_pair, std::uint64_t seed) {
        return train_booster(make_triples(pairs),
                             make_config(k, epochs, batch, lr, patch, patches_per_pair, seed));
      },
      "pairs"_a, py::kw_only(), "k"_a = 3, "epochs"_a = 10, "batch"_a = 2, "lr"_a = 1e-4f,
      "patch"_a = 128, "patches_per_pair"_a = 8, "seed"_a = 1,
      "Two-phase training over (a, b, fused) triples; probes first, assembler second.");
  m.def(
      "load_checkpoint", [](const std::string& path) { return load_checkpoint(path); }, "path"_a,
      "Alias of Booster.load.");

  // --- metrics --------------------------------------------------------------
  m.def(
      "entropy", [](const Array& img) { return entropy(to_image(img)); }, "img"_a,
      "Shannon entropy in bits over the 256-level histogram.");
  m.def(
      "std_dev", [](const Array& img) { return std_dev(to_image(img)); }, "img"_a,
      "Population standard deviation on the 0-255 scale.");
  m.def(
      "edge_intensity", [](const Array& img) { return edge_intensity(to_image(img)); }, "img"_a,
      "Mean Sobel gradient magnitude.");
  m.def(
      "qabf",
      [](const Array& a, const Array& b, const Array& f) {
        return qabf(to_image(a), to_image(b), to_image(f));
      },
      "a"_a, "b"_a, "f"_a, "Gradient-preservation measure of the fused image.");
  m.def(
      "vif",
      [](const Array& a, const Array& b, const Array& f) {
        return vif(to_image(a), to_image(b), to_image(f));
      },
      "a"_a, "b"_a, "f"_a, "Pixel-domain visual information fidelity, source-averaged.");
  m.def(
      "compute_metrics",
      [](const Array& a, const Array& b, const Array& f) {
        const MetricRow row = compute_row("pair", to_image(a), to_image(b), to_image(f));
        py::dict d;
        d["en"] = row.en;
        d["sd"] = row.sd;
        d["ei"] = row.ei;
        d["qabf"] = row.qabf;
        d["vif"] = row.vif;
        d["vif_scales"] = row.vif_scales;
        d["vif_zero_variance"] = row.vif_zero_variance;
        return d;
      },
      "a"_a, "b"_a, "f"_a, "All five quality metrics of one fused pair as a dict.");
}
