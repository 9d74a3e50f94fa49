#include "egoclust/config.hpp"
#include "egoclust/contrastive.hpp"
#include "egoclust/dataset.hpp"
#include "egoclust/events.hpp"
#include "egoclust/mae.hpp"
#include "egoclust/pipeline.hpp"
#include "egoclust/trainer.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

namespace py = pybind11;
using namespace egoclust;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I32Array = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const F64Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>::from_data(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

// Leading axis is the batch; each entry becomes one tensor.
std::vector<Tensor<double>> to_batch(const F64Array& a) {
  if (a.ndim() < 2) throw ShapeError("expected a batch with at least 2 dimensions");
  const Shape item(a.shape() + 1, a.shape() + a.ndim());
  const auto n = numel(item);
  std::vector<Tensor<double>> out;
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    out.push_back(Tensor<double>::from_data(item, std::vector<double>(a.data() + i * n, a.data() + (i + 1) * n)));
  return out;
}

FeatureSet to_features(const F64Array& x, const std::optional<I32Array>& y) {
  if (x.ndim() != 2) throw ShapeError("features must be a (frames, dim) array");
  FeatureSet fs;
  fs.dim = static_cast<std::size_t>(x.shape(1));
  fs.values.assign(x.data(), x.data() + x.size());
  fs.frame_index.resize(static_cast<std::size_t>(x.shape(0)));
  for (std::size_t i = 0; i < fs.frame_index.size(); ++i) fs.frame_index[i] = static_cast<std::int64_t>(i);
  if (y) fs.labels = std::vector<int>(y->data(), y->data() + y->size());
  fs.validate();
  return fs;
}

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v) {
  py::array_t<T> out(static_cast<py::ssize_t>(v.size()));
  std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(T));
  return out;
}

SegmentationParams seg_params(std::size_t window, double threshold, double merge_threshold, std::size_t min_length,
                              const std::string& scaling) {
  SegmentationParams p;
  p.window = window;
  p.threshold = threshold;
  p.merge_threshold = merge_threshold;
  p.min_length = min_length;
  p.scaling = parse_scaling(scaling);
  p.validate();
  return p;
}

}  // namespace

PYBIND11_MODULE(_egoclust, m) {
  m.doc() = "Self-supervised event clustering for egocentric image sequences";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def(
      "generate_synthetic",
      [](std::size_t num_events, std::size_t frames_per_event, std::size_t image_size, double jitter,
         double separation, double min_color_gap, std::uint64_t seed) {
        SyntheticSpec spec;
        spec.num_events = num_events;
        spec.min_frames = spec.max_frames = frames_per_event;
        spec.image_size = image_size;
        spec.jitter = jitter;
        spec.separation = separation;
        spec.min_color_gap = min_color_gap;
        const auto seq = generate_synthetic(spec, seed);
        const auto n = static_cast<py::ssize_t>(seq.size());
        const auto s = static_cast<py::ssize_t>(image_size);
        py::array_t<float> frames({n, py::ssize_t{3}, s, s});
        auto* dst = frames.mutable_data();
        for (const auto& f : seq.frames) dst = std::copy(f.image.data.begin(), f.image.data.end(), dst);
        return py::make_tuple(frames, to_array(seq.labels()));
      },
      py::arg("num_events") = 5, py::arg("frames_per_event") = 40, py::arg("image_size") = 64,
      py::arg("jitter") = 0.2, py::arg("separation") = 1.0, py::arg("min_color_gap") = 0.12, py::arg("seed") = 0,
      "Synthetic labeled sequence: (frames [N,3,H,W] float32 in [0,1], event labels [N]).");

  m.def(
      "joint_loss",
      [](double l_mae, double l_con, double alpha, double beta) { return joint_loss(l_mae, l_con, alpha, beta); },
      py::arg("l_mae"), py::arg("l_con"), py::arg("alpha") = 0.8, py::arg("beta") = 0.02);

  m.def(
      "lr_at",
      [](std::size_t epoch, double base_lr, double decay, std::size_t period) {
        TrainConfig c;
        c.base_lr = base_lr;
        c.lr_decay = decay;
        c.decay_period = period;
        return lr_at(epoch, c);
      },
      py::arg("epoch"), py::arg("base_lr") = 5e-5, py::arg("decay") = 0.8, py::arg("period") = 15);

  m.def("masked_count", &masked_count, py::arg("total"), py::arg("ratio") = 0.75);

  m.def(
      "sample_mask",
      [](std::size_t total, double ratio, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        const auto mask = sample_mask(total, ratio, rng);
        return py::make_tuple(mask.masked, mask.visible);
      },
      py::arg("total"), py::arg("ratio") = 0.75, py::arg("seed") = 0, "Returns (masked, visible) index lists.");

  m.def(
      "similarity_matrix",
      [](const F64Array& lhs, const F64Array& rhs) {
        const auto s = similarity_matrix(to_batch(lhs), to_batch(rhs));
        py::array_t<double> out({static_cast<py::ssize_t>(s.dim(0)), static_cast<py::ssize_t>(s.dim(1))});
        const auto v = s.to_vector();
        std::copy(v.begin(), v.end(), out.mutable_data());
        return out;
      },
      py::arg("lhs"), py::arg("rhs"), "Slab-wise cosine between [N,C,W,H] batches.");

  m.def(
      "contrastive_loss",
      [](const F64Array& z1, const F64Array& z2, double tau) {
        return contrastive_loss(to_batch(z1), to_batch(z2), tau).item();
      },
      py::arg("z1"), py::arg("z2"), py::arg("tau") = 0.5);

  m.def(
      "mae_loss",
      [](const F64Array& reconstruction, const F64Array& tokens, std::vector<std::size_t> masked) {
        const auto t = to_tensor(tokens);
        return mae_loss(to_tensor(reconstruction), t, MaskSpec::from_masked(t.dim(0), std::move(masked))).item();
      },
      py::arg("reconstruction"), py::arg("tokens"), py::arg("masked"));

  m.def(
      "cluster_metrics",
      [](const I32Array& pred, const I32Array& truth) {
        const auto r = cluster_metrics(std::span<const int>(pred.data(), pred.size()),
                                       std::span<const int>(truth.data(), truth.size()));
        py::dict d;
        d["ari"] = r.ari;
        d["nmi"] = r.nmi;
        d["purity"] = r.purity;
        return d;
      },
      py::arg("pred"), py::arg("truth"));

  m.def(
      "boundary_scores",
      [](const F64Array& features, std::size_t window, const std::string& scaling) {
        return to_array(boundary_scores(to_features(features, std::nullopt), seg_params(window, 0.3, 0.15, 3, scaling)));
      },
      py::arg("features"), py::arg("window") = 5, py::arg("scaling") = "standardize");

  m.def(
      "segment_events",
      [](const F64Array& features, std::size_t window, double threshold, double merge_threshold,
         std::size_t min_length, const std::string& scaling) {
        const auto params = seg_params(window, threshold, merge_threshold, min_length, scaling);
        return to_array(segment_events(to_features(features, std::nullopt), params).events);
      },
      py::arg("features"), py::arg("window") = 5, py::arg("threshold") = 0.3, py::arg("merge_threshold") = 0.15,
      py::arg("min_length") = 3, py::arg("scaling") = "standardize", "Event id per frame, dense from 0.");

  m.def(
      "linear_probe",
      [](const F64Array& train_x, const I32Array& train_y, const F64Array& test_x, const I32Array& test_y, double lr,
         std::size_t epochs, std::uint64_t seed) {
        ProbeConfig c;
        c.lr = lr;
        c.epochs = epochs;
        c.seed = seed;
        const auto r = linear_probe(to_features(train_x, train_y), to_features(test_x, test_y), c);
        py::dict d;
        d["top1"] = r.top1;
        d["classes"] = r.classes;
        d["per_class"] = r.per_class;
        d["confusion"] = r.confusion;
        return d;
      },
      py::arg("train_x"), py::arg("train_y"), py::arg("test_x"), py::arg("test_y"), py::arg("lr") = 1e-3,
      py::arg("epochs") = 50, py::arg("seed") = 0);

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", [](const std::string& text) { return parse_config(text); }, py::arg("text"))
      .def_static("load", &load_config, py::arg("path"))
      .def("to_toml", [](const RunConfig& c) { return to_toml(c); })
      .def(
          "apply_branch", [](RunConfig& c, const std::string& b) { c.apply_branch(parse_branch(b)); },
          py::arg("branch"))
      .def_property_readonly("branch", [](const RunConfig& c) { return branch_name(c.branch); });

  m.def(
      "generate_dataset",
      [](const RunConfig& config, std::uint64_t seed, const std::filesystem::path& out, bool force) {
        generate_dataset(config.data.synthetic, seed, out, force);
      },
      py::arg("config"), py::arg("seed"), py::arg("out"), py::arg("force") = false);

  m.def(
      "pretrain",
      [](const RunConfig& config, const std::filesystem::path& data, const std::filesystem::path& out, bool force) {
        py::gil_scoped_release release;
        return pretrain(config, data, out, force).result.epoch_means;
      },
      py::arg("config"), py::arg("data"), py::arg("out"), py::arg("force") = false,
      "Trains and writes the run directory; returns the per-epoch mean joint loss.");

  m.def(
      "probe",
      [](const RunConfig& config, const std::filesystem::path& checkpoint, const std::filesystem::path& data,
         const std::filesystem::path& out) {
        py::gil_scoped_release release;
        return probe(config, checkpoint, data, std::nullopt, out).top1;
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("data"), py::arg("out"));

  m.def(
      "cluster",
      [](const RunConfig& config, const std::filesystem::path& checkpoint, const std::filesystem::path& data,
         const std::filesystem::path& out) {
        ClusterSummary s;
        {
          py::gil_scoped_release release;
          s = cluster(config, checkpoint, data, out);
        }
        return to_array(s.manifest.events);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("data"), py::arg("out"));

  m.def("write_report", &write_report, py::arg("run_dir"));
}
