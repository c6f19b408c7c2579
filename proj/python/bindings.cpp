#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <memory>
#include <stdexcept>

#include "cdikt/checkpoint.hpp"
#include "cdikt/pipeline.hpp"
#include "cdikt/rng.hpp"
#include "cdikt/selfcheck.hpp"

namespace py = pybind11;
using namespace cdikt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<std::vector<double>> rows_of(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  auto r = a.unchecked<2>();
  std::vector<std::vector<double>> out(r.shape(0), std::vector<double>(r.shape(1)));
  for (py::ssize_t i = 0; i < r.shape(0); ++i) {
    for (py::ssize_t j = 0; j < r.shape(1); ++j) out[i][j] = r(i, j);
  }
  return out;
}

std::vector<double> flat_of(const Array& a) { return {a.data(), a.data() + a.size()}; }

Array to_array(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size(), d = n ? rows[0].size() : 0;
  Array out({n, d});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) w(i, j) = rows[i][j];
  }
  return out;
}

std::vector<Embedding> tagged(const Array& vectors, const std::vector<std::string>& locations, View view) {
  auto rows = rows_of(vectors);
  if (rows.size() != locations.size()) throw std::invalid_argument("one location per row is required");
  std::vector<Embedding> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[i].id = std::to_string(i);
    out[i].view = view;
    normalize_in_place(out[i].vector = std::move(rows[i]));
    out[i].location = locations[i];
  }
  return out;
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["direction"] = direction_name(m.direction);
  d["queries"] = m.queries;
  d["gallery"] = m.gallery;
  d["r1"] = m.r1;
  d["r5"] = m.r5;
  d["r10"] = m.r10;
  d["ap"] = m.ap;
  d["overlap"] = m.overlap;
  return d;
}

ExperimentConfig config_from(const py::dict& settings) {
  ExperimentConfig c;
  for (auto [k, v] : settings) c.set(py::str(k), py::str(v));
  c.validate();
  return c;
}

std::vector<LocationRecord> load_records(const std::filesystem::path& root, std::size_t size) {
  auto report = load_dataset(root, size);
  if (report.records.empty()) throw DataError("no usable locations under " + root.string());
  return std::move(report.records);
}

// Owning handle for a trained network.
struct Model {
  std::shared_ptr<CdisNet> net;
  std::vector<py::dict> log;

  Array embed(const py::array_t<float, py::array::c_style | py::array::forcecast>& images) const {
    if (images.ndim() != 4 || images.shape(1) != 3) throw std::invalid_argument("expected images shaped [N,3,H,W]");
    const std::size_t n = images.shape(0), h = images.shape(2), w = images.shape(3);
    std::vector<Tensor> inputs;
    for (std::size_t i = 0; i < n; ++i) {
      Image im(h, w);
      std::copy_n(images.data() + i * 3 * h * w, 3 * h * w, im.pixels.begin());
      if (h != net->config().input_size || w != h) im = resize_bilinear(im, net->config().input_size);
      inputs.push_back(to_tensor(im));
    }
    return to_array(embed_all(*net, inputs));
  }

  py::dict evaluate(const std::filesystem::path& root, const std::string& direction, std::uint64_t seed) const {
    auto records = load_records(root, net->config().input_size);
    return metrics_dict(evaluate_model(*net, records, parse_direction(direction), seed));
  }
};

py::dict stats_dict(const EpochStats& s) {
  py::dict d;
  d["phase"] = s.phase;
  d["epoch"] = s.epoch;
  d["steps"] = s.steps;
  d["drone_clusters"] = s.drone_clusters;
  d["satellite_clusters"] = s.satellite_clusters;
  d["drone_noise"] = s.drone_noise;
  d["satellite_noise"] = s.satellite_noise;
  d["loss_total"] = s.loss_total;
  d["drone_purity"] = s.drone_purity ? py::cast(*s.drone_purity) : py::none();
  return d;
}

Model train(const std::filesystem::path& root, const py::dict& settings) {
  ExperimentConfig c = config_from(settings);
  auto records = load_records(root, c.input_size);
  ExperimentResult result;
  {
    py::gil_scoped_release release;
    if (c.setting == Setting::kIII) {
      if (c.init_checkpoint.empty()) throw ConfigError("setting iii needs init_checkpoint");
      auto init = load_checkpoint(c.init_checkpoint);
      auto split = split_supervision(records, 0.0, derive_seed(c.seed, "split"));
      result = run_unpaired_adaptation(c, *init.net, split.unpaired);
    } else {
      auto split = split_supervision(records, c.gt_ratio, derive_seed(c.seed, "split"));
      result = run_supervised_transfer(c, split);
    }
  }
  Model m{std::shared_ptr<CdisNet>(std::move(result.model)), {}};
  for (const auto& s : result.log) m.log.push_back(stats_dict(s));
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-view drone/satellite retrieval with cluster-based transfer";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<CollapseError>(m, "CollapseError", PyExc_RuntimeError);

  m.def(
      "dbscan",
      [](const Array& points, double eps, std::size_t min_samples) {
        auto a = dbscan(rows_of(points), DbscanParams{eps, min_samples});
        return py::array_t<int>(a.labels.size(), a.labels.data());
      },
      py::arg("points"), py::arg("eps") = kDroneEps, py::arg("min_samples") = 4,
      "Cluster labels (-1 for noise) under cosine distance.");

  m.def(
      "cosine_distance", [](const Array& a, const Array& b) { return cosine_distance(flat_of(a), flat_of(b)); },
      py::arg("a"), py::arg("b"));

  m.def(
      "momentum_update",
      [](const Array& centroid, const Array& query, double alpha) {
        auto v = momentum_blend(flat_of(centroid), flat_of(query), alpha);
        normalize_in_place(v);
        return py::array_t<double>(v.size(), v.data());
      },
      py::arg("centroid"), py::arg("query"), py::arg("alpha") = kDefaultMomentum,
      "Blended and renormalized centroid.");

  m.def(
      "contrastive_loss",
      [](const Array& queries, const Array& centroids, const std::vector<std::size_t>& positives,
         double temperature) {
        auto rows = rows_of(centroids);
        ClusterMemory mem;
        mem.count = rows.size();
        mem.dim = mem.count ? rows[0].size() : 0;
        for (auto& r : rows) mem.centroids.insert(mem.centroids.end(), r.begin(), r.end());
        auto q = rows_of(queries);
        std::vector<double> flat;
        for (auto& r : q) flat.insert(flat.end(), r.begin(), r.end());
        Tensor t({q.size(), mem.dim}, std::move(flat));
        return contrastive_loss(t, mem, positives, temperature).item();
      },
      py::arg("queries"), py::arg("centroids"), py::arg("positives"),
      py::arg("temperature") = kDefaultMemoryTemperature);

  m.def(
      "similarity_overlap",
      [](const Array& positives, const Array& negatives, std::size_t bins) {
        return similarity_overlap(flat_of(positives), flat_of(negatives), bins).overlap;
      },
      py::arg("positives"), py::arg("negatives"), py::arg("bins") = kOverlapBins);

  m.def(
      "evaluate",
      [](const Array& queries, const std::vector<std::string>& query_locations, const Array& gallery,
         const std::vector<std::string>& gallery_locations, std::uint64_t seed) {
        auto q = tagged(queries, query_locations, View::kDrone);
        auto g = tagged(gallery, gallery_locations, View::kSatellite);
        return metrics_dict(evaluate_retrieval(q, g, Direction::kDroneToSatellite, seed));
      },
      py::arg("queries"), py::arg("query_locations"), py::arg("gallery"), py::arg("gallery_locations"),
      py::arg("seed") = 0, "R@1/5/10, AP and positive/negative overlap for location-tagged vectors.");

  m.def(
      "synth_generate",
      [](const std::filesystem::path& root, std::size_t locations, std::size_t views, double strength,
         double confusion, double gap, std::size_t size, std::uint32_t style, std::uint64_t seed) {
        SyntheticSpec spec;
        spec.num_locations = locations;
        spec.drone_views_per_location = views;
        spec.view_transform_strength = strength;
        spec.confusion = confusion;
        spec.cross_view_gap = gap;
        spec.image_size = size;
        spec.style = style;
        spec.seed = seed;
        synth_generate(spec, root);
      },
      py::arg("root"), py::arg("locations") = 32, py::arg("views") = SyntheticSpec{}.drone_views_per_location,
      py::arg("strength") = SyntheticSpec{}.view_transform_strength, py::arg("confusion") = SyntheticSpec{}.confusion,
      py::arg("gap") = SyntheticSpec{}.cross_view_gap, py::arg("size") = 96, py::arg("style") = 0, py::arg("seed") = 0);

  m.def("default_config", [] { return ExperimentConfig{}.to_kv(); }, "Every configuration key with its default.");

  py::class_<Model>(m, "Model")
      .def("embed", &Model::embed, py::arg("images"), "Unit-norm embeddings of [N,3,H,W] images in [0,1].")
      .def("evaluate", &Model::evaluate, py::arg("root"), py::arg("direction") = "d2s", py::arg("seed") = 0)
      .def(
          "save", [](const Model& self, const std::filesystem::path& p) { save_checkpoint(p, *self.net); },
          py::arg("path"))
      .def_property_readonly("log", [](const Model& self) { return self.log; })
      .def_property_readonly("input_size", [](const Model& self) { return self.net->config().input_size; })
      .def_property_readonly("embedding_dim", [](const Model& self) { return self.net->config().channels(); });

  m.def("train", &train, py::arg("root"), py::arg("settings") = py::dict(),
        "Train on a dataset directory; settings use the configuration keys.");

  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& p) {
        return Model{std::shared_ptr<CdisNet>(load_checkpoint(p).net.release()), {}};
      },
      py::arg("path"));

  m.def(
      "selfcheck",
      [](std::uint64_t seed) {
        std::vector<SuiteReport> reports;
        {
          py::gil_scoped_release release;
          reports = run_selfcheck(seed);
        }
        py::list out;
        for (const auto& r : reports) {
          py::dict d;
          d["name"] = r.name;
          d["trials"] = r.trials;
          d["failures"] = r.failures;
          d["passed"] = r.passed();
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0);
}
