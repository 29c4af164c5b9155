#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "clasp/agreement.hpp"
#include "clasp/anchors.hpp"
#include "clasp/checkpoint.hpp"
#include "clasp/config.hpp"
#include "clasp/data_io.hpp"
#include "clasp/errors.hpp"
#include "clasp/evaluation.hpp"
#include "clasp/model.hpp"
#include "clasp/synth.hpp"
#include "clasp/training.hpp"

namespace py = pybind11;
using namespace clasp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + " dimensions");
  const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
  return Tensor({rows, cols}, std::vector<double>(a.data(), a.data() + rows * cols));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Mask to_mask(const std::optional<std::vector<int>>& valid, std::size_t steps) {
  if (!valid) return Mask(steps, 1);
  if (valid->size() != steps) throw ShapeError("mask has " + std::to_string(valid->size()) + " entries for T=" + std::to_string(steps));
  Mask m;
  for (int v : *valid) m.push_back(v != 0);
  return m;
}

JsdVariant to_variant(const std::string& s) {
  if (s == "standard") return JsdVariant::standard;
  if (s == "as_written") return JsdVariant::as_written;
  throw ConfigError("unknown JSD variant: " + s);
}

KeyValues to_kv(const py::dict& d) {
  KeyValues kv;
  for (auto item : d) {
    const auto key = py::str(item.first).cast<std::string>();
    const py::handle v = item.second;
    std::string value;
    if (py::isinstance<py::bool_>(v)) value = v.cast<bool>() ? "true" : "false";
    else if (py::isinstance<py::float_>(v)) value = format_double(v.cast<double>());
    else value = py::str(v).cast<std::string>();
    kv.emplace_back(key, value);
  }
  return kv;
}

py::dict from_kv(const KeyValues& kv) {
  py::dict d;
  for (const auto& [k, v] : kv) d[py::str(k)] = v;
  return d;
}

py::dict record_to_dict(const VideoRecord& rec) {
  py::dict d;
  d["id"] = rec.id;
  d["audio"] = to_array(rec.audio);
  d["visual"] = to_array(rec.visual);
  d["label"] = std::vector<int>(rec.label.begin(), rec.label.end());
  std::vector<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> events;
  for (const auto& e : rec.events) events.emplace_back(e.start, e.end, e.category);
  d["events"] = events;
  d["labels_only"] = rec.labels_only;
  return d;
}

VideoRecord record_from_dict(const py::dict& d) {
  VideoRecord rec;
  rec.id = d["id"].cast<std::string>();
  rec.audio = to_tensor(d["audio"].cast<Array>());
  rec.visual = to_tensor(d["visual"].cast<Array>());
  for (int v : d["label"].cast<std::vector<int>>()) rec.label.push_back(static_cast<std::uint8_t>(v));
  if (d.contains("events")) {
    for (auto [s, e, c] : d["events"].cast<std::vector<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>>>())
      rec.events.push_back({s, e, c});
  }
  if (d.contains("labels_only")) rec.labels_only = d["labels_only"].cast<bool>();
  validate_record(rec);
  return rec;
}

using DetectionTuple = std::tuple<std::string, std::uint32_t, std::uint32_t, std::uint32_t, double>;
using EventTuple = std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>;

std::vector<DetectedEvent> to_detections(const std::vector<DetectionTuple>& in) {
  std::vector<DetectedEvent> out;
  for (const auto& [id, c, s, e, score] : in) out.push_back({id, c, s, e, score});
  return out;
}

std::vector<VideoGroundTruth> to_gt(const std::vector<std::pair<std::string, std::vector<EventTuple>>>& in) {
  std::vector<VideoGroundTruth> out;
  for (const auto& [id, events] : in) {
    VideoGroundTruth v{id, {}};
    for (auto [s, e, c] : events) v.events.push_back({s, e, c});
    out.push_back(std::move(v));
  }
  return out;
}

// Trained or freshly initialized model with its hyperparameters.
struct PyModel {
  HyperParams hp;
  ModelParameters params;
  OptimizerState optimizer;
  std::vector<double> loss_curve;

  py::dict predict(const Array& audio, const Array& visual) const {
    VideoRecord rec;
    rec.id = "input";
    rec.audio = to_tensor(audio);
    rec.visual = to_tensor(visual);
    rec.label.assign(hp.categories, 0);
    const PaddedVideo pv = pad_or_clip(rec, hp.max_steps);
    const Prediction p = clasp::predict(params, pv.features, hp);
    py::dict d;
    d["event_probs"] = to_array(p.event_probs);
    d["video_probs"] = p.video_probs;
    d["agreement"] = p.agreement.score;
    d["global_anchors"] = p.anchors.global;
    d["local_anchors"] = p.anchors.local;
    d["valid"] = std::vector<int>(pv.features.valid.begin(), pv.features.valid.end());
    return d;
  }
};

}  // namespace

PYBIND11_MODULE(_clasp, m) {
  m.doc() = "Weakly-supervised audio-visual event localization";
  m.attr("__version__") = "0.1.0";

  // Translators registered later are tried first, so subclasses go after the base.
  const auto base = py::register_exception<Error>(m, "ClaspError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());

  m.def("bernoulli_jsd", [](double p, double q, const std::string& variant) { return bernoulli_jsd(p, q, to_variant(variant)); },
        py::arg("p"), py::arg("q"), py::arg("variant") = "standard");

  m.def(
      "mutual_agreement",
      [](const Array& pa, const Array& pv, std::optional<std::vector<int>> valid, const std::string& variant) {
        const Tensor a = to_tensor(pa), v = to_tensor(pv);
        const AgreementTrace tr = mutual_agreement(a, v, to_mask(valid, a.rows()), to_variant(variant));
        py::dict d;
        d["p_mean"] = to_array(tr.p_mean);
        d["d_jsd"] = tr.d_jsd;
        d["score"] = tr.score;
        return d;
      },
      py::arg("p_audio"), py::arg("p_visual"), py::arg("valid") = py::none(), py::arg("variant") = "standard");

  m.def(
      "identify_global_anchors",
      [](const std::vector<double>& s, std::optional<std::vector<int>> valid, std::size_t k) {
        return identify_global_anchors(s, to_mask(valid, s.size()), k);
      },
      py::arg("score"), py::arg("valid") = py::none(), py::arg("k") = 10);
  m.def(
      "identify_local_anchors",
      [](const std::vector<double>& s, std::optional<std::vector<int>> valid, std::size_t windows, std::size_t k) {
        return identify_local_anchors(s, to_mask(valid, s.size()), windows, k);
      },
      py::arg("score"), py::arg("valid") = py::none(), py::arg("windows") = 14, py::arg("k") = 4);

  m.def("tiou", [](EventTuple a, EventTuple b) {
    return tiou(std::get<0>(a), std::get<1>(a), std::get<0>(b), std::get<1>(b));
  }, "tIoU of two (start, end[, ...]) inclusive intervals");
  m.def("tiou", [](std::pair<std::uint32_t, std::uint32_t> a, std::pair<std::uint32_t, std::uint32_t> b) {
    return tiou(a.first, a.second, b.first, b.second);
  });

  m.def(
      "extract_intervals",
      [](const Array& probs, std::optional<std::vector<int>> valid, std::optional<std::vector<double>> video_probs,
         double theta_class, double theta_seg, const std::string& pool) {
        const Tensor p = to_tensor(probs);
        const Mask mask = to_mask(valid, p.rows());
        const MilPool mode = pool == "max" ? MilPool::max : MilPool::mean;
        const auto dets = video_probs ? extract_intervals(p, mask, *video_probs, theta_class, theta_seg)
                                      : extract_intervals(p, mask, mode, theta_class, theta_seg);
        std::vector<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t, double>> out;
        for (const auto& d : dets) out.emplace_back(d.category, d.t_start, d.t_end, d.score);
        return out;
      },
      py::arg("probs"), py::arg("valid") = py::none(), py::arg("video_probs") = py::none(),
      py::arg("theta_class") = kDefaultClassThreshold, py::arg("theta_seg") = kDefaultSegmentThreshold,
      py::arg("pool") = "mean",
      "Detections as (category, start, end, score).");

  m.def(
      "average_precision",
      [](const std::vector<DetectionTuple>& dets, const std::vector<std::pair<std::string, std::vector<EventTuple>>>& gt,
         std::uint32_t category, double tau) {
        const auto d = to_detections(dets);
        const auto g = to_gt(gt);
        return average_precision(d, g, category, tau);
      },
      py::arg("detections"), py::arg("ground_truth"), py::arg("category"), py::arg("tau"),
      "detections: (video_id, category, start, end, score); ground_truth: (video_id, [(start, end, category)]).");

  m.def(
      "mean_ap",
      [](const std::vector<DetectionTuple>& dets, const std::vector<std::pair<std::string, std::vector<EventTuple>>>& gt,
         std::size_t categories) {
        const auto d = to_detections(dets);
        const auto g = to_gt(gt);
        const EvalReport r = mean_ap(d, g, categories);
        py::dict out;
        out["thresholds"] = r.thresholds;
        out["map"] = r.map;
        out["average"] = r.average;
        out["per_category"] = r.per_category;
        return out;
      },
      py::arg("detections"), py::arg("ground_truth"), py::arg("categories"));

  m.def(
      "synthesize_dataset",
      [](const py::dict& config) {
        RunConfig rc;
        KeyValues kv;
        for (auto& [k, v] : to_kv(config)) kv.emplace_back("synth." + k, v);
        apply_key_values(rc, kv);
        py::list out;
        for (const auto& rec : synthesize_dataset(rc.synth)) out.append(record_to_dict(rec));
        return out;
      },
      py::arg("config") = py::dict(), "Synthetic videos as dicts; keys of `config` are generator settings.");

  m.def("read_feature_file", [](const std::string& path) { return record_to_dict(load_record(path)); });
  m.def("write_feature_file", [](const std::string& path, const py::dict& rec) { save_record(path, record_from_dict(rec)); });

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const py::dict& config, std::uint64_t seed) {
             PyModel model;
             apply_key_values(model.hp, to_kv(config));
             model.params = ModelParameters::initialize(model.hp, seed);
             model.optimizer = OptimizerState::zeros_like(model.params);
             return model;
           }),
           py::arg("config"), py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) {
        Checkpoint ckpt = load_checkpoint(path);
        return PyModel{ckpt.hp, std::move(ckpt.state.params), std::move(ckpt.state.optimizer), ckpt.state.loss_curve};
      })
      .def("save",
           [](const PyModel& self, const std::string& path) {
             Checkpoint ckpt;
             ckpt.hp = self.hp;
             ckpt.state.params = self.params;
             ckpt.state.optimizer = self.optimizer;
             ckpt.state.loss_curve = self.loss_curve;
             ckpt.state.epochs_done = self.loss_curve.size();
             save_checkpoint(path, ckpt);
           })
      .def_property_readonly("config", [](const PyModel& self) { return from_kv(to_key_values(self.hp)); })
      .def_property_readonly("parameter_names", [](const PyModel& self) { return self.params.names(); })
      .def_property_readonly("loss_curve", [](const PyModel& self) { return self.loss_curve; })
      .def("parameter", [](const PyModel& self, const std::string& name) { return to_array(self.params.at(name)); })
      .def("predict", &PyModel::predict, py::arg("audio"), py::arg("visual"));

  m.def(
      "train",
      [](const py::list& records, const py::dict& model_config, const py::dict& train_config) {
        PyModel model;
        apply_key_values(model.hp, to_kv(model_config));
        RunConfig rc;
        KeyValues kv;
        for (auto& [k, v] : to_kv(train_config)) kv.emplace_back("train." + k, v);
        apply_key_values(rc, kv);
        std::vector<TrainingExample> data;
        for (auto item : records) data.push_back(make_training_example(record_from_dict(item.cast<py::dict>()), model.hp.max_steps));
        TrainState state;
        {
          py::gil_scoped_release release;
          state = train(data, model.hp, rc.train);
        }
        model.params = std::move(state.params);
        model.optimizer = std::move(state.optimizer);
        model.loss_curve = std::move(state.loss_curve);
        return model;
      },
      py::arg("records"), py::arg("model_config"), py::arg("train_config") = py::dict());
}
