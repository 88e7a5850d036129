// Copyright 2026 The ectoken Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Python bindings. Reports cross the boundary as JSON text; the package
// wrapper decodes them.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "ectoken/downstream.h"
#include "ectoken/error.h"
#include "ectoken/metrics.h"
#include "ectoken/pipeline.h"
#include "ectoken/synth.h"

namespace py = pybind11;
using namespace ectoken;

namespace {

using PyLog = std::optional<std::function<void(const std::string&)>>;

// Training runs without the GIL; progress messages re-acquire it.
Logger wrap_log(const PyLog& log) {
  if (!log) return {};
  auto f = *log;
  return [f](const std::string& m) {
    py::gil_scoped_acquire g;
    f(m);
  };
}

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<double> positions_array(const std::vector<Vec3>& p) {
  py::array_t<double> out({static_cast<py::ssize_t>(p.size()), py::ssize_t{3}});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < p.size(); ++i)
    for (int d = 0; d < 3; ++d) m(i, d) = p[i][d];
  return out;
}

double score(TaskKind task, const TaskHead& head, const FusedRepresentation& f) {
  return (task == TaskKind::kLep ? predict_lep(head, f) : predict_lba(head, f)).item();
}

py::dict pretrain_dict(const PretrainResult& r) {
  py::dict d;
  d["steps"] = r.steps;
  d["first_step_reconstruction"] = r.first_step_reconstruction;
  d["probe_start"] = r.probe_start;
  d["probe_end"] = r.probe_end;
  d["probe_accuracy_start"] = r.probe_accuracy_start;
  d["probe_accuracy_end"] = r.probe_accuracy_end;
  py::list rows;
  for (const EpochRow& e : r.epochs) {
    py::dict row;
    row["epoch"] = e.epoch;
    row["reconstruction"] = e.reconstruction;
    row["atom"] = e.atom;
    row["interaction"] = e.interaction;
    row["commitment1"] = e.commitment1;
    row["commitment2"] = e.commitment2;
    row["perplexity1"] = e.perplexity1;
    row["perplexity2"] = e.perplexity2;
    row["dead1"] = e.dead1;
    row["dead2"] = e.dead2;
    row["probe_reconstruction"] = e.probe_reconstruction;
    row["probe_accuracy"] = e.probe_accuracy;
    rows.append(row);
  }
  d["epochs"] = rows;
  return d;
}

py::dict tokenized_dict(const TokenizedComplex& t) {
  py::dict d;
  d["id"] = t.id;
  for (std::size_t s = 0; s < 4; ++s) d[kStreamNames[s]] = t.indices[s];
  return d;
}

}  // namespace

PYBIND11_MODULE(_ectoken, m) {
  m.doc() = "Electron-cloud and full-atom tokenizers for binding sites";
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", [](const std::string& text) { return RunConfig::parse(text); })
      .def_static("load", &RunConfig::load)
      .def_static("tiny", &tiny_config)
      .def("canonical", &RunConfig::canonical)
      .def("hash", &RunConfig::hash)
      .def("hash_hex", [](const RunConfig& c) { return hex64(c.hash()); })
      .def("model_hash", &RunConfig::model_hash)
      .def("validate", &RunConfig::validate)
      .def("diff", [](const RunConfig& a, const RunConfig& b) { return config_diff(a, b); })
      .def("__eq__", [](const RunConfig& a, const RunConfig& b) { return a.canonical() == b.canonical(); })
      .def("__repr__", [](const RunConfig& c) { return "<RunConfig " + hex64(c.hash()) + ">"; });

  py::class_<BindingComplex>(m, "BindingComplex")
      .def_readonly("id", &BindingComplex::id)
      .def_readonly("protein", &BindingComplex::protein)
      .def_readonly("label", &BindingComplex::label)
      .def("__len__", &BindingComplex::size)
      .def_property_readonly("positions", [](const BindingComplex& c) { return positions_array(c.positions()); })
      .def_property_readonly("types", [](const BindingComplex& c) {
        std::vector<int> t;
        for (const auto& a : c.atoms) t.push_back(a.type);
        return t;
      })
      .def_property_readonly("is_ligand", [](const BindingComplex& c) {
        std::vector<bool> l;
        for (const auto& a : c.atoms) l.push_back(a.chain == Chain::kLigand);
        return l;
      })
      .def("contact_count", [](const BindingComplex& c, double cutoff) { return contact_count(c, cutoff); },
           py::arg("cutoff") = 4.0)
      .def("rigid_transform", [](const BindingComplex& c, py::array_t<double> rotation, std::array<double, 3> t) {
        auto r = rotation.unchecked<2>();
        if (r.shape(0) != 3 || r.shape(1) != 3) throw ValidationError("rotation must be 3x3");
        Mat3 mat{};
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) mat[i][j] = r(i, j);
        return rigid_transform(c, mat, Vec3{t[0], t[1], t[2]});
      });

  py::class_<Dataset>(m, "Dataset")
      .def_static("load", &Dataset::load)
      .def_readonly("dir", &Dataset::dir)
      .def_readonly("train", &Dataset::train)
      .def_readonly("valid", &Dataset::valid)
      .def_readonly("test", &Dataset::test)
      .def("split", &Dataset::split, py::return_value_policy::reference_internal)
      .def("cloud_positions", [](const Dataset& d, const std::string& id) { return positions_array(d.cloud(id).positions); })
      .def("cloud_values", [](const Dataset& d, const std::string& id) { return d.cloud(id).values; });

  m.def("generate_dataset", [](const RunConfig& cfg, const std::string& dir) {
    GeneratedCounts n = generate_dataset(cfg.data, dir);
    py::dict d;
    d["train"] = n.train;
    d["valid"] = n.valid;
    d["test"] = n.test;
    d["grids"] = n.grids;
    d["pairs"] = n.pairs;
    return d;
  }, py::arg("config"), py::arg("dir"));

  py::class_<ECTokenizer>(m, "ECTokenizer")
      .def(py::init([](const RunConfig& cfg) {
        Rng rng(model_seed(cfg, "ec"));
        return ECTokenizer(cfg.model, rng);
      }))
      .def_static("load", [](const std::string& path) { return load_ec(path); })
      .def("save", [](const ECTokenizer& t, const RunConfig& cfg, const std::string& path) { save_ec(t, cfg, path); });
  py::class_<FATokenizer>(m, "FATokenizer")
      .def(py::init([](const RunConfig& cfg) {
        Rng rng(model_seed(cfg, "fa"));
        return FATokenizer(cfg.model, rng);
      }))
      .def_static("load", [](const std::string& path) { return load_fa(path); })
      .def("save", [](const FATokenizer& t, const RunConfig& cfg, const std::string& path) { save_fa(t, cfg, path); })
      .def("embed", [](const FATokenizer& t, const BindingComplex& c) {
        NoGradGuard g;
        return to_numpy(t.encode(c, {}, {}).embedding);
      });

  m.def("pretrain_ec", [](const RunConfig& cfg, const Dataset& data, ECTokenizer& tok, const std::string& out, PyLog log) {
    PretrainResult r;
    {
      py::gil_scoped_release nogil;
      r = pretrain_ec(cfg, data, tok, out, wrap_log(log));
    }
    return pretrain_dict(r);
  }, py::arg("config"), py::arg("data"), py::arg("tokenizer"), py::arg("out") = "", py::arg("log") = py::none());
  m.def("pretrain_fa", [](const RunConfig& cfg, const Dataset& data, FATokenizer& tok, const std::string& out, PyLog log) {
    PretrainResult r;
    {
      py::gil_scoped_release nogil;
      r = pretrain_fa(cfg, data, tok, out, wrap_log(log));
    }
    return pretrain_dict(r);
  }, py::arg("config"), py::arg("data"), py::arg("tokenizer"), py::arg("out") = "", py::arg("log") = py::none());

  m.def("tokenize", [](const ECTokenizer& ec, const FATokenizer& fa, const Dataset& d, const BindingComplex& c) {
    NoGradGuard g;
    return tokenized_dict(tokenize(ec, fa, c, d.cloud(c.id)));
  }, py::arg("ec"), py::arg("fa"), py::arg("data"), py::arg("complex"));
  m.def("tokenize_dataset", [](const ECTokenizer& ec, const FATokenizer& fa, const Dataset& d, const RunConfig& cfg,
                               const std::string& out) { return tokenize_dataset(ec, fa, d, cfg, out); },
        py::arg("ec"), py::arg("fa"), py::arg("data"), py::arg("config"), py::arg("out"));

  py::class_<TeacherModel>(m, "TeacherModel")
      .def(py::init([](const RunConfig& cfg, const ECTokenizer& ec, const FATokenizer& fa) {
        return make_teacher(cfg, clone(ec), clone(fa));
      }), py::arg("config"), py::arg("ec"), py::arg("fa"))
      .def_static("load", [](const std::string& path) { return load_teacher(path); })
      .def("save", [](const TeacherModel& t, const RunConfig& cfg, const std::string& path) { save_teacher(t, cfg, path); })
      .def_property_readonly("task", [](const TeacherModel& t) { return task_name(t.task); })
      .def("freeze", &TeacherModel::freeze)
      .def("fuse", [](const TeacherModel& t, const Dataset& d, const BindingComplex& c) {
        NoGradGuard g;
        FusedRepresentation f = t.fuse(c, d.cloud(c.id));
        return py::make_tuple(to_numpy(f.fused), to_numpy(f.weights));
      })
      .def("predict", [](const TeacherModel& t, const Dataset& d, const BindingComplex& c) {
        NoGradGuard g;
        return score(t.task, t.head, t.fuse(c, d.cloud(c.id)));
      })
      .def("predict_relative", [](const TeacherModel& t, const Dataset& d, const BindingComplex& p,
                                  const BindingComplex& q) {
        NoGradGuard g;
        return predict_relative(t.head, t.fuse(p, d.cloud(p.id)), t.fuse(q, d.cloud(q.id))).item();
      })
      .def("evaluate", [](const TeacherModel& t, const Dataset& d, const std::string& split, const RunConfig& cfg) {
        return evaluate(t, d, split, cfg).to_json();
      }, py::arg("data"), py::arg("split") = "test", py::arg("config") = RunConfig{});

  m.def("finetune", [](const RunConfig& cfg, const Dataset& d, TeacherModel& t, PyLog log) {
    FinetuneResult r;
    {
      py::gil_scoped_release nogil;
      r = finetune(cfg, d, t, wrap_log(log));
    }
    return r.validation.to_json();
  }, py::arg("config"), py::arg("data"), py::arg("teacher"), py::arg("log") = py::none());

  py::class_<StudentModel>(m, "StudentModel")
      .def(py::init([](const TeacherModel& t, const RunConfig& cfg) {
        Rng rng(model_seed(cfg, "student"));
        std::size_t hidden = cfg.distill.surrogate_hidden ? cfg.distill.surrogate_hidden : cfg.model.dim;
        return StudentModel(t, hidden, rng);
      }), py::arg("teacher"), py::arg("config"))
      .def_static("load", [](const std::string& path) { return load_student(path); })
      .def("save", [](const StudentModel& s, const RunConfig& cfg, const std::string& path) { save_student(s, cfg, path); })
      .def("fuse", [](const StudentModel& s, const BindingComplex& c) {
        NoGradGuard g;
        FusedRepresentation f = s.fuse(c);
        return py::make_tuple(to_numpy(f.fused), to_numpy(f.weights));
      })
      .def("predict", [](const StudentModel& s, const BindingComplex& c) {
        NoGradGuard g;
        return score(s.task, s.head, s.fuse(c));
      })
      .def("evaluate", [](const StudentModel& s, const Dataset& d, const std::string& split, const RunConfig& cfg) {
        return evaluate(s, d, split, cfg).to_json();
      }, py::arg("data"), py::arg("split") = "test", py::arg("config") = RunConfig{});

  m.def("distill", [](const RunConfig& cfg, const Dataset& d, TeacherModel& t, StudentModel& s, PyLog log) {
    t.freeze();
    DistillResult r;
    {
      py::gil_scoped_release nogil;
      r = distill(cfg, d, t, s, wrap_log(log));
    }
    return distill_report_json(r, cfg);
  }, py::arg("config"), py::arg("data"), py::arg("teacher"), py::arg("student"), py::arg("log") = py::none());

  m.def("time_teacher", [](const TeacherModel& t, const Dataset& d, std::size_t repeats, const RunConfig& cfg) {
    return time_inference(t, d, repeats).to_json(cfg);
  });
  m.def("time_student", [](const StudentModel& s, const Dataset& d, std::size_t repeats, const RunConfig& cfg) {
    return time_inference(s, d, repeats).to_json(cfg);
  });
  m.def("checkpoint_kind", &checkpoint_kind);
  m.def("checkpoint_config", [](const std::string& path) {
    RunConfig cfg;
    std::string kind = checkpoint_kind(path);
    if (kind == "ec") load_ec(path, &cfg);
    else if (kind == "fa") load_fa(path, &cfg);
    else if (kind == "teacher") load_teacher(path, &cfg);
    else load_student(path, &cfg);
    return cfg;
  });

  m.def("random_rotation", [](std::uint64_t seed) {
    Rng rng(seed);
    Mat3 r = random_rotation(rng);
    py::array_t<double> out({3, 3});
    auto w = out.mutable_unchecked<2>();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) w(i, j) = r[i][j];
    return out;
  });

  using Vec = std::vector<double>;
  m.def("pearson", [](const Vec& x, const Vec& y) { return pearson(x, y); });
  m.def("spearman", [](const Vec& x, const Vec& y) { return spearman(x, y); });
  m.def("rmse", [](const Vec& y, const Vec& yhat) { return rmse(y, yhat); });
  m.def("auroc", [](const std::vector<int>& l, const Vec& s) { return auroc(l, s); });
  m.def("auprc", [](const std::vector<int>& l, const Vec& s) { return auprc(l, s); });
  m.def("per_structure", [](const std::string& metric, const std::vector<std::string>& groups, const Vec& y,
                            const Vec& yhat) {
    if (groups.size() != y.size() || y.size() != yhat.size()) throw ValidationError("per_structure: length mismatch");
    Correlation f = metric == "pearson" ? &pearson : metric == "spearman" ? &spearman : nullptr;
    if (!f) throw ValidationError("per_structure: metric must be pearson or spearman");
    std::vector<GroupRecord> r;
    for (std::size_t i = 0; i < y.size(); ++i) r.push_back({groups[i], y[i], yhat[i]});
    GroupMetric g = per_structure(f, r);
    return py::make_tuple(g.mean, g.group_count, g.per_group);
  }, py::arg("metric"), py::arg("groups"), py::arg("y"), py::arg("yhat"));
}
