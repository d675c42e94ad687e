#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "stkd/checkpoint.hpp"
#include "stkd/commands.hpp"
#include "stkd/losses.hpp"
#include "stkd/model.hpp"

namespace py = pybind11;
using namespace stkd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ModelConfig role_config(const std::string& role, int nodes) {
  if (role == "teacher") return ModelConfig::teacher(nodes);
  if (role == "base") return ModelConfig::pruning_base(nodes);
  if (role == "student") return ModelConfig::student(nodes);
  throw py::value_error("role must be teacher, base or student");
}

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 4) throw py::value_error("expected a 4-D array (batch, time, node, channel)");
  Tensor t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
           static_cast<int>(a.shape(3)));
  std::copy_n(a.data(), t.size(), t.data());
  return t;
}

Array from_tensor(const Tensor& t) {
  Array out({t.dim(0), t.dim(1), t.dim(2), t.dim(3)});
  std::copy_n(t.data(), t.size(), out.mutable_data());
  return out;
}

RowMatrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array (batch, node)");
  RowMatrix m(a.shape(0), a.shape(1));
  std::copy_n(a.data(), m.size(), m.data());
  return m;
}

}  // namespace

PYBIND11_MODULE(_stkd, m) {
  m.doc() = "Spatio-temporal graph network distillation and pruning";

  m.def("parameter_count", [](const std::string& role, int nodes) { return parameter_count(role_config(role, nodes)); },
        py::arg("role"), py::arg("nodes"));
  m.def("count_flops",
        [](const std::string& role, int nodes, std::uint64_t batch) { return count_flops(role_config(role, nodes), batch); },
        py::arg("role"), py::arg("nodes"), py::arg("batch") = 1);

  m.def("correlation_temporal", [](const Array& f) { return from_tensor(correlation_tensor_temporal(to_tensor(f))); },
        py::arg("features"));
  m.def("correlation_spatial", [](const Array& f) { return from_tensor(correlation_tensor_spatial(to_tensor(f))); },
        py::arg("features"));
  m.def("tcd_loss", [](const Array& s, const Array& t) { return tcd_pair(to_tensor(s), to_tensor(t)); },
        py::arg("student"), py::arg("teacher"));
  m.def("scd_loss", [](const Array& s, const Array& t) { return scd_pair(to_tensor(s), to_tensor(t)); },
        py::arg("student"), py::arg("teacher"));
  m.def(
      "ord_loss",
      [](const Array& s, const Array& t, const Array& y, double alpha1) {
        const OrdResult r = loss_ord({to_matrix(s), to_matrix(t), to_matrix(y)}, alpha1);
        return py::dict(py::arg("value") = r.value, py::arg("teacher_ratio") = r.teacher_ratio,
                        py::arg("routed") = r.routed, py::arg("terms") = r.terms);
      },
      py::arg("student"), py::arg("teacher"), py::arg("target"), py::arg("alpha1"));

  m.def(
      "run",
      [](const std::string& command, std::optional<std::string> config, std::optional<std::uint64_t> seed,
         std::optional<std::string> out, std::optional<std::string> preset, std::vector<std::string> set,
         std::optional<std::string> loss, std::optional<double> target, const std::string& role, bool traditional,
         std::optional<std::string> checkpoint) {
        CliOverrides cli{config, seed, out, preset, loss, target, std::move(set)};
        CommandOptions o;
        o.role = role;
        o.traditional = traditional;
        o.checkpoint = checkpoint;
        std::ostringstream log, err;
        int rc = 0;
        {
          py::gil_scoped_release release;
          rc = run_command(command, cli, o, log, err);
        }
        return py::make_tuple(rc, log.str(), err.str());
      },
      py::arg("command"), py::kw_only(), py::arg("config") = py::none(), py::arg("seed") = py::none(),
      py::arg("out") = py::none(), py::arg("preset") = py::none(), py::arg("set") = std::vector<std::string>{},
      py::arg("loss") = py::none(), py::arg("target") = py::none(), py::arg("role") = "teacher",
      py::arg("traditional") = false, py::arg("checkpoint") = py::none(),
      "Runs one pipeline command; returns (exit_code, log, errors).");

  m.def(
      "checkpoint_info",
      [](const std::string& path) {
        const Checkpoint c = load_checkpoint(path);
        return py::dict(py::arg("role") = c.role, py::arg("parameters") = c.model.parameter_count(),
                        py::arg("nodes") = c.model.config().nodes,
                        py::arg("masked") = c.model.mask() ? c.model.mask()->masked() : 0,
                        py::arg("metadata") = c.metadata.dump());
      },
      py::arg("path"));

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<MissingArtifactError>(m, "MissingArtifactError", PyExc_FileNotFoundError);
  m.attr("CHECKPOINT_VERSION") = kCheckpointVersion;
}
