#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "deepwarp/cli.hpp"
#include "deepwarp/scoring.hpp"

namespace py = pybind11;
using namespace deepwarp;

namespace {

cli::RunConfig config_from(const std::string& text) { return cli::parse_config(cli::json::parse(text)); }

py::dict summary_dict(const PredictiveSummary& p) {
  py::dict d;
  d["mean"] = p.mean;
  d["sd"] = p.sd;
  d["lower95"] = p.lower95;
  d["upper95"] = p.upper95;
  return d;
}

}  // namespace

PYBIND11_MODULE(_deepwarp, m) {
  m.doc() = "Deep compositional spatial models";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, ("[" + e.code() + "] " + e.what()).c_str());
    } catch (const cli::json::exception& e) {
      py::set_error(error, (std::string("[parse_error] ") + e.what()).c_str());
    }
  });

  py::class_<cli::Model>(m, "Model")
      .def_readonly("kind", &cli::Model::kind)
      .def_property_readonly("dim", &cli::Model::dim)
      .def(
          "predict",
          [](const cli::Model& model, const LocationSet& s, std::uint64_t seed) {
            return summary_dict(cli::predict_model(model, s, seed));
          },
          py::arg("locations"), py::arg("seed") = 0)
      .def(
          "warp",
          [](const cli::Model& model, const LocationSet& s) -> LocationSet {
            const WarpStack* stack = model.stack();
            if (!stack) throw InvalidParameterError("model kind '" + model.kind + "' has no warp");
            if (s.cols() != model.dim()) throw MismatchError("location dimension does not match the model");
            return warp_forward(*stack, s).warped;
          },
          py::arg("locations"), "Image of the locations under the fitted warp (variational means for SDSP).")
      .def("to_json", [](const cli::Model& model) { return cli::to_json(model).dump(); })
      .def_static("from_json", [](const std::string& text) { return cli::model_from_json(cli::json::parse(text)); })
      .def("save", [](const cli::Model& model, const std::string& path) { cli::save_model(path, model); })
      .def_static("load", &cli::load_model);

  m.def(
      "simulate",
      [](const std::string& config) {
        const Simulation sim = cli::run_simulation(config_from(config));
        py::dict d;
        d["locations"] = sim.data.locations;
        d["z"] = sim.data.z;
        d["truth_locations"] = sim.truth_locations;
        d["truth"] = sim.truth;
        return d;
      },
      py::arg("config"));

  m.def(
      "fit",
      [](const std::string& config, const LocationSet& s, const VectorXd& z) {
        if (s.rows() != z.size()) throw MismatchError("locations and observations differ in length");
        cli::FitOutcome out;
        {
          py::gil_scoped_release release;
          out = cli::fit_model(config_from(config), Dataset(s, z));
        }
        return py::make_tuple(std::move(out.model), out.report.dump());
      },
      py::arg("config"), py::arg("locations"), py::arg("z"));

  m.def(
      "score",
      [](const VectorXd& mean, const VectorXd& sd, const VectorXd& lower, const VectorXd& upper,
         const VectorXd& truth) {
        const ScoreReport r = score(PredictiveSummary{mean, sd, lower, upper}, truth);
        py::dict d;
        d["mape"] = r.mape;
        d["rmspe"] = r.rmspe;
        d["crps"] = r.crps;
        d["is95"] = r.is95;
        return d;
      },
      py::arg("mean"), py::arg("sd"), py::arg("lower95"), py::arg("upper95"), py::arg("truth"));

  m.def("threat_score", &threat_score, py::arg("pred"), py::arg("truth"), py::arg("pred_threshold"),
        py::arg("truth_threshold"));
  m.def("crps_samples", &crps_samples, py::arg("samples"), py::arg("truth"));
}
