// Python bindings. Structured results cross the boundary as JSON text; the
// package wrapper decodes them.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "esp/evolution.hpp"
#include "esp/forecast.hpp"
#include "esp/nsga2.hpp"
#include "esp/registry.hpp"
#include "esp/service.hpp"

namespace py = pybind11;
using namespace esp;

namespace {

std::vector<NpiVector> npi_rows(const py::array_t<int, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(1) != static_cast<py::ssize_t>(kNumNpis)) {
    throw ShapeError("NPI arrays must have shape (n, 8)");
  }
  std::vector<NpiVector> out(static_cast<std::size_t>(a.shape(0)));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    for (std::size_t k = 0; k < kNumNpis; ++k) out[i].levels[k] = r(i, static_cast<py::ssize_t>(k));
  }
  return out;
}

std::vector<Objectives> objective_rows(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw ShapeError("points must have shape (n, 2)");
  std::vector<Objectives> out(static_cast<std::size_t>(a.shape(0)));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[i] = {r(i, 0), r(i, 1)};
  return out;
}

struct Dataset {
  SeriesMap series;
  std::vector<std::string> warnings;
  std::vector<std::string> dropped;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Predictor, prescriptor evolution and forecast service core";

  py::register_exception<Error>(m, "EspError", PyExc_RuntimeError);
  py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_KeyError);

  m.attr("NUM_NPIS") = kNumNpis;
  m.attr("HISTORY_DAYS") = kHistoryDays;
  m.attr("NPI_MAX") = std::vector<int>(kNpiMax.begin(), kNpiMax.end());

  py::class_<Dataset>(m, "Dataset")
      .def_static(
          "load",
          [](const std::string& csv, const std::string& population) {
            const auto pop = load_population_csv(population);
            auto res = load_csv(csv, pop);
            return Dataset{std::move(res.countries), std::move(res.warnings), std::move(res.dropped)};
          },
          py::arg("csv"), py::arg("population"))
      .def_static("from_json",
                  [](const std::string& text) { return Dataset{dataset_from_json(Json::parse(text)), {}, {}}; })
      .def("to_json", [](const Dataset& d) { return dataset_to_json(d.series).dump(); })
      .def("countries", [](const Dataset& d) { return countries_by_cases(d.series); })
      .def("fingerprint", [](const Dataset& d) { return fingerprint(dataset_to_json(d.series)); })
      .def_readonly("warnings", &Dataset::warnings)
      .def_readonly("dropped", &Dataset::dropped)
      .def("__len__", [](const Dataset& d) { return d.series.size(); });

  py::class_<PredictorModel>(m, "Predictor")
      .def_static("initialized", [](std::uint64_t seed) { return PredictorModel::initialized(seed); },
                  py::arg("seed") = 0)
      .def_static(
          "train",
          [](const Dataset& d, std::uint64_t seed, double learning_rate, int patience, int max_epochs,
             int batch_size) {
            TrainConfig cfg;
            cfg.seed = seed;
            cfg.learning_rate = learning_rate;
            cfg.patience = patience;
            cfg.max_epochs = max_epochs;
            cfg.batch_size = batch_size;
            cfg.validate();
            DatasetOptions o;
            o.seed = seed;
            py::gil_scoped_release release;
            auto model = train(PredictorModel::initialized(seed), build_dataset(d.series, o), cfg);
            model.meta.dataset_fingerprint = fingerprint(dataset_to_json(d.series));
            return model;
          },
          py::arg("dataset"), py::arg("seed") = 0, py::arg("learning_rate") = 1e-3,
          py::arg("patience") = 20, py::arg("max_epochs") = 1000, py::arg("batch_size") = 32)
      .def_static("from_json", [](const std::string& text) { return predictor_from_json(Json::parse(text)); })
      .def("to_json", [](const PredictorModel& p) { return predictor_to_json(p).dump(); })
      .def(
          "predict",
          [](const PredictorModel& p, const py::array_t<int, py::array::c_style | py::array::forcecast>& actions,
             const std::vector<double>& ratios) {
            const auto rows = npi_rows(actions);
            return forward(p, rows, ratios).r_hat;
          },
          py::arg("actions"), py::arg("ratios"))
      .def_property_readonly("epochs_run", [](const PredictorModel& p) { return p.meta.epochs_run; })
      .def_property_readonly("best_validation_mae",
                             [](const PredictorModel& p) { return p.meta.best_validation_mae; });

  m.def(
      "forecast",
      [](const PredictorModel& p, const Dataset& d, const std::string& country, int horizon,
         std::optional<py::array_t<int, py::array::c_style | py::array::forcecast>> schedule,
         std::optional<std::string> start_date) {
        auto it = d.series.find(country);
        if (it == d.series.end()) throw DataError("no country '" + country + "'");
        const auto& s = it->second;
        const auto ctx = start_date ? make_context(s, parse_yyyymmdd(*start_date))
                                    : make_context(s, s.dates.back());
        auto req = hold_current_npis(ctx, horizon);
        if (schedule) req.schedule = npi_rows(*schedule);
        NpiLstmPredictor predictor(p);
        return forecast_to_json(rollout(predictor, req)).dump();
      },
      py::arg("predictor"), py::arg("dataset"), py::arg("country"), py::arg("horizon") = 90,
      py::arg("schedule") = py::none(), py::arg("start_date") = py::none());

  m.def(
      "evolve",
      [](const PredictorModel& p, const Dataset& d, int population, int generations, int horizon,
         int countries, std::uint64_t seed) {
        EvolutionConfig cfg;
        cfg.population = population;
        cfg.generations = generations;
        cfg.horizon = horizon;
        cfg.n_countries = countries;
        cfg.seed = seed;
        cfg.validate();
        const auto contexts = evaluation_contexts(d.series, countries);
        NpiLstmPredictor predictor(p);
        py::gil_scoped_release release;
        auto snap = make_snapshot(cfg, evolve(cfg, predictor, contexts));
        snap.predictor_fingerprint = fingerprint(predictor_to_json(p));
        snap.dataset_fingerprint = fingerprint(dataset_to_json(d.series));
        return evolution_to_json(snap).dump();
      },
      py::arg("predictor"), py::arg("dataset"), py::arg("population") = 250,
      py::arg("generations") = 110, py::arg("horizon") = 180, py::arg("countries") = 20,
      py::arg("seed") = 0);

  m.def("cases_from_ratio", &cases_from_ratio, py::arg("ratio"), py::arg("population"),
        py::arg("prev_cumulative"), py::arg("prev_smoothed"), py::arg("case_k_days_ago"),
        py::arg("window") = kSmoothingWindow);

  m.def("nondominated_sort", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts) {
    const auto p = objective_rows(pts);
    return nondominated_sort(p);
  });
  m.def("crowding_distance",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts,
           const std::vector<std::size_t>& front) { return crowding_distance(objective_rows(pts), front); });
  m.def("hypervolume_2d",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts, double ref_cases,
           double ref_stringency) {
          return hypervolume_2d(objective_rows(pts), {ref_cases, ref_stringency});
        });

  m.def("sha256_hex", [](const py::bytes& b) { return sha256_hex(std::string(b)); });
  m.def("fingerprint", [](const std::string& text) { return fingerprint(Json::parse(text)); });

  py::class_<Registry>(m, "Registry")
      .def(py::init([](const std::string& root) { return Registry(root); }), py::arg("root"))
      .def("put", [](Registry& r, const std::string& text) { return r.put(Json::parse(text)); })
      .def("get", [](const Registry& r, const std::string& fp) { return r.get(fp).dump(); })
      .def("contains", &Registry::contains)
      .def("ref", &Registry::ref)
      .def(
          "publish",
          [](Registry& r, const std::string& dataset, const std::string& predictor,
             const std::string& front, const std::string& gp) {
            return r.publish(Manifest{dataset, predictor, gp, front});
          },
          py::arg("dataset"), py::arg("predictor"), py::arg("front"), py::arg("gp") = "");

  py::class_<Service>(m, "Service")
      .def(py::init([](const Registry& r, const std::string& manifest, int rollouts, std::uint64_t seed) {
             ServiceConfig cfg;
             cfg.rollouts = rollouts;
             cfg.seed = seed;
             return std::make_unique<Service>(load_published(r, manifest), cfg);
           }),
           py::arg("registry"), py::arg("manifest") = "", py::arg("rollouts") = 100, py::arg("seed") = 0)
      .def(
          "handle",
          [](Service& s, const std::string& method, const std::string& path,
             const std::map<std::string, std::string>& params, const std::string& body) {
            QueryParams q(params.begin(), params.end());
            py::gil_scoped_release release;
            const auto r = s.handle(method, path, q, body);
            return std::make_pair(r.status, r.body);
          },
          py::arg("method"), py::arg("path"), py::arg("params") = std::map<std::string, std::string>{},
          py::arg("body") = "");
}
