// esp: operate the predict-then-prescribe loop from the command line.

#include <chrono>
#include <cmath>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "esp/baselines.hpp"
#include "esp/metrics.hpp"
#include "esp/ratio_model.hpp"
#include "esp/registry.hpp"
#include "esp/service.hpp"

using namespace esp;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitMissing = 3;

struct Common {
  std::string registry = "registry";
  std::uint64_t seed = 0;
  bool json = false;
};

/// Prints the one-line summary, or the JSON object in --json mode.
void summary(const Common& c, const std::string& line, const Json& j) {
  if (c.json) {
    std::cout << j.dump() << '\n';
  } else {
    std::cout << line << '\n';
  }
}

std::string resolve(const Registry& reg, const std::string& given, const std::string& kind) {
  if (given.empty()) return reg.require_ref(kind);
  if (!reg.contains(given)) throw NotFoundError("artifact " + given + " not in registry", given);
  return given;
}

std::string short_fp(const std::string& fp) { return fp.substr(0, 12); }

std::string format_number(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolutionary surrogate-assisted prescription of NPIs"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML config file; sections are named after subcommands");
  Common c;
  app.add_option("--registry", c.registry, "Artifact registry directory")->capture_default_str();
  app.add_option("--seed", c.seed, "Seed for every random choice")->capture_default_str();
  app.add_flag("--json", c.json, "Print a machine-readable summary");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Load tracker and population CSVs into a dataset");
  std::string csv_path, pop_path;
  ingest->add_option("--csv", csv_path, "Tracker export")->required()->check(CLI::ExistingFile);
  ingest->add_option("--population", pop_path, "country,population CSV")
      ->required()
      ->check(CLI::ExistingFile);

  // train-predictor
  auto* trainp = app.add_subcommand("train-predictor", "Train the NPI-LSTM ratio predictor");
  std::string dataset_fp;
  TrainConfig tcfg;
  trainp->add_option("--dataset", dataset_fp, "Dataset fingerprint (default: latest)");
  trainp->add_option("--batch-size", tcfg.batch_size)->capture_default_str();
  trainp->add_option("--learning-rate", tcfg.learning_rate)->capture_default_str();
  trainp->add_option("--patience", tcfg.patience)->capture_default_str();
  trainp->add_option("--max-epochs", tcfg.max_epochs)->capture_default_str();

  // eval-predictor
  auto* evalp = app.add_subcommand("eval-predictor", "Compare NPI-LSTM, linear and MLP predictors");
  int trials = 10, eval_countries = 20;
  std::string eval_out = "eval";
  evalp->add_option("--dataset", dataset_fp, "Dataset fingerprint (default: latest)");
  evalp->add_option("--trials", trials)->capture_default_str()->check(CLI::PositiveNumber);
  evalp->add_option("--countries", eval_countries)->capture_default_str();
  evalp->add_option("--out", eval_out, "Directory for report CSVs")->capture_default_str();
  evalp->add_option("--max-epochs", tcfg.max_epochs)->capture_default_str();

  // fit-rio
  auto* fitrio = app.add_subcommand("fit-rio", "Fit the residual GP calibrator");
  std::string predictor_fp;
  RioOptions ropts;
  fitrio->add_option("--dataset", dataset_fp, "Dataset fingerprint (default: latest)");
  fitrio->add_option("--predictor", predictor_fp, "Predictor fingerprint (default: latest)");
  fitrio->add_option("--restarts", ropts.restarts)->capture_default_str();
  fitrio->add_option("--max-iterations", ropts.max_iterations)->capture_default_str();
  fitrio->add_option("--max-train", ropts.max_train)->capture_default_str();

  // evolve
  auto* evolvec = app.add_subcommand("evolve", "Evolve prescriptors against the predictor");
  EvolutionConfig ecfg;
  std::string run_out;
  std::string start_date;
  evolvec->add_option("--predictor", predictor_fp, "Predictor fingerprint (default: latest)");
  evolvec->add_option("--dataset", dataset_fp, "Dataset fingerprint (default: the predictor's)");
  evolvec->add_option("--pop", ecfg.population)->capture_default_str();
  evolvec->add_option("--generations", ecfg.generations)->capture_default_str();
  evolvec->add_option("--horizon", ecfg.horizon)->capture_default_str();
  evolvec->add_option("--countries", ecfg.n_countries)->capture_default_str();
  evolvec->add_option("--threads", ecfg.threads, "0 = all cores")->capture_default_str();
  evolvec->add_option("--start-date", start_date, "YYYYMMDD context end (default: latest)");
  evolvec->add_option("--out", run_out, "Run directory (default: runs/<fingerprint>)");

  // forecast
  auto* forecastc = app.add_subcommand("forecast", "Forecast one country");
  std::string country, fc_out, front_fp, gp_fp;
  int prescriptor = -1, horizon = 90, rollouts = 100;
  forecastc->add_option("--country", country)->required();
  forecastc->add_option("--prescriptor", prescriptor, "Representative index; default holds NPIs");
  forecastc->add_option("--horizon", horizon)->capture_default_str();
  forecastc->add_option("--start-date", start_date, "YYYYMMDD (default: latest)");
  forecastc->add_option("--rollouts", rollouts)->capture_default_str();
  forecastc->add_option("--predictor", predictor_fp);
  forecastc->add_option("--dataset", dataset_fp);
  forecastc->add_option("--gp", gp_fp, "GP fingerprint (default: latest if any)");
  forecastc->add_option("--front", front_fp, "Evolution fingerprint (default: latest)");
  forecastc->add_option("--out", fc_out, "CSV path (default: stdout)");

  // publish
  auto* publish = app.add_subcommand("publish", "Publish a dataset/predictor/gp/front manifest");
  bool no_gp = false;
  publish->add_option("--dataset", dataset_fp);
  publish->add_option("--predictor", predictor_fp);
  publish->add_option("--gp", gp_fp);
  publish->add_option("--front", front_fp);
  publish->add_flag("--no-gp", no_gp, "Publish without uncertainty bands");

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the published manifest over HTTP");
  ServiceConfig scfg;
  serve->add_option("--host", scfg.host)->capture_default_str();
  serve->add_option("--port", scfg.port)->capture_default_str();
  serve->add_option("--manifest", scfg.manifest, "Manifest fingerprint (default: published)");
  serve->add_option("--cache-size", scfg.cache_size)->capture_default_str();
  serve->add_option("--rollouts", scfg.rollouts)->capture_default_str();
  serve->add_option("--cors-origin", scfg.cors_origin)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    Registry reg(c.registry);

    if (*ingest) {
      const auto pop = load_population_csv(pop_path);
      const auto loaded = load_csv(csv_path, pop);
      for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << '\n';
      for (const auto& e : loaded.row_errors) {
        std::cerr << "row " << e.row << ": " << e.message << '\n';
      }
      auto j = dataset_to_json(loaded.countries);
      j["config"] = {{"csv", csv_path}, {"population", pop_path}};
      const auto fp = reg.put(j);
      summary(c,
              "dataset " + fp + " countries " + std::to_string(loaded.countries.size()) +
                  " dropped " + std::to_string(loaded.dropped.size()) + " row_errors " +
                  std::to_string(loaded.row_errors.size()),
              {{"dataset", fp},
               {"countries", loaded.countries.size()},
               {"dropped", loaded.dropped},
               {"row_errors", loaded.row_errors.size()}});
      return 0;
    }

    if (*trainp) {
      const auto dfp = resolve(reg, dataset_fp, "dataset");
      const auto series = dataset_from_json(reg.get(dfp, "dataset"));
      DatasetOptions dopts;
      dopts.seed = c.seed;
      const auto data = build_dataset(series, dopts);
      tcfg.seed = c.seed;
      const auto t0 = std::chrono::steady_clock::now();
      auto model = train(PredictorModel::initialized(c.seed), data, tcfg);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      model.meta.dataset_fingerprint = dfp;
      auto j = predictor_to_json(model);
      j["config"] = {{"batch_size", tcfg.batch_size}, {"learning_rate", tcfg.learning_rate},
                     {"patience", tcfg.patience},     {"max_epochs", tcfg.max_epochs},
                     {"seed", c.seed},                {"dataset", dfp}};
      const auto fp = reg.put(j);
      const double test_mae = data.test.empty() ? 0.0 : mae(model, data.test);
      summary(c,
              "predictor " + fp + " epochs " + std::to_string(model.meta.epochs_run) +
                  " best_epoch " + std::to_string(model.meta.best_epoch) + " val_mae " +
                  format_number(model.meta.best_validation_mae, 4) + " test_mae " +
                  format_number(test_mae, 4) + " seconds " + format_number(secs, 1),
              {{"predictor", fp},
               {"epochs", model.meta.epochs_run},
               {"best_epoch", model.meta.best_epoch},
               {"validation_mae", model.meta.best_validation_mae},
               {"test_mae", test_mae},
               {"seconds", secs}});
      return 0;
    }

    if (*evalp) {
      const auto dfp = resolve(reg, dataset_fp, "dataset");
      const auto series = dataset_from_json(reg.get(dfp, "dataset"));
      std::vector<std::string> warnings;
      const auto truth =
          build_eval_set(series, countries_by_cases(series), eval_countries, kTestDays, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      std::filesystem::create_directories(eval_out);
      write_json_file(std::filesystem::path(eval_out) / "config.json",
                      {{"dataset", dfp},
                       {"trials", trials},
                       {"countries", eval_countries},
                       {"seed", c.seed},
                       {"max_epochs", tcfg.max_epochs}});
      std::vector<MetricReport> reports;
      for (int t = 0; t < trials; ++t) {
        const auto s = c.seed + static_cast<std::uint64_t>(t);
        DatasetOptions dopts;
        dopts.seed = s;
        const auto data = build_dataset(series, dopts);
        TrainConfig cfg = tcfg;
        cfg.seed = s;
        const auto model = train(PredictorModel::initialized(s), data, cfg);
        NpiLstmPredictor lstm(model);
        const auto linear = fit_baseline(BaselineKind::kLinear, data.train, s);
        const auto mlp = fit_baseline(BaselineKind::kMlp, data.train, s);
        auto rep = compute_metrics(
            {{"NPI-LSTM", &lstm}, {"Linear", linear.get()}, {"MLP", mlp.get()}}, truth);
        std::ofstream m(std::filesystem::path(eval_out) / ("trial_" + std::to_string(t) + ".csv"));
        write_metrics_csv(m, rep);
        std::ofstream b(std::filesystem::path(eval_out) /
                        ("trial_" + std::to_string(t) + "_countries.csv"));
        write_breakdown_csv(b, rep);
        reports.push_back(std::move(rep));
        if (!c.json) std::cerr << "trial " << t + 1 << "/" << trials << " done\n";
      }
      const auto rows = summarize_trials(reports);
      std::ofstream sum(std::filesystem::path(eval_out) / "summary.csv");
      write_summary_csv(sum, rows);
      if (c.json) {
        Json out = Json::array();
        for (const auto& r : rows) {
          out.push_back({{"method", r.method},
                         {"trials", r.trials},
                         {"norm_case_mae", r.mean.normalized_case_mae},
                         {"norm_case_mae_se", r.stderr_.normalized_case_mae},
                         {"raw_case_mae", r.mean.raw_case_mae},
                         {"raw_case_mae_se", r.stderr_.raw_case_mae},
                         {"mean_rank", r.mean.mean_rank},
                         {"mean_rank_se", r.stderr_.mean_rank},
                         {"one_step_r_mae", r.mean.one_step_r_mae},
                         {"one_step_r_mae_se", r.stderr_.one_step_r_mae}});
        }
        std::cout << Json{{"dataset", dfp}, {"rows", out}}.dump() << '\n';
      } else {
        write_summary_table(std::cout, rows);
      }
      return 0;
    }

    if (*fitrio) {
      const auto pfp = resolve(reg, predictor_fp, "predictor");
      const auto model = predictor_from_json(reg.get(pfp, "predictor"));
      const auto dfp = dataset_fp.empty() ? model.meta.dataset_fingerprint : dataset_fp;
      if (!reg.contains(dfp)) throw NotFoundError("artifact " + dfp + " not in registry", dfp);
      const auto series = dataset_from_json(reg.get(dfp, "dataset"));
      ropts.seed = c.seed;
      std::vector<std::string> warnings;
      const auto countries = select_rio_countries(countries_by_cases(series),
                                                  per_country_mae(model, series), 0.04, 30,
                                                  &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      const auto data = prepare_rio_data(model, series, countries, ropts);
      RioFitReport report;
      auto gp = fit_rio(data.train, ropts, &report);
      gp.dataset_fingerprint = dfp;
      double before = 0.0, after = 0.0;
      int covered = 0;
      for (const auto& s : data.heldout) {
        const auto cal = gp.calibrate(s.feature, s.r_hat);
        before += std::abs(s.target - s.r_hat);
        after += std::abs(s.target - cal.mean);
        if (std::abs(s.target - cal.mean) <= 1.96 * std::sqrt(cal.predictive_variance)) ++covered;
      }
      const double n = static_cast<double>(std::max<std::size_t>(1, data.heldout.size()));
      auto j = gp_to_json(gp);
      j["predictor_fingerprint"] = pfp;
      j["config"] = {{"restarts", ropts.restarts}, {"max_iterations", ropts.max_iterations},
                     {"max_train", ropts.max_train}, {"max_hyperopt", ropts.max_hyperopt},
                     {"seed", c.seed},              {"countries", countries}};
      const auto fp = reg.put(j);
      summary(c,
              "gp " + fp + " train " + std::to_string(data.train.size()) + " heldout_mae " +
                  format_number(before / n, 4) + " -> " + format_number(after / n, 4) +
                  " coverage95 " + format_number(covered / n, 3),
              {{"gp", fp},
               {"train", data.train.size()},
               {"heldout", data.heldout.size()},
               {"mae_before", before / n},
               {"mae_after", after / n},
               {"coverage95", covered / n},
               {"lml", report.best_lml}});
      return 0;
    }

    if (*evolvec) {
      const auto pfp = resolve(reg, predictor_fp, "predictor");
      const auto model = predictor_from_json(reg.get(pfp, "predictor"));
      const auto dfp = dataset_fp.empty() ? model.meta.dataset_fingerprint : dataset_fp;
      if (!reg.contains(dfp)) throw NotFoundError("artifact " + dfp + " not in registry", dfp);
      const auto series = dataset_from_json(reg.get(dfp, "dataset"));
      ecfg.seed = c.seed;
      ecfg.validate();
      std::optional<Date> when;
      if (!start_date.empty()) when = parse_yyyymmdd(start_date);
      const auto contexts = evaluation_contexts(series, ecfg.n_countries, when);
      if (contexts.empty()) throw DataError("no country has a complete context window");
      NpiLstmPredictor predictor(model);
      const auto t0 = std::chrono::steady_clock::now();
      const auto result = evolve(ecfg, predictor, contexts, [&](const GenerationStats& g) {
        if (!c.json) {
          std::cerr << "generation " << g.generation << " front " << g.front.size() << '\n';
        }
      });
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      auto snap = make_snapshot(ecfg, result);
      snap.predictor_fingerprint = pfp;
      snap.dataset_fingerprint = dfp;
      auto j = evolution_to_json(snap);
      Json ctx = Json::array();
      for (const auto& x : contexts) {
        ctx.push_back({{"country", x.country}, {"last_date", format_yyyymmdd(x.last_date)}});
      }
      j["contexts"] = ctx;
      const auto fp = reg.put(j);
      const auto dir = run_out.empty() ? reg.root() / "runs" / fp : std::filesystem::path(run_out);
      write_run_directory(dir, snap, result.log);
      write_json_file(dir / "config.json",
                      Json{{"evolution", evolution_config_to_json(ecfg)},
                           {"predictor", pfp},
                           {"dataset", dfp},
                           {"contexts", ctx},
                           {"artifact", fp}});
      summary(c,
              "evolution " + fp + " generations " + std::to_string(ecfg.generations) + " front " +
                  std::to_string(snap.front.size()) + " representatives " +
                  std::to_string(snap.representatives.size()) + " dir " + dir.string() +
                  " seconds " + format_number(secs, 1),
              {{"evolution", fp},
               {"generations", ecfg.generations},
               {"front", snap.front.size()},
               {"representatives", snap.representatives.size()},
               {"dir", dir.string()},
               {"seconds", secs}});
      return 0;
    }

    if (*forecastc) {
      const auto pfp = resolve(reg, predictor_fp, "predictor");
      const auto model = predictor_from_json(reg.get(pfp, "predictor"));
      const auto dfp = dataset_fp.empty() ? model.meta.dataset_fingerprint : dataset_fp;
      if (!reg.contains(dfp)) throw NotFoundError("artifact " + dfp + " not in registry", dfp);
      const auto series = dataset_from_json(reg.get(dfp, "dataset"));
      auto it = series.find(country);
      if (it == series.end()) throw DataError("no country '" + country + "'");
      const auto ctx = evaluation_contexts(
          SeriesMap{{country, it->second}}, 1,
          start_date.empty() ? std::nullopt : std::optional<Date>(parse_yyyymmdd(start_date)));
      if (ctx.empty()) throw DataError("no complete context window for " + country);
      auto req = hold_current_npis(ctx.front(), horizon);
      if (prescriptor >= 0) {
        const auto efp = resolve(reg, front_fp, "evolution");
        const auto snap = evolution_from_json(reg.get(efp, "evolution"));
        if (prescriptor >= static_cast<int>(snap.representatives.size())) {
          throw DataError("no prescriptor " + std::to_string(prescriptor));
        }
        PrescriptorNet net;
        net.weights = snap.front[snap.representatives[static_cast<std::size_t>(prescriptor)]].weights;
        req.schedule.clear();
        req.policy = [net](std::span<const double> w) { return prescribe(net, w); };
      }
      NpiLstmPredictor predictor(model);
      const auto result = rollout(predictor, req);
      std::optional<ForecastBand> band;
      std::string gfp = gp_fp;
      if (gfp.empty()) gfp = reg.ref("gp").value_or("");
      std::optional<GpModel> gp;
      if (!gfp.empty()) {
        gp = gp_from_json(reg.get(gfp, "gp"));
        RioDistribution dist(model, *gp);
        band = mc_forecast(dist, req, rollouts, c.seed);
      }
      std::ofstream file;
      if (!fc_out.empty()) file.open(fc_out);
      std::ostream& os = fc_out.empty() ? std::cout : file;
      if (c.json && fc_out.empty()) {
        os << forecast_to_json(result, band ? &*band : nullptr).dump() << '\n';
        return 0;
      }
      if (band) {
        write_band_csv(os, result, *band);
      } else {
        write_forecast_csv(os, result);
      }
      if (!fc_out.empty()) {
        double total = 0.0;
        for (const auto& d : result.days) total += d.new_cases;
        summary(c, "forecast " + country + " days " + std::to_string(result.days.size()) +
                       " total_new_cases " + format_number(total, 0) + " out " + fc_out,
                {{"country", country}, {"days", result.days.size()}, {"total_new_cases", total},
                 {"out", fc_out}});
      }
      return 0;
    }

    if (*publish) {
      Manifest m;
      m.predictor = resolve(reg, predictor_fp, "predictor");
      const auto model = predictor_from_json(reg.get(m.predictor, "predictor"));
      m.dataset = dataset_fp.empty() ? model.meta.dataset_fingerprint : dataset_fp;
      m.front = resolve(reg, front_fp, "evolution");
      if (!no_gp) m.gp = gp_fp.empty() ? reg.ref("gp").value_or("") : gp_fp;
      const auto fp = reg.publish(m);
      summary(c,
              "manifest " + fp + " dataset " + short_fp(m.dataset) + " predictor " +
                  short_fp(m.predictor) + " gp " + (m.gp.empty() ? "-" : short_fp(m.gp)) +
                  " front " + short_fp(m.front),
              {{"manifest", fp}, {"dataset", m.dataset}, {"predictor", m.predictor},
               {"gp", m.gp}, {"front", m.front}});
      return 0;
    }

    if (*serve) {
      scfg.registry = c.registry;
      scfg.seed = c.seed;
      Service service(load_published(reg, scfg.manifest), scfg);
      const int port = service.bind();
      summary(c, "serving on http://" + scfg.host + ":" + std::to_string(port),
              {{"host", scfg.host}, {"port", port}});
      std::cout.flush();
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      service.listen();
      g_service = nullptr;
      return 0;
    }
  } catch (const NotFoundError& e) {
    std::cerr << "missing artifact: " << e.key() << " (" << e.what() << ")\n";
    return kExitMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
