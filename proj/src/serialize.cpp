#include "esp/serialize.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace esp {

namespace {

Json header(std::string_view kind) {
  return Json{{"kind", kind}, {"schema_version", kSchemaVersion}};
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  }
  return Json{{"shape", {m.rows(), m.cols()}}, {"data", flat}};
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  const auto rows = j.at("shape").at(0).get<Eigen::Index>();
  const auto cols = j.at("shape").at(1).get<Eigen::Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) {
    throw DataError("tensor data does not match its shape");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = flat[static_cast<std::size_t>(i * cols + k)];
  }
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Json branch_to_json(const LstmBranchParams& b) {
  return Json{
      {"activation", b.activation == HeadActivation::kSigmoid ? "sigmoid" : "softplus"},
      {"input_weights", matrix_to_json(b.input_weights)},
      {"recurrent_weights", matrix_to_json(b.recurrent_weights)},
      {"bias", vector_to_json(b.bias)},
      {"head_weights", vector_to_json(b.head_weights)},
      {"head_bias", b.head_bias},
  };
}

LstmBranchParams branch_from_json(const Json& j) {
  LstmBranchParams b;
  const auto act = j.at("activation").get<std::string>();
  if (act == "sigmoid") {
    b.activation = HeadActivation::kSigmoid;
  } else if (act == "softplus") {
    b.activation = HeadActivation::kSoftplus;
  } else {
    throw DataError("unknown head activation '" + act + "'");
  }
  b.input_weights = matrix_from_json(j.at("input_weights"));
  b.recurrent_weights = matrix_from_json(j.at("recurrent_weights"));
  b.bias = vector_from_json(j.at("bias"));
  b.head_weights = vector_from_json(j.at("head_weights"));
  b.head_bias = j.at("head_bias").get<double>();
  const auto h = b.recurrent_weights.cols();
  if (b.recurrent_weights.rows() != 4 * h || b.input_weights.rows() != 4 * h ||
      b.bias.size() != 4 * h || b.head_weights.size() != h) {
    throw ShapeError("inconsistent LSTM tensor shapes in snapshot");
  }
  return b;
}

Date date_from_json(const Json& j) { return parse_yyyymmdd(j.get<std::string>()); }

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(out[i]);
  return os.str();
}

std::string fingerprint(const Json& j) { return sha256_hex(j.dump()); }

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string(), path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

void expect_kind(const Json& j, std::string_view kind) {
  if (!j.is_object() || !j.contains("kind") || j.at("kind") != kind) {
    throw DataError("expected a '" + std::string(kind) + "' artifact");
  }
  if (j.value("schema_version", 0) != kSchemaVersion) {
    throw DataError("unsupported schema_version for '" + std::string(kind) + "'");
  }
}

Json npis_to_json(const NpiVector& v) { return v.levels; }

NpiVector npis_from_json(const Json& j) {
  if (!j.is_array() || j.size() != kNumNpis) throw ShapeError("an NPI vector has 8 levels");
  NpiVector v;
  for (std::size_t k = 0; k < kNumNpis; ++k) v.levels[k] = j[k].get<int>();
  return v;
}

Json dataset_to_json(const SeriesMap& series) {
  Json countries = Json::array();
  for (const auto& [id, s] : series) {
    Json records = Json::array();
    for (std::size_t i = 0; i < s.size(); ++i) {
      records.push_back({
          {"date", format_yyyymmdd(s.dates[i])},
          {"new_cases", s.new_cases[i]},
          {"cumulative", s.cumulative[i]},
          {"smoothed", std::isfinite(s.smoothed[i]) ? Json(s.smoothed[i]) : Json(nullptr)},
          {"npis", npis_to_json(s.npis[i])},
      });
    }
    countries.push_back({{"id", id},
                         {"code", s.code},
                         {"population", s.population},
                         {"flags", s.flags},
                         {"records", std::move(records)}});
  }
  auto j = header("dataset");
  j["countries"] = std::move(countries);
  return j;
}

SeriesMap dataset_from_json(const Json& j) {
  expect_kind(j, "dataset");
  SeriesMap out;
  for (const auto& c : j.at("countries")) {
    CountrySeries s;
    s.id = c.at("id").get<std::string>();
    s.code = c.value("code", "");
    s.population = c.at("population").get<std::int64_t>();
    s.flags = c.value("flags", std::vector<std::string>{});
    for (const auto& r : c.at("records")) {
      s.dates.push_back(date_from_json(r.at("date")));
      s.new_cases.push_back(r.at("new_cases").get<std::int64_t>());
      s.cumulative.push_back(r.at("cumulative").get<std::int64_t>());
      const auto& z = r.at("smoothed");
      s.smoothed.push_back(z.is_null() ? std::numeric_limits<double>::quiet_NaN() : z.get<double>());
      s.npis.push_back(npis_from_json(r.at("npis")));
    }
    out.emplace(s.id, std::move(s));
  }
  return out;
}

Json predictor_to_json(const PredictorModel& model) {
  auto j = header("predictor");
  j["action"] = branch_to_json(model.action);
  j["context"] = branch_to_json(model.context);
  j["meta"] = {{"epochs_run", model.meta.epochs_run},
               {"best_epoch", model.meta.best_epoch},
               {"best_validation_mae", model.meta.best_validation_mae},
               {"seed", model.meta.seed},
               {"dataset_fingerprint", model.meta.dataset_fingerprint}};
  return j;
}

PredictorModel predictor_from_json(const Json& j) {
  expect_kind(j, "predictor");
  PredictorModel m;
  m.action = branch_from_json(j.at("action"));
  m.context = branch_from_json(j.at("context"));
  if (m.action.input_size() != static_cast<int>(kNumNpis) || m.context.input_size() != 1) {
    throw ShapeError("predictor branches must take 8 NPI levels and 1 ratio");
  }
  const auto& meta = j.at("meta");
  m.meta.epochs_run = meta.at("epochs_run").get<int>();
  m.meta.best_epoch = meta.at("best_epoch").get<int>();
  m.meta.best_validation_mae = meta.at("best_validation_mae").get<double>();
  m.meta.seed = meta.at("seed").get<std::uint64_t>();
  m.meta.dataset_fingerprint = meta.at("dataset_fingerprint").get<std::string>();
  return m;
}

Json gp_to_json(const GpModel& gp) {
  const auto& h = gp.hyper();
  auto j = header("gp");
  j["hyperparameters"] = {{"input_variance", h.input_variance},
                          {"input_length", h.input_length},
                          {"output_variance", h.output_variance},
                          {"output_length", h.output_length},
                          {"noise_variance", h.noise_variance}};
  j["subsample"] = gp.subsample;
  j["dataset_fingerprint"] = gp.dataset_fingerprint;
  j["features"] = matrix_to_json(gp.features().transpose());  // one row per sample
  j["r_hat"] = vector_to_json(gp.r_hat());
  j["residuals"] = vector_to_json(gp.residuals());
  return j;
}

GpModel gp_from_json(const Json& j) {
  expect_kind(j, "gp");
  const auto& hj = j.at("hyperparameters");
  GpHyperparameters h{hj.at("input_variance").get<double>(), hj.at("input_length").get<double>(),
                      hj.at("output_variance").get<double>(), hj.at("output_length").get<double>(),
                      hj.at("noise_variance").get<double>()};
  if (!h.valid()) throw DataError("GP snapshot has invalid hyperparameters");
  Eigen::MatrixXd x = matrix_from_json(j.at("features")).transpose();
  GpModel gp(std::move(x), vector_from_json(j.at("r_hat")), vector_from_json(j.at("residuals")), h);
  gp.subsample = j.at("subsample").get<std::vector<std::size_t>>();
  gp.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
  return gp;
}

Json forecast_to_json(const ForecastResult& result, const ForecastBand* band) {
  if (band && band->days.size() != result.days.size()) {
    throw ShapeError("forecast and band differ in length");
  }
  Json days = Json::array();
  for (std::size_t i = 0; i < result.days.size(); ++i) {
    const auto& d = result.days[i];
    Json row{{"date", format_yyyymmdd(d.date)},
             {"r_hat", d.r_hat},
             {"new_cases", d.new_cases},
             {"cumulative", d.cumulative},
             {"active", d.active},
             {"npis", i < result.npis.size() ? npis_to_json(result.npis[i]) : Json(nullptr)}};
    if (band) {
      const auto& b = band->days[i];
      row["q25"] = b.cases_q25;
      row["q50"] = b.cases_q50;
      row["q75"] = b.cases_q75;
      row["r_q25"] = b.r_q25;
      row["r_q75"] = b.r_q75;
    }
    days.push_back(std::move(row));
  }
  Json j{{"country", result.country},
         {"start_date", format_yyyymmdd(result.start_date)},
         {"days", std::move(days)}};
  if (band) j["band"] = {{"n_rollouts", band->n_rollouts}, {"seed", band->seed}};
  return j;
}

Json evolution_config_to_json(const EvolutionConfig& cfg) {
  return Json{{"population", cfg.population},
              {"elite_frac", cfg.elite_frac},
              {"parent_pool_frac", cfg.parent_pool_frac},
              {"mutation_prob", cfg.mutation_prob},
              {"mutation_mean", cfg.mutation_mean},
              {"mutation_std", cfg.mutation_std},
              {"generations", cfg.generations},
              {"horizon", cfg.horizon},
              {"n_countries", cfg.n_countries},
              {"seed", cfg.seed}};
}

EvolutionConfig evolution_config_from_json(const Json& j) {
  EvolutionConfig c;
  c.population = j.at("population").get<int>();
  c.elite_frac = j.at("elite_frac").get<double>();
  c.parent_pool_frac = j.at("parent_pool_frac").get<double>();
  c.mutation_prob = j.at("mutation_prob").get<double>();
  c.mutation_mean = j.at("mutation_mean").get<double>();
  c.mutation_std = j.at("mutation_std").get<double>();
  c.generations = j.at("generations").get<int>();
  c.horizon = j.at("horizon").get<int>();
  c.n_countries = j.at("n_countries").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

EvolutionSnapshot make_snapshot(const EvolutionConfig& cfg, const EvolutionResult& result,
                                int representatives) {
  EvolutionSnapshot s;
  s.config = cfg;
  const auto reps = select_representatives(result.population, result.front, representatives);
  // Representatives first, in their published order, then the rest of the front.
  std::vector<bool> taken(result.population.size(), false);
  for (auto i : reps) {
    s.representatives.push_back(s.front.size());
    s.front.push_back(result.population[i]);
    taken[i] = true;
  }
  for (auto i : result.front) {
    if (!taken[i]) s.front.push_back(result.population[i]);
  }
  return s;
}

Json evolution_to_json(const EvolutionSnapshot& snap) {
  auto j = header("evolution");
  j["config"] = evolution_config_to_json(snap.config);
  Json front = Json::array();
  for (const auto& g : snap.front) {
    front.push_back({{"weights", g.weights},
                     {"objectives", g.objectives},
                     {"flagged", g.flagged},
                     {"hash", g.hash()}});
  }
  j["front"] = std::move(front);
  j["representatives"] = snap.representatives;
  j["predictor_fingerprint"] = snap.predictor_fingerprint;
  j["dataset_fingerprint"] = snap.dataset_fingerprint;
  return j;
}

EvolutionSnapshot evolution_from_json(const Json& j) {
  expect_kind(j, "evolution");
  EvolutionSnapshot s;
  s.config = evolution_config_from_json(j.at("config"));
  for (const auto& g : j.at("front")) {
    Genome genome;
    genome.weights = g.at("weights").get<std::vector<double>>();
    if (genome.weights.size() != kGenomeSize) throw ShapeError("genome has the wrong length");
    genome.objectives = g.at("objectives").get<Objectives>();
    genome.flagged = g.value("flagged", false);
    genome.evaluated = true;
    genome.rank = 0;
    s.front.push_back(std::move(genome));
  }
  s.representatives = j.at("representatives").get<std::vector<std::size_t>>();
  for (auto i : s.representatives) {
    if (i >= s.front.size()) throw DataError("representative index outside the front");
  }
  s.predictor_fingerprint = j.value("predictor_fingerprint", "");
  s.dataset_fingerprint = j.value("dataset_fingerprint", "");
  return s;
}

void write_run_directory(const std::filesystem::path& dir, const EvolutionSnapshot& snap,
                         const std::vector<GenerationStats>& log) {
  std::filesystem::create_directories(dir / "front");
  write_json_file(dir / "config.json", evolution_config_to_json(snap.config));

  std::ofstream csv(dir / "generations.csv");
  csv << "generation,population,front_size,flagged,min_cases,min_stringency,mean_cases,"
         "mean_stringency\n"
      << std::setprecision(10);
  for (const auto& g : log) {
    if (g.generation == 0) continue;  // the initial population is not a generation
    double min_c = std::numeric_limits<double>::infinity(), min_s = min_c, sum_c = 0, sum_s = 0;
    for (const auto& o : g.objectives) {
      min_c = std::min(min_c, o[0]);
      min_s = std::min(min_s, o[1]);
      sum_c += o[0];
      sum_s += o[1];
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, g.objectives.size()));
    csv << g.generation << ',' << g.objectives.size() << ',' << g.front.size() << ','
        << g.flagged << ',' << min_c << ',' << min_s << ',' << sum_c / n << ',' << sum_s / n
        << '\n';
  }

  for (std::size_t i = 0; i < snap.front.size(); ++i) {
    write_json_file(dir / "front" / ("genome_" + std::to_string(i) + ".json"),
                    Json(snap.front[i].weights));
  }
  Json reps = Json::array();
  for (std::size_t k = 0; k < snap.representatives.size(); ++k) {
    const auto& g = snap.front[snap.representatives[k]];
    reps.push_back({{"index", k},
                    {"genome", "front/genome_" + std::to_string(snap.representatives[k]) + ".json"},
                    {"mean_cases", g.objectives[0]},
                    {"mean_stringency", g.objectives[1]}});
  }
  write_json_file(dir / "representatives.json", reps);
}

}  // namespace esp
