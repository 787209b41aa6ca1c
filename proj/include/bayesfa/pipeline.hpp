// Four-stage pipeline behind the command line: a JSON run configuration
// drives preprocess, select-dim, fit, compare and report. Every stage loads
// its inputs from the output directory and persists its own results there,
// so stages can run one at a time and "all" is literally the sequence.
// Stage seeds derive from the master seed per stage name, never from each
// other, so reruns of any suffix of the pipeline reproduce the same bytes.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "bayesfa/compare.hpp"
#include "bayesfa/constraints.hpp"
#include "bayesfa/dimension.hpp"
#include "bayesfa/preprocess.hpp"
#include "bayesfa/report.hpp"
#include "bayesfa/rng.hpp"
#include "bayesfa/sampler.hpp"
#include "bayesfa/types.hpp"

namespace bayesfa {

struct PatternConfig {
  int m = 0;
  std::vector<CellRef> zero_cells;
  std::vector<CellRef> positive_cells;
};

struct CompareConfig {
  std::string models_path;
  long prior_draws = 1000000;
  std::vector<double> weights;  // empty means equal prior model weights
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::string out_dir;  // may be empty; the CLI can supply one
  std::string data_csv;
  std::vector<std::string> log_transform;
  bool standardize = true;
  std::optional<PatternConfig> pattern;
  PriorSpec prior;
  ChainSettings chain;
  std::optional<DimensionSettings> dimension;
  std::optional<CompareConfig> compare;
};

namespace pipe_detail {

using Json = nlohmann::ordered_json;

[[noreturn]] inline void cfg_fail(const std::string& path, const std::string& msg) {
  throw ConfigError("config: " + (path.empty() ? "(root)" : path) + ": " + msg);
}

inline std::string join(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline void expect_object(const Json& j, const std::string& path) {
  if (!j.is_object()) cfg_fail(path, "expected an object");
}

inline void reject_unknown(const Json& j, const std::string& path,
                           std::initializer_list<const char*> known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok) cfg_fail(join(path, it.key()), "unknown key");
  }
}

inline const Json* member(const Json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &it.value();
}

inline std::string get_string(const Json& j, const std::string& path) {
  if (!j.is_string()) cfg_fail(path, "expected a string");
  return j.get<std::string>();
}

inline bool get_bool(const Json& j, const std::string& path) {
  if (!j.is_boolean()) cfg_fail(path, "expected true or false");
  return j.get<bool>();
}

inline double get_number(const Json& j, const std::string& path) {
  if (!j.is_number()) cfg_fail(path, "expected a number");
  return j.get<double>();
}

inline long long get_integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer() && !j.is_number_unsigned())
    cfg_fail(path, "expected an integer");
  return j.get<long long>();
}

inline int get_count(const Json& j, const std::string& path, long long lo,
                     long long hi = 1000000000) {
  const long long v = get_integer(j, path);
  if (v < lo || v > hi)
    cfg_fail(path, "must be between " + std::to_string(lo) + " and " +
                       std::to_string(hi));
  return static_cast<int>(v);
}

inline std::vector<CellRef> get_cells(const Json& j, const std::string& path) {
  if (!j.is_array()) cfg_fail(path, "expected an array of [row, column] pairs");
  std::vector<CellRef> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string epath = path + "[" + std::to_string(i) + "]";
    const Json& e = j[i];
    if (!e.is_array() || e.size() != 2)
      cfg_fail(epath, "expected a [row, column] pair");
    const long long r = get_integer(e[0], epath);
    const long long c = get_integer(e[1], epath);
    if (r < 1 || c < 1) cfg_fail(epath, "cell indexes are 1-based");
    out.push_back({static_cast<int>(r), static_cast<int>(c)});
  }
  return out;
}

inline std::vector<std::string> get_strings(const Json& j, const std::string& path) {
  if (!j.is_array()) cfg_fail(path, "expected an array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(get_string(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline ChainSettings get_chain(const Json& j, const std::string& path,
                               ChainSettings base, bool allow_chains) {
  expect_object(j, path);
  if (allow_chains)
    reject_unknown(j, path, {"iterations", "burn_in", "chains"});
  else
    reject_unknown(j, path, {"iterations", "burn_in"});
  if (const Json* v = member(j, "iterations"))
    base.iterations = get_count(*v, join(path, "iterations"), 1);
  if (const Json* v = member(j, "burn_in"))
    base.burn_in = get_count(*v, join(path, "burn_in"), 0);
  if (const Json* v = member(j, "chains"))
    base.chains = get_count(*v, join(path, "chains"), 1, 64);
  return base;
}

}  // namespace pipe_detail

inline RunConfig parse_config(const std::string& text) {
  namespace pd = pipe_detail;
  using pd::Json;
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  pd::expect_object(root, "");
  pd::reject_unknown(root, "", {"seed", "out_dir", "data", "pattern", "prior",
                                "chain", "dimension", "compare"});
  RunConfig cfg;

  if (const Json* v = pd::member(root, "seed")) {
    const long long s = pd::get_integer(*v, "seed");
    if (s < 0) pd::cfg_fail("seed", "must be nonnegative");
    cfg.seed = static_cast<std::uint64_t>(s);
  }
  if (const Json* v = pd::member(root, "out_dir"))
    cfg.out_dir = pd::get_string(*v, "out_dir");

  const Json* data = pd::member(root, "data");
  if (!data) pd::cfg_fail("data", "required");
  pd::expect_object(*data, "data");
  pd::reject_unknown(*data, "data", {"csv", "log_transform", "standardize"});
  const Json* csv = pd::member(*data, "csv");
  if (!csv) pd::cfg_fail("data.csv", "required");
  cfg.data_csv = pd::get_string(*csv, "data.csv");
  if (const Json* v = pd::member(*data, "log_transform"))
    cfg.log_transform = pd::get_strings(*v, "data.log_transform");
  if (const Json* v = pd::member(*data, "standardize"))
    cfg.standardize = pd::get_bool(*v, "data.standardize");

  if (const Json* pat = pd::member(root, "pattern")) {
    pd::expect_object(*pat, "pattern");
    pd::reject_unknown(*pat, "pattern", {"m", "zero", "positive"});
    PatternConfig pc;
    const Json* m = pd::member(*pat, "m");
    if (!m) pd::cfg_fail("pattern.m", "required");
    pc.m = pd::get_count(*m, "pattern.m", 1, 1000);
    if (const Json* v = pd::member(*pat, "zero"))
      pc.zero_cells = pd::get_cells(*v, "pattern.zero");
    if (const Json* v = pd::member(*pat, "positive"))
      pc.positive_cells = pd::get_cells(*v, "pattern.positive");
    cfg.pattern = std::move(pc);
  }

  if (const Json* pr = pd::member(root, "prior")) {
    pd::expect_object(*pr, "prior");
    pd::reject_unknown(*pr, "prior",
                       {"loading_variance", "psi_shape", "psi_rate", "phi_df",
                        "training_fraction"});
    if (const Json* v = pd::member(*pr, "loading_variance")) {
      cfg.prior.loading_variance = pd::get_number(*v, "prior.loading_variance");
      if (cfg.prior.loading_variance <= 0)
        pd::cfg_fail("prior.loading_variance", "must be positive");
    }
    if (const Json* v = pd::member(*pr, "psi_shape")) {
      cfg.prior.psi_shape = pd::get_number(*v, "prior.psi_shape");
      if (cfg.prior.psi_shape <= 0) pd::cfg_fail("prior.psi_shape", "must be positive");
    }
    if (const Json* v = pd::member(*pr, "psi_rate")) {
      cfg.prior.psi_rate = pd::get_number(*v, "prior.psi_rate");
      if (cfg.prior.psi_rate <= 0) pd::cfg_fail("prior.psi_rate", "must be positive");
    }
    if (const Json* v = pd::member(*pr, "phi_df"))
      cfg.prior.phi_df = pd::get_count(*v, "prior.phi_df", 0, 1000000);
    if (const Json* v = pd::member(*pr, "training_fraction")) {
      cfg.prior.training_fraction = pd::get_number(*v, "prior.training_fraction");
      if (cfg.prior.training_fraction <= 0 || cfg.prior.training_fraction >= 1)
        pd::cfg_fail("prior.training_fraction", "must be strictly between 0 and 1");
    }
  }

  if (const Json* ch = pd::member(root, "chain"))
    cfg.chain = pd::get_chain(*ch, "chain", cfg.chain, true);

  if (const Json* dim = pd::member(root, "dimension")) {
    pd::expect_object(*dim, "dimension");
    pd::reject_unknown(*dim, "dimension",
                       {"max_factors", "splits", "phi_is_draws", "theta_star",
                        "ordinate", "train_fraction"});
    DimensionSettings ds;
    if (const Json* v = pd::member(*dim, "max_factors"))
      ds.max_factors = pd::get_count(*v, "dimension.max_factors", 0, 1000);
    if (const Json* v = pd::member(*dim, "splits"))
      ds.chib.splits = pd::get_count(*v, "dimension.splits", 1, 1000);
    if (const Json* v = pd::member(*dim, "phi_is_draws"))
      ds.chib.phi_is_draws = pd::get_count(*v, "dimension.phi_is_draws", 100);
    if (const Json* v = pd::member(*dim, "theta_star"))
      ds.chib.theta_star_run =
          pd::get_chain(*v, "dimension.theta_star", ds.chib.theta_star_run, false);
    if (const Json* v = pd::member(*dim, "ordinate"))
      ds.chib.ordinate_run =
          pd::get_chain(*v, "dimension.ordinate", ds.chib.ordinate_run, false);
    if (const Json* v = pd::member(*dim, "train_fraction")) {
      ds.train_fraction = pd::get_number(*v, "dimension.train_fraction");
      if (ds.train_fraction <= 0 || ds.train_fraction >= 1)
        pd::cfg_fail("dimension.train_fraction",
                     "must be strictly between 0 and 1");
    }
    cfg.dimension = ds;
  }

  if (const Json* cm = pd::member(root, "compare")) {
    pd::expect_object(*cm, "compare");
    pd::reject_unknown(*cm, "compare", {"models", "prior_draws", "weights"});
    CompareConfig cc;
    const Json* models = pd::member(*cm, "models");
    if (!models) pd::cfg_fail("compare.models", "required");
    cc.models_path = pd::get_string(*models, "compare.models");
    if (const Json* v = pd::member(*cm, "prior_draws"))
      cc.prior_draws = pd::get_count(*v, "compare.prior_draws", 1, 2000000000);
    if (const Json* v = pd::member(*cm, "weights")) {
      if (!v->is_array()) pd::cfg_fail("compare.weights", "expected an array");
      for (std::size_t i = 0; i < v->size(); ++i) {
        const std::string path = "compare.weights[" + std::to_string(i) + "]";
        const double w = pd::get_number((*v)[i], path);
        if (w <= 0) pd::cfg_fail(path, "must be positive");
        cc.weights.push_back(w);
      }
    }
    cfg.compare = std::move(cc);
  }
  return cfg;
}

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::string out_dir;  // empty means absent
  std::optional<int> chains;
};

struct PipelineContext {
  RunConfig config;
  std::filesystem::path config_dir;  // base for relative input paths
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
};

inline PipelineContext make_context(const std::filesystem::path& config_path,
                                    const CliOverrides& over = {}) {
  std::ifstream in(config_path);
  if (!in) throw ConfigError("config: cannot read " + config_path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());

  PipelineContext ctx;
  ctx.config = parse_config(text);
  ctx.config_dir = config_path.parent_path();

  if (over.seed)
    ctx.seed = *over.seed;
  else if (ctx.config.seed)
    ctx.seed = *ctx.config.seed;
  else
    throw ConfigError("config: seed: required (or pass --seed)");

  std::string out = over.out_dir;
  if (out.empty()) out = ctx.config.out_dir;
  if (out.empty())
    if (const char* env = std::getenv("BAYESFA_OUT_DIR")) out = env;
  if (out.empty())
    throw ConfigError(
        "config: out_dir: required (set out_dir, pass --out-dir, or export "
        "BAYESFA_OUT_DIR)");
  ctx.out_dir = out;

  if (over.chains) {
    if (*over.chains < 1) throw ConfigError("config: chain.chains: must be at least 1");
    ctx.config.chain.chains = *over.chains;
  }
  return ctx;
}

namespace pipe_detail {

inline constexpr char kPreprocessedCsv[] = "preprocessed.csv";
inline constexpr char kDatasetMeta[] = "dataset.json";
inline constexpr char kScreening[] = "screening.json";
inline constexpr char kDimension[] = "dimension.json";
inline constexpr char kDraws[] = "draws.tsv";
inline constexpr char kFitMeta[] = "fit.json";
inline constexpr char kComparison[] = "comparison.json";
inline constexpr char kReportDir[] = "report";

inline std::filesystem::path resolve_input(const PipelineContext& ctx,
                                           const std::string& path) {
  const std::filesystem::path p(path);
  return p.is_absolute() || ctx.config_dir.empty() ? p : ctx.config_dir / p;
}

inline std::uint64_t stage_seed(std::uint64_t master, std::string_view stage) {
  return Rng(master).child(stage).derived_seed();
}

inline void require_artifact(const std::filesystem::path& path,
                             const std::string& missing_stage,
                             const std::string& running_stage) {
  if (!std::filesystem::exists(path))
    throw ConfigError(running_stage + " needs the " + missing_stage +
                      " stage first: missing " + path.string());
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read artifact: " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw DataError("artifact " + path.string() + " is not valid JSON: " +
                    e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write artifact: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw DataError("failed writing artifact: " + path.string());
}

inline Json cells_json(const std::vector<CellRef>& cells) {
  Json out = Json::array();
  for (const auto& c : cells) out.push_back(Json::array({c.row, c.col}));
  return out;
}

inline std::vector<CellRef> cells_from(const Json& j) {
  std::vector<CellRef> out;
  for (const auto& e : j)
    out.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
  return out;
}

inline Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
  return m;
}

// Loads the preprocessed dataset with its column metadata.
inline Dataset load_dataset(const PipelineContext& ctx,
                            const std::string& running_stage) {
  const auto csv_path = ctx.out_dir / kPreprocessedCsv;
  const auto meta_path = ctx.out_dir / kDatasetMeta;
  require_artifact(csv_path, "preprocess", running_stage);
  require_artifact(meta_path, "preprocess", running_stage);
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot read artifact: " + csv_path.string());
  Dataset ds = read_csv(in);
  try {
    const Json meta = read_json(meta_path);
    ds.standardized = meta.at("standardized").get<bool>();
    const Json& cols = meta.at("columns");
    if (cols.size() != ds.columns.size())
      throw DataError("artifact " + meta_path.string() +
                      " disagrees with the preprocessed data");
    for (std::size_t j = 0; j < ds.columns.size(); ++j) {
      if (cols.at(j).at("name").get<std::string>() != ds.columns[j].name)
        throw DataError("artifact " + meta_path.string() +
                        " disagrees with the preprocessed data");
      ds.columns[j].log_transformed = cols.at(j).at("log").get<bool>();
    }
  } catch (const Json::exception& e) {
    throw DataError("artifact " + meta_path.string() + ": " + e.what());
  }
  return ds;
}

inline std::optional<CorrelationMatrix> load_screening(const PipelineContext& ctx) {
  const auto path = ctx.out_dir / kScreening;
  if (!std::filesystem::exists(path)) return std::nullopt;
  const Json j = read_json(path);
  try {
    CorrelationMatrix out;
    if (j.at("kmo").is_null())
      out.kmo.value = std::nullopt;
    else
      out.kmo.value = j.at("kmo").get<double>();
    out.kmo.note = j.at("kmo_note").get<std::string>();
    out.eigen_ratio = j.at("eigen_ratio").get<double>();
    out.nonsingular = j.at("nonsingular").get<bool>();
    out.r = matrix_from(j.at("correlation"));
    return out;
  } catch (const Json::exception& e) {
    throw DataError("artifact " + path.string() + ": " + e.what());
  }
}

inline std::optional<DimensionResult> load_dimension(const PipelineContext& ctx) {
  const auto path = ctx.out_dir / kDimension;
  if (!std::filesystem::exists(path)) return std::nullopt;
  const Json j = read_json(path);
  try {
    DimensionResult out;
    const int p = j.at("p").get<int>();
    out.train_size = j.at("train_size").get<int>();
    out.selected_m = j.at("selected_m").get<int>();
    out.pmp = j.at("pmp").get<std::vector<double>>();
    for (const auto& c : j.at("candidates")) {
      ChibEstimate est;
      est.spec.p = p;
      est.spec.m = c.at("m").get<int>();
      est.spec.zero_cells = cells_from(c.at("zero"));
      est.spec.positive_cells = cells_from(c.at("positive"));
      est.log_marginal = c.at("log_marginal").get<double>();
      est.split_values = c.at("split_values").get<std::vector<double>>();
      est.rank.pass = c.at("rank_pass").get<bool>();
      est.rank.smallest_q05 = c.at("smallest_q05").get<double>();
      est.rank.largest_q50 = c.at("largest_q50").get<double>();
      est.phi_accept_rate = c.at("phi_accept_rate").get<double>();
      out.candidates.push_back(std::move(est));
    }
    return out;
  } catch (const Json::exception& e) {
    throw DataError("artifact " + path.string() + ": " + e.what());
  }
}

inline PosteriorDraws load_fit(const PipelineContext& ctx,
                               const std::string& running_stage) {
  const auto draws_path = ctx.out_dir / kDraws;
  const auto meta_path = ctx.out_dir / kFitMeta;
  require_artifact(draws_path, "fit", running_stage);
  require_artifact(meta_path, "fit", running_stage);
  const Json j = read_json(meta_path);
  PosteriorDraws out;
  try {
    out.spec.p = j.at("p").get<int>();
    out.spec.m = j.at("m").get<int>();
    out.spec.zero_cells = cells_from(j.at("zero"));
    out.spec.positive_cells = cells_from(j.at("positive"));
    out.settings.iterations = j.at("iterations").get<long>();
    out.settings.burn_in = j.at("burn_in").get<long>();
    out.settings.chains = j.at("chains").get<int>();
    out.phi_accept_rate = j.at("phi_accept_rate").get<double>();
    out.seed = j.at("seed").get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw DataError("artifact " + meta_path.string() + ": " + e.what());
  }
  out.samples = read_draws(draws_path.string(), out.spec);
  return out;
}

inline std::optional<ModelComparison> load_comparison(const PipelineContext& ctx) {
  const auto path = ctx.out_dir / kComparison;
  if (!std::filesystem::exists(path)) return std::nullopt;
  const Json j = read_json(path);
  try {
    ModelComparison out;
    std::vector<double> bf;
    for (const auto& m : j.at("models")) {
      out.estimates.push_back(bf_from_counts(
          m.at("name").get<std::string>(), m.at("posterior_hits").get<long>(),
          m.at("posterior_total").get<long>(), m.at("prior_hits").get<long>(),
          m.at("prior_total").get<long>()));
      bf.push_back(out.estimates.back().bf);
      out.pmp.push_back(m.at("pmp").get<double>());
    }
    out.bf_matrix = pairwise_bf_matrix(bf);
    return out;
  } catch (const Json::exception& e) {
    throw DataError("artifact " + path.string() + ": " + e.what());
  }
}

}  // namespace pipe_detail

struct StageResult {
  std::string human;
  std::string machine;  // delimited tables for downstream tooling
};

inline StageResult stage_preprocess(const PipelineContext& ctx) {
  namespace pd = pipe_detail;
  const auto csv_path = pd::resolve_input(ctx, ctx.config.data_csv);
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot read data file: " + csv_path.string());
  Dataset ds = read_csv(in);
  if (!ctx.config.log_transform.empty())
    ds = log_transform(std::move(ds), ctx.config.log_transform);
  if (ctx.config.standardize) ds = standardize(std::move(ds));
  const CorrelationMatrix corr = correlation_matrix(ds);

  std::filesystem::create_directories(ctx.out_dir);
  {
    std::ofstream out(ctx.out_dir / pd::kPreprocessedCsv, std::ios::binary);
    if (!out)
      throw DataError("cannot write artifact: " +
                      (ctx.out_dir / pd::kPreprocessedCsv).string());
    write_csv(ds, out);
  }
  {
    pd::Json meta;
    meta["standardized"] = ds.standardized;
    pd::Json cols = pd::Json::array();
    for (const auto& c : ds.columns)
      cols.push_back({{"name", c.name}, {"log", c.log_transformed}});
    meta["columns"] = std::move(cols);
    pd::write_json(ctx.out_dir / pd::kDatasetMeta, meta);
  }
  {
    pd::Json j;
    if (corr.kmo.value)
      j["kmo"] = *corr.kmo.value;
    else
      j["kmo"] = nullptr;
    j["kmo_note"] = corr.kmo.note;
    j["eigen_ratio"] = corr.eigen_ratio;
    j["nonsingular"] = corr.nonsingular;
    j["correlation"] = pd::matrix_json(corr.r);
    pd::write_json(ctx.out_dir / pd::kScreening, j);
  }

  StageResult res;
  res.human = "Preprocessed " + std::to_string(ds.n()) + " rows, " +
              std::to_string(ds.p()) + " variables -> " +
              (ctx.out_dir / pd::kPreprocessedCsv).string() + "\n";
  if (corr.kmo.value)
    res.human += "KMO sampling adequacy: " + report_detail::num(*corr.kmo.value) +
                 " (" + kmo_label(*corr.kmo.value) + ")\n";
  else
    res.human += "KMO sampling adequacy: undefined (" + corr.kmo.note + ")\n";
  res.human += "Correlation eigenvalue ratio (min/max): " +
               report_detail::num(corr.eigen_ratio) +
               (corr.nonsingular ? "" : "  ** numerically singular **") + "\n";
  res.machine = "rows\tcols\tkmo\teigen_ratio\tnonsingular\n" +
                std::to_string(ds.n()) + "\t" + std::to_string(ds.p()) + "\t" +
                (corr.kmo.value ? detail::format_double(*corr.kmo.value)
                                : std::string("NA")) +
                "\t" + detail::format_double(corr.eigen_ratio) + "\t" +
                (corr.nonsingular ? "1" : "0") + "\n";
  return res;
}

inline StageResult stage_select_dim(const PipelineContext& ctx) {
  namespace pd = pipe_detail;
  if (!ctx.config.dimension)
    throw ConfigError("config: dimension: block required to run select-dim");
  const Dataset ds = pd::load_dataset(ctx, "select-dim");
  const DimensionResult result =
      select_dimension(ds.values, ctx.config.prior, *ctx.config.dimension,
                       pd::stage_seed(ctx.seed, "select-dim"));

  pd::Json j;
  j["p"] = ds.p();
  j["train_size"] = result.train_size;
  j["selected_m"] = result.selected_m;
  j["pmp"] = result.pmp;
  pd::Json cands = pd::Json::array();
  for (const auto& c : result.candidates) {
    pd::Json e;
    e["m"] = c.spec.m;
    e["zero"] = pd::cells_json(c.spec.zero_cells);
    e["positive"] = pd::cells_json(c.spec.positive_cells);
    e["log_marginal"] = c.log_marginal;
    e["split_values"] = c.split_values;
    e["rank_pass"] = c.rank.pass;
    e["smallest_q05"] = c.rank.smallest_q05;
    e["largest_q50"] = c.rank.largest_q50;
    e["phi_accept_rate"] = c.phi_accept_rate;
    cands.push_back(std::move(e));
  }
  j["candidates"] = std::move(cands);
  pd::write_json(ctx.out_dir / pd::kDimension, j);

  StageResult res;
  res.human = dimension_section(result);
  res.machine = dimension_table(result);
  return res;
}

inline StageResult stage_fit(const PipelineContext& ctx) {
  namespace pd = pipe_detail;
  const Dataset ds = pd::load_dataset(ctx, "fit");

  UcfmSpec spec;
  if (ctx.config.pattern) {
    spec.p = ds.p();
    spec.m = ctx.config.pattern->m;
    spec.zero_cells = ctx.config.pattern->zero_cells;
    spec.positive_cells = ctx.config.pattern->positive_cells;
  } else {
    const auto dim = pd::load_dimension(ctx);
    if (!dim)
      throw ConfigError(
          "fit: no pattern block in the config and no completed select-dim "
          "stage; add a pattern or run select-dim first");
    spec = canonical_ucfm_spec(ds.values, dim->selected_m);
  }

  const std::uint64_t seed = pd::stage_seed(ctx.seed, "fit");
  const PosteriorDraws draws =
      gibbs_run(ds.values, spec, ctx.config.prior, ctx.config.chain, seed);

  std::filesystem::create_directories(ctx.out_dir);
  write_draws((ctx.out_dir / pd::kDraws).string(), draws.samples, spec);
  pd::Json j;
  j["p"] = spec.p;
  j["m"] = spec.m;
  j["zero"] = pd::cells_json(spec.zero_cells);
  j["positive"] = pd::cells_json(spec.positive_cells);
  j["iterations"] = draws.settings.iterations;
  j["burn_in"] = draws.settings.burn_in;
  j["chains"] = draws.settings.chains;
  j["phi_accept_rate"] = draws.phi_accept_rate;
  j["seed"] = seed;
  pd::write_json(ctx.out_dir / pd::kFitMeta, j);

  StageResult res;
  res.human = "Fitted " + std::to_string(spec.p) + " variables, " +
              std::to_string(spec.m) + " factors: " +
              std::to_string(draws.count()) + " retained draws -> " +
              (ctx.out_dir / pd::kDraws).string() + "\n";
  if (spec.m > 1)
    res.human += "Correlation step acceptance rate: " +
                 report_detail::num(draws.phi_accept_rate) + "\n";
  res.machine = loadings_table(posterior_summary(draws), spec, ds.columns);
  return res;
}

inline StageResult stage_compare(const PipelineContext& ctx) {
  namespace pd = pipe_detail;
  if (!ctx.config.compare)
    throw ConfigError("config: compare: block required to run compare");
  const PosteriorDraws fit = pd::load_fit(ctx, "compare");

  const auto models_path = pd::resolve_input(ctx, ctx.config.compare->models_path);
  std::ifstream in(models_path);
  if (!in) throw DataError("cannot read models file: " + models_path.string());
  const std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  const auto parsed = parse_model_file(text);  // a parse error mutates nothing
  std::vector<std::pair<std::string, ConstraintSet>> models;
  for (const auto& model : parsed)
    models.emplace_back(model.name, expand(model, fit.spec));

  const ModelComparison cmp =
      compare_models(fit, models, ctx.config.prior, ctx.config.compare->prior_draws,
                     pd::stage_seed(ctx.seed, "compare"),
                     ctx.config.compare->weights);

  pd::Json j;
  pd::Json arr = pd::Json::array();
  for (std::size_t i = 0; i < cmp.estimates.size(); ++i) {
    const auto& e = cmp.estimates[i];
    pd::Json m;
    m["name"] = e.name;
    m["posterior_hits"] = e.posterior_hits;
    m["posterior_total"] = e.posterior_total;
    m["prior_hits"] = e.prior_hits;
    m["prior_total"] = e.prior_total;
    m["bf"] = e.bf;
    m["mc_se"] = e.mc_se;
    m["pmp"] = cmp.pmp[i];
    arr.push_back(std::move(m));
  }
  j["models"] = std::move(arr);
  pd::write_json(ctx.out_dir / pd::kComparison, j);

  StageResult res;
  res.human = comparison_section(cmp);
  res.machine = comparison_table(cmp);
  return res;
}

inline StageResult stage_report(const PipelineContext& ctx) {
  namespace pd = pipe_detail;
  ReportBundle bundle;
  bundle.dataset = pd::load_dataset(ctx, "report");
  bundle.screening = pd::load_screening(ctx);
  bundle.dimension = pd::load_dimension(ctx);
  if (std::filesystem::exists(ctx.out_dir / pd::kDraws))
    bundle.fit = pd::load_fit(ctx, "report");
  bundle.comparison = pd::load_comparison(ctx);
  bundle.seed = ctx.seed;

  const auto dir = ctx.out_dir / pd::kReportDir;
  render_report(dir, bundle);

  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    files.push_back(entry.path().filename().string());
  std::sort(files.begin(), files.end());

  StageResult res;
  res.human = "Report -> " + dir.string() + " (" + std::to_string(files.size()) +
              " files)\n";
  for (const auto& f : files) res.machine += "file\t" + f + "\n";
  return res;
}

// The stages "all" runs, in order, for this configuration.
inline std::vector<std::string> stages_for_all(const RunConfig& config) {
  std::vector<std::string> stages{"preprocess"};
  if (config.dimension) stages.push_back("select-dim");
  stages.push_back("fit");
  if (config.compare) stages.push_back("compare");
  stages.push_back("report");
  return stages;
}

inline StageResult run_stage(const PipelineContext& ctx, const std::string& stage) {
  if (stage == "preprocess") return stage_preprocess(ctx);
  if (stage == "select-dim") return stage_select_dim(ctx);
  if (stage == "fit") return stage_fit(ctx);
  if (stage == "compare") return stage_compare(ctx);
  if (stage == "report") return stage_report(ctx);
  throw ConfigError("unknown stage: " + stage);
}

}  // namespace bayesfa
