#pragma once

// Command-line front end: simulate, fit and evaluate. Exit codes: 0 success,
// 2 invalid configuration or input, 3 numerical divergence, 4 I/O failure.
//
// A run is described by a RunConfig assembled from defaults, then an optional
// JSON config file, then explicit flags (the IRTVI_OUTPUT_DIR environment
// variable counts as a flag for the output directory). Its fingerprint is a
// hash of the canonical JSON form and is embedded in every output file.

#include "irtvi/data.hpp"
#include "irtvi/em.hpp"
#include "irtvi/error.hpp"
#include "irtvi/evaluation.hpp"
#include "irtvi/hmc.hpp"
#include "irtvi/mle.hpp"
#include "irtvi/models.hpp"
#include "irtvi/random.hpp"
#include "irtvi/samples.hpp"
#include "irtvi/serialize.hpp"
#include "irtvi/variational.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace irtvi::cli {

enum ExitCode : int { ok = 0, invalid = 2, diverged = 3, io_failure = 4 };

struct RunConfig {
  std::string command;
  // data source: a matrix file, or synthetic data (n, m, k, generator) when data is empty
  std::string data;
  std::string truth;  // optional ground-truth companion for file data
  std::string kind = "binary";
  bool header = false;
  long n = 1000;
  long m = 50;
  long k = 1;
  std::string generator = "2pl";
  // fitting
  std::string algorithm = "vibo";
  std::string model = "2pl";
  long iterations = 10000;
  double lr = 5e-3;
  long batch = 128;
  long kl_warmup = 0;
  double holdout = 0.10;
  long hmc_samples = 200;
  long hmc_warmup = 100;
  long leapfrog = 10;
  // evaluation
  std::string fit_dir;
  std::string compare_dir;
  std::string metrics = "impute,correlation";
  long is_samples = 1000;
  long draws = 100;
  // run
  std::string out = "irtvi-out";
  std::uint64_t seed = 0;
  long workers = 1;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, command, data, truth, kind, header, n, m,
                                                k, generator, algorithm, model, iterations, lr,
                                                batch, kl_warmup, holdout, hmc_samples, hmc_warmup,
                                                leapfrog, fit_dir, compare_dir, metrics, is_samples,
                                                draws, out, seed, workers)

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

// Output location and worker count do not affect results and are excluded.
inline std::string fingerprint(const RunConfig& config) {
  Json j = config;
  j.erase("out");
  j.erase("workers");
  return hex64(fnv1a(j.dump()));
}

// ---------------------------------------------------------------------------
// Validation

inline const std::vector<std::string>& algorithms() {
  static const std::vector<std::string> names{"vibo",       "vibo-independent",
                                              "vibo-unamortized", "mle", "em", "hmc"};
  return names;
}

inline bool is_vibo(const std::string& algorithm) { return algorithm.rfind("vibo", 0) == 0; }

inline PosteriorFamily posterior_family_for(const std::string& algorithm) {
  if (algorithm == "vibo") return PosteriorFamily::amortized;
  if (algorithm == "vibo-independent") return PosteriorFamily::independent;
  return PosteriorFamily::unamortized;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& msg) { throw InvalidInput(msg); };
  if (c.workers < 1) fail("--workers must be >= 1");
  if (c.data.empty() && (c.n < 1 || c.m < 1)) fail("--n and --m must be >= 1");
  if (c.k < 1) fail("--k must be >= 1");
  parse_data_kind(c.kind);
  if (c.command == "simulate") {
    // 3pl gets the generator's own explanation of why it is refused
    if (parse_family(c.generator) == Family::three_pl) generate_synthetic(1, 1, 1, Family::three_pl, 0);
    const Family g = parse_family(c.generator);
    if (g != Family::one_pl && g != Family::two_pl && g != Family::mirt_two_pl) {
      fail("simulate supports --family 1pl or 2pl");
    }
    return;
  }
  if (std::find(algorithms().begin(), algorithms().end(), c.algorithm) == algorithms().end()) {
    fail("unknown algorithm '" + c.algorithm + "'");
  }
  const Family family = parse_family(c.model);
  check_family_dim(family, c.k);
  if (c.algorithm == "em") {
    if (c.k != 1) fail("em requires K = 1 (quadrature is one-dimensional); got K = " +
                       std::to_string(c.k));
    if (family != Family::one_pl && family != Family::two_pl) {
      fail("em supports the 1pl and 2pl models only, got " + c.model);
    }
    if (c.kind != "binary") fail("em requires binary data");
  }
  if ((c.algorithm == "hmc" || c.algorithm == "mle") && !is_classical(family)) {
    fail(c.algorithm + " supports classical IRT models only, got " + c.model);
  }
  if (c.iterations < 0) fail("--iterations must be >= 0");
  if (!(c.lr > 0.0)) fail("--lr must be > 0");
  if (c.batch < 1) fail("--batch must be >= 1");
  if (c.kl_warmup < 0) fail("--kl-warmup must be >= 0");
  if (!(c.holdout >= 0.0 && c.holdout < 1.0)) fail("--holdout must lie in [0, 1)");
  if (c.hmc_samples < 1 || c.hmc_warmup < 1 || c.leapfrog < 1) {
    fail("--hmc-samples, --hmc-warmup and --leapfrog must be >= 1");
  }
  if (c.command == "evaluate") {
    if (c.fit_dir.empty()) fail("evaluate needs --fit DIR");
    for (const auto& metric : split_list(c.metrics)) {
      if (metric != "impute" && metric != "correlation" && metric != "log-marginal" &&
          metric != "ppc") {
        fail("unknown metric '" + metric + "'");
      }
    }
    if (c.is_samples < 1 || c.draws < 1) fail("--is-samples and --draws must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// Data

struct DataBundle {
  ResponseDataset full;
  ResponseDataset train;
  std::optional<HoldoutSplit> split;
  std::optional<GroundTruth> truth;
  std::string fingerprint;  // data content + split settings
};

inline DataBundle load_data(const RunConfig& c) {
  DataBundle b;
  if (c.data.empty()) {
    SyntheticData syn = generate_synthetic(c.n, c.m, c.k, parse_family(c.generator), c.seed);
    b.full = std::move(syn.dataset);
    b.truth = std::move(syn.truth);
  } else {
    b.full = load_matrix(c.data, LoadOptions{parse_data_kind(c.kind), c.header});
    if (!c.truth.empty()) b.truth = load_ground_truth(c.truth);
  }
  if (b.truth && b.truth->abilities.rows() != b.full.persons()) {
    throw InvalidInput("ground truth has " + std::to_string(b.truth->abilities.rows()) +
                       " people, data has " + std::to_string(b.full.persons()));
  }
  b.train = b.full;
  if (c.holdout > 0.0) {
    b.split = holdout_split(b.full, c.holdout, c.seed);
    b.train = b.full.with_mask(b.split->train);
  }
  std::ostringstream content;
  write_matrix(content, b.full);
  Json id{{"content", hex64(fnv1a(content.str()))},
          {"holdout", c.holdout},
          {"seed", c.seed},
          {"kind", c.kind}};
  b.fingerprint = hex64(fnv1a(id.dump()));
  return b;
}

inline ResponseKind response_kind(const RunConfig& c) {
  return response_kind_for(parse_data_kind(c.kind));
}

inline GenerativeModel make_model(const RunConfig& c) {
  Rng init = make_stream(c.seed, "init/model");
  return GenerativeModel(parse_family(c.model), c.k, response_kind(c), init);
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

// ---------------------------------------------------------------------------
// Commands

inline void cmd_simulate(const RunConfig& c, std::ostream& log) {
  const std::string fp = fingerprint(c);
  SyntheticData syn = generate_synthetic(c.n, c.m, c.k, parse_family(c.generator), c.seed);
  ensure_dir(c.out);
  const std::vector<std::string> comments{
      "fingerprint " + fp,
      "irtvi simulate n=" + std::to_string(c.n) + " m=" + std::to_string(c.m) +
          " k=" + std::to_string(c.k) + " family=" + c.generator +
          " seed=" + std::to_string(c.seed)};
  save_matrix(join(c.out, "responses.csv"), syn.dataset, comments);
  save_ground_truth(join(c.out, "truth.csv"), syn.truth, comments);
  log << "wrote " << join(c.out, "responses.csv") << " and " << join(c.out, "truth.csv") << '\n';
}

inline void cmd_fit(const RunConfig& c, std::ostream& log) {
  const std::string fp = fingerprint(c);
  DataBundle data = load_data(c);
  GenerativeModel model = make_model(c);
  ensure_dir(c.out);

  Json doc{{"fingerprint", fp},
           {"data_fingerprint", data.fingerprint},
           {"config", Json(c)},
           {"algorithm", c.algorithm},
           {"family", c.model},
           {"dim", c.k},
           {"response_kind", to_string(response_kind(c))}};
  std::vector<Json> trace;

  if (is_vibo(c.algorithm)) {
    ViboConfig vc;
    vc.posterior = posterior_family_for(c.algorithm);
    vc.iterations = c.iterations;
    vc.learning_rate = c.lr;
    vc.batch_size = c.batch;
    vc.kl_warmup = c.kl_warmup;
    vc.seed = c.seed;
    VariationalFit fit = fit_vibo(data.train, model, vc);
    const auto smooth = smoothed_trace(fit.trace);
    for (std::size_t i = 0; i < fit.trace.size(); ++i) {
      Json r = trace_record_to_json(fit.trace[i]);
      r["smoothed"] = smooth[i];
      r["fingerprint"] = fp;
      trace.push_back(std::move(r));
    }
    doc["variational"] = variational_fit_to_json(fit);
    doc["abilities"] = matrix_to_json(ability_means(fit, data.train));
    doc["items"] = matrix_to_json(fit.posterior.item_mean().value());
    log << c.algorithm << ": " << fit.trace.size() << " iterations, final smoothed bound "
        << (smooth.empty() ? 0.0 : smooth.back()) << '\n';
  } else if (c.algorithm == "mle") {
    MleConfig mc;
    mc.iterations = c.iterations;
    mc.learning_rate = c.lr;
    mc.seed = c.seed;
    MleFit fit = fit_mle(data.train, model, mc);
    for (std::size_t i = 0; i < fit.trace.size(); ++i) {
      trace.push_back({{"iteration", i}, {"log_likelihood", fit.trace[i]}, {"fingerprint", fp}});
    }
    doc["abilities"] = matrix_to_json(fit.estimate.abilities);
    doc["items"] = matrix_to_json(fit.estimate.items.params);
    log << "mle: final mean log-likelihood " << (fit.trace.empty() ? 0.0 : fit.trace.back())
        << '\n';
  } else if (c.algorithm == "em") {
    EmFit fit = fit_em(data.train, parse_family(c.model));
    for (std::size_t i = 0; i < fit.trace.size(); ++i) {
      trace.push_back(
          {{"cycle", i}, {"marginal_log_likelihood", fit.trace[i]}, {"fingerprint", fp}});
    }
    doc["abilities"] = matrix_to_json(fit.estimate.abilities);
    doc["items"] = matrix_to_json(fit.estimate.items.params);
    doc["flags"] = fit.flags;
    doc["converged"] = fit.converged;
    log << "em: " << fit.cycles << " cycles, marginal log-likelihood " << fit.trace.back()
        << '\n';
  } else {
    HmcConfig hc;
    hc.num_samples = c.hmc_samples;
    hc.warmup = c.hmc_warmup;
    hc.leapfrog_steps = static_cast<int>(c.leapfrog);
    hc.seed = c.seed;
    PosteriorSamples samples = hmc_fit(data.train, model, hc);
    std::vector<Json> lines;
    for (std::size_t s = 0; s < samples.size(); ++s) {
      Json r = draw_to_json(samples.draws[s]);
      r["draw"] = s;
      r["fingerprint"] = fp;
      lines.push_back(std::move(r));
    }
    write_jsonl(join(c.out, "samples.jsonl"), lines);
    doc["abilities"] = matrix_to_json(samples.mean_abilities());
    doc["items"] = matrix_to_json(samples.mean_items());
    doc["acceptance_rate"] = samples.acceptance_rate;
    doc["step_size"] = samples.step_size;
    log << "hmc: " << samples.size() << " draws, acceptance " << samples.acceptance_rate << '\n';
  }
  if (!trace.empty()) write_jsonl(join(c.out, "trace.jsonl"), trace);
  write_json(join(c.out, "fit.json"), doc);
}

// Fitted output reloaded from a fit directory.
struct LoadedFit {
  Json doc;
  std::string algorithm;
  GenerativeModel model;
  std::optional<VariationalFit> variational;
  std::optional<PosteriorSamples> samples;  // hmc
  Matrix abilities;
  Matrix items;
};

inline LoadedFit load_fit(const std::string& dir, const RunConfig& c) {
  LoadedFit f;
  f.doc = read_json(join(dir, "fit.json"));
  f.algorithm = f.doc.at("algorithm").get<std::string>();
  f.abilities = matrix_from_json(f.doc.at("abilities"));
  f.items = matrix_from_json(f.doc.at("items"));
  if (f.doc.contains("variational")) {
    f.variational = variational_fit_from_json(f.doc.at("variational"));
    f.model = f.variational->model;
  } else {
    Rng init = make_stream(c.seed, "init/model");
    f.model = GenerativeModel(parse_family(f.doc.at("family").get<std::string>()),
                              f.doc.at("dim").get<Eigen::Index>(),
                              parse_response_kind(f.doc.at("response_kind").get<std::string>()),
                              init);
  }
  if (f.algorithm == "hmc") {
    PosteriorSamples s;
    s.family = f.model.family();
    s.dim = f.model.dim();
    for (const auto& line : read_jsonl(join(dir, "samples.jsonl"))) {
      s.draws.push_back(draw_from_json(line));
    }
    s.acceptance_rate = f.doc.value("acceptance_rate", 0.0);
    f.samples = std::move(s);
  }
  return f;
}

// Posterior draws for predictive checks: HMC samples, draws from q for
// VIBO, and a single point-mass draw for MLE/EM.
inline PosteriorSamples predictive_draws(const LoadedFit& f, const ResponseDataset& train,
                                         const RunConfig& c) {
  if (f.samples) return *f.samples;
  if (f.variational) {
    Rng rng = make_stream(c.seed, "evaluation/draws");
    return sample_posterior(*f.variational, train, static_cast<std::size_t>(c.draws), rng);
  }
  PosteriorSamples s;
  s.family = f.model.family();
  s.dim = f.model.dim();
  s.draws.push_back({f.abilities, f.items});
  return s;
}

inline void cmd_evaluate(const RunConfig& c, std::ostream& log) {
  const std::string fp = fingerprint(c);
  DataBundle data = load_data(c);
  LoadedFit fit = load_fit(c.fit_dir, c);
  const std::string stored = fit.doc.at("data_fingerprint").get<std::string>();
  if (stored != data.fingerprint) {
    throw InvalidInput("fit in '" + c.fit_dir + "' was produced from different data or split (" +
                       stored + " vs " + data.fingerprint + "); rerun fit with the same data, "
                       "--holdout and --seed");
  }
  ensure_dir(c.out);
  std::vector<Json> report;
  auto record = [&](const std::string& metric, double value, Json extra = Json::object()) {
    Json r{{"metric", metric},
           {"value", value},
           {"algorithm", fit.algorithm},
           {"fingerprint", fp},
           {"seed", c.seed}};
    r.update(extra);
    log << metric << " = " << value << '\n';
    report.push_back(std::move(r));
  };

  std::optional<PosteriorSamples> draws;
  auto get_draws = [&]() -> const PosteriorSamples& {
    if (!draws) draws = predictive_draws(fit, data.train, c);
    return *draws;
  };

  for (const auto& metric : split_list(c.metrics)) {
    if (metric == "impute") {
      if (!data.split) throw InvalidInput("impute needs a held-out split (--holdout > 0)");
      const Matrix p = fit.samples || fit.variational
                           ? posterior_mean_probabilities(fit.model, get_draws())
                           : fit.model.probability(fit.abilities, fit.items);
      const ImputationReport rep = impute(data.full, *data.split, p, fit.algorithm);
      record("imputation_accuracy", rep.accuracy,
             {{"heldout", rep.heldout}, {"correct", rep.correct}});
    } else if (metric == "correlation") {
      if (!data.truth) {
        throw InvalidInput(
            "correlation needs ground-truth abilities; real data has none (use synthetic data "
            "or pass --truth)");
      }
      const Vector corr = ability_correlation(fit.abilities, data.truth->abilities);
      for (Eigen::Index d = 0; d < corr.size(); ++d) {
        record("ability_correlation", corr[d], {{"dimension", d}});
      }
    } else if (metric == "log-marginal") {
      if (!fit.variational) throw InvalidInput("log-marginal needs a vibo fit");
      const LogMarginalEstimate est =
          log_marginal_is(*fit.variational, data.train, c.is_samples, c.seed);
      const double responses = static_cast<double>(data.train.observed_count());
      record("log_marginal", est.total,
             {{"per_response", est.total / responses}, {"samples", c.is_samples}});
      // S = 1000 total draws split as 10 item draws x 100 ability draws
      const Eigen::Index item_draws = std::max<Eigen::Index>(1, c.is_samples / 100);
      const Eigen::Index ability_draws = std::max<Eigen::Index>(1, c.is_samples / item_draws);
      const JointLogMarginalEstimate joint =
          log_marginal_joint(*fit.variational, data.train, item_draws, ability_draws, c.seed);
      record("joint_log_marginal", joint.total,
             {{"per_response", joint.per_response},
              {"item_samples", item_draws},
              {"ability_samples", ability_draws}});
    } else if (metric == "ppc") {
      PosteriorSamples other = get_draws();
      std::string other_name = fit.algorithm;
      if (!c.compare_dir.empty()) {
        LoadedFit cmp = load_fit(c.compare_dir, c);
        if (cmp.doc.at("data_fingerprint").get<std::string>() != data.fingerprint) {
          throw InvalidInput("comparison fit in '" + c.compare_dir + "' used different data");
        }
        other = predictive_draws(cmp, data.train, c);
        other_name = cmp.algorithm;
      }
      const PpcSummary s =
          posterior_predictive_check(fit.model, get_draws(), other, data.train, c.seed);
      record("ppc_person_correlation", s.person_correlation, {{"against", other_name}});
      record("ppc_item_correlation", s.item_correlation, {{"against", other_name}});
    }
  }
  write_jsonl(join(c.out, "report.jsonl"), report);
}

// ---------------------------------------------------------------------------
// Entry point

namespace detail {

struct Bound {
  std::string key;  // RunConfig JSON field
  CLI::Option* option;
};

inline void add_data_options(CLI::App& app, RunConfig& c, std::vector<Bound>& bound) {
  bound.push_back({"data", app.add_option("--data", c.data, "Response matrix file (CSV, NA = missing)")});
  bound.push_back({"truth", app.add_option("--truth", c.truth, "Ground-truth file for --data")});
  bound.push_back({"kind", app.add_option("--kind", c.kind, "binary | polytomous")});
  bound.push_back({"header", app.add_flag("--header", c.header, "Data file has an item-id header row")});
  bound.push_back({"n", app.add_option("--n", c.n, "Synthetic people")});
  bound.push_back({"m", app.add_option("--m", c.m, "Synthetic items")});
  bound.push_back({"k", app.add_option("--k", c.k, "Ability dimension")});
  bound.push_back({"generator", app.add_option("--generator", c.generator, "Synthetic family: 1pl | 2pl")});
  bound.push_back({"holdout", app.add_option("--holdout", c.holdout, "Held-out fraction of observed cells")});
}

inline void add_run_options(CLI::App& app, RunConfig& c, std::vector<Bound>& bound) {
  bound.push_back({"out", app.add_option("--out", c.out, "Output directory")->envname("IRTVI_OUTPUT_DIR")});
  bound.push_back({"seed", app.add_option("--seed", c.seed, "Top-level seed")});
  bound.push_back({"workers", app.add_option("--workers", c.workers, "Worker cap (results do not depend on it)")});
}

inline void add_fit_options(CLI::App& app, RunConfig& c, std::vector<Bound>& bound) {
  bound.push_back({"algorithm", app.add_option("--algorithm", c.algorithm,
                                               "vibo | vibo-independent | vibo-unamortized | mle | em | hmc")});
  bound.push_back({"model", app.add_option("--model", c.model,
                                           "1pl | 2pl | 3pl | mirt | link | deep | residual")});
  bound.push_back({"iterations", app.add_option("--iterations", c.iterations, "Optimizer iterations")});
  bound.push_back({"lr", app.add_option("--lr", c.lr, "Adam learning rate")});
  bound.push_back({"batch", app.add_option("--batch", c.batch, "VIBO minibatch size (people)")});
  bound.push_back({"kl_warmup", app.add_option("--kl-warmup", c.kl_warmup,
                                               "VIBO iterations over which KL terms ramp to full weight")});
  bound.push_back({"hmc_samples", app.add_option("--hmc-samples", c.hmc_samples, "Post-warmup HMC draws")});
  bound.push_back({"hmc_warmup", app.add_option("--hmc-warmup", c.hmc_warmup, "HMC warmup iterations")});
  bound.push_back({"leapfrog", app.add_option("--leapfrog", c.leapfrog, "Leapfrog steps per HMC iteration")});
}

}  // namespace detail

// Parses argv and runs one subcommand. Diagnostics go to `err`.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Variational and classical inference for item response models", "irtvi"};
  app.require_subcommand(1);
  RunConfig flags;
  std::string config_path;
  std::vector<detail::Bound> bound;

  CLI::App* simulate = app.add_subcommand("simulate", "Write a synthetic response matrix and its ground truth");
  CLI::App* fit = app.add_subcommand("fit", "Fit a model and write parameters, trace and samples");
  CLI::App* evaluate = app.add_subcommand("evaluate", "Score a fit: impute, correlation, log-marginal, ppc");
  for (CLI::App* sub : {simulate, fit, evaluate}) {
    sub->add_option("--config", config_path, "JSON config file; flags override its values");
    detail::add_run_options(*sub, flags, bound);
  }
  bound.push_back({"n", simulate->add_option("--n", flags.n, "People")});
  bound.push_back({"m", simulate->add_option("--m", flags.m, "Items")});
  bound.push_back({"k", simulate->add_option("--k", flags.k, "Ability dimension")});
  bound.push_back({"generator", simulate->add_option("--family", flags.generator, "1pl | 2pl")});
  for (CLI::App* sub : {fit, evaluate}) {
    detail::add_data_options(*sub, flags, bound);
    detail::add_fit_options(*sub, flags, bound);
  }
  bound.push_back({"fit_dir", evaluate->add_option("--fit", flags.fit_dir, "Directory written by fit")});
  bound.push_back({"compare_dir", evaluate->add_option("--compare", flags.compare_dir, "Second fit directory for ppc")});
  bound.push_back({"metrics", evaluate->add_option("--metrics", flags.metrics,
                                                   "Comma list: impute,correlation,log-marginal,ppc")});
  bound.push_back({"is_samples", evaluate->add_option("--is-samples", flags.is_samples,
                                                      "Importance samples for log-marginal")});
  bound.push_back({"draws", evaluate->add_option("--draws", flags.draws,
                                                 "Posterior draws from q for impute and ppc")});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return invalid;
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    Json merged = RunConfig{};
    if (!config_path.empty()) {
      Json file = read_json(config_path);
      if (!file.is_object()) throw InvalidInput("config file must hold a JSON object");
      for (const auto& [key, value] : file.items()) {
        if (!merged.contains(key)) throw InvalidInput("unknown config key '" + key + "'");
        merged[key] = value;
      }
    }
    const Json given = flags;
    for (const auto& b : bound) {
      if (b.option->count() > 0 && active->get_option_no_throw(b.option->get_name()) == b.option) {
        merged[b.key] = given.at(b.key);
      }
    }
    RunConfig config;
    try {
      config = merged.get<RunConfig>();
    } catch (const Json::exception& e) {
      throw InvalidInput(std::string("bad config value: ") + e.what());
    }
    config.command = active->get_name();
    validate(config);
    if (config.command == "simulate") {
      cmd_simulate(config, log);
    } else if (config.command == "fit") {
      cmd_fit(config, log);
    } else {
      cmd_evaluate(config, log);
    }
    return ok;
  } catch (const Divergence& e) {
    err << "diverged: " << e.what() << '\n';
    return diverged;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return io_failure;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << '\n';
    return invalid;
  } catch (const std::out_of_range& e) {
    err << "invalid input: " << e.what() << '\n';
    return invalid;
  } catch (const Json::exception& e) {
    err << "invalid input: " << e.what() << '\n';
    return invalid;
  }
}

}  // namespace irtvi::cli
