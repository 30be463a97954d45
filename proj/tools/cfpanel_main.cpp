#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cfpanel/config.hpp"
#include "cfpanel/estimators.hpp"
#include "cfpanel/harness.hpp"
#include "cfpanel/inference.hpp"
#include "cfpanel/report_io.hpp"

namespace fs = std::filesystem;
using namespace cfpanel;

namespace {

constexpr const char* kVersion = "cfpanel 1.0.0 (config schema 1)";

struct CliContext {
  std::string config_path;
  std::string out_dir = ".";
  std::string seed_override;  // empty: config value rules
  int jobs = 1;               // accepted for interface stability; runs are
                              // sequential and job-count independent
};

nn::Optimizer parse_optimizer(const std::string& v, const std::string& key) {
  if (v == "adam") return nn::Optimizer::adam;
  if (v == "sgd") return nn::Optimizer::sgd;
  throw ConfigError("config key '" + key + "': expected adam or sgd");
}

EstimatorOptions options_from_config(const Config& cfg, bool placebo_mode) {
  EstimatorOptions opts;
  opts.placebo_mode = placebo_mode;

  opts.ed_hidden = cfg.get_int("ed.hidden", opts.ed_hidden);
  nn::TrainConfig& ed = opts.ed_train;
  ed.epochs = static_cast<int>(cfg.get_int("ed.epochs", ed.epochs));
  ed.learning_rate = cfg.get_double("ed.lr", ed.learning_rate);
  ed.batch_size = static_cast<int>(cfg.get_int("ed.batch", ed.batch_size));
  ed.input_dropout_rate = cfg.get_double("ed.dropout", ed.input_dropout_rate);
  ed.l2_coeff = cfg.get_double("ed.l2", ed.l2_coeff);
  ed.validation_fraction =
      cfg.get_double("ed.validation_fraction", ed.validation_fraction);
  if (cfg.has("ed.optimizer"))
    ed.optimizer = parse_optimizer(cfg.get_string("ed.optimizer"),
                                   "ed.optimizer");

  opts.rvae_enc_hidden = cfg.get_int("rvae.enc_hidden", opts.rvae_enc_hidden);
  opts.rvae_latent = cfg.get_int("rvae.latent", opts.rvae_latent);
  opts.rvae_dec2_hidden =
      cfg.get_int("rvae.dec2_hidden", opts.rvae_dec2_hidden);
  opts.rvae_samples =
      static_cast<int>(cfg.get_int("rvae.samples", opts.rvae_samples));
  nn::TrainConfig& rv = opts.rvae_train;
  rv.epochs = static_cast<int>(cfg.get_int("rvae.epochs", rv.epochs));
  rv.learning_rate = cfg.get_double("rvae.lr", rv.learning_rate);
  rv.batch_size = static_cast<int>(cfg.get_int("rvae.batch", rv.batch_size));
  rv.input_dropout_rate =
      cfg.get_double("rvae.dropout", rv.input_dropout_rate);
  rv.l2_coeff = cfg.get_double("rvae.l2", rv.l2_coeff);
  if (cfg.has("rvae.optimizer"))
    rv.optimizer = parse_optimizer(cfg.get_string("rvae.optimizer"),
                                   "rvae.optimizer");

  opts.scm_lr = cfg.get_double("scm.lr", opts.scm_lr);
  opts.scm_iters = static_cast<int>(cfg.get_int("scm.iters", opts.scm_iters));

  if (cfg.has("vten.lambdas"))
    opts.vten_lambda = cfg.get_double_list("vten.lambdas");
  if (cfg.has("vten.alphas"))
    opts.vten_alpha = cfg.get_double_list("vten.alphas");
  opts.vten_folds =
      static_cast<int>(cfg.get_int("vten.folds", opts.vten_folds));

  if (cfg.has("mcnnm.lambdas"))
    opts.mcnnm_lambda = cfg.get_double_list("mcnnm.lambdas");
  opts.mcnnm_folds =
      static_cast<int>(cfg.get_int("mcnnm.folds", opts.mcnnm_folds));
  return opts;
}

PanelMatrix load_configured_panel(const Config& cfg, std::uint64_t seed) {
  if (cfg.get_bool("panel.synthetic", false)) {
    SyntheticDgpConfig dgp;
    dgp.n = cfg.get_int("dgp.n", dgp.n);
    dgp.t = cfg.get_int("dgp.t", dgp.t);
    dgp.n_factors = static_cast<int>(cfg.get_int("dgp.factors", dgp.n_factors));
    dgp.ar_coefficient = cfg.get_double("dgp.ar", dgp.ar_coefficient);
    dgp.noise_sd = cfg.get_double("dgp.noise_sd", dgp.noise_sd);
    dgp.seed = cfg.has("dgp.seed") ? cfg.get_seed("dgp.seed")
                                   : derive_seed(seed, "dgp");
    return generate_synthetic(dgp);
  }
  const std::string path = cfg.get_string("panel.path");
  if (!fs::exists(path))
    throw ConfigError("panel file '" + path + "' does not exist");
  CsvLayout layout = CsvLayout::units_as_rows;
  const std::string lay = cfg.get_string("panel.layout", "rect");
  if (lay == "long")
    layout = CsvLayout::long_format;
  else if (lay != "rect")
    throw ConfigError("panel.layout must be rect or long");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read panel file '" + path + "'");
  return load_panel(in, layout);
}

/// Shared preprocessing: unit drops, boundary-respecting imputation, log
/// transform. Zero-variance removal needs a mask and is applied by the
/// commands that have one.
PanelMatrix preprocess_panel(PanelMatrix panel, const Config& cfg,
                             Index impute_boundary) {
  if (cfg.has("preprocess.drop_units"))
    panel = drop_units(panel, cfg.get_string_list("preprocess.drop_units"));
  if (cfg.get_bool("preprocess.impute", false))
    panel = impute_locf_nocb(panel, impute_boundary);
  if (cfg.get_bool("preprocess.log", false)) panel = log_transform(panel);
  return panel;
}

std::uint64_t resolve_seed(Config& cfg, const CliContext& ctx) {
  if (!ctx.seed_override.empty()) cfg.set("seed", ctx.seed_override);
  if (!cfg.has("seed"))
    throw ConfigError("config key 'seed' is required (no wall-clock seeding)");
  return cfg.get_seed("seed");
}

fs::path prepare_out_dir(const CliContext& ctx) {
  fs::path out(ctx.out_dir);
  fs::create_directories(out);
  return out;
}

void write_file(const fs::path& path,
                const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw InvalidArgument("cannot write output file '" + path.string() + "'");
  body(out);
  std::cout << "wrote " << path.string() << "\n";
}

void require_known_estimator(const std::string& name) {
  const auto& names = estimator_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string known;
    for (const auto& n : names) {
      if (!known.empty()) known += ", ";
      known += n;
    }
    throw ConfigError("unknown estimator '" + name + "' (known: " + known +
                      ")");
  }
}

struct EstimateState {
  Config cfg;
  PanelMatrix panel;
  TreatmentMask mask;
  std::optional<CovariateTable> covariates;
  std::string estimator_name;
  std::uint64_t seed;
  RunStamp stamp;
  fs::path out;
};

EstimateState build_estimate_state(const CliContext& ctx) {
  Config cfg = Config::from_file(ctx.config_path);
  const std::uint64_t seed = resolve_seed(cfg, ctx);
  const Index t0 = cfg.get_int("mask.t0");
  PanelMatrix panel = preprocess_panel(
      load_configured_panel(cfg, seed), cfg, t0);
  TreatmentMask mask = TreatmentMask::from_unit_ids(
      panel, cfg.get_string_list("mask.treated"), t0);
  if (cfg.get_bool("preprocess.drop_zero_variance", false)) {
    auto [kept, dropped] = drop_zero_variance_pre(panel, mask);
    for (const auto& id : dropped)
      std::cerr << "note: dropped zero-variance unit '" << id << "'\n";
    panel = std::move(kept);
    mask = TreatmentMask::from_unit_ids(
        panel, cfg.get_string_list("mask.treated"), t0);
  }
  std::optional<CovariateTable> covariates;
  if (cfg.has("covariates.path")) {
    const std::string path = cfg.get_string("covariates.path");
    if (!fs::exists(path))
      throw ConfigError("covariate file '" + path + "' does not exist");
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read covariate file '" + path + "'");
    covariates = load_covariates(in, panel);
  }
  const std::string name = cfg.get_string("estimator.name");
  require_known_estimator(name);
  RunStamp stamp{cfg.hash_hex(), seed};
  return EstimateState{std::move(cfg),  std::move(panel), std::move(mask),
                       std::move(covariates), name, seed, std::move(stamp),
                       prepare_out_dir(ctx)};
}

Estimator build_estimator(const EstimateState& st, bool placebo_mode) {
  EstimatorOptions opts = options_from_config(st.cfg, placebo_mode);
  if (st.covariates) {
    std::vector<bool> labels(static_cast<std::size_t>(st.panel.n_units()),
                             false);
    for (Index i : st.mask.treated_indices())
      labels[static_cast<std::size_t>(i)] = true;
    const Eigen::VectorXd w = fit_logistic(*st.covariates, labels);
    opts.scores = predict_scores(w, *st.covariates, st.panel.n_periods());
  }
  return make_estimator(st.estimator_name, opts);
}

int cmd_estimate(const CliContext& ctx) {
  std::optional<EstimateState> st;
  try {
    st.emplace(build_estimate_state(ctx));
  } catch (const std::exception& e) {
    std::cerr << "cfpanel: " << e.what() << "\n";
    return 1;
  }
  try {
    Estimator est = build_estimator(*st, false);
    EffectEstimate eff =
        est.fit(st->panel, st->mask, derive_seed(st->seed, "estimate"));
    write_file(st->out / "effects.csv", [&](std::ostream& o) {
      write_effects_csv(o, st->panel, st->mask, eff, st->stamp);
    });
    write_file(st->out / "phi_bar.csv", [&](std::ostream& o) {
      write_phi_bar_csv(o, st->panel, st->mask, eff, st->stamp);
    });
    write_file(st->out / "diagnostics.json", [&](std::ostream& o) {
      write_diagnostics_json(o, eff, st->panel, st->mask, st->stamp);
    });
  } catch (const std::exception& e) {
    std::cerr << "cfpanel: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int cmd_infer(const CliContext& ctx) {
  std::optional<EstimateState> st;
  InferenceSettings settings;
  try {
    st.emplace(build_estimate_state(ctx));
    settings.alpha = st->cfg.get_double("inference.alpha", settings.alpha);
    if (!(settings.alpha > 0.0 && settings.alpha < 1.0))
      throw ConfigError("inference.alpha must lie in (0, 1)");
    settings.cap = st->cfg.get_int("inference.cap", settings.cap);
    if (settings.cap < 1) throw ConfigError("inference.cap must be positive");
    settings.n_delta = static_cast<int>(
        st->cfg.get_int("inference.n_delta", settings.n_delta));
    if (settings.n_delta < 2)
      throw ConfigError("inference.n_delta must be at least 2");
    settings.two_sided = st->cfg.get_bool("inference.two_sided", true);
    settings.plus_one = st->cfg.get_bool("inference.plus_one", false);
  } catch (const std::exception& e) {
    std::cerr << "cfpanel: " << e.what() << "\n";
    return 1;
  }
  try {
    Estimator est = build_estimator(*st, false);
    auto [report, dist] = run_inference(est, st->panel, st->mask, settings,
                                        derive_seed(st->seed, "infer"));
    for (const auto& w : dist.warnings)
      std::cerr << "warning: " << w << "\n";
    PanelMatrix controls = restrict_to_controls(st->panel, st->mask);
    write_file(st->out / "inference.json", [&](std::ostream& o) {
      write_inference_json(o, report, st->stamp);
    });
    write_file(st->out / "placebo_mu.csv", [&](std::ostream& o) {
      write_mu_csv(o, dist, controls, st->mask, st->stamp);
    });
  } catch (const std::exception& e) {
    std::cerr << "cfpanel: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

struct PlaceboState {
  Config cfg;
  PanelMatrix panel;
  PlaceboConfig suite;
  RunStamp stamp;
  fs::path out;
};

PlaceboState build_placebo_state(const CliContext& ctx) {
  Config cfg = Config::from_file(ctx.config_path);
  const std::uint64_t seed = resolve_seed(cfg, ctx);
  PanelMatrix panel =
      preprocess_panel(load_configured_panel(cfg, seed), cfg, 0);

  PlaceboConfig suite;
  EstimatorOptions opts = options_from_config(cfg, true);
  for (const auto& name : cfg.get_string_list("placebo.estimators")) {
    require_known_estimator(name);
    suite.estimators.push_back(make_estimator(name, opts));
  }
  if (cfg.has("placebo.ratios"))
    suite.t0_ratios = cfg.get_double_list("placebo.ratios");
  for (double r : suite.t0_ratios)
    if (!(r > 0.0 && r < 1.0))
      throw ConfigError("placebo.ratios entries must lie in (0, 1)");
  if (cfg.has("placebo.subsample")) {
    for (const auto& tok : cfg.get_string_list("placebo.subsample")) {
      const auto x = tok.find('x');
      if (x == std::string::npos || x == 0 || x + 1 >= tok.size())
        throw ConfigError("placebo.subsample entries look like NxT, got '" +
                          tok + "'");
      try {
        suite.subsample.emplace_back(std::stoll(tok.substr(0, x)),
                                     std::stoll(tok.substr(x + 1)));
      } catch (const std::exception&) {
        throw ConfigError("placebo.subsample entries look like NxT, got '" +
                          tok + "'");
      }
    }
  }
  if (suite.t0_ratios.empty() && suite.subsample.empty())
    throw ConfigError(
        "placebo runs need placebo.ratios or placebo.subsample");
  suite.n_trials = static_cast<int>(cfg.get_int("placebo.trials", 10));
  if (suite.n_trials < 1)
    throw ConfigError("placebo.trials must be positive");
  suite.seed = derive_seed(seed, "placebo");
  RunStamp stamp{cfg.hash_hex(), seed};
  return PlaceboState{std::move(cfg), std::move(panel), std::move(suite),
                      std::move(stamp), prepare_out_dir(ctx)};
}

int cmd_placebo(const CliContext& ctx) {
  std::optional<PlaceboState> st;
  try {
    st.emplace(build_placebo_state(ctx));
  } catch (const std::exception& e) {
    std::cerr << "cfpanel: " << e.what() << "\n";
    return 1;
  }
  try {
    BenchmarkResult res = run_placebo_suite(st->panel, st->suite);
    for (const auto& c : res.cells)
      if (c.failed)
        std::cerr << "warning: " << c.estimator << " " << c.setting
                  << " trial " << c.trial << " failed: " << c.error << "\n";
    write_file(st->out / "results.csv", [&](std::ostream& o) {
      write_results_csv(o, res.cells, st->stamp);
    });
    write_file(st->out / "aggregates.csv", [&](std::ostream& o) {
      write_aggregates_csv(o, res.aggregates, st->stamp);
    });
  } catch (const std::exception& e) {
    std::cerr << "cfpanel: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int cmd_ingest(const CliContext& ctx) {
  std::optional<Config> cfg;
  std::optional<PanelMatrix> panel;
  std::optional<RunStamp> stamp;
  fs::path out;
  try {
    cfg.emplace(Config::from_file(ctx.config_path));
    const std::uint64_t seed = resolve_seed(*cfg, ctx);
    const Index boundary = cfg->get_int("mask.t0", 0);
    panel.emplace(preprocess_panel(load_configured_panel(*cfg, seed), *cfg,
                                   boundary));
    stamp.emplace(RunStamp{cfg->hash_hex(), seed});
    out = prepare_out_dir(ctx);
  } catch (const std::exception& e) {
    std::cerr << "cfpanel: " << e.what() << "\n";
    return 1;
  }
  try {
    write_file(out / "panel_clean.csv", [&](std::ostream& o) {
      o << "# config_hash=" << stamp->config_hash << " seed=" << stamp->seed
        << "\n";
      save_panel(*panel, o);
    });
    write_file(out / "ingest.json", [&](std::ostream& o) {
      nlohmann::ordered_json j;
      j["config_hash"] = stamp->config_hash;
      j["seed"] = stamp->seed;
      j["n_units"] = panel->n_units();
      j["n_periods"] = panel->n_periods();
      j["has_missing"] = panel->has_missing();
      o << j.dump(2) << "\n";
    });
  } catch (const std::exception& e) {
    std::cerr << "cfpanel: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

void add_common_options(CLI::App* cmd, CliContext& ctx) {
  cmd->add_option("--config", ctx.config_path, "Run configuration file")
      ->required();
  cmd->add_option("--seed", ctx.seed_override,
                  "Master seed override (replaces the config value)");
  cmd->add_option("--out", ctx.out_dir, "Output directory (default: .)");
  cmd->add_option("--jobs", ctx.jobs,
                  "Worker count; results are identical for any value");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual prediction toolkit for panel data"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(0, 1);

  CliContext ctx;
  CLI::App* ingest =
      app.add_subcommand("ingest", "Validate and preprocess a panel CSV");
  CLI::App* estimate = app.add_subcommand(
      "estimate", "Fit one estimator and export per-unit effects");
  CLI::App* placebo = app.add_subcommand(
      "placebo", "Benchmark estimators on pseudo-treatment draws");
  CLI::App* infer = app.add_subcommand(
      "infer", "Randomization p-values and confidence interval");
  for (CLI::App* cmd : {ingest, estimate, placebo, infer})
    add_common_options(cmd, ctx);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (ingest->parsed()) return cmd_ingest(ctx);
  if (estimate->parsed()) return cmd_estimate(ctx);
  if (placebo->parsed()) return cmd_placebo(ctx);
  if (infer->parsed()) return cmd_infer(ctx);
  std::cout << app.help();
  return 1;
}
