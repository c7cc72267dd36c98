// worldscale: ingest -> prompts -> run -> parse -> validate -> calibrate -> report.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 provider/transport error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "worldscale/errors.hpp"
#include "worldscale/log.hpp"
#include "worldscale/pipeline.hpp"

namespace ws = worldscale;
namespace wp = worldscale::pipeline;
namespace fs = std::filesystem;

namespace {

struct Global {
  std::optional<std::uint64_t> seed;
  fs::path out = "out";
  fs::path manifest;
  bool quiet = false;
};

struct SelectionFlags {
  std::string pool;
  std::string target = "reference";
  std::vector<std::string> focal;
  std::vector<std::string> items;
  std::optional<std::size_t> max_tasks;
  std::optional<int> variants;  // first N variants
  std::vector<int> variant_ids;
  std::string templates;

  void add(CLI::App* cmd) {
    cmd->add_option("--pool", pool, "Canonical pool directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--target", target, "reference or world")
        ->check(CLI::IsMember({"reference", "world", "REFERENCE", "WORLD"}));
    cmd->add_option("--focal", focal, "Restrict to these frame ids")->delimiter(',');
    cmd->add_option("--items", items, "Restrict to these item ids")->delimiter(',');
    cmd->add_option("--max-tasks", max_tasks, "Keep at most N tasks");
    auto* n = cmd->add_option("--variants", variants, "Use the first N of the 27 variants")->check(CLI::Range(1, 27));
    cmd->add_option("--variant-ids", variant_ids, "Explicit variant ids (0-26)")
        ->delimiter(',')
        ->check(CLI::Range(0, 26))
        ->excludes(n);
    cmd->add_option("--templates", templates, "Template directory overriding the builtins")
        ->check(CLI::ExistingDirectory);
  }

  wp::TaskSelection selection() const {
    return {wp::parse_target(target), focal, items, max_tasks};
  }

  std::vector<int> variant_list() const {
    if (!variant_ids.empty()) return variant_ids;
    std::vector<int> v;
    if (variants) {
      for (int i = 0; i < *variants; ++i) v.push_back(i);
    }
    return v;
  }

  std::optional<fs::path> template_dir() const {
    return templates.empty() ? std::nullopt : std::optional<fs::path>(templates);
  }
};

ws::CovariateSpec parse_subgroup(const std::string& text) {
  ws::CovariateSpec spec;
  const auto eq = text.find('=');
  spec.name = text.substr(0, eq);
  if (eq != std::string::npos) {
    std::size_t start = eq + 1;
    while (start <= text.size()) {
      auto comma = text.find(',', start);
      if (comma == std::string::npos) comma = text.size();
      if (comma > start) spec.values.push_back(text.substr(start, comma - start));
      start = comma + 1;
    }
  }
  if (spec.name.empty()) throw ws::UsageError(fmt::format("bad --subgroup '{}'", text));
  return spec;
}

ws::SmoothingPolicy parse_smoothing(const std::string& text) {
  if (text == "none") return {ws::SmoothingPolicy::Kind::NONE, 0.0};
  if (text == "half-over-n") return {ws::SmoothingPolicy::Kind::HALF_OVER_N, 0.0};
  if (text.rfind("fixed:", 0) == 0) {
    double p = 0.0;
    try {
      p = std::stod(text.substr(6));
    } catch (const std::exception&) {
      throw ws::UsageError(fmt::format("bad smoothing '{}'", text));
    }
    if (!(p > 0.0 && p < 1.0)) throw ws::UsageError("fixed smoothing floor must lie in (0, 1)");
    return {ws::SmoothingPolicy::Kind::FIXED, p};
  }
  throw ws::UsageError(fmt::format("smoothing must be none, half-over-n or fixed:<p>, got '{}'", text));
}

int parse_cluster_k(const std::string& text) {
  const std::string digits = text.rfind("k=", 0) == 0 ? text.substr(2) : text;
  try {
    std::size_t used = 0;
    const int k = std::stoi(digits, &used);
    if (used == digits.size() && k >= 1) return k;
  } catch (const std::exception&) {
  }
  throw ws::UsageError(fmt::format("--cluster expects k=<n> or <n>, got '{}'", text));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"worldscale: estimate world-population success rates and calibrate difficulty scales"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file with option defaults");
  Global g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Random seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--manifest", g.manifest, "Explicit manifest path");
  app.add_flag("-q,--quiet", g.quiet, "Only warnings and errors on stderr");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic pool with known world rates");
  std::string synth_spec;
  double true_base = 10.0;
  std::size_t items_per_level = 20, respondents = 1000;
  std::string noise = "none";
  std::vector<int> levels;
  synth->add_option("--spec", synth_spec, "JSON generator spec")->check(CLI::ExistingFile);
  synth->add_option("--true-base", true_base, "Base for every default group");
  synth->add_option("--items-per-level", items_per_level);
  synth->add_option("--respondents", respondents);
  synth->add_option("--noise", noise)->check(CLI::IsMember({"none", "binomial"}));
  synth->add_option("--levels", levels)->delimiter(',');

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Load a dataset into a canonical pool");
  std::string adapter = "canonical";
  std::vector<std::string> in_paths;
  std::size_t min_attempts = 30;
  bool keep_visual = false, keep_ambiguous = false;
  std::vector<std::string> subgroups;
  ingest->add_option("--adapter", adapter, "canonical, icar, ukbiobank, pisa, timss, reliabilitybench");
  ingest->add_option("--in", in_paths, "Input directory")->required();
  ingest->add_option("--min-attempts", min_attempts, "Drop items with fewer attempts");
  ingest->add_flag("--keep-visual", keep_visual, "Keep items that need visual input");
  ingest->add_flag("--keep-ambiguous", keep_ambiguous, "Keep items whose key matches no or several options");
  ingest->add_option("--subgroup", subgroups, "Covariate partition: name or name=v1,v2 (repeatable)");

  // prompts
  auto* prompts = app.add_subcommand("prompts", "Render prompts without querying a model");
  SelectionFlags prompt_sel;
  prompt_sel.add(prompts);
  std::string export_templates;
  prompts->add_option("--export-templates", export_templates, "Write the builtin templates to a directory");

  // run
  auto* run = app.add_subcommand("run", "Query models for every (task, variant) slot");
  SelectionFlags run_sel;
  run_sel.add(run);
  std::string provider, providers_file, mock_model = "oracle";
  double oracle_sigma = 0.0;
  int threads = 8, max_attempts = 4;
  std::optional<std::size_t> slot_limit, subsample;
  run->add_option("--provider", provider, "'mock' for the offline oracle");
  run->add_option("--providers", providers_file, "Provider config JSON (credentials via env vars)")
      ->check(CLI::ExistingFile);
  run->add_option("--mock-model", mock_model, "Model name recorded for mock results");
  run->add_option("--oracle-sigma", oracle_sigma, "Logit noise of the mock oracle");
  run->add_option("--threads", threads)->check(CLI::PositiveNumber);
  run->add_option("--max-attempts", max_attempts, "Attempts per slot before giving up")->check(CLI::PositiveNumber);
  run->add_option("--slot-limit", slot_limit, "Dispatch only the first N slots");
  run->add_option("--subsample", subsample, "Stratified subsample of N tasks by item domain");

  // parse
  auto* parse = app.add_subcommand("parse", "Re-parse cached responses of a run");
  std::string run_dir;
  parse->add_option("--run", run_dir, "Run output directory")->required()->check(CLI::ExistingDirectory);

  // validate
  auto* validate = app.add_subcommand("validate", "Compare predictions with observed rates");
  std::string parsed_csv, pool_dir, pairing = "per-slot", cluster;
  std::vector<std::string> models;
  validate->add_option("--parsed", parsed_csv)->required()->check(CLI::ExistingFile);
  validate->add_option("--pool", pool_dir)->required()->check(CLI::ExistingDirectory);
  validate->add_option("--pairing", pairing)->check(CLI::IsMember({"per-slot", "item-averaged"}));
  validate->add_option("--cluster", cluster, "k-means over groups: k=<n>");
  validate->add_option("--models", models)->delimiter(',');

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "Fit per-group scale bases from world estimates");
  std::string cal_parsed, cal_pool, grouping, convention = "offset", weighting = "unweighted",
                                              smoothing = "half-over-n", cal_model, published_table;
  double convention_base = 10.0, high = 10.0, invariant_upper = 3.0, tolerance = 0.005;
  calibrate->add_option("--parsed", cal_parsed)->check(CLI::ExistingFile);
  calibrate->add_option("--pool", cal_pool)->check(CLI::ExistingDirectory);
  calibrate->add_option("--grouping", grouping, "Dimension grouping JSON")->check(CLI::ExistingFile);
  calibrate->add_option("--convention", convention)->check(CLI::IsMember({"offset", "plain"}));
  calibrate->add_option("--convention-base", convention_base);
  calibrate->add_option("--weighting", weighting)->check(CLI::IsMember({"unweighted", "count-weighted"}));
  calibrate->add_option("--smoothing", smoothing, "none, half-over-n or fixed:<p>");
  calibrate->add_option("--high", high, "Base above which a group is HIGH");
  calibrate->add_option("--invariant-upper", invariant_upper, "Base at or below which a group is INVARIANT");
  calibrate->add_option("--model", cal_model, "Use only this model's estimates");
  calibrate->add_option("--published-table", published_table, "Check a published (slope, base) table instead")
      ->check(CLI::ExistingFile);
  calibrate->add_option("--tolerance", tolerance, "Fixture tolerance on |log10 B - m|");

  // report
  auto* report = app.add_subcommand("report", "Collate stage outputs into report.txt");
  std::vector<std::string> from;
  report->add_option("--from", from, "Stage output directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed_value;
  if (g.quiet) ws::log::set_min_level(ws::log::Level::Warning);

  try {
    if (*synth) {
      ws::SynthSpec spec;
      if (!synth_spec.empty()) {
        spec = ws::load_synth_spec(synth_spec);
      } else {
        for (const auto& grp : ws::default_dimension_groups()) spec.groups.push_back({grp, true_base});
        spec.items_per_level = items_per_level;
        spec.respondents_n = respondents;
      }
      if (!synth->get_option("--items-per-level")->empty()) spec.items_per_level = items_per_level;
      if (!synth->get_option("--respondents")->empty()) spec.respondents_n = respondents;
      if (!synth->get_option("--noise")->empty() || synth_spec.empty()) {
        spec.noise = noise == "binomial" ? ws::NoiseModel::BINOMIAL : ws::NoiseModel::NONE;
      }
      if (!levels.empty()) spec.levels = levels;
      if (g.seed) spec.seed = *g.seed;
      auto outcome = wp::run_synth(spec, g.out, g.manifest);
      std::cout << fmt::format("synth: {} items written to {}\n", outcome.synth.pool.items().size(), g.out.string());
    } else if (*ingest) {
      wp::IngestOptions options;
      options.source.adapter = adapter;
      for (const auto& p : in_paths) {
        if (!fs::exists(p)) throw ws::DataError(fmt::format("{}: no such file or directory", p));
        options.source.paths.emplace_back(p);
      }
      options.filter.min_attempts = min_attempts;
      options.filter.exclude_visual = !keep_visual;
      options.filter.exclude_ambiguous_keys = !keep_ambiguous;
      for (const auto& s : subgroups) options.subgroups.push_back(parse_subgroup(s));
      auto outcome = wp::run_ingest(options, g.out, g.manifest);
      std::cout << fmt::format("ingest: {} items kept, {} excluded, pool written to {}\n",
                               outcome.pool.items().size(), outcome.removed.size(), g.out.string());
    } else if (*prompts) {
      if (!export_templates.empty()) {
        auto set = prompt_sel.template_dir() ? ws::TemplateSet::load(*prompt_sel.template_dir()) : ws::TemplateSet();
        set.export_to(export_templates);
        std::cout << fmt::format("prompts: {} templates exported to {}\n", set.all().size(), export_templates);
      }
      wp::PromptOptions options{prompt_sel.selection(), prompt_sel.variant_list(), prompt_sel.template_dir()};
      const auto n = wp::run_prompts(prompt_sel.pool, options, g.out, g.manifest);
      std::cout << fmt::format("prompts: {} prompts written to {}\n", n, (g.out / "prompts.jsonl").string());
    } else if (*run) {
      wp::RunOptions options;
      options.tasks = run_sel.selection();
      options.variants = run_sel.variant_list();
      options.template_dir = run_sel.template_dir();
      if (provider == "mock") {
        options.provider.kind = wp::ProviderSetup::Kind::MOCK;
      } else if (!providers_file.empty() && provider.empty()) {
        options.provider.kind = wp::ProviderSetup::Kind::CONFIG;
        options.provider.config_path = providers_file;
      } else if (!provider.empty()) {
        throw ws::UsageError(fmt::format("unknown --provider '{}'; use 'mock' or --providers <config>", provider));
      } else {
        throw ws::UsageError("no provider configured: pass --provider mock or --providers <config>");
      }
      options.provider.mock_model = mock_model;
      options.provider.oracle_sigma = oracle_sigma;
      options.provider.oracle_seed = g.seed.value_or(0);
      options.provider.retry.max_attempts = max_attempts;
      options.threads = threads;
      options.slot_limit = slot_limit;
      options.subsample = subsample;
      options.seed = g.seed.value_or(0);
      auto outcome = wp::run_extrapolation(run_sel.pool, options, g.out, g.manifest);
      const auto& b = outcome.batch;
      std::cout << fmt::format(
          "run: {} slots ({} tasks x {} variants x models): {} ok, {} failed, {} pending; {} cache hits, {} provider "
          "calls\n",
          b.slots.size(), outcome.n_tasks, outcome.n_jobs / std::max<std::size_t>(outcome.n_tasks, 1), b.ok, b.failed,
          b.pending, b.cache_hits, b.provider_calls);
      if (outcome.transport_failures) {
        ws::log::error("some slots failed after all retries; rerun to resume from the cache");
        return 3;
      }
    } else if (*parse) {
      const auto results = wp::run_reparse(run_dir, g.out, g.manifest);
      std::cout << fmt::format("parse: {} rows written to {}\n", results.size(), (g.out / "parsed.csv").string());
    } else if (*validate) {
      wp::ValidateOptions options;
      options.pairing = pairing == "per-slot" ? ws::PairingMode::PER_SLOT : ws::PairingMode::ITEM_AVERAGED;
      if (!cluster.empty()) options.cluster_k = parse_cluster_k(cluster);
      options.seed = g.seed.value_or(0);
      options.models = models;
      auto outcome = wp::run_validate(parsed_csv, pool_dir, options, g.out, g.manifest);
      std::cout << ws::format_model_table(outcome.models);
    } else if (*calibrate) {
      ws::RegimeThresholds thresholds{high, invariant_upper};
      if (!published_table.empty()) {
        const bool ok = wp::run_fixture_check(published_table, tolerance, thresholds, g.out, g.manifest);
        std::cout << fmt::format("calibrate: fixture check {} ({})\n", ok ? "passed" : "FAILED",
                                 (g.out / "fixture_check.csv").string());
        return ok ? 0 : 2;
      }
      if (cal_parsed.empty() || cal_pool.empty()) throw ws::UsageError("calibrate needs --parsed and --pool");
      wp::CalibrateOptions options;
      options.calibration.convention =
          ws::LevelConvention(convention == "offset" ? ws::LevelKind::OFFSET : ws::LevelKind::PLAIN, convention_base);
      options.calibration.weighting =
          weighting == "unweighted" ? ws::MeansWeighting::UNWEIGHTED : ws::MeansWeighting::COUNT_WEIGHTED;
      options.calibration.thresholds = thresholds;
      options.calibration.smoothing = parse_smoothing(smoothing);
      if (!grouping.empty()) options.grouping = grouping;
      if (!cal_model.empty()) options.model = cal_model;
      auto outcome = wp::run_calibrate(cal_parsed, cal_pool, options, g.out, g.manifest);
      for (const auto& grp : outcome.groups) {
        std::cout << fmt::format("{}: base {} ({})\n", grp.group.name, ws::format_metric(grp.fit.base(), 3),
                                 ws::to_string(grp.fit.regime));
      }
    } else if (*report) {
      std::vector<fs::path> dirs(from.begin(), from.end());
      const auto path = wp::run_report(dirs, g.out, g.manifest);
      std::cout << fmt::format("report: {}\n", path.string());
    }
  } catch (const ws::UsageError& e) {
    ws::log::error(e.what());
    return 1;
  } catch (const ws::TransportError& e) {
    ws::log::error(e.what());
    return 3;
  } catch (const ws::RefusalError& e) {
    ws::log::error(e.what());
    return 3;
  } catch (const ws::Error& e) {
    ws::log::error(e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    ws::log::error(e.what());
    return 2;
  } catch (const std::exception& e) {
    ws::log::error(fmt::format("unexpected error: {}", e.what()));
    return 2;
  }
  return 0;
}
