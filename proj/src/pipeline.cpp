#include "worldscale/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "worldscale/csv.hpp"
#include "worldscale/errors.hpp"
#include "worldscale/log.hpp"
#include "worldscale/manifest.hpp"

namespace worldscale::pipeline {
namespace {

using json = nlohmann::json;

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string num(double v) { return fmt::format("{}", v); }

/// Digests every pool file except provenance bookkeeping.
void add_pool_digests(std::map<std::string, std::string>& into, const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(fmt::format("{}: not a directory", dir.string()));
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name == "artifacts.jsonl") continue;
    files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) add_digests(into, f);
}

fs::path finish(RunManifest& m, const fs::path& out, const std::vector<std::string>& outputs,
                const fs::path& explicit_path) {
  for (const auto& name : outputs) add_digests(m.outputs, out / name);
  m.finished_at = utc_now();
  return write_manifest(m, out, explicit_path);
}

RunManifest start(std::string stage, json config) {
  RunManifest m;
  m.stage = std::move(stage);
  m.config = std::move(config);
  m.started_at = utc_now();
  return m;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return v.empty() || std::find(v.begin(), v.end(), s) != v.end();
}

json selection_json(const TaskSelection& s) {
  json j = {{"target", to_string(s.target)}, {"focal_ids", s.focal_ids}, {"item_ids", s.item_ids}};
  if (s.max_tasks) j["max_tasks"] = *s.max_tasks;
  return j;
}

std::vector<VariantSpec> select_variants(const std::vector<int>& ids) {
  if (ids.empty()) return enumerate_variants();
  std::vector<VariantSpec> out;
  for (int id : ids) out.push_back(decode_variant(id));
  return out;
}

TemplateSet load_templates(const std::optional<fs::path>& dir) {
  return dir ? TemplateSet::load(*dir) : TemplateSet();
}

bool is_world_target(const ItemPool& pool, const std::string& target_id) {
  if (const auto* f = pool.find_frame(target_id)) return f->kind == FrameKind::WORLD;
  return target_id == kWorldFrameId;
}

std::optional<std::map<std::string, double>> pool_world_truth(const fs::path& pool_dir) {
  const auto path = pool_dir / "truth.csv";
  if (!fs::exists(path)) return std::nullopt;
  return read_world_truth(path);
}

void write_rationales(const fs::path& path, std::span<const ExtrapolationResult> results) {
  auto out = open_out(path);
  for (const auto& r : results) {
    out << json{{"task_id", r.task_id},
                {"variant_id", r.variant_id},
                {"model", r.model_name},
                {"parse_status", to_string(r.status)},
                {"rationale", r.rationale}}
               .dump()
        << '\n';
  }
}

ExtrapolationResult parse_response(const RawResponse& raw) {
  ExtrapolationResult r;
  r.task_id = raw.task_id;
  r.variant_id = raw.variant_id;
  r.model_name = raw.model_name;
  const auto parsed = extract_percentage(raw.response_text);
  r.status = parsed.status;
  r.predicted_p = parsed.probability;
  r.rationale = split_rationale(raw.response_text).rationale;
  return r;
}

std::vector<ExtrapolationResult> filter_models(std::vector<ExtrapolationResult> results,
                                               const std::vector<std::string>& models) {
  if (models.empty()) return results;
  std::erase_if(results, [&](const ExtrapolationResult& r) { return !contains(models, r.model_name); });
  return results;
}

std::vector<std::string> metric_fields(const MetricSet& m) {
  return {std::to_string(m.n), format_metric(m.mae), format_metric(m.rmse), format_metric(m.pearson_r),
          format_metric(m.spearman_rho)};
}

std::string regime_label(Regime r) {
  switch (r) {
    case Regime::HIGH: return "High";
    case Regime::STANDARD: return "Stand.";
    case Regime::INVARIANT: return "Inv.";
    case Regime::UNCALIBRATABLE: return "Uncal.";
  }
  return "?";
}

void write_calibration_svg(const fs::path& path, std::span<const GroupCalibration> groups) {
  constexpr int kW = 260, kH = 200, kCols = 3, kPad = 30;
  const int rows = static_cast<int>((groups.size() + kCols - 1) / kCols);
  double ymax = 1.0;
  for (const auto& g : groups) {
    for (const auto& p : g.points) ymax = std::max(ymax, p.empirical);
  }
  ymax = std::ceil(ymax);
  auto out = open_out(path);
  out << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">)",
                     kW * kCols, kH * std::max(rows, 1))
      << '\n';
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    const double ox = static_cast<double>(i % kCols) * kW;
    const double oy = static_cast<double>(i / kCols) * kH;
    const double pw = kW - 2 * kPad, ph = kH - 2 * kPad;
    auto sx = [&](double x) { return ox + kPad + (x - 0.5) / 5.0 * pw; };
    auto sy = [&](double y) { return oy + kPad + ph - y / ymax * ph; };
    out << fmt::format(R"(<g><rect x="{:.1f}" y="{:.1f}" width="{:.1f}" height="{:.1f}" fill="none" stroke="#999"/>)",
                       ox + kPad, oy + kPad, pw, ph)
        << '\n';
    out << fmt::format(R"(<text x="{:.1f}" y="{:.1f}">{}</text>)", ox + kPad, oy + kPad - 8, g.group.name) << '\n';
    for (const auto& p : g.points) {
      out << fmt::format(R"(<circle cx="{:.2f}" cy="{:.2f}" r="2" fill="#4a7fb5" fill-opacity="0.5"/>)",
                         sx(p.level), sy(p.empirical))
          << '\n';
    }
    for (const auto& m : g.means) {
      const double cx = sx(m.level), cy = sy(m.mean_emp_level);
      std::string pts;
      for (int k = 0; k < 10; ++k) {
        const double r = k % 2 == 0 ? 6.0 : 2.5;
        const double a = -std::numbers::pi / 2 + k * std::numbers::pi / 5.0;
        pts += fmt::format("{:.2f},{:.2f} ", cx + r * std::cos(a), cy + r * std::sin(a));
      }
      pts.pop_back();
      out << fmt::format(R"(<polygon points="{}" fill="#d62728"/>)", pts) << '\n';
    }
    if (g.fit.slope) {
      out << fmt::format(R"(<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="#333"/>)", sx(1),
                         sy(g.fit.intercept + *g.fit.slope), sx(5), sy(g.fit.intercept + 5 * *g.fit.slope))
          << '\n';
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
}

}  // namespace

Target parse_target(std::string_view text) {
  if (text == "reference" || text == "REFERENCE") return Target::REFERENCE;
  if (text == "world" || text == "WORLD") return Target::WORLD;
  throw UsageError(fmt::format("target must be 'reference' or 'world', got '{}'", text));
}

std::string_view to_string(Target t) { return t == Target::WORLD ? "world" : "reference"; }

std::vector<ExtrapolationTask> build_tasks(const ItemPool& pool, const TaskSelection& selection) {
  for (const auto& id : selection.item_ids) {
    if (!pool.find_item(id)) throw TaskError(fmt::format("unknown item '{}'", id));
  }
  const FrameKind focal_kind = selection.target == Target::WORLD ? FrameKind::REFERENCE : FrameKind::FOCAL;
  for (const auto& id : selection.focal_ids) {
    const auto* f = pool.find_frame(id);
    if (!f) throw TaskError(fmt::format("unknown frame '{}'", id));
    if (f->kind != focal_kind) {
      throw TaskError(fmt::format("frame '{}' is {}, expected {} for a {} target", id, to_string(f->kind),
                                  to_string(focal_kind), to_string(selection.target)));
    }
  }
  std::string world_id(kWorldFrameId);
  if (auto worlds = pool.frames_of_kind(FrameKind::WORLD); !worlds.empty()) world_id = worlds.front()->frame_id;

  std::vector<ExtrapolationTask> tasks;
  for (const auto& item : pool.items()) {
    if (!contains(selection.item_ids, item.item_id)) continue;
    for (const auto* frame : pool.frames_of_kind(focal_kind)) {
      if (!contains(selection.focal_ids, frame->frame_id)) continue;
      if (!pool.find_rate(item.item_id, frame->frame_id)) continue;
      const std::string& target = selection.target == Target::WORLD ? world_id : frame->reference_id;
      if (target.empty()) {
        throw TaskError(fmt::format("focal frame '{}' has no reference frame", frame->frame_id));
      }
      tasks.push_back(make_task(pool, item.item_id, frame->frame_id, target));
      if (selection.max_tasks && tasks.size() >= *selection.max_tasks) return tasks;
    }
  }
  return tasks;
}

ItemPool load_pool_dir(const fs::path& dir) { return load_item_pool({"canonical", {dir}, false}); }

TaskKey split_task_id(const std::string& task_id) {
  const auto a = task_id.find('|');
  const auto b = a == std::string::npos ? a : task_id.find('|', a + 1);
  if (b == std::string::npos || task_id.find('|', b + 1) != std::string::npos) {
    throw DataError(fmt::format("malformed task id '{}'", task_id));
  }
  return {task_id.substr(0, a), task_id.substr(a + 1, b - a - 1), task_id.substr(b + 1)};
}

// ---------------------------------------------------------------------------

SynthOutcome run_synth(const SynthSpec& spec, const fs::path& out, const fs::path& manifest) {
  json groups = json::array();
  for (const auto& g : spec.groups) {
    json dims = json::array();
    for (auto d : g.group.dimensions) dims.push_back(dimension_code(d));
    groups.push_back({{"name", g.group.name}, {"dimensions", dims}, {"true_base", g.true_base}});
  }
  auto m = start("synth", {{"groups", groups},
                           {"items_per_level", spec.items_per_level},
                           {"levels", spec.levels},
                           {"respondents_n", spec.respondents_n},
                           {"seed", spec.seed},
                           {"noise", spec.noise == NoiseModel::BINOMIAL ? "binomial" : "none"}});
  SynthOutcome outcome{generate_pool(spec), {}};
  for (const auto& w : outcome.synth.warnings) log::warning(w);
  write_synth_pool(outcome.synth, out);
  std::vector<std::string> outputs = {"items.jsonl", "frames.jsonl", "rates.csv", "pool.json", "truth.csv"};
  if (fs::exists(out / "responses.csv")) outputs.push_back("responses.csv");
  outcome.manifest = finish(m, out, outputs, manifest);
  return outcome;
}

IngestOutcome run_ingest(const IngestOptions& options, const fs::path& out, const fs::path& manifest) {
  json subgroups = json::array();
  for (const auto& s : options.subgroups) subgroups.push_back({{"name", s.name}, {"values", s.values}});
  std::vector<std::string> paths;
  for (const auto& p : options.source.paths) paths.push_back(p.generic_string());
  auto m = start("ingest", {{"adapter", options.source.adapter},
                            {"paths", paths},
                            {"min_attempts", options.filter.min_attempts},
                            {"exclude_visual", options.filter.exclude_visual},
                            {"exclude_ambiguous_keys", options.filter.exclude_ambiguous_keys},
                            {"harmonization", kHarmonizationPolicy},
                            {"subgroups", subgroups}});
  for (const auto& p : options.source.paths) add_digests(m.inputs, p);

  IngestOutcome outcome;
  ItemPool pool = load_item_pool(options.source);
  if (!options.subgroups.empty()) {
    auto set = build_subgroups(pool, options.subgroups);
    outcome.warnings = set.warnings;
    pool = with_subgroups(pool, set);
  }
  for (const auto& w : outcome.warnings) log::warning(w);
  auto filtered = filter_items(pool, options.filter);
  outcome.pool = std::move(filtered.pool);
  outcome.removed = std::move(filtered.removed);
  write_pool(outcome.pool, out);
  {
    auto ex = open_out(out / "exclusions.csv");
    csv::write_row(ex, {"item_id", "reason"});
    for (const auto& e : outcome.removed) csv::write_row(ex, {e.item_id, e.reason});
  }
  std::vector<std::string> outputs = {"items.jsonl", "frames.jsonl", "rates.csv", "pool.json", "exclusions.csv"};
  if (fs::exists(out / "responses.csv")) outputs.push_back("responses.csv");
  outcome.manifest = finish(m, out, outputs, manifest);
  return outcome;
}

std::size_t run_prompts(const fs::path& pool_dir, const PromptOptions& options, const fs::path& out,
                        const fs::path& manifest) {
  const auto templates = load_templates(options.template_dir);
  auto m = start("prompts", {{"tasks", selection_json(options.tasks)},
                             {"variants", options.variants},
                             {"template_version", kTemplateVersion},
                             {"template_digest", templates.digest()}});
  add_pool_digests(m.inputs, pool_dir);

  const auto pool = load_pool_dir(pool_dir);
  const auto tasks = build_tasks(pool, options.tasks);
  const auto variants = select_variants(options.variants);
  std::size_t n = 0;
  {
    auto f = open_out(out / "prompts.jsonl");
    for (const auto& task : tasks) {
      for (const auto& v : variants) {
        f << json{{"task_id", task.task_id}, {"variant_id", v.variant_id},
                  {"prompt", assemble_prompt(task, v, templates)}}
                 .dump()
          << '\n';
        ++n;
      }
    }
  }
  finish(m, out, {"prompts.jsonl"}, manifest);
  return n;
}


RunOutcome run_extrapolation(const fs::path& pool_dir, const RunOptions& options, const fs::path& out,
                             const fs::path& manifest) {
  const auto templates = load_templates(options.template_dir);
  const auto& retry = options.provider.retry;
  auto m = start("run", {{"tasks", selection_json(options.tasks)},
                         {"variants", options.variants},
                         {"template_version", kTemplateVersion},
                         {"template_digest", templates.digest()},
                         {"threads", options.threads},
                         {"seed", options.seed},
                         {"retry",
                          {{"max_attempts", retry.max_attempts},
                           {"initial_backoff_ms", retry.initial_backoff.count()},
                           {"multiplier", retry.multiplier},
                           {"max_backoff_ms", retry.max_backoff.count()}}}});
  if (options.slot_limit) m.config["slot_limit"] = *options.slot_limit;
  if (options.subsample) m.config["subsample"] = *options.subsample;
  add_pool_digests(m.inputs, pool_dir);
  if (options.template_dir) add_digests(m.inputs, *options.template_dir);

  const auto pool = load_pool_dir(pool_dir);
  auto tasks = build_tasks(pool, options.tasks);
  if (options.subsample) {
    std::vector<std::string> strata;
    for (const auto& t : tasks) strata.push_back(t.item.domain);
    std::vector<ExtrapolationTask> kept;
    for (auto i : stratified_subsample(strata, *options.subsample, options.seed)) kept.push_back(tasks[i]);
    tasks = std::move(kept);
  }
  if (tasks.empty()) throw TaskError("no extrapolation tasks match the selection");
  const auto variants = select_variants(options.variants);

  fs::create_directories(out);
  ResponseCache cache(out / "cache.jsonl");
  LlmClient client(cache, retry);
  std::vector<ModelConfig> configs;
  if (options.provider.kind == ProviderSetup::Kind::MOCK) {
    std::shared_ptr<Provider> provider = options.provider.mock_override;
    if (!provider) {
      auto truth = std::make_shared<const OracleTruth>(
          pool, pool_world_truth(pool_dir).value_or(std::map<std::string, double>{}));
      provider = make_oracle_provider("mock", truth, {options.provider.oracle_sigma, options.provider.oracle_seed});
    }
    ModelConfig mc;
    mc.provider_id = provider->id();
    mc.model_name = options.provider.mock_model;
    validate_config(mc);
    client.register_provider(provider, {0.0, std::max(options.threads, 1)});
    configs.push_back(mc);
    m.config["provider"] = {{"kind", "mock"},
                            {"model", mc.model_name},
                            {"oracle_sigma", options.provider.oracle_sigma},
                            {"oracle_seed", options.provider.oracle_seed},
                            {"override", static_cast<bool>(options.provider.mock_override)}};
  } else {
    if (options.provider.config_path.empty()) throw UsageError("no provider configured");
    const auto http = load_provider_configs(options.provider.config_path);
    if (http.empty()) throw UsageError(fmt::format("{}: no providers configured", options.provider.config_path.string()));
    json providers = json::array();
    for (const auto& h : http) {
      client.register_provider(make_http_provider(h), {h.requests_per_minute, h.max_in_flight});
      configs.push_back(model_config(h));
      providers.push_back({{"id", h.provider_id},
                           {"endpoint", h.endpoint},
                           {"model", h.model_name},
                           {"auth_env", h.auth_env},
                           {"rpm", h.requests_per_minute},
                           {"max_in_flight", h.max_in_flight},
                           {"temperature", h.temperature},
                           {"max_output_tokens", h.max_output_tokens},
                           {"timeout_s", h.timeout_seconds}});
    }
    m.config["provider"] = {{"kind", "config"}, {"providers", providers}};
    add_digests(m.inputs, options.provider.config_path);
  }

  std::vector<BatchJob> jobs;
  for (const auto& task : tasks) {
    for (const auto& v : variants) jobs.push_back({task.task_id, v.variant_id, assemble_prompt(task, v, templates)});
  }

  BatchOptions batch_options;
  batch_options.threads = options.threads;
  batch_options.slot_limit = options.slot_limit;
  RunOutcome outcome;
  outcome.n_tasks = tasks.size();
  outcome.n_jobs = jobs.size();
  outcome.batch = client.run_batch(jobs, configs, batch_options);

  {
    auto f = open_out(out / "tasks.csv");
    csv::write_row(f, {"task_id", "item_id", "focal_id", "target_id", "domain"});
    for (const auto& t : tasks) {
      csv::write_row(f, {t.task_id, t.item.item_id, t.focal.frame_id, t.target.frame_id, t.item.domain});
    }
  }
  {
    auto f = open_out(out / "slots.csv");
    csv::write_row(f, {"slot", "task_id", "variant_id", "model", "provider", "status", "fingerprint", "attempts",
                       "from_cache", "refused", "error"});
    for (std::size_t i = 0; i < outcome.batch.slots.size(); ++i) {
      const auto& s = outcome.batch.slots[i];
      const auto& job = jobs[s.job];
      const auto& cfg = configs[s.config];
      csv::write_row(f, {std::to_string(i), job.task_id, std::to_string(job.variant_id), cfg.model_name,
                         cfg.provider_id, std::string(to_string(s.status)),
                         request_fingerprint(job.prompt, cfg),
                         s.response ? std::to_string(s.response->attempt_count) : "",
                         s.from_cache ? "1" : "0", s.refused ? "1" : "0", s.error});
      if (s.status == SlotStatus::OK && s.response) outcome.results.push_back(parse_response(*s.response));
      if (s.status == SlotStatus::FAILED && !s.refused) outcome.transport_failures = true;
    }
  }
  write_parsed(out / "parsed.csv", outcome.results);
  write_rationales(out / "rationales.jsonl", outcome.results);
  outcome.manifest =
      finish(m, out, {"tasks.csv", "slots.csv", "cache.jsonl", "parsed.csv", "rationales.jsonl"}, manifest);
  return outcome;
}

std::vector<ExtrapolationResult> run_reparse(const fs::path& run_dir, const fs::path& out, const fs::path& manifest) {
  const auto slots_path = run_dir / "slots.csv";
  const auto cache_path = run_dir / "cache.jsonl";
  if (!fs::exists(cache_path)) throw DataError(fmt::format("{}: no such file", cache_path.string()));
  auto m = start("parse", json::object());
  add_digests(m.inputs, slots_path);
  add_digests(m.inputs, cache_path);

  const auto table = csv::read(slots_path);
  const auto c_status = table.column("status");
  const auto c_fp = table.column("fingerprint");
  ResponseCache cache(cache_path);
  std::vector<ExtrapolationResult> results;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (row[c_status] != to_string(SlotStatus::OK)) continue;
    const auto hit = cache.lookup(row[c_fp]);
    if (!hit) throw DataError(fmt::format("{}: response {} missing from the cache", table.where(r), row[c_fp]));
    results.push_back(parse_response(*hit));
  }
  write_parsed(out / "parsed.csv", results);
  write_rationales(out / "rationales.jsonl", results);
  finish(m, out, {"parsed.csv", "rationales.jsonl"}, manifest);
  return results;
}

void write_parsed(const fs::path& path, std::span<const ExtrapolationResult> results) {
  auto out = open_out(path);
  csv::write_row(out, {"task_id", "variant_id", "model", "predicted_p", "parse_status"});
  for (const auto& r : results) {
    csv::write_row(out, {r.task_id, std::to_string(r.variant_id), r.model_name,
                         r.predicted_p ? num(*r.predicted_p) : "", std::string(to_string(r.status))});
  }
}

std::vector<ExtrapolationResult> read_parsed(const fs::path& path) {
  const auto table = csv::read(path);
  const auto c_task = table.column("task_id");
  const auto c_variant = table.column("variant_id");
  const auto c_model = table.column("model");
  const auto c_p = table.column("predicted_p");
  const auto c_status = table.column("parse_status");
  std::vector<ExtrapolationResult> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto where = table.where(r);
    ExtrapolationResult res;
    res.task_id = row[c_task];
    split_task_id(res.task_id);
    const auto variant = csv::to_count(row[c_variant], where);
    if (variant >= static_cast<std::size_t>(kVariantCount)) {
      throw DataError(fmt::format("{}: variant_id {} outside 0-26", where, variant));
    }
    res.variant_id = static_cast<int>(variant);
    res.model_name = row[c_model];
    try {
      res.status = parse_parse_status(row[c_status]);
    } catch (const Error& e) {
      throw DataError(fmt::format("{}: {}", where, e.what()));
    }
    if (res.status == ParseStatus::OK) {
      const double p = csv::to_double(row[c_p], where);
      if (!(p >= 0.0 && p <= 1.0)) throw DataError(fmt::format("{}: predicted_p {} outside [0, 1]", where, p));
      res.predicted_p = p;
    } else if (!row[c_p].empty()) {
      throw DataError(fmt::format("{}: predicted_p given for a {} row", where, row[c_status]));
    }
    out.push_back(std::move(res));
  }
  return out;
}

// ---------------------------------------------------------------------------

ValidateOutcome run_validate(const fs::path& parsed_csv, const fs::path& pool_dir, const ValidateOptions& options,
                             const fs::path& out, const fs::path& manifest) {
  auto m = start("validate", {{"pairing", options.pairing == PairingMode::PER_SLOT ? "per-slot" : "item-averaged"},
                              {"seed", options.seed},
                              {"models", options.models}});
  if (options.cluster_k) m.config["cluster_k"] = *options.cluster_k;
  add_digests(m.inputs, parsed_csv);
  add_pool_digests(m.inputs, pool_dir);

  const auto pool = load_pool_dir(pool_dir);
  const auto world_truth = pool_world_truth(pool_dir);
  auto all = filter_models(read_parsed(parsed_csv), options.models);

  ValidateOutcome outcome;
  TruthTable truth;
  std::vector<ExtrapolationResult> results;
  for (auto& r : all) {
    const auto key = split_task_id(r.task_id);
    if (!pool.find_item(key.item_id)) throw DataError(fmt::format("task '{}': unknown item", r.task_id));
    if (is_world_target(pool, key.target_id)) {
      const auto it = world_truth ? world_truth->find(key.item_id) : std::map<std::string, double>::const_iterator{};
      if (!world_truth || it == world_truth->cend()) {
        ++outcome.skipped_world;
        continue;
      }
      truth[r.task_id] = it->second;
    } else {
      const auto* rate = pool.find_rate(key.item_id, key.target_id);
      if (!rate) throw DataError(fmt::format("task '{}': no observed rate for the target frame", r.task_id));
      truth[r.task_id] = rate->p;
    }
    results.push_back(std::move(r));
  }
  if (outcome.skipped_world > 0) {
    log::warning(fmt::format("{} world-target rows have no ground truth and were skipped", outcome.skipped_world));
  }

  outcome.models = aggregate_by_model(results, truth, options.pairing);
  std::map<std::string, std::vector<ExtrapolationResult>> by_model;
  for (const auto& r : results) by_model[r.model_name].push_back(r);
  for (const auto& [model, rows] : by_model) {
    auto groups = aggregate_by(
        rows, truth, [](const ExtrapolationResult& r) { return split_task_id(r.task_id).focal_id; }, options.pairing);
    for (auto& [group, metrics] : groups) outcome.groups.push_back({model, group, metrics});
  }

  for (const auto* ref : pool.frames_of_kind(FrameKind::REFERENCE)) {
    std::vector<std::string> focal;
    for (const auto* f : pool.frames_of_kind(FrameKind::FOCAL)) {
      if (f->reference_id != ref->frame_id) continue;
      const bool shares = std::any_of(pool.items().begin(), pool.items().end(), [&](const Item& i) {
        return pool.find_rate(i.item_id, f->frame_id) && pool.find_rate(i.item_id, ref->frame_id);
      });
      if (shares) focal.push_back(f->frame_id);
    }
    if (focal.empty()) continue;
    auto table = baseline_metrics(pool, focal, ref->frame_id);
    for (auto& row : table.rows) outcome.baseline.rows.push_back(std::move(row));
  }
  outcome.baseline.summary = summarize_baseline(outcome.baseline.rows);

  std::vector<const GroupRow*> featured;
  for (const auto& g : outcome.groups) {
    if (!g.metrics.pearson_r) continue;
    outcome.features.push_back({g.group, g.metrics.mae, *g.metrics.pearson_r});
    featured.push_back(&g);
  }
  if (options.cluster_k) outcome.clusters = cluster_groups(outcome.features, *options.cluster_k, options.seed);

  fs::create_directories(out);
  {
    auto f = open_out(out / "validation.csv");
    write_model_table_csv(f, outcome.models);
  }
  {
    auto f = open_out(out / "groups.csv");
    csv::write_row(f, {"Model", "Group", "N", "MAE", "RMSE", "r_Pearson", "r_Spearman"});
    for (const auto& g : outcome.groups) {
      auto fields = metric_fields(g.metrics);
      fields.insert(fields.begin(), {g.model, g.group});
      csv::write_row(f, fields);
    }
  }
  {
    auto f = open_out(out / "baseline.csv");
    write_baseline_csv(f, outcome.baseline);
  }
  std::vector<std::string> outputs = {"validation.csv", "groups.csv", "baseline.csv"};
  if (outcome.clusters) {
    auto f = open_out(out / "clusters.csv");
    csv::write_row(f, {"Model", "Group", "MAE", "r_Pearson", "cluster"});
    for (std::size_t i = 0; i < featured.size(); ++i) {
      csv::write_row(f, {featured[i]->model, featured[i]->group, format_metric(outcome.features[i].mae),
                         format_metric(outcome.features[i].pearson_r),
                         std::to_string(outcome.clusters->assignments[i])});
    }
    outputs.push_back("clusters.csv");
  }

  std::string text = fmt::format("Validation ({} pairing)\n\n{}",
                                 options.pairing == PairingMode::PER_SLOT ? "per-slot" : "item-averaged",
                                 format_model_table(outcome.models));
  if (outcome.skipped_world > 0) text += fmt::format("\n{} world-target rows skipped (no ground truth)\n",
                                                     outcome.skipped_world);
  if (!outcome.groups.empty()) {
    text += fmt::format("\nPer group\n{:<20} {:<24} {:>6} {:>8} {:>8} {:>8} {:>8}\n", "Model", "Group", "N", "MAE",
                        "RMSE", "r", "rho");
    for (const auto& g : outcome.groups) {
      text += fmt::format("{:<20} {:<24} {:>6} {:>8} {:>8} {:>8} {:>8}\n", g.model, g.group, g.metrics.n,
                          format_metric(g.metrics.mae, 3), format_metric(g.metrics.rmse, 3),
                          format_metric(g.metrics.pearson_r, 3), format_metric(g.metrics.spearman_rho, 3));
    }
  }
  if (!outcome.baseline.rows.empty()) {
    const auto& s = outcome.baseline.summary;
    text += fmt::format("\nBaseline (focal rate as the prediction)\ngroups {}  mean N {}  MAE {}  RMSE {}  r {}  rho {}\n",
                        s.n_groups, format_metric(s.mean_n, 1), format_metric(s.mean_mae, 3),
                        format_metric(s.mean_rmse, 3), format_metric(s.mean_r, 3), format_metric(s.mean_rho, 3));
  }
  if (outcome.clusters) {
    text += fmt::format("\nClusters (k = {}, seed = {})\n", *options.cluster_k, options.seed);
    for (std::size_t c = 0; c < outcome.clusters->centroids_raw.size(); ++c) {
      const auto n = std::count(outcome.clusters->assignments.begin(), outcome.clusters->assignments.end(),
                                static_cast<int>(c));
      text += fmt::format("cluster {}: {} groups, mean MAE {}, mean r {}\n", c, n,
                          format_metric(outcome.clusters->centroids_raw[c][0], 3),
                          format_metric(outcome.clusters->centroids_raw[c][1], 3));
    }
  }
  {
    auto f = open_out(out / "validation.txt");
    f << text;
  }
  outputs.push_back("validation.txt");
  outcome.manifest = finish(m, out, outputs, manifest);
  return outcome;
}

CalibrateOutcome run_calibrate(const fs::path& parsed_csv, const fs::path& pool_dir, const CalibrateOptions& options,
                               const fs::path& out, const fs::path& manifest) {
  const auto& cal = options.calibration;
  json smoothing = {{"kind", cal.smoothing.kind == SmoothingPolicy::Kind::NONE    ? "none"
                             : cal.smoothing.kind == SmoothingPolicy::Kind::FIXED ? "fixed"
                                                                                  : "half-over-n"}};
  if (cal.smoothing.kind == SmoothingPolicy::Kind::FIXED) smoothing["p_min"] = cal.smoothing.p_min;
  auto m = start("calibrate",
                 {{"convention", cal.convention.kind() == LevelKind::OFFSET ? "offset" : "plain"},
                  {"convention_base", cal.convention.base()},
                  {"weighting", cal.weighting == MeansWeighting::UNWEIGHTED ? "unweighted" : "count-weighted"},
                  {"thresholds", {{"high", cal.thresholds.high}, {"invariant_upper", cal.thresholds.invariant_upper}}},
                  {"smoothing", smoothing},
                  {"grouping", options.grouping ? options.grouping->generic_string() : "default"}});
  if (options.model) m.config["model"] = *options.model;
  add_digests(m.inputs, parsed_csv);
  add_pool_digests(m.inputs, pool_dir);
  if (options.grouping) add_digests(m.inputs, *options.grouping);

  const auto pool = load_pool_dir(pool_dir);
  const auto groups = options.grouping ? load_dimension_groups(*options.grouping) : default_dimension_groups();

  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (const auto& r : read_parsed(parsed_csv)) {
    if (r.status != ParseStatus::OK || !r.predicted_p) continue;
    if (options.model && r.model_name != *options.model) continue;
    const auto key = split_task_id(r.task_id);
    if (!is_world_target(pool, key.target_id)) continue;
    if (!pool.find_item(key.item_id)) throw DataError(fmt::format("task '{}': unknown item", r.task_id));
    auto& s = sums[key.item_id];
    s.first += *r.predicted_p;
    ++s.second;
  }
  if (sums.empty()) throw DataError(fmt::format("{}: no usable world-target predictions", parsed_csv.string()));

  CalibrateOutcome outcome;
  for (const auto& [item, s] : sums) {
    outcome.estimates.push_back({item, s.first / static_cast<double>(s.second), pool.max_attempts(item)});
  }
  outcome.groups = calibrate_groups(pool.items(), outcome.estimates, groups, cal);

  fs::create_directories(out);
  {
    auto f = open_out(out / "calibration.csv");
    f << kCalibrationHeader << '\n';
    for (const auto& g : outcome.groups) {
      csv::write_row(f, {g.group.name, format_metric(g.fit.slope), format_metric(g.fit.intercept),
                         format_metric(g.fit.base()), format_metric(g.fit.r_squared),
                         std::string(to_string(g.fit.regime)), std::to_string(g.n_items),
                         std::to_string(g.fit.n_levels)});
    }
  }
  {
    auto f = open_out(out / "level_means.csv");
    csv::write_row(f, {"dimension_group", "level", "mean_emp_level", "count"});
    for (const auto& g : outcome.groups) {
      for (const auto& lm : g.means) {
        csv::write_row(f, {g.group.name, std::to_string(lm.level), format_metric(lm.mean_emp_level),
                           std::to_string(lm.count)});
      }
    }
  }
  {
    auto f = open_out(out / "series.csv");
    csv::write_row(f, {"dimension_group", "series", "item_id", "x", "y"});
    for (const auto& g : outcome.groups) {
      for (const auto& p : g.points) {
        csv::write_row(f, {g.group.name, "item", p.item_id, std::to_string(p.level), format_metric(p.empirical)});
      }
      for (const auto& lm : g.means) {
        csv::write_row(f, {g.group.name, "mean", "", std::to_string(lm.level), format_metric(lm.mean_emp_level)});
      }
      if (g.fit.slope) {
        for (int x : {1, 5}) {
          csv::write_row(f, {g.group.name, "fit", "", std::to_string(x),
                             format_metric(g.fit.intercept + *g.fit.slope * x)});
        }
      }
    }
  }
  write_calibration_svg(out / "calibration.svg", outcome.groups);

  std::string text = fmt::format("Calibration ({} items with world estimates)\n\n{:<34} {:>8} {:>9} {:>9} {:>6} {:>7} {:>6}\n",
                                 outcome.estimates.size(), "Group", "Slope", "Intercept", "Base", "R2", "Regime",
                                 "Items");
  for (const auto& g : outcome.groups) {
    text += fmt::format("{:<34} {:>8} {:>9} {:>9} {:>6} {:>7} {:>6}\n", g.group.name, format_metric(g.fit.slope, 2),
                        format_metric(g.fit.intercept, 2), format_metric(g.fit.base(), 2),
                        format_metric(g.fit.r_squared, 2), regime_label(g.fit.regime), g.n_items);
  }
  {
    auto f = open_out(out / "calibration.txt");
    f << text;
  }
  outcome.manifest = finish(
      m, out, {"calibration.csv", "level_means.csv", "series.csv", "calibration.svg", "calibration.txt"}, manifest);
  return outcome;
}

// ---------------------------------------------------------------------------

std::vector<FixtureRow> read_fixture_table(const fs::path& path) {
  const auto table = csv::read(path);
  const auto c_dim = table.column("dimension");
  const auto c_slope = table.column("slope");
  const auto c_int = table.column("intercept");
  const auto c_base = table.column("base");
  const auto c_r2 = table.column("r_squared");
  const auto c_label = table.column("label");
  std::vector<FixtureRow> rows;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto where = table.where(r);
    rows.push_back({row[c_dim], csv::to_double(row[c_slope], where), csv::to_double(row[c_int], where),
                    csv::to_double(row[c_base], where), csv::to_double(row[c_r2], where), row[c_label]});
    if (!(rows.back().base > 0.0)) throw DataError(fmt::format("{}: base must be positive", where));
  }
  return rows;
}

std::vector<FixtureCheck> check_fixture_table(std::span<const FixtureRow> rows, double tolerance,
                                              const RegimeThresholds& thresholds) {
  std::vector<FixtureCheck> out;
  for (const auto& row : rows) {
    FixtureCheck c;
    c.row = row;
    c.log10_base = std::log10(row.base);
    c.deviation = std::abs(c.log10_base - row.slope);
    c.within_tolerance = c.deviation <= tolerance;
    c.regime = classify_base(row.base, thresholds);
    c.label_matches = regime_label(c.regime) == row.label;
    out.push_back(std::move(c));
  }
  return out;
}

bool run_fixture_check(const fs::path& fixture_csv, double tolerance, const RegimeThresholds& thresholds,
                       const fs::path& out, const fs::path& manifest) {
  auto m = start("calibrate-fixture",
                 {{"tolerance", tolerance},
                  {"thresholds", {{"high", thresholds.high}, {"invariant_upper", thresholds.invariant_upper}}}});
  add_digests(m.inputs, fixture_csv);
  const auto checks = check_fixture_table(read_fixture_table(fixture_csv), tolerance, thresholds);
  bool all = !checks.empty();
  {
    auto f = open_out(out / "fixture_check.csv");
    csv::write_row(f, {"dimension", "slope", "base", "log10_base", "deviation", "within_tolerance", "label",
                       "regime", "label_matches"});
    for (const auto& c : checks) {
      all = all && c.within_tolerance && c.label_matches;
      csv::write_row(f, {c.row.dimension, num(c.row.slope), num(c.row.base), format_metric(c.log10_base),
                         format_metric(c.deviation), c.within_tolerance ? "1" : "0", c.row.label,
                         regime_label(c.regime), c.label_matches ? "1" : "0"});
    }
  }
  finish(m, out, {"fixture_check.csv"}, manifest);
  return all;
}

fs::path run_report(const std::vector<fs::path>& stage_dirs, const fs::path& out, const fs::path& manifest) {
  auto m = start("report", json::object());
  std::string text;
  for (const auto& dir : stage_dirs) {
    bool any = false;
    for (const char* name : {"validation.txt", "calibration.txt"}) {
      const auto path = dir / name;
      if (!fs::exists(path)) continue;
      add_digests(m.inputs, path);
      if (!text.empty()) text += '\n';
      text += read_text(path);
      any = true;
    }
    if (!any) throw DataError(fmt::format("{}: no validation.txt or calibration.txt", dir.string()));
  }
  const auto path = out / "report.txt";
  {
    auto f = open_out(path);
    f << text;
  }
  finish(m, out, {"report.txt"}, manifest);
  return path;
}

}  // namespace worldscale::pipeline
