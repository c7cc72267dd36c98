#include "worldscale/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <fstream>
#include <random>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "worldscale/csv.hpp"
#include "worldscale/errors.hpp"
#include "worldscale/parse.hpp"

namespace worldscale {
namespace {

using json = nlohmann::json;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::string slug(std::string_view name) {
  std::string out;
  for (char c : name) {
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
      out.push_back(c);
    } else if (c >= 'A' && c <= 'Z') {
      out.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out.empty() ? "group" : out;
}

const std::vector<std::string>& age_bands() {
  static const std::vector<std::string> v = {"15-24", "25-44", "45-64", "65+"};
  return v;
}

const std::vector<std::string>& regions() {
  static const std::vector<std::string> v = {"north", "south", "east", "west"};
  return v;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) return parts;
    start = pos + 1;
  }
}

}  // namespace

void validate(const SynthSpec& spec) {
  if (spec.groups.empty()) throw SpecError("synthetic spec has no groups");
  for (const auto& g : spec.groups) {
    if (g.group.dimensions.empty()) throw SpecError(fmt::format("synthetic group '{}' is empty", g.group.name));
    if (!(g.true_base > 1.0) || !std::isfinite(g.true_base)) {
      throw SpecError(fmt::format("synthetic group '{}' has base {} (must be > 1)", g.group.name, g.true_base));
    }
  }
  if (spec.respondents_n < 1) throw SpecError("respondents_n must be at least 1");
  if (spec.items_per_level < 1) throw SpecError("items_per_level must be at least 1");
  if (spec.levels.empty()) throw SpecError("synthetic spec has no levels");
  for (int l : spec.levels) {
    if (l < 1 || l > kMaxDemandLevel) throw SpecError(fmt::format("synthetic level {} outside 1-5", l));
  }
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("{}: invalid JSON ({})", path.string(), e.what()));
  }
  SynthSpec spec;
  try {
    const double default_base = j.value("true_base", 10.0);
    if (j.contains("groups")) {
      for (const auto& g : j.at("groups")) {
        SynthGroup sg;
        sg.group.name = g.at("name").get<std::string>();
        for (const auto& code : g.at("dimensions")) {
          auto d = parse_dimension(code.get<std::string>());
          if (!d) throw DataError(fmt::format("{}: unknown dimension '{}'", path.string(), code.get<std::string>()));
          sg.group.dimensions.push_back(*d);
        }
        sg.true_base = g.value("true_base", default_base);
        spec.groups.push_back(std::move(sg));
      }
    } else {
      for (const auto& g : default_dimension_groups()) spec.groups.push_back({g, default_base});
    }
    spec.items_per_level = j.value("items_per_level", spec.items_per_level);
    if (j.contains("levels")) spec.levels = j.at("levels").get<std::vector<int>>();
    spec.respondents_n = j.value("respondents_n", spec.respondents_n);
    spec.seed = j.value("seed", spec.seed);
    const auto noise = j.value("noise", std::string("none"));
    if (noise == "none") {
      spec.noise = NoiseModel::NONE;
    } else if (noise == "binomial") {
      spec.noise = NoiseModel::BINOMIAL;
    } else {
      throw DataError(fmt::format("{}: noise must be 'none' or 'binomial', got '{}'", path.string(), noise));
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
  validate(spec);
  return spec;
}

SynthPool generate_pool(const SynthSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  SynthPool out;

  std::vector<Item> items;
  for (const auto& g : spec.groups) {
    const auto convention = LevelConvention::offset(g.true_base);
    for (int l : spec.levels) {
      const double p = level_to_probability(l, convention);
      if (p < 1.0 / (2.0 * static_cast<double>(spec.respondents_n))) {
        out.warnings.push_back(fmt::format(
            "group '{}' level {}: p = {:.3g} is below the 1/(2n) floor at n = {}; observed rates will mostly be 0",
            g.group.name, l, p, spec.respondents_n));
      }
      for (std::size_t k = 0; k < spec.items_per_level; ++k) {
        Item item;
        item.item_id = fmt::format("syn-{}-L{}-{}", slug(g.group.name), l, k);
        item.source_dataset = SourceDataset::CUSTOM;
        item.domain = g.group.name;
        item.stem = fmt::format("Synthetic question {} loading on {} at demand level {}.", item.item_id,
                                g.group.name, l);
        item.key = "reference answer";
        item.scoring_rule = "exact match with the key";
        for (auto d : all_dimensions()) {
          const bool in_group =
              std::find(g.group.dimensions.begin(), g.group.dimensions.end(), d) != g.group.dimensions.end();
          const int level = in_group ? l : static_cast<int>(uniform01(rng) * l);
          item.demands.set(d, level);
        }
        out.world_truth[item.item_id] = p;
        items.push_back(std::move(item));
      }
    }
  }

  SubgroupFrame sample;
  sample.frame_id = std::string(kSampleFrameId);
  sample.kind = FrameKind::REFERENCE;
  sample.label = "synthetic sample";
  sample.description = fmt::format(
      "Synthetic adult and adolescent test takers spread evenly over four age bands and four world regions; "
      "{} test takers answered every question.",
      spec.respondents_n);
  sample.n_respondents = spec.respondents_n;

  SubgroupFrame world;
  world.frame_id = std::string(kWorldFrameId);
  world.kind = FrameKind::WORLD;
  world.label = "whole world population";

  std::vector<ObservedRate> rates;
  std::vector<Respondent> respondents;
  std::vector<Response> responses;
  if (spec.noise == NoiseModel::NONE) {
    for (const auto& item : items) {
      const double p = out.world_truth[item.item_id];
      ObservedRate r;
      r.item_id = item.item_id;
      r.frame_id = sample.frame_id;
      r.attempts = spec.respondents_n;
      r.successes = p * static_cast<double>(spec.respondents_n);
      r.p = p;
      r.se = binomial_se(p, spec.respondents_n);
      rates.push_back(std::move(r));
    }
  } else {
    for (std::size_t i = 0; i < spec.respondents_n; ++i) {
      Respondent who;
      who.respondent_id = fmt::format("r{:06d}", i);
      who.covariates["age_band"] = age_bands()[rng() % age_bands().size()];
      who.covariates["region"] = regions()[rng() % regions().size()];
      respondents.push_back(std::move(who));
    }
    responses.reserve(items.size() * spec.respondents_n);
    for (const auto& item : items) {
      const double p = out.world_truth[item.item_id];
      for (const auto& who : respondents) {
        responses.push_back({who.respondent_id, item.item_id, uniform01(rng) < p ? 1 : 0});
      }
    }
    rates = rates_from_responses(items, responses, sample.frame_id, [](const std::string&) { return true; });
  }

  PoolInfo info{"synthetic",
                "We have results from a synthetic test administration whose world success rates are known."};
  out.pool = ItemPool(std::move(info), std::move(items), {sample, world}, std::move(rates), std::move(respondents),
                      std::move(responses));
  return out;
}

void write_synth_pool(const SynthPool& synth, const std::filesystem::path& dir) {
  write_pool(synth.pool, dir);
  std::ofstream out(dir / "truth.csv", std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", (dir / "truth.csv").string()));
  csv::write_row(out, {"item_id", "frame_id", "p"});
  for (const auto& [item, p] : synth.world_truth) {
    csv::write_row(out, {item, std::string(kWorldFrameId), fmt::format("{}", p)});
  }
}

std::map<std::string, double> read_world_truth(const std::filesystem::path& truth_csv) {
  auto table = csv::read(truth_csv);
  auto c_item = table.column("item_id");
  auto c_p = table.column("p");
  std::map<std::string, double> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const double p = csv::to_double(table.rows[r][c_p], table.where(r));
    if (!(p >= 0.0 && p <= 1.0)) throw DataError(fmt::format("{}: p = {} outside [0, 1]", table.where(r), p));
    out[table.rows[r][c_item]] = p;
  }
  return out;
}

// ---------------------------------------------------------------------------

OracleTruth::OracleTruth(const ItemPool& pool, std::map<std::string, double> world_truth)
    : pool_(&pool), world_truth_(std::move(world_truth)) {}

double OracleTruth::truth(const std::string& task_id) const {
  const auto parts = split(task_id, '|');
  if (parts.size() != 3) throw TaskError(fmt::format("malformed task id '{}'", task_id));
  const auto& item = parts[0];
  const auto& target = parts[2];
  if (!pool_->find_item(item)) throw TaskError(fmt::format("oracle: unknown item '{}'", item));
  const SubgroupFrame* frame = pool_->find_frame(target);
  const bool world = frame ? frame->kind == FrameKind::WORLD : target == kWorldFrameId;
  if (world) {
    auto it = world_truth_.find(item);
    if (it == world_truth_.end()) throw TaskError(fmt::format("oracle: no world truth for item '{}'", item));
    return it->second;
  }
  if (!frame) throw TaskError(fmt::format("oracle: unknown target frame '{}'", target));
  const ObservedRate* r = pool_->find_rate(item, target);
  if (!r) throw TaskError(fmt::format("oracle: no observed rate for ({}, {})", item, target));
  return r->p;
}

double oracle_probability(double p, const std::string& task_id, int variant_id, const OracleOptions& options) {
  if (options.logit_sigma <= 0.0 || p <= 0.0 || p >= 1.0) return p;
  std::mt19937_64 rng(fnv1a(fmt::format("{}|{}|{}", options.seed, task_id, variant_id)));
  // Box-Muller on portable uniforms.
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  const double logit = std::log(p / (1.0 - p)) + options.logit_sigma * z;
  return 1.0 / (1.0 + std::exp(-logit));
}

std::string oracle_response(const OracleTruth& truth, const std::string& task_id, int variant_id,
                            const OracleOptions& options) {
  const double q = oracle_probability(truth.truth(task_id), task_id, variant_id, options);
  return fmt::format(
      "The observed group and the target population differ in age structure, schooling and language, and "
      "the estimate below adjusts the observed rate for those differences.\nFinal answer: {}",
      render_percentage(q));
}

std::shared_ptr<MockProvider> make_oracle_provider(std::string provider_id, std::shared_ptr<const OracleTruth> truth,
                                                   OracleOptions options) {
  return std::make_shared<MockProvider>(std::move(provider_id), [truth, options](const ChatRequest& req) {
    return oracle_response(*truth, req.task_id, req.variant_id, options);
  });
}

}  // namespace worldscale
