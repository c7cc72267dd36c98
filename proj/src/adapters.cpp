// Dataset adapters. Every adapter produces the same canonical ItemPool.
//
//   canonical         items.jsonl, frames.jsonl, rates.csv and/or responses.csv,
//                     optional pool.json
//   icar, ukbiobank   items.jsonl, optional frames.jsonl/pool.json, and
//                     responses_wide.csv: one row per respondent, a
//                     respondent_id column, one 0/1 column per item id (blank
//                     = not attempted), every other column a covariate
//   pisa, timss       items.jsonl, optional frames.jsonl/pool.json, and
//                     scores.csv: respondent_id, item_id, raw_score,
//                     max_score, covariate columns; partial credit is
//                     dichotomized with harmonize_scoring
//   reliabilitybench  aggregate rates only (no respondent covariates):
//                     items.jsonl, frames.jsonl, rates.csv
//
// When a reference frame is not supplied the adapters create one named
// "all" covering every respondent.

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "worldscale/corpus.hpp"
#include "worldscale/csv.hpp"
#include "worldscale/errors.hpp"

namespace worldscale {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<std::pair<std::string, json>> read_jsonl(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::pair<std::string, json>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto where = fmt::format("{}:{}", path.string(), lineno);
    try {
      out.emplace_back(where, json::parse(line));
    } catch (const json::parse_error& e) {
      throw DataError(fmt::format("{}: invalid JSON ({})", where, e.what()));
    }
  }
  return out;
}

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw DataError(fmt::format("{}: missing key '{}'", where, key));
  }
  return j.at(key);
}

std::string require_string(const json& j, const char* key, const std::string& where) {
  const auto& v = require(j, key, where);
  if (!v.is_string()) throw DataError(fmt::format("{}: '{}' must be a string", where, key));
  return v.get<std::string>();
}

std::string optional_string(const json& j, const char* key) {
  if (j.contains(key) && j.at(key).is_string()) return j.at(key).get<std::string>();
  return {};
}

Item parse_item(const json& j, const std::string& where) {
  Item item;
  item.item_id = require_string(j, "id", where);
  item.source_dataset = parse_source_dataset(require_string(j, "dataset", where));
  item.domain = optional_string(j, "domain");
  item.stem = require_string(j, "stem", where);
  const auto& options = require(j, "options", where);
  if (!options.is_array()) throw DataError(fmt::format("{}: 'options' must be an array", where));
  for (const auto& o : options) {
    if (!o.is_string()) throw DataError(fmt::format("{}: options must be strings", where));
    item.options.push_back(o.get<std::string>());
  }
  item.key = require_string(j, "key", where);
  item.scoring_rule = require_string(j, "scoring_rule", where);
  const auto& visual = require(j, "requires_visual", where);
  if (!visual.is_boolean()) {
    throw DataError(fmt::format("{}: 'requires_visual' must be a boolean", where));
  }
  item.requires_visual = visual.get<bool>();
  const auto& demands = require(j, "demands", where);
  if (!demands.is_object()) throw DataError(fmt::format("{}: 'demands' must be an object", where));
  for (auto d : all_dimensions()) {
    auto code = std::string(dimension_code(d));
    if (!demands.contains(code)) {
      throw DataError(fmt::format("{}: item '{}' missing demand '{}'", where, item.item_id, code));
    }
    const auto& v = demands.at(code);
    std::pair<int, bool> level;
    try {
      if (v.is_number_integer()) {
        level = parse_demand_level(std::to_string(v.get<int>()));
      } else if (v.is_string()) {
        level = parse_demand_level(v.get<std::string>());
      } else {
        throw DataError("not an integer or string");
      }
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}: demand '{}': {}", where, code, e.what()));
    }
    item.demands.set(d, level.first, level.second);
  }
  for (const auto& [k, v] : demands.items()) {
    if (!parse_dimension(k)) throw DataError(fmt::format("{}: unknown dimension '{}'", where, k));
  }
  return item;
}

SubgroupFrame parse_frame(const json& j, const std::string& where) {
  SubgroupFrame f;
  f.frame_id = require_string(j, "id", where);
  f.kind = parse_frame_kind(require_string(j, "kind", where));
  f.label = optional_string(j, "label");
  f.description = optional_string(j, "description");
  f.reference_id = optional_string(j, "reference");
  if (j.contains("covariates")) {
    const auto& c = j.at("covariates");
    if (!c.is_object()) throw DataError(fmt::format("{}: 'covariates' must be an object", where));
    for (const auto& [k, v] : c.items()) {
      if (!v.is_string()) throw DataError(fmt::format("{}: covariate '{}' must be a string", where, k));
      f.covariate_spec[k] = v.get<std::string>();
    }
  }
  if (j.contains("n") && !j.at("n").is_null()) {
    if (!j.at("n").is_number_unsigned()) {
      throw DataError(fmt::format("{}: 'n' must be a non-negative integer", where));
    }
    f.n_respondents = j.at("n").get<std::size_t>();
  }
  return f;
}

std::vector<Item> read_items(const fs::path& dir) {
  std::vector<Item> items;
  for (const auto& [where, j] : read_jsonl(dir / "items.jsonl")) items.push_back(parse_item(j, where));
  return items;
}

std::vector<SubgroupFrame> read_frames(const fs::path& dir, bool required) {
  std::vector<SubgroupFrame> frames;
  auto path = dir / "frames.jsonl";
  if (!required && !fs::exists(path)) return frames;
  for (const auto& [where, j] : read_jsonl(path)) frames.push_back(parse_frame(j, where));
  // A focal frame without an explicit reference belongs to the only one.
  std::vector<std::string> refs;
  for (const auto& f : frames) {
    if (f.kind == FrameKind::REFERENCE) refs.push_back(f.frame_id);
  }
  for (auto& f : frames) {
    if (f.kind == FrameKind::FOCAL && f.reference_id.empty() && refs.size() == 1) {
      f.reference_id = refs.front();
    }
  }
  return frames;
}

PoolInfo read_info(const fs::path& dir) {
  PoolInfo info;
  auto path = dir / "pool.json";
  if (!fs::exists(path)) return info;
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("{}: invalid JSON ({})", path.string(), e.what()));
  }
  info.name = optional_string(j, "name");
  info.intro = optional_string(j, "intro");
  return info;
}

std::vector<ObservedRate> read_rates(const fs::path& path) {
  auto table = csv::read(path);
  auto c_item = table.column("item_id");
  auto c_frame = table.column("frame_id");
  auto c_succ = table.find_column("successes");
  auto c_att = table.column("attempts");
  auto c_p = table.find_column("p");
  if (!c_succ && !c_p) {
    throw DataError(fmt::format("{}: needs a 'successes' or 'p' column", path.string()));
  }
  std::vector<ObservedRate> rates;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto where = table.where(r);
    if (row[c_item].empty()) throw DataError(fmt::format("{}: empty item_id", where));
    if (row[c_frame].empty()) throw DataError(fmt::format("{}: empty frame_id", where));
    auto attempts = csv::to_count(row[c_att], where);
    bool has_succ = c_succ && !row[*c_succ].empty();
    bool has_p = c_p && !row[*c_p].empty();
    if (!has_succ && !has_p) throw DataError(fmt::format("{}: neither successes nor p given", where));
    ObservedRate rate;
    if (has_p) {
      double p = csv::to_double(row[*c_p], where);
      if (!(p >= 0.0 && p <= 1.0)) {
        throw DataError(fmt::format("{}: rate ({}, {}) has p = {} outside [0, 1]", where,
                                    row[c_item], row[c_frame], p));
      }
      double successes = has_succ ? csv::to_double(row[*c_succ], where)
                                  : p * static_cast<double>(attempts);
      rate.item_id = row[c_item];
      rate.frame_id = row[c_frame];
      rate.successes = successes;
      rate.attempts = attempts;
      rate.p = p;
      rate.se = binomial_se(p, attempts);
    } else {
      double successes = csv::to_double(row[*c_succ], where);
      if (successes < 0.0 || successes > static_cast<double>(attempts)) {
        throw DataError(fmt::format("{}: rate ({}, {}) has p = {}/{} outside [0, 1]", where,
                                    row[c_item], row[c_frame], successes, attempts));
      }
      rate = make_rate(row[c_item], row[c_frame], successes, attempts);
    }
    rates.push_back(std::move(rate));
  }
  return rates;
}

bool is_missing(std::string_view v) {
  return v.empty() || v == "NA" || v == "na" || v == "NaN" || v == "nan" || v == ".";
}

void add_respondent(std::map<std::string, Respondent>& respondents, const std::string& id,
                    std::map<std::string, std::string> covariates, const std::string& where) {
  auto [it, inserted] = respondents.try_emplace(id, Respondent{id, covariates});
  if (!inserted && it->second.covariates != covariates) {
    throw DataError(fmt::format("{}: respondent '{}' has inconsistent covariates", where, id));
  }
}

/// Long format "respondent_id, item_id, <score columns>, covariates..." helper.
template <typename ScoreFn>
void read_long_responses(const fs::path& path, const std::set<std::string>& score_columns,
                         std::map<std::string, Respondent>& respondents, ScoreFn&& on_score) {
  auto table = csv::read(path);
  auto c_resp = table.column("respondent_id");
  auto c_item = table.column("item_id");
  for (const auto& col : score_columns) table.column(col);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto where = table.where(r);
    std::map<std::string, std::string> cov;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      if (c == c_resp || c == c_item || score_columns.contains(table.header[c])) continue;
      if (!is_missing(row[c])) cov[table.header[c]] = row[c];
    }
    if (row[c_resp].empty()) throw DataError(fmt::format("{}: empty respondent_id", where));
    add_respondent(respondents, row[c_resp], std::move(cov), where);
    on_score(table, r, where);
  }
}

std::vector<SubgroupFrame> ensure_reference(std::vector<SubgroupFrame> frames,
                                            const PoolInfo& info, std::size_t n_respondents) {
  for (auto& f : frames) {
    if (f.kind == FrameKind::REFERENCE) {
      if (!f.n_respondents && n_respondents) f.n_respondents = n_respondents;
      return frames;
    }
  }
  SubgroupFrame all;
  all.frame_id = "all";
  all.kind = FrameKind::REFERENCE;
  all.label = info.name.empty() ? "full sample" : info.name + " sample";
  all.description = "All participants who attempted the item.";
  all.n_respondents = n_respondents;
  frames.insert(frames.begin(), std::move(all));
  return frames;
}

std::string reference_id_of(const std::vector<SubgroupFrame>& frames) {
  std::string id;
  for (const auto& f : frames) {
    if (f.kind != FrameKind::REFERENCE) continue;
    if (!id.empty()) {
      throw DataError("respondent-level adapters need exactly one reference frame");
    }
    id = f.frame_id;
  }
  return id;
}

ItemPool assemble_from_responses(const fs::path& dir, std::vector<Item> items,
                                 std::map<std::string, Respondent> respondent_map,
                                 std::vector<Response> responses) {
  auto info = read_info(dir);
  auto frames = ensure_reference(read_frames(dir, false), info, respondent_map.size());
  auto ref = reference_id_of(frames);
  auto rates = rates_from_responses(items, responses, ref, [](const std::string&) { return true; });
  std::vector<Respondent> respondents;
  for (auto& [id, r] : respondent_map) respondents.push_back(std::move(r));
  return ItemPool(std::move(info), std::move(items), std::move(frames), std::move(rates),
                  std::move(respondents), std::move(responses));
}

fs::path single_dir(const SourceDescriptor& source) {
  if (source.paths.size() != 1) {
    throw UsageError(fmt::format("adapter '{}' expects exactly one input directory", source.adapter));
  }
  const auto& dir = source.paths.front();
  if (!fs::is_directory(dir)) throw DataError(fmt::format("{}: not a directory", dir.string()));
  return dir;
}

ItemPool load_canonical(const SourceDescriptor& source) {
  auto dir = single_dir(source);
  auto info = read_info(dir);
  auto items = read_items(dir);
  auto frames = read_frames(dir, true);

  std::vector<Respondent> respondents;
  std::vector<Response> responses;
  auto responses_path = dir / "responses.csv";
  const bool rates_only = !source.respondent_data && fs::exists(dir / "rates.csv");
  bool have_responses = !rates_only && fs::exists(responses_path);
  if (have_responses) {
    std::map<std::string, Respondent> respondent_map;
    read_long_responses(responses_path, {"score01"}, respondent_map,
                        [&](const csv::Table& t, std::size_t r, const std::string& where) {
                          const auto& row = t.rows[r];
                          const auto& s = row[t.column("score01")];
                          if (s != "0" && s != "1") {
                            throw DataError(fmt::format("{}: score01 '{}' is not 0/1", where, s));
                          }
                          responses.push_back({row[t.column("respondent_id")],
                                               row[t.column("item_id")], s == "1" ? 1 : 0});
                        });
    for (auto& [id, r] : respondent_map) respondents.push_back(std::move(r));
  }

  std::vector<ObservedRate> rates;
  auto rates_path = dir / "rates.csv";
  if (fs::exists(rates_path)) {
    rates = read_rates(rates_path);
  } else if (have_responses) {
    auto ref = reference_id_of(frames);
    if (ref.empty()) throw DataError(fmt::format("{}: no reference frame", dir.string()));
    rates = rates_from_responses(items, responses, ref, [](const std::string&) { return true; });
  } else {
    throw DataError(fmt::format("{}: missing rates.csv", dir.string()));
  }
  return ItemPool(std::move(info), std::move(items), std::move(frames), std::move(rates),
                  std::move(respondents), std::move(responses));
}

ItemPool load_wide(const SourceDescriptor& source) {
  auto dir = single_dir(source);
  auto items = read_items(dir);
  std::set<std::string> item_ids;
  for (const auto& i : items) item_ids.insert(i.item_id);

  auto table = csv::read(dir / "responses_wide.csv");
  auto c_resp = table.column("respondent_id");
  std::vector<std::pair<std::size_t, std::string>> item_cols;
  std::vector<std::size_t> cov_cols;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == c_resp) continue;
    if (item_ids.contains(table.header[c])) {
      item_cols.emplace_back(c, table.header[c]);
    } else {
      cov_cols.push_back(c);
    }
  }
  std::map<std::string, Respondent> respondents;
  std::vector<Response> responses;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto where = table.where(r);
    std::map<std::string, std::string> cov;
    for (auto c : cov_cols) {
      if (!is_missing(row[c])) cov[table.header[c]] = row[c];
    }
    if (row[c_resp].empty()) throw DataError(fmt::format("{}: empty respondent_id", where));
    if (respondents.contains(row[c_resp])) {
      throw DataError(fmt::format("{}: duplicate respondent '{}'", where, row[c_resp]));
    }
    add_respondent(respondents, row[c_resp], std::move(cov), where);
    for (const auto& [c, id] : item_cols) {
      const auto& v = row[c];
      if (is_missing(v)) continue;
      if (v != "0" && v != "1") {
        throw DataError(fmt::format("{}: item '{}' score '{}' is not 0/1", where, id, v));
      }
      responses.push_back({row[c_resp], id, v == "1" ? 1 : 0});
    }
  }
  return assemble_from_responses(dir, std::move(items), std::move(respondents),
                                 std::move(responses));
}

ItemPool load_scored(const SourceDescriptor& source) {
  auto dir = single_dir(source);
  auto items = read_items(dir);
  std::map<std::string, Respondent> respondents;
  std::vector<RawScore> raw;
  read_long_responses(dir / "scores.csv", {"raw_score", "max_score"}, respondents,
                      [&](const csv::Table& t, std::size_t r, const std::string& where) {
                        const auto& row = t.rows[r];
                        const auto& rs = row[t.column("raw_score")];
                        if (is_missing(rs)) return;  // not attempted
                        raw.push_back({row[t.column("respondent_id")], row[t.column("item_id")],
                                       csv::to_double(rs, where),
                                       csv::to_double(row[t.column("max_score")], where)});
                      });
  auto responses = harmonize_scoring(raw);
  return assemble_from_responses(dir, std::move(items), std::move(respondents),
                                 std::move(responses));
}

ItemPool load_aggregate(const SourceDescriptor& source) {
  auto dir = single_dir(source);
  if (fs::exists(dir / "responses.csv")) {
    throw DataError(fmt::format("{}: aggregate adapter does not take respondent data", dir.string()));
  }
  return load_canonical(source);
}

}  // namespace

const std::map<std::string, Adapter, std::less<>>& adapter_registry() {
  static const std::map<std::string, Adapter, std::less<>> registry = {
      {"canonical", load_canonical},      {"icar", load_wide},
      {"ukbiobank", load_wide},           {"pisa", load_scored},
      {"timss", load_scored},             {"reliabilitybench", load_aggregate},
  };
  return registry;
}

ItemPool load_item_pool(const SourceDescriptor& source) {
  const auto& registry = adapter_registry();
  auto it = registry.find(source.adapter);
  if (it == registry.end()) throw UsageError(fmt::format("unknown adapter '{}'", source.adapter));
  return it->second(source);
}

// ---------------------------------------------------------------------------

namespace {

std::string format_number(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) return fmt::format("{}", static_cast<long long>(v));
  return fmt::format("{}", v);
}

}  // namespace

void write_pool(const ItemPool& pool, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "items.jsonl", std::ios::binary);
    for (const auto& item : pool.items()) {
      json demands = json::object();
      for (auto d : all_dimensions()) {
        auto code = std::string(dimension_code(d));
        if (item.demands.open_ended(d)) {
          demands[code] = "5+";
        } else {
          demands[code] = item.demands.level(d);
        }
      }
      json j = {{"id", item.item_id},
                {"dataset", std::string(to_string(item.source_dataset))},
                {"domain", item.domain},
                {"stem", item.stem},
                {"options", item.options},
                {"key", item.key},
                {"scoring_rule", item.scoring_rule},
                {"requires_visual", item.requires_visual},
                {"demands", demands}};
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out(dir / "frames.jsonl", std::ios::binary);
    for (const auto& f : pool.frames()) {
      json j = {{"id", f.frame_id}, {"kind", std::string(to_string(f.kind))}};
      if (!f.label.empty()) j["label"] = f.label;
      if (!f.description.empty()) j["description"] = f.description;
      if (!f.covariate_spec.empty()) j["covariates"] = f.covariate_spec;
      if (f.n_respondents) j["n"] = *f.n_respondents;
      if (!f.reference_id.empty()) j["reference"] = f.reference_id;
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out(dir / "rates.csv", std::ios::binary);
    csv::write_row(out, {"item_id", "frame_id", "successes", "attempts", "p"});
    for (const auto& r : pool.rates()) {
      csv::write_row(out, {r.item_id, r.frame_id, format_number(r.successes),
                           std::to_string(r.attempts), fmt::format("{}", r.p)});
    }
  }
  if (!pool.respondents().empty()) {
    auto covariates = pool.covariate_names();
    std::ofstream out(dir / "responses.csv", std::ios::binary);
    std::vector<std::string> header = {"respondent_id", "item_id", "score01"};
    header.insert(header.end(), covariates.begin(), covariates.end());
    csv::write_row(out, header);
    for (const auto& r : pool.responses()) {
      const auto* who = pool.find_respondent(r.respondent_id);
      std::vector<std::string> row = {r.respondent_id, r.item_id, std::to_string(r.score01)};
      for (const auto& c : covariates) {
        auto it = who->covariates.find(c);
        row.push_back(it == who->covariates.end() ? "" : it->second);
      }
      csv::write_row(out, row);
    }
  } else {
    fs::remove(dir / "responses.csv");
  }
  {
    std::ofstream out(dir / "pool.json", std::ios::binary);
    out << json{{"name", pool.info().name}, {"intro", pool.info().intro}}.dump(2) << '\n';
  }
}

}  // namespace worldscale
