#include "worldscale/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include <fmt/core.h>

#include "worldscale/errors.hpp"
#include "worldscale/log.hpp"

namespace worldscale {

namespace {

constexpr std::array<std::string_view, kDimensionCount> kCodes = {
    "AS", "CEc", "CEe", "CL", "MCr", "MCt", "MCu", "MS", "QLl",
    "QLq", "SNs", "KNa", "KNc", "KNf", "KNn", "KNs", "AT", "VO"};

std::string rate_key(std::string_view item_id, std::string_view frame_id) {
  std::string key;
  key.reserve(item_id.size() + frame_id.size() + 1);
  key.append(item_id);
  key.push_back('\x1f');
  key.append(frame_id);
  return key;
}

}  // namespace

const std::array<Dimension, kDimensionCount>& all_dimensions() {
  static const auto dims = [] {
    std::array<Dimension, kDimensionCount> out{};
    for (std::size_t i = 0; i < kDimensionCount; ++i) out[i] = static_cast<Dimension>(i);
    return out;
  }();
  return dims;
}

std::string_view dimension_code(Dimension d) { return kCodes[static_cast<std::size_t>(d)]; }

std::optional<Dimension> parse_dimension(std::string_view code) {
  for (std::size_t i = 0; i < kDimensionCount; ++i) {
    if (kCodes[i] == code) return static_cast<Dimension>(i);
  }
  return std::nullopt;
}

void DemandProfile::set(Dimension d, int level, bool open_ended) {
  if (level < 0 || level > kMaxDemandLevel) {
    throw DataError(fmt::format("demand level {} for {} outside 0-{}", level, dimension_code(d),
                                kMaxDemandLevel));
  }
  if (open_ended && level != kMaxDemandLevel) {
    throw DataError(fmt::format("open-ended demand on {} must be level {}", dimension_code(d),
                                kMaxDemandLevel));
  }
  levels_[index(d)] = static_cast<std::uint8_t>(level);
  open_ended_[index(d)] = open_ended;
}

int DemandProfile::max_level() const {
  return *std::max_element(levels_.begin(), levels_.end());
}

std::pair<int, bool> parse_demand_level(std::string_view text) {
  if (text == "5+") return {kMaxDemandLevel, true};
  if (text.size() == 1 && text[0] >= '0' && text[0] <= '5') return {text[0] - '0', false};
  throw DataError(fmt::format("'{}' is not a demand level (0-5 or 5+)", text));
}

std::string_view to_string(SourceDataset d) {
  switch (d) {
    case SourceDataset::PISA: return "PISA";
    case SourceDataset::TIMSS: return "TIMSS";
    case SourceDataset::ICAR: return "ICAR";
    case SourceDataset::UKBIOBANK: return "UKBIOBANK";
    case SourceDataset::RELIABILITYBENCH: return "RELIABILITYBENCH";
    case SourceDataset::CUSTOM: return "CUSTOM";
  }
  return "CUSTOM";
}

SourceDataset parse_source_dataset(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (auto d : {SourceDataset::PISA, SourceDataset::TIMSS, SourceDataset::ICAR,
                 SourceDataset::UKBIOBANK, SourceDataset::RELIABILITYBENCH, SourceDataset::CUSTOM}) {
    if (to_string(d) == upper) return d;
  }
  throw DataError(fmt::format("unknown dataset '{}'", text));
}

bool Item::key_is_unambiguous() const {
  if (options.empty()) return true;
  return std::count(options.begin(), options.end(), key) == 1;
}

std::string_view to_string(FrameKind k) {
  switch (k) {
    case FrameKind::FOCAL: return "focal";
    case FrameKind::REFERENCE: return "reference";
    case FrameKind::WORLD: return "world";
  }
  return "focal";
}

FrameKind parse_frame_kind(std::string_view text) {
  if (text == "focal" || text == "FOCAL") return FrameKind::FOCAL;
  if (text == "reference" || text == "REFERENCE") return FrameKind::REFERENCE;
  if (text == "world" || text == "WORLD") return FrameKind::WORLD;
  throw DataError(fmt::format("unknown frame kind '{}'", text));
}

std::optional<double> binomial_se(double p, std::size_t n) {
  if (n == 0) return std::nullopt;
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

ObservedRate make_rate(std::string item_id, std::string frame_id, double successes,
                       std::size_t attempts) {
  if (successes < 0.0 || successes > static_cast<double>(attempts)) {
    throw DataError(fmt::format("rate ({}, {}): {} successes out of {} attempts", item_id,
                                frame_id, successes, attempts));
  }
  ObservedRate r;
  r.item_id = std::move(item_id);
  r.frame_id = std::move(frame_id);
  r.successes = successes;
  r.attempts = attempts;
  r.p = attempts ? successes / static_cast<double>(attempts) : 0.0;
  r.se = binomial_se(r.p, attempts);
  return r;
}

// ---------------------------------------------------------------------------

ItemPool::ItemPool(PoolInfo info, std::vector<Item> items, std::vector<SubgroupFrame> frames,
                   std::vector<ObservedRate> rates, std::vector<Respondent> respondents,
                   std::vector<Response> responses)
    : info_(std::move(info)),
      items_(std::move(items)),
      frames_(std::move(frames)),
      rates_(std::move(rates)),
      respondents_(std::move(respondents)),
      responses_(std::move(responses)) {
  build_indexes();
}

void ItemPool::build_indexes() {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].item_id.empty()) throw DataError(fmt::format("item #{} has an empty id", i));
    if (!item_index_.emplace(items_[i].item_id, i).second) {
      throw DataError(fmt::format("duplicate item id '{}'", items_[i].item_id));
    }
  }
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    if (frames_[i].frame_id.empty()) throw DataError(fmt::format("frame #{} has an empty id", i));
    if (!frame_index_.emplace(frames_[i].frame_id, i).second) {
      throw DataError(fmt::format("duplicate frame id '{}'", frames_[i].frame_id));
    }
  }
  for (const auto& f : frames_) {
    if (f.kind != FrameKind::FOCAL) continue;
    if (f.reference_id.empty()) {
      throw DataError(fmt::format("focal frame '{}' names no reference frame", f.frame_id));
    }
    const auto* ref = find_frame(f.reference_id);
    if (!ref || ref->kind != FrameKind::REFERENCE) {
      throw DataError(fmt::format("focal frame '{}' references unknown reference frame '{}'",
                                  f.frame_id, f.reference_id));
    }
  }
  for (std::size_t i = 0; i < rates_.size(); ++i) {
    const auto& r = rates_[i];
    if (!find_item(r.item_id)) {
      throw DataError(fmt::format("rate ({}, {}): unknown item", r.item_id, r.frame_id));
    }
    const auto* frame = find_frame(r.frame_id);
    if (!frame) throw DataError(fmt::format("rate ({}, {}): unknown frame", r.item_id, r.frame_id));
    if (frame->kind == FrameKind::WORLD) {
      throw DataError(fmt::format("rate ({}, {}): world frames carry no observed rates", r.item_id,
                                  r.frame_id));
    }
    if (!(r.p >= 0.0 && r.p <= 1.0)) {
      throw DataError(fmt::format("rate ({}, {}): p = {} outside [0, 1]", r.item_id, r.frame_id, r.p));
    }
    if (!rate_index_.emplace(rate_key(r.item_id, r.frame_id), i).second) {
      throw DataError(fmt::format("duplicate rate ({}, {})", r.item_id, r.frame_id));
    }
  }
  for (std::size_t i = 0; i < respondents_.size(); ++i) {
    if (!respondent_index_.emplace(respondents_[i].respondent_id, i).second) {
      throw DataError(fmt::format("duplicate respondent '{}'", respondents_[i].respondent_id));
    }
  }
  for (const auto& r : responses_) {
    if (!find_item(r.item_id)) {
      throw DataError(fmt::format("response ({}, {}): unknown item", r.respondent_id, r.item_id));
    }
    if (!find_respondent(r.respondent_id)) {
      throw DataError(
          fmt::format("response ({}, {}): unknown respondent", r.respondent_id, r.item_id));
    }
    if (r.score01 != 0 && r.score01 != 1) {
      throw DataError(fmt::format("response ({}, {}): score {} is not 0/1", r.respondent_id,
                                  r.item_id, r.score01));
    }
  }
}

const Item* ItemPool::find_item(std::string_view item_id) const {
  auto it = item_index_.find(std::string(item_id));
  return it == item_index_.end() ? nullptr : &items_[it->second];
}

const SubgroupFrame* ItemPool::find_frame(std::string_view frame_id) const {
  auto it = frame_index_.find(std::string(frame_id));
  return it == frame_index_.end() ? nullptr : &frames_[it->second];
}

const ObservedRate* ItemPool::find_rate(std::string_view item_id, std::string_view frame_id) const {
  auto it = rate_index_.find(rate_key(item_id, frame_id));
  return it == rate_index_.end() ? nullptr : &rates_[it->second];
}

const Respondent* ItemPool::find_respondent(std::string_view respondent_id) const {
  auto it = respondent_index_.find(std::string(respondent_id));
  return it == respondent_index_.end() ? nullptr : &respondents_[it->second];
}

std::vector<const SubgroupFrame*> ItemPool::frames_of_kind(FrameKind kind) const {
  std::vector<const SubgroupFrame*> out;
  for (const auto& f : frames_) {
    if (f.kind == kind) out.push_back(&f);
  }
  return out;
}

std::vector<std::string> ItemPool::covariate_names() const {
  std::set<std::string> names;
  for (const auto& r : respondents_) {
    for (const auto& [k, v] : r.covariates) names.insert(k);
  }
  return {names.begin(), names.end()};
}

std::size_t ItemPool::max_attempts(std::string_view item_id) const {
  std::size_t best = 0;
  for (const auto& r : rates_) {
    if (r.item_id == item_id) best = std::max(best, r.attempts);
  }
  return best;
}

// ---------------------------------------------------------------------------

std::vector<Response> harmonize_scoring(std::span<const RawScore> records) {
  std::vector<Response> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!(r.max > 0.0)) {
      throw DataError(fmt::format("score record #{} ({}, {}): max score {} must be positive", i,
                                  r.respondent_id, r.item_id, r.max));
    }
    if (r.raw > r.max || r.raw < 0.0) {
      throw DataError(fmt::format("score record #{} ({}, {}): raw score {} outside [0, {}]", i,
                                  r.respondent_id, r.item_id, r.raw, r.max));
    }
    out.push_back({r.respondent_id, r.item_id, r.raw == r.max ? 1 : 0});
  }
  return out;
}

std::vector<ObservedRate> rates_from_responses(
    const std::vector<Item>& items, std::span<const Response> responses,
    const std::string& frame_id, const std::function<bool(const std::string&)>& include) {
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> tally;
  for (const auto& r : responses) {
    if (!include(r.respondent_id)) continue;
    auto& t = tally[r.item_id];
    t.first += static_cast<std::size_t>(r.score01);
    t.second += 1;
  }
  std::vector<ObservedRate> out;
  for (const auto& item : items) {
    auto it = tally.find(item.item_id);
    if (it == tally.end()) continue;
    out.push_back(make_rate(item.item_id, frame_id, static_cast<double>(it->second.first),
                            it->second.second));
  }
  return out;
}

SubgroupSet build_subgroups(const ItemPool& pool, std::span<const CovariateSpec> specs) {
  if (pool.respondents().empty()) {
    throw SpecError("subgroup construction needs respondent-level data; pool has none");
  }
  const auto known = pool.covariate_names();
  for (const auto& spec : specs) {
    if (std::find(known.begin(), known.end(), spec.name) == known.end()) {
      throw SpecError(fmt::format("covariate '{}' absent from pool", spec.name));
    }
  }

  SubgroupSet set;
  auto refs = pool.frames_of_kind(FrameKind::REFERENCE);
  SubgroupFrame reference;
  if (refs.size() == 1) {
    reference = *refs.front();
  } else {
    reference.frame_id = "all";
    reference.kind = FrameKind::REFERENCE;
    reference.label = pool.info().name.empty() ? "full sample" : pool.info().name + " sample";
    reference.description = "All participants who attempted the item.";
  }
  reference.n_respondents = pool.respondents().size();
  set.frames.push_back(reference);

  auto all_rates = rates_from_responses(pool.items(), pool.responses(), reference.frame_id,
                                        [](const std::string&) { return true; });
  set.rates.insert(set.rates.end(), all_rates.begin(), all_rates.end());

  for (const auto& spec : specs) {
    std::map<std::string, std::unordered_set<std::string>> members;
    for (const auto& r : pool.respondents()) {
      auto it = r.covariates.find(spec.name);
      if (it == r.covariates.end() || it->second.empty()) continue;
      members[it->second].insert(r.respondent_id);
    }
    std::vector<std::string> values = spec.values;
    if (values.empty()) {
      for (const auto& [v, m] : members) values.push_back(v);
    }
    for (const auto& value : values) {
      auto it = members.find(value);
      if (it == members.end() || it->second.empty()) {
        auto msg = fmt::format("focal frame {}={} has no respondents; skipped", spec.name, value);
        log::warning(msg);
        set.warnings.push_back(std::move(msg));
        continue;
      }
      SubgroupFrame focal;
      focal.frame_id = fmt::format("{}/{}={}", reference.frame_id, spec.name, value);
      focal.kind = FrameKind::FOCAL;
      focal.label = fmt::format("{} = {} subgroup", spec.name, value);
      focal.description = reference.description;
      focal.covariate_spec = reference.covariate_spec;
      focal.covariate_spec[spec.name] = value;
      focal.n_respondents = it->second.size();
      focal.reference_id = reference.frame_id;
      const auto& ids = it->second;
      auto rates = rates_from_responses(pool.items(), pool.responses(), focal.frame_id,
                                        [&ids](const std::string& id) { return ids.contains(id); });
      set.rates.insert(set.rates.end(), rates.begin(), rates.end());
      set.pairs.push_back({focal.frame_id, reference.frame_id});
      set.frames.push_back(std::move(focal));
    }
  }
  return set;
}

ItemPool with_subgroups(const ItemPool& pool, const SubgroupSet& subgroups) {
  std::vector<SubgroupFrame> frames = pool.frames();
  for (const auto& f : subgroups.frames) {
    auto it = std::find_if(frames.begin(), frames.end(),
                           [&](const SubgroupFrame& g) { return g.frame_id == f.frame_id; });
    if (it == frames.end()) {
      frames.push_back(f);
    } else {
      *it = f;
    }
  }
  std::unordered_set<std::string> replaced;
  for (const auto& r : subgroups.rates) replaced.insert(rate_key(r.item_id, r.frame_id));
  std::vector<ObservedRate> rates;
  for (const auto& r : pool.rates()) {
    if (!replaced.contains(rate_key(r.item_id, r.frame_id))) rates.push_back(r);
  }
  rates.insert(rates.end(), subgroups.rates.begin(), subgroups.rates.end());
  return ItemPool(pool.info(), pool.items(), std::move(frames), std::move(rates),
                  pool.respondents(), pool.responses());
}

ObservedRate observed_rate(const ItemPool& pool, std::string_view item_id,
                           std::string_view frame_id) {
  if (!pool.find_item(item_id)) throw DataError(fmt::format("unknown item '{}'", item_id));
  if (!pool.find_frame(frame_id)) throw DataError(fmt::format("unknown frame '{}'", frame_id));
  const auto* rate = pool.find_rate(item_id, frame_id);
  if (!rate || rate->attempts == 0) {
    throw NoAttempts(fmt::format("item '{}' has no attempts in frame '{}'", item_id, frame_id));
  }
  return *rate;
}

FilterResult filter_items(const ItemPool& pool, const FilterCriteria& criteria) {
  std::vector<Item> kept;
  std::vector<Exclusion> removed;
  for (const auto& item : pool.items()) {
    std::string reason;
    if (criteria.exclude_visual && item.requires_visual) {
      reason = "requires_visual";
    } else if (criteria.exclude_ambiguous_keys && !item.key_is_unambiguous()) {
      reason = "ambiguous_key";
    } else if (auto n = pool.max_attempts(item.item_id); n < criteria.min_attempts) {
      reason = fmt::format("insufficient_attempts ({} < {})", n, criteria.min_attempts);
    }
    if (reason.empty()) {
      kept.push_back(item);
    } else {
      log::info(fmt::format("filtered item {}: {}", item.item_id, reason));
      removed.push_back({item.item_id, std::move(reason)});
    }
  }
  if (kept.empty()) log::warning("filter removed every item; pool is empty");

  std::unordered_set<std::string> keep_ids;
  for (const auto& i : kept) keep_ids.insert(i.item_id);
  std::vector<ObservedRate> rates;
  for (const auto& r : pool.rates()) {
    if (keep_ids.contains(r.item_id)) rates.push_back(r);
  }
  std::vector<Response> responses;
  for (const auto& r : pool.responses()) {
    if (keep_ids.contains(r.item_id)) responses.push_back(r);
  }
  return {ItemPool(pool.info(), std::move(kept), pool.frames(), std::move(rates),
                   pool.respondents(), std::move(responses)),
          std::move(removed)};
}

std::map<std::string, std::size_t> count_by_domain(const ItemPool& pool) {
  std::map<std::string, std::size_t> counts;
  for (const auto& item : pool.items()) ++counts[item.domain];
  return counts;
}

}  // namespace worldscale
