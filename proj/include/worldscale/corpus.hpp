#pragma once

// Canonical data model for item pools: items with their demand profiles,
// demographic frames, observed success rates and (optionally) respondent
// level responses. Pools are immutable once constructed.

#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace worldscale {

enum class Dimension : std::uint8_t {
  AS, CEc, CEe, CL, MCr, MCt, MCu, MS, QLl, QLq, SNs, KNa, KNc, KNf, KNn, KNs, AT, VO
};

inline constexpr std::size_t kDimensionCount = 18;
inline constexpr int kMaxDemandLevel = 5;

const std::array<Dimension, kDimensionCount>& all_dimensions();
std::string_view dimension_code(Dimension d);
std::optional<Dimension> parse_dimension(std::string_view code);

/// Demand level (0-5) on each of the 18 dimensions. An annotation of "5+"
/// is stored as level 5 with the open-ended flag set.
class DemandProfile {
 public:
  DemandProfile() = default;

  int level(Dimension d) const { return levels_[index(d)]; }
  bool open_ended(Dimension d) const { return open_ended_[index(d)]; }
  void set(Dimension d, int level, bool open_ended = false);
  int max_level() const;

  bool operator==(const DemandProfile&) const = default;

 private:
  static std::size_t index(Dimension d) { return static_cast<std::size_t>(d); }

  std::array<std::uint8_t, kDimensionCount> levels_{};
  std::bitset<kDimensionCount> open_ended_;
};

/// Parses a single annotation ("0".."5" or "5+") into (level, open_ended).
std::pair<int, bool> parse_demand_level(std::string_view text);

enum class SourceDataset { PISA, TIMSS, ICAR, UKBIOBANK, RELIABILITYBENCH, CUSTOM };

std::string_view to_string(SourceDataset d);
SourceDataset parse_source_dataset(std::string_view text);

struct Item {
  std::string item_id;
  SourceDataset source_dataset = SourceDataset::CUSTOM;
  std::string domain;  // e.g. "math", "reading"; free text, may be empty
  std::string stem;
  std::vector<std::string> options;
  std::string key;
  std::string scoring_rule;
  bool requires_visual = false;
  DemandProfile demands;

  /// True when the item has no options, or the key matches exactly one.
  bool key_is_unambiguous() const;
};

enum class FrameKind { FOCAL, REFERENCE, WORLD };

std::string_view to_string(FrameKind k);
FrameKind parse_frame_kind(std::string_view text);

struct SubgroupFrame {
  std::string frame_id;
  FrameKind kind = FrameKind::FOCAL;
  std::string label;        // short name used in rate sentences ("PISA sample")
  std::string description;  // long-form demographic prose
  std::map<std::string, std::string> covariate_spec;
  std::optional<std::size_t> n_respondents;
  std::string reference_id;  // FOCAL frames: the REFERENCE frame they belong to
};

struct ObservedRate {
  std::string item_id;
  std::string frame_id;
  double successes = 0.0;
  std::size_t attempts = 0;
  double p = 0.0;
  std::optional<double> se;  // absent when attempts == 0
};

/// sqrt(p (1 - p) / n); absent for n == 0.
std::optional<double> binomial_se(double p, std::size_t n);

/// Builds a rate from counts. Throws DataError when successes > attempts.
ObservedRate make_rate(std::string item_id, std::string frame_id, double successes,
                       std::size_t attempts);

struct Respondent {
  std::string respondent_id;
  std::map<std::string, std::string> covariates;  // missing values are absent
};

/// One dichotomized answer.
struct Response {
  std::string respondent_id;
  std::string item_id;
  int score01 = 0;
};

struct PoolInfo {
  std::string name;
  std::string intro;  // contextual introduction used at the top of prompts
};

class ItemPool {
 public:
  ItemPool() = default;
  /// Validates cross references; throws DataError naming the bad record.
  ItemPool(PoolInfo info, std::vector<Item> items, std::vector<SubgroupFrame> frames,
           std::vector<ObservedRate> rates, std::vector<Respondent> respondents = {},
           std::vector<Response> responses = {});

  const PoolInfo& info() const { return info_; }
  const std::vector<Item>& items() const { return items_; }
  const std::vector<SubgroupFrame>& frames() const { return frames_; }
  const std::vector<ObservedRate>& rates() const { return rates_; }
  const std::vector<Respondent>& respondents() const { return respondents_; }
  const std::vector<Response>& responses() const { return responses_; }

  const Item* find_item(std::string_view item_id) const;
  const SubgroupFrame* find_frame(std::string_view frame_id) const;
  const ObservedRate* find_rate(std::string_view item_id, std::string_view frame_id) const;
  const Respondent* find_respondent(std::string_view respondent_id) const;

  std::vector<const SubgroupFrame*> frames_of_kind(FrameKind kind) const;
  /// Covariate names present on at least one respondent.
  std::vector<std::string> covariate_names() const;
  /// Largest attempt count recorded for the item in any frame.
  std::size_t max_attempts(std::string_view item_id) const;

 private:
  void build_indexes();

  PoolInfo info_;
  std::vector<Item> items_;
  std::vector<SubgroupFrame> frames_;
  std::vector<ObservedRate> rates_;
  std::vector<Respondent> respondents_;
  std::vector<Response> responses_;

  std::unordered_map<std::string, std::size_t> item_index_;
  std::unordered_map<std::string, std::size_t> frame_index_;
  std::unordered_map<std::string, std::size_t> respondent_index_;
  std::unordered_map<std::string, std::size_t> rate_index_;
};

// ---------------------------------------------------------------------------
// Ingestion

struct SourceDescriptor {
  std::string adapter = "canonical";
  std::vector<std::filesystem::path> paths;
  // false: the canonical adapter skips responses.csv when rates.csv is
  // present (stages that only need rates)
  bool respondent_data = true;
};

using Adapter = std::function<ItemPool(const SourceDescriptor&)>;

/// Registered adapters keyed by dataset name: canonical, icar, ukbiobank,
/// pisa, timss, reliabilitybench.
const std::map<std::string, Adapter, std::less<>>& adapter_registry();

ItemPool load_item_pool(const SourceDescriptor& source);

/// Writes the canonical directory layout (items.jsonl, frames.jsonl,
/// rates.csv, responses.csv when respondent data exists, pool.json).
void write_pool(const ItemPool& pool, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Scoring

inline constexpr std::string_view kHarmonizationPolicy =
    "full-credit-only: score 1 iff raw == max; partial credit collapses to 0";

struct RawScore {
  std::string respondent_id;
  std::string item_id;
  double raw = 0.0;
  double max = 1.0;
};

/// Dichotomizes raw scores. Throws DataError when raw > max or raw < 0.
std::vector<Response> harmonize_scoring(std::span<const RawScore> records);

/// Per-item rates over the respondents accepted by `include`.
std::vector<ObservedRate> rates_from_responses(
    const std::vector<Item>& items, std::span<const Response> responses,
    const std::string& frame_id, const std::function<bool(const std::string&)>& include);

// ---------------------------------------------------------------------------
// Subgroups

struct CovariateSpec {
  std::string name;
  std::vector<std::string> values;  // empty: every observed value
};

struct FramePair {
  std::string focal_id;
  std::string reference_id;
};

struct SubgroupSet {
  std::vector<SubgroupFrame> frames;  // focal frames plus the reference frame
  std::vector<ObservedRate> rates;
  std::vector<FramePair> pairs;
  std::vector<std::string> warnings;
};

/// Partitions respondents by each covariate. Every focal frame is paired
/// with the reference frame containing all respondents who attempted the
/// item; respondents lacking a covariate only drop out of that covariate's
/// focal frames.
SubgroupSet build_subgroups(const ItemPool& pool, std::span<const CovariateSpec> specs);

/// Returns a new pool with the subgroup frames and rates merged in
/// (rates for an existing (item, frame) pair are replaced).
ItemPool with_subgroups(const ItemPool& pool, const SubgroupSet& subgroups);

ObservedRate observed_rate(const ItemPool& pool, std::string_view item_id,
                           std::string_view frame_id);

// ---------------------------------------------------------------------------
// Filtering

struct FilterCriteria {
  std::size_t min_attempts = 30;
  bool exclude_visual = true;
  bool exclude_ambiguous_keys = true;
};

struct Exclusion {
  std::string item_id;
  std::string reason;
};

struct FilterResult {
  ItemPool pool;
  std::vector<Exclusion> removed;
};

FilterResult filter_items(const ItemPool& pool, const FilterCriteria& criteria);

std::map<std::string, std::size_t> count_by_domain(const ItemPool& pool);

}  // namespace worldscale
