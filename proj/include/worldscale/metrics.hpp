#pragma once

// Validation statistics: error and correlation metrics over paired
// probability vectors, per-model tables, the subgroup baseline and the
// k-means analysis of group-level performance.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "worldscale/corpus.hpp"
#include "worldscale/parse.hpp"

namespace worldscale {

struct MetricSet {
  std::size_t n = 0;
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> pearson_r;     // absent for n < 2 or a constant vector
  std::optional<double> spearman_rho;  // likewise
};

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> x);

std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

/// Throws DomainError for unequal or zero lengths and values outside [0, 1].
MetricSet compute_metrics(std::span<const double> predicted, std::span<const double> truth);

// ---------------------------------------------------------------------------
// Per-model tables

enum class PairingMode {
  PER_SLOT,       // every OK (task, variant) result is one observation
  ITEM_AVERAGED,  // predictions averaged per task before pairing
};

struct ModelRow {
  std::string model;
  MetricSet metrics;
};

/// Truth keyed by task id.
using TruthTable = std::map<std::string, double, std::less<>>;

/// Metrics per key over OK results. Results with a non-OK status are
/// skipped; an OK result whose task has no truth throws DataError.
std::map<std::string, MetricSet> aggregate_by(
    std::span<const ExtrapolationResult> results, const TruthTable& truth,
    const std::function<std::string(const ExtrapolationResult&)>& key,
    PairingMode mode = PairingMode::PER_SLOT);

/// One row per model with at least one OK result, by MAE ascending (ties
/// by model name).
std::vector<ModelRow> aggregate_by_model(std::span<const ExtrapolationResult> results, const TruthTable& truth,
                                         PairingMode mode = PairingMode::PER_SLOT);

inline constexpr std::string_view kValidationHeader = "Model,N,MAE,RMSE,r_Pearson,r_Spearman";

void write_model_table_csv(std::ostream& out, std::span<const ModelRow> rows);
std::string format_model_table(std::span<const ModelRow> rows);

// ---------------------------------------------------------------------------
// Baseline

struct BaselineRow {
  std::string focal_id;
  MetricSet metrics;
};

struct BaselineSummary {
  std::size_t n_groups = 0;
  double mean_n = 0.0;
  double mean_mae = 0.0;
  double mean_rmse = 0.0;
  std::optional<double> mean_r;    // over frames where r is defined
  std::optional<double> mean_rho;  // likewise
};

struct BaselineTable {
  std::vector<BaselineRow> rows;
  BaselineSummary summary;
};

/// Treats each focal frame's observed rates as predictions of the
/// reference rates on their shared items. Throws DataError when a focal
/// frame shares no item with the reference frame.
BaselineTable baseline_metrics(const ItemPool& pool, std::span<const std::string> focal_ids,
                               const std::string& reference_id);

/// Macro averages over frames (mean n, MAE, RMSE, r, rho).
BaselineSummary summarize_baseline(std::span<const BaselineRow> rows);

inline constexpr std::string_view kBaselineSummaryHeader = "Groups,mean_N,mean_MAE,mean_RMSE,mean_r,mean_rho";

void write_baseline_csv(std::ostream& out, const BaselineTable& table);

/// Fixed-precision rendering used by every report ("NA" when absent).
std::string format_metric(std::optional<double> v, int precision = 6);

// ---------------------------------------------------------------------------
// Cluster analysis

struct GroupFeature {
  std::string group_id;
  double mae = 0.0;
  double pearson_r = 0.0;
};

struct ClusterResult {
  std::vector<int> assignments;                       // per input group
  std::vector<std::array<double, 2>> centroids;       // standardized (mae, r)
  std::vector<std::array<double, 2>> centroids_raw;   // original units
  std::vector<double> objective_history;              // WCSS after each assignment step
  int iterations = 0;
  bool converged = false;
};

/// k-means on z-scored (mae, r) with k-means++ seeding, Lloyd iterations
/// until the assignment stops changing or 100 iterations. Throws
/// DomainError unless 1 <= k <= groups and every feature is finite.
ClusterResult cluster_groups(std::span<const GroupFeature> groups, int k, std::uint64_t seed);

}  // namespace worldscale
