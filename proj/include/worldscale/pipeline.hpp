#pragma once

// Stage functions behind the CLI. Every stage reads declared files, writes
// its outputs into one directory and records a run manifest there.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "worldscale/corpus.hpp"
#include "worldscale/llm.hpp"
#include "worldscale/metrics.hpp"
#include "worldscale/parse.hpp"
#include "worldscale/prompts.hpp"
#include "worldscale/scales.hpp"
#include "worldscale/synth.hpp"

namespace worldscale::pipeline {

namespace fs = std::filesystem;

enum class Target { REFERENCE, WORLD };

Target parse_target(std::string_view text);
std::string_view to_string(Target t);

struct TaskSelection {
  Target target = Target::REFERENCE;
  std::vector<std::string> focal_ids;  // empty: every eligible frame
  std::vector<std::string> item_ids;   // empty: every item
  std::optional<std::size_t> max_tasks;
};

/// REFERENCE: one task per (item, focal frame with a rate), targeting the
/// frame's reference. WORLD: one task per (item, reference frame with a
/// rate), targeting the world frame. Ordered by item, then frame.
std::vector<ExtrapolationTask> build_tasks(const ItemPool& pool, const TaskSelection& selection);

/// Canonical pool without respondent-level responses when rates.csv exists.
ItemPool load_pool_dir(const fs::path& dir);

/// Splits "item|focal|target".
struct TaskKey {
  std::string item_id;
  std::string focal_id;
  std::string target_id;
};
TaskKey split_task_id(const std::string& task_id);

// ---------------------------------------------------------------------------

struct SynthOutcome {
  SynthPool synth;
  fs::path manifest;
};

SynthOutcome run_synth(const SynthSpec& spec, const fs::path& out, const fs::path& manifest = {});

struct IngestOptions {
  SourceDescriptor source;
  FilterCriteria filter;
  std::vector<CovariateSpec> subgroups;  // empty: keep the pool's own frames
};

struct IngestOutcome {
  ItemPool pool;
  std::vector<Exclusion> removed;
  std::vector<std::string> warnings;
  fs::path manifest;
};

IngestOutcome run_ingest(const IngestOptions& options, const fs::path& out, const fs::path& manifest = {});

struct PromptOptions {
  TaskSelection tasks;
  std::vector<int> variants;  // empty: all 27
  std::optional<fs::path> template_dir;
};

/// Dry run: writes prompts.jsonl and returns the number of prompts.
std::size_t run_prompts(const fs::path& pool_dir, const PromptOptions& options, const fs::path& out,
                        const fs::path& manifest = {});

struct ProviderSetup {
  enum class Kind { MOCK, CONFIG } kind = Kind::MOCK;
  fs::path config_path;      // CONFIG
  std::string mock_model = "oracle";
  double oracle_sigma = 0.0;  // MOCK
  std::uint64_t oracle_seed = 0;
  /// Replaces the oracle behind the "mock" provider id (instrumentation).
  std::shared_ptr<Provider> mock_override;
  RetryPolicy retry;
};

struct RunOptions {
  TaskSelection tasks;
  std::vector<int> variants;  // empty: all 27
  ProviderSetup provider;
  int threads = 8;
  std::optional<std::size_t> slot_limit;
  std::optional<std::size_t> subsample;  // stratified by item domain
  std::uint64_t seed = 0;
  std::optional<fs::path> template_dir;
};

struct RunOutcome {
  BatchReport batch;
  std::vector<ExtrapolationResult> results;  // OK slots, in slot order
  std::size_t n_tasks = 0;
  std::size_t n_jobs = 0;
  bool transport_failures = false;
  fs::path manifest;
};

/// Resumable: the cache in `out` is reused, so a rerun only queries slots
/// without a cached response. Writes tasks.csv, slots.csv, cache.jsonl,
/// parsed.csv and rationales.jsonl.
RunOutcome run_extrapolation(const fs::path& pool_dir, const RunOptions& options, const fs::path& out,
                             const fs::path& manifest = {});

/// Re-parses the cached responses of a run directory's OK slots into
/// parsed.csv and rationales.jsonl under `out`.
std::vector<ExtrapolationResult> run_reparse(const fs::path& run_dir, const fs::path& out,
                                             const fs::path& manifest = {});

void write_parsed(const fs::path& path, std::span<const ExtrapolationResult> results);
std::vector<ExtrapolationResult> read_parsed(const fs::path& path);

// ---------------------------------------------------------------------------

struct ValidateOptions {
  PairingMode pairing = PairingMode::PER_SLOT;
  std::optional<int> cluster_k;
  std::uint64_t seed = 0;
  std::vector<std::string> models;  // empty: all
};

struct GroupRow {
  std::string model;
  std::string group;
  MetricSet metrics;
};

struct ValidateOutcome {
  std::vector<ModelRow> models;
  std::vector<GroupRow> groups;
  BaselineTable baseline;
  std::vector<GroupFeature> features;
  std::optional<ClusterResult> clusters;
  std::size_t skipped_world = 0;
  fs::path manifest;
};

/// Writes validation.csv, groups.csv, baseline.csv, validation.txt and,
/// with clustering, clusters.csv.
ValidateOutcome run_validate(const fs::path& parsed_csv, const fs::path& pool_dir, const ValidateOptions& options,
                             const fs::path& out, const fs::path& manifest = {});

struct CalibrateOptions {
  CalibrationOptions calibration;
  std::optional<fs::path> grouping;
  std::optional<std::string> model;  // restrict world estimates to one model
};

struct CalibrateOutcome {
  std::vector<ItemEstimate> estimates;
  std::vector<GroupCalibration> groups;
  fs::path manifest;
};

/// World estimate per item = mean of OK predictions on world-target tasks.
/// Writes calibration.csv, level_means.csv, series.csv, calibration.svg and
/// calibration.txt.
CalibrateOutcome run_calibrate(const fs::path& parsed_csv, const fs::path& pool_dir,
                               const CalibrateOptions& options, const fs::path& out,
                               const fs::path& manifest = {});

inline constexpr std::string_view kCalibrationHeader =
    "dimension_group,slope,intercept,base,r_squared,regime,n_items,n_levels";

// ---------------------------------------------------------------------------
// Published-table consistency check

struct FixtureRow {
  std::string dimension;
  double slope = 0.0;
  double intercept = 0.0;
  double base = 0.0;
  double r_squared = 0.0;
  std::string label;  // "High", "Stand." or "Inv."
};

struct FixtureCheck {
  FixtureRow row;
  double log10_base = 0.0;
  double deviation = 0.0;  // |log10(base) - slope|
  bool within_tolerance = false;
  Regime regime = Regime::UNCALIBRATABLE;  // of the printed base
  bool label_matches = false;
};

/// CSV columns: dimension,slope,intercept,base,r_squared,label.
std::vector<FixtureRow> read_fixture_table(const fs::path& path);

std::vector<FixtureCheck> check_fixture_table(std::span<const FixtureRow> rows, double tolerance,
                                              const RegimeThresholds& thresholds);

/// Writes fixture_check.csv; returns true when every row passes.
bool run_fixture_check(const fs::path& fixture_csv, double tolerance, const RegimeThresholds& thresholds,
                       const fs::path& out, const fs::path& manifest = {});

/// Collates validation.txt and calibration.txt from stage directories into
/// report.txt.
fs::path run_report(const std::vector<fs::path>& stage_dirs, const fs::path& out, const fs::path& manifest = {});

}  // namespace worldscale::pipeline
