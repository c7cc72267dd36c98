#pragma once

// Synthetic pools with known world success rates, and an oracle provider
// that answers extrapolation prompts with the true target rate.
//
// For group g with true base B and level l, items load on g's dimensions
// at level l (every other dimension below l) and have world success
// probability sqrt(B) * B^-l. The observed sample rate equals that
// probability exactly (NONE) or is the mean of Bernoulli draws over
// `respondents_n` respondents carrying age_band and region covariates
// (BINOMIAL).

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "worldscale/corpus.hpp"
#include "worldscale/llm.hpp"
#include "worldscale/metrics.hpp"
#include "worldscale/scales.hpp"

namespace worldscale {

enum class NoiseModel { NONE, BINOMIAL };

struct SynthGroup {
  DimensionGroup group;
  double true_base = 10.0;
};

struct SynthSpec {
  std::vector<SynthGroup> groups;
  std::size_t items_per_level = 20;
  std::vector<int> levels = {1, 2, 3, 4, 5};
  std::size_t respondents_n = 1000;
  std::uint64_t seed = 1;
  NoiseModel noise = NoiseModel::NONE;
};

inline constexpr std::string_view kSampleFrameId = "sample";
inline constexpr std::string_view kWorldFrameId = "world";

/// Throws SpecError for bases <= 1, zero respondents, empty groups or
/// levels outside 1-5.
void validate(const SynthSpec& spec);

/// JSON: {"groups": [{"name", "dimensions", "true_base"}], "items_per_level",
/// "levels", "respondents_n", "seed", "noise": "none" | "binomial"}.
/// Without "groups", the default grouping is used with "true_base" (default
/// 10) for every group.
SynthSpec load_synth_spec(const std::filesystem::path& path);

struct SynthPool {
  ItemPool pool;
  std::map<std::string, double> world_truth;  // item id -> true world p
  std::vector<std::string> warnings;
};

/// Deterministic given the spec (including its seed).
SynthPool generate_pool(const SynthSpec& spec);

/// Writes the canonical pool plus truth.csv (item_id,frame_id,p).
void write_synth_pool(const SynthPool& synth, const std::filesystem::path& dir);
std::map<std::string, double> read_world_truth(const std::filesystem::path& truth_csv);

/// Ground truth per task id: the world truth for WORLD targets, the
/// observed target-frame rate for REFERENCE targets.
class OracleTruth {
 public:
  OracleTruth(const ItemPool& pool, std::map<std::string, double> world_truth);

  /// Throws TaskError for malformed ids, unknown items and frames, or a
  /// missing rate.
  double truth(const std::string& task_id) const;

 private:
  const ItemPool* pool_;
  std::map<std::string, double> world_truth_;
};

struct OracleOptions {
  double logit_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Response text for a task: a fixed rationale and a terminal
/// "Final answer: X%" with the (optionally perturbed) truth.
std::string oracle_response(const OracleTruth& truth, const std::string& task_id, int variant_id,
                            const OracleOptions& options);

/// The perturbed probability the oracle reports.
double oracle_probability(double p, const std::string& task_id, int variant_id, const OracleOptions& options);

/// An instrumented MockProvider whose responder is the oracle.
std::shared_ptr<MockProvider> make_oracle_provider(std::string provider_id, std::shared_ptr<const OracleTruth> truth,
                                                   OracleOptions options = {});

}  // namespace worldscale
