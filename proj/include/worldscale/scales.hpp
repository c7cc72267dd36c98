#pragma once

// Level/probability transforms and the means-based calibration of
// per-dimension logarithmic bases.
//
// Two level conventions are supported:
//   OFFSET  L = log_B(sqrt(B) / p)   so p(L) = sqrt(B) * B^-L
//   PLAIN   L = -log_B(p)            so p(L) = B^-L
// With B = 10 and OFFSET, level 0.5 is p = 1 and each further level is a
// tenfold rarer success.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "worldscale/corpus.hpp"

namespace worldscale {

enum class LevelKind { OFFSET, PLAIN };

class LevelConvention {
 public:
  /// Throws DomainError unless base > 1.
  LevelConvention(LevelKind kind, double base);

  static LevelConvention offset(double base = 10.0) { return {LevelKind::OFFSET, base}; }
  static LevelConvention plain(double base = 10.0) { return {LevelKind::PLAIN, base}; }

  LevelKind kind() const { return kind_; }
  double base() const { return base_; }

 private:
  LevelKind kind_;
  double base_;
};

/// Success probability at level L (L >= 0), clamped to [0, 1].
double level_to_probability(double level, const LevelConvention& convention);

/// Difficulty level of a success probability in (0, 1]. p == 0 throws
/// InfiniteDifficulty; anything else outside (0, 1] throws DomainError.
double probability_to_level(double p, const LevelConvention& convention);

// ---------------------------------------------------------------------------
// Dimension groups

struct DimensionGroup {
  std::string name;
  std::vector<Dimension> dimensions;
};

/// The nine groups used for calibration reporting.
const std::vector<DimensionGroup>& default_dimension_groups();

/// Parses a grouping file: {"groups": [{"name": ..., "dimensions": [codes]}]}.
std::vector<DimensionGroup> load_dimension_groups(const std::filesystem::path& path);

/// True when the item's bottleneck lies in the group: the max demand over
/// the group's dimensions reaches the max over all dimensions. Ties keep an
/// item in several groups.
bool is_dominated_by(const DemandProfile& demands, const DimensionGroup& group);

/// Items whose bottleneck lies in the group. Throws DomainError for an
/// empty group.
std::vector<const Item*> dominance_filter(std::span<const Item> items, const DimensionGroup& group);

/// The group's level for one item: the dimension's level for singleton
/// groups, otherwise the harmonic mean of the strictly positive levels
/// (0 when all are zero).
double group_effective_level(const DemandProfile& demands, const DimensionGroup& group);

// ---------------------------------------------------------------------------
// Means-based fit

struct LevelPoint {
  int level = 0;            // theoretical (annotated) level, 1-5
  double empirical = 0.0;   // empirical difficulty level
};

struct LevelMeans {
  int level = 0;
  double mean_emp_level = 0.0;
  std::size_t count = 0;
};

/// Mean empirical level per present theoretical level, ascending. Throws
/// DomainError for empty input or levels outside 1-5.
std::vector<LevelMeans> level_means(std::span<const LevelPoint> points);

enum class Regime { HIGH, STANDARD, INVARIANT, UNCALIBRATABLE };

std::string_view to_string(Regime r);

/// B > high -> HIGH; invariant_upper < B <= high -> STANDARD; otherwise
/// INVARIANT. Non-positive slopes are UNCALIBRATABLE.
struct RegimeThresholds {
  double high = 10.0;
  double invariant_upper = 3.0;
};

enum class MeansWeighting { UNWEIGHTED, COUNT_WEIGHTED };

struct CalibrationFit {
  std::optional<double> slope;
  double intercept = 0.0;
  std::optional<double> r_squared;  // absent when the level means are all equal
  Regime regime = Regime::UNCALIBRATABLE;
  std::size_t n_levels = 0;

  bool calibrated() const { return regime != Regime::UNCALIBRATABLE; }
  /// 10^slope; absent without a slope.
  std::optional<double> base() const;
};

/// Least-squares line y = intercept + slope * x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::optional<double> r_squared;
};

/// Weighted ordinary least squares (weights empty = all ones). Throws
/// DomainError for fewer than two points or zero spread in x.
LineFit ordinary_least_squares(std::span<const double> x, std::span<const double> y,
                               std::span<const double> weights = {});

/// OLS of mean empirical level on theoretical level across level means.
/// Fewer than two means yields an UNCALIBRATABLE fit without a slope.
CalibrationFit fit_base(std::span<const LevelMeans> means,
                        MeansWeighting weighting = MeansWeighting::UNWEIGHTED,
                        const RegimeThresholds& thresholds = {});

Regime classify_base(double base, const RegimeThresholds& thresholds = {});
Regime classify_regime(const CalibrationFit& fit, const RegimeThresholds& thresholds = {});

/// slope * level + intercept. Throws DomainError for uncalibrated fits.
double affine_align(double theoretical_level, const CalibrationFit& fit);

// ---------------------------------------------------------------------------
// Whole-group calibration

struct SmoothingPolicy {
  enum class Kind { NONE, FIXED, HALF_OVER_N } kind = Kind::HALF_OVER_N;
  double p_min = 0.0;  // FIXED only
};

struct CalibrationOptions {
  LevelConvention convention = LevelConvention::offset(10.0);
  MeansWeighting weighting = MeansWeighting::UNWEIGHTED;
  RegimeThresholds thresholds;
  SmoothingPolicy smoothing;
};

struct ItemEstimate {
  std::string item_id;
  double p_world = 0.0;
  std::size_t sample_n = 0;  // attempts behind the item, used by HALF_OVER_N
};

struct GroupPoint {
  std::string item_id;
  double effective_level = 0.0;
  int level = 0;
  double empirical = 0.0;
};

struct GroupCalibration {
  DimensionGroup group;
  std::vector<GroupPoint> points;  // dominated items with a level of 1-5
  std::vector<LevelMeans> means;
  CalibrationFit fit;
  std::size_t n_items = 0;
};

/// Applies the floor for p == 0 estimates; passes other values through.
double smooth_probability(double p, std::size_t sample_n, const SmoothingPolicy& policy);

/// Dominance filter, group level (rounded to the nearest integer), empirical
/// difficulty level and means-based fit for every group.
std::vector<GroupCalibration> calibrate_groups(std::span<const Item> items,
                                               std::span<const ItemEstimate> estimates,
                                               std::span<const DimensionGroup> groups,
                                               const CalibrationOptions& options = {});

}  // namespace worldscale
