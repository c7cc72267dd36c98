#include "worldscale/scales.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "worldscale/errors.hpp"

namespace worldscale {

LevelConvention::LevelConvention(LevelKind kind, double base) : kind_(kind), base_(base) {
  if (!(base > 1.0) || !std::isfinite(base)) {
    throw DomainError(fmt::format("level base must be finite and > 1, got {}", base));
  }
}

double level_to_probability(double level, const LevelConvention& convention) {
  if (!(level >= 0.0)) throw DomainError(fmt::format("level must be >= 0, got {}", level));
  const double log_base = std::log(convention.base());
  double exponent = -level * log_base;
  if (convention.kind() == LevelKind::OFFSET) exponent += 0.5 * log_base;
  return std::clamp(std::exp(exponent), 0.0, 1.0);
}

double probability_to_level(double p, const LevelConvention& convention) {
  if (p == 0.0) throw InfiniteDifficulty("success probability 0 has no finite difficulty level");
  if (!(p > 0.0 && p <= 1.0)) {
    throw DomainError(fmt::format("success probability {} outside (0, 1]", p));
  }
  const double level = -std::log(p) / std::log(convention.base());
  return convention.kind() == LevelKind::OFFSET ? level + 0.5 : level;
}

// ---------------------------------------------------------------------------

const std::vector<DimensionGroup>& default_dimension_groups() {
  using D = Dimension;
  static const std::vector<DimensionGroup> groups = {
      {"Volume", {D::VO}},
      {"Attention & Scan", {D::AS}},
      {"Metacognition", {D::MCr, D::MCt, D::MCu}},
      {"Knowledge", {D::KNa, D::KNc, D::KNf, D::KNn, D::KNs}},
      {"Conceptualisation", {D::CL}},
      {"Atypicality", {D::AT}},
      {"Quantitative & Logical Reasoning", {D::QLl, D::QLq}},
      {"Comprehension & Expression", {D::CEc, D::CEe}},
      {"Spatial Reasoning", {D::SNs}},
  };
  return groups;
}

std::vector<DimensionGroup> load_dimension_groups(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(fmt::format("{}: invalid JSON ({})", path.string(), e.what()));
  }
  if (!j.contains("groups") || !j["groups"].is_array()) {
    throw DataError(fmt::format("{}: expected a 'groups' array", path.string()));
  }
  std::vector<DimensionGroup> groups;
  for (const auto& g : j["groups"]) {
    if (!g.contains("name") || !g.contains("dimensions") || !g["dimensions"].is_array()) {
      throw DataError(fmt::format("{}: group needs 'name' and 'dimensions'", path.string()));
    }
    DimensionGroup group{g["name"].get<std::string>(), {}};
    for (const auto& code : g["dimensions"]) {
      auto d = parse_dimension(code.get<std::string>());
      if (!d) {
        throw DataError(fmt::format("{}: unknown dimension '{}' in group '{}'", path.string(),
                                    code.get<std::string>(), group.name));
      }
      group.dimensions.push_back(*d);
    }
    if (group.dimensions.empty()) {
      throw DataError(fmt::format("{}: group '{}' is empty", path.string(), group.name));
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

bool is_dominated_by(const DemandProfile& demands, const DimensionGroup& group) {
  if (group.dimensions.empty()) throw DomainError("dimension group is empty");
  int group_max = 0;
  for (auto d : group.dimensions) group_max = std::max(group_max, demands.level(d));
  return group_max >= demands.max_level();
}

std::vector<const Item*> dominance_filter(std::span<const Item> items, const DimensionGroup& group) {
  if (group.dimensions.empty()) throw DomainError(fmt::format("dimension group '{}' is empty", group.name));
  std::vector<const Item*> kept;
  for (const auto& item : items) {
    if (is_dominated_by(item.demands, group)) kept.push_back(&item);
  }
  return kept;
}

double group_effective_level(const DemandProfile& demands, const DimensionGroup& group) {
  if (group.dimensions.empty()) throw DomainError("dimension group is empty");
  if (group.dimensions.size() == 1) return demands.level(group.dimensions.front());
  double reciprocal_sum = 0.0;
  std::size_t positive = 0;
  for (auto d : group.dimensions) {
    if (int l = demands.level(d); l > 0) {
      reciprocal_sum += 1.0 / l;
      ++positive;
    }
  }
  return positive ? static_cast<double>(positive) / reciprocal_sum : 0.0;
}

// ---------------------------------------------------------------------------

std::vector<LevelMeans> level_means(std::span<const LevelPoint> points) {
  if (points.empty()) throw DomainError("level_means needs at least one point");
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& p : points) {
    if (p.level < 1 || p.level > kMaxDemandLevel) {
      throw DomainError(fmt::format("theoretical level {} outside 1-{}", p.level, kMaxDemandLevel));
    }
    auto& a = acc[p.level];
    a.first += p.empirical;
    a.second += 1;
  }
  std::vector<LevelMeans> out;
  for (const auto& [level, a] : acc) {
    out.push_back({level, a.first / static_cast<double>(a.second), a.second});
  }
  return out;
}

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::HIGH: return "HIGH";
    case Regime::STANDARD: return "STANDARD";
    case Regime::INVARIANT: return "INVARIANT";
    case Regime::UNCALIBRATABLE: return "UNCALIBRATABLE";
  }
  return "UNCALIBRATABLE";
}

std::optional<double> CalibrationFit::base() const {
  if (!slope) return std::nullopt;
  return std::pow(10.0, *slope);
}

LineFit ordinary_least_squares(std::span<const double> x, std::span<const double> y,
                               std::span<const double> weights) {
  if (x.size() != y.size()) throw DomainError("x and y differ in length");
  if (!weights.empty() && weights.size() != x.size()) throw DomainError("weights differ in length");
  if (x.size() < 2) throw DomainError("least squares needs at least two points");
  auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (w(i) < 0.0) throw DomainError("negative weight");
    sw += w(i);
    sx += w(i) * x[i];
    sy += w(i) * y[i];
  }
  if (!(sw > 0.0)) throw DomainError("weights sum to zero");
  const double mx = sx / sw;
  const double my = sy / sw;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += w(i) * dx * dx;
    sxy += w(i) * dx * dy;
    syy += w(i) * dy * dy;
  }
  if (!(sxx > 0.0)) throw DomainError("least squares needs spread in x");

  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (syy > 0.0) {
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = y[i] - (fit.intercept + fit.slope * x[i]);
      ss_res += w(i) * r * r;
    }
    fit.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return fit;
}

Regime classify_base(double base, const RegimeThresholds& thresholds) {
  if (!(base > 1.0)) return Regime::UNCALIBRATABLE;
  if (base > thresholds.high) return Regime::HIGH;
  if (base > thresholds.invariant_upper) return Regime::STANDARD;
  return Regime::INVARIANT;
}

Regime classify_regime(const CalibrationFit& fit, const RegimeThresholds& thresholds) {
  if (!fit.slope || *fit.slope <= 0.0) return Regime::UNCALIBRATABLE;
  return classify_base(*fit.base(), thresholds);
}

CalibrationFit fit_base(std::span<const LevelMeans> means, MeansWeighting weighting,
                        const RegimeThresholds& thresholds) {
  CalibrationFit fit;
  fit.n_levels = means.size();
  if (means.size() < 2) return fit;

  std::vector<double> x, y, w;
  for (const auto& m : means) {
    x.push_back(m.level);
    y.push_back(m.mean_emp_level);
    w.push_back(weighting == MeansWeighting::COUNT_WEIGHTED ? static_cast<double>(m.count) : 1.0);
  }
  auto line = ordinary_least_squares(x, y, w);
  fit.slope = line.slope;
  fit.intercept = line.intercept;
  fit.r_squared = line.r_squared;
  fit.regime = classify_regime(fit, thresholds);
  return fit;
}

double affine_align(double theoretical_level, const CalibrationFit& fit) {
  if (!fit.calibrated() || !fit.slope) {
    throw DomainError("affine alignment needs a calibrated fit");
  }
  return *fit.slope * theoretical_level + fit.intercept;
}

// ---------------------------------------------------------------------------

double smooth_probability(double p, std::size_t sample_n, const SmoothingPolicy& policy) {
  if (p != 0.0) return p;
  switch (policy.kind) {
    case SmoothingPolicy::Kind::NONE:
      return p;
    case SmoothingPolicy::Kind::FIXED:
      if (!(policy.p_min > 0.0 && policy.p_min <= 1.0)) {
        throw DomainError(fmt::format("smoothing floor {} outside (0, 1]", policy.p_min));
      }
      return policy.p_min;
    case SmoothingPolicy::Kind::HALF_OVER_N:
      if (sample_n == 0) throw DomainError("1/(2n) smoothing needs a sample size");
      return 1.0 / (2.0 * static_cast<double>(sample_n));
  }
  return p;
}

std::vector<GroupCalibration> calibrate_groups(std::span<const Item> items,
                                               std::span<const ItemEstimate> estimates,
                                               std::span<const DimensionGroup> groups,
                                               const CalibrationOptions& options) {
  std::unordered_map<std::string, const ItemEstimate*> by_item;
  for (const auto& e : estimates) by_item[e.item_id] = &e;

  std::vector<GroupCalibration> out;
  for (const auto& group : groups) {
    GroupCalibration cal;
    cal.group = group;
    std::vector<LevelPoint> points;
    for (const Item* item : dominance_filter(items, group)) {
      auto it = by_item.find(item->item_id);
      if (it == by_item.end()) continue;
      const double effective = group_effective_level(item->demands, group);
      const int level = static_cast<int>(std::lround(effective));
      if (level < 1) continue;
      const double p = smooth_probability(it->second->p_world, it->second->sample_n, options.smoothing);
      const double empirical = probability_to_level(p, options.convention);
      cal.points.push_back({item->item_id, effective, level, empirical});
      points.push_back({level, empirical});
    }
    cal.n_items = cal.points.size();
    if (!points.empty()) cal.means = level_means(points);
    cal.fit = fit_base(cal.means, options.weighting, options.thresholds);
    out.push_back(std::move(cal));
  }
  return out;
}

}  // namespace worldscale
