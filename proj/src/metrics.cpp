#include "worldscale/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <fmt/core.h>

#include "worldscale/errors.hpp"

namespace worldscale {

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("pearson: vectors differ in length");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("spearman: vectors differ in length");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

MetricSet compute_metrics(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) {
    throw DomainError(fmt::format("predicted has {} values, truth has {}", predicted.size(), truth.size()));
  }
  if (predicted.empty()) throw DomainError("metrics need at least one pair");
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!(predicted[i] >= 0.0 && predicted[i] <= 1.0) || !(truth[i] >= 0.0 && truth[i] <= 1.0)) {
      throw DomainError(fmt::format("pair {} ({}, {}) outside [0, 1]", i, predicted[i], truth[i]));
    }
  }
  MetricSet m;
  m.n = predicted.size();
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < m.n; ++i) {
    const double d = predicted[i] - truth[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  m.mae = abs_sum / static_cast<double>(m.n);
  m.rmse = std::sqrt(sq_sum / static_cast<double>(m.n));
  m.pearson_r = pearson(predicted, truth);
  m.spearman_rho = spearman(predicted, truth);
  return m;
}

// ---------------------------------------------------------------------------

std::map<std::string, MetricSet> aggregate_by(
    std::span<const ExtrapolationResult> results, const TruthTable& truth,
    const std::function<std::string(const ExtrapolationResult&)>& key, PairingMode mode) {
  struct Acc {
    std::vector<std::string> tasks;  // PER_SLOT: one entry per result
    std::vector<double> predicted;
    std::map<std::string, std::pair<double, std::size_t>> by_task;  // ITEM_AVERAGED
  };
  std::map<std::string, Acc> acc;
  for (const auto& r : results) {
    if (r.status != ParseStatus::OK || !r.predicted_p) continue;
    if (truth.find(r.task_id) == truth.end()) {
      throw DataError(fmt::format("no ground truth for task '{}'", r.task_id));
    }
    auto& a = acc[key(r)];
    if (mode == PairingMode::PER_SLOT) {
      a.tasks.push_back(r.task_id);
      a.predicted.push_back(*r.predicted_p);
    } else {
      auto& t = a.by_task[r.task_id];
      t.first += *r.predicted_p;
      t.second += 1;
    }
  }

  std::map<std::string, MetricSet> out;
  for (auto& [k, a] : acc) {
    if (mode == PairingMode::ITEM_AVERAGED) {
      for (const auto& [task, t] : a.by_task) {
        a.tasks.push_back(task);
        a.predicted.push_back(t.first / static_cast<double>(t.second));
      }
    }
    std::vector<double> observed;
    observed.reserve(a.tasks.size());
    for (const auto& task : a.tasks) observed.push_back(truth.find(task)->second);
    out[k] = compute_metrics(a.predicted, observed);
  }
  return out;
}

std::vector<ModelRow> aggregate_by_model(std::span<const ExtrapolationResult> results, const TruthTable& truth,
                                         PairingMode mode) {
  auto by = aggregate_by(results, truth, [](const ExtrapolationResult& r) { return r.model_name; }, mode);
  std::vector<ModelRow> rows;
  for (auto& [model, m] : by) rows.push_back({model, m});
  std::stable_sort(rows.begin(), rows.end(), [](const ModelRow& a, const ModelRow& b) {
    if (a.metrics.mae != b.metrics.mae) return a.metrics.mae < b.metrics.mae;
    return a.model < b.model;
  });
  return rows;
}

std::string format_metric(std::optional<double> v, int precision) {
  if (!v) return "NA";
  // Avoid "-0.000000" so reports compare byte for byte.
  double x = *v;
  if (std::abs(x) < 0.5 * std::pow(10.0, -precision)) x = 0.0;
  return fmt::format("{:.{}f}", x, precision);
}

void write_model_table_csv(std::ostream& out, std::span<const ModelRow> rows) {
  out << kValidationHeader << '\n';
  for (const auto& r : rows) {
    out << r.model << ',' << r.metrics.n << ',' << format_metric(r.metrics.mae) << ','
        << format_metric(r.metrics.rmse) << ',' << format_metric(r.metrics.pearson_r) << ','
        << format_metric(r.metrics.spearman_rho) << '\n';
  }
}

std::string format_model_table(std::span<const ModelRow> rows) {
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.model.size());
  std::string out = fmt::format("{:<{}}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}\n", "Model", width, "N", "MAE", "RMSE",
                                "r", "rho");
  for (const auto& r : rows) {
    out += fmt::format("{:<{}}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}\n", r.model, width, r.metrics.n,
                       format_metric(r.metrics.mae, 3), format_metric(r.metrics.rmse, 3),
                       format_metric(r.metrics.pearson_r, 3), format_metric(r.metrics.spearman_rho, 3));
  }
  return out;
}

// ---------------------------------------------------------------------------

BaselineSummary summarize_baseline(std::span<const BaselineRow> rows) {
  BaselineSummary s;
  s.n_groups = rows.size();
  if (rows.empty()) return s;
  double sum_r = 0.0, sum_rho = 0.0;
  std::size_t n_r = 0, n_rho = 0;
  for (const auto& row : rows) {
    s.mean_n += static_cast<double>(row.metrics.n);
    s.mean_mae += row.metrics.mae;
    s.mean_rmse += row.metrics.rmse;
    if (row.metrics.pearson_r) sum_r += *row.metrics.pearson_r, ++n_r;
    if (row.metrics.spearman_rho) sum_rho += *row.metrics.spearman_rho, ++n_rho;
  }
  const double g = static_cast<double>(rows.size());
  s.mean_n /= g;
  s.mean_mae /= g;
  s.mean_rmse /= g;
  if (n_r) s.mean_r = sum_r / static_cast<double>(n_r);
  if (n_rho) s.mean_rho = sum_rho / static_cast<double>(n_rho);
  return s;
}

BaselineTable baseline_metrics(const ItemPool& pool, std::span<const std::string> focal_ids,
                               const std::string& reference_id) {
  if (!pool.find_frame(reference_id)) throw DataError(fmt::format("unknown reference frame '{}'", reference_id));
  BaselineTable table;
  for (const auto& focal : focal_ids) {
    if (!pool.find_frame(focal)) throw DataError(fmt::format("unknown focal frame '{}'", focal));
    std::vector<double> predicted, truth;
    for (const auto& item : pool.items()) {
      const auto* f = pool.find_rate(item.item_id, focal);
      const auto* r = pool.find_rate(item.item_id, reference_id);
      if (!f || !r || f->attempts == 0 || r->attempts == 0) continue;
      predicted.push_back(f->p);
      truth.push_back(r->p);
    }
    if (predicted.empty()) {
      throw DataError(fmt::format("frames '{}' and '{}' share no observed item", focal, reference_id));
    }
    table.rows.push_back({focal, compute_metrics(predicted, truth)});
  }
  table.summary = summarize_baseline(table.rows);
  return table;
}

void write_baseline_csv(std::ostream& out, const BaselineTable& table) {
  out << "Group,N,MAE,RMSE,r_Pearson,r_Spearman\n";
  for (const auto& r : table.rows) {
    out << r.focal_id << ',' << r.metrics.n << ',' << format_metric(r.metrics.mae) << ','
        << format_metric(r.metrics.rmse) << ',' << format_metric(r.metrics.pearson_r) << ','
        << format_metric(r.metrics.spearman_rho) << '\n';
  }
  const auto& s = table.summary;
  out << '\n' << kBaselineSummaryHeader << '\n';
  out << s.n_groups << ',' << format_metric(s.mean_n, 3) << ',' << format_metric(s.mean_mae) << ','
      << format_metric(s.mean_rmse) << ',' << format_metric(s.mean_r) << ',' << format_metric(s.mean_rho) << '\n';
}

// ---------------------------------------------------------------------------

namespace {

using Point = std::array<double, 2>;

double sq_dist(const Point& a, const Point& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

// Uniform in [0, 1) from the top 53 bits, identical on every platform.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t nearest(const Point& p, const std::vector<Point>& centroids) {
  std::size_t best = 0;
  double best_d = sq_dist(p, centroids[0]);
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double d = sq_dist(p, centroids[c]);
    if (d < best_d) best_d = d, best = c;
  }
  return best;
}

}  // namespace

ClusterResult cluster_groups(std::span<const GroupFeature> groups, int k, std::uint64_t seed) {
  const std::size_t n = groups.size();
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw DomainError(fmt::format("k = {} must lie in 1..{} (number of groups)", k, n));
  }
  for (const auto& g : groups) {
    if (!std::isfinite(g.mae) || !std::isfinite(g.pearson_r)) {
      throw DomainError(fmt::format("group '{}' has a non-finite feature", g.group_id));
    }
  }

  std::array<double, 2> mean{}, sd{};
  for (const auto& g : groups) mean[0] += g.mae, mean[1] += g.pearson_r;
  mean[0] /= static_cast<double>(n);
  mean[1] /= static_cast<double>(n);
  for (const auto& g : groups) {
    sd[0] += (g.mae - mean[0]) * (g.mae - mean[0]);
    sd[1] += (g.pearson_r - mean[1]) * (g.pearson_r - mean[1]);
  }
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n));

  std::vector<Point> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double raw[2] = {groups[i].mae, groups[i].pearson_r};
    for (int f = 0; f < 2; ++f) z[i][f] = sd[f] > 0.0 ? (raw[f] - mean[f]) / sd[f] : raw[f] - mean[f];
  }

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  std::vector<Point> centroids;
  centroids.push_back(z[std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)))]);
  std::vector<double> d2(n);
  while (centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = sq_dist(z[i], centroids[nearest(z[i], centroids)]);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double cum = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        cum += d2[i];
        if (cum > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
    }
    centroids.push_back(z[pick]);
  }

  ClusterResult result;
  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = static_cast<int>(nearest(z[i], centroids));
      if (c != assign[i]) changed = true, assign[i] = c;
      wcss += sq_dist(z[i], centroids[static_cast<std::size_t>(c)]);
    }
    result.objective_history.push_back(wcss);
    result.iterations = iter + 1;
    if (!changed) {
      result.converged = true;
      break;
    }
    std::vector<Point> sums(centroids.size(), Point{0.0, 0.0});
    std::vector<std::size_t> counts(centroids.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto c = static_cast<std::size_t>(assign[i]);
      sums[c][0] += z[i][0];
      sums[c][1] += z[i][1];
      ++counts[c];
    }
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      centroids[c] = {sums[c][0] / static_cast<double>(counts[c]), sums[c][1] / static_cast<double>(counts[c])};
    }
  }

  result.assignments = assign;
  result.centroids = centroids;
  for (const auto& c : centroids) {
    Point raw;
    for (int f = 0; f < 2; ++f) raw[f] = (sd[f] > 0.0 ? c[f] * sd[f] : c[f]) + mean[f];
    result.centroids_raw.push_back(raw);
  }
  return result;
}

}  // namespace worldscale
