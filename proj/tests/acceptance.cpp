// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Runs offline.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "oracles.hpp"
#include "support.hpp"
#include "worldscale/log.hpp"
#include "worldscale/metrics.hpp"
#include "worldscale/parse.hpp"
#include "worldscale/pipeline.hpp"
#include "worldscale/prompts.hpp"
#include "worldscale/scales.hpp"
#include "worldscale/synth.hpp"

namespace ws = worldscale;
namespace wp = worldscale::pipeline;
namespace fs = std::filesystem;
using wstest::Gen;
using wstest::TempDir;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 -------------------------------------------------------------------------
Outcome transform_round_trip() {
  Outcome o;
  Gen gen(101);
  double worst = 0.0;
  for (double base : {2.0, 10.0, 31.95}) {
    for (auto conv : {ws::LevelConvention::offset(base), ws::LevelConvention::plain(base)}) {
      for (int i = 0; i < 1000; ++i) {
        const double level = gen.uniform(0.5, 6.0);
        const double back = ws::probability_to_level(ws::level_to_probability(level, conv), conv);
        worst = std::max(worst, std::abs(back - level));
      }
    }
  }
  o.require(worst <= 1e-12, fmt::format("max |L' - L| = {:.3g}", worst));
  if (o.pass) o.detail = fmt::format("6000 round trips, max error {:.2g}", worst);
  return o;
}

// 2 -------------------------------------------------------------------------
Outcome ols_oracle() {
  Outcome o;
  Gen gen(202);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    // a random subset of at least two theoretical levels
    std::vector<int> levels;
    while (levels.size() < 2) {
      levels.clear();
      for (int l = 1; l <= 5; ++l) {
        if (gen.uniform(0, 1) < 0.6) levels.push_back(l);
      }
    }
    std::vector<ws::LevelMeans> means;
    std::vector<double> x, y, w;
    for (int l : levels) {
      const double mean = gen.uniform(-2.0, 9.0);
      const auto count = static_cast<std::size_t>(gen.integer(1, 40));
      means.push_back({l, mean, count});
      x.push_back(l);
      y.push_back(mean);
      w.push_back(static_cast<double>(count));
    }
    const bool weighted = trial % 2 == 1;
    const auto fit = ws::fit_base(means, weighted ? ws::MeansWeighting::COUNT_WEIGHTED : ws::MeansWeighting::UNWEIGHTED);
    const auto ref = wstest::cramer_ols(x, y, weighted ? w : std::vector<double>{});
    if (!fit.slope) {
      o.require(false, fmt::format("trial {}: no slope", trial));
      break;
    }
    worst = std::max({worst, std::abs(*fit.slope - ref.slope), std::abs(fit.intercept - ref.intercept)});
    if (ref.r_defined) {
      o.require(fit.r_squared.has_value(), fmt::format("trial {}: r2 missing", trial));
      if (fit.r_squared) worst = std::max(worst, std::abs(*fit.r_squared - ref.r_squared));
    }
  }
  o.require(worst <= 1e-9, fmt::format("max deviation {:.3g}", worst));
  if (o.pass) o.detail = fmt::format("1000 datasets, max deviation {:.2g}", worst);
  return o;
}

// 3 -------------------------------------------------------------------------
Outcome base_recovery() {
  Outcome o;
  double worst = 0.0;
  int fits = 0;
  for (double truth : {2.0, 10.0, 30.0}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      TempDir dir;
      ws::SynthSpec spec;
      for (const auto& g : ws::default_dimension_groups()) spec.groups.push_back({g, truth});
      spec.items_per_level = 40;
      spec.respondents_n = 1000;
      spec.noise = ws::NoiseModel::BINOMIAL;
      spec.seed = seed;
      wp::run_synth(spec, dir / "pool");

      wp::RunOptions run;
      run.tasks.target = wp::Target::WORLD;
      run.variants = {static_cast<int>(seed % ws::kVariantCount)};
      run.provider.oracle_seed = seed;
      wp::run_extrapolation(dir / "pool", run, dir / "run");

      const auto cal = wp::run_calibrate(dir / "run" / "parsed.csv", dir / "pool", {}, dir / "cal");
      for (const auto& g : cal.groups) {
        const auto base = g.fit.base();
        if (!base) {
          o.require(false, fmt::format("B*={} seed {} {}: uncalibrated", truth, seed, g.group.name));
          continue;
        }
        const double rel = std::abs(*base / truth - 1.0);
        worst = std::max(worst, rel);
        o.require(rel <= 0.10, fmt::format("B*={} seed {} {}: B = {:.4g}", truth, seed, g.group.name, *base));
        ++fits;
      }
    }
  }
  if (o.pass) o.detail = fmt::format("{} group fits, max relative error {:.2g}", fits, worst);
  return o;
}

// 4 -------------------------------------------------------------------------
Outcome published_table() {
  Outcome o;
  const auto rows = wp::read_fixture_table(wstest::fixture("published_table.csv"));
  o.require(rows.size() == 9, fmt::format("{} rows in the fixture", rows.size()));
  const ws::RegimeThresholds thresholds{10.0, 2.5};
  const auto checks = wp::check_fixture_table(rows, 0.005, thresholds);
  double worst = 0.0;
  for (const auto& c : checks) {
    // direct route, independent of the library check
    const double dev = std::abs(std::log10(c.row.base) - c.row.slope);
    worst = std::max(worst, dev);
    o.require(dev <= 0.005, fmt::format("{}: |log10 B - m| = {:.4f}", c.row.dimension, dev));
    o.require(c.within_tolerance, fmt::format("{}: library check failed", c.row.dimension));
    o.require(c.label_matches, fmt::format("{}: regime label '{}' not reproduced", c.row.dimension, c.row.label));
  }
  if (o.pass) o.detail = fmt::format("9 rows, max |log10 B - m| = {:.4f}", worst);
  return o;
}

// 5 -------------------------------------------------------------------------
Outcome metric_correctness() {
  Outcome o;
  std::size_t cases = 0;
  for (int n = 2; n <= 5; ++n) {
    std::vector<double> x(n), y(n);
    std::iota(x.begin(), x.end(), 1.0);
    std::iota(y.begin(), y.end(), 1.0);
    do {
      const auto rho = ws::spearman(x, y);
      o.require(rho && std::abs(*rho - wstest::brute_spearman(x, y)) <= 1e-12,
                fmt::format("permutation case n={} disagrees", n));
      ++cases;
    } while (std::next_permutation(y.begin(), y.end()));
  }
  Gen gen(505);
  for (int t = 0; t < 50; ++t) {
    const int n = gen.integer(4, 12);
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = gen.integer(0, 3);  // few distinct values: ties guaranteed
      y[i] = gen.integer(0, 4);
    }
    x[0] = x[1];
    const auto rho = ws::spearman(x, y);
    const auto rx = wstest::count_ranks(x), ry = wstest::count_ranks(y);
    const bool constant = std::all_of(rx.begin(), rx.end(), [&](double r) { return r == rx[0]; }) ||
                          std::all_of(ry.begin(), ry.end(), [&](double r) { return r == ry[0]; });
    if (constant) {
      o.require(!rho, "constant ranks should give no rho");
    } else {
      o.require(rho && std::abs(*rho - wstest::brute_spearman(x, y)) <= 1e-12, fmt::format("tie case {}", t));
    }
    ++cases;
  }
  double worst_inv = 0.0;
  for (int t = 0; t < 200; ++t) {
    auto x = gen.vec(20, 0, 1), y = gen.vec(20, 0, 1);
    const double a = gen.uniform(0.1, 50), b = gen.uniform(-10, 10), c = gen.uniform(0.1, 50), d = gen.uniform(-10, 10);
    std::vector<double> xs(x.size()), ys(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xs[i] = a * x[i] + b;
      ys[i] = c * y[i] + d;
    }
    const auto r0 = ws::pearson(x, y), r1 = ws::pearson(xs, ys);
    worst_inv = std::max(worst_inv, std::abs(*r0 - *r1));
  }
  o.require(worst_inv <= 1e-12, fmt::format("Pearson scale/shift deviation {:.3g}", worst_inv));
  for (int t = 0; t < 1000; ++t) {
    const auto n = static_cast<std::size_t>(gen.integer(1, 30));
    const auto m = ws::compute_metrics(gen.vec(n, 0, 1), gen.vec(n, 0, 1));
    o.require(m.rmse + 1e-15 >= m.mae, fmt::format("RMSE < MAE on vector {}", t));
  }
  if (o.pass) {
    o.detail = fmt::format("{} rank cases, Pearson invariance {:.2g}, 1000 RMSE>=MAE", cases, worst_inv);
  }
  return o;
}

// 6 -------------------------------------------------------------------------
Outcome parser_fidelity() {
  Outcome o;
  const auto corpus = wstest::load_parser_corpus();
  o.require(corpus.size() >= 20, "fewer than 20 fixtures");
  std::size_t correct = 0, malformed = 0;
  for (const auto& c : corpus) {
    const auto text = c.at("text").get<std::string>();
    const auto expected = ws::parse_parse_status(c.at("status").get<std::string>());
    const auto got = ws::extract_percentage(text);
    bool ok = got.status == expected;
    if (expected == ws::ParseStatus::OK) {
      ok = ok && got.probability && std::abs(*got.probability - c.at("p").get<double>()) <= 1e-12;
    } else {
      ++malformed;
      ok = ok && !got.probability;
    }
    o.require(ok, fmt::format("fixture '{}': got {}", c.at("id").get<std::string>(), ws::to_string(got.status)));
    correct += ok;
  }
  if (o.pass) o.detail = fmt::format("{}/{} fixtures ({} malformed, all non-OK)", correct, corpus.size(), malformed);
  return o;
}

// 7 -------------------------------------------------------------------------
Outcome variant_integrity() {
  Outcome o;
  const auto pool = wstest::pisa_pool();
  const auto task = ws::make_task(pool, "M124Q01", "pisa", "world");
  const auto variants = ws::enumerate_variants();
  o.require(variants.size() == 27, "enumerate_variants size");
  std::vector<std::string> first, second;
  for (const auto& v : variants) first.push_back(ws::assemble_prompt(task, v));
  for (const auto& v : variants) second.push_back(ws::assemble_prompt(task, v));
  o.require(first == second, "rendering is not deterministic");
  o.require(std::set<std::string>(first.begin(), first.end()).size() == 27, "rendered prompts are not distinct");
  const auto facts = wstest::factual_numbers(first.front());
  for (std::size_t i = 0; i < first.size(); ++i) {
    o.require(wstest::factual_numbers(first[i]) == facts, fmt::format("variant {} changes the numbers", i));
    for (const auto& fact : {task.item.stem, task.item.key, task.focal.description, pool.info().intro}) {
      std::size_t hits = 0;
      for (auto p = first[i].find(fact); p != std::string::npos; p = first[i].find(fact, p + 1)) ++hits;
      o.require(hits == 1, fmt::format("variant {} repeats or drops a fact", i));
    }
  }
  // byte-exact across independent invocations of the prompts stage
  TempDir dir;
  ws::SynthSpec spec;
  spec.groups = {{ws::default_dimension_groups()[0], 10.0}};
  spec.items_per_level = 1;
  wp::run_synth(spec, dir / "pool");
  wp::PromptOptions po;
  po.tasks.target = wp::Target::WORLD;
  wp::run_prompts(dir / "pool", po, dir / "a");
  wp::run_prompts(dir / "pool", po, dir / "b");
  const auto a = wstest::slurp(dir / "a" / "prompts.jsonl");
  o.require(!a.empty() && a == wstest::slurp(dir / "b" / "prompts.jsonl"), "prompts.jsonl differs between runs");
  if (o.pass) o.detail = "27 distinct prompts, identical numbers and facts, byte-exact reruns";
  return o;
}

// 8 -------------------------------------------------------------------------
struct PipelineRun {
  std::map<std::string, std::string> reports;
  std::size_t first_calls = 0;
  std::size_t resume_calls = 0;
  std::size_t slots = 0;
};

PipelineRun run_pipeline(const fs::path& dir, std::optional<std::size_t> interrupt_at) {
  ws::SynthSpec spec;
  spec.groups = {{ws::default_dimension_groups()[2], 10.0}};
  spec.items_per_level = 1;
  spec.noise = ws::NoiseModel::BINOMIAL;
  spec.seed = 8;
  wp::run_synth(spec, dir / "pool");
  const auto pool = wp::load_pool_dir(dir / "pool");
  auto truth = std::make_shared<const ws::OracleTruth>(pool, ws::read_world_truth(dir / "pool" / "truth.csv"));

  PipelineRun out;
  wp::RunOptions run;
  run.tasks.target = wp::Target::WORLD;
  run.threads = 4;
  if (interrupt_at) {
    auto oracle = ws::make_oracle_provider("mock", truth);
    run.provider.mock_override = oracle;
    run.slot_limit = interrupt_at;
    wp::run_extrapolation(dir / "pool", run, dir / "run");
    out.first_calls = oracle->calls();
    run.slot_limit.reset();
  }
  auto oracle = ws::make_oracle_provider("mock", truth);
  run.provider.mock_override = oracle;
  const auto done = wp::run_extrapolation(dir / "pool", run, dir / "run");
  out.resume_calls = oracle->calls();
  out.slots = done.batch.slots.size();

  // the final reports are rebuilt from the cache after deleting the parsed results
  fs::remove(dir / "run" / "parsed.csv");
  wp::run_reparse(dir / "run", dir / "run");
  wp::run_validate(dir / "run" / "parsed.csv", dir / "pool", {}, dir / "val");
  wp::run_calibrate(dir / "run" / "parsed.csv", dir / "pool", {}, dir / "cal");
  wp::run_report({dir / "val", dir / "cal"}, dir / "report");
  for (const char* f : {"val/validation.csv", "val/validation.txt", "val/groups.csv", "cal/calibration.csv",
                        "cal/level_means.csv", "cal/series.csv", "cal/calibration.svg", "report/report.txt"}) {
    out.reports[f] = wstest::slurp(dir / f);
  }
  return out;
}

Outcome determinism_resume() {
  Outcome o;
  TempDir one, two;
  const auto interrupted = run_pipeline(one.path(), 60);
  const auto straight = run_pipeline(two.path(), std::nullopt);
  o.require(interrupted.slots == 135, fmt::format("{} slots, expected 135", interrupted.slots));
  o.require(interrupted.first_calls == 60, fmt::format("{} calls before the interrupt", interrupted.first_calls));
  o.require(interrupted.resume_calls == 75, fmt::format("{} calls on resume", interrupted.resume_calls));
  o.require(straight.resume_calls == 135, fmt::format("{} calls in the uninterrupted run", straight.resume_calls));
  for (const auto& [name, text] : interrupted.reports) {
    o.require(!text.empty(), fmt::format("{} is empty", name));
    o.require(text == straight.reports.at(name), fmt::format("{} differs between runs", name));
  }
  if (o.pass) o.detail = "135 slots; 60 + 75 provider calls; 8 report files bit-identical";
  return o;
}

// 9 -------------------------------------------------------------------------
Outcome dominance_levels() {
  Outcome o;
  Gen gen(909);
  std::vector<ws::Item> items(200);
  for (std::size_t i = 0; i < items.size(); ++i) {
    items[i].item_id = fmt::format("it{}", i);
    for (auto d : ws::all_dimensions()) items[i].demands.set(d, gen.integer(0, 5));
  }
  for (const auto& g : ws::default_dimension_groups()) {
    const auto kept = ws::dominance_filter(items, g);
    std::vector<std::string> got, want;
    for (const auto* it : kept) got.push_back(it->item_id);
    for (const auto& it : items) {
      if (wstest::brute_dominated(it.demands, g)) want.push_back(it.item_id);
    }
    o.require(got == want, fmt::format("group {}: filter differs from brute force", g.name));
  }
  using D = ws::Dimension;
  auto level_of = [](std::vector<std::pair<D, int>> levels, std::vector<D> dims) {
    ws::DemandProfile p;
    for (auto [d, l] : levels) p.set(d, l);
    return ws::group_effective_level(p, {"g", std::move(dims)});
  };
  o.require(level_of({{D::VO, 4}}, {D::VO}) == 4.0, "singleton");
  for (int a = 1; a <= 5; ++a) {
    for (int b = 1; b <= 5; ++b) {
      const double closed = 2.0 * a * b / (a + b);
      o.require(std::abs(level_of({{D::QLl, a}, {D::QLq, b}}, {D::QLl, D::QLq}) - closed) <= 1e-12,
                fmt::format("pair ({}, {})", a, b));
    }
  }
  for (int v = 1; v <= 5; ++v) {
    o.require(std::abs(level_of({{D::KNa, v}, {D::KNc, v}, {D::KNf, v}}, {D::KNa, D::KNc, D::KNf}) - v) <= 1e-12,
              fmt::format("equal values {}", v));
  }
  if (o.pass) o.detail = "9 groups x 200 items match brute force; singleton, 25 pairs, equal values";
  return o;
}

// 10 ------------------------------------------------------------------------
Outcome cluster_analysis() {
  Outcome o;
  Gen gen(1010);
  std::vector<ws::GroupFeature> groups;
  std::vector<int> truth;
  for (int i = 0; i < 20; ++i) {
    const bool good = i % 2 == 0;
    groups.push_back({fmt::format("g{}", i), (good ? 0.03 : 0.15) + gen.uniform(-0.01, 0.01),
                      (good ? 0.95 : 0.45) + gen.uniform(-0.03, 0.03)});
    truth.push_back(good ? 0 : 1);
  }
  const auto a = ws::cluster_groups(groups, 2, 7);
  const auto b = ws::cluster_groups(groups, 2, 7);
  const bool same = a.assignments == truth;
  std::vector<int> flipped(truth.size());
  std::transform(truth.begin(), truth.end(), flipped.begin(), [](int c) { return 1 - c; });
  o.require(same || a.assignments == flipped, "partition not recovered");
  o.require(a.assignments == b.assignments && a.centroids == b.centroids &&
                a.objective_history == b.objective_history,
            "not deterministic");
  for (std::size_t i = 1; i < a.objective_history.size(); ++i) {
    o.require(a.objective_history[i] <= a.objective_history[i - 1] + 1e-12, "objective increased");
  }
  if (o.pass) o.detail = fmt::format("partition recovered in {} iterations", a.iterations);
  return o;
}

}  // namespace

int main() {
  ws::log::set_min_level(ws::log::Level::Error);
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "transform round-trip", 1.0, transform_round_trip},
      {2, "OLS oracle equivalence", 5.0, ols_oracle},
      {3, "synthetic base recovery", 60.0, base_recovery},
      {4, "published-table consistency", 1.0, published_table},
      {5, "metric correctness", 5.0, metric_correctness},
      {6, "parser fidelity", 1.0, parser_fidelity},
      {7, "variant integrity", 5.0, variant_integrity},
      {8, "end-to-end determinism and resumability", 60.0, determinism_resume},
      {9, "dominance filter and group levels", 1.0, dominance_levels},
      {10, "cluster analysis", 1.0, cluster_analysis},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = fmt::format("exception: {}", e.what());
    }
    const double elapsed = seconds_since(t0);
    if (o.pass && elapsed > c.budget_s) {
      o.pass = false;
      o.detail = fmt::format("took {:.2f} s, budget {:.0f} s", elapsed, c.budget_s);
    }
    failed += !o.pass;
    std::cout << fmt::format("[{}] {:>2}. {} ({:.2f} s): {}\n", o.pass ? "PASS" : "FAIL", c.id, c.name, elapsed,
                             o.detail)
              << std::flush;
  }
  std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
