#include <gtest/gtest.h>

#include "support.hpp"
#include "worldscale/corpus.hpp"
#include "worldscale/errors.hpp"

namespace ws = worldscale;
using wstest::TempDir;

namespace {

ws::ItemPool small_pool() {
  std::vector<ws::Item> items(3);
  for (int i = 0; i < 3; ++i) {
    items[i].item_id = "q" + std::to_string(i);
    items[i].stem = "Question " + std::to_string(i);
    items[i].options = {"alpha", "beta"};
    items[i].key = "beta";
  }
  items[2].requires_visual = true;
  ws::SubgroupFrame all;
  all.frame_id = "all";
  all.kind = ws::FrameKind::REFERENCE;
  all.label = "full sample";
  all.description = "Everyone.";
  std::vector<ws::Respondent> people;
  std::vector<ws::Response> responses;
  const char* sexes[] = {"F", "M"};
  for (int r = 0; r < 40; ++r) {
    ws::Respondent who{"r" + std::to_string(r), {{"sex", sexes[r % 2]}}};
    if (r == 39) who.covariates.clear();  // missing covariate
    people.push_back(who);
    for (int i = 0; i < 3; ++i) {
      // q0: everyone right; q1: women right, men wrong; q2 (visual): nobody right
      const int score = i == 0 ? 1 : i == 1 ? (r % 2 == 0 ? 1 : 0) : 0;
      responses.push_back({who.respondent_id, items[i].item_id, score});
    }
  }
  auto rates = ws::rates_from_responses(items, responses, "all", [](const std::string&) { return true; });
  return ws::ItemPool({"toy", ""}, items, {all}, rates, people, responses);
}

}  // namespace

TEST(DemandProfile, OpenEndedLevelParsesAsFivePlus) {
  EXPECT_EQ(ws::parse_demand_level("5+"), std::make_pair(5, true));
  EXPECT_EQ(ws::parse_demand_level("3"), std::make_pair(3, false));
  EXPECT_THROW(ws::parse_demand_level("6"), ws::DataError);
  EXPECT_THROW(ws::parse_demand_level("x"), ws::DataError);
  ws::DemandProfile p;
  p.set(ws::Dimension::VO, 5, true);
  EXPECT_TRUE(p.open_ended(ws::Dimension::VO));
  EXPECT_EQ(p.max_level(), 5);
  EXPECT_THROW(p.set(ws::Dimension::AS, 4, true), ws::DataError);
}

TEST(DemandProfile, DimensionCodesRoundTrip) {
  for (auto d : ws::all_dimensions()) EXPECT_EQ(ws::parse_dimension(ws::dimension_code(d)), d);
  EXPECT_FALSE(ws::parse_dimension("XX").has_value());
}

TEST(ObservedRate, BinomialStandardError) {
  auto r = ws::make_rate("q", "f", 19, 100);
  EXPECT_DOUBLE_EQ(r.p, 0.19);
  ASSERT_TRUE(r.se.has_value());
  EXPECT_NEAR(*r.se, std::sqrt(0.19 * 0.81 / 100.0), 1e-15);
  EXPECT_FALSE(ws::make_rate("q", "f", 0, 0).se.has_value());
  EXPECT_THROW(ws::make_rate("q", "f", 5, 4), ws::DataError);
}

TEST(ItemPool, RejectsDanglingReferences) {
  ws::Item item;
  item.item_id = "q";
  ws::SubgroupFrame f;
  f.frame_id = "f";
  f.kind = ws::FrameKind::FOCAL;
  f.reference_id = "missing";
  EXPECT_THROW(ws::ItemPool({}, {item}, {f}, {}), ws::DataError);
  ws::SubgroupFrame ref;
  ref.frame_id = "ref";
  ref.kind = ws::FrameKind::REFERENCE;
  EXPECT_THROW(ws::ItemPool({}, {item}, {ref}, {ws::make_rate("nope", "ref", 1, 2)}), ws::DataError);
  EXPECT_THROW(ws::ItemPool({}, {item, item}, {ref}, {}), ws::DataError);
}

TEST(Scoring, FullCreditOnly) {
  std::vector<ws::RawScore> raw = {{"a", "q", 2, 2}, {"b", "q", 1, 2}, {"c", "q", 0, 2}};
  auto r = ws::harmonize_scoring(raw);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].score01, 1);
  EXPECT_EQ(r[1].score01, 0);
  EXPECT_EQ(r[2].score01, 0);
  std::vector<ws::RawScore> bad = {{"a", "q", 3, 2}};
  EXPECT_THROW(ws::harmonize_scoring(bad), ws::DataError);
}

TEST(Subgroups, PartitionsByCovariateAndPairsWithReference) {
  const auto pool = small_pool();
  std::vector<ws::CovariateSpec> specs = {{"sex", {}}};
  const auto set = ws::build_subgroups(pool, specs);
  ASSERT_EQ(set.pairs.size(), 2u);
  const auto merged = ws::with_subgroups(pool, set);
  const auto women = ws::observed_rate(merged, "q1", "all/sex=F");
  const auto men = ws::observed_rate(merged, "q1", "all/sex=M");
  EXPECT_EQ(women.attempts, 20u);
  EXPECT_DOUBLE_EQ(women.p, 1.0);
  EXPECT_EQ(men.attempts, 19u);  // one respondent lacks the covariate
  EXPECT_DOUBLE_EQ(men.p, 0.0);
  EXPECT_EQ(ws::observed_rate(merged, "q1", "all").attempts, 40u);
  EXPECT_EQ(merged.find_frame("all/sex=F")->reference_id, "all");
}

TEST(Subgroups, UnknownCovariateIsASpecError) {
  std::vector<ws::CovariateSpec> specs = {{"income", {}}};
  EXPECT_THROW(ws::build_subgroups(small_pool(), specs), ws::SpecError);
}

TEST(Filter, ExclusionsNameTheirReason) {
  ws::FilterCriteria c;
  c.min_attempts = 30;
  const auto r = ws::filter_items(small_pool(), c);
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(r.removed[0].item_id, "q2");
  EXPECT_EQ(r.removed[0].reason, "requires_visual");
  c.min_attempts = 41;
  const auto all_gone = ws::filter_items(small_pool(), c);
  EXPECT_TRUE(all_gone.pool.items().empty());
  EXPECT_EQ(all_gone.removed.size(), 3u);
}

TEST(Filter, AmbiguousKeysAreFiltered) {
  ws::Item item;
  item.options = {"a", "a", "b"};
  item.key = "a";
  EXPECT_FALSE(item.key_is_unambiguous());
  item.key = "b";
  EXPECT_TRUE(item.key_is_unambiguous());
  item.key = "c";
  EXPECT_FALSE(item.key_is_unambiguous());
}

TEST(CanonicalIo, WriteThenLoadIsLossless) {
  TempDir dir;
  const auto pool = small_pool();
  ws::write_pool(pool, dir.path());
  const auto back = ws::load_item_pool({"canonical", {dir.path()}});
  ASSERT_EQ(back.items().size(), pool.items().size());
  for (std::size_t i = 0; i < pool.items().size(); ++i) {
    EXPECT_EQ(back.items()[i].item_id, pool.items()[i].item_id);
    EXPECT_EQ(back.items()[i].requires_visual, pool.items()[i].requires_visual);
    EXPECT_EQ(back.items()[i].options, pool.items()[i].options);
  }
  EXPECT_EQ(back.responses().size(), pool.responses().size());
  EXPECT_DOUBLE_EQ(back.find_rate("q1", "all")->p, 0.5);
}

TEST(Adapters, WideResponsesBecomeCanonical) {
  TempDir dir;
  nlohmann::json item = {{"id", "i1"},          {"dataset", "ICAR"},       {"stem", "Two plus two?"},
                         {"options", {"3", "4"}}, {"key", "4"},             {"scoring_rule", "exact"},
                         {"requires_visual", false}};
  for (auto d : ws::all_dimensions()) item["demands"][std::string(ws::dimension_code(d))] = 0;
  item["demands"]["QLq"] = "2";
  wstest::spit(dir / "items.jsonl", item.dump() + "\n");
  wstest::spit(dir / "responses_wide.csv", "respondent_id,i1,sex\nr1,1,F\nr2,0,M\nr3,,F\n");
  const auto pool = ws::load_item_pool({"icar", {dir.path()}});
  ASSERT_EQ(pool.items().size(), 1u);
  EXPECT_EQ(pool.items()[0].demands.level(ws::Dimension::QLq), 2);
  const auto* all = pool.find_rate("i1", "all");
  ASSERT_NE(all, nullptr);
  EXPECT_EQ(all->attempts, 2u);
  EXPECT_DOUBLE_EQ(all->p, 0.5);
}

TEST(Adapters, MissingFileNamesThePath) {
  TempDir dir;
  try {
    ws::load_item_pool({"canonical", {dir / "absent"}});
    FAIL() << "expected DataError";
  } catch (const ws::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("absent"), std::string::npos);
  }
  EXPECT_THROW(ws::load_item_pool({"nope", {dir.path()}}), ws::UsageError);
}
