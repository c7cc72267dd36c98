#include <set>

#include <gtest/gtest.h>

#include "support.hpp"
#include "worldscale/errors.hpp"
#include "worldscale/prompts.hpp"

namespace ws = worldscale;

namespace {

ws::ExtrapolationTask pisa_task() { return ws::make_task(wstest::pisa_pool(), "M124Q01", "pisa", "world"); }

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST(Variants, DecodeEncodeIsABijection) {
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& v : ws::enumerate_variants()) {
    EXPECT_EQ(ws::encode_variant(v.order_scheme, v.connective_scheme, v.numeric_format), v.variant_id);
    seen.insert({v.order_scheme, v.connective_scheme, v.numeric_format});
  }
  EXPECT_EQ(seen.size(), 27u);
  const auto v = ws::decode_variant(14);
  EXPECT_EQ(v.order_scheme, 1);
  EXPECT_EQ(v.connective_scheme, 1);
  EXPECT_EQ(v.numeric_format, 2);
  EXPECT_THROW(ws::decode_variant(27), ws::SpecError);
  EXPECT_THROW(ws::decode_variant(-1), ws::SpecError);
  EXPECT_THROW(ws::encode_variant(3, 0, 0), ws::SpecError);
}

TEST(Variants, InstructionIsAlwaysLast) {
  for (int o = 0; o < 3; ++o) {
    const auto& order = ws::section_order(o);
    EXPECT_EQ(order.back(), ws::Section::INSTRUCTION);
    std::set<ws::Section> uniq(order.begin(), order.end());
    EXPECT_EQ(uniq.size(), 6u);
  }
}

TEST(Prompt, PisaSectionsCarryTheFixtureContent) {
  const auto task = pisa_task();
  EXPECT_EQ(task.task_id, "M124Q01|pisa|world");
  const auto s = ws::build_sections(task, ws::decode_variant(0));
  EXPECT_EQ(s.intro, "We have PISA results from 57 countries (30 OECD + 27 partner countries).");
  EXPECT_TRUE(contains(s.focal_description, "Students aged 15 years 3 months to 16 years 2 months"));
  EXPECT_TRUE(contains(s.item_content, "Bernard knows his pacelength is 0.80 metres."));
  EXPECT_TRUE(contains(s.item_content, "Correct answer: 112 metres per minute; 6.72 km/h"));
  EXPECT_EQ(s.focal_rate_sentence, "This question had a 19% success rate in the PISA sample.");
  EXPECT_TRUE(contains(s.reference_description, "whole world population in 2025"));
  EXPECT_TRUE(contains(s.instruction, "randomly sampled human worldwide in 2025"));
  EXPECT_TRUE(contains(s.instruction, "education access and quality"));
}

TEST(Prompt, NumericFormats) {
  const auto task = pisa_task();
  EXPECT_TRUE(contains(ws::assemble_prompt(task, ws::decode_variant(1)), "19.0%"));
  EXPECT_TRUE(contains(ws::assemble_prompt(task, ws::decode_variant(2)), "19 out of every 100"));
  const auto rate = ws::make_rate("x", "f", 1234, 10000);  // 12.34% rounds to 12.3
  ws::SubgroupFrame f;
  f.label = "group";
  EXPECT_EQ(ws::render_rate_sentence(rate, f, 0), "This question had a 12.3% success rate in the group.");
  EXPECT_THROW(ws::render_rate_sentence(rate, f, 3), ws::SpecError);
  EXPECT_EQ(ws::format_canonical_percent(ws::canonical_percent(0.005)), "0.5");
}

TEST(Prompt, SectionOrderFollowsTheScheme) {
  const auto task = pisa_task();
  for (const auto& v : ws::enumerate_variants()) {
    const auto text = ws::assemble_prompt(task, v);
    const auto s = ws::build_sections(task, v);
    std::size_t last = 0;
    for (auto sec : ws::section_order(v.order_scheme)) {
      const auto at = text.find(s.get(sec));
      ASSERT_NE(at, std::string::npos);
      EXPECT_GE(at, last);
      last = at;
    }
  }
}

TEST(Prompt, ReferenceTargetsUseTheReferenceInstruction) {
  using namespace ws;
  auto base = wstest::pisa_pool();
  SubgroupFrame girls;
  girls.frame_id = "pisa/sex=F";
  girls.kind = FrameKind::FOCAL;
  girls.reference_id = "pisa";
  girls.label = "female PISA students";
  girls.covariate_spec = {{"sex", "F"}};
  auto frames = base.frames();
  frames.push_back(girls);
  auto rates = base.rates();
  rates.push_back(make_rate("M124Q01", girls.frame_id, 9, 50));
  ItemPool pool(base.info(), base.items(), frames, rates);
  const auto task = make_task(pool, "M124Q01", girls.frame_id, "pisa");
  const auto s = build_sections(task, decode_variant(0));
  EXPECT_TRUE(contains(s.focal_description, "sex = F"));
  EXPECT_TRUE(contains(s.instruction, "in the PISA sample?"));
  EXPECT_FALSE(contains(s.instruction, "worldwide"));
  EXPECT_TRUE(contains(s.focal_rate_sentence, "18%"));
}

TEST(Prompt, UnknownIdsAndMissingRatesAreTaskErrors) {
  const auto pool = wstest::pisa_pool();
  EXPECT_THROW(ws::make_task(pool, "nope", "pisa", "world"), ws::TaskError);
  EXPECT_THROW(ws::make_task(pool, "M124Q01", "world", "world"), ws::TaskError);
  EXPECT_THROW(ws::make_task(pool, "M124Q01", "pisa", "mars"), ws::TaskError);
  auto task = pisa_task();
  task.focal_rate.reset();
  EXPECT_THROW(ws::assemble_prompt(task, ws::decode_variant(0)), ws::TaskError);
}

TEST(Prompt, DefaultIntroNamesThePool) {
  auto task = pisa_task();
  task.intro.clear();
  const auto s = ws::build_sections(task, ws::decode_variant(0));
  EXPECT_TRUE(contains(s.intro, "PISA"));
}

TEST(Templates, RenderSubstitutesAndRejectsUnknownFields) {
  EXPECT_EQ(ws::render_template("a {{x}} b {{y}}", {{"x", "1"}, {"y", "2"}}), "a 1 b 2");
  EXPECT_EQ(ws::render_template("plain", {}), "plain");
  EXPECT_THROW(ws::render_template("a {{z}}", {{"x", "1"}}), ws::SpecError);
  EXPECT_THROW(ws::render_template("a {{x", {{"x", "1"}}), ws::SpecError);
}

TEST(Templates, ExportLoadRoundTripAndOverride) {
  wstest::TempDir dir;
  const ws::TemplateSet builtin;
  builtin.export_to(dir.path());
  const auto back = ws::TemplateSet::load(dir.path());
  EXPECT_EQ(back.digest(), builtin.digest());
  EXPECT_EQ(back.all(), builtin.all());

  wstest::spit(dir / "rate.f0.txt", "Success was {{rate}}% among the {{label}}.\n");
  const auto edited = ws::TemplateSet::load(dir.path());
  EXPECT_NE(edited.digest(), builtin.digest());
  const auto s = ws::build_sections(pisa_task(), ws::decode_variant(0), edited);
  EXPECT_EQ(s.focal_rate_sentence, "Success was 19% among the PISA sample.");

  EXPECT_THROW(ws::TemplateSet::load(dir / "absent"), ws::DataError);
  EXPECT_THROW(builtin.get("no.such"), ws::SpecError);
  wstest::spit(dir / "rate.f1.txt", "\n");
  EXPECT_THROW(ws::TemplateSet::load(dir.path()), ws::DataError);
}

TEST(Templates, RenderingIsDeterministic) {
  const auto task = pisa_task();
  for (const auto& v : ws::enumerate_variants()) {
    EXPECT_EQ(ws::assemble_prompt(task, v), ws::assemble_prompt(task, v));
  }
}
