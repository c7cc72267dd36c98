#include "worldscale/prompts.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "worldscale/digest.hpp"
#include "worldscale/errors.hpp"

namespace worldscale {
namespace {

const std::map<std::string, std::string>& builtin_templates() {
  static const std::map<std::string, std::string> t = {
      {"intro.default", "We have human results on this question from the {{pool_name}} test administration."},

      {"demographics.covariates", "This group consists of the test takers with {{covariates}}."},
      {"demographics.size", "{{n}} test takers were assessed in this group."},
      {"demographics.world",
       "The target population is the whole world population in 2025: a randomly sampled human worldwide, "
       "of any age, country, language and schooling, answering the same question under similar exam "
       "conditions."},

      {"item_intro.c0", "Consider the following question that was asked to all these test takers:"},
      {"item_intro.c1", "These test takers were given the following question:"},
      {"item_intro.c2", "Here is the question they answered:"},

      {"reference_lead.c0", "The population of interest is described as follows."},
      {"reference_lead.c1", "We now want to estimate the success rate of a target population."},
      {"reference_lead.c2", "Now think about a second, broader group of people."},

      {"instruction_lead.c0", "Please estimate the success rate for this population."},
      {"instruction_lead.c1", "Taking all of the above into account:"},
      {"instruction_lead.c2", "Your task is the following."},

      {"rate.f0", "This question had a {{rate}}% success rate in the {{label}}."},
      {"rate.f1", "In the {{label}}, the success rate on this question was {{rate}}%."},
      {"rate.f2", "In the {{label}}, {{rate}} out of every 100 test takers answered this question correctly."},

      {"factors.world",
       "(i) the global age distribution, (ii) education access and quality, (iii) forgetting after "
       "schooling, (iv) fluid and crystallised ability trajectories over the lifespan, (v) specialization "
       "and exposure for domain knowledge, (vi) health and cognitive decline, and (vii) language factors"},
      {"instruction.world",
       "How would you translate this success rate in the {{focal_label}} to the percentage of success that "
       "the whole world population would achieve under similar exam conditions? Account for {{factors}}. "
       "Given these factors and how they affect this question, what is the probability that a randomly "
       "sampled human worldwide in 2025 would answer correctly? Give a short rationale, then a single "
       "percentage at the end."},
      {"instruction.reference",
       "How would you translate this success rate in the {{focal_label}} to the percentage of success in "
       "the {{target_label}}? Account for how the {{target_label}} differs from the {{focal_label}} in age, "
       "education, country, language and any other relevant characteristic. What is the probability that "
       "a randomly chosen member of the {{target_label}} would answer correctly? Give a short rationale, "
       "then a single percentage at the end."},
  };
  return t;
}

std::string frame_label(const SubgroupFrame& frame) {
  return frame.label.empty() ? frame.frame_id : frame.label;
}

std::string join_covariates(const std::map<std::string, std::string>& spec) {
  std::vector<std::string> parts;
  for (const auto& [name, value] : spec) parts.push_back(fmt::format("{} = {}", name, value));
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += (i + 1 == parts.size()) ? " and " : ", ";
    out += parts[i];
  }
  return out;
}

}  // namespace

std::string make_task_id(std::string_view item_id, std::string_view focal_id, std::string_view target_id) {
  return fmt::format("{}|{}|{}", item_id, focal_id, target_id);
}

SubgroupFrame default_world_frame() {
  SubgroupFrame w;
  w.frame_id = "world";
  w.kind = FrameKind::WORLD;
  w.label = "whole world population";
  return w;
}

ExtrapolationTask make_task(const ItemPool& pool, std::string_view item_id, std::string_view focal_id,
                            std::string_view target_id) {
  const Item* item = pool.find_item(item_id);
  if (!item) throw TaskError(fmt::format("unknown item '{}'", item_id));
  const SubgroupFrame* focal = pool.find_frame(focal_id);
  if (!focal) throw TaskError(fmt::format("unknown focal frame '{}'", focal_id));
  if (focal->kind == FrameKind::WORLD) {
    throw TaskError(fmt::format("frame '{}' is a WORLD frame and has no observed rates", focal_id));
  }

  ExtrapolationTask task;
  task.task_id = make_task_id(item_id, focal_id, target_id);
  task.pool_name = pool.info().name;
  task.intro = pool.info().intro;
  task.item = *item;
  task.focal = *focal;
  if (const ObservedRate* r = pool.find_rate(item_id, focal_id)) task.focal_rate = *r;

  if (const SubgroupFrame* target = pool.find_frame(target_id)) {
    if (target->kind == FrameKind::FOCAL) {
      throw TaskError(fmt::format("target frame '{}' must be REFERENCE or WORLD", target_id));
    }
    task.target = *target;
  } else if (target_id == default_world_frame().frame_id) {
    task.target = default_world_frame();
  } else {
    throw TaskError(fmt::format("unknown target frame '{}'", target_id));
  }
  return task;
}

const std::string& PromptSections::get(Section s) const {
  switch (s) {
    case Section::INTRO: return intro;
    case Section::FOCAL: return focal_description;
    case Section::ITEM: return item_content;
    case Section::RATE: return focal_rate_sentence;
    case Section::REFERENCE: return reference_description;
    case Section::INSTRUCTION: return instruction;
  }
  return instruction;
}

VariantSpec decode_variant(int variant_id) {
  if (variant_id < 0 || variant_id >= kVariantCount) {
    throw SpecError(fmt::format("variant id {} outside 0-{}", variant_id, kVariantCount - 1));
  }
  return {variant_id, variant_id / 9, (variant_id / 3) % 3, variant_id % 3};
}

int encode_variant(int order, int connective, int format) {
  for (int v : {order, connective, format}) {
    if (v < 0 || v > 2) throw SpecError(fmt::format("variant component {} outside 0-2", v));
  }
  return 9 * order + 3 * connective + format;
}

std::vector<VariantSpec> enumerate_variants() {
  std::vector<VariantSpec> out;
  for (int id = 0; id < kVariantCount; ++id) out.push_back(decode_variant(id));
  return out;
}

const std::array<Section, 6>& section_order(int order_scheme) {
  using S = Section;
  static const std::array<std::array<Section, 6>, 3> orders = {{
      {S::INTRO, S::FOCAL, S::ITEM, S::RATE, S::REFERENCE, S::INSTRUCTION},
      {S::INTRO, S::ITEM, S::FOCAL, S::RATE, S::REFERENCE, S::INSTRUCTION},
      {S::INTRO, S::FOCAL, S::REFERENCE, S::ITEM, S::RATE, S::INSTRUCTION},
  }};
  if (order_scheme < 0 || order_scheme > 2) {
    throw SpecError(fmt::format("order scheme {} outside 0-2", order_scheme));
  }
  return orders[static_cast<std::size_t>(order_scheme)];
}

// ---------------------------------------------------------------------------

TemplateSet::TemplateSet() : templates_(builtin_templates()) {}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError(fmt::format("template directory {} does not exist", dir.string()));
  }
  TemplateSet set;
  for (auto& [name, text] : set.templates_) {
    auto file = dir / (name + ".txt");
    if (!std::filesystem::exists(file)) continue;
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot read {}", file.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    if (text.empty()) throw DataError(fmt::format("{}: template is empty", file.string()));
  }
  return set;
}

void TemplateSet::export_to(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : templates_) {
    auto file = dir / (name + ".txt");
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write {}", file.string()));
    out << text << '\n';
  }
}

const std::string& TemplateSet::get(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw SpecError(fmt::format("no template named '{}'", name));
  return it->second;
}

std::string TemplateSet::digest() const {
  std::string blob;
  for (const auto& [name, text] : templates_) {
    blob += name;
    blob.push_back('\0');
    blob += text;
    blob.push_back('\0');
  }
  return sha256_hex(blob);
}

std::string render_template(std::string_view text, const std::map<std::string, std::string>& fields) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    auto open = text.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      return out;
    }
    auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) {
      throw SpecError(fmt::format("unterminated placeholder in template at offset {}", open));
    }
    out.append(text.substr(pos, open - pos));
    std::string key(text.substr(open + 2, close - open - 2));
    auto it = fields.find(key);
    if (it == fields.end()) throw SpecError(fmt::format("template uses unknown field '{}'", key));
    out += it->second;
    pos = close + 2;
  }
}

// ---------------------------------------------------------------------------

double canonical_percent(double p) { return std::round(p * 1000.0) / 10.0; }

std::string format_canonical_percent(double percent) {
  auto s = fmt::format("{:.1f}", percent);
  if (s.size() > 2 && s.compare(s.size() - 2, 2, ".0") == 0) s.resize(s.size() - 2);
  return s;
}

std::string render_demographics(const SubgroupFrame& frame, const TemplateSet& templates) {
  if (frame.kind == FrameKind::WORLD) {
    if (!frame.description.empty()) return frame.description;
    return templates.get("demographics.world");
  }
  std::vector<std::string> parts;
  if (!frame.description.empty()) parts.push_back(frame.description);
  if (!frame.covariate_spec.empty()) {
    parts.push_back(render_template(templates.get("demographics.covariates"),
                                    {{"covariates", join_covariates(frame.covariate_spec)}}));
  }
  if (parts.empty()) {
    throw TaskError(fmt::format("frame '{}' has neither a description nor a covariate spec", frame.frame_id));
  }
  if (frame.description.empty() && frame.n_respondents) {
    parts.push_back(
        render_template(templates.get("demographics.size"), {{"n", std::to_string(*frame.n_respondents)}}));
  }
  std::string out = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) out += " " + parts[i];
  return out;
}

std::string render_item(const Item& item) {
  std::string out = "Question: " + item.stem;
  if (!item.options.empty()) {
    out += "\nOptions:";
    for (std::size_t i = 0; i < item.options.size(); ++i) {
      out += fmt::format("\n{}) {}", static_cast<char>('A' + i % 26), item.options[i]);
    }
  }
  out += "\nCorrect answer: " + item.key;
  return out;
}

std::string render_rate_sentence(const ObservedRate& rate, const SubgroupFrame& focal, int numeric_format,
                                 const TemplateSet& templates) {
  const double pct = canonical_percent(rate.p);
  std::string value;
  switch (numeric_format) {
    case 0:
    case 2: value = format_canonical_percent(pct); break;
    case 1: value = fmt::format("{:.1f}", pct); break;
    default: throw SpecError(fmt::format("numeric format {} outside 0-2", numeric_format));
  }
  return render_template(templates.get(fmt::format("rate.f{}", numeric_format)),
                         {{"rate", value}, {"label", frame_label(focal)}});
}

PromptSections build_sections(const ExtrapolationTask& task, const VariantSpec& variant,
                              const TemplateSet& templates) {
  if (!task.focal_rate) {
    throw TaskError(fmt::format("task '{}' has no observed rate for focal frame '{}'", task.task_id,
                                task.focal.frame_id));
  }
  const auto c = std::to_string(variant.connective_scheme);

  PromptSections s;
  s.intro = !task.intro.empty()
                ? task.intro
                : render_template(templates.get("intro.default"),
                                  {{"pool_name", task.pool_name.empty() ? "this" : task.pool_name}});
  s.focal_description = render_demographics(task.focal, templates);
  s.item_content = templates.get("item_intro.c" + c) + "\n" + render_item(task.item);
  s.focal_rate_sentence = render_rate_sentence(*task.focal_rate, task.focal, variant.numeric_format, templates);
  s.reference_description =
      templates.get("reference_lead.c" + c) + " " + render_demographics(task.target, templates);

  std::string body;
  if (task.target.kind == FrameKind::WORLD) {
    body = render_template(templates.get("instruction.world"),
                           {{"focal_label", frame_label(task.focal)}, {"factors", templates.get("factors.world")}});
  } else {
    body = render_template(templates.get("instruction.reference"),
                           {{"focal_label", frame_label(task.focal)}, {"target_label", frame_label(task.target)}});
  }
  s.instruction = templates.get("instruction_lead.c" + c) + " " + body;
  return s;
}

std::string assemble_prompt(const ExtrapolationTask& task, const VariantSpec& variant,
                            const TemplateSet& templates) {
  const auto sections = build_sections(task, variant, templates);
  std::string out;
  for (Section s : section_order(variant.order_scheme)) {
    if (!out.empty()) out += "\n\n";
    out += sections.get(s);
  }
  return out;
}

}  // namespace worldscale
