#pragma once

// Sectioned extrapolation prompts and their 27 deterministic paraphrases.
//
// A variant is the triple (order, connective, format) with
// id = 9 * order + 3 * connective + format. Templates use {{field}}
// placeholders; the builtin set can be exported to a directory, edited and
// loaded back (one file per template, "<name>.txt").

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "worldscale/corpus.hpp"

namespace worldscale {

inline constexpr std::string_view kTemplateVersion = "v1";
inline constexpr int kVariantCount = 27;

struct ExtrapolationTask {
  std::string task_id;  // "<item>|<focal frame>|<target frame>"
  std::string pool_name;
  std::string intro;  // pool-level introduction; may be empty
  Item item;
  SubgroupFrame focal;
  std::optional<ObservedRate> focal_rate;
  SubgroupFrame target;  // REFERENCE or WORLD
};

std::string make_task_id(std::string_view item_id, std::string_view focal_id,
                         std::string_view target_id);

/// Builds a task from a pool. `target_id` may name a REFERENCE frame or a
/// WORLD frame; the builtin world frame "world" is used when the pool has no
/// WORLD frame of that id. Throws TaskError for unknown ids.
ExtrapolationTask make_task(const ItemPool& pool, std::string_view item_id,
                            std::string_view focal_id, std::string_view target_id);

/// The frame used for world targets when a pool does not define one.
SubgroupFrame default_world_frame();

enum class Section { INTRO, FOCAL, ITEM, RATE, REFERENCE, INSTRUCTION };

struct PromptSections {
  std::string intro;
  std::string focal_description;
  std::string item_content;
  std::string focal_rate_sentence;
  std::string reference_description;
  std::string instruction;

  const std::string& get(Section s) const;
};

struct VariantSpec {
  int variant_id = 0;
  int order_scheme = 0;
  int connective_scheme = 0;
  int numeric_format = 0;  // 0 shortest percent, 1 one-decimal percent, 2 out of 100
};

/// Mixed-radix decomposition of an id in 0-26. Throws SpecError otherwise.
VariantSpec decode_variant(int variant_id);
int encode_variant(int order, int connective, int format);
std::vector<VariantSpec> enumerate_variants();

/// Section order for an order scheme; the instruction is always last.
const std::array<Section, 6>& section_order(int order_scheme);

// ---------------------------------------------------------------------------
// Templates

class TemplateSet {
 public:
  /// The builtin templates.
  TemplateSet();

  /// Builtins overridden by any "<name>.txt" present in `dir`. Unknown
  /// files are ignored; a missing directory throws DataError.
  static TemplateSet load(const std::filesystem::path& dir);

  void export_to(const std::filesystem::path& dir) const;

  const std::string& get(const std::string& name) const;
  const std::map<std::string, std::string>& all() const { return templates_; }
  /// SHA-256 over the sorted (name, text) pairs.
  std::string digest() const;

 private:
  std::map<std::string, std::string> templates_;
};

/// Replaces every {{field}}. An unknown field or an unterminated
/// placeholder throws SpecError.
std::string render_template(std::string_view text, const std::map<std::string, std::string>& fields);

// ---------------------------------------------------------------------------
// Rendering

/// Focal rate in percent rounded to 0.1 percentage points.
double canonical_percent(double p);
/// Shortest decimal rendering of a canonical percent ("19", "12.3").
std::string format_canonical_percent(double percent);

std::string render_demographics(const SubgroupFrame& frame, const TemplateSet& templates = {});
std::string render_item(const Item& item);
std::string render_rate_sentence(const ObservedRate& rate, const SubgroupFrame& focal, int numeric_format,
                                 const TemplateSet& templates = {});

PromptSections build_sections(const ExtrapolationTask& task, const VariantSpec& variant,
                              const TemplateSet& templates = {});

/// Full prompt text. Throws TaskError when the task has no focal rate.
std::string assemble_prompt(const ExtrapolationTask& task, const VariantSpec& variant,
                            const TemplateSet& templates = {});

}  // namespace worldscale
