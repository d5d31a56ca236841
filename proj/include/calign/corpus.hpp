#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace calign {

inline constexpr int kCorpusSchemaVersion = 1;

enum class ScaleKind { ordinal, categorical };

struct Scale {
  ScaleKind kind = ScaleKind::ordinal;
  int size = 2;        // q for ordinal, k for categorical
  int max_select = 1;  // always 1 for ordinal

  bool is_ordinal() const noexcept { return kind == ScaleKind::ordinal; }
  bool operator==(const Scale&) const = default;
};

/// Selected option indices, 1-based, in the order given. An empty selection is
/// the unclassifiable answer, serialized as 0.
struct Answer {
  std::vector<int> choices;

  static Answer unclassifiable() { return {}; }
  static Answer single(int index) { return Answer{{index}}; }

  bool is_unclassifiable() const noexcept { return choices.empty(); }
  bool operator==(const Answer&) const = default;
};

/// Order-insensitive comparison used for categorical matching.
bool same_selection(const Answer& a, const Answer& b);

nlohmann::json answer_to_json(const Answer& a, const Scale& scale);
Answer answer_from_json(const nlohmann::json& j);

using LangMap = std::map<std::string, std::string>;

struct Question {
  std::string id;
  std::string theme;
  Scale scale;
  LangMap text;          // closed-style rendering (options usually embedded)
  LangMap reverse_text;  // reverse-order rendering, when the corpus provides one
  LangMap open_text;     // open-ended proposition
  std::map<std::string, std::vector<std::string>> options;
  std::vector<int> reversal;  // reversal[i - 1] is the image of option i
  bool list_options = false;  // append numbered labels to the closed text
  bool reversed = false;      // set on the reverse-order variant

  int reverse_index(int option) const;
  bool operator==(const Question&) const = default;
};

enum class Dimension { pdi, idv, mas, uai, lto, ivr };
inline constexpr std::array<Dimension, 6> kDimensions = {Dimension::pdi, Dimension::idv, Dimension::mas,
                                                         Dimension::uai, Dimension::lto, Dimension::ivr};

std::string_view dimension_name(Dimension d);  // "pdi"
std::optional<Dimension> parse_dimension(std::string_view name);

struct HofstedeTerm {
  double weight = 0;
  int plus = 0;   // 1-based question position
  int minus = 0;
  bool operator==(const HofstedeTerm&) const = default;
};

struct DimensionFormula {
  std::array<HofstedeTerm, 2> terms{};
  double constant = 0;
  bool operator==(const DimensionFormula&) const = default;
};

struct HofstedeSpec {
  std::map<Dimension, DimensionFormula> formulas;

  /// VSM 2013 wiring with every constant at zero.
  static HofstedeSpec standard();
  bool operator==(const HofstedeSpec&) const = default;
};

/// Renders e.g. "PDI = 35*(m7 - m2) + 25*(m20 - m23) + C_PDI".
std::string expand_formula(Dimension d, const DimensionFormula& f);

struct IndicatorLoading {
  double traditional_secular = 0;
  double survival_selfexpr = 0;
  double mean = 0;
  double sd = 1;
  // Categorical indicators score a selection as the sum of these.
  std::vector<double> option_scores;
  bool operator==(const IndicatorLoading&) const = default;
};

struct ProjectionSpec {
  std::map<std::string, IndicatorLoading> loadings;
  bool operator==(const ProjectionSpec&) const = default;
};

/// Per-language prompt fragments a corpus may override. Empty maps fall back
/// to the built-in English defaults in the prompting layer.
struct PromptAssets {
  LangMap persona_template;
  LangMap closed_instruction;
  LangMap closed_instruction_multi;
  LangMap forced_open_instruction;
  LangMap unconstrained_instruction;
  std::map<std::string, std::vector<std::string>> numeric_markers;
  bool operator==(const PromptAssets&) const = default;
};

struct SurveyBank {
  std::string name;  // wvs | hofstede | custom
  std::vector<Question> questions;
  std::optional<HofstedeSpec> hofstede_spec;
  std::optional<ProjectionSpec> projection;
  PromptAssets assets;

  const Question& question(std::string_view id) const;
  const Question* find(std::string_view id) const;
  /// 1-based position of a question in the bank.
  int position_of(std::string_view id) const;
  bool operator==(const SurveyBank&) const = default;
};

SurveyBank parse_survey_bank(const nlohmann::json& j);
SurveyBank load_survey_bank(const std::filesystem::path& path);
nlohmann::json survey_bank_to_json(const SurveyBank& bank);
/// Canonical text form; stable across load/serialize cycles.
std::string canonical_text(const SurveyBank& bank);
std::string corpus_hash(const SurveyBank& bank);

/// Reverse-order variant: labels permuted by the reversal, closed text swapped
/// with the reverse rendering where one exists. Applying it twice is identity.
Question reverse_question(const Question& q);

struct GroundTruthSet {
  std::string country;
  std::string language;
  std::map<std::string, Answer> answers;
  std::map<Dimension, double> hofstede_official;
  std::optional<std::pair<double, double>> iw_position;  // (x, y)
};

GroundTruthSet parse_ground_truth(const nlohmann::json& j, const SurveyBank* bank = nullptr);
GroundTruthSet load_ground_truth(const std::filesystem::path& path, const SurveyBank* bank = nullptr);
nlohmann::json ground_truth_to_json(const GroundTruthSet& gt);
const Answer& ground_truth_for(const GroundTruthSet& gt, std::string_view qid);

struct Persona {
  std::string region;
  std::string country;
  std::string sex;
  int age = 0;
  std::string social_class;
  std::string education;
  std::string marital_status;
  // Fills "{nationality}" in open-ended propositions that mention it.
  std::string nationality;
};

void validate_persona(const Persona& p);
Persona persona_from_json(const nlohmann::json& j);
nlohmann::json persona_to_json(const Persona& p);

/// The best-aligned persona configuration: married male aged 35 with higher
/// education and upper middle class standing.
Persona default_persona(std::string country, std::string region, std::string nationality = {});

}  // namespace calign
