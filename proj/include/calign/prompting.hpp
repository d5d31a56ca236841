#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "calign/corpus.hpp"

namespace calign {

enum class ProbingMode { FC, FR, FO, FU };
inline constexpr std::array<ProbingMode, 4> kModes = {ProbingMode::FC, ProbingMode::FR, ProbingMode::FO, ProbingMode::FU};

std::string_view mode_name(ProbingMode m);
std::optional<ProbingMode> parse_mode(std::string_view name);
inline bool is_closed(ProbingMode m) { return m == ProbingMode::FC || m == ProbingMode::FR; }

enum class ExpectedForm { numeric_choice, free_text };

struct Prompt {
  std::string text;
  std::string question_id;
  ProbingMode mode = ProbingMode::FC;
  std::string language;
  std::string country;
  std::string persona_digest;
  ExpectedForm expected_form = ExpectedForm::numeric_choice;
};

/// Built-in English fragments used when a corpus does not override them.
namespace defaults {
inline constexpr std::string_view kPersonaTemplate =
    "Imagine you are a {marital_status} {sex} from {region}, {country}. You are {age} years of age and completed "
    "{education} education level. You consider yourself part of the {social_class}.\n"
    "Answer the following question from this perspective.";
inline constexpr std::string_view kClosedInstruction = "Respond with only the number of your chosen option.";
inline constexpr std::string_view kClosedMultiInstruction =
    "Respond with only the numbers of your chosen options, separated by commas.";
inline constexpr std::string_view kForcedOpenInstruction = "Take a clear stance about it.";
inline constexpr std::string_view kUnconstrainedInstruction = "Feel free to express yourself.";
}  // namespace defaults

std::string persona_digest(const Persona& p);

/// Fills the anthropological preamble for `language`. Throws PromptError when
/// no template exists for the language or a placeholder stays unfilled.
std::string render_persona(const Persona& p, const std::string& language, const PromptAssets& assets = {});

/// Closed-style question body (no preamble, no instruction), with numbered
/// labels appended when the corpus asks for it or the text could not be
/// re-rendered for a reversed scale.
std::string closed_rendering(const Question& q, const std::string& language);

Prompt build_prompt(const Question& q, ProbingMode mode, const std::string& language, const Persona& p,
                    const PromptAssets& assets = {});

}  // namespace calign
