#include "calign/prompting.hpp"

#include <algorithm>
#include <cctype>

#include "calign/error.hpp"
#include "calign/util.hpp"

namespace calign {

namespace {

void replace_all(std::string& text, std::string_view token, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(token, pos)) != std::string::npos) {
    text.replace(pos, token.size(), value);
    pos += value.size();
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string asset_or_default(const LangMap& map, const std::string& language, std::string_view fallback,
                             const char* what) {
  if (auto it = map.find(language); it != map.end()) return it->second;
  if (language == "en") return std::string(fallback);
  throw PromptError(std::string("no ") + what + " for language '" + language + "'");
}

bool demands_numeric(const std::string& body, const std::string& language, const PromptAssets& assets) {
  static const std::vector<std::string> kEnglishMarkers = {"number only", "only respond", "corresponding number",
                                                           "only the number", "respond with a number"};
  const std::vector<std::string>* markers = nullptr;
  if (auto it = assets.numeric_markers.find(language); it != assets.numeric_markers.end()) {
    markers = &it->second;
  } else if (language == "en") {
    markers = &kEnglishMarkers;
  } else {
    return false;
  }
  const auto haystack = lower(body);
  return std::any_of(markers->begin(), markers->end(), [&](const std::string& m) { return haystack.find(lower(m)) != std::string::npos; });
}

}  // namespace

std::string_view mode_name(ProbingMode m) {
  switch (m) {
    case ProbingMode::FC: return "FC";
    case ProbingMode::FR: return "FR";
    case ProbingMode::FO: return "FO";
    case ProbingMode::FU: return "FU";
  }
  return "?";
}

std::optional<ProbingMode> parse_mode(std::string_view name) {
  for (auto m : kModes)
    if (mode_name(m) == name) return m;
  return std::nullopt;
}

std::string persona_digest(const Persona& p) { return sha256_hex(persona_to_json(p).dump()); }

std::string render_persona(const Persona& p, const std::string& language, const PromptAssets& assets) {
  try {
    validate_persona(p);
  } catch (const CorpusError& e) {
    throw PromptError(e.what());
  }
  std::string text = asset_or_default(assets.persona_template, language, defaults::kPersonaTemplate, "persona template");
  replace_all(text, "{marital_status}", p.marital_status);
  replace_all(text, "{sex}", p.sex);
  replace_all(text, "{region}", p.region);
  replace_all(text, "{country}", p.country);
  replace_all(text, "{age}", std::to_string(p.age));
  replace_all(text, "{education}", p.education);
  replace_all(text, "{social_class}", p.social_class);
  if (text.find('{') != std::string::npos || text.find('}') != std::string::npos)
    throw PromptError("persona template for '" + language + "' has an unfilled placeholder");
  return text;
}

std::string closed_rendering(const Question& q, const std::string& language) {
  auto it = q.text.find(language);
  if (it == q.text.end())
    throw PromptError(q.id + ": no closed-style rendering for language '" + language + "'");
  std::string body = it->second;
  const bool auto_permuted = q.reversed && !q.reverse_text.count(language);
  if (q.list_options || auto_permuted) {
    const auto& labels = q.options.at(language);
    for (std::size_t i = 0; i < labels.size(); ++i) body += "\n" + std::to_string(i + 1) + ". " + labels[i];
  }
  return body;
}

Prompt build_prompt(const Question& q, ProbingMode mode, const std::string& language, const Persona& p,
                    const PromptAssets& assets) {
  Prompt prompt;
  prompt.question_id = q.id;
  prompt.mode = mode;
  prompt.language = language;
  prompt.country = p.country;
  prompt.persona_digest = persona_digest(p);
  prompt.expected_form = is_closed(mode) ? ExpectedForm::numeric_choice : ExpectedForm::free_text;

  std::string text = render_persona(p, language, assets);
  text += "\n";
  if (is_closed(mode)) {
    const Question& shown = mode == ProbingMode::FR ? reverse_question(q) : q;
    const std::string body = closed_rendering(shown, language);
    text += body;
    if (!demands_numeric(body, language, assets)) {
      const bool multi = !q.scale.is_ordinal() && q.scale.max_select > 1;
      text += "\n";
      text += multi ? asset_or_default(assets.closed_instruction_multi, language, defaults::kClosedMultiInstruction,
                                       "multi-select instruction")
                    : asset_or_default(assets.closed_instruction, language, defaults::kClosedInstruction,
                                       "closed instruction");
    }
  } else {
    auto it = q.open_text.find(language);
    if (it == q.open_text.end())
      throw PromptError(q.id + ": no open-ended rendering for language '" + language + "'");
    std::string body = it->second;
    if (body.find("{nationality}") != std::string::npos) {
      if (p.nationality.empty())
        throw PromptError(q.id + ": proposition mentions {nationality} but the persona has none");
      replace_all(body, "{nationality}", p.nationality);
    }
    text += body;
    text += "\n";
    text += mode == ProbingMode::FO
                ? asset_or_default(assets.forced_open_instruction, language, defaults::kForcedOpenInstruction,
                                   "forced open-ended instruction")
                : asset_or_default(assets.unconstrained_instruction, language, defaults::kUnconstrainedInstruction,
                                   "unconstrained instruction");
  }
  prompt.text = std::move(text);
  return prompt;
}

}  // namespace calign
