#include "calign/corpus.hpp"

#include <algorithm>
#include <set>

#include "calign/error.hpp"
#include "calign/util.hpp"

namespace calign {

using nlohmann::json;

namespace {

[[noreturn]] void fail(CorpusError::Kind kind, const std::string& msg) { throw CorpusError(kind, msg); }

LangMap lang_map(const json& j, const std::string& where) {
  LangMap out;
  if (j.is_null()) return out;
  if (!j.is_object()) fail(CorpusError::Kind::parse, where + ": expected an object keyed by language");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) fail(CorpusError::Kind::parse, where + "." + it.key() + ": expected a string");
    out[it.key()] = it.value().get<std::string>();
  }
  return out;
}

std::map<std::string, std::vector<std::string>> lang_list_map(const json& j, const std::string& where) {
  std::map<std::string, std::vector<std::string>> out;
  if (j.is_null()) return out;
  if (!j.is_object()) fail(CorpusError::Kind::parse, where + ": expected an object keyed by language");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_array()) fail(CorpusError::Kind::parse, where + "." + it.key() + ": expected a list");
    std::vector<std::string> labels;
    for (const auto& v : it.value()) {
      if (!v.is_string()) fail(CorpusError::Kind::parse, where + "." + it.key() + ": expected strings");
      labels.push_back(v.get<std::string>());
    }
    out[it.key()] = std::move(labels);
  }
  return out;
}

const json& optional_field(const json& j, const char* key) {
  static const json kNull;
  auto it = j.find(key);
  return it == j.end() ? kNull : *it;
}

Scale parse_scale(const json& j, const std::string& qid) {
  if (!j.is_object()) fail(CorpusError::Kind::parse, qid + ": scale must be an object");
  Scale s;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "ordinal") {
    s.kind = ScaleKind::ordinal;
    s.size = j.at("q").get<int>();
    s.max_select = 1;
    if (s.size < 2) fail(CorpusError::Kind::invalid_scale, qid + ": ordinal scale needs q >= 2");
  } else if (kind == "categorical") {
    s.kind = ScaleKind::categorical;
    s.size = j.at("k").get<int>();
    s.max_select = j.value("max_select", 1);
    if (s.size < 2) fail(CorpusError::Kind::invalid_scale, qid + ": categorical scale needs k >= 2");
    if (s.max_select < 1 || s.max_select > s.size)
      fail(CorpusError::Kind::invalid_scale, qid + ": max_select must lie in 1..k");
  } else {
    fail(CorpusError::Kind::invalid_scale, qid + ": unknown scale kind '" + kind + "'");
  }
  return s;
}

void validate_reversal(const Question& q) {
  const int n = q.scale.size;
  if (static_cast<int>(q.reversal.size()) != n)
    fail(CorpusError::Kind::invalid_reversal, q.id + ": reversal must list " + std::to_string(n) + " entries");
  std::vector<bool> seen(n + 1, false);
  for (int i = 1; i <= n; ++i) {
    const int image = q.reversal[i - 1];
    if (image < 1 || image > n || seen[image])
      fail(CorpusError::Kind::invalid_reversal, q.id + ": reversal is not a permutation of 1.." + std::to_string(n));
    seen[image] = true;
  }
  for (int i = 1; i <= n; ++i) {
    if (q.reversal[q.reversal[i - 1] - 1] != i)
      fail(CorpusError::Kind::invalid_reversal, q.id + ": reversal applied twice must be the identity");
    if (q.scale.is_ordinal() && q.reversal[i - 1] != n + 1 - i)
      fail(CorpusError::Kind::invalid_reversal, q.id + ": ordinal reversal must map i to q + 1 - i");
  }
}

void validate_question(const Question& q) {
  if (q.id.empty()) fail(CorpusError::Kind::validation, "question with empty id");
  for (const auto& [lang, _] : q.text) {
    auto it = q.options.find(lang);
    if (it == q.options.end())
      fail(CorpusError::Kind::option_count, q.id + ": language '" + lang + "' has text but no option labels");
  }
  for (const auto& [lang, _] : q.reverse_text) {
    if (!q.options.count(lang))
      fail(CorpusError::Kind::option_count, q.id + ": language '" + lang + "' has reverse text but no option labels");
  }
  for (const auto& [lang, labels] : q.options) {
    if (static_cast<int>(labels.size()) != q.scale.size)
      fail(CorpusError::Kind::option_count, q.id + ": scale declares " + std::to_string(q.scale.size) + " options but '" +
                                                lang + "' lists " + std::to_string(labels.size()));
  }
  validate_reversal(q);
}

Question parse_question(const json& j) {
  if (!j.is_object()) fail(CorpusError::Kind::parse, "question entries must be objects");
  Question q;
  q.id = j.at("id").get<std::string>();
  q.theme = j.value("theme", std::string{});
  q.scale = parse_scale(j.at("scale"), q.id);
  q.text = lang_map(optional_field(j, "text"), q.id + ".text");
  q.reverse_text = lang_map(optional_field(j, "reverse_text"), q.id + ".reverse_text");
  q.open_text = lang_map(optional_field(j, "open_text"), q.id + ".open_text");
  q.options = lang_list_map(optional_field(j, "options"), q.id + ".options");
  q.list_options = j.value("list_options", false);
  if (auto it = j.find("reversal"); it != j.end() && !it->is_null()) {
    q.reversal = it->get<std::vector<int>>();
  } else {
    for (int i = 1; i <= q.scale.size; ++i) q.reversal.push_back(q.scale.size + 1 - i);
  }
  validate_question(q);
  return q;
}

HofstedeSpec parse_hofstede(const json& j, int bank_size) {
  if (!j.is_object()) fail(CorpusError::Kind::invalid_spec, "hofstede_spec must be an object");
  HofstedeSpec spec;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto dim = parse_dimension(it.key());
    if (!dim) fail(CorpusError::Kind::invalid_spec, "hofstede_spec: unknown dimension '" + it.key() + "'");
    const auto& terms = it.value().at("terms");
    if (!terms.is_array() || terms.size() != 2)
      fail(CorpusError::Kind::invalid_spec, "hofstede_spec." + it.key() + ": exactly two terms expected");
    DimensionFormula f;
    std::set<int> used;
    for (std::size_t t = 0; t < 2; ++t) {
      f.terms[t].weight = terms[t].at("weight").get<double>();
      f.terms[t].plus = terms[t].at("plus").get<int>();
      f.terms[t].minus = terms[t].at("minus").get<int>();
      for (int idx : {f.terms[t].plus, f.terms[t].minus}) {
        if (idx < 1 || idx > bank_size)
          fail(CorpusError::Kind::invalid_spec,
               "hofstede_spec." + it.key() + ": question index " + std::to_string(idx) + " outside 1.." + std::to_string(bank_size));
        if (!used.insert(idx).second)
          fail(CorpusError::Kind::invalid_spec, "hofstede_spec." + it.key() + ": question index " + std::to_string(idx) + " repeated");
      }
    }
    f.constant = it.value().value("constant", 0.0);
    spec.formulas[*dim] = f;
  }
  if (spec.formulas.size() != kDimensions.size())
    fail(CorpusError::Kind::invalid_spec, "hofstede_spec must define all six dimensions");
  return spec;
}

ProjectionSpec parse_projection(const json& j, const std::vector<Question>& questions) {
  if (!j.is_object()) fail(CorpusError::Kind::invalid_spec, "projection must be an object");
  ProjectionSpec spec;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& v = it.value();
    IndicatorLoading l;
    l.traditional_secular = v.at("traditional_secular").get<double>();
    l.survival_selfexpr = v.at("survival_selfexpr").get<double>();
    l.mean = v.at("mean").get<double>();
    l.sd = v.at("sd").get<double>();
    if (!(l.sd > 0)) fail(CorpusError::Kind::invalid_spec, "projection." + it.key() + ": sd must be positive");
    if (auto os = v.find("option_scores"); os != v.end()) l.option_scores = os->get<std::vector<double>>();
    spec.loadings[it.key()] = std::move(l);
  }
  if (spec.loadings.size() != questions.size())
    fail(CorpusError::Kind::invalid_spec, "projection must carry loadings for exactly the bank's indicator questions");
  for (const auto& q : questions) {
    auto it = spec.loadings.find(q.id);
    if (it == spec.loadings.end()) fail(CorpusError::Kind::invalid_spec, "projection: no loading for " + q.id);
    if (!q.scale.is_ordinal() && static_cast<int>(it->second.option_scores.size()) != q.scale.size)
      fail(CorpusError::Kind::invalid_spec, "projection." + q.id + ": categorical indicator needs one option score per option");
  }
  return spec;
}

PromptAssets parse_assets(const json& j) {
  PromptAssets a;
  a.persona_template = lang_map(optional_field(j, "persona_template"), "persona_template");
  const auto& ins = optional_field(j, "instructions");
  if (!ins.is_null()) {
    a.closed_instruction = lang_map(optional_field(ins, "closed"), "instructions.closed");
    a.closed_instruction_multi = lang_map(optional_field(ins, "closed_multi"), "instructions.closed_multi");
    a.forced_open_instruction = lang_map(optional_field(ins, "forced_open"), "instructions.forced_open");
    a.unconstrained_instruction = lang_map(optional_field(ins, "unconstrained"), "instructions.unconstrained");
    a.numeric_markers = lang_list_map(optional_field(ins, "numeric_markers"), "instructions.numeric_markers");
  }
  return a;
}

json scale_to_json(const Scale& s) {
  json j;
  if (s.is_ordinal()) {
    j["kind"] = "ordinal";
    j["q"] = s.size;
  } else {
    j["kind"] = "categorical";
    j["k"] = s.size;
    j["max_select"] = s.max_select;
  }
  return j;
}

}  // namespace

bool same_selection(const Answer& a, const Answer& b) {
  auto x = a.choices;
  auto y = b.choices;
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  return x == y;
}

json answer_to_json(const Answer& a, const Scale& scale) {
  if (a.is_unclassifiable()) return 0;
  if (scale.is_ordinal()) return a.choices.front();
  return a.choices;
}

Answer answer_from_json(const json& j) {
  if (j.is_number_integer()) {
    const int v = j.get<int>();
    return v == 0 ? Answer::unclassifiable() : Answer::single(v);
  }
  if (j.is_array()) {
    Answer a;
    for (const auto& v : j) {
      if (!v.is_number_integer()) throw CorpusError(CorpusError::Kind::parse, "answer lists must hold integers");
      a.choices.push_back(v.get<int>());
    }
    return a;
  }
  throw CorpusError(CorpusError::Kind::parse, "answer must be an integer or a list of integers");
}

int Question::reverse_index(int option) const {
  if (option < 1 || option > static_cast<int>(reversal.size()))
    throw CorpusError(CorpusError::Kind::validation, id + ": option " + std::to_string(option) + " outside the scale");
  return reversal[option - 1];
}

std::string_view dimension_name(Dimension d) {
  switch (d) {
    case Dimension::pdi: return "pdi";
    case Dimension::idv: return "idv";
    case Dimension::mas: return "mas";
    case Dimension::uai: return "uai";
    case Dimension::lto: return "lto";
    case Dimension::ivr: return "ivr";
  }
  return "?";
}

std::optional<Dimension> parse_dimension(std::string_view name) {
  for (auto d : kDimensions)
    if (dimension_name(d) == name) return d;
  return std::nullopt;
}

HofstedeSpec HofstedeSpec::standard() {
  HofstedeSpec s;
  s.formulas[Dimension::pdi] = {{{{35, 7, 2}, {25, 20, 23}}}, 0};
  s.formulas[Dimension::idv] = {{{{35, 4, 1}, {35, 9, 6}}}, 0};
  s.formulas[Dimension::mas] = {{{{35, 5, 3}, {35, 8, 10}}}, 0};
  s.formulas[Dimension::uai] = {{{{40, 18, 15}, {25, 21, 24}}}, 0};
  s.formulas[Dimension::lto] = {{{{40, 13, 14}, {25, 19, 22}}}, 0};
  s.formulas[Dimension::ivr] = {{{{35, 12, 11}, {40, 17, 16}}}, 0};
  return s;
}

std::string expand_formula(Dimension d, const DimensionFormula& f) {
  std::string upper(dimension_name(d));
  std::transform(upper.begin(), upper.end(), upper.begin(), [](char c) { return static_cast<char>(c - 'a' + 'A'); });
  std::string out = upper + " = ";
  for (std::size_t t = 0; t < f.terms.size(); ++t) {
    if (t) out += " + ";
    out += canonical_double(f.terms[t].weight) + "*(m" + std::to_string(f.terms[t].plus) + " - m" +
           std::to_string(f.terms[t].minus) + ")";
  }
  out += " + C_" + upper;
  return out;
}

const Question* SurveyBank::find(std::string_view id) const {
  for (const auto& q : questions)
    if (q.id == id) return &q;
  return nullptr;
}

const Question& SurveyBank::question(std::string_view id) const {
  if (const auto* q = find(id)) return *q;
  throw CorpusError(CorpusError::Kind::missing_question, "bank '" + name + "' has no question '" + std::string(id) + "'");
}

int SurveyBank::position_of(std::string_view id) const {
  for (std::size_t i = 0; i < questions.size(); ++i)
    if (questions[i].id == id) return static_cast<int>(i) + 1;
  throw CorpusError(CorpusError::Kind::missing_question, "bank '" + name + "' has no question '" + std::string(id) + "'");
}

SurveyBank parse_survey_bank(const json& j) {
  try {
    if (!j.is_object()) fail(CorpusError::Kind::parse, "corpus root must be an object");
    const int version = j.at("schema_version").get<int>();
    if (version != kCorpusSchemaVersion)
      fail(CorpusError::Kind::parse, "unsupported schema_version " + std::to_string(version));
    SurveyBank bank;
    bank.name = j.at("name").get<std::string>();
    if (bank.name != "wvs" && bank.name != "hofstede" && bank.name != "custom")
      fail(CorpusError::Kind::parse, "bank name must be one of wvs, hofstede, custom");
    std::set<std::string> ids;
    for (const auto& qj : j.at("questions")) {
      auto q = parse_question(qj);
      if (!ids.insert(q.id).second) fail(CorpusError::Kind::duplicate_id, "duplicate question id '" + q.id + "'");
      bank.questions.push_back(std::move(q));
    }
    if (bank.questions.empty()) fail(CorpusError::Kind::validation, "bank has no questions");
    if (auto it = j.find("hofstede_spec"); it != j.end() && !it->is_null())
      bank.hofstede_spec = parse_hofstede(*it, static_cast<int>(bank.questions.size()));
    if (auto it = j.find("projection"); it != j.end() && !it->is_null())
      bank.projection = parse_projection(*it, bank.questions);
    bank.assets = parse_assets(j);
    return bank;
  } catch (const json::exception& e) {
    throw CorpusError(CorpusError::Kind::parse, std::string("corpus parse error: ") + e.what());
  }
}

SurveyBank load_survey_bank(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw CorpusError(CorpusError::Kind::parse, e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CorpusError(CorpusError::Kind::parse, path.string() + ": " + e.what());
  }
  return parse_survey_bank(j);
}

json survey_bank_to_json(const SurveyBank& bank) {
  json j;
  j["schema_version"] = kCorpusSchemaVersion;
  j["name"] = bank.name;
  j["questions"] = json::array();
  for (const auto& q : bank.questions) {
    json qj;
    qj["id"] = q.id;
    qj["theme"] = q.theme;
    qj["scale"] = scale_to_json(q.scale);
    qj["reversal"] = q.reversal;
    qj["text"] = q.text;
    if (!q.reverse_text.empty()) qj["reverse_text"] = q.reverse_text;
    qj["open_text"] = q.open_text;
    qj["options"] = q.options;
    if (q.list_options) qj["list_options"] = true;
    j["questions"].push_back(std::move(qj));
  }
  if (bank.hofstede_spec) {
    json hj = json::object();
    for (const auto& [dim, f] : bank.hofstede_spec->formulas) {
      json terms = json::array();
      for (const auto& t : f.terms) terms.push_back({{"weight", t.weight}, {"plus", t.plus}, {"minus", t.minus}});
      hj[std::string(dimension_name(dim))] = {{"terms", terms}, {"constant", f.constant}};
    }
    j["hofstede_spec"] = hj;
  }
  if (bank.projection) {
    json pj = json::object();
    for (const auto& [id, l] : bank.projection->loadings) {
      json lj = {{"traditional_secular", l.traditional_secular},
                 {"survival_selfexpr", l.survival_selfexpr},
                 {"mean", l.mean},
                 {"sd", l.sd}};
      if (!l.option_scores.empty()) lj["option_scores"] = l.option_scores;
      pj[id] = lj;
    }
    j["projection"] = pj;
  }
  const auto& a = bank.assets;
  if (!a.persona_template.empty()) j["persona_template"] = a.persona_template;
  json ins = json::object();
  if (!a.closed_instruction.empty()) ins["closed"] = a.closed_instruction;
  if (!a.closed_instruction_multi.empty()) ins["closed_multi"] = a.closed_instruction_multi;
  if (!a.forced_open_instruction.empty()) ins["forced_open"] = a.forced_open_instruction;
  if (!a.unconstrained_instruction.empty()) ins["unconstrained"] = a.unconstrained_instruction;
  if (!a.numeric_markers.empty()) ins["numeric_markers"] = a.numeric_markers;
  if (!ins.empty()) j["instructions"] = ins;
  return j;
}

std::string canonical_text(const SurveyBank& bank) { return survey_bank_to_json(bank).dump(2) + "\n"; }

std::string corpus_hash(const SurveyBank& bank) { return sha256_hex(canonical_text(bank)); }

Question reverse_question(const Question& q) {
  Question r = q;
  for (auto& [lang, labels] : r.options) {
    const auto& original = q.options.at(lang);
    for (int i = 1; i <= q.scale.size; ++i) labels[i - 1] = original[q.reversal[i - 1] - 1];
  }
  for (const auto& [lang, alt] : q.reverse_text) {
    r.text[lang] = alt;
    auto it = q.text.find(lang);
    if (it != q.text.end()) {
      r.reverse_text[lang] = it->second;
    } else {
      r.reverse_text.erase(lang);
    }
  }
  r.reversed = !q.reversed;
  return r;
}

GroundTruthSet parse_ground_truth(const json& j, const SurveyBank* bank) {
  try {
    GroundTruthSet gt;
    gt.country = j.at("country").get<std::string>();
    if (gt.country.empty()) fail(CorpusError::Kind::validation, "ground truth has an empty country");
    gt.language = j.value("language", std::string{});
    for (auto it = j.at("answers").begin(); it != j.at("answers").end(); ++it) {
      Answer a = answer_from_json(it.value());
      if (a.is_unclassifiable())
        fail(CorpusError::Kind::validation, gt.country + "." + it.key() + ": reference answers cannot be 0");
      if (bank) {
        const auto& q = bank->question(it.key());
        const int limit = q.scale.is_ordinal() ? 1 : q.scale.max_select;
        if (static_cast<int>(a.choices.size()) > limit)
          fail(CorpusError::Kind::validation, gt.country + "." + it.key() + ": more selections than max_select");
        std::set<int> uniq(a.choices.begin(), a.choices.end());
        if (uniq.size() != a.choices.size())
          fail(CorpusError::Kind::validation, gt.country + "." + it.key() + ": repeated selection");
        for (int c : a.choices)
          if (c < 1 || c > q.scale.size)
            fail(CorpusError::Kind::validation, gt.country + "." + it.key() + ": answer " + std::to_string(c) + " outside the scale");
      }
      gt.answers[it.key()] = std::move(a);
    }
    if (auto it = j.find("hofstede_official"); it != j.end() && !it->is_null()) {
      for (auto d = it->begin(); d != it->end(); ++d) {
        auto dim = parse_dimension(d.key());
        if (!dim) fail(CorpusError::Kind::validation, "hofstede_official: unknown dimension '" + d.key() + "'");
        gt.hofstede_official[*dim] = d.value().get<double>();
      }
    }
    if (auto it = j.find("iw_position"); it != j.end() && !it->is_null()) {
      gt.iw_position = std::make_pair(it->at("x").get<double>(), it->at("y").get<double>());
    }
    return gt;
  } catch (const json::exception& e) {
    throw CorpusError(CorpusError::Kind::parse, std::string("ground truth parse error: ") + e.what());
  }
}

GroundTruthSet load_ground_truth(const std::filesystem::path& path, const SurveyBank* bank) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw CorpusError(CorpusError::Kind::parse, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw CorpusError(CorpusError::Kind::parse, e.what());
  }
  return parse_ground_truth(j, bank);
}

json ground_truth_to_json(const GroundTruthSet& gt) {
  json j;
  j["country"] = gt.country;
  j["language"] = gt.language;
  json answers = json::object();
  for (const auto& [id, a] : gt.answers) {
    answers[id] = a.choices.size() == 1 ? json(a.choices.front()) : json(a.choices);
  }
  j["answers"] = answers;
  json off = json::object();
  for (const auto& [d, v] : gt.hofstede_official) off[std::string(dimension_name(d))] = v;
  j["hofstede_official"] = off;
  if (gt.iw_position) j["iw_position"] = {{"x", gt.iw_position->first}, {"y", gt.iw_position->second}};
  return j;
}

const Answer& ground_truth_for(const GroundTruthSet& gt, std::string_view qid) {
  auto it = gt.answers.find(std::string(qid));
  if (it == gt.answers.end())
    throw CorpusError(CorpusError::Kind::missing_question,
                      "ground truth for '" + gt.country + "' has no answer for '" + std::string(qid) + "'");
  return it->second;
}

void validate_persona(const Persona& p) {
  auto require = [](const std::string& v, const char* field) {
    if (v.empty()) throw CorpusError(CorpusError::Kind::validation, std::string("persona field '") + field + "' is empty");
  };
  require(p.region, "region");
  require(p.country, "country");
  require(p.sex, "sex");
  require(p.social_class, "social_class");
  require(p.education, "education");
  require(p.marital_status, "marital_status");
  if (p.age <= 0) throw CorpusError(CorpusError::Kind::validation, "persona field 'age' must be positive");
}

Persona persona_from_json(const json& j) {
  try {
    Persona p;
    p.region = j.at("region").get<std::string>();
    p.country = j.at("country").get<std::string>();
    p.sex = j.at("sex").get<std::string>();
    p.age = j.at("age").get<int>();
    p.social_class = j.at("social_class").get<std::string>();
    p.education = j.at("education").get<std::string>();
    p.marital_status = j.at("marital_status").get<std::string>();
    p.nationality = j.value("nationality", std::string{});
    return p;
  } catch (const json::exception& e) {
    throw CorpusError(CorpusError::Kind::parse, std::string("persona parse error: ") + e.what());
  }
}

json persona_to_json(const Persona& p) {
  json j = {{"region", p.region},         {"country", p.country},     {"sex", p.sex},
            {"age", p.age},               {"social_class", p.social_class},
            {"education", p.education},   {"marital_status", p.marital_status}};
  if (!p.nationality.empty()) j["nationality"] = p.nationality;
  return j;
}

Persona default_persona(std::string country, std::string region, std::string nationality) {
  Persona p;
  p.country = std::move(country);
  p.region = std::move(region);
  p.sex = "male";
  p.age = 35;
  p.social_class = "upper middle class";
  p.education = "higher";
  p.marital_status = "married";
  p.nationality = std::move(nationality);
  return p;
}

}  // namespace calign
