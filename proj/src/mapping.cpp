#include "calign/mapping.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <map>
#include <random>
#include <set>

#include "calign/error.hpp"
#include "calign/util.hpp"
#include "calign_judge_template.inc"

namespace calign {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view mapper_name(Mapper m) {
  switch (m) {
    case Mapper::direct_parse: return "direct_parse";
    case Mapper::unreversed: return "unreversed";
    case Mapper::judge: return "judge";
  }
  return "?";
}

namespace {

std::optional<Mapper> parse_mapper(std::string_view s) {
  for (auto m : {Mapper::direct_parse, Mapper::unreversed, Mapper::judge})
    if (mapper_name(m) == s) return m;
  return std::nullopt;
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Digit runs that are not part of a word or a decimal number.
std::vector<long long> standalone_integers(std::string_view text) {
  std::vector<long long> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_digit(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_digit(text[j])) ++j;
    const bool letter_before = i > 0 && is_alnum(text[i - 1]);
    const bool letter_after = j < text.size() && is_alnum(text[j]);
    const bool decimal_before = i >= 2 && (text[i - 1] == '.' || text[i - 1] == ',') && is_digit(text[i - 2]) && text[i - 1] == '.';
    const bool decimal_after = j + 1 < text.size() && text[j] == '.' && is_digit(text[j + 1]);
    if (!letter_before && !letter_after && !decimal_before && !decimal_after && j - i <= 9) {
      out.push_back(std::stoll(std::string(text.substr(i, j - i))));
    }
    i = j;
  }
  return out;
}

}  // namespace

std::string stance_to_jsonl(const StanceRecord& r, const Scale& scale) {
  ordered_json j;
  j["question_id"] = r.question_id;
  j["mode"] = std::string(mode_name(r.mode));
  j["language"] = r.language;
  j["country"] = r.country;
  j["repeat"] = r.repeat;
  j["model"] = r.model;
  j["classification"] = answer_to_json(r.classification, scale);
  j["reasoning"] = r.reasoning ? ordered_json(*r.reasoning) : ordered_json(nullptr);
  j["mapper"] = std::string(mapper_name(r.mapper));
  j["judge_model"] = r.judge_model ? ordered_json(*r.judge_model) : ordered_json(nullptr);
  return j.dump();
}

StanceRecord stance_from_json(const json& j) {
  StanceRecord r;
  r.question_id = j.at("question_id").get<std::string>();
  auto mode = parse_mode(j.at("mode").get<std::string>());
  if (!mode) throw MappingError(MappingError::Kind::wrong_mode, "mapped record has an unknown mode");
  r.mode = *mode;
  r.language = j.at("language").get<std::string>();
  r.country = j.at("country").get<std::string>();
  r.repeat = j.at("repeat").get<int>();
  r.model = j.value("model", std::string{});
  r.classification = answer_from_json(j.at("classification"));
  if (auto it = j.find("reasoning"); it != j.end() && it->is_string()) r.reasoning = it->get<std::string>();
  auto mapper = parse_mapper(j.at("mapper").get<std::string>());
  if (!mapper) throw MappingError(MappingError::Kind::wrong_mode, "mapped record has an unknown mapper");
  r.mapper = *mapper;
  if (auto it = j.find("judge_model"); it != j.end() && it->is_string()) r.judge_model = it->get<std::string>();
  return r;
}

Answer parse_closed(std::string_view text, const Question& q) {
  const auto tokens = standalone_integers(text);
  if (tokens.empty())
    throw MappingError(MappingError::Kind::no_integer, q.id + ": no integer found in closed response");
  const int n = q.scale.size;
  auto in_range = [n](long long v) { return v >= 1 && v <= n; };
  if (q.scale.is_ordinal() || q.scale.max_select == 1) {
    auto it = std::find_if(tokens.begin(), tokens.end(), in_range);
    if (it == tokens.end())
      throw MappingError(MappingError::Kind::out_of_range,
                         q.id + ": integer " + std::to_string(tokens.front()) + " outside 1.." + std::to_string(n));
    return Answer::single(static_cast<int>(*it));
  }
  Answer a;
  for (long long v : tokens) {
    if (!in_range(v)) continue;
    if (std::find(a.choices.begin(), a.choices.end(), v) != a.choices.end()) continue;
    a.choices.push_back(static_cast<int>(v));
  }
  if (a.choices.empty())
    throw MappingError(MappingError::Kind::out_of_range, q.id + ": no selection inside 1.." + std::to_string(n));
  if (static_cast<int>(a.choices.size()) > q.scale.max_select)
    throw MappingError(MappingError::Kind::too_many, q.id + ": " + std::to_string(a.choices.size()) +
                                                         " selections exceed max_select " + std::to_string(q.scale.max_select));
  return a;
}

Answer unreverse(const Answer& a, const Question& q) {
  Answer out;
  out.choices.reserve(a.choices.size());
  for (int c : a.choices) {
    if (c < 1 || c > q.scale.size)
      throw MappingError(MappingError::Kind::out_of_range, q.id + ": option " + std::to_string(c) + " outside the scale");
    out.choices.push_back(q.reverse_index(c));
  }
  return out;
}

namespace {

StanceRecord skeleton(const RawRecord& raw) {
  StanceRecord r;
  r.question_id = raw.question_id;
  r.mode = raw.mode;
  r.language = raw.language;
  r.country = raw.country;
  r.repeat = raw.repeat;
  r.model = raw.gen.model;
  return r;
}

}  // namespace

StanceRecord map_closed(const RawRecord& raw, const Question& q) {
  if (!is_closed(raw.mode))
    throw MappingError(MappingError::Kind::wrong_mode, q.id + ": direct parsing applies to FC/FR only");
  StanceRecord r = skeleton(raw);
  Answer parsed;
  try {
    parsed = parse_closed(raw.response.text, q);
  } catch (const MappingError& e) {
    throw MappingError(e.kind(), raw.country + "/" + raw.language + "/" + std::string(mode_name(raw.mode)) + "/rep" +
                                     std::to_string(raw.repeat) + ": " + e.what());
  }
  if (raw.mode == ProbingMode::FR) {
    r.classification = unreverse(parsed, q);
    r.mapper = Mapper::unreversed;
  } else {
    r.classification = std::move(parsed);
    r.mapper = Mapper::direct_parse;
  }
  return r;
}

// ---------------------------------------------------------------------------

std::string_view judge_template() { return kJudgeTemplateAsset; }

std::string judge_template_hash() { return sha256_hex(judge_template()); }

std::string render_judge_prompt(const Question& q, const std::string& language, std::string_view response,
                                const JudgeOptions& options) {
  const Question shown = options.orientation == JudgeOrientation::reverse ? reverse_question(q) : q;
  const std::string question = closed_rendering(shown, language);
  std::string notes;
  if (!q.scale.is_ordinal() && q.scale.max_select > 1) {
    notes = "This question allows up to " + std::to_string(q.scale.max_select) +
            " selections: give the numbers of all chosen options as a comma-separated list in the classification field.\n";
  }
  std::string out(judge_template());
  auto put = [&out](std::string_view slot, std::string_view value) {
    const auto pos = out.find(slot);
    if (pos == std::string::npos) throw Error("judge template lacks slot " + std::string(slot));
    out.replace(pos, slot.size(), value);
  };
  // Question and response text may themselves contain braces, so slots are
  // filled once each in template order.
  put("{{notes}}", notes);
  put("{{question}}", question);
  put("{{response}}", response);
  return out;
}

namespace {

std::string strip_fences(std::string_view text) {
  const auto open = text.find("```");
  if (open == std::string_view::npos) return std::string(text);
  auto body_start = text.find('\n', open);
  if (body_start == std::string_view::npos) return std::string(text);
  ++body_start;
  const auto close = text.find("```", body_start);
  return std::string(text.substr(body_start, close == std::string_view::npos ? std::string_view::npos : close - body_start));
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::optional<json> parse_dictionary(std::string candidate) {
  const auto open = candidate.find('{');
  const auto close = candidate.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open) return std::nullopt;
  candidate = candidate.substr(open, close - open + 1);
  auto attempt = [](const std::string& s) -> std::optional<json> {
    try {
      auto j = json::parse(s);
      if (j.is_object()) return j;
    } catch (const json::exception&) {
    }
    return std::nullopt;
  };
  if (auto j = attempt(candidate)) return j;
  std::string smart = candidate;
  replace_all(smart, "\xE2\x80\x9C", "\"");
  replace_all(smart, "\xE2\x80\x9D", "\"");
  if (auto j = attempt(smart)) return j;
  if (smart.find('"') == std::string::npos) {
    std::replace(smart.begin(), smart.end(), '\'', '"');
    if (auto j = attempt(smart)) return j;
  }
  return std::nullopt;
}

std::optional<Answer> classification_from(const json& value) {
  if (value.is_number_integer()) {
    const long long v = value.get<long long>();
    return v == 0 ? Answer::unclassifiable() : Answer::single(static_cast<int>(v));
  }
  std::vector<long long> values;
  if (value.is_array()) {
    for (const auto& e : value) {
      if (e.is_number_integer()) {
        values.push_back(e.get<long long>());
      } else if (e.is_string()) {
        for (auto v : standalone_integers(e.get<std::string>())) values.push_back(v);
      }
    }
  } else if (value.is_string()) {
    values = standalone_integers(value.get<std::string>());
  } else {
    return std::nullopt;
  }
  if (values.empty()) return std::nullopt;
  if (values.size() == 1 && values.front() == 0) return Answer::unclassifiable();
  Answer a;
  for (auto v : values) a.choices.push_back(static_cast<int>(std::clamp<long long>(v, -1, 1'000'000)));
  return a;
}

}  // namespace

std::optional<JudgeVerdict> parse_judge_output(std::string_view text) {
  auto dict = parse_dictionary(strip_fences(text));
  if (!dict) dict = parse_dictionary(std::string(text));
  if (!dict) return std::nullopt;
  auto it = dict->find("classification");
  if (it == dict->end()) return std::nullopt;
  auto cls = classification_from(*it);
  if (!cls) return std::nullopt;
  JudgeVerdict v;
  v.classification = std::move(*cls);
  if (auto q = dict->find("question"); q != dict->end() && q->is_string()) v.question = q->get<std::string>();
  if (auto r = dict->find("reasoning"); r != dict->end() && r->is_string()) v.reasoning = r->get<std::string>();
  return v;
}

GenConfig default_judge_config(std::string model) {
  GenConfig g;
  g.model = std::move(model);
  g.temperature = 0.0;
  g.top_p = 1.0;
  g.max_tokens = 512;
  return g;
}

StanceRecord map_open(const RawRecord& raw, const Question& q, const CompletionSource& judge, const GenConfig& judge_gen,
                      const JudgeOptions& options) {
  if (is_closed(raw.mode))
    throw MappingError(MappingError::Kind::wrong_mode, q.id + ": judge mapping applies to FO/FU only");
  Prompt prompt;
  prompt.text = render_judge_prompt(q, raw.language, raw.response.text, options);
  prompt.question_id = q.id;
  prompt.mode = raw.mode;
  prompt.language = raw.language;
  prompt.country = raw.country;
  prompt.expected_form = ExpectedForm::free_text;

  auto reply = complete(prompt, judge_gen, 1, judge);
  auto verdict = parse_judge_output(reply.text);
  if (!verdict) {
    Prompt again = prompt;
    again.text += "\n\n";
    again.text += kJudgeReprompt;
    reply = complete(again, judge_gen, 1, judge);
    verdict = parse_judge_output(reply.text);
  }
  const std::string where = raw.country + "/" + raw.language + "/" + std::string(mode_name(raw.mode)) + "/" + q.id +
                            "/rep" + std::to_string(raw.repeat);
  if (!verdict)
    throw MappingError(MappingError::Kind::judge_unparseable, where + ": judge output unparseable after one reprompt");

  Answer cls = verdict->classification;
  for (int c : cls.choices) {
    if (c < 1 || c > q.scale.size)
      throw MappingError(MappingError::Kind::out_of_range,
                         where + ": judge classification " + std::to_string(c) + " outside 0.." + std::to_string(q.scale.size));
  }
  const int limit = q.scale.is_ordinal() ? 1 : q.scale.max_select;
  if (static_cast<int>(cls.choices.size()) > limit)
    throw MappingError(MappingError::Kind::too_many, where + ": judge selected more options than allowed");
  std::set<int> uniq(cls.choices.begin(), cls.choices.end());
  if (uniq.size() != cls.choices.size())
    throw MappingError(MappingError::Kind::out_of_range, where + ": judge repeated an option");
  if (options.orientation == JudgeOrientation::reverse) cls = unreverse(cls, q);

  StanceRecord r = skeleton(raw);
  r.classification = std::move(cls);
  r.reasoning = verdict->reasoning;
  r.mapper = Mapper::judge;
  r.judge_model = judge_gen.model;
  return r;
}

MapResult map_run(const RunStore& store, const std::string& run_id, const CompletionSource& judge,
                  const GenConfig& judge_gen, const JudgeOptions& options, int parallelism) {
  const RunMeta meta = store.read_meta(run_id);
  const auto raws = store.read_raw(run_id);
  for (const auto& raw : raws) {
    if (!verify_integrity(raw))
      throw RunnerError(RunnerError::Kind::store_io, "raw record " + raw.key + " fails its integrity check");
  }
  MapResult result;
  result.records.resize(raws.size());
  std::atomic<int> judged{0};
  run_bounded(raws.size(), parallelism, [&](std::size_t i) {
    const auto& raw = raws[i];
    const auto& q = meta.bank.question(raw.question_id);
    if (is_closed(raw.mode)) {
      result.records[i] = map_closed(raw, q);
    } else {
      result.records[i] = map_open(raw, q, judge, judge_gen, options);
      ++judged;
    }
  });
  result.judged = judged.load();

  std::string lines;
  for (const auto& r : result.records) lines += stance_to_jsonl(r, meta.bank.question(r.question_id).scale) + "\n";
  write_file_atomic(store.run_dir(run_id) / "mapped.jsonl", lines);

  ordered_json mj;
  mj["judge_template_hash"] = judge_template_hash();
  mj["judge_gen"] = gen_config_to_json(judge_gen);
  mj["judge_orientation"] = options.orientation == JudgeOrientation::forward ? "forward" : "reverse";
  mj["records"] = result.records.size();
  write_file_atomic(store.run_dir(run_id) / "mapping.json", mj.dump(2) + "\n");
  return result;
}

std::vector<StanceRecord> read_mapped(const RunStore& store, const std::string& run_id) {
  const auto path = store.run_dir(run_id) / "mapped.jsonl";
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    throw RunnerError(RunnerError::Kind::store_io, "run '" + run_id + "' has no mapped.jsonl; run `map` first");
  }
  std::vector<StanceRecord> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) {
      try {
        out.push_back(stance_from_json(json::parse(text.substr(start, end - start))));
      } catch (const json::exception& e) {
        throw RunnerError(RunnerError::Kind::store_io, "corrupt mapped.jsonl line: " + std::string(e.what()));
      }
    }
    start = end + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------

AgreementStats validate_annotations(std::span<const AnnotationPair> pairs) {
  if (pairs.empty()) throw MappingError(MappingError::Kind::empty_input, "no annotation pairs to validate");
  const double n = static_cast<double>(pairs.size());
  std::map<int, double> human_counts;
  std::map<int, double> machine_counts;
  std::size_t agree = 0;
  for (const auto& p : pairs) {
    if (p.human == p.machine) ++agree;
    human_counts[p.human] += 1;
    machine_counts[p.machine] += 1;
  }
  AgreementStats s;
  s.n = pairs.size();
  s.accuracy = static_cast<double>(agree) / n;
  double expected = 0;
  for (const auto& [label, hc] : human_counts) {
    auto it = machine_counts.find(label);
    if (it != machine_counts.end()) expected += (hc / n) * (it->second / n);
  }
  if (expected >= 1.0) {
    s.degenerate = true;
  } else {
    s.kappa = (s.accuracy - expected) / (1.0 - expected);
  }
  return s;
}

std::string annotation_item_id(const StanceRecord& r) {
  return sha256_hex(r.model + "|" + r.question_id + "|" + std::string(mode_name(r.mode)) + "|" + r.language + "|" + r.country +
                    "|" + std::to_string(r.repeat))
      .substr(0, 16);
}

std::vector<BlindItem> blinded_items(const RunStore& store, const std::string& run_id, std::size_t sample,
                                     unsigned long long seed) {
  const RunMeta meta = store.read_meta(run_id);
  const auto mapped = read_mapped(store, run_id);
  const auto raws = store.read_raw(run_id);
  std::map<std::string, const RawRecord*> raw_by_cell;
  for (const auto& raw : raws) {
    raw_by_cell[raw.question_id + "|" + std::string(mode_name(raw.mode)) + "|" + raw.language + "|" + raw.country + "|" +
                std::to_string(raw.repeat)] = &raw;
  }
  std::vector<BlindItem> items;
  for (const auto& r : mapped) {
    if (r.mapper != Mapper::judge) continue;
    const auto& q = meta.bank.question(r.question_id);
    if (!q.scale.is_ordinal()) continue;
    auto it = raw_by_cell.find(r.question_id + "|" + std::string(mode_name(r.mode)) + "|" + r.language + "|" + r.country +
                               "|" + std::to_string(r.repeat));
    if (it == raw_by_cell.end()) continue;
    items.push_back({annotation_item_id(r), closed_rendering(q, r.language), it->second->response.text, q.scale.size});
  }
  // Fisher-Yates over mt19937_64 output; std::shuffle's distribution is
  // implementation-defined and would differ across standard libraries.
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
  if (sample > 0 && items.size() > sample) items.resize(sample);
  return items;
}

void append_annotations(const RunStore& store, const std::string& run_id, std::span<const HumanLabel> labels) {
  const auto path = store.run_dir(run_id) / "annotations.jsonl";
  std::string existing;
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) existing = read_file(path);
  for (const auto& l : labels) {
    ordered_json j;
    j["item_id"] = l.item_id;
    j["human_label"] = l.label;
    existing += j.dump() + "\n";
  }
  write_file_atomic(path, existing);
}

std::vector<HumanLabel> read_annotations(const RunStore& store, const std::string& run_id) {
  const auto path = store.run_dir(run_id) / "annotations.jsonl";
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return {};
  const auto text = read_file(path);
  std::vector<HumanLabel> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) {
      const auto j = json::parse(text.substr(start, end - start));
      out.push_back({j.at("item_id").get<std::string>(), j.at("human_label").get<int>()});
    }
    start = end + 1;
  }
  return out;
}

std::vector<AnnotationPair> annotation_pairs(const RunStore& store, const std::string& run_id) {
  std::map<std::string, int> machine;
  for (const auto& r : read_mapped(store, run_id)) {
    if (r.mapper != Mapper::judge || r.classification.choices.size() > 1) continue;
    machine[annotation_item_id(r)] = r.classification.is_unclassifiable() ? 0 : r.classification.choices.front();
  }
  // Later labels for the same item replace earlier ones.
  std::map<std::string, int> human;
  for (const auto& l : read_annotations(store, run_id)) human[l.item_id] = l.label;
  std::vector<AnnotationPair> out;
  for (const auto& [id, label] : human) {
    auto it = machine.find(id);
    if (it == machine.end()) continue;
    out.push_back({id, label, it->second});
  }
  return out;
}

}  // namespace calign
