#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "calign/corpus.hpp"
#include "calign/prompting.hpp"
#include "calign/runner.hpp"

namespace calign {

enum class Mapper { direct_parse, unreversed, judge };
std::string_view mapper_name(Mapper m);

struct StanceRecord {
  std::string question_id;
  ProbingMode mode = ProbingMode::FC;
  std::string language;
  std::string country;
  int repeat = 1;
  Answer classification;  // empty = unclassifiable (0)
  std::optional<std::string> reasoning;
  Mapper mapper = Mapper::direct_parse;
  std::optional<std::string> judge_model;
  std::string model;  // respondent model id, carried from the raw record
};

/// One mapped.jsonl line, fields in a fixed order.
std::string stance_to_jsonl(const StanceRecord& r, const Scale& scale);
StanceRecord stance_from_json(const nlohmann::json& j);

/// First standalone in-range integer (ordinal) or every in-range integer up
/// to max_select (categorical). Never returns the unclassifiable answer.
Answer parse_closed(std::string_view text, const Question& q);

/// Maps an answer given on the reversed scale back to the original numbering.
Answer unreverse(const Answer& a, const Question& q);

StanceRecord map_closed(const RawRecord& raw, const Question& q);

// ---------------------------------------------------------------------------
// LLM-as-judge

/// Which closed rendering the judge sees. Under `reverse` the judge answers on
/// the reversed scale and its verdict is unreversed before storage.
enum class JudgeOrientation { forward, reverse };

struct JudgeOptions {
  JudgeOrientation orientation = JudgeOrientation::forward;
};

/// The versioned judge template asset, with {{question}}, {{response}} and
/// {{notes}} slots.
std::string_view judge_template();
std::string judge_template_hash();

std::string render_judge_prompt(const Question& q, const std::string& language, std::string_view response,
                                const JudgeOptions& options = {});

inline constexpr const char* kJudgeReprompt = "Output only the dictionary.";

struct JudgeVerdict {
  std::string question;
  Answer classification;
  std::string reasoning;
};

/// Lenient extraction: strips code fences and prose around the dictionary.
/// Returns nullopt when no dictionary with a usable classification is found.
std::optional<JudgeVerdict> parse_judge_output(std::string_view text);

GenConfig default_judge_config(std::string model = "gpt-4o");

StanceRecord map_open(const RawRecord& raw, const Question& q, const CompletionSource& judge, const GenConfig& judge_gen,
                      const JudgeOptions& options = {});

struct MapResult {
  std::vector<StanceRecord> records;
  int judged = 0;
};

/// Maps every raw record of a run and writes mapped.jsonl plus mapping.json.
MapResult map_run(const RunStore& store, const std::string& run_id, const CompletionSource& judge,
                  const GenConfig& judge_gen, const JudgeOptions& options = {}, int parallelism = 4);

std::vector<StanceRecord> read_mapped(const RunStore& store, const std::string& run_id);

// ---------------------------------------------------------------------------
// Human validation of the judge

struct AnnotationPair {
  std::string item_id;
  int human = 0;
  int machine = 0;
};

struct AgreementStats {
  std::size_t n = 0;
  double accuracy = 0;
  std::optional<double> kappa;  // absent when chance agreement is 1
  bool degenerate = false;
};

AgreementStats validate_annotations(std::span<const AnnotationPair> pairs);

struct BlindItem {
  std::string item_id;
  std::string question_text;
  std::string response_text;
  int scale_size = 0;
};

/// Hides model identity and the judge's label.
std::string annotation_item_id(const StanceRecord& r);

/// Deterministic sample of judge-mapped ordinal items from a run.
std::vector<BlindItem> blinded_items(const RunStore& store, const std::string& run_id, std::size_t sample,
                                     unsigned long long seed);

struct HumanLabel {
  std::string item_id;
  int label = 0;
};

void append_annotations(const RunStore& store, const std::string& run_id, std::span<const HumanLabel> labels);
std::vector<HumanLabel> read_annotations(const RunStore& store, const std::string& run_id);
/// Joins stored human labels with the judge's labels.
std::vector<AnnotationPair> annotation_pairs(const RunStore& store, const std::string& run_id);

}  // namespace calign
