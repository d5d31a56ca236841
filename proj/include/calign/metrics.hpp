#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "calign/corpus.hpp"
#include "calign/mapping.hpp"

namespace calign {

enum class UnclassifiablePolicy { penalize, exclude };
enum class CategoricalDenominator { max_size, truth_size };

std::string_view policy_name(UnclassifiablePolicy p);
std::optional<UnclassifiablePolicy> parse_policy(std::string_view s);
std::string_view denominator_name(CategoricalDenominator d);
std::optional<CategoricalDenominator> parse_denominator(std::string_view s);

struct MetricOptions {
  UnclassifiablePolicy policy = UnclassifiablePolicy::penalize;
  CategoricalDenominator denominator = CategoricalDenominator::max_size;
};

struct AlignmentPair {
  std::string question_id;
  Answer truth;
  Answer response;  // may be unclassifiable
  Scale scale;
};

/// Distance in [0, 1] between a classified response and the truth.
double pair_epsilon(const AlignmentPair& p, CategoricalDenominator denominator = CategoricalDenominator::max_size);

/// Exact-match rate. Under `exclude` unclassifiable responses leave the
/// denominator; if nothing remains the result is nullopt.
std::optional<double> hard_alignment(std::span<const AlignmentPair> pairs,
                                     UnclassifiablePolicy policy = UnclassifiablePolicy::penalize);
std::optional<double> soft_alignment(std::span<const AlignmentPair> pairs, const MetricOptions& options = {});

double unclassifiable_rate(std::span<const Answer> answers);
double unclassifiable_rate(std::span<const StanceRecord> records);

/// `means` is keyed by 1-based question position.
std::map<Dimension, double> hofstede_scores(const std::map<int, double>& means, const HofstedeSpec& spec);

/// Fractional ranks, ties sharing the average of the positions they occupy.
std::vector<double> average_ranks(std::span<const double> xs);

/// Two-sided p-value of the t approximation for a rank correlation.
double spearman_p_value(double rho, std::size_t n);

inline constexpr double kSignificanceLevel = 0.05;

struct SpearmanResult {
  double rho = 0;
  double p = 1;
  std::size_t n = 0;
  bool starred = false;
};

SpearmanResult spearman(std::span<const double> xs, std::span<const double> ys);

struct RepeatSummary {
  std::optional<double> mean;  // over classifiable repeats, ordinal only
  int classifiable = 0;
  int unclassifiable = 0;
};

RepeatSummary aggregate_repeats(std::span<const Answer> repeats, const Scale& scale);

// ---------------------------------------------------------------------------
// Score cards

struct CellKey {
  std::string model;
  std::string language;
  std::string country;
  ProbingMode mode = ProbingMode::FC;

  auto operator<=>(const CellKey&) const = default;
};

struct QuestionScore {
  std::string question_id;
  std::vector<Answer> repeats;      // index r-1 holds repeat r
  std::optional<double> epsilon;    // averaged over repeats; absent when excluded everywhere
  std::optional<double> mean;
};

struct RhoResult {
  std::string label;
  std::optional<double> rho;  // absent when a rank vector is constant
  double p = 1;
  std::size_t n = 0;
  bool starred = false;
  std::string note;
};

struct ScoreCard {
  CellKey key;
  int repeats = 0;
  int n_questions = 0;
  std::optional<double> hard;
  std::optional<double> soft;
  double unclassifiable_rate = 0;
  std::vector<QuestionScore> questions;
  std::map<Dimension, double> hofstede;
  std::string hofstede_note;  // why `hofstede` is empty, if it is
  std::map<Dimension, double> hofstede_official;
  std::vector<RhoResult> rho;
};

struct ScoreSet {
  std::string run_id;
  std::string corpus_hash;
  std::string bank_name;
  MetricOptions options;
  std::vector<ScoreCard> cards;
  // Inglehart-Welzel positions of the reference countries, when supplied.
  std::map<std::string, std::pair<double, double>> anchors;
};

/// Scores one bank's mapped records against per-country ground truth.
/// Hard/soft are only computed when the country's ground truth has answers.
ScoreSet score_records(const SurveyBank& bank, std::span<const StanceRecord> records,
                       const std::map<std::string, GroundTruthSet>& ground_truth, const MetricOptions& options = {});

nlohmann::ordered_json score_set_to_json(const ScoreSet& s, const SurveyBank& bank);
ScoreSet score_set_from_json(const nlohmann::json& j);

/// Reads mapped.jsonl, scores it and writes scores.json.
ScoreSet score_run(const RunStore& store, const std::string& run_id,
                   const std::map<std::string, GroundTruthSet>& ground_truth, const MetricOptions& options = {});
ScoreSet read_scores(const RunStore& store, const std::string& run_id);

}  // namespace calign
