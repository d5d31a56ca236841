#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "calign/corpus.hpp"
#include "calign/metrics.hpp"

namespace calign {

/// "english" when the prompt language is en, "native" otherwise.
std::string language_regime(const std::string& language);

struct AlignmentCell {
  std::optional<double> hard;
  std::optional<double> soft;
  double unclassifiable_rate = 0;
  int n_questions = 0;
  bool bold_hard = false;
  bool bold_soft = false;
};

struct AlignmentRow {
  std::string model;
  std::string regime;
  std::map<std::pair<std::string, ProbingMode>, AlignmentCell> cells;  // (country, mode)
};

struct AlignmentTable {
  std::vector<std::string> countries;
  std::vector<ProbingMode> modes;
  std::vector<AlignmentRow> rows;  // english rows before native rows, models sorted
};

/// Maxima are marked per (model, country, metric) across both regimes and all
/// modes; ties are all marked.
AlignmentTable alignment_table(const std::vector<ScoreCard>& cards);

struct CrossValueEntry {
  std::string model;
  std::string language;
  std::string country;
  ProbingMode mode = ProbingMode::FC;
  RhoResult rho;
};

struct CrossCountryEntry {
  std::string model;
  std::string language_regime;
  ProbingMode mode = ProbingMode::FC;
  Dimension dimension = Dimension::pdi;
  std::vector<std::string> countries;
  RhoResult rho;
};

struct CorrelationTable {
  std::vector<CrossValueEntry> cross_value;
  std::vector<CrossCountryEntry> cross_country;
  std::vector<std::string> skipped;  // groups with too few countries
};

CorrelationTable correlation_tables(const std::vector<ScoreCard>& cards);

enum class IWKind { country_anchor, model_projection };

struct IWPoint {
  std::string label;
  double x = 0;  // survival - self-expression
  double y = 0;  // traditional - secular-rational
  IWKind kind = IWKind::model_projection;
  std::optional<ProbingMode> mode;
};

/// Projects one set of per-question answers. Throws ReportError naming the
/// first missing or unclassifiable indicator.
IWPoint iw_projection(const std::map<std::string, Answer>& answers, const SurveyBank& bank, const ProjectionSpec& spec);

struct ProjectionResult {
  std::vector<IWPoint> points;   // anchors first, then model projections
  std::vector<std::string> omitted;
};

/// Projects every card by averaging fully classifiable repeats.
ProjectionResult project_cards(const ScoreSet& scores, const SurveyBank& bank, const ProjectionSpec& spec);

std::string alignment_csv(const ScoreSet& scores);
std::string cross_value_csv(const CorrelationTable& t);
std::string cross_country_csv(const CorrelationTable& t);
nlohmann::ordered_json report_json(const ScoreSet& scores, const AlignmentTable& table, const CorrelationTable& corr);
std::string projection_svg(const ProjectionResult& projection);

/// Writes report/<artifact> files for the requested formats (csv, json, svg)
/// and returns their paths in a fixed order.
std::vector<std::filesystem::path> emit_report(const RunStore& store, const std::string& run_id,
                                               const std::set<std::string>& formats);

struct ComparisonResult {
  nlohmann::ordered_json diff;
  int sign_flips = 0;
  int maxima_changes = 0;
};

/// Cell-by-cell comparison of two scored runs.
ComparisonResult compare_runs(const ScoreSet& a, const ScoreSet& b);

}  // namespace calign
