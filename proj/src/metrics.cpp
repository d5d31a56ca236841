#include "calign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <boost/math/distributions/students_t.hpp>

#include "calign/error.hpp"
#include "calign/util.hpp"

namespace calign {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view policy_name(UnclassifiablePolicy p) {
  return p == UnclassifiablePolicy::penalize ? "penalize" : "exclude";
}

std::optional<UnclassifiablePolicy> parse_policy(std::string_view s) {
  if (s == "penalize") return UnclassifiablePolicy::penalize;
  if (s == "exclude") return UnclassifiablePolicy::exclude;
  return std::nullopt;
}

std::string_view denominator_name(CategoricalDenominator d) {
  return d == CategoricalDenominator::max_size ? "max" : "truth";
}

std::optional<CategoricalDenominator> parse_denominator(std::string_view s) {
  if (s == "max") return CategoricalDenominator::max_size;
  if (s == "truth") return CategoricalDenominator::truth_size;
  return std::nullopt;
}

double pair_epsilon(const AlignmentPair& p, CategoricalDenominator denominator) {
  if (p.truth.is_unclassifiable())
    throw MetricError(MetricError::Kind::unclassifiable_truth, p.question_id + ": ground truth cannot be unclassifiable");
  if (p.response.is_unclassifiable()) return 1.0;
  if (p.scale.is_ordinal()) {
    const int q = p.scale.size;
    if (q < 2) throw MetricError(MetricError::Kind::invalid_scale, p.question_id + ": ordinal scale needs q >= 2");
    return std::abs(p.response.choices.front() - p.truth.choices.front()) / static_cast<double>(q - 1);
  }
  std::set<int> truth(p.truth.choices.begin(), p.truth.choices.end());
  std::set<int> resp(p.response.choices.begin(), p.response.choices.end());
  std::size_t common = 0;
  for (int c : resp) common += truth.count(c);
  const double denom = denominator == CategoricalDenominator::max_size
                           ? static_cast<double>(std::max(truth.size(), resp.size()))
                           : static_cast<double>(truth.size());
  return 1.0 - static_cast<double>(common) / denom;
}

namespace {

bool matches(const AlignmentPair& p) {
  if (p.response.is_unclassifiable()) return false;
  return p.scale.is_ordinal() ? p.response.choices.front() == p.truth.choices.front()
                              : same_selection(p.response, p.truth);
}

void require_pairs(std::span<const AlignmentPair> pairs) {
  if (pairs.empty()) throw MetricError(MetricError::Kind::empty_input, "alignment needs at least one pair");
  for (const auto& p : pairs) {
    if (p.truth.is_unclassifiable())
      throw MetricError(MetricError::Kind::unclassifiable_truth, p.question_id + ": ground truth cannot be unclassifiable");
  }
}

}  // namespace

std::optional<double> hard_alignment(std::span<const AlignmentPair> pairs, UnclassifiablePolicy policy) {
  require_pairs(pairs);
  std::size_t n = 0;
  std::size_t hits = 0;
  for (const auto& p : pairs) {
    if (p.response.is_unclassifiable() && policy == UnclassifiablePolicy::exclude) continue;
    ++n;
    if (matches(p)) ++hits;
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::optional<double> soft_alignment(std::span<const AlignmentPair> pairs, const MetricOptions& options) {
  require_pairs(pairs);
  std::size_t n = 0;
  double total = 0;
  for (const auto& p : pairs) {
    if (p.response.is_unclassifiable() && options.policy == UnclassifiablePolicy::exclude) continue;
    ++n;
    total += 1.0 - pair_epsilon(p, options.denominator);
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

double unclassifiable_rate(std::span<const Answer> answers) {
  if (answers.empty()) throw MetricError(MetricError::Kind::empty_input, "unclassifiable rate of an empty set");
  const auto k = std::count_if(answers.begin(), answers.end(), [](const Answer& a) { return a.is_unclassifiable(); });
  return static_cast<double>(k) / static_cast<double>(answers.size());
}

double unclassifiable_rate(std::span<const StanceRecord> records) {
  std::vector<Answer> answers;
  answers.reserve(records.size());
  for (const auto& r : records) answers.push_back(r.classification);
  return unclassifiable_rate(answers);
}

std::map<Dimension, double> hofstede_scores(const std::map<int, double>& means, const HofstedeSpec& spec) {
  auto mean = [&means](int pos) {
    auto it = means.find(pos);
    if (it == means.end())
      throw MetricError(MetricError::Kind::missing_mean, "no mean for question m" + std::to_string(pos));
    if (!(it->second >= 1.0 && it->second <= 5.0))
      throw MetricError(MetricError::Kind::mean_out_of_range, "mean m" + std::to_string(pos) + " is outside [1, 5]");
    return it->second;
  };
  std::map<Dimension, double> out;
  for (const auto& [dim, f] : spec.formulas) {
    double v = f.constant;
    for (const auto& t : f.terms) v += t.weight * (mean(t.plus) - mean(t.minus));
    out[dim] = v;
  }
  return out;
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&xs](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman_p_value(double rho, std::size_t n) {
  if (n < 3) throw MetricError(MetricError::Kind::too_few, "significance needs n >= 3");
  if (std::abs(rho) >= 1.0) return 0.0;
  const double df = static_cast<double>(n - 2);
  const double t = rho * std::sqrt(df / (1.0 - rho * rho));
  boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

SpearmanResult spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size())
    throw MetricError(MetricError::Kind::length_mismatch, "spearman inputs differ in length (" + std::to_string(xs.size()) +
                                                              " vs " + std::to_string(ys.size()) + ")");
  const std::size_t n = xs.size();
  if (n < 3) throw MetricError(MetricError::Kind::too_few, "spearman needs n >= 3, got " + std::to_string(n));
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double mean = (static_cast<double>(n) + 1.0) / 2.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0 || syy == 0) throw MetricError(MetricError::Kind::zero_variance, "a rank vector is constant; rho undefined");
  SpearmanResult r;
  r.n = n;
  r.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  r.p = spearman_p_value(r.rho, n);
  r.starred = r.p <= kSignificanceLevel;
  return r;
}

RepeatSummary aggregate_repeats(std::span<const Answer> repeats, const Scale& scale) {
  if (repeats.empty()) throw MetricError(MetricError::Kind::empty_input, "no repeats to aggregate");
  RepeatSummary s;
  double sum = 0;
  for (const auto& a : repeats) {
    if (a.is_unclassifiable()) {
      ++s.unclassifiable;
      continue;
    }
    ++s.classifiable;
    if (scale.is_ordinal()) sum += a.choices.front();
  }
  if (scale.is_ordinal() && s.classifiable > 0) s.mean = sum / s.classifiable;
  return s;
}

// ---------------------------------------------------------------------------

namespace {

std::string cell_label(const CellKey& k) {
  return k.model + "/" + k.language + "/" + k.country + "/" + std::string(mode_name(k.mode));
}

ScoreCard score_cell(const SurveyBank& bank, const CellKey& key, const std::vector<const StanceRecord*>& records,
                     const GroundTruthSet* gt, const MetricOptions& options) {
  std::map<std::string, std::map<int, Answer>> by_question;
  std::set<int> repeat_ids;
  for (const auto* r : records) {
    if (!bank.find(r->question_id))
      throw MetricError(MetricError::Kind::empty_input, "mapped record for unknown question '" + r->question_id + "'");
    if (!by_question[r->question_id].emplace(r->repeat, r->classification).second)
      throw MetricError(MetricError::Kind::empty_input,
                        cell_label(key) + ": duplicate record for " + r->question_id + " repeat " + std::to_string(r->repeat));
    repeat_ids.insert(r->repeat);
  }
  for (const auto& q : bank.questions) {
    auto it = by_question.find(q.id);
    if (it == by_question.end() || it->second.size() != repeat_ids.size())
      throw MetricError(MetricError::Kind::empty_input, cell_label(key) + ": incomplete records for " + q.id);
  }

  ScoreCard card;
  card.key = key;
  card.repeats = static_cast<int>(repeat_ids.size());
  card.n_questions = static_cast<int>(bank.questions.size());

  std::vector<Answer> all;
  for (const auto& q : bank.questions) {
    QuestionScore qs;
    qs.question_id = q.id;
    for (int rep : repeat_ids) qs.repeats.push_back(by_question[q.id].at(rep));
    all.insert(all.end(), qs.repeats.begin(), qs.repeats.end());
    qs.mean = aggregate_repeats(qs.repeats, q.scale).mean;
    card.questions.push_back(std::move(qs));
  }
  card.unclassifiable_rate = unclassifiable_rate(all);

  const bool has_answers = gt && std::any_of(bank.questions.begin(), bank.questions.end(),
                                             [gt](const Question& q) { return gt->answers.count(q.id) > 0; });
  if (has_answers) {
    double hard_sum = 0, soft_sum = 0;
    int hard_n = 0, soft_n = 0;
    std::size_t rep_index = 0;
    for (int rep : repeat_ids) {
      (void)rep;
      std::vector<AlignmentPair> pairs;
      for (std::size_t i = 0; i < bank.questions.size(); ++i) {
        const auto& q = bank.questions[i];
        pairs.push_back({q.id, ground_truth_for(*gt, q.id), card.questions[i].repeats[rep_index], q.scale});
      }
      if (auto h = hard_alignment(pairs, options.policy)) {
        hard_sum += *h;
        ++hard_n;
      }
      if (auto s = soft_alignment(pairs, options)) {
        soft_sum += *s;
        ++soft_n;
      }
      ++rep_index;
    }
    if (hard_n > 0) card.hard = hard_sum / hard_n;
    if (soft_n > 0) card.soft = soft_sum / soft_n;

    for (std::size_t i = 0; i < bank.questions.size(); ++i) {
      const auto& q = bank.questions[i];
      double sum = 0;
      int n = 0;
      for (const auto& a : card.questions[i].repeats) {
        if (a.is_unclassifiable() && options.policy == UnclassifiablePolicy::exclude) continue;
        sum += pair_epsilon({q.id, ground_truth_for(*gt, q.id), a, q.scale}, options.denominator);
        ++n;
      }
      if (n > 0) card.questions[i].epsilon = sum / n;
    }
  }

  if (bank.hofstede_spec) {
    std::map<int, double> means;
    std::string missing;
    for (std::size_t i = 0; i < bank.questions.size(); ++i) {
      if (card.questions[i].mean) {
        means[static_cast<int>(i) + 1] = *card.questions[i].mean;
      } else {
        missing += (missing.empty() ? "" : ", ") + bank.questions[i].id;
      }
    }
    if (missing.empty()) {
      card.hofstede = hofstede_scores(means, *bank.hofstede_spec);
    } else {
      card.hofstede_note = "mean undefined (all repeats unclassifiable): " + missing;
    }
    if (gt) card.hofstede_official = gt->hofstede_official;
    if (!card.hofstede.empty() && card.hofstede_official.size() == kDimensions.size()) {
      std::vector<double> model, official;
      for (auto d : kDimensions) {
        model.push_back(card.hofstede.at(d));
        official.push_back(card.hofstede_official.at(d));
      }
      RhoResult rr;
      rr.label = "cross_value";
      rr.n = model.size();
      try {
        const auto s = spearman(model, official);
        rr.rho = s.rho;
        rr.p = s.p;
        rr.starred = s.starred;
      } catch (const MetricError& e) {
        if (e.kind() != MetricError::Kind::zero_variance) throw;
        rr.note = e.what();
      }
      card.rho.push_back(std::move(rr));
    }
  }
  return card;
}

ordered_json opt_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }
ordered_json opt_pct(const std::optional<double>& v) { return v ? ordered_json(format_pct(*v)) : ordered_json(nullptr); }

std::optional<double> read_opt(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

}  // namespace

ScoreSet score_records(const SurveyBank& bank, std::span<const StanceRecord> records,
                       const std::map<std::string, GroundTruthSet>& ground_truth, const MetricOptions& options) {
  if (records.empty()) throw MetricError(MetricError::Kind::empty_input, "no mapped records to score");
  std::map<CellKey, std::vector<const StanceRecord*>> cells;
  for (const auto& r : records) cells[{r.model, r.language, r.country, r.mode}].push_back(&r);

  ScoreSet set;
  set.bank_name = bank.name;
  set.corpus_hash = corpus_hash(bank);
  set.options = options;
  for (const auto& [key, recs] : cells) {
    auto it = ground_truth.find(key.country);
    if (it == ground_truth.end())
      throw MetricError(MetricError::Kind::empty_input, "no ground truth supplied for country '" + key.country + "'");
    set.cards.push_back(score_cell(bank, key, recs, &it->second, options));
  }
  for (const auto& [country, gt] : ground_truth) {
    if (gt.iw_position) set.anchors[country] = *gt.iw_position;
  }
  return set;
}

ordered_json score_set_to_json(const ScoreSet& s, const SurveyBank& bank) {
  ordered_json j;
  j["schema_version"] = kRunStoreSchemaVersion;
  j["run_id"] = s.run_id;
  j["corpus_hash"] = s.corpus_hash;
  j["bank"] = s.bank_name;
  j["policy"] = std::string(policy_name(s.options.policy));
  j["categorical_denominator"] = std::string(denominator_name(s.options.denominator));
  ordered_json anchors = ordered_json::object();
  for (const auto& [country, pos] : s.anchors) anchors[country] = ordered_json::array({pos.first, pos.second});
  j["anchors"] = std::move(anchors);
  ordered_json cards = ordered_json::array();
  for (const auto& c : s.cards) {
    ordered_json cj;
    cj["model"] = c.key.model;
    cj["language"] = c.key.language;
    cj["country"] = c.key.country;
    cj["mode"] = std::string(mode_name(c.key.mode));
    cj["repeats"] = c.repeats;
    cj["n_questions"] = c.n_questions;
    cj["hard"] = opt_number(c.hard);
    cj["soft"] = opt_number(c.soft);
    cj["unclassifiable_rate"] = c.unclassifiable_rate;
    cj["hard_pct"] = opt_pct(c.hard);
    cj["soft_pct"] = opt_pct(c.soft);
    cj["unclassifiable_pct"] = format_pct(c.unclassifiable_rate);
    ordered_json qs = ordered_json::array();
    for (const auto& q : c.questions) {
      const auto& scale = bank.question(q.question_id).scale;
      ordered_json qj;
      qj["id"] = q.question_id;
      ordered_json reps = ordered_json::array();
      for (const auto& a : q.repeats) {
        const json aj = answer_to_json(a, scale);
        reps.push_back(aj.is_array() ? ordered_json(aj.get<std::vector<int>>()) : ordered_json(aj.get<int>()));
      }
      qj["repeats"] = std::move(reps);
      qj["epsilon"] = opt_number(q.epsilon);
      qj["mean"] = opt_number(q.mean);
      qs.push_back(std::move(qj));
    }
    cj["questions"] = std::move(qs);
    ordered_json hof = ordered_json::object();
    for (const auto& [d, v] : c.hofstede) hof[std::string(dimension_name(d))] = v;
    cj["hofstede"] = std::move(hof);
    if (!c.hofstede_note.empty()) cj["hofstede_note"] = c.hofstede_note;
    ordered_json off = ordered_json::object();
    for (const auto& [d, v] : c.hofstede_official) off[std::string(dimension_name(d))] = v;
    cj["hofstede_official"] = std::move(off);
    ordered_json rho = ordered_json::array();
    for (const auto& r : c.rho) {
      ordered_json rj;
      rj["label"] = r.label;
      rj["rho"] = opt_number(r.rho);
      rj["p"] = r.p;
      rj["n"] = r.n;
      rj["starred"] = r.starred;
      if (!r.note.empty()) rj["note"] = r.note;
      rho.push_back(std::move(rj));
    }
    cj["rho"] = std::move(rho);
    cards.push_back(std::move(cj));
  }
  j["cards"] = std::move(cards);
  return j;
}

ScoreSet score_set_from_json(const json& j) {
  try {
    ScoreSet s;
    s.run_id = j.at("run_id").get<std::string>();
    s.corpus_hash = j.at("corpus_hash").get<std::string>();
    s.bank_name = j.at("bank").get<std::string>();
    auto policy = parse_policy(j.at("policy").get<std::string>());
    auto denom = parse_denominator(j.at("categorical_denominator").get<std::string>());
    if (!policy || !denom) throw ReportError("scores.json has an unknown policy or denominator");
    s.options = {*policy, *denom};
    for (const auto& [country, pos] : j.at("anchors").items())
      s.anchors[country] = {pos.at(0).get<double>(), pos.at(1).get<double>()};
    for (const auto& cj : j.at("cards")) {
      ScoreCard c;
      c.key.model = cj.at("model").get<std::string>();
      c.key.language = cj.at("language").get<std::string>();
      c.key.country = cj.at("country").get<std::string>();
      auto mode = parse_mode(cj.at("mode").get<std::string>());
      if (!mode) throw ReportError("scores.json has an unknown mode");
      c.key.mode = *mode;
      c.repeats = cj.at("repeats").get<int>();
      c.n_questions = cj.at("n_questions").get<int>();
      c.hard = read_opt(cj, "hard");
      c.soft = read_opt(cj, "soft");
      c.unclassifiable_rate = cj.at("unclassifiable_rate").get<double>();
      for (const auto& qj : cj.at("questions")) {
        QuestionScore q;
        q.question_id = qj.at("id").get<std::string>();
        for (const auto& a : qj.at("repeats")) q.repeats.push_back(answer_from_json(a));
        q.epsilon = read_opt(qj, "epsilon");
        q.mean = read_opt(qj, "mean");
        c.questions.push_back(std::move(q));
      }
      auto dims = [](const json& obj) {
        std::map<Dimension, double> out;
        for (const auto& [name, v] : obj.items()) {
          auto d = parse_dimension(name);
          if (!d) throw ReportError("scores.json has an unknown dimension '" + name + "'");
          out[*d] = v.get<double>();
        }
        return out;
      };
      c.hofstede = dims(cj.at("hofstede"));
      c.hofstede_note = cj.value("hofstede_note", std::string{});
      c.hofstede_official = dims(cj.at("hofstede_official"));
      for (const auto& rj : cj.at("rho")) {
        RhoResult r;
        r.label = rj.at("label").get<std::string>();
        r.rho = read_opt(rj, "rho");
        r.p = rj.at("p").get<double>();
        r.n = rj.at("n").get<std::size_t>();
        r.starred = rj.at("starred").get<bool>();
        r.note = rj.value("note", std::string{});
        c.rho.push_back(std::move(r));
      }
      s.cards.push_back(std::move(c));
    }
    return s;
  } catch (const json::exception& e) {
    throw ReportError(std::string("malformed scores.json: ") + e.what());
  }
}

ScoreSet score_run(const RunStore& store, const std::string& run_id,
                   const std::map<std::string, GroundTruthSet>& ground_truth, const MetricOptions& options) {
  const RunMeta meta = store.read_meta(run_id);
  const auto records = read_mapped(store, run_id);
  ScoreSet set = score_records(meta.bank, records, ground_truth, options);
  set.run_id = run_id;
  write_file_atomic(store.run_dir(run_id) / "scores.json", score_set_to_json(set, meta.bank).dump(2) + "\n");
  return set;
}

ScoreSet read_scores(const RunStore& store, const std::string& run_id) {
  const auto path = store.run_dir(run_id) / "scores.json";
  std::error_code ec;
  if (!std::filesystem::exists(path, ec))
    throw ReportError("run '" + run_id + "' has no scores.json; run `score` first");
  try {
    return score_set_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ReportError(std::string("malformed scores.json: ") + e.what());
  }
}

}  // namespace calign
