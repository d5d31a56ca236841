#include "calign/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "calign/error.hpp"
#include "calign/util.hpp"

namespace calign {

using nlohmann::ordered_json;

std::string language_regime(const std::string& language) { return language == "en" ? "english" : "native"; }

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s == "-0.00" || s == "-0.0000") s.erase(0, 1);
  return s;
}

bool same_value(const std::optional<double>& a, const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || std::abs(*a - *b) <= 1e-12;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

AlignmentTable alignment_table(const std::vector<ScoreCard>& cards) {
  if (cards.empty()) throw ReportError("alignment table needs at least one score card");
  AlignmentTable table;
  std::set<std::string> countries;
  std::set<ProbingMode> modes;
  std::map<std::pair<std::string, std::string>, AlignmentRow> rows;  // (regime order key, model)
  for (const auto& c : cards) {
    const std::string regime = language_regime(c.key.language);
    auto& row = rows[{regime == "english" ? "0" : "1", c.key.model}];
    row.model = c.key.model;
    row.regime = regime;
    AlignmentCell cell{c.hard, c.soft, c.unclassifiable_rate, c.n_questions, false, false};
    auto [it, inserted] = row.cells.emplace(std::make_pair(c.key.country, c.key.mode), cell);
    if (!inserted) {
      const auto& prev = it->second;
      if (!same_value(prev.hard, cell.hard) || !same_value(prev.soft, cell.soft) ||
          std::abs(prev.unclassifiable_rate - cell.unclassifiable_rate) > 1e-12)
        throw ReportError("conflicting duplicate cells for " + c.key.model + "/" + regime + "/" + c.key.country + "/" +
                          std::string(mode_name(c.key.mode)));
    }
    countries.insert(c.key.country);
    modes.insert(c.key.mode);
  }
  table.countries.assign(countries.begin(), countries.end());
  for (auto m : kModes)
    if (modes.count(m)) table.modes.push_back(m);
  for (auto& [k, row] : rows) table.rows.push_back(std::move(row));

  // Compare at the printed precision so visually equal cells are all marked.
  auto rounded = [](const std::optional<double>& v) { return v ? std::optional<std::string>(format_pct(*v)) : std::nullopt; };
  auto numeric = [](const std::string& s) { return std::stod(s); };
  std::set<std::string> models;
  for (const auto& r : table.rows) models.insert(r.model);
  for (const auto& model : models) {
    for (const auto& country : table.countries) {
      for (int metric = 0; metric < 2; ++metric) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& r : table.rows) {
          if (r.model != model) continue;
          for (const auto& [key, cell] : r.cells) {
            if (key.first != country) continue;
            if (auto v = rounded(metric == 0 ? cell.hard : cell.soft)) best = std::max(best, numeric(*v));
          }
        }
        for (auto& r : table.rows) {
          if (r.model != model) continue;
          for (auto& [key, cell] : r.cells) {
            if (key.first != country) continue;
            auto v = rounded(metric == 0 ? cell.hard : cell.soft);
            if (v && numeric(*v) == best) (metric == 0 ? cell.bold_hard : cell.bold_soft) = true;
          }
        }
      }
    }
  }
  return table;
}

CorrelationTable correlation_tables(const std::vector<ScoreCard>& cards) {
  CorrelationTable t;
  bool any = false;
  for (const auto& c : cards) {
    if (!c.hofstede.empty()) any = true;
    for (const auto& r : c.rho) {
      if (r.label == "cross_value") t.cross_value.push_back({c.key.model, c.key.language, c.key.country, c.key.mode, r});
    }
  }
  if (!any) throw ReportError("correlation tables need Hofstede scores; none of the score cards has them");

  struct Group {
    std::vector<const ScoreCard*> cards;
  };
  std::map<std::tuple<std::string, std::string, ProbingMode>, Group> groups;
  for (const auto& c : cards) {
    if (c.hofstede.empty() || c.hofstede_official.size() != kDimensions.size()) continue;
    groups[{c.key.model, language_regime(c.key.language), c.key.mode}].cards.push_back(&c);
  }
  for (const auto& [key, g] : groups) {
    const auto& [model, regime, mode] = key;
    const std::string label = model + "/" + regime + "/" + std::string(mode_name(mode));
    std::map<std::string, const ScoreCard*> by_country;
    for (const auto* c : g.cards) {
      auto [it, inserted] = by_country.emplace(c->key.country, c);
      if (!inserted && it->second->hofstede != c->hofstede)
        throw ReportError("conflicting Hofstede scores for " + label + "/" + c->key.country);
    }
    if (by_country.size() < 3) {
      t.skipped.push_back(label + ": cross-country correlation needs at least 3 countries, have " +
                          std::to_string(by_country.size()));
      continue;
    }
    for (auto d : kDimensions) {
      CrossCountryEntry e;
      e.model = model;
      e.language_regime = regime;
      e.mode = mode;
      e.dimension = d;
      std::vector<double> xs, ys;
      for (const auto& [country, c] : by_country) {
        e.countries.push_back(country);
        xs.push_back(c->hofstede.at(d));
        ys.push_back(c->hofstede_official.at(d));
      }
      e.rho.label = "cross_country_" + std::string(dimension_name(d));
      e.rho.n = xs.size();
      try {
        const auto s = spearman(xs, ys);
        e.rho.rho = s.rho;
        e.rho.p = s.p;
        e.rho.starred = s.starred;
      } catch (const MetricError& err) {
        if (err.kind() != MetricError::Kind::zero_variance) throw;
        e.rho.note = err.what();
      }
      t.cross_country.push_back(std::move(e));
    }
  }
  return t;
}

IWPoint iw_projection(const std::map<std::string, Answer>& answers, const SurveyBank& bank, const ProjectionSpec& spec) {
  IWPoint pt;
  for (const auto& [qid, l] : spec.loadings) {
    auto it = answers.find(qid);
    if (it == answers.end()) throw ReportError("projection indicator " + qid + " is missing");
    if (it->second.is_unclassifiable()) throw ReportError("projection indicator " + qid + " is unclassifiable");
    const auto& q = bank.question(qid);
    double value = 0;
    if (q.scale.is_ordinal()) {
      value = it->second.choices.front();
    } else {
      for (int c : it->second.choices) {
        if (c < 1 || c > static_cast<int>(l.option_scores.size()))
          throw ReportError("projection indicator " + qid + " has an out-of-range selection");
        value += l.option_scores[c - 1];
      }
    }
    const double z = (value - l.mean) / l.sd;
    pt.x += l.survival_selfexpr * z;
    pt.y += l.traditional_secular * z;
  }
  return pt;
}

ProjectionResult project_cards(const ScoreSet& scores, const SurveyBank& bank, const ProjectionSpec& spec) {
  ProjectionResult out;
  for (const auto& [country, pos] : scores.anchors)
    out.points.push_back({country, pos.first, pos.second, IWKind::country_anchor, std::nullopt});
  for (const auto& c : scores.cards) {
    const std::string label = c.key.model + " " + c.key.country + " " + c.key.language;
    double sx = 0, sy = 0;
    int n = 0;
    std::string reason;
    for (int r = 0; r < c.repeats; ++r) {
      std::map<std::string, Answer> answers;
      for (const auto& q : c.questions)
        if (r < static_cast<int>(q.repeats.size())) answers[q.question_id] = q.repeats[r];
      try {
        const auto pt = iw_projection(answers, bank, spec);
        sx += pt.x;
        sy += pt.y;
        ++n;
      } catch (const ReportError& e) {
        if (reason.empty()) reason = e.what();
      }
    }
    if (n == 0) {
      out.omitted.push_back(label + " " + std::string(mode_name(c.key.mode)) + ": " + reason);
      continue;
    }
    out.points.push_back({label, sx / n, sy / n, IWKind::model_projection, c.key.mode});
  }
  return out;
}

std::string alignment_csv(const ScoreSet& scores) {
  std::string out = "model,language_regime,country,mode,hard_pct,soft_pct,unclassifiable_pct,n_questions,policy\n";
  for (const auto& c : scores.cards) {
    out += csv_field(c.key.model) + "," + language_regime(c.key.language) + "," + csv_field(c.key.country) + "," +
           std::string(mode_name(c.key.mode)) + "," + (c.hard ? format_pct(*c.hard) : "") + "," +
           (c.soft ? format_pct(*c.soft) : "") + "," + format_pct(c.unclassifiable_rate) + "," +
           std::to_string(c.n_questions) + "," + std::string(policy_name(scores.options.policy)) + "\n";
  }
  return out;
}

namespace {

std::string rho_fields(const RhoResult& r) {
  return (r.rho ? fixed(*r.rho, 4) : "") + "," + (r.rho ? fixed(r.p, 4) : "") + "," + std::to_string(r.n) + "," +
         (r.starred ? "*" : "");
}

ordered_json rho_json(const RhoResult& r) {
  ordered_json j;
  j["rho"] = r.rho ? ordered_json(*r.rho) : ordered_json(nullptr);
  j["p"] = r.p;
  j["n"] = r.n;
  j["starred"] = r.starred;
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

}  // namespace

std::string cross_value_csv(const CorrelationTable& t) {
  std::string out = "model,language_regime,country,mode,rho,p,n,starred\n";
  for (const auto& e : t.cross_value) {
    out += csv_field(e.model) + "," + language_regime(e.language) + "," + csv_field(e.country) + "," +
           std::string(mode_name(e.mode)) + "," + rho_fields(e.rho) + "\n";
  }
  return out;
}

std::string cross_country_csv(const CorrelationTable& t) {
  std::string out = "model,language_regime,mode,dimension,rho,p,n,starred\n";
  for (const auto& e : t.cross_country) {
    out += csv_field(e.model) + "," + e.language_regime + "," + std::string(mode_name(e.mode)) + "," +
           std::string(dimension_name(e.dimension)) + "," + rho_fields(e.rho) + "\n";
  }
  return out;
}

ordered_json report_json(const ScoreSet& scores, const AlignmentTable& table, const CorrelationTable& corr) {
  ordered_json j;
  j["run_id"] = scores.run_id;
  j["bank"] = scores.bank_name;
  j["policy"] = std::string(policy_name(scores.options.policy));
  j["categorical_denominator"] = std::string(denominator_name(scores.options.denominator));
  ordered_json rows = ordered_json::array();
  for (const auto& r : table.rows) {
    ordered_json rj;
    rj["model"] = r.model;
    rj["language_regime"] = r.regime;
    ordered_json cells = ordered_json::array();
    for (const auto& country : table.countries) {
      for (auto m : table.modes) {
        auto it = r.cells.find({country, m});
        ordered_json cj;
        cj["country"] = country;
        cj["mode"] = std::string(mode_name(m));
        if (it == r.cells.end()) {
          cj["present"] = false;
        } else {
          const auto& c = it->second;
          cj["present"] = true;
          cj["hard_pct"] = c.hard ? ordered_json(format_pct(*c.hard)) : ordered_json(nullptr);
          cj["soft_pct"] = c.soft ? ordered_json(format_pct(*c.soft)) : ordered_json(nullptr);
          cj["unclassifiable_pct"] = format_pct(c.unclassifiable_rate);
          cj["bold_hard"] = c.bold_hard;
          cj["bold_soft"] = c.bold_soft;
        }
        cells.push_back(std::move(cj));
      }
    }
    rj["cells"] = std::move(cells);
    rows.push_back(std::move(rj));
  }
  j["alignment"] = std::move(rows);
  ordered_json cv = ordered_json::array();
  for (const auto& e : corr.cross_value) {
    ordered_json ej = {{"model", e.model},
                       {"language", e.language},
                       {"country", e.country},
                       {"mode", std::string(mode_name(e.mode))}};
    ej["result"] = rho_json(e.rho);
    cv.push_back(std::move(ej));
  }
  j["cross_value"] = std::move(cv);
  ordered_json cc = ordered_json::array();
  for (const auto& e : corr.cross_country) {
    ordered_json ej = {{"model", e.model},
                       {"language_regime", e.language_regime},
                       {"mode", std::string(mode_name(e.mode))},
                       {"dimension", std::string(dimension_name(e.dimension))},
                       {"countries", e.countries}};
    ej["result"] = rho_json(e.rho);
    cc.push_back(std::move(ej));
  }
  j["cross_country"] = std::move(cc);
  j["skipped"] = corr.skipped;
  return j;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* mode_color(ProbingMode m) {
  switch (m) {
    case ProbingMode::FC: return "#1f77b4";
    case ProbingMode::FR: return "#d62728";
    case ProbingMode::FO: return "#2ca02c";
    case ProbingMode::FU: return "#9467bd";
  }
  return "#000000";
}

std::string marker(std::optional<ProbingMode> mode, double cx, double cy) {
  const double s = 6;
  auto pts = [](std::initializer_list<std::pair<double, double>> ps) {
    std::string out;
    for (const auto& [x, y] : ps) out += (out.empty() ? "" : " ") + fixed(x, 2) + "," + fixed(y, 2);
    return out;
  };
  if (!mode) {
    return "<circle cx=\"" + fixed(cx, 2) + "\" cy=\"" + fixed(cy, 2) +
           "\" r=\"4\" fill=\"#ffffff\" stroke=\"#333333\" stroke-width=\"1.5\"/>";
  }
  const std::string fill = mode_color(*mode);
  switch (*mode) {
    case ProbingMode::FC:
      return "<rect x=\"" + fixed(cx - s / 2 - 1, 2) + "\" y=\"" + fixed(cy - s / 2 - 1, 2) + "\" width=\"" + fixed(s + 2, 2) +
             "\" height=\"" + fixed(s + 2, 2) + "\" fill=\"" + fill + "\"/>";
    case ProbingMode::FR:
      return "<polygon points=\"" + pts({{cx, cy - s}, {cx + s, cy + s * 0.8}, {cx - s, cy + s * 0.8}}) + "\" fill=\"" +
             fill + "\"/>";
    case ProbingMode::FO:
      return "<polygon points=\"" + pts({{cx, cy - s}, {cx + s, cy}, {cx, cy + s}, {cx - s, cy}}) + "\" fill=\"" + fill +
             "\"/>";
    case ProbingMode::FU: {
      std::string p;
      for (int i = 0; i < 10; ++i) {
        const double r = i % 2 == 0 ? s + 1 : (s + 1) * 0.45;
        const double a = -M_PI / 2 + i * M_PI / 5;
        p += (p.empty() ? "" : " ") + fixed(cx + r * std::cos(a), 2) + "," + fixed(cy + r * std::sin(a), 2);
      }
      return "<polygon points=\"" + p + "\" fill=\"" + fill + "\"/>";
    }
  }
  return {};
}

}  // namespace

std::string projection_svg(const ProjectionResult& projection) {
  const double width = 720, height = 540;
  const double left = 70, right = 170, top = 40, bottom = 60;
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool first = true;
  for (const auto& p : projection.points) {
    if (first) {
      xmin = xmax = p.x;
      ymin = ymax = p.y;
      first = false;
    }
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  auto widen = [](double& lo, double& hi) {
    if (hi - lo < 1e-9) {
      lo -= 1;
      hi += 1;
    }
    const double pad = (hi - lo) * 0.1;
    lo -= pad;
    hi += pad;
  };
  widen(xmin, xmax);
  widen(ymin, ymax);
  const double pw = width - left - right, ph = height - top - bottom;
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 720 540\" width=\"720\" height=\"540\" "
         "font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"720\" height=\"540\" fill=\"#ffffff\"/>\n";
  svg += "<rect x=\"" + fixed(left, 2) + "\" y=\"" + fixed(top, 2) + "\" width=\"" + fixed(pw, 2) + "\" height=\"" +
         fixed(ph, 2) + "\" fill=\"none\" stroke=\"#999999\"/>\n";
  if (xmin < 0 && xmax > 0)
    svg += "<line x1=\"" + fixed(sx(0), 2) + "\" y1=\"" + fixed(top, 2) + "\" x2=\"" + fixed(sx(0), 2) + "\" y2=\"" +
           fixed(top + ph, 2) + "\" stroke=\"#dddddd\"/>\n";
  if (ymin < 0 && ymax > 0)
    svg += "<line x1=\"" + fixed(left, 2) + "\" y1=\"" + fixed(sy(0), 2) + "\" x2=\"" + fixed(left + pw, 2) + "\" y2=\"" +
           fixed(sy(0), 2) + "\" stroke=\"#dddddd\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4, yv = ymin + (ymax - ymin) * i / 4;
    svg += "<text x=\"" + fixed(sx(xv), 2) + "\" y=\"" + fixed(top + ph + 16, 2) + "\" text-anchor=\"middle\">" +
           fixed(xv, 2) + "</text>\n";
    svg += "<text x=\"" + fixed(left - 6, 2) + "\" y=\"" + fixed(sy(yv) + 4, 2) + "\" text-anchor=\"end\">" + fixed(yv, 2) +
           "</text>\n";
  }
  svg += "<text x=\"" + fixed(left + pw / 2, 2) + "\" y=\"" + fixed(height - 18, 2) +
         "\" text-anchor=\"middle\">Survival vs. self-expression values</text>\n";
  svg += "<text x=\"18\" y=\"" + fixed(top + ph / 2, 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
         fixed(top + ph / 2, 2) + ")\">Traditional vs. secular-rational values</text>\n";
  for (const auto& p : projection.points) {
    const double cx = sx(p.x), cy = sy(p.y);
    svg += "<g><title>" + xml_escape(p.label) + (p.mode ? " " + std::string(mode_name(*p.mode)) : "") + "</title>" +
           marker(p.mode, cx, cy) + "</g>\n";
    if (p.kind == IWKind::country_anchor)
      svg += "<text x=\"" + fixed(cx + 7, 2) + "\" y=\"" + fixed(cy - 6, 2) + "\">" + xml_escape(p.label) + "</text>\n";
  }
  const double lx = width - right + 20;
  double ly = top + 10;
  svg += "<circle cx=\"" + fixed(lx, 2) + "\" cy=\"" + fixed(ly, 2) +
         "\" r=\"4\" fill=\"#ffffff\" stroke=\"#333333\" stroke-width=\"1.5\"/>";
  svg += "<text x=\"" + fixed(lx + 12, 2) + "\" y=\"" + fixed(ly + 4, 2) + "\">country</text>\n";
  for (auto m : kModes) {
    ly += 20;
    svg += marker(m, lx, ly) + "<text x=\"" + fixed(lx + 12, 2) + "\" y=\"" + fixed(ly + 4, 2) + "\">" +
           std::string(mode_name(m)) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<std::filesystem::path> emit_report(const RunStore& store, const std::string& run_id,
                                               const std::set<std::string>& formats) {
  if (formats.empty()) throw ReportError("no report formats requested");
  for (const auto& f : formats) {
    if (f != "csv" && f != "json" && f != "svg") throw ReportError("unknown report format '" + f + "' (csv, json, svg)");
  }
  const ScoreSet scores = read_scores(store, run_id);
  const RunMeta meta = store.read_meta(run_id);
  if (scores.corpus_hash != meta.corpus_hash)
    throw ReportError("scores.json was computed against a different corpus than run '" + run_id + "'");
  if (formats.count("svg") && !meta.bank.projection)
    throw ReportError("svg output needs a projection spec; corpus '" + meta.bank.name + "' has none");

  const auto table = alignment_table(scores.cards);
  CorrelationTable corr;
  if (meta.bank.hofstede_spec) corr = correlation_tables(scores.cards);

  const auto dir = store.run_dir(run_id) / "report";
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& data) {
    const auto path = dir / name;
    write_file_atomic(path, data);
    written.push_back(path);
  };
  if (formats.count("csv")) {
    put("alignment.csv", alignment_csv(scores));
    if (meta.bank.hofstede_spec) {
      put("cross_value.csv", cross_value_csv(corr));
      put("cross_country.csv", cross_country_csv(corr));
    }
  }
  if (formats.count("json")) put("report.json", report_json(scores, table, corr).dump(2) + "\n");
  if (formats.count("svg")) {
    const auto projection = project_cards(scores, meta.bank, *meta.bank.projection);
    put("iw_projection.svg", projection_svg(projection));
    ordered_json pj = ordered_json::array();
    for (const auto& p : projection.points) {
      ordered_json e = {{"label", p.label},
                        {"kind", p.kind == IWKind::country_anchor ? "country_anchor" : "model_projection"},
                        {"x", p.x},
                        {"y", p.y}};
      e["mode"] = p.mode ? ordered_json(std::string(mode_name(*p.mode))) : ordered_json(nullptr);
      pj.push_back(std::move(e));
    }
    ordered_json doc = {{"points", pj}, {"omitted", projection.omitted}};
    put("iw_projection.json", doc.dump(2) + "\n");
  }
  return written;
}

ComparisonResult compare_runs(const ScoreSet& a, const ScoreSet& b) {
  ComparisonResult out;
  std::map<CellKey, const ScoreCard*> ia, ib;
  for (const auto& c : a.cards) ia[c.key] = &c;
  for (const auto& c : b.cards) ib[c.key] = &c;
  auto key_json = [](const CellKey& k) {
    return ordered_json{{"model", k.model}, {"language", k.language}, {"country", k.country},
                        {"mode", std::string(mode_name(k.mode))}};
  };
  auto delta = [](const std::optional<double>& x, const std::optional<double>& y) {
    return x && y ? ordered_json(*y - *x) : ordered_json(nullptr);
  };
  ordered_json cells = ordered_json::array();
  ordered_json only_a = ordered_json::array(), only_b = ordered_json::array();
  ordered_json flips = ordered_json::array();
  for (const auto& [k, ca] : ia) {
    auto it = ib.find(k);
    if (it == ib.end()) {
      only_a.push_back(key_json(k));
      continue;
    }
    const auto* cb = it->second;
    ordered_json cj = key_json(k);
    cj["hard_a"] = ca->hard ? ordered_json(format_pct(*ca->hard)) : ordered_json(nullptr);
    cj["hard_b"] = cb->hard ? ordered_json(format_pct(*cb->hard)) : ordered_json(nullptr);
    cj["soft_a"] = ca->soft ? ordered_json(format_pct(*ca->soft)) : ordered_json(nullptr);
    cj["soft_b"] = cb->soft ? ordered_json(format_pct(*cb->soft)) : ordered_json(nullptr);
    cj["hard_delta"] = delta(ca->hard, cb->hard);
    cj["soft_delta"] = delta(ca->soft, cb->soft);
    cj["unclassifiable_delta"] = cb->unclassifiable_rate - ca->unclassifiable_rate;
    cells.push_back(std::move(cj));
    for (const auto& ra : ca->rho) {
      for (const auto& rb : cb->rho) {
        if (ra.label != rb.label || !ra.rho || !rb.rho) continue;
        if ((*ra.rho > 0 && *rb.rho < 0) || (*ra.rho < 0 && *rb.rho > 0)) {
          ordered_json fj = key_json(k);
          fj["label"] = ra.label;
          fj["rho_a"] = *ra.rho;
          fj["rho_b"] = *rb.rho;
          flips.push_back(std::move(fj));
        }
      }
    }
  }
  for (const auto& [k, cb] : ib)
    if (!ia.count(k)) only_b.push_back(key_json(k));

  // Best probing mode per (model, language, country, metric).
  auto best_modes = [](const std::map<CellKey, const ScoreCard*>& idx, int metric) {
    std::map<std::tuple<std::string, std::string, std::string>, std::pair<double, std::vector<std::string>>> best;
    for (const auto& [k, c] : idx) {
      const auto& v = metric == 0 ? c->hard : c->soft;
      if (!v) continue;
      const double r = std::stod(format_pct(*v));
      auto& slot = best[{k.model, k.language, k.country}];
      if (slot.second.empty() || r > slot.first) {
        slot = {r, {std::string(mode_name(k.mode))}};
      } else if (r == slot.first) {
        slot.second.push_back(std::string(mode_name(k.mode)));
      }
    }
    return best;
  };
  ordered_json maxima = ordered_json::array();
  for (int metric = 0; metric < 2; ++metric) {
    const auto ba = best_modes(ia, metric), bb = best_modes(ib, metric);
    for (const auto& [k, va] : ba) {
      auto it = bb.find(k);
      if (it == bb.end() || it->second.second == va.second) continue;
      maxima.push_back({{"model", std::get<0>(k)},
                        {"language", std::get<1>(k)},
                        {"country", std::get<2>(k)},
                        {"metric", metric == 0 ? "hard" : "soft"},
                        {"best_a", va.second},
                        {"best_b", it->second.second}});
    }
  }

  if (!a.cards.empty() && !b.cards.empty()) {
    bool hof_a = std::any_of(a.cards.begin(), a.cards.end(), [](const ScoreCard& c) { return !c.hofstede.empty(); });
    bool hof_b = std::any_of(b.cards.begin(), b.cards.end(), [](const ScoreCard& c) { return !c.hofstede.empty(); });
    if (hof_a && hof_b) {
      const auto ta = correlation_tables(a.cards), tb = correlation_tables(b.cards);
      for (const auto& ea : ta.cross_country) {
        for (const auto& eb : tb.cross_country) {
          if (ea.model != eb.model || ea.language_regime != eb.language_regime || ea.mode != eb.mode ||
              ea.dimension != eb.dimension || !ea.rho.rho || !eb.rho.rho)
            continue;
          if ((*ea.rho.rho > 0 && *eb.rho.rho < 0) || (*ea.rho.rho < 0 && *eb.rho.rho > 0)) {
            flips.push_back({{"model", ea.model},
                             {"language_regime", ea.language_regime},
                             {"mode", std::string(mode_name(ea.mode))},
                             {"label", ea.rho.label},
                             {"rho_a", *ea.rho.rho},
                             {"rho_b", *eb.rho.rho}});
          }
        }
      }
    }
  }

  out.sign_flips = static_cast<int>(flips.size());
  out.maxima_changes = static_cast<int>(maxima.size());
  out.diff["run_a"] = a.run_id;
  out.diff["run_b"] = b.run_id;
  out.diff["cells"] = std::move(cells);
  out.diff["only_in_a"] = std::move(only_a);
  out.diff["only_in_b"] = std::move(only_b);
  out.diff["rho_sign_flips"] = std::move(flips);
  out.diff["maxima_changes"] = std::move(maxima);
  return out;
}

}  // namespace calign
