#include "calign/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "calign/corpus.hpp"
#include "calign/error.hpp"
#include "calign/mapping.hpp"
#include "calign/metrics.hpp"
#include "calign/reporting.hpp"
#include "calign/runner.hpp"
#include "calign/util.hpp"

namespace calign {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Globals {
  std::string workdir = ".";
  bool json = false;
};

struct ClientOptions {
  std::string endpoint;
  std::string replay;
  std::string record;
  std::string api_key_env = "OPENAI_API_KEY";
  int max_retries = 5;
};

struct RunArgs {
  std::string plan;
  ClientOptions client;
  std::optional<std::string> model;
  std::optional<double> temperature;
  std::optional<double> top_p;
  std::optional<int> max_tokens;
  std::optional<int> repeats;
  std::optional<int> parallelism;
  std::vector<std::string> refuse;
};

struct MapArgs {
  std::string run;
  ClientOptions client;
  std::string judge_model = "gpt-4o";
  double judge_temperature = 0.0;
  std::string orientation = "forward";
  int parallelism = 4;
};

struct ScoreArgs {
  std::string run;
  std::vector<std::string> gt;
  std::string policy = "penalize";
  std::string denominator = "max";
};

struct ReportArgs {
  std::string run;
  std::vector<std::string> formats{"csv", "json"};
};

struct AnnotateArgs {
  std::string run;
  std::size_t sample = 50;
  unsigned long long seed = 0;
  bool stats = false;
};

struct CompareArgs {
  std::string run_a;
  std::string run_b;
};

struct ValidateArgs {
  std::string corpus;
  std::vector<std::string> gt;
};

class Context {
 public:
  Context(const Globals& g, std::istream& in, std::ostream& out, std::ostream& err)
      : globals_(g), in_(in), out_(out), err_(err), store_(fs::path(g.workdir)) {}

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : fs::path(globals_.workdir) / path;
  }

  const RunStore& store() const { return store_; }
  bool json() const { return globals_.json; }
  std::istream& in() { return in_; }
  std::ostream& out() { return out_; }
  std::ostream& err() { return err_; }

  void emit(const ordered_json& payload, const std::string& text) {
    if (globals_.json) {
      ordered_json j = {{"ok", true}};
      for (const auto& [k, v] : payload.items()) j[k] = v;
      out_ << j.dump() << "\n";
    } else {
      out_ << text;
    }
  }

 private:
  const Globals& globals_;
  std::istream& in_;
  std::ostream& out_;
  std::ostream& err_;
  RunStore store_;
};

std::map<std::string, GroundTruthSet> load_ground_truths(const Context& ctx, const std::vector<std::string>& paths,
                                                         const SurveyBank* bank) {
  std::map<std::string, GroundTruthSet> out;
  for (const auto& p : paths) {
    auto gt = load_ground_truth(ctx.resolve(p), bank);
    const std::string country = gt.country;
    if (!out.emplace(country, std::move(gt)).second)
      throw CorpusError(CorpusError::Kind::validation, "ground truth for '" + country + "' supplied twice");
  }
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

struct ResolvedSource {
  std::shared_ptr<CompletionClient> client;
  std::unique_ptr<ReplayCache> replay;
  std::unique_ptr<ReplayCache> record;
  std::string description;

  CompletionSource source() const { return {client.get(), replay.get(), record.get()}; }
};

// Endpoint forms: an http(s) base URL, "scripted:<gt.json>[,<gt.json>...]"
// for the ground-truth respondent, "scripted" for the judge double, or
// "offline" for replay-only operation.
ResolvedSource resolve_source(const Context& ctx, const ClientOptions& opts, const SurveyBank& bank, bool judge,
                              const std::vector<std::string>& refuse) {
  ResolvedSource rs;
  if (!opts.replay.empty()) rs.replay = std::make_unique<ReplayCache>(ctx.resolve(opts.replay));
  if (!opts.record.empty()) rs.record = std::make_unique<ReplayCache>(ctx.resolve(opts.record));
  std::string endpoint = opts.endpoint;
  if (endpoint.empty()) endpoint = rs.replay ? "offline" : "https://api.openai.com/v1";
  rs.description = endpoint;
  if (endpoint == "offline") return rs;
  if (endpoint.rfind("http://", 0) == 0 || endpoint.rfind("https://", 0) == 0) {
    EndpointConfig cfg;
    cfg.base_url = endpoint;
    while (!cfg.base_url.empty() && cfg.base_url.back() == '/') cfg.base_url.pop_back();
    cfg.api_key_env = opts.api_key_env;
    cfg.max_retries = opts.max_retries;
    rs.client = std::make_shared<ChatCompletionClient>(cfg, make_httplib_transport());
    return rs;
  }
  if (judge && endpoint == "scripted") {
    rs.client = make_scripted_judge();
    return rs;
  }
  if (!judge && endpoint.rfind("scripted:", 0) == 0) {
    std::map<std::string, GroundTruthSet> gts;
    for (const auto& p : split_commas(endpoint.substr(9))) {
      auto gt = load_ground_truth(ctx.resolve(p), &bank);
      const std::string country = gt.country;
      gts.emplace(country, std::move(gt));
    }
    if (gts.empty()) throw RunnerError(RunnerError::Kind::plan, "scripted endpoint names no ground-truth files");
    RespondentOptions ro;
    ro.refuse = refuse;
    rs.client = make_ground_truth_respondent(bank, std::move(gts), std::move(ro));
    return rs;
  }
  throw RunnerError(RunnerError::Kind::plan, "unrecognised endpoint '" + endpoint + "'");
}

// ---------------------------------------------------------------------------

int cmd_validate(Context& ctx, const ValidateArgs& a) {
  const auto bank = load_survey_bank(ctx.resolve(a.corpus));
  const auto gts = load_ground_truths(ctx, a.gt, &bank);
  ordered_json j = {{"bank", bank.name},
                    {"questions", bank.questions.size()},
                    {"corpus_hash", corpus_hash(bank)},
                    {"hofstede_spec", bank.hofstede_spec.has_value()},
                    {"projection", bank.projection.has_value()},
                    {"ground_truth", gts.size()}};
  std::ostringstream text;
  text << "corpus " << bank.name << ": " << bank.questions.size() << " questions, hash " << corpus_hash(bank).substr(0, 16)
       << "\n";
  if (bank.hofstede_spec) {
    for (const auto& [d, f] : bank.hofstede_spec->formulas) text << "  " << expand_formula(d, f) << "\n";
  }
  for (const auto& [country, gt] : gts) text << "  ground truth " << country << ": " << gt.answers.size() << " answers\n";
  text << "ok\n";
  ctx.emit(j, text.str());
  return kExitOk;
}

int cmd_run(Context& ctx, const RunArgs& a) {
  RunPlan plan = load_run_plan(ctx.resolve(a.plan));
  if (a.model) plan.gen.model = *a.model;
  if (a.temperature) plan.gen.temperature = *a.temperature;
  if (a.top_p) plan.gen.top_p = *a.top_p;
  if (a.max_tokens) plan.gen.max_tokens = *a.max_tokens;
  if (a.repeats) plan.repeats = *a.repeats;
  if (a.parallelism) plan.parallelism = *a.parallelism;
  plan.validate();
  const auto rs = resolve_source(ctx, a.client, plan.bank, false, a.refuse);
  const auto result = execute_run(plan, ctx.store(), rs.source());
  ordered_json j = {{"run_id", result.run_id}, {"issued", result.issued}, {"skipped", result.skipped}};
  ctx.emit(j, "run " + result.run_id + ": " + std::to_string(result.issued) + " issued, " +
                  std::to_string(result.skipped) + " already stored\n" + result.run_id + "\n");
  return kExitOk;
}

int cmd_map(Context& ctx, const MapArgs& a) {
  const RunMeta meta = ctx.store().read_meta(a.run);
  const auto rs = resolve_source(ctx, a.client, meta.bank, true, {});
  GenConfig jg = default_judge_config(a.judge_model);
  jg.temperature = a.judge_temperature;
  jg.validate();
  JudgeOptions jo;
  if (a.orientation == "reverse") {
    jo.orientation = JudgeOrientation::reverse;
  } else if (a.orientation != "forward") {
    throw MappingError(MappingError::Kind::wrong_mode, "judge orientation must be forward or reverse");
  }
  const auto result = map_run(ctx.store(), a.run, rs.source(), jg, jo, a.parallelism);
  ordered_json j = {{"run_id", a.run}, {"records", result.records.size()}, {"judged", result.judged}};
  ctx.emit(j, "mapped " + std::to_string(result.records.size()) + " records (" + std::to_string(result.judged) +
                  " via judge)\n");
  return kExitOk;
}

int cmd_score(Context& ctx, const ScoreArgs& a) {
  const RunMeta meta = ctx.store().read_meta(a.run);
  MetricOptions opts;
  auto policy = parse_policy(a.policy);
  auto denom = parse_denominator(a.denominator);
  if (!policy) throw MetricError(MetricError::Kind::empty_input, "unknown policy '" + a.policy + "'");
  if (!denom) throw MetricError(MetricError::Kind::empty_input, "unknown categorical denominator '" + a.denominator + "'");
  opts.policy = *policy;
  opts.denominator = *denom;
  const auto gts = load_ground_truths(ctx, a.gt, &meta.bank);
  const auto set = score_run(ctx.store(), a.run, gts, opts);

  ordered_json cards = ordered_json::array();
  std::ostringstream text;
  for (const auto& c : set.cards) {
    const std::string hard = c.hard ? format_pct(*c.hard) : "-";
    const std::string soft = c.soft ? format_pct(*c.soft) : "-";
    cards.push_back({{"model", c.key.model},
                     {"language", c.key.language},
                     {"country", c.key.country},
                     {"mode", std::string(mode_name(c.key.mode))},
                     {"hard_pct", hard},
                     {"soft_pct", soft},
                     {"unclassifiable_pct", format_pct(c.unclassifiable_rate)}});
    text << c.key.model << " " << c.key.language << " " << c.key.country << " " << mode_name(c.key.mode) << "  " << hard
         << " / " << soft << "  unclassifiable " << format_pct(c.unclassifiable_rate) << "%";
    for (const auto& r : c.rho) {
      if (!r.rho) continue;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", *r.rho);
      text << "  rho " << buf << (r.starred ? "*" : "");
    }
    text << "\n";
  }
  ctx.emit({{"run_id", a.run}, {"policy", a.policy}, {"cards", cards}}, text.str());
  return kExitOk;
}

int cmd_report(Context& ctx, const ReportArgs& a) {
  std::set<std::string> formats;
  for (const auto& f : a.formats)
    for (const auto& part : split_commas(f)) formats.insert(part);
  const auto paths = emit_report(ctx.store(), a.run, formats);
  ordered_json files = ordered_json::array();
  std::string text;
  for (const auto& p : paths) {
    files.push_back(p.string());
    text += p.string() + "\n";
  }
  ctx.emit({{"run_id", a.run}, {"artifacts", files}}, text);
  return kExitOk;
}

ordered_json stats_json(const AgreementStats& s) {
  return {{"n", s.n},
          {"accuracy", s.accuracy},
          {"kappa", s.kappa ? ordered_json(*s.kappa) : ordered_json(nullptr)},
          {"degenerate", s.degenerate}};
}

std::string stats_text(const AgreementStats& s) {
  char buf[160];
  if (s.kappa) {
    std::snprintf(buf, sizeof buf, "n=%zu accuracy=%.4f kappa=%.4f\n", s.n, s.accuracy, *s.kappa);
  } else {
    std::snprintf(buf, sizeof buf, "n=%zu accuracy=%.4f kappa=undefined (chance agreement is 1)\n", s.n, s.accuracy);
  }
  return buf;
}

int cmd_annotate(Context& ctx, const AnnotateArgs& a) {
  if (!a.stats) {
    auto items = blinded_items(ctx.store(), a.run, a.sample, a.seed);
    std::set<std::string> done;
    for (const auto& l : read_annotations(ctx.store(), a.run)) done.insert(l.item_id);
    std::size_t shown = 0;
    bool quit = false;
    for (const auto& item : items) {
      if (quit) break;
      ++shown;
      if (done.count(item.item_id)) continue;
      auto& os = ctx.json() ? ctx.err() : ctx.out();
      os << "[" << shown << "/" << items.size() << "] item " << item.item_id << "\n"
         << "Question:\n" << item.question_text << "\n"
         << "Response:\n" << item.response_text << "\n";
      while (true) {
        os << "Label (0-" << item.scale_size << ", 0 = unclassifiable, s = skip, q = quit): " << std::flush;
        std::string line;
        if (!std::getline(ctx.in(), line)) {
          quit = true;
          break;
        }
        line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }), line.end());
        if (line == "q") {
          quit = true;
          break;
        }
        if (line == "s") break;
        int label = -1;
        try {
          std::size_t used = 0;
          label = std::stoi(line, &used);
          if (used != line.size()) label = -1;
        } catch (const std::exception&) {
        }
        if (label < 0 || label > item.scale_size) {
          os << "not a valid label\n";
          continue;
        }
        const HumanLabel hl{item.item_id, label};
        append_annotations(ctx.store(), a.run, std::span<const HumanLabel>(&hl, 1));
        break;
      }
    }
  }
  const auto pairs = annotation_pairs(ctx.store(), a.run);
  if (pairs.empty()) throw MappingError(MappingError::Kind::empty_input, "run '" + a.run + "' has no stored annotations");
  const auto stats = validate_annotations(pairs);
  ctx.emit({{"run_id", a.run}, {"agreement", stats_json(stats)}}, stats_text(stats));
  return kExitOk;
}

int cmd_compare(Context& ctx, const CompareArgs& a) {
  const auto sa = read_scores(ctx.store(), a.run_a);
  const auto sb = read_scores(ctx.store(), a.run_b);
  const auto cmp = compare_runs(sa, sb);
  std::ostringstream text;
  for (const auto& c : cmp.diff["cells"]) {
    text << c["model"].get<std::string>() << " " << c["language"].get<std::string>() << " "
         << c["country"].get<std::string>() << " " << c["mode"].get<std::string>() << "  hard "
         << (c["hard_a"].is_null() ? "-" : c["hard_a"].get<std::string>()) << " -> "
         << (c["hard_b"].is_null() ? "-" : c["hard_b"].get<std::string>()) << "  soft "
         << (c["soft_a"].is_null() ? "-" : c["soft_a"].get<std::string>()) << " -> "
         << (c["soft_b"].is_null() ? "-" : c["soft_b"].get<std::string>()) << "\n";
  }
  text << "rho sign flips: " << cmp.sign_flips << "\nmode maxima changes: " << cmp.maxima_changes << "\n";
  ctx.emit(cmp.diff, text.str());
  return kExitOk;
}

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const CorpusError*>(&e)) return "corpus";
  if (dynamic_cast<const PromptError*>(&e)) return "prompt";
  if (dynamic_cast<const RunnerError*>(&e)) return "runner";
  if (dynamic_cast<const MappingError*>(&e)) return "mapping";
  if (dynamic_cast<const MetricError*>(&e)) return "metric";
  if (dynamic_cast<const ReportError*>(&e)) return "report";
  return "error";
}

void add_client_options(CLI::App* cmd, ClientOptions& c, const std::string& prefix) {
  cmd->add_option("--" + prefix + "endpoint", c.endpoint, "Base URL, scripted form, or offline");
  cmd->add_option("--replay", c.replay, "Replay cache directory consulted before the endpoint");
  cmd->add_option("--record", c.record, "Directory where fresh completions are recorded");
  cmd->add_option("--api-key-env", c.api_key_env, "Environment variable holding the API key")->capture_default_str();
  cmd->add_option("--max-retries", c.max_retries, "Retries on 429/5xx")->capture_default_str()->check(CLI::NonNegativeNumber);
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cultural alignment probing for survey questionnaires", "calign"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--workdir", g.workdir, "Root for the run store and relative paths")->capture_default_str();
  app.add_flag("--json", g.json, "Machine-readable output");

  ValidateArgs va;
  auto* validate = app.add_subcommand("validate-corpus", "Load and check a survey bank");
  validate->add_option("corpus", va.corpus, "Corpus JSON")->required();
  validate->add_option("--gt", va.gt, "Ground-truth files to check against the bank");

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Issue every prompt of a plan into the run store");
  run->add_option("--plan", ra.plan, "Run plan JSON")->required();
  add_client_options(run, ra.client, "");
  run->add_option("--model", ra.model, "Override the plan's model");
  run->add_option("--temperature", ra.temperature, "Override sampling temperature (plan default 0.7)");
  run->add_option("--top-p", ra.top_p, "Override nucleus mass (plan default 1.0)");
  run->add_option("--max-tokens", ra.max_tokens, "Override completion length");
  run->add_option("--repeats", ra.repeats, "Samples per prompt")->check(CLI::PositiveNumber);
  run->add_option("--parallelism", ra.parallelism, "Concurrent requests")->check(CLI::PositiveNumber);
  run->add_option("--refuse", ra.refuse, "qid/MODE cells the scripted respondent refuses");

  MapArgs ma;
  auto* map = app.add_subcommand("map", "Map raw responses onto option indices");
  map->add_option("--run", ma.run, "Run id")->required();
  add_client_options(map, ma.client, "judge-");
  map->add_option("--judge-model", ma.judge_model, "Judge model")->capture_default_str();
  map->add_option("--judge-temperature", ma.judge_temperature, "Judge temperature")->capture_default_str();
  map->add_option("--judge-orientation", ma.orientation, "Closed rendering shown to the judge")
      ->check(CLI::IsMember({"forward", "reverse"}))
      ->capture_default_str();
  map->add_option("--parallelism", ma.parallelism, "Concurrent judge calls")->check(CLI::PositiveNumber);

  ScoreArgs sa;
  auto* score = app.add_subcommand("score", "Score mapped records against ground truth");
  score->add_option("--run", sa.run, "Run id")->required();
  score->add_option("--gt", sa.gt, "Ground-truth files, one per country")->required();
  score->add_option("--policy", sa.policy, "Unclassifiable policy")
      ->check(CLI::IsMember({"penalize", "exclude"}))
      ->capture_default_str();
  score->add_option("--categorical-denominator", sa.denominator, "Set-overlap denominator")
      ->check(CLI::IsMember({"max", "truth"}))
      ->capture_default_str();

  ReportArgs rpa;
  auto* report = app.add_subcommand("report", "Write CSV/JSON/SVG artifacts from scores.json");
  report->add_option("--run", rpa.run, "Run id")->required();
  report->add_option("--format", rpa.formats, "csv, json, svg (comma separated or repeated)");

  AnnotateArgs aa;
  auto* annotate = app.add_subcommand("annotate", "Label blinded judge items and report agreement");
  annotate->add_option("--run", aa.run, "Run id")->required();
  annotate->add_option("--sample", aa.sample, "Items to present")->capture_default_str();
  annotate->add_option("--seed", aa.seed, "Sampling seed")->capture_default_str();
  annotate->add_flag("--stats", aa.stats, "Only recompute agreement from stored labels");

  CompareArgs ca;
  auto* compare = app.add_subcommand("compare", "Diff two scored runs");
  compare->add_option("run_a", ca.run_a, "First run id")->required();
  compare->add_option("run_b", ca.run_b, "Second run id")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (g.json) {
      out << ordered_json{{"ok", false}, {"error", {{"type", "usage"}, {"message", e.what()}}}}.dump() << "\n";
    } else {
      err << "error: " << e.what() << "\n\n" << app.help();
    }
    return kExitUsage;
  }

  Context ctx(g, in, out, err);
  try {
    if (*validate) return cmd_validate(ctx, va);
    if (*run) return cmd_run(ctx, ra);
    if (*map) return cmd_map(ctx, ma);
    if (*score) return cmd_score(ctx, sa);
    if (*report) return cmd_report(ctx, rpa);
    if (*annotate) return cmd_annotate(ctx, aa);
    if (*compare) return cmd_compare(ctx, ca);
  } catch (const Error& e) {
    if (g.json) {
      out << ordered_json{{"ok", false}, {"error", {{"type", error_type(e)}, {"message", e.what()}}}}.dump() << "\n";
    } else {
      err << "error: " << e.what() << "\n";
    }
    return kExitDomain;
  }
  return kExitUsage;
}

}  // namespace calign
