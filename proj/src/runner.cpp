#include "calign/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <set>
#include <thread>

#include "calign/error.hpp"
#include "calign/util.hpp"

namespace calign {

using nlohmann::json;

void GenConfig::validate() const {
  if (model.empty()) throw RunnerError(RunnerError::Kind::plan, "generation config needs a model id");
  if (!(temperature >= 0.0 && temperature <= 2.0))
    throw RunnerError(RunnerError::Kind::plan, "temperature must lie in [0, 2]");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw RunnerError(RunnerError::Kind::plan, "top_p must lie in (0, 1]");
  if (max_tokens <= 0) throw RunnerError(RunnerError::Kind::plan, "max_tokens must be positive");
}

json gen_config_to_json(const GenConfig& g) {
  json j = {{"model", g.model}, {"temperature", g.temperature}, {"top_p", g.top_p}, {"max_tokens", g.max_tokens}};
  if (g.seed) j["seed"] = *g.seed;
  return j;
}

GenConfig gen_config_from_json(const json& j) {
  GenConfig g;
  g.model = j.value("model", std::string{});
  g.temperature = j.value("temperature", 0.7);
  g.top_p = j.value("top_p", 1.0);
  g.max_tokens = j.value("max_tokens", 512);
  if (auto it = j.find("seed"); it != j.end() && !it->is_null()) g.seed = it->get<long long>();
  return g;
}

json raw_response_to_json(const RawResponse& r) {
  return {{"key", r.key},
          {"prompt_hash", r.prompt_hash},
          {"text", r.text},
          {"model", r.model},
          {"latency_ms", r.latency_ms},
          {"timestamp", r.timestamp},
          {"attempts", r.attempts}};
}

RawResponse raw_response_from_json(const json& j) {
  RawResponse r;
  r.key = j.at("key").get<std::string>();
  r.prompt_hash = j.at("prompt_hash").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.model = j.value("model", std::string{});
  r.latency_ms = j.value("latency_ms", 0.0);
  r.timestamp = j.value("timestamp", std::string{});
  r.attempts = j.value("attempts", 1);
  return r;
}

std::string prompt_hash(const Prompt& p) { return sha256_hex(p.text); }

std::string cache_key(const Prompt& prompt, const GenConfig& gen, int repeat) {
  std::string material = "calign-cache-v1\n";
  auto field = [&material](std::string_view v) {
    material += std::to_string(v.size());
    material += ':';
    material += v;
    material += '\n';
  };
  field(prompt.text);
  field(gen.model);
  field(canonical_double(gen.temperature));
  field(canonical_double(gen.top_p));
  field(std::to_string(repeat));
  return sha256_hex(material);
}

std::string utc_timestamp_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------

ChatCompletionClient::ChatCompletionClient(EndpointConfig config, std::shared_ptr<HttpTransport> transport,
                                           Sleeper sleeper)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (!transport_) throw RunnerError(RunnerError::Kind::transport, "chat client needs a transport");
}

json ChatCompletionClient::request_body(const Prompt& prompt, const GenConfig& gen) {
  json body = {{"model", gen.model},
               {"messages", json::array({{{"role", "user"}, {"content", prompt.text}}})},
               {"temperature", gen.temperature},
               {"top_p", gen.top_p},
               {"max_tokens", gen.max_tokens}};
  if (gen.seed) body["seed"] = *gen.seed;
  return body;
}

void ChatCompletionClient::pace() {
  if (config_.min_interval.count() <= 0) return;
  std::chrono::steady_clock::time_point start;
  {
    std::lock_guard lock(pace_mutex_);
    const auto now = std::chrono::steady_clock::now();
    start = std::max(now, next_start_);
    next_start_ = start + config_.min_interval;
  }
  const auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(start - std::chrono::steady_clock::now());
  if (wait.count() > 0) sleeper_(wait);
}

RawResponse ChatCompletionClient::complete(const Prompt& prompt, const GenConfig& gen, int repeat) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (key == nullptr || *key == '\0')
    throw RunnerError(RunnerError::Kind::auth, "credential environment variable " + config_.api_key_env + " is not set");

  std::string base = config_.base_url;
  while (!base.empty() && base.back() == '/') base.pop_back();
  const std::string url = base + "/chat/completions";
  const std::map<std::string, std::string> headers = {{"Authorization", std::string("Bearer ") + key}};
  const std::string body = request_body(prompt, gen).dump();

  auto backoff = config_.initial_backoff;
  std::string last_error;
  bool last_was_rate_limit = false;
  const int max_attempts = config_.max_retries + 1;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1) {
      sleeper_(backoff);
      backoff = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(backoff.count()) * config_.backoff_factor));
    }
    pace();
    const auto started = std::chrono::steady_clock::now();
    HttpResponse res;
    try {
      res = transport_->post(url, headers, body);
    } catch (const RunnerError& e) {
      if (e.kind() != RunnerError::Kind::transport) throw;
      last_error = e.what();
      last_was_rate_limit = false;
      continue;
    }
    const double latency =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();

    if (res.status == 401 || res.status == 403)
      throw RunnerError(RunnerError::Kind::auth, "endpoint rejected credential (HTTP " + std::to_string(res.status) + ")");
    if (res.status == 429) {
      last_error = "HTTP 429";
      last_was_rate_limit = true;
      continue;
    }
    if (res.status >= 500) {
      last_error = "HTTP " + std::to_string(res.status);
      last_was_rate_limit = false;
      continue;
    }
    if (res.status != 200)
      throw RunnerError(RunnerError::Kind::transport, "endpoint returned HTTP " + std::to_string(res.status) + ": " + res.body);

    std::string content;
    std::string model = gen.model;
    try {
      const auto j = json::parse(res.body);
      const auto& msg = j.at("choices").at(0).at("message");
      if (auto c = msg.find("content"); c != msg.end() && c->is_string()) content = c->get<std::string>();
      if (auto m = j.find("model"); m != j.end() && m->is_string()) model = m->get<std::string>();
    } catch (const json::exception& e) {
      throw RunnerError(RunnerError::Kind::transport, std::string("malformed completion payload: ") + e.what());
    }
    if (content.empty()) throw RunnerError(RunnerError::Kind::empty_completion, "endpoint returned an empty completion");

    RawResponse r;
    r.key = cache_key(prompt, gen, repeat);
    r.prompt_hash = prompt_hash(prompt);
    r.text = std::move(content);
    r.model = std::move(model);
    r.latency_ms = latency;
    r.timestamp = utc_timestamp_now();
    r.attempts = attempt;
    return r;
  }
  if (last_was_rate_limit)
    throw RunnerError(RunnerError::Kind::rate_limited, "rate limit persisted after " + std::to_string(max_attempts) + " attempts");
  throw RunnerError(RunnerError::Kind::transport, "request failed after " + std::to_string(max_attempts) + " attempts: " + last_error);
}

// ---------------------------------------------------------------------------

RawResponse ScriptedClient::complete(const Prompt& prompt, const GenConfig& gen, int repeat) {
  RawResponse r;
  r.key = cache_key(prompt, gen, repeat);
  r.prompt_hash = prompt_hash(prompt);
  r.text = script_(prompt, repeat);
  r.model = gen.model;
  r.latency_ms = 0;
  r.timestamp = kScriptedTimestamp;
  r.attempts = 1;
  return r;
}

namespace {

std::string join_choices(const std::vector<int>& choices) {
  std::string out;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(choices[i]);
  }
  return out;
}

}  // namespace

std::shared_ptr<CompletionClient> make_ground_truth_respondent(const SurveyBank& bank,
                                                              std::map<std::string, GroundTruthSet> by_country,
                                                              RespondentOptions options) {
  auto script = [bank, by_country = std::move(by_country), options = std::move(options)](const Prompt& p, int repeat) {
    const std::string cell = p.question_id + "/" + std::string(mode_name(p.mode));
    const auto& q = bank.question(p.question_id);
    Answer answer;
    if (auto o = options.overrides.find(cell); o != options.overrides.end()) {
      answer = o->second;
    } else {
      auto gt = by_country.find(p.country);
      if (gt == by_country.end())
        throw RunnerError(RunnerError::Kind::plan, "scripted respondent has no ground truth for '" + p.country + "'");
      answer = ground_truth_for(gt->second, p.question_id);
    }
    if (is_closed(p.mode)) {
      if (p.mode == ProbingMode::FR)
        for (auto& c : answer.choices) c = q.reverse_index(c);
      return join_choices(answer.choices);
    }
    const std::string cell_rep = cell + "/" + std::to_string(repeat);
    auto refused = [&options](const std::string& c) {
      return std::find(options.refuse.begin(), options.refuse.end(), c) != options.refuse.end();
    };
    if (refused(cell) || refused(cell_rep) || answer.is_unclassifiable())
      return std::string(kRefusalText);
    return std::string("After reflecting on this from my own perspective, ") + kStancePhrase + " " +
           join_choices(answer.choices) + ".";
  };
  return std::make_shared<ScriptedClient>(std::move(script));
}

std::shared_ptr<CompletionClient> make_scripted_judge() {
  auto script = [](const Prompt& p, int) {
    const auto resp = p.text.rfind("Response:");
    const std::string response = resp == std::string::npos ? p.text : p.text.substr(resp);
    std::string classification = "0";
    std::string reasoning = "The response does not commit to any option on the scale.";
    if (auto at = response.find(kStancePhrase); at != std::string::npos) {
      std::string digits;
      for (std::size_t i = at + std::char_traits<char>::length(kStancePhrase); i < response.size(); ++i) {
        const char c = response[i];
        if ((c >= '0' && c <= '9') || c == ',') {
          digits.push_back(c);
        } else if (c != ' ') {
          break;
        }
      }
      if (!digits.empty()) {
        classification = digits;
        reasoning = "The response explicitly states its position as option " + digits + ".";
      }
    }
    return json{{"question", p.question_id}, {"classification", classification}, {"reasoning", reasoning}}.dump();
  };
  return std::make_shared<ScriptedClient>(std::move(script));
}

// ---------------------------------------------------------------------------

std::optional<RawResponse> ReplayCache::lookup(const std::string& key) const {
  const auto path = dir_ / (key + ".json");
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  try {
    const auto j = json::parse(read_file(path));
    auto r = raw_response_from_json(j.at("response"));
    if (r.key != key) throw RunnerError(RunnerError::Kind::replay_miss, "replay entry " + path.string() + " has a mismatched key");
    return r;
  } catch (const json::exception& e) {
    throw RunnerError(RunnerError::Kind::replay_miss, "corrupt replay entry " + path.string() + ": " + e.what());
  }
}

void ReplayCache::store(const RawResponse& r, const Prompt& prompt) const {
  json j = {{"prompt", prompt.text}, {"response", raw_response_to_json(r)}};
  write_file_atomic(dir_ / (r.key + ".json"), j.dump(2) + "\n");
}

RawResponse complete(const Prompt& prompt, const GenConfig& gen, int repeat, const CompletionSource& source) {
  const std::string key = cache_key(prompt, gen, repeat);
  if (source.replay) {
    if (auto hit = source.replay->lookup(key)) return *hit;
    if (!source.client)
      throw RunnerError(RunnerError::Kind::replay_miss, "no replay entry for " + prompt.question_id + "/" +
                                                            std::string(mode_name(prompt.mode)) + " (key " + key + ")");
  }
  if (!source.client) throw RunnerError(RunnerError::Kind::transport, "no completion client configured");
  RawResponse r = source.client->complete(prompt, gen, repeat);
  if (r.key != key || r.prompt_hash != prompt_hash(prompt))
    throw RunnerError(RunnerError::Kind::transport, "client returned a response for a different prompt");
  if (source.record) source.record->store(r, prompt);
  return r;
}

// ---------------------------------------------------------------------------

void RunPlan::validate() const {
  gen.validate();
  if (repeats < 1) throw RunnerError(RunnerError::Kind::plan, "repeats must be at least 1");
  if (parallelism < 1) throw RunnerError(RunnerError::Kind::plan, "parallelism must be at least 1");
  if (countries.empty()) throw RunnerError(RunnerError::Kind::plan, "plan lists no countries");
  if (languages.empty()) throw RunnerError(RunnerError::Kind::plan, "plan lists no languages");
  if (modes.empty()) throw RunnerError(RunnerError::Kind::plan, "plan lists no probing modes");
  std::set<ProbingMode> seen_modes(modes.begin(), modes.end());
  if (seen_modes.size() != modes.size()) throw RunnerError(RunnerError::Kind::plan, "plan repeats a probing mode");
  std::set<std::string> seen;
  for (const auto& c : countries) {
    if (!seen.insert(c.name).second) throw RunnerError(RunnerError::Kind::plan, "plan repeats country '" + c.name + "'");
    for (const auto& lang : languages) {
      for (const auto& q : bank.questions) {
        for (auto mode : modes) {
          try {
            (void)build_prompt(q, mode, lang, c.persona, bank.assets);
          } catch (const Error& e) {
            throw RunnerError(RunnerError::Kind::plan, "cannot render " + c.name + "/" + lang + ": " + e.what());
          }
        }
      }
    }
  }
}

json RunPlan::to_json() const {
  json j;
  j["corpus_hash"] = corpus_hash(bank);
  j["bank_name"] = bank.name;
  json cs = json::array();
  for (const auto& c : countries) cs.push_back({{"name", c.name}, {"persona", persona_to_json(c.persona)}});
  j["countries"] = cs;
  j["languages"] = languages;
  json ms = json::array();
  for (auto m : modes) ms.push_back(std::string(mode_name(m)));
  j["modes"] = ms;
  j["gen"] = gen_config_to_json(gen);
  j["repeats"] = repeats;
  return j;
}

RunPlan parse_run_plan(const json& j, const std::filesystem::path& base_dir) {
  try {
    RunPlan plan;
    auto bank_path = std::filesystem::path(j.at("bank").get<std::string>());
    if (bank_path.is_relative()) bank_path = base_dir / bank_path;
    plan.bank = load_survey_bank(bank_path);
    for (const auto& cj : j.at("countries")) {
      CountryPlan c;
      c.name = cj.at("name").get<std::string>();
      if (auto p = cj.find("persona"); p != cj.end()) {
        c.persona = persona_from_json(*p);
      } else {
        c.persona = default_persona(c.name, cj.at("region").get<std::string>(), cj.value("nationality", std::string{}));
      }
      if (c.persona.country != c.name)
        throw RunnerError(RunnerError::Kind::plan, "persona country '" + c.persona.country + "' differs from '" + c.name + "'");
      plan.countries.push_back(std::move(c));
    }
    plan.languages = j.at("languages").get<std::vector<std::string>>();
    for (const auto& m : j.at("modes")) {
      auto mode = parse_mode(m.get<std::string>());
      if (!mode) throw RunnerError(RunnerError::Kind::plan, "unknown probing mode '" + m.get<std::string>() + "'");
      plan.modes.push_back(*mode);
    }
    if (auto g = j.find("gen"); g != j.end()) plan.gen = gen_config_from_json(*g);
    plan.repeats = j.value("repeats", 5);
    plan.parallelism = j.value("parallelism", 4);
    return plan;
  } catch (const json::exception& e) {
    throw RunnerError(RunnerError::Kind::plan, std::string("plan parse error: ") + e.what());
  }
}

RunPlan load_run_plan(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw RunnerError(RunnerError::Kind::plan, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw RunnerError(RunnerError::Kind::plan, e.what());
  }
  return parse_run_plan(j, path.parent_path());
}

std::string derive_run_id(const RunPlan& plan) { return "run-" + sha256_hex(plan.to_json().dump()).substr(0, 12); }

json raw_record_to_json(const RawRecord& r) {
  json j;
  j["key"] = r.key;
  j["question_id"] = r.question_id;
  j["mode"] = std::string(mode_name(r.mode));
  j["language"] = r.language;
  j["country"] = r.country;
  j["repeat"] = r.repeat;
  j["prompt"] = {{"text", r.prompt_text}, {"persona_digest", r.persona_digest}};
  j["gen"] = gen_config_to_json(r.gen);
  j["response"] = raw_response_to_json(r.response);
  return j;
}

RawRecord raw_record_from_json(const json& j) {
  RawRecord r;
  r.key = j.at("key").get<std::string>();
  r.question_id = j.at("question_id").get<std::string>();
  auto mode = parse_mode(j.at("mode").get<std::string>());
  if (!mode) throw RunnerError(RunnerError::Kind::store_io, "raw record has an unknown mode");
  r.mode = *mode;
  r.language = j.at("language").get<std::string>();
  r.country = j.at("country").get<std::string>();
  r.repeat = j.at("repeat").get<int>();
  r.prompt_text = j.at("prompt").at("text").get<std::string>();
  r.persona_digest = j.at("prompt").value("persona_digest", std::string{});
  r.gen = gen_config_from_json(j.at("gen"));
  r.response = raw_response_from_json(j.at("response"));
  return r;
}

bool verify_integrity(const RawRecord& r) {
  Prompt p;
  p.text = r.prompt_text;
  return cache_key(p, r.gen, r.repeat) == r.key && r.response.key == r.key && r.response.prompt_hash == prompt_hash(p);
}

std::filesystem::path RunStore::raw_path(const std::string& run_id, const std::string& qid, ProbingMode mode,
                                         const std::string& lang, const std::string& country, int repeat) const {
  return run_dir(run_id) / "raw" /
         (slugify(qid) + "__" + std::string(mode_name(mode)) + "__" + slugify(lang) + "__" + slugify(country) + "__" +
          std::to_string(repeat) + ".json");
}

bool RunStore::exists(const std::string& run_id) const {
  std::error_code ec;
  return std::filesystem::exists(run_dir(run_id) / "meta.json", ec);
}

namespace {

std::string meta_text(const RunMeta& meta) {
  json j;
  j["schema_version"] = kRunStoreSchemaVersion;
  j["run_id"] = meta.run_id;
  j["corpus_hash"] = meta.corpus_hash;
  j["plan"] = meta.plan;
  j["bank"] = survey_bank_to_json(meta.bank);
  return j.dump(2) + "\n";
}

}  // namespace

RunMeta RunStore::read_meta(const std::string& run_id) const {
  const auto path = run_dir(run_id) / "meta.json";
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    throw RunnerError(RunnerError::Kind::store_io, "run '" + run_id + "' not found under " + root_.string());
  }
  try {
    const auto j = json::parse(text);
    RunMeta meta;
    meta.run_id = j.at("run_id").get<std::string>();
    meta.corpus_hash = j.at("corpus_hash").get<std::string>();
    meta.plan = j.at("plan");
    meta.bank = parse_survey_bank(j.at("bank"));
    if (corpus_hash(meta.bank) != meta.corpus_hash)
      throw RunnerError(RunnerError::Kind::store_io, "run '" + run_id + "': embedded bank does not match its corpus hash");
    return meta;
  } catch (const json::exception& e) {
    throw RunnerError(RunnerError::Kind::store_io, "corrupt meta.json for run '" + run_id + "': " + e.what());
  }
}

void RunStore::write_meta(const RunMeta& meta) const {
  const auto path = run_dir(meta.run_id) / "meta.json";
  const std::string text = meta_text(meta);
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) {
    if (read_file(path) != text)
      throw RunnerError(RunnerError::Kind::plan, "run '" + meta.run_id + "' already exists with a different plan");
    return;
  }
  write_file_atomic(path, text);
}

std::vector<RawRecord> RunStore::read_raw(const std::string& run_id) const {
  const auto dir = run_dir(run_id) / "raw";
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  if (std::filesystem::exists(dir, ec)) {
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<RawRecord> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    try {
      out.push_back(raw_record_from_json(json::parse(read_file(f))));
    } catch (const json::exception& e) {
      throw RunnerError(RunnerError::Kind::store_io, "corrupt raw record " + f.string() + ": " + e.what());
    }
  }
  return out;
}

void run_bounded(std::size_t count, int parallelism, const std::function<void(std::size_t)>& job) {
  if (count == 0) return;
  const auto workers = static_cast<std::size_t>(std::max(1, parallelism));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed = true;
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);
}

RunResult execute_run(const RunPlan& plan, const RunStore& store, const CompletionSource& source,
                      std::optional<std::string> run_id) {
  plan.validate();
  RunMeta meta;
  meta.run_id = run_id.value_or(derive_run_id(plan));
  meta.corpus_hash = corpus_hash(plan.bank);
  meta.plan = plan.to_json();
  meta.bank = plan.bank;
  store.write_meta(meta);

  struct Job {
    const CountryPlan* country;
    const std::string* language;
    ProbingMode mode;
    const Question* question;
    int repeat;
    std::filesystem::path path;
  };
  std::vector<Job> pending;
  RunResult result;
  result.run_id = meta.run_id;
  for (const auto& c : plan.countries) {
    for (const auto& lang : plan.languages) {
      for (auto mode : plan.modes) {
        for (const auto& q : plan.bank.questions) {
          for (int rep = 1; rep <= plan.repeats; ++rep) {
            auto path = store.raw_path(meta.run_id, q.id, mode, lang, c.name, rep);
            std::error_code ec;
            if (std::filesystem::exists(path, ec)) {
              ++result.skipped;
              continue;
            }
            pending.push_back({&c, &lang, mode, &q, rep, std::move(path)});
          }
        }
      }
    }
  }

  std::atomic<int> issued{0};
  try {
    run_bounded(pending.size(), plan.parallelism, [&](std::size_t i) {
      const auto& job = pending[i];
      const Prompt prompt = build_prompt(*job.question, job.mode, *job.language, job.country->persona, plan.bank.assets);
      RawRecord rec;
      rec.response = complete(prompt, plan.gen, job.repeat, source);
      rec.key = rec.response.key;
      rec.question_id = job.question->id;
      rec.mode = job.mode;
      rec.language = *job.language;
      rec.country = job.country->name;
      rec.repeat = job.repeat;
      rec.prompt_text = prompt.text;
      rec.persona_digest = prompt.persona_digest;
      rec.gen = plan.gen;
      write_file_atomic(job.path, raw_record_to_json(rec).dump(2) + "\n");
      ++issued;
    });
  } catch (...) {
    result.issued = issued.load();
    throw;
  }
  result.issued = issued.load();
  return result;
}

}  // namespace calign
