#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "calign/corpus.hpp"
#include "calign/prompting.hpp"

namespace calign {

inline constexpr int kRunStoreSchemaVersion = 1;

struct GenConfig {
  std::string model;
  double temperature = 0.7;
  double top_p = 1.0;
  int max_tokens = 512;
  std::optional<long long> seed;

  void validate() const;
};

nlohmann::json gen_config_to_json(const GenConfig& g);
GenConfig gen_config_from_json(const nlohmann::json& j);

struct RawResponse {
  std::string key;
  std::string prompt_hash;
  std::string text;
  std::string model;
  double latency_ms = 0;
  std::string timestamp;
  int attempts = 1;
};

nlohmann::json raw_response_to_json(const RawResponse& r);
RawResponse raw_response_from_json(const nlohmann::json& j);

std::string prompt_hash(const Prompt& p);

/// Content hash over (prompt text, model, temperature, top_p, repeat index).
std::string cache_key(const Prompt& prompt, const GenConfig& gen, int repeat);

/// Anything that can turn a prompt into a completion. Implementations must be
/// safe to call from several threads at once.
class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual RawResponse complete(const Prompt& prompt, const GenConfig& gen, int repeat) = 0;
};

// ---------------------------------------------------------------------------
// HTTP chat-completion client

struct HttpResponse {
  int status = 0;
  std::string body;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  /// Throws RunnerError(transport) when no HTTP response could be obtained.
  virtual HttpResponse post(const std::string& url, const std::map<std::string, std::string>& headers,
                            const std::string& body) = 0;
};

/// cpp-httplib backed transport; https URLs need OpenSSL.
std::shared_ptr<HttpTransport> make_httplib_transport(int timeout_seconds = 120);

struct EndpointConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";
  int max_retries = 5;  // attempts beyond the first
  std::chrono::milliseconds initial_backoff{500};
  double backoff_factor = 2.0;
  std::chrono::milliseconds min_interval{0};  // between request starts
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

std::string utc_timestamp_now();

/// Speaks the de-facto /chat/completions JSON format: one user message, no
/// system message.
class ChatCompletionClient : public CompletionClient {
 public:
  ChatCompletionClient(EndpointConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper = {});

  RawResponse complete(const Prompt& prompt, const GenConfig& gen, int repeat) override;

  static nlohmann::json request_body(const Prompt& prompt, const GenConfig& gen);

 private:
  void pace();

  EndpointConfig config_;
  std::shared_ptr<HttpTransport> transport_;
  Sleeper sleeper_;
  std::mutex pace_mutex_;
  std::chrono::steady_clock::time_point next_start_{};
};

// ---------------------------------------------------------------------------
// Scripted clients (offline tests and fixtures)

/// Fixed timestamp stamped on every scripted completion.
inline constexpr const char* kScriptedTimestamp = "1970-01-01T00:00:00Z";

class ScriptedClient : public CompletionClient {
 public:
  using Script = std::function<std::string(const Prompt&, int repeat)>;
  explicit ScriptedClient(Script script) : script_(std::move(script)) {}

  RawResponse complete(const Prompt& prompt, const GenConfig& gen, int repeat) override;

 private:
  Script script_;
};

/// Sentence a scripted respondent uses to state its open-ended stance; the
/// scripted judge looks for it.
inline constexpr const char* kStancePhrase = "my stance corresponds to option";
inline constexpr const char* kRefusalText = "As an AI, I do not have any opinion on this proposition.";

struct RespondentOptions {
  // "<qid>/<mode>" or "<qid>/<mode>/<repeat>" cells answered with a refusal
  // in open-ended modes.
  std::vector<std::string> refuse;
  // "<qid>/<mode>" -> answer override, in original option numbering.
  std::map<std::string, Answer> overrides;
};

/// Answers every question with the reference answer of the prompt's country,
/// numeric for closed modes (reverse-coded under FR) and as a stance sentence
/// for open-ended modes.
std::shared_ptr<CompletionClient> make_ground_truth_respondent(const SurveyBank& bank,
                                                              std::map<std::string, GroundTruthSet> by_country,
                                                              RespondentOptions options = {});

/// Judge double: reads the stance sentence out of a rendered judge prompt and
/// answers with the judge dictionary ("0" when no stance is stated).
std::shared_ptr<CompletionClient> make_scripted_judge();

// ---------------------------------------------------------------------------
// Replay cache and completion routing

class ReplayCache {
 public:
  explicit ReplayCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::optional<RawResponse> lookup(const std::string& key) const;
  void store(const RawResponse& r, const Prompt& prompt) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

struct CompletionSource {
  CompletionClient* client = nullptr;   // null: replay only
  const ReplayCache* replay = nullptr;  // consulted first
  const ReplayCache* record = nullptr;  // fresh completions are written here
};

/// Cache first, then the client. A replay miss without a client is an error.
RawResponse complete(const Prompt& prompt, const GenConfig& gen, int repeat, const CompletionSource& source);

// ---------------------------------------------------------------------------
// Run plans and the run store

struct CountryPlan {
  std::string name;
  Persona persona;
};

struct RunPlan {
  SurveyBank bank;
  std::vector<CountryPlan> countries;
  std::vector<std::string> languages;
  std::vector<ProbingMode> modes;
  GenConfig gen;
  int repeats = 5;
  int parallelism = 4;

  void validate() const;
  nlohmann::json to_json() const;  // bank represented by its hash
};

/// Plan file: {bank, countries:[{name, region?, nationality?, persona?}],
/// languages, modes, gen, repeats, parallelism?}. The bank path is resolved
/// relative to `base_dir`.
RunPlan load_run_plan(const std::filesystem::path& path);
RunPlan parse_run_plan(const nlohmann::json& j, const std::filesystem::path& base_dir);

std::string derive_run_id(const RunPlan& plan);

struct RawRecord {
  std::string key;
  std::string question_id;
  ProbingMode mode = ProbingMode::FC;
  std::string language;
  std::string country;
  int repeat = 1;
  std::string prompt_text;
  std::string persona_digest;
  GenConfig gen;
  RawResponse response;
};

nlohmann::json raw_record_to_json(const RawRecord& r);
RawRecord raw_record_from_json(const nlohmann::json& j);
/// Re-derives the key and prompt hash from the stored prompt and config.
bool verify_integrity(const RawRecord& r);

struct RunMeta {
  std::string run_id;
  std::string corpus_hash;
  nlohmann::json plan;
  SurveyBank bank;
};

class RunStore {
 public:
  explicit RunStore(std::filesystem::path workdir) : root_(std::move(workdir) / "runs") {}

  std::filesystem::path run_dir(const std::string& run_id) const { return root_ / run_id; }
  std::filesystem::path raw_path(const std::string& run_id, const std::string& qid, ProbingMode mode,
                                 const std::string& lang, const std::string& country, int repeat) const;
  bool exists(const std::string& run_id) const;

  RunMeta read_meta(const std::string& run_id) const;
  /// Writes meta.json unless an identical one is already present.
  void write_meta(const RunMeta& meta) const;

  std::vector<RawRecord> read_raw(const std::string& run_id) const;  // sorted by file name

 private:
  std::filesystem::path root_;
};

struct RunResult {
  std::string run_id;
  int issued = 0;
  int skipped = 0;
};

/// Issues every (question x mode x language x country x repeat) prompt once,
/// skipping records already in the store.
RunResult execute_run(const RunPlan& plan, const RunStore& store, const CompletionSource& source,
                      std::optional<std::string> run_id = std::nullopt);

/// Runs `jobs` on up to `parallelism` threads; the first exception is rethrown
/// after all workers stop.
void run_bounded(std::size_t count, int parallelism, const std::function<void(std::size_t)>& job);

}  // namespace calign
