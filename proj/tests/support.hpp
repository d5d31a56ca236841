#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <sstream>
#include <vector>
#include <string>

#include "calign/cli.hpp"
#include "calign/corpus.hpp"
#include "calign/mapping.hpp"
#include "calign/util.hpp"

namespace calign::testing {

inline std::filesystem::path data_dir() { return CALIGN_DATA_DIR; }
inline std::filesystem::path fixture_dir() { return CALIGN_FIXTURE_DIR; }
inline std::filesystem::path golden_dir() { return CALIGN_GOLDEN_DIR; }

inline const SurveyBank& wvs_bank() {
  static const SurveyBank bank = load_survey_bank(data_dir() / "corpora" / "wvs_en.json");
  return bank;
}

inline const SurveyBank& hofstede_bank() {
  static const SurveyBank bank = load_survey_bank(data_dir() / "corpora" / "hofstede_en.json");
  return bank;
}

inline StanceRecord stance(std::string qid, ProbingMode mode, std::string country, int repeat, Answer answer,
                           std::string model = "m", std::string language = "en") {
  StanceRecord r;
  r.question_id = std::move(qid);
  r.mode = mode;
  r.language = std::move(language);
  r.country = std::move(country);
  r.repeat = repeat;
  r.classification = std::move(answer);
  r.mapper = is_closed(mode) ? Mapper::direct_parse : Mapper::judge;
  r.model = std::move(model);
  return r;
}

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliResult run_cli(std::vector<std::string> args, const std::string& input = {}) {
  std::istringstream in(input);
  std::ostringstream out, err;
  CliResult r;
  r.code = cli_main(args, in, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

inline std::string fixture(const std::string& rel) { return (fixture_dir() / rel).string(); }

// Stores, maps and scores one replay plan under `workdir`; returns the run id.
inline std::string replay_pipeline(const std::filesystem::path& workdir, const std::string& plan, const std::string& bank,
                                   std::vector<std::string> extra_score_args = {}) {
  const std::string wd = workdir.string();
  auto run = run_cli({"--workdir", wd, "--json", "run", "--plan", fixture("plans/" + plan + ".json"), "--replay",
                      fixture("replay/respondent")});
  if (run.code != 0) throw std::runtime_error("run failed: " + run.err + run.out);
  const std::string id = nlohmann::json::parse(run.out).at("run_id").get<std::string>();
  auto map = run_cli({"--workdir", wd, "map", "--run", id, "--replay", fixture("replay/judge")});
  if (map.code != 0) throw std::runtime_error("map failed: " + map.err);
  std::vector<std::string> score = {"--workdir", wd, "score", "--run", id, "--gt"};
  const std::vector<std::string> countries = plan == "wvs_refusal" ? std::vector<std::string>{"testland"}
                                                                   : std::vector<std::string>{"testland", "otherland", "thirdland"};
  for (const auto& c : countries) score.push_back(fixture("ground_truth/" + bank + "_" + c + ".json"));
  for (auto& a : extra_score_args) score.push_back(std::move(a));
  auto sc = run_cli(score);
  if (sc.code != 0) throw std::runtime_error("score failed: " + sc.err);
  return id;
}

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("calign-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace calign::testing
