#pragma once

#include <stdexcept>
#include <string>

namespace calign {

// Every failure raised by the library derives from Error so the CLI can map
// domain failures to exit code 1 without catching unrelated exceptions.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class CorpusError : public Error {
 public:
  enum class Kind { parse, duplicate_id, option_count, invalid_reversal, invalid_scale, invalid_spec, missing_question, missing_template, validation };

  CorpusError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class PromptError : public Error {
 public:
  using Error::Error;
};

class RunnerError : public Error {
 public:
  enum class Kind { auth, rate_limited, transport, empty_completion, replay_miss, network_forbidden, store_io, plan };

  RunnerError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class MappingError : public Error {
 public:
  enum class Kind { no_integer, out_of_range, too_many, judge_unparseable, empty_input, wrong_mode };

  MappingError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class MetricError : public Error {
 public:
  enum class Kind { empty_input, invalid_scale, length_mismatch, too_few, zero_variance, missing_mean, mean_out_of_range, unclassifiable_truth };

  MetricError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class ReportError : public Error {
 public:
  using Error::Error;
};

}  // namespace calign
