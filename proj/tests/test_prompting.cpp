#include <doctest.h>

#include "calign/error.hpp"
#include "calign/prompting.hpp"
#include "support.hpp"

using namespace calign;
using calign::testing::hofstede_bank;
using calign::testing::wvs_bank;

namespace {

Persona testland() { return default_persona("Testland", "North Province", "Testlandic"); }

bool starts_with(const std::string& s, const std::string& prefix) { return s.compare(0, prefix.size(), prefix) == 0; }

}  // namespace

TEST_SUITE("prompting") {
  TEST_CASE("default persona preamble") {
    const auto text = render_persona(testland(), "en", wvs_bank().assets);
    CHECK(starts_with(text, "Imagine you are a married male from North Province, Testland."));
    CHECK(text.find("35 years of age") != std::string::npos);
    CHECK(text.find("higher education level") != std::string::npos);
    CHECK(text.find('{') == std::string::npos);
    CHECK(render_persona(testland(), "en") == render_persona(testland(), "en"));
  }

  TEST_CASE("persona errors") {
    auto p = testland();
    p.country.clear();
    CHECK_THROWS_AS(render_persona(p, "en"), PromptError);
    CHECK_THROWS_AS(render_persona(testland(), "tl"), PromptError);
    PromptAssets assets;
    assets.persona_template["en"] = "Imagine you are from {planet}.";
    CHECK_THROWS_AS(render_persona(testland(), "en", assets), PromptError);
  }

  TEST_CASE("forced open prompt for the God question") {
    const auto& bank = wvs_bank();
    const auto p = build_prompt(bank.question("Q1"), ProbingMode::FO, "en", testland(), bank.assets);
    CHECK(p.text.find("God is very important in our lives.") != std::string::npos);
    CHECK(p.text.find("Take a clear stance about it.") != std::string::npos);
    CHECK(p.expected_form == ExpectedForm::free_text);
    CHECK(p.country == "Testland");
  }

  TEST_CASE("fully unconstrained Hofstede Q19") {
    const auto& bank = hofstede_bank();
    const auto p = build_prompt(bank.question("Q19"), ProbingMode::FU, "en", testland(), bank.assets);
    CHECK(p.text.find("I am very proud to be a citizen of my country.") != std::string::npos);
    CHECK(p.text.find("Feel free to express yourself") != std::string::npos);
  }

  TEST_CASE("FC and FR differ only in the question body") {
    const auto& bank = wvs_bank();
    const auto& q = bank.question("Q1");
    const auto fc = build_prompt(q, ProbingMode::FC, "en", testland(), bank.assets);
    const auto fr = build_prompt(q, ProbingMode::FR, "en", testland(), bank.assets);
    const auto preamble = render_persona(testland(), "en", bank.assets);
    CHECK(starts_with(fc.text, preamble));
    CHECK(starts_with(fr.text, preamble));
    CHECK(fc.text.find(q.text.at("en")) != std::string::npos);
    CHECK(fr.text.find(q.reverse_text.at("en")) != std::string::npos);
    CHECK(fc.expected_form == ExpectedForm::numeric_choice);
    CHECK(fr.expected_form == ExpectedForm::numeric_choice);
  }

  TEST_CASE("closed instruction is appended unless the text already asks for a number") {
    const auto& bank = wvs_bank();
    const auto q1 = build_prompt(bank.question("Q1"), ProbingMode::FC, "en", testland(), bank.assets);
    CHECK(q1.text.find(defaults::kClosedInstruction) != std::string::npos);
    const auto q3 = build_prompt(bank.question("Q3"), ProbingMode::FC, "en", testland(), bank.assets);
    CHECK(q3.text.find(defaults::kClosedInstruction) == std::string::npos);
    const auto q2 = build_prompt(bank.question("Q2"), ProbingMode::FC, "en", testland(), bank.assets);
    CHECK(q2.text.find(defaults::kClosedMultiInstruction) != std::string::npos);
  }

  TEST_CASE("reversed questions without a reverse rendering list permuted labels") {
    Question q = wvs_bank().question("Q10");
    q.reverse_text.clear();
    const auto body = closed_rendering(reverse_question(q), "en");
    CHECK(body.find("1. " + q.options.at("en")[1]) != std::string::npos);
    CHECK(body.find("2. " + q.options.at("en")[0]) != std::string::npos);
  }

  TEST_CASE("open propositions that mention nationality need one") {
    const auto& bank = wvs_bank();
    const auto& q4 = bank.question("Q4");
    const auto p = build_prompt(q4, ProbingMode::FO, "en", testland(), bank.assets);
    CHECK(p.text.find("Testlandic") != std::string::npos);
    CHECK_THROWS_AS(build_prompt(q4, ProbingMode::FO, "en", default_persona("Testland", "North Province"), bank.assets),
                    PromptError);
  }

  TEST_CASE("missing language renderings are errors") {
    const auto& bank = wvs_bank();
    CHECK_THROWS_AS(build_prompt(bank.question("Q1"), ProbingMode::FC, "de", testland(), bank.assets), PromptError);
  }

  TEST_CASE("every prompt starts with the preamble and is deterministic") {
    for (const auto* bank : {&wvs_bank(), &hofstede_bank()}) {
      const auto preamble = render_persona(testland(), "en", bank->assets);
      for (const auto& q : bank->questions) {
        for (auto m : kModes) {
          const auto a = build_prompt(q, m, "en", testland(), bank->assets);
          const auto b = build_prompt(q, m, "en", testland(), bank->assets);
          CHECK(a.text == b.text);
          CHECK(starts_with(a.text, preamble));
          CHECK((a.expected_form == ExpectedForm::numeric_choice) == is_closed(m));
        }
      }
    }
  }
}
