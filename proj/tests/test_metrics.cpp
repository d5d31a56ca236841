#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "calign/error.hpp"
#include "calign/metrics.hpp"
#include "support.hpp"

using namespace calign;
using calign::testing::hofstede_bank;
using calign::testing::stance;
using calign::testing::wvs_bank;
using nlohmann::json;

namespace {

Scale ordinal(int q) {
  Scale s;
  s.kind = ScaleKind::ordinal;
  s.size = q;
  s.max_select = 1;
  return s;
}

Scale categorical(int k, int max_select) {
  Scale s;
  s.kind = ScaleKind::categorical;
  s.size = k;
  s.max_select = max_select;
  return s;
}

AlignmentPair ord(int truth, int response, int q) {
  return {"q", Answer::single(truth), response == 0 ? Answer::unclassifiable() : Answer::single(response), ordinal(q)};
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> brute_ranks(const std::vector<double>& xs) {
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double less = 0, equal = 0;
    for (double x : xs) {
      less += x < xs[i];
      equal += x == xs[i];
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

std::map<int, double> constant_means(double v) {
  std::map<int, double> m;
  for (int i = 1; i <= 24; ++i) m[i] = v;
  return m;
}

std::map<std::string, Answer> wvs_answers() {
  return {{"Q1", Answer::single(8)}, {"Q2", Answer{{1, 3, 6}}}, {"Q3", Answer::single(5)}, {"Q4", Answer::single(2)},
          {"Q5", Answer::single(2)},  {"Q6", Answer{{1, 3}}},     {"Q7", Answer::single(2)}, {"Q8", Answer::single(4)},
          {"Q9", Answer::single(2)},  {"Q10", Answer::single(1)}};
}

GroundTruthSet wvs_truth() {
  GroundTruthSet gt;
  gt.country = "Testland";
  gt.language = "en";
  gt.answers = wvs_answers();
  return gt;
}

// Records echoing the truth except where overridden.
std::vector<StanceRecord> wvs_records(ProbingMode mode, int repeat, const std::map<std::string, Answer>& overrides = {}) {
  std::vector<StanceRecord> out;
  for (auto [qid, a] : wvs_answers()) {
    if (auto it = overrides.find(qid); it != overrides.end()) a = it->second;
    auto r = stance(qid, mode, "Testland", repeat, a);
    if (mode == ProbingMode::FR) r.mapper = Mapper::unreversed;
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("hard alignment: eight of ten matches") {
    std::vector<AlignmentPair> pairs;
    for (int i = 0; i < 10; ++i) pairs.push_back(ord(3, i < 8 ? 3 : 4, 5));
    const auto h = hard_alignment(pairs);
    REQUIRE(h);
    CHECK(*h == doctest::Approx(0.8));
    CHECK(format_pct(*h) == "80.00");
  }

  TEST_CASE("categorical hard matches are set equality") {
    const AlignmentPair same{"q", Answer{{1, 3, 6}}, Answer{{6, 1, 3}}, categorical(11, 5)};
    const AlignmentPair subset{"q", Answer{{1, 3, 6}}, Answer{{1, 3}}, categorical(11, 5)};
    CHECK(*hard_alignment(std::vector{same}) == 1.0);
    CHECK(*hard_alignment(std::vector{subset}) == 0.0);
  }

  TEST_CASE("soft alignment examples") {
    CHECK(*soft_alignment(std::vector{ord(4, 6, 10)}) == doctest::Approx(7.0 / 9.0));
    CHECK(format_pct(*soft_alignment(std::vector{ord(4, 6, 10)})) == "77.78");
    CHECK(*soft_alignment(std::vector{ord(1, 10, 10)}) == 0.0);
    const AlignmentPair cat{"q", Answer{{1, 3, 6, 8, 10}}, Answer{{1, 3, 5}}, categorical(11, 5)};
    CHECK(pair_epsilon(cat) == doctest::Approx(0.6));
    CHECK(*soft_alignment(std::vector{cat}) == doctest::Approx(0.4));
    CHECK(pair_epsilon(cat, CategoricalDenominator::truth_size) == doctest::Approx(0.6));
    const AlignmentPair over{"q", Answer{{1, 3}}, Answer{{1, 3, 5, 7}}, categorical(11, 5)};
    CHECK(pair_epsilon(over) == doctest::Approx(0.5));
    CHECK(pair_epsilon(over, CategoricalDenominator::truth_size) == doctest::Approx(0.0));
  }

  TEST_CASE("metric errors") {
    CHECK_THROWS_AS(hard_alignment(std::vector<AlignmentPair>{}), MetricError);
    CHECK_THROWS_AS(soft_alignment(std::vector<AlignmentPair>{}), MetricError);
    CHECK_THROWS_AS(soft_alignment(std::vector{ord(1, 1, 1)}), MetricError);
    CHECK_THROWS_AS(unclassifiable_rate(std::vector<Answer>{}), MetricError);
  }

  TEST_CASE("unclassifiable policies") {
    const std::vector pairs = {ord(2, 2, 4), ord(3, 0, 4), ord(1, 2, 4)};
    CHECK(*hard_alignment(pairs) == doctest::Approx(1.0 / 3.0));
    CHECK(*hard_alignment(pairs, UnclassifiablePolicy::exclude) == doctest::Approx(0.5));
    CHECK(*soft_alignment(pairs) == doctest::Approx((1.0 + 0.0 + 2.0 / 3.0) / 3.0));
    MetricOptions excl;
    excl.policy = UnclassifiablePolicy::exclude;
    CHECK(*soft_alignment(pairs, excl) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
    CHECK_FALSE(hard_alignment(std::vector{ord(2, 0, 4)}, UnclassifiablePolicy::exclude));
    CHECK_FALSE(soft_alignment(std::vector{ord(2, 0, 4)}, excl));
  }

  TEST_CASE("unclassifiable rate examples") {
    std::vector<Answer> answers(20, Answer::single(1));
    CHECK(unclassifiable_rate(answers) == 0.0);
    answers[7] = Answer::unclassifiable();
    CHECK(format_pct(unclassifiable_rate(answers)) == "5.00");
    CHECK(unclassifiable_rate(std::vector<Answer>(3)) == 1.0);
  }

  TEST_CASE("Hofstede examples") {
    const auto spec = HofstedeSpec::standard();
    auto m = constant_means(3.0);
    m[7] = 3.0;
    m[2] = 2.0;
    m[20] = 3.0;
    m[23] = 2.0;
    CHECK(hofstede_scores(m, spec).at(Dimension::pdi) == doctest::Approx(60.0));
    m = constant_means(3.0);
    m[13] = 5;
    m[14] = 1;
    m[19] = 5;
    m[22] = 1;
    CHECK(hofstede_scores(m, spec).at(Dimension::lto) == doctest::Approx(260.0));
    auto with_constants = spec;
    double c = 10;
    for (auto& [d, f] : with_constants.formulas) f.constant = c++;
    for (const auto& [d, v] : hofstede_scores(constant_means(2.5), with_constants))
      CHECK(v == with_constants.formulas.at(d).constant);
  }

  TEST_CASE("Hofstede input errors") {
    const auto spec = HofstedeSpec::standard();
    auto m = constant_means(3.0);
    m.erase(7);
    CHECK_THROWS_AS(hofstede_scores(m, spec), MetricError);
    m = constant_means(3.0);
    m[4] = 5.5;
    CHECK_THROWS_AS(hofstede_scores(m, spec), MetricError);
  }

  TEST_CASE("Hofstede scores are affine with the documented coefficients") {
    const auto spec = HofstedeSpec::standard();
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(1.2, 4.8);
    std::map<int, double> m;
    for (int i = 1; i <= 24; ++i) m[i] = u(rng);
    const auto base = hofstede_scores(m, spec);
    const double delta = 0.125;
    auto bumped = m;
    bumped[7] += delta;
    CHECK(hofstede_scores(bumped, spec).at(Dimension::pdi) - base.at(Dimension::pdi) == doctest::Approx(35 * delta));
  }

  TEST_CASE("Spearman examples") {
    const std::vector<double> x = {1, 2, 3, 4, 5, 6};
    const std::vector<double> id = x;
    const std::vector<double> rev = {6, 5, 4, 3, 2, 1};
    const std::vector<double> swap = {1, 2, 3, 4, 6, 5};
    auto r = spearman(x, id);
    CHECK(r.rho == 1.0);
    CHECK(r.p == 0.0);
    CHECK(r.starred);
    r = spearman(x, rev);
    CHECK(r.rho == -1.0);
    CHECK(r.p == 0.0);
    r = spearman(x, swap);
    CHECK(r.rho == doctest::Approx(1 - 12.0 / 210.0));
    CHECK(r.p < 0.05);
    CHECK(r.starred);
    const std::vector<double> tied = {1, 1, 2};
    const std::vector<double> ys = {1, 2, 3};
    r = spearman(tied, ys);
    CHECK(r.rho == doctest::Approx(std::sqrt(3.0) / 2.0));
    CHECK_FALSE(r.starred);
  }

  TEST_CASE("Spearman errors") {
    const std::vector<double> three = {1, 2, 3};
    const std::vector<double> two = {1, 2};
    const std::vector<double> flat = {4, 4, 4};
    CHECK_THROWS_AS(spearman(three, two), MetricError);
    CHECK_THROWS_AS(spearman(two, two), MetricError);
    try {
      spearman(three, flat);
      FAIL("expected an error");
    } catch (const MetricError& e) {
      CHECK(e.kind() == MetricError::Kind::zero_variance);
    }
  }

  TEST_CASE("t-approximation p-values reproduce the significance pattern") {
    CHECK(spearman_p_value(0.89, 6) < kSignificanceLevel);
    CHECK(spearman_p_value(0.77, 6) > kSignificanceLevel);
    CHECK(spearman_p_value(1.0, 3) == 0.0);
    CHECK(spearman_p_value(-1.0, 3) == 0.0);
    CHECK(spearman_p_value(0.87, 3) > kSignificanceLevel);
  }

  TEST_CASE("Spearman matches frozen reference values") {
    const auto ref = json::parse(read_file(std::filesystem::path(CALIGN_SOURCE_DIR) / "tests" / "oracles" / "reference_values.json"));
    int checked = 0;
    for (const auto& c : ref.at("spearman")) {
      if (c.contains("rho_only")) {
        CHECK(std::abs(spearman_p_value(c.at("rho_only").get<double>(), c.at("n").get<std::size_t>()) -
                       c.at("p").get<double>()) <= 1e-9);
        continue;
      }
      const auto xs = c.at("xs").get<std::vector<double>>();
      const auto ys = c.at("ys").get<std::vector<double>>();
      const auto r = spearman(xs, ys);
      CHECK(std::abs(r.rho - c.at("rho").get<double>()) <= 1e-9);
      CHECK(std::abs(r.p - c.at("p").get<double>()) <= 1e-9);
      ++checked;
    }
    CHECK(checked >= 30);
  }

  TEST_CASE("average ranks agree with brute force and Spearman with Pearson on ranks") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t n = 3 + rng() % 8;
      std::vector<double> xs(n), ys(n);
      for (auto& v : xs) v = static_cast<double>(rng() % 5);
      for (auto& v : ys) v = static_cast<double>(rng() % 7);
      const auto rx = brute_ranks(xs);
      const auto ry = brute_ranks(ys);
      CHECK(average_ranks(xs) == rx);
      const bool flat = std::all_of(rx.begin(), rx.end(), [&](double v) { return v == rx[0]; }) ||
                        std::all_of(ry.begin(), ry.end(), [&](double v) { return v == ry[0]; });
      if (flat) continue;
      CHECK(std::abs(spearman(xs, ys).rho - std::clamp(pearson(rx, ry), -1.0, 1.0)) <= 1e-12);
    }
  }

  TEST_CASE("Spearman is invariant under strictly increasing transforms") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 3 + rng() % 8;
      std::vector<double> xs(n), ys(n), tx(n);
      for (auto& v : xs) v = g(rng);
      for (auto& v : ys) v = g(rng);
      std::transform(xs.begin(), xs.end(), tx.begin(), [](double v) { return std::exp(3 * v) + 40; });
      const auto a = spearman(xs, ys);
      const auto b = spearman(tx, ys);
      CHECK(a.rho == doctest::Approx(b.rho).epsilon(1e-12));
      CHECK(a.starred == b.starred);
    }
  }

  TEST_CASE("aggregate_repeats") {
    auto s = aggregate_repeats(std::vector{Answer::single(2), Answer::single(2), Answer::single(4)}, ordinal(5));
    REQUIRE(s.mean);
    CHECK(*s.mean == doctest::Approx(8.0 / 3.0));
    s = aggregate_repeats(std::vector{Answer::single(3), Answer::unclassifiable(), Answer::single(5)}, ordinal(5));
    CHECK(*s.mean == 4.0);
    CHECK(s.unclassifiable == 1);
    s = aggregate_repeats(std::vector{Answer::unclassifiable()}, ordinal(5));
    CHECK_FALSE(s.mean);
  }

  TEST_CASE("alignment properties on random pairs") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<AlignmentPair> pairs;
      const int n = 1 + static_cast<int>(rng() % 15);
      for (int i = 0; i < n; ++i) {
        const int q = 2 + static_cast<int>(rng() % 9);
        pairs.push_back(ord(1 + static_cast<int>(rng() % q), 1 + static_cast<int>(rng() % q), q));
      }
      const double h = *hard_alignment(pairs);
      const double s = *soft_alignment(pairs);
      CHECK(s >= h - 1e-12);
      CHECK(h >= 0.0);
      CHECK(s <= 1.0 + 1e-12);
      auto shuffled = pairs;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      CHECK(*hard_alignment(shuffled) == doctest::Approx(h).epsilon(1e-12));
      CHECK(*soft_alignment(shuffled) == doctest::Approx(s).epsilon(1e-12));
      auto self = pairs;
      for (auto& p : self) p.response = p.truth;
      CHECK(*soft_alignment(self) == 1.0);
    }
  }

  TEST_CASE("soft equals hard only when every mismatch is maximal") {
    const std::vector maximal = {ord(1, 4, 4), ord(2, 2, 4)};
    CHECK(*soft_alignment(maximal) == *hard_alignment(maximal));
    const std::vector near = {ord(1, 3, 4), ord(2, 2, 4)};
    CHECK(*soft_alignment(near) > *hard_alignment(near));
  }
}

TEST_SUITE("score cards") {
  TEST_CASE("FR classifications after unreversing score like the same FC classifications") {
    const std::map<std::string, Answer> given = {{"Q1", Answer::single(7)}, {"Q2", Answer{{1, 3}}}, {"Q4", Answer::single(1)}};
    auto records = wvs_records(ProbingMode::FC, 1, given);
    for (const auto& r : wvs_records(ProbingMode::FR, 1, given)) records.push_back(r);
    const auto set = score_records(wvs_bank(), records, {{"Testland", wvs_truth()}});
    REQUIRE(set.cards.size() == 2);
    CHECK(set.cards[0].key.mode == ProbingMode::FC);
    CHECK(set.cards[1].key.mode == ProbingMode::FR);
    CHECK(set.cards[0].hard == set.cards[1].hard);
    CHECK(set.cards[0].soft == set.cards[1].soft);
    CHECK(*set.cards[0].hard == doctest::Approx(0.7));
  }

  TEST_CASE("per-repeat scores are averaged and the unclassifiable rate is pooled") {
    auto records = wvs_records(ProbingMode::FO, 1);
    for (const auto& r : wvs_records(ProbingMode::FO, 2, {{"Q1", Answer::unclassifiable()}, {"Q5", Answer::single(1)}}))
      records.push_back(r);
    auto set = score_records(wvs_bank(), records, {{"Testland", wvs_truth()}});
    REQUIRE(set.cards.size() == 1);
    const auto& card = set.cards[0];
    CHECK(card.repeats == 2);
    CHECK(*card.hard == doctest::Approx((1.0 + 0.8) / 2));
    CHECK(format_pct(card.unclassifiable_rate) == "5.00");

    MetricOptions excl;
    excl.policy = UnclassifiablePolicy::exclude;
    set = score_records(wvs_bank(), records, {{"Testland", wvs_truth()}}, excl);
    CHECK(*set.cards[0].hard == doctest::Approx((1.0 + 8.0 / 9.0) / 2));
  }

  TEST_CASE("missing ground truth country is an error") {
    const std::vector records = {stance("Q1", ProbingMode::FC, "Nowhere", 1, Answer::single(1))};
    CHECK_THROWS_AS(score_records(wvs_bank(), records, {}), Error);
  }

  TEST_CASE("Hofstede cards carry dimension scores and a cross-value correlation") {
    const auto& bank = hofstede_bank();
    GroundTruthSet gt;
    gt.country = "Testland";
    std::vector<StanceRecord> records;
    std::map<int, double> means;
    for (int i = 1; i <= 24; ++i) {
      const int v = 1 + (i * 7) % 5;
      gt.answers["Q" + std::to_string(i)] = Answer::single(v);
      records.push_back(stance("Q" + std::to_string(i), ProbingMode::FC, "Testland", 1, Answer::single(v)));
      means[i] = v;
    }
    const auto expected = hofstede_scores(means, *bank.hofstede_spec);
    gt.hofstede_official = expected;
    const auto set = score_records(bank, records, {{"Testland", gt}});
    REQUIRE(set.cards.size() == 1);
    const auto& card = set.cards[0];
    CHECK(*card.hard == 1.0);
    for (const auto& [d, v] : expected) CHECK(card.hofstede.at(d) == doctest::Approx(v));
    REQUIRE(card.rho.size() == 1);
    REQUIRE(card.rho[0].rho);
    CHECK(*card.rho[0].rho == doctest::Approx(1.0));
  }

  TEST_CASE("a Hofstede mean undefined in some repeat leaves a note instead of scores") {
    const auto& bank = hofstede_bank();
    GroundTruthSet gt;
    gt.country = "Testland";
    std::vector<StanceRecord> records;
    for (int i = 1; i <= 24; ++i) {
      const auto qid = "Q" + std::to_string(i);
      gt.answers[qid] = Answer::single(3);
      records.push_back(stance(qid, ProbingMode::FU, "Testland", 1, i == 7 ? Answer::unclassifiable() : Answer::single(3)));
    }
    const auto set = score_records(bank, records, {{"Testland", gt}});
    CHECK(set.cards[0].hofstede.empty());
    CHECK_FALSE(set.cards[0].hofstede_note.empty());
  }

  TEST_CASE("score sets survive a JSON round trip") {
    const auto records = wvs_records(ProbingMode::FC, 1, {{"Q1", Answer::single(6)}, {"Q2", Answer{{2, 5}}}});
    const auto set = score_records(wvs_bank(), records, {{"Testland", wvs_truth()}});
    const auto j = score_set_to_json(set, wvs_bank());
    const auto back = score_set_from_json(json::parse(j.dump()));
    REQUIRE(back.cards.size() == 1);
    CHECK(back.cards[0].hard == set.cards[0].hard);
    CHECK(back.cards[0].soft == set.cards[0].soft);
    CHECK(score_set_to_json(back, wvs_bank()).dump() == j.dump());
  }
}
