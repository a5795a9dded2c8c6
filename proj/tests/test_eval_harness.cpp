#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "crowdmf/conformity_sim.hpp"
#include "crowdmf/eval_harness.hpp"

using namespace crowdmf;

namespace {

constexpr std::int64_t kMonday = 1672617600000;  // 2023-01-02 00:00 UTC

IngestResult ingest(const std::string& text) {
  std::istringstream in(text);
  return ingest_ratings_tsv(in, "fixture");
}

std::string data_error(const std::string& text) {
  try {
    ingest(text);
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

WeeklyStream sim_stream(NoiseSpec noise, int weeks, std::uint64_t seed) {
  SimConfig cfg;
  cfg.users = 150;
  cfg.notes = 400;
  cfg.observe_prob = 0.2;
  cfg.noise = noise;
  cfg.seed = seed;
  return weekly_split(generate_stream(cfg, StreamConfig{weeks, 3, kMonday}).events);
}

double mean_of(const EvalReport& r, Method m, std::optional<double> MethodWeek::*field) {
  double sum = 0;
  int k = 0;
  for (const auto* row : r.method_rows(m))
    if (row->*field) {
      sum += *(row->*field);
      ++k;
    }
  return sum / k;
}

MethodWeek week_row(int week, Method m, double value) {
  MethodWeek r;
  r.method = m;
  r.week = week;
  r.oos_mse = r.oos_mar = r.oos_medar = r.in_sample_mse = value;
  return r;
}

}  // namespace

TEST_CASE("ingest: the three levels") {
  const auto r = ingest(
      "noteId\traterParticipantId\tcreatedAtMillis\thelpfulnessLevel\n"
      "n1\tr1\t3\tHELPFUL\n"
      "n1\tr2\t1\tSOMEWHAT_HELPFUL\n"
      "n2\tr1\t2\tNOT_HELPFUL\n");
  REQUIRE(r.events.size() == 3);
  // Sorted by time.
  CHECK(r.events[0].rating == 0.5);
  CHECK(r.events[1].rating == 0.0);
  CHECK(r.events[2].rating == 1.0);
  CHECK(r.events[2].note_id == "n1");
  CHECK(r.events[2].rater_id == "r1");
}

TEST_CASE("ingest: header only, unknown level, extra and reordered columns") {
  CHECK(ingest("noteId\traterParticipantId\tcreatedAtMillis\thelpfulnessLevel\n").events.empty());
  const auto r = ingest(
      "extra\thelpfulnessLevel\tcreatedAtMillis\traterParticipantId\tnoteId\n"
      "x\tHELPFUL\t1\tr1\tn1\n"
      "x\tVERY_HELPFUL\t2\tr2\tn1\n");
  CHECK(r.events.size() == 1);
  CHECK(r.skipped_unknown_level == 1);
  CHECK(r.rows == 2);
}

TEST_CASE("ingest: ratingValue overrides the level when present") {
  const auto r = ingest(
      "noteId\traterParticipantId\tcreatedAtMillis\thelpfulnessLevel\tratingValue\n"
      "n1\tr1\t1\tHELPFUL\t0.73\n"
      "n1\tr2\t2\tHELPFUL\t\n");
  REQUIRE(r.events.size() == 2);
  CHECK(r.events[0].rating == 0.73);
  CHECK(r.events[1].rating == 1.0);
}

TEST_CASE("ingest: errors name the column or the line") {
  const auto missing = data_error("noteId\traterParticipantId\thelpfulnessLevel\nn\tr\tHELPFUL\n");
  CHECK(missing.find("createdAtMillis") != std::string::npos);
  const auto bad = data_error(
      "noteId\traterParticipantId\tcreatedAtMillis\thelpfulnessLevel\n"
      "n1\tr1\t1\tHELPFUL\n"
      "n1\tr2\tyesterday\tHELPFUL\n");
  CHECK(bad.find(":3") != std::string::npos);
}

TEST_CASE("helpfulness level names") {
  CHECK(parse_helpfulness_level("HELPFUL") == 1.0);
  CHECK(!parse_helpfulness_level("helpful").has_value());
  CHECK(helpfulness_level_name(0.8) == "HELPFUL");
  CHECK(helpfulness_level_name(0.4) == "SOMEWHAT_HELPFUL");
  CHECK(helpfulness_level_name(0.1) == "NOT_HELPFUL");
}

TEST_CASE("week_start_ms and weekly_split") {
  CHECK(week_start_ms(kMonday) == kMonday);
  CHECK(week_start_ms(kMonday + kWeekMs - 1) == kMonday);
  CHECK(week_start_ms(kMonday + kWeekMs) == kMonday + kWeekMs);
  CHECK(week_start_ms(kMonday + 3 * kDayMs, Weekday::Wednesday) == kMonday + 2 * kDayMs);
  CHECK(week_start_ms(kMonday - 1) == kMonday - kWeekMs);

  const std::vector<RatingEvent> one_week = {{"a", "x", kMonday + 5, 1}, {"b", "x", kMonday + 9, 0}};
  CHECK(weekly_split(one_week).num_weeks() == 1);

  const std::vector<RatingEvent> boundary = {{"a", "x", kMonday + kWeekMs - 1, 1},
                                             {"b", "x", kMonday + kWeekMs, 0},
                                             {"c", "y", kMonday + 3 * kWeekMs + 1, 0}};
  const auto s = weekly_split(boundary);
  REQUIRE(s.num_weeks() == 4);
  CHECK(s.week(0).events.size() == 1);
  CHECK(s.week(1).events.size() == 1);
  CHECK(s.week(1).events[0].rater_id == "b");
  CHECK(s.week(2).events.empty());
  CHECK(s.week(3).start_ms == kMonday + 3 * kWeekMs);
}

TEST_CASE("cumulative sets are nested") {
  const auto s = sim_stream(ConstantNoise{0.1}, 6, 3);
  std::size_t prev = 0;
  for (std::size_t t = 0; t < s.num_weeks(); ++t) {
    const auto c = s.cumulative(t);
    CHECK(c.size() >= prev);
    prev = c.size();
  }
}

TEST_CASE("metric helpers and permutation invariance") {
  CHECK(mean_abs({-1, 2, -3}) == 2.0);
  CHECK(median_abs({-1, 2, -3}) == 2.0);
  CHECK(median_abs({-1, 2, -3, 4}) == 2.5);
  std::mt19937_64 gen(1);
  std::normal_distribution<double> d;
  std::vector<double> v(101);
  for (auto& x : v) x = d(gen);
  const double m = mean_abs(v), med = median_abs(v);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(v.begin(), v.end(), gen);
    CHECK(mean_abs(v) == doctest::Approx(m).epsilon(1e-14));
    CHECK(median_abs(v) == med);
  }
}

TEST_CASE("rolling_evaluate: warm_weeks must leave a week") {
  const auto s = sim_stream(ConstantNoise{0.1}, 3, 1);
  EvalConfig cfg;
  cfg.warm_weeks = 3;
  CHECK_THROWS_AS(rolling_evaluate(s, cfg), ContractViolation);
}

TEST_CASE("rolling_evaluate: out-of-sample pairs are exactly the eligible ones") {
  const auto s = sim_stream(TwoGroupNoise{}, 8, 5);
  for (auto elig : {Eligibility::InFit, Eligibility::RatedInWeek}) {
    EvalConfig cfg;
    cfg.warm_weeks = 3;
    cfg.eligibility = elig;
    const auto report = rolling_evaluate(s, cfg);
    for (const auto* row : report.method_rows(Method::TwoStage)) {
      const auto t = static_cast<std::size_t>(row->week);
      const auto data = filter_observations(s.cumulative(t), cfg.min_ratings_per_note,
                                            cfg.min_notes_per_rater);
      std::size_t want = 0;
      if (t + 1 < s.num_weeks()) {
        for (const auto& ev : s.week(t + 1).events) {
          bool ok = data.find_user(ev.rater_id) >= 0 && data.find_note(ev.note_id) >= 0;
          if (elig == Eligibility::RatedInWeek) {
            bool rater = false, note = false;
            for (const auto& w : s.week(t).events) {
              rater |= w.rater_id == ev.rater_id;
              note |= w.note_id == ev.note_id;
            }
            ok = ok && rater && note;
          }
          want += ok;
        }
      }
      CHECK(row->oos_pairs == want);
      CHECK(row->fit_entries == data.size());
      if (t + 1 == s.num_weeks()) CHECK(!row->oos_mse.has_value());
    }
  }
}

TEST_CASE("rolling_evaluate: deterministic, homoskedastic parity, in-sample below out-of-sample") {
  const auto s = sim_stream(ConstantNoise{0.1}, 36, 7);
  EvalConfig cfg;
  cfg.warm_weeks = 4;
  const auto a = rolling_evaluate(s, cfg);
  const auto b = rolling_evaluate(s, cfg);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    CHECK(a.rows[k].oos_mse == b.rows[k].oos_mse);
    CHECK(a.rows[k].in_sample_mse == b.rows[k].in_sample_mse);
  }

  const double base = mean_of(a, Method::Baseline, &MethodWeek::oos_mse);
  const double two = mean_of(a, Method::TwoStage, &MethodWeek::oos_mse);
  CHECK(std::abs(two - base) <= 0.1 * base);

  for (Method m : {Method::Baseline, Method::TwoStage}) {
    int scored = 0, below = 0;
    for (const auto* row : a.method_rows(m))
      if (row->in_sample_mse && row->oos_mse) {
        ++scored;
        below += *row->in_sample_mse <= *row->oos_mse;
      }
    REQUIRE(scored >= 30);
    CHECK(below >= 0.6 * scored);
  }
}

TEST_CASE("rolling_evaluate: heteroskedastic stream favors the two-stage fit") {
  const auto s = sim_stream(TwoGroupNoise{0.05, 0.5, 0.5}, 20, 11);
  EvalConfig cfg;
  const auto c = compare_methods(rolling_evaluate(s, cfg));
  const auto& mar = c.summary[1];
  REQUIRE(mar.metric == "oos_mar");
  CHECK(mar.twostage_better_weeks >= 0.8 * mar.weeks);
}

TEST_CASE("compare_methods arithmetic") {
  EvalReport r;
  for (int w = 0; w < 4; ++w) {
    r.rows.push_back(week_row(w, Method::Baseline, 0.10));
    r.rows.push_back(week_row(w, Method::TwoStage, 0.09));
  }
  const auto c = compare_methods(r);
  for (const auto& s : c.summary) {
    CHECK(s.weeks == 4);
    CHECK(*s.mean_improvement == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(s.twostage_better_weeks == 4);
    CHECK(*s.improvement_ci_low == doctest::Approx(0.1).epsilon(1e-9));
  }

  EvalReport same;
  for (int w = 0; w < 3; ++w) {
    same.rows.push_back(week_row(w, Method::Baseline, 0.2));
    same.rows.push_back(week_row(w, Method::TwoStage, 0.2));
  }
  for (const auto& s : compare_methods(same).summary) {
    CHECK(*s.mean_improvement == 0.0);
    CHECK(s.twostage_better_weeks == 0);
  }

  EvalReport zero;
  zero.rows.push_back(week_row(0, Method::Baseline, 0.0));
  zero.rows.push_back(week_row(0, Method::TwoStage, 0.1));
  const auto z = compare_methods(zero);
  CHECK(!z.summary[0].mean_improvement.has_value());
  CHECK(!z.rows[0].improvement.has_value());
  CHECK(!z.summary[0].improvement_ci_low.has_value());

  EvalReport only_base;
  only_base.rows.push_back(week_row(0, Method::Baseline, 0.1));
  CHECK_THROWS_AS(compare_methods(only_base), ContractViolation);
}
