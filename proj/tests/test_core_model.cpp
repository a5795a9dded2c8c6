#include <doctest.h>

#include <random>

#include "crowdmf/core_model.hpp"

using namespace crowdmf;

namespace {

LatentParamsd random_params(Index users, Index notes, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto fill = [&](Index n) {
    Eigen::VectorXd v(n);
    for (Index k = 0; k < n; ++k) v[k] = unit(gen);
    return v;
  };
  LatentParamsd p;
  p.mu = unit(gen);
  p.rater_intercept = fill(users);
  p.note_intercept = fill(notes);
  p.rater_factor = fill(users).array() + 0.3;
  p.note_factor = fill(notes).array() - 0.2;
  return p;
}

double dense_entry(const LatentParamsd& p, Index u, Index n) {
  return p.mu + p.rater_intercept[u] + p.note_intercept[n] + p.rater_factor[u] * p.note_factor[n];
}

}  // namespace

TEST_CASE("predict: zero latent vectors give mu") {
  auto p = LatentParamsd::zeros(3, 4);
  p.mu = 0.5;
  for (Index u = 0; u < 3; ++u)
    for (Index n = 0; n < 4; ++n) CHECK(predict(p, u, n) == 0.5);
}

TEST_CASE("predict: direct arithmetic") {
  auto p = LatentParamsd::zeros(1, 1);
  p.rater_intercept[0] = 0.1;
  p.note_intercept[0] = 0.2;
  p.rater_factor[0] = 2;
  p.note_factor[0] = -0.5;
  CHECK(predict(p, 0, 0) == doctest::Approx(-0.7).epsilon(1e-15));
}

TEST_CASE("predict: out of range index is a contract violation") {
  auto p = LatentParamsd::zeros(2, 2);
  CHECK_THROWS_AS(predict(p, 2, 0), ContractViolation);
  CHECK_THROWS_AS(predict(p, 0, -1), ContractViolation);
}

TEST_CASE("reconstruct matches entrywise prediction") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = random_params(7, 9, seed);
    const auto m = reconstruct(p);
    for (Index u = 0; u < 7; ++u)
      for (Index n = 0; n < 9; ++n) {
        CHECK(m(u, n) == doctest::Approx(dense_entry(p, u, n)).epsilon(1e-14));
        CHECK(predict(p, u, n) == doctest::Approx(m(u, n)).epsilon(1e-14));
      }
  }
}

TEST_CASE("predict is linear in each block") {
  const auto p = random_params(4, 5, 11);
  auto q = p;
  q.rater_factor *= 3.0;
  for (Index u = 0; u < 4; ++u)
    for (Index n = 0; n < 5; ++n) {
      const double base = p.mu + p.rater_intercept[u] + p.note_intercept[n];
      CHECK(predict(q, u, n) - base ==
            doctest::Approx(3.0 * (predict(p, u, n) - base)).epsilon(1e-12));
    }
}

TEST_CASE("canonical_center: constant vectors center to zero") {
  auto p = LatentParamsd::zeros(4, 3);
  p.mu = 1;
  p.rater_intercept.setConstant(0.2);
  p.note_intercept.setConstant(-0.3);
  p.rater_factor.setConstant(0.7);
  p.note_factor.setConstant(1.5);
  const auto c = canonical_center(p);
  CHECK(c.mu == doctest::Approx(1 + 0.2 - 0.3 + 0.7 * 1.5).epsilon(1e-14));
  CHECK(c.rater_intercept.cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(c.note_intercept.cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(c.rater_factor.isZero(0));
  CHECK(c.note_factor.isZero(0));
  CHECK(c.rank_deficient);
}

TEST_CASE("canonical_center: formula, reconstruction and constraints over random inputs") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto p = random_params(20, 20, seed);
    const auto c = canonical_center(p);
    CHECK(is_canonical(c));
    CHECK((reconstruct(c) - reconstruct(p)).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(c.rater_factor.dot(p.rater_factor) >= 0);
    // Centered factors are the input factors up to one positive scale.
    const Eigen::VectorXd f0 = p.rater_factor.array() - p.rater_factor.mean();
    const double s = std::sqrt(f0.squaredNorm() / 20.0);
    CHECK((c.rater_factor - f0 / s).cwiseAbs().maxCoeff() <= 1e-12);
    const auto again = canonical_center(c);
    CHECK(std::abs(again.mu - c.mu) <= 1e-12);
    CHECK((again.rater_intercept - c.rater_intercept).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((again.note_intercept - c.note_intercept).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((again.rater_factor - c.rater_factor).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((again.note_factor - c.note_factor).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("canonical_center: sign follows the input factor") {
  auto p = random_params(6, 4, 3);
  auto neg = p;
  neg.rater_factor = -p.rater_factor;
  neg.note_factor = -p.note_factor;
  const auto a = canonical_center(p);
  const auto b = canonical_center(neg);
  CHECK((a.rater_factor + b.rater_factor).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("decenter_note_intercept") {
  Eigen::VectorXd i(2), g(2);
  i << 0.1, -0.3;
  g << 0.2, 0.4;
  CHECK(decenter_note_intercept(i, g, 0.0) == i);
  Eigen::VectorXd one_i(1), one_g(1);
  one_i << 0.1;
  one_g << 0.2;
  CHECK(decenter_note_intercept(one_i, one_g, 0.5)[0] == doctest::Approx(0.2).epsilon(1e-15));
  Eigen::VectorXd short_g(1);
  CHECK_THROWS_AS(decenter_note_intercept(i, short_g, 0.5), ContractViolation);
}

TEST_CASE("discretize_report") {
  CHECK(discretize_report(-0.3) == 0.0);
  CHECK(discretize_report(0.0) == 0.5);
  CHECK(discretize_report(-0.0) == 0.5);
  CHECK(discretize_report(1e-12) == 1.0);
  CHECK(discretize_report(-1e-300) == 0.0);
  CHECK_THROWS_AS(discretize_report(std::nan("")), ContractViolation);
  CHECK_THROWS_AS(discretize_report(INFINITY), ContractViolation);
  // Range is {0, 0.5, 1} and the map is monotone.
  double prev = 0;
  for (double a = -2; a <= 2; a += 0.125) {
    const double d = discretize_report(a);
    CHECK(is_rating_level(d));
    CHECK(d >= prev);
    prev = d;
  }
}

TEST_CASE("classify_note boundary table") {
  CHECK(classify_note(0.4) == NoteStatus::Helpful);
  CHECK(classify_note(std::nextafter(0.4, 0.0)) == NoteStatus::NeedsMoreRatings);
  CHECK(classify_note(0.0) == NoteStatus::NeedsMoreRatings);
  CHECK(classify_note(-0.05) == NoteStatus::NeedsMoreRatings);
  CHECK(classify_note(std::nextafter(-0.05, -1.0)) == NoteStatus::NotHelpful);
  CHECK(classify_note(-0.06) == NoteStatus::NotHelpful);
  CHECK(classify_note(5.0) == NoteStatus::Helpful);
  CHECK_THROWS_AS(classify_note(std::nan("")), ContractViolation);
}

TEST_CASE("ObservationSet: construction checks") {
  CHECK_NOTHROW(ObservationSet({"a", "b"}, {"x"}, {{0, 0, 1.0}, {1, 0, 0.0}}));
  CHECK_THROWS_AS(ObservationSet({"a"}, {"x"}, {{0, 0, 1.0}, {0, 0, 0.0}}), ContractViolation);
  CHECK_THROWS_AS(ObservationSet({"a"}, {"x"}, {{0, 1, 1.0}}), ContractViolation);
  CHECK_THROWS_AS(ObservationSet({"a", "b"}, {"x"}, {{0, 0, 1.0}}), ContractViolation);
}

TEST_CASE("ObservationSet::from_events: indexing and duplicate policies") {
  const std::vector<RatingEvent> events = {
      {"r1", "n1", 10, 1.0}, {"r2", "n1", 5, 0.5}, {"r1", "n1", 20, 0.0}, {"r1", "n2", 20, 0.5}};
  const auto latest = ObservationSet::from_events(events);
  CHECK(latest.num_users() == 2);
  CHECK(latest.num_notes() == 2);
  CHECK(latest.size() == 3);
  CHECK(latest.user_ids() == std::vector<std::string>{"r1", "r2"});
  const Index r1 = latest.find_user("r1"), n1 = latest.find_note("n1");
  for (const auto& e : latest.entries())
    if (e.user == r1 && e.note == n1) CHECK(e.rating == 0.0);
  const auto first = ObservationSet::from_events(events, DuplicatePolicy::KeepFirst);
  for (const auto& e : first.entries())
    if (e.user == r1 && e.note == n1) CHECK(e.rating == 1.0);
  CHECK_THROWS(ObservationSet::from_events(events, DuplicatePolicy::Reject));
  CHECK(latest.find_user("nobody") == -1);
}

TEST_CASE("ObservationSet::restrict drops emptied entities") {
  const ObservationSet obs({"a", "b", "c"}, {"x", "y"},
                           {{0, 0, 1.0}, {1, 0, 0.0}, {1, 1, 0.5}, {2, 1, 1.0}});
  const auto r = obs.restrict({true, true, false}, {true, false});
  CHECK(r.user_ids() == std::vector<std::string>{"a", "b"});
  CHECK(r.note_ids() == std::vector<std::string>{"x"});
  CHECK(r.size() == 2);
}
