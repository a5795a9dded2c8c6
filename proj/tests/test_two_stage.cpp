#include <doctest.h>

#include <algorithm>
#include <random>

#include "crowdmf/conformity_sim.hpp"
#include "crowdmf/theory_check.hpp"
#include "crowdmf/two_stage.hpp"

using namespace crowdmf;

namespace {

ObservationSet random_sparse(Index users, Index notes, double p, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::bernoulli_distribution keep(p);
  std::uniform_real_distribution<double> val(0, 1);
  std::vector<RatingEvent> events;
  for (Index u = 0; u < users; ++u)
    for (Index n = 0; n < notes; ++n)
      if (keep(gen)) events.push_back({"u" + std::to_string(u), "n" + std::to_string(n), 0, val(gen)});
  return ObservationSet::from_events(events);
}

LatentParamsd random_params(Index users, Index notes, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto p = LatentParamsd::zeros(users, notes);
  p.mu = unit(gen);
  for (auto* v : {&p.rater_intercept, &p.rater_factor, &p.note_intercept, &p.note_factor})
    for (auto& x : *v) x = unit(gen);
  return p;
}

}  // namespace

TEST_CASE("compute_residuals: arithmetic and exact truth") {
  const ObservationSet one({"a"}, {"x"}, {{0, 0, 1.0}});
  auto p = LatentParamsd::zeros(1, 1);
  p.mu = 0.25;
  const auto r = compute_residuals(one, p);
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].value == 0.75);
  CHECK(r.per_user_counts == std::vector<Index>{1});

  const auto truth = random_params(6, 5, 2);
  std::vector<Observation> entries;
  for (Index u = 0; u < 6; ++u)
    for (Index n = 0; n < 5; ++n) entries.push_back({u, n, predict(truth, u, n)});
  const ObservationSet exact({"0", "1", "2", "3", "4", "5"}, {"a", "b", "c", "d", "e"}, entries);
  for (const auto& e : compute_residuals(exact, truth).entries) CHECK(e.value == 0.0);
}

TEST_CASE("compute_residuals: per-user means match a dense oracle") {
  const auto obs = random_sparse(12, 9, 0.6, 4);
  const auto theta = random_params(obs.num_users(), obs.num_notes(), 5);
  const auto table = compute_residuals(obs, theta);
  const Eigen::MatrixXd dense = reconstruct(theta);
  std::vector<double> want(static_cast<std::size_t>(obs.num_users()), 0.0), got(want);
  std::vector<int> count(want.size(), 0);
  for (const auto& e : obs.entries()) {
    want[static_cast<std::size_t>(e.user)] += e.rating - dense(e.user, e.note);
    ++count[static_cast<std::size_t>(e.user)];
  }
  for (const auto& e : table.entries) got[static_cast<std::size_t>(e.user)] += e.value;
  for (std::size_t u = 0; u < want.size(); ++u) {
    CHECK(table.per_user_counts[u] == count[u]);
    CHECK(got[u] / count[u] == doctest::Approx(want[u] / count[u]).epsilon(1e-12));
  }
}

TEST_CASE("estimate_user_variance conventions") {
  ResidualTable t;
  t.entries = {{0, 0, 1.0}, {0, 1, -1.0}, {1, 0, 0.0}, {1, 1, 0.0}};
  t.per_user_counts = {2, 2, 0};
  const auto ms = estimate_user_variance(t, VarianceConvention::MeanSquare);
  const auto sv = estimate_user_variance(t, VarianceConvention::SampleVariance);
  CHECK(ms.sigma2[0] == 1.0);
  CHECK(sv.sigma2[0] == 2.0);
  CHECK(ms.sigma2[1] == 0.0);
  CHECK(ms.present == std::vector<bool>{true, true, false});
}

TEST_CASE("weights_from_variance floor") {
  UserVariance v;
  v.sigma2 = Eigen::Vector4d(1e-6, 4.0, 1e-4, 0.0);
  v.present = {true, true, true, false};
  const auto w = weights_from_variance(v);
  CHECK(w[0] == 1e4);
  CHECK(w[1] == 0.25);
  CHECK(w[2] == 1e4);
  CHECK(w[3] == 1.0);
  CHECK_THROWS_AS(weights_from_variance(v, 0.0), ContractViolation);
}

TEST_CASE("two_stage_fit: noiseless data puts every weight at the floor") {
  auto truth = random_params(8, 8, 3);
  std::vector<Observation> entries;
  std::vector<std::string> users, notes;
  for (Index u = 0; u < 8; ++u) users.push_back("u" + std::to_string(u));
  for (Index n = 0; n < 8; ++n) notes.push_back("n" + std::to_string(n));
  for (Index u = 0; u < 8; ++u)
    for (Index n = 0; n < 8; ++n) entries.push_back({u, n, predict(truth, u, n)});
  TwoStageConfig cfg;
  cfg.fit.lambda_u = 0;
  cfg.fit.lambda_n = 0;
  cfg.fit.max_sweeps = 5000;
  cfg.fit.rel_tol = 1e-15;
  const auto r = two_stage_fit(ObservationSet(users, notes, entries), cfg);
  CHECK((r.weights.values().array() == 1e4).all());
  CHECK(r.weighted.params.note_intercept == r.stage1.params.note_intercept);
  CHECK(r.weighted.params.rater_factor == r.stage1.params.rater_factor);
  CHECK(!r.warnings.empty());
}

TEST_CASE("two_stage_fit: homoskedastic noise leaves the fit nearly unchanged") {
  SimConfig sim;
  sim.users = sim.notes = 300;
  sim.observe_prob = 1.0;
  sim.noise = ConstantNoise{0.1};
  sim.seed = 4;
  const auto ds = generate_dataset(sim);
  const auto r = two_stage_fit(ds.observations(), TwoStageConfig{});
  const auto& a = r.stage1.params;
  const auto& b = r.weighted.params;
  double dev = std::abs(a.mu - b.mu);
  for (auto pair : {std::pair{&a.rater_intercept, &b.rater_intercept},
                    std::pair{&a.note_intercept, &b.note_intercept},
                    std::pair{&a.rater_factor, &b.rater_factor},
                    std::pair{&a.note_factor, &b.note_factor}})
    dev = std::max(dev, (*pair.first - *pair.second).cwiseAbs().maxCoeff());
  CHECK(dev <= 0.02);
}

TEST_CASE("two_stage_fit: weights do not depend on note labels") {
  const auto obs = random_sparse(20, 18, 0.6, 9);
  std::vector<RatingEvent> events;
  for (const auto& e : obs.entries()) {
    const auto& u = obs.user_ids()[static_cast<std::size_t>(e.user)];
    const auto& n = obs.note_ids()[static_cast<std::size_t>(e.note)];
    events.push_back({u, n, 0, e.rating});
  }
  // Same ratings, notes indexed in a different order.
  std::vector<RatingEvent> relabeled(events.rbegin(), events.rend());
  std::stable_sort(relabeled.begin(), relabeled.end(),
                   [](const RatingEvent& x, const RatingEvent& y) { return x.rater_id < y.rater_id; });
  TwoStageConfig cfg;
  cfg.fit.rel_tol = 1e-14;
  cfg.fit.max_sweeps = 5000;
  const auto a = two_stage_fit(ObservationSet::from_events(events), cfg);
  const auto b = two_stage_fit(ObservationSet::from_events(relabeled), cfg);
  REQUIRE(a.data.note_ids() != b.data.note_ids());
  for (Index u = 0; u < a.data.num_users(); ++u) {
    const Index v = b.data.find_user(a.data.user_ids()[static_cast<std::size_t>(u)]);
    REQUIRE(v >= 0);
    CHECK(b.weights[v] == doctest::Approx(a.weights[u]).epsilon(1e-6));
  }
}

TEST_CASE("weighted fit: scaling weights and penalties together changes nothing") {
  const auto obs = random_sparse(20, 20, 0.5, 10);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> wdist(0.5, 3.0);
  Eigen::VectorXd w(obs.num_users());
  for (auto& x : w) x = wdist(gen);
  const double k = 7.0;
  FitConfig a_cfg, b_cfg;
  for (auto* c : {&a_cfg, &b_cfg}) {
    c->max_sweeps = 5000;
    c->rel_tol = 1e-15;
  }
  a_cfg.lambda_u = a_cfg.lambda_n = 0.2;
  b_cfg.lambda_u = b_cfg.lambda_n = 0.2 * k;
  const auto a = fit(obs, a_cfg, WeightVector(w));
  const auto b = fit(obs, b_cfg, WeightVector(k * w));
  CHECK((reconstruct(a.params) - reconstruct(b.params)).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((a.params.note_intercept - b.params.note_intercept).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("variance formula is minimized by inverse-variance weights among tested families") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> s(0.05, 0.5);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd sigma2(40);
    for (auto& x : sigma2) x = std::pow(s(gen), 2);
    const double uniform = intercept_variance_formula(Eigen::VectorXd::Ones(40), sigma2);
    const double inv_sd = intercept_variance_formula(sigma2.cwiseSqrt().cwiseInverse(), sigma2);
    const double inv_var = intercept_variance_formula(sigma2.cwiseInverse(), sigma2);
    CHECK(inv_var <= inv_sd * (1 + 1e-12));
    CHECK(inv_var <= uniform * (1 + 1e-12));
    CHECK(inv_var == doctest::Approx(1.0 / sigma2.cwiseInverse().sum()).epsilon(1e-12));
  }
}
