#include <doctest.h>

#include <random>
#include <set>

#include "crowdmf/conformity_sim.hpp"
#include "crowdmf/mf_engine.hpp"
#include "filter_oracle.hpp"

using namespace crowdmf;

namespace {

ObservationSet dense_set(const Eigen::MatrixXd& r) {
  std::vector<std::string> users, notes;
  for (Index u = 0; u < r.rows(); ++u) users.push_back("u" + std::to_string(u));
  for (Index n = 0; n < r.cols(); ++n) notes.push_back("n" + std::to_string(n));
  std::vector<Observation> entries;
  for (Index u = 0; u < r.rows(); ++u)
    for (Index n = 0; n < r.cols(); ++n) entries.push_back({u, n, r(u, n)});
  return ObservationSet(users, notes, entries);
}

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

FitConfig tight(double lambda) {
  FitConfig cfg;
  cfg.lambda_u = lambda;
  cfg.lambda_n = lambda;
  cfg.max_sweeps = 5000;
  cfg.rel_tol = 1e-14;
  return cfg;
}

}  // namespace

TEST_CASE("fit: constant matrix") {
  const auto obs = dense_set(Eigen::MatrixXd::Constant(5, 4, 0.5));
  const auto r = fit(obs, tight(1e-9));
  CHECK(r.params.mu == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(r.params.rater_intercept.norm() <= 1e-6);
  CHECK(r.params.note_intercept.norm() <= 1e-6);
  CHECK((r.params.rater_factor * r.params.note_factor.transpose()).norm() <= 1e-6);
}

TEST_CASE("fit: noiseless 3x3 generative oracle") {
  LatentParamsd truth = LatentParamsd::zeros(3, 3);
  truth.mu = 0.4;
  truth.rater_intercept << 0.1, -0.2, 0.05;
  truth.note_intercept << -0.1, 0.3, 0.0;
  truth.rater_factor << 1.0, -0.5, 0.2;
  truth.note_factor << 0.3, 0.6, -0.4;
  const Eigen::MatrixXd target = reconstruct(truth);
  const auto r = fit(dense_set(target), tight(1e-6));
  CHECK((reconstruct(r.params) - target).cwiseAbs().maxCoeff() <= 1e-4);
  CHECK(is_canonical(r.params));
}

TEST_CASE("fit: objective never increases and runs are bitwise reproducible") {
  const auto obs = random_sparse(30, 25, 0.4, 5);
  FitConfig cfg;
  cfg.seed = 9;
  const auto a = fit(obs, cfg);
  const auto b = fit(obs, cfg);
  REQUIRE(!a.objective_trace.empty());
  for (std::size_t k = 1; k < a.objective_trace.size(); ++k)
    CHECK(a.objective_trace[k] <= a.objective_trace[k - 1] * (1 + 1e-12));
  CHECK(a.params.mu == b.params.mu);
  CHECK(a.params.rater_factor == b.params.rater_factor);
  CHECK(a.params.note_intercept == b.params.note_intercept);
  CHECK(a.objective == b.objective);
}

TEST_CASE("fit: reported objective matches objective_value at the canonical result") {
  const auto obs = random_sparse(20, 20, 0.5, 2);
  FitConfig cfg;
  const auto r = fit(obs, cfg);
  const auto lambdas = resolve_lambdas(cfg, obs);
  // Canonicalization changes the penalty but not the fit term; the solver
  // iterate is at least as good as any reparametrization.
  CHECK(r.objective <= objective_value(obs, r.params, lambdas) * (1 + 1e-9));
}

TEST_CASE("fit: default lambda") {
  const auto obs = random_sparse(10, 8, 0.5, 3);
  CHECK(default_lambda(obs) ==
        doctest::Approx(0.03 * static_cast<double>(obs.size()) / 18.0).epsilon(1e-15));
  FitConfig cfg;
  cfg.lambda_u = 0.2;
  cfg.lambda_note_factor = 0.7;
  const auto l = resolve_lambdas(cfg, obs);
  CHECK(l.rater_intercept == 0.2);
  CHECK(l.rater_factor == 0.2);
  CHECK(l.note_intercept == default_lambda(obs));
  CHECK(l.note_factor == 0.7);
}

TEST_CASE("fit: uniform weights k match the unweighted fit with lambda / k") {
  const auto obs = random_sparse(25, 20, 0.5, 7);
  const double k = 4.0;
  auto weighted_cfg = tight(0.3);
  auto plain_cfg = tight(0.3 / k);
  const auto a = fit(obs, weighted_cfg, WeightVector::uniform(obs.num_users(), k));
  const auto b = fit(obs, plain_cfg);
  CHECK((reconstruct(a.params) - reconstruct(b.params)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("fit: warm start at the optimum stays there") {
  SimConfig sim;
  sim.users = 40;
  sim.notes = 30;
  sim.observe_prob = 0.6;
  sim.noise = ConstantNoise{0.1};
  sim.seed = 8;
  const auto obs = generate_dataset(sim).observations();
  auto cfg = tight(0.1);
  const auto first = fit(obs, cfg);
  REQUIRE(first.converged);
  cfg.init = WarmStart{first.params};
  const auto second = fit(obs, cfg);
  CHECK(second.sweeps <= first.sweeps);
  CHECK((reconstruct(first.params) - reconstruct(second.params)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("fit: clamped note factors stay fixed") {
  const auto obs = random_sparse(15, 12, 0.7, 4);
  FitConfig cfg;
  Eigen::VectorXd g = Eigen::VectorXd::LinSpaced(obs.num_notes(), -1, 1);
  cfg.fixed_note_factor = g;
  const auto r = fit(obs, cfg);
  CHECK(r.params.note_factor == g);
}

TEST_CASE("fit: errors") {
  CHECK_THROWS_AS(fit(ObservationSet{}, FitConfig{}), DataError);
  const ObservationSet bad({"a"}, {"x"}, {{0, 0, std::nan("")}});
  try {
    fit(bad, FitConfig{});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("a") != std::string::npos);
  }
  const auto obs = random_sparse(5, 5, 0.8, 1);
  CHECK_THROWS_AS(fit(obs, FitConfig{}, WeightVector::uniform(obs.num_users() + 1)),
                  ContractViolation);
  CHECK_THROWS_AS(WeightVector(Eigen::VectorXd::Constant(3, -1.0)), ContractViolation);
}

TEST_CASE("fix_factor_signs") {
  auto p = LatentParamsd::zeros(3, 2);
  p.note_factor << 0.5, -0.25;
  p.rater_factor << -1, -1, 1;
  CHECK(fix_factor_signs(p).rater_factor == p.rater_factor);
  p.rater_factor << 1, 1, -1;
  const auto flipped = fix_factor_signs(p);
  CHECK(flipped.rater_factor == Eigen::Vector3d(-1, -1, 1));
  CHECK(flipped.note_factor == Eigen::Vector2d(-0.5, 0.25));
  CHECK(reconstruct(flipped) == reconstruct(p));

  auto tie = LatentParamsd::zeros(2, 1);
  tie.note_factor << 1;
  tie.rater_factor << 1, -1;
  CHECK(fix_factor_signs(tie).rater_factor == tie.rater_factor);
  tie.rater_factor << 2, -1;
  CHECK(fix_factor_signs(tie).rater_factor == Eigen::Vector2d(-2, 1));
}

TEST_CASE("fix_factor_signs leaves every prediction unchanged") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 20; ++rep) {
    auto p = LatentParamsd::zeros(7, 5);
    for (Index u = 0; u < 7; ++u) p.rater_factor[u] = z(gen);
    for (Index n = 0; n < 5; ++n) p.note_factor[n] = z(gen);
    const auto q = fix_factor_signs(p);
    CHECK(reconstruct(q) == reconstruct(p));
    const auto pos = (q.rater_factor.array() > 0).count();
    const auto neg = (q.rater_factor.array() < 0).count();
    CHECK(pos <= neg);
  }
}

TEST_CASE("filter_observations: trivial cases") {
  const auto full = dense_set(Eigen::MatrixXd::Constant(10, 10, 1.0));
  CHECK(filter_observations(full).size() == 100);
  const ObservationSet single({"a"}, {"x", "y", "z"}, {{0, 0, 1}, {0, 1, 1}, {0, 2, 1}});
  CHECK(filter_observations(single).empty());
}

TEST_CASE("filter_observations: cascade through a removed rater") {
  // n0 has exactly 5 raters; one of them, u4, rates only 9 notes and falls,
  // which then takes n0 below its floor.
  std::vector<RatingEvent> events;
  for (int u = 0; u < 5; ++u) events.push_back({"u" + std::to_string(u), "n0", 0, 1});
  for (int u = 0; u < 6; ++u)
    for (int n = 1; n <= 9; ++n) events.push_back({"u" + std::to_string(u), "n" + std::to_string(n), 0, 1});
  for (int u : {0, 1, 2, 3, 5}) events.push_back({"u" + std::to_string(u), "n10", 0, 1});
  events.erase(std::find_if(events.begin(), events.end(),
                            [](const RatingEvent& e) { return e.rater_id == "u4" && e.note_id == "n9"; }));
  const auto obs = ObservationSet::from_events(events);
  const auto f = filter_observations(obs);
  CHECK(f.find_user("u4") == -1);
  CHECK(f.find_note("n0") == -1);
  const auto [users, notes] = brute_force_filter(obs, 5, 10);
  CHECK(static_cast<std::size_t>(f.num_users()) == users.size());
  CHECK(static_cast<std::size_t>(f.num_notes()) == notes.size());
}

TEST_CASE("filter_observations equals the brute-force oracle on small instances") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    std::mt19937_64 gen(seed);
    const Index users = 6 + static_cast<Index>(gen() % 7);   // 6..12
    const Index notes = 8 + static_cast<Index>(gen() % 13);  // 8..20
    const double p = 0.3 + 0.4 * std::uniform_real_distribution<double>(0, 1)(gen);
    const auto obs = random_sparse(users, notes, p, seed * 101);
    const int per_note = 2 + static_cast<int>(gen() % 3);
    const int per_rater = 3 + static_cast<int>(gen() % 4);
    const auto f = filter_observations(obs, per_note, per_rater);
    const auto [want_users, want_notes] = brute_force_filter(obs, per_note, per_rater);
    std::set<std::string> got_users(f.user_ids().begin(), f.user_ids().end());
    std::set<std::string> got_notes(f.note_ids().begin(), f.note_ids().end());
    CHECK(got_users == want_users);
    CHECK(got_notes == want_notes);
    // Fixpoint.
    CHECK(filter_observations(f, per_note, per_rater).size() == f.size());
  }
}

TEST_CASE("classify_all") {
  Eigen::Vector3d i(0.5, 0, -0.1);
  CHECK(classify_all(Eigen::VectorXd(i)) ==
        std::vector<NoteStatus>{NoteStatus::Helpful, NoteStatus::NeedsMoreRatings,
                                NoteStatus::NotHelpful});
  CHECK(classify_all(Eigen::VectorXd(0)).empty());
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::VectorXd v(1000);
  for (auto& x : v) x = u(gen);
  const auto all = classify_all(v);
  for (Index k = 0; k < v.size(); ++k) CHECK(all[static_cast<std::size_t>(k)] == classify_note(v[k]));
}
