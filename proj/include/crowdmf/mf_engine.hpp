#pragma once

// Regularized (optionally rater-weighted) rank-1 factorization
//
//   min  sum_{(u,n) observed} w_u (r_un - mu - h_u - i_n - f_u g_n)^2
//        + lambda_h |h|^2 + lambda_f |f|^2 + lambda_i |i|^2 + lambda_g |g|^2
//
// solved by block coordinate descent: each sweep updates mu, every (h_u, f_u)
// pair, mu again, then every (i_n, g_n) pair, each by its exact ridge
// minimizer, so the objective never increases.

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "crowdmf/core_model.hpp"

namespace crowdmf {

struct RandomInit {
  double scale = 0.1;
};

struct WarmStart {
  LatentParamsd params;
};

using FitInit = std::variant<RandomInit, WarmStart>;

struct FitConfig {
  // Unset regularizers resolve to default_lambda(obs). lambda_u pairs with
  // (h, f), lambda_n with (i, g); the per-block knobs override the pair.
  std::optional<double> lambda_u;
  std::optional<double> lambda_n;
  std::optional<double> lambda_rater_intercept;
  std::optional<double> lambda_rater_factor;
  std::optional<double> lambda_note_intercept;
  std::optional<double> lambda_note_factor;

  int max_sweeps = 500;
  double rel_tol = 1e-8;
  std::uint64_t seed = 0;
  FitInit init = RandomInit{};
  // Fixed summation order everywhere. The solver is always deterministic;
  // the flag is kept so callers can state the requirement explicitly.
  bool deterministic = true;
  int threads = 1;

  // Clamped fits: hold one factor side fixed at the given values. A clamped
  // fit skips rescaling and sign fixing so the fixed side stays as given.
  std::optional<Eigen::VectorXd> fixed_note_factor;
  std::optional<Eigen::VectorXd> fixed_rater_factor;
};

struct ResolvedLambdas {
  double rater_intercept = 0;
  double rater_factor = 0;
  double note_intercept = 0;
  double note_factor = 0;
};

// 0.03 * |observations| / (U + N).
double default_lambda(const ObservationSet& obs);
ResolvedLambdas resolve_lambdas(const FitConfig& cfg, const ObservationSet& obs);

// Per-rater positive, finite weights.
class WeightVector {
 public:
  WeightVector() = default;
  explicit WeightVector(Eigen::VectorXd w);  // throws ContractViolation if invalid
  static WeightVector uniform(Index users, double value = 1.0);

  Index size() const noexcept { return w_.size(); }
  double operator[](Index u) const { return w_[u]; }
  const Eigen::VectorXd& values() const noexcept { return w_; }

 private:
  Eigen::VectorXd w_;
};

struct FitResult {
  LatentParamsd params;  // canonical and sign-fixed unless clamped
  double objective = 0;  // value at the solver's final iterate
  int sweeps = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // after each sweep
};

// Throws DataError on an empty set or a non-finite rating (naming the entry),
// ContractViolation on mismatched weights / warm start / clamp lengths.
FitResult fit(const ObservationSet& obs, const FitConfig& cfg,
              const std::optional<WeightVector>& weights = std::nullopt);

double objective_value(const ObservationSet& obs, const LatentParamsd& theta,
                       const ResolvedLambdas& lambdas,
                       const std::optional<WeightVector>& weights = std::nullopt);

// Negates (f, g) iff more raters have f_u > 0 than f_u < 0; on a count tie,
// iff sum(f) > 0. Leaves every f_u g_n unchanged.
LatentParamsd fix_factor_signs(const LatentParamsd& theta);

// Largest subset in which every note has >= min_ratings_per_note ratings and
// every rater has rated >= min_notes_per_rater notes, found by alternating
// removal to a fixpoint. May be empty.
ObservationSet filter_observations(const ObservationSet& obs, int min_ratings_per_note = 5,
                                   int min_notes_per_rater = 10);

std::vector<NoteStatus> classify_all(const LatentParamsd& theta);
std::vector<NoteStatus> classify_all(const Eigen::VectorXd& note_intercepts);

}  // namespace crowdmf
