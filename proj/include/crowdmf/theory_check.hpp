#pragma once

// Closed-form large-sample predictions for the rank-1 model under truthful
// and conformist reporting, and Monte Carlo scenarios that compare them with
// fitted estimates on simulated data.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crowdmf/conformity_sim.hpp"
#include "crowdmf/mf_engine.hpp"
#include "crowdmf/two_stage.hpp"

namespace crowdmf {

// sum(rho g^2) / sum(g^2). Throws DataError when g is identically zero.
double w1(const Eigen::VectorXd& rho, const Eigen::VectorXd& g);

// Large-sample limit of the canonical note intercepts under conformity:
//   i_n + c rho_n g_n + (1 - rho_n) delta_n - (1 - mean(rho)) mean(delta)
// with i and g the centered truth, c the sample mean rater factor, and
// delta_n = m_n - (mu + i_n) on the uncentered truth.
Eigen::VectorXd predicted_note_limit(const SimTruth& truth);

// Decentered: w1 f + c (1 - w1). Centered: w1 (f - c).
double predicted_user_factor(double f, double w1, double c, bool decentered);

// F(-c (1 - w1) / w1). Throws ContractViolation for w1 outside (0, 1] or
// c <= 0 (at w1 = 0 every estimate collapses to c).
double predicted_minority_share(const std::function<double(double)>& cdf_f, double c, double w1);

// g_n rho_n (1 - c sum(f) / sum(f^2)). Throws DataError when f is zero.
double predicted_note_factor(double g, double rho, const Eigen::VectorXd& f, double c);

// sum(w^2 sigma2) / (sum w)^2.
double intercept_variance_formula(const Eigen::VectorXd& w, const Eigen::VectorXd& sigma2);

// Empirical CDF of a sample: share of entries <= x.
std::function<double(double)> empirical_cdf(Eigen::VectorXd sample);

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct OlsLine {
  double slope = 0;
  double intercept = 0;
};
OlsLine ols_line(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// Selects population entries in observation order.
Eigen::VectorXd gather(const Eigen::VectorXd& values, const std::vector<Index>& origin);

// Note intercepts of a canonical fit with the mean rater factor added back:
// the factors are oriented against the truth (<f_hat, f0> <= 0) and c is
// expressed in the fitted factor scale, c / sd(f0).
Eigen::VectorXd decentered_note_intercepts(const LatentParamsd& fitted,
                                           const Eigen::VectorXd& true_rater_factor);

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

struct TruthfulOutcome {
  double rmse_decentered = 0;  // decentered i_hat vs centered i0
  double rmse_canonical = 0;   // canonical i_hat vs centered i0
  FitResult fit;
};
TruthfulOutcome run_truthful(const SimConfig& cfg, const FitConfig& fit_cfg);

struct ConformityOutcome {
  double rmse_to_limit = 0;  // canonical i_hat vs predicted limit
  double rmse_to_truth = 0;  // canonical i_hat vs centered i0
  Eigen::VectorXd predicted_limit;
  Eigen::VectorXd fitted_intercept;
  std::vector<Index> note_origin;
};
ConformityOutcome run_conformity(const SimConfig& cfg, const FitConfig& fit_cfg);

// Fit with the note factors clamped at the true (uncentered) g0.
struct ClampedGOutcome {
  double w1 = 0;
  double c = 0;           // sample mean of f0
  OlsLine line;           // OLS of (f_hat + c) on f0
  double share_true = 0;  // share of f0 < 0
  double share_estimated = 0;
  double share_predicted = 0;  // empirical F(-c (1 - w1) / w1)
};
ClampedGOutcome run_clamped_g(const SimConfig& cfg, const FitConfig& fit_cfg);

// Fit with the rater factors clamped at the centered truth.
struct ClampedFOutcome {
  OlsLine line;  // OLS of g_hat on the predicted note factor
  // Spearman correlation between controversy and g_hat / g0 over notes with
  // |g0| >= 0.2; negative when factors shrink with controversy.
  double shrink_correlation = 0;
};
ClampedFOutcome run_clamped_f(const SimConfig& cfg, const FitConfig& fit_cfg);

// Note intercept measured from the reference-weighted mean rater factor:
// i_n + g_n * sum(ref f) / sum(ref). Unlike the canonical intercept it does
// not absorb the error in the unweighted mean of the estimated f.
double decoded_note_intercept(const LatentParamsd& fitted, const Eigen::VectorXd& reference,
                              Index note);

// Noise-only replicates over a fixed population. Tracks the decoded
// intercept of population note `note` (reference weights 1 / max(sigma_u^2,
// floor) from the true noise levels) under uniform weights (first stage) and
// under the two-stage weights.
struct HeteroskedasticOutcome {
  int replicates = 0;
  double variance_uniform = 0;
  double variance_weighted = 0;
  double formula_uniform = 0;   // true sigma^2, w = 1
  double formula_weighted = 0;  // true sigma^2, w = 1 / sigma^2
};
HeteroskedasticOutcome run_heteroskedastic(const SimConfig& cfg, const TwoStageConfig& ts_cfg,
                                           int replicates, Index note = 0);

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

enum class Scenario { Truthful, Conformity, ClampedG, Heteroskedastic };
std::string_view to_string(Scenario s) noexcept;
std::optional<Scenario> parse_scenario(std::string_view name);

enum class ClaimCheck {
  AbsDiff,  // |observed - predicted| <= tolerance
  RelDiff,  // |observed - predicted| <= tolerance * |predicted|
  AtMost,   // observed <= predicted
  AtLeast,  // observed >= predicted
  Below,    // observed < predicted
  Skip,
};
std::string_view to_string(ClaimCheck c) noexcept;

enum class ClaimStatus { Pass, Fail, Skip };
std::string_view to_string(ClaimStatus s) noexcept;

struct ClaimRow {
  std::string scenario;
  std::string claim;
  double predicted = 0;
  double observed = 0;
  double tolerance = 0;
  ClaimCheck check = ClaimCheck::AbsDiff;
  ClaimStatus status = ClaimStatus::Skip;
  std::string detail;
};

ClaimRow make_claim(std::string scenario, std::string claim, double predicted, double observed,
                    double tolerance, ClaimCheck check, std::string detail = {});

struct TheorySuiteConfig {
  std::vector<Scenario> scenarios = {Scenario::Truthful, Scenario::Conformity,
                                     Scenario::ClampedG, Scenario::Heteroskedastic};
  // Absolute ridge penalty for every block; the predictions assume a
  // vanishing penalty.
  double lambda = 0.05;
  int max_sweeps = 2000;

  Index truthful_size = 300;
  double truthful_observe_prob = 0.3;
  double truthful_sigma = 0.1;
  Index consistency_small = 150;
  Index consistency_large = 600;
  int consistency_seeds = 10;

  Index conformity_size = 500;
  double conformity_observe_prob = 1.0;
  double conformity_sigma = 0.05;
  double kappa = 0.8;

  Index clamped_size = 400;
  double clamped_observe_prob = 1.0;
  double clamped_sigma = 0.1;
  int clamped_seeds = 10;
  std::vector<double> kappa_grid = {0.9, 0.6, 0.3, 0.1};

  Index hetero_size = 200;
  double hetero_sigma_low = 0.05;
  double hetero_sigma_high = 0.5;
  int hetero_replicates = 200;

  double abs_tol = 0.05;
  double share_tol = 0.03;
  double rel_tol = 0.2;
  double note_factor_tol = 0.1;

  // Negative control: predicts the user-factor slope as w1^2.
  bool wrong_w1_selftest = false;
};

struct TheoryReport {
  std::vector<ClaimRow> rows;
  std::optional<ConformityOutcome> conformity;  // per-note limits vs fits

  bool passed() const;  // no row failed
};

// `base` supplies the latent distributions, mu and the seed; scenarios set
// size, sampling, noise and conformity.
TheoryReport run_theory_suite(const SimConfig& base, const TheorySuiteConfig& cfg);

}  // namespace crowdmf
