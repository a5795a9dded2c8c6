#pragma once

// Descriptive and inferential statistics for rating panels: rank correlation,
// the bimodality coefficient, shrunk proportions, difference-in-differences
// regressions and permutation tests.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace crowdmf {

// Average ranks (1-based); ties share the mean of their positions.
std::vector<double> midranks(std::span<const double> x);

// Pearson correlation of mid-ranks. ContractViolation on unequal lengths or
// fewer than two values; DataError("degenerate ranks") if either side is
// constant.
double spearman(std::span<const double> x, std::span<const double> y);
double spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// (g1^2 + 1) / g2 with population skewness g1 and raw (non-excess) kurtosis
// g2. With `small_sample` the bias-corrected G1, G2 and the expected excess
// kurtosis under normality are used instead:
//   (G1^2 + 1) / (G2 + 3 (n-1)^2 / ((n-2)(n-3))).
// Needs n >= 4 and nonzero variance (DataError otherwise).
double bimodality_coefficient(std::span<const double> samples, bool small_sample = false);

// (k + 0.5) / (n + 1).
double jeffreys_proportion(std::int64_t k, std::int64_t n);

struct InferenceResult {
  double estimate = 0;
  double se = 0;
  double ci_low = 0;
  double ci_high = 0;
  double p_value = 1;
};

// Two-sided normal p-value and 95% interval for estimate / se.
InferenceResult normal_inference(double estimate, double se);
// Same with a Student-t reference on `dof` degrees of freedom.
InferenceResult student_t_inference(double estimate, double se, double dof);

struct GapDidOptions {
  std::optional<std::vector<double>> weights;
  int hac_lags = 4;
  // Local-linear variant: adds the running variable and, when `interact`,
  // its interaction with Post.
  std::optional<std::vector<double>> running;
  bool interact = true;
};

// WLS of d_w = a + b Post_w (+ running terms) with Newey-West (Bartlett)
// standard errors at a fixed lag, scaled by T / (T - k), and a t(T - k)
// reference; rows are taken to be in time order. DataError when all weeks
// are pre or all post.
InferenceResult weekly_gap_did(std::span<const double> gaps, const std::vector<bool>& post,
                               const GapDidOptions& options = {});

struct PanelCell {
  std::string unit;
  std::int64_t week = 0;
  double outcome = 0;
  bool group = false;  // e.g. minority rater
  bool post = false;
};

// Two-way fixed-effects estimate of the group x post coefficient by
// alternating demeaning, with HC1 standard errors. DataError on fewer than
// two units or weeks, a duplicate (unit, week) cell, or a collinear design.
InferenceResult two_way_fe_did(const std::vector<PanelCell>& panel);

using PermutationStatistic =
    std::function<double(std::span<const double> data, const std::vector<bool>& labels)>;

// mean(data | label) - mean(data | !label); NaN when a group is empty.
double mean_difference(std::span<const double> data, const std::vector<bool>& labels);

struct PermutationResult {
  double p_value = 1;
  double observed = 0;
  int exceedances = 0;
  std::vector<std::string> warnings;
};

// Two-sided add-one p-value (1 + #{|T_perm| >= |T_obs|}) / (1 + n_perm) over
// label shuffles that keep group sizes. Replicate r shuffles with its own
// substream of `seed`. If the statistic is not finite or never varies the
// result is p = 1 with a warning.
PermutationResult permutation_test(const PermutationStatistic& stat, std::span<const double> data,
                                   const std::vector<bool>& labels, int n_perm,
                                   std::uint64_t seed);

}  // namespace crowdmf
