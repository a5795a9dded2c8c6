#pragma once

// Two-stage inverse-variance weighted factorization: an unweighted first
// fit, per-rater residual variances, weights 1 / max(sigma_u^2, floor), and a
// weighted refit warm-started at the first stage.

#include <string>
#include <vector>

#include "crowdmf/mf_engine.hpp"

namespace crowdmf {

struct Residual {
  Index user = 0;
  Index note = 0;
  double value = 0;  // r_un - prediction
};

struct ResidualTable {
  std::vector<Residual> entries;
  std::vector<Index> per_user_counts;
};

enum class VarianceConvention {
  MeanSquare,      // (1/N_u) sum e^2
  SampleVariance,  // mean-centered, N_u - 1 denominator
};

struct UserVariance {
  Eigen::VectorXd sigma2;
  std::vector<bool> present;  // false for raters without residuals

  Index size() const noexcept { return sigma2.size(); }
};

ResidualTable compute_residuals(const ObservationSet& obs, const LatentParamsd& theta);

// SampleVariance needs two residuals; a rater with a single residual falls
// back to MeanSquare.
UserVariance estimate_user_variance(const ResidualTable& residuals,
                                    VarianceConvention convention = VarianceConvention::MeanSquare);

inline constexpr double kDefaultVarianceFloor = 1e-4;

// w_u = 1 / max(sigma2_u, floor). Absent raters contribute no data and get 1.
WeightVector weights_from_variance(const UserVariance& variance,
                                   double floor = kDefaultVarianceFloor);

struct TwoStageConfig {
  FitConfig fit;
  VarianceConvention convention = VarianceConvention::MeanSquare;
  double variance_floor = kDefaultVarianceFloor;
  // Rescale weights to mean one before the weighted refit (reported weights stay raw).
  bool normalize_weights = true;
  // Extra rounds recompute the variances from the latest weighted fit.
  int max_reweight_rounds = 1;
  double reweight_tol = 1e-3;  // stop once max |dw| / w falls below this
  bool auto_filter = false;
  int min_ratings_per_note = 5;
  int min_notes_per_rater = 10;
};

struct TwoStageResult {
  FitResult stage1;
  FitResult weighted;
  WeightVector weights;
  UserVariance variance;
  ObservationSet data;  // the (possibly filtered) set both stages were fit on
  int reweight_rounds = 0;
  std::vector<std::string> warnings;
};

// When every rater's variance is at or below the floor the weights carry no
// information; the weighted stage is then the first stage, with a warning.
TwoStageResult two_stage_fit(const ObservationSet& obs, const TwoStageConfig& cfg);

}  // namespace crowdmf
