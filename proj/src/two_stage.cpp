#include "crowdmf/two_stage.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace crowdmf {

ResidualTable compute_residuals(const ObservationSet& obs, const LatentParamsd& theta) {
  if (theta.num_users() != obs.num_users() || theta.num_notes() != obs.num_notes())
    throw DataError(fmt::format(
        "compute_residuals: parameters cover {} raters / {} notes, data has {} / {}",
        theta.num_users(), theta.num_notes(), obs.num_users(), obs.num_notes()));
  ResidualTable table;
  table.entries.reserve(obs.size());
  table.per_user_counts.assign(obs.num_users(), 0);
  for (const auto& e : obs.entries()) {
    table.entries.push_back({e.user, e.note, e.rating - predict(theta, e.user, e.note)});
    ++table.per_user_counts[e.user];
  }
  return table;
}

UserVariance estimate_user_variance(const ResidualTable& residuals, VarianceConvention convention) {
  const auto users = static_cast<Index>(residuals.per_user_counts.size());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(users);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(users);
  for (const auto& r : residuals.entries) {
    require(r.user >= 0 && r.user < users, "estimate_user_variance: user index out of range");
    sum[r.user] += r.value;
    sum_sq[r.user] += r.value * r.value;
  }
  UserVariance out;
  out.sigma2 = Eigen::VectorXd::Zero(users);
  out.present.assign(users, false);
  for (Index u = 0; u < users; ++u) {
    const auto count = static_cast<double>(residuals.per_user_counts[u]);
    if (count == 0) continue;
    out.present[u] = true;
    if (convention == VarianceConvention::SampleVariance && count >= 2) {
      const double mean = sum[u] / count;
      out.sigma2[u] = std::max(0.0, (sum_sq[u] - count * mean * mean) / (count - 1));
    } else {
      out.sigma2[u] = sum_sq[u] / count;
    }
  }
  return out;
}

WeightVector weights_from_variance(const UserVariance& variance, double floor) {
  require(floor > 0 && std::isfinite(floor), "weights_from_variance: floor must be > 0");
  Eigen::VectorXd w(variance.size());
  for (Index u = 0; u < variance.size(); ++u)
    w[u] = variance.present[u] ? 1.0 / std::max(variance.sigma2[u], floor) : 1.0;
  return WeightVector(std::move(w));
}

namespace {

bool all_at_floor(const UserVariance& v, double floor) {
  for (Index u = 0; u < v.size(); ++u)
    if (v.present[u] && v.sigma2[u] > floor) return false;
  return true;
}

double max_relative_change(const WeightVector& a, const WeightVector& b) {
  return ((a.values() - b.values()).cwiseAbs().array() / b.values().array()).maxCoeff();
}

// Mean-one weights keep the ridge penalty on the same footing as the unweighted stage.
WeightVector refit_weights(const WeightVector& w, bool normalize) {
  if (!normalize) return w;
  return WeightVector(w.values() / w.values().mean());
}

}  // namespace

TwoStageResult two_stage_fit(const ObservationSet& input, const TwoStageConfig& cfg) {
  require(cfg.max_reweight_rounds >= 1, "two_stage_fit: max_reweight_rounds must be >= 1");
  TwoStageResult out;
  out.data = cfg.auto_filter
                 ? filter_observations(input, cfg.min_ratings_per_note, cfg.min_notes_per_rater)
                 : input;
  if (out.data.empty())
    throw DataError(fmt::format(
        "two_stage_fit: no data left after filtering (min {} ratings per note, min {} notes "
        "per rater)",
        cfg.min_ratings_per_note, cfg.min_notes_per_rater));

  out.stage1 = fit(out.data, cfg.fit);
  out.variance = estimate_user_variance(compute_residuals(out.data, out.stage1.params), cfg.convention);
  out.weights = weights_from_variance(out.variance, cfg.variance_floor);

  if (all_at_floor(out.variance, cfg.variance_floor)) {
    out.warnings.push_back(
        "every rater's residual variance is at the floor; weights are uniform and the weighted "
        "stage equals the first stage");
    out.weighted = out.stage1;
    return out;
  }

  FitConfig second = cfg.fit;
  second.init = WarmStart{out.stage1.params};
  out.weighted = fit(out.data, second, refit_weights(out.weights, cfg.normalize_weights));
  out.reweight_rounds = 1;

  while (out.reweight_rounds < cfg.max_reweight_rounds) {
    UserVariance variance =
        estimate_user_variance(compute_residuals(out.data, out.weighted.params), cfg.convention);
    WeightVector weights = weights_from_variance(variance, cfg.variance_floor);
    if (max_relative_change(weights, out.weights) < cfg.reweight_tol) break;
    out.variance = std::move(variance);
    out.weights = std::move(weights);
    second.init = WarmStart{out.weighted.params};
    out.weighted = fit(out.data, second, refit_weights(out.weights, cfg.normalize_weights));
    ++out.reweight_rounds;
  }
  return out;
}

}  // namespace crowdmf
