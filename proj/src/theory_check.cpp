#include "crowdmf/theory_check.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "crowdmf/analysis.hpp"

namespace crowdmf {

double w1(const Eigen::VectorXd& rho, const Eigen::VectorXd& g) {
  require(rho.size() == g.size(), "w1: length mismatch");
  const double denom = g.squaredNorm();
  if (!(denom > 0)) throw DataError("w1: note factors are identically zero");
  return (rho.array() * g.array().square()).sum() / denom;
}

Eigen::VectorXd predicted_note_limit(const SimTruth& truth) {
  const auto& theta = truth.theta0;
  const Eigen::VectorXd i_c = theta.note_intercept.array() - theta.note_intercept.mean();
  const Eigen::VectorXd g_c = theta.note_factor.array() - theta.note_factor.mean();
  const double c = theta.rater_factor.mean();
  const double rho_bar = truth.conformity.mean();
  const double delta_bar = truth.consensus_gap.mean();
  return (i_c.array() + c * truth.conformity.array() * g_c.array() +
          (1 - truth.conformity.array()) * truth.consensus_gap.array() -
          (1 - rho_bar) * delta_bar)
      .matrix();
}

double predicted_user_factor(double f, double w1, double c, bool decentered) {
  return decentered ? w1 * f + c * (1 - w1) : w1 * (f - c);
}

double predicted_minority_share(const std::function<double(double)>& cdf_f, double c, double w1) {
  require(w1 > 0 && w1 <= 1,
          w1 == 0 ? "predicted_minority_share: w1 = 0 is full collapse onto c"
                  : "predicted_minority_share: w1 must be in (0, 1]");
  require(c > 0, "predicted_minority_share: c must be > 0");
  return cdf_f(-c * (1 - w1) / w1);
}

double predicted_note_factor(double g, double rho, const Eigen::VectorXd& f, double c) {
  const double sq = f.squaredNorm();
  if (!(sq > 0)) throw DataError("predicted_note_factor: rater factors are identically zero");
  return g * rho * (1 - c * f.sum() / sq);
}

double intercept_variance_formula(const Eigen::VectorXd& w, const Eigen::VectorXd& sigma2) {
  require(w.size() == sigma2.size(), "intercept_variance_formula: length mismatch");
  const double total = w.sum();
  require(total > 0, "intercept_variance_formula: weights must sum to > 0");
  return (w.array().square() * sigma2.array()).sum() / (total * total);
}

std::function<double(double)> empirical_cdf(Eigen::VectorXd sample) {
  std::sort(sample.data(), sample.data() + sample.size());
  return [s = std::move(sample)](double x) {
    if (s.size() == 0) return 0.0;
    const auto it = std::upper_bound(s.data(), s.data() + s.size(), x);
    return static_cast<double>(it - s.data()) / static_cast<double>(s.size());
  };
}

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  require(a.size() == b.size() && a.size() > 0, "rmse: length mismatch or empty");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

OlsLine ols_line(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  require(x.size() == y.size() && x.size() >= 2, "ols_line: need two or more paired values");
  const double mx = x.mean();
  const double my = y.mean();
  const double sxx = (x.array() - mx).square().sum();
  if (!(sxx > 0)) throw DataError("ols_line: regressor has zero variance");
  const double slope = ((x.array() - mx) * (y.array() - my)).sum() / sxx;
  return {slope, my - slope * mx};
}

Eigen::VectorXd gather(const Eigen::VectorXd& values, const std::vector<Index>& origin) {
  Eigen::VectorXd out(static_cast<Index>(origin.size()));
  for (std::size_t k = 0; k < origin.size(); ++k) {
    require(origin[k] >= 0 && origin[k] < values.size(), "gather: index out of range");
    out[static_cast<Index>(k)] = values[origin[k]];
  }
  return out;
}

Eigen::VectorXd decentered_note_intercepts(const LatentParamsd& fitted,
                                           const Eigen::VectorXd& true_rater_factor) {
  require(true_rater_factor.size() == fitted.num_users(),
          "decentered_note_intercepts: rater factor length mismatch");
  const double c = true_rater_factor.mean();
  const Eigen::VectorXd f_c = true_rater_factor.array() - c;
  const double sd = std::sqrt(f_c.squaredNorm() / static_cast<double>(f_c.size()));
  if (!(sd > 0)) throw DataError("decentered_note_intercepts: true rater factors are constant");
  const double orientation = fitted.rater_factor.dot(f_c) > 0 ? -1.0 : 1.0;
  return decenter_note_intercept(fitted.note_intercept, orientation * fitted.note_factor, c / sd);
}

namespace {

Eigen::VectorXd centered(const Eigen::VectorXd& v) { return v.array() - v.mean(); }

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t k) {
  return CounterRng::substream(seed, stream_tag::kReplicate, k)();
}

const ObservationSet& require_data(const SimSample& sample) {
  if (sample.observations.empty()) throw DataError("theory scenario: simulation produced no ratings");
  return sample.observations;
}

}  // namespace

TruthfulOutcome run_truthful(const SimConfig& cfg, const FitConfig& fit_cfg) {
  const SimDataset data = generate_dataset(cfg);
  const auto& obs = require_data(data.sample);
  TruthfulOutcome out;
  out.fit = fit(obs, fit_cfg);
  const Eigen::VectorXd f0 = gather(data.truth.theta0.rater_factor, data.sample.user_origin);
  const Eigen::VectorXd i0 = centered(gather(data.truth.theta0.note_intercept, data.sample.note_origin));
  out.rmse_decentered = rmse(decentered_note_intercepts(out.fit.params, f0), i0);
  out.rmse_canonical = rmse(out.fit.params.note_intercept, i0);
  return out;
}

ConformityOutcome run_conformity(const SimConfig& cfg, const FitConfig& fit_cfg) {
  const SimDataset data = generate_dataset(cfg);
  const auto& obs = require_data(data.sample);
  const FitResult result = fit(obs, fit_cfg);
  ConformityOutcome out;
  out.note_origin = data.sample.note_origin;
  out.predicted_limit = gather(predicted_note_limit(data.truth), out.note_origin);
  out.fitted_intercept = result.params.note_intercept;
  const Eigen::VectorXd i0 = centered(gather(data.truth.theta0.note_intercept, out.note_origin));
  out.rmse_to_limit = rmse(out.fitted_intercept, out.predicted_limit);
  out.rmse_to_truth = rmse(out.fitted_intercept, i0);
  return out;
}

ClampedGOutcome run_clamped_g(const SimConfig& cfg, const FitConfig& fit_cfg) {
  const SimDataset data = generate_dataset(cfg);
  const auto& obs = require_data(data.sample);
  const Eigen::VectorXd g0 = gather(data.truth.theta0.note_factor, data.sample.note_origin);
  const Eigen::VectorXd rho = gather(data.truth.conformity, data.sample.note_origin);
  const Eigen::VectorXd f0 = gather(data.truth.theta0.rater_factor, data.sample.user_origin);

  FitConfig clamped = fit_cfg;
  clamped.fixed_note_factor = g0;
  clamped.fixed_rater_factor.reset();
  const FitResult result = fit(obs, clamped);

  ClampedGOutcome out;
  out.w1 = w1(rho, g0);
  out.c = f0.mean();
  const Eigen::VectorXd decentered = result.params.rater_factor.array() + out.c;
  out.line = ols_line(f0, decentered);
  const auto users = static_cast<double>(f0.size());
  out.share_true = static_cast<double>((f0.array() < 0).count()) / users;
  out.share_estimated = static_cast<double>((decentered.array() < 0).count()) / users;
  out.share_predicted = predicted_minority_share(empirical_cdf(f0), out.c, out.w1);
  return out;
}

ClampedFOutcome run_clamped_f(const SimConfig& cfg, const FitConfig& fit_cfg) {
  const SimDataset data = generate_dataset(cfg);
  const auto& obs = require_data(data.sample);
  const Eigen::VectorXd f_fixed =
      centered(gather(data.truth.theta0.rater_factor, data.sample.user_origin));
  const Eigen::VectorXd g0 = gather(data.truth.theta0.note_factor, data.sample.note_origin);
  const Eigen::VectorXd rho = gather(data.truth.conformity, data.sample.note_origin);
  const Eigen::VectorXd controversy = gather(data.truth.controversy, data.sample.note_origin);

  FitConfig clamped = fit_cfg;
  clamped.fixed_rater_factor = f_fixed;
  clamped.fixed_note_factor.reset();
  const FitResult result = fit(obs, clamped);
  const Eigen::VectorXd& g_hat = result.params.note_factor;

  Eigen::VectorXd predicted(g0.size());
  for (Index n = 0; n < g0.size(); ++n)
    predicted[n] = predicted_note_factor(g0[n], rho[n], f_fixed, f_fixed.mean());

  ClampedFOutcome out;
  out.line = ols_line(predicted, g_hat);
  std::vector<double> c_sel, ratio;
  for (Index n = 0; n < g0.size(); ++n) {
    if (std::abs(g0[n]) < 0.2) continue;
    c_sel.push_back(controversy[n]);
    ratio.push_back(g_hat[n] / g0[n]);
  }
  out.shrink_correlation = spearman(c_sel, ratio);
  return out;
}

double decoded_note_intercept(const LatentParamsd& fitted, const Eigen::VectorXd& reference,
                              Index note) {
  require(reference.size() == fitted.num_users(), "decoded_note_intercept: reference length");
  require(note >= 0 && note < fitted.num_notes(), "decoded_note_intercept: note out of range");
  const double f_ref = reference.dot(fitted.rater_factor) / reference.sum();
  return fitted.note_intercept[note] + f_ref * fitted.note_factor[note];
}

HeteroskedasticOutcome run_heteroskedastic(const SimConfig& cfg, const TwoStageConfig& ts_cfg,
                                           int replicates, Index note) {
  require(replicates >= 2, "run_heteroskedastic: need at least two replicates");
  require(note >= 0 && note < cfg.notes, "run_heteroskedastic: note index out of range");
  const SimTruth truth = sample_population(cfg);
  std::vector<double> uniform, weighted;
  uniform.reserve(replicates);
  weighted.reserve(replicates);
  Eigen::VectorXd sigma2_obs, reference;
  for (int r = 0; r < replicates; ++r) {
    const SimSample sample =
        generate_observations(truth, cfg, derived_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    const auto& obs = require_data(sample);
    const auto it = std::find(sample.note_origin.begin(), sample.note_origin.end(), note);
    if (it == sample.note_origin.end())
      throw DataError(fmt::format("run_heteroskedastic: note {} received no ratings", note));
    const auto k = static_cast<Index>(it - sample.note_origin.begin());
    const TwoStageResult result = two_stage_fit(obs, ts_cfg);
    if (result.data.num_notes() != obs.num_notes())
      throw DataError("run_heteroskedastic: filtering removed notes; disable auto_filter");
    if (r == 0) {
      sigma2_obs = gather(truth.noise_sd, sample.user_origin).array().square();
      reference = sigma2_obs.cwiseMax(ts_cfg.variance_floor).cwiseInverse();
    } else if (sample.user_origin.size() != static_cast<std::size_t>(sigma2_obs.size())) {
      throw DataError("run_heteroskedastic: rater set changed between replicates");
    }
    uniform.push_back(decoded_note_intercept(result.stage1.params, reference, k));
    weighted.push_back(decoded_note_intercept(result.weighted.params, reference, k));
  }
  auto variance = [](const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
  };

  // Per-report noise variance at this note.
  const double rho = truth.conformity[note];
  const double sm = truth.consensus_noise_sd(note);
  const double scale = truth.noise_after_mixing ? 1.0 : rho * rho;
  const Eigen::VectorXd report_var = (scale * sigma2_obs.array() + (1 - rho) * (1 - rho) * sm * sm).matrix();

  HeteroskedasticOutcome out;
  out.replicates = replicates;
  out.variance_uniform = variance(uniform);
  out.variance_weighted = variance(weighted);
  out.formula_uniform = intercept_variance_formula(Eigen::VectorXd::Ones(report_var.size()), report_var);
  out.formula_weighted = intercept_variance_formula(report_var.cwiseInverse(), report_var);
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Scenario s) noexcept {
  switch (s) {
    case Scenario::Truthful: return "truthful";
    case Scenario::Conformity: return "conformity";
    case Scenario::ClampedG: return "clamped-g";
    case Scenario::Heteroskedastic: return "heteroskedastic";
  }
  return "?";
}

std::optional<Scenario> parse_scenario(std::string_view name) {
  for (auto s : {Scenario::Truthful, Scenario::Conformity, Scenario::ClampedG,
                 Scenario::Heteroskedastic})
    if (to_string(s) == name) return s;
  return std::nullopt;
}

std::string_view to_string(ClaimCheck c) noexcept {
  switch (c) {
    case ClaimCheck::AbsDiff: return "abs_diff";
    case ClaimCheck::RelDiff: return "rel_diff";
    case ClaimCheck::AtMost: return "at_most";
    case ClaimCheck::AtLeast: return "at_least";
    case ClaimCheck::Below: return "below";
    case ClaimCheck::Skip: return "skip";
  }
  return "?";
}

std::string_view to_string(ClaimStatus s) noexcept {
  switch (s) {
    case ClaimStatus::Pass: return "pass";
    case ClaimStatus::Fail: return "fail";
    case ClaimStatus::Skip: return "skip";
  }
  return "?";
}

ClaimRow make_claim(std::string scenario, std::string claim, double predicted, double observed,
                    double tolerance, ClaimCheck check, std::string detail) {
  ClaimRow row{std::move(scenario), std::move(claim), predicted, observed, tolerance, check,
               ClaimStatus::Skip, std::move(detail)};
  bool ok = false;
  switch (check) {
    case ClaimCheck::AbsDiff: ok = std::abs(observed - predicted) <= tolerance; break;
    case ClaimCheck::RelDiff: ok = std::abs(observed - predicted) <= tolerance * std::abs(predicted); break;
    case ClaimCheck::AtMost: ok = observed <= predicted; break;
    case ClaimCheck::AtLeast: ok = observed >= predicted; break;
    case ClaimCheck::Below: ok = observed < predicted; break;
    case ClaimCheck::Skip: return row;
  }
  row.status = ok ? ClaimStatus::Pass : ClaimStatus::Fail;
  return row;
}

bool TheoryReport::passed() const {
  return std::none_of(rows.begin(), rows.end(),
                      [](const ClaimRow& r) { return r.status == ClaimStatus::Fail; });
}

namespace {

FitConfig theory_fit(const TheorySuiteConfig& cfg, std::uint64_t seed) {
  FitConfig f;
  f.lambda_u = cfg.lambda;
  f.lambda_n = cfg.lambda;
  f.max_sweeps = cfg.max_sweeps;
  f.seed = seed;
  return f;
}

SimConfig scenario_config(const SimConfig& base, Index size, double p, NoiseSpec noise,
                          ConformityCurve curve, std::uint64_t seed) {
  SimConfig c = base;
  c.users = size;
  c.notes = size;
  c.observe_prob = p;
  c.noise = std::move(noise);
  c.conformity = curve;
  c.seed = seed;
  return c;
}

void truthful_rows(const SimConfig& base, const TheorySuiteConfig& cfg, TheoryReport& report) {
  const auto sim = scenario_config(base, cfg.truthful_size, cfg.truthful_observe_prob,
                                   ConstantNoise{cfg.truthful_sigma}, LinearConformity{0}, base.seed);
  const auto main = run_truthful(sim, theory_fit(cfg, base.seed));
  report.rows.push_back(make_claim("truthful", "decentered note intercept RMSE", 0,
                                   main.rmse_decentered, cfg.abs_tol, ClaimCheck::AbsDiff,
                                   fmt::format("U=N={}, p={}", cfg.truthful_size,
                                               cfg.truthful_observe_prob)));
  report.rows.push_back(make_claim("truthful", "decentering reduces intercept RMSE",
                                   main.rmse_canonical, main.rmse_decentered, 0,
                                   ClaimCheck::Below));

  double small = 0, large = 0;
  for (int s = 0; s < cfg.consistency_seeds; ++s) {
    const auto seed = derived_seed(base.seed, 1000 + static_cast<std::uint64_t>(s));
    auto sim_small = sim;
    sim_small.users = sim_small.notes = cfg.consistency_small;
    sim_small.seed = seed;
    auto sim_large = sim_small;
    sim_large.users = sim_large.notes = cfg.consistency_large;
    small += run_truthful(sim_small, theory_fit(cfg, seed)).rmse_decentered;
    large += run_truthful(sim_large, theory_fit(cfg, seed)).rmse_decentered;
  }
  small /= cfg.consistency_seeds;
  large /= cfg.consistency_seeds;
  report.rows.push_back(make_claim(
      "truthful", "intercept RMSE shrinks with size", small, large, 0, ClaimCheck::Below,
      fmt::format("mean over {} seeds, U=N={} vs {}", cfg.consistency_seeds, cfg.consistency_large,
                  cfg.consistency_small)));
}

void conformity_rows(const SimConfig& base, const TheorySuiteConfig& cfg, TheoryReport& report) {
  const auto sim = scenario_config(base, cfg.conformity_size, cfg.conformity_observe_prob,
                                   ConstantNoise{cfg.conformity_sigma}, LinearConformity{cfg.kappa},
                                   base.seed);
  auto outcome = run_conformity(sim, theory_fit(cfg, base.seed));
  report.rows.push_back(make_claim("conformity", "note intercepts match the predicted limit", 0,
                                   outcome.rmse_to_limit, cfg.abs_tol, ClaimCheck::AbsDiff,
                                   fmt::format("kappa={}", cfg.kappa)));
  report.rows.push_back(make_claim("conformity", "note intercepts are biased away from the truth",
                                   2 * outcome.rmse_to_limit, outcome.rmse_to_truth, 0,
                                   ClaimCheck::AtLeast, "RMSE to truth vs twice RMSE to limit"));
  report.rows.push_back(make_claim("conformity", "decentered note intercept consistency", 0, 0, 0,
                                   ClaimCheck::Skip, "requires truthful reporting"));

  const auto clamp_f = run_clamped_f(sim, theory_fit(cfg, base.seed));
  report.rows.push_back(make_claim("conformity", "note factor tracks g rho (slope)", 1,
                                   clamp_f.line.slope, cfg.note_factor_tol, ClaimCheck::AbsDiff,
                                   "rater factors clamped at the centered truth"));
  report.rows.push_back(make_claim("conformity", "note factor shrinks with controversy", 0,
                                   clamp_f.shrink_correlation, 0, ClaimCheck::Below,
                                   "Spearman(controversy, g_hat / g)"));
  report.conformity = std::move(outcome);
}

void clamped_rows(const SimConfig& base, const TheorySuiteConfig& cfg, TheoryReport& report) {
  double slope = 0, intercept = 0, pred_slope = 0, pred_intercept = 0;
  double share_est = 0, share_true = 0, share_pred = 0;
  for (int s = 0; s < cfg.clamped_seeds; ++s) {
    const auto seed = derived_seed(base.seed, 2000 + static_cast<std::uint64_t>(s));
    const auto sim = scenario_config(base, cfg.clamped_size, cfg.clamped_observe_prob,
                                     ConstantNoise{cfg.clamped_sigma},
                                     LinearConformity{cfg.kappa}, seed);
    const auto o = run_clamped_g(sim, theory_fit(cfg, seed));
    const double w = cfg.wrong_w1_selftest ? o.w1 * o.w1 : o.w1;
    slope += o.line.slope;
    intercept += o.line.intercept;
    pred_slope += w;
    pred_intercept += o.c * (1 - o.w1);
    share_est += o.share_estimated;
    share_true += o.share_true;
    share_pred += o.share_predicted;
  }
  const double k = cfg.clamped_seeds;
  const auto detail = fmt::format("mean over {} seeds, kappa={}", cfg.clamped_seeds, cfg.kappa);
  report.rows.push_back(make_claim("clamped-g", "user factor slope equals w1", pred_slope / k,
                                   slope / k, cfg.abs_tol, ClaimCheck::AbsDiff,
                                   cfg.wrong_w1_selftest ? "negative control: predicted as w1^2"
                                                         : detail));
  report.rows.push_back(make_claim("clamped-g", "user factor intercept equals c (1 - w1)",
                                   pred_intercept / k, intercept / k, cfg.abs_tol,
                                   ClaimCheck::AbsDiff, detail));
  report.rows.push_back(make_claim("clamped-g", "estimated minority share below true share",
                                   share_true / k, share_est / k, 0, ClaimCheck::Below, detail));
  report.rows.push_back(make_claim("clamped-g", "estimated minority share matches prediction",
                                   share_pred / k, share_est / k, cfg.share_tol,
                                   ClaimCheck::AbsDiff, detail));

  std::vector<std::pair<double, double>> grid;  // (w1, estimated share)
  for (double kappa : cfg.kappa_grid) {
    const auto sim = scenario_config(base, cfg.clamped_size, cfg.clamped_observe_prob,
                                     ConstantNoise{cfg.clamped_sigma}, LinearConformity{kappa},
                                     base.seed);
    const auto o = run_clamped_g(sim, theory_fit(cfg, base.seed));
    grid.emplace_back(o.w1, o.share_estimated);
  }
  std::sort(grid.begin(), grid.end());
  int violations = 0;
  for (std::size_t j = 1; j < grid.size(); ++j)
    if (grid[j].second < grid[j - 1].second) ++violations;
  report.rows.push_back(make_claim("clamped-g", "minority share non-decreasing in w1", 0,
                                   violations, 0, ClaimCheck::AbsDiff,
                                   fmt::format("{}-point kappa grid", grid.size())));
}

void heteroskedastic_rows(const SimConfig& base, const TheorySuiteConfig& cfg,
                          TheoryReport& report) {
  const auto sim = scenario_config(base, cfg.hetero_size, 1.0,
                                   TwoGroupNoise{cfg.hetero_sigma_low, cfg.hetero_sigma_high, 0.5},
                                   LinearConformity{0}, base.seed);
  TwoStageConfig ts;
  ts.fit = theory_fit(cfg, base.seed);
  const auto o = run_heteroskedastic(sim, ts, cfg.hetero_replicates);
  const auto detail = fmt::format("{} replicates, U=N={}", o.replicates, cfg.hetero_size);
  report.rows.push_back(make_claim("heteroskedastic", "two-stage variance at most uniform",
                                   o.variance_uniform, o.variance_weighted, 0, ClaimCheck::AtMost,
                                   detail));
  report.rows.push_back(make_claim("heteroskedastic", "uniform-weight variance formula",
                                   o.formula_uniform, o.variance_uniform, cfg.rel_tol,
                                   ClaimCheck::RelDiff, detail));
  report.rows.push_back(make_claim("heteroskedastic", "inverse-variance variance formula",
                                   o.formula_weighted, o.variance_weighted, cfg.rel_tol,
                                   ClaimCheck::RelDiff, detail));
}

}  // namespace

TheoryReport run_theory_suite(const SimConfig& base, const TheorySuiteConfig& cfg) {
  base.validate();
  TheoryReport report;
  for (Scenario s : cfg.scenarios) {
    switch (s) {
      case Scenario::Truthful: truthful_rows(base, cfg, report); break;
      case Scenario::Conformity: conformity_rows(base, cfg, report); break;
      case Scenario::ClampedG: clamped_rows(base, cfg, report); break;
      case Scenario::Heteroskedastic: heteroskedastic_rows(base, cfg, report); break;
    }
  }
  return report;
}

}  // namespace crowdmf
