#include "crowdmf/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <utility>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include <Eigen/Dense>

#include "crowdmf/error.hpp"
#include "crowdmf/rng.hpp"

namespace crowdmf {

using Index = Eigen::Index;

std::vector<double> midranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t k = 0;
  while (k < order.size()) {
    std::size_t end = k + 1;
    while (end < order.size() && x[order[end]] == x[order[k]]) ++end;
    const double rank = 0.5 * static_cast<double>(k + 1 + end);
    for (std::size_t j = k; j < end; ++j) ranks[order[j]] = rank;
    k = end;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "spearman: length mismatch");
  require(x.size() >= 2, "spearman: need at least two observations");
  const auto rx = midranks(x);
  const auto ry = midranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1) / 2;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < rx.size(); ++k) {
    sxy += (rx[k] - mean) * (ry[k] - mean);
    sxx += (rx[k] - mean) * (rx[k] - mean);
    syy += (ry[k] - mean) * (ry[k] - mean);
  }
  if (sxx == 0 || syy == 0) throw DataError("spearman: degenerate ranks");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  return spearman(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                  std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

double bimodality_coefficient(std::span<const double> samples, bool small_sample) {
  const auto count = samples.size();
  if (count < 4) throw DataError("bimodality_coefficient: need at least four samples");
  const double n = static_cast<double>(count);
  double mean = 0;
  for (double v : samples) mean += v;
  mean /= n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double v : samples) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 0)) throw DataError("bimodality_coefficient: zero variance");
  const double g1 = m3 / std::pow(m2, 1.5);
  const double g2 = m4 / (m2 * m2);
  if (!small_sample) return (g1 * g1 + 1) / g2;
  const double skew = g1 * std::sqrt(n * (n - 1)) / (n - 2);
  const double excess = (n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * (g2 - 3) + 6);
  return (skew * skew + 1) / (excess + 3 * (n - 1) * (n - 1) / ((n - 2) * (n - 3)));
}

double jeffreys_proportion(std::int64_t k, std::int64_t n) {
  require(k >= 0 && k <= n, "jeffreys_proportion: need 0 <= k <= n");
  return (static_cast<double>(k) + 0.5) / (static_cast<double>(n) + 1.0);
}

InferenceResult normal_inference(double estimate, double se) {
  static const boost::math::normal_distribution<double> standard;
  const double z975 = boost::math::quantile(standard, 0.975);
  InferenceResult r;
  r.estimate = estimate;
  r.se = se;
  r.ci_low = estimate - z975 * se;
  r.ci_high = estimate + z975 * se;
  if (se > 0) {
    r.p_value = 2 * boost::math::cdf(boost::math::complement(standard, std::abs(estimate / se)));
  } else {
    r.p_value = estimate == 0 ? 1.0 : 0.0;
  }
  return r;
}

InferenceResult student_t_inference(double estimate, double se, double dof) {
  require(dof > 0, "student_t_inference: degrees of freedom must be > 0");
  const boost::math::students_t_distribution<double> t(dof);
  const double q975 = boost::math::quantile(t, 0.975);
  InferenceResult r;
  r.estimate = estimate;
  r.se = se;
  r.ci_low = estimate - q975 * se;
  r.ci_high = estimate + q975 * se;
  if (se > 0) {
    r.p_value = 2 * boost::math::cdf(boost::math::complement(t, std::abs(estimate / se)));
  } else {
    r.p_value = estimate == 0 ? 1.0 : 0.0;
  }
  return r;
}

InferenceResult weekly_gap_did(std::span<const double> gaps, const std::vector<bool>& post,
                               const GapDidOptions& options) {
  const auto T = static_cast<Index>(gaps.size());
  require(post.size() == gaps.size(), "weekly_gap_did: post flags length mismatch");
  require(options.hac_lags >= 0, "weekly_gap_did: hac_lags must be >= 0");
  if (options.weights)
    require(options.weights->size() == gaps.size(), "weekly_gap_did: weights length mismatch");
  if (options.running)
    require(options.running->size() == gaps.size(), "weekly_gap_did: running variable length");
  const auto n_post = std::count(post.begin(), post.end(), true);
  if (n_post == 0 || n_post == T)
    throw DataError("weekly_gap_did: need both pre and post weeks");

  const Index k = 2 + (options.running ? (options.interact ? 2 : 1) : 0);
  Eigen::MatrixXd X(T, k);
  Eigen::VectorXd y(T), w(T);
  for (Index t = 0; t < T; ++t) {
    const double p = post[t] ? 1.0 : 0.0;
    X(t, 0) = 1;
    X(t, 1) = p;
    if (options.running) {
      X(t, 2) = (*options.running)[t];
      if (options.interact) X(t, 3) = p * (*options.running)[t];
    }
    y[t] = gaps[t];
    w[t] = options.weights ? (*options.weights)[t] : 1.0;
    require(std::isfinite(y[t]), fmt::format("weekly_gap_did: non-finite gap at week {}", t));
    require(std::isfinite(w[t]) && w[t] > 0,
            fmt::format("weekly_gap_did: weight at week {} must be > 0", t));
  }
  const Eigen::MatrixXd XtW = X.transpose() * w.asDiagonal();
  const Eigen::MatrixXd bread_inv = XtW * X;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(bread_inv);
  if (lu.rank() < k) throw DataError("weekly_gap_did: collinear design");
  const Eigen::MatrixXd bread = lu.inverse();
  const Eigen::VectorXd beta = bread * (XtW * y);
  const Eigen::VectorXd resid = y - X * beta;

  // Scores s_t = w_t x_t e_t; Bartlett-weighted autocovariances.
  Eigen::MatrixXd scores(T, k);
  for (Index t = 0; t < T; ++t) scores.row(t) = w[t] * resid[t] * X.row(t);
  Eigen::MatrixXd meat = scores.transpose() * scores;
  for (int lag = 1; lag <= options.hac_lags && lag < T; ++lag) {
    const double kernel = 1.0 - static_cast<double>(lag) / (options.hac_lags + 1);
    const Eigen::MatrixXd gamma =
        scores.bottomRows(T - lag).transpose() * scores.topRows(T - lag);
    meat += kernel * (gamma + gamma.transpose());
  }
  if (T <= k) throw DataError("weekly_gap_did: not enough weeks for the regression");
  const double dof = static_cast<double>(T - k);
  const Eigen::MatrixXd cov = bread * meat * bread * (static_cast<double>(T) / dof);
  return student_t_inference(beta[1], std::sqrt(std::max(0.0, cov(1, 1))), dof);
}

InferenceResult two_way_fe_did(const std::vector<PanelCell>& panel) {
  std::map<std::string, Index> units;
  std::map<std::int64_t, Index> weeks;
  for (const auto& c : panel) {
    units.emplace(c.unit, 0);
    weeks.emplace(c.week, 0);
  }
  if (units.size() < 2) throw DataError("two_way_fe_did: need at least two units");
  if (weeks.size() < 2) throw DataError("two_way_fe_did: need at least two weeks");
  Index next = 0;
  for (auto& [_, idx] : units) idx = next++;
  next = 0;
  for (auto& [_, idx] : weeks) idx = next++;

  const auto n = static_cast<Index>(panel.size());
  std::vector<Index> ui(n), wi(n);
  std::set<std::pair<Index, Index>> seen;
  Eigen::VectorXd y(n), d(n);
  for (Index k = 0; k < n; ++k) {
    const auto& c = panel[k];
    ui[k] = units.at(c.unit);
    wi[k] = weeks.at(c.week);
    if (!seen.emplace(ui[k], wi[k]).second)
      throw DataError(fmt::format("two_way_fe_did: duplicate cell (unit '{}', week {})", c.unit, c.week));
    require(std::isfinite(c.outcome), "two_way_fe_did: non-finite outcome");
    y[k] = c.outcome;
    d[k] = (c.group && c.post) ? 1.0 : 0.0;
  }

  // Alternating projections onto the complement of unit and week dummies.
  auto demean = [&](Eigen::VectorXd v) {
    const auto U = static_cast<Index>(units.size());
    const auto W = static_cast<Index>(weeks.size());
    for (int iter = 0; iter < 10000; ++iter) {
      Eigen::VectorXd sum_u = Eigen::VectorXd::Zero(U), cnt_u = Eigen::VectorXd::Zero(U);
      for (Index k = 0; k < n; ++k) {
        sum_u[ui[k]] += v[k];
        cnt_u[ui[k]] += 1;
      }
      for (Index k = 0; k < n; ++k) v[k] -= sum_u[ui[k]] / cnt_u[ui[k]];
      Eigen::VectorXd sum_w = Eigen::VectorXd::Zero(W), cnt_w = Eigen::VectorXd::Zero(W);
      for (Index k = 0; k < n; ++k) {
        sum_w[wi[k]] += v[k];
        cnt_w[wi[k]] += 1;
      }
      double shift = 0;
      for (Index j = 0; j < W; ++j) shift = std::max(shift, std::abs(sum_w[j] / cnt_w[j]));
      for (Index k = 0; k < n; ++k) v[k] -= sum_w[wi[k]] / cnt_w[wi[k]];
      if (shift < 1e-13 * std::max(1.0, v.cwiseAbs().maxCoeff())) break;
    }
    return v;
  };
  const Eigen::VectorXd yt = demean(y);
  const Eigen::VectorXd dt = demean(d);
  const double sdd = dt.squaredNorm();
  if (!(sdd > 1e-10 * std::max(1.0, d.squaredNorm())))
    throw DataError("two_way_fe_did: treatment is collinear with the fixed effects");
  const double beta = dt.dot(yt) / sdd;
  const Eigen::VectorXd resid = yt - beta * dt;
  const double params = static_cast<double>(units.size() + weeks.size());  // FE + beta - 1
  const double dof = static_cast<double>(n) - params;
  if (!(dof > 0)) throw DataError("two_way_fe_did: not enough cells for the fixed effects");
  const double meat = (dt.array().square() * resid.array().square()).sum();
  const double var = static_cast<double>(n) / dof * meat / (sdd * sdd);
  return normal_inference(beta, std::sqrt(var));
}

double mean_difference(std::span<const double> data, const std::vector<bool>& labels) {
  double s1 = 0, s0 = 0;
  std::size_t n1 = 0, n0 = 0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (labels[k]) {
      s1 += data[k];
      ++n1;
    } else {
      s0 += data[k];
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) return std::numeric_limits<double>::quiet_NaN();
  return s1 / static_cast<double>(n1) - s0 / static_cast<double>(n0);
}

PermutationResult permutation_test(const PermutationStatistic& stat, std::span<const double> data,
                                   const std::vector<bool>& labels, int n_perm,
                                   std::uint64_t seed) {
  require(n_perm >= 100, "permutation_test: n_perm must be >= 100");
  require(labels.size() == data.size(), "permutation_test: labels length mismatch");
  PermutationResult out;
  out.observed = stat(data, labels);
  if (!std::isfinite(out.observed)) {
    out.warnings.push_back("statistic is not finite on the observed labels; p set to 1");
    return out;
  }
  const double threshold = std::abs(out.observed);
  bool varied = false;
  std::vector<bool> shuffled(labels.size());
  for (int r = 0; r < n_perm; ++r) {
    shuffled = labels;
    auto rng = CounterRng::substream(seed, stream_tag::kPermutation, static_cast<std::uint64_t>(r));
    for (std::size_t k = shuffled.size(); k > 1; --k) {
      const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k));
      std::vector<bool>::swap(shuffled[k - 1], shuffled[std::min(j, k - 1)]);
    }
    const double value = stat(data, shuffled);
    if (!std::isfinite(value)) continue;
    if (value != out.observed) varied = true;
    if (std::abs(value) >= threshold) ++out.exceedances;
  }
  if (!varied) {
    out.exceedances = n_perm;
    out.warnings.push_back("statistic is constant across permutations; p set to 1");
    return out;
  }
  out.p_value = (1.0 + out.exceedances) / (1.0 + n_perm);
  return out;
}

}  // namespace crowdmf
