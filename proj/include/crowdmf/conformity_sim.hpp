#pragma once

// Synthetic rating data from the strategic-conformity behavioral model.
//
//   latent signal        r*_un = s_un + eps_un,  s_un = mu + h_u + i_n + f_u g_n
//   anticipated outcome  m~_un = m_n + eps^m_un, sd(eps^m) = sigma_m(c_n)
//   report               a_un  = rho(c_n) r*_un + (1 - rho(c_n)) m~_un
//
// Raters and notes are i.i.d.; each (u, n) pair is observed independently
// with probability p. All draws come from counter-based substreams of the
// seed, so output is reproducible and independent of visiting order.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "crowdmf/core_model.hpp"
#include "crowdmf/rng.hpp"

namespace crowdmf {

enum class DistKind { PointMass, Uniform, TruncatedNormal };

// Bounded scalar distribution. Uniform: mean +/- half_width. TruncatedNormal:
// N(mean, sd^2) truncated symmetrically to mean +/- half_width (so the mean is
// preserved). PointMass: always `mean`.
struct BoundedDist {
  DistKind kind = DistKind::Uniform;
  double mean = 0;
  double half_width = 0;
  double sd = 0;  // TruncatedNormal only

  static BoundedDist point(double value) { return {DistKind::PointMass, value, 0, 0}; }
  static BoundedDist uniform(double lo, double hi) {
    return {DistKind::Uniform, 0.5 * (lo + hi), 0.5 * (hi - lo), 0};
  }
  static BoundedDist truncated_normal(double mean, double sd, double half_width) {
    return {DistKind::TruncatedNormal, mean, half_width, sd};
  }

  double lower() const { return mean - half_width; }
  double upper() const { return mean + half_width; }
  void validate(const char* name) const;  // throws ContractViolation
};

double sample(const BoundedDist& dist, CounterRng& rng);
double cdf(const BoundedDist& dist, double x);

// Mean-zero normal truncated at +/- 6 sd; exactly 0 when sd == 0.
double truncated_gaussian_noise(double sd, CounterRng& rng);

struct ConstantNoise {
  double sigma = 0.1;
};
// The last round(fraction_high * U) raters get sigma_high, the rest sigma_low.
struct TwoGroupNoise {
  double sigma_low = 0.05;
  double sigma_high = 0.5;
  double fraction_high = 0.5;
};
struct PerUserNoise {
  std::vector<double> sigma;
};
using NoiseSpec = std::variant<ConstantNoise, TwoGroupNoise, PerUserNoise>;

// rho(c) = 1 - kappa * c.
struct LinearConformity {
  double kappa = 0;
};
// rho(c) = 1 for c < threshold, rho_high_controversy otherwise.
struct StepConformity {
  double threshold = 0.5;
  double rho_high_controversy = 0.5;
};
using ConformityCurve = std::variant<LinearConformity, StepConformity>;

double conformity_weight(const ConformityCurve& curve, double controversy);

struct SimConfig {
  Index users = 200;
  Index notes = 200;
  double observe_prob = 0.3;
  double mu = 0.5;
  BoundedDist rater_intercept = BoundedDist::uniform(-0.2, 0.2);
  BoundedDist note_intercept = BoundedDist::uniform(-0.3, 0.3);
  // Its mean is the known positive mean rater factor c.
  BoundedDist rater_factor = BoundedDist::uniform(-1.0, 2.0);
  BoundedDist note_factor = BoundedDist::uniform(-1.0, 1.0);
  NoiseSpec noise = ConstantNoise{0.1};
  BoundedDist controversy = BoundedDist::uniform(0.0, 1.0);
  ConformityCurve conformity = LinearConformity{0.0};
  BoundedDist consensus = BoundedDist::uniform(-0.5, 0.5);
  // sigma_m(c) = consensus_noise_base + consensus_noise_slope * c.
  double consensus_noise_base = 0;
  double consensus_noise_slope = 0;
  bool discretize = false;
  // a = rho s + (1 - rho) m~ + eps instead of the default rho (s + eps) + ...
  bool noise_after_mixing = false;
  std::uint64_t seed = 1;

  double mean_rater_factor() const { return rater_factor.mean; }
  void validate() const;  // throws ContractViolation
};

struct SimTruth {
  LatentParamsd theta0;  // uncentered; mean rater factor is c
  Eigen::VectorXd controversy;
  Eigen::VectorXd conformity;     // rho_n
  Eigen::VectorXd consensus;      // m_n
  Eigen::VectorXd consensus_gap;  // delta_n = m_n - (mu + i_n)
  Eigen::VectorXd noise_sd;       // sigma_u
  double mean_rater_factor = 0;
  double consensus_noise_base = 0;
  double consensus_noise_slope = 0;
  bool noise_after_mixing = false;

  Index num_users() const noexcept { return theta0.num_users(); }
  Index num_notes() const noexcept { return theta0.num_notes(); }
  double consensus_noise_sd(Index n) const {
    return consensus_noise_base + consensus_noise_slope * controversy[n];
  }
};

std::string sim_user_id(Index u);
std::string sim_note_id(Index n);

SimTruth sample_population(const SimConfig& cfg);

// s_un + eps_un.
double latent_signal(const SimTruth& truth, Index u, Index n, CounterRng& rng);
// m_n + eps^m_un.
double anticipated_consensus(const SimTruth& truth, Index u, Index n, CounterRng& rng);

struct Report {
  double latent = 0;
  double discretized = 0.5;  // discretize_report(latent)
};
Report report(const SimTruth& truth, Index u, Index n, CounterRng& rng);

// Raters or notes without any sampled rating are absent from `observations`;
// the origin vectors map observation indices back to population indices.
struct SimSample {
  ObservationSet observations;
  std::vector<Index> user_origin;
  std::vector<Index> note_origin;
  std::vector<std::string> warnings;
};

struct SimDataset {
  SimSample sample;
  SimTruth truth;

  const ObservationSet& observations() const noexcept { return sample.observations; }
};

// Population and reports both from cfg.seed.
SimDataset generate_dataset(const SimConfig& cfg);

// Reports for a fixed population; `noise_seed` drives inclusion and noise.
// Used to resample noise while holding the population fixed.
SimSample generate_observations(const SimTruth& truth, const SimConfig& cfg,
                                std::uint64_t noise_seed);

// Timestamped stream: each note arrives in a uniformly drawn week; each of
// its sampled ratings lands a uniform 0..lag_weeks-1 weeks later at a uniform
// offset within that week. Ratings past the last week are never made.
struct StreamConfig {
  int weeks = 1;
  int lag_weeks = 3;
  std::int64_t start_ms = 1672617600000;  // Monday 2023-01-02 00:00 UTC
};

struct SimStream {
  std::vector<RatingEvent> events;  // sorted by created_at_ms
  SimTruth truth;
  std::vector<std::string> warnings;
};

SimStream generate_stream(const SimConfig& cfg, const StreamConfig& stream);

}  // namespace crowdmf
