#include "crowdmf/conformity_sim.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/normal.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>
#include <fmt/format.h>

namespace crowdmf {

namespace {

constexpr double kNoiseTruncation = 6.0;

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0; }

}  // namespace

void BoundedDist::validate(const char* name) const {
  require(std::isfinite(mean), fmt::format("{}: mean must be finite", name));
  require(finite_nonneg(half_width), fmt::format("{}: bound must be finite and >= 0", name));
  if (kind == DistKind::TruncatedNormal) {
    require(std::isfinite(sd) && sd > 0, fmt::format("{}: sd must be > 0", name));
    require(half_width > 0, fmt::format("{}: truncated normal needs a positive bound", name));
  }
}

double sample(const BoundedDist& dist, CounterRng& rng) {
  switch (dist.kind) {
    case DistKind::PointMass:
      return dist.mean;
    case DistKind::Uniform:
      if (dist.half_width == 0) return dist.mean;
      return boost::random::uniform_real_distribution<double>(dist.lower(), dist.upper())(rng);
    case DistKind::TruncatedNormal: {
      boost::random::normal_distribution<double> normal(0.0, dist.sd);
      for (;;) {
        const double x = normal(rng);
        if (std::abs(x) <= dist.half_width) return dist.mean + x;
      }
    }
  }
  return dist.mean;
}

double cdf(const BoundedDist& dist, double x) {
  if (x < dist.lower()) return 0.0;
  if (x >= dist.upper()) return 1.0;
  switch (dist.kind) {
    case DistKind::PointMass:
      return x >= dist.mean ? 1.0 : 0.0;
    case DistKind::Uniform:
      return (x - dist.lower()) / (2 * dist.half_width);
    case DistKind::TruncatedNormal: {
      const boost::math::normal_distribution<double> normal(dist.mean, dist.sd);
      const double lo = boost::math::cdf(normal, dist.lower());
      const double hi = boost::math::cdf(normal, dist.upper());
      return (boost::math::cdf(normal, x) - lo) / (hi - lo);
    }
  }
  return 0.0;
}

double truncated_gaussian_noise(double sd, CounterRng& rng) {
  if (sd == 0) return 0.0;
  boost::random::normal_distribution<double> normal(0.0, sd);
  for (;;) {
    const double x = normal(rng);
    if (std::abs(x) <= kNoiseTruncation * sd) return x;
  }
}

double conformity_weight(const ConformityCurve& curve, double controversy) {
  if (const auto* lin = std::get_if<LinearConformity>(&curve))
    return std::clamp(1.0 - lin->kappa * controversy, 0.0, 1.0);
  const auto& step = std::get<StepConformity>(curve);
  return controversy < step.threshold ? 1.0 : step.rho_high_controversy;
}

void SimConfig::validate() const {
  require(users > 0 && notes > 0, "SimConfig: users and notes must be positive");
  require(observe_prob > 0 && observe_prob <= 1, "SimConfig: observe_prob must be in (0, 1]");
  require(std::isfinite(mu), "SimConfig: mu must be finite");
  rater_intercept.validate("rater_intercept");
  note_intercept.validate("note_intercept");
  rater_factor.validate("rater_factor");
  note_factor.validate("note_factor");
  controversy.validate("controversy");
  consensus.validate("consensus");
  require(rater_factor.mean > 0, "SimConfig: mean rater factor must be > 0");
  require(controversy.lower() >= 0 && controversy.upper() <= 1,
          "SimConfig: controversy must lie in [0, 1]");
  require(finite_nonneg(consensus_noise_base) && std::isfinite(consensus_noise_slope) &&
              consensus_noise_base + std::min(0.0, consensus_noise_slope) >= 0,
          "SimConfig: consensus noise sd must be >= 0 on [0, 1]");

  std::visit(
      [&](const auto& spec) {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, ConstantNoise>) {
          require(finite_nonneg(spec.sigma), "SimConfig: noise sigma must be >= 0");
        } else if constexpr (std::is_same_v<T, TwoGroupNoise>) {
          require(finite_nonneg(spec.sigma_low) && finite_nonneg(spec.sigma_high),
                  "SimConfig: noise sigmas must be >= 0");
          require(spec.fraction_high >= 0 && spec.fraction_high <= 1,
                  "SimConfig: fraction_high must be in [0, 1]");
        } else {
          require(static_cast<Index>(spec.sigma.size()) == users,
                  "SimConfig: per-user noise needs one sigma per user");
          for (double s : spec.sigma) require(finite_nonneg(s), "SimConfig: noise sigma must be >= 0");
        }
      },
      noise);

  std::visit(
      [](const auto& curve) {
        using T = std::decay_t<decltype(curve)>;
        if constexpr (std::is_same_v<T, LinearConformity>) {
          require(curve.kappa >= 0 && curve.kappa <= 1, "SimConfig: kappa must be in [0, 1]");
        } else {
          require(std::isfinite(curve.threshold), "SimConfig: step threshold must be finite");
          require(curve.rho_high_controversy >= 0 && curve.rho_high_controversy <= 1,
                  "SimConfig: step conformity weight must be in [0, 1]");
        }
      },
      conformity);
}

std::string sim_user_id(Index u) { return fmt::format("u{:05d}", u); }
std::string sim_note_id(Index n) { return fmt::format("n{:05d}", n); }

namespace {

Eigen::VectorXd noise_levels(const NoiseSpec& spec, Index users) {
  Eigen::VectorXd sigma(users);
  if (const auto* c = std::get_if<ConstantNoise>(&spec)) {
    sigma.setConstant(c->sigma);
  } else if (const auto* two = std::get_if<TwoGroupNoise>(&spec)) {
    const auto high = static_cast<Index>(std::llround(two->fraction_high * static_cast<double>(users)));
    sigma.setConstant(two->sigma_low);
    sigma.tail(high).setConstant(two->sigma_high);
  } else {
    const auto& v = std::get<PerUserNoise>(spec).sigma;
    sigma = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
  }
  return sigma;
}

}  // namespace

SimTruth sample_population(const SimConfig& cfg) {
  cfg.validate();
  SimTruth t;
  t.theta0 = LatentParamsd::zeros(cfg.users, cfg.notes);
  t.theta0.mu = cfg.mu;
  for (Index u = 0; u < cfg.users; ++u) {
    auto rng = CounterRng::substream(cfg.seed, stream_tag::kRaterLatents, u);
    t.theta0.rater_intercept[u] = sample(cfg.rater_intercept, rng);
    t.theta0.rater_factor[u] = sample(cfg.rater_factor, rng);
  }
  t.controversy.resize(cfg.notes);
  t.conformity.resize(cfg.notes);
  t.consensus.resize(cfg.notes);
  t.consensus_gap.resize(cfg.notes);
  for (Index n = 0; n < cfg.notes; ++n) {
    auto rng = CounterRng::substream(cfg.seed, stream_tag::kNoteLatents, n);
    t.theta0.note_intercept[n] = sample(cfg.note_intercept, rng);
    t.theta0.note_factor[n] = sample(cfg.note_factor, rng);
    t.controversy[n] = sample(cfg.controversy, rng);
    t.consensus[n] = sample(cfg.consensus, rng);
    t.conformity[n] = conformity_weight(cfg.conformity, t.controversy[n]);
    t.consensus_gap[n] = t.consensus[n] - (cfg.mu + t.theta0.note_intercept[n]);
  }
  t.noise_sd = noise_levels(cfg.noise, cfg.users);
  t.mean_rater_factor = cfg.mean_rater_factor();
  t.consensus_noise_base = cfg.consensus_noise_base;
  t.consensus_noise_slope = cfg.consensus_noise_slope;
  t.noise_after_mixing = cfg.noise_after_mixing;
  return t;
}

double latent_signal(const SimTruth& truth, Index u, Index n, CounterRng& rng) {
  return predict(truth.theta0, u, n) + truncated_gaussian_noise(truth.noise_sd[u], rng);
}

double anticipated_consensus(const SimTruth& truth, Index u, Index n, CounterRng& rng) {
  require(u >= 0 && u < truth.num_users(), "anticipated_consensus: user index out of range");
  require(n >= 0 && n < truth.num_notes(), "anticipated_consensus: note index out of range");
  return truth.consensus[n] + truncated_gaussian_noise(truth.consensus_noise_sd(n), rng);
}

Report report(const SimTruth& truth, Index u, Index n, CounterRng& rng) {
  const double rho = truth.conformity[n];
  double latent = 0;
  if (truth.noise_after_mixing) {
    const double signal = predict(truth.theta0, u, n);
    const double noise = truncated_gaussian_noise(truth.noise_sd[u], rng);
    latent = rho * signal + (1 - rho) * anticipated_consensus(truth, u, n, rng) + noise;
  } else {
    const double signal = latent_signal(truth, u, n, rng);
    latent = rho * signal + (1 - rho) * anticipated_consensus(truth, u, n, rng);
  }
  return {latent, discretize_report(latent)};
}

namespace {

struct Cell {
  Index user;
  Index note;
  double rating;
};

// Per-cell draw order: inclusion uniform, then the report's noise draws.
template <typename Visit>
void sample_cells(const SimTruth& truth, const SimConfig& cfg, std::uint64_t noise_seed,
                  Visit&& visit) {
  for (Index u = 0; u < truth.num_users(); ++u) {
    for (Index n = 0; n < truth.num_notes(); ++n) {
      auto rng = CounterRng::substream(noise_seed, stream_tag::kCell, u, n);
      if (!(uniform01(rng) < cfg.observe_prob)) continue;
      const Report r = report(truth, u, n, rng);
      visit(Cell{u, n, cfg.discretize ? r.discretized : r.latent});
    }
  }
}

std::vector<Index> dense_index(const std::vector<bool>& present, std::vector<Index>& origin) {
  std::vector<Index> map(present.size(), -1);
  for (std::size_t k = 0; k < present.size(); ++k) {
    if (!present[k]) continue;
    map[k] = static_cast<Index>(origin.size());
    origin.push_back(static_cast<Index>(k));
  }
  return map;
}

}  // namespace

SimSample generate_observations(const SimTruth& truth, const SimConfig& cfg,
                                std::uint64_t noise_seed) {
  require(truth.num_users() == cfg.users && truth.num_notes() == cfg.notes,
          "generate_observations: population does not match the config");
  std::vector<Cell> cells;
  cells.reserve(static_cast<std::size_t>(cfg.observe_prob * static_cast<double>(cfg.users) *
                                         static_cast<double>(cfg.notes) * 1.1) + 16);
  std::vector<bool> user_seen(cfg.users, false), note_seen(cfg.notes, false);
  sample_cells(truth, cfg, noise_seed, [&](const Cell& c) {
    cells.push_back(c);
    user_seen[c.user] = true;
    note_seen[c.note] = true;
  });

  SimSample out;
  if (cells.empty()) {
    out.warnings.push_back(fmt::format(
        "no ratings sampled (users={}, notes={}, observe_prob={})", cfg.users, cfg.notes,
        cfg.observe_prob));
    return out;
  }
  const auto user_map = dense_index(user_seen, out.user_origin);
  const auto note_map = dense_index(note_seen, out.note_origin);
  std::vector<std::string> user_ids, note_ids;
  for (Index u : out.user_origin) user_ids.push_back(sim_user_id(u));
  for (Index n : out.note_origin) note_ids.push_back(sim_note_id(n));
  std::vector<Observation> entries;
  entries.reserve(cells.size());
  for (const auto& c : cells) entries.push_back({user_map[c.user], note_map[c.note], c.rating});
  const auto missing_users = cfg.users - static_cast<Index>(out.user_origin.size());
  const auto missing_notes = cfg.notes - static_cast<Index>(out.note_origin.size());
  if (missing_users > 0 || missing_notes > 0)
    out.warnings.push_back(fmt::format("{} raters and {} notes received no ratings",
                                       missing_users, missing_notes));
  out.observations = ObservationSet(std::move(user_ids), std::move(note_ids), std::move(entries));
  return out;
}

SimDataset generate_dataset(const SimConfig& cfg) {
  SimDataset out;
  out.truth = sample_population(cfg);
  out.sample = generate_observations(out.truth, cfg, cfg.seed);
  return out;
}

SimStream generate_stream(const SimConfig& cfg, const StreamConfig& stream) {
  require(stream.weeks >= 1, "generate_stream: weeks must be >= 1");
  require(stream.lag_weeks >= 1, "generate_stream: lag_weeks must be >= 1");
  require(stream.start_ms >= 0, "generate_stream: start_ms must be >= 0");
  SimStream out;
  out.truth = sample_population(cfg);

  std::vector<int> arrival(cfg.notes);
  for (Index n = 0; n < cfg.notes; ++n) {
    auto rng = CounterRng::substream(cfg.seed, stream_tag::kNoteArrival, n);
    arrival[n] = boost::random::uniform_int_distribution<int>(0, stream.weeks - 1)(rng);
  }
  sample_cells(out.truth, cfg, cfg.seed, [&](const Cell& c) {
    auto rng = CounterRng::substream(cfg.seed, stream_tag::kCellTime, c.user, c.note);
    const int lag = boost::random::uniform_int_distribution<int>(0, stream.lag_weeks - 1)(rng);
    const int week = arrival[c.note] + lag;
    if (week >= stream.weeks) return;
    const auto offset =
        boost::random::uniform_int_distribution<std::int64_t>(0, kWeekMs - 1)(rng);
    out.events.push_back({sim_user_id(c.user), sim_note_id(c.note),
                          stream.start_ms + week * kWeekMs + offset, c.rating});
  });
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const RatingEvent& a, const RatingEvent& b) {
                     return a.created_at_ms < b.created_at_ms;
                   });
  if (out.events.empty()) out.warnings.push_back("stream contains no ratings");
  return out;
}

}  // namespace crowdmf
