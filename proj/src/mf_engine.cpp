#include "crowdmf/mf_engine.hpp"

#include <algorithm>
#include <cmath>
#include <string_view>
#include <thread>

#include <fmt/format.h>

#include "crowdmf/rng.hpp"

namespace crowdmf {

namespace {

// Entries grouped by one side of the bipartite graph.
struct Adjacency {
  std::vector<std::size_t> offsets;
  std::vector<Index> other;
  std::vector<double> rating;
};

Adjacency group_by(const ObservationSet& obs, bool by_user) {
  const Index groups = by_user ? obs.num_users() : obs.num_notes();
  Adjacency adj;
  adj.offsets.assign(groups + 1, 0);
  for (const auto& e : obs.entries()) ++adj.offsets[(by_user ? e.user : e.note) + 1];
  for (Index k = 0; k < groups; ++k) adj.offsets[k + 1] += adj.offsets[k];
  adj.other.resize(obs.size());
  adj.rating.resize(obs.size());
  std::vector<std::size_t> cursor(adj.offsets.begin(), adj.offsets.end() - 1);
  for (const auto& e : obs.entries()) {
    const Index key = by_user ? e.user : e.note;
    const std::size_t slot = cursor[key]++;
    adj.other[slot] = by_user ? e.note : e.user;
    adj.rating[slot] = e.rating;
  }
  return adj;
}

// Each index is written by exactly one worker and reads only state that is
// frozen during the loop, so the result does not depend on `threads`.
template <typename Fn>
void parallel_for(Index count, int threads, Fn&& fn) {
  if (threads <= 1 || count < 256) {
    for (Index k = 0; k < count; ++k) fn(k);
    return;
  }
  const Index workers = std::min<Index>(threads, count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (Index w = 0; w < workers; ++w) {
    const Index begin = count * w / workers;
    const Index end = count * (w + 1) / workers;
    pool.emplace_back([begin, end, &fn] {
      for (Index k = begin; k < end; ++k) fn(k);
    });
  }
  for (auto& t : pool) t.join();
}

// Minimizes a*x^2 - 2*b1*x + 2*bxy*x*y + c*y^2 - 2*b2*y, i.e. solves
// [a bxy; bxy c] [x; y] = [b1; b2]. Falls back to exact coordinate updates
// from the current (x, y) when the system is singular.
// FNV-1a: initial factors follow the entity id, not its position.
std::uint64_t id_key(std::string_view id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : id) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void solve_pair(double a, double bxy, double c, double b1, double b2, double& x, double& y) {
  const double det = a * c - bxy * bxy;
  if (det > 1e-12 * std::max(1.0, a * c)) {
    x = (c * b1 - bxy * b2) / det;
    y = (a * b2 - bxy * b1) / det;
    return;
  }
  if (a > 0) x = (b1 - bxy * y) / a;
  if (c > 0) y = (b2 - bxy * x) / c;
}

class Solver {
 public:
  Solver(const ObservationSet& obs, const FitConfig& cfg, const std::optional<WeightVector>& weights)
      : obs_(obs),
        cfg_(cfg),
        lambdas_(resolve_lambdas(cfg, obs)),
        by_user_(group_by(obs, true)),
        by_note_(group_by(obs, false)) {
    weight_ = weights ? weights->values() : Eigen::VectorXd::Ones(obs.num_users());
  }

  FitResult run() {
    FitResult result;
    theta_ = initial_params();
    double previous = objective_value(obs_, theta_, lambdas_, weight_opt());
    for (int sweep = 1; sweep <= cfg_.max_sweeps; ++sweep) {
      update_mu();
      update_users();
      update_mu();
      update_notes();
      rebalance();
      const double current = objective_value(obs_, theta_, lambdas_, weight_opt());
      result.objective_trace.push_back(current);
      result.sweeps = sweep;
      if (current > previous * (1 + 1e-10) + 1e-300)
        throw std::logic_error(
            fmt::format("fit: objective increased at sweep {} ({} -> {})", sweep, previous, current));
      const double drop = previous - current;
      previous = current;
      if (drop <= cfg_.rel_tol * std::max(current, 1e-300) || current < 1e-28) {
        result.converged = true;
        break;
      }
    }
    result.objective = previous;
    result.params = finalize(theta_);
    return result;
  }

 private:
  std::optional<WeightVector> weight_opt() const { return WeightVector(weight_); }

  LatentParamsd initial_params() const {
    const Index users = obs_.num_users();
    const Index notes = obs_.num_notes();
    LatentParamsd p;
    if (const auto* warm = std::get_if<WarmStart>(&cfg_.init)) {
      require(warm->params.num_users() == users && warm->params.num_notes() == notes &&
                  warm->params.consistent(),
              "fit: warm start dimensions do not match the observation set");
      require(warm->params.all_finite(), "fit: warm start has non-finite entries");
      p = warm->params;
      p.rank_deficient = false;
    } else {
      const double scale = std::get<RandomInit>(cfg_.init).scale;
      p = LatentParamsd::zeros(users, notes);
      for (Index u = 0; u < users; ++u) {
        auto rng = CounterRng::substream(cfg_.seed, stream_tag::kFitInit, 0,
                                         id_key(obs_.user_ids()[static_cast<std::size_t>(u)]));
        p.rater_factor[u] = scale * (2 * uniform01(rng) - 1);
      }
      for (Index n = 0; n < notes; ++n) {
        auto rng = CounterRng::substream(cfg_.seed, stream_tag::kFitInit, 1,
                                         id_key(obs_.note_ids()[static_cast<std::size_t>(n)]));
        p.note_factor[n] = scale * (2 * uniform01(rng) - 1);
      }
    }
    if (cfg_.fixed_note_factor) p.note_factor = *cfg_.fixed_note_factor;
    if (cfg_.fixed_rater_factor) p.rater_factor = *cfg_.fixed_rater_factor;
    return p;
  }

  void update_mu() {
    double num = 0, den = 0;
    for (const auto& e : obs_.entries()) {
      const double w = weight_[e.user];
      num += w * (e.rating - theta_.rater_intercept[e.user] - theta_.note_intercept[e.note] -
                  theta_.rater_factor[e.user] * theta_.note_factor[e.note]);
      den += w;
    }
    theta_.mu = num / den;
  }

  void update_users() {
    const bool factor_free = !cfg_.fixed_rater_factor.has_value();
    parallel_for(obs_.num_users(), cfg_.threads, [&](Index u) {
      const double w = weight_[u];
      double count = 0, sg = 0, sgg = 0, sy = 0, syg = 0;
      for (std::size_t k = by_user_.offsets[u]; k < by_user_.offsets[u + 1]; ++k) {
        const Index n = by_user_.other[k];
        const double g = theta_.note_factor[n];
        const double y = by_user_.rating[k] - theta_.mu - theta_.note_intercept[n];
        count += 1;
        sg += g;
        sgg += g * g;
        sy += y;
        syg += y * g;
      }
      double& h = theta_.rater_intercept[u];
      double& f = theta_.rater_factor[u];
      if (factor_free) {
        solve_pair(w * count + lambdas_.rater_intercept, w * sg, w * sgg + lambdas_.rater_factor,
                   w * sy, w * syg, h, f);
      } else {
        h = w * (sy - f * sg) / (w * count + lambdas_.rater_intercept);
      }
    });
  }

  void update_notes() {
    const bool factor_free = !cfg_.fixed_note_factor.has_value();
    parallel_for(obs_.num_notes(), cfg_.threads, [&](Index n) {
      double sw = 0, swf = 0, swff = 0, swy = 0, swyf = 0;
      for (std::size_t k = by_note_.offsets[n]; k < by_note_.offsets[n + 1]; ++k) {
        const Index u = by_note_.other[k];
        const double w = weight_[u];
        const double f = theta_.rater_factor[u];
        const double y = by_note_.rating[k] - theta_.mu - theta_.rater_intercept[u];
        sw += w;
        swf += w * f;
        swff += w * f * f;
        swy += w * y;
        swyf += w * y * f;
      }
      double& i = theta_.note_intercept[n];
      double& g = theta_.note_factor[n];
      if (factor_free) {
        solve_pair(sw + lambdas_.note_intercept, swf, swff + lambdas_.note_factor, swy, swyf, i, g);
      } else {
        i = (swy - g * swf) / (sw + lambdas_.note_intercept);
      }
    });
  }

  // Moves along directions that leave every prediction unchanged (intercept
  // shifts into mu, factor shifts into intercepts, factor scale) to the exact
  // penalty minimum. The ridge penalty is nearly flat along them when lambda
  // is small, which otherwise makes the sweeps crawl.
  void rebalance() {
    const double users = static_cast<double>(obs_.num_users());
    const double notes = static_cast<double>(obs_.num_notes());
    auto& h = theta_.rater_intercept;
    auto& i = theta_.note_intercept;
    auto& f = theta_.rater_factor;
    auto& g = theta_.note_factor;
    const auto& l = lambdas_;
    if (l.rater_intercept > 0) {
      const double h_bar = h.mean();
      h.array() -= h_bar;
      theta_.mu += h_bar;
    }
    if (l.note_intercept > 0) {
      const double i_bar = i.mean();
      i.array() -= i_bar;
      theta_.mu += i_bar;
    }
    const bool f_free = !cfg_.fixed_rater_factor.has_value();
    const bool g_free = !cfg_.fixed_note_factor.has_value();
    // f + a with i - a g.
    if (const double den = l.rater_factor * users + l.note_intercept * g.squaredNorm();
        f_free && den > 0) {
      const double a = (l.note_intercept * i.dot(g) - l.rater_factor * f.sum()) / den;
      f.array() += a;
      i -= a * g;
    }
    // g + b with h - b f.
    if (const double den = l.note_factor * notes + l.rater_intercept * f.squaredNorm();
        g_free && den > 0) {
      const double b = (l.rater_intercept * h.dot(f) - l.note_factor * g.sum()) / den;
      g.array() += b;
      h -= b * f;
    }
    const double ff = f.squaredNorm();
    const double gg = g.squaredNorm();
    if (f_free && g_free && l.rater_factor > 0 && l.note_factor > 0 && ff > 0 && gg > 0) {
      const double k = std::sqrt(std::sqrt(l.note_factor * gg / (l.rater_factor * ff)));
      f *= k;
      g /= k;
    }
  }

  LatentParamsd finalize(const LatentParamsd& raw) const {
    if (cfg_.fixed_note_factor) {
      // Move the rater-factor mean into the note intercepts; g stays as given.
      LatentParamsd p = raw;
      const double f_bar = p.rater_factor.mean();
      p.rater_factor.array() -= f_bar;
      p.note_intercept += f_bar * p.note_factor;
      center_intercepts(p);
      return p;
    }
    if (cfg_.fixed_rater_factor) {
      LatentParamsd p = raw;
      const double g_bar = p.note_factor.mean();
      p.note_factor.array() -= g_bar;
      p.rater_intercept += g_bar * p.rater_factor;
      center_intercepts(p);
      return p;
    }
    return fix_factor_signs(canonical_center(raw));
  }

  static void center_intercepts(LatentParamsd& p) {
    const double h_bar = p.rater_intercept.mean();
    const double i_bar = p.note_intercept.mean();
    p.mu += h_bar + i_bar;
    p.rater_intercept.array() -= h_bar;
    p.note_intercept.array() -= i_bar;
  }

  const ObservationSet& obs_;
  const FitConfig& cfg_;
  ResolvedLambdas lambdas_;
  Adjacency by_user_;
  Adjacency by_note_;
  Eigen::VectorXd weight_;
  LatentParamsd theta_;
};

}  // namespace

double default_lambda(const ObservationSet& obs) {
  const double entities = static_cast<double>(obs.num_users() + obs.num_notes());
  return entities > 0 ? 0.03 * static_cast<double>(obs.size()) / entities : 0.0;
}

ResolvedLambdas resolve_lambdas(const FitConfig& cfg, const ObservationSet& obs) {
  const double fallback = default_lambda(obs);
  const double user_side = cfg.lambda_u.value_or(fallback);
  const double note_side = cfg.lambda_n.value_or(fallback);
  ResolvedLambdas out{cfg.lambda_rater_intercept.value_or(user_side),
                      cfg.lambda_rater_factor.value_or(user_side),
                      cfg.lambda_note_intercept.value_or(note_side),
                      cfg.lambda_note_factor.value_or(note_side)};
  for (double v : {out.rater_intercept, out.rater_factor, out.note_intercept, out.note_factor})
    require(std::isfinite(v) && v >= 0, "fit: regularization parameters must be finite and >= 0");
  return out;
}

WeightVector::WeightVector(Eigen::VectorXd w) : w_(std::move(w)) {
  for (Index u = 0; u < w_.size(); ++u)
    require(std::isfinite(w_[u]) && w_[u] > 0,
            fmt::format("WeightVector: weight {} is not positive and finite ({})", u, w_[u]));
}

WeightVector WeightVector::uniform(Index users, double value) {
  return WeightVector(Eigen::VectorXd::Constant(users, value));
}

double objective_value(const ObservationSet& obs, const LatentParamsd& theta,
                       const ResolvedLambdas& lambdas, const std::optional<WeightVector>& weights) {
  double loss = 0;
  for (const auto& e : obs.entries()) {
    const double w = weights ? (*weights)[e.user] : 1.0;
    const double resid = e.rating - theta.mu - theta.rater_intercept[e.user] -
                         theta.note_intercept[e.note] -
                         theta.rater_factor[e.user] * theta.note_factor[e.note];
    loss += w * resid * resid;
  }
  return loss + lambdas.rater_intercept * theta.rater_intercept.squaredNorm() +
         lambdas.rater_factor * theta.rater_factor.squaredNorm() +
         lambdas.note_intercept * theta.note_intercept.squaredNorm() +
         lambdas.note_factor * theta.note_factor.squaredNorm();
}

FitResult fit(const ObservationSet& obs, const FitConfig& cfg,
              const std::optional<WeightVector>& weights) {
  if (obs.empty()) throw DataError("fit: empty observation set");
  for (const auto& e : obs.entries())
    if (!std::isfinite(e.rating))
      throw DataError(fmt::format("fit: non-finite rating of note '{}' by rater '{}'",
                                  obs.note_ids()[e.note], obs.user_ids()[e.user]));
  require(cfg.max_sweeps >= 1, "fit: max_sweeps must be >= 1");
  require(cfg.rel_tol > 0, "fit: rel_tol must be > 0");
  if (weights)
    require(weights->size() == obs.num_users(), "fit: weight vector length != number of raters");
  if (cfg.fixed_note_factor)
    require(cfg.fixed_note_factor->size() == obs.num_notes(), "fit: clamped note factor length");
  if (cfg.fixed_rater_factor)
    require(cfg.fixed_rater_factor->size() == obs.num_users(), "fit: clamped rater factor length");
  require(!(cfg.fixed_note_factor && cfg.fixed_rater_factor),
          "fit: at most one factor side may be clamped");
  return Solver(obs, cfg, weights).run();
}

LatentParamsd fix_factor_signs(const LatentParamsd& theta) {
  Index positive = 0, negative = 0;
  for (Index u = 0; u < theta.rater_factor.size(); ++u) {
    if (theta.rater_factor[u] > 0) ++positive;
    if (theta.rater_factor[u] < 0) ++negative;
  }
  const bool flip = positive > negative || (positive == negative && theta.rater_factor.sum() > 0);
  if (!flip) return theta;
  LatentParamsd out = theta;
  out.rater_factor = -theta.rater_factor;
  out.note_factor = -theta.note_factor;
  return out;
}

ObservationSet filter_observations(const ObservationSet& obs, int min_ratings_per_note,
                                   int min_notes_per_rater) {
  require(min_ratings_per_note >= 1 && min_notes_per_rater >= 1,
          "filter_observations: thresholds must be >= 1");
  std::vector<bool> keep_user(obs.num_users(), true), keep_note(obs.num_notes(), true);
  std::vector<int> user_count(obs.num_users()), note_count(obs.num_notes());
  bool changed = true;
  while (changed) {
    changed = false;
    std::fill(note_count.begin(), note_count.end(), 0);
    for (const auto& e : obs.entries())
      if (keep_user[e.user] && keep_note[e.note]) ++note_count[e.note];
    for (Index n = 0; n < obs.num_notes(); ++n)
      if (keep_note[n] && note_count[n] < min_ratings_per_note) {
        keep_note[n] = false;
        changed = true;
      }
    std::fill(user_count.begin(), user_count.end(), 0);
    for (const auto& e : obs.entries())
      if (keep_user[e.user] && keep_note[e.note]) ++user_count[e.user];
    for (Index u = 0; u < obs.num_users(); ++u)
      if (keep_user[u] && user_count[u] < min_notes_per_rater) {
        keep_user[u] = false;
        changed = true;
      }
  }
  return obs.restrict(keep_user, keep_note);
}

std::vector<NoteStatus> classify_all(const Eigen::VectorXd& note_intercepts) {
  std::vector<NoteStatus> out;
  out.reserve(note_intercepts.size());
  for (Index n = 0; n < note_intercepts.size(); ++n) out.push_back(classify_note(note_intercepts[n]));
  return out;
}

std::vector<NoteStatus> classify_all(const LatentParamsd& theta) {
  return classify_all(theta.note_intercept);
}

}  // namespace crowdmf
