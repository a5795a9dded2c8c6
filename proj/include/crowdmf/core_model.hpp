#pragma once

// Rating data, latent parameters of the rank-1 rating model, and the pure
// operations on them: prediction, canonical centering, de-centering of note
// intercepts, report discretization and note status classification.
//
// A rating of rater u on note n is modeled as
//
//     r_un = mu + h_u + i_n + f_u * g_n
//
// with rater intercept h, note intercept i, and scalar rater/note factors f, g.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "crowdmf/error.hpp"

namespace crowdmf {

using Index = Eigen::Index;

struct RatingEvent {
  std::string rater_id;
  std::string note_id;
  std::int64_t created_at_ms = 0;
  double rating = 0.0;  // 0, 0.5 or 1 for platform data
};

inline constexpr std::int64_t kDayMs = 24LL * 3600 * 1000;
inline constexpr std::int64_t kWeekMs = 7 * kDayMs;

// True iff `value` is one of the three platform rating levels.
inline bool is_rating_level(double value) noexcept {
  return value == 0.0 || value == 0.5 || value == 1.0;
}

struct Observation {
  Index user = 0;
  Index note = 0;
  double rating = 0.0;
};

enum class DuplicatePolicy { KeepLatest, KeepFirst, Reject };

// The observed set: dense user/note indexing plus one entry per observed
// (user, note) pair. Every indexed user and note has at least one entry.
class ObservationSet {
 public:
  ObservationSet() = default;

  // Validates the invariants; throws ContractViolation on a duplicate pair,
  // an out-of-range index, or an indexed user/note without entries.
  ObservationSet(std::vector<std::string> user_ids, std::vector<std::string> note_ids,
                 std::vector<Observation> entries);

  // Indexes raters and notes in order of first appearance. Duplicate
  // (rater, note) pairs are resolved per `policy`; KeepLatest keeps the event
  // with the largest created_at_ms (ties: the later event in the input).
  static ObservationSet from_events(std::span<const RatingEvent> events,
                                    DuplicatePolicy policy = DuplicatePolicy::KeepLatest);

  Index num_users() const noexcept { return static_cast<Index>(user_ids_.size()); }
  Index num_notes() const noexcept { return static_cast<Index>(note_ids_.size()); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  const std::vector<Observation>& entries() const noexcept { return entries_; }
  const std::vector<std::string>& user_ids() const noexcept { return user_ids_; }
  const std::vector<std::string>& note_ids() const noexcept { return note_ids_; }

  // -1 when absent.
  Index find_user(std::string_view id) const;
  Index find_note(std::string_view id) const;

  // Keeps only entries whose user and note are flagged, dropping users and
  // notes left without entries. Relative order of ids and entries is kept.
  ObservationSet restrict(const std::vector<bool>& keep_user,
                          const std::vector<bool>& keep_note) const;

 private:
  std::vector<std::string> user_ids_;
  std::vector<std::string> note_ids_;
  std::vector<Observation> entries_;
  std::unordered_map<std::string, Index> user_lookup_;
  std::unordered_map<std::string, Index> note_lookup_;
};

template <typename Scalar>
struct LatentParams {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Scalar mu = Scalar(0);
  Vector rater_intercept;  // h, length U
  Vector note_intercept;   // i, length N
  Vector rater_factor;     // f, length U
  Vector note_factor;      // g, length N
  // Set by canonical_center when the centered factors vanish.
  bool rank_deficient = false;

  static LatentParams zeros(Index users, Index notes) {
    LatentParams p;
    p.rater_intercept = Vector::Zero(users);
    p.note_intercept = Vector::Zero(notes);
    p.rater_factor = Vector::Zero(users);
    p.note_factor = Vector::Zero(notes);
    return p;
  }

  Index num_users() const noexcept { return rater_intercept.size(); }
  Index num_notes() const noexcept { return note_intercept.size(); }

  bool consistent() const noexcept {
    return rater_factor.size() == rater_intercept.size() &&
           note_factor.size() == note_intercept.size();
  }

  bool all_finite() const {
    return std::isfinite(static_cast<double>(mu)) && rater_intercept.allFinite() &&
           note_intercept.allFinite() && rater_factor.allFinite() && note_factor.allFinite();
  }
};

using LatentParamsd = LatentParams<double>;

enum class NoteStatus { Helpful, NotHelpful, NeedsMoreRatings };

std::string_view to_string(NoteStatus status) noexcept;

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar predict(const LatentParams<Scalar>& theta, Index u, Index n) {
  require(u >= 0 && u < theta.num_users(), "predict: user index out of range");
  require(n >= 0 && n < theta.num_notes(), "predict: note index out of range");
  return theta.mu + theta.rater_intercept[u] + theta.note_intercept[n] +
         theta.rater_factor[u] * theta.note_factor[n];
}

// Dense U x N matrix of model predictions.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> reconstruct(
    const LatentParams<Scalar>& theta) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix m = theta.rater_factor * theta.note_factor.transpose();
  m.colwise() += theta.rater_intercept;
  m.rowwise() += theta.note_intercept.transpose();
  m.array() += theta.mu;
  return m;
}

// Canonical centered representation of the same prediction matrix: mean-zero
// h, i, f, g; ||f||^2 / U = 1; sign chosen so <f_out, f_in> >= 0. If the
// centered rater factor vanishes, both factors are zeroed and the result is
// flagged rank_deficient.
template <typename Scalar>
LatentParams<Scalar> canonical_center(const LatentParams<Scalar>& theta) {
  require(theta.consistent(), "canonical_center: inconsistent vector lengths");
  require(theta.num_users() > 0 && theta.num_notes() > 0,
          "canonical_center: empty parameter set");
  const Scalar h_bar = theta.rater_intercept.mean();
  const Scalar i_bar = theta.note_intercept.mean();
  const Scalar f_bar = theta.rater_factor.mean();
  const Scalar g_bar = theta.note_factor.mean();

  LatentParams<Scalar> out;
  out.rater_factor = theta.rater_factor.array() - f_bar;
  out.note_factor = theta.note_factor.array() - g_bar;
  out.mu = theta.mu + h_bar + i_bar + f_bar * g_bar;
  out.rater_intercept = (theta.rater_intercept.array() - h_bar) + g_bar * out.rater_factor.array();
  out.note_intercept = (theta.note_intercept.array() - i_bar) + f_bar * out.note_factor.array();

  // Centering a constant vector leaves rounding residue of order eps * |f|.
  const Scalar sq_norm = out.rater_factor.squaredNorm();
  const Scalar residue = Scalar(64) * std::numeric_limits<Scalar>::epsilon() *
                         std::max(Scalar(1), theta.rater_factor.cwiseAbs().maxCoeff());
  if (sq_norm <= residue * residue * static_cast<Scalar>(theta.num_users())) {
    out.rater_factor.setZero();
    out.note_factor.setZero();
    out.rank_deficient = true;
    return out;
  }
  const Scalar scale = std::sqrt(sq_norm / static_cast<Scalar>(theta.num_users()));
  out.rater_factor /= scale;
  out.note_factor *= scale;
  if (out.rater_factor.dot(theta.rater_factor) < Scalar(0)) {
    out.rater_factor = -out.rater_factor;
    out.note_factor = -out.note_factor;
  }
  return out;
}

// Checks the canonical constraints at the given tolerances.
template <typename Scalar>
bool is_canonical(const LatentParams<Scalar>& theta, double mean_tol = 1e-10,
                  double norm_tol = 1e-8) {
  using std::abs;
  const auto users = static_cast<Scalar>(theta.num_users());
  if (abs(theta.rater_intercept.mean()) > mean_tol) return false;
  if (abs(theta.note_intercept.mean()) > mean_tol) return false;
  if (abs(theta.rater_factor.mean()) > mean_tol) return false;
  if (abs(theta.note_factor.mean()) > mean_tol) return false;
  const Scalar sq = theta.rater_factor.squaredNorm();
  if (sq == Scalar(0)) return theta.note_factor.isZero(0);
  return abs(sq / users - Scalar(1)) <= norm_tol;
}

// i0_n = i_n + c * g_n, where c is the known mean rater factor expressed in
// the coordinates of the fitted factors.
template <typename Derived1, typename Derived2>
auto decenter_note_intercept(const Eigen::MatrixBase<Derived1>& note_intercept,
                             const Eigen::MatrixBase<Derived2>& note_factor,
                             typename Derived1::Scalar mean_rater_factor) {
  require(note_intercept.size() == note_factor.size(),
          "decenter_note_intercept: length mismatch");
  using Vector = Eigen::Matrix<typename Derived1::Scalar, Eigen::Dynamic, 1>;
  return Vector(note_intercept + mean_rater_factor * note_factor);
}

// Negative -> 0, zero -> 0.5, positive -> 1.
inline double discretize_report(double latent) {
  require(std::isfinite(latent), "discretize_report: non-finite report");
  if (latent < 0.0) return 0.0;
  if (latent > 0.0) return 1.0;
  return 0.5;
}

inline constexpr double kHelpfulThreshold = 0.4;
inline constexpr double kNotHelpfulThreshold = -0.05;

inline NoteStatus classify_note(double note_intercept) {
  require(std::isfinite(note_intercept), "classify_note: non-finite intercept");
  if (note_intercept >= kHelpfulThreshold) return NoteStatus::Helpful;
  if (note_intercept < kNotHelpfulThreshold) return NoteStatus::NotHelpful;
  return NoteStatus::NeedsMoreRatings;
}

}  // namespace crowdmf
