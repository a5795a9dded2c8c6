#pragma once

// Tab-separated interchange files: ratings, parameter snapshots, simulation
// truth, rater weights, evaluation and theory reports. Every reader names the
// missing column or the offending line in its DataError.

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "crowdmf/conformity_sim.hpp"
#include "crowdmf/eval_harness.hpp"
#include "crowdmf/theory_check.hpp"
#include "crowdmf/two_stage.hpp"

namespace crowdmf {

// Minimal header-indexed TSV reader shared by the typed readers.
class TsvReader {
 public:
  // Skips leading '#' lines, then reads the header. DataError on an empty
  // stream or when a required column is missing.
  TsvReader(std::istream& in, std::string source, std::initializer_list<std::string_view> required);

  // False at end of input. Blank lines are skipped.
  bool next();
  std::size_t line() const noexcept { return line_; }
  bool has(std::string_view column) const;
  std::string_view field(std::string_view column) const;  // "" when the row is short
  double number(std::string_view column) const;           // DataError names line and column
  std::optional<double> optional_number(std::string_view column) const;  // "" or NA -> empty
  std::int64_t integer(std::string_view column) const;
  [[noreturn]] void fail(std::string_view what) const;

 private:
  std::istream& in_;
  std::string source_;
  std::unordered_map<std::string, std::size_t> columns_;
  std::string row_;
  std::vector<std::string_view> fields_;
  std::size_t line_ = 0;
};

std::string format_double(double v);  // shortest round-trip decimal
std::string format_optional(const std::optional<double>& v);  // NA when empty

// Header noteId, raterParticipantId, createdAtMillis, helpfulnessLevel,
// ratingValue. The level is the nearest named level; ratingValue keeps the
// exact value, so ingest_ratings_tsv reads back the same events.
void write_ratings_tsv(std::ostream& out, const std::vector<RatingEvent>& events);

// Observations as events, one per entry, all stamped `created_at_ms`.
std::vector<RatingEvent> observations_to_events(const ObservationSet& obs,
                                                std::int64_t created_at_ms = 0);

struct ParamsTable {
  LatentParamsd params;
  std::vector<std::string> user_ids;
  std::vector<std::string> note_ids;
};

// "# crowdmf params v1", then columns entity, id, intercept, factor, status:
// one "global mu" row, one "rater" row per user, one "note" row per note
// (status from the note intercept). Unused cells hold "-".
void write_params(std::ostream& out, const LatentParamsd& params,
                  const std::vector<std::string>& user_ids, const std::vector<std::string>& note_ids);
ParamsTable read_params(std::istream& in, std::string_view source = "<stream>");

struct TruthRater {
  double intercept = 0;
  double factor = 0;
  double sigma = 0;
};
struct TruthNote {
  double intercept = 0;
  double factor = 0;
  double controversy = 0;
  double rho = 1;
  double consensus = 0;
  double delta = 0;
};
struct TruthTable {
  double mu = 0;
  double mean_rater_factor = 0;
  std::vector<std::string> user_ids;
  std::vector<std::string> note_ids;
  std::unordered_map<std::string, TruthRater> raters;
  std::unordered_map<std::string, TruthNote> notes;
};

// Columns entity, id, intercept, factor, sigma, controversy, rho, consensus,
// delta. The "global" rows carry mu and the mean rater factor c.
void write_truth(std::ostream& out, const SimTruth& truth);
TruthTable read_truth(std::istream& in, std::string_view source = "<stream>");

// Columns raterParticipantId, sigma2, weight, present.
void write_weights(std::ostream& out, const std::vector<std::string>& user_ids,
                   const UserVariance& variance, const WeightVector& weights);
struct WeightsTable {
  std::vector<std::string> user_ids;
  std::vector<double> sigma2;
  std::vector<double> weight;
};
WeightsTable read_weights(std::istream& in, std::string_view source = "<stream>");

void write_eval_report(std::ostream& out, const EvalReport& report);
EvalReport read_eval_report(std::istream& in, std::string_view source = "<stream>");

void write_comparison_rows(std::ostream& out, const Comparison& comparison);
void write_comparison_summary(std::ostream& out, const Comparison& comparison);

void write_theory_report(std::ostream& out, const TheoryReport& report);
// Per-note conformity limits: noteId, predicted_limit, fitted_intercept.
void write_conformity_limits(std::ostream& out, const ConformityOutcome& outcome);

}  // namespace crowdmf
