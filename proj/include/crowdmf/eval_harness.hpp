#pragma once

// Ratings ingestion in the public TSV schema, calendar-week bucketing, and
// rolling weekly fits scored in-sample and one week ahead.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crowdmf/mf_engine.hpp"
#include "crowdmf/two_stage.hpp"

namespace crowdmf {

// HELPFUL -> 1, SOMEWHAT_HELPFUL -> 0.5, NOT_HELPFUL -> 0.
std::optional<double> parse_helpfulness_level(std::string_view level);
// Name of the level nearest to `rating`.
std::string_view helpfulness_level_name(double rating);

struct IngestResult {
  std::vector<RatingEvent> events;  // sorted by created_at_ms (stable)
  std::size_t rows = 0;
  std::size_t skipped_unknown_level = 0;
};

// Needs a header with noteId, raterParticipantId, createdAtMillis and
// helpfulnessLevel; other columns are ignored except an optional ratingValue,
// which overrides the level when non-empty. DataError names a missing column
// or the line of an unparseable timestamp or rating value.
IngestResult ingest_ratings_tsv(std::istream& in, std::string_view source = "<stream>");
IngestResult ingest_ratings_tsv(const std::filesystem::path& path);

enum class Weekday { Monday = 0, Tuesday, Wednesday, Thursday, Friday, Saturday, Sunday };
std::optional<Weekday> parse_weekday(std::string_view name);

// Start (00:00 UTC on the anchor weekday) of the week containing `ms`.
std::int64_t week_start_ms(std::int64_t ms, Weekday anchor = Weekday::Monday);

struct WeekBucket {
  std::int64_t start_ms = 0;
  std::vector<RatingEvent> events;
};

class WeeklyStream {
 public:
  WeeklyStream() = default;
  explicit WeeklyStream(std::vector<WeekBucket> weeks);

  std::size_t num_weeks() const noexcept { return weeks_.size(); }
  const std::vector<WeekBucket>& weeks() const noexcept { return weeks_; }
  const WeekBucket& week(std::size_t t) const { return weeks_.at(t); }

  // Events of weeks 0..t, duplicates resolved by keeping the latest.
  ObservationSet cumulative(std::size_t t) const;

 private:
  std::vector<WeekBucket> weeks_;
};

// Half-open calendar weeks [start, start + 7 days). Empty weeks between the
// first and last event are kept. Events must be sorted by time.
WeeklyStream weekly_split(const std::vector<RatingEvent>& events, Weekday anchor = Weekday::Monday);

enum class Method { Baseline, TwoStage };
std::string_view to_string(Method m) noexcept;
std::optional<Method> parse_method(std::string_view name);

enum class Eligibility {
  InFit,         // rater and note have parameters in the week-t fit
  RatedInWeek,   // ... and both also appear among week-t ratings
};

struct EvalConfig {
  FitConfig fit;
  VarianceConvention convention = VarianceConvention::MeanSquare;
  double variance_floor = kDefaultVarianceFloor;
  int max_reweight_rounds = 1;
  std::vector<Method> methods = {Method::Baseline, Method::TwoStage};
  int warm_weeks = 4;
  int min_ratings_per_note = 5;
  int min_notes_per_rater = 10;
  Eligibility eligibility = Eligibility::InFit;
};

struct MethodWeek {
  Method method = Method::Baseline;
  int week = 0;
  std::int64_t week_start_ms = 0;
  std::size_t fit_entries = 0;
  std::size_t in_sample_pairs = 0;
  std::size_t oos_pairs = 0;
  // Empty when nothing could be scored.
  std::optional<double> in_sample_mse;
  std::optional<double> oos_mse;
  std::optional<double> oos_mar;
  std::optional<double> oos_medar;
};

struct EvalReport {
  std::vector<MethodWeek> rows;  // week-major, methods in config order
  std::vector<std::string> warnings;

  std::vector<const MethodWeek*> method_rows(Method m) const;
};

// For every week t >= warm_weeks: filter the cumulative data, fit each
// method warm-started from its own previous fit, score week-t ratings
// in-sample and week-(t+1) ratings whose rater and note are eligible.
// ContractViolation unless the stream has more than warm_weeks weeks.
EvalReport rolling_evaluate(const WeeklyStream& stream, const EvalConfig& cfg);

// Mean absolute value and median absolute value of residuals.
double mean_abs(std::vector<double> residuals);
double median_abs(std::vector<double> residuals);

struct MetricSummary {
  std::string metric;
  std::size_t weeks = 0;  // weeks where both methods have a value
  double baseline_mean = 0;
  double twostage_mean = 0;
  // Mean over weeks of (baseline - twostage) / baseline; empty when no week
  // has a nonzero baseline value.
  std::optional<double> mean_improvement;
  // Normal 95% interval for mean_improvement; needs two weeks.
  std::optional<double> improvement_ci_low;
  std::optional<double> improvement_ci_high;
  std::size_t twostage_better_weeks = 0;
};

struct ComparisonRow {
  int week = 0;
  std::string metric;
  std::optional<double> baseline;
  std::optional<double> twostage;
  std::optional<double> improvement;  // empty: missing value or baseline 0
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  std::vector<MetricSummary> summary;  // oos_mse, oos_mar, oos_medar, in_sample_mse
};

// ContractViolation unless the report covers both methods.
Comparison compare_methods(const EvalReport& report);

}  // namespace crowdmf
