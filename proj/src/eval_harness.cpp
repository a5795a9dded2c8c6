#include "crowdmf/eval_harness.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <unordered_set>

#include <fmt/format.h>

namespace crowdmf {

std::optional<double> parse_helpfulness_level(std::string_view level) {
  if (level == "HELPFUL") return 1.0;
  if (level == "SOMEWHAT_HELPFUL") return 0.5;
  if (level == "NOT_HELPFUL") return 0.0;
  return std::nullopt;
}

std::string_view helpfulness_level_name(double rating) {
  if (rating < 0.25) return "NOT_HELPFUL";
  if (rating < 0.75) return "SOMEWHAT_HELPFUL";
  return "HELPFUL";
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end;
}

}  // namespace

IngestResult ingest_ratings_tsv(std::istream& in, std::string_view source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(fmt::format("{}: missing header row", source));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  auto column = [&](std::string_view name, bool required) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it != header.end()) return static_cast<std::size_t>(it - header.begin());
    if (required) throw DataError(fmt::format("{}: missing required column '{}'", source, name));
    return std::nullopt;
  };
  const std::size_t note_col = *column("noteId", true);
  const std::size_t rater_col = *column("raterParticipantId", true);
  const std::size_t time_col = *column("createdAtMillis", true);
  const std::size_t level_col = *column("helpfulnessLevel", true);
  const auto value_col = column("ratingValue", false);
  std::size_t needed = std::max({note_col, rater_col, time_col, level_col});
  if (value_col) needed = std::max(needed, *value_col);

  IngestResult out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++out.rows;
    const auto fields = split_tabs(line);
    if (fields.size() <= needed)
      throw DataError(fmt::format("{}:{}: expected at least {} fields, found {}", source, line_no,
                                  needed + 1, fields.size()));
    RatingEvent ev;
    if (!parse_number(fields[time_col], ev.created_at_ms) || ev.created_at_ms < 0)
      throw DataError(fmt::format("{}:{}: invalid createdAtMillis '{}'", source, line_no,
                                  fields[time_col]));
    const auto level = parse_helpfulness_level(fields[level_col]);
    if (!level) {
      ++out.skipped_unknown_level;
      continue;
    }
    ev.rating = *level;
    if (value_col && !fields[*value_col].empty()) {
      if (!parse_number(fields[*value_col], ev.rating) || !std::isfinite(ev.rating))
        throw DataError(fmt::format("{}:{}: invalid ratingValue '{}'", source, line_no,
                                    fields[*value_col]));
    }
    ev.note_id = std::string(fields[note_col]);
    ev.rater_id = std::string(fields[rater_col]);
    out.events.push_back(std::move(ev));
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const RatingEvent& a, const RatingEvent& b) {
                     return a.created_at_ms < b.created_at_ms;
                   });
  return out;
}

IngestResult ingest_ratings_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open ratings file '{}'", path.string()));
  return ingest_ratings_tsv(in, path.string());
}

std::optional<Weekday> parse_weekday(std::string_view name) {
  static constexpr std::string_view names[] = {"monday", "tuesday", "wednesday", "thursday",
                                               "friday", "saturday", "sunday"};
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  for (int k = 0; k < 7; ++k)
    if (lower == names[k]) return static_cast<Weekday>(k);
  return std::nullopt;
}

std::int64_t week_start_ms(std::int64_t ms, Weekday anchor) {
  std::int64_t day = ms / kDayMs;
  if (ms % kDayMs < 0) --day;
  // 1970-01-01 was a Thursday.
  const std::int64_t weekday = ((day % 7) + 7 + 3) % 7;
  const std::int64_t back = (weekday - static_cast<std::int64_t>(anchor) + 7) % 7;
  return (day - back) * kDayMs;
}

WeeklyStream::WeeklyStream(std::vector<WeekBucket> weeks) : weeks_(std::move(weeks)) {
  for (std::size_t t = 1; t < weeks_.size(); ++t)
    require(weeks_[t].start_ms > weeks_[t - 1].start_ms,
            "WeeklyStream: week starts must be strictly increasing");
}

ObservationSet WeeklyStream::cumulative(std::size_t t) const {
  require(t < weeks_.size(), "WeeklyStream::cumulative: week out of range");
  std::vector<RatingEvent> events;
  for (std::size_t k = 0; k <= t; ++k)
    events.insert(events.end(), weeks_[k].events.begin(), weeks_[k].events.end());
  return ObservationSet::from_events(events, DuplicatePolicy::KeepLatest);
}

WeeklyStream weekly_split(const std::vector<RatingEvent>& events, Weekday anchor) {
  if (events.empty()) return {};
  require(std::is_sorted(events.begin(), events.end(),
                         [](const RatingEvent& a, const RatingEvent& b) {
                           return a.created_at_ms < b.created_at_ms;
                         }),
          "weekly_split: events must be sorted by created_at_ms");
  const std::int64_t first = week_start_ms(events.front().created_at_ms, anchor);
  const std::int64_t last = week_start_ms(events.back().created_at_ms, anchor);
  std::vector<WeekBucket> weeks(static_cast<std::size_t>((last - first) / kWeekMs + 1));
  for (std::size_t t = 0; t < weeks.size(); ++t)
    weeks[t].start_ms = first + static_cast<std::int64_t>(t) * kWeekMs;
  for (const auto& ev : events) {
    const auto t = static_cast<std::size_t>((week_start_ms(ev.created_at_ms, anchor) - first) / kWeekMs);
    weeks[t].events.push_back(ev);
  }
  return WeeklyStream(std::move(weeks));
}

std::string_view to_string(Method m) noexcept {
  return m == Method::Baseline ? "baseline" : "twostage";
}

std::optional<Method> parse_method(std::string_view name) {
  if (name == "baseline") return Method::Baseline;
  if (name == "twostage") return Method::TwoStage;
  return std::nullopt;
}

std::vector<const MethodWeek*> EvalReport::method_rows(Method m) const {
  std::vector<const MethodWeek*> out;
  for (const auto& r : rows)
    if (r.method == m) out.push_back(&r);
  return out;
}

double mean_abs(std::vector<double> residuals) {
  require(!residuals.empty(), "mean_abs: no residuals");
  double s = 0;
  for (double r : residuals) s += std::abs(r);
  return s / static_cast<double>(residuals.size());
}

double median_abs(std::vector<double> residuals) {
  require(!residuals.empty(), "median_abs: no residuals");
  for (double& r : residuals) r = std::abs(r);
  const std::size_t mid = residuals.size() / 2;
  std::nth_element(residuals.begin(), residuals.begin() + static_cast<std::ptrdiff_t>(mid),
                   residuals.end());
  const double upper = residuals[mid];
  if (residuals.size() % 2 == 1) return upper;
  const double lower =
      *std::max_element(residuals.begin(), residuals.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

namespace {

struct Track {
  ObservationSet data;
  LatentParamsd params;
};

// Previous parameters carried over by id; entities new this week start at 0.
LatentParamsd carry_over(const Track& prev, const ObservationSet& obs) {
  LatentParamsd p = LatentParamsd::zeros(obs.num_users(), obs.num_notes());
  p.mu = prev.params.mu;
  for (Index u = 0; u < obs.num_users(); ++u) {
    const Index k = prev.data.find_user(obs.user_ids()[u]);
    if (k < 0) continue;
    p.rater_intercept[u] = prev.params.rater_intercept[k];
    p.rater_factor[u] = prev.params.rater_factor[k];
  }
  for (Index n = 0; n < obs.num_notes(); ++n) {
    const Index k = prev.data.find_note(obs.note_ids()[n]);
    if (k < 0) continue;
    p.note_intercept[n] = prev.params.note_intercept[k];
    p.note_factor[n] = prev.params.note_factor[k];
  }
  return p;
}

double mean_square(const std::vector<double>& r) {
  double s = 0;
  for (double v : r) s += v * v;
  return s / static_cast<double>(r.size());
}

}  // namespace

EvalReport rolling_evaluate(const WeeklyStream& stream, const EvalConfig& cfg) {
  require(cfg.warm_weeks >= 0, "rolling_evaluate: warm_weeks must be >= 0");
  require(stream.num_weeks() > static_cast<std::size_t>(cfg.warm_weeks),
          fmt::format("rolling_evaluate: warm_weeks ({}) must be less than the number of weeks ({})",
                      cfg.warm_weeks, stream.num_weeks()));
  require(!cfg.methods.empty(), "rolling_evaluate: no methods selected");

  EvalReport report;
  std::map<Method, Track> tracks;
  std::vector<RatingEvent> cumulative;
  const std::size_t weeks = stream.num_weeks();
  for (std::size_t t = 0; t < weeks; ++t) {
    const auto& bucket = stream.week(t);
    cumulative.insert(cumulative.end(), bucket.events.begin(), bucket.events.end());
    if (t < static_cast<std::size_t>(cfg.warm_weeks)) continue;

    const ObservationSet data =
        filter_observations(ObservationSet::from_events(cumulative, DuplicatePolicy::KeepLatest),
                            cfg.min_ratings_per_note, cfg.min_notes_per_rater);
    if (data.empty()) {
      report.warnings.push_back(fmt::format(
          "week {}: no data left after filtering (min {} ratings per note, min {} notes per rater)",
          t, cfg.min_ratings_per_note, cfg.min_notes_per_rater));
      for (Method m : cfg.methods)
        report.rows.push_back({m, static_cast<int>(t), bucket.start_ms, 0, 0, 0, {}, {}, {}, {}});
      continue;
    }

    std::unordered_set<std::string> week_raters, week_notes;
    for (const auto& ev : bucket.events) {
      week_raters.insert(ev.rater_id);
      week_notes.insert(ev.note_id);
    }

    for (Method m : cfg.methods) {
      FitConfig fc = cfg.fit;
      if (const auto it = tracks.find(m); it != tracks.end())
        fc.init = WarmStart{carry_over(it->second, data)};
      LatentParamsd params;
      if (m == Method::Baseline) {
        params = fit(data, fc).params;
      } else {
        TwoStageConfig ts;
        ts.fit = fc;
        ts.convention = cfg.convention;
        ts.variance_floor = cfg.variance_floor;
        ts.max_reweight_rounds = cfg.max_reweight_rounds;
        params = two_stage_fit(data, ts).weighted.params;
      }

      MethodWeek row;
      row.method = m;
      row.week = static_cast<int>(t);
      row.week_start_ms = bucket.start_ms;
      row.fit_entries = data.size();

      std::vector<double> in_sample;
      for (const auto& ev : bucket.events) {
        const Index u = data.find_user(ev.rater_id);
        const Index n = data.find_note(ev.note_id);
        if (u >= 0 && n >= 0) in_sample.push_back(ev.rating - predict(params, u, n));
      }
      row.in_sample_pairs = in_sample.size();
      if (!in_sample.empty()) row.in_sample_mse = mean_square(in_sample);

      if (t + 1 < weeks) {
        std::vector<double> oos;
        for (const auto& ev : stream.week(t + 1).events) {
          const Index u = data.find_user(ev.rater_id);
          const Index n = data.find_note(ev.note_id);
          if (u < 0 || n < 0) continue;
          if (cfg.eligibility == Eligibility::RatedInWeek &&
              (!week_raters.count(ev.rater_id) || !week_notes.count(ev.note_id)))
            continue;
          oos.push_back(ev.rating - predict(params, u, n));
        }
        row.oos_pairs = oos.size();
        if (!oos.empty()) {
          row.oos_mse = mean_square(oos);
          row.oos_mar = mean_abs(oos);
          row.oos_medar = median_abs(std::move(oos));
        }
      }
      report.rows.push_back(row);
      tracks[m] = Track{data, std::move(params)};
    }
  }
  return report;
}

Comparison compare_methods(const EvalReport& report) {
  const auto base = report.method_rows(Method::Baseline);
  const auto two = report.method_rows(Method::TwoStage);
  require(!base.empty() && !two.empty(), "compare_methods: report must cover both methods");
  std::map<int, std::pair<const MethodWeek*, const MethodWeek*>> by_week;
  for (const auto* r : base) by_week[r->week].first = r;
  for (const auto* r : two) by_week[r->week].second = r;

  using Getter = std::optional<double> MethodWeek::*;
  const std::pair<const char*, Getter> metrics[] = {{"oos_mse", &MethodWeek::oos_mse},
                                                    {"oos_mar", &MethodWeek::oos_mar},
                                                    {"oos_medar", &MethodWeek::oos_medar},
                                                    {"in_sample_mse", &MethodWeek::in_sample_mse}};
  Comparison out;
  for (const auto& [name, member] : metrics) {
    MetricSummary s;
    s.metric = name;
    std::vector<double> improvements;
    for (const auto& [week, pair] : by_week) {
      ComparisonRow row;
      row.week = week;
      row.metric = name;
      if (pair.first) row.baseline = pair.first->*member;
      if (pair.second) row.twostage = pair.second->*member;
      if (row.baseline && row.twostage) {
        ++s.weeks;
        s.baseline_mean += *row.baseline;
        s.twostage_mean += *row.twostage;
        if (*row.twostage < *row.baseline) ++s.twostage_better_weeks;
        if (*row.baseline != 0) {
          row.improvement = (*row.baseline - *row.twostage) / *row.baseline;
          improvements.push_back(*row.improvement);
        }
      }
      out.rows.push_back(row);
    }
    if (s.weeks > 0) {
      s.baseline_mean /= static_cast<double>(s.weeks);
      s.twostage_mean /= static_cast<double>(s.weeks);
    }
    if (!improvements.empty()) {
      const auto k = static_cast<double>(improvements.size());
      double mean = 0;
      for (double v : improvements) mean += v;
      mean /= k;
      s.mean_improvement = mean;
      if (improvements.size() >= 2) {
        double ss = 0;
        for (double v : improvements) ss += (v - mean) * (v - mean);
        const double half = 1.959963984540054 * std::sqrt(ss / (k - 1) / k);
        s.improvement_ci_low = mean - half;
        s.improvement_ci_high = mean + half;
      }
    }
    out.summary.push_back(s);
  }
  return out;
}

}  // namespace crowdmf
