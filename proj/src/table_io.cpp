#include "crowdmf/table_io.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace crowdmf {

namespace {

constexpr std::string_view kParamsMagic = "# crowdmf params v1";

template <typename T>
bool parse_exact(std::string_view text, T& value) {
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end;
}

std::string_view status_name(double intercept) {
  if (!std::isfinite(intercept)) return "-";
  return to_string(classify_note(intercept));
}

}  // namespace

TsvReader::TsvReader(std::istream& in, std::string source,
                     std::initializer_list<std::string_view> required)
    : in_(in), source_(std::move(source)) {
  std::string header;
  bool found = false;
  while (std::getline(in_, header)) {
    ++line_;
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header.empty() || header.front() == '#') continue;
    found = true;
    break;
  }
  if (!found) throw DataError(fmt::format("{}: missing header row", source_));
  std::size_t start = 0, k = 0;
  for (;;) {
    const auto tab = header.find('\t', start);
    columns_.emplace(header.substr(start, tab - start), k++);
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  for (auto name : required)
    if (!has(name))
      throw DataError(fmt::format("{}: missing required column '{}'", source_, name));
}

bool TsvReader::next() {
  while (std::getline(in_, row_)) {
    ++line_;
    if (!row_.empty() && row_.back() == '\r') row_.pop_back();
    if (row_.empty()) continue;
    fields_.clear();
    std::string_view view(row_);
    std::size_t start = 0;
    for (;;) {
      const auto tab = view.find('\t', start);
      fields_.push_back(view.substr(start, tab == std::string_view::npos ? tab : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    return true;
  }
  return false;
}

bool TsvReader::has(std::string_view column) const {
  return columns_.count(std::string(column)) > 0;
}

std::string_view TsvReader::field(std::string_view column) const {
  const auto it = columns_.find(std::string(column));
  if (it == columns_.end()) fail(fmt::format("no column '{}'", column));
  return it->second < fields_.size() ? fields_[it->second] : std::string_view{};
}

double TsvReader::number(std::string_view column) const {
  const auto text = field(column);
  double v = 0;
  if (!parse_exact(text, v)) fail(fmt::format("invalid {} '{}'", column, text));
  return v;
}

std::optional<double> TsvReader::optional_number(std::string_view column) const {
  const auto text = field(column);
  if (text.empty() || text == "NA") return std::nullopt;
  return number(column);
}

std::int64_t TsvReader::integer(std::string_view column) const {
  const auto text = field(column);
  std::int64_t v = 0;
  if (!parse_exact(text, v)) fail(fmt::format("invalid {} '{}'", column, text));
  return v;
}

void TsvReader::fail(std::string_view what) const {
  throw DataError(fmt::format("{}:{}: {}", source_, line_, what));
}

std::string format_double(double v) { return fmt::format("{}", v); }

std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string("NA");
}

void write_ratings_tsv(std::ostream& out, const std::vector<RatingEvent>& events) {
  out << "noteId\traterParticipantId\tcreatedAtMillis\thelpfulnessLevel\tratingValue\n";
  for (const auto& ev : events)
    fmt::print(out, "{}\t{}\t{}\t{}\t{}\n", ev.note_id, ev.rater_id, ev.created_at_ms,
               helpfulness_level_name(ev.rating), format_double(ev.rating));
}

std::vector<RatingEvent> observations_to_events(const ObservationSet& obs,
                                                std::int64_t created_at_ms) {
  std::vector<RatingEvent> out;
  out.reserve(obs.size());
  for (const auto& e : obs.entries())
    out.push_back({obs.user_ids()[static_cast<std::size_t>(e.user)],
                   obs.note_ids()[static_cast<std::size_t>(e.note)], created_at_ms, e.rating});
  return out;
}

void write_params(std::ostream& out, const LatentParamsd& params,
                  const std::vector<std::string>& user_ids,
                  const std::vector<std::string>& note_ids) {
  require(params.consistent() && static_cast<std::size_t>(params.num_users()) == user_ids.size() &&
              static_cast<std::size_t>(params.num_notes()) == note_ids.size(),
          "write_params: id lists do not match the parameter lengths");
  out << kParamsMagic << '\n' << "entity\tid\tintercept\tfactor\tstatus\n";
  fmt::print(out, "global\tmu\t{}\t-\t-\n", format_double(params.mu));
  for (std::size_t u = 0; u < user_ids.size(); ++u) {
    const auto k = static_cast<Index>(u);
    fmt::print(out, "rater\t{}\t{}\t{}\t-\n", user_ids[u], format_double(params.rater_intercept[k]),
               format_double(params.rater_factor[k]));
  }
  for (std::size_t n = 0; n < note_ids.size(); ++n) {
    const auto k = static_cast<Index>(n);
    fmt::print(out, "note\t{}\t{}\t{}\t{}\n", note_ids[n], format_double(params.note_intercept[k]),
               format_double(params.note_factor[k]), status_name(params.note_intercept[k]));
  }
}

ParamsTable read_params(std::istream& in, std::string_view source) {
  TsvReader r(in, std::string(source), {"entity", "id", "intercept", "factor"});
  std::optional<double> mu;
  std::vector<double> h, f, i, g;
  ParamsTable out;
  while (r.next()) {
    const auto entity = r.field("entity");
    if (entity == "global") {
      if (r.field("id") != "mu") r.fail(fmt::format("unknown global '{}'", r.field("id")));
      if (mu) r.fail("duplicate global mu row");
      mu = r.number("intercept");
    } else if (entity == "rater") {
      out.user_ids.emplace_back(r.field("id"));
      h.push_back(r.number("intercept"));
      f.push_back(r.number("factor"));
    } else if (entity == "note") {
      out.note_ids.emplace_back(r.field("id"));
      i.push_back(r.number("intercept"));
      g.push_back(r.number("factor"));
    } else {
      r.fail(fmt::format("unknown entity '{}'", entity));
    }
  }
  if (!mu) throw DataError(fmt::format("{}: missing global mu row", source));
  auto to_vec = [](const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size())).eval();
  };
  out.params.mu = *mu;
  out.params.rater_intercept = to_vec(h);
  out.params.rater_factor = to_vec(f);
  out.params.note_intercept = to_vec(i);
  out.params.note_factor = to_vec(g);
  return out;
}

void write_truth(std::ostream& out, const SimTruth& truth) {
  out << "entity\tid\tintercept\tfactor\tsigma\tcontroversy\trho\tconsensus\tdelta\n";
  fmt::print(out, "global\tmu\t{}\t-\t-\t-\t-\t-\t-\n", format_double(truth.theta0.mu));
  fmt::print(out, "global\tmean_rater_factor\t-\t{}\t-\t-\t-\t-\t-\n",
             format_double(truth.mean_rater_factor));
  for (Index u = 0; u < truth.num_users(); ++u)
    fmt::print(out, "rater\t{}\t{}\t{}\t{}\t-\t-\t-\t-\n", sim_user_id(u),
               format_double(truth.theta0.rater_intercept[u]),
               format_double(truth.theta0.rater_factor[u]), format_double(truth.noise_sd[u]));
  for (Index n = 0; n < truth.num_notes(); ++n)
    fmt::print(out, "note\t{}\t{}\t{}\t-\t{}\t{}\t{}\t{}\n", sim_note_id(n),
               format_double(truth.theta0.note_intercept[n]),
               format_double(truth.theta0.note_factor[n]), format_double(truth.controversy[n]),
               format_double(truth.conformity[n]), format_double(truth.consensus[n]),
               format_double(truth.consensus_gap[n]));
}

TruthTable read_truth(std::istream& in, std::string_view source) {
  TsvReader r(in, std::string(source),
              {"entity", "id", "intercept", "factor", "sigma", "controversy", "rho", "consensus",
               "delta"});
  TruthTable out;
  bool have_mu = false;
  while (r.next()) {
    const auto entity = r.field("entity");
    const std::string id(r.field("id"));
    if (entity == "global") {
      if (id == "mu") {
        out.mu = r.number("intercept");
        have_mu = true;
      } else if (id == "mean_rater_factor") {
        out.mean_rater_factor = r.number("factor");
      } else {
        r.fail(fmt::format("unknown global '{}'", id));
      }
    } else if (entity == "rater") {
      if (!out.raters.emplace(id, TruthRater{r.number("intercept"), r.number("factor"),
                                             r.number("sigma")}).second)
        r.fail(fmt::format("duplicate rater '{}'", id));
      out.user_ids.push_back(id);
    } else if (entity == "note") {
      if (!out.notes.emplace(id, TruthNote{r.number("intercept"), r.number("factor"),
                                           r.number("controversy"), r.number("rho"),
                                           r.number("consensus"), r.number("delta")}).second)
        r.fail(fmt::format("duplicate note '{}'", id));
      out.note_ids.push_back(id);
    } else {
      r.fail(fmt::format("unknown entity '{}'", entity));
    }
  }
  if (!have_mu) throw DataError(fmt::format("{}: missing global mu row", source));
  return out;
}

void write_weights(std::ostream& out, const std::vector<std::string>& user_ids,
                   const UserVariance& variance, const WeightVector& weights) {
  require(static_cast<Index>(user_ids.size()) == variance.size() &&
              variance.size() == weights.size(),
          "write_weights: length mismatch");
  out << "raterParticipantId\tsigma2\tweight\tpresent\n";
  for (std::size_t u = 0; u < user_ids.size(); ++u) {
    const auto k = static_cast<Index>(u);
    fmt::print(out, "{}\t{}\t{}\t{}\n", user_ids[u], format_double(variance.sigma2[k]),
               format_double(weights[k]), variance.present[u] ? 1 : 0);
  }
}

WeightsTable read_weights(std::istream& in, std::string_view source) {
  TsvReader r(in, std::string(source), {"raterParticipantId", "sigma2", "weight"});
  WeightsTable out;
  while (r.next()) {
    out.user_ids.emplace_back(r.field("raterParticipantId"));
    out.sigma2.push_back(r.number("sigma2"));
    out.weight.push_back(r.number("weight"));
  }
  return out;
}

void write_eval_report(std::ostream& out, const EvalReport& report) {
  out << "method\tweek\tweek_start_ms\tfit_entries\tin_sample_pairs\toos_pairs\tin_sample_mse"
         "\toos_mse\toos_mar\toos_medar\n";
  for (const auto& r : report.rows)
    fmt::print(out, "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", to_string(r.method), r.week,
               r.week_start_ms, r.fit_entries, r.in_sample_pairs, r.oos_pairs,
               format_optional(r.in_sample_mse), format_optional(r.oos_mse),
               format_optional(r.oos_mar), format_optional(r.oos_medar));
}

EvalReport read_eval_report(std::istream& in, std::string_view source) {
  TsvReader r(in, std::string(source),
              {"method", "week", "week_start_ms", "fit_entries", "in_sample_pairs", "oos_pairs",
               "in_sample_mse", "oos_mse", "oos_mar", "oos_medar"});
  EvalReport out;
  while (r.next()) {
    MethodWeek row;
    const auto method = parse_method(r.field("method"));
    if (!method) r.fail(fmt::format("unknown method '{}'", r.field("method")));
    row.method = *method;
    row.week = static_cast<int>(r.integer("week"));
    row.week_start_ms = r.integer("week_start_ms");
    auto count = [&](std::string_view c) {
      const auto v = r.integer(c);
      if (v < 0) r.fail(fmt::format("negative {}", c));
      return static_cast<std::size_t>(v);
    };
    row.fit_entries = count("fit_entries");
    row.in_sample_pairs = count("in_sample_pairs");
    row.oos_pairs = count("oos_pairs");
    row.in_sample_mse = r.optional_number("in_sample_mse");
    row.oos_mse = r.optional_number("oos_mse");
    row.oos_mar = r.optional_number("oos_mar");
    row.oos_medar = r.optional_number("oos_medar");
    out.rows.push_back(row);
  }
  return out;
}

void write_comparison_rows(std::ostream& out, const Comparison& comparison) {
  out << "week\tmetric\tbaseline\ttwostage\timprovement\n";
  for (const auto& r : comparison.rows)
    fmt::print(out, "{}\t{}\t{}\t{}\t{}\n", r.week, r.metric, format_optional(r.baseline),
               format_optional(r.twostage), format_optional(r.improvement));
}

void write_comparison_summary(std::ostream& out, const Comparison& comparison) {
  out << "metric\tweeks\tbaseline_mean\ttwostage_mean\tmean_improvement\timprovement_ci_low"
         "\timprovement_ci_high\ttwostage_better_weeks\n";
  for (const auto& s : comparison.summary)
    fmt::print(out, "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", s.metric, s.weeks,
               format_double(s.baseline_mean), format_double(s.twostage_mean),
               format_optional(s.mean_improvement), format_optional(s.improvement_ci_low),
               format_optional(s.improvement_ci_high), s.twostage_better_weeks);
}

void write_theory_report(std::ostream& out, const TheoryReport& report) {
  out << "scenario\tclaim\tpredicted\tobserved\ttolerance\tcheck\tstatus\tdetail\n";
  for (const auto& r : report.rows)
    fmt::print(out, "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", r.scenario, r.claim,
               format_double(r.predicted), format_double(r.observed), format_double(r.tolerance),
               to_string(r.check), to_string(r.status), r.detail);
}

void write_conformity_limits(std::ostream& out, const ConformityOutcome& outcome) {
  require(outcome.predicted_limit.size() == outcome.fitted_intercept.size() &&
              static_cast<std::size_t>(outcome.fitted_intercept.size()) == outcome.note_origin.size(),
          "write_conformity_limits: length mismatch");
  out << "noteId\tpredicted_limit\tfitted_intercept\n";
  for (std::size_t k = 0; k < outcome.note_origin.size(); ++k) {
    const auto n = static_cast<Index>(k);
    fmt::print(out, "{}\t{}\t{}\n", sim_note_id(outcome.note_origin[k]),
               format_double(outcome.predicted_limit[n]), format_double(outcome.fitted_intercept[n]));
  }
}

}  // namespace crowdmf
