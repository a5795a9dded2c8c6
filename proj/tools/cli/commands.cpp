#include "commands.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "crowdmf/analysis.hpp"
#include "crowdmf/conformity_sim.hpp"
#include "crowdmf/eval_harness.hpp"
#include "crowdmf/table_io.hpp"
#include "crowdmf/theory_check.hpp"
#include "crowdmf/two_stage.hpp"

namespace fs = std::filesystem;

namespace crowdmf::cli {

OutputDir::OutputDir(fs::path dir, bool force) : dir_(std::move(dir)), force_(force) {}

void OutputDir::claim(const std::vector<std::string>& names) const {
  if (force_) return;
  for (const auto& name : names)
    if (fs::exists(dir_ / name))
      throw UsageError(fmt::format("'{}' already exists; pass --force to overwrite",
                                   (dir_ / name).string()));
}

fs::path OutputDir::open(const std::string& name) {
  claim({name});
  fs::create_directories(dir_);
  written_.push_back(name);
  return dir_ / name;
}

namespace {

// Writes through `fn(std::ostream&)` into a file of `out`.
template <typename Fn>
void write_file(OutputDir& out, const std::string& name, Fn&& fn) {
  const auto path = out.open(name);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(fmt::format("cannot write '{}'", path.string()));
  fn(f);
  if (!f) throw DataError(fmt::format("write to '{}' failed", path.string()));
}

// Prints the summary and keeps a copy next to the outputs.
void emit_summary(OutputDir& out, const std::string& name, const std::string& text) {
  std::cout << text;
  write_file(out, name, [&](std::ostream& f) { f << text; });
}

BoundedDist range_dist(const std::vector<double>& r, const char* name) {
  if (r.size() != 2 || !(r[0] <= r[1]))
    throw UsageError(fmt::format("--{} needs two values lo <= hi", name));
  return r[0] == r[1] ? BoundedDist::point(r[0]) : BoundedDist::uniform(r[0], r[1]);
}

SimConfig sim_config(const SimulateOptions& o) {
  SimConfig c;
  c.users = o.users;
  c.notes = o.notes;
  c.observe_prob = o.p;
  c.mu = o.mu;
  c.rater_intercept = range_dist(o.rater_intercept_range, "rater-intercept-range");
  c.note_intercept = range_dist(o.note_intercept_range, "note-intercept-range");
  c.rater_factor = range_dist(o.rater_factor_range, "rater-factor-range");
  c.note_factor = range_dist(o.note_factor_range, "note-factor-range");
  c.controversy = range_dist(o.controversy_range, "controversy-range");
  c.consensus = range_dist(o.consensus_range, "consensus-range");
  if (o.noise == "constant")
    c.noise = ConstantNoise{o.sigma};
  else if (o.noise == "two-group")
    c.noise = TwoGroupNoise{o.sigma_low, o.sigma_high, o.fraction_high};
  else
    throw UsageError(fmt::format("--noise must be constant or two-group, not '{}'", o.noise));
  if (o.conformity == "linear")
    c.conformity = LinearConformity{o.kappa};
  else if (o.conformity == "step")
    c.conformity = StepConformity{o.step_threshold, o.step_rho};
  else
    throw UsageError(fmt::format("--conformity must be linear or step, not '{}'", o.conformity));
  c.consensus_noise_base = o.consensus_noise_base;
  c.consensus_noise_slope = o.consensus_noise_slope;
  c.discretize = o.discretize;
  c.noise_after_mixing = o.noise_after_mixing;
  c.seed = o.seed;
  c.validate();
  return c;
}

FitConfig fit_config(const FitOptions& o) {
  FitConfig c;
  c.lambda_u = o.lambda_u;
  c.lambda_n = o.lambda_n;
  c.lambda_rater_intercept = o.lambda_h;
  c.lambda_rater_factor = o.lambda_f;
  c.lambda_note_intercept = o.lambda_i;
  c.lambda_note_factor = o.lambda_g;
  c.max_sweeps = o.max_sweeps;
  c.rel_tol = o.tol;
  c.seed = o.seed;
  c.threads = o.threads;
  return c;
}

VarianceConvention parse_convention(const std::string& name) {
  if (name == "mean-square") return VarianceConvention::MeanSquare;
  if (name == "sample-variance") return VarianceConvention::SampleVariance;
  throw UsageError(
      fmt::format("--variance-convention must be mean-square or sample-variance, not '{}'", name));
}

void require_data(const FitOptions& o) {
  if (o.data.empty()) throw UsageError("--data is required");
}

ObservationSet load_filtered(const FitOptions& o, std::string& note) {
  require_data(o);
  const auto ingest = ingest_ratings_tsv(o.data);
  auto obs = ObservationSet::from_events(ingest.events);
  note = fmt::format("{} rows read, {} skipped for unknown level, {} ratings by {} raters on {} notes",
                     ingest.rows, ingest.skipped_unknown_level, obs.size(), obs.num_users(),
                     obs.num_notes());
  if (obs.empty()) throw DataError(fmt::format("{}: no usable ratings", o.data.string()));
  if (o.no_filter) return obs;
  auto filtered = filter_observations(obs, o.min_ratings_per_note, o.min_notes_per_rater);
  if (filtered.empty())
    throw DataError(fmt::format(
        "filtering left no ratings (min-ratings-per-note={}, min-notes-per-rater={}); lower the "
        "thresholds or pass --no-filter",
        o.min_ratings_per_note, o.min_notes_per_rater));
  note += fmt::format("; after filtering {} ratings by {} raters on {} notes", filtered.size(),
                      filtered.num_users(), filtered.num_notes());
  return filtered;
}

std::string status_counts(const LatentParamsd& p) {
  std::map<NoteStatus, int> counts;
  for (auto s : classify_all(p)) ++counts[s];
  return fmt::format("{} HELPFUL, {} NOT_HELPFUL, {} NEEDS_MORE_RATINGS", counts[NoteStatus::Helpful],
                     counts[NoteStatus::NotHelpful], counts[NoteStatus::NeedsMoreRatings]);
}

std::string fit_line(const char* label, const FitResult& r) {
  return fmt::format("{}: objective {:.6g} after {} sweeps ({})\n", label, r.objective, r.sweeps,
                     r.converged ? "converged" : "sweep limit reached");
}

}  // namespace

CommandOutcome cmd_simulate(const SimulateOptions& o, OutputDir& out) {
  const auto cfg = sim_config(o);
  if (o.weeks < 0) throw UsageError("--weeks must be >= 0");
  out.claim({"ratings.tsv", "truth.tsv", "simulate_summary.txt"});
  std::vector<RatingEvent> events;
  SimTruth truth;
  std::vector<std::string> warnings;
  if (o.weeks == 0) {
    auto ds = generate_dataset(cfg);
    events = observations_to_events(ds.observations(), o.start_ms);
    truth = std::move(ds.truth);
    warnings = std::move(ds.sample.warnings);
  } else {
    StreamConfig sc;
    sc.weeks = o.weeks;
    sc.lag_weeks = o.lag_weeks;
    sc.start_ms = o.start_ms;
    auto st = generate_stream(cfg, sc);
    events = std::move(st.events);
    truth = std::move(st.truth);
    warnings = std::move(st.warnings);
  }
  write_file(out, "ratings.tsv", [&](std::ostream& f) { write_ratings_tsv(f, events); });
  write_file(out, "truth.tsv", [&](std::ostream& f) { write_truth(f, truth); });
  std::string text = fmt::format("simulated {} ratings from {} raters x {} notes (seed {})\n",
                                 events.size(), o.users, o.notes, o.seed);
  for (const auto& w : warnings) text += "warning: " + w + "\n";
  emit_summary(out, "simulate_summary.txt", text);
  return {};
}

CommandOutcome cmd_fit(const FitOptions& o, OutputDir& out) {
  out.claim({"params.tsv", "fit_summary.txt"});
  std::string note;
  const auto obs = load_filtered(o, note);
  const auto r = fit(obs, fit_config(o));
  write_file(out, "params.tsv",
             [&](std::ostream& f) { write_params(f, r.params, obs.user_ids(), obs.note_ids()); });
  emit_summary(out, "fit_summary.txt",
               note + "\n" + fit_line("fit", r) + "notes: " + status_counts(r.params) + "\n");
  return {{o.data}};
}

CommandOutcome cmd_twostage(const FitOptions& o, OutputDir& out) {
  out.claim({"stage1_params.tsv", "params.tsv", "weights.tsv", "twostage_summary.txt"});
  std::string note;
  const auto obs = load_filtered(o, note);
  TwoStageConfig cfg;
  cfg.fit = fit_config(o);
  cfg.convention = parse_convention(o.variance_convention);
  cfg.variance_floor = o.variance_floor;
  cfg.max_reweight_rounds = o.reweight_rounds;
  const auto r = two_stage_fit(obs, cfg);
  const auto& ids = r.data;
  write_file(out, "stage1_params.tsv", [&](std::ostream& f) {
    write_params(f, r.stage1.params, ids.user_ids(), ids.note_ids());
  });
  write_file(out, "params.tsv", [&](std::ostream& f) {
    write_params(f, r.weighted.params, ids.user_ids(), ids.note_ids());
  });
  write_file(out, "weights.tsv",
             [&](std::ostream& f) { write_weights(f, ids.user_ids(), r.variance, r.weights); });
  std::string text = note + "\n" + fit_line("stage 1", r.stage1) + fit_line("weighted", r.weighted);
  const auto& w = r.weights.values();
  text += fmt::format("weights: min {:.6g}, max {:.6g}, {} reweight round(s)\n", w.minCoeff(),
                      w.maxCoeff(), r.reweight_rounds);
  text += "notes: " + status_counts(r.weighted.params) + "\n";
  for (const auto& warning : r.warnings) text += "warning: " + warning + "\n";
  emit_summary(out, "twostage_summary.txt", text);
  return {{o.data}};
}

CommandOutcome cmd_evaluate(const EvaluateOptions& o, OutputDir& out) {
  const auto anchor = parse_weekday(o.anchor);
  if (!anchor) throw UsageError(fmt::format("--anchor: unknown weekday '{}'", o.anchor));
  EvalConfig cfg;
  if (o.eligibility == "in-fit")
    cfg.eligibility = Eligibility::InFit;
  else if (o.eligibility == "rated-in-week")
    cfg.eligibility = Eligibility::RatedInWeek;
  else
    throw UsageError(
        fmt::format("--eligibility must be in-fit or rated-in-week, not '{}'", o.eligibility));
  if (o.warm_weeks < 0) throw UsageError("--warm-weeks must be >= 0");
  require_data(o.fit);
  cfg.fit = fit_config(o.fit);
  cfg.convention = parse_convention(o.fit.variance_convention);
  cfg.variance_floor = o.fit.variance_floor;
  cfg.max_reweight_rounds = o.fit.reweight_rounds;
  cfg.warm_weeks = o.warm_weeks;
  cfg.min_ratings_per_note = o.fit.no_filter ? 0 : o.fit.min_ratings_per_note;
  cfg.min_notes_per_rater = o.fit.no_filter ? 0 : o.fit.min_notes_per_rater;
  out.claim({"eval_report.tsv", "comparison.tsv", "comparison_summary.tsv",
             "evaluate_summary.txt"});

  const auto ingest = ingest_ratings_tsv(o.fit.data);
  const auto stream = weekly_split(ingest.events, *anchor);
  if (static_cast<std::size_t>(o.warm_weeks) >= stream.num_weeks())
    throw UsageError(fmt::format("--warm-weeks {} leaves nothing to score: the data span {} week(s)",
                                 o.warm_weeks, stream.num_weeks()));
  const auto report = rolling_evaluate(stream, cfg);
  const auto cmp = compare_methods(report);
  write_file(out, "eval_report.tsv", [&](std::ostream& f) { write_eval_report(f, report); });
  write_file(out, "comparison.tsv", [&](std::ostream& f) { write_comparison_rows(f, cmp); });
  write_file(out, "comparison_summary.tsv",
             [&](std::ostream& f) { write_comparison_summary(f, cmp); });

  CommandOutcome outcome{{o.fit.data}};
  std::string text = fmt::format("{} weeks, warm-up {}, {} events\n", stream.num_weeks(),
                                 o.warm_weeks, ingest.events.size());
  for (const auto& s : cmp.summary) {
    text += fmt::format("{:<14} baseline {:.6g}  twostage {:.6g}  improvement {}  better in {}/{} weeks\n",
                        s.metric, s.baseline_mean, s.twostage_mean,
                        s.mean_improvement ? fmt::format("{:+.2f}%", 100 * *s.mean_improvement)
                                           : std::string("n/a"),
                        s.twostage_better_weeks, s.weeks);
    if (!o.check) continue;
    if (s.metric == "oos_mar") {
      const bool ok = s.weeks > 0 && static_cast<double>(s.twostage_better_weeks) >=
                                         o.min_better_share * static_cast<double>(s.weeks);
      text += fmt::format("check oos_mar better-week share >= {}: {}\n", o.min_better_share,
                          ok ? "PASS" : "FAIL");
      outcome.checks_passed = outcome.checks_passed && ok;
    } else if (s.metric == "oos_medar") {
      const bool ok = s.mean_improvement && *s.mean_improvement > 0;
      text += fmt::format("check oos_medar mean improvement > 0: {}\n", ok ? "PASS" : "FAIL");
      outcome.checks_passed = outcome.checks_passed && ok;
    }
  }
  for (const auto& w : report.warnings) text += "warning: " + w + "\n";
  emit_summary(out, "evaluate_summary.txt", text);
  return outcome;
}

CommandOutcome cmd_theory(const TheoryOptions& o, OutputDir& out) {
  TheorySuiteConfig cfg;
  cfg.scenarios.clear();
  for (const auto& name : o.scenarios) {
    const auto s = parse_scenario(name);
    if (!s) throw UsageError(fmt::format("--scenario: unknown scenario '{}'", name));
    cfg.scenarios.push_back(*s);
  }
  cfg.lambda = o.lambda;
  cfg.max_sweeps = o.max_sweeps;
  cfg.truthful_size = o.truthful_size;
  cfg.consistency_small = o.consistency_small;
  cfg.consistency_large = o.consistency_large;
  cfg.consistency_seeds = o.consistency_seeds;
  cfg.conformity_size = o.conformity_size;
  cfg.kappa = o.kappa;
  cfg.clamped_size = o.clamped_size;
  cfg.clamped_seeds = o.clamped_seeds;
  cfg.kappa_grid = o.kappa_grid;
  cfg.hetero_size = o.hetero_size;
  cfg.hetero_replicates = o.hetero_replicates;
  cfg.wrong_w1_selftest = o.selftest_wrong_w1;
  SimConfig base;
  base.seed = o.seed;
  base.mu = o.mu;

  out.claim({"theory_report.tsv", "conformity_limits.tsv", "theory_summary.txt"});
  const auto report = run_theory_suite(base, cfg);
  write_file(out, "theory_report.tsv", [&](std::ostream& f) { write_theory_report(f, report); });
  if (report.conformity)
    write_file(out, "conformity_limits.tsv",
               [&](std::ostream& f) { write_conformity_limits(f, *report.conformity); });
  std::string text;
  for (const auto& r : report.rows)
    text += fmt::format("[{}] {} / {}: predicted {:.6g}, observed {:.6g}{}\n",
                        to_string(r.status), r.scenario, r.claim, r.predicted, r.observed,
                        r.detail.empty() ? std::string() : " (" + r.detail + ")");
  text += report.passed() ? "all checks passed\n" : "some checks FAILED\n";
  emit_summary(out, "theory_summary.txt", text);
  CommandOutcome outcome;
  outcome.checks_passed = report.passed();
  return outcome;
}

namespace {

std::optional<double> safe_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2) return std::nullopt;
  try {
    return spearman(x, y);
  } catch (const DataError&) {
    return std::nullopt;
  }
}

template <typename T>
T read_with(const fs::path& path, T (*reader)(std::istream&, std::string_view)) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  return reader(in, path.string());
}

}  // namespace

CommandOutcome cmd_analyze(const AnalyzeOptions& o, OutputDir& out) {
  if (o.eval.empty() && o.params.empty())
    throw UsageError("analyze needs --eval and/or --params");
  if (!o.truth.empty() && o.params.empty()) throw UsageError("--truth needs --params");
  if (o.post_week >= 0 && o.eval.empty()) throw UsageError("--post-week needs --eval");
  std::vector<std::string> planned = {"analyze_summary.txt"};
  if (!o.eval.empty()) planned.insert(planned.end(), {"comparison.tsv", "comparison_summary.tsv"});
  if (o.post_week >= 0) planned.push_back("gap_tests.tsv");
  if (!o.params.empty()) planned.push_back("factor_summary.tsv");
  if (!o.truth.empty()) planned.push_back("recovery.tsv");
  out.claim(planned);

  CommandOutcome outcome;
  std::string text;
  if (!o.eval.empty()) {
    outcome.inputs.push_back(o.eval);
    const auto report = read_with(o.eval, &read_eval_report);
    const auto cmp = compare_methods(report);
    write_file(out, "comparison.tsv", [&](std::ostream& f) { write_comparison_rows(f, cmp); });
    write_file(out, "comparison_summary.tsv",
               [&](std::ostream& f) { write_comparison_summary(f, cmp); });
    for (const auto& s : cmp.summary)
      text += fmt::format("{:<14} mean improvement {}\n", s.metric,
                          s.mean_improvement ? fmt::format("{:+.2f}%", 100 * *s.mean_improvement)
                                             : std::string("n/a"));
    if (o.post_week >= 0) {
      // Weekly gap: Baseline minus TwoStage one-week-ahead MAR.
      std::vector<double> gaps;
      std::vector<bool> post;
      for (const auto& r : cmp.rows)
        if (r.metric == "oos_mar" && r.baseline && r.twostage) {
          gaps.push_back(*r.baseline - *r.twostage);
          post.push_back(r.week >= o.post_week);
        }
      GapDidOptions gopt;
      gopt.hac_lags = o.hac_lags;
      const auto did = weekly_gap_did(gaps, post, gopt);
      const auto perm = permutation_test(mean_difference, gaps, post, o.permutations, o.seed);
      write_file(out, "gap_tests.tsv", [&](std::ostream& f) {
        f << "test\testimate\tse\tci_low\tci_high\tp_value\n";
        fmt::print(f, "weekly_gap_did\t{}\t{}\t{}\t{}\t{}\n", format_double(did.estimate),
                   format_double(did.se), format_double(did.ci_low), format_double(did.ci_high),
                   format_double(did.p_value));
        fmt::print(f, "permutation\t{}\tNA\tNA\tNA\t{}\n", format_double(perm.observed),
                   format_double(perm.p_value));
      });
      text += fmt::format("MAR gap shift at week {}: {:.6g} (se {:.3g}, p {:.3g}); permutation p {:.3g}\n",
                          o.post_week, did.estimate, did.se, did.p_value, perm.p_value);
      for (const auto& w : perm.warnings) text += "warning: " + w + "\n";
    }
  }
  if (!o.params.empty()) {
    outcome.inputs.push_back(o.params);
    const auto table = read_with(o.params, &read_params);
    const auto& p = table.params;
    std::vector<double> f(p.rater_factor.data(), p.rater_factor.data() + p.rater_factor.size());
    std::int64_t minority = 0;
    for (double v : f) minority += v < 0;
    std::optional<double> bc;
    if (f.size() >= 4) {
      try {
        bc = bimodality_coefficient(f, o.small_sample_bc);
      } catch (const DataError&) {
      }
    }
    std::map<NoteStatus, int> counts;
    for (auto s : classify_all(p)) ++counts[s];
    const double share = jeffreys_proportion(minority, static_cast<std::int64_t>(f.size()));
    write_file(out, "factor_summary.tsv", [&](std::ostream& fo) {
      fo << "statistic\tvalue\n";
      fmt::print(fo, "raters\t{}\nnotes\t{}\n", f.size(), p.num_notes());
      fmt::print(fo, "rater_factor_bimodality\t{}\n", format_optional(bc));
      fmt::print(fo, "negative_factor_raters\t{}\n", minority);
      fmt::print(fo, "negative_factor_share_jeffreys\t{}\n", format_double(share));
      fmt::print(fo, "helpful_notes\t{}\nnot_helpful_notes\t{}\nneeds_more_ratings_notes\t{}\n",
                 counts[NoteStatus::Helpful], counts[NoteStatus::NotHelpful],
                 counts[NoteStatus::NeedsMoreRatings]);
    });
    text += fmt::format("{} raters, {} notes; rater-factor BC {}; negative-factor share {:.4f}\n",
                        f.size(), p.num_notes(), format_optional(bc), share);

    if (!o.truth.empty()) {
      outcome.inputs.push_back(o.truth);
      const auto truth = read_with(o.truth, &read_truth);
      std::vector<double> fi, ti, fg, tg, ff, tf;
      for (std::size_t n = 0; n < table.note_ids.size(); ++n) {
        const auto it = truth.notes.find(table.note_ids[n]);
        if (it == truth.notes.end()) continue;
        const auto k = static_cast<Index>(n);
        fi.push_back(p.note_intercept[k]);
        ti.push_back(it->second.intercept);
        fg.push_back(p.note_factor[k]);
        tg.push_back(it->second.factor);
      }
      for (std::size_t u = 0; u < table.user_ids.size(); ++u) {
        const auto it = truth.raters.find(table.user_ids[u]);
        if (it == truth.raters.end()) continue;
        ff.push_back(p.rater_factor[static_cast<Index>(u)]);
        tf.push_back(it->second.factor);
      }
      const auto s_i = safe_spearman(fi, ti);
      const auto s_g = safe_spearman(fg, tg);
      const auto s_f = safe_spearman(ff, tf);
      write_file(out, "recovery.tsv", [&](std::ostream& fo) {
        fo << "statistic\tvalue\n";
        fmt::print(fo, "matched_notes\t{}\nmatched_raters\t{}\n", fi.size(), ff.size());
        fmt::print(fo, "spearman_note_intercept\t{}\n", format_optional(s_i));
        fmt::print(fo, "spearman_note_factor\t{}\n", format_optional(s_g));
        fmt::print(fo, "spearman_rater_factor\t{}\n", format_optional(s_f));
      });
      text += fmt::format("rank agreement with truth: note intercept {}, note factor {}, rater factor {}\n",
                          format_optional(s_i), format_optional(s_g), format_optional(s_f));
    }
  }
  emit_summary(out, "analyze_summary.txt", text);
  return outcome;
}

}  // namespace crowdmf::cli
