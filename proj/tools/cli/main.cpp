#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "commands.hpp"
#include "crowdmf/error.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using namespace crowdmf;
using namespace crowdmf::cli;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

// Options that are bookkeeping rather than parameters of the computation.
const std::set<std::string> kUnrecorded = {"help", "config", "out-dir", "force"};
// Options naming input files; recorded as absolute paths.
const std::set<std::string> kPathOptions = {"data", "eval", "params", "truth"};

struct Subcommand {
  CLI::App* app = nullptr;
  std::function<CommandOutcome(OutputDir&)> run;
};

struct Common {
  std::string out_dir = ".";
  bool force = false;
  std::string config;
};

std::vector<std::string> split_default(const std::string& text) {
  if (text.size() < 2 || text.front() != '[' || text.back() != ']') return {text};
  std::vector<std::string> out;
  std::string body = text.substr(1, text.size() - 2);
  std::size_t start = 0;
  for (;;) {
    const auto comma = body.find(',', start);
    out.push_back(body.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

bool is_flag(const CLI::Option* opt) { return opt->get_type_size() == 0; }

std::map<std::string, std::vector<std::string>> resolved_parameters(const CLI::App* app) {
  std::map<std::string, std::vector<std::string>> out;
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (kUnrecorded.count(name)) continue;
    std::vector<std::string> values;
    if (is_flag(opt)) {
      values = {opt->as<bool>() ? "true" : "false"};
    } else if (opt->count() > 0) {
      values = opt->results();
    } else if (!opt->get_default_str().empty()) {
      values = split_default(opt->get_default_str());
    } else {
      continue;
    }
    if (kPathOptions.count(name))
      for (auto& v : values)
        if (!v.empty()) v = fs::absolute(v).lexically_normal().string();
    out[name] = values;
  }
  return out;
}

void add_fit_options(CLI::App* sub, FitOptions& o, bool twostage) {
  sub->add_option("--data", o.data, "Ratings TSV (required)");
  sub->add_option("--lambda-u", o.lambda_u, "Penalty on rater intercept and factor");
  sub->add_option("--lambda-n", o.lambda_n, "Penalty on note intercept and factor");
  sub->add_option("--lambda-h", o.lambda_h, "Penalty on rater intercepts (overrides --lambda-u)");
  sub->add_option("--lambda-f", o.lambda_f, "Penalty on rater factors (overrides --lambda-u)");
  sub->add_option("--lambda-i", o.lambda_i, "Penalty on note intercepts (overrides --lambda-n)");
  sub->add_option("--lambda-g", o.lambda_g, "Penalty on note factors (overrides --lambda-n)");
  sub->add_option("--max-sweeps", o.max_sweeps, "Sweep limit")->check(CLI::PositiveNumber);
  sub->add_option("--tol", o.tol, "Relative objective tolerance")->check(CLI::NonNegativeNumber);
  sub->add_option("--seed", o.seed, "Seed for the random initialisation");
  sub->add_option("--threads", o.threads, "Thread cap")->check(CLI::PositiveNumber);
  sub->add_option("--min-ratings-per-note", o.min_ratings_per_note, "Filter threshold")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--min-notes-per-rater", o.min_notes_per_rater, "Filter threshold")
      ->check(CLI::NonNegativeNumber);
  sub->add_flag("--no-filter", o.no_filter, "Fit all ratings without the activity filter");
  if (!twostage) return;
  sub->add_option("--variance-convention", o.variance_convention,
                  "mean-square or sample-variance");
  sub->add_option("--variance-floor", o.variance_floor, "Floor on per-rater variances")
      ->check(CLI::PositiveNumber);
  sub->add_option("--reweight-rounds", o.reweight_rounds, "Weighted refits")
      ->check(CLI::PositiveNumber);
}

class Cli {
 public:
  Cli() : app_("Rank-1 rating factorization: simulation, fitting, evaluation and checks", "crowdmf") {
    app_.require_subcommand(1);
    app_.option_defaults()->always_capture_default();
    app_.footer(
        "Every long option of a subcommand is also a key of its --config TOML file;\n"
        "unknown keys are errors. Exit codes: 0 ok, 1 usage, 2 data, 3 failed check.\n"
        "CROWDMF_DATA_DIR sets the default --out-dir.");

    auto* sim = add("simulate", "Simulate a ratings dataset and its truth sidecar");
    auto& s = sim_;
    sim->add_option("--U,--users", s.users, "Raters")->check(CLI::PositiveNumber);
    sim->add_option("--N,--notes", s.notes, "Notes")->check(CLI::PositiveNumber);
    sim->add_option("--p", s.p, "Observation probability")->check(CLI::Range(0.0, 1.0));
    sim->add_option("--mu", s.mu, "Global intercept");
    sim->add_option("--rater-intercept-range", s.rater_intercept_range, "lo hi")->expected(2);
    sim->add_option("--note-intercept-range", s.note_intercept_range, "lo hi")->expected(2);
    sim->add_option("--rater-factor-range", s.rater_factor_range, "lo hi")->expected(2);
    sim->add_option("--note-factor-range", s.note_factor_range, "lo hi")->expected(2);
    sim->add_option("--controversy-range", s.controversy_range, "lo hi")->expected(2);
    sim->add_option("--consensus-range", s.consensus_range, "lo hi")->expected(2);
    sim->add_option("--noise", s.noise, "constant or two-group");
    sim->add_option("--sigma", s.sigma, "Noise sd (constant)");
    sim->add_option("--sigma-low", s.sigma_low, "Noise sd of the low group (two-group)");
    sim->add_option("--sigma-high", s.sigma_high, "Noise sd of the high group (two-group)");
    sim->add_option("--fraction-high", s.fraction_high, "Share of raters in the high group");
    sim->add_option("--conformity", s.conformity, "linear or step");
    sim->add_option("--kappa", s.kappa, "Linear conformity slope");
    sim->add_option("--step-threshold", s.step_threshold, "Step conformity threshold");
    sim->add_option("--step-rho", s.step_rho, "Step conformity weight above the threshold");
    sim->add_option("--consensus-noise-base", s.consensus_noise_base, "Forecast noise sd");
    sim->add_option("--consensus-noise-slope", s.consensus_noise_slope,
                    "Forecast noise sd per unit controversy");
    sim->add_flag("--discretize", s.discretize, "Round reports to 0 / 0.5 / 1");
    sim->add_flag("--noise-after-mixing", s.noise_after_mixing, "Add noise after mixing");
    sim->add_option("--weeks", s.weeks, "0: one static dataset; otherwise a weekly stream");
    sim->add_option("--lag-weeks", s.lag_weeks, "Stream: maximum rating lag in weeks");
    sim->add_option("--start-ms", s.start_ms, "Timestamp of the first week");
    sim->add_option("--seed", s.seed, "Seed");
    subs_.back().run = [this](OutputDir& o) { return cmd_simulate(sim_, o); };

    auto* f = add("fit", "Fit the factorization to a ratings file");
    add_fit_options(f, fit_, false);
    subs_.back().run = [this](OutputDir& o) { return cmd_fit(fit_, o); };

    auto* t = add("twostage", "Two-stage inverse-variance weighted fit");
    add_fit_options(t, two_, true);
    subs_.back().run = [this](OutputDir& o) { return cmd_twostage(two_, o); };

    auto* e = add("evaluate", "Rolling weekly Baseline vs TwoStage evaluation");
    add_fit_options(e, eval_.fit, true);
    e->add_option("--anchor", eval_.anchor, "First day of the week (UTC)");
    e->add_option("--warm-weeks", eval_.warm_weeks, "Weeks before the first scored week");
    e->add_option("--eligibility", eval_.eligibility, "in-fit or rated-in-week");
    e->add_flag("--check", eval_.check, "Exit 3 unless TwoStage wins the MAR and MedAR checks");
    e->add_option("--min-better-share", eval_.min_better_share,
                  "Share of weeks TwoStage MAR must win under --check");
    subs_.back().run = [this](OutputDir& o) { return cmd_evaluate(eval_, o); };

    auto* th = add("theory", "Simulate the theoretical scenarios and check the predictions");
    auto& q = theory_;
    th->add_option("--scenario", q.scenarios,
                   "truthful, conformity, clamped-g, heteroskedastic");
    th->add_option("--seed", q.seed, "Seed");
    th->add_option("--mu", q.mu, "Global intercept");
    th->add_option("--lambda", q.lambda, "Absolute ridge penalty")->check(CLI::NonNegativeNumber);
    th->add_option("--max-sweeps", q.max_sweeps, "Sweep limit")->check(CLI::PositiveNumber);
    th->add_option("--truthful-size", q.truthful_size, "U = N, truthful")->check(CLI::PositiveNumber);
    th->add_option("--consistency-small", q.consistency_small, "U = N, small consistency run");
    th->add_option("--consistency-large", q.consistency_large, "U = N, large consistency run");
    th->add_option("--consistency-seeds", q.consistency_seeds, "Seeds per consistency size");
    th->add_option("--conformity-size", q.conformity_size, "U = N, conformity");
    th->add_option("--kappa", q.kappa, "Conformity slope");
    th->add_option("--clamped-size", q.clamped_size, "U = N, clamped fits");
    th->add_option("--clamped-seeds", q.clamped_seeds, "Seeds for clamped fits");
    th->add_option("--kappa-grid", q.kappa_grid, "Conformity slopes for the monotonicity check");
    th->add_option("--hetero-size", q.hetero_size, "U = N, heteroskedastic");
    th->add_option("--hetero-replicates", q.hetero_replicates, "Monte Carlo replicates");
    th->add_flag("--selftest-wrong-w1", q.selftest_wrong_w1,
                 "Negative control: use a wrong slope prediction");
    subs_.back().run = [this](OutputDir& o) { return cmd_theory(theory_, o); };

    auto* a = add("analyze", "Statistics on evaluation reports and parameter files");
    a->add_option("--eval", analyze_.eval, "eval_report.tsv from evaluate");
    a->add_option("--params", analyze_.params, "Parameter file from fit or twostage");
    a->add_option("--truth", analyze_.truth, "Truth sidecar from simulate");
    a->add_option("--post-week", analyze_.post_week,
                  "Test for a shift of the weekly MAR gap from this week on (-1: off)");
    a->add_option("--hac-lags", analyze_.hac_lags, "Newey-West lag")->check(CLI::NonNegativeNumber);
    a->add_option("--permutations", analyze_.permutations, "Permutation replicates")
        ->check(CLI::Range(100, 100000000));
    a->add_option("--seed", analyze_.seed, "Seed");
    a->add_flag("--small-sample-bc", analyze_.small_sample_bc,
                "Bias-corrected bimodality coefficient");
    subs_.back().run = [this](OutputDir& o) { return cmd_analyze(analyze_, o); };

    replay_ = app_.add_subcommand("replay", "Rerun a manifest and compare output hashes");
    replay_->add_option("manifest", replay_manifest_, "Manifest JSON")->required();
    replay_->add_option("--out-dir", replay_out_, "Directory for the rerun outputs")->required();
    replay_->add_flag("--force", replay_force_, "Overwrite existing files");
  }

  // Returns the exit code.
  int run(std::vector<std::string> args) {
    try {
      std::reverse(args.begin(), args.end());
      app_.parse(args);
    } catch (const CLI::ParseError& e) {
      const int code = app_.exit(e);
      return code == 0 ? kExitOk : kExitUsage;
    }
    try {
      if (replay_->parsed()) return replay();
      for (auto& sub : subs_)
        if (sub.app->parsed()) return execute(sub);
      return kExitUsage;
    } catch (const UsageError& e) {
      std::cerr << "usage error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const ContractViolation& e) {
      std::cerr << "invalid argument: " << e.what() << '\n';
      return kExitUsage;
    } catch (const DataError& e) {
      std::cerr << "data error: " << e.what() << '\n';
      return kExitData;
    } catch (const fs::filesystem_error& e) {
      std::cerr << "data error: " << e.what() << '\n';
      return kExitData;
    }
  }

 private:
  CLI::App* add(const std::string& name, const std::string& help) {
    auto* sub = app_.add_subcommand(name, help);
    const char* env_dir = std::getenv("CROWDMF_DATA_DIR");
    common_.push_back(std::make_unique<Common>());
    auto& c = *common_.back();
    if (env_dir && *env_dir) c.out_dir = env_dir;
    sub->add_option("--out-dir", c.out_dir, "Output directory");
    sub->add_flag("--force", c.force, "Overwrite existing output files");
    sub->add_option("--config", c.config, "TOML file of option values; flags override it");
    subs_.push_back({sub, {}});
    return sub;
  }

  const Common& common_of(const Subcommand& sub) const {
    return *common_[static_cast<std::size_t>(&sub - subs_.data())];
  }

  // Options not given on the command line take their value from the file.
  void apply_config(CLI::App* sub, const std::string& path) {
    std::vector<CLI::ConfigItem> items;
    try {
      items = CLI::ConfigTOML().from_file(path);
    } catch (const CLI::Error& e) {
      throw UsageError(fmt::format("config '{}': {}", path, e.what()));
    }
    for (const auto& item : items) {
      if (item.name == "++" || item.name == "--") continue;  // section markers
      if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == sub->get_name()))
        throw UsageError(fmt::format("config '{}': unknown section '{}'", path, item.parents[0]));
      CLI::Option* opt = nullptr;
      try {
        opt = sub->get_option("--" + item.name);
      } catch (const CLI::OptionNotFound&) {
      }
      if (!opt || kUnrecorded.count(item.name))
        throw UsageError(fmt::format("config '{}': unknown key '{}'", path, item.name));
      if (opt->count() > 0) continue;
      try {
        opt->add_result(item.inputs);
        opt->run_callback();
      } catch (const CLI::Error& e) {
        throw UsageError(fmt::format("config '{}': key '{}': {}", path, item.name, e.what()));
      }
    }
  }

  int execute(Subcommand& sub) {
    const auto& c = common_of(sub);
    if (!c.config.empty()) apply_config(sub.app, c.config);
    OutputDir out(c.out_dir, c.force);
    const std::string manifest_name = sub.app->get_name() + "_manifest.json";
    out.claim({manifest_name});
    RunManifest m;
    m.subcommand = sub.app->get_name();
    if (!c.config.empty()) m.config_file = fs::absolute(c.config).lexically_normal().string();
    m.parameters = resolved_parameters(sub.app);
    if (auto it = m.parameters.find("seed"); it != m.parameters.end() && !it->second.empty())
      m.seed = it->second.front();
    m.output_dir = fs::absolute(c.out_dir).lexically_normal().string();

    const auto outcome = sub.run(out);
    for (const auto& in : outcome.inputs) {
      const auto abs = fs::absolute(in).lexically_normal();
      m.inputs.push_back({abs.string(), sha256_file(abs)});
    }
    for (const auto& name : out.written()) m.outputs.push_back({name, sha256_file(out.dir() / name)});
    write_manifest(out.dir() / manifest_name, m);
    return outcome.checks_passed ? kExitOk : kExitCheck;
  }

  int replay() {
    const auto m = read_manifest(replay_manifest_);
    for (const auto& in : m.inputs)
      if (sha256_file(in.path) != in.sha256)
        throw DataError(fmt::format("input '{}' changed since the manifest was written", in.path));
    std::vector<std::string> args = {m.subcommand, "--out-dir", replay_out_};
    if (replay_force_) args.push_back("--force");
    for (const auto& [name, values] : m.parameters) {
      const std::string flag = "--" + name;
      if (values.size() == 1 && (values[0] == "true" || values[0] == "false")) {
        args.push_back(flag + "=" + values[0]);
        continue;
      }
      args.push_back(flag);
      args.insert(args.end(), values.begin(), values.end());
    }
    Cli fresh;
    const int code = fresh.run(args);
    if (code != kExitOk && code != kExitCheck) return code;
    bool identical = true;
    for (const auto& rec : m.outputs) {
      const auto path = fs::path(replay_out_) / rec.path;
      const bool same = fs::exists(path) && sha256_file(path) == rec.sha256;
      std::cout << (same ? "identical " : "DIFFERENT ") << rec.path << '\n';
      identical = identical && same;
    }
    return identical ? code : kExitCheck;
  }

  CLI::App app_;
  std::vector<Subcommand> subs_;
  std::vector<std::unique_ptr<Common>> common_;
  SimulateOptions sim_;
  FitOptions fit_, two_;
  EvaluateOptions eval_;
  TheoryOptions theory_;
  AnalyzeOptions analyze_;
  CLI::App* replay_ = nullptr;
  std::string replay_manifest_;
  std::string replay_out_;
  bool replay_force_ = false;
};

}  // namespace

int main(int argc, char** argv) {
  Cli cli;
  return cli.run(std::vector<std::string>(argv + 1, argv + argc));
}
