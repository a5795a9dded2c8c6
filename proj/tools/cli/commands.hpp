#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace crowdmf::cli {

// Bad flag combination or value the parser cannot catch; exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Destination directory for one run. Refuses to replace existing files
// unless `force`.
class OutputDir {
 public:
  OutputDir(std::filesystem::path dir, bool force);
  // Fails before any work is done when a planned file already exists.
  void claim(const std::vector<std::string>& names) const;
  std::filesystem::path open(const std::string& name);  // records the name
  const std::filesystem::path& dir() const noexcept { return dir_; }
  const std::vector<std::string>& written() const noexcept { return written_; }

 private:
  std::filesystem::path dir_;
  bool force_;
  std::vector<std::string> written_;
};

struct CommandOutcome {
  std::vector<std::filesystem::path> inputs;
  bool checks_passed = true;
};

struct SimulateOptions {
  std::int64_t users = 200;
  std::int64_t notes = 200;
  double p = 0.3;
  double mu = 0.5;
  std::vector<double> rater_intercept_range = {-0.2, 0.2};
  std::vector<double> note_intercept_range = {-0.3, 0.3};
  std::vector<double> rater_factor_range = {-1.0, 2.0};
  std::vector<double> note_factor_range = {-1.0, 1.0};
  std::vector<double> controversy_range = {0.0, 1.0};
  std::vector<double> consensus_range = {-0.5, 0.5};
  std::string noise = "constant";
  double sigma = 0.1;
  double sigma_low = 0.05;
  double sigma_high = 0.5;
  double fraction_high = 0.5;
  std::string conformity = "linear";
  double kappa = 0.0;
  double step_threshold = 0.5;
  double step_rho = 0.5;
  double consensus_noise_base = 0.0;
  double consensus_noise_slope = 0.0;
  bool discretize = false;
  bool noise_after_mixing = false;
  int weeks = 0;
  int lag_weeks = 3;
  std::int64_t start_ms = 1672617600000;
  std::uint64_t seed = 1;
};

struct FitOptions {
  std::filesystem::path data;
  std::optional<double> lambda_u, lambda_n;
  std::optional<double> lambda_h, lambda_f, lambda_i, lambda_g;
  int max_sweeps = 500;
  double tol = 1e-8;
  std::uint64_t seed = 0;
  int threads = 1;
  int min_ratings_per_note = 5;
  int min_notes_per_rater = 10;
  bool no_filter = false;
  // Two-stage only.
  std::string variance_convention = "mean-square";
  double variance_floor = 1e-4;
  int reweight_rounds = 1;
};

struct EvaluateOptions {
  FitOptions fit;
  std::string anchor = "monday";
  int warm_weeks = 4;
  std::string eligibility = "in-fit";
  bool check = false;
  double min_better_share = 0.8;
};

struct TheoryOptions {
  std::vector<std::string> scenarios = {"truthful", "conformity", "clamped-g", "heteroskedastic"};
  std::uint64_t seed = 1;
  double mu = 0.5;
  double lambda = 0.05;
  int max_sweeps = 2000;
  std::int64_t truthful_size = 300;
  std::int64_t consistency_small = 150;
  std::int64_t consistency_large = 600;
  int consistency_seeds = 10;
  std::int64_t conformity_size = 500;
  double kappa = 0.8;
  std::int64_t clamped_size = 400;
  int clamped_seeds = 10;
  std::vector<double> kappa_grid = {0.9, 0.6, 0.3, 0.1};
  std::int64_t hetero_size = 200;
  int hetero_replicates = 200;
  bool selftest_wrong_w1 = false;
};

struct AnalyzeOptions {
  std::filesystem::path eval;
  std::filesystem::path params;
  std::filesystem::path truth;
  int post_week = -1;
  int hac_lags = 4;
  int permutations = 1000;
  std::uint64_t seed = 1;
  bool small_sample_bc = false;
};

CommandOutcome cmd_simulate(const SimulateOptions& o, OutputDir& out);
CommandOutcome cmd_fit(const FitOptions& o, OutputDir& out);
CommandOutcome cmd_twostage(const FitOptions& o, OutputDir& out);
CommandOutcome cmd_evaluate(const EvaluateOptions& o, OutputDir& out);
CommandOutcome cmd_theory(const TheoryOptions& o, OutputDir& out);
CommandOutcome cmd_analyze(const AnalyzeOptions& o, OutputDir& out);

}  // namespace crowdmf::cli
