#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Workdir {
  fs::path path = fs::temp_directory_path() / ("crowdmf_cli_test_" + std::to_string(::getpid()));
  Workdir() {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Workdir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

const fs::path& workdir() {
  static const Workdir dir;
  return dir.path;
}

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Run crowdmf(const std::string& args) {
  const auto out = workdir() / "stdout.txt";
  const auto err = workdir() / "stderr.txt";
  const std::string cmd = std::string("\"") + CROWDMF_CLI + "\" " + args + " >\"" + out.string() +
                          "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string dir(const std::string& name) { return (workdir() / name).string(); }

std::size_t data_rows(const fs::path& tsv) {
  std::ifstream in(tsv);
  std::string line;
  std::size_t rows = 0;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    ++rows;
  }
  return rows;
}

}  // namespace

TEST_CASE("simulate: sizes, determinism and collisions") {
  REQUIRE(crowdmf("simulate --p 1 --U 10 --N 10 --out-dir " + dir("sim_a")).code == 0);
  CHECK(data_rows(workdir() / "sim_a" / "ratings.tsv") == 100);
  CHECK(fs::exists(workdir() / "sim_a" / "truth.tsv"));
  CHECK(fs::exists(workdir() / "sim_a" / "simulate_manifest.json"));

  REQUIRE(crowdmf("simulate --p 1 --U 10 --N 10 --out-dir " + dir("sim_b")).code == 0);
  CHECK(slurp(workdir() / "sim_a" / "ratings.tsv") == slurp(workdir() / "sim_b" / "ratings.tsv"));
  CHECK(slurp(workdir() / "sim_a" / "truth.tsv") == slurp(workdir() / "sim_b" / "truth.tsv"));
  const auto ma = nlohmann::json::parse(slurp(workdir() / "sim_a" / "simulate_manifest.json"));
  const auto mb = nlohmann::json::parse(slurp(workdir() / "sim_b" / "simulate_manifest.json"));
  CHECK(ma["parameters"] == mb["parameters"]);
  for (std::size_t k = 0; k < ma["outputs"].size(); ++k)
    CHECK(ma["outputs"][k]["sha256"] == mb["outputs"][k]["sha256"]);

  const auto again = crowdmf("simulate --p 1 --U 10 --N 10 --out-dir " + dir("sim_a"));
  CHECK(again.code == 1);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(crowdmf("simulate --p 1 --U 10 --N 10 --seed 2 --force --out-dir " + dir("sim_a")).code == 0);
  CHECK(slurp(workdir() / "sim_a" / "ratings.tsv") != slurp(workdir() / "sim_b" / "ratings.tsv"));
}

TEST_CASE("simulate: default row count matches the manifest summary") {
  REQUIRE(crowdmf("simulate --out-dir " + dir("sim_default")).code == 0);
  const auto rows = data_rows(workdir() / "sim_default" / "ratings.tsv");
  CHECK(rows > 0);
  const auto summary = slurp(workdir() / "sim_default" / "simulate_summary.txt");
  CHECK(summary.find(std::to_string(rows)) != std::string::npos);
}

TEST_CASE("config files: keys apply, flags override, unknown keys fail") {
  std::ofstream(workdir() / "good.toml") << "U = 7\nN = 9\np = 1.0\n";
  REQUIRE(crowdmf("simulate --config " + dir("good.toml") + " --N 4 --out-dir " + dir("cfg")).code == 0);
  CHECK(data_rows(workdir() / "cfg" / "ratings.tsv") == 28);

  std::ofstream(workdir() / "bad.toml") << "U = 7\nbogus = 3\n";
  const auto bad = crowdmf("simulate --config " + dir("bad.toml") + " --out-dir " + dir("cfg_bad"));
  CHECK(bad.code == 1);
  CHECK(bad.err.find("bogus") != std::string::npos);
}

TEST_CASE("help lists every recorded parameter") {
  REQUIRE(crowdmf("simulate --out-dir " + dir("help_sim") + " --U 5 --N 5").code == 0);
  const auto manifest = nlohmann::json::parse(slurp(workdir() / "help_sim" / "simulate_manifest.json"));
  const auto help = crowdmf("simulate --help");
  CHECK(help.code == 0);
  for (const auto& [key, _] : manifest["parameters"].items())
    CHECK_MESSAGE(help.out.find("--" + key) != std::string::npos, key);
}

TEST_CASE("twostage on noiseless data puts every weight at the floor") {
  REQUIRE(crowdmf("simulate --p 1 --U 12 --N 15 --sigma 0 --out-dir " + dir("noiseless")).code == 0);
  const auto r = crowdmf("twostage --data " + dir("noiseless") +
                         "/ratings.tsv --no-filter --lambda-u 0 --lambda-n 0 --out-dir " + dir("ts"));
  REQUIRE(r.code == 0);
  std::ifstream in(workdir() / "ts" / "weights.tsv");
  std::string line;
  std::getline(in, line);
  CHECK(line.find("weight") != std::string::npos);
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string id, sigma2, weight;
    std::getline(fields, id, '\t');
    std::getline(fields, sigma2, '\t');
    std::getline(fields, weight, '\t');
    CHECK(std::stod(weight) == 10000.0);
    ++rows;
  }
  CHECK(rows == 12);
  CHECK(fs::exists(workdir() / "ts" / "stage1_params.tsv"));
}

TEST_CASE("fit: parameter file rows, filter diagnostics and schema errors") {
  REQUIRE(crowdmf("simulate --p 1 --U 12 --N 15 --out-dir " + dir("fit_data")).code == 0);
  REQUIRE(crowdmf("fit --data " + dir("fit_data") + "/ratings.tsv --out-dir " + dir("fit_out")).code == 0);
  CHECK(data_rows(workdir() / "fit_out" / "params.tsv") == 1 + 12 + 15);

  const auto empty = crowdmf("fit --data " + dir("fit_data") +
                             "/ratings.tsv --min-ratings-per-note 100 --out-dir " + dir("fit_empty"));
  CHECK(empty.code == 2);
  CHECK(empty.err.find("100") != std::string::npos);

  std::ofstream(workdir() / "bad.tsv") << "noteId\traterParticipantId\thelpfulnessLevel\nn\tr\tHELPFUL\n";
  const auto schema = crowdmf("fit --data " + dir("bad.tsv") + " --out-dir " + dir("fit_bad"));
  CHECK(schema.code == 2);
  CHECK(schema.err.find("createdAtMillis") != std::string::npos);

  CHECK(crowdmf("fit --out-dir " + dir("fit_nodata")).code == 1);
  CHECK(crowdmf("fit --data " + dir("missing.tsv") + " --out-dir " + dir("fit_missing")).code == 2);
}

TEST_CASE("evaluate: usage error when warm-up covers the stream") {
  REQUIRE(crowdmf("simulate --U 40 --N 60 --weeks 3 --out-dir " + dir("short_stream")).code == 0);
  const auto r = crowdmf("evaluate --data " + dir("short_stream") +
                         "/ratings.tsv --warm-weeks 3 --out-dir " + dir("ev_short"));
  CHECK(r.code == 1);
}

TEST_CASE("theory: truthful passes, self-test fails") {
  CHECK(crowdmf("theory --scenario truthful --out-dir " + dir("th_ok")).code == 0);
  CHECK(fs::exists(workdir() / "th_ok" / "theory_report.tsv"));
  const auto bad = crowdmf(
      "theory --scenario clamped-g --clamped-seeds 2 --clamped-size 200 --selftest-wrong-w1 "
      "--out-dir " + dir("th_bad"));
  CHECK(bad.code == 3);
}

TEST_CASE("replay reproduces outputs") {
  REQUIRE(crowdmf("simulate --U 30 --N 40 --out-dir " + dir("rp_sim")).code == 0);
  REQUIRE(crowdmf("twostage --data " + dir("rp_sim") + "/ratings.tsv --out-dir " + dir("rp_ts")).code == 0);
  for (const std::string sub : {"rp_sim/simulate", "rp_ts/twostage"}) {
    const auto r = crowdmf("replay " + dir(sub + "_manifest.json") + " --out-dir " + dir(sub + "_re"));
    CHECK(r.code == 0);
    CHECK(r.out.find("identical") != std::string::npos);
    CHECK(r.out.find("DIFFERENT") == std::string::npos);
  }

  // A changed input is refused.
  std::ofstream(workdir() / "rp_sim" / "ratings.tsv", std::ios::app) << "\n";
  const auto stale = crowdmf("replay " + dir("rp_ts/twostage_manifest.json") + " --force --out-dir " +
                             dir("rp_ts/twostage_re"));
  CHECK(stale.code != 0);
}

TEST_CASE("unknown subcommand and option are usage errors") {
  CHECK(crowdmf("frobnicate").code == 1);
  CHECK(crowdmf("simulate --no-such-flag").code == 1);
}
