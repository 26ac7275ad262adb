// Integration tests driving the samm2d binary (path in SAMM2D_BIN).

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string bin() {
  const char* env = std::getenv("SAMM2D_BIN");
  REQUIRE_MESSAGE(env != nullptr, "SAMM2D_BIN must point at the samm2d binary");
  return env;
}

int run(const std::string& args) {
  const std::string cmd = bin() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& sub) const { return (path / sub).string(); }
};

void write_tiny_config(const fs::path& to, uint64_t seed) {
  std::ofstream out(to);
  out << R"({
  // integration-test scale
  "gen": {"dims": [32, 32, 32], "vessel_count": 2},
  "preproc": {"crop": 24},
  "model": {"encoder": {"stage_channels": [2, 4]}, "pyramid_grids": [1, 2]},
  "train": {"epochs_max": 2, "batch_size": 8, "seed": )"
      << seed << R"(}
})";
}

}  // namespace

TEST_CASE("cli: usage errors exit 2") {
  CHECK(run("definitely-not-a-subcommand") == 2);
  CHECK(run("gen") == 2);              // missing required flags
  CHECK(run("train --data x") == 2);   // missing --out
}

TEST_CASE("cli: missing and malformed inputs exit 3") {
  TempDir tmp("samm2d_cli_err");
  CHECK(run("preprocess --manifest /nonexistent/manifest.csv --out " + (tmp / "p")) == 3);
  CHECK(run("train --data /nonexistent/manifest.csv --out " + (tmp / "t")) == 3);

  // Unknown config keys are schema violations.
  std::ofstream bad(tmp.path / "bad.json");
  bad << R"({"gen": {"not_a_key": 1}})";
  bad.close();
  CHECK(run("gen --n 1 --out " + (tmp / "g") + " --config " + (tmp / "bad.json")) == 3);
}

TEST_CASE("cli: failures leave no partial outputs") {
  TempDir tmp("samm2d_cli_partial");
  // Corrupt dataset: manifest points at a missing volume.
  fs::create_directories(tmp.path / "raw");
  std::ofstream manifest(tmp.path / "raw" / "manifest.csv");
  manifest << "file,label,seed\nmissing.mvol,0,1\n";
  manifest.close();
  CHECK(run("preprocess --manifest " + (tmp / "raw") + "/manifest.csv --out " + (tmp / "prep")) ==
        3);
  CHECK_FALSE(fs::exists(tmp.path / "prep"));
  CHECK_FALSE(fs::exists(tmp.path / "prep.partial"));
}

TEST_CASE("cli: gen -> preprocess -> train -> calibrate -> gradcam -> report round-trip") {
  TempDir tmp("samm2d_cli_e2e");
  write_tiny_config(tmp.path / "cfg.json", 99);
  const std::string cfg = " --config " + (tmp / "cfg.json");

  REQUIRE(run("gen --n 24 --prevalence 0.5 --out " + (tmp / "raw") + cfg) == 0);
  REQUIRE(fs::exists(tmp.path / "raw" / "manifest.csv"));

  REQUIRE(run("preprocess --manifest " + (tmp / "raw") + "/manifest.csv --out " + (tmp / "prep") +
              cfg) == 0);
  REQUIRE(run("train --data " + (tmp / "prep") + "/manifest.csv --val-frac 0.25 --out " +
              (tmp / "run") + cfg) == 0);
  REQUIRE(fs::exists(tmp.path / "run" / "checkpoint.smm2"));
  REQUIRE(fs::exists(tmp.path / "run" / "history.csv"));

  REQUIRE(run("calibrate --checkpoint " + (tmp / "run") + "/checkpoint.smm2 --data " +
              (tmp / "prep") + "/manifest.csv --out " + (tmp / "cal") + cfg) == 0);
  {
    std::ifstream in(tmp.path / "cal" / "calibration.json");
    const json cal = json::parse(in);
    CHECK(cal.contains("tau_star"));
    CHECK(cal.at("operating_modes").size() == 3);
    CHECK(cal.at("operating_modes")[0].at("name") == "screening");
    CHECK(cal.at("version") == "samm2d 0.1.0");
    CHECK(cal.contains("config"));
  }

  REQUIRE(run("gradcam --checkpoint " + (tmp / "run") + "/checkpoint.smm2 --data " +
              (tmp / "prep") + "/manifest.csv --n 4 --out " + (tmp / "gc") + cfg) == 0);
  REQUIRE(fs::exists(tmp.path / "gc" / "attention_stats.json"));

  REQUIRE(run("report --run-dir " + tmp.path.string()) == 0);
  std::ifstream in(tmp.path / "report" / "report.json");
  const json report = json::parse(in);
  CHECK(report.contains("train"));
  CHECK(report.contains("calibration"));
  CHECK(report.contains("attention"));
  CHECK(report.at("series").size() > 0);
}

TEST_CASE("cli: identical config and seed give byte-identical outputs") {
  TempDir tmp("samm2d_cli_det");
  write_tiny_config(tmp.path / "cfg.json", 1234);
  const std::string cfg = " --config " + (tmp / "cfg.json");

  for (const char* side : {"a", "b"}) {
    const std::string s(side);
    REQUIRE(run("gen --n 16 --out " + (tmp / (s + "_raw")) + cfg) == 0);
    REQUIRE(run("preprocess --manifest " + (tmp / (s + "_raw")) + "/manifest.csv --out " +
                (tmp / (s + "_prep")) + cfg) == 0);
    REQUIRE(run("train --data " + (tmp / (s + "_prep")) + "/manifest.csv --val-frac 0.25 --out " +
                (tmp / (s + "_run")) + cfg) == 0);
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  CHECK(slurp(tmp.path / "a_raw" / "study_00003.mvol") ==
        slurp(tmp.path / "b_raw" / "study_00003.mvol"));
  CHECK(slurp(tmp.path / "a_run" / "checkpoint.smm2") ==
        slurp(tmp.path / "b_run" / "checkpoint.smm2"));
  CHECK(slurp(tmp.path / "a_run" / "history.csv") == slurp(tmp.path / "b_run" / "history.csv"));
  CHECK(slurp(tmp.path / "a_run" / "train_summary.json") ==
        slurp(tmp.path / "b_run" / "train_summary.json"));
}
