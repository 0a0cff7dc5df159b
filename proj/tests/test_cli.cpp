#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using fdf::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(FDF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One trained corpus shared by the cases below.
const fs::path& trained_corpus() {
  static const fs::path root = [] {
    const fs::path dir = scratch_dir("cli");
    const std::string d = (dir / "d").string();
    REQUIRE(run("synth --subjects 20 --samples 8 --out " + d) == 0);
    REQUIRE(run("train --data " + d + " --epochs 2") == 0);
    return dir;
  }();
  return root;
}

} // namespace

TEST_CASE("end-to-end synth, train, evaluate") {
  const fs::path d = trained_corpus() / "d";
  CHECK(fs::exists(d / "model.fdf"));
  CHECK(run("evaluate --data " + d.string() + " --bits 128") == 0);
  CHECK(fs::exists(d / "metrics.json"));
  CHECK(fs::exists(d / "roc.csv"));
  CHECK(slurp(d / "metrics.json").find("\"bit_length\": 128") != std::string::npos);
}

TEST_CASE("usage errors exit 2") {
  const std::string d = (trained_corpus() / "d").string();
  CHECK(run("evaluate --data " + d + " --bits 256") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("evaluate --data " + d + " --no-such-flag") == 2);
  CHECK(run("") == 2);
}

TEST_CASE("verify of an unenrolled user exits 1") {
  const fs::path dir = trained_corpus();
  const std::string d = (dir / "d").string();
  const std::string store = (dir / "store").string();
  REQUIRE(run("enroll --model " + d + "/model.fdf --store " + store + " --user alice --image " + d +
              "/subject_000/sample_00.pgm " + d + "/subject_000/sample_01.pgm") == 0);
  CHECK(run("verify --model " + d + "/model.fdf --store " + store + " --user mallory --threshold 0.3 --image " + d +
            "/subject_000/sample_02.pgm") == 1);
  CHECK(run("verify --model " + d + "/model.fdf --store " + store + " --user alice --threshold 0.3 --image " + d +
            "/subject_000/sample_02.pgm") == 0);
  // Revoked key version is refused.
  REQUIRE(run("revoke --model " + d + "/model.fdf --store " + store + " --user alice --image " + d +
              "/subject_000/sample_00.pgm") == 0);
  CHECK(run("verify --model " + d + "/model.fdf --store " + store + " --user alice --key-version 1 --threshold 0.3 --image " +
            d + "/subject_000/sample_02.pgm") == 1);
}

TEST_CASE("undefined metrics exit 3") {
  const fs::path dir = scratch_dir("cli_metric");
  std::ofstream(dir / "scores.csv") << "label,score\ngenuine,0.1\ngenuine,0.2\n";
  CHECK(run("roc --scores " + (dir / "scores.csv").string() + " --out " + (dir / "roc.csv").string()) == 3);
}

TEST_CASE("same seed reproduces every artifact byte for byte") {
  const fs::path dir = scratch_dir("cli_repeat");
  for (const char* name : {"a", "b"}) {
    const std::string d = (dir / name).string();
    REQUIRE(run("--seed 9 synth --subjects 3 --samples 3 --height 16 --width 32 --out " + d) == 0);
    REQUIRE(run("--seed 9 train --data " + d + " --gallery 2 --epochs 1 --input-height 16 --input-width 32") == 0);
    REQUIRE(run("--seed 9 --bits 32 evaluate --data " + d + " --gallery 2 --store " + d + "/store --scores " + d +
                "/scores.csv") == 0);
  }
  for (const char* file : {"subject_001/sample_02.pgm", "model.fdf", "roc.csv", "metrics.json", "scores.csv",
                           "store/templates.jsonl", "store/keys.jsonl"}) {
    CAPTURE(file);
    const std::string a = slurp(dir / "a" / file);
    CHECK(!a.empty());
    CHECK(a == slurp(dir / "b" / file));
  }
  REQUIRE(run("--seed 10 synth --subjects 3 --samples 3 --height 16 --width 32 --out " + (dir / "c").string()) == 0);
  CHECK(slurp(dir / "c/subject_001/sample_02.pgm") != slurp(dir / "a/subject_001/sample_02.pgm"));
}

TEST_CASE("config file values apply unless a flag overrides them") {
  const fs::path dir = scratch_dir("cli_config");
  const std::string d = (dir / "d").string();
  std::ofstream(dir / "run.cfg") << "# small corpus\nsubjects = 3\nsamples = 2\nheight = 8\nwidth = 16\n";
  REQUIRE(run("--config " + (dir / "run.cfg").string() + " synth --samples 4 --out " + d) == 0);
  std::size_t subjects = 0, files = 0;
  for (const auto& e : fs::directory_iterator(d))
    if (e.is_directory()) {
      ++subjects;
      files += static_cast<std::size_t>(std::distance(fs::directory_iterator(e.path()), fs::directory_iterator{}));
    }
  CHECK(subjects == 3);
  CHECK(files == 12);

  std::ofstream(dir / "bad.cfg") << "bits = 256\n";
  CHECK(run("--config " + (dir / "bad.cfg").string() + " synth --out " + d) == 2);
}
