// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>
#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "mslb/cli/cli.h"
#include "mslb/codec/audio.h"
#include "mslb/codec/wav.h"
#include "mslb/pipeline/config.h"
#include "tiny_config.h"

namespace fs = std::filesystem;
using mslb::cli::run_command;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mslb_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::set<std::string> listing(const fs::path& p) {
  std::set<std::string> s;
  for (const auto& e : fs::recursive_directory_iterator(p)) s.insert(fs::relative(e.path(), p).string());
  return s;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"bogus"}).code == 1);
  CHECK(run({"pretrain", "--nope"}).code == 1);
  CHECK(run({"pretrain"}).code == 1);  // no --out
  CHECK(run({"synth", "--out", "/tmp/x"}).code == 1);  // no --text
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("paper preset prints the hyperparameters and trains nothing") {
  const auto dir = scratch("paper");
  const auto r = run({"pretrain", "--preset", "paper", "--out", (dir / "run").string()});
  CHECK(r.code == 0);
  for (const char* s : {"rank", "128", "alpha", "64", "3e-4", "0.9", "0.98"}) CHECK(r.out.find(s) != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "run"));
}

TEST_CASE("config problems and missing prerequisites exit 1") {
  const auto dir = scratch("deps");
  std::ofstream(dir / "bad.json") << R"({"seed": 1})";
  const auto bad = run({"pretrain", "--config", (dir / "bad.json").string(), "--out", (dir / "o").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("lora") != std::string::npos);
  const auto r = run({"stage2", "--out", (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("stage1") != std::string::npos);
}

TEST_CASE("a concurrent run on the same directory is rejected") {
  const auto dir = scratch("lock");
  const int fd = ::open((dir / ".lock").c_str(), O_CREAT | O_RDWR, 0644);
  REQUIRE(fd >= 0);
  REQUIRE(::flock(fd, LOCK_EX | LOCK_NB) == 0);
  // flock is per open file description, so a second open in this process conflicts.
  const auto r = run({"stage2", "--out", dir.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("lock") != std::string::npos);
  ::close(fd);
}

TEST_CASE("full tiny run: every command, outputs only under --out, re-runs are byte-identical") {
  const auto dir = scratch("full");
  const auto cfg_path = dir / "tiny.json";
  std::ofstream(cfg_path) << mslb::pipeline::to_json(testcfg::tiny());
  const auto out = dir / "run";
  auto cmd = [&](std::vector<std::string> a) {
    a.insert(a.end(), {"--config", cfg_path.string(), "--out", out.string()});
    const auto r = run(a);
    INFO(a.front() << ": " << r.err);
    CHECK(r.code == 0);
    return r;
  };
  for (const char* c : {"fit-codec", "pretrain", "stage1", "stage2", "stage3"}) cmd({c});
  const std::string s1 = slurp(out / "stage1.mslb");
  cmd({"stage1"});
  CHECK(slurp(out / "stage1.mslb") == s1);

  cmd({"gen-data", "--n", "5"});
  CHECK(fs::exists(out / "data" / "speech_qa.jsonl"));
  const auto synth = run({"synth", "--config", cfg_path.string(), "--out", out.string(), "--text", "3a 7e"});
  CHECK((synth.code == 0 || synth.code == 2));  // an untrained model may emit no speech tokens
  if (synth.code == 0) CHECK(mslb::codec::read_wav(out / "out.wav").samples.size() > 0);
  CHECK(run({"synth", "--config", cfg_path.string(), "--out", out.string(), "--text", "3+4"}).code == 1);
  cmd({"qa", "--question", "2+2=?"});
  const auto qa = nlohmann::json::parse(slurp(out / "qa.json"));
  CHECK(qa.contains("layout_ok"));
  cmd({"eval", "--heldout", "3"});
  cmd({"report"});
  CHECK(slurp(out / "report.txt").find("MOS") != std::string::npos);
  CHECK(slurp(out / "report.csv").rfind("model,source,text_accuracy_pct,tts_cer_pct", 0) == 0);

  const auto files = listing(dir);
  for (const auto& f : files) CHECK((f == "tiny.json" || f == "run" || f.rfind("run/", 0) == 0));
  std::string metrics = slurp(out / "metrics.jsonl");
  std::istringstream lines(metrics);
  int n = 0;
  for (std::string line; std::getline(lines, line); ++n) CHECK_NOTHROW((void)nlohmann::json::parse(line));
  CHECK(n > 5);
}
