#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dass/audio.hpp"
#include "dass/checkpoint.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(DASS_CLI_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("dass_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string grab_hash(const std::string& output) {
  auto pos = output.find("hash ");
  REQUIRE(pos != std::string::npos);
  return output.substr(pos + 5, 16);
}

}  // namespace

TEST_CASE("cli: usage errors exit 2 with machine-readable diagnostics") {
  auto r = run_cli("no-such-command");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("\"error\"") != std::string::npos);

  auto r2 = run_cli("train --data /nowhere --bogus-flag 1");
  CHECK(r2.exit_code == 2);

  auto r3 = run_cli("--config /tmp/definitely_missing.conf gen-data --out /tmp/x");
  CHECK(r3.exit_code == 2);
  CHECK(r3.output.find("/tmp/definitely_missing.conf") != std::string::npos);
}

TEST_CASE("cli: runtime failures exit 1 with a JSON error") {
  auto r = run_cli("eval --model /tmp/missing.ckpt --data /tmp/missing_dir");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("\"error\"") != std::string::npos);
  CHECK(r.output.find("\"runtime\"") != std::string::npos);
}

TEST_CASE("cli: end-to-end happy path with deterministic retrain") {
  auto data_dir = fresh_dir("data");
  auto r = run_cli("gen-data --out " + data_dir.string() +
                   " --clips 16 --eval-clips 8 --classes 4 --clip-seconds 1 --seed 5");
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(data_dir / "manifest.json"));
  CHECK(fs::exists(data_dir / "features_train.bin"));
  CHECK(fs::exists(data_dir / "config.resolved.conf"));

  // identical dataset hash on re-run
  auto data_dir2 = fresh_dir("data2");
  auto r2 = run_cli("gen-data --out " + data_dir2.string() +
                    " --clips 16 --eval-clips 8 --classes 4 --clip-seconds 1 --seed 5");
  CHECK(grab_hash(r.output) == grab_hash(r2.output));

  // train twice with the same seed: identical checkpoint hashes
  auto run1 = fresh_dir("run1"), run2 = fresh_dir("run2");
  const std::string train_args =
      " --data " + data_dir.string() +
      " --preset tiny --epochs 1 --schedule fixed --batch-size 8 --seed 7";
  auto t1 = run_cli("train --out " + run1.string() + train_args);
  REQUIRE(t1.exit_code == 0);
  auto t2 = run_cli("train --out " + run2.string() + train_args);
  REQUIRE(t2.exit_code == 0);
  CHECK(grab_hash(t1.output) == grab_hash(t2.output));
  CHECK(fs::exists(run1 / "checkpoint.ckpt"));
  CHECK(fs::exists(run1 / "metrics.jsonl"));
  CHECK(fs::exists(run1 / "config.resolved.conf"));

  // metrics log has one JSON record per epoch
  std::ifstream mlog(run1 / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(mlog, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 1);

  // eval prints mAP
  auto ev = run_cli("eval --model " + (run1 / "checkpoint.ckpt").string() + " --data " +
                    data_dir.string());
  CHECK(ev.exit_code == 0);
  CHECK(ev.output.find("\"mAP\"") != std::string::npos);

  // niah: 3 lengths x 3 positions x 1 filler = 9 rows
  auto niah_dir = fresh_dir("niah");
  auto ni = run_cli("niah --models " + (run1 / "checkpoint.ckpt").string() + " --data " +
                    data_dir.string() +
                    " --lengths 1,2,3 --positions 0,0.5,1 --filler zeropad --out " +
                    niah_dir.string());
  CHECK(ni.exit_code == 0);
  CHECK(ni.output.find("9 conditions") != std::string::npos);
  std::ifstream csv(niah_dir / "report.csv");
  int csv_lines = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++csv_lines;
  CHECK(csv_lines == 10);  // header + 9 rows

  // bench over an 8x frame span
  auto bench_dir = fresh_dir("bench");
  auto be = run_cli("bench --models " + (run1 / "checkpoint.ckpt").string() +
                    " --frames 16,32,64,128 --repeats 3 --mel-bins 32 --out " +
                    bench_dir.string());
  CHECK(be.exit_code == 0);
  CHECK(fs::exists(bench_dir / "bench.csv"));
  CHECK(be.output.find("slope") != std::string::npos);

  // config file + flag override: run with the resolved snapshot
  auto run3 = fresh_dir("run3");
  auto t3 = run_cli("--config " + (run1 / "config.resolved.conf").string() + " train --data " +
                    data_dir.string() + " --out " + run3.string());
  REQUIRE(t3.exit_code == 0);
  CHECK(grab_hash(t3.output) == grab_hash(t1.output));  // same resolved settings, same bits

  for (auto* d : {&data_dir, &data_dir2, &run1, &run2, &run3, &niah_dir, &bench_dir})
    fs::remove_all(*d);
}

TEST_CASE("cli: features subcommand converts a WAV") {
  auto dir = fresh_dir("features");
  // 0.5 s of a 440 Hz tone
  std::vector<double> wav(8000, 0.0);
  for (std::size_t i = 0; i < wav.size(); ++i)
    wav[i] = 0.4 * std::sin(2.0 * M_PI * 440.0 * double(i) / 16000.0);
  auto wav_path = dir / "tone.wav";
  dass::write_wav(wav_path.string(), wav, 16000);

  auto out_path = dir / "tone_features.bin";
  auto r = run_cli("features --wav " + wav_path.string() + " --out " + out_path.string() +
                   " --mel-bins 64");
  CHECK(r.exit_code == 0);
  auto data = dass::load_checkpoint(out_path.string());
  CHECK(data.model_kind == "features");
  REQUIRE(data.names.size() == 1);
  CHECK(data.dims[0][1] == 64);
  CHECK(data.dims[0][0] == dass::FbankConfig{}.frame_count(wav.size()));
  fs::remove_all(dir);
}
