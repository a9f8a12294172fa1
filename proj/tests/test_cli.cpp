#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "gspo/checkpoint.hpp"
#include "gspo/cli/commands.hpp"
#include "gspo/cli/config.hpp"
#include "gspo/errors.hpp"
#include "gspo/numfmt.hpp"
#include "json.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace gspo;
using namespace gspo::cli;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("gspo_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "gspo-lab");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::size_t n = 0;
  for (char c : slurp(p)) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("shortest round-trip number format") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1e-300) == "1e-300");
  CHECK(format_double(2.0) == "2");
  CHECK(parse_double(" +2.5 ") == 2.5);
  CHECK(std::isinf(parse_double("inf")));
  CHECK(std::isnan(parse_double("nan")));
  CHECK_THROWS_AS(parse_double("1.5x"), std::invalid_argument);
  CHECK_THROWS_AS(parse_double(""), std::invalid_argument);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::uint64_t> bits;
  for (int i = 0; i < 10000; ++i) {
    std::uint64_t b = bits(rng);
    double v;
    std::memcpy(&v, &b, sizeof v);
    if (!std::isfinite(v)) continue;
    const double back = parse_double(format_double(v));
    CHECK(std::memcmp(&back, &v, sizeof v) == 0);
  }
}

TEST_CASE("key-value config") {
  const auto c = KeyValueConfig::parse(
      "# comment\n"
      "n = 1e6\n"
      "  name=abc  # trailing\n"
      "\n"
      "flag = true\n"
      "x = -2.5\n");
  CHECK(c.get_int("n", 0) == 1000000);
  CHECK(c.get_size("n", 0) == 1000000u);
  CHECK(c.get_string("name", "") == "abc");
  CHECK(c.get_bool("flag", false));
  CHECK(c.get_double("x", 0.0) == -2.5);
  CHECK(c.get_double("missing", 7.0) == 7.0);
  CHECK_THROWS_AS(c.get_int("x", 0), ConfigError);
  CHECK_THROWS_AS(c.get_size("x", 0), ConfigError);
  CHECK_THROWS_AS(c.get_bool("name", false), ConfigError);
  CHECK_NOTHROW(c.require_known({"n", "name", "flag", "x"}));
  CHECK_THROWS_AS(c.require_known({"n", "name", "flag"}), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("just words\n"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::load("/nonexistent/gspo.cfg"), ConfigError);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  std::mt19937_64 rng(9);
  const PolicyParams p = oracle::random_params(3, 7, 2.0, rng);
  std::stringstream ss;
  write_checkpoint(ss, p);
  CHECK(read_checkpoint(ss) == p);

  TempDir dir("ckpt");
  save_checkpoint(dir.path / "p.ckpt", p);
  CHECK(load_checkpoint(dir.path / "p.ckpt") == p);

  std::istringstream bad_header("gspo-policy 2\nquery_count 1 vocab_size 2\n0 0\n0 0\n0 0\n");
  CHECK_THROWS_AS(read_checkpoint(bad_header), ConfigError);
  std::istringstream truncated("gspo-policy 1\nquery_count 1 vocab_size 2\n0 0\n0 0\n");
  CHECK_THROWS_AS(read_checkpoint(truncated), ConfigError);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.ckpt"), ConfigError);
}

TEST_CASE("usage errors and help") {
  CHECK(run({}).code == kExitConfig);
  CHECK(run({"frobnicate"}).code == kExitConfig);
  CHECK(run({"--help"}).code == kExitSuccess);
  CHECK(run({"--version"}).out == std::string(kToolVersion) + "\n");
  CHECK(run({"train", "--bogus"}).code == kExitConfig);
  TempDir dir("usage");
  CHECK(run({"train", "-o", dir.path.string(), "--set", "no_such_key=1"}).code == kExitConfig);
  CHECK(run({"train", "-o", dir.path.string(), "--set", "malformed"}).code == kExitConfig);
  CHECK(run({"train", "-o", dir.path.string(), "-c", (dir.path / "none.cfg").string()}).code == kExitConfig);
}

TEST_CASE("equivalence command") {
  TempDir dir("equivalence");
  const auto ok = run({"equivalence", "-o", dir.path.string()});
  CHECK(ok.code == kExitSuccess);
  CHECK(line_count(dir.path / "equivalence_0.csv") == 1001);
  CHECK(fs::exists(dir.path / "equivalence_0_summary.csv"));
  const auto manifest = nlohmann::json::parse(slurp(dir.path / "manifest_equivalence_0.json"));
  CHECK(manifest.at("command") == "equivalence");
  CHECK(manifest.at("seed") == 0);
  CHECK(manifest.at("tool_version") == kToolVersion);
  for (const auto& f : manifest.at("outputs")) CHECK(fs::exists(dir.path / f.get<std::string>()));

  // aggregate mean error < 1e-12 (mean_err_ppl / mean_err_entropy columns)
  std::istringstream summary(slurp(dir.path / "equivalence_0_summary.csv"));
  std::string head, row;
  std::getline(summary, head);
  std::getline(summary, row);
  std::vector<std::string> names, values;
  std::string cell;
  for (std::istringstream h(head); std::getline(h, cell, ',');) names.push_back(cell);
  for (std::istringstream r(row); std::getline(r, cell, ',');) values.push_back(cell);
  REQUIRE(names.size() == values.size());
  int checked = 0;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == "mean_err_ppl" || names[i] == "mean_err_entropy") {
      CHECK(parse_double(values[i]) < 1e-12);
      ++checked;
    }
  CHECK(checked == 2);

  CHECK(run({"equivalence", "-o", dir.path.string(), "--n", "0"}).code == kExitConfig);
  CHECK(run({"equivalence", "-o", dir.path.string(), "--n", "50", "--inject-fault"}).code == kExitThreshold);

  std::ofstream(dir.path / "records.jsonl")
      << "{\"seq_id\": \"r1\", \"tokens_len\": 3, \"new_logprobs\": [-1, -2, -0.5], \"old_logprobs\": [-1.2, -1.9, -0.6]}\n";
  const auto from_file = run({"equivalence", "-o", (dir.path / "in").string(), "--input", (dir.path / "records.jsonl").string()});
  CHECK(from_file.code == kExitSuccess);
  CHECK(line_count(dir.path / "in" / "equivalence_0.csv") == 2);
  std::ofstream(dir.path / "broken.jsonl") << "{\"seq_id\": 1}\n";
  CHECK(run({"equivalence", "-o", dir.path.string(), "--input", (dir.path / "broken.jsonl").string()}).code == kExitConfig);
}

TEST_CASE("variance command") {
  TempDir dir("variance");
  const auto ok = run({"variance", "-o", dir.path.string(), "--n", "20000", "--set", "lengths=10,20", "--set",
                       "corr_lengths=50", "--set", "mixtures=10:0.5;40:0.5"});
  CHECK(ok.code == kExitSuccess);
  CHECK(line_count(dir.path / "variance_0.csv") == 1 + 2 + 1 + 1);
  CHECK(fs::exists(dir.path / "manifest_variance_0.json"));

  const auto tiny = run({"variance", "-o", dir.path.string(), "--n", "10", "--kinds", "iid"});
  CHECK(tiny.code == kExitThreshold);
  CHECK(run({"variance", "-o", dir.path.string(), "--n", "3"}).code == kExitConfig);
  CHECK(run({"variance", "-o", dir.path.string(), "--kinds", "cauchy"}).code == kExitConfig);
  CHECK(run({"variance", "-o", dir.path.string(), "--set", "sigma2=-1"}).code == kExitConfig);
}

TEST_CASE("train command") {
  TempDir dir("train");
  const auto ok = run({"train", "-o", dir.path.string()});
  CHECK(ok.code == kExitSuccess);
  CHECK(line_count(dir.path / "train_0_gspo.jsonl") == 500);
  CHECK(line_count(dir.path / "train_0_gspo.csv") == 501);
  CHECK(fs::exists(dir.path / "train_0_gspo_header.json"));
  CHECK(load_checkpoint(dir.path / "train_0_gspo_policy.ckpt").vocab_size() == 8);

  const auto a = run({"train", "-o", (dir.path / "g1").string(), "--algorithm", "gspo", "--max-len", "1", "--steps", "60"});
  const auto b = run({"train", "-o", (dir.path / "r1").string(), "--algorithm", "grpo", "--max-len", "1", "--steps", "60"});
  CHECK(a.code == kExitSuccess);
  CHECK(b.code == kExitSuccess);
  CHECK(slurp(dir.path / "g1" / "train_0_gspo.csv") == slurp(dir.path / "r1" / "train_0_grpo.csv"));

  const auto cmp = run({"train", "-o", (dir.path / "cmp").string(), "--compare", "--steps", "40"});
  CHECK(cmp.code == kExitSuccess);
  CHECK(line_count(dir.path / "cmp" / "train_0_compare.csv") == 41);
  CHECK(fs::exists(dir.path / "cmp" / "train_0_grpo.jsonl"));

  const auto stress = run({"train", "-o", (dir.path / "stress").string(), "--lr", "1e6", "--steps", "50"});
  CHECK((stress.code == kExitSuccess || stress.code == kExitDiverged));

  CHECK(run({"train", "-o", dir.path.string(), "--algorithm", "ppo"}).code == kExitConfig);
  CHECK(run({"train", "-o", dir.path.string(), "--set", "group_size=1"}).code == kExitConfig);
}

TEST_CASE("config file, SEED override and flag precedence") {
  TempDir dir("precedence");
  std::ofstream(dir.path / "train.cfg") << "# short run\nsteps = 20\nseed = 3\nmax_len = 6\n";
  const auto cfg = (dir.path / "train.cfg").string();
  CHECK(run({"train", "-c", cfg, "-o", (dir.path / "a").string()}).code == kExitSuccess);
  CHECK(line_count(dir.path / "a" / "train_3_gspo.jsonl") == 20);

  ::setenv("SEED", "5", 1);
  CHECK(run({"train", "-c", cfg, "-o", (dir.path / "b").string()}).code == kExitSuccess);
  CHECK(fs::exists(dir.path / "b" / "train_5_gspo.jsonl"));
  CHECK(run({"train", "-c", cfg, "-o", (dir.path / "c").string(), "--seed", "7", "--steps", "10"}).code == kExitSuccess);
  ::unsetenv("SEED");
  CHECK(line_count(dir.path / "c" / "train_7_gspo.jsonl") == 10);
  const auto m = nlohmann::json::parse(slurp(dir.path / "c" / "manifest_train_7.json"));
  CHECK(m.at("config_path") == cfg);
  CHECK(m.at("config").at("steps") == "10");
}

TEST_CASE("clip-bounds command") {
  const auto tight = run({"clip-bounds"});
  CHECK(tight.code == kExitSuccess);
  CHECK(tight.out.find("[-3.00045e-04, 3.99920e-04]") != std::string::npos);
  const auto zero = run({"clip-bounds", "--eps-low", "0", "--eps-high", "0"});
  CHECK(zero.out.find("[0.00000e+00, 0.00000e+00]") != std::string::npos);
  const auto half = run({"clip-bounds", "--eps-low", "0.5", "--eps-high", "0.5"});
  CHECK(half.out.find("[-6.93147e-01, 4.05465e-01]") != std::string::npos);
  CHECK(run({"clip-bounds", "--eps-low", "1"}).code == kExitConfig);
  CHECK(run({"clip-bounds", "--eps-high", "-0.1"}).code == kExitConfig);
}

TEST_CASE("report command") {
  TempDir dir("report");
  CHECK(run({"report", dir.path.string()}).code == kExitConfig);

  REQUIRE(run({"train", "-o", (dir.path / "runs" / "t").string(), "--steps", "37"}).code == kExitSuccess);
  REQUIRE(run({"equivalence", "-o", (dir.path / "runs" / "e").string(), "--n", "25", "--seed", "4"}).code == kExitSuccess);
  REQUIRE(run({"variance", "-o", (dir.path / "runs" / "v").string(), "--n", "20000", "--kinds", "iid", "--set",
               "lengths=5"}).code == kExitSuccess);
  REQUIRE(run({"train", "-o", (dir.path / "runs" / "c").string(), "--steps", "12", "--compare", "--seed", "2"}).code ==
          kExitSuccess);

  const auto r = run({"report", (dir.path / "runs").string()});
  CHECK(r.code == kExitSuccess);
  const fs::path out = dir.path / "runs" / "report";
  CHECK(line_count(out / "report_train_0_ppl_series.csv") == 38);
  CHECK(line_count(out / "report_train_2_ppl_series.csv") == 13);
  CHECK(slurp(out / "report_train_2_ppl_series.csv").find("grpo_mean_ppl") != std::string::npos);
  CHECK(line_count(out / "report_equivalence_4_equivalence_series.csv") == 26);
  CHECK(line_count(out / "report_variance_0_variance_series.csv") == 2);
  CHECK(line_count(out / "report_summary.csv") == 5);
  CHECK(fs::exists(out / "manifest_report_0.json"));

  // a second report ignores the first report's manifest
  const auto again = run({"report", (dir.path / "runs").string(), "-o", (dir.path / "second").string()});
  CHECK(again.code == kExitSuccess);
  CHECK(line_count(dir.path / "second" / "report_summary.csv") == 5);
}

TEST_CASE("reruns are byte-identical") {
  TempDir dir("rerun");
  const std::vector<std::vector<std::string>> commands{
      {"equivalence", "--n", "200"},
      {"variance", "--n", "20000", "--set", "lengths=10", "--set", "corr_lengths=30", "--set", "mixtures=5:0.5;15:0.5"},
      {"train", "--steps", "50", "--compare"},
  };
  for (const auto& cmd : commands) {
    for (const char* leg : {"a", "b"}) {
      auto args = cmd;
      args.push_back("-o");
      args.push_back((dir.path / leg / cmd[0]).string());
      REQUIRE(run(args).code == kExitSuccess);
    }
    for (const auto& entry : fs::directory_iterator(dir.path / "a" / cmd[0])) {
      const auto name = entry.path().filename().string();
      if (name.starts_with("manifest_")) continue;
      CHECK_MESSAGE(slurp(entry.path()) == slurp(dir.path / "b" / cmd[0] / name), name);
    }
  }
}
