#include "gspo/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gspo/checkpoint.hpp"
#include "gspo/errors.hpp"
#include "gspo/info_metrics.hpp"
#include "gspo/numfmt.hpp"
#include "gspo/objectives.hpp"
#include "gspo/policy.hpp"
#include "gspo/rng.hpp"
#include "gspo/trainer.hpp"
#include "gspo/variance_lab.hpp"

namespace fs = std::filesystem;

namespace gspo::cli {

namespace {

std::ostream& out_of(const CommandContext& ctx) { return ctx.out ? *ctx.out : std::cout; }
std::ostream& err_of(const CommandContext& ctx) { return ctx.err ? *ctx.err : std::cerr; }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

// Tracks the files a command writes so the manifest can list them.
class OutputSet {
 public:
  OutputSet(const CommandContext& ctx, std::string command, std::uint64_t seed)
      : ctx_(ctx), command_(std::move(command)), seed_(seed) {
    std::error_code ec;
    fs::create_directories(ctx.out_dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + ctx.out_dir.string() + ": " + ec.message());
  }

  std::string stem() const { return command_ + "_" + std::to_string(seed_); }

  std::ofstream open(const std::string& name) {
    const fs::path path = ctx_.out_dir / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path.string());
    files_.push_back(name);
    return f;
  }

  void write_manifest(const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) const {
    nlohmann::ordered_json m;
    m["command"] = command_;
    m["config_path"] = ctx_.config_path;
    m["seed"] = seed_;
    m["output_dir"] = ctx_.out_dir.string();
    m["tool_version"] = kToolVersion;
    m["timestamp"] = utc_timestamp();
    m["config"] = ctx_.config.values();
    m["outputs"] = files_;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    const fs::path path = ctx_.out_dir / ("manifest_" + stem() + ".json");
    const fs::path tmp = path.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary);
      if (!f) throw ConfigError("cannot write " + tmp.string());
      f << m.dump(2) << '\n';
    }
    fs::rename(tmp, path);
  }

 private:
  const CommandContext& ctx_;
  std::string command_;
  std::uint64_t seed_;
  std::vector<std::string> files_;
};

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, item.find_last_not_of(" \t") - b + 1));
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text, const std::string& key) {
  std::vector<std::size_t> out;
  KeyValueConfig tmp;
  for (const auto& s : split(text, ',')) {
    tmp.set(key, s);
    out.push_back(tmp.get_size(key, 0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// equivalence

struct Triple {
  std::string seq_id;
  std::size_t length = 0;
  EquivalenceReport report;
};

Triple random_triple(std::size_t k, std::uint64_t seed, int vocab, int queries, std::size_t max_len,
                     double logit_scale, double perturb) {
  Rng rng = make_stream(seed, {2, k});
  const auto fresh = PolicyParams::random(queries, Vocabulary(vocab), logit_scale, rng);
  LogitTable stale_table = fresh.logits();
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : stale_table.values()) v += perturb * normal(rng);
  const PolicyParams stale(std::move(stale_table));

  std::uniform_int_distribution<std::size_t> len_dist(1, max_len);
  std::uniform_int_distribution<int> query_dist(0, queries - 1);
  std::uniform_int_distribution<TokenId> body(1, vocab - 1), last(0, vocab - 1);
  TokenSequence y{QueryId{query_dist(rng)}, {}};
  const std::size_t len = len_dist(rng);
  for (std::size_t t = 0; t + 1 < len; ++t) y.tokens.push_back(body(rng));
  y.tokens.push_back(last(rng));

  const auto s_new = score(fresh, y);
  const auto s_old = score(stale, y);
  return {std::to_string(k), len, check_equivalence(ratio_bundle(s_new, s_old), s_new, s_old)};
}

const std::set<std::string> kEquivalenceKeys = {"n",          "vocab",     "queries", "max_len", "logit_scale",
                                                "perturb",    "seed",      "threshold", "input", "inject_fault"};

}  // namespace

int cmd_equivalence(const CommandContext& ctx) {
  const auto& c = ctx.config;
  c.require_known(kEquivalenceKeys);
  const std::size_t n = c.get_size("n", 1000);
  const int vocab = static_cast<int>(c.get_int("vocab", 16));
  const int queries = static_cast<int>(c.get_int("queries", 4));
  const std::size_t max_len = c.get_size("max_len", 64);
  const double logit_scale = c.get_double("logit_scale", 1.0);
  const double perturb = c.get_double("perturb", 0.5);
  const std::uint64_t seed = c.get_u64("seed", 0);
  const double threshold = c.get_double("threshold", 1e-10);
  const std::string input = c.get_string("input", "");
  const bool inject_fault = c.get_bool("inject_fault", false);

  std::vector<Triple> triples;
  if (!input.empty()) {
    std::ifstream in(input, std::ios::binary);
    if (!in) throw ConfigError("cannot read log-prob records from " + input);
    for (const auto& rec : read_logprob_records(in)) {
      try {
        triples.push_back({rec.seq_id, rec.tokens_len, analyze_record(rec)});
      } catch (const std::exception& e) {
        throw ConfigError("record " + rec.seq_id + ": " + e.what());
      }
    }
    if (triples.empty()) throw ConfigError("no log-prob records in " + input);
  } else {
    if (n == 0) throw ConfigError("n must be >= 1");
    if (vocab < 2) throw ConfigError("vocab must be >= 2");
    if (queries < 1) throw ConfigError("queries must be >= 1");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (!(logit_scale >= 0.0) || !(perturb >= 0.0)) throw ConfigError("logit_scale and perturb must be >= 0");
    triples.reserve(n);
    for (std::size_t k = 0; k < n; ++k)
      triples.push_back(random_triple(k, seed, vocab, queries, max_len, logit_scale, perturb));
  }
  if (inject_fault) {
    // Test-only: corrupt the perplexity path of the first triple by 1e-6 relative.
    auto& r = triples.front().report;
    r.ppl_ratio *= 1.0 + 1e-6;
    r.err_ppl = std::abs(r.s - r.ppl_ratio);
  }

  std::vector<EquivalenceReport> reports;
  for (const auto& t : triples) reports.push_back(t.report);
  const auto batch = summarize_equivalence(reports);
  const bool pass = batch.max_rel_err < threshold;

  OutputSet outputs(ctx, "equivalence", seed);
  {
    auto f = outputs.open(outputs.stem() + ".csv");
    f << "index,seq_id,length,s,ppl_ratio,exp_delta_h,err_ppl,err_entropy,rel_err_ppl,rel_err_entropy\n";
    for (std::size_t i = 0; i < triples.size(); ++i) {
      const auto& t = triples[i];
      const auto& r = t.report;
      f << i << ',' << t.seq_id << ',' << t.length << ',' << format_double(r.s) << ',' << format_double(r.ppl_ratio)
        << ',' << format_double(r.exp_delta_h) << ',' << format_double(r.err_ppl) << ','
        << format_double(r.err_entropy) << ',' << format_double(r.rel_err_ppl()) << ','
        << format_double(r.rel_err_entropy()) << '\n';
    }
  }
  {
    auto f = outputs.open(outputs.stem() + "_summary.csv");
    f << "count,mean_err_ppl,max_err_ppl,mean_err_entropy,max_err_entropy,max_rel_err,mean_s,batch_err_ppl,"
         "batch_err_entropy,threshold,pass\n";
    f << batch.count << ',' << format_double(batch.mean_err_ppl) << ',' << format_double(batch.max_err_ppl) << ','
      << format_double(batch.mean_err_entropy) << ',' << format_double(batch.max_err_entropy) << ','
      << format_double(batch.max_rel_err) << ',' << format_double(batch.mean_s) << ','
      << format_double(batch.batch_err_ppl) << ',' << format_double(batch.batch_err_entropy) << ','
      << format_double(threshold) << ',' << (pass ? 1 : 0) << '\n';
  }
  outputs.write_manifest({{"pass", pass}});

  out_of(ctx) << "equivalence: " << batch.count << " sequences, mean |s - PPL_old/PPL_new| = "
              << format_double(batch.mean_err_ppl) << ", mean |s - exp(dH)| = " << format_double(batch.mean_err_entropy)
              << ", max relative error = " << format_double(batch.max_rel_err) << " (threshold "
              << format_double(threshold) << ") -> " << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kExitSuccess : kExitThreshold;
}

// ---------------------------------------------------------------------------
// variance

namespace {

const std::set<std::string> kVarianceKeys = {"kinds",   "lengths", "sigma2",     "mu",      "rho",
                                             "corr_lengths", "mixtures", "n", "batches", "seed",
                                             "tol_iid", "tol_equicorrelated", "tol_mixture"};

struct VarianceCase {
  SamplerSpec spec;
  double tolerance = 0.0;
};

}  // namespace

int cmd_variance(const CommandContext& ctx) {
  const auto& c = ctx.config;
  c.require_known(kVarianceKeys);
  const auto kinds = split(c.get_string("kinds", "iid,equicorrelated,length_mixture"), ',');
  const auto lengths = parse_sizes(c.get_string("lengths", "10,100,817"), "lengths");
  const auto corr_lengths = parse_sizes(c.get_string("corr_lengths", "817"), "corr_lengths");
  const auto mixtures = split(c.get_string("mixtures", "100:0.5;900:0.5|400:0.5;1200:0.5"), '|');
  const double sigma2 = c.get_double("sigma2", 8.14e-4);
  const double mu = c.get_double("mu", 0.0);
  const double rho = c.get_double("rho", 0.003);
  const std::size_t n = c.get_size("n", 1'000'000);
  const std::size_t batches = c.get_size("batches", kDefaultBatches);
  const std::uint64_t seed = c.get_u64("seed", 0);
  const double tol_iid = c.get_double("tol_iid", 0.05);
  const double tol_corr = c.get_double("tol_equicorrelated", 0.10);
  const double tol_mix = c.get_double("tol_mixture", 0.10);
  if (kinds.empty()) throw ConfigError("kinds is empty");

  std::vector<VarianceCase> cases;
  for (const auto& k : kinds) {
    SamplerSpec base;
    base.mu_log = mu;
    base.sigma2_log = sigma2;
    switch (parse_sampler_kind(k)) {
      case SamplerKind::iid_normal:
        for (auto L : lengths) {
          auto s = base;
          s.length = L;
          cases.push_back({s, tol_iid});
        }
        break;
      case SamplerKind::equicorrelated_normal:
        for (auto L : corr_lengths) {
          auto s = base;
          s.kind = SamplerKind::equicorrelated_normal;
          s.corr_rho = rho;
          s.length = L;
          cases.push_back({s, tol_corr});
        }
        break;
      case SamplerKind::length_mixture:
        for (const auto& m : mixtures) {
          auto s = base;
          s.kind = SamplerKind::length_mixture;
          s.length_dist = parse_length_dist(m);
          cases.push_back({s, tol_mix});
        }
        break;
    }
  }
  for (const auto& vc : cases) vc.spec.validate();
  if (n < 4) throw ConfigError("n must be >= 4");
  if (batches < 2) throw ConfigError("batches must be >= 2");
  if (n < kMinSamples) {
    err_of(ctx) << "variance: n=" << n << " is below " << kMinSamples << "; estimates will be unreliable\n";
  }

  OutputSet outputs(ctx, "variance", seed);
  bool all_pass = true;
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& vc = cases[i];
    // Undersampled runs are allowed here (the check will likely fail); the estimator still
    // needs two samples per batch.
    const std::size_t plan = std::min(batches, n / 2);
    const auto r = simulate_log_s(vc.spec, n, derive_seed(seed, {3, i}), plan, /*min_samples=*/4);
    const double check = vc.spec.kind == SamplerKind::iid_normal ? r.var_log_s_rel_error() : r.inflation_rel_error();
    const bool pass = check <= vc.tolerance;
    all_pass = all_pass && pass;
    std::ostringstream row;
    write_variance_csv_row(row, r);
    std::string line = row.str();
    line.pop_back();
    line += ',' + format_double(vc.tolerance) + ',' + format_double(check) + ',' + (pass ? "1" : "0");
    rows.push_back(line);
    out_of(ctx) << "variance: " << to_string(vc.spec.kind) << " E[L]=" << format_double(vc.spec.mean_length())
                << " Var[log s]=" << format_double(r.var_log_s) << " (closed form "
                << format_double(r.predicted_var_log_s) << ") inflation=" << format_double(r.inflation)
                << " (closed form " << format_double(r.expected_inflation) << ") rel.err=" << format_double(check)
                << " tol=" << format_double(vc.tolerance) << " -> " << (pass ? "PASS" : "FAIL") << '\n';
  }
  {
    auto f = outputs.open(outputs.stem() + ".csv");
    std::ostringstream header;
    write_variance_csv_header(header);
    std::string h = header.str();
    h.pop_back();
    f << h << ",tolerance,check_error,pass\n";
    for (const auto& r : rows) f << r << '\n';
  }
  outputs.write_manifest({{"pass", all_pass}});
  return all_pass ? kExitSuccess : kExitThreshold;
}

// ---------------------------------------------------------------------------
// train

namespace {

const std::set<std::string> kTrainKeys = {"algorithm",    "compare",     "group_size", "eps_low",       "eps_high",
                                          "lr",           "steps",       "inner_updates", "max_len",    "vocab",
                                          "queries",      "seed",        "init_scale", "std_floor",     "reward_kind",
                                          "reward_target", "reward_scale"};

TrainConfig train_config_from(const KeyValueConfig& c) {
  TrainConfig t;
  t.algorithm = parse_algorithm(c.get_string("algorithm", "gspo"));
  t.group_size = c.get_size("group_size", t.group_size);
  t.clip.eps_low = c.get_double("eps_low", t.clip.eps_low);
  t.clip.eps_high = c.get_double("eps_high", t.clip.eps_high);
  t.learning_rate = c.get_double("lr", t.learning_rate);
  t.total_steps = c.get_size("steps", t.total_steps);
  t.inner_updates = c.get_size("inner_updates", t.inner_updates);
  t.max_len = c.get_size("max_len", t.max_len);
  t.vocab_size = static_cast<int>(c.get_int("vocab", t.vocab_size));
  t.query_count = static_cast<int>(c.get_int("queries", t.query_count));
  t.seed = c.get_u64("seed", t.seed);
  t.init_scale = c.get_double("init_scale", t.init_scale);
  t.std_floor = c.get_double("std_floor", t.std_floor);
  t.validate();
  return t;
}

RewardSpec reward_from(const KeyValueConfig& c) {
  RewardSpec r;
  r.kind = parse_reward_kind(c.get_string("reward_kind", "target_token_count"));
  r.target.clear();
  std::string target = c.get_string("reward_target", "1");
  std::replace(target.begin(), target.end(), ' ', ',');
  KeyValueConfig tmp;
  for (const auto& tok : split(target, ',')) {
    tmp.set("reward_target", tok);
    r.target.push_back(static_cast<TokenId>(tmp.get_int("reward_target", 0)));
  }
  r.scale = c.get_double("reward_scale", 1.0);
  return r;
}

void write_run(OutputSet& outputs, const RunLog& log) {
  const std::string base = outputs.stem() + "_" + to_string(log.config.algorithm);
  {
    auto f = outputs.open(base + ".jsonl");
    write_steps_jsonl(f, log.steps);
  }
  {
    auto f = outputs.open(base + ".csv");
    write_steps_csv(f, log.steps);
  }
  {
    auto f = outputs.open(base + "_header.json");
    write_run_header(f, log);
  }
  {
    auto f = outputs.open(base + "_policy.ckpt");
    write_checkpoint(f, log.final_params);
  }
}

void print_summary(std::ostream& os, const RunLog& log) {
  const auto& s = log.summary;
  os << "train[" << to_string(log.config.algorithm) << "]: " << log.steps.size() << " steps, reward "
     << format_double(s.reward_start) << " -> " << format_double(s.reward_end) << ", PPL " << format_double(s.ppl_start)
     << " -> " << format_double(s.ppl_end) << ", clipped " << format_double(s.mean_frac_clipped) << " (high "
     << format_double(s.mean_frac_high) << ", low " << format_double(s.mean_frac_low) << ")\n";
}

}  // namespace

int cmd_train(const CommandContext& ctx) {
  const auto& c = ctx.config;
  c.require_known(kTrainKeys);
  const TrainConfig config = train_config_from(c);
  const RewardSpec reward = reward_from(c);
  reward.validate(Vocabulary(config.vocab_size));
  const bool compare = c.get_bool("compare", false);

  try {
    if (compare) {
      const auto cmp = compare_algorithms(config, reward);
      OutputSet outputs(ctx, "train", config.seed);
      write_run(outputs, cmp.gspo);
      write_run(outputs, cmp.grpo);
      {
        auto f = outputs.open(outputs.stem() + "_compare.csv");
        write_comparison_csv(f, cmp.rows);
      }
      outputs.write_manifest({{"algorithms", {"gspo", "grpo"}}, {"steps", config.total_steps}});
      print_summary(out_of(ctx), cmp.gspo);
      print_summary(out_of(ctx), cmp.grpo);
    } else {
      const auto log = run_training(config, reward);
      OutputSet outputs(ctx, "train", config.seed);
      write_run(outputs, log);
      outputs.write_manifest({{"algorithms", {to_string(config.algorithm)}}, {"steps", config.total_steps}});
      print_summary(out_of(ctx), log);
    }
  } catch (const DivergedError& e) {
    err_of(ctx) << "train: " << e.what() << '\n';
    return kExitDiverged;
  }
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// clip-bounds

int cmd_clip_bounds(const CommandContext& ctx) {
  const auto& c = ctx.config;
  c.require_known({"eps_low", "eps_high", "seed"});
  const double eps_low = c.get_double("eps_low", 3e-4);
  const double eps_high = c.get_double("eps_high", 4e-4);
  EntropyInterval iv;
  try {
    iv = entropy_clip_bounds(eps_low, eps_high);
  } catch (const InvalidClip& e) {
    throw ConfigError(e.what());
  }
  auto& os = out_of(ctx);
  os << "eps_low  = " << format_double(eps_low) << "\neps_high = " << format_double(eps_high) << "\n\n";
  os << std::left << std::setw(40) << "quantity" << std::setw(26) << "lower" << "upper\n";
  os << std::setw(40) << "s = PPL_old / PPL_new" << std::setw(26) << format_double(1.0 - eps_low)
     << format_double(1.0 + eps_high) << '\n';
  os << std::setw(40) << "delta_H = H_old - H_new (nats/token)" << std::setw(26) << format_double(iv.lower)
     << format_double(iv.upper) << '\n';
  std::ostringstream rounded;
  rounded << std::scientific << std::setprecision(5) << "[" << iv.lower << ", " << iv.upper << "]";
  os << "\ndelta_H interval (6 s.f.): " << rounded.str() << '\n';
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// report

namespace {

using Table = std::vector<std::vector<std::string>>;

Table read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("report: missing output " + path.string());
  Table t;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    if (!line.empty() && line.back() == ',') row.emplace_back();
    t.push_back(std::move(row));
  }
  if (t.empty()) throw ConfigError("report: empty CSV " + path.string());
  return t;
}

std::size_t column(const Table& t, const std::string& name) {
  const auto& h = t.front();
  const auto it = std::find(h.begin(), h.end(), name);
  if (it == h.end()) throw ConfigError("report: column '" + name + "' not found");
  return static_cast<std::size_t>(it - h.begin());
}

void write_projection(std::ostream& f, const Table& t, const std::vector<std::string>& cols) {
  std::vector<std::size_t> idx;
  for (const auto& c : cols) idx.push_back(column(t, c));
  for (std::size_t i = 0; i < cols.size(); ++i) f << (i ? "," : "") << cols[i];
  f << '\n';
  for (std::size_t r = 1; r < t.size(); ++r) {
    for (std::size_t i = 0; i < idx.size(); ++i) f << (i ? "," : "") << t[r].at(idx[i]);
    f << '\n';
  }
}

}  // namespace

int cmd_report(const CommandContext& ctx, const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw ConfigError("report: " + run_dir.string() + " is not a directory");
  std::vector<fs::path> manifests;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.starts_with("manifest_") && name.ends_with(".json") &&
        !name.starts_with("manifest_report_"))
      manifests.push_back(entry.path());
  }
  std::sort(manifests.begin(), manifests.end());
  if (manifests.empty()) {
    err_of(ctx) << "report: no manifests found under " << run_dir.string() << '\n';
    return kExitConfig;
  }

  OutputSet outputs(ctx, "report", ctx.config.get_u64("seed", 0));
  std::vector<std::array<std::string, 5>> summary;
  for (const auto& mpath : manifests) {
    std::ifstream in(mpath, std::ios::binary);
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("report: cannot parse " + mpath.string() + ": " + e.what());
    }
    const std::string command = m.at("command").get<std::string>();
    const std::string seed = std::to_string(m.at("seed").get<std::uint64_t>());
    const std::string stem = command + "_" + seed;
    const fs::path dir = mpath.parent_path();
    std::string series, kind;
    if (command == "equivalence") {
      kind = "equivalence_error";
      series = "report_" + stem + "_equivalence_series.csv";
      const auto t = read_csv(dir / (stem + ".csv"));
      auto f = outputs.open(series);
      write_projection(f, t, {"index", "length", "s", "ppl_ratio", "exp_delta_h", "err_ppl", "err_entropy"});
    } else if (command == "variance") {
      kind = "variance_scaling";
      series = "report_" + stem + "_variance_series.csv";
      const auto t = read_csv(dir / (stem + ".csv"));
      auto f = outputs.open(series);
      write_projection(f, t,
                       {"kind", "length", "length_dist", "corr_rho", "theoretical_factor", "reduction_factor",
                        "var_log_w", "var_log_s", "predicted_var_log_s", "inflation", "expected_inflation"});
    } else if (command == "train") {
      kind = "ppl_trajectory";
      series = "report_" + stem + "_ppl_series.csv";
      const auto algos = m.at("algorithms").get<std::vector<std::string>>();
      std::vector<Table> tables;
      for (const auto& a : algos) tables.push_back(read_csv(dir / (stem + "_" + a + ".csv")));
      auto f = outputs.open(series);
      const std::vector<std::string> cols = {"mean_ppl", "mean_h", "mean_reward", "mean_s", "frac_clipped"};
      f << "step";
      for (const auto& a : algos)
        for (const auto& c : cols) f << ',' << (algos.size() > 1 ? a + "_" + c : c);
      f << '\n';
      const std::size_t step_col = column(tables.front(), "step");
      for (std::size_t r = 1; r < tables.front().size(); ++r) {
        f << tables.front()[r].at(step_col);
        for (const auto& t : tables)
          for (const auto& c : cols) f << ',' << t.at(r).at(column(t, c));
        f << '\n';
      }
    } else {
      err_of(ctx) << "report: skipping manifest with unknown command '" << command << "'\n";
      continue;
    }
    summary.push_back({command, seed, fs::relative(mpath, run_dir).string(), kind, series});
  }
  {
    auto f = outputs.open("report_summary.csv");
    f << "command,seed,manifest,series_kind,series_file\n";
    for (const auto& row : summary) f << row[0] << ',' << row[1] << ',' << row[2] << ',' << row[3] << ',' << row[4] << '\n';
  }
  outputs.write_manifest({{"run_dir", run_dir.string()}, {"series", summary.size()}});
  out_of(ctx) << "report: " << summary.size() << " series written to " << ctx.out_dir.string() << '\n';
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// command line

namespace {

void apply_sets(KeyValueConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"gspo-lab: sequence-level policy optimization laboratory", argv.empty() ? "gspo-lab" : argv.front()};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  struct Common {
    std::string config_path;
    std::string out_dir = "gspo-out";
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;  // flag overrides, applied after --set
  };
  std::map<std::string, Common> common;

  auto add_common = [&](CLI::App* sub, bool with_out) {
    auto& c = common[sub->get_name()];
    sub->add_option("-c,--config", c.config_path, "flat key=value config file");
    if (with_out) sub->add_option("-o,--out", c.out_dir, "output directory");
    sub->add_option("--set", c.sets, "override a config key (KEY=VALUE), repeatable");
    return &c;
  };
  auto add_flag_key = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    auto& c = common[sub->get_name()];
    sub->add_option_function<std::string>(flag, [&c, key](const std::string& v) { c.flags[key] = v; }, help);
  };

  auto* equivalence = app.add_subcommand("equivalence", "check s = PPL_old/PPL_new = exp(dH) on random triples");
  add_common(equivalence, true);
  add_flag_key(equivalence, "--n", "n", "number of random (theta, theta_old, y) triples");
  add_flag_key(equivalence, "--seed", "seed", "root seed");
  add_flag_key(equivalence, "--input", "input", "analyze JSON-lines log-prob records instead");
  equivalence->add_flag_callback("--inject-fault", [&] { common["equivalence"].flags["inject_fault"] = "1"; },
                                 "test only: perturb one arithmetic path by 1e-6")
      ->group("");

  auto* variance = app.add_subcommand("variance", "Monte Carlo log-domain variance suites");
  add_common(variance, true);
  add_flag_key(variance, "--n", "n", "samples per spec");
  add_flag_key(variance, "--seed", "seed", "root seed");
  add_flag_key(variance, "--kinds", "kinds", "comma list of iid,equicorrelated,length_mixture");

  auto* train = app.add_subcommand("train", "toy GSPO/GRPO training run");
  add_common(train, true);
  add_flag_key(train, "--algorithm", "algorithm", "gspo or grpo");
  add_flag_key(train, "--max-len", "max_len", "maximum response length");
  add_flag_key(train, "--lr", "lr", "learning rate");
  add_flag_key(train, "--steps", "steps", "total gradient steps");
  add_flag_key(train, "--seed", "seed", "root seed");
  train->add_flag_callback("--compare", [&] { common["train"].flags["compare"] = "1"; },
                           "run GSPO and GRPO side by side");

  auto* clip = app.add_subcommand("clip-bounds", "print the entropy interval equivalent to a clip band");
  add_common(clip, false);
  add_flag_key(clip, "--eps-low", "eps_low", "lower clip fraction");
  add_flag_key(clip, "--eps-high", "eps_high", "upper clip fraction");

  auto* report = app.add_subcommand("report", "plot-ready CSV series from a directory of runs");
  add_common(report, true);
  std::string run_dir;
  report->add_option("run_dir", run_dir, "directory containing run manifests")->required();

  std::vector<const char*> cargv;
  for (const auto& a : argv) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitSuccess;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kExitSuccess;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  const auto& c = common[sub->get_name()];
  // report's default output lives inside the run directory.
  const bool report_default_out = sub == report && sub->get_option("--out")->count() == 0;
  try {
    CommandContext ctx;
    ctx.out = &out;
    ctx.err = &err;
    if (!c.config_path.empty()) {
      ctx.config = KeyValueConfig::load(c.config_path);
      ctx.config_path = c.config_path;
    }
    if (const char* env_seed = std::getenv("SEED"); env_seed && *env_seed) ctx.config.set("seed", env_seed);
    apply_sets(ctx.config, c.sets);
    for (const auto& [k, v] : c.flags) ctx.config.set(k, v);
    ctx.out_dir = report_default_out ? fs::path(run_dir) / "report" : fs::path(c.out_dir);

    if (sub == equivalence) return cmd_equivalence(ctx);
    if (sub == variance) return cmd_variance(ctx);
    if (sub == train) return cmd_train(ctx);
    if (sub == clip) return cmd_clip_bounds(ctx);
    return cmd_report(ctx, run_dir);
  } catch (const DivergedError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace gspo::cli
