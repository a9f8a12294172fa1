#include "gspo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <utility>

#include <json.hpp>

#include "gspo/errors.hpp"
#include "gspo/info_metrics.hpp"
#include "gspo/numfmt.hpp"
#include "gspo/rng.hpp"

namespace gspo {

const char* to_string(Algorithm a) noexcept { return a == Algorithm::grpo ? "grpo" : "gspo"; }

Algorithm parse_algorithm(const std::string& text) {
  if (text == "gspo") return Algorithm::gspo;
  if (text == "grpo") return Algorithm::grpo;
  throw ConfigError("unknown algorithm '" + text + "' (expected gspo or grpo)");
}

const char* to_string(RewardKind k) noexcept {
  return k == RewardKind::pattern_match ? "pattern_match" : "target_token_count";
}

RewardKind parse_reward_kind(const std::string& text) {
  if (text == "target_token_count") return RewardKind::target_token_count;
  if (text == "pattern_match") return RewardKind::pattern_match;
  throw ConfigError("unknown reward kind '" + text + "'");
}

void RewardSpec::validate(const Vocabulary& vocab) const {
  if (target.empty()) throw ConfigError("reward target is empty");
  if (kind == RewardKind::target_token_count && target.size() != 1)
    throw ConfigError("target_token_count takes exactly one target token");
  for (TokenId t : target)
    if (t < 0 || t >= vocab.size()) throw ConfigError("reward target token " + std::to_string(t) + " out of range");
  if (!std::isfinite(scale)) throw ConfigError("reward scale must be finite");
}

double compute_reward(const RewardSpec& spec, const TokenSequence& seq) {
  if (seq.tokens.empty()) return 0.0;
  if (spec.kind == RewardKind::target_token_count) {
    const auto hits = std::count(seq.tokens.begin(), seq.tokens.end(), spec.target.front());
    return spec.scale * static_cast<double>(hits) / static_cast<double>(seq.length());
  }
  const auto it = std::search(seq.tokens.begin(), seq.tokens.end(), spec.target.begin(), spec.target.end());
  return it != seq.tokens.end() ? spec.scale : 0.0;
}

void TrainConfig::validate() const {
  if (group_size < 2) throw ConfigError("group_size must be >= 2");
  if (inner_updates < 1) throw ConfigError("inner_updates must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (query_count < 1) throw ConfigError("query_count must be >= 1");
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) throw ConfigError("init_scale must be >= 0");
  if (!(std_floor >= 0.0)) throw ConfigError("std_floor must be >= 0");
  try {
    clip.validate();
  } catch (const InvalidClip& e) {
    throw ConfigError(e.what());
  }
}

namespace {

struct Rollout {
  PolicyParams old_params;
  std::vector<Group> groups;
  std::vector<AdvantageSet> advantages;
};

Rollout sample_rollout(const TrainConfig& cfg, const RewardSpec& reward, const PolicyParams& params,
                       std::size_t rollout) {
  Rollout r{params, {}, {}};
  for (int q = 0; q < cfg.query_count; ++q) {
    Group g{QueryId{q}, {}, {}};
    for (std::size_t i = 0; i < cfg.group_size; ++i) {
      Rng rng = make_stream(cfg.seed, {1, rollout, static_cast<std::uint64_t>(q), i});
      g.responses.push_back(sample_sequence(params, g.query, cfg.max_len, rng));
      g.rewards.push_back(compute_reward(reward, g.responses.back()));
    }
    r.advantages.push_back(group_advantages(g.rewards, cfg.std_floor));
    r.groups.push_back(std::move(g));
  }
  return r;
}

// Population variance, two-pass.
struct Spread {
  std::vector<double> xs;
  double mean() const {
    double acc = 0.0;
    for (double x : xs) acc += x;
    return xs.empty() ? 0.0 : acc / static_cast<double>(xs.size());
  }
  double variance() const {
    if (xs.empty()) return 0.0;
    const double m = mean();
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return acc / static_cast<double>(xs.size());
  }
};

bool all_finite(const StepMetrics& m) {
  const double vals[] = {m.objective, m.mean_s,      m.max_s,        m.min_s,       m.mean_delta_h, m.eq_err_mean,
                         m.eq_err_max, m.mean_reward, m.mean_length, m.mean_ppl,    m.mean_h,       m.var_log_s,
                         m.var_log_w,  m.var_s,       m.var_w,       m.grad_norm};
  return std::all_of(std::begin(vals), std::end(vals), [](double v) { return std::isfinite(v); });
}

StepMetrics measure_step(std::size_t step, std::size_t rollout, bool refresh, const Rollout& batch,
                         const std::vector<GroupGradient>& results, const Gradient& grad, double objective) {
  StepMetrics m;
  m.step = step;
  m.rollout = rollout;
  m.refresh = refresh;
  m.objective = objective;
  m.grad_norm = grad.l2_norm();

  Spread log_s, log_w, s, w, reward, length, ppl, h, dh;
  std::vector<EquivalenceReport> eq;
  m.max_s = -INFINITY;
  m.min_s = INFINITY;
  for (std::size_t gi = 0; gi < results.size(); ++gi) {
    const auto& res = results[gi];
    const auto& group = batch.groups[gi];
    for (std::size_t i = 0; i < res.bundles.size(); ++i) {
      const auto& b = res.bundles[i];
      log_s.xs.push_back(b.norm_log_ratio);
      s.xs.push_back(b.s);
      dh.xs.push_back(b.delta_h);
      m.max_s = std::max(m.max_s, b.s);
      m.min_s = std::min(m.min_s, b.s);
      for (double lw : b.token_log_ratios) {
        log_w.xs.push_back(lw);
        w.xs.push_back(std::exp(lw));
      }
      eq.push_back(check_equivalence(b, res.new_scores[i], res.old_scores[i]));
      reward.xs.push_back(group.rewards[i]);
      length.xs.push_back(static_cast<double>(b.length()));
      ppl.xs.push_back(res.new_scores[i].perplexity);
      h.xs.push_back(res.new_scores[i].cross_entropy);
    }
  }

  const auto batch_eq = summarize_equivalence(eq);
  m.eq_err_mean = std::max(batch_eq.mean_err_ppl, batch_eq.mean_err_entropy);
  m.eq_err_max = std::max(batch_eq.max_err_ppl, batch_eq.max_err_entropy);
  m.mean_s = s.mean();
  m.mean_delta_h = dh.mean();
  m.mean_reward = reward.mean();
  m.mean_length = length.mean();
  m.mean_ppl = ppl.mean();
  m.mean_h = h.mean();
  m.var_log_s = log_s.variance();
  m.var_log_w = log_w.variance();
  m.var_s = s.variance();
  m.var_w = w.variance();
  return m;
}

void fill_clip_fractions(StepMetrics& m, const std::vector<GroupGradient>& results, const ClipConfig& clip) {
  std::size_t responses = 0, high = 0, low = 0, tokens = 0, tokens_clipped = 0;
  for (const auto& res : results) {
    for (const auto& b : res.bundles) {
      ++responses;
      const auto f = clip_flag(b.s, clip);
      high += f == ClipFlag::high;
      low += f == ClipFlag::low;
      for (double lw : b.token_log_ratios) {
        ++tokens;
        tokens_clipped += clip_flag(std::exp(lw), clip) != ClipFlag::none;
      }
    }
  }
  m.frac_high = static_cast<double>(high) / static_cast<double>(responses);
  m.frac_low = static_cast<double>(low) / static_cast<double>(responses);
  m.frac_clipped = static_cast<double>(high + low) / static_cast<double>(responses);
  m.frac_token_clipped = static_cast<double>(tokens_clipped) / static_cast<double>(tokens);
}

}  // namespace

RunLog run_training(const TrainConfig& config, const RewardSpec& reward) {
  config.validate();
  if (config.init_scale == 0.0) return run_training(config, reward, PolicyParams(config.query_count, Vocabulary(config.vocab_size)));
  Rng rng = make_stream(config.seed, {0});
  return run_training(config, reward,
                      PolicyParams::random(config.query_count, Vocabulary(config.vocab_size), config.init_scale, rng));
}

RunLog run_training(const TrainConfig& config, const RewardSpec& reward, PolicyParams initial) {
  config.validate();
  reward.validate(Vocabulary(config.vocab_size));
  if (initial.query_count() != config.query_count || initial.vocab_size() != config.vocab_size)
    throw ConfigError("initial params do not match the configured query count / vocab size");

  RunLog log{config, reward, {}, {}, std::move(initial)};
  PolicyParams& params = log.final_params;
  log.steps.reserve(config.total_steps);
  Rollout batch{params, {}, {}};

  for (std::size_t step = 0; step < config.total_steps; ++step) {
    const bool refresh = step % config.inner_updates == 0;
    const std::size_t rollout = step / config.inner_updates;
    if (refresh) batch = sample_rollout(config, reward, params, rollout);

    Gradient grad(config.query_count, config.vocab_size);
    std::vector<GroupGradient> results;
    results.reserve(batch.groups.size());
    double objective = 0.0;
    for (std::size_t gi = 0; gi < batch.groups.size(); ++gi) {
      results.push_back(config.algorithm == Algorithm::gspo
                            ? gspo_gradient(params, batch.groups[gi], batch.advantages[gi], batch.old_params, config.clip)
                            : grpo_gradient(params, batch.groups[gi], batch.advantages[gi], batch.old_params, config.clip));
      // Each query owns its own logit rows, so the per-query objectives are summed.
      grad.axpy(1.0, results.back().gradient);
      objective += results.back().loss.objective;
    }

    StepMetrics m = measure_step(step, rollout, refresh, batch, results, grad, objective);
    fill_clip_fractions(m, results, config.clip);
    if (!all_finite(m)) throw DivergedError(step, "non-finite step metric");
    log.steps.push_back(m);

    params.logits().axpy(config.learning_rate, grad);
    for (double v : params.logits().values())
      if (!std::isfinite(v)) throw DivergedError(step, "non-finite policy logit after update");
  }
  log.summary = summarize_run(log.steps);
  return log;
}

AlgorithmComparison compare_algorithms(const TrainConfig& config, const RewardSpec& reward) {
  TrainConfig a = config, b = config;
  a.algorithm = Algorithm::gspo;
  b.algorithm = Algorithm::grpo;
  AlgorithmComparison out{run_training(a, reward), run_training(b, reward), {}};
  for (std::size_t i = 0; i < out.gspo.steps.size(); ++i) {
    const auto& x = out.gspo.steps[i];
    const auto& y = out.grpo.steps[i];
    out.rows.push_back({x.step, x.refresh, x.var_log_s, x.var_log_w, y.var_log_s, y.var_log_w});
  }
  return out;
}

RunSummary summarize_run(const std::vector<StepMetrics>& steps) {
  RunSummary s;
  if (steps.empty()) return s;
  s.window = std::max<std::size_t>(1, steps.size() / 10);
  const double k = static_cast<double>(s.window);
  for (std::size_t i = 0; i < s.window; ++i) {
    const auto& first = steps[i];
    const auto& last = steps[steps.size() - 1 - i];
    s.reward_start += first.mean_reward / k;
    s.reward_end += last.mean_reward / k;
    s.ppl_start += first.mean_ppl / k;
    s.ppl_end += last.mean_ppl / k;
    s.h_start += first.mean_h / k;
    s.h_end += last.mean_h / k;
  }
  for (const auto& m : steps) {
    s.mean_frac_clipped += m.frac_clipped;
    s.mean_frac_high += m.frac_high;
    s.mean_frac_low += m.frac_low;
  }
  const double n = static_cast<double>(steps.size());
  s.mean_frac_clipped /= n;
  s.mean_frac_high /= n;
  s.mean_frac_low /= n;
  return s;
}

namespace {

using Field = std::pair<const char*, std::function<double(const StepMetrics&)>>;

const std::vector<Field>& real_fields() {
  static const std::vector<Field> fields = {
      {"objective", [](const StepMetrics& m) { return m.objective; }},
      {"mean_s", [](const StepMetrics& m) { return m.mean_s; }},
      {"max_s", [](const StepMetrics& m) { return m.max_s; }},
      {"min_s", [](const StepMetrics& m) { return m.min_s; }},
      {"mean_delta_h", [](const StepMetrics& m) { return m.mean_delta_h; }},
      {"eq_err_mean", [](const StepMetrics& m) { return m.eq_err_mean; }},
      {"eq_err_max", [](const StepMetrics& m) { return m.eq_err_max; }},
      {"frac_clipped", [](const StepMetrics& m) { return m.frac_clipped; }},
      {"frac_high", [](const StepMetrics& m) { return m.frac_high; }},
      {"frac_low", [](const StepMetrics& m) { return m.frac_low; }},
      {"frac_token_clipped", [](const StepMetrics& m) { return m.frac_token_clipped; }},
      {"mean_reward", [](const StepMetrics& m) { return m.mean_reward; }},
      {"mean_length", [](const StepMetrics& m) { return m.mean_length; }},
      {"mean_ppl", [](const StepMetrics& m) { return m.mean_ppl; }},
      {"mean_h", [](const StepMetrics& m) { return m.mean_h; }},
      {"var_log_s", [](const StepMetrics& m) { return m.var_log_s; }},
      {"var_log_w", [](const StepMetrics& m) { return m.var_log_w; }},
      {"var_s", [](const StepMetrics& m) { return m.var_s; }},
      {"var_w", [](const StepMetrics& m) { return m.var_w; }},
      {"grad_norm", [](const StepMetrics& m) { return m.grad_norm; }},
  };
  return fields;
}

}  // namespace

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c{"step", "rollout", "refresh"};
    for (const auto& f : real_fields()) c.emplace_back(f.first);
    return c;
  }();
  return cols;
}

void write_steps_jsonl(std::ostream& out, const std::vector<StepMetrics>& steps) {
  for (const auto& m : steps) {
    out << "{\"step\":" << m.step << ",\"rollout\":" << m.rollout << ",\"refresh\":" << (m.refresh ? "true" : "false");
    for (const auto& f : real_fields()) out << ",\"" << f.first << "\":" << format_double(f.second(m));
    out << "}\n";
  }
}

void write_steps_csv(std::ostream& out, const std::vector<StepMetrics>& steps) {
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& m : steps) {
    out << m.step << ',' << m.rollout << ',' << (m.refresh ? 1 : 0);
    for (const auto& f : real_fields()) out << ',' << format_double(f.second(m));
    out << '\n';
  }
}

void write_run_header(std::ostream& out, const RunLog& log) {
  const auto& c = log.config;
  nlohmann::ordered_json j;
  j["type"] = "header";
  j["config"] = {
      {"algorithm", to_string(c.algorithm)},
      {"group_size", c.group_size},
      {"eps_low", c.clip.eps_low},
      {"eps_high", c.clip.eps_high},
      {"learning_rate", c.learning_rate},
      {"total_steps", c.total_steps},
      {"inner_updates", c.inner_updates},
      {"max_len", c.max_len},
      {"vocab_size", c.vocab_size},
      {"query_count", c.query_count},
      {"seed", c.seed},
      {"init_scale", c.init_scale},
      {"std_floor", c.std_floor},
  };
  j["reward"] = {{"kind", to_string(log.reward.kind)}, {"target", log.reward.target}, {"scale", log.reward.scale}};
  const auto& s = log.summary;
  j["summary"] = {
      {"steps", log.steps.size()},
      {"window", s.window},
      {"reward_start", s.reward_start},
      {"reward_end", s.reward_end},
      {"ppl_start", s.ppl_start},
      {"ppl_end", s.ppl_end},
      {"h_start", s.h_start},
      {"h_end", s.h_end},
      {"mean_frac_clipped", s.mean_frac_clipped},
      {"mean_frac_high", s.mean_frac_high},
      {"mean_frac_low", s.mean_frac_low},
  };
  out << j.dump(2) << '\n';
}

void write_comparison_csv(std::ostream& out, const std::vector<WeightVarianceRow>& rows) {
  out << "step,refresh,gspo_var_log_s,gspo_var_log_w,grpo_var_log_s,grpo_var_log_w\n";
  for (const auto& r : rows) {
    out << r.step << ',' << (r.refresh ? 1 : 0) << ',' << format_double(r.gspo_var_log_s) << ','
        << format_double(r.gspo_var_log_w) << ',' << format_double(r.grpo_var_log_s) << ','
        << format_double(r.grpo_var_log_w) << '\n';
  }
}

}  // namespace gspo
