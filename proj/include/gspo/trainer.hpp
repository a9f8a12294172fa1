#pragma once

/**
 * Toy GSPO / GRPO training loop with full per-step instrumentation.
 *
 * Every `inner_updates` steps the loop freezes theta_old <- theta and samples
 * one group of G responses for each query under theta_old. The following
 * steps reuse that batch off-policy. Each step records metrics at the current
 * theta, then applies plain gradient ascent theta <- theta + lr * grad J,
 * where J is the sum of the per-query group objectives.
 *
 * All randomness comes from counter-derived streams keyed by
 * (seed, rollout, query, response), so a run is a pure function of its config.
 */

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gspo/objectives.hpp"
#include "gspo/policy.hpp"

namespace gspo {

enum class Algorithm { gspo, grpo };

const char* to_string(Algorithm a) noexcept;
Algorithm parse_algorithm(const std::string& text);

enum class RewardKind { target_token_count, pattern_match };

const char* to_string(RewardKind k) noexcept;
RewardKind parse_reward_kind(const std::string& text);

struct RewardSpec {
  RewardKind kind = RewardKind::target_token_count;
  std::vector<TokenId> target{1};  // one token for target_token_count, a pattern otherwise
  double scale = 1.0;

  /// Throws ConfigError.
  void validate(const Vocabulary& vocab) const;
};

/// target_token_count: scale * (occurrences of target) / |y|.
/// pattern_match: scale if target occurs as a contiguous run in y, else 0.
double compute_reward(const RewardSpec& spec, const TokenSequence& seq);

struct TrainConfig {
  Algorithm algorithm = Algorithm::gspo;
  std::size_t group_size = 8;
  ClipConfig clip{};
  double learning_rate = 0.05;
  std::size_t total_steps = 500;
  std::size_t inner_updates = 4;
  std::size_t max_len = 32;
  int vocab_size = 8;
  int query_count = 4;
  std::uint64_t seed = 0;
  double init_scale = 0.0;  // std of the initial logits; 0 starts from the uniform policy
  double std_floor = kDefaultStdFloor;

  /// Throws ConfigError.
  void validate() const;
};

struct StepMetrics {
  std::size_t step = 0;
  std::size_t rollout = 0;
  bool refresh = false;  // theta_old was refreshed (and the batch resampled) at this step

  double objective = 0.0;
  double mean_s = 1.0;
  double max_s = 1.0;
  double min_s = 1.0;
  double mean_delta_h = 0.0;
  double eq_err_mean = 0.0;
  double eq_err_max = 0.0;
  double frac_clipped = 0.0;
  double frac_high = 0.0;
  double frac_low = 0.0;
  double frac_token_clipped = 0.0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
  double mean_ppl = 1.0;
  double mean_h = 0.0;
  double var_log_s = 0.0;  // population variance over responses in the batch
  double var_log_w = 0.0;  // population variance over all tokens in the batch
  double var_s = 0.0;
  double var_w = 0.0;
  double grad_norm = 0.0;
};

struct RunSummary {
  std::size_t window = 1;  // steps averaged at each end
  double reward_start = 0.0;
  double reward_end = 0.0;
  double ppl_start = 0.0;
  double ppl_end = 0.0;
  double h_start = 0.0;
  double h_end = 0.0;
  double mean_frac_clipped = 0.0;
  double mean_frac_high = 0.0;
  double mean_frac_low = 0.0;
};

struct RunLog {
  TrainConfig config;
  RewardSpec reward;
  std::vector<StepMetrics> steps;
  RunSummary summary;
  PolicyParams final_params{1, Vocabulary(2)};
};

/// Throws ConfigError for an invalid config and DivergedError on any non-finite metric or parameter.
RunLog run_training(const TrainConfig& config, const RewardSpec& reward);

/// Same run, with the initial params supplied by the caller.
RunLog run_training(const TrainConfig& config, const RewardSpec& reward, PolicyParams initial);

struct WeightVarianceRow {
  std::size_t step = 0;
  bool refresh = false;
  double gspo_var_log_s = 0.0;
  double gspo_var_log_w = 0.0;
  double grpo_var_log_s = 0.0;
  double grpo_var_log_w = 0.0;
};

struct AlgorithmComparison {
  RunLog gspo;
  RunLog grpo;
  std::vector<WeightVarianceRow> rows;
};

/// Runs both algorithms from the same seed and initial params.
AlgorithmComparison compare_algorithms(const TrainConfig& config, const RewardSpec& reward);

RunSummary summarize_run(const std::vector<StepMetrics>& steps);

/// One StepMetrics JSON object per line.
void write_steps_jsonl(std::ostream& out, const std::vector<StepMetrics>& steps);
/// Config echo and summary as a single JSON object.
void write_run_header(std::ostream& out, const RunLog& log);
/// CSV with the column order of csv_columns().
void write_steps_csv(std::ostream& out, const std::vector<StepMetrics>& steps);
const std::vector<std::string>& csv_columns();
void write_comparison_csv(std::ostream& out, const std::vector<WeightVarianceRow>& rows);

}  // namespace gspo
