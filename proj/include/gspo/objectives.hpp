#pragma once

/**
 * Group-relative advantages and the clipped GRPO / GSPO surrogates.
 *
 *   GRPO:  J = (1/G) sum_i (1/|y_i|) sum_t min(w_it A_i, clip(w_it) A_i)
 *   GSPO:  J = (1/G) sum_i min(s_i A_i, clip(s_i) A_i)
 *
 * with clip(x) = min(max(x, 1 - eps_low), 1 + eps_high). The gradients are
 * exact: a response (GSPO) or token (GRPO) whose min picks the clipped branch
 * contributes nothing, since that branch is constant in theta.
 */

#include <cstddef>
#include <span>
#include <vector>

#include "gspo/info_metrics.hpp"
#include "gspo/policy.hpp"

namespace gspo {

inline constexpr double kDefaultStdFloor = 1e-8;

struct ClipConfig {
  double eps_low = 3e-4;
  double eps_high = 4e-4;

  /// Throws InvalidClip unless 0 <= eps_low < 1 and eps_high >= 0.
  void validate() const;

  double lower() const noexcept { return 1.0 - eps_low; }
  double upper() const noexcept { return 1.0 + eps_high; }
  double clip(double ratio) const noexcept;
};

struct AdvantageSet {
  std::vector<double> advantages;
  double group_mean = 0.0;
  double group_std = 0.0;  // population std

  bool degenerate() const noexcept;
  std::size_t size() const noexcept { return advantages.size(); }
};

/// (r_i - mean) / population-std, or all zeros when std < std_floor. Throws GroupTooSmall for G < 2.
AdvantageSet group_advantages(std::span<const double> rewards, double std_floor = kDefaultStdFloor);

enum class ClipFlag { none, high, low };

const char* to_string(ClipFlag flag) noexcept;

/// Band test: high if ratio > 1 + eps_high, low if ratio < 1 - eps_low. Edges are unclipped.
ClipFlag clip_flag(double ratio, const ClipConfig& clip) noexcept;

/// True when min(ratio * adv, clip(ratio) * adv) strictly selects the clipped (constant) branch.
bool clip_active(double ratio, double advantage, const ClipConfig& clip) noexcept;

struct LossReport {
  double objective = 0.0;
  std::vector<double> terms;                         // per response
  std::vector<ClipFlag> flags;                       // GSPO: per response
  std::vector<std::vector<ClipFlag>> token_flags;    // GRPO: per response, per token
};

struct ClipStats {
  double frac_clipped = 0.0;
  double frac_high = 0.0;
  double frac_low = 0.0;
};

LossReport gspo_objective(std::span<const double> s_values, const AdvantageSet& adv, const ClipConfig& clip);

LossReport grpo_objective(const std::vector<std::vector<double>>& token_ratios, const AdvantageSet& adv,
                          const ClipConfig& clip);

/// Fractions of responses whose GSPO clip flag is high / low.
ClipStats clip_stats(std::span<const double> s_values, const AdvantageSet& adv, const ClipConfig& clip);

/// clip(s_i) for each response: the weight after clipping, bounded to the band.
std::vector<double> clipped_weights(std::span<const double> s_values, const ClipConfig& clip);

struct Group {
  QueryId query;
  std::vector<TokenSequence> responses;
  std::vector<double> rewards;

  std::size_t size() const noexcept { return responses.size(); }
  /// Throws GroupTooSmall for G < 2 and std::invalid_argument for misaligned lists or foreign queries.
  void validate() const;
};

/// Everything one gradient evaluation learns about a group.
struct GroupGradient {
  Gradient gradient;
  LossReport loss;
  std::vector<SequenceScore> new_scores;
  std::vector<SequenceScore> old_scores;
  std::vector<RatioBundle> bundles;

  std::vector<double> s_values() const;
};

GroupGradient gspo_gradient(const PolicyParams& params, const Group& group, const AdvantageSet& adv,
                            const PolicyParams& old_params, const ClipConfig& clip);
GroupGradient grpo_gradient(const PolicyParams& params, const Group& group, const AdvantageSet& adv,
                            const PolicyParams& old_params, const ClipConfig& clip);

/// Convenience overloads: advantages from group.rewards with the default std floor.
GroupGradient gspo_gradient(const PolicyParams& params, const Group& group, const PolicyParams& old_params,
                            const ClipConfig& clip);
GroupGradient grpo_gradient(const PolicyParams& params, const Group& group, const PolicyParams& old_params,
                            const ClipConfig& clip);

/// Objective value only, recomputed from scratch through the policy; used for finite differences.
double gspo_value(const PolicyParams& params, const Group& group, const AdvantageSet& adv,
                  const PolicyParams& old_params, const ClipConfig& clip);
double grpo_value(const PolicyParams& params, const Group& group, const AdvantageSet& adv,
                  const PolicyParams& old_params, const ClipConfig& clip);

}  // namespace gspo
