#pragma once

/**
 * Cross-entropy / perplexity chain for one response, and the importance
 * ratios between two policies scoring the same response.
 *
 *   H   = -(1/|y|) log pi(y|x)             nats per token
 *   PPL = exp(H)
 *   log w_t = log pi_new(y_t|.) - log pi_old(y_t|.)
 *   s   = exp(mean_t log w_t)              length-normalized sequence ratio
 *   dH  = H_old - H_new
 *
 * s, PPL_old / PPL_new and exp(dH) are algebraically identical. Each is
 * computed through its own arithmetic so check_equivalence is not a tautology.
 */

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gspo/policy.hpp"

namespace gspo {

struct SequenceScore {
  SeqLogProb log_prob;
  std::size_t length = 0;
  double cross_entropy = 0.0;
  double perplexity = 1.0;
};

struct RatioBundle {
  std::vector<double> token_log_ratios;
  double seq_log_ratio = 0.0;   // log rho = sum_t log w_t
  double norm_log_ratio = 0.0;  // log s = mean_t log w_t
  double s = 1.0;
  double delta_h = 0.0;  // H_old - H_new

  std::size_t length() const noexcept { return token_log_ratios.size(); }
};

struct EquivalenceReport {
  double s = 1.0;
  double ppl_ratio = 1.0;    // PPL_old / PPL_new
  double exp_delta_h = 1.0;  // exp(H_old - H_new)
  double err_ppl = 0.0;      // |s - ppl_ratio|
  double err_entropy = 0.0;  // |s - exp_delta_h|

  double rel_err_ppl() const noexcept { return err_ppl / s; }
  double rel_err_entropy() const noexcept { return err_entropy / s; }
};

/// Batch view of a set of EquivalenceReports, under both aggregation orders:
/// mean/max of per-sequence errors, and the error between batch-averaged quantities.
struct BatchEquivalence {
  std::size_t count = 0;
  double mean_err_ppl = 0.0;
  double max_err_ppl = 0.0;
  double mean_err_entropy = 0.0;
  double max_err_entropy = 0.0;
  double max_rel_err = 0.0;  // over both error kinds
  double mean_s = 0.0;
  double batch_err_ppl = 0.0;      // |mean(s) - mean(ppl_ratio)|
  double batch_err_entropy = 0.0;  // |mean(s) - mean(exp_delta_h)|
};

struct EntropyInterval {
  double lower = 0.0;  // log(1 - eps_low)
  double upper = 0.0;  // log(1 + eps_high)

  /// Closed interval; boundary values count as inside.
  bool contains(double delta_h) const noexcept { return delta_h >= lower && delta_h <= upper; }
};

/// Scores externally supplied per-token log-probs. Throws DegenerateSequence on empty input
/// and std::invalid_argument if any entry is positive or non-finite.
SequenceScore score_log_probs(std::vector<double> per_token);

SequenceScore score(const PolicyParams& params, const TokenSequence& seq);

/// Throws ScoreMismatch if the two scores have different lengths.
RatioBundle ratio_bundle(const SequenceScore& new_score, const SequenceScore& old_score);

EquivalenceReport check_equivalence(const RatioBundle& bundle, const SequenceScore& new_score,
                                    const SequenceScore& old_score);

BatchEquivalence summarize_equivalence(std::span<const EquivalenceReport> reports);

/// [log(1 - eps_low), log(1 + eps_high)]. Throws InvalidClip unless 0 <= eps_low < 1 and eps_high >= 0.
EntropyInterval entropy_clip_bounds(double eps_low, double eps_high);

/// One line of a trainer log: {"seq_id", "tokens_len", "new_logprobs": [...], "old_logprobs": [...]}.
struct LogProbRecord {
  std::string seq_id;
  std::size_t tokens_len = 0;
  std::vector<double> new_logprobs;
  std::vector<double> old_logprobs;
};

/// Parses JSON-lines records; blank lines are skipped. Throws ConfigError with the line number.
std::vector<LogProbRecord> read_logprob_records(std::istream& in);

EquivalenceReport analyze_record(const LogProbRecord& record);

}  // namespace gspo
