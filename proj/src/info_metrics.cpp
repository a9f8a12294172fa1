#include "gspo/info_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "gspo/errors.hpp"

namespace gspo {

SequenceScore score_log_probs(std::vector<double> per_token) {
  if (per_token.empty()) throw DegenerateSequence("cannot score a length-0 sequence");
  SequenceScore out;
  double total = 0.0;
  for (double lp : per_token) {
    if (!std::isfinite(lp) || lp > 0.0) throw std::invalid_argument("log-probabilities must be finite and <= 0");
    total += lp;
  }
  out.length = per_token.size();
  out.log_prob.per_token = std::move(per_token);
  out.log_prob.total = total;
  out.cross_entropy = -total / static_cast<double>(out.length);
  out.perplexity = std::exp(out.cross_entropy);
  return out;
}

SequenceScore score(const PolicyParams& params, const TokenSequence& seq) {
  if (seq.tokens.empty()) throw DegenerateSequence("cannot score a length-0 sequence");
  return score_log_probs(sequence_log_prob(params, seq).per_token);
}

RatioBundle ratio_bundle(const SequenceScore& new_score, const SequenceScore& old_score) {
  const auto& fresh = new_score.log_prob.per_token;
  const auto& stale = old_score.log_prob.per_token;
  if (fresh.size() != stale.size() || new_score.length != old_score.length)
    throw ScoreMismatch("scores cover sequences of different length (" + std::to_string(fresh.size()) + " vs " +
                        std::to_string(stale.size()) + ")");
  if (fresh.empty()) throw DegenerateSequence("cannot form ratios for a length-0 sequence");

  RatioBundle b;
  b.token_log_ratios.resize(fresh.size());
  for (std::size_t t = 0; t < fresh.size(); ++t) {
    b.token_log_ratios[t] = fresh[t] - stale[t];
    b.seq_log_ratio += b.token_log_ratios[t];
  }
  b.norm_log_ratio = b.seq_log_ratio / static_cast<double>(fresh.size());
  b.s = std::exp(b.norm_log_ratio);
  b.delta_h = old_score.cross_entropy - new_score.cross_entropy;
  return b;
}

EquivalenceReport check_equivalence(const RatioBundle& bundle, const SequenceScore& new_score,
                                    const SequenceScore& old_score) {
  EquivalenceReport r;
  r.s = bundle.s;
  r.ppl_ratio = old_score.perplexity / new_score.perplexity;
  r.exp_delta_h = std::exp(old_score.cross_entropy - new_score.cross_entropy);
  r.err_ppl = std::abs(r.s - r.ppl_ratio);
  r.err_entropy = std::abs(r.s - r.exp_delta_h);
  return r;
}

BatchEquivalence summarize_equivalence(std::span<const EquivalenceReport> reports) {
  BatchEquivalence b;
  b.count = reports.size();
  if (reports.empty()) return b;
  double sum_ppl_ratio = 0.0, sum_exp_dh = 0.0;
  for (const auto& r : reports) {
    b.mean_err_ppl += r.err_ppl;
    b.mean_err_entropy += r.err_entropy;
    b.max_err_ppl = std::max(b.max_err_ppl, r.err_ppl);
    b.max_err_entropy = std::max(b.max_err_entropy, r.err_entropy);
    b.max_rel_err = std::max({b.max_rel_err, r.rel_err_ppl(), r.rel_err_entropy()});
    b.mean_s += r.s;
    sum_ppl_ratio += r.ppl_ratio;
    sum_exp_dh += r.exp_delta_h;
  }
  const double n = static_cast<double>(reports.size());
  b.mean_err_ppl /= n;
  b.mean_err_entropy /= n;
  b.mean_s /= n;
  b.batch_err_ppl = std::abs(b.mean_s - sum_ppl_ratio / n);
  b.batch_err_entropy = std::abs(b.mean_s - sum_exp_dh / n);
  return b;
}

EntropyInterval entropy_clip_bounds(double eps_low, double eps_high) {
  if (!(eps_low >= 0.0 && eps_low < 1.0))
    throw InvalidClip("eps_low must lie in [0, 1), got " + std::to_string(eps_low));
  if (!(eps_high >= 0.0)) throw InvalidClip("eps_high must be >= 0, got " + std::to_string(eps_high));
  // + 0.0 turns log1p(-0.0) into +0 so eps_low = 0 does not print as -0
  return {std::log1p(-eps_low) + 0.0, std::log1p(eps_high)};
}

std::vector<LogProbRecord> read_logprob_records(std::istream& in) {
  std::vector<LogProbRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LogProbRecord rec;
      const auto& id = j.at("seq_id");
      rec.seq_id = id.is_string() ? id.get<std::string>() : id.dump();
      rec.tokens_len = j.at("tokens_len").get<std::size_t>();
      rec.new_logprobs = j.at("new_logprobs").get<std::vector<double>>();
      rec.old_logprobs = j.at("old_logprobs").get<std::vector<double>>();
      if (rec.new_logprobs.size() != rec.tokens_len || rec.old_logprobs.size() != rec.tokens_len)
        throw ConfigError("tokens_len does not match the log-prob arrays");
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("log-prob record line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("log-prob record line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

EquivalenceReport analyze_record(const LogProbRecord& record) {
  const auto fresh = score_log_probs(record.new_logprobs);
  const auto stale = score_log_probs(record.old_logprobs);
  return check_equivalence(ratio_bundle(fresh, stale), fresh, stale);
}

}  // namespace gspo
