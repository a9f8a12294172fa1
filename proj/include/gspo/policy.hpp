#pragma once

/**
 * Order-1 tabular autoregressive softmax policy.
 *
 * pi(y_t | x, y_<t) = softmax(logits[query][prev][:])[y_t], where prev is the
 * previous token or the BOS row for t = 0. Token 0 is end-of-sequence; when
 * present it is always the final token and counts toward |y|.
 *
 * All scoring is done in nats through log-sum-exp; probabilities are never
 * formed. Sampling uses the Gumbel-max trick so it stays in the log domain too.
 */

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gspo/rng.hpp"

namespace gspo {

using TokenId = std::int32_t;

/// Marker for the "no previous token" row. Not a member of the vocabulary.
inline constexpr TokenId kBos = -1;

struct Vocabulary {
  static constexpr TokenId eos_id = 0;

  explicit Vocabulary(int size);

  int size() const noexcept { return size_; }

 private:
  int size_;
};

struct QueryId {
  int id = 0;
  friend bool operator==(QueryId, QueryId) = default;
};

struct TokenSequence {
  QueryId query;
  std::vector<TokenId> tokens;

  std::size_t length() const noexcept { return tokens.size(); }
};

struct SeqLogProb {
  std::vector<double> per_token;
  double total = 0.0;
};

/// Dense gradient table with the same (query, prev, next) layout as the logits.
class LogitTable {
 public:
  LogitTable() = default;
  LogitTable(int query_count, int vocab_size, double fill = 0.0);

  int query_count() const noexcept { return query_count_; }
  int vocab_size() const noexcept { return vocab_size_; }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(query_count_) * (vocab_size_ + 1); }

  /// Flat row index for (query, prev); prev == kBos maps to the last row of the query block.
  std::size_t row_index(QueryId query, TokenId prev) const;

  std::span<double> row(QueryId query, TokenId prev) { return row_at(row_index(query, prev)); }
  std::span<const double> row(QueryId query, TokenId prev) const { return row_at(row_index(query, prev)); }
  std::span<double> row_at(std::size_t r) { return {values_.data() + r * vocab_size_, static_cast<std::size_t>(vocab_size_)}; }
  std::span<const double> row_at(std::size_t r) const {
    return {values_.data() + r * vocab_size_, static_cast<std::size_t>(vocab_size_)};
  }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// this += scale * other
  void axpy(double scale, const LogitTable& other);
  double l2_norm() const;

  friend bool operator==(const LogitTable&, const LogitTable&) = default;

 private:
  int query_count_ = 0;
  int vocab_size_ = 0;
  std::vector<double> values_;
};

using Gradient = LogitTable;

class PolicyParams {
 public:
  PolicyParams(int query_count, Vocabulary vocab);
  PolicyParams(LogitTable logits);

  /// Logits drawn iid Normal(0, scale^2).
  static PolicyParams random(int query_count, Vocabulary vocab, double scale, Rng& rng);

  int query_count() const noexcept { return logits_.query_count(); }
  Vocabulary vocab() const noexcept { return Vocabulary(logits_.vocab_size()); }
  int vocab_size() const noexcept { return logits_.vocab_size(); }

  const LogitTable& logits() const noexcept { return logits_; }
  LogitTable& logits() noexcept { return logits_; }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  LogitTable logits_;
};

/// log-sum-exp of a row, shifted by its maximum.
double log_normalizer(std::span<const double> row);

/// Throws std::invalid_argument / std::out_of_range when seq breaks the TokenSequence invariants.
void validate_sequence(const PolicyParams& params, const TokenSequence& seq);

double token_log_prob(const PolicyParams& params, QueryId query, TokenId prev, TokenId next);

SeqLogProb sequence_log_prob(const PolicyParams& params, const TokenSequence& seq);

TokenSequence sample_sequence(const PolicyParams& params, QueryId query, std::size_t max_len, Rng& rng);

/// Accumulates scale * grad_theta log pi(next | query, prev) into out.
void accumulate_grad_token(const PolicyParams& params, QueryId query, TokenId prev, TokenId next, double scale,
                           Gradient& out);

/// Accumulates scale * grad_theta log pi(seq) into out.
void accumulate_grad_log_prob(const PolicyParams& params, const TokenSequence& seq, double scale, Gradient& out);

Gradient grad_sequence_log_prob(const PolicyParams& params, const TokenSequence& seq);

}  // namespace gspo
