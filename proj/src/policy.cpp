#include "gspo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "gspo/errors.hpp"

namespace gspo {

Vocabulary::Vocabulary(int size) : size_(size) {
  if (size < 2) throw std::invalid_argument("vocabulary size must be >= 2, got " + std::to_string(size));
}

LogitTable::LogitTable(int query_count, int vocab_size, double fill)
    : query_count_(query_count), vocab_size_(vocab_size) {
  if (query_count < 1) throw std::invalid_argument("query_count must be >= 1");
  Vocabulary{vocab_size};
  values_.assign(rows() * static_cast<std::size_t>(vocab_size_), fill);
}

std::size_t LogitTable::row_index(QueryId query, TokenId prev) const {
  if (query.id < 0 || query.id >= query_count_)
    throw std::out_of_range("query id " + std::to_string(query.id) + " out of range");
  if (prev != kBos && (prev < 0 || prev >= vocab_size_))
    throw std::out_of_range("previous token " + std::to_string(prev) + " out of range");
  const std::size_t slot = prev == kBos ? static_cast<std::size_t>(vocab_size_) : static_cast<std::size_t>(prev);
  return static_cast<std::size_t>(query.id) * (vocab_size_ + 1) + slot;
}

void LogitTable::axpy(double scale, const LogitTable& other) {
  if (other.query_count_ != query_count_ || other.vocab_size_ != vocab_size_)
    throw std::invalid_argument("logit table shape mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

double LogitTable::l2_norm() const {
  double acc = 0.0;
  for (double v : values_) acc += v * v;
  return std::sqrt(acc);
}

PolicyParams::PolicyParams(int query_count, Vocabulary vocab) : logits_(query_count, vocab.size()) {}

PolicyParams::PolicyParams(LogitTable logits) : logits_(std::move(logits)) {
  for (double v : logits_.values())
    if (!std::isfinite(v)) throw std::invalid_argument("policy logits must be finite");
}

PolicyParams PolicyParams::random(int query_count, Vocabulary vocab, double scale, Rng& rng) {
  LogitTable table(query_count, vocab.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : table.values()) v = scale * normal(rng);
  return PolicyParams(std::move(table));
}

double log_normalizer(std::span<const double> row) {
  const double peak = *std::max_element(row.begin(), row.end());
  double acc = 0.0;
  for (double v : row) acc += std::exp(v - peak);
  return peak + std::log(acc);
}

void validate_sequence(const PolicyParams& params, const TokenSequence& seq) {
  if (seq.tokens.empty()) throw DegenerateSequence("token sequence is empty");
  if (seq.query.id < 0 || seq.query.id >= params.query_count())
    throw std::out_of_range("query id " + std::to_string(seq.query.id) + " out of range");
  for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
    const TokenId tok = seq.tokens[t];
    if (tok < 0 || tok >= params.vocab_size())
      throw std::out_of_range("token id " + std::to_string(tok) + " out of range at position " + std::to_string(t));
    if (tok == Vocabulary::eos_id && t + 1 != seq.tokens.size())
      throw std::invalid_argument("eos may only appear as the final token");
  }
}

double token_log_prob(const PolicyParams& params, QueryId query, TokenId prev, TokenId next) {
  if (next < 0 || next >= params.vocab_size())
    throw std::out_of_range("next token " + std::to_string(next) + " out of range");
  const auto row = params.logits().row(query, prev);
  return row[static_cast<std::size_t>(next)] - log_normalizer(row);
}

SeqLogProb sequence_log_prob(const PolicyParams& params, const TokenSequence& seq) {
  validate_sequence(params, seq);
  SeqLogProb out;
  out.per_token.reserve(seq.length());
  TokenId prev = kBos;
  for (TokenId tok : seq.tokens) {
    const double lp = token_log_prob(params, seq.query, prev, tok);
    out.per_token.push_back(lp);
    out.total += lp;
    prev = tok;
  }
  return out;
}

TokenSequence sample_sequence(const PolicyParams& params, QueryId query, std::size_t max_len, Rng& rng) {
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  if (query.id < 0 || query.id >= params.query_count()) throw std::out_of_range("query id out of range");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  TokenSequence seq{query, {}};
  seq.tokens.reserve(max_len);
  TokenId prev = kBos;
  while (seq.tokens.size() < max_len) {
    const auto row = params.logits().row(query, prev);
    // Gumbel-max: argmax(logit + G), G = -log(-log U), U in (0, 1).
    TokenId best = 0;
    double best_key = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < row.size(); ++k) {
      double u = uniform(rng);
      while (u <= 0.0) u = uniform(rng);
      const double key = row[k] - std::log(-std::log(u));
      if (key > best_key) {
        best_key = key;
        best = static_cast<TokenId>(k);
      }
    }
    seq.tokens.push_back(best);
    if (best == Vocabulary::eos_id) break;
    prev = best;
  }
  return seq;
}

void accumulate_grad_token(const PolicyParams& params, QueryId query, TokenId prev, TokenId next, double scale,
                           Gradient& out) {
  const std::size_t r = params.logits().row_index(query, prev);
  const auto row = params.logits().row_at(r);
  auto g = out.row_at(r);
  const double lse = log_normalizer(row);
  for (std::size_t k = 0; k < row.size(); ++k) g[k] -= scale * std::exp(row[k] - lse);
  g[static_cast<std::size_t>(next)] += scale;
}

void accumulate_grad_log_prob(const PolicyParams& params, const TokenSequence& seq, double scale, Gradient& out) {
  validate_sequence(params, seq);
  TokenId prev = kBos;
  for (TokenId tok : seq.tokens) {
    accumulate_grad_token(params, seq.query, prev, tok, scale, out);
    prev = tok;
  }
}

Gradient grad_sequence_log_prob(const PolicyParams& params, const TokenSequence& seq) {
  Gradient g(params.query_count(), params.vocab_size());
  accumulate_grad_log_prob(params, seq, 1.0, g);
  return g;
}

}  // namespace gspo
