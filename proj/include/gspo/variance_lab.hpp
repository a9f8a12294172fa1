#pragma once

/**
 * Monte Carlo checks of the log-domain variance law for length-normalized
 * importance ratios.
 *
 * Token log-ratios are Gaussian. For a sequence of length L,
 * log s = mean_t log w_t, so
 *   iid:              Var[log s] = sigma^2 / L
 *   equicorrelated:   Var[log s] = sigma^2 (1 + (L - 1) rho) / L
 *   length mixture:   Var[log s] = sigma^2 E[1/L]
 * The "theoretical factor" is always the idealized 1 / E[L]; the inflation is
 * measured against it and compared with the closed form for the sampler kind.
 *
 * Sampling is split into fixed batches, each with its own counter-derived RNG
 * stream. Batch statistics are merged in batch order, so a report depends only
 * on (spec, n, seed, batches) and never on the number of worker threads.
 * Standard errors come from the spread of the batch estimates (batch means).
 */

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace gspo {

enum class SamplerKind { iid_normal, equicorrelated_normal, length_mixture };

const char* to_string(SamplerKind kind) noexcept;
/// Accepts "iid", "iid_normal", "equicorrelated", "equicorrelated_normal", "length_mixture", "mixture".
SamplerKind parse_sampler_kind(const std::string& text);

struct LengthWeight {
  std::size_t length = 1;
  double weight = 1.0;
};

struct SamplerSpec {
  SamplerKind kind = SamplerKind::iid_normal;
  double mu_log = 0.0;
  double sigma2_log = 1e-2;
  double corr_rho = 0.0;                   // equicorrelated only
  std::vector<LengthWeight> length_dist;   // length_mixture only
  std::size_t length = 1;                  // iid / equicorrelated

  /// Throws SpecError.
  void validate() const;

  double mean_length() const;
  double mean_inverse_length() const;
  /// Closed-form Var[log s] for this spec.
  double predicted_var_log_s() const;
  /// Closed-form Var[log s] / (sigma^2 / E[L]).
  double expected_inflation() const;
};

struct VarianceReport {
  SamplerSpec spec;
  std::size_t n_samples = 0;
  std::size_t n_batches = 0;

  double mean_log_s = 0.0;
  double var_log_w = 0.0;
  double var_log_w_se = 0.0;
  double var_log_s = 0.0;
  double var_log_s_se = 0.0;
  double predicted_var_log_s = 0.0;

  double reduction_factor = 0.0;             // var_log_s / var_log_w, pooled (ratio of means)
  double reduction_factor_se = 0.0;
  double reduction_factor_batch_mean = 0.0;  // mean over batches of the per-batch ratio
  double theoretical_factor = 0.0;           // 1 / E[L]
  double inflation = 0.0;                    // reduction_factor / theoretical_factor
  double inflation_se = 0.0;
  double expected_inflation = 1.0;

  /// |var_log_s - predicted| / predicted
  double var_log_s_rel_error() const noexcept;
  /// |inflation - expected| / expected
  double inflation_rel_error() const noexcept;
};

inline constexpr std::size_t kDefaultBatches = 100;
inline constexpr std::size_t kMinSamples = 10'000;

/// Throws SpecError for an invalid spec, n < min_samples, or fewer than 2 batches / 2 samples per batch.
VarianceReport simulate_log_s(const SamplerSpec& spec, std::size_t n, std::uint64_t seed,
                              std::size_t batches = kDefaultBatches, std::size_t min_samples = kMinSamples);

/// 1 + (L - 1) rho. Throws SpecError unless 0 <= rho < 1 and L >= 1.
double equicorrelated_factor(double rho, std::size_t length);

/// simulate_log_s for a length mixture; a single-length distribution degenerates to the iid case.
VarianceReport length_mixture_inflation(std::vector<LengthWeight> length_dist, double sigma2_log, std::size_t n,
                                        std::uint64_t seed, double mu_log = 0.0);

struct DeltaBridgeReport {
  std::size_t n_samples = 0;
  double mean_log_s = 0.0;
  double var_log_s = 0.0;
  double direct_var_s = 0.0;   // sample variance of exp(log s)
  double bridged_var_s = 0.0;  // exp(2 mean(log s)) var(log s)
  double relative_gap = 0.0;   // |direct - bridged| / direct
};

/// Throws SpecError when fewer than kMinSamples samples are given.
DeltaBridgeReport delta_bridge(std::span<const double> log_s_samples);

/// Exact Var[s] for log s ~ Normal(mu, v). Throws SpecError when v < 0.
double lognormal_variance(double mu, double v);

/// n draws of log s ~ Normal(mu, v).
std::vector<double> sample_log_s_normal(double mu, double v, std::size_t n, std::uint64_t seed);

struct GapReport {
  double observed_over_theory = 0.0;
  double explained = 0.0;  // corr_component * length_component
  double residual = 0.0;   // observed / (theoretical * corr * length)
};

/// Throws SpecError unless every input is > 0.
GapReport gap_decomposition(double observed_factor, double theoretical_factor, double corr_component,
                            double length_component);

/// "100:0.5;900:0.5"
std::string format_length_dist(const std::vector<LengthWeight>& dist);
std::vector<LengthWeight> parse_length_dist(const std::string& text);

void write_variance_csv_header(std::ostream& out);
void write_variance_csv_row(std::ostream& out, const VarianceReport& r);

}  // namespace gspo
