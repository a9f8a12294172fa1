#include "gspo/variance_lab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "gspo/errors.hpp"
#include "gspo/numfmt.hpp"
#include "gspo/rng.hpp"

namespace gspo {

const char* to_string(SamplerKind kind) noexcept {
  switch (kind) {
    case SamplerKind::equicorrelated_normal:
      return "equicorrelated_normal";
    case SamplerKind::length_mixture:
      return "length_mixture";
    case SamplerKind::iid_normal:
      break;
  }
  return "iid_normal";
}

SamplerKind parse_sampler_kind(const std::string& text) {
  if (text == "iid" || text == "iid_normal") return SamplerKind::iid_normal;
  if (text == "equicorrelated" || text == "equicorrelated_normal") return SamplerKind::equicorrelated_normal;
  if (text == "length_mixture" || text == "mixture") return SamplerKind::length_mixture;
  throw SpecError("unknown sampler kind '" + text + "'");
}

void SamplerSpec::validate() const {
  if (!std::isfinite(mu_log)) throw SpecError("mu_log must be finite");
  if (!(sigma2_log > 0.0) || !std::isfinite(sigma2_log)) throw SpecError("sigma2_log must be > 0");
  switch (kind) {
    case SamplerKind::iid_normal:
      if (length < 1) throw SpecError("length must be >= 1");
      break;
    case SamplerKind::equicorrelated_normal:
      if (length < 1) throw SpecError("length must be >= 1");
      if (!(corr_rho >= 0.0 && corr_rho < 1.0)) throw SpecError("corr_rho must lie in [0, 1)");
      break;
    case SamplerKind::length_mixture: {
      if (length_dist.empty()) throw SpecError("length mixture needs at least one (length, weight) pair");
      double total = 0.0;
      for (const auto& lw : length_dist) {
        if (lw.length < 1) throw SpecError("mixture lengths must be >= 1");
        if (!(lw.weight > 0.0)) throw SpecError("mixture weights must be > 0");
        total += lw.weight;
      }
      if (std::abs(total - 1.0) > 1e-9) throw SpecError("mixture weights must sum to 1");
      break;
    }
  }
}

double SamplerSpec::mean_length() const {
  if (kind != SamplerKind::length_mixture) return static_cast<double>(length);
  double m = 0.0;
  for (const auto& lw : length_dist) m += lw.weight * static_cast<double>(lw.length);
  return m;
}

double SamplerSpec::mean_inverse_length() const {
  if (kind != SamplerKind::length_mixture) return 1.0 / static_cast<double>(length);
  double m = 0.0;
  for (const auto& lw : length_dist) m += lw.weight / static_cast<double>(lw.length);
  return m;
}

double SamplerSpec::predicted_var_log_s() const {
  switch (kind) {
    case SamplerKind::equicorrelated_normal:
      return sigma2_log * equicorrelated_factor(corr_rho, length) / static_cast<double>(length);
    case SamplerKind::length_mixture:
      return sigma2_log * mean_inverse_length();
    case SamplerKind::iid_normal:
      break;
  }
  return sigma2_log / static_cast<double>(length);
}

double SamplerSpec::expected_inflation() const { return predicted_var_log_s() * mean_length() / sigma2_log; }

double VarianceReport::var_log_s_rel_error() const noexcept {
  return std::abs(var_log_s - predicted_var_log_s) / predicted_var_log_s;
}

double VarianceReport::inflation_rel_error() const noexcept {
  return std::abs(inflation - expected_inflation) / expected_inflation;
}

double equicorrelated_factor(double rho, std::size_t length) {
  if (!(rho >= 0.0 && rho < 1.0)) throw SpecError("correlation must lie in [0, 1)");
  if (length < 1) throw SpecError("length must be >= 1");
  return 1.0 + static_cast<double>(length - 1) * rho;
}

namespace {

// Streaming (count, mean, M2) with pairwise merge.
struct Moments {
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    count += 1.0;
    const double d = x - mean;
    mean += d / count;
    m2 += d * (x - mean);
  }

  void merge(const Moments& o) {
    if (o.count == 0.0) return;
    if (count == 0.0) {
      *this = o;
      return;
    }
    const double n = count + o.count;
    const double d = o.mean - mean;
    mean += d * o.count / n;
    m2 += o.m2 + d * d * count * o.count / n;
    count = n;
  }

  double variance() const { return count > 1.0 ? m2 / (count - 1.0) : 0.0; }
};

struct BatchResult {
  Moments tokens;
  Moments log_s;
};

class TokenSampler {
 public:
  explicit TokenSampler(const SamplerSpec& spec) : spec_(spec), sigma_(std::sqrt(spec.sigma2_log)) {
    if (spec.kind == SamplerKind::length_mixture) {
      std::vector<double> w;
      for (const auto& lw : spec.length_dist) w.push_back(lw.weight);
      pick_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
    }
    std::size_t max_len = spec.length;
    for (const auto& lw : spec.length_dist) max_len = std::max(max_len, lw.length);
    buf_.resize(max_len);
  }

  // Fills buf_ with one sequence of token log-ratios and returns its length.
  std::size_t draw(Rng& rng) {
    std::size_t len = spec_.length;
    double shared = 0.0, idio = sigma_;
    if (spec_.kind == SamplerKind::length_mixture) {
      len = spec_.length_dist[pick_(rng)].length;
    } else if (spec_.kind == SamplerKind::equicorrelated_normal) {
      shared = sigma_ * std::sqrt(spec_.corr_rho) * normal_(rng);
      idio = sigma_ * std::sqrt(1.0 - spec_.corr_rho);
    }
    for (std::size_t t = 0; t < len; ++t) buf_[t] = spec_.mu_log + shared + idio * normal_(rng);
    return len;
  }

  std::span<const double> tokens(std::size_t len) const { return {buf_.data(), len}; }

 private:
  const SamplerSpec& spec_;
  double sigma_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::discrete_distribution<std::size_t> pick_;
  std::vector<double> buf_;
};

BatchResult run_batch(const SamplerSpec& spec, std::size_t count, std::uint64_t seed, std::size_t batch) {
  Rng rng = make_stream(seed, {static_cast<std::uint64_t>(batch)});
  TokenSampler sampler(spec);
  BatchResult out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = sampler.draw(rng);
    const auto xs = sampler.tokens(len);
    Moments seq;
    double sum = 0.0;
    for (double x : xs) sum += x;
    seq.count = static_cast<double>(len);
    seq.mean = sum / seq.count;
    for (double x : xs) seq.m2 += (x - seq.mean) * (x - seq.mean);
    out.tokens.merge(seq);
    out.log_s.push(seq.mean);
  }
  return out;
}

double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

double std_error_of(const std::vector<double>& xs) {
  Moments m;
  for (double x : xs) m.push(x);
  return std::sqrt(m.variance() / m.count);
}

}  // namespace

VarianceReport simulate_log_s(const SamplerSpec& spec, std::size_t n, std::uint64_t seed, std::size_t batches,
                              std::size_t min_samples) {
  spec.validate();
  if (n < std::max<std::size_t>(min_samples, 4)) throw SpecError("need at least " + std::to_string(min_samples) + " samples");
  if (batches < 2 || batches > n / 2) throw SpecError("batch count must lie in [2, n/2]");

  std::vector<BatchResult> results(batches);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t b = next++; b < batches; b = next++) {
      const std::size_t count = n / batches + (b < n % batches ? 1 : 0);
      results[b] = run_batch(spec, count, seed, b);
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, batches);
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < threads; ++i) pool.emplace_back(worker);
    worker();
  }

  VarianceReport r;
  r.spec = spec;
  r.n_samples = n;
  r.n_batches = batches;
  Moments tokens, log_s;
  std::vector<double> batch_var_w, batch_var_s, batch_ratio;
  for (const auto& b : results) {
    tokens.merge(b.tokens);
    log_s.merge(b.log_s);
    batch_var_w.push_back(b.tokens.variance());
    batch_var_s.push_back(b.log_s.variance());
    batch_ratio.push_back(batch_var_s.back() / batch_var_w.back());
  }
  r.mean_log_s = log_s.mean;
  r.var_log_w = tokens.variance();
  r.var_log_s = log_s.variance();
  r.var_log_w_se = std_error_of(batch_var_w);
  r.var_log_s_se = std_error_of(batch_var_s);
  r.predicted_var_log_s = spec.predicted_var_log_s();
  r.reduction_factor = r.var_log_s / r.var_log_w;
  r.reduction_factor_se = std_error_of(batch_ratio);
  r.reduction_factor_batch_mean = mean_of(batch_ratio);
  r.theoretical_factor = 1.0 / spec.mean_length();
  r.inflation = r.reduction_factor / r.theoretical_factor;
  r.inflation_se = r.reduction_factor_se / r.theoretical_factor;
  r.expected_inflation = spec.expected_inflation();
  return r;
}

VarianceReport length_mixture_inflation(std::vector<LengthWeight> length_dist, double sigma2_log, std::size_t n,
                                        std::uint64_t seed, double mu_log) {
  SamplerSpec spec;
  spec.mu_log = mu_log;
  spec.sigma2_log = sigma2_log;
  if (length_dist.size() == 1) {
    spec.kind = SamplerKind::iid_normal;
    spec.length = length_dist.front().length;
  } else {
    spec.kind = SamplerKind::length_mixture;
    spec.length_dist = std::move(length_dist);
  }
  return simulate_log_s(spec, n, seed);
}

DeltaBridgeReport delta_bridge(std::span<const double> log_s_samples) {
  if (log_s_samples.size() < kMinSamples) throw SpecError("need at least " + std::to_string(kMinSamples) + " samples");
  Moments logs, lin;
  for (double x : log_s_samples) {
    logs.push(x);
    lin.push(std::exp(x));
  }
  DeltaBridgeReport r;
  r.n_samples = log_s_samples.size();
  r.mean_log_s = logs.mean;
  r.var_log_s = logs.variance();
  r.direct_var_s = lin.variance();
  r.bridged_var_s = std::exp(2.0 * r.mean_log_s) * r.var_log_s;
  r.relative_gap = r.direct_var_s > 0.0 ? std::abs(r.direct_var_s - r.bridged_var_s) / r.direct_var_s : 0.0;
  return r;
}

double lognormal_variance(double mu, double v) {
  if (!(v >= 0.0)) throw SpecError("variance of log s must be >= 0");
  return std::expm1(v) * std::exp(2.0 * mu + v);
}

std::vector<double> sample_log_s_normal(double mu, double v, std::size_t n, std::uint64_t seed) {
  if (!(v >= 0.0)) throw SpecError("variance must be >= 0");
  Rng rng = make_stream(seed, {0x6c6f676eULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(v);
  std::vector<double> out(n);
  for (double& x : out) x = mu + sd * normal(rng);
  return out;
}

GapReport gap_decomposition(double observed_factor, double theoretical_factor, double corr_component,
                            double length_component) {
  if (!(observed_factor > 0.0 && theoretical_factor > 0.0 && corr_component > 0.0 && length_component > 0.0))
    throw SpecError("gap decomposition inputs must all be > 0");
  GapReport g;
  g.observed_over_theory = observed_factor / theoretical_factor;
  g.explained = corr_component * length_component;
  g.residual = observed_factor / (theoretical_factor * corr_component * length_component);
  return g;
}

std::string format_length_dist(const std::vector<LengthWeight>& dist) {
  std::string out;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(dist[i].length) + ':' + format_double(dist[i].weight);
  }
  return out;
}

std::vector<LengthWeight> parse_length_dist(const std::string& text) {
  std::vector<LengthWeight> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw SpecError("length distribution entries look like LENGTH:WEIGHT");
    try {
      const double len = parse_double(item.substr(0, colon));
      if (!(len >= 1.0) || len != std::floor(len)) throw SpecError("mixture lengths must be positive integers");
      out.push_back({static_cast<std::size_t>(len), parse_double(item.substr(colon + 1))});
    } catch (const std::invalid_argument& e) {
      throw SpecError(std::string("length distribution: ") + e.what());
    }
  }
  if (out.empty()) throw SpecError("empty length distribution");
  return out;
}

void write_variance_csv_header(std::ostream& out) {
  out << "kind,mu_log,sigma2_log,corr_rho,length,length_dist,n_samples,n_batches,mean_log_s,"
         "var_log_w,var_log_w_se,var_log_s,var_log_s_se,predicted_var_log_s,reduction_factor,"
         "reduction_factor_se,reduction_factor_batch_mean,theoretical_factor,inflation,inflation_se,"
         "expected_inflation\n";
}

void write_variance_csv_row(std::ostream& out, const VarianceReport& r) {
  const auto& s = r.spec;
  const bool mixture = s.kind == SamplerKind::length_mixture;
  out << to_string(s.kind) << ',' << format_double(s.mu_log) << ',' << format_double(s.sigma2_log) << ','
      << format_double(s.corr_rho) << ',' << (mixture ? std::string() : std::to_string(s.length)) << ','
      << (mixture ? format_length_dist(s.length_dist) : std::string()) << ',' << r.n_samples << ',' << r.n_batches
      << ',' << format_double(r.mean_log_s) << ',' << format_double(r.var_log_w) << ','
      << format_double(r.var_log_w_se) << ',' << format_double(r.var_log_s) << ',' << format_double(r.var_log_s_se)
      << ',' << format_double(r.predicted_var_log_s) << ',' << format_double(r.reduction_factor) << ','
      << format_double(r.reduction_factor_se) << ',' << format_double(r.reduction_factor_batch_mean) << ','
      << format_double(r.theoretical_factor) << ',' << format_double(r.inflation) << ','
      << format_double(r.inflation_se) << ',' << format_double(r.expected_inflation) << '\n';
}

}  // namespace gspo
