#include "gspo/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gspo/errors.hpp"

namespace gspo {

void ClipConfig::validate() const {
  if (!(eps_low >= 0.0 && eps_low < 1.0)) throw InvalidClip("eps_low must lie in [0, 1)");
  if (!(eps_high >= 0.0)) throw InvalidClip("eps_high must be >= 0");
}

double ClipConfig::clip(double ratio) const noexcept { return std::min(std::max(ratio, lower()), upper()); }

bool AdvantageSet::degenerate() const noexcept {
  return std::all_of(advantages.begin(), advantages.end(), [](double a) { return a == 0.0; });
}

AdvantageSet group_advantages(std::span<const double> rewards, double std_floor) {
  if (rewards.size() < 2) throw GroupTooSmall("a group needs at least 2 responses, got " + std::to_string(rewards.size()));
  const double n = static_cast<double>(rewards.size());
  AdvantageSet out;
  for (double r : rewards) out.group_mean += r;
  out.group_mean /= n;
  double m2 = 0.0;
  for (double r : rewards) m2 += (r - out.group_mean) * (r - out.group_mean);
  out.group_std = std::sqrt(m2 / n);
  out.advantages.assign(rewards.size(), 0.0);
  if (out.group_std >= std_floor) {
    for (std::size_t i = 0; i < rewards.size(); ++i) out.advantages[i] = (rewards[i] - out.group_mean) / out.group_std;
  }
  return out;
}

const char* to_string(ClipFlag flag) noexcept {
  switch (flag) {
    case ClipFlag::high:
      return "high";
    case ClipFlag::low:
      return "low";
    case ClipFlag::none:
      break;
  }
  return "none";
}

ClipFlag clip_flag(double ratio, const ClipConfig& clip) noexcept {
  if (ratio > clip.upper()) return ClipFlag::high;
  if (ratio < clip.lower()) return ClipFlag::low;
  return ClipFlag::none;
}

bool clip_active(double ratio, double advantage, const ClipConfig& clip) noexcept {
  return clip.clip(ratio) * advantage < ratio * advantage;
}

namespace {

double clipped_term(double ratio, double advantage, const ClipConfig& clip) {
  return std::min(ratio * advantage, clip.clip(ratio) * advantage);
}

void check_aligned(std::size_t n, const AdvantageSet& adv) {
  if (n != adv.size())
    throw std::invalid_argument("ratio list has " + std::to_string(n) + " responses but there are " +
                                std::to_string(adv.size()) + " advantages");
}

double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return xs.empty() ? 0.0 : acc / static_cast<double>(xs.size());
}

}  // namespace

LossReport gspo_objective(std::span<const double> s_values, const AdvantageSet& adv, const ClipConfig& clip) {
  check_aligned(s_values.size(), adv);
  LossReport out;
  out.terms.reserve(s_values.size());
  out.flags.reserve(s_values.size());
  for (std::size_t i = 0; i < s_values.size(); ++i) {
    out.terms.push_back(clipped_term(s_values[i], adv.advantages[i], clip));
    out.flags.push_back(clip_flag(s_values[i], clip));
  }
  out.objective = mean_of(out.terms);
  return out;
}

LossReport grpo_objective(const std::vector<std::vector<double>>& token_ratios, const AdvantageSet& adv,
                          const ClipConfig& clip) {
  check_aligned(token_ratios.size(), adv);
  LossReport out;
  out.terms.reserve(token_ratios.size());
  out.token_flags.reserve(token_ratios.size());
  for (std::size_t i = 0; i < token_ratios.size(); ++i) {
    const auto& ws = token_ratios[i];
    if (ws.empty()) throw DegenerateSequence("response " + std::to_string(i) + " has no tokens");
    double acc = 0.0;
    std::vector<ClipFlag> flags;
    flags.reserve(ws.size());
    for (double w : ws) {
      acc += clipped_term(w, adv.advantages[i], clip);
      flags.push_back(clip_flag(w, clip));
    }
    out.terms.push_back(acc / static_cast<double>(ws.size()));
    out.token_flags.push_back(std::move(flags));
  }
  out.objective = mean_of(out.terms);
  return out;
}

ClipStats clip_stats(std::span<const double> s_values, const AdvantageSet& adv, const ClipConfig& clip) {
  check_aligned(s_values.size(), adv);
  ClipStats st;
  if (s_values.empty()) return st;
  std::size_t high = 0, low = 0;
  for (double s : s_values) {
    const auto f = clip_flag(s, clip);
    high += f == ClipFlag::high;
    low += f == ClipFlag::low;
  }
  const double n = static_cast<double>(s_values.size());
  st.frac_high = static_cast<double>(high) / n;
  st.frac_low = static_cast<double>(low) / n;
  st.frac_clipped = static_cast<double>(high + low) / n;
  return st;
}

std::vector<double> clipped_weights(std::span<const double> s_values, const ClipConfig& clip) {
  std::vector<double> out;
  out.reserve(s_values.size());
  for (double s : s_values) out.push_back(clip.clip(s));
  return out;
}

void Group::validate() const {
  if (responses.size() < 2) throw GroupTooSmall("a group needs at least 2 responses");
  if (rewards.size() != responses.size()) throw std::invalid_argument("rewards and responses are not aligned");
  for (const auto& r : responses)
    if (!(r.query == query)) throw std::invalid_argument("response belongs to a different query");
}

std::vector<double> GroupGradient::s_values() const {
  std::vector<double> out;
  out.reserve(bundles.size());
  for (const auto& b : bundles) out.push_back(b.s);
  return out;
}

namespace {

GroupGradient score_group(const PolicyParams& params, const Group& group, const AdvantageSet& adv,
                          const PolicyParams& old_params, const ClipConfig& clip) {
  clip.validate();
  group.validate();
  check_aligned(group.size(), adv);
  GroupGradient out;
  out.gradient = Gradient(params.query_count(), params.vocab_size());
  out.new_scores.reserve(group.size());
  out.old_scores.reserve(group.size());
  out.bundles.reserve(group.size());
  for (const auto& y : group.responses) {
    out.new_scores.push_back(score(params, y));
    out.old_scores.push_back(score(old_params, y));
    out.bundles.push_back(ratio_bundle(out.new_scores.back(), out.old_scores.back()));
  }
  return out;
}

std::vector<std::vector<double>> token_ratios_of(const std::vector<RatioBundle>& bundles) {
  std::vector<std::vector<double>> ws;
  ws.reserve(bundles.size());
  for (const auto& b : bundles) {
    std::vector<double> w;
    w.reserve(b.length());
    for (double lr : b.token_log_ratios) w.push_back(std::exp(lr));
    ws.push_back(std::move(w));
  }
  return ws;
}

// Shared by both algorithms so that for |y| = 1 the two coefficients are bit-identical.
double weight_coefficient(double weight, double advantage, std::size_t length, std::size_t group_size) {
  return weight * advantage / (static_cast<double>(length) * static_cast<double>(group_size));
}

}  // namespace

GroupGradient gspo_gradient(const PolicyParams& params, const Group& group, const AdvantageSet& adv,
                            const PolicyParams& old_params, const ClipConfig& clip) {
  auto out = score_group(params, group, adv, old_params, clip);
  const auto s = out.s_values();
  out.loss = gspo_objective(s, adv, clip);
  for (std::size_t i = 0; i < group.size(); ++i) {
    const double a = adv.advantages[i];
    if (a == 0.0 || clip_active(s[i], a, clip)) continue;
    // d/dtheta (s A) = A s (1/|y|) sum_t grad log pi(y_t | .)
    const double coef = weight_coefficient(s[i], a, group.responses[i].length(), group.size());
    accumulate_grad_log_prob(params, group.responses[i], coef, out.gradient);
  }
  return out;
}

GroupGradient grpo_gradient(const PolicyParams& params, const Group& group, const AdvantageSet& adv,
                            const PolicyParams& old_params, const ClipConfig& clip) {
  auto out = score_group(params, group, adv, old_params, clip);
  const auto ws = token_ratios_of(out.bundles);
  out.loss = grpo_objective(ws, adv, clip);
  for (std::size_t i = 0; i < group.size(); ++i) {
    const double a = adv.advantages[i];
    if (a == 0.0) continue;
    const auto& y = group.responses[i];
    TokenId prev = kBos;
    for (std::size_t t = 0; t < y.length(); ++t) {
      const TokenId tok = y.tokens[t];
      if (!clip_active(ws[i][t], a, clip)) {
        const double coef = weight_coefficient(ws[i][t], a, y.length(), group.size());
        accumulate_grad_token(params, y.query, prev, tok, coef, out.gradient);
      }
      prev = tok;
    }
  }
  return out;
}

GroupGradient gspo_gradient(const PolicyParams& params, const Group& group, const PolicyParams& old_params,
                            const ClipConfig& clip) {
  group.validate();
  return gspo_gradient(params, group, group_advantages(group.rewards), old_params, clip);
}

GroupGradient grpo_gradient(const PolicyParams& params, const Group& group, const PolicyParams& old_params,
                            const ClipConfig& clip) {
  group.validate();
  return grpo_gradient(params, group, group_advantages(group.rewards), old_params, clip);
}

double gspo_value(const PolicyParams& params, const Group& group, const AdvantageSet& adv,
                  const PolicyParams& old_params, const ClipConfig& clip) {
  const auto scored = score_group(params, group, adv, old_params, clip);
  return gspo_objective(scored.s_values(), adv, clip).objective;
}

double grpo_value(const PolicyParams& params, const Group& group, const AdvantageSet& adv,
                  const PolicyParams& old_params, const ClipConfig& clip) {
  const auto scored = score_group(params, group, adv, old_params, clip);
  return grpo_objective(token_ratios_of(scored.bundles), adv, clip).objective;
}

}  // namespace gspo
