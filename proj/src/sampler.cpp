#include "stts/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace stts {

namespace {

double log_sum_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> stable_softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

// Walk a categorical distribution restricted to `support` (whose mass is `mass`).
std::size_t draw_from(std::span<const double> p, std::span<const std::size_t> support, double mass, Rng& rng) {
  const double r = rng.uniform() * mass;
  double acc = 0.0;
  for (std::size_t idx : support) {
    acc += p[idx];
    if (r < acc) return idx;
  }
  // Rounding left r at the top edge.
  for (auto it = support.rbegin(); it != support.rend(); ++it) {
    if (p[*it] > 0.0) return *it;
  }
  return support.front();
}

}  // namespace

JointLogits::JointLogits(std::size_t d_bins, std::size_t n_vocab, std::vector<double> values)
    : d_bins_(d_bins), n_vocab_(n_vocab), values_(std::move(values)) {
  if (d_bins_ == 0 || n_vocab_ == 0) throw std::invalid_argument("joint logits: empty shape");
  if (values_.size() != d_bins_ * n_vocab_) {
    throw std::invalid_argument("joint logits: value count does not match d_bins x n_vocab");
  }
}

std::span<const double> JointLogits::row(std::size_t d) const {
  if (d >= d_bins_) throw std::out_of_range("joint logits: duration row out of range");
  return std::span<const double>(values_).subspan(d * n_vocab_, n_vocab_);
}

DurationDistribution DurationDistribution::uniform(std::size_t bins) {
  return DurationDistribution{std::vector<double>(bins, 1.0 / static_cast<double>(bins))};
}

void DurationDistribution::validate(double tol) const {
  if (p.empty()) throw std::invalid_argument("duration distribution is empty");
  double s = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("duration distribution has a negative or non-finite bin");
    s += v;
  }
  if (std::abs(s - 1.0) > tol) {
    std::ostringstream msg;
    msg << "duration distribution sums to " << s;
    throw std::invalid_argument(msg.str());
  }
}

void SamplerConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw std::invalid_argument("sampler: temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("sampler: top_p must be in (0, 1]");
  if (top_k < 1) throw std::invalid_argument("sampler: top_k must be >= 1");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("sampler: beta must be >= 0");
}

void GuidanceConfig::validate() const {
  if (!std::isfinite(gamma_temp) || !std::isfinite(gamma_depth)) {
    throw std::invalid_argument("guidance: gammas must be finite");
  }
}

DurationDistribution marginal_duration(const JointLogits& joint, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("marginal_duration: temperature must be > 0");
  for (std::size_t d = 0; d < joint.d_bins(); ++d) {
    for (std::size_t n = 0; n < joint.n_vocab(); ++n) {
      if (!std::isfinite(joint.at(d, n))) {
        std::ostringstream msg;
        msg << "marginal_duration: non-finite logit at (d=" << d << ", n=" << n << ")";
        throw std::invalid_argument(msg.str());
      }
    }
  }
  std::vector<double> z(joint.d_bins());
  for (std::size_t d = 0; d < joint.d_bins(); ++d) z[d] = log_sum_exp(joint.row(d)) / temperature;
  return DurationDistribution{stable_softmax(z)};
}

WeightVector matching_weights(const DurationDistribution& target, const DurationDistribution& acc, double beta) {
  if (target.size() != acc.size()) throw std::invalid_argument("matching_weights: bin count mismatch");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("matching_weights: beta must be >= 0");
  WeightVector out;
  out.w.resize(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!(target[i] > 0.0) || !(acc[i] > 0.0)) {
      std::ostringstream msg;
      msg << "matching_weights: bin " << i << " is not strictly positive (target=" << target[i]
          << ", acc=" << acc[i] << "); smooth the histograms first";
      throw std::invalid_argument(msg.str());
    }
    const double w = std::exp(beta * (std::log10(target[i]) - std::log10(acc[i])));
    if (!std::isfinite(w) || !(w > 0.0)) {
      std::ostringstream msg;
      msg << "matching_weights: weight for bin " << i << " over/underflowed";
      throw std::invalid_argument(msg.str());
    }
    out.w[i] = w;
  }
  return out;
}

DurationDistribution apply_matching(const DurationDistribution& current, const WeightVector& weights) {
  if (current.size() != weights.w.size()) throw std::invalid_argument("apply_matching: bin count mismatch");
  std::vector<double> num(current.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < current.size(); ++i) {
    if (!(weights.w[i] > 0.0) || !std::isfinite(weights.w[i])) {
      throw std::invalid_argument("apply_matching: weights must be positive and finite");
    }
    num[i] = current[i] * weights.w[i];
    denom += num[i];
  }
  if (!(denom > 0.0) || !std::isfinite(denom)) {
    throw std::runtime_error("apply_matching: normalizer underflowed to zero");
  }
  for (double& v : num) v /= denom;
  return DurationDistribution{std::move(num)};
}

DurationDistribution mask_and_renormalize(const DurationDistribution& dist, std::span<const bool> legal) {
  if (legal.size() != dist.size()) throw std::invalid_argument("mask: size mismatch");
  std::vector<double> out(dist.size(), 0.0);
  double s = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (legal[i]) {
      out[i] = dist[i];
      s += dist[i];
    }
  }
  if (!(s > 0.0)) throw std::runtime_error("mask: no probability mass on any legal bin");
  for (double& v : out) v /= s;
  return DurationDistribution{std::move(out)};
}

std::vector<std::size_t> nucleus_support(const DurationDistribution& dist, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("nucleus: top_p must be in (0, 1]");
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  std::vector<std::size_t> support;
  double cum = 0.0;
  for (std::size_t idx : order) {
    if (!(dist[idx] > 0.0)) break;
    support.push_back(idx);
    cum += dist[idx];
    if (cum >= top_p) break;
  }
  if (support.empty()) throw std::invalid_argument("nucleus: distribution has no positive bin");
  return support;
}

std::size_t sample_duration(const DurationDistribution& dist, double top_p, Rng& rng) {
  const auto support = nucleus_support(dist, top_p);
  double mass = 0.0;
  for (std::size_t idx : support) mass += dist[idx];
  return draw_from(dist.p, support, mass, rng);
}

std::vector<std::size_t> top_k_indices(std::span<const double> logits, std::size_t k) {
  if (logits.empty()) throw std::invalid_argument("top_k: empty logits");
  if (k < 1) throw std::invalid_argument("top_k: k must be >= 1");
  k = std::min(k, logits.size());
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto by_value = [&](std::size_t a, std::size_t b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), by_value);
  order.resize(k);
  return order;
}

std::size_t sample_top_k(std::span<const double> logits, std::size_t top_k, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("top_k: temperature must be > 0");
  const auto idx = top_k_indices(logits, top_k);
  std::vector<double> z(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) z[i] = logits[idx[i]] / temperature;
  const auto probs = stable_softmax(z);
  std::vector<std::size_t> local(idx.size());
  std::iota(local.begin(), local.end(), std::size_t{0});
  return idx[draw_from(probs, local, 1.0, rng)];
}

std::size_t sample_semantic(const JointLogits& joint, std::size_t d, std::size_t top_k, double temperature, Rng& rng) {
  return sample_top_k(joint.row(d), top_k, temperature, rng);
}

std::vector<double> cfg_combine(std::span<const double> cond, std::span<const double> uncond, double gamma) {
  if (cond.size() != uncond.size()) throw std::invalid_argument("cfg_combine: length mismatch");
  if (!std::isfinite(gamma)) throw std::invalid_argument("cfg_combine: gamma must be finite");
  std::vector<double> out(cond.size());
  if (gamma == 0.0) {
    out.assign(uncond.begin(), uncond.end());
    return out;
  }
  // cond + (gamma - 1)(cond - uncond) == uncond + gamma (cond - uncond)
  const double g = gamma - 1.0;
  for (std::size_t i = 0; i < cond.size(); ++i) out[i] = cond[i] + g * (cond[i] - uncond[i]);
  return out;
}

std::size_t argmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("argmax: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

std::vector<int> sample_acoustic(std::span<const std::vector<double>> codebook_logits) {
  std::vector<int> out;
  out.reserve(codebook_logits.size());
  for (const auto& logits : codebook_logits) {
    if (logits.empty()) throw std::invalid_argument("sample_acoustic: empty codebook logits");
    out.push_back(static_cast<int>(argmax(logits)));
  }
  return out;
}

}  // namespace stts
