#pragma once

// Numeric kernels for duration marginalization, distribution matching,
// guided logit combination and token sampling. All functions are pure apart
// from the explicit Rng handle.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "stts/rng.hpp"

namespace stts {

inline constexpr std::size_t kDurationBins = 6;

// TT output reshaped to d_bins x n_vocab, row-major (row d = duration token).
class JointLogits {
 public:
  JointLogits(std::size_t d_bins, std::size_t n_vocab, std::vector<double> values);

  // Reshape a flat joint head output of size d_bins * n_vocab.
  template <typename T>
  static JointLogits from_flat(std::span<const T> flat, std::size_t d_bins = kDurationBins) {
    if (d_bins == 0 || flat.size() % d_bins != 0) {
      throw std::invalid_argument("joint logits: flat size is not a multiple of d_bins");
    }
    return JointLogits(d_bins, flat.size() / d_bins, std::vector<double>(flat.begin(), flat.end()));
  }

  std::size_t d_bins() const { return d_bins_; }
  std::size_t n_vocab() const { return n_vocab_; }
  double at(std::size_t d, std::size_t n) const { return values_[d * n_vocab_ + n]; }
  std::span<const double> row(std::size_t d) const;
  std::span<const double> values() const { return values_; }

 private:
  std::size_t d_bins_;
  std::size_t n_vocab_;
  std::vector<double> values_;
};

struct DurationDistribution {
  std::vector<double> p;

  static DurationDistribution uniform(std::size_t bins = kDurationBins);
  std::size_t size() const { return p.size(); }
  double operator[](std::size_t i) const { return p[i]; }

  // Throws unless entries are >= 0 and sum to 1 within tol.
  void validate(double tol = 1e-9) const;
};

struct WeightVector {
  std::vector<double> w;
};

struct SamplerConfig {
  double temperature = 0.9;
  double top_p = 0.9;
  std::size_t top_k = 5;
  double beta = 5.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct GuidanceConfig {
  double gamma_temp = 1.5;
  double gamma_depth = 3.0;
  bool text_cfg_enabled = true;
  bool audio_cfg_enabled = true;
  bool speaker_cfg_enabled = true;

  bool tt_guided() const { return text_cfg_enabled || audio_cfg_enabled; }
  bool dt_guided() const { return speaker_cfg_enabled; }
  void validate() const;
};

// Softmax over d of (1/T) * logsumexp_n(A_dn).
DurationDistribution marginal_duration(const JointLogits& joint, double temperature);

// w_i = exp(beta * (log10 target_i - log10 acc_i)). Both inputs must be
// strictly positive (smooth first).
WeightVector matching_weights(const DurationDistribution& target, const DurationDistribution& acc,
                              double beta);

// Elementwise product renormalized.
DurationDistribution apply_matching(const DurationDistribution& current, const WeightVector& weights);

// Zero out bins where legal[i] is false and renormalize. Throws if nothing
// legal keeps any mass.
DurationDistribution mask_and_renormalize(const DurationDistribution& dist, std::span<const bool> legal);

// Smallest set of highest-probability bins (ties: lower index first) whose
// cumulative mass reaches top_p. Zero-probability bins are never included.
std::vector<std::size_t> nucleus_support(const DurationDistribution& dist, double top_p);

std::size_t sample_duration(const DurationDistribution& dist, double top_p, Rng& rng);

// Indices of the k largest logits, ordered by value (desc) then index (asc).
std::vector<std::size_t> top_k_indices(std::span<const double> logits, std::size_t k);

// Softmax at temperature T over the k largest entries, then one draw.
std::size_t sample_top_k(std::span<const double> logits, std::size_t top_k, double temperature, Rng& rng);

std::size_t sample_semantic(const JointLogits& joint, std::size_t d, std::size_t top_k, double temperature,
                            Rng& rng);

// uncond + gamma * (cond - uncond), evaluated so that gamma == 1 returns cond
// and gamma == 0 returns uncond exactly.
std::vector<double> cfg_combine(std::span<const double> cond, std::span<const double> uncond, double gamma);

// Argmax with lowest-index tie-break.
std::size_t argmax(std::span<const double> logits);

// Greedy decode of every codebook.
std::vector<int> sample_acoustic(std::span<const std::vector<double>> codebook_logits);

}  // namespace stts
