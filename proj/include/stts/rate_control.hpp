#pragma once

// Speaking-rate control: target duration histograms per syllables-per-second
// value, the sliding accumulator of generated duration tokens, rate schedules,
// SPS estimation and correlation for rate-following evaluation.

#include <cstddef>
#include <array>
#include <deque>
#include <span>
#include <utility>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stts/sampler.hpp"

namespace stts {

inline constexpr double kDefaultSmoothing = 1e-4;

// (p + eps) / (1 + bins * eps)
DurationDistribution smooth(const DurationDistribution& dist, double epsilon = kDefaultSmoothing);

struct RateAnchor {
  double sps = 0.0;
  DurationDistribution histogram;  // normalized, unsmoothed
};

struct TargetLookup {
  DurationDistribution dist;  // smoothed, strictly positive
  bool clamped = false;
  double sps = 0.0;  // after clamping
};

class RateTargetTable {
 public:
  RateTargetTable(std::vector<RateAnchor> anchors, double smoothing_epsilon = kDefaultSmoothing);

  // Linear interpolation between bracketing anchors, then smoothing. Queries
  // outside the anchor range clamp to the nearest endpoint.
  TargetLookup target_distribution(double sps) const;

  const std::vector<RateAnchor>& anchors() const { return anchors_; }
  double smoothing_epsilon() const { return epsilon_; }
  double min_sps() const { return anchors_.front().sps; }
  double max_sps() const { return anchors_.back().sps; }

  std::string to_json() const;
  static RateTargetTable from_json(std::string_view text);

 private:
  std::vector<RateAnchor> anchors_;
  double epsilon_;
};

struct SyntheticTableParams {
  double phonemes_per_syllable = 2.5;
  double frame_rate = 12.5;
  double min_sps = 0.5;
  double max_sps = 8.0;
  double step = 0.5;
  // P(ppf = 2 | shift) for shift = 0, 1, 2.
  std::array<double, 3> two_phoneme_frame_prob{0.1, 0.2, 0.8};
};

// Expected shift per frame equals sps * phonemes_per_syllable / frame_rate;
// the shift marginal is the maximum-entropy distribution on {0,1,2} with that mean.
RateTargetTable default_rate_table(const SyntheticTableParams& params = {});

// Mean cursor advance per frame under a duration histogram.
double expected_shift(const DurationDistribution& dist);

// Builds a table from line records "utterance_id, sps, c0, c1, c2, c3, c4, c5".
// Records are pooled into sps bins of width bin_width; each anchor sits at the
// mean sps of its bin. Edge anchors are copied out to cover [1, 7] when needed.
struct TableBuildOptions {
  double bin_width = 0.5;
  double smoothing_epsilon = kDefaultSmoothing;
  bool extend_to_cover = true;
};
RateTargetTable build_rate_table(std::istream& records, const TableBuildOptions& options = {});

// Sliding window of generated duration tokens keyed by audio time (seconds).
class AccumulatorWindow {
 public:
  explicit AccumulatorWindow(double window_seconds = 3.0, double smoothing_epsilon = kDefaultSmoothing);

  // Appends, evicts entries with t < now - window, returns the smoothed histogram.
  DurationDistribution accumulate(int token, double t);
  // Evicts relative to `now` and returns the smoothed histogram (uniform when empty).
  DurationDistribution read(double now);
  // Histogram of what is currently retained, without evicting.
  DurationDistribution histogram() const;

  std::size_t size() const { return entries_.size(); }
  const std::array<std::size_t, kDurationBins>& counts() const { return counts_; }
  const std::deque<std::pair<double, int>>& entries() const { return entries_; }
  double window_seconds() const { return window_; }

 private:
  void evict(double now);

  double window_;
  double epsilon_;
  std::deque<std::pair<double, int>> entries_;
  std::array<std::size_t, kDurationBins> counts_{};
};

class RateSchedule {
 public:
  enum class Kind { constant, linear_ramp, phoneme_alternating };

  static RateSchedule constant(double sps);
  // Linear from start to end over `seconds` of audio, then held at end.
  static RateSchedule ramp(double start_sps, double end_sps, double seconds);
  // first for phonemes [0, period), second for [period, 2 * period), ...
  static RateSchedule alternating(double first_sps, double second_sps, std::size_t period = 40);
  // "const:4", "ramp:1:7[:seconds]", "alt:1:7[:period]"
  static RateSchedule parse(std::string_view text);

  double at(double audio_seconds, std::size_t cursor) const;
  Kind kind() const { return kind_; }
  double first() const { return a_; }
  double second() const { return b_; }
  double seconds() const { return seconds_; }
  std::size_t period() const { return period_; }
  std::string to_string() const;

 private:
  RateSchedule(Kind kind, double a, double b, double seconds, std::size_t period);
  void validate() const;

  Kind kind_;
  double a_;
  double b_;
  double seconds_;
  std::size_t period_;
};

struct SpsSample {
  double time = 0.0;
  double sps = 0.0;
};

struct SpsCurve {
  std::vector<SpsSample> samples;
  bool single_window_fallback = false;

  // Linear interpolation, clamped at the ends.
  double value_at(double t) const;
};

struct FrameNuclei {
  double time = 0.0;
  std::size_t nuclei = 0;
};

struct SpsEstimateOptions {
  double window_seconds = 3.0;
  double overlap = 0.25;
  double frame_period = 0.08;
};

// Windowed syllable rate (window 3 s, hop 2.25 s) interpolated back onto the
// frame timestamps.
SpsCurve estimate_sps(std::span<const FrameNuclei> frames, const SpsEstimateOptions& options = {});

// Pearson correlation after resampling b onto a's time grid.
double pearson(const SpsCurve& a, const SpsCurve& b);
double pearson(std::span<const double> a, std::span<const double> b);

struct ClockPosition {
  double audio_seconds = 0.0;
  std::size_t cursor = 0;
};

struct ControllerOutput {
  DurationDistribution target;
  DurationDistribution accumulated;
  double target_sps = 0.0;
  bool clamped = false;
};

// Resolves the schedule (or an override) to P_target and reads P_acc.
ControllerOutput controller_step(const RateTargetTable& table, AccumulatorWindow& window, const RateSchedule& schedule,
                                 const ClockPosition& position, std::optional<double> override_sps = std::nullopt);

}  // namespace stts
