#pragma once

// Latency/throughput measurements over engine event streams, TPS x
// look-ahead sweeps, chunk-size runs and rate-following evaluation.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stts/engine.hpp"

namespace stts {

// First TextIngested to first FrameEmitted, in ms. nullopt when no frame.
std::optional<double> measure_fpl(const std::vector<StreamEvent>& events);
// Processing time / generated audio time, from the Done event.
double measure_rtf(const std::vector<StreamEvent>& events);
double rtf_from_durations(double processing_seconds, double audio_seconds);

struct StallStats {
  std::size_t count = 0;
  double total_ms = 0.0;
};
StallStats measure_stalls(const std::vector<StreamEvent>& events);

struct RateEvalResult {
  std::optional<double> corr;  // nullopt when either curve is constant
  std::string corr_error;
  SpsCurve target;
  SpsCurve achieved;
};

// Achieved curve from frame nuclei on the audio-time axis; target from the
// per-frame target recorded by the engine, or the schedule when SRC was off.
RateEvalResult rate_eval(const std::vector<StreamEvent>& events, const RateSchedule& schedule,
                         double frame_rate = 12.5);
void write_curves_csv(std::ostream& out, const RateEvalResult& result);

// Response of the generated rate to each change of the per-frame target.
// Rates are nuclei per second of audio over [flip - horizon, flip) and
// [flip, flip + horizon), each cut at the neighbouring flips.
struct FlipResponse {
  double flip_time = 0.0;
  double from_sps = 0.0;
  double to_sps = 0.0;
  double rate_before = 0.0;
  double rate_after = 0.0;
  // Moved toward the new target by at least min_fraction of the target gap.
  bool responded = false;
};
std::vector<FlipResponse> flip_responses(const std::vector<StreamEvent>& events, double frame_rate = 12.5,
                                         double horizon = 3.0, double min_fraction = 0.25);

// Cyclic pre-phonemized corpus, 2 nuclei per 5 phonemes (2.5 phonemes per
// syllable), punctuation-free.
std::vector<Phoneme> cyclic_corpus(std::size_t n_phonemes);
// One token per phoneme.
std::vector<std::vector<Phoneme>> tokens_of(const std::vector<Phoneme>& phonemes, std::size_t per_token = 1);

struct BenchRow {
  std::optional<double> tps;  // nullopt = unlimited
  std::size_t la_min = 0;
  std::optional<double> fpl_ms;
  double rtf = 0.0;
  std::size_t stall_count = 0;
  double stall_total_ms = 0.0;
  std::optional<double> corr;
  std::size_t frames = 0;
  std::uint64_t seed = 0;
  std::string error;  // set when the cell failed

  bool operator==(const BenchRow&) const = default;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::map<std::string, std::string> metadata;

  void write_csv(std::ostream& out) const;
  std::string to_json() const;
};

struct SweepSpec {
  std::vector<std::optional<double>> tps{10.0, 20.0, 40.0, std::nullopt};
  std::vector<std::size_t> la{1, 2, 3, 4, 5};
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
  std::string backend = "stationary";
  EngineConfig base;  // tps, la_min and seed are overwritten per cell
  std::vector<std::vector<Phoneme>> corpus;  // empty: 120-phoneme cyclic corpus, one per token
  std::size_t threads = 1;

  void validate() const;
};

BenchReport sweep(const SweepSpec& spec);

struct ChunkReport {
  std::size_t chunk_words = 0;
  std::optional<double> fpl_ms;
  std::size_t stall_count = 0;
  double stall_total_ms = 0.0;
  std::size_t coverage_gaps = 0;
  std::size_t frames = 0;
};

// Words are delivered in chunks of `chunk_words`; each chunk is one text
// token on the tps clock.
ChunkReport chunk_size_run(std::size_t chunk_words, const std::vector<std::vector<Phoneme>>& words,
                           const EngineConfig& config, const std::string& backend, std::uint64_t seed);

std::string format_tps(const std::optional<double>& tps);
std::optional<double> parse_tps(const std::string& text);

}  // namespace stts
