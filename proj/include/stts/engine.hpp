#pragma once

// The full-stream frame loop. One Session owns a backend, the phoneme stream,
// the alignment state and the rate accumulator; text and rate commands may be
// submitted from any thread and are applied at the next tick.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "stts/alignment.hpp"
#include "stts/backbone.hpp"
#include "stts/events.hpp"
#include "stts/g2p.hpp"
#include "stts/rate_control.hpp"
#include "stts/sampler.hpp"

namespace stts {

enum class ClockMode { simulated, wall };

struct EngineConfig {
  std::optional<double> tps;  // text tokens per second; nullopt = unlimited
  std::size_t la_min = kDefaultLookAheadMin;
  std::size_t la_max = kDefaultLookAheadMax;
  // Look-ahead term of the duration mask. 0 keeps only stream bounds so the
  // cursor may outrun the text and the gate stalls; la_min instead forces
  // elongation and the gate never closes after the first frame.
  std::size_t mask_lookahead = 0;
  double frame_rate = 12.5;
  bool src_enabled = false;
  SamplerConfig sampler;
  GuidanceConfig guidance;
  RateSchedule schedule = RateSchedule::constant(4.0);
  RateTargetTable table = default_rate_table();
  ClockMode clock = ClockMode::simulated;
  std::optional<PromptSpec> prompt;
  std::optional<SpeakerEmbedding> speaker;  // default: seeded random voice
  std::optional<ModelDims> dims;            // if set, must match the backend
  std::optional<CostModel> cost;            // overrides the backend's synthetic cost
  std::size_t max_frames = 20000;

  std::int64_t frame_period_us() const;
  void validate() const;
};

// Hook applied to prompt audio before prefill (identity by default).
using PromptEnhancer = std::function<PromptSpec(const PromptSpec&)>;

class Session {
 public:
  Session(EngineConfig config, std::unique_ptr<Backend> backend, G2pFn g2p = builtin_g2p);

  // Thread-safe command submission.
  void feed_text(std::string token);
  void feed_phonemes(std::vector<Phoneme> phonemes, std::string label = {});
  void end_text();
  void set_rate(double sps);

  // Must precede the first frame; runs TT over the prompt with UNK text.
  void prompt_prefill(const PromptSpec& prompt, const PromptEnhancer& enhancer = {});

  // One tick at next_tick_us(). Wall mode sleeps until then. Returns false
  // once Done has been emitted.
  bool step();
  // Runs ticks while next_tick_us() <= now_us (paced simulated clock).
  void advance_to(std::int64_t now_us);
  // Steps until Done.
  void run_to_completion();

  // Moves out everything emitted since the last call.
  std::vector<StreamEvent> take_events();

  bool done() const { return done_; }
  std::int64_t next_tick_us() const { return next_tick_; }
  const EngineConfig& config() const { return cfg_; }
  const PhonemeStream& stream() const { return stream_; }
  const AlignmentState& alignment() const { return align_; }
  const AccumulatorWindow& accumulator() const { return window_; }
  std::size_t history_length() const { return history_.size(); }
  std::size_t prompt_frames() const { return prompt_frames_; }
  Backend& backend() { return *backend_; }
  std::optional<double> rate_override() const { return override_sps_; }

 private:
  struct Command {
    enum class Kind { text, phonemes, end, rate } kind;
    std::string token;
    std::vector<Phoneme> phonemes;
    double sps = 0.0;
  };
  struct Pending {
    std::int64_t arrival_us;
    std::string token;
    std::vector<Phoneme> phonemes;
  };

  void push(Command c);
  void drain_commands(std::int64_t tau);
  void ingest_until(std::int64_t t);
  void emit(StreamEvent e);
  std::int64_t compute_frame(std::int64_t tau);
  void finish(std::int64_t t, bool aborted);
  std::int64_t wall_now() const;

  EngineConfig cfg_;
  std::unique_ptr<Backend> backend_;
  G2pFn g2p_;
  Rng rng_;
  SpeakerEmbedding speaker_;
  CostModel cost_;
  std::int64_t period_us_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Command> commands_;
  bool end_submitted_ = false;

  std::deque<Pending> pending_;
  std::int64_t last_arrival_ = -1;
  bool end_requested_ = false;
  PhonemeStream stream_;
  AlignmentState align_;
  AccumulatorWindow window_;
  std::vector<AudioFrame> history_;
  std::size_t prompt_frames_ = 0;
  std::optional<double> override_sps_;

  std::int64_t next_tick_ = 0;
  std::optional<std::int64_t> stall_start_;
  std::size_t stall_count_ = 0;
  std::int64_t stall_total_ = 0;
  std::int64_t compute_total_ = 0;
  std::size_t coverage_gaps_ = 0;
  std::size_t frames_ = 0;
  bool done_ = false;
  std::chrono::steady_clock::time_point wall_start_;

  std::vector<StreamEvent> events_;
};

// Library convenience: feeds every token at t = 0 (paced by tps), ends the
// text and runs to completion.
std::vector<StreamEvent> run(const EngineConfig& config, std::unique_ptr<Backend> backend,
                             const std::vector<std::vector<Phoneme>>& tokens);
std::vector<StreamEvent> run_text(const EngineConfig& config, std::unique_ptr<Backend> backend,
                                  const std::vector<std::string>& words, G2pFn g2p = builtin_g2p);

// Default speaker: unit-norm gaussian vector from the session seed.
SpeakerEmbedding default_speaker(std::size_t dim, std::uint64_t seed);

}  // namespace stts
