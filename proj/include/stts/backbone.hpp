#pragma once

// Model backend contract: the temporal transformer produces a joint
// (duration x semantic) logit row per frame plus a frame embedding; the depth
// transformer turns that embedding, the chosen semantic token and the speaker
// embedding into logits for the 15 acoustic codebooks.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "stts/alignment.hpp"
#include "stts/sampler.hpp"

namespace stts {

struct ModelDims {
  std::size_t n_semantic = 64;
  std::size_t d_bins = kDurationBins;
  std::size_t n_codebooks = kNumCodebooks;
  std::size_t acoustic_vocab = 64;
  std::size_t embed = 64;
  std::size_t pt_layers = 2;
  std::size_t tt_layers = 2;
  std::size_t dt_layers = 1;
  std::size_t heads = 4;
  std::size_t phoneme_vocab = 64;
  std::size_t speaker_dim = 64;
  std::size_t ff_mult = 4;
  std::size_t max_window = 32;  // phoneme encoder positions
  double frame_rate = 12.5;

  std::size_t joint_width() const { return n_semantic * d_bins; }
  std::size_t n_acoustic() const { return n_codebooks - 1; }
  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

class SpeakerEmbedding {
 public:
  SpeakerEmbedding() = default;
  // Normalizes to unit length; a zero vector is rejected.
  explicit SpeakerEmbedding(std::vector<float> vector, double conditioning_scale = 1.5);

  std::span<const float> vector() const { return vector_; }
  double conditioning_scale() const { return scale_; }
  bool empty() const { return vector_.empty(); }

 private:
  std::vector<float> vector_;
  double scale_ = 1.5;
};

struct DropFlags {
  bool text = false;
  bool audio = false;  // audio tokens of the prompt prefix
  bool speaker = false;

  bool operator==(const DropFlags&) const = default;
};

struct BackendRequest {
  std::vector<Phoneme> window;  // visible phonemes starting at the cursor
  std::size_t cursor = 0;
  std::span<const AudioFrame> history;  // one row per previous frame, prompt included
  std::size_t frame_index = 0;
  std::size_t prompt_frames = 0;
  bool prompt_step = false;  // text conditioning is the UNK mask
  int unk_symbol = 0;
  SpeakerEmbedding speaker;
  DropFlags drop;
};

struct TtOutput {
  std::vector<float> joint;  // d_bins * n_semantic, row-major by duration
  std::vector<float> frame_embedding;
};

struct DtRequest {
  std::vector<float> frame_embedding;
  int semantic_token = 0;
  SpeakerEmbedding speaker;
  bool speaker_dropped = false;
};

struct DtOutput {
  std::vector<std::vector<float>> codebooks;  // n_acoustic vectors of acoustic_vocab logits
};

// Synthetic per-call costs used by the simulated clock.
struct CostModel {
  std::int64_t tt_us = 3000;
  std::int64_t dt_us = 2000;
  std::int64_t per_frame_us() const { return tt_us + dt_us; }
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual const ModelDims& dims() const = 0;
  // One call evaluates the whole batch (CFG branches ride together).
  virtual std::vector<TtOutput> tt_step(std::span<const BackendRequest> batch) = 0;
  virtual std::vector<DtOutput> dt_step(std::span<const DtRequest> batch) = 0;
  virtual SpeakerEmbedding null_speaker() const = 0;
  virtual CostModel cost_model() const { return {}; }

  TtOutput tt_step(const BackendRequest& request) { return std::move(tt_step(std::span(&request, 1)).front()); }
  DtOutput dt_step(const DtRequest& request) { return std::move(dt_step(std::span(&request, 1)).front()); }
};

struct CfgBatch {
  BackendRequest conditional;
  BackendRequest unconditional;
};

// Unconditional half drops every conditioning whose guidance is enabled.
CfgBatch make_cfg_batch(const BackendRequest& request, const GuidanceConfig& guidance);

// "toy", "toy:WEIGHTS", "scripted" (stationary at 4 sps), "scripted:PROGRAM.json",
// "stationary[:SPS|uniform]"
std::unique_ptr<Backend> make_backend(std::string_view spec, std::uint64_t seed);

}  // namespace stts
