#pragma once

// Incremental phoneme buffer, the monotonic alignment state machine over the
// six (shift, phonemes-per-frame) duration tokens, look-ahead gating and
// prompt text masking.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "stts/sampler.hpp"

namespace stts {

inline constexpr std::size_t kNumCodebooks = 16;
inline constexpr std::size_t kNumAcoustic = kNumCodebooks - 1;
inline constexpr std::size_t kDefaultLookAheadMin = 3;
inline constexpr std::size_t kDefaultLookAheadMax = 25;

struct Phoneme {
  int symbol = 0;
  bool is_punctuation = false;
  bool is_syllable_nucleus = false;

  bool operator==(const Phoneme&) const = default;
};

// Append-only phoneme buffer. Punctuation stays in the buffer (the phoneme
// encoder sees it) but is not addressable by the alignment cursor.
class PhonemeStream {
 public:
  void append(std::span<const Phoneme> phonemes);
  void append(const Phoneme& phoneme) { append(std::span<const Phoneme>(&phoneme, 1)); }
  void end() { ended_ = true; }
  bool ended() const { return ended_; }

  std::size_t size() const { return buffer_.size(); }
  const Phoneme& at(std::size_t pt_index) const { return buffer_.at(pt_index); }
  std::span<const Phoneme> phonemes() const { return buffer_; }

  // Count of non-punctuation phonemes, i.e. what the cursor can address.
  std::size_t available() const { return tt_to_pt_.size(); }
  std::size_t pt_index(std::size_t tt_index) const { return tt_to_pt_.at(tt_index); }
  const Phoneme& non_punct(std::size_t tt_index) const { return buffer_[tt_to_pt_.at(tt_index)]; }

 private:
  std::vector<Phoneme> buffer_;
  std::vector<std::size_t> tt_to_pt_;
  bool ended_ = false;
};

struct DurationToken {
  int shift = 0;  // 0..2 phonemes to advance
  int ppf = 1;    // 1..2 phonemes covered by this frame

  bool operator==(const DurationToken&) const = default;
};

// id = shift * 2 + (ppf - 1)
int duration_encode(int shift, int ppf);
inline int duration_encode(DurationToken t) { return duration_encode(t.shift, t.ppf); }
DurationToken duration_decode(int id);

struct FrameCoverage {
  std::size_t first = 0;  // non-punctuation index
  std::size_t count = 0;
};

struct AlignmentState {
  std::size_t cursor = 0;
  std::size_t frames_emitted = 0;
  std::vector<FrameCoverage> assignments;
  // One past the highest phoneme covered so far (first-coverage accounting).
  std::size_t covered_end = 0;

  // True once an ended stream has been fully consumed.
  bool consumed(const PhonemeStream& stream) const { return stream.ended() && cursor >= stream.available(); }
};

struct FrameAdvance {
  FrameCoverage coverage;
  std::size_t cursor_before = 0;
  std::size_t cursor_after = 0;
  std::size_t new_nuclei = 0;  // nuclei covered for the first time
  std::size_t skipped = 0;     // phonemes jumped over without coverage
};

using DurationMask = std::array<bool, kDurationBins>;

DurationMask legal_duration_mask(const AlignmentState& state, const PhonemeStream& stream,
                                 std::size_t la_min = kDefaultLookAheadMin);

bool gate(const PhonemeStream& stream, const AlignmentState& state, std::size_t la_min = kDefaultLookAheadMin);

// Assigns [cursor, cursor + ppf - 1] to the next frame, then moves the cursor
// by shift. Throws on tokens the mask forbids.
FrameAdvance advance(AlignmentState& state, DurationToken token, const PhonemeStream& stream,
                     std::size_t la_min = kDefaultLookAheadMin);

// Cursor trajectory implied by an assignments log and the shift sequence.
std::vector<std::size_t> replay_cursor(std::span<const DurationToken> tokens, std::size_t start = 0);

// The current phoneme plus up to la_max following buffer symbols, punctuation included.
std::span<const Phoneme> visible_window(const PhonemeStream& stream, const AlignmentState& state,
                                        std::size_t la_max = kDefaultLookAheadMax);

struct StrippedIndices {
  std::vector<std::size_t> tt_to_pt;               // TT index -> PT index
  std::vector<std::optional<std::size_t>> pt_to_tt;  // PT index -> TT index (nullopt for punctuation)
};

StrippedIndices strip_punctuation(std::span<const Phoneme> pt_phonemes);

using AudioFrame = std::array<int, kNumCodebooks>;

struct PromptSpec {
  std::size_t frame_count = 0;
  std::vector<AudioFrame> audio_tokens;
  int unk_symbol = 0;

  void validate() const;
};

// One UNK symbol per prompt frame.
std::vector<int> mask_prompt(const PromptSpec& prompt);

std::size_t prompt_frames_for_seconds(double seconds, double frame_rate = 12.5);

}  // namespace stts
