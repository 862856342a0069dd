#include "stts/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace stts {

void PhonemeStream::append(std::span<const Phoneme> phonemes) {
  if (ended_) throw std::logic_error("phoneme stream: append after end");
  for (const Phoneme& p : phonemes) {
    if (p.is_punctuation && p.is_syllable_nucleus) {
      throw std::invalid_argument("phoneme stream: punctuation cannot be a syllable nucleus");
    }
    if (!p.is_punctuation) tt_to_pt_.push_back(buffer_.size());
    buffer_.push_back(p);
  }
}

int duration_encode(int shift, int ppf) {
  if (shift < 0 || shift > 2 || ppf < 1 || ppf > 2) {
    std::ostringstream msg;
    msg << "duration token out of range: shift=" << shift << " ppf=" << ppf;
    throw std::invalid_argument(msg.str());
  }
  return shift * 2 + (ppf - 1);
}

DurationToken duration_decode(int id) {
  if (id < 0 || id >= static_cast<int>(kDurationBins)) {
    std::ostringstream msg;
    msg << "duration id out of range: " << id;
    throw std::invalid_argument(msg.str());
  }
  return DurationToken{id / 2, id % 2 + 1};
}

DurationMask legal_duration_mask(const AlignmentState& state, const PhonemeStream& stream, std::size_t la_min) {
  DurationMask mask{};
  const std::size_t avail = stream.available();
  for (int id = 0; id < static_cast<int>(kDurationBins); ++id) {
    const DurationToken t = duration_decode(id);
    const std::size_t last_covered = state.cursor + static_cast<std::size_t>(t.ppf) - 1;
    const std::size_t next_cursor = state.cursor + static_cast<std::size_t>(t.shift);
    bool ok = last_covered < avail && next_cursor <= avail;
    if (ok && !stream.ended()) ok = avail - next_cursor >= la_min;
    mask[static_cast<std::size_t>(id)] = ok;
  }
  return mask;
}

bool gate(const PhonemeStream& stream, const AlignmentState& state, std::size_t la_min) {
  const std::size_t avail = stream.available();
  if (state.cursor >= avail) return false;
  if (stream.ended()) return true;
  return avail - state.cursor >= la_min;
}

FrameAdvance advance(AlignmentState& state, DurationToken token, const PhonemeStream& stream, std::size_t la_min) {
  const int id = duration_encode(token);
  const auto mask = legal_duration_mask(state, stream, la_min);
  if (!mask[static_cast<std::size_t>(id)]) {
    std::ostringstream msg;
    msg << "illegal duration token (shift=" << token.shift << ", ppf=" << token.ppf << ") at cursor "
        << state.cursor << " with " << stream.available() << " phonemes available";
    throw std::invalid_argument(msg.str());
  }
  FrameAdvance out;
  out.cursor_before = state.cursor;
  out.coverage = FrameCoverage{state.cursor, static_cast<std::size_t>(token.ppf)};
  const std::size_t cover_end = state.cursor + out.coverage.count;
  for (std::size_t i = std::max(state.covered_end, state.cursor); i < cover_end; ++i) {
    if (stream.non_punct(i).is_syllable_nucleus) ++out.new_nuclei;
  }
  state.covered_end = std::max(state.covered_end, cover_end);
  if (token.shift > token.ppf) out.skipped = static_cast<std::size_t>(token.shift - token.ppf);
  state.cursor += static_cast<std::size_t>(token.shift);
  state.frames_emitted += 1;
  state.assignments.push_back(out.coverage);
  out.cursor_after = state.cursor;
  return out;
}

std::vector<std::size_t> replay_cursor(std::span<const DurationToken> tokens, std::size_t start) {
  std::vector<std::size_t> trace;
  trace.reserve(tokens.size());
  std::size_t c = start;
  for (const auto& t : tokens) {
    c += static_cast<std::size_t>(t.shift);
    trace.push_back(c);
  }
  return trace;
}

std::span<const Phoneme> visible_window(const PhonemeStream& stream, const AlignmentState& state, std::size_t la_max) {
  if (state.cursor >= stream.available()) return {};
  const std::size_t begin = stream.pt_index(state.cursor);
  const std::size_t end = std::min(stream.size(), begin + la_max + 1);
  return stream.phonemes().subspan(begin, end - begin);
}

StrippedIndices strip_punctuation(std::span<const Phoneme> pt_phonemes) {
  StrippedIndices out;
  out.pt_to_tt.resize(pt_phonemes.size());
  for (std::size_t i = 0; i < pt_phonemes.size(); ++i) {
    if (pt_phonemes[i].is_punctuation) continue;
    out.pt_to_tt[i] = out.tt_to_pt.size();
    out.tt_to_pt.push_back(i);
  }
  return out;
}

void PromptSpec::validate() const {
  if (audio_tokens.size() != frame_count) {
    throw std::invalid_argument("prompt: audio token rows do not match frame count");
  }
}

std::vector<int> mask_prompt(const PromptSpec& prompt) { return std::vector<int>(prompt.frame_count, prompt.unk_symbol); }

std::size_t prompt_frames_for_seconds(double seconds, double frame_rate) {
  if (!(seconds >= 0.0) || !(frame_rate > 0.0)) throw std::invalid_argument("prompt: negative duration");
  return static_cast<std::size_t>(std::llround(seconds * frame_rate));
}

}  // namespace stts
