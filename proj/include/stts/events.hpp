#pragma once

// Engine output. Times are integer microseconds on the session clock so the
// simulated timeline is exact; JSONL records carry them as "t_us".

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "stts/alignment.hpp"

namespace stts {

using Histogram = std::array<double, kDurationBins>;

struct FrameEmitted {
  std::int64_t t_us = 0;
  std::size_t frame = 0;  // generated-frame index (prompt excluded)
  int duration = 0;
  int semantic = 0;
  std::array<int, kNumAcoustic> acoustic{};
  std::size_t covered_first = 0;
  std::size_t covered_count = 0;
  std::size_t cursor = 0;  // after the advance
  std::size_t nuclei = 0;
  std::size_t skipped = 0;
  std::optional<double> target_sps;  // SRC only
  Histogram p_current{};
  Histogram p_acc{};  // accumulator after this frame
  std::optional<Histogram> p_target;

  double audio_seconds(double frame_rate = 12.5) const { return static_cast<double>(frame) / frame_rate; }
};

struct Stall {
  std::int64_t start_us = 0;
  std::int64_t end_us = 0;
  std::string reason;
  std::size_t cursor = 0;
  std::size_t available = 0;
};

struct RateChanged {
  std::int64_t t_us = 0;
  double sps = 0.0;
  bool clamped = false;
};

struct TextIngested {
  std::int64_t t_us = 0;
  std::string token;
  std::size_t phonemes = 0;
};

struct Warning {
  std::int64_t t_us = 0;
  std::string text;
};

struct ErrorEvent {
  std::int64_t t_us = 0;
  std::string text;
};

struct Done {
  std::int64_t t_us = 0;
  std::size_t frames = 0;
  std::size_t stalls = 0;
  std::int64_t stall_total_us = 0;
  std::int64_t compute_us = 0;
  std::int64_t audio_us = 0;
  std::size_t phonemes = 0;
  std::size_t coverage_gaps = 0;
  bool aborted = false;
};

using StreamEvent = std::variant<FrameEmitted, Stall, RateChanged, TextIngested, Warning, ErrorEvent, Done>;

// Time used for ordering: a stall is reported when it closes.
std::int64_t event_time_us(const StreamEvent& event);
std::string_view event_type(const StreamEvent& event);

std::string to_jsonl(const StreamEvent& event);
StreamEvent parse_event(std::string_view line);

void write_events(std::ostream& out, const std::vector<StreamEvent>& events);
std::vector<StreamEvent> read_events(std::istream& in);

}  // namespace stts
