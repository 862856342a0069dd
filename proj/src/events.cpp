#include "stts/events.hpp"

#include <istream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace stts {

using nlohmann::json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

json hist(const Histogram& h) { return json(std::vector<double>(h.begin(), h.end())); }

Histogram read_hist(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != kDurationBins) throw std::invalid_argument("event: histogram needs 6 entries");
  Histogram h{};
  std::copy(v.begin(), v.end(), h.begin());
  return h;
}

json to_json(const StreamEvent& ev) {
  return std::visit(
      overloaded{
          [](const FrameEmitted& e) {
            json j{{"type", "frame"},
                   {"t_us", e.t_us},
                   {"frame", e.frame},
                   {"duration", e.duration},
                   {"semantic", e.semantic},
                   {"acoustic", std::vector<int>(e.acoustic.begin(), e.acoustic.end())},
                   {"covered", {e.covered_first, e.covered_count}},
                   {"cursor", e.cursor},
                   {"nuclei", e.nuclei},
                   {"skipped", e.skipped},
                   {"p_current", hist(e.p_current)},
                   {"p_acc", hist(e.p_acc)}};
            if (e.target_sps) j["target_sps"] = *e.target_sps;
            if (e.p_target) j["p_target"] = hist(*e.p_target);
            return j;
          },
          [](const Stall& e) {
            return json{{"type", "stall"},        {"start_us", e.start_us}, {"end_us", e.end_us},
                        {"reason", e.reason},     {"cursor", e.cursor},     {"available", e.available}};
          },
          [](const RateChanged& e) {
            return json{{"type", "rate"}, {"t_us", e.t_us}, {"sps", e.sps}, {"clamped", e.clamped}};
          },
          [](const TextIngested& e) {
            return json{{"type", "text"}, {"t_us", e.t_us}, {"token", e.token}, {"phonemes", e.phonemes}};
          },
          [](const Warning& e) { return json{{"type", "warning"}, {"t_us", e.t_us}, {"text", e.text}}; },
          [](const ErrorEvent& e) { return json{{"type", "error"}, {"t_us", e.t_us}, {"text", e.text}}; },
          [](const Done& e) {
            return json{{"type", "done"},
                        {"t_us", e.t_us},
                        {"frames", e.frames},
                        {"stalls", e.stalls},
                        {"stall_total_us", e.stall_total_us},
                        {"compute_us", e.compute_us},
                        {"audio_us", e.audio_us},
                        {"phonemes", e.phonemes},
                        {"coverage_gaps", e.coverage_gaps},
                        {"aborted", e.aborted}};
          },
      },
      ev);
}

}  // namespace

std::int64_t event_time_us(const StreamEvent& event) {
  return std::visit(overloaded{[](const Stall& e) { return e.end_us; }, [](const auto& e) { return e.t_us; }}, event);
}

std::string_view event_type(const StreamEvent& event) {
  static constexpr std::string_view names[] = {"frame", "stall", "rate", "text", "warning", "error", "done"};
  return names[event.index()];
}

std::string to_jsonl(const StreamEvent& event) { return to_json(event).dump(); }

namespace {

StreamEvent from_object(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("event: expected a JSON object");
  const auto type = j.at("type").get<std::string>();
  if (type == "frame") {
    FrameEmitted e;
    e.t_us = j.at("t_us").get<std::int64_t>();
    e.frame = j.at("frame").get<std::size_t>();
    e.duration = j.at("duration").get<int>();
    e.semantic = j.at("semantic").get<int>();
    const auto ac = j.at("acoustic").get<std::vector<int>>();
    if (ac.size() != kNumAcoustic) throw std::invalid_argument("event: frame needs 15 acoustic tokens");
    std::copy(ac.begin(), ac.end(), e.acoustic.begin());
    e.covered_first = j.at("covered").at(0).get<std::size_t>();
    e.covered_count = j.at("covered").at(1).get<std::size_t>();
    e.cursor = j.at("cursor").get<std::size_t>();
    e.nuclei = j.at("nuclei").get<std::size_t>();
    e.skipped = j.at("skipped").get<std::size_t>();
    e.p_current = read_hist(j.at("p_current"));
    e.p_acc = read_hist(j.at("p_acc"));
    if (j.contains("target_sps")) e.target_sps = j["target_sps"].get<double>();
    if (j.contains("p_target")) e.p_target = read_hist(j["p_target"]);
    return e;
  }
  if (type == "stall") {
    return Stall{j.at("start_us").get<std::int64_t>(), j.at("end_us").get<std::int64_t>(),
                 j.at("reason").get<std::string>(), j.at("cursor").get<std::size_t>(),
                 j.at("available").get<std::size_t>()};
  }
  if (type == "rate") {
    return RateChanged{j.at("t_us").get<std::int64_t>(), j.at("sps").get<double>(), j.value("clamped", false)};
  }
  if (type == "text") {
    return TextIngested{j.at("t_us").get<std::int64_t>(), j.at("token").get<std::string>(),
                        j.at("phonemes").get<std::size_t>()};
  }
  if (type == "warning") return Warning{j.at("t_us").get<std::int64_t>(), j.at("text").get<std::string>()};
  if (type == "error") return ErrorEvent{j.at("t_us").get<std::int64_t>(), j.at("text").get<std::string>()};
  if (type == "done") {
    Done e;
    e.t_us = j.at("t_us").get<std::int64_t>();
    e.frames = j.at("frames").get<std::size_t>();
    e.stalls = j.at("stalls").get<std::size_t>();
    e.stall_total_us = j.at("stall_total_us").get<std::int64_t>();
    e.compute_us = j.at("compute_us").get<std::int64_t>();
    e.audio_us = j.at("audio_us").get<std::int64_t>();
    e.phonemes = j.value("phonemes", std::size_t{0});
    e.coverage_gaps = j.value("coverage_gaps", std::size_t{0});
    e.aborted = j.value("aborted", false);
    return e;
  }
  throw std::invalid_argument("event: unknown type '" + type + "'");
}

}  // namespace

StreamEvent parse_event(std::string_view line) {
  try {
    return from_object(json::parse(line));
  } catch (const json::exception& e) {
    // missing fields and wrong types land here too
    throw std::invalid_argument(std::string("event: ") + e.what());
  }
}

void write_events(std::ostream& out, const std::vector<StreamEvent>& events) {
  for (const auto& e : events) out << to_jsonl(e) << '\n';
}

std::vector<StreamEvent> read_events(std::istream& in) {
  std::vector<StreamEvent> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_event(line));
  }
  return out;
}

}  // namespace stts
