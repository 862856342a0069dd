#pragma once

// Transport-independent control service: one Connection per client, each
// owning an engine session. The websocket server (server.hpp) only moves
// strings in and out of these objects.

#include <atomic>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stts/engine.hpp"

namespace stts {

inline constexpr std::string_view kServiceVersion = "0.3.0";

struct ServiceConfig {
  std::size_t max_sessions = 8;
  std::string backend = "stationary";
  std::uint64_t seed = 0;
  std::size_t queue_limit = 512;          // outbound messages before shedding sps/histogram
  std::int64_t telemetry_period_us = 200000;
  std::size_t sps_per_second = 10;        // hard cap on sps messages in any 1 s of session time
  double min_rate_sps = 1.0;
  double max_rate_sps = 7.0;
};

// Maps engine events to telemetry JSON strings. Deterministic in the event
// times, so a serialized event log replays to the same messages.
class TelemetryMapper {
 public:
  TelemetryMapper(const ServiceConfig& config, const RateSchedule& schedule, std::int64_t per_frame_cost_us,
                  double frame_rate = 12.5);

  std::vector<std::string> map(const StreamEvent& event);

 private:
  bool sps_allowed(std::int64_t t_us);
  std::string sps_message(std::int64_t t_us);
  double achieved_sps() const;

  ServiceConfig cfg_;
  RateSchedule schedule_;
  std::int64_t cost_us_;
  double frame_rate_;
  std::deque<std::pair<std::size_t, std::size_t>> recent_nuclei_;  // (frame, nuclei) over the last 3 s of audio
  std::size_t recent_sum_ = 0;
  std::size_t frames_ = 0;
  std::optional<std::int64_t> first_text_us_;
  std::optional<double> fpl_ms_;
  std::optional<double> target_;
  std::optional<std::int64_t> last_periodic_us_;
  std::deque<std::int64_t> sps_times_;
  bool deferred_rate_sps_ = false;
};

class ServiceHub;

class Connection {
 public:
  ~Connection();
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  // `now_us` is the connection's clock (microseconds since connect).
  void handle(std::string_view raw, std::int64_t now_us);
  void tick(std::int64_t now_us);
  std::vector<std::string> drain();

  bool refused() const { return refused_; }
  bool finished() const { return finished_; }
  bool started() const { return session_ != nullptr; }
  std::uint64_t id() const { return id_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t queued() const { return out_.size(); }
  std::size_t dropped() const { return dropped_; }

 private:
  friend class ServiceHub;
  Connection(ServiceHub* hub, std::uint64_t id, bool refused);

  void dispatch(std::string_view raw, std::int64_t now_us);
  void pump();
  void send(std::string msg, bool droppable);
  void error(std::string_view code, std::string_view text);

  ServiceHub* hub_;
  std::uint64_t id_;
  std::uint64_t seed_ = 0;
  bool refused_;
  bool holds_slot_;
  bool finished_ = false;
  bool text_ended_ = false;
  std::int64_t start_us_ = 0;
  std::unique_ptr<Session> session_;
  std::unique_ptr<TelemetryMapper> mapper_;
  std::deque<std::pair<bool, std::string>> out_;  // (droppable, message)
  std::size_t dropped_ = 0;
};

class ServiceHub {
 public:
  explicit ServiceHub(ServiceConfig config = {});

  // Always returns a connection; beyond max_sessions it is refused and holds
  // a single session_limit error.
  std::unique_ptr<Connection> connect();

  std::size_t active_sessions() const { return active_.load(); }
  std::string health_json() const;
  const ServiceConfig& config() const { return cfg_; }

 private:
  friend class Connection;
  void release() { active_.fetch_sub(1); }

  ServiceConfig cfg_;
  std::atomic<std::size_t> active_{0};
  std::atomic<std::uint64_t> next_id_{0};
};

}  // namespace stts
