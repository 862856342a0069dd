#include "stts/service.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace stts {

using nlohmann::json;

namespace {

json hist_json(const Histogram& h) { return json(std::vector<double>(h.begin(), h.end())); }

double seconds(std::int64_t us) { return static_cast<double>(us) * 1e-6; }

// Keys are sorted and string values escaped, so the tag cannot appear by accident.
bool droppable(const std::string& msg) {
  return msg.find("\"type\":\"sps\"") != std::string::npos || msg.find("\"type\":\"histogram\"") != std::string::npos;
}

// Field readers raise invalid_argument, reported as bad_field.
std::size_t read_count(const json& doc, const char* key, std::size_t fallback) {
  if (!doc.contains(key)) return fallback;
  const auto& v = doc[key];
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw std::invalid_argument(std::string(key) + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double read_number(const json& v, const char* key) {
  if (!v.is_number()) throw std::invalid_argument(std::string(key) + " must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw std::invalid_argument(std::string(key) + " must be finite");
  return x;
}

}  // namespace

TelemetryMapper::TelemetryMapper(const ServiceConfig& config, const RateSchedule& schedule,
                                 std::int64_t per_frame_cost_us, double frame_rate)
    : cfg_(config), schedule_(schedule), cost_us_(per_frame_cost_us), frame_rate_(frame_rate) {}

bool TelemetryMapper::sps_allowed(std::int64_t t_us) {
  while (!sps_times_.empty() && t_us - sps_times_.front() >= 1000000) sps_times_.pop_front();
  if (sps_times_.size() >= cfg_.sps_per_second) return false;
  sps_times_.push_back(t_us);
  return true;
}

double TelemetryMapper::achieved_sps() const {
  if (recent_nuclei_.empty()) return 0.0;
  return static_cast<double>(recent_sum_) / (static_cast<double>(recent_nuclei_.size()) / frame_rate_);
}

std::string TelemetryMapper::sps_message(std::int64_t t_us) {
  json j{{"type", "sps"}, {"t", seconds(t_us)}, {"achieved", achieved_sps()}};
  j["target"] = target_ ? json(*target_) : json();
  return j.dump();
}

std::vector<std::string> TelemetryMapper::map(const StreamEvent& event) {
  std::vector<std::string> out;
  if (const auto* f = std::get_if<FrameEmitted>(&event)) {
    ++frames_;
    const auto window = static_cast<std::size_t>(std::llround(3.0 * frame_rate_));
    recent_nuclei_.emplace_back(f->frame, f->nuclei);
    recent_sum_ += f->nuclei;
    while (recent_nuclei_.size() > window) {
      recent_sum_ -= recent_nuclei_.front().second;
      recent_nuclei_.pop_front();
    }
    target_ = f->target_sps ? *f->target_sps
                            : schedule_.at(static_cast<double>(f->frame) / frame_rate_, f->covered_first);
    if (!fpl_ms_ && first_text_us_) fpl_ms_ = static_cast<double>(f->t_us - *first_text_us_) / 1000.0;

    out.push_back(json{{"type", "frame"},
                       {"index", f->frame},
                       {"t", seconds(f->t_us)},
                       {"duration", f->duration},
                       {"semantic", f->semantic},
                       {"covered", {f->covered_first, f->covered_count}},
                       {"cursor", f->cursor},
                       {"nuclei", f->nuclei}}
                      .dump());
    if (deferred_rate_sps_ && sps_allowed(f->t_us)) {
      deferred_rate_sps_ = false;
      out.push_back(sps_message(f->t_us));
    }
    if (!last_periodic_us_ || f->t_us - *last_periodic_us_ >= cfg_.telemetry_period_us) {
      last_periodic_us_ = f->t_us;
      if (sps_allowed(f->t_us)) out.push_back(sps_message(f->t_us));
      json h{{"type", "histogram"}, {"t", seconds(f->t_us)}, {"p_acc", hist_json(f->p_acc)}};
      h["p_target"] = f->p_target ? hist_json(*f->p_target) : json();
      out.push_back(h.dump());
      json m{{"type", "metrics"}, {"t", seconds(f->t_us)}, {"frames", frames_}};
      m["fpl_ms"] = fpl_ms_ ? json(*fpl_ms_) : json();
      m["rtf_so_far"] = static_cast<double>(cost_us_) * frame_rate_ * 1e-6;
      out.push_back(m.dump());
    }
  } else if (const auto* r = std::get_if<RateChanged>(&event)) {
    target_ = r->sps;
    if (sps_allowed(r->t_us)) {
      out.push_back(sps_message(r->t_us));
    } else {
      deferred_rate_sps_ = true;
    }
  } else if (const auto* t = std::get_if<TextIngested>(&event)) {
    if (!first_text_us_) first_text_us_ = t->t_us;
  } else if (const auto* w = std::get_if<Warning>(&event)) {
    out.push_back(json{{"type", "warning"}, {"code", "engine"}, {"text", w->text}}.dump());
  } else if (const auto* e = std::get_if<ErrorEvent>(&event)) {
    out.push_back(json{{"type", "error"}, {"code", "engine"}, {"text", e->text}}.dump());
  } else if (const auto* d = std::get_if<Done>(&event)) {
    json j{{"type", "done"},
           {"t", seconds(d->t_us)},
           {"frames", d->frames},
           {"stalls", d->stalls},
           {"stall_total_ms", static_cast<double>(d->stall_total_us) / 1000.0},
           {"coverage_gaps", d->coverage_gaps},
           {"aborted", d->aborted}};
    j["fpl_ms"] = fpl_ms_ ? json(*fpl_ms_) : json();
    j["rtf"] = d->audio_us > 0 ? json(static_cast<double>(d->compute_us) / static_cast<double>(d->audio_us)) : json();
    out.push_back(j.dump());
  }
  return out;
}

ServiceHub::ServiceHub(ServiceConfig config) : cfg_(std::move(config)) {
  if (cfg_.max_sessions == 0) throw std::invalid_argument("service: max_sessions must be >= 1");
  if (cfg_.queue_limit == 0 || cfg_.sps_per_second == 0) throw std::invalid_argument("service: limits must be >= 1");
  make_backend(cfg_.backend, cfg_.seed);  // fail fast on a bad backend spec
}

std::unique_ptr<Connection> ServiceHub::connect() {
  const std::uint64_t id = next_id_++;
  std::size_t cur = active_.load();
  while (cur < cfg_.max_sessions) {
    if (active_.compare_exchange_weak(cur, cur + 1)) return std::unique_ptr<Connection>(new Connection(this, id, false));
  }
  return std::unique_ptr<Connection>(new Connection(this, id, true));
}

std::string ServiceHub::health_json() const {
  return json{{"status", "ok"},
              {"version", std::string(kServiceVersion)},
              {"active_sessions", active_.load()},
              {"max_sessions", cfg_.max_sessions}}
      .dump();
}

Connection::Connection(ServiceHub* hub, std::uint64_t id, bool refused)
    : hub_(hub), id_(id), refused_(refused), holds_slot_(!refused) {
  seed_ = derive_seed(hub_->cfg_.seed, id_);
  if (refused_) {
    finished_ = true;
    error("session_limit", "server is at its limit of " + std::to_string(hub_->cfg_.max_sessions) + " sessions");
  }
}

Connection::~Connection() {
  if (holds_slot_) hub_->release();
}

void Connection::send(std::string msg, bool droppable) {
  if (out_.size() >= hub_->cfg_.queue_limit) {
    for (auto it = out_.begin(); it != out_.end(); ++it) {
      if (it->first) {
        out_.erase(it);
        ++dropped_;
        break;
      }
    }
  }
  out_.emplace_back(droppable, std::move(msg));
}

void Connection::error(std::string_view code, std::string_view text) {
  send(json{{"type", "error"}, {"code", code}, {"text", text}}.dump(), false);
}

std::vector<std::string> Connection::drain() {
  std::vector<std::string> v;
  v.reserve(out_.size());
  for (auto& m : out_) v.push_back(std::move(m.second));
  out_.clear();
  return v;
}

void Connection::handle(std::string_view raw, std::int64_t now_us) {
  try {
    dispatch(raw, now_us);
    pump();
  } catch (const std::exception& e) {
    error("internal", e.what());
  }
}

void Connection::tick(std::int64_t now_us) {
  if (!session_ || finished_) return;
  try {
    session_->advance_to(now_us - start_us_);
    pump();
  } catch (const std::exception& e) {
    error("internal", e.what());
  }
}

void Connection::pump() {
  if (!session_) return;
  for (const auto& ev : session_->take_events()) {
    for (auto& msg : mapper_->map(ev)) {
      const bool shed = droppable(msg);
      send(std::move(msg), shed);
    }
    if (std::holds_alternative<Done>(ev)) finished_ = true;
  }
}

void Connection::dispatch(std::string_view raw, std::int64_t now_us) {
  if (refused_) {
    error("session_limit", "connection was refused");
    return;
  }
  json doc = json::parse(raw, nullptr, false);
  if (doc.is_discarded()) {
    error("bad_json", "message is not valid JSON");
    return;
  }
  if (!doc.is_object() || !doc.contains("type") || !doc["type"].is_string()) {
    error("bad_field", "message must be an object with a string \"type\"");
    return;
  }
  const std::string type = doc["type"].get<std::string>();
  if (type != "start" && type != "text" && type != "end_text" && type != "set_rate" && type != "stop") {
    error("unknown_type", "unknown message type '" + type + "'");
    return;
  }
  if (type == "start") {
    if (session_ || finished_) {
      error("already_started", "session already started");
      return;
    }
    const ServiceConfig& hc = hub_->cfg_;
    EngineConfig cfg;
    try {
      if (doc.contains("tps")) {
        const auto& t = doc["tps"];
        if (t.is_null() || (t.is_string() && (t.get<std::string>() == "inf" || t.get<std::string>() == "unlimited"))) {
          cfg.tps = std::nullopt;
        } else {
          const double v = read_number(t, "tps");
          if (!(v > 0.0)) throw std::invalid_argument("tps must be > 0");
          cfg.tps = v;
        }
      }
      cfg.la_min = read_count(doc, "la_min", cfg.la_min);
      cfg.la_max = read_count(doc, "la_max", std::max(cfg.la_max, cfg.la_min));
      if (doc.contains("src")) {
        if (!doc["src"].is_boolean()) throw std::invalid_argument("src must be a boolean");
        cfg.src_enabled = doc["src"].get<bool>();
      }
      if (doc.contains("schedule")) {
        if (!doc["schedule"].is_string()) throw std::invalid_argument("schedule must be a string");
        cfg.schedule = RateSchedule::parse(doc["schedule"].get<std::string>());
      }
      if (doc.contains("sps")) {
        const double v = std::clamp(read_number(doc["sps"], "sps"), hc.min_rate_sps, hc.max_rate_sps);
        cfg.schedule = RateSchedule::constant(v);
      }
      if (doc.contains("gamma_temp")) cfg.guidance.gamma_temp = read_number(doc["gamma_temp"], "gamma_temp");
      if (doc.contains("gamma_depth")) cfg.guidance.gamma_depth = read_number(doc["gamma_depth"], "gamma_depth");
      if (doc.contains("seed")) {
        if (!doc["seed"].is_number_unsigned()) throw std::invalid_argument("seed must be a non-negative integer");
        seed_ = doc["seed"].get<std::uint64_t>();
      }
      if (cfg.la_max > 200) throw std::invalid_argument("la_max must be <= 200");
      cfg.sampler.rng_seed = seed_;
      cfg.validate();
      session_ = std::make_unique<Session>(cfg, make_backend(hc.backend, seed_));
    } catch (const std::exception& e) {
      error("bad_field", e.what());
      return;
    }
    start_us_ = now_us;
    const auto cost = session_->backend().cost_model().per_frame_us();
    mapper_ = std::make_unique<TelemetryMapper>(hc, cfg.schedule, cost, cfg.frame_rate);
    send(json{{"type", "started"},
              {"session", id_},
              {"seed", seed_},
              {"src", cfg.src_enabled},
              {"version", std::string(kServiceVersion)}}
             .dump(),
         false);
    return;
  }
  if (type == "stop") {
    if (finished_) {
      error("finished", "session already finished");
      return;
    }
    finished_ = true;
    send(json{{"type", "done"}, {"aborted", true}, {"frames", session_ ? session_->alignment().frames_emitted : 0}}.dump(),
         false);
    return;
  }
  if (!session_) {
    error("not_started", "send start first");
    return;
  }
  if (finished_) {
    error("finished", "session already finished");
    return;
  }
  if (type == "text") {
    if (text_ended_) {
      error("text_after_end", "text after end_text");
      return;
    }
    if (!doc.contains("token") || !doc["token"].is_string()) {
      error("bad_field", "text needs a string \"token\"");
      return;
    }
    session_->feed_text(doc["token"].get<std::string>());
    return;
  }
  if (type == "end_text") {
    if (text_ended_) {
      error("text_after_end", "end_text already received");
      return;
    }
    text_ended_ = true;
    session_->end_text();
    return;
  }
  // set_rate
  if (!doc.contains("sps") || !doc["sps"].is_number() || !std::isfinite(doc["sps"].get<double>())) {
    error("bad_field", "set_rate needs a finite number \"sps\"");
    return;
  }
  if (!session_->config().src_enabled) {
    error("src_disabled", "set_rate requires a session started with src enabled");
    return;
  }
  const double asked = doc["sps"].get<double>();
  const ServiceConfig& hc = hub_->cfg_;
  const double sps = std::clamp(asked, hc.min_rate_sps, hc.max_rate_sps);
  if (sps != asked) {
    send(json{{"type", "warning"},
              {"code", "rate_clamped"},
              {"text", "sps clamped to [" + std::to_string(hc.min_rate_sps) + ", " + std::to_string(hc.max_rate_sps) + "]"},
              {"sps", sps}}
             .dump(),
         false);
  }
  session_->set_rate(sps);
}

}  // namespace stts
