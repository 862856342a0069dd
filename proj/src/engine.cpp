#include "stts/engine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stts {

std::int64_t EngineConfig::frame_period_us() const { return std::llround(1e6 / frame_rate); }

void EngineConfig::validate() const {
  if (tps && !(*tps > 0.0)) throw std::invalid_argument("engine config: tps must be > 0");
  if (la_min < 1) throw std::invalid_argument("engine config: la_min must be >= 1");
  if (la_min > la_max) throw std::invalid_argument("engine config: la_min must not exceed la_max");
  if (!(frame_rate > 0.0) || !std::isfinite(frame_rate)) throw std::invalid_argument("engine config: bad frame rate");
  if (max_frames == 0) throw std::invalid_argument("engine config: max_frames must be > 0");
  sampler.validate();
  guidance.validate();
  if (prompt) prompt->validate();
}

SpeakerEmbedding default_speaker(std::size_t dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5eedULL));
  std::vector<float> v(dim);
  for (float& x : v) x = static_cast<float>(rng.normal());
  return SpeakerEmbedding(std::move(v), 1.5);
}

Session::Session(EngineConfig config, std::unique_ptr<Backend> backend, G2pFn g2p)
    : cfg_(std::move(config)),
      backend_(std::move(backend)),
      g2p_(std::move(g2p)),
      rng_(cfg_.sampler.rng_seed),
      period_us_(0),
      wall_start_(std::chrono::steady_clock::now()) {
  cfg_.validate();
  if (!backend_) throw std::invalid_argument("session: no backend");
  if (cfg_.dims && !(*cfg_.dims == backend_->dims())) {
    throw std::invalid_argument("session: configured model dims do not match the backend");
  }
  period_us_ = cfg_.frame_period_us();
  cost_ = cfg_.cost ? *cfg_.cost : backend_->cost_model();
  speaker_ = cfg_.speaker ? *cfg_.speaker : default_speaker(backend_->dims().speaker_dim, cfg_.sampler.rng_seed);
  if (speaker_.vector().size() != backend_->dims().speaker_dim) {
    throw std::invalid_argument("session: speaker embedding width does not match the backend");
  }
  if (cfg_.prompt) prompt_prefill(*cfg_.prompt);
}

void Session::push(Command c) {
  {
    std::lock_guard lk(mu_);
    commands_.push_back(std::move(c));
  }
  cv_.notify_all();
}

void Session::feed_text(std::string token) {
  {
    std::lock_guard lk(mu_);
    if (end_submitted_) throw std::logic_error("feed_text after end_text");
  }
  push(Command{Command::Kind::text, std::move(token), {}, 0.0});
}

void Session::feed_phonemes(std::vector<Phoneme> phonemes, std::string label) {
  for (const auto& p : phonemes) {
    if (p.is_punctuation && p.is_syllable_nucleus) throw std::invalid_argument("punctuation cannot be a nucleus");
  }
  {
    std::lock_guard lk(mu_);
    if (end_submitted_) throw std::logic_error("feed_text after end_text");
  }
  push(Command{Command::Kind::phonemes, std::move(label), std::move(phonemes), 0.0});
}

void Session::end_text() {
  {
    std::lock_guard lk(mu_);
    end_submitted_ = true;
  }
  push(Command{Command::Kind::end, {}, {}, 0.0});
}

void Session::set_rate(double sps) {
  if (!cfg_.src_enabled) throw std::logic_error("set_rate requires SRC to be enabled");
  if (!std::isfinite(sps) || sps <= 0.0) throw std::invalid_argument("set_rate: sps must be positive and finite");
  push(Command{Command::Kind::rate, {}, {}, sps});
}

void Session::prompt_prefill(const PromptSpec& prompt, const PromptEnhancer& enhancer) {
  if (frames_ > 0 || !history_.empty()) throw std::logic_error("prompt_prefill after generation started");
  const PromptSpec p = enhancer ? enhancer(prompt) : prompt;
  p.validate();
  const auto unk = mask_prompt(p);
  prompt_frames_ = p.frame_count;
  history_.reserve(p.frame_count);
  for (std::size_t i = 0; i < p.frame_count; ++i) {
    BackendRequest req;
    req.cursor = 0;
    req.history = std::span<const AudioFrame>(history_.data(), history_.size());
    req.frame_index = i;
    req.prompt_frames = p.frame_count;
    req.prompt_step = true;
    req.unk_symbol = unk[i];
    req.speaker = speaker_;
    // Outputs are discarded; this only primes the backend state.
    if (cfg_.guidance.tt_guided()) {
      const auto b = make_cfg_batch(req, cfg_.guidance);
      const std::array<BackendRequest, 2> batch{b.conditional, b.unconditional};
      backend_->tt_step(std::span<const BackendRequest>(batch));
    } else {
      backend_->tt_step(req);
    }
    history_.push_back(p.audio_tokens[i]);
  }
}

void Session::emit(StreamEvent e) { events_.push_back(std::move(e)); }

std::vector<StreamEvent> Session::take_events() {
  std::vector<StreamEvent> out;
  out.swap(events_);
  return out;
}

std::int64_t Session::wall_now() const {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - wall_start_).count();
}

void Session::drain_commands(std::int64_t tau) {
  std::deque<Command> cmds;
  {
    std::lock_guard lk(mu_);
    cmds.swap(commands_);
  }
  const std::int64_t spacing = cfg_.tps ? std::llround(1e6 / *cfg_.tps) : 0;
  std::optional<double> rate;
  for (auto& c : cmds) {
    switch (c.kind) {
      case Command::Kind::text:
      case Command::Kind::phonemes: {
        const std::int64_t arrival = last_arrival_ < 0 ? tau : std::max(tau, last_arrival_ + spacing);
        last_arrival_ = arrival;
        std::vector<Phoneme> ph = c.kind == Command::Kind::text ? g2p_(c.token) : std::move(c.phonemes);
        pending_.push_back(Pending{arrival, std::move(c.token), std::move(ph)});
        break;
      }
      case Command::Kind::end:
        end_requested_ = true;
        break;
      case Command::Kind::rate:
        rate = c.sps;  // last one wins
        break;
    }
  }
  if (rate) {
    const auto lookup = cfg_.table.target_distribution(*rate);
    override_sps_ = *rate;
    emit(RateChanged{tau, *rate, lookup.clamped});
    if (lookup.clamped) {
      emit(Warning{tau, "target sps " + std::to_string(*rate) + " outside the rate table, clamped to " +
                            std::to_string(lookup.sps)});
    }
  }
}

void Session::ingest_until(std::int64_t t) {
  while (!pending_.empty() && pending_.front().arrival_us <= t) {
    Pending p = std::move(pending_.front());
    pending_.pop_front();
    stream_.append(p.phonemes);
    emit(TextIngested{p.arrival_us, std::move(p.token), p.phonemes.size()});
  }
  if (end_requested_ && pending_.empty() && !stream_.ended()) stream_.end();
}

void Session::finish(std::int64_t t, bool aborted) {
  if (stall_start_) {
    emit(Stall{*stall_start_, t, "lookahead", align_.cursor, stream_.available()});
    ++stall_count_;
    stall_total_ += t - *stall_start_;
    stall_start_.reset();
  }
  Done d;
  d.t_us = t;
  d.frames = frames_;
  d.stalls = stall_count_;
  d.stall_total_us = stall_total_;
  d.compute_us = compute_total_;
  d.audio_us = static_cast<std::int64_t>(frames_) * period_us_;
  d.phonemes = stream_.available();
  d.coverage_gaps = coverage_gaps_;
  d.aborted = aborted;
  emit(d);
  done_ = true;
}

bool Session::step() {
  if (done_) return false;
  std::int64_t tau = next_tick_;
  if (cfg_.clock == ClockMode::wall) {
    std::unique_lock lk(mu_);
    // Before the first frame a new command may open the gate early.
    cv_.wait_until(lk, wall_start_ + std::chrono::microseconds(tau),
                   [&] { return frames_ == 0 && !commands_.empty(); });
    lk.unlock();
    tau = wall_now();
  }

  drain_commands(tau);
  ingest_until(tau);

  if (align_.consumed(stream_)) {
    finish(tau, false);
    return false;
  }
  if (frames_ >= cfg_.max_frames) {
    emit(Warning{tau, "max_frames reached (" + std::to_string(cfg_.max_frames) + "), stopping"});
    finish(tau, true);
    return false;
  }

  if (gate(stream_, align_, cfg_.la_min)) {
    if (stall_start_) {
      emit(Stall{*stall_start_, tau, "lookahead", align_.cursor, stream_.available()});
      ++stall_count_;
      stall_total_ += tau - *stall_start_;
      stall_start_.reset();
    }
    std::int64_t end = tau;
    try {
      end = compute_frame(tau);
    } catch (const std::exception& e) {
      emit(ErrorEvent{tau, e.what()});
      finish(tau, true);
      return false;
    }
    next_tick_ = std::max(tau + period_us_, end);
  } else if (frames_ > 0) {
    if (!stall_start_) stall_start_ = tau;
    next_tick_ = tau + period_us_;
  } else {
    // Waiting for the first look-ahead is latency, not a stall.
    next_tick_ = pending_.empty() ? tau + period_us_ : pending_.front().arrival_us;
  }
  return true;
}

void Session::advance_to(std::int64_t now_us) {
  while (!done_ && next_tick_ <= now_us) step();
}

void Session::run_to_completion() {
  while (step()) {
  }
}

std::int64_t Session::compute_frame(std::int64_t tau) {
  const auto wall_t0 = std::chrono::steady_clock::now();
  const ModelDims& dims = backend_->dims();
  const SamplerConfig& sc = cfg_.sampler;
  const GuidanceConfig& gc = cfg_.guidance;

  BackendRequest req;
  const auto win = visible_window(stream_, align_, cfg_.la_max);
  req.window.assign(win.begin(), win.end());
  req.cursor = align_.cursor;
  req.history = std::span<const AudioFrame>(history_.data(), history_.size());
  req.frame_index = history_.size();
  req.prompt_frames = prompt_frames_;
  req.speaker = speaker_;

  std::vector<TtOutput> tt;
  if (gc.tt_guided()) {
    const auto b = make_cfg_batch(req, gc);
    const std::array<BackendRequest, 2> batch{b.conditional, b.unconditional};
    tt = backend_->tt_step(std::span<const BackendRequest>(batch));
  } else {
    tt = backend_->tt_step(std::span<const BackendRequest>(&req, 1));
  }
  for (const auto& o : tt) {
    if (o.joint.size() != dims.joint_width()) {
      throw std::runtime_error("backend returned joint width " + std::to_string(o.joint.size()) + ", expected " +
                               std::to_string(dims.joint_width()));
    }
  }
  const auto cond = JointLogits::from_flat(std::span<const float>(tt[0].joint), dims.d_bins);

  // Duration state comes from the conditional branch only.
  const DurationDistribution p_current = marginal_duration(cond, sc.temperature);
  DurationDistribution p = p_current;
  const double audio_t = static_cast<double>(frames_) / cfg_.frame_rate;
  std::optional<ControllerOutput> ctl;
  if (cfg_.src_enabled) {
    ctl = controller_step(cfg_.table, window_, cfg_.schedule, ClockPosition{audio_t, align_.cursor}, override_sps_);
    p = apply_matching(p, matching_weights(ctl->target, ctl->accumulated, sc.beta));
  }
  const DurationMask mask = legal_duration_mask(align_, stream_, cfg_.mask_lookahead);
  p = mask_and_renormalize(p, mask);
  const std::size_t d = sample_duration(p, sc.top_p, rng_);

  std::vector<double> sem_row(cond.row(d).begin(), cond.row(d).end());
  if (gc.tt_guided()) {
    const auto uncond = JointLogits::from_flat(std::span<const float>(tt[1].joint), dims.d_bins);
    sem_row = cfg_combine(cond.row(d), uncond.row(d), gc.gamma_temp);
  }
  const int semantic = static_cast<int>(sample_top_k(sem_row, sc.top_k, sc.temperature, rng_));

  DtRequest dc{tt[0].frame_embedding, semantic, speaker_, false};
  std::vector<DtOutput> dt;
  if (gc.dt_guided()) {
    DtRequest du = dc;
    du.speaker_dropped = true;
    const std::array<DtRequest, 2> batch{dc, du};
    dt = backend_->dt_step(std::span<const DtRequest>(batch));
  } else {
    dt = backend_->dt_step(std::span<const DtRequest>(&dc, 1));
  }
  for (const auto& o : dt) {
    if (o.codebooks.size() != dims.n_acoustic()) {
      throw std::runtime_error("backend returned " + std::to_string(o.codebooks.size()) + " codebooks, expected " +
                               std::to_string(dims.n_acoustic()));
    }
  }
  std::vector<std::vector<double>> logits;
  logits.reserve(dims.n_acoustic());
  for (std::size_t c = 0; c < dims.n_acoustic(); ++c) {
    const auto& lc = dt[0].codebooks[c];
    if (gc.dt_guided()) {
      const std::vector<double> a(lc.begin(), lc.end());
      const std::vector<double> b(dt[1].codebooks[c].begin(), dt[1].codebooks[c].end());
      logits.push_back(cfg_combine(a, b, gc.gamma_depth));
    } else {
      logits.emplace_back(lc.begin(), lc.end());
    }
  }
  const auto acoustic = sample_acoustic(logits);

  const FrameAdvance adv = advance(align_, duration_decode(static_cast<int>(d)), stream_, cfg_.mask_lookahead);
  const DurationDistribution p_acc = window_.accumulate(static_cast<int>(d), audio_t);
  if (adv.skipped > 0) ++coverage_gaps_;

  AudioFrame frame{};
  frame[0] = semantic;
  for (std::size_t c = 0; c < acoustic.size() && c + 1 < frame.size(); ++c) frame[c + 1] = acoustic[c];
  history_.push_back(frame);

  const std::int64_t cost =
      cfg_.clock == ClockMode::wall
          ? std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - wall_t0).count()
          : cost_.per_frame_us();
  compute_total_ += cost;
  const std::int64_t end = tau + cost;
  ingest_until(end);

  FrameEmitted ev;
  ev.t_us = end;
  ev.frame = frames_;
  ev.duration = static_cast<int>(d);
  ev.semantic = semantic;
  for (std::size_t c = 0; c < kNumAcoustic && c < acoustic.size(); ++c) ev.acoustic[c] = acoustic[c];
  ev.covered_first = adv.coverage.first;
  ev.covered_count = adv.coverage.count;
  ev.cursor = adv.cursor_after;
  ev.nuclei = adv.new_nuclei;
  ev.skipped = adv.skipped;
  std::copy(p_current.p.begin(), p_current.p.end(), ev.p_current.begin());
  std::copy(p_acc.p.begin(), p_acc.p.end(), ev.p_acc.begin());
  if (ctl) {
    ev.target_sps = ctl->target_sps;
    Histogram h{};
    std::copy(ctl->target.p.begin(), ctl->target.p.end(), h.begin());
    ev.p_target = h;
  }
  emit(std::move(ev));
  ++frames_;
  return end;
}

std::vector<StreamEvent> run(const EngineConfig& config, std::unique_ptr<Backend> backend,
                             const std::vector<std::vector<Phoneme>>& tokens) {
  Session s(config, std::move(backend));
  for (std::size_t i = 0; i < tokens.size(); ++i) s.feed_phonemes(tokens[i], "tok" + std::to_string(i));
  s.end_text();
  s.run_to_completion();
  return s.take_events();
}

std::vector<StreamEvent> run_text(const EngineConfig& config, std::unique_ptr<Backend> backend,
                                  const std::vector<std::string>& words, G2pFn g2p) {
  Session s(config, std::move(backend), std::move(g2p));
  for (const auto& w : words) s.feed_text(w);
  s.end_text();
  s.run_to_completion();
  return s.take_events();
}

}  // namespace stts
