#include <doctest.h>

#include "fixtures.hpp"
#include "stts/engine.hpp"

using namespace stts;
using fixture::done_of;
using fixture::frames_of;

namespace {

std::vector<std::vector<Phoneme>> singles(std::size_t n) { return tokens_of(cyclic_corpus(n)); }

EngineConfig base() {
  EngineConfig c;
  c.tps = std::nullopt;
  return c;
}

}  // namespace

TEST_CASE("forced (1,1): one frame per phoneme, cursor 1..10") {
  const auto ev = run(base(), fixture::forced_token(2), singles(10));
  const auto f = frames_of(ev);
  REQUIRE(f.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(f[i].duration == 2);
    CHECK(f[i].cursor == i + 1);
    CHECK(f[i].covered_first == i);
    CHECK(f[i].covered_count == 1);
  }
  CHECK(done_of(ev).frames == 10);
  CHECK_FALSE(done_of(ev).aborted);
  CHECK(done_of(ev).coverage_gaps == 0);
}

TEST_CASE("cursor-parity program alternates frame by frame") {
  auto program = ScriptedBackend::from_json(R"({"rules": [
      {"when": {"cursor_mod": [2, 0]}, "duration_probs": [0,0,1,0,0,0], "acoustic_tokens": [1,1,1,1,1,1,1,1,1,1,1,1,1,1,1]},
      {"when": {"cursor_mod": [2, 1]}, "duration_probs": [0,0,1,0,0,0], "acoustic_tokens": [3,3,3,3,3,3,3,3,3,3,3,3,3,3,3]}]})");
  const auto f = frames_of(run(base(), std::move(program), singles(12)));
  REQUIRE(f.size() == 12);
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (int a : f[i].acoustic) CHECK(a == (i % 2 == 0 ? 1 : 3));
  }
}

TEST_CASE("first frame waits for the look-ahead") {
  EngineConfig c;
  c.tps = 10.0;
  c.cost = CostModel{3000, 2000};
  const auto ev = run(c, fixture::forced_token(2), singles(8));
  CHECK(frames_of(ev).front().t_us == 205000);
  CHECK(*measure_fpl(ev) == 205.0);

  // punctuation does not count toward it
  Session s(c, fixture::forced_token(2));
  s.feed_phonemes({Phoneme{3, false, true}});
  s.feed_phonemes({Phoneme{41, true, false}});
  s.feed_phonemes({Phoneme{5, false, false}});
  s.feed_phonemes({Phoneme{7, false, true}});
  s.end_text();
  s.run_to_completion();
  CHECK(frames_of(s.take_events()).front().t_us == 305000);

  // unlimited tps: everything lands at 0, first frame costs one step
  const auto fast = run(base(), fixture::forced_token(2), singles(8));
  CHECK(frames_of(fast).front().t_us == 5000);
}

TEST_CASE("arrival spacing follows tps") {
  for (auto [tps, gap] : {std::pair{40.0, 25000}, std::pair{10.0, 100000}}) {
    EngineConfig c;
    c.tps = tps;
    std::vector<std::int64_t> times;
    for (const auto& e : run(c, fixture::forced_token(2), singles(6))) {
      if (const auto* t = std::get_if<TextIngested>(&e)) times.push_back(t->t_us);
    }
    REQUIRE(times.size() == 6);
    for (std::size_t i = 0; i < times.size(); ++i) CHECK(times[i] == static_cast<std::int64_t>(i) * gap);
  }
}

TEST_CASE("end_text on an empty buffer finishes at once") {
  Session s(base(), fixture::forced_token(2));
  s.end_text();
  s.run_to_completion();
  const auto ev = s.take_events();
  REQUIRE(ev.size() == 1);
  CHECK(done_of(ev).frames == 0);
  CHECK(done_of(ev).t_us == 0);
  CHECK_FALSE(measure_fpl(ev).has_value());
}

TEST_CASE("guidance at 1 is identical to guidance off") {
  const auto dims = fixture::small_dims();
  EngineConfig on = base();
  on.guidance.gamma_temp = 1.0;
  on.guidance.gamma_depth = 1.0;
  on.sampler.rng_seed = 21;
  EngineConfig off = on;
  off.guidance.text_cfg_enabled = off.guidance.audio_cfg_enabled = off.guidance.speaker_cfg_enabled = false;
  const auto a = run(on, std::make_unique<ToyBackend>(dims, 3), singles(30));
  const auto b = run(off, std::make_unique<ToyBackend>(dims, 3), singles(30));
  const auto fa = frames_of(a);
  const auto fb = frames_of(b);
  REQUIRE(fa.size() == fb.size());
  for (std::size_t i = 0; i < fa.size(); ++i) {
    CHECK(fa[i].duration == fb[i].duration);
    CHECK(fa[i].semantic == fb[i].semantic);
    CHECK(fa[i].acoustic == fb[i].acoustic);
  }
}

TEST_CASE("duration state does not see the temporal guidance scale") {
  const auto dims = fixture::small_dims();
  std::vector<std::vector<FrameEmitted>> runs;
  for (double g : {1.0, 1.5, 4.0}) {
    EngineConfig c = base();
    c.guidance.gamma_temp = g;
    c.sampler.rng_seed = 5;
    runs.push_back(frames_of(run(c, std::make_unique<fixture::HistoryBlind>(dims, 8), singles(40))));
  }
  bool semantic_differs = false;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    REQUIRE(runs[r].size() == runs[0].size());
    for (std::size_t i = 0; i < runs[0].size(); ++i) {
      CHECK(runs[r][i].p_current == runs[0][i].p_current);
      CHECK(runs[r][i].duration == runs[0][i].duration);
      semantic_differs = semantic_differs || runs[r][i].semantic != runs[0][i].semantic;
    }
  }
  CHECK(semantic_differs);
}

TEST_CASE("set_rate ordering") {
  EngineConfig c = base();
  c.src_enabled = true;
  c.schedule = RateSchedule::constant(4.0);

  SUBCASE("between frames k and k+1") {
    Session s(c, make_backend("stationary", 1));
    for (const auto& t : singles(60)) s.feed_phonemes(t);
    s.end_text();
    while (s.alignment().frames_emitted < 5) s.step();
    s.set_rate(3.0);
    while (s.alignment().frames_emitted < 6) s.step();
    const auto f = frames_of(s.take_events());
    CHECK(*f[4].target_sps == 4.0);
    CHECK(*f[5].target_sps == 3.0);
    CHECK(f[5].p_target->at(0) == c.table.target_distribution(3.0).dist[0]);
  }
  SUBCASE("last command wins") {
    Session s(c, make_backend("stationary", 1));
    for (const auto& t : singles(60)) s.feed_phonemes(t);
    s.end_text();
    s.step();
    s.set_rate(2.0);
    s.set_rate(5.0);
    s.step();
    const auto ev = s.take_events();
    std::size_t changes = 0;
    for (const auto& e : ev) changes += std::holds_alternative<RateChanged>(e);
    CHECK(changes == 1);
    CHECK(*frames_of(ev).back().target_sps == 5.0);
  }
  SUBCASE("during a stall, applied on resume") {
    c.tps = 2.0;
    Session s(c, make_backend("stationary", 1));
    for (const auto& t : singles(20)) s.feed_phonemes(t);
    s.end_text();
    // run until a stall is open: a frame exists and the gate is shut
    for (int i = 0; i < 200 && !(s.alignment().frames_emitted > 0 &&
                                 !gate(s.stream(), s.alignment(), c.la_min));
         ++i) {
      s.step();
    }
    REQUIRE_FALSE(gate(s.stream(), s.alignment(), c.la_min));
    const std::size_t before = s.alignment().frames_emitted;
    s.set_rate(6.0);
    while (s.alignment().frames_emitted == before) s.step();
    const auto f = frames_of(s.take_events());
    CHECK(*f.back().target_sps == 6.0);
    CHECK(*f[before - 1].target_sps == 4.0);
  }
  SUBCASE("out of table range is clamped with a warning") {
    Session s(c, make_backend("stationary", 1));
    for (const auto& t : singles(20)) s.feed_phonemes(t);
    s.step();
    s.set_rate(9.5);
    s.step();
    const auto ev = s.take_events();
    bool warned = false;
    for (const auto& e : ev) {
      if (const auto* r = std::get_if<RateChanged>(&e)) CHECK(r->clamped);
      warned = warned || std::holds_alternative<Warning>(e);
    }
    CHECK(warned);
    CHECK(*frames_of(ev).back().target_sps == c.table.max_sps());
  }
}

TEST_CASE("command guards") {
  Session s(base(), fixture::forced_token(2));
  CHECK_THROWS_AS(s.set_rate(3.0), std::logic_error);
  s.feed_text("hello");
  s.end_text();
  CHECK_THROWS_AS(s.feed_text("again"), std::logic_error);
  CHECK_THROWS_AS(s.feed_phonemes({Phoneme{1, false, false}}), std::logic_error);
  EngineConfig c = base();
  c.src_enabled = true;
  Session r(c, fixture::forced_token(2));
  CHECK_THROWS_AS(r.set_rate(-1.0), std::invalid_argument);
  CHECK_THROWS(r.feed_phonemes({Phoneme{41, true, true}}));
}

TEST_CASE("prompt prefill") {
  EngineConfig c = base();
  const auto dims = fixture::small_dims();
  Session s(c, std::make_unique<ToyBackend>(dims, 2));
  PromptSpec p{38, std::vector<AudioFrame>(38), kUnkSymbol};
  for (std::size_t i = 0; i < 38; ++i) p.audio_tokens[i][0] = static_cast<int>(i % 32);
  bool enhanced = false;
  s.prompt_prefill(p, [&](const PromptSpec& in) {
    enhanced = true;
    return in;
  });
  CHECK(enhanced);
  CHECK(s.history_length() == 38);
  CHECK(s.prompt_frames() == 38);
  for (const auto& t : singles(10)) s.feed_phonemes(t);
  s.end_text();
  s.step();
  CHECK(s.history_length() == 39);
  CHECK_THROWS_AS(s.prompt_prefill(p), std::logic_error);
  s.run_to_completion();
  CHECK(frames_of(s.take_events()).front().frame == 0);

  Session empty(c, std::make_unique<ToyBackend>(dims, 2));
  empty.prompt_prefill(PromptSpec{});
  CHECK(empty.history_length() == 0);
}

TEST_CASE("simulated runs are bit-identical") {
  EngineConfig c;
  c.tps = 10.0;
  c.src_enabled = true;
  c.schedule = RateSchedule::ramp(2.0, 6.0, 10.0);
  c.sampler.rng_seed = 77;
  const auto a = fixture::jsonl(run(c, make_backend("toy", 4), singles(40)));
  const auto b = fixture::jsonl(run(c, make_backend("toy", 4), singles(40)));
  CHECK(a == b);
  c.sampler.rng_seed = 78;
  CHECK(fixture::jsonl(run(c, make_backend("toy", 4), singles(40))) != a);
}

TEST_CASE("gating safety and stall causes, checked from ingestion times") {
  for (double tps : {2.0, 5.0, 10.0, 20.0}) {
    for (std::size_t la : {1, 3, 5}) {
      EngineConfig c;
      c.tps = tps;
      c.la_min = la;
      c.sampler.rng_seed = static_cast<std::uint64_t>(tps * 10 + static_cast<double>(la));
      const auto ev = run(c, make_backend("stationary:6", 0), singles(50));
      std::vector<std::pair<std::int64_t, std::size_t>> arrivals;
      for (const auto& e : ev) {
        if (const auto* t = std::get_if<TextIngested>(&e)) arrivals.emplace_back(t->t_us, t->phonemes);
      }
      auto available_at = [&](std::int64_t t) {
        std::size_t n = 0;
        for (const auto& [at, k] : arrivals) n += at <= t ? k : 0;
        return n;
      };
      const std::int64_t last_arrival = arrivals.back().first;
      for (const auto& f : frames_of(ev)) {
        const std::int64_t start = f.t_us - 5000;
        const std::size_t avail = available_at(start);
        const bool ended = start >= last_arrival;
        CHECK(avail > f.covered_first);
        if (!ended) CHECK(avail - f.covered_first >= la);
      }
      for (const auto& st : fixture::stalls_of(ev)) {
        CHECK(st.end_us > st.start_us);
        const std::size_t avail = available_at(st.start_us);
        CHECK(avail - std::min(avail, st.cursor) < la);
      }
    }
  }
}

TEST_CASE("max_frames and backend failure abort with diagnostics") {
  EngineConfig c = base();
  c.max_frames = 25;
  const auto stuck = run(c, fixture::forced_token(0), singles(5));  // never advances
  CHECK(done_of(stuck).aborted);
  CHECK(done_of(stuck).frames == 25);
  CHECK(std::holds_alternative<Warning>(stuck[stuck.size() - 2]));

  auto narrow = ScriptedBackend::from_json(R"({"rules": [{"when": {"frame": 0}, "duration_probs": [0,0,1,0,0,0]}]})");
  const auto broken = run(base(), std::move(narrow), singles(5));
  CHECK(done_of(broken).aborted);
  CHECK(done_of(broken).frames == 1);
  CHECK(std::holds_alternative<ErrorEvent>(broken[broken.size() - 2]));
}

TEST_CASE("skipping tokens count coverage gaps") {
  const auto ev = run(base(), fixture::forced_token(4), singles(10));  // (2,1)
  const auto f = frames_of(ev);
  CHECK(f.size() == 5);
  for (const auto& fr : f) CHECK(fr.skipped == 1);
  CHECK(done_of(ev).coverage_gaps == 5);
}

TEST_CASE("wall clock mode produces the same number of frames") {
  EngineConfig c = base();
  c.clock = ClockMode::wall;
  const auto ev = run(c, fixture::forced_token(2), singles(6));
  CHECK(frames_of(ev).size() == 6);
  CHECK(done_of(ev).audio_us == 6 * 80000);
}

TEST_CASE("config validation") {
  EngineConfig c;
  c.la_min = 0;
  CHECK_THROWS(c.validate());
  c = EngineConfig{};
  c.la_min = 30;
  CHECK_THROWS(c.validate());
  c = EngineConfig{};
  c.tps = -1.0;
  CHECK_THROWS(c.validate());
  c = EngineConfig{};
  c.dims = ModelDims{};
  CHECK_THROWS(Session(c, fixture::forced_token(2)));
  CHECK_THROWS(Session(EngineConfig{}, nullptr));
  c = EngineConfig{};
  c.speaker = SpeakerEmbedding(std::vector<float>(3, 1.0f));
  CHECK_THROWS(Session(c, fixture::forced_token(2)));
}
