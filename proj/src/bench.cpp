#include "stts/bench.hpp"

#include <atomic>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace stts {

namespace {

const Done* find_done(const std::vector<StreamEvent>& events) {
  for (auto it = events.rbegin(); it != events.rend(); ++it) {
    if (const auto* d = std::get_if<Done>(&*it)) return d;
  }
  return nullptr;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

std::optional<double> measure_fpl(const std::vector<StreamEvent>& events) {
  std::optional<std::int64_t> first_text;
  for (const auto& e : events) {
    if (const auto* t = std::get_if<TextIngested>(&e)) {
      if (!first_text) first_text = t->t_us;
    } else if (const auto* f = std::get_if<FrameEmitted>(&e)) {
      if (!first_text) return std::nullopt;
      return static_cast<double>(f->t_us - *first_text) / 1000.0;
    }
  }
  return std::nullopt;
}

double rtf_from_durations(double processing_seconds, double audio_seconds) {
  if (!(audio_seconds > 0.0)) throw std::invalid_argument("rtf: no audio generated");
  return processing_seconds / audio_seconds;
}

double measure_rtf(const std::vector<StreamEvent>& events) {
  const Done* d = find_done(events);
  if (!d) throw std::invalid_argument("rtf: event stream has no done event");
  if (d->frames == 0) throw std::invalid_argument("rtf: zero frames");
  return rtf_from_durations(static_cast<double>(d->compute_us) * 1e-6, static_cast<double>(d->audio_us) * 1e-6);
}

StallStats measure_stalls(const std::vector<StreamEvent>& events) {
  StallStats s;
  for (const auto& e : events) {
    if (const auto* st = std::get_if<Stall>(&e)) {
      ++s.count;
      s.total_ms += static_cast<double>(st->end_us - st->start_us) / 1000.0;
    }
  }
  return s;
}

RateEvalResult rate_eval(const std::vector<StreamEvent>& events, const RateSchedule& schedule, double frame_rate) {
  RateEvalResult r;
  std::vector<FrameNuclei> nuclei;
  for (const auto& e : events) {
    const auto* f = std::get_if<FrameEmitted>(&e);
    if (!f) continue;
    const double t = static_cast<double>(f->frame) / frame_rate;
    nuclei.push_back({t, f->nuclei});
    const double target = f->target_sps ? *f->target_sps : schedule.at(t, f->covered_first);
    r.target.samples.push_back({t, target});
  }
  if (nuclei.empty()) throw std::invalid_argument("rate_eval: no frames");
  SpsEstimateOptions opt;
  opt.frame_period = 1.0 / frame_rate;
  r.achieved = estimate_sps(nuclei, opt);
  try {
    r.corr = pearson(r.target, r.achieved);
  } catch (const std::exception& e) {
    r.corr_error = e.what();
  }
  return r;
}

void write_curves_csv(std::ostream& out, const RateEvalResult& result) {
  out << "time,target_sps,achieved_sps\n";
  for (std::size_t i = 0; i < result.target.samples.size(); ++i) {
    const auto& s = result.target.samples[i];
    out << fmt(s.time) << ',' << fmt(s.sps) << ',' << fmt(result.achieved.value_at(s.time)) << '\n';
  }
}

std::vector<FlipResponse> flip_responses(const std::vector<StreamEvent>& events, double frame_rate, double horizon,
                                         double min_fraction) {
  std::vector<const FrameEmitted*> frames;
  for (const auto& e : events) {
    if (const auto* f = std::get_if<FrameEmitted>(&e)) {
      if (!f->target_sps) throw std::invalid_argument("flip_responses: frames carry no target (SRC off)");
      frames.push_back(f);
    }
  }
  const double dt = 1.0 / frame_rate;
  std::vector<std::size_t> flips;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (*frames[i]->target_sps != *frames[i - 1]->target_sps) flips.push_back(i);
  }
  // frames [a, b) -> nuclei per second of audio
  auto rate = [&](std::size_t a, std::size_t b) {
    std::size_t n = 0;
    for (std::size_t i = a; i < b; ++i) n += frames[i]->nuclei;
    return b > a ? static_cast<double>(n) / (static_cast<double>(b - a) * dt) : 0.0;
  };
  const auto span = static_cast<std::size_t>(std::llround(horizon * frame_rate));
  std::vector<FlipResponse> out;
  for (std::size_t k = 0; k < flips.size(); ++k) {
    const std::size_t i = flips[k];
    const std::size_t lo = std::max(k > 0 ? flips[k - 1] : std::size_t{0}, i > span ? i - span : std::size_t{0});
    const std::size_t hi = std::min(k + 1 < flips.size() ? flips[k + 1] : frames.size(), i + span);
    FlipResponse fr;
    fr.flip_time = static_cast<double>(frames[i]->frame) * dt;
    fr.from_sps = *frames[i - 1]->target_sps;
    fr.to_sps = *frames[i]->target_sps;
    fr.rate_before = rate(lo, i);
    fr.rate_after = rate(i, hi);
    const double gap = fr.to_sps - fr.from_sps;
    const double moved = fr.rate_after - fr.rate_before;
    fr.responded = moved * gap > 0.0 && std::abs(moved) >= min_fraction * std::abs(gap);
    out.push_back(fr);
  }
  return out;
}

std::vector<Phoneme> cyclic_corpus(std::size_t n_phonemes) {
  // consonant, vowel, consonant, consonant, vowel
  static constexpr int symbols[] = {20, 3, 27, 31, 9, 18, 5, 24, 33, 12};
  static constexpr bool nucleus[] = {false, true, false, false, true};
  std::vector<Phoneme> out;
  out.reserve(n_phonemes);
  for (std::size_t i = 0; i < n_phonemes; ++i) out.push_back(Phoneme{symbols[i % 10], false, nucleus[i % 5]});
  return out;
}

std::vector<std::vector<Phoneme>> tokens_of(const std::vector<Phoneme>& phonemes, std::size_t per_token) {
  if (per_token == 0) throw std::invalid_argument("tokens_of: per_token must be >= 1");
  std::vector<std::vector<Phoneme>> out;
  for (std::size_t i = 0; i < phonemes.size(); i += per_token) {
    const std::size_t end = std::min(phonemes.size(), i + per_token);
    out.emplace_back(phonemes.begin() + static_cast<std::ptrdiff_t>(i), phonemes.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::string format_tps(const std::optional<double>& tps) { return tps ? fmt(*tps) : "inf"; }

std::optional<double> parse_tps(const std::string& text) {
  if (text == "inf" || text == "unlimited") return std::nullopt;
  std::size_t pos = 0;
  const double v = std::stod(text, &pos);
  if (pos != text.size() || !(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("bad tps value '" + text + "'");
  return v;
}

void SweepSpec::validate() const {
  if (tps.empty() || la.empty()) throw std::invalid_argument("sweep: empty grid");
  if (repetitions == 0) throw std::invalid_argument("sweep: repetitions must be >= 1");
  if (threads == 0) throw std::invalid_argument("sweep: threads must be >= 1");
}

BenchReport sweep(const SweepSpec& spec) {
  spec.validate();
  struct Cell {
    std::optional<double> tps;
    std::size_t la;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& t : spec.tps) {
    for (std::size_t la : spec.la) {
      for (std::size_t r = 0; r < spec.repetitions; ++r) {
        cells.push_back({t, la, derive_seed(spec.seed, cells.size())});
      }
    }
  }
  const auto corpus = spec.corpus.empty() ? tokens_of(cyclic_corpus(120)) : spec.corpus;

  std::vector<BenchRow> rows(cells.size());
  auto run_cell = [&](std::size_t i) {
    const Cell& c = cells[i];
    BenchRow& row = rows[i];
    row.tps = c.tps;
    row.la_min = c.la;
    row.seed = c.seed;
    try {
      EngineConfig cfg = spec.base;
      cfg.tps = c.tps;
      cfg.la_min = c.la;
      cfg.la_max = std::max(cfg.la_max, c.la);
      cfg.sampler.rng_seed = c.seed;
      const auto events = run(cfg, make_backend(spec.backend, c.seed), corpus);
      row.fpl_ms = measure_fpl(events);
      const Done* d = find_done(events);
      if (!d || d->aborted) {
        row.error = "session aborted";
        for (const auto& e : events) {
          if (const auto* err = std::get_if<ErrorEvent>(&e)) row.error = err->text;
        }
      }
      row.frames = d ? d->frames : 0;
      if (row.frames > 0) row.rtf = measure_rtf(events);
      const auto st = measure_stalls(events);
      row.stall_count = st.count;
      row.stall_total_ms = st.total_ms;
      if (cfg.src_enabled && row.frames > 0) row.corr = rate_eval(events, cfg.schedule, cfg.frame_rate).corr;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  };

  if (spec.threads <= 1 || cells.size() <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(spec.threads, cells.size()); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  BenchReport report;
  report.rows = std::move(rows);
  report.metadata["backend"] = spec.backend;
  report.metadata["clock"] = spec.base.clock == ClockMode::simulated ? "simulated" : "wall";
  report.metadata["cost_model"] = "per-frame cost from backend unless overridden";
  report.metadata["intelligibility"] = "WER not measured; coverage gaps and stalls reported instead";
  report.metadata["seed"] = std::to_string(spec.seed);
  report.metadata["corpus_tokens"] = std::to_string(corpus.size());
  return report;
}

void BenchReport::write_csv(std::ostream& out) const {
  out << "tps,la_min,fpl_ms,rtf,stall_count,stall_total_ms,corr,frames,seed,error\n";
  for (const auto& r : rows) {
    std::string err = r.error;
    for (char& ch : err) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    out << format_tps(r.tps) << ',' << r.la_min << ',' << (r.fpl_ms ? fmt(*r.fpl_ms) : "") << ',' << fmt(r.rtf) << ','
        << r.stall_count << ',' << fmt(r.stall_total_ms) << ',' << (r.corr ? fmt(*r.corr) : "") << ',' << r.frames
        << ',' << r.seed << ',' << err << '\n';
  }
}

std::string BenchReport::to_json() const {
  nlohmann::json j;
  j["metadata"] = metadata;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"tps", format_tps(r.tps)},
                       {"la_min", r.la_min},
                       {"fpl_ms", r.fpl_ms ? nlohmann::json(*r.fpl_ms) : nlohmann::json()},
                       {"rtf", r.rtf},
                       {"stall_count", r.stall_count},
                       {"stall_total_ms", r.stall_total_ms},
                       {"corr", r.corr ? nlohmann::json(*r.corr) : nlohmann::json()},
                       {"frames", r.frames},
                       {"seed", r.seed}};
    if (!r.error.empty()) row["error"] = r.error;
    j["rows"].push_back(row);
  }
  return j.dump(2);
}

ChunkReport chunk_size_run(std::size_t chunk_words, const std::vector<std::vector<Phoneme>>& words,
                           const EngineConfig& config, const std::string& backend, std::uint64_t seed) {
  if (chunk_words == 0) throw std::invalid_argument("chunk_size_run: chunk_words must be >= 1");
  std::vector<std::vector<Phoneme>> chunks;
  for (std::size_t i = 0; i < words.size(); i += chunk_words) {
    std::vector<Phoneme> c;
    for (std::size_t j = i; j < std::min(words.size(), i + chunk_words); ++j) {
      c.insert(c.end(), words[j].begin(), words[j].end());
    }
    chunks.push_back(std::move(c));
  }
  EngineConfig cfg = config;
  cfg.sampler.rng_seed = seed;
  const auto events = run(cfg, make_backend(backend, seed), chunks);
  ChunkReport r;
  r.chunk_words = chunk_words;
  r.fpl_ms = measure_fpl(events);
  const auto st = measure_stalls(events);
  r.stall_count = st.count;
  r.stall_total_ms = st.total_ms;
  if (const Done* d = find_done(events)) {
    r.coverage_gaps = d->coverage_gaps;
    r.frames = d->frames;
  }
  return r;
}

}  // namespace stts
