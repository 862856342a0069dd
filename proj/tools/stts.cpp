// stts: command-line front end for the streaming synthesis engine.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "stts/bench.hpp"
#include "stts/engine.hpp"
#include "stts/g2p.hpp"
#include "stts/server.hpp"
#include "stts/service.hpp"
#include "stts/toy_backend.hpp"

using namespace stts;

namespace {

struct EngineOpts {
  std::string tps = "inf";
  std::size_t la_min = kDefaultLookAheadMin;
  std::size_t la_max = kDefaultLookAheadMax;
  bool src = false;
  std::string schedule = "const:4";
  double gamma_temp = 1.5;
  double gamma_depth = 3.0;
  std::uint64_t seed = 0;
  std::string clock = "sim";
  std::string backend = "toy";
};

void add_engine_opts(CLI::App* app, EngineOpts& o) {
  app->add_option("--tps", o.tps, "text tokens per second, or inf")->capture_default_str();
  app->add_option("--la-min", o.la_min, "minimum look-ahead (phonemes)")->capture_default_str();
  app->add_option("--la-max", o.la_max, "maximum look-ahead (phonemes)")->capture_default_str();
  app->add_flag("--src", o.src, "enable speaking-rate control");
  app->add_option("--schedule", o.schedule, "const:S | ramp:A:B[:sec] | alt:A:B[:period]")->capture_default_str();
  app->add_option("--gamma-temp", o.gamma_temp, "CFG scale for the temporal transformer")->capture_default_str();
  app->add_option("--gamma-depth", o.gamma_depth, "CFG scale for the depth transformer")->capture_default_str();
  app->add_option("--seed", o.seed, "rng seed")->capture_default_str();
  app->add_option("--clock", o.clock, "sim or wall")->check(CLI::IsMember({"sim", "wall"}))->capture_default_str();
  app->add_option("--backend", o.backend, "toy | toy:WEIGHTS | scripted[:FILE] | stationary[:SPS|uniform]")
      ->capture_default_str();
}

EngineConfig to_config(const EngineOpts& o) {
  EngineConfig c;
  c.tps = parse_tps(o.tps);
  c.la_min = o.la_min;
  c.la_max = o.la_max;
  c.src_enabled = o.src;
  c.schedule = RateSchedule::parse(o.schedule);
  c.guidance.gamma_temp = o.gamma_temp;
  c.guidance.gamma_depth = o.gamma_depth;
  c.sampler.rng_seed = o.seed;
  c.clock = o.clock == "wall" ? ClockMode::wall : ClockMode::simulated;
  return c;
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

std::vector<std::optional<double>> parse_tps_list(const std::string& csv) {
  std::vector<std::optional<double>> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_tps(item));
  if (out.empty()) throw std::invalid_argument("empty tps list");
  return out;
}

std::vector<Phoneme> load_phonemes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_phoneme_file(in);
}

// Output file or stdout.
struct Sink {
  std::ofstream file;
  std::ostream* os = &std::cout;
  explicit Sink(const std::string& path) {
    if (!path.empty() && path != "-") {
      file.open(path);
      if (!file) throw std::runtime_error("cannot write " + path);
      os = &file;
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stts: full-stream speech-token synthesis engine"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "synthesize one utterance and write the event stream (JSONL)");
  EngineOpts so;
  std::string text, phonemes_file, out_path;
  double prompt_seconds = 0.0;
  bool summary = false;
  add_engine_opts(synth, so);
  synth->add_option("--text", text, "input text (words are streamed one per token)");
  synth->add_option("--phonemes-file", phonemes_file, "pre-phonemized input, one phoneme per token");
  synth->add_option("--prompt-seconds", prompt_seconds, "prefill a seeded random acoustic prompt of this length");
  synth->add_option("--out", out_path, "event output (default stdout)");
  synth->add_flag("--summary", summary, "print FPL/RTF/stalls to stderr");

  // bench
  auto* bench = app.add_subcommand("bench", "benchmarks");
  bench->require_subcommand(1);
  auto* bsweep = bench->add_subcommand("sweep", "TPS x look-ahead grid");
  std::string sweep_tps = "10,20,40,inf", sweep_la = "1,2,3,4,5", sweep_out, sweep_json, sweep_backend = "stationary",
              sweep_schedule = "const:4";
  std::uint64_t sweep_seed = 0;
  std::size_t sweep_reps = 1, sweep_threads = 1;
  bool sweep_src = false;
  std::string sweep_phonemes;
  bsweep->add_option("--tps", sweep_tps, "comma-separated tps values (inf allowed)")->capture_default_str();
  bsweep->add_option("--la", sweep_la, "comma-separated la_min values")->capture_default_str();
  bsweep->add_option("--seed", sweep_seed)->capture_default_str();
  bsweep->add_option("--reps", sweep_reps, "repetitions per cell")->capture_default_str();
  bsweep->add_option("--threads", sweep_threads, "parallel cells")->capture_default_str();
  bsweep->add_option("--backend", sweep_backend)->capture_default_str();
  bsweep->add_flag("--src", sweep_src, "enable SRC (adds the corr column)");
  bsweep->add_option("--schedule", sweep_schedule)->capture_default_str();
  bsweep->add_option("--phonemes-file", sweep_phonemes, "corpus, one phoneme per token");
  bsweep->add_option("--out", sweep_out, "CSV report (default stdout)");
  bsweep->add_option("--json", sweep_json, "also write a JSON report");

  auto* brate = bench->add_subcommand("rate", "rate-following evaluation");
  std::string rate_schedule = "ramp:1:7", rate_out, rate_backend = "stationary";
  std::uint64_t rate_seed = 0;
  std::size_t rate_phonemes = 0;
  brate->add_option("--schedule", rate_schedule)->capture_default_str();
  brate->add_option("--backend", rate_backend)->capture_default_str();
  brate->add_option("--seed", rate_seed)->capture_default_str();
  brate->add_option("--phonemes", rate_phonemes, "corpus length (default: sized to the schedule)");
  brate->add_option("--out", rate_out, "curves CSV (default stdout)");

  auto* bchunk = bench->add_subcommand("chunk", "chunk-size streaming runs");
  std::string chunk_sizes = "1,2,4,8", chunk_text, chunk_tps = "10", chunk_backend = "stationary", chunk_out;
  std::size_t chunk_la = 3;
  std::uint64_t chunk_seed = 0;
  bchunk->add_option("--chunks", chunk_sizes, "comma-separated words per chunk")->capture_default_str();
  bchunk->add_option("--text", chunk_text, "input text (default: built-in sentence)");
  bchunk->add_option("--tps", chunk_tps, "chunks per second")->capture_default_str();
  bchunk->add_option("--la-min", chunk_la)->capture_default_str();
  bchunk->add_option("--backend", chunk_backend)->capture_default_str();
  bchunk->add_option("--seed", chunk_seed)->capture_default_str();
  bchunk->add_option("--out", chunk_out, "CSV (default stdout)");

  // serve
  auto* serve = app.add_subcommand("serve", "websocket control service");
  unsigned short port = 8765;
  std::string address = "127.0.0.1";
  ServiceConfig svc;
  std::size_t serve_threads = 1;
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--address", address)->capture_default_str();
  serve->add_option("--max-sessions", svc.max_sessions)->capture_default_str();
  serve->add_option("--backend", svc.backend, "toy | scripted[:FILE] | stationary[:SPS]")->capture_default_str();
  serve->add_option("--seed", svc.seed)->capture_default_str();
  serve->add_option("--threads", serve_threads)->capture_default_str();

  // table
  auto* table = app.add_subcommand("table", "rate target tables");
  table->require_subcommand(1);
  auto* tbuild = table->add_subcommand("build", "build from alignment records");
  std::string records_path, table_out;
  double bin_width = 0.5;
  tbuild->add_option("--records", records_path, "lines: utterance_id, sps, c0..c5")->required();
  tbuild->add_option("--bin-width", bin_width)->capture_default_str();
  tbuild->add_option("--out", table_out);
  auto* texport = table->add_subcommand("export", "write the default synthetic table");
  texport->add_option("--out", table_out);

  // weights
  auto* weights = app.add_subcommand("weights", "export seeded toy weights");
  std::uint64_t weights_seed = 0;
  std::string weights_out;
  weights->add_option("--seed", weights_seed)->capture_default_str();
  weights->add_option("--out", weights_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      if (text.empty() == phonemes_file.empty()) throw std::invalid_argument("give exactly one of --text, --phonemes-file");
      EngineConfig cfg = to_config(so);
      auto backend = make_backend(so.backend, so.seed);
      const std::size_t n_sem = backend->dims().n_semantic;
      const std::size_t n_ac = backend->dims().acoustic_vocab;
      Session s(cfg, std::move(backend));
      if (prompt_seconds > 0.0) {
        PromptSpec p;
        p.frame_count = prompt_frames_for_seconds(prompt_seconds, cfg.frame_rate);
        Rng rng(derive_seed(so.seed, 0x9a0));
        for (std::size_t i = 0; i < p.frame_count; ++i) {
          AudioFrame f{};
          f[0] = static_cast<int>(rng.next() % n_sem);
          for (std::size_t c = 1; c < f.size(); ++c) f[c] = static_cast<int>(rng.next() % n_ac);
          p.audio_tokens.push_back(f);
        }
        p.unk_symbol = kUnkSymbol;
        s.prompt_prefill(p);
      }
      if (!text.empty()) {
        for (const auto& w : split_words(text)) s.feed_text(w);
      } else {
        const auto ph = load_phonemes(phonemes_file);
        for (std::size_t i = 0; i < ph.size(); ++i) s.feed_phonemes({ph[i]}, "ph" + std::to_string(i));
      }
      s.end_text();
      Sink sink(out_path);
      std::vector<StreamEvent> all;
      while (s.step()) {
        for (auto& e : s.take_events()) {
          *sink.os << to_jsonl(e) << '\n';
          all.push_back(std::move(e));
        }
      }
      for (auto& e : s.take_events()) {
        *sink.os << to_jsonl(e) << '\n';
        all.push_back(std::move(e));
      }
      if (summary) {
        const auto fpl = measure_fpl(all);
        const auto st = measure_stalls(all);
        std::cerr << "fpl_ms=" << (fpl ? std::to_string(*fpl) : "n/a");
        try {
          std::cerr << " rtf=" << measure_rtf(all);
        } catch (const std::exception&) {
          std::cerr << " rtf=n/a";
        }
        std::cerr << " stalls=" << st.count << " stall_ms=" << st.total_ms << '\n';
      }
      return 0;
    }
    if (*bsweep) {
      SweepSpec spec;
      spec.tps = parse_tps_list(sweep_tps);
      spec.la = parse_sizes(sweep_la);
      spec.seed = sweep_seed;
      spec.repetitions = sweep_reps;
      spec.threads = sweep_threads;
      spec.backend = sweep_backend;
      spec.base.src_enabled = sweep_src;
      spec.base.schedule = RateSchedule::parse(sweep_schedule);
      if (!sweep_phonemes.empty()) spec.corpus = tokens_of(load_phonemes(sweep_phonemes));
      const auto report = sweep(spec);
      Sink sink(sweep_out);
      report.write_csv(*sink.os);
      if (!sweep_json.empty()) {
        std::ofstream j(sweep_json);
        j << report.to_json() << '\n';
      }
      return 0;
    }
    if (*brate) {
      EngineConfig cfg;
      cfg.src_enabled = true;
      cfg.schedule = RateSchedule::parse(rate_schedule);
      cfg.sampler.rng_seed = rate_seed;
      std::size_t n = rate_phonemes;
      if (n == 0) {
        // enough text to outlast the schedule at its mean rate, plus a quarter
        const double mean = 0.5 * (cfg.schedule.first() + cfg.schedule.second());
        const double secs = cfg.schedule.kind() == RateSchedule::Kind::linear_ramp ? cfg.schedule.seconds() : 20.0;
        n = static_cast<std::size_t>(std::ceil(2.5 * mean * secs * 1.25));
      }
      const auto events = run(cfg, make_backend(rate_backend, rate_seed), tokens_of(cyclic_corpus(n)));
      const auto r = rate_eval(events, cfg.schedule, cfg.frame_rate);
      Sink sink(rate_out);
      write_curves_csv(*sink.os, r);
      std::cerr << "corr=" << (r.corr ? std::to_string(*r.corr) : "undefined (" + r.corr_error + ")") << '\n';
      return 0;
    }
    if (*bchunk) {
      const std::string input = chunk_text.empty()
                                    ? "the quick brown fox jumps over the lazy dog while seven tall ships sail "
                                      "slowly past the old harbor light and the evening bells ring out"
                                    : chunk_text;
      std::vector<std::vector<Phoneme>> words;
      for (const auto& w : split_words(input)) words.push_back(builtin_g2p(w));
      EngineConfig cfg;
      cfg.tps = parse_tps(chunk_tps);
      cfg.la_min = chunk_la;
      Sink sink(chunk_out);
      *sink.os << "chunk_words,fpl_ms,stall_count,stall_total_ms,coverage_gaps,frames\n";
      for (std::size_t c : parse_sizes(chunk_sizes)) {
        const auto r = chunk_size_run(c, words, cfg, chunk_backend, chunk_seed);
        *sink.os << r.chunk_words << ',' << (r.fpl_ms ? std::to_string(*r.fpl_ms) : "") << ',' << r.stall_count << ','
                 << r.stall_total_ms << ',' << r.coverage_gaps << ',' << r.frames << '\n';
      }
      return 0;
    }
    if (*serve) {
      ServiceHub hub(svc);
      Server server(hub, address, port);
      std::cerr << "stts serve: ws://" << address << ':' << server.port() << "/ws  health: http://" << address << ':'
                << server.port() << "/health\n";
      server.run(serve_threads, true);
      return 0;
    }
    if (*tbuild) {
      std::ifstream in(records_path);
      if (!in) throw std::runtime_error("cannot open " + records_path);
      TableBuildOptions opt;
      opt.bin_width = bin_width;
      const auto t = build_rate_table(in, opt);
      Sink sink(table_out);
      *sink.os << t.to_json() << '\n';
      return 0;
    }
    if (*texport) {
      Sink sink(table_out);
      *sink.os << default_rate_table().to_json() << '\n';
      return 0;
    }
    if (*weights) {
      std::ofstream out(weights_out, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + weights_out);
      ToyBackend(ModelDims{}, weights_seed).save(out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "stts: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
