#include "stts/toy_backend.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "stts/rng.hpp"

namespace stts {

namespace {

struct Linear {
  std::size_t w = 0;  // out x in
  std::size_t b = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

struct Block {
  std::size_t norm1 = 0;
  std::size_t norm2 = 0;
  Linear q, k, v, o, up, down;
};

enum class Init { normal, ones, zeros };

// Allocates tensors in a fixed order; the order is the on-disk weight layout.
class Layout {
 public:
  Layout(std::vector<float>& data, Rng* rng) : data_(data), rng_(rng) {}

  std::size_t tensor(std::size_t n, Init init, double scale = 1.0) {
    const std::size_t off = data_.size();
    data_.resize(off + n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
      switch (init) {
        case Init::normal:
          data_[off + i] = rng_ ? static_cast<float>(rng_->normal() * scale) : 0.0f;
          break;
        case Init::ones:
          data_[off + i] = 1.0f;
          break;
        case Init::zeros:
          break;
      }
    }
    return off;
  }

  Linear linear(std::size_t in, std::size_t out) {
    Linear l;
    l.in = in;
    l.out = out;
    l.w = tensor(in * out, Init::normal, 1.0 / std::sqrt(static_cast<double>(in)));
    l.b = tensor(out, Init::zeros);
    return l;
  }

  Block block(std::size_t e, std::size_t ff) {
    Block b;
    b.norm1 = tensor(e, Init::ones);
    b.q = linear(e, e);
    b.k = linear(e, e);
    b.v = linear(e, e);
    b.o = linear(e, e);
    b.norm2 = tensor(e, Init::ones);
    b.up = linear(e, ff);
    b.down = linear(ff, e);
    return b;
  }

 private:
  std::vector<float>& data_;
  Rng* rng_;
};

}  // namespace

struct ToyBackend::Weights {
  std::vector<float> data;

  std::size_t phoneme_embed = 0;  // phoneme_vocab x E
  std::size_t pt_pos = 0;         // max_window x E
  std::vector<Block> pt;
  std::size_t pt_norm = 0;
  std::size_t text_null = 0;
  std::vector<std::size_t> codebook_embed;  // n_codebooks tables
  std::size_t audio_null = 0;
  std::size_t bos = 0;
  std::vector<Block> tt;
  std::size_t tt_norm = 0;
  Linear joint_head;
  std::size_t semantic_embed = 0;
  Linear speaker_proj;
  std::size_t speaker_null = 0;
  std::size_t codebook_pos = 0;  // n_acoustic x E
  std::vector<Block> dt;
  std::size_t dt_norm = 0;
  std::vector<Linear> heads;

  const float* at(std::size_t off) const { return data.data() + off; }
};

namespace {

using Weights = ToyBackend::Weights;

std::shared_ptr<Weights> build_weights(const ModelDims& d, Rng* rng) {
  auto w = std::make_shared<Weights>();
  Layout lay(w->data, rng);
  const std::size_t e = d.embed;
  const std::size_t ff = d.embed * d.ff_mult;
  const double emb_scale = 0.5;
  w->phoneme_embed = lay.tensor(d.phoneme_vocab * e, Init::normal, emb_scale);
  w->pt_pos = lay.tensor(d.max_window * e, Init::normal, 0.1);
  for (std::size_t i = 0; i < d.pt_layers; ++i) w->pt.push_back(lay.block(e, ff));
  w->pt_norm = lay.tensor(e, Init::ones);
  w->text_null = lay.tensor(e, Init::normal, emb_scale);
  for (std::size_t c = 0; c < d.n_codebooks; ++c) {
    const std::size_t vocab = c == 0 ? d.n_semantic : d.acoustic_vocab;
    w->codebook_embed.push_back(lay.tensor(vocab * e, Init::normal, emb_scale));
  }
  w->audio_null = lay.tensor(e, Init::normal, emb_scale);
  w->bos = lay.tensor(e, Init::normal, emb_scale);
  for (std::size_t i = 0; i < d.tt_layers; ++i) w->tt.push_back(lay.block(e, ff));
  w->tt_norm = lay.tensor(e, Init::ones);
  w->joint_head = lay.linear(e, d.joint_width());
  w->semantic_embed = lay.tensor(d.n_semantic * e, Init::normal, emb_scale);
  w->speaker_proj = lay.linear(d.speaker_dim, e);
  w->speaker_null = lay.tensor(d.speaker_dim, Init::normal, 1.0);
  w->codebook_pos = lay.tensor(d.n_acoustic() * e, Init::normal, 0.1);
  for (std::size_t i = 0; i < d.dt_layers; ++i) w->dt.push_back(lay.block(e, ff));
  w->dt_norm = lay.tensor(e, Init::ones);
  for (std::size_t c = 0; c < d.n_acoustic(); ++c) w->heads.push_back(lay.linear(e, d.acoustic_vocab));
  return w;
}

void add_into(float* y, const float* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

std::vector<float> rmsnorm(const float* x, const float* g, std::size_t n) {
  float ss = 0.0f;
  for (std::size_t i = 0; i < n; ++i) ss += x[i] * x[i];
  const float inv = 1.0f / std::sqrt(ss / static_cast<float>(n) + 1e-6f);
  std::vector<float> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * inv * g[i];
  return y;
}

std::vector<float> apply(const Weights& w, const Linear& l, const float* x) {
  std::vector<float> y(l.out);
  const float* wm = w.at(l.w);
  const float* b = w.at(l.b);
  for (std::size_t o = 0; o < l.out; ++o) {
    float acc = b[o];
    const float* row = wm + o * l.in;
    for (std::size_t i = 0; i < l.in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
  return y;
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

// softmax(q . k_j / sqrt(hd)) v_j per head, over `len` cached rows.
std::vector<float> attend(const float* q, const float* keys, const float* values, std::size_t len, std::size_t e,
                          std::size_t heads) {
  const std::size_t hd = e / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  std::vector<float> out(e, 0.0f);
  std::vector<float> scores(len);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    float m = -INFINITY;
    for (std::size_t j = 0; j < len; ++j) {
      float s = 0.0f;
      for (std::size_t i = 0; i < hd; ++i) s += q[off + i] * keys[j * e + off + i];
      scores[j] = s * scale;
      m = std::max(m, scores[j]);
    }
    float z = 0.0f;
    for (std::size_t j = 0; j < len; ++j) {
      scores[j] = std::exp(scores[j] - m);
      z += scores[j];
    }
    for (std::size_t j = 0; j < len; ++j) {
      const float p = scores[j] / z;
      for (std::size_t i = 0; i < hd; ++i) out[off + i] += p * values[j * e + off + i];
    }
  }
  return out;
}

void feed_forward(const Weights& w, const Block& b, std::vector<float>& x, std::size_t e) {
  const auto h = rmsnorm(x.data(), w.at(b.norm2), e);
  auto up = apply(w, b.up, h.data());
  for (float& v : up) v = silu(v);
  const auto down = apply(w, b.down, up.data());
  add_into(x.data(), down.data(), e);
}

// Full (non-causal) self-attention over a small set of rows.
void encode_rows(const Weights& w, std::span<const Block> blocks, std::vector<std::vector<float>>& rows, std::size_t e,
                 std::size_t heads) {
  const std::size_t n = rows.size();
  for (const Block& b : blocks) {
    std::vector<float> keys(n * e);
    std::vector<float> values(n * e);
    std::vector<std::vector<float>> queries(n);
    for (std::size_t j = 0; j < n; ++j) {
      const auto h = rmsnorm(rows[j].data(), w.at(b.norm1), e);
      queries[j] = apply(w, b.q, h.data());
      const auto k = apply(w, b.k, h.data());
      const auto v = apply(w, b.v, h.data());
      std::copy(k.begin(), k.end(), keys.begin() + static_cast<std::ptrdiff_t>(j * e));
      std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(j * e));
    }
    for (std::size_t j = 0; j < n; ++j) {
      const auto a = attend(queries[j].data(), keys.data(), values.data(), n, e, heads);
      const auto o = apply(w, b.o, a.data());
      add_into(rows[j].data(), o.data(), e);
    }
    for (auto& r : rows) feed_forward(w, b, r, e);
  }
}

void check_token(int token, std::size_t vocab, const char* what) {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab) {
    throw std::invalid_argument(std::string("toy backend: ") + what + " token " + std::to_string(token) +
                                " outside vocabulary of " + std::to_string(vocab));
  }
}

int cache_key(const DropFlags& d) { return (d.text ? 1 : 0) | (d.audio ? 2 : 0); }

}  // namespace

ToyBackend::ToyBackend(ModelDims dims, std::uint64_t seed, CostModel cost) : dims_(dims), seed_(seed), cost_(cost) {
  dims_.validate();
  Rng rng(seed);
  w_ = build_weights(dims_, &rng);
}

ToyBackend::ToyBackend(ModelDims dims, std::uint64_t seed, CostModel cost, std::shared_ptr<const Weights> weights)
    : dims_(dims), seed_(seed), cost_(cost), w_(std::move(weights)) {}

std::size_t ToyBackend::parameter_count() const { return w_->data.size(); }

void ToyBackend::save(std::ostream& out) const {
  const auto& d = dims_;
  out << "stts-toy-weights v1 n_semantic=" << d.n_semantic << " d_bins=" << d.d_bins << " n_codebooks=" << d.n_codebooks
      << " acoustic_vocab=" << d.acoustic_vocab << " embed=" << d.embed << " pt_layers=" << d.pt_layers
      << " tt_layers=" << d.tt_layers << " dt_layers=" << d.dt_layers << " heads=" << d.heads
      << " phoneme_vocab=" << d.phoneme_vocab << " speaker_dim=" << d.speaker_dim << " ff_mult=" << d.ff_mult
      << " max_window=" << d.max_window << " seed=" << seed_ << " count=" << w_->data.size() << '\n';
  for (float v : w_->data) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                           static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    out.write(bytes, 4);
  }
}

std::unique_ptr<ToyBackend> ToyBackend::load(std::istream& in, CostModel cost) {
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("toy weights: missing header");
  std::istringstream hs(header);
  std::string magic;
  std::string version;
  hs >> magic >> version;
  if (magic != "stts-toy-weights" || version != "v1") throw std::runtime_error("toy weights: bad header");
  ModelDims d;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::string kv;
  while (hs >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::runtime_error("toy weights: bad header field " + kv);
    const std::string key = kv.substr(0, eq);
    const auto value = std::stoull(kv.substr(eq + 1));
    if (key == "n_semantic") d.n_semantic = value;
    else if (key == "d_bins") d.d_bins = value;
    else if (key == "n_codebooks") d.n_codebooks = value;
    else if (key == "acoustic_vocab") d.acoustic_vocab = value;
    else if (key == "embed") d.embed = value;
    else if (key == "pt_layers") d.pt_layers = value;
    else if (key == "tt_layers") d.tt_layers = value;
    else if (key == "dt_layers") d.dt_layers = value;
    else if (key == "heads") d.heads = value;
    else if (key == "phoneme_vocab") d.phoneme_vocab = value;
    else if (key == "speaker_dim") d.speaker_dim = value;
    else if (key == "ff_mult") d.ff_mult = value;
    else if (key == "max_window") d.max_window = value;
    else if (key == "seed") seed = value;
    else if (key == "count") count = value;
    else throw std::runtime_error("toy weights: unknown header field " + key);
  }
  d.validate();
  auto w = build_weights(d, nullptr);
  if (w->data.size() != count) {
    throw std::runtime_error("toy weights: header count " + std::to_string(count) + " does not match dims (" +
                             std::to_string(w->data.size()) + ")");
  }
  for (float& v : w->data) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("toy weights: truncated payload");
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    v = std::bit_cast<float>(bits);
  }
  return std::unique_ptr<ToyBackend>(new ToyBackend(d, seed, cost, std::move(w)));
}

SpeakerEmbedding ToyBackend::null_speaker() const {
  const float* p = w_->at(w_->speaker_null);
  return SpeakerEmbedding(std::vector<float>(p, p + dims_.speaker_dim), 1.0);
}

std::vector<float> ToyBackend::frame_input(const BackendRequest& r) const {
  const Weights& w = *w_;
  const std::size_t e = dims_.embed;
  if (r.history.size() != r.frame_index) {
    throw std::invalid_argument("toy backend: history length " + std::to_string(r.history.size()) +
                                " does not match frame index " + std::to_string(r.frame_index));
  }

  // Text conditioning from the phoneme encoder.
  std::vector<float> text(e);
  if (r.drop.text) {
    std::copy_n(w.at(w.text_null), e, text.begin());
  } else {
    std::vector<Phoneme> window = r.window;
    if (r.prompt_step) window = {Phoneme{r.unk_symbol, false, false}};
    const auto stripped = strip_punctuation(window);
    if (stripped.tt_to_pt.empty()) {
      std::copy_n(w.at(w.text_null), e, text.begin());
    } else {
      std::vector<std::vector<float>> rows;
      for (std::size_t i = 0; i < window.size(); ++i) {
        check_token(window[i].symbol, dims_.phoneme_vocab, "phoneme");
        const auto id = static_cast<std::size_t>(window[i].symbol);
        std::vector<float> row(w.at(w.phoneme_embed + id * e), w.at(w.phoneme_embed + id * e) + e);
        const std::size_t pos = std::min(i, dims_.max_window - 1);
        add_into(row.data(), w.at(w.pt_pos + pos * e), e);
        rows.push_back(std::move(row));
      }
      encode_rows(w, w.pt, rows, e, dims_.heads);
      // Punctuation outputs are dropped; the frame sees the current phoneme.
      text = rmsnorm(rows[stripped.tt_to_pt.front()].data(), w.at(w.pt_norm), e);
    }
  }

  std::vector<float> x(e, 0.0f);
  if (r.frame_index == 0) {
    std::copy_n(w.at(w.bos), e, x.begin());
  } else if (r.drop.audio && r.frame_index - 1 < r.prompt_frames) {
    std::copy_n(w.at(w.audio_null), e, x.begin());
  } else {
    const AudioFrame& prev = r.history[r.frame_index - 1];
    const float scale = 1.0f / std::sqrt(static_cast<float>(dims_.n_codebooks));
    for (std::size_t c = 0; c < dims_.n_codebooks; ++c) {
      const std::size_t vocab = c == 0 ? dims_.n_semantic : dims_.acoustic_vocab;
      check_token(prev[c], vocab, c == 0 ? "semantic" : "acoustic");
      const float* emb = w.at(w.codebook_embed[c] + static_cast<std::size_t>(prev[c]) * e);
      for (std::size_t i = 0; i < e; ++i) x[i] += emb[i] * scale;
    }
  }
  add_into(x.data(), text.data(), e);
  return x;
}

std::vector<TtOutput> ToyBackend::tt_step(std::span<const BackendRequest> batch) {
  const Weights& w = *w_;
  const std::size_t e = dims_.embed;
  std::vector<TtOutput> outs;
  outs.reserve(batch.size());
  for (const BackendRequest& r : batch) {
    std::vector<float> x = frame_input(r);
    BranchCache& cache = caches_[cache_key(r.drop)];
    if (r.frame_index == 0) cache = BranchCache{};
    if (cache.keys.empty()) {
      cache.keys.resize(w.tt.size());
      cache.values.resize(w.tt.size());
    }
    if (cache.length != r.frame_index) {
      throw std::invalid_argument("toy backend: frame " + std::to_string(r.frame_index) +
                                  " requested but the branch cache holds " + std::to_string(cache.length));
    }
    for (std::size_t l = 0; l < w.tt.size(); ++l) {
      const Block& b = w.tt[l];
      const auto h = rmsnorm(x.data(), w.at(b.norm1), e);
      const auto q = apply(w, b.q, h.data());
      const auto k = apply(w, b.k, h.data());
      const auto v = apply(w, b.v, h.data());
      cache.keys[l].insert(cache.keys[l].end(), k.begin(), k.end());
      cache.values[l].insert(cache.values[l].end(), v.begin(), v.end());
      const auto a = attend(q.data(), cache.keys[l].data(), cache.values[l].data(), cache.length + 1, e, dims_.heads);
      const auto o = apply(w, b.o, a.data());
      add_into(x.data(), o.data(), e);
      feed_forward(w, b, x, e);
    }
    cache.length += 1;
    TtOutput out;
    out.frame_embedding = rmsnorm(x.data(), w.at(w.tt_norm), e);
    out.joint = apply(w, w.joint_head, out.frame_embedding.data());
    outs.push_back(std::move(out));
  }
  return outs;
}

TtOutput ToyBackend::tt_recompute(std::span<const BackendRequest> requests) const {
  const Weights& w = *w_;
  const std::size_t e = dims_.embed;
  if (requests.empty()) throw std::invalid_argument("toy backend: recompute needs at least one request");
  const std::size_t n = requests.size();
  std::vector<std::vector<float>> xs;
  xs.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    if (requests[t].frame_index != t) throw std::invalid_argument("toy backend: recompute requests out of order");
    xs.push_back(frame_input(requests[t]));
  }
  for (const Block& b : w.tt) {
    std::vector<float> keys(n * e);
    std::vector<float> values(n * e);
    std::vector<std::vector<float>> queries(n);
    for (std::size_t t = 0; t < n; ++t) {
      const auto h = rmsnorm(xs[t].data(), w.at(b.norm1), e);
      queries[t] = apply(w, b.q, h.data());
      const auto k = apply(w, b.k, h.data());
      const auto v = apply(w, b.v, h.data());
      std::copy(k.begin(), k.end(), keys.begin() + static_cast<std::ptrdiff_t>(t * e));
      std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(t * e));
    }
    for (std::size_t t = 0; t < n; ++t) {
      // causal: position t sees rows 0..t
      const auto a = attend(queries[t].data(), keys.data(), values.data(), t + 1, e, dims_.heads);
      const auto o = apply(w, b.o, a.data());
      add_into(xs[t].data(), o.data(), e);
      feed_forward(w, b, xs[t], e);
    }
  }
  TtOutput out;
  out.frame_embedding = rmsnorm(xs.back().data(), w.at(w.tt_norm), e);
  out.joint = apply(w, w.joint_head, out.frame_embedding.data());
  return out;
}

std::vector<DtOutput> ToyBackend::dt_step(std::span<const DtRequest> batch) {
  const Weights& w = *w_;
  const std::size_t e = dims_.embed;
  std::vector<DtOutput> outs;
  outs.reserve(batch.size());
  for (const DtRequest& r : batch) {
    if (r.frame_embedding.size() != e) {
      throw std::invalid_argument("toy backend: frame embedding width " + std::to_string(r.frame_embedding.size()) +
                                  " != " + std::to_string(e));
    }
    check_token(r.semantic_token, dims_.n_semantic, "semantic");
    const SpeakerEmbedding spk = r.speaker_dropped || r.speaker.empty() ? null_speaker() : r.speaker;
    if (spk.vector().size() != dims_.speaker_dim) throw std::invalid_argument("toy backend: speaker dim mismatch");
    std::vector<float> scaled(spk.vector().begin(), spk.vector().end());
    for (float& v : scaled) v = static_cast<float>(v * spk.conditioning_scale());
    const auto spk_term = apply(w, w.speaker_proj, scaled.data());

    std::vector<float> base = r.frame_embedding;
    add_into(base.data(), w.at(w.semantic_embed + static_cast<std::size_t>(r.semantic_token) * e), e);
    add_into(base.data(), spk_term.data(), e);
    std::vector<std::vector<float>> rows(dims_.n_acoustic(), base);
    for (std::size_t c = 0; c < rows.size(); ++c) add_into(rows[c].data(), w.at(w.codebook_pos + c * e), e);
    encode_rows(w, w.dt, rows, e, dims_.heads);
    DtOutput out;
    out.codebooks.reserve(rows.size());
    for (std::size_t c = 0; c < rows.size(); ++c) {
      const auto h = rmsnorm(rows[c].data(), w.at(w.dt_norm), e);
      out.codebooks.push_back(apply(w, w.heads[c], h.data()));
    }
    outs.push_back(std::move(out));
  }
  return outs;
}

}  // namespace stts
