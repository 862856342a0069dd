#pragma once
#include <memory>
#include <string>
#include <vector>

#include "stts/bench.hpp"
#include "stts/engine.hpp"
#include "stts/scripted_backend.hpp"
#include "stts/toy_backend.hpp"

namespace fixture {

inline std::vector<stts::FrameEmitted> frames_of(const std::vector<stts::StreamEvent>& events) {
  std::vector<stts::FrameEmitted> out;
  for (const auto& e : events) {
    if (const auto* f = std::get_if<stts::FrameEmitted>(&e)) out.push_back(*f);
  }
  return out;
}

inline std::vector<stts::Stall> stalls_of(const std::vector<stts::StreamEvent>& events) {
  std::vector<stts::Stall> out;
  for (const auto& e : events) {
    if (const auto* s = std::get_if<stts::Stall>(&e)) out.push_back(*s);
  }
  return out;
}

inline const stts::Done& done_of(const std::vector<stts::StreamEvent>& events) {
  return std::get<stts::Done>(events.back());
}

inline std::string jsonl(const std::vector<stts::StreamEvent>& events) {
  std::string s;
  for (const auto& e : events) s += stts::to_jsonl(e) + "\n";
  return s;
}

// Scripted backend whose duration marginal is `probs` on every frame.
inline std::unique_ptr<stts::Backend> forced(std::vector<double> probs) {
  return stts::ScriptedBackend::stationary(stts::DurationDistribution{std::move(probs)});
}

// One-hot on a duration id (exactly representable: the other rows sit ~620 below).
inline std::unique_ptr<stts::Backend> forced_token(int id) {
  std::vector<double> p(6, 0.0);
  p[static_cast<std::size_t>(id)] = 1.0;
  return forced(p);
}

// Toy transformer that never sees the generated audio: every history row is
// zeroed before the call. The duration path then depends only on the text
// and the rng, which lets tests change guidance without moving the cursor.
class HistoryBlind final : public stts::Backend {
 public:
  explicit HistoryBlind(stts::ModelDims dims, std::uint64_t seed) : inner_(dims, seed) {}
  const stts::ModelDims& dims() const override { return inner_.dims(); }
  using stts::Backend::dt_step;
  using stts::Backend::tt_step;
  std::vector<stts::TtOutput> tt_step(std::span<const stts::BackendRequest> batch) override {
    std::vector<stts::BackendRequest> copy(batch.begin(), batch.end());
    std::size_t longest = 0;
    for (const auto& r : copy) longest = std::max(longest, r.history.size());
    if (blank_.size() < longest) blank_.resize(longest);
    for (auto& r : copy) r.history = std::span<const stts::AudioFrame>(blank_.data(), r.history.size());
    return inner_.tt_step(std::span<const stts::BackendRequest>(copy));
  }
  std::vector<stts::DtOutput> dt_step(std::span<const stts::DtRequest> batch) override { return inner_.dt_step(batch); }
  stts::SpeakerEmbedding null_speaker() const override { return inner_.null_speaker(); }

 private:
  stts::ToyBackend inner_;
  std::vector<stts::AudioFrame> blank_;
};

inline stts::ModelDims small_dims() {
  stts::ModelDims d;
  d.n_semantic = 32;
  d.acoustic_vocab = 16;
  d.embed = 32;
  d.heads = 4;
  d.speaker_dim = 16;
  return d;
}

}  // namespace fixture
