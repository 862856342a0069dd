#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stts/backbone.hpp"

namespace stts {

// Replays a program of state-keyed logit tables. Rules are tried in order;
// the first whose conditions all hold supplies the outputs. A state no rule
// matches is an error.
//
// Program document (JSON):
//   {"n_vocab": 4, "acoustic_vocab": 4, "temperature": 0.9,
//    "cost_us": {"tt": 3000, "dt": 2000},
//    "rules": [{"when": {"frame": 0, "cursor": 2, "cursor_mod": [2, 1],
//                        "history_digest": "0x...", "text_dropped": false,
//                        "audio_dropped": false},
//               "duration_probs": [6 values]   or   "joint": [[6 rows of n_vocab]],
//               "semantic": [n_vocab],          // added to every duration row
//               "acoustic_tokens": [15]         or   "acoustic": [[15 rows]],
//               "acoustic_uncond_tokens": [15]  // used when the speaker is dropped
//              }]}
class ScriptedBackend final : public Backend {
 public:
  struct Rule {
    std::optional<std::size_t> frame;
    std::optional<std::size_t> cursor;
    std::optional<std::pair<std::size_t, std::size_t>> cursor_mod;
    std::optional<std::uint64_t> history_digest;
    std::optional<bool> text_dropped;
    std::optional<bool> audio_dropped;
    std::vector<float> joint;
    std::vector<std::vector<float>> acoustic;
    std::vector<std::vector<float>> acoustic_uncond;
  };

  ScriptedBackend(ModelDims dims, std::vector<Rule> rules, CostModel cost = {});

  static std::unique_ptr<ScriptedBackend> from_json(std::string_view text);
  // Every frame: duration marginal equal to `probs` at the given temperature,
  // fixed semantic preferences and constant acoustic tokens.
  static std::unique_ptr<ScriptedBackend> stationary(const DurationDistribution& probs, double temperature = 0.9,
                                                     CostModel cost = {});

  const ModelDims& dims() const override { return dims_; }
  using Backend::dt_step;
  using Backend::tt_step;
  std::vector<TtOutput> tt_step(std::span<const BackendRequest> batch) override;
  std::vector<DtOutput> dt_step(std::span<const DtRequest> batch) override;
  SpeakerEmbedding null_speaker() const override;
  CostModel cost_model() const override { return cost_; }

  const std::vector<Rule>& rules() const { return rules_; }

 private:
  ModelDims dims_;
  std::vector<Rule> rules_;
  CostModel cost_;
};

// FNV-1a over the token ids of every history frame.
std::uint64_t history_digest(std::span<const AudioFrame> history);

// Joint logits whose duration marginal at temperature T equals probs:
// A_dn = T * log(p_d) + semantic_n.
std::vector<float> joint_from_duration_probs(std::span<const double> probs, std::span<const float> semantic,
                                             double temperature);

}  // namespace stts
