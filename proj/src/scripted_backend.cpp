#include "stts/scripted_backend.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace stts {

using nlohmann::json;

namespace {

std::vector<float> one_hot(int token, std::size_t vocab) {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab) {
    throw std::invalid_argument("scripted program: acoustic token " + std::to_string(token) + " outside vocabulary");
  }
  std::vector<float> v(vocab, 0.0f);
  v[static_cast<std::size_t>(token)] = 1.0f;
  return v;
}

std::vector<std::vector<float>> acoustic_from_tokens(const json& tokens, std::size_t n, std::size_t vocab) {
  if (!tokens.is_array() || tokens.size() != n) {
    throw std::invalid_argument("scripted program: expected " + std::to_string(n) + " acoustic tokens");
  }
  std::vector<std::vector<float>> out;
  for (const auto& t : tokens) out.push_back(one_hot(t.get<int>(), vocab));
  return out;
}

std::vector<std::vector<float>> acoustic_rows(const json& rows, std::size_t n, std::size_t vocab) {
  if (!rows.is_array() || rows.size() != n) {
    throw std::invalid_argument("scripted program: expected " + std::to_string(n) + " acoustic rows");
  }
  std::vector<std::vector<float>> out;
  for (const auto& r : rows) {
    auto v = r.get<std::vector<float>>();
    if (v.size() != vocab) throw std::invalid_argument("scripted program: acoustic row width mismatch");
    out.push_back(std::move(v));
  }
  return out;
}

std::uint64_t parse_digest(const json& j) {
  if (j.is_number_unsigned() || j.is_number_integer()) return j.get<std::uint64_t>();
  const auto s = j.get<std::string>();
  std::size_t pos = 0;
  const auto v = std::stoull(s, &pos, 0);
  if (pos != s.size()) throw std::invalid_argument("scripted program: bad history_digest '" + s + "'");
  return v;
}

std::string describe(const BackendRequest& r, std::uint64_t digest) {
  std::ostringstream os;
  os << "frame=" << r.frame_index << " cursor=" << r.cursor << " history_digest=0x" << std::hex << digest << std::dec
     << " text_dropped=" << r.drop.text << " audio_dropped=" << r.drop.audio;
  return os.str();
}

}  // namespace

std::uint64_t history_digest(std::span<const AudioFrame> history) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& frame : history) {
    for (int token : frame) {
      const auto u = static_cast<std::uint32_t>(token);
      for (int b = 0; b < 4; ++b) {
        h ^= (u >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

std::vector<float> joint_from_duration_probs(std::span<const double> probs, std::span<const float> semantic,
                                             double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("duration probs: temperature must be > 0");
  std::vector<float> joint;
  joint.reserve(probs.size() * semantic.size());
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("duration probs: negative probability");
    const double row = temperature * std::log(std::max(p, 1e-300));
    for (float s : semantic) joint.push_back(static_cast<float>(row + s));
  }
  return joint;
}

ScriptedBackend::ScriptedBackend(ModelDims dims, std::vector<Rule> rules, CostModel cost)
    : dims_(dims), rules_(std::move(rules)), cost_(cost) {
  dims_.validate();
  if (rules_.empty()) throw std::invalid_argument("scripted program: no rules");
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const Rule& r = rules_[i];
    const std::string where = "scripted program: rule " + std::to_string(i) + ": ";
    if (r.joint.size() != dims_.joint_width()) throw std::invalid_argument(where + "joint width mismatch");
    for (float v : r.joint) {
      if (!std::isfinite(v)) throw std::invalid_argument(where + "non-finite joint logit");
    }
    if (r.acoustic.size() != dims_.n_acoustic()) throw std::invalid_argument(where + "acoustic row count mismatch");
    if (!r.acoustic_uncond.empty() && r.acoustic_uncond.size() != dims_.n_acoustic()) {
      throw std::invalid_argument(where + "acoustic_uncond row count mismatch");
    }
    if (r.cursor_mod && r.cursor_mod->first == 0) throw std::invalid_argument(where + "cursor_mod modulus is 0");
  }
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("scripted program: ") + e.what());
  }
  ModelDims dims;
  dims.n_semantic = doc.value("n_vocab", 4);
  dims.acoustic_vocab = doc.value("acoustic_vocab", 4);
  dims.embed = 2;
  dims.heads = 1;
  dims.speaker_dim = 1;
  const double temperature = doc.value("temperature", 0.9);
  CostModel cost;
  if (doc.contains("cost_us")) {
    cost.tt_us = doc["cost_us"].value("tt", cost.tt_us);
    cost.dt_us = doc["cost_us"].value("dt", cost.dt_us);
  }
  std::vector<Rule> rules;
  for (const auto& jr : doc.at("rules")) {
    Rule r;
    if (jr.contains("when")) {
      const auto& w = jr["when"];
      for (const auto& [key, _] : w.items()) {
        if (key != "frame" && key != "cursor" && key != "cursor_mod" && key != "history_digest" &&
            key != "text_dropped" && key != "audio_dropped") {
          throw std::invalid_argument("scripted program: unknown condition '" + key + "'");
        }
      }
      if (w.contains("frame")) r.frame = w["frame"].get<std::size_t>();
      if (w.contains("cursor")) r.cursor = w["cursor"].get<std::size_t>();
      if (w.contains("cursor_mod")) {
        const auto m = w["cursor_mod"].get<std::vector<std::size_t>>();
        if (m.size() != 2) throw std::invalid_argument("scripted program: cursor_mod needs [modulus, remainder]");
        r.cursor_mod = std::make_pair(m[0], m[1]);
      }
      if (w.contains("history_digest")) r.history_digest = parse_digest(w["history_digest"]);
      if (w.contains("text_dropped")) r.text_dropped = w["text_dropped"].get<bool>();
      if (w.contains("audio_dropped")) r.audio_dropped = w["audio_dropped"].get<bool>();
    }
    std::vector<float> semantic(dims.n_semantic, 0.0f);
    if (jr.contains("semantic")) {
      semantic = jr["semantic"].get<std::vector<float>>();
      if (semantic.size() != dims.n_semantic) throw std::invalid_argument("scripted program: semantic width mismatch");
    }
    if (jr.contains("duration_probs")) {
      const auto probs = jr["duration_probs"].get<std::vector<double>>();
      if (probs.size() != dims.d_bins) throw std::invalid_argument("scripted program: duration_probs needs 6 values");
      r.joint = joint_from_duration_probs(probs, semantic, temperature);
    } else if (jr.contains("joint")) {
      for (const auto& row : jr["joint"]) {
        const auto v = row.get<std::vector<float>>();
        if (v.size() != dims.n_semantic) throw std::invalid_argument("scripted program: joint row width mismatch");
        r.joint.insert(r.joint.end(), v.begin(), v.end());
      }
    } else {
      throw std::invalid_argument("scripted program: rule needs duration_probs or joint");
    }
    if (jr.contains("acoustic_tokens")) {
      r.acoustic = acoustic_from_tokens(jr["acoustic_tokens"], dims.n_acoustic(), dims.acoustic_vocab);
    } else if (jr.contains("acoustic")) {
      r.acoustic = acoustic_rows(jr["acoustic"], dims.n_acoustic(), dims.acoustic_vocab);
    } else {
      r.acoustic = std::vector<std::vector<float>>(dims.n_acoustic(), one_hot(0, dims.acoustic_vocab));
    }
    if (jr.contains("acoustic_uncond_tokens")) {
      r.acoustic_uncond = acoustic_from_tokens(jr["acoustic_uncond_tokens"], dims.n_acoustic(), dims.acoustic_vocab);
    }
    rules.push_back(std::move(r));
  }
  return std::make_unique<ScriptedBackend>(dims, std::move(rules), cost);
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::stationary(const DurationDistribution& probs, double temperature,
                                                             CostModel cost) {
  probs.validate(1e-9);
  ModelDims dims;
  dims.n_semantic = 4;
  dims.acoustic_vocab = 4;
  dims.embed = 2;
  dims.heads = 1;
  dims.speaker_dim = 1;
  const std::vector<float> semantic{0.0f, -0.5f, -1.0f, -1.5f};
  Rule r;
  r.joint = joint_from_duration_probs(probs.p, semantic, temperature);
  for (std::size_t c = 0; c < dims.n_acoustic(); ++c) {
    r.acoustic.push_back(one_hot(static_cast<int>(c % dims.acoustic_vocab), dims.acoustic_vocab));
  }
  return std::make_unique<ScriptedBackend>(dims, std::vector<Rule>{std::move(r)}, cost);
}

std::vector<TtOutput> ScriptedBackend::tt_step(std::span<const BackendRequest> batch) {
  std::vector<TtOutput> outs;
  outs.reserve(batch.size());
  for (const BackendRequest& req : batch) {
    if (req.history.size() != req.frame_index) {
      throw std::invalid_argument("scripted backend: history length does not match frame index");
    }
    const bool need_digest = std::any_of(rules_.begin(), rules_.end(), [](const Rule& r) { return r.history_digest; });
    const std::uint64_t digest = need_digest ? history_digest(req.history) : 0;
    std::optional<std::size_t> hit;
    for (std::size_t i = 0; i < rules_.size() && !hit; ++i) {
      const Rule& r = rules_[i];
      if (r.frame && *r.frame != req.frame_index) continue;
      if (r.cursor && *r.cursor != req.cursor) continue;
      if (r.cursor_mod && req.cursor % r.cursor_mod->first != r.cursor_mod->second) continue;
      if (r.history_digest && *r.history_digest != digest) continue;
      if (r.text_dropped && *r.text_dropped != req.drop.text) continue;
      if (r.audio_dropped && *r.audio_dropped != req.drop.audio) continue;
      hit = i;
    }
    if (!hit) {
      throw std::runtime_error("scripted backend: no rule matches state " +
                               describe(req, need_digest ? digest : history_digest(req.history)));
    }
    TtOutput out;
    out.joint = rules_[*hit].joint;
    out.frame_embedding = {static_cast<float>(*hit), static_cast<float>(req.frame_index)};
    outs.push_back(std::move(out));
  }
  return outs;
}

std::vector<DtOutput> ScriptedBackend::dt_step(std::span<const DtRequest> batch) {
  std::vector<DtOutput> outs;
  outs.reserve(batch.size());
  for (const DtRequest& req : batch) {
    if (req.frame_embedding.size() != dims_.embed) {
      throw std::invalid_argument("scripted backend: frame embedding width mismatch");
    }
    const auto idx = static_cast<std::size_t>(req.frame_embedding[0]);
    if (idx >= rules_.size()) throw std::invalid_argument("scripted backend: frame embedding names no rule");
    const Rule& r = rules_[idx];
    DtOutput out;
    out.codebooks = req.speaker_dropped && !r.acoustic_uncond.empty() ? r.acoustic_uncond : r.acoustic;
    outs.push_back(std::move(out));
  }
  return outs;
}

SpeakerEmbedding ScriptedBackend::null_speaker() const { return SpeakerEmbedding(std::vector<float>(1, 1.0f), 1.0); }

}  // namespace stts
