#include "stts/backbone.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "stts/rate_control.hpp"
#include "stts/scripted_backend.hpp"
#include "stts/toy_backend.hpp"

namespace stts {

void ModelDims::validate() const {
  if (n_semantic == 0 || d_bins == 0 || acoustic_vocab == 0 || embed == 0 || heads == 0 || phoneme_vocab == 0 ||
      speaker_dim == 0 || ff_mult == 0 || max_window == 0) {
    throw std::invalid_argument("model dims: sizes must be positive");
  }
  if (d_bins != kDurationBins) throw std::invalid_argument("model dims: the duration head has exactly 6 bins");
  if (n_codebooks < 2) throw std::invalid_argument("model dims: need a semantic and at least one acoustic codebook");
  if (embed % heads != 0) throw std::invalid_argument("model dims: embed must be divisible by heads");
  if (!(frame_rate > 0.0)) throw std::invalid_argument("model dims: frame rate must be > 0");
}

SpeakerEmbedding::SpeakerEmbedding(std::vector<float> vector, double conditioning_scale)
    : vector_(std::move(vector)), scale_(conditioning_scale) {
  double norm = 0.0;
  for (float v : vector_) {
    if (!std::isfinite(v)) throw std::invalid_argument("speaker embedding: non-finite value");
    norm += static_cast<double>(v) * v;
  }
  if (!(norm > 0.0)) throw std::invalid_argument("speaker embedding: zero vector");
  if (!std::isfinite(scale_)) throw std::invalid_argument("speaker embedding: non-finite scale");
  norm = std::sqrt(norm);
  for (float& v : vector_) v = static_cast<float>(v / norm);
}

CfgBatch make_cfg_batch(const BackendRequest& request, const GuidanceConfig& guidance) {
  CfgBatch out{request, request};
  out.unconditional.drop.text = request.drop.text || guidance.text_cfg_enabled;
  out.unconditional.drop.audio = request.drop.audio || guidance.audio_cfg_enabled;
  out.unconditional.drop.speaker = request.drop.speaker || guidance.speaker_cfg_enabled;
  return out;
}

std::unique_ptr<Backend> make_backend(std::string_view spec, std::uint64_t seed) {
  const auto colon = spec.find(':');
  const std::string kind(spec.substr(0, colon));
  const std::string arg = colon == std::string_view::npos ? std::string() : std::string(spec.substr(colon + 1));
  if (kind == "toy") {
    if (arg.empty()) return std::make_unique<ToyBackend>(ModelDims{}, seed);
    std::ifstream in(arg, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open toy weights: " + arg);
    return ToyBackend::load(in);
  }
  if (kind == "scripted") {
    // bare "scripted" is the built-in stationary program
    if (arg.empty()) return ScriptedBackend::stationary(default_rate_table().target_distribution(4.0).dist);
    std::ifstream in(arg);
    if (!in) throw std::runtime_error("cannot open scripted program: " + arg);
    std::stringstream ss;
    ss << in.rdbuf();
    return ScriptedBackend::from_json(ss.str());
  }
  if (kind == "stationary") {
    if (arg == "uniform") return ScriptedBackend::stationary(DurationDistribution::uniform());
    const double sps = arg.empty() ? 4.0 : std::stod(arg);
    return ScriptedBackend::stationary(default_rate_table().target_distribution(sps).dist);
  }
  throw std::invalid_argument("unknown backend '" + std::string(spec) + "' (expected toy, scripted:FILE or stationary)");
}

}  // namespace stts
