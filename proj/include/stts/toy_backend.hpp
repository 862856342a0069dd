#pragma once

#include <iosfwd>
#include <map>
#include <memory>

#include "stts/backbone.hpp"

namespace stts {

// Small seeded transformer stack with the real model's interfaces: a phoneme
// encoder over the visible window, a causal temporal transformer with a KV
// cache per CFG branch, and a depth transformer over the acoustic codebooks.
// Weights are pseudo-random; there is no training.
class ToyBackend final : public Backend {
 public:
  explicit ToyBackend(ModelDims dims = {}, std::uint64_t seed = 0, CostModel cost = {});

  // Flat little-endian float32 weights after a one-line text header.
  void save(std::ostream& out) const;
  static std::unique_ptr<ToyBackend> load(std::istream& in, CostModel cost = {});

  const ModelDims& dims() const override { return dims_; }
  using Backend::dt_step;
  using Backend::tt_step;
  std::vector<TtOutput> tt_step(std::span<const BackendRequest> batch) override;
  std::vector<DtOutput> dt_step(std::span<const DtRequest> batch) override;
  SpeakerEmbedding null_speaker() const override;
  CostModel cost_model() const override { return cost_; }

  // Output for the last request computed from scratch over the whole prefix
  // (no cache). requests[i] must be the request for frame i of one branch.
  TtOutput tt_recompute(std::span<const BackendRequest> requests) const;

  std::uint64_t seed() const { return seed_; }
  std::size_t parameter_count() const;
  void reset_cache() { caches_.clear(); }

  struct Weights;

 private:
  ToyBackend(ModelDims dims, std::uint64_t seed, CostModel cost, std::shared_ptr<const Weights> weights);

  struct BranchCache {
    std::vector<std::vector<float>> keys;    // per layer, positions x embed
    std::vector<std::vector<float>> values;  // per layer
    std::size_t length = 0;
  };

  std::vector<float> frame_input(const BackendRequest& request) const;

  ModelDims dims_;
  std::uint64_t seed_;
  CostModel cost_;
  std::shared_ptr<const Weights> w_;
  std::map<int, BranchCache> caches_;
};

}  // namespace stts
