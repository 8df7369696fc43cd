#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "twins/dsp.hpp"
#include "twins/rng.hpp"

namespace twins {

// One stochastic op in an augmentation chain. `params` is a flat name ->
// number map validated against the op's schema:
//   time_mask      max_frames (>= 0)
//   freq_mask      max_bins   (>= 0)
//   gain           lo, hi     (lo <= hi, additive in log domain)
//   additive_noise sigma      (>= 0)
struct AugOpSpec {
  std::string name;
  double probability = 0.5;
  std::map<std::string, double> params;
};

// Ordered op chain applied independently to both views of each item.
// Serialization is versioned JSON; policies are value objects, so two runs
// from the same serialized policy and seeds produce identical views.
struct AugmentationPolicy {
  static constexpr int kVersion = 1;

  std::vector<AugOpSpec> ops;
  uint64_t rng_seed = 0;
  double mask_value = 0.0;  // fill for masked cells; default_policy uses log(floor)

  // time_mask, freq_mask, gain, additive_noise, each with probability 0.5
  // and the standard parameters (8 frames, 64 bins, gain in [-1, 1], sigma 0.05).
  static AugmentationPolicy default_policy(uint64_t seed, double log_floor = 1e-10);

  nlohmann::json to_json() const;
  static AugmentationPolicy from_json(const nlohmann::json& j);  // InvalidPolicyError

  void validate() const;  // throws InvalidPolicyError
};

// Applies a single op. The rng is advanced once for the Bernoulli gate and,
// when the gate passes, once per parameter draw, so view streams stay aligned
// regardless of which ops fire.
MelSpectrogram apply_op(const MelSpectrogram& x, const AugOpSpec& op, double mask_value,
                        Rng& rng);

struct ViewPair {
  std::vector<MelSpectrogram> a;
  std::vector<MelSpectrogram> b;
};

// Two independently augmented views of a batch. Per-item, per-branch streams
// are derived from (policy.rng_seed, step_seed, item, branch), so results do
// not depend on batch composition elsewhere or evaluation order.
ViewPair make_views(const std::vector<MelSpectrogram>& batch,
                    const AugmentationPolicy& policy, uint64_t step_seed);

}  // namespace twins
