#include "twins/augment.hpp"

#include <cmath>

namespace twins {

namespace {

double require_param(const AugOpSpec& op, const std::string& key) {
  auto it = op.params.find(key);
  if (it == op.params.end())
    throw InvalidPolicyError("op '" + op.name + "' missing param '" + key + "'");
  return it->second;
}

void check_params(const AugOpSpec& op, std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : op.params) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) known = true;
    if (!known)
      throw InvalidPolicyError("op '" + op.name + "' has unknown param '" + key + "'");
    if (!std::isfinite(value))
      throw InvalidPolicyError("op '" + op.name + "' param '" + key + "' is not finite");
  }
}

void validate_op(const AugOpSpec& op) {
  if (!(op.probability >= 0.0 && op.probability <= 1.0))
    throw InvalidPolicyError("op '" + op.name + "' probability outside [0, 1]");
  if (op.name == "time_mask") {
    check_params(op, {"max_frames"});
    if (require_param(op, "max_frames") < 0.0)
      throw InvalidPolicyError("time_mask: max_frames must be >= 0");
  } else if (op.name == "freq_mask") {
    check_params(op, {"max_bins"});
    if (require_param(op, "max_bins") < 0.0)
      throw InvalidPolicyError("freq_mask: max_bins must be >= 0");
  } else if (op.name == "gain") {
    check_params(op, {"lo", "hi"});
    if (require_param(op, "lo") > require_param(op, "hi"))
      throw InvalidPolicyError("gain: lo > hi");
  } else if (op.name == "additive_noise") {
    check_params(op, {"sigma"});
    if (require_param(op, "sigma") < 0.0)
      throw InvalidPolicyError("additive_noise: sigma must be >= 0");
  } else {
    throw InvalidPolicyError("unknown augmentation op '" + op.name + "'");
  }
}

}  // namespace

AugmentationPolicy AugmentationPolicy::default_policy(uint64_t seed, double log_floor) {
  AugmentationPolicy p;
  p.rng_seed = seed;
  p.mask_value = std::log(log_floor);
  p.ops = {
      {"time_mask", 0.5, {{"max_frames", 8.0}}},
      {"freq_mask", 0.5, {{"max_bins", 64.0}}},
      {"gain", 0.5, {{"lo", -1.0}, {"hi", 1.0}}},
      {"additive_noise", 0.5, {{"sigma", 0.05}}},
  };
  return p;
}

void AugmentationPolicy::validate() const {
  if (!std::isfinite(mask_value)) throw InvalidPolicyError("mask_value is not finite");
  for (const AugOpSpec& op : ops) validate_op(op);
}

nlohmann::json AugmentationPolicy::to_json() const {
  nlohmann::json j;
  j["version"] = kVersion;
  j["rng_seed"] = rng_seed;
  j["mask_value"] = mask_value;
  j["ops"] = nlohmann::json::array();
  for (const AugOpSpec& op : ops) {
    nlohmann::json jo;
    jo["name"] = op.name;
    jo["probability"] = op.probability;
    jo["params"] = op.params;
    j["ops"].push_back(jo);
  }
  return j;
}

AugmentationPolicy AugmentationPolicy::from_json(const nlohmann::json& j) {
  AugmentationPolicy p;
  try {
    const int version = j.at("version").get<int>();
    if (version != kVersion)
      throw VersionError("augmentation policy version " + std::to_string(version) +
                         " not supported (expected " + std::to_string(kVersion) + ")");
    p.rng_seed = j.at("rng_seed").get<uint64_t>();
    p.mask_value = j.at("mask_value").get<double>();
    for (const auto& jo : j.at("ops")) {
      AugOpSpec op;
      op.name = jo.at("name").get<std::string>();
      op.probability = jo.at("probability").get<double>();
      if (jo.contains("params"))
        op.params = jo.at("params").get<std::map<std::string, double>>();
      p.ops.push_back(std::move(op));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidPolicyError(std::string("malformed augmentation policy: ") + e.what());
  }
  p.validate();
  return p;
}

MelSpectrogram apply_op(const MelSpectrogram& x, const AugOpSpec& op, double mask_value,
                        Rng& rng) {
  validate_op(op);
  if (x.bins() == 0 || x.frames() == 0)
    throw InvalidInputError("apply_op: empty spectrogram");

  MelSpectrogram out = x;
  if (rng.uniform01() >= op.probability) return out;

  if (op.name == "time_mask") {
    const auto max_w = static_cast<int64_t>(op.params.at("max_frames"));
    const int64_t w = rng.uniform_int(0, std::min<int64_t>(max_w, x.frames()));
    if (w > 0) {
      const int64_t start = rng.uniform_int(0, x.frames() - w);
      out.values.middleCols(start, w).setConstant(mask_value);
    }
  } else if (op.name == "freq_mask") {
    const auto max_w = static_cast<int64_t>(op.params.at("max_bins"));
    const int64_t w = rng.uniform_int(0, std::min<int64_t>(max_w, x.bins()));
    if (w > 0) {
      const int64_t start = rng.uniform_int(0, x.bins() - w);
      out.values.middleRows(start, w).setConstant(mask_value);
    }
  } else if (op.name == "gain") {
    const double g = rng.uniform(op.params.at("lo"), op.params.at("hi"));
    out.values.array() += g;
  } else {  // additive_noise
    const double sigma = op.params.at("sigma");
    for (int r = 0; r < out.bins(); ++r)
      for (int c = 0; c < out.frames(); ++c) out.values(r, c) += sigma * rng.normal();
  }
  return out;
}

ViewPair make_views(const std::vector<MelSpectrogram>& batch,
                    const AugmentationPolicy& policy, uint64_t step_seed) {
  policy.validate();
  ViewPair views;
  views.a.reserve(batch.size());
  views.b.reserve(batch.size());
  for (size_t item = 0; item < batch.size(); ++item) {
    const MelSpectrogram& x = batch[item];
    if (x.bins() == 0 || x.frames() == 0)
      throw InvalidInputError("make_views: empty spectrogram at item " +
                              std::to_string(item));
    for (uint64_t branch : {uint64_t{0}, uint64_t{1}}) {
      Rng rng(mix_seed({policy.rng_seed, step_seed, static_cast<uint64_t>(item), branch}));
      MelSpectrogram view = x;
      for (const AugOpSpec& op : policy.ops)
        view = apply_op(view, op, policy.mask_value, rng);
      (branch == 0 ? views.a : views.b).push_back(std::move(view));
    }
  }
  return views;
}

}  // namespace twins
