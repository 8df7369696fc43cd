#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "twins/model.hpp"

namespace twins {

enum class OptimizerKind { kAdam, kSgd };

std::string optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(const std::string& name);  // ConfigError

struct OptimizerOptions {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 10.0;  // global-norm threshold; <= 0 disables clipping

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static OptimizerOptions from_json(const nlohmann::json& j);
};

// First/second moment buffers, congruent with the parameter list they were
// created for. SGD keeps only the step counter.
struct OptimizerState {
  int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

OptimizerState init_optimizer_state(const OptimizerOptions& options,
                                    const std::vector<Tensor>& params);

// Scales all gradients by max_norm / ||g|| when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_gradients(std::vector<Tensor>& grads, double max_norm);

// One update step, in place. Gradients must be congruent with the parameters
// (same count, names, shapes); anything else raises ShapeError. Non-finite
// gradients raise NumericError before any parameter is touched.
void optimizer_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                    OptimizerState& state, const OptimizerOptions& options);

}  // namespace twins
