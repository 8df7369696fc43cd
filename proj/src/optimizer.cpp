#include "twins/optimizer.hpp"

#include <cmath>

namespace twins {

std::string optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + name + "' (want adam or sgd)");
}

void OptimizerOptions::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("optimizer: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer: beta1 outside [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer: beta2 outside [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
  if (!std::isfinite(grad_clip)) throw ConfigError("optimizer: grad_clip must be finite");
}

nlohmann::json OptimizerOptions::to_json() const {
  return {{"kind", optimizer_name(kind)}, {"lr", lr},   {"beta1", beta1},
          {"beta2", beta2},               {"eps", eps}, {"grad_clip", grad_clip}};
}

OptimizerOptions OptimizerOptions::from_json(const nlohmann::json& j) {
  OptimizerOptions o;
  try {
    o.kind = optimizer_from_name(j.at("kind").get<std::string>());
    o.lr = j.at("lr").get<double>();
    o.beta1 = j.at("beta1").get<double>();
    o.beta2 = j.at("beta2").get<double>();
    o.eps = j.at("eps").get<double>();
    o.grad_clip = j.at("grad_clip").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed optimizer options: ") + e.what());
  }
  o.validate();
  return o;
}

namespace {

Tensor zeros_like(const Tensor& t) {
  Tensor z;
  z.name = t.name;
  z.shape = t.shape;
  z.data.assign(t.data.size(), 0.0);
  return z;
}

void check_congruent(const std::vector<Tensor>& params, const std::vector<Tensor>& other,
                     const char* what) {
  if (params.size() != other.size())
    throw ShapeError(std::string(what) + ": tensor count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != other[i].name || params[i].shape != other[i].shape)
      throw ShapeError(std::string(what) + ": tensor '" + params[i].name +
                       "' does not line up with '" + other[i].name + "'");
  }
}

}  // namespace

OptimizerState init_optimizer_state(const OptimizerOptions& options,
                                    const std::vector<Tensor>& params) {
  OptimizerState state;
  if (options.kind == OptimizerKind::kAdam) {
    for (const Tensor& t : params) {
      state.m.push_back(zeros_like(t));
      state.v.push_back(zeros_like(t));
    }
  }
  return state;
}

double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  long double sq = 0.0L;
  for (const Tensor& g : grads)
    for (double v : g.data) sq += static_cast<long double>(v) * v;
  const double norm = std::sqrt(static_cast<double>(sq));
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor& g : grads)
      for (double& v : g.data) v *= scale;
  }
  return norm;
}

void optimizer_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                    OptimizerState& state, const OptimizerOptions& options) {
  options.validate();
  check_congruent(params, grads, "optimizer_step");
  for (const Tensor& g : grads)
    for (double v : g.data)
      if (!std::isfinite(v))
        throw NumericError("optimizer_step: non-finite gradient in '" + g.name + "'");

  state.step += 1;
  if (options.kind == OptimizerKind::kSgd) {
    for (size_t i = 0; i < params.size(); ++i)
      for (size_t k = 0; k < params[i].data.size(); ++k)
        params[i].data[k] -= options.lr * grads[i].data[k];
    return;
  }

  check_congruent(params, state.m, "optimizer_step (adam m)");
  check_congruent(params, state.v, "optimizer_step (adam v)");
  const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    const auto& g = grads[i].data;
    auto& p = params[i].data;
    for (size_t k = 0; k < p.size(); ++k) {
      m[k] = options.beta1 * m[k] + (1.0 - options.beta1) * g[k];
      v[k] = options.beta2 * v[k] + (1.0 - options.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
}

}  // namespace twins
