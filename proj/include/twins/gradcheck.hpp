#pragma once

#include <cstdint>
#include <string>

#include "twins/model.hpp"
#include "twins/objective.hpp"

namespace twins {

// Central-difference verification of the analytic gradients. The reported
// figure is max_e |analytic_e - fd_e| / max(max_e |fd_e|, 1e-12): the worst
// absolute deviation normalized by the gradient's own scale.

struct ObjectiveGradcheckSpec {
  Variant variant = Variant::kBT;
  CorrelationOptions corr;
  double lambda = 0.005;
  int n = 4;
  int m = 8;
  uint64_t seed = 1;
  double h = 1e-4;
  double entry_lo = -2.0;
  double entry_hi = 2.0;
};

// Checks d(total)/dZ^A and d(total)/dZ^B for one random instance. When
// `offender` is given it receives the gradient ("d_za" or "d_zb") holding
// the largest deviation.
double objective_gradcheck(const ObjectiveGradcheckSpec& spec,
                           std::string* offender = nullptr);

struct EncoderGradcheckSpec {
  ArchDescriptor arch;  // defaulted to a tiny encoder by tiny_arch()
  int batch = 3;
  Variant variant = Variant::kBT;
  CorrelationOptions corr;
  double lambda = 0.005;
  uint64_t seed = 1;
  double h = 1e-4;
  // Parameters are drawn i.i.d. uniform rather than with the training init:
  // the training init zeroes biases, which makes exact-zero pre-activations
  // (dead receptive fields) routine and leaves the latents so small that the
  // normalizers amplify truncation error. A generic point checks the same
  // gradient code without those degeneracies.
  double weight_range = 0.8;
  double bias_range = 0.3;
  // Parameter draws whose smallest |pre-activation| is below this margin are
  // rejected and redrawn, keeping finite differences away from ReLU kinks.
  // A draw is also rejected if any +-h parameter perturbation flips a ReLU
  // gate (the margin alone cannot bound every sensitivity), or if a latent
  // row or column squared norm falls below norm_floor (tiny normalizer
  // denominators blow up the curvature and with it the truncation error).
  double kink_margin = 1e-3;
  double norm_floor = 0.01;
  int max_redraws = 64;
};

ArchDescriptor tiny_arch();

// Checks d(total)/d(theta) for every encoder parameter, end to end through
// two random views, the encoder, and the objective. When `offender` is
// given it receives the name of the tensor with the largest deviation.
// NumericError if no kink-safe parameter draw is found within max_redraws.
double encoder_gradcheck(const EncoderGradcheckSpec& spec,
                         std::string* offender = nullptr);

}  // namespace twins
