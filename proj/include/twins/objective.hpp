#pragma once

#include <Eigen/Dense>
#include <string>

#include "twins/error.hpp"

namespace twins {

using Mat = Eigen::MatrixXd;

enum class Variant { kBT, kMBT };
enum class Reduction { kSum, kMean };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);      // ConfigError
std::string reduction_name(Reduction r);
Reduction reduction_from_name(const std::string& name);  // ConfigError

// Cross-correlation matrix between two latent batches (rows = items,
// columns = features), plus the settings it was computed under.
struct CorrelationMatrix {
  Mat values;  // m x m
  Variant variant = Variant::kBT;
  Reduction reduction = Reduction::kSum;
};

struct CorrelationOptions {
  double eps = 1e-9;                      // denominator regularizer
  bool center = false;                    // subtract per-feature batch means first
  Reduction reduction = Reduction::kSum;  // MBT only: batch-sum or batch-mean
};

// C_ij = sum_b za[b,i] * zb[b,j] / ((sqrt(sum_b za[b,i]^2) + eps) *
//                                   (sqrt(sum_b zb[b,j]^2) + eps))
// Feature-normalized: each column is scaled by its batch L2 norm, without
// mean subtraction unless options.center is set. With eps == 0 the
// denominator is computed as sqrt(sa_i * sb_j), which makes diagonal entries
// for identical inputs come out as exactly 1.0. Entries are clamped to
// [-1, 1] (a documented guard against rounding excursions; it never fires on
// finite eps > 0). A zero-norm column with eps == 0 yields zero entries.
CorrelationMatrix bt_correlation(const Mat& za, const Mat& zb,
                                 const CorrelationOptions& options = {});

// C_ij = reduce_b za[b,i] * zb[b,j] / ((|za_b| + eps) * (|zb_b| + eps))
// Sample-normalized: each row is scaled by its L2 norm. reduce is a plain
// sum by default, or a mean over the batch with Reduction::kMean. No
// clamping; entries legitimately exceed 1 under the sum reduction. With
// eps == 0 a per-row denominator of sqrt(ra_b * rb_b) keeps the trace of an
// identical pair within machine precision of n. Zero rows contribute zero.
CorrelationMatrix mbt_correlation(const Mat& za, const Mat& zb,
                                  const CorrelationOptions& options = {});

struct LossBreakdown {
  double invariance = 0.0;  // sum_i (1 - C_ii)^2
  double redundancy = 0.0;  // sum_{i != j} C_ij^2
  double lambda = 0.0;
  double total = 0.0;       // invariance + lambda * redundancy
};

// Scalar loss from a correlation matrix. lambda must be >= 0 and finite.
LossBreakdown bt_loss(const CorrelationMatrix& c, double lambda);

struct LatentGradients {
  Mat d_za;
  Mat d_zb;
  CorrelationMatrix correlation;
  LossBreakdown loss;
};

// Loss and exact analytic gradients with respect to both latent batches,
// differentiating through the chosen correlation (including the
// normalization denominators and optional centering). Requires n >= 1,
// m >= 2, finite inputs, matching shapes.
LatentGradients loss_grad(const Mat& za, const Mat& zb, Variant variant, double lambda,
                          const CorrelationOptions& options = {});

}  // namespace twins
