#include "twins/objective.hpp"

#include <cmath>

namespace twins {

namespace {

void check_pair(const Mat& za, const Mat& zb) {
  if (za.rows() != zb.rows() || za.cols() != zb.cols())
    throw ShapeError("latent batches differ in shape: " + std::to_string(za.rows()) + "x" +
                     std::to_string(za.cols()) + " vs " + std::to_string(zb.rows()) + "x" +
                     std::to_string(zb.cols()));
  if (za.rows() < 1 || za.cols() < 2)
    throw ShapeError("latent batch must be at least 1x2, got " +
                     std::to_string(za.rows()) + "x" + std::to_string(za.cols()));
  if (!za.allFinite() || !zb.allFinite())
    throw NumericError("non-finite value in latent batch");
}

void check_options(const CorrelationOptions& options) {
  if (!(options.eps >= 0.0) || !std::isfinite(options.eps))
    throw InvalidInputError("correlation eps must be finite and >= 0");
}

Mat centered(const Mat& z) { return z.rowwise() - z.colwise().mean(); }

// Column squared norms accumulated in extended precision, one fixed order.
// The same routine feeds both the correlation and its gradient so the two
// always agree bitwise on the denominators.
Eigen::VectorXd col_sq_norms(const Mat& z) {
  Eigen::VectorXd out(z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    long double acc = 0.0L;
    for (Eigen::Index b = 0; b < z.rows(); ++b) {
      const long double v = z(b, j);
      acc += v * v;
    }
    out(j) = static_cast<double>(acc);
  }
  return out;
}

Eigen::VectorXd row_sq_norms(const Mat& z) {
  Eigen::VectorXd out(z.rows());
  for (Eigen::Index b = 0; b < z.rows(); ++b) {
    long double acc = 0.0L;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const long double v = z(b, j);
      acc += v * v;
    }
    out(b) = static_cast<double>(acc);
  }
  return out;
}

// Cross sums S_ij = sum_b za[b,i] * zb[b,j], accumulated in the same order
// and precision as the squared norms above, so S_ii matches sa_i exactly
// when za == zb.
Mat cross_sums(const Mat& za, const Mat& zb) {
  Mat s(za.cols(), za.cols());
  for (Eigen::Index i = 0; i < za.cols(); ++i) {
    for (Eigen::Index j = 0; j < zb.cols(); ++j) {
      long double acc = 0.0L;
      for (Eigen::Index b = 0; b < za.rows(); ++b)
        acc += static_cast<long double>(za(b, i)) * static_cast<long double>(zb(b, j));
      s(i, j) = static_cast<double>(acc);
    }
  }
  return s;
}

Mat bt_correlation_values(const Mat& za, const Mat& zb, double eps) {
  const Eigen::VectorXd sa = col_sq_norms(za);
  const Eigen::VectorXd sb = col_sq_norms(zb);
  const Mat s = cross_sums(za, zb);
  const Eigen::Index m = za.cols();
  Mat c(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      double denom;
      if (eps == 0.0) {
        denom = std::sqrt(sa(i) * sb(j));
      } else {
        denom = (std::sqrt(sa(i)) + eps) * (std::sqrt(sb(j)) + eps);
      }
      double v = denom == 0.0 ? 0.0 : s(i, j) / denom;
      c(i, j) = std::min(1.0, std::max(-1.0, v));
    }
  }
  return c;
}

Mat mbt_correlation_values(const Mat& za, const Mat& zb, double eps, Reduction reduction) {
  const Eigen::VectorXd ra = row_sq_norms(za);
  const Eigen::VectorXd rb = row_sq_norms(zb);
  const Eigen::Index n = za.rows();
  const Eigen::Index m = za.cols();

  // C = wa^T * zb with wa rows pre-divided by the per-item denominator.
  Mat wa(n, m);
  for (Eigen::Index b = 0; b < n; ++b) {
    double denom;
    if (eps == 0.0) {
      denom = std::sqrt(ra(b) * rb(b));
    } else {
      denom = (std::sqrt(ra(b)) + eps) * (std::sqrt(rb(b)) + eps);
    }
    if (denom == 0.0) {
      wa.row(b).setZero();
    } else {
      wa.row(b) = za.row(b) / denom;
    }
  }
  Mat c(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      long double acc = 0.0L;
      for (Eigen::Index b = 0; b < n; ++b)
        acc += static_cast<long double>(wa(b, i)) * static_cast<long double>(zb(b, j));
      c(i, j) = static_cast<double>(acc);
    }
  }
  if (reduction == Reduction::kMean) c /= static_cast<double>(n);
  return c;
}

// dL/dC for Eq. 1: -2 (1 - C_ii) on the diagonal, 2 lambda C_ij off it.
Mat loss_grad_wrt_c(const Mat& c, double lambda) {
  Mat g = 2.0 * lambda * c;
  for (Eigen::Index i = 0; i < c.rows(); ++i) g(i, i) = -2.0 * (1.0 - c(i, i));
  return g;
}

}  // namespace

std::string variant_name(Variant v) { return v == Variant::kBT ? "bt" : "mbt"; }

Variant variant_from_name(const std::string& name) {
  if (name == "bt") return Variant::kBT;
  if (name == "mbt") return Variant::kMBT;
  throw ConfigError("unknown objective variant '" + name + "' (want bt or mbt)");
}

std::string reduction_name(Reduction r) { return r == Reduction::kSum ? "sum" : "mean"; }

Reduction reduction_from_name(const std::string& name) {
  if (name == "sum") return Reduction::kSum;
  if (name == "mean") return Reduction::kMean;
  throw ConfigError("unknown reduction '" + name + "' (want sum or mean)");
}

CorrelationMatrix bt_correlation(const Mat& za, const Mat& zb,
                                 const CorrelationOptions& options) {
  check_pair(za, zb);
  check_options(options);
  CorrelationMatrix out;
  out.variant = Variant::kBT;
  out.reduction = Reduction::kSum;
  if (options.center) {
    out.values = bt_correlation_values(centered(za), centered(zb), options.eps);
  } else {
    out.values = bt_correlation_values(za, zb, options.eps);
  }
  return out;
}

CorrelationMatrix mbt_correlation(const Mat& za, const Mat& zb,
                                  const CorrelationOptions& options) {
  check_pair(za, zb);
  check_options(options);
  CorrelationMatrix out;
  out.variant = Variant::kMBT;
  out.reduction = options.reduction;
  if (options.center) {
    out.values = mbt_correlation_values(centered(za), centered(zb), options.eps,
                                        options.reduction);
  } else {
    out.values = mbt_correlation_values(za, zb, options.eps, options.reduction);
  }
  return out;
}

LossBreakdown bt_loss(const CorrelationMatrix& c, double lambda) {
  if (c.values.rows() != c.values.cols())
    throw ShapeError("bt_loss: correlation matrix must be square");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw InvalidInputError("bt_loss: lambda must be finite and >= 0");
  if (!c.values.allFinite()) throw NumericError("bt_loss: non-finite correlation");

  long double inv = 0.0L;
  long double red = 0.0L;
  for (Eigen::Index i = 0; i < c.values.rows(); ++i) {
    const long double d = 1.0L - static_cast<long double>(c.values(i, i));
    inv += d * d;
    for (Eigen::Index j = 0; j < c.values.cols(); ++j) {
      if (j == i) continue;
      const long double v = c.values(i, j);
      red += v * v;
    }
  }
  LossBreakdown out;
  out.invariance = static_cast<double>(inv);
  out.redundancy = static_cast<double>(red);
  out.lambda = lambda;
  out.total = out.invariance + lambda * out.redundancy;
  return out;
}

namespace {

// BT gradients. With A_i = sqrt(sa_i) + eps and B_j = sqrt(sb_j) + eps,
//   dL/dza[b,i] = (1/A_i) sum_j G_ij zb[b,j]/B_j
//               - za[b,i] / (sqrt(sa_i) A_i) * sum_j G_ij C_ij
// and symmetrically for zb. The clamp in the forward pass is treated as
// identity (it only trims sub-ulp excursions).
void bt_backward(const Mat& za, const Mat& zb, const Mat& c, const Mat& g, double eps,
                 Mat& d_za, Mat& d_zb) {
  const Eigen::VectorXd sa = col_sq_norms(za);
  const Eigen::VectorXd sb = col_sq_norms(zb);
  const Eigen::Index n = za.rows();
  const Eigen::Index m = za.cols();

  Eigen::VectorXd ra(m), rb(m), inv_a(m), inv_b(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    ra(i) = std::sqrt(sa(i));
    rb(i) = std::sqrt(sb(i));
    inv_a(i) = 1.0 / (ra(i) + eps);
    inv_b(i) = 1.0 / (rb(i) + eps);
  }

  // p_i = sum_j G_ij C_ij ; q_j = sum_i G_ij C_ij
  const Eigen::VectorXd p = (g.array() * c.array()).rowwise().sum();
  const Eigen::VectorXd q = (g.array() * c.array()).colwise().sum();

  const Mat nb = zb * inv_b.asDiagonal();       // zb[b,j] / B_j
  const Mat na = za * inv_a.asDiagonal();       // za[b,i] / A_i
  const Mat t_a = nb * g.transpose();           // sum_j G_ij zb[b,j]/B_j
  const Mat t_b = na * g;                       // sum_i G_ij za[b,i]/A_i

  d_za.resize(n, m);
  d_zb.resize(n, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double scale_a = ra(i) > 0.0 ? p(i) / (ra(i) * (ra(i) + eps)) : 0.0;
    d_za.col(i) = t_a.col(i) * inv_a(i) - za.col(i) * scale_a;
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    const double scale_b = rb(j) > 0.0 ? q(j) / (rb(j) * (rb(j) + eps)) : 0.0;
    d_zb.col(j) = t_b.col(j) * inv_b(j) - zb.col(j) * scale_b;
  }
}

// MBT gradients. With per-item D_b = (|za_b| + eps)(|zb_b| + eps) and
// t_b = za_b^T G zb_b,
//   dL/dza[b,k] = kappa [ (G zb_b)_k / D_b
//               - za[b,k] (|zb_b| + eps) t_b / (|za_b| D_b^2) ]
// where kappa is 1 for the sum reduction and 1/n for the mean.
void mbt_backward(const Mat& za, const Mat& zb, const Mat& g, double eps,
                  Reduction reduction, Mat& d_za, Mat& d_zb) {
  const Eigen::VectorXd sa = row_sq_norms(za);
  const Eigen::VectorXd sb = row_sq_norms(zb);
  const Eigen::Index n = za.rows();
  const Eigen::Index m = za.cols();
  const double kappa = reduction == Reduction::kMean ? 1.0 / static_cast<double>(n) : 1.0;

  const Mat gv = zb * g.transpose();  // (G zb_b)_k
  const Mat gu = za * g;              // (G^T za_b)_k

  d_za.resize(n, m);
  d_zb.resize(n, m);
  for (Eigen::Index b = 0; b < n; ++b) {
    const double norm_a = std::sqrt(sa(b));
    const double norm_b = std::sqrt(sb(b));
    const double denom = (norm_a + eps) * (norm_b + eps);
    if (denom == 0.0) {
      d_za.row(b).setZero();
      d_zb.row(b).setZero();
      continue;
    }
    const double t = za.row(b).dot(gv.row(b));
    const double scale_a =
        norm_a > 0.0 ? (norm_b + eps) * t / (norm_a * denom * denom) : 0.0;
    const double scale_b =
        norm_b > 0.0 ? (norm_a + eps) * t / (norm_b * denom * denom) : 0.0;
    d_za.row(b) = kappa * (gv.row(b) / denom - za.row(b) * scale_a);
    d_zb.row(b) = kappa * (gu.row(b) / denom - zb.row(b) * scale_b);
  }
}

}  // namespace

LatentGradients loss_grad(const Mat& za, const Mat& zb, Variant variant, double lambda,
                          const CorrelationOptions& options) {
  check_pair(za, zb);
  check_options(options);

  LatentGradients out;
  const Mat za_eff = options.center ? centered(za) : za;
  const Mat zb_eff = options.center ? centered(zb) : zb;

  out.correlation = variant == Variant::kBT ? bt_correlation(za, zb, options)
                                            : mbt_correlation(za, zb, options);
  out.loss = bt_loss(out.correlation, lambda);
  const Mat g = loss_grad_wrt_c(out.correlation.values, lambda);

  if (variant == Variant::kBT) {
    bt_backward(za_eff, zb_eff, out.correlation.values, g, options.eps, out.d_za, out.d_zb);
  } else {
    mbt_backward(za_eff, zb_eff, g, options.eps, options.reduction, out.d_za, out.d_zb);
  }

  if (options.center) {
    // Chain through z_c = z - colmean(z): subtract each column's mean grad.
    out.d_za.rowwise() -= out.d_za.colwise().mean();
    out.d_zb.rowwise() -= out.d_zb.colwise().mean();
  }
  if (!out.d_za.allFinite() || !out.d_zb.allFinite())
    throw NumericError("loss_grad: non-finite gradient");
  return out;
}

}  // namespace twins
