// Independent brute-force evaluators used as test oracles. Everything here
// is deliberately written as straight loops over plain doubles, sharing no
// code (and no accumulation strategy) with the library implementations.
#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>

namespace oracles {

using Mat = Eigen::MatrixXd;

inline Mat center_columns(const Mat& z) {
  Mat out = z;
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    double mean = 0.0;
    for (Eigen::Index b = 0; b < z.rows(); ++b) mean += z(b, i);
    mean /= static_cast<double>(z.rows());
    for (Eigen::Index b = 0; b < z.rows(); ++b) out(b, i) -= mean;
  }
  return out;
}

// C_ij = sum_b za[b,i] zb[b,j] / ((sqrt(sum_b za[b,i]^2)+eps)(sqrt(sum_b zb[b,j]^2)+eps))
inline Mat bt_correlation(Mat za, Mat zb, double eps, bool center) {
  if (center) {
    za = center_columns(za);
    zb = center_columns(zb);
  }
  const Eigen::Index n = za.rows(), m = za.cols();
  Mat c(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      double s = 0.0, sa = 0.0, sb = 0.0;
      for (Eigen::Index b = 0; b < n; ++b) {
        s += za(b, i) * zb(b, j);
        sa += za(b, i) * za(b, i);
        sb += zb(b, j) * zb(b, j);
      }
      const double denom = (std::sqrt(sa) + eps) * (std::sqrt(sb) + eps);
      c(i, j) = denom == 0.0 ? 0.0 : s / denom;
    }
  }
  return c;
}

// C_ij = reduce_b (za[b,i]/(|za_b|+eps)) (zb[b,j]/(|zb_b|+eps))
inline Mat mbt_correlation(Mat za, Mat zb, double eps, bool center, bool mean) {
  if (center) {
    za = center_columns(za);
    zb = center_columns(zb);
  }
  const Eigen::Index n = za.rows(), m = za.cols();
  Mat c = Mat::Zero(m, m);
  for (Eigen::Index b = 0; b < n; ++b) {
    double ra = 0.0, rb = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      ra += za(b, i) * za(b, i);
      rb += zb(b, i) * zb(b, i);
    }
    const double da = std::sqrt(ra) + eps;
    const double db = std::sqrt(rb) + eps;
    if (da == 0.0 || db == 0.0) continue;
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        c(i, j) += (za(b, i) / da) * (zb(b, j) / db);
  }
  if (mean) c /= static_cast<double>(n);
  return c;
}

struct Loss {
  double invariance = 0.0;
  double redundancy = 0.0;
  double total = 0.0;
};

inline Loss bt_loss(const Mat& c, double lambda) {
  Loss out;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    out.invariance += (1.0 - c(i, i)) * (1.0 - c(i, i));
    for (Eigen::Index j = 0; j < c.cols(); ++j)
      if (j != i) out.redundancy += c(i, j) * c(i, j);
  }
  out.total = out.invariance + lambda * out.redundancy;
  return out;
}

// Single-bin DFT magnitude, the slow way.
inline double dft_mag(const std::vector<double>& x, size_t k) {
  std::complex<double> acc = 0.0;
  const double w = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(x.size());
  for (size_t t = 0; t < x.size(); ++t)
    acc += x[t] * std::complex<double>(std::cos(w * static_cast<double>(t)),
                                       std::sin(w * static_cast<double>(t)));
  return std::abs(acc);
}

inline std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& x) {
  std::vector<std::complex<double>> out(x.size());
  for (size_t k = 0; k < x.size(); ++k) {
    std::complex<double> acc = 0.0;
    const double w = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(x.size());
    for (size_t t = 0; t < x.size(); ++t)
      acc += x[t] * std::complex<double>(std::cos(w * static_cast<double>(t)),
                                         std::sin(w * static_cast<double>(t)));
    out[k] = acc;
  }
  return out;
}

// max |a-b| over max(max |b|, floor): one scale for the whole matrix, so
// near-zero entries do not blow up the metric.
inline double max_rel_diff(const Mat& a, const Mat& b, double floor_scale = 1e-12) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), floor_scale);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline double rel_diff(double a, double b, double floor_scale = 1e-12) {
  return std::fabs(a - b) / std::max(std::fabs(b), floor_scale);
}

}  // namespace oracles
