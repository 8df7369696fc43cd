#include "twins/gradcheck.hpp"

#include <cmath>

#include "twins/rng.hpp"

namespace twins {

namespace {

double total_loss(const Mat& za, const Mat& zb, Variant variant, double lambda,
                  const CorrelationOptions& corr) {
  const CorrelationMatrix c =
      variant == Variant::kBT ? bt_correlation(za, zb, corr) : mbt_correlation(za, zb, corr);
  return bt_loss(c, lambda).total;
}

double rel_err(const Mat& analytic, const Mat& fd) {
  const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-12);
  return (analytic - fd).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

double objective_gradcheck(const ObjectiveGradcheckSpec& spec, std::string* offender) {
  Rng rng(mix_seed({spec.seed, 0x6f626aULL}));
  Mat za(spec.n, spec.m), zb(spec.n, spec.m);
  for (Eigen::Index b = 0; b < spec.n; ++b) {
    for (Eigen::Index i = 0; i < spec.m; ++i) {
      za(b, i) = rng.uniform(spec.entry_lo, spec.entry_hi);
      zb(b, i) = rng.uniform(spec.entry_lo, spec.entry_hi);
    }
  }

  const LatentGradients lg = loss_grad(za, zb, spec.variant, spec.lambda, spec.corr);

  Mat fd_a(spec.n, spec.m), fd_b(spec.n, spec.m);
  for (Eigen::Index b = 0; b < spec.n; ++b) {
    for (Eigen::Index i = 0; i < spec.m; ++i) {
      Mat zp = za, zm = za;
      zp(b, i) += spec.h;
      zm(b, i) -= spec.h;
      fd_a(b, i) = (total_loss(zp, zb, spec.variant, spec.lambda, spec.corr) -
                    total_loss(zm, zb, spec.variant, spec.lambda, spec.corr)) /
                   (2.0 * spec.h);
      zp = zb;
      zm = zb;
      zp(b, i) += spec.h;
      zm(b, i) -= spec.h;
      fd_b(b, i) = (total_loss(za, zp, spec.variant, spec.lambda, spec.corr) -
                    total_loss(za, zm, spec.variant, spec.lambda, spec.corr)) /
                   (2.0 * spec.h);
    }
  }
  const double err_a = rel_err(lg.d_za, fd_a);
  const double err_b = rel_err(lg.d_zb, fd_b);
  if (offender) *offender = err_a >= err_b ? "d_za" : "d_zb";
  return std::max(err_a, err_b);
}

ArchDescriptor tiny_arch() {
  ArchDescriptor arch;
  arch.input_bins = 16;
  arch.input_frames = 8;
  arch.convs = {{2, 3, 2}, {3, 3, 2}};
  arch.projector = true;
  arch.projector_hidden = 6;
  arch.latent_dim = 4;
  return arch;
}

namespace {

// Every ReLU gate state in one forward pass of both branches. Any flip
// between the base point and a perturbed point means the loss is not smooth
// across that finite-difference interval.
std::vector<bool> gate_pattern(const ForwardCache& ca, const ForwardCache& cb) {
  std::vector<bool> bits;
  for (const ForwardCache* cache : {&ca, &cb}) {
    for (const ForwardCache::ItemCache& item : cache->items) {
      for (size_t l = 1; l < item.conv_inputs.size(); ++l)
        for (const double v : item.conv_inputs[l].data) bits.push_back(v > 0.0);
      for (const double v : item.final_out.data) bits.push_back(v > 0.0);
    }
    for (Eigen::Index k = 0; k < cache->fc1_post.size(); ++k)
      bits.push_back(cache->fc1_post.data()[k] > 0.0);
  }
  return bits;
}

double min_axis_norm(const Mat& z) {
  double lo = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < z.cols(); ++i)
    lo = std::min(lo, z.col(i).squaredNorm());
  for (Eigen::Index b = 0; b < z.rows(); ++b)
    lo = std::min(lo, z.row(b).squaredNorm());
  return lo;
}

}  // namespace

double encoder_gradcheck(const EncoderGradcheckSpec& spec, std::string* offender) {
  spec.arch.validate();

  auto draw_views = [&spec](uint64_t seed) {
    Rng rng(mix_seed({seed, 0x76696577ULL}));
    std::vector<MelSpectrogram> a(static_cast<size_t>(spec.batch));
    std::vector<MelSpectrogram> b(static_cast<size_t>(spec.batch));
    for (int i = 0; i < spec.batch; ++i) {
      for (MelSpectrogram* view : {&a[static_cast<size_t>(i)], &b[static_cast<size_t>(i)]}) {
        view->values.resize(spec.arch.input_bins, spec.arch.input_frames);
        for (int r = 0; r < spec.arch.input_bins; ++r)
          for (int c = 0; c < spec.arch.input_frames; ++c)
            view->values(r, c) = rng.normal();
      }
    }
    return std::pair(std::move(a), std::move(b));
  };

  for (int attempt = 0; attempt < spec.max_redraws; ++attempt) {
    const uint64_t draw_seed = mix_seed({spec.seed, static_cast<uint64_t>(attempt)});
    ModelParams params = init_model(spec.arch, draw_seed);
    Rng param_rng(mix_seed({draw_seed, 0x706172616dULL}));
    for (Tensor& tensor : params.tensors) {
      const bool is_bias = tensor.shape.size() == 1;
      const double range = is_bias ? spec.bias_range : spec.weight_range;
      for (double& v : tensor.data) v = param_rng.uniform(-range, range);
    }
    auto [view_a, view_b] = draw_views(draw_seed);

    ForwardCache ca, cb;
    const Mat za = model_forward(params, view_a, &ca);
    const Mat zb = model_forward(params, view_b, &cb);
    if (std::min(ca.min_preact_abs, cb.min_preact_abs) <= spec.kink_margin) continue;
    if (std::min(min_axis_norm(za), min_axis_norm(zb)) < spec.norm_floor) continue;
    const std::vector<bool> base_gates = gate_pattern(ca, cb);

    // Analytic gradient through both branches.
    const LatentGradients lg = loss_grad(za, zb, spec.variant, spec.lambda, spec.corr);
    GradientSet ga = model_backward(params, ca, lg.d_za);
    const GradientSet gb = model_backward(params, cb, lg.d_zb);
    for (size_t t = 0; t < ga.tensors.size(); ++t)
      for (size_t k = 0; k < ga.tensors[t].data.size(); ++k)
        ga.tensors[t].data[k] += gb.tensors[t].data[k];

    // The finite-difference sweep doubles as the gate-flip detector: any
    // perturbation landing in a different linear region invalidates the
    // whole draw.
    auto loss_at = [&](const ModelParams& p, bool* gates_ok) {
      ForwardCache pa, pb;
      const Mat qa = model_forward(p, view_a, &pa);
      const Mat qb = model_forward(p, view_b, &pb);
      if (gate_pattern(pa, pb) != base_gates) *gates_ok = false;
      return total_loss(qa, qb, spec.variant, spec.lambda, spec.corr);
    };

    double worst_abs = 0.0;
    double fd_scale = 0.0;
    size_t worst_tensor = 0;
    bool gates_ok = true;
    ModelParams probe = params;
    for (size_t t = 0; t < probe.tensors.size() && gates_ok; ++t) {
      for (size_t k = 0; k < probe.tensors[t].data.size() && gates_ok; ++k) {
        const double saved = probe.tensors[t].data[k];
        probe.tensors[t].data[k] = saved + spec.h;
        const double up = loss_at(probe, &gates_ok);
        probe.tensors[t].data[k] = saved - spec.h;
        const double down = loss_at(probe, &gates_ok);
        probe.tensors[t].data[k] = saved;
        const double fd = (up - down) / (2.0 * spec.h);
        const double dev = std::fabs(ga.tensors[t].data[k] - fd);
        if (dev > worst_abs) {
          worst_abs = dev;
          worst_tensor = t;
        }
        fd_scale = std::max(fd_scale, std::fabs(fd));
      }
    }
    if (gates_ok) {
      if (offender) *offender = params.tensors[worst_tensor].name;
      return worst_abs / std::max(fd_scale, 1e-12);
    }
  }
  throw NumericError("encoder_gradcheck: no kink-safe parameter draw found");
}

}  // namespace twins
