#include <cmath>
#include <vector>

#include "doctest.h"
#include "twins/checkpoint.hpp"
#include "twins/model.hpp"
#include "twins/optimizer.hpp"
#include "twins/rng.hpp"
#include "util.hpp"

using twins::ArchDescriptor;
using twins::FeatureMap;
using twins::Mat;
using twins::MelSpectrogram;
using twins::ModelParams;
using twins::Tensor;

namespace {

ArchDescriptor small_arch(bool projector = false) {
  ArchDescriptor a;
  a.input_bins = 6;
  a.input_frames = 5;
  a.convs = {{2, 3, 2}, {3, 3, 2}};
  a.projector = projector;
  a.projector_hidden = 4;
  a.latent_dim = 3;
  return a;
}

std::vector<MelSpectrogram> random_batch(twins::Rng& rng, const ArchDescriptor& arch,
                                         int n) {
  std::vector<MelSpectrogram> batch;
  for (int i = 0; i < n; ++i)
    batch.push_back(testutil::random_spectrogram(rng, arch.input_bins, arch.input_frames));
  return batch;
}

// Direct convolution, written without im2col on purpose: same padding with
// floor(total/2) leading rows/cols, stride s, ReLU at the end.
FeatureMap conv_oracle(const FeatureMap& in, const Tensor& w, const Tensor& b, int kernel,
                       int stride) {
  FeatureMap out;
  out.ch = w.shape[0];
  out.h = (in.h + stride - 1) / stride;
  out.w = (in.w + stride - 1) / stride;
  out.data.assign(static_cast<size_t>(out.ch) * out.h * out.w, 0.0);
  const int py = std::max(0, (out.h - 1) * stride + kernel - in.h) / 2;
  const int px = std::max(0, (out.w - 1) * stride + kernel - in.w) / 2;
  for (int oc = 0; oc < out.ch; ++oc) {
    for (int oy = 0; oy < out.h; ++oy) {
      for (int ox = 0; ox < out.w; ++ox) {
        double acc = b.data[static_cast<size_t>(oc)];
        for (int ic = 0; ic < in.ch; ++ic) {
          for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
              const int iy = oy * stride - py + ky;
              const int ix = ox * stride - px + kx;
              if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
              const size_t widx =
                  ((static_cast<size_t>(oc) * in.ch + ic) * kernel + ky) * kernel + kx;
              acc += w.data[widx] * in.at(ic, iy, ix);
            }
          }
        }
        out.at(oc, oy, ox) = std::max(0.0, acc);
      }
    }
  }
  return out;
}

Mat forward_oracle(const ModelParams& params, const std::vector<MelSpectrogram>& batch) {
  const ArchDescriptor& arch = params.arch;
  const auto n = static_cast<Eigen::Index>(batch.size());
  const int gap_dim = arch.convs.back().out_channels;
  Mat gap(n, gap_dim);
  for (Eigen::Index item = 0; item < n; ++item) {
    FeatureMap x;
    x.ch = 1;
    x.h = arch.input_bins;
    x.w = arch.input_frames;
    x.data.resize(static_cast<size_t>(x.h) * x.w);
    for (int y = 0; y < x.h; ++y)
      for (int c = 0; c < x.w; ++c) x.at(0, y, c) = batch[item].values(y, c);
    for (size_t l = 0; l < arch.convs.size(); ++l) {
      const auto& conv = arch.convs[l];
      x = conv_oracle(x, params.find("conv" + std::to_string(l) + ".weight"),
                      params.find("conv" + std::to_string(l) + ".bias"), conv.kernel,
                      conv.stride);
    }
    for (int c = 0; c < gap_dim; ++c) {
      double acc = 0.0;
      for (int y = 0; y < x.h; ++y)
        for (int cc = 0; cc < x.w; ++cc) acc += x.at(c, y, cc);
      gap(item, c) = acc / (x.h * x.w);
    }
  }

  auto affine = [](const Mat& in, const Tensor& w, const Tensor& b) {
    Mat out(in.rows(), w.shape[0]);
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      for (int o = 0; o < w.shape[0]; ++o) {
        double acc = b.data[static_cast<size_t>(o)];
        for (Eigen::Index i = 0; i < in.cols(); ++i)
          acc += w.data[static_cast<size_t>(o) * in.cols() + i] * in(r, i);
        out(r, o) = acc;
      }
    }
    return out;
  };
  if (!arch.projector)
    return affine(gap, params.find("proj.linear.weight"), params.find("proj.linear.bias"));
  Mat hidden = affine(gap, params.find("proj.fc1.weight"), params.find("proj.fc1.bias"));
  hidden = hidden.cwiseMax(0.0);
  return affine(hidden, params.find("proj.fc2.weight"), params.find("proj.fc2.bias"));
}

// Gives every bias a nonzero value so ReLU pre-activations are generic.
void randomize_biases(ModelParams& params, twins::Rng& rng) {
  for (Tensor& t : params.tensors)
    if (t.shape.size() == 1)
      for (double& v : t.data) v = rng.uniform(0.05, 0.4);
}

}  // namespace

TEST_CASE("init_model is deterministic with zero biases and bounded weights") {
  const ArchDescriptor arch = small_arch(true);
  const ModelParams a = twins::init_model(arch, 5);
  const ModelParams b = twins::init_model(arch, 5);
  const ModelParams c = twins::init_model(arch, 6);
  REQUIRE(a.tensors.size() == b.tensors.size());
  bool any_diff = false;
  for (size_t i = 0; i < a.tensors.size(); ++i) {
    CHECK(a.tensors[i].name == b.tensors[i].name);
    CHECK(a.tensors[i].data == b.tensors[i].data);
    if (a.tensors[i].data != c.tensors[i].data) any_diff = true;
  }
  CHECK(any_diff);

  for (const Tensor& t : a.tensors) {
    if (t.shape.size() == 1) {
      for (double v : t.data) CHECK(v == 0.0);
    } else {
      int64_t fan_in = 1;
      for (size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double v : t.data) CHECK(std::fabs(v) <= bound);
    }
  }
}

TEST_CASE("the default descriptor yields a 2048-dim latent") {
  const ArchDescriptor arch;  // library defaults
  CHECK(arch.latent_dim == 2048);
  CHECK(arch.projector_hidden == 2048);
  CHECK(arch.input_bins == 513);
  CHECK(arch.input_frames == 32);
  REQUIRE(arch.convs.size() == 3);
  CHECK(arch.convs[2].out_channels == 64);
  // Expected tensor set: 3 convs + 2 projector layers, weight + bias each.
  const ModelParams p = twins::init_model(arch, 1);
  CHECK(p.tensors.size() == 10);
}

TEST_CASE("forward produces n x latent and validates shapes") {
  const ArchDescriptor arch = small_arch(true);
  const ModelParams params = twins::init_model(arch, 2);
  twins::Rng rng(7);
  const auto batch = random_batch(rng, arch, 3);
  const Mat z = twins::model_forward(params, batch);
  CHECK(z.rows() == 3);
  CHECK(z.cols() == 3);

  CHECK_THROWS_AS(twins::model_forward(params, {}), twins::ShapeError);
  auto wrong = batch;
  wrong[1].values.resize(7, 5);
  CHECK_THROWS_AS(twins::model_forward(params, wrong), twins::ShapeError);

  // A ReLU can clamp a poisoned activation back to zero, so inject the
  // non-finite value after the last one.
  ModelParams poisoned = params;
  poisoned.find("proj.fc2.bias").data[0] = std::nan("");
  CHECK_THROWS_AS(twins::model_forward(poisoned, batch), twins::NumericError);
}

TEST_CASE("latent width follows the descriptor") {
  ArchDescriptor arch = small_arch(false);
  arch.latent_dim = 64;
  const ModelParams params = twins::init_model(arch, 3);
  twins::Rng rng(8);
  const Mat z = twins::model_forward(params, random_batch(rng, arch, 2));
  CHECK(z.cols() == 64);
}

TEST_CASE("forward matches a direct-convolution oracle") {
  twins::Rng rng(9);
  for (const bool projector : {false, true}) {
    ModelParams params = twins::init_model(small_arch(projector), 11);
    randomize_biases(params, rng);
    const auto batch = random_batch(rng, params.arch, 3);
    twins::ForwardCache cache;
    const Mat got = twins::model_forward(params, batch, &cache);
    const Mat want = forward_oracle(params, batch);
    REQUIRE(got.rows() == want.rows());
    REQUIRE(got.cols() == want.cols());
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12);

    // The cached final conv output is what the oracle computes layer by layer.
    FeatureMap x = cache.items[0].conv_inputs[0];
    for (size_t l = 0; l < params.arch.convs.size(); ++l)
      x = conv_oracle(x, params.find("conv" + std::to_string(l) + ".weight"),
                      params.find("conv" + std::to_string(l) + ".bias"),
                      params.arch.convs[l].kernel, params.arch.convs[l].stride);
    REQUIRE(cache.items[0].final_out.data.size() == x.data.size());
    for (size_t i = 0; i < x.data.size(); ++i)
      CHECK(cache.items[0].final_out.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("single-cell kernel-1 network is hand-checkable") {
  ArchDescriptor arch;
  arch.input_bins = 2;
  arch.input_frames = 2;
  arch.convs = {{1, 1, 1}};
  arch.projector = false;
  arch.latent_dim = 3;
  ModelParams params = twins::init_model(arch, 0);
  params.find("conv0.weight").data = {0.5};
  params.find("conv0.bias").data = {0.25};
  params.find("proj.linear.weight").data = {2.0, -1.0, 0.5};
  params.find("proj.linear.bias").data = {0.1, 0.2, 0.3};

  MelSpectrogram m;
  m.values.resize(2, 2);
  m.values << 1.0, 2.0, -3.0, 4.0;
  const Mat z = twins::model_forward(params, {m});
  // relu(0.5 x + 0.25) = {0.75, 1.25, 0, 2.25}; gap = 4.25 / 4 = 1.0625
  CHECK(z(0, 0) == doctest::Approx(2.0 * 1.0625 + 0.1).epsilon(1e-15));
  CHECK(z(0, 1) == doctest::Approx(-1.0 * 1.0625 + 0.2).epsilon(1e-15));
  CHECK(z(0, 2) == doctest::Approx(0.5 * 1.0625 + 0.3).epsilon(1e-15));
}

TEST_CASE("backward matches finite differences on a generic draw") {
  // Pick the first seed whose ReLU pre-activations sit safely away from zero,
  // so the central differences below never cross a kink.
  const ArchDescriptor arch = small_arch(true);
  twins::Rng bias_rng(17);
  ModelParams params;
  twins::ForwardCache cache;
  std::vector<MelSpectrogram> batch;
  Mat upstream;
  bool found = false;
  for (uint64_t seed = 1; seed <= 400 && !found; ++seed) {
    params = twins::init_model(arch, seed);
    randomize_biases(params, bias_rng);
    twins::Rng rng(seed + 100);
    batch = random_batch(rng, arch, 2);
    const Mat z = twins::model_forward(params, batch, &cache);
    // Margin of 0.02 vs h = 1e-3: no single +-h parameter step can move any
    // pre-activation far enough to cross a ReLU kink mid-difference.
    if (cache.min_preact_abs > 0.02) {
      upstream = testutil::random_mat(rng, z.rows(), z.cols(), -1.0, 1.0);
      found = true;
    }
  }
  REQUIRE(found);

  const twins::GradientSet analytic = twins::model_backward(params, cache, upstream);

  const double h = 1e-3;
  auto loss_at = [&](const ModelParams& p) {
    const Mat z = twins::model_forward(p, batch);
    return (z.array() * upstream.array()).sum();
  };
  double worst_abs = 0.0, fd_scale = 0.0;
  for (size_t t = 0; t < params.tensors.size(); ++t) {
    for (size_t k = 0; k < params.tensors[t].data.size(); ++k) {
      ModelParams p = params;
      p.tensors[t].data[k] += h;
      const double up = loss_at(p);
      p.tensors[t].data[k] -= 2 * h;
      const double down = loss_at(p);
      const double fd = (up - down) / (2 * h);
      worst_abs = std::max(worst_abs, std::fabs(analytic.tensors[t].data[k] - fd));
      fd_scale = std::max(fd_scale, std::fabs(fd));
    }
  }
  CHECK(worst_abs / std::max(fd_scale, 1e-12) < 1e-4);
}

TEST_CASE("backward refuses a cache from different parameters") {
  const ArchDescriptor arch = small_arch(false);
  ModelParams params = twins::init_model(arch, 4);
  twins::Rng rng(10);
  const auto batch = random_batch(rng, arch, 2);
  twins::ForwardCache cache;
  const Mat z = twins::model_forward(params, batch, &cache);
  const Mat upstream = Mat::Ones(z.rows(), z.cols());
  CHECK_NOTHROW(twins::model_backward(params, cache, upstream));

  params.find("conv0.bias").data[0] += 1e-9;
  CHECK_THROWS_AS(twins::model_backward(params, cache, upstream), twins::CacheError);
  params.find("conv0.bias").data[0] -= 1e-9;

  CHECK_THROWS_AS(twins::model_backward(params, cache, Mat::Ones(z.rows(), z.cols() + 1)),
                  twins::ShapeError);
  CHECK_THROWS_AS(twins::model_backward(params, twins::ForwardCache{}, upstream),
                  twins::CacheError);
}

TEST_CASE("params_stamp reacts to any parameter change") {
  const ModelParams a = twins::init_model(small_arch(true), 5);
  ModelParams b = a;
  CHECK(twins::params_stamp(a) == twins::params_stamp(b));
  b.tensors.back().data.back() = std::nextafter(b.tensors.back().data.back(), 1e9);
  CHECK(twins::params_stamp(a) != twins::params_stamp(b));
}

TEST_CASE("sgd applies the closed-form update") {
  twins::Rng rng(23);
  ModelParams params = twins::init_model(small_arch(false), 6);
  const ModelParams before = params;
  std::vector<Tensor> grads;
  for (const Tensor& t : params.tensors) {
    Tensor g = t;
    for (double& v : g.data) v = rng.uniform(-1.0, 1.0);
    grads.push_back(std::move(g));
  }
  twins::OptimizerOptions opt;
  opt.kind = twins::OptimizerKind::kSgd;
  opt.lr = 0.01;
  twins::OptimizerState state = twins::init_optimizer_state(opt, params.tensors);
  twins::optimizer_step(params.tensors, grads, state, opt);
  CHECK(state.step == 1);
  for (size_t t = 0; t < params.tensors.size(); ++t)
    for (size_t k = 0; k < params.tensors[t].data.size(); ++k)
      CHECK(params.tensors[t].data[k] ==
            before.tensors[t].data[k] - 0.01 * grads[t].data[k]);
}

TEST_CASE("adam's first step has magnitude close to lr") {
  for (const double g : {1e-3, 1.0, 1e3}) {
    for (const double sign : {1.0, -1.0}) {
      std::vector<Tensor> params{{"p", {2}, {0.0, 0.0}}};
      const std::vector<Tensor> grads{{"p", {2}, {sign * g, 0.0}}};
      twins::OptimizerOptions opt;  // adam, lr 1e-3
      twins::OptimizerState state = twins::init_optimizer_state(opt, params);
      twins::optimizer_step(params, grads, state, opt);
      const double delta = params[0].data[0];
      CHECK(std::fabs(delta) <= opt.lr);
      CHECK(std::fabs(delta) >= opt.lr * (1.0 - 1e-4));
      CHECK(delta * sign < 0.0);  // moves against the gradient
      CHECK(params[0].data[1] == 0.0);  // zero gradient, zero movement
    }
  }
}

TEST_CASE("gradient clipping rescales only above the threshold") {
  std::vector<Tensor> grads{{"a", {3}, {12.0, 16.0, 0.0}}};  // norm 20
  const double norm = twins::clip_gradients(grads, 10.0);
  CHECK(norm == doctest::Approx(20.0).epsilon(1e-15));
  double after = 0.0;
  for (double v : grads[0].data) after += v * v;
  CHECK(std::sqrt(after) == doctest::Approx(10.0).epsilon(1e-12));

  std::vector<Tensor> small{{"a", {2}, {3.0, 4.0}}};  // norm 5
  CHECK(twins::clip_gradients(small, 10.0) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(small[0].data[0] == 3.0);
  CHECK(small[0].data[1] == 4.0);

  std::vector<Tensor> disabled{{"a", {2}, {30.0, 40.0}}};
  CHECK(twins::clip_gradients(disabled, 0.0) == doctest::Approx(50.0).epsilon(1e-15));
  CHECK(disabled[0].data[0] == 30.0);
}

TEST_CASE("optimizer_step rejects incongruent or non-finite gradients") {
  ModelParams params = twins::init_model(small_arch(false), 8);
  const ModelParams before = params;
  twins::OptimizerOptions opt;
  twins::OptimizerState state = twins::init_optimizer_state(opt, params.tensors);

  std::vector<Tensor> wrong_count(params.tensors.begin(), params.tensors.end() - 1);
  CHECK_THROWS_AS(twins::optimizer_step(params.tensors, wrong_count, state, opt),
                  twins::ShapeError);

  std::vector<Tensor> wrong_shape = params.tensors;
  wrong_shape[0].shape[0] += 1;
  CHECK_THROWS_AS(twins::optimizer_step(params.tensors, wrong_shape, state, opt),
                  twins::ShapeError);

  std::vector<Tensor> nan_grads = params.tensors;
  nan_grads[1].data[0] = std::nan("");
  CHECK_THROWS_AS(twins::optimizer_step(params.tensors, nan_grads, state, opt),
                  twins::NumericError);
  CHECK(state.step == 0);
  for (size_t t = 0; t < params.tensors.size(); ++t)
    CHECK(params.tensors[t].data == before.tensors[t].data);
}

TEST_CASE("checkpoints round-trip bitwise") {
  testutil::TempDir tmp("ckpt");
  const ArchDescriptor arch = small_arch(true);
  twins::Checkpoint ckpt;
  ckpt.params = twins::init_model(arch, 12);
  ckpt.config = {{"kind", "pretrain"}, {"variant", "bt"}, {"lambda", 0.005}};
  ckpt.epochs_completed = 3;
  ckpt.loss_history = {{0.5, 0.25, 0.005, 0.50125}, {0.25, 0.125, 0.005, 0.250625}};
  twins::OptimizerOptions opt;
  ckpt.opt_state = twins::init_optimizer_state(opt, ckpt.params.tensors);
  twins::Rng rng(13);
  for (int step = 0; step < 3; ++step) {
    std::vector<Tensor> grads;
    for (const Tensor& t : ckpt.params.tensors) {
      Tensor g = t;
      for (double& v : g.data) v = rng.normal();
      grads.push_back(std::move(g));
    }
    twins::optimizer_step(ckpt.params.tensors, grads, ckpt.opt_state, opt);
  }
  Tensor head{"head_weight", {4, 3}, std::vector<double>(12, 0.5)};
  ckpt.extra.push_back(head);

  const auto path = tmp.path / "run.ckpt";
  twins::save_checkpoint(ckpt, path);
  const twins::Checkpoint back = twins::load_checkpoint(path);

  CHECK(back.config.at("kind") == "pretrain");
  CHECK(back.config.at("lambda").get<double>() == 0.005);
  CHECK(back.epochs_completed == 3);
  CHECK(back.opt_state.step == 3);
  REQUIRE(back.loss_history.size() == 2);
  CHECK(back.loss_history[1].total == 0.250625);
  REQUIRE(back.params.tensors.size() == ckpt.params.tensors.size());
  for (size_t i = 0; i < ckpt.params.tensors.size(); ++i) {
    CHECK(back.params.tensors[i].name == ckpt.params.tensors[i].name);
    CHECK(back.params.tensors[i].shape == ckpt.params.tensors[i].shape);
    CHECK(back.params.tensors[i].data == ckpt.params.tensors[i].data);
  }
  for (size_t i = 0; i < ckpt.opt_state.m.size(); ++i) {
    CHECK(back.opt_state.m[i].data == ckpt.opt_state.m[i].data);
    CHECK(back.opt_state.v[i].data == ckpt.opt_state.v[i].data);
  }
  REQUIRE(back.extra.size() == 1);
  CHECK(back.extra[0].name == "head_weight");
  CHECK(back.extra[0].data == head.data);

  // A reloaded model computes identical latents.
  twins::Rng batch_rng(14);
  const auto batch = random_batch(batch_rng, arch, 2);
  const Mat za = twins::model_forward(ckpt.params, batch);
  const Mat zb = twins::model_forward(back.params, batch);
  CHECK((za - zb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("corrupt checkpoints are detected") {
  testutil::TempDir tmp("ckptbad");
  twins::Checkpoint ckpt;
  ckpt.params = twins::init_model(small_arch(false), 1);
  const auto path = tmp.path / "ok.ckpt";
  twins::save_checkpoint(ckpt, path);
  auto bytes = testutil::read_bytes(path);

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  testutil::write_bytes(tmp.path / "trunc.ckpt", truncated);
  CHECK_THROWS_AS(twins::load_checkpoint(tmp.path / "trunc.ckpt"), twins::FormatError);

  auto bad_magic = bytes;
  bad_magic[0] = 'Z';
  testutil::write_bytes(tmp.path / "magic.ckpt", bad_magic);
  CHECK_THROWS_AS(twins::load_checkpoint(tmp.path / "magic.ckpt"), twins::FormatError);

  auto bad_version = bytes;
  bad_version[8] = 9;  // version u32 sits after the 8-byte magic
  testutil::write_bytes(tmp.path / "ver.ckpt", bad_version);
  try {
    twins::load_checkpoint(tmp.path / "ver.ckpt");
    FAIL("expected VersionError");
  } catch (const twins::VersionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("9") != std::string::npos);
    CHECK(msg.find("1") != std::string::npos);
  }

  CHECK_THROWS_AS(twins::load_checkpoint(tmp.path / "missing.ckpt"), twins::FormatError);
}

TEST_CASE("arch descriptors serialize and validate") {
  const ArchDescriptor arch = small_arch(true);
  const auto j = arch.to_json();
  const ArchDescriptor back = ArchDescriptor::from_json(j);
  CHECK(back.to_json() == j);

  ArchDescriptor bad = arch;
  bad.convs[0].kernel = 4;  // even kernel cannot be same-padded symmetrically
  CHECK_THROWS_AS(bad.validate(), twins::ConfigError);
  bad = arch;
  bad.latent_dim = 1;
  CHECK_THROWS_AS(bad.validate(), twins::ConfigError);
  bad = arch;
  bad.convs.clear();
  CHECK_THROWS_AS(bad.validate(), twins::ConfigError);

  auto mangled = j;
  mangled.erase("latent_dim");
  CHECK_THROWS_AS(ArchDescriptor::from_json(mangled), twins::FormatError);
}
