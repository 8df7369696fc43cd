#include "twins/model.hpp"

#include <cmath>

#include "twins/binary_io.hpp"
#include "twins/rng.hpp"

namespace twins {

namespace {

using RowMajorMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

int out_dim(int in, int stride) { return (in + stride - 1) / stride; }

int pad_begin(int in, int kernel, int stride) {
  const int out = out_dim(in, stride);
  const int total = std::max(0, (out - 1) * stride + kernel - in);
  return total / 2;
}

// Patch matrix for a same-padded convolution: (ic * k * k) x (out_h * out_w),
// out-of-range taps read as zero.
Mat im2col(const FeatureMap& in, int kernel, int stride) {
  const int oh = out_dim(in.h, stride);
  const int ow = out_dim(in.w, stride);
  const int py = pad_begin(in.h, kernel, stride);
  const int px = pad_begin(in.w, kernel, stride);
  Mat cols = Mat::Zero(static_cast<Eigen::Index>(in.ch) * kernel * kernel,
                       static_cast<Eigen::Index>(oh) * ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index p = static_cast<Eigen::Index>(oy) * ow + ox;
      Eigen::Index row = 0;
      for (int c = 0; c < in.ch; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - py + ky;
          for (int kx = 0; kx < kernel; ++kx, ++row) {
            const int ix = ox * stride - px + kx;
            if (iy >= 0 && iy < in.h && ix >= 0 && ix < in.w)
              cols(row, p) = in.at(c, iy, ix);
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-add patch gradients back onto the input grid.
void col2im_add(const Mat& dcols, int kernel, int stride, FeatureMap& din) {
  const int oh = out_dim(din.h, stride);
  const int ow = out_dim(din.w, stride);
  const int py = pad_begin(din.h, kernel, stride);
  const int px = pad_begin(din.w, kernel, stride);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index p = static_cast<Eigen::Index>(oy) * ow + ox;
      Eigen::Index row = 0;
      for (int c = 0; c < din.ch; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - py + ky;
          for (int kx = 0; kx < kernel; ++kx, ++row) {
            const int ix = ox * stride - px + kx;
            if (iy >= 0 && iy < din.h && ix >= 0 && ix < din.w)
              din.at(c, iy, ix) += dcols(row, p);
          }
        }
      }
    }
  }
}

Tensor make_tensor(const std::string& name, std::vector<int> shape) {
  Tensor t;
  t.name = name;
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(t.size()), 0.0);
  return t;
}

struct LayerDims {
  int in_ch, in_h, in_w, out_ch, out_h, out_w;
};

std::vector<LayerDims> conv_dims(const ArchDescriptor& arch) {
  std::vector<LayerDims> dims;
  int ch = 1, h = arch.input_bins, w = arch.input_frames;
  for (const ConvLayerSpec& conv : arch.convs) {
    LayerDims d{ch, h, w, conv.out_channels, out_dim(h, conv.stride), out_dim(w, conv.stride)};
    dims.push_back(d);
    ch = d.out_ch;
    h = d.out_h;
    w = d.out_w;
  }
  return dims;
}

}  // namespace

void ArchDescriptor::validate() const {
  if (input_bins <= 0 || input_frames <= 0)
    throw ConfigError("arch: input dimensions must be positive");
  if (convs.empty()) throw ConfigError("arch: need at least one conv layer");
  for (const ConvLayerSpec& c : convs) {
    if (c.out_channels <= 0) throw ConfigError("arch: conv out_channels must be positive");
    if (c.kernel <= 0 || c.kernel % 2 == 0)
      throw ConfigError("arch: conv kernel must be odd and positive");
    if (c.stride <= 0) throw ConfigError("arch: conv stride must be positive");
  }
  if (latent_dim < 2) throw ConfigError("arch: latent_dim must be >= 2");
  if (projector && projector_hidden <= 0)
    throw ConfigError("arch: projector_hidden must be positive");
}

nlohmann::json ArchDescriptor::to_json() const {
  nlohmann::json j;
  j["input_bins"] = input_bins;
  j["input_frames"] = input_frames;
  j["convs"] = nlohmann::json::array();
  for (const ConvLayerSpec& c : convs)
    j["convs"].push_back({{"out_channels", c.out_channels},
                          {"kernel", c.kernel},
                          {"stride", c.stride}});
  j["projector"] = projector;
  j["projector_hidden"] = projector_hidden;
  j["latent_dim"] = latent_dim;
  return j;
}

ArchDescriptor ArchDescriptor::from_json(const nlohmann::json& j) {
  ArchDescriptor a;
  try {
    a.input_bins = j.at("input_bins").get<int>();
    a.input_frames = j.at("input_frames").get<int>();
    a.convs.clear();
    for (const auto& jc : j.at("convs"))
      a.convs.push_back({jc.at("out_channels").get<int>(), jc.at("kernel").get<int>(),
                         jc.at("stride").get<int>()});
    a.projector = j.at("projector").get<bool>();
    a.projector_hidden = j.at("projector_hidden").get<int>();
    a.latent_dim = j.at("latent_dim").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed arch descriptor: ") + e.what());
  }
  a.validate();
  return a;
}

int64_t ModelParams::param_count() const {
  int64_t n = 0;
  for (const Tensor& t : tensors) n += t.size();
  return n;
}

Tensor& ModelParams::find(const std::string& name) {
  for (Tensor& t : tensors)
    if (t.name == name) return t;
  throw ShapeError("model has no tensor named '" + name + "'");
}

const Tensor& ModelParams::find(const std::string& name) const {
  for (const Tensor& t : tensors)
    if (t.name == name) return t;
  throw ShapeError("model has no tensor named '" + name + "'");
}

ModelParams init_model(const ArchDescriptor& arch, uint64_t seed) {
  arch.validate();
  ModelParams params;
  params.arch = arch;

  const auto dims = conv_dims(arch);
  for (size_t l = 0; l < dims.size(); ++l) {
    const ConvLayerSpec& conv = arch.convs[l];
    const std::string base = "conv" + std::to_string(l);
    params.tensors.push_back(make_tensor(
        base + ".weight", {conv.out_channels, dims[l].in_ch, conv.kernel, conv.kernel}));
    params.tensors.push_back(make_tensor(base + ".bias", {conv.out_channels}));
  }
  const int gap_dim = dims.back().out_ch;
  if (arch.projector) {
    params.tensors.push_back(
        make_tensor("proj.fc1.weight", {arch.projector_hidden, gap_dim}));
    params.tensors.push_back(make_tensor("proj.fc1.bias", {arch.projector_hidden}));
    params.tensors.push_back(
        make_tensor("proj.fc2.weight", {arch.latent_dim, arch.projector_hidden}));
    params.tensors.push_back(make_tensor("proj.fc2.bias", {arch.latent_dim}));
  } else {
    params.tensors.push_back(make_tensor("proj.linear.weight", {arch.latent_dim, gap_dim}));
    params.tensors.push_back(make_tensor("proj.linear.bias", {arch.latent_dim}));
  }

  Rng rng(mix_seed({seed, 0x6d6f64656cULL}));
  for (Tensor& t : params.tensors) {
    if (t.name.ends_with(".bias")) continue;  // biases stay zero
    // fan_in: product of all shape dims except the first (output) one.
    int64_t fan_in = 1;
    for (size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
  }
  return params;
}

uint64_t params_stamp(const ModelParams& params) {
  uint64_t h = io::fnv1a64(params.arch.to_json().dump());
  for (const Tensor& t : params.tensors) {
    h = io::fnv1a64(t.name.data(), t.name.size(), h);
    h = io::fnv1a64(t.shape.data(), t.shape.size() * sizeof(int), h);
    h = io::fnv1a64(t.data.data(), t.data.size() * sizeof(double), h);
  }
  return h;
}

Mat model_forward(const ModelParams& params, const std::vector<MelSpectrogram>& batch,
                  ForwardCache* cache) {
  params.arch.validate();
  if (batch.empty()) throw ShapeError("model_forward: empty batch");
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto dims = conv_dims(params.arch);

  if (cache) {
    *cache = ForwardCache{};
    cache->items.resize(batch.size());
    cache->stamp = params_stamp(params);
  }

  Mat gap(n, dims.back().out_ch);
  for (Eigen::Index item = 0; item < n; ++item) {
    const MelSpectrogram& spec = batch[static_cast<size_t>(item)];
    if (spec.bins() != params.arch.input_bins || spec.frames() != params.arch.input_frames)
      throw ShapeError("model_forward: item " + std::to_string(item) + " is " +
                       std::to_string(spec.bins()) + "x" + std::to_string(spec.frames()) +
                       ", descriptor wants " + std::to_string(params.arch.input_bins) +
                       "x" + std::to_string(params.arch.input_frames));

    FeatureMap x;
    x.ch = 1;
    x.h = spec.bins();
    x.w = spec.frames();
    x.data.resize(spec.values.size());
    for (int y = 0; y < x.h; ++y)
      for (int c = 0; c < x.w; ++c) x.at(0, y, c) = spec.values(y, c);

    for (size_t l = 0; l < dims.size(); ++l) {
      const ConvLayerSpec& conv = params.arch.convs[l];
      const LayerDims& d = dims[l];
      if (cache) cache->items[static_cast<size_t>(item)].conv_inputs.push_back(x);

      const Tensor& w = params.find("conv" + std::to_string(l) + ".weight");
      const Tensor& b = params.find("conv" + std::to_string(l) + ".bias");
      const Eigen::Index k2 = static_cast<Eigen::Index>(d.in_ch) * conv.kernel * conv.kernel;
      ConstRowMajorMap wmap(w.data.data(), d.out_ch, k2);

      const Mat cols = im2col(x, conv.kernel, conv.stride);
      Mat out = wmap * cols;
      for (Eigen::Index c = 0; c < d.out_ch; ++c)
        out.row(c).array() += b.data[static_cast<size_t>(c)];
      if (cache)
        cache->min_preact_abs =
            std::min(cache->min_preact_abs, out.cwiseAbs().minCoeff());
      out = out.cwiseMax(0.0);  // ReLU

      FeatureMap next;
      next.ch = d.out_ch;
      next.h = d.out_h;
      next.w = d.out_w;
      next.data.resize(static_cast<size_t>(d.out_ch) * d.out_h * d.out_w);
      for (int c = 0; c < d.out_ch; ++c)
        for (int p = 0; p < d.out_h * d.out_w; ++p)
          next.data[static_cast<size_t>(c) * d.out_h * d.out_w + static_cast<size_t>(p)] =
              out(c, p);
      x = std::move(next);
    }
    if (cache) cache->items[static_cast<size_t>(item)].final_out = x;

    const double inv_p = 1.0 / (static_cast<double>(x.h) * x.w);
    for (int c = 0; c < x.ch; ++c) {
      double acc = 0.0;
      for (int p = 0; p < x.h * x.w; ++p)
        acc += x.data[static_cast<size_t>(c) * x.h * x.w + static_cast<size_t>(p)];
      gap(item, c) = acc * inv_p;
    }
  }

  Mat latent;
  if (params.arch.projector) {
    const Tensor& w1 = params.find("proj.fc1.weight");
    const Tensor& b1 = params.find("proj.fc1.bias");
    const Tensor& w2 = params.find("proj.fc2.weight");
    const Tensor& b2 = params.find("proj.fc2.bias");
    ConstRowMajorMap w1map(w1.data.data(), params.arch.projector_hidden, gap.cols());
    ConstRowMajorMap w2map(w2.data.data(), params.arch.latent_dim,
                           params.arch.projector_hidden);
    Mat pre = gap * w1map.transpose();
    for (Eigen::Index j = 0; j < pre.cols(); ++j)
      pre.col(j).array() += b1.data[static_cast<size_t>(j)];
    if (cache)
      cache->min_preact_abs =
          std::min(cache->min_preact_abs, pre.cwiseAbs().minCoeff());
    Mat post = pre.cwiseMax(0.0);
    latent = post * w2map.transpose();
    for (Eigen::Index j = 0; j < latent.cols(); ++j)
      latent.col(j).array() += b2.data[static_cast<size_t>(j)];
    if (cache) {
      cache->fc1_pre = std::move(pre);
      cache->fc1_post = std::move(post);
    }
  } else {
    const Tensor& w = params.find("proj.linear.weight");
    const Tensor& b = params.find("proj.linear.bias");
    ConstRowMajorMap wmap(w.data.data(), params.arch.latent_dim, gap.cols());
    latent = gap * wmap.transpose();
    for (Eigen::Index j = 0; j < latent.cols(); ++j)
      latent.col(j).array() += b.data[static_cast<size_t>(j)];
  }
  if (cache) cache->gap = gap;

  if (!latent.allFinite()) throw NumericError("model_forward: non-finite latent");
  return latent;
}

GradientSet model_backward(const ModelParams& params, const ForwardCache& cache,
                           const Mat& upstream) {
  if (cache.stamp != params_stamp(params))
    throw CacheError("model_backward: cache was built from different parameters");
  const auto n = static_cast<Eigen::Index>(cache.items.size());
  if (n == 0) throw CacheError("model_backward: cache is empty");
  if (upstream.rows() != n || upstream.cols() != params.arch.latent_dim)
    throw ShapeError("model_backward: upstream must be " + std::to_string(n) + "x" +
                     std::to_string(params.arch.latent_dim));

  GradientSet grads;
  for (const Tensor& t : params.tensors) grads.tensors.push_back(make_tensor(t.name, t.shape));
  auto grad_of = [&grads](const std::string& name) -> Tensor& {
    for (Tensor& t : grads.tensors)
      if (t.name == name) return t;
    throw ShapeError("no gradient tensor '" + name + "'");
  };

  // Projection backward, producing d(gap).
  Mat d_gap;
  if (params.arch.projector) {
    const Tensor& w1 = params.find("proj.fc1.weight");
    const Tensor& w2 = params.find("proj.fc2.weight");
    ConstRowMajorMap w1map(w1.data.data(), params.arch.projector_hidden, cache.gap.cols());
    ConstRowMajorMap w2map(w2.data.data(), params.arch.latent_dim,
                           params.arch.projector_hidden);

    Mat d_w2 = upstream.transpose() * cache.fc1_post;
    Eigen::VectorXd d_b2 = upstream.colwise().sum();
    Mat d_post = upstream * w2map;
    Mat d_pre = (cache.fc1_pre.array() > 0.0).select(d_post, 0.0);
    Mat d_w1 = d_pre.transpose() * cache.gap;
    Eigen::VectorXd d_b1 = d_pre.colwise().sum();
    d_gap = d_pre * w1map;

    RowMajorMap(grad_of("proj.fc2.weight").data.data(), d_w2.rows(), d_w2.cols()) = d_w2;
    Eigen::Map<Eigen::VectorXd>(grad_of("proj.fc2.bias").data.data(), d_b2.size()) = d_b2;
    RowMajorMap(grad_of("proj.fc1.weight").data.data(), d_w1.rows(), d_w1.cols()) = d_w1;
    Eigen::Map<Eigen::VectorXd>(grad_of("proj.fc1.bias").data.data(), d_b1.size()) = d_b1;
  } else {
    const Tensor& w = params.find("proj.linear.weight");
    ConstRowMajorMap wmap(w.data.data(), params.arch.latent_dim, cache.gap.cols());
    Mat d_w = upstream.transpose() * cache.gap;
    Eigen::VectorXd d_b = upstream.colwise().sum();
    d_gap = upstream * wmap;
    RowMajorMap(grad_of("proj.linear.weight").data.data(), d_w.rows(), d_w.cols()) = d_w;
    Eigen::Map<Eigen::VectorXd>(grad_of("proj.linear.bias").data.data(), d_b.size()) = d_b;
  }

  const auto dims = conv_dims(params.arch);
  for (Eigen::Index item = 0; item < n; ++item) {
    const ForwardCache::ItemCache& ic = cache.items[static_cast<size_t>(item)];
    if (ic.conv_inputs.size() != dims.size())
      throw CacheError("model_backward: cache does not match descriptor depth");

    // GAP backward: spread d_gap uniformly over the final grid, then gate by
    // the final ReLU.
    const FeatureMap& last = ic.final_out;
    const int p_last = last.h * last.w;
    const double inv_p = 1.0 / static_cast<double>(p_last);
    Mat d_out(last.ch, p_last);
    for (int c = 0; c < last.ch; ++c)
      for (int p = 0; p < p_last; ++p)
        d_out(c, p) =
            last.data[static_cast<size_t>(c) * p_last + static_cast<size_t>(p)] > 0.0
                ? d_gap(item, c) * inv_p
                : 0.0;

    for (size_t l = dims.size(); l-- > 0;) {
      const ConvLayerSpec& conv = params.arch.convs[l];
      const LayerDims& d = dims[l];
      const FeatureMap& input = ic.conv_inputs[l];
      const Tensor& w = params.find("conv" + std::to_string(l) + ".weight");
      const Eigen::Index k2 = static_cast<Eigen::Index>(d.in_ch) * conv.kernel * conv.kernel;
      ConstRowMajorMap wmap(w.data.data(), d.out_ch, k2);

      const Mat cols = im2col(input, conv.kernel, conv.stride);
      Tensor& gw = grad_of("conv" + std::to_string(l) + ".weight");
      RowMajorMap gwmap(gw.data.data(), d.out_ch, k2);
      gwmap.noalias() += d_out * cols.transpose();
      Tensor& gb = grad_of("conv" + std::to_string(l) + ".bias");
      for (Eigen::Index c = 0; c < d.out_ch; ++c)
        gb.data[static_cast<size_t>(c)] += d_out.row(c).sum();

      if (l == 0) break;  // input gradients are not needed

      const Mat d_cols = wmap.transpose() * d_out;
      FeatureMap din;
      din.ch = input.ch;
      din.h = input.h;
      din.w = input.w;
      din.data.assign(input.data.size(), 0.0);
      col2im_add(d_cols, conv.kernel, conv.stride, din);

      // The input of layer l is the post-ReLU output of layer l-1.
      const int p_prev = din.h * din.w;
      d_out.resize(din.ch, p_prev);
      for (int c = 0; c < din.ch; ++c)
        for (int p = 0; p < p_prev; ++p)
          d_out(c, p) =
              input.data[static_cast<size_t>(c) * p_prev + static_cast<size_t>(p)] > 0.0
                  ? din.data[static_cast<size_t>(c) * p_prev + static_cast<size_t>(p)]
                  : 0.0;
    }
  }
  return grads;
}

}  // namespace twins
