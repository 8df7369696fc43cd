#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "twins/dsp.hpp"
#include "twins/error.hpp"

namespace twins {

struct ConvLayerSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 2;
};

// Declarative encoder shape: a stack of same-padded strided convolutions
// with ReLU, global average pooling over the remaining grid, then an
// affine projection to the latent width (two layers with a ReLU between
// when `projector` is set, a single layer otherwise).
struct ArchDescriptor {
  int input_bins = 513;
  int input_frames = 32;
  std::vector<ConvLayerSpec> convs = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}};
  bool projector = true;
  int projector_hidden = 2048;
  int latent_dim = 2048;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static ArchDescriptor from_json(const nlohmann::json& j);
};

// Named dense array, row-major. The unit of parameter and gradient plumbing:
// optimizers and checkpoints see models as flat lists of these.
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;

  int64_t size() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

struct ModelParams {
  ArchDescriptor arch;
  std::vector<Tensor> tensors;

  int64_t param_count() const;
  Tensor& find(const std::string& name);              // ShapeError if absent
  const Tensor& find(const std::string& name) const;
};

// Gradients congruent with ModelParams::tensors (same names, same shapes).
struct GradientSet {
  std::vector<Tensor> tensors;
};

// Fan-in scaled uniform init for weights, zeros for biases. The same
// (descriptor, seed) pair always produces the same parameters.
ModelParams init_model(const ArchDescriptor& arch, uint64_t seed);

struct FeatureMap {
  int ch = 0, h = 0, w = 0;
  std::vector<double> data;  // [c][y][x] row-major

  double& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * h + y) * w + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * h + y) * w + x];
  }
};

// Activations recorded by forward() for use by backward(). `stamp` ties the
// cache to the exact parameters it was computed from; backward() refuses a
// cache built from different parameters or a different batch shape.
struct ForwardCache {
  struct ItemCache {
    std::vector<FeatureMap> conv_inputs;  // input to each conv layer
    FeatureMap final_out;                 // post-ReLU output of the last conv
  };
  std::vector<ItemCache> items;
  Mat gap;       // n x last_channels
  Mat fc1_pre;   // n x hidden (two-layer projector only)
  Mat fc1_post;
  uint64_t stamp = 0;
  // Smallest |pre-activation| seen anywhere a ReLU is applied; finite-
  // difference checks use it to reject parameter draws near a kink.
  double min_preact_abs = std::numeric_limits<double>::infinity();
};

uint64_t params_stamp(const ModelParams& params);

// Latent batch (n x latent_dim) for a batch of spectrograms. Populates
// `cache` when given one. Throws ShapeError on inputs that do not match the
// descriptor and NumericError if any activation goes non-finite.
Mat model_forward(const ModelParams& params, const std::vector<MelSpectrogram>& batch,
                  ForwardCache* cache = nullptr);

// Parameter gradients for d(loss)/d(latent) = `upstream` (n x latent_dim).
// `cache` must come from a model_forward call with these exact parameters.
GradientSet model_backward(const ModelParams& params, const ForwardCache& cache,
                           const Mat& upstream);

}  // namespace twins
