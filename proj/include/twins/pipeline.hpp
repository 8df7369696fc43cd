#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "twins/augment.hpp"
#include "twins/checkpoint.hpp"
#include "twins/manifest.hpp"
#include "twins/model.hpp"
#include "twins/objective.hpp"
#include "twins/optimizer.hpp"

namespace twins {

// One loadable training item: a single log-mel segment. Clips longer than
// one segment expand to several items sharing an entry_index.
struct DatasetItem {
  MelSpectrogram features;
  int label = -1;  // -1 when unlabeled
  size_t entry_index = 0;
};

struct Dataset {
  std::vector<DatasetItem> train;
  std::vector<DatasetItem> test;
  std::vector<std::string> class_names;
  DatasetManifest manifest;
};

// Loads every manifest entry, extracting features from audio (or reading
// .feat files directly) and quantizing through float32 either way, so the
// numbers do not depend on which route produced them.
Dataset load_dataset(const DatasetManifest& manifest, const DspConfig& dsp,
                     bool require_labels);

struct FeaturizeResult {
  std::filesystem::path index_path;
  int written = 0;
  int reused = 0;
  std::vector<std::string> failures;  // "path: reason", one per bad entry
};

// Extracts features for every manifest entry into out_dir (one .feat per
// clip) and writes an index JSON that later commands accept as a manifest.
// A second run with unchanged sources and config reuses the existing files
// (validated by a content hash) and rewrites an identical index. Entries
// that fail to decode are reported, not fatal; anything already featurized
// passes through.
FeaturizeResult featurize_manifest(const DatasetManifest& manifest,
                                   const std::filesystem::path& out_dir,
                                   const DspConfig& dsp, bool force = false);

struct TrainConfig {
  Variant variant = Variant::kBT;
  double lambda = 0.005;
  CorrelationOptions corr;  // eps, center, reduction
  int epochs = 50;
  int batch_size = 64;
  ArchDescriptor arch;
  OptimizerOptions optimizer;
  AugmentationPolicy policy = AugmentationPolicy::default_policy(42);
  uint64_t seed = 42;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct StepLog {
  int epoch = 0;
  int step = 0;
  LossBreakdown loss;
  double grad_norm = 0.0;
  double wall_ms = 0.0;  // informational only; excluded from determinism
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> steps;
};

// Two-view self-supervised pretraining over the train split. Batches are
// drawn without replacement each epoch; a trailing batch smaller than
// batch_size is dropped. Identical (config, dataset) runs produce identical
// checkpoints; `log` (JSON lines, one per step) is the only place wall-clock
// time appears. Divergence raises NumericError naming the epoch and step.
PretrainResult pretrain(const TrainConfig& config, const Dataset& data,
                        std::ostream* log = nullptr);

enum class FinetuneMode { kFull, kProbe };

std::string finetune_mode_name(FinetuneMode m);
FinetuneMode finetune_mode_from_name(const std::string& name);  // ConfigError

struct FinetuneOptions {
  FinetuneMode mode = FinetuneMode::kFull;
  double fraction = 1.0;
  uint64_t seed = 1;
  int epochs = 20;
  int batch_size = 32;
  OptimizerOptions optimizer;
  SubsampleMode subsample_mode = SubsampleMode::kIndependent;

  void validate() const;
  nlohmann::json to_json() const;
  static FinetuneOptions from_json(const nlohmann::json& j);
};

struct FinetuneResult {
  ModelParams encoder;
  Tensor head_weight;  // [classes, latent_dim]
  Tensor head_bias;    // [classes]
  std::vector<std::string> class_names;
  std::vector<size_t> train_entries;  // manifest entry indices actually used
  std::vector<double> epoch_ce;       // mean cross-entropy per epoch
};

// Supervised training of a linear head on the encoder's latents over a
// stratified fraction of the labeled train split. kFull also updates the
// encoder; kProbe leaves it bitwise untouched. Unlike pretraining, trailing
// partial batches are kept (small fractions may not fill one batch).
FinetuneResult finetune(const ModelParams& encoder, const Dataset& data,
                        const FinetuneOptions& options);

// The identical protocol applied to a freshly initialized encoder. The
// subsample seed matches finetune's, so both see the same training subset.
FinetuneResult scratch_baseline(const ArchDescriptor& arch, const Dataset& data,
                                const FinetuneOptions& options);

// Percentage (0..100) of correctly classified test items; argmax ties
// resolve to the lowest class index. Items must all be labeled.
double top1_accuracy(const ModelParams& encoder, const Tensor& head_weight,
                     const Tensor& head_bias, const std::vector<DatasetItem>& items,
                     int batch_size = 64);

}  // namespace twins
