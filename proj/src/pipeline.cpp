#include "twins/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "twins/binary_io.hpp"

namespace twins {

namespace {

nlohmann::json dsp_to_json(const DspConfig& d) {
  return {{"sample_rate_hz", d.sample_rate_hz},
          {"segment_seconds", d.segment_seconds},
          {"min_segment_fill", d.min_segment_fill},
          {"window_size", d.window_size},
          {"hop_size", d.hop_size},
          {"mel_bins", d.mel_bins},
          {"fmin_hz", d.fmin_hz},
          {"fmax_hz", d.fmax_hz},
          {"log_floor", d.log_floor}};
}

uint64_t file_content_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h = io::fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
  }
  return h;
}

double now_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

Dataset load_dataset(const DatasetManifest& manifest, const DspConfig& dsp,
                     bool require_labels) {
  manifest.validate(require_labels);
  LogMelExtractor extractor(dsp);

  Dataset data;
  data.manifest = manifest;
  data.class_names = manifest.class_names;
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    const ManifestEntry& e = manifest.entries[i];
    const std::filesystem::path path = manifest.base_dir / e.path;
    std::vector<MelSpectrogram> segments;
    if (path.extension() == ".feat") {
      segments = read_feature_file(path);
    } else {
      segments = extractor.process_clip(read_wav(path));
      for (MelSpectrogram& s : segments) quantize_to_f32(s);
    }
    const int label = e.label.empty() ? -1 : manifest.class_index(e.label);
    for (MelSpectrogram& s : segments) {
      DatasetItem item;
      item.features = std::move(s);
      item.label = label;
      item.entry_index = i;
      (e.split == "train" ? data.train : data.test).push_back(std::move(item));
    }
  }
  if (data.train.empty())
    throw DataError("dataset has no usable train items (all clips too short?)");
  return data;
}

FeaturizeResult featurize_manifest(const DatasetManifest& manifest,
                                   const std::filesystem::path& out_dir,
                                   const DspConfig& dsp, bool force) {
  // An empty or test-only manifest is fine here; featurization has no use
  // for the training-split requirements that load_dataset enforces.
  {
    std::set<std::string> seen;
    for (const ManifestEntry& e : manifest.entries) {
      if (e.path.empty()) throw DataError("featurize: entry with empty path");
      if (!seen.insert(e.split + "\n" + e.path).second)
        throw DataError("featurize: duplicate path in split: " + e.path);
    }
  }
  std::filesystem::create_directories(out_dir);
  LogMelExtractor extractor(dsp);
  const std::string dsp_fingerprint =
      io::to_hex(io::fnv1a64(dsp_to_json(dsp).dump()));

  // Previous index, if any, for cache validation.
  FeaturizeResult result;
  result.index_path = out_dir / "features.json";
  nlohmann::json previous;
  if (!force && std::filesystem::exists(result.index_path)) {
    std::ifstream in(result.index_path);
    try {
      in >> previous;
    } catch (const nlohmann::json::exception&) {
      previous = nlohmann::json{};  // unreadable cache is just a miss
    }
    if (previous.value("dsp_fingerprint", std::string{}) != dsp_fingerprint)
      previous = nlohmann::json{};
  }
  auto previous_entry = [&previous](const std::string& split,
                                    const std::string& source) -> nlohmann::json {
    if (!previous.contains("entries")) return {};
    for (const auto& je : previous.at("entries"))
      if (je.value("source", std::string{}) == source &&
          je.value("split", std::string{}) == split)
        return je;
    return {};
  };

  nlohmann::json index;
  index["format"] = "twins_feature_index";
  index["version"] = 1;
  index["dsp"] = dsp_to_json(dsp);
  index["dsp_fingerprint"] = dsp_fingerprint;
  index["entries"] = nlohmann::json::array();

  for (const ManifestEntry& e : manifest.entries) {
    const std::filesystem::path source = manifest.base_dir / e.path;
    try {
      const uint64_t source_hash = file_content_hash(source);
      const std::string feat_name =
          std::filesystem::path(e.path).stem().string() + "_" +
          io::to_hex(io::fnv1a64(e.split + "/" + e.path)).substr(0, 8) + ".feat";
      const std::filesystem::path feat_path = out_dir / feat_name;

      nlohmann::json cached = previous_entry(e.split, e.path);
      int n_segments;
      if (!cached.is_null() && !cached.empty() &&
          cached.value("source_hash", std::string{}) == io::to_hex(source_hash) &&
          cached.value("path", std::string{}) == feat_name &&
          std::filesystem::exists(feat_path)) {
        n_segments = cached.value("segments", 0);
        ++result.reused;
      } else {
        std::vector<MelSpectrogram> segments = extractor.process_clip(read_wav(source));
        write_feature_file(feat_path, segments);
        n_segments = static_cast<int>(segments.size());
        ++result.written;
      }
      index["entries"].push_back({{"path", feat_name},
                                  {"label", e.label},
                                  {"split", e.split},
                                  {"source", e.path},
                                  {"source_hash", io::to_hex(source_hash)},
                                  {"segments", n_segments}});
    } catch (const TwinsError& err) {
      result.failures.push_back(e.path + ": " + err.what());
    }
  }

  std::ofstream out(result.index_path);
  if (!out) throw DataError("cannot write " + result.index_path.string());
  out << index.dump(2) << "\n";
  return result;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw ConfigError("train: lambda must be finite and >= 0");
  if (!(corr.eps >= 0.0)) throw ConfigError("train: eps must be >= 0");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
  arch.validate();
  optimizer.validate();
  policy.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"variant", variant_name(variant)},
          {"lambda", lambda},
          {"eps", corr.eps},
          {"center", corr.center},
          {"reduction", reduction_name(corr.reduction)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"arch", arch.to_json()},
          {"optimizer", optimizer.to_json()},
          {"policy", policy.to_json()},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.lambda = j.at("lambda").get<double>();
    c.corr.eps = j.at("eps").get<double>();
    c.corr.center = j.at("center").get<bool>();
    c.corr.reduction = reduction_from_name(j.at("reduction").get<std::string>());
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.arch = ArchDescriptor::from_json(j.at("arch"));
    c.optimizer = OptimizerOptions::from_json(j.at("optimizer"));
    c.policy = AugmentationPolicy::from_json(j.at("policy"));
    c.seed = j.at("seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

PretrainResult pretrain(const TrainConfig& config, const Dataset& data,
                        std::ostream* log) {
  config.validate();
  if (static_cast<int>(data.train.size()) < config.batch_size)
    throw DataError("train split has " + std::to_string(data.train.size()) +
                    " items, fewer than one batch of " +
                    std::to_string(config.batch_size));

  PretrainResult result;
  result.checkpoint.params = init_model(config.arch, config.seed);
  result.checkpoint.opt_state =
      init_optimizer_state(config.optimizer, result.checkpoint.params.tensors);
  result.checkpoint.config = {{"kind", "pretrain"},
                              {"dataset_id", data.manifest.id},
                              {"train", config.to_json()}};

  std::vector<size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const int steps_per_epoch = static_cast<int>(data.train.size()) / config.batch_size;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed({config.seed, 0x657061ULL, static_cast<uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);

    long double epoch_inv = 0.0L, epoch_red = 0.0L, epoch_total = 0.0L;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const double t0 = now_ms();
      std::vector<MelSpectrogram> batch;
      batch.reserve(static_cast<size_t>(config.batch_size));
      for (int b = 0; b < config.batch_size; ++b)
        batch.push_back(
            data.train[order[static_cast<size_t>(step) * config.batch_size + b]].features);

      try {
        const uint64_t step_seed = mix_seed({config.seed, 0x737465ULL,
                                             static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(step)});
        ViewPair views = make_views(batch, config.policy, step_seed);

        ForwardCache cache_a, cache_b;
        const Mat za = model_forward(result.checkpoint.params, views.a, &cache_a);
        const Mat zb = model_forward(result.checkpoint.params, views.b, &cache_b);
        LatentGradients lg =
            loss_grad(za, zb, config.variant, config.lambda, config.corr);

        GradientSet ga = model_backward(result.checkpoint.params, cache_a, lg.d_za);
        GradientSet gb = model_backward(result.checkpoint.params, cache_b, lg.d_zb);
        for (size_t t = 0; t < ga.tensors.size(); ++t)
          for (size_t k = 0; k < ga.tensors[t].data.size(); ++k)
            ga.tensors[t].data[k] += gb.tensors[t].data[k];

        const double grad_norm =
            clip_gradients(ga.tensors, config.optimizer.grad_clip);
        optimizer_step(result.checkpoint.params.tensors, ga.tensors,
                       result.checkpoint.opt_state, config.optimizer);

        StepLog entry{epoch, step, lg.loss, grad_norm, now_ms() - t0};
        epoch_inv += lg.loss.invariance;
        epoch_red += lg.loss.redundancy;
        epoch_total += lg.loss.total;
        if (log) {
          nlohmann::json jl = {{"epoch", epoch},
                               {"step", step},
                               {"invariance", entry.loss.invariance},
                               {"redundancy", entry.loss.redundancy},
                               {"total", entry.loss.total},
                               {"grad_norm", entry.grad_norm},
                               {"wall_ms", entry.wall_ms}};
          (*log) << jl.dump() << "\n";
        }
        result.steps.push_back(std::move(entry));
      } catch (const NumericError& e) {
        throw NumericError("pretrain diverged at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step) + ": " + e.what());
      }
    }

    LossBreakdown epoch_mean;
    epoch_mean.invariance = static_cast<double>(epoch_inv) / steps_per_epoch;
    epoch_mean.redundancy = static_cast<double>(epoch_red) / steps_per_epoch;
    epoch_mean.lambda = config.lambda;
    epoch_mean.total = static_cast<double>(epoch_total) / steps_per_epoch;
    result.checkpoint.loss_history.push_back(epoch_mean);
    result.checkpoint.epochs_completed = epoch + 1;
  }
  return result;
}

std::string finetune_mode_name(FinetuneMode m) {
  return m == FinetuneMode::kFull ? "full" : "probe";
}

FinetuneMode finetune_mode_from_name(const std::string& name) {
  if (name == "full") return FinetuneMode::kFull;
  if (name == "probe") return FinetuneMode::kProbe;
  throw ConfigError("unknown finetune mode '" + name + "' (want full or probe)");
}

void FinetuneOptions::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("finetune: fraction must be in (0, 1]");
  if (epochs < 1) throw ConfigError("finetune: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");
  optimizer.validate();
}

nlohmann::json FinetuneOptions::to_json() const {
  return {{"mode", finetune_mode_name(mode)},
          {"fraction", fraction},
          {"seed", seed},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"optimizer", optimizer.to_json()},
          {"subsample_mode",
           subsample_mode == SubsampleMode::kNested ? "nested" : "independent"}};
}

FinetuneOptions FinetuneOptions::from_json(const nlohmann::json& j) {
  FinetuneOptions o;
  try {
    o.mode = finetune_mode_from_name(j.at("mode").get<std::string>());
    o.fraction = j.at("fraction").get<double>();
    o.seed = j.at("seed").get<uint64_t>();
    o.epochs = j.at("epochs").get<int>();
    o.batch_size = j.at("batch_size").get<int>();
    o.optimizer = OptimizerOptions::from_json(j.at("optimizer"));
    const auto mode = j.at("subsample_mode").get<std::string>();
    if (mode != "nested" && mode != "independent")
      throw ConfigError("unknown subsample_mode '" + mode + "'");
    o.subsample_mode =
        mode == "nested" ? SubsampleMode::kNested : SubsampleMode::kIndependent;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed finetune options: ") + e.what());
  }
  o.validate();
  return o;
}

namespace {

// Softmax cross-entropy over logits (items x classes). Returns mean loss;
// writes d(loss)/d(logits) if asked.
double softmax_ce(const Mat& logits, const std::vector<int>& labels, Mat* d_logits) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index c = logits.cols();
  Mat probs(n, c);
  long double loss = 0.0L;
  for (Eigen::Index b = 0; b < n; ++b) {
    const double peak = logits.row(b).maxCoeff();
    double denom = 0.0;
    for (Eigen::Index k = 0; k < c; ++k) {
      probs(b, k) = std::exp(logits(b, k) - peak);
      denom += probs(b, k);
    }
    probs.row(b) /= denom;
    const int y = labels[static_cast<size_t>(b)];
    loss += -std::log(std::max(probs(b, y), 1e-300));
  }
  if (d_logits) {
    *d_logits = probs;
    for (Eigen::Index b = 0; b < n; ++b)
      (*d_logits)(b, labels[static_cast<size_t>(b)]) -= 1.0;
    *d_logits /= static_cast<double>(n);
  }
  return static_cast<double>(loss / n);
}

// Entry indices kept by a stratified subsample of the train split.
std::set<size_t> subsampled_entries(const Dataset& data, double fraction, uint64_t seed,
                                    SubsampleMode mode) {
  const DatasetManifest sub = subsample(data.manifest, fraction, seed, mode);
  std::set<std::string> kept_paths;
  for (const ManifestEntry& e : sub.entries)
    if (e.split == "train") kept_paths.insert(e.path);
  std::set<size_t> kept;
  for (size_t i = 0; i < data.manifest.entries.size(); ++i) {
    const ManifestEntry& e = data.manifest.entries[i];
    if (e.split == "train" && kept_paths.count(e.path)) kept.insert(i);
  }
  return kept;
}

FinetuneResult finetune_impl(ModelParams encoder, const Dataset& data,
                             const FinetuneOptions& options) {
  options.validate();
  encoder.arch.validate();
  const int n_classes = static_cast<int>(data.class_names.size());
  if (n_classes < 2) throw DataError("finetune needs at least 2 classes");
  for (const DatasetItem& item : data.train)
    if (item.label < 0) throw DataError("finetune: unlabeled train item");

  FinetuneResult result;
  result.class_names = data.class_names;
  const std::set<size_t> kept =
      subsampled_entries(data, options.fraction, options.seed, options.subsample_mode);
  result.train_entries.assign(kept.begin(), kept.end());

  std::vector<size_t> item_idx;
  for (size_t i = 0; i < data.train.size(); ++i)
    if (kept.count(data.train[i].entry_index)) item_idx.push_back(i);
  if (item_idx.empty()) throw SubsampleError("subsample left no train items");

  // Linear head, fan-in uniform init.
  const int m = encoder.arch.latent_dim;
  result.head_weight.name = "head.weight";
  result.head_weight.shape = {n_classes, m};
  result.head_weight.data.resize(static_cast<size_t>(n_classes) * m);
  result.head_bias.name = "head.bias";
  result.head_bias.shape = {n_classes};
  result.head_bias.data.assign(static_cast<size_t>(n_classes), 0.0);
  {
    Rng rng(mix_seed({options.seed, 0x68656164ULL}));
    const double bound = 1.0 / std::sqrt(static_cast<double>(m));
    for (double& v : result.head_weight.data) v = rng.uniform(-bound, bound);
  }

  const bool full = options.mode == FinetuneMode::kFull;
  std::vector<Tensor> trainable;
  if (full) trainable = encoder.tensors;
  trainable.push_back(result.head_weight);
  trainable.push_back(result.head_bias);
  OptimizerState opt_state = init_optimizer_state(options.optimizer, trainable);

  auto head_w = [&trainable]() -> Tensor& { return trainable[trainable.size() - 2]; };
  auto head_b = [&trainable]() -> Tensor& { return trainable.back(); };

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed({options.seed, 0x6674ULL, static_cast<uint64_t>(epoch)}));
    shuffle_rng.shuffle(item_idx);

    long double epoch_loss = 0.0L;
    int n_batches = 0;
    for (size_t start = 0; start < item_idx.size(); start += options.batch_size) {
      const size_t stop = std::min(item_idx.size(), start + options.batch_size);
      std::vector<MelSpectrogram> batch;
      std::vector<int> labels;
      for (size_t i = start; i < stop; ++i) {
        batch.push_back(data.train[item_idx[i]].features);
        labels.push_back(data.train[item_idx[i]].label);
      }

      if (full) encoder.tensors.assign(trainable.begin(), trainable.end() - 2);

      ForwardCache cache;
      const Mat latents = model_forward(encoder, batch, full ? &cache : nullptr);

      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>
          wmap(head_w().data.data(), n_classes, m);
      Mat logits = latents * wmap.transpose();
      for (Eigen::Index k = 0; k < n_classes; ++k)
        logits.col(k).array() += head_b().data[static_cast<size_t>(k)];

      Mat d_logits;
      const double ce = softmax_ce(logits, labels, &d_logits);
      if (!std::isfinite(ce))
        throw NumericError("finetune diverged at epoch " + std::to_string(epoch));
      epoch_loss += ce;
      ++n_batches;

      std::vector<Tensor> grads;
      if (full) {
        const Mat d_latent = d_logits * wmap;
        GradientSet gs = model_backward(encoder, cache, d_latent);
        grads = std::move(gs.tensors);
      }
      Tensor gw;
      gw.name = "head.weight";
      gw.shape = {n_classes, m};
      gw.data.resize(static_cast<size_t>(n_classes) * m);
      Mat d_w = d_logits.transpose() * latents;
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          gw.data.data(), n_classes, m) = d_w;
      Tensor gb;
      gb.name = "head.bias";
      gb.shape = {n_classes};
      gb.data.resize(static_cast<size_t>(n_classes));
      Eigen::Map<Eigen::VectorXd>(gb.data.data(), n_classes) =
          d_logits.colwise().sum().transpose();
      grads.push_back(std::move(gw));
      grads.push_back(std::move(gb));

      clip_gradients(grads, options.optimizer.grad_clip);
      optimizer_step(trainable, grads, opt_state, options.optimizer);
    }
    result.epoch_ce.push_back(n_batches > 0 ? static_cast<double>(epoch_loss) / n_batches
                                            : 0.0);
  }

  if (full) encoder.tensors.assign(trainable.begin(), trainable.end() - 2);
  result.head_weight = head_w();
  result.head_bias = head_b();
  result.encoder = std::move(encoder);
  return result;
}

}  // namespace

FinetuneResult finetune(const ModelParams& encoder, const Dataset& data,
                        const FinetuneOptions& options) {
  return finetune_impl(encoder, data, options);
}

FinetuneResult scratch_baseline(const ArchDescriptor& arch, const Dataset& data,
                                const FinetuneOptions& options) {
  ModelParams fresh = init_model(arch, mix_seed({options.seed, 0x73637261ULL}));
  return finetune_impl(std::move(fresh), data, options);
}

double top1_accuracy(const ModelParams& encoder, const Tensor& head_weight,
                     const Tensor& head_bias, const std::vector<DatasetItem>& items,
                     int batch_size) {
  if (items.empty()) throw DataError("top1_accuracy: no items");
  if (batch_size < 1) throw InvalidInputError("top1_accuracy: batch_size must be >= 1");
  const int n_classes = head_weight.shape.empty() ? 0 : head_weight.shape[0];
  const int m = encoder.arch.latent_dim;
  if (head_weight.shape.size() != 2 || head_weight.shape[1] != m ||
      head_bias.size() != n_classes)
    throw ShapeError("top1_accuracy: head does not match encoder latent width");

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      wmap(head_weight.data.data(), n_classes, m);

  int64_t correct = 0;
  for (size_t start = 0; start < items.size(); start += batch_size) {
    const size_t stop = std::min(items.size(), start + static_cast<size_t>(batch_size));
    std::vector<MelSpectrogram> batch;
    for (size_t i = start; i < stop; ++i) {
      if (items[i].label < 0) throw DataError("top1_accuracy: unlabeled item");
      batch.push_back(items[i].features);
    }
    const Mat latents = model_forward(encoder, batch);
    Mat logits = latents * wmap.transpose();
    for (Eigen::Index k = 0; k < n_classes; ++k)
      logits.col(k).array() += head_bias.data[static_cast<size_t>(k)];

    for (Eigen::Index b = 0; b < logits.rows(); ++b) {
      int best = 0;
      for (int k = 1; k < n_classes; ++k)
        if (logits(b, k) > logits(b, best)) best = k;  // ties keep the lowest index
      if (best == items[start + static_cast<size_t>(b)].label) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(items.size());
}

}  // namespace twins
