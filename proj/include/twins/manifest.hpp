#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "twins/dsp.hpp"
#include "twins/error.hpp"

namespace twins {

struct ManifestEntry {
  std::string path;   // audio file or feature file, relative to the manifest
  std::string label;  // empty for unlabeled upstream data
  std::string split;  // "train" or "test"
};

// Listing of a dataset: one row per source clip with label and split.
// Loadable from CSV (header path,label,split) or the JSON index written by
// featurization. Paths are resolved relative to the manifest's directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;  // sorted unique labels
  std::filesystem::path base_dir;
  std::string id;  // stem of the manifest file, used in reports

  static DatasetManifest load(const std::filesystem::path& path);  // DataError
  void save_csv(const std::filesystem::path& path) const;

  int class_index(const std::string& label) const;  // DataError if unknown
  std::vector<size_t> split_indices(const std::string& split) const;

  // Duplicate paths within a split and empty manifests are rejected.
  // `require_labels` additionally demands a label on every row plus a
  // non-empty test split (the downstream contract).
  void validate(bool require_labels) const;
};

enum class SubsampleMode {
  kIndependent,  // each class drawn with its own stream (default)
  kNested        // smaller fractions are prefixes of larger ones
};

// Stratified subsample of the train split: per class, keeps
// round(fraction * count) entries, at least one per class that has any.
// Test entries pass through untouched. fraction must be in (0, 1];
// SubsampleError when a labeled class would end up empty.
DatasetManifest subsample(const DatasetManifest& manifest, double fraction, uint64_t seed,
                          SubsampleMode mode = SubsampleMode::kIndependent);

// Per-class count after stratified rounding (round half up, floor 1).
int64_t subsample_count(int64_t class_count, double fraction);

}  // namespace twins
