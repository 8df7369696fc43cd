#pragma once

#include <string>
#include <vector>

#include "twins/checkpoint.hpp"
#include "twins/pipeline.hpp"

namespace twins {

// One evaluated configuration. `fingerprint` hashes everything that defines
// the cell (upstream config, fraction, seed, fine-tune options, dataset id)
// so reruns can be matched to rows. A failed cell carries the error text and
// an accuracy of -1.
struct GridCell {
  std::string upstream;  // checkpoint label, or "baseline"
  double fraction = 0.0;
  uint64_t seed = 0;
  double accuracy = -1.0;
  std::string fingerprint;
  std::string error;
};

struct GridReport {
  std::vector<GridCell> cells;

  // CSV with header upstream,fraction,seed,accuracy,fingerprint,error.
  // Numeric fields round-trip exactly through from_csv.
  std::string to_csv() const;
  static GridReport from_csv(const std::string& text);  // FormatError

  // Mean accuracy over seeds per (fraction, upstream), one fraction per row,
  // baseline column last.
  std::string to_markdown() const;

  // Mean over the seeds of one (upstream, fraction) pair; NaN if absent.
  double mean_accuracy(const std::string& upstream, double fraction) const;
};

struct LabeledCheckpoint {
  std::string label;
  Checkpoint checkpoint;
};

struct GridJob {
  std::vector<LabeledCheckpoint> checkpoints;
  std::vector<double> fractions = {0.05, 0.10, 0.50, 1.00};
  std::vector<uint64_t> seeds = {1, 2, 3};
  FinetuneOptions finetune;  // template; fraction and seed set per cell
  bool include_baseline = true;
  // Encoder shape for the scratch baseline when no checkpoint supplies one.
  ArchDescriptor baseline_arch;
};

// Fine-tunes every checkpoint (and a scratch baseline) at every fraction and
// seed, measuring test accuracy. A cell that throws is recorded as failed;
// the sweep continues.
GridReport run_grid(const GridJob& job, const Dataset& data);

}  // namespace twins
