#pragma once

#include <filesystem>

#include "twins/audio.hpp"
#include "twins/rng.hpp"

namespace twins {

// Synthetic four-class audio corpus for tests and demos. The classes are
// separable by spectral structure rather than absolute pitch alone:
//   0 pure tone (400-800 Hz)
//   1 harmonic stack (f0 150-300 Hz, six partials)
//   2 linear up-chirp (low to 2.5-3.5 kHz)
//   3 band of noise (1-3 kHz)
struct FixtureOptions {
  int clips = 400;            // total, split evenly over the 4 classes
  int sample_rate_hz = 16000;
  double clip_seconds = 1.0;
  double train_fraction = 0.8;
  uint64_t seed = 7;
};

inline constexpr int kFixtureClasses = 4;

// One clip of the given class; draws all randomness from `rng`.
AudioClip synth_fixture_clip(int class_index, const FixtureOptions& options, Rng& rng);

// Writes WAV files plus manifest.csv (path,label,split) into `dir` and
// returns the manifest path. Deterministic for a given option set. The split
// is stratified: per class, the first train_fraction of clips are train.
std::filesystem::path write_fixture(const std::filesystem::path& dir,
                                    const FixtureOptions& options = {});

}  // namespace twins
