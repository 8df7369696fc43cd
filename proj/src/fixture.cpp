#include "twins/fixture.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "twins/manifest.hpp"

namespace twins {

namespace {

const char* kClassLabels[kFixtureClasses] = {"tone", "harmonic", "chirp", "noiseband"};

void add_tone(std::vector<double>& x, int rate, double freq, double amp, double phase) {
  const double w = 2.0 * M_PI * freq / rate;
  for (size_t i = 0; i < x.size(); ++i) x[i] += amp * std::sin(w * static_cast<double>(i) + phase);
}

void normalize_peak(std::vector<double>& x, double peak) {
  double mx = 0.0;
  for (double v : x) mx = std::max(mx, std::fabs(v));
  if (mx > 0.0) {
    const double s = peak / mx;
    for (double& v : x) v *= s;
  }
}

}  // namespace

AudioClip synth_fixture_clip(int class_index, const FixtureOptions& options, Rng& rng) {
  if (class_index < 0 || class_index >= kFixtureClasses)
    throw InvalidInputError("fixture class index out of range");
  const int rate = options.sample_rate_hz;
  const auto n = static_cast<size_t>(std::lround(options.clip_seconds * rate));
  std::vector<double> x(n, 0.0);

  switch (class_index) {
    case 0: {  // pure tone
      const double f = rng.uniform(400.0, 800.0);
      add_tone(x, rate, f, rng.uniform(0.4, 0.9), rng.uniform(0.0, 2.0 * M_PI));
      break;
    }
    case 1: {  // harmonic stack
      const double f0 = rng.uniform(150.0, 300.0);
      for (int k = 1; k <= 6; ++k)
        add_tone(x, rate, f0 * k, 0.8 / k, rng.uniform(0.0, 2.0 * M_PI));
      break;
    }
    case 2: {  // linear up-chirp
      const double f_start = rng.uniform(200.0, 500.0);
      const double f_end = rng.uniform(2500.0, 3500.0);
      const double phase0 = rng.uniform(0.0, 2.0 * M_PI);
      const double rate_hz = (f_end - f_start) / options.clip_seconds;
      for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        x[i] += 0.7 * std::sin(phase0 + 2.0 * M_PI * (f_start * t + 0.5 * rate_hz * t * t));
      }
      break;
    }
    case 3: {  // band of noise: dense random sinusoids in 1-3 kHz
      for (int k = 0; k < 64; ++k)
        add_tone(x, rate, rng.uniform(1000.0, 3000.0), rng.uniform(0.05, 0.15),
                 rng.uniform(0.0, 2.0 * M_PI));
      break;
    }
    default: break;
  }

  // Light wideband noise on every class so silence never identifies one.
  for (double& v : x) v += 0.003 * rng.normal();
  normalize_peak(x, 0.85);

  AudioClip clip;
  clip.sample_rate_hz = rate;
  clip.samples = std::move(x);
  return clip;
}

std::filesystem::path write_fixture(const std::filesystem::path& dir,
                                    const FixtureOptions& options) {
  if (options.clips < kFixtureClasses)
    throw InvalidInputError("fixture needs at least one clip per class");
  if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0))
    throw InvalidInputError("fixture train_fraction must be in (0, 1)");
  std::filesystem::create_directories(dir);

  DatasetManifest manifest;
  const int per_class = options.clips / kFixtureClasses;
  for (int cls = 0; cls < kFixtureClasses; ++cls) {
    const auto n_train = static_cast<int>(std::lround(per_class * options.train_fraction));
    for (int i = 0; i < per_class; ++i) {
      Rng rng(mix_seed({options.seed, static_cast<uint64_t>(cls), static_cast<uint64_t>(i)}));
      const AudioClip clip = synth_fixture_clip(cls, options, rng);
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%03d.wav", kClassLabels[cls], i);
      write_wav_pcm16(dir / name, clip);
      manifest.entries.push_back(
          {name, kClassLabels[cls], i < n_train ? "train" : "test"});
    }
  }
  const std::filesystem::path manifest_path = dir / "manifest.csv";
  manifest.save_csv(manifest_path);
  return manifest_path;
}

}  // namespace twins
