#pragma once

#include <Eigen/Dense>
#include <complex>
#include <filesystem>
#include <vector>

#include "twins/audio.hpp"
#include "twins/error.hpp"

namespace twins {

using Mat = Eigen::MatrixXd;

// Log-mel feature matrix, mel bins x frames. With the default DspConfig this
// is always 513 x 32 for a one-second segment at 16 kHz.
struct MelSpectrogram {
  Mat values;

  int bins() const { return static_cast<int>(values.rows()); }
  int frames() const { return static_cast<int>(values.cols()); }
};

struct DspConfig {
  int sample_rate_hz = 16000;
  double segment_seconds = 1.0;
  double min_segment_fill = 0.5;  // shorter trailing remainders are dropped
  int window_size = 1024;         // 64 ms at 16 kHz
  int hop_size = 512;             // 32 ms
  int mel_bins = 513;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = 1e-10;       // added before the log

  int segment_samples() const {
    return static_cast<int>(std::lround(segment_seconds * sample_rate_hz));
  }
  // Frames per segment with reflect padding of window_size/2 on each side.
  int frames_per_segment() const { return 1 + segment_samples() / hop_size; }
  int fft_bins() const { return window_size / 2 + 1; }

  void validate() const;  // throws ConfigError
};

// HTK-style mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// In-place iterative radix-2 FFT; data.size() must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& data);

// Turns fixed-length audio segments into log-mel matrices:
// reflect-pad by window_size/2, periodic Hann window, power spectrum,
// triangular mel filterbank (unnormalized, fmin..fmax), log(power + floor).
class LogMelExtractor {
 public:
  explicit LogMelExtractor(const DspConfig& config = {});

  // `seg` must hold exactly segment_samples() at the configured rate;
  // anything else raises InvalidAudioError.
  MelSpectrogram compute(const AudioClip& seg) const;

  // Full pipeline for an arbitrary-length clip at any supported rate:
  // resample -> segment -> compute. May return an empty vector.
  std::vector<MelSpectrogram> process_clip(const AudioClip& clip) const;

  const DspConfig& config() const { return cfg_; }
  const Mat& filterbank() const { return filterbank_; }  // mel_bins x fft_bins
  const std::vector<double>& window() const { return window_; }

 private:
  DspConfig cfg_;
  std::vector<double> window_;
  Mat filterbank_;
};

// Binary feature file: 8-byte header (magic "TWFEAT" + u16 version), u32
// segment count, u32 bins, u32 frames, then per segment bins*frames float32
// little-endian values in row-major order.
inline constexpr char kFeatureMagic[6] = {'T', 'W', 'F', 'E', 'A', 'T'};
inline constexpr uint16_t kFeatureVersion = 1;

void write_feature_file(const std::filesystem::path& path,
                        const std::vector<MelSpectrogram>& segments);
std::vector<MelSpectrogram> read_feature_file(const std::filesystem::path& path);

// Quantizes through float32, the on-disk feature precision. Feature loading
// applies this on every path so in-memory extraction and a featurize ->
// train round trip see bit-identical values.
void quantize_to_f32(MelSpectrogram& m);

}  // namespace twins
