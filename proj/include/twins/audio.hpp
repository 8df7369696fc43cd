#pragma once

#include <filesystem>
#include <vector>

#include "twins/error.hpp"

namespace twins {

// Mono waveform with samples in [-1, 1] (not enforced; PCM writing clips).
struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = 0;

  double duration_s() const {
    return sample_rate_hz > 0 ? static_cast<double>(samples.size()) / sample_rate_hz : 0.0;
  }
};

// Reads a RIFF/WAVE file. Supported encodings: PCM16 and IEEE float32.
// Multi-channel input is averaged down to mono. Throws InvalidAudioError on
// anything unreadable (bad header, unsupported encoding, non-finite floats).
AudioClip read_wav(const std::filesystem::path& path);

// Writes mono PCM16. Samples are clipped to [-1, 1] before quantization.
void write_wav_pcm16(const std::filesystem::path& path, const AudioClip& clip);

struct ResampleOptions {
  // Half-width of the windowed-sinc kernel in source samples (scaled up when
  // downsampling so the cutoff stays below the target Nyquist).
  int taps_per_side = 32;
};

// Sample-rate conversion by windowed-sinc interpolation with per-output
// kernel normalization, so constant signals survive exactly (including at
// the edges). Output length is round(len * target / source), which keeps the
// duration within one sample period. A no-op copy when rates already match.
AudioClip resample(const AudioClip& clip, int target_rate_hz,
                   const ResampleOptions& options = {});

// Splits a clip into consecutive fixed-length segments. A trailing partial
// segment is zero-padded to full length when it covers at least
// `min_fill` of a segment, and dropped otherwise. An empty clip yields an
// empty list.
std::vector<AudioClip> segment_clip(const AudioClip& clip, double segment_seconds = 1.0,
                                    double min_fill = 0.5);

}  // namespace twins
