#include "twins/dsp.hpp"

#include <cmath>
#include <fstream>

#include "twins/binary_io.hpp"

namespace twins {

void DspConfig::validate() const {
  if (sample_rate_hz <= 0) throw ConfigError("dsp: sample_rate_hz must be positive");
  if (!(segment_seconds > 0.0)) throw ConfigError("dsp: segment_seconds must be positive");
  if (window_size <= 0 || (window_size & (window_size - 1)) != 0)
    throw ConfigError("dsp: window_size must be a positive power of two");
  if (hop_size <= 0) throw ConfigError("dsp: hop_size must be positive");
  if (mel_bins <= 0) throw ConfigError("dsp: mel_bins must be positive");
  if (!(fmin_hz >= 0.0) || !(fmax_hz > fmin_hz))
    throw ConfigError("dsp: need 0 <= fmin_hz < fmax_hz");
  if (fmax_hz > sample_rate_hz / 2.0 + 1e-9)
    throw ConfigError("dsp: fmax_hz beyond Nyquist");
  if (!(log_floor > 0.0)) throw ConfigError("dsp: log_floor must be positive");
  if (hop_size > window_size) throw ConfigError("dsp: hop_size larger than window");
  if (segment_samples() < window_size)
    throw ConfigError("dsp: segment shorter than one window");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

void fft_radix2(std::vector<std::complex<double>>& data) {
  const size_t n = data.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw InvalidInputError("fft: size must be a power of two");

  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wn(std::cos(angle), std::sin(angle));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        auto u = data[i + k];
        auto v = data[i + k + len / 2] * w;
        data[i + k] = u + v;
        data[i + k + len / 2] = u - v;
        w *= wn;
      }
    }
  }
}

LogMelExtractor::LogMelExtractor(const DspConfig& config) : cfg_(config) {
  cfg_.validate();

  // Periodic Hann window.
  window_.resize(static_cast<size_t>(cfg_.window_size));
  for (int i = 0; i < cfg_.window_size; ++i)
    window_[static_cast<size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * M_PI * i / cfg_.window_size);

  // Triangular mel filterbank. Band edges are spaced uniformly on the mel
  // scale; triangles are unnormalized (peak 1). With many more filters than
  // FFT bins at the low end, some triangles cover no bin center and those
  // rows stay identically zero; the log floor keeps them finite.
  const int n_fft_bins = cfg_.fft_bins();
  filterbank_ = Mat::Zero(cfg_.mel_bins, n_fft_bins);
  const double mel_lo = hz_to_mel(cfg_.fmin_hz);
  const double mel_hi = hz_to_mel(cfg_.fmax_hz);
  std::vector<double> edges_hz(static_cast<size_t>(cfg_.mel_bins) + 2);
  for (int i = 0; i < cfg_.mel_bins + 2; ++i)
    edges_hz[static_cast<size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg_.mel_bins + 1));

  const double hz_per_bin =
      static_cast<double>(cfg_.sample_rate_hz) / cfg_.window_size;
  for (int m = 0; m < cfg_.mel_bins; ++m) {
    const double lo = edges_hz[static_cast<size_t>(m)];
    const double center = edges_hz[static_cast<size_t>(m) + 1];
    const double hi = edges_hz[static_cast<size_t>(m) + 2];
    for (int k = 0; k < n_fft_bins; ++k) {
      const double f = k * hz_per_bin;
      double w = 0.0;
      if (f >= lo && f <= center && center > lo) {
        w = (f - lo) / (center - lo);
      } else if (f > center && f <= hi && hi > center) {
        w = (hi - f) / (hi - center);
      }
      if (w > 0.0) filterbank_(m, k) = w;
    }
  }
}

MelSpectrogram LogMelExtractor::compute(const AudioClip& seg) const {
  const int n = cfg_.segment_samples();
  if (seg.sample_rate_hz != cfg_.sample_rate_hz)
    throw InvalidAudioError("log_mel: segment rate " + std::to_string(seg.sample_rate_hz) +
                            ", expected " + std::to_string(cfg_.sample_rate_hz));
  if (static_cast<int>(seg.samples.size()) != n)
    throw InvalidAudioError("log_mel: segment has " + std::to_string(seg.samples.size()) +
                            " samples, expected " + std::to_string(n));

  const int pad = cfg_.window_size / 2;
  const int padded_len = n + 2 * pad;
  std::vector<double> padded(static_cast<size_t>(padded_len));
  for (int i = 0; i < padded_len; ++i) {
    int src = i - pad;
    if (src < 0) src = -src;                       // reflect, edge excluded
    if (src >= n) src = 2 * (n - 1) - src;
    padded[static_cast<size_t>(i)] = seg.samples[static_cast<size_t>(src)];
  }

  const int n_frames = cfg_.frames_per_segment();
  const int n_fft_bins = cfg_.fft_bins();
  Mat power(n_fft_bins, n_frames);
  std::vector<std::complex<double>> buf(static_cast<size_t>(cfg_.window_size));
  for (int f = 0; f < n_frames; ++f) {
    const int start = f * cfg_.hop_size;
    for (int i = 0; i < cfg_.window_size; ++i)
      buf[static_cast<size_t>(i)] = padded[static_cast<size_t>(start + i)] *
                                    window_[static_cast<size_t>(i)];
    fft_radix2(buf);
    for (int k = 0; k < n_fft_bins; ++k)
      power(k, f) = std::norm(buf[static_cast<size_t>(k)]);
  }

  MelSpectrogram out;
  out.values = (filterbank_ * power).array().unaryExpr([this](double v) {
    return std::log(v + cfg_.log_floor);
  });
  if (!out.values.allFinite()) throw NumericError("log_mel: non-finite feature value");
  return out;
}

std::vector<MelSpectrogram> LogMelExtractor::process_clip(const AudioClip& clip) const {
  AudioClip at_rate =
      clip.sample_rate_hz == cfg_.sample_rate_hz ? clip : resample(clip, cfg_.sample_rate_hz);
  std::vector<MelSpectrogram> out;
  for (const AudioClip& seg :
       segment_clip(at_rate, cfg_.segment_seconds, cfg_.min_segment_fill))
    out.push_back(compute(seg));
  return out;
}

void quantize_to_f32(MelSpectrogram& m) {
  for (int c = 0; c < m.values.cols(); ++c)
    for (int r = 0; r < m.values.rows(); ++r)
      m.values(r, c) = static_cast<double>(static_cast<float>(m.values(r, c)));
}

void write_feature_file(const std::filesystem::path& path,
                        const std::vector<MelSpectrogram>& segments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot create feature file " + path.string());
  io::write_bytes(out, kFeatureMagic, 6);
  io::write_le<uint16_t>(out, kFeatureVersion);
  io::write_le<uint32_t>(out, static_cast<uint32_t>(segments.size()));
  const int bins = segments.empty() ? 0 : segments[0].bins();
  const int frames = segments.empty() ? 0 : segments[0].frames();
  io::write_le<uint32_t>(out, static_cast<uint32_t>(bins));
  io::write_le<uint32_t>(out, static_cast<uint32_t>(frames));
  for (const MelSpectrogram& seg : segments) {
    if (seg.bins() != bins || seg.frames() != frames)
      throw ShapeError("feature file: mixed segment shapes");
    for (int r = 0; r < bins; ++r)
      for (int c = 0; c < frames; ++c)
        io::write_f32_le(out, static_cast<float>(seg.values(r, c)));
  }
  if (!out) throw FormatError("short write to " + path.string());
}

std::vector<MelSpectrogram> read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open feature file " + path.string());
  char magic[6];
  io::read_bytes(in, magic, 6, "feature magic");
  if (std::memcmp(magic, kFeatureMagic, 6) != 0)
    throw FormatError("bad feature file magic in " + path.string());
  const auto version = io::read_le<uint16_t>(in, "feature version");
  if (version != kFeatureVersion)
    throw VersionError("feature file " + path.string() + " has version " +
                       std::to_string(version) + ", this build reads version " +
                       std::to_string(kFeatureVersion));
  const auto count = io::read_le<uint32_t>(in, "segment count");
  const auto bins = io::read_le<uint32_t>(in, "bin count");
  const auto frames = io::read_le<uint32_t>(in, "frame count");
  std::vector<MelSpectrogram> out(count);
  for (uint32_t s = 0; s < count; ++s) {
    out[s].values.resize(bins, frames);
    for (uint32_t r = 0; r < bins; ++r)
      for (uint32_t c = 0; c < frames; ++c)
        out[s].values(r, c) = static_cast<double>(io::read_f32_le(in, "feature value"));
  }
  return out;
}

}  // namespace twins
