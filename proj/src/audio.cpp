#include "twins/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "twins/binary_io.hpp"

namespace twins {

namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xfffe;

struct WavFormat {
  uint16_t format = 0;
  uint16_t channels = 0;
  uint32_t sample_rate = 0;
  uint16_t bits_per_sample = 0;
};

double sinc(double x) {
  if (x == 0.0) return 1.0;
  double px = M_PI * x;
  return std::sin(px) / px;
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidAudioError("cannot open audio file: " + path.string());

  char riff[4], wave[4];
  io::read_bytes(in, riff, 4, "RIFF tag");
  if (std::memcmp(riff, "RIFF", 4) != 0)
    throw InvalidAudioError("not a RIFF file: " + path.string());
  io::read_le<uint32_t>(in, "RIFF size");
  io::read_bytes(in, wave, 4, "WAVE tag");
  if (std::memcmp(wave, "WAVE", 4) != 0)
    throw InvalidAudioError("not a WAVE file: " + path.string());

  WavFormat fmt;
  bool have_fmt = false;
  std::vector<char> data;
  bool have_data = false;

  while (!have_data || !have_fmt) {
    char tag[4];
    in.read(tag, 4);
    if (in.gcount() != 4) break;
    uint32_t chunk_size = io::read_le<uint32_t>(in, "chunk size");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw InvalidAudioError("fmt chunk too small: " + path.string());
      fmt.format = io::read_le<uint16_t>(in, "format code");
      fmt.channels = io::read_le<uint16_t>(in, "channel count");
      fmt.sample_rate = io::read_le<uint32_t>(in, "sample rate");
      io::read_le<uint32_t>(in, "byte rate");
      io::read_le<uint16_t>(in, "block align");
      fmt.bits_per_sample = io::read_le<uint16_t>(in, "bits per sample");
      if (chunk_size > 16) {
        if (fmt.format == kFormatExtensible && chunk_size >= 40) {
          io::read_le<uint16_t>(in, "extension size");
          io::read_le<uint16_t>(in, "valid bits");
          io::read_le<uint32_t>(in, "channel mask");
          fmt.format = io::read_le<uint16_t>(in, "subformat code");
          in.seekg(chunk_size - 16 - 10, std::ios::cur);
        } else {
          in.seekg(chunk_size - 16, std::ios::cur);
        }
      }
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(chunk_size);
      io::read_bytes(in, data.data(), chunk_size, "sample data");
      have_data = true;
    } else {
      in.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
    if (!in) break;
  }

  if (!have_fmt || !have_data)
    throw InvalidAudioError("missing fmt or data chunk: " + path.string());
  if (fmt.channels == 0 || fmt.sample_rate == 0)
    throw InvalidAudioError("degenerate wav header: " + path.string());

  size_t bytes_per_sample;
  if (fmt.format == kFormatPcm && fmt.bits_per_sample == 16) {
    bytes_per_sample = 2;
  } else if (fmt.format == kFormatFloat && fmt.bits_per_sample == 32) {
    bytes_per_sample = 4;
  } else {
    throw InvalidAudioError("unsupported wav encoding (want PCM16 or float32): " +
                            path.string());
  }

  size_t frame_bytes = bytes_per_sample * fmt.channels;
  size_t frames = data.size() / frame_bytes;
  AudioClip clip;
  clip.sample_rate_hz = static_cast<int>(fmt.sample_rate);
  clip.samples.resize(frames);

  const auto* raw = reinterpret_cast<const unsigned char*>(data.data());
  for (size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (size_t c = 0; c < fmt.channels; ++c) {
      const unsigned char* p = raw + f * frame_bytes + c * bytes_per_sample;
      if (bytes_per_sample == 2) {
        auto v = static_cast<int16_t>(static_cast<uint16_t>(p[0]) |
                                      (static_cast<uint16_t>(p[1]) << 8));
        acc += static_cast<double>(v) / 32768.0;
      } else {
        uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                        (static_cast<uint32_t>(p[2]) << 16) |
                        (static_cast<uint32_t>(p[3]) << 24);
        float v;
        std::memcpy(&v, &bits, 4);
        if (!std::isfinite(v))
          throw InvalidAudioError("non-finite sample in " + path.string());
        acc += static_cast<double>(v);
      }
    }
    clip.samples[f] = acc / fmt.channels;
  }
  return clip;
}

void write_wav_pcm16(const std::filesystem::path& path, const AudioClip& clip) {
  if (clip.sample_rate_hz <= 0) throw InvalidAudioError("write_wav: bad sample rate");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidAudioError("cannot create " + path.string());

  uint32_t data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
  io::write_bytes(out, "RIFF", 4);
  io::write_le<uint32_t>(out, 36 + data_bytes);
  io::write_bytes(out, "WAVE", 4);
  io::write_bytes(out, "fmt ", 4);
  io::write_le<uint32_t>(out, 16);
  io::write_le<uint16_t>(out, kFormatPcm);
  io::write_le<uint16_t>(out, 1);
  io::write_le<uint32_t>(out, static_cast<uint32_t>(clip.sample_rate_hz));
  io::write_le<uint32_t>(out, static_cast<uint32_t>(clip.sample_rate_hz) * 2);
  io::write_le<uint16_t>(out, 2);
  io::write_le<uint16_t>(out, 16);
  io::write_bytes(out, "data", 4);
  io::write_le<uint32_t>(out, data_bytes);
  for (double s : clip.samples) {
    double clipped = std::min(1.0, std::max(-1.0, s));
    auto q = static_cast<int>(std::lround(clipped * 32767.0));
    io::write_le<int16_t>(out, static_cast<int16_t>(q));
  }
  if (!out) throw InvalidAudioError("short write to " + path.string());
}

AudioClip resample(const AudioClip& clip, int target_rate_hz, const ResampleOptions& options) {
  if (clip.sample_rate_hz <= 0 || target_rate_hz <= 0)
    throw InvalidAudioError("resample: sample rates must be positive");
  if (clip.samples.empty()) throw InvalidAudioError("resample: empty clip");
  if (clip.sample_rate_hz == target_rate_hz) return clip;

  const auto in_rate = static_cast<uint64_t>(clip.sample_rate_hz);
  const auto out_rate = static_cast<uint64_t>(target_rate_hz);
  const uint64_t in_count = clip.samples.size();
  const uint64_t out_count = (in_count * out_rate + in_rate / 2) / in_rate;

  // Cutoff relative to the source Nyquist; < 1 when downsampling.
  const double scale = std::min(1.0, static_cast<double>(out_rate) / static_cast<double>(in_rate));
  const double half_width = options.taps_per_side / scale;

  AudioClip out;
  out.sample_rate_hz = target_rate_hz;
  out.samples.resize(out_count);

  const auto n_in = static_cast<int64_t>(in_count);
  for (uint64_t i = 0; i < out_count; ++i) {
    // Exact source position of output i: i * in_rate / out_rate.
    const uint64_t num = i * in_rate;
    const auto base = static_cast<int64_t>(num / out_rate);
    const double frac = static_cast<double>(num % out_rate) / static_cast<double>(out_rate);
    const double pos = static_cast<double>(base) + frac;

    auto lo = static_cast<int64_t>(std::ceil(pos - half_width));
    auto hi = static_cast<int64_t>(std::floor(pos + half_width));
    lo = std::max<int64_t>(lo, 0);
    hi = std::min<int64_t>(hi, n_in - 1);

    double acc = 0.0;
    double weight_sum = 0.0;
    for (int64_t k = lo; k <= hi; ++k) {
      const double u = (static_cast<double>(k) - pos) * scale;
      const double x = u / options.taps_per_side;  // in [-1, 1] over the support
      const double w = sinc(u) * (0.5 + 0.5 * std::cos(M_PI * x));
      acc += w * clip.samples[static_cast<size_t>(k)];
      weight_sum += w;
    }
    out.samples[i] = weight_sum != 0.0 ? acc / weight_sum : 0.0;
  }
  return out;
}

std::vector<AudioClip> segment_clip(const AudioClip& clip, double segment_seconds,
                                    double min_fill) {
  if (clip.sample_rate_hz <= 0) throw InvalidAudioError("segment: bad sample rate");
  if (!(segment_seconds > 0.0)) throw InvalidInputError("segment: non-positive length");
  if (!(min_fill > 0.0 && min_fill <= 1.0))
    throw InvalidInputError("segment: min_fill must be in (0, 1]");

  const auto seg_len =
      static_cast<size_t>(std::lround(segment_seconds * clip.sample_rate_hz));
  std::vector<AudioClip> out;
  const size_t total = clip.samples.size();
  for (size_t start = 0; start < total; start += seg_len) {
    const size_t have = std::min(seg_len, total - start);
    if (have < seg_len &&
        static_cast<double>(have) < min_fill * static_cast<double>(seg_len))
      break;
    AudioClip seg;
    seg.sample_rate_hz = clip.sample_rate_hz;
    seg.samples.assign(clip.samples.begin() + static_cast<ptrdiff_t>(start),
                       clip.samples.begin() + static_cast<ptrdiff_t>(start + have));
    seg.samples.resize(seg_len, 0.0);
    out.push_back(std::move(seg));
  }
  return out;
}

}  // namespace twins
