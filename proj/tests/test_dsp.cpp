#include <cmath>
#include <complex>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "twins/audio.hpp"
#include "twins/augment.hpp"
#include "twins/dsp.hpp"
#include "twins/rng.hpp"
#include "util.hpp"

using twins::AudioClip;
using twins::MelSpectrogram;

namespace {

// Little-endian byte assembler for hand-crafted WAV files.
struct ByteWriter {
  std::vector<char> buf;

  void tag(const char* t) { buf.insert(buf.end(), t, t + 4); }
  void u16(uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>(v >> 8));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i16(int16_t v) { u16(static_cast<uint16_t>(v)); }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
};

std::vector<char> wav_header(ByteWriter& w, uint16_t format, uint16_t channels,
                             uint32_t rate, uint16_t bits, uint32_t data_bytes) {
  w.tag("RIFF");
  w.u32(36 + data_bytes);
  w.tag("WAVE");
  w.tag("fmt ");
  w.u32(16);
  w.u16(format);
  w.u16(channels);
  w.u32(rate);
  w.u32(rate * channels * bits / 8);
  w.u16(static_cast<uint16_t>(channels * bits / 8));
  w.u16(bits);
  w.tag("data");
  w.u32(data_bytes);
  return w.buf;
}

AudioClip sine(double freq_hz, int rate, size_t count, double amp = 0.5) {
  AudioClip c;
  c.sample_rate_hz = rate;
  c.samples.resize(count);
  for (size_t t = 0; t < count; ++t)
    c.samples[t] = amp * std::sin(2.0 * M_PI * freq_hz * static_cast<double>(t) / rate);
  return c;
}

// Independent recomputation of the HTK triangular filterbank geometry.
double mel_oracle(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double hz_oracle(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

TEST_CASE("pcm16 wav round-trips within quantization error") {
  testutil::TempDir tmp("wav");
  const AudioClip in = sine(440.0, 16000, 1600, 0.9);
  const auto path = tmp.path / "tone.wav";
  twins::write_wav_pcm16(path, in);
  const AudioClip out = twins::read_wav(path);
  REQUIRE(out.sample_rate_hz == 16000);
  REQUIRE(out.samples.size() == in.samples.size());
  double worst = 0.0;
  for (size_t i = 0; i < in.samples.size(); ++i)
    worst = std::max(worst, std::fabs(in.samples[i] - out.samples[i]));
  CHECK(worst <= 1.0 / 16384.0);
}

TEST_CASE("float32 wav decodes exactly") {
  testutil::TempDir tmp("wavf");
  ByteWriter w;
  const float vals[] = {0.0f, 0.25f, -0.5f, 1.0f};
  wav_header(w, 3, 1, 8000, 32, 16);
  for (float v : vals) w.f32(v);
  const auto path = tmp.path / "f32.wav";
  testutil::write_bytes(path, w.buf);
  const AudioClip clip = twins::read_wav(path);
  REQUIRE(clip.samples.size() == 4);
  CHECK(clip.sample_rate_hz == 8000);
  for (size_t i = 0; i < 4; ++i)
    CHECK(clip.samples[i] == static_cast<double>(vals[i]));
}

TEST_CASE("non-finite float32 samples are rejected") {
  testutil::TempDir tmp("wavnan");
  ByteWriter w;
  wav_header(w, 3, 1, 8000, 32, 8);
  w.f32(0.5f);
  w.f32(std::nanf(""));
  const auto path = tmp.path / "nan.wav";
  testutil::write_bytes(path, w.buf);
  CHECK_THROWS_AS(twins::read_wav(path), twins::InvalidAudioError);
}

TEST_CASE("stereo pcm16 is averaged to mono") {
  testutil::TempDir tmp("wavst");
  ByteWriter w;
  wav_header(w, 1, 2, 16000, 16, 12);
  // Frames: (8192, 16384), (-8192, 8192), (0, -32768)
  w.i16(8192);
  w.i16(16384);
  w.i16(-8192);
  w.i16(8192);
  w.i16(0);
  w.i16(-32768);
  const auto path = tmp.path / "st.wav";
  testutil::write_bytes(path, w.buf);
  const AudioClip clip = twins::read_wav(path);
  REQUIRE(clip.samples.size() == 3);
  CHECK(clip.samples[0] == doctest::Approx((8192.0 + 16384.0) / 2 / 32768.0).epsilon(1e-15));
  CHECK(clip.samples[1] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(clip.samples[2] == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("unreadable wav inputs raise InvalidAudioError") {
  testutil::TempDir tmp("wavbad");
  const auto garbage = tmp.path / "garbage.wav";
  testutil::write_text(garbage, "this is not a riff file at all, not even close");
  CHECK_THROWS_AS(twins::read_wav(garbage), twins::InvalidAudioError);
  CHECK_THROWS_AS(twins::read_wav(tmp.path / "missing.wav"), twins::InvalidAudioError);

  // Unsupported encoding: 8-bit PCM.
  ByteWriter w;
  wav_header(w, 1, 1, 8000, 8, 4);
  w.u32(0x80808080u);
  const auto pcm8 = tmp.path / "pcm8.wav";
  testutil::write_bytes(pcm8, w.buf);
  CHECK_THROWS_AS(twins::read_wav(pcm8), twins::InvalidAudioError);
}

TEST_CASE("resample is a bitwise no-op when rates match") {
  const AudioClip in = sine(300.0, 16000, 777);
  const AudioClip out = twins::resample(in, 16000);
  REQUIRE(out.samples.size() == in.samples.size());
  for (size_t i = 0; i < in.samples.size(); ++i)
    CHECK(out.samples[i] == in.samples[i]);
}

TEST_CASE("resample preserves constants including the edges") {
  AudioClip in;
  in.sample_rate_hz = 8000;
  in.samples.assign(500, 0.625);
  for (int target : {16000, 44100, 4000}) {
    const AudioClip out = twins::resample(in, target);
    CHECK(out.sample_rate_hz == target);
    for (double s : out.samples) CHECK(std::fabs(s - 0.625) <= 1e-12);
  }
}

TEST_CASE("resample output length is round(len * target / source)") {
  AudioClip in;
  in.sample_rate_hz = 8000;
  in.samples.assign(1001, 0.0);
  CHECK(twins::resample(in, 16000).samples.size() == 2002);
  CHECK(twins::resample(in, 12000).samples.size() == 1502);  // 1501.5 rounds up
  in.samples.assign(999, 0.0);
  CHECK(twins::resample(in, 4000).samples.size() == 500);  // 499.5 rounds up
}

TEST_CASE("resampled sine keeps its frequency") {
  const AudioClip in = sine(1000.0, 8000, 4096);
  const AudioClip up = twins::resample(in, 16000);
  REQUIRE(up.samples.size() == 8192);
  // 2048 samples from the middle hold exactly 128 cycles at 16 kHz.
  std::vector<std::complex<double>> x(2048);
  for (size_t i = 0; i < x.size(); ++i) x[i] = up.samples[2048 + i];
  const auto spectrum = oracles::dft(x);
  size_t peak = 1;
  for (size_t k = 1; k < 1024; ++k)
    if (std::abs(spectrum[k]) > std::abs(spectrum[peak])) peak = k;
  CHECK(peak == 128);
}

TEST_CASE("segment_clip pads or drops the trailing remainder") {
  auto count = [](size_t samples) {
    AudioClip c;
    c.sample_rate_hz = 16000;
    c.samples.assign(samples, 0.25);
    return twins::segment_clip(c, 1.0, 0.5).size();
  };
  CHECK(count(24000) == 2);  // remainder 8000 == half, kept
  CHECK(count(23999) == 1);  // remainder 7999 < half, dropped
  CHECK(count(16000) == 1);
  CHECK(count(15999) == 1);  // short clip but >= half, padded
  CHECK(count(7999) == 0);
  CHECK(count(0) == 0);
}

TEST_CASE("segment_clip copies samples and zero-pads the tail") {
  AudioClip c = sine(123.0, 16000, 24000, 0.8);
  const auto segs = twins::segment_clip(c, 1.0, 0.5);
  REQUIRE(segs.size() == 2);
  REQUIRE(segs[0].samples.size() == 16000);
  REQUIRE(segs[1].samples.size() == 16000);
  for (size_t i = 0; i < 16000; ++i) CHECK(segs[0].samples[i] == c.samples[i]);
  for (size_t i = 0; i < 8000; ++i) CHECK(segs[1].samples[i] == c.samples[16000 + i]);
  for (size_t i = 8000; i < 16000; ++i) CHECK(segs[1].samples[i] == 0.0);
}

TEST_CASE("fft_radix2 matches the naive dft") {
  twins::Rng rng(31);
  std::vector<std::complex<double>> data(256);
  for (auto& v : data) v = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  auto want = oracles::dft(data);
  twins::fft_radix2(data);
  double worst = 0.0;
  for (size_t k = 0; k < data.size(); ++k)
    worst = std::max(worst, std::abs(data[k] - want[k]));
  CHECK(worst <= 1e-9);

  std::vector<std::complex<double>> odd(100);
  CHECK_THROWS_AS(twins::fft_radix2(odd), twins::InvalidInputError);
}

TEST_CASE("log-mel output is 513 bins by 32 frames") {
  const twins::LogMelExtractor ex;
  CHECK(ex.config().frames_per_segment() == 32);
  CHECK(ex.config().fft_bins() == 513);
  CHECK(ex.filterbank().rows() == 513);
  CHECK(ex.filterbank().cols() == 513);
  const MelSpectrogram m = ex.compute(sine(440.0, 16000, 16000));
  CHECK(m.bins() == 513);
  CHECK(m.frames() == 32);
  CHECK(m.values.allFinite());

  CHECK_THROWS_AS(ex.compute(sine(440.0, 16000, 15999)), twins::InvalidAudioError);
  CHECK_THROWS_AS(ex.compute(sine(440.0, 8000, 16000)), twins::InvalidAudioError);
}

TEST_CASE("silence maps to the exact log floor everywhere") {
  const twins::LogMelExtractor ex;
  AudioClip z;
  z.sample_rate_hz = 16000;
  z.samples.assign(16000, 0.0);
  const MelSpectrogram m = ex.compute(z);
  const double floor_db = std::log(ex.config().log_floor);
  for (int r = 0; r < m.bins(); ++r)
    for (int c = 0; c < m.frames(); ++c) REQUIRE(m.values(r, c) == floor_db);
}

TEST_CASE("a 440 Hz tone peaks at the right mel filter in every frame") {
  const twins::LogMelExtractor ex;
  const MelSpectrogram m = ex.compute(sine(440.0, 16000, 16000));

  // Recompute the filter geometry from scratch: 515 equally spaced mel edge
  // points over 0..8 kHz; filter i is centered on edge i+1.
  const int bins = 513;
  std::vector<double> edge_hz(bins + 2);
  const double mel_hi = mel_oracle(8000.0);
  for (int i = 0; i < bins + 2; ++i)
    edge_hz[i] = hz_oracle(mel_hi * static_cast<double>(i) / (bins + 1));

  // Filters near 440 Hz are narrower than one FFT bin, so the peak can sit a
  // bin-quantization step away from the ideal center.
  const double bin_hz = 16000.0 / 1024.0;
  for (int f = 0; f < m.frames(); ++f) {
    int peak = 0;
    for (int r = 1; r < bins; ++r)
      if (m.values(r, f) > m.values(peak, f)) peak = r;
    const double center = edge_hz[peak + 1];
    const double bandwidth = edge_hz[peak + 2] - edge_hz[peak];
    CHECK(std::fabs(center - 440.0) <= bandwidth + bin_hz);
  }
}

TEST_CASE("louder input raises the log-mel peak") {
  const twins::LogMelExtractor ex;
  const MelSpectrogram quiet = ex.compute(sine(440.0, 16000, 16000, 0.25));
  const MelSpectrogram loud = ex.compute(sine(440.0, 16000, 16000, 0.5));
  CHECK(loud.values.maxCoeff() > quiet.values.maxCoeff());
}

TEST_CASE("log-mel extraction is deterministic") {
  const twins::LogMelExtractor ex;
  const AudioClip tone = sine(523.25, 16000, 16000, 0.4);
  const MelSpectrogram a = ex.compute(tone);
  const MelSpectrogram b = ex.compute(tone);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("alternative dsp configs change the grid accordingly") {
  twins::DspConfig cfg;
  cfg.hop_size = 256;
  cfg.mel_bins = 64;
  const twins::LogMelExtractor ex(cfg);
  const MelSpectrogram m = ex.compute(sine(700.0, 16000, 16000));
  CHECK(m.bins() == 64);
  CHECK(m.frames() == 1 + 16000 / 256);

  twins::DspConfig bad;
  bad.window_size = 1000;  // not a power of two
  CHECK_THROWS_AS(twins::LogMelExtractor{bad}, twins::ConfigError);
  bad = {};
  bad.fmax_hz = 9000.0;  // beyond Nyquist
  CHECK_THROWS_AS(twins::LogMelExtractor{bad}, twins::ConfigError);
}

TEST_CASE("process_clip resamples, segments and extracts") {
  const twins::LogMelExtractor ex;
  const auto mels = ex.process_clip(sine(440.0, 8000, 12000));  // 1.5 s
  REQUIRE(mels.size() == 2);
  for (const auto& m : mels) {
    CHECK(m.bins() == 513);
    CHECK(m.frames() == 32);
  }
  const auto none = ex.process_clip(sine(440.0, 8000, 3000));  // 0.375 s, dropped
  CHECK(none.empty());
}

TEST_CASE("feature files round-trip through float32") {
  testutil::TempDir tmp("feat");
  twins::Rng rng(41);
  std::vector<MelSpectrogram> segs;
  for (int i = 0; i < 3; ++i) segs.push_back(testutil::random_spectrogram(rng, 513, 32));
  const auto path = tmp.path / "a.feat";
  twins::write_feature_file(path, segs);
  const auto back = twins::read_feature_file(path);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    MelSpectrogram want = segs[i];
    twins::quantize_to_f32(want);
    REQUIRE(back[i].bins() == 513);
    REQUIRE(back[i].frames() == 32);
    CHECK((back[i].values - want.values).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("quantize_to_f32 is idempotent") {
  twins::Rng rng(42);
  MelSpectrogram m = testutil::random_spectrogram(rng, 17, 9);
  twins::quantize_to_f32(m);
  MelSpectrogram again = m;
  twins::quantize_to_f32(again);
  CHECK((again.values - m.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("corrupt feature files are detected") {
  testutil::TempDir tmp("featbad");
  twins::Rng rng(43);
  const std::vector<MelSpectrogram> segs{testutil::random_spectrogram(rng, 8, 4)};
  const auto good = tmp.path / "good.feat";
  twins::write_feature_file(good, segs);
  auto bytes = testutil::read_bytes(good);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 7);
  testutil::write_bytes(tmp.path / "trunc.feat", truncated);
  CHECK_THROWS_AS(twins::read_feature_file(tmp.path / "trunc.feat"), twins::FormatError);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  testutil::write_bytes(tmp.path / "magic.feat", bad_magic);
  CHECK_THROWS_AS(twins::read_feature_file(tmp.path / "magic.feat"), twins::FormatError);

  auto bad_version = bytes;
  bad_version[6] = 9;  // version u16 lives right after the 6-byte magic
  testutil::write_bytes(tmp.path / "ver.feat", bad_version);
  CHECK_THROWS_AS(twins::read_feature_file(tmp.path / "ver.feat"), twins::VersionError);
}

TEST_CASE("an empty augmentation policy is the identity") {
  twins::Rng rng(51);
  twins::AugmentationPolicy policy;
  policy.rng_seed = 9;
  const std::vector<MelSpectrogram> batch{testutil::random_spectrogram(rng, 20, 10),
                                          testutil::random_spectrogram(rng, 20, 10)};
  const auto views = twins::make_views(batch, policy, 3);
  REQUIRE(views.a.size() == 2);
  REQUIRE(views.b.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK((views.a[i].values - batch[i].values).cwiseAbs().maxCoeff() == 0.0);
    CHECK((views.b[i].values - batch[i].values).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("degenerate op parameters leave the input bitwise intact") {
  twins::Rng rng(52);
  twins::AugmentationPolicy policy;
  policy.rng_seed = 10;
  policy.mask_value = -23.0;
  policy.ops = {
      {"time_mask", 1.0, {{"max_frames", 0.0}}},
      {"freq_mask", 1.0, {{"max_bins", 0.0}}},
      {"gain", 1.0, {{"lo", 0.0}, {"hi", 0.0}}},
      {"additive_noise", 1.0, {{"sigma", 0.0}}},
  };
  const std::vector<MelSpectrogram> batch{testutil::random_spectrogram(rng, 30, 12)};
  const auto views = twins::make_views(batch, policy, 7);
  CHECK((views.a[0].values - batch[0].values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((views.b[0].values - batch[0].values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("time_mask blanks one contiguous frame span and nothing else") {
  twins::Rng data_rng(53);
  const MelSpectrogram x = testutil::random_spectrogram(data_rng, 24, 16);
  const double mask = -23.025850929940457;
  twins::AugOpSpec op{"time_mask", 1.0, {{"max_frames", 8.0}}};
  int masked_runs = 0;
  for (uint64_t s = 0; s < 40; ++s) {
    twins::Rng rng(s);
    const MelSpectrogram y = twins::apply_op(x, op, mask, rng);
    std::vector<int> masked_cols;
    for (int c = 0; c < x.frames(); ++c) {
      if ((y.values.col(c).array() == mask).all()) {
        masked_cols.push_back(c);
      } else {
        CHECK((y.values.col(c) - x.values.col(c)).cwiseAbs().maxCoeff() == 0.0);
      }
    }
    CHECK(masked_cols.size() <= 8);
    if (!masked_cols.empty()) {
      ++masked_runs;
      CHECK(masked_cols.back() - masked_cols.front() ==
            static_cast<int>(masked_cols.size()) - 1);
    }
  }
  CHECK(masked_runs > 20);  // width 0 is one draw in nine
}

TEST_CASE("freq_mask blanks one contiguous bin span") {
  twins::Rng data_rng(54);
  const MelSpectrogram x = testutil::random_spectrogram(data_rng, 40, 10);
  const double mask = -23.025850929940457;
  twins::AugOpSpec op{"freq_mask", 1.0, {{"max_bins", 12.0}}};
  twins::Rng rng(99);
  const MelSpectrogram y = twins::apply_op(x, op, mask, rng);
  std::vector<int> masked_rows;
  for (int r = 0; r < x.bins(); ++r) {
    if ((y.values.row(r).array() == mask).all())
      masked_rows.push_back(r);
    else
      CHECK((y.values.row(r) - x.values.row(r)).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(masked_rows.size() <= 12);
  if (!masked_rows.empty())
    CHECK(masked_rows.back() - masked_rows.front() ==
          static_cast<int>(masked_rows.size()) - 1);
}

TEST_CASE("gain adds one constant to every cell") {
  twins::Rng data_rng(55);
  const MelSpectrogram x = testutil::random_spectrogram(data_rng, 18, 7);
  twins::AugOpSpec op{"gain", 1.0, {{"lo", 0.7}, {"hi", 0.7}}};
  twins::Rng rng(1);
  const MelSpectrogram y = twins::apply_op(x, op, 0.0, rng);
  const twins::Mat want = x.values.array() + 0.7;
  CHECK((y.values - want).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("additive noise has the requested variance") {
  twins::Rng data_rng(56);
  const MelSpectrogram x = testutil::random_spectrogram(data_rng, 513, 32);
  twins::AugOpSpec op{"additive_noise", 1.0, {{"sigma", 0.1}}};
  twins::Rng rng(7);
  const MelSpectrogram y = twins::apply_op(x, op, 0.0, rng);
  const twins::Mat diff = y.values - x.values;
  const double mean = diff.mean();
  const double var = (diff.array() - mean).square().sum() / (diff.size() - 1);
  CHECK(var == doctest::Approx(0.01).epsilon(0.2));
  CHECK(std::fabs(mean) < 0.01);
}

TEST_CASE("make_views is deterministic and the branches are independent") {
  twins::Rng data_rng(57);
  std::vector<MelSpectrogram> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(testutil::random_spectrogram(data_rng, 20, 10));
  const auto policy = twins::AugmentationPolicy::default_policy(42);

  const auto v1 = twins::make_views(batch, policy, 5);
  const auto v2 = twins::make_views(batch, policy, 5);
  for (size_t i = 0; i < batch.size(); ++i) {
    CHECK((v1.a[i].values - v2.a[i].values).cwiseAbs().maxCoeff() == 0.0);
    CHECK((v1.b[i].values - v2.b[i].values).cwiseAbs().maxCoeff() == 0.0);
  }

  // A different step seed reshuffles the randomness.
  const auto v3 = twins::make_views(batch, policy, 6);
  int changed = 0;
  for (size_t i = 0; i < batch.size(); ++i)
    if ((v1.a[i].values - v3.a[i].values).cwiseAbs().maxCoeff() != 0.0) ++changed;
  CHECK(changed >= 7);

  // The two branches of one item almost never coincide.
  int distinct = 0;
  for (size_t i = 0; i < batch.size(); ++i)
    if ((v1.a[i].values - v1.b[i].values).cwiseAbs().maxCoeff() != 0.0) ++distinct;
  CHECK(distinct >= 7);
}

TEST_CASE("views do not depend on batch composition") {
  twins::Rng data_rng(58);
  const MelSpectrogram x = testutil::random_spectrogram(data_rng, 20, 10);
  const MelSpectrogram y = testutil::random_spectrogram(data_rng, 20, 10);
  const auto policy = twins::AugmentationPolicy::default_policy(11);
  const auto pair_views = twins::make_views({x, y}, policy, 2);
  const auto solo_views = twins::make_views({x}, policy, 2);
  CHECK((pair_views.a[0].values - solo_views.a[0].values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pair_views.b[0].values - solo_views.b[0].values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("augmentation policies serialize and validate") {
  const auto policy = twins::AugmentationPolicy::default_policy(42);
  CHECK(policy.ops.size() == 4);
  CHECK(policy.mask_value == std::log(1e-10));

  const auto j = policy.to_json();
  CHECK(j.at("version").get<int>() == 1);
  const auto back = twins::AugmentationPolicy::from_json(j);
  CHECK(back.to_json() == j);

  auto wrong_version = j;
  wrong_version["version"] = 2;
  CHECK_THROWS_AS(twins::AugmentationPolicy::from_json(wrong_version),
                  twins::VersionError);

  auto missing = j;
  missing.erase("ops");
  CHECK_THROWS_AS(twins::AugmentationPolicy::from_json(missing),
                  twins::InvalidPolicyError);

  twins::AugmentationPolicy bad;
  bad.ops = {{"sharpen", 0.5, {}}};
  CHECK_THROWS_AS(bad.validate(), twins::InvalidPolicyError);
  bad.ops = {{"gain", 1.5, {{"lo", 0.0}, {"hi", 0.0}}}};
  CHECK_THROWS_AS(bad.validate(), twins::InvalidPolicyError);
  bad.ops = {{"gain", 0.5, {{"lo", 1.0}, {"hi", 0.0}}}};
  CHECK_THROWS_AS(bad.validate(), twins::InvalidPolicyError);
}
