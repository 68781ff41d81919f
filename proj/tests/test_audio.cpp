#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "invlab/audio.hpp"
#include "invlab/wav.hpp"
#include "support/dsp_oracle.hpp"
#include "support/fd.hpp"

using namespace invlab;
using namespace invlab::audio;
using invlab::testing::sine;

namespace {

MelConfig plain_16k(std::size_t n_mels = 40) {
  MelConfig c;
  c.n_mels = n_mels;
  return c;
}

double column_energy(const Tensor& mag, std::size_t f, std::size_t k0, std::size_t k1) {
  const std::size_t frames = mag.dim(1);
  double e = 0.0;
  for (std::size_t k = k0; k <= k1; ++k) e += mag[k * frames + f] * mag[k * frames + f];
  return e;
}

}  // namespace

TEST(Stft, ZeroWaveGivesZeroMagnitude) {
  auto m = stft_mag(Tensor::zeros({1000}), plain_16k());
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(Stft, FrameCountFormula) {
  const auto cfg = plain_16k();
  for (std::size_t n : {400u, 401u, 559u, 560u, 1000u, 16000u}) {
    auto m = stft_mag(Tensor::zeros({n}), cfg);
    EXPECT_EQ(m.dim(1), (n - 400) / 160 + 1);
    EXPECT_EQ(m.dim(0), 201u);
  }
  EXPECT_THROW(stft_mag(Tensor::zeros({399}), cfg), ShapeError);
}

TEST(Stft, BinCentreSinePeaksInItsBin) {
  // A Hann window spreads a bin-centred tone over k-1..k+1 with 2/3 of the
  // energy in bin k, so the 90% bound is checked on that three-bin group.
  const auto cfg = plain_16k();
  for (std::size_t k : {5u, 20u, 57u, 150u}) {
    const double f0 = static_cast<double>(k) * 16000.0 / 400.0;
    auto m = stft_mag(Tensor::vector(sine(f0, 16000.0, 4000)), cfg);
    for (std::size_t f = 0; f < m.dim(1); ++f) {
      const double total = column_energy(m, f, 0, 200);
      std::size_t best = 0;
      for (std::size_t b = 0; b < 201; ++b)
        if (m.at(b, f) > m.at(best, f)) best = b;
      EXPECT_EQ(best, k);
      EXPECT_GE(column_energy(m, f, k - 1, k + 1) / total, 0.9);
      EXPECT_NEAR(column_energy(m, f, k, k) / total, 2.0 / 3.0, 1e-6);
    }
  }
}

TEST(Stft, ParsevalPerFrame) {
  std::mt19937_64 gen(9);
  const auto cfg = plain_16k();
  const auto w = hann_window(400);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = invlab::testing::random_tensor({2000}, gen);
    auto m = stft_mag(x, cfg);
    double spec = 0.0, time = 0.0;
    for (std::size_t f = 0; f < m.dim(1); ++f) {
      for (std::size_t k = 0; k < 201; ++k) {
        const double e = m.at(k, f) * m.at(k, f);
        spec += (k == 0 || k == 200) ? e : 2.0 * e;
      }
      for (std::size_t j = 0; j < 400; ++j) time += std::pow(w[j] * x[f * 160 + j], 2);
    }
    EXPECT_NEAR(spec / 400.0, time, 0.05 * time);
    EXPECT_NEAR(spec / 400.0, time, 1e-9 * time);
  }
}

TEST(Stft, MatchesOracle) {
  std::mt19937_64 gen(2);
  auto x = invlab::testing::random_tensor({900}, gen);
  auto m = stft_mag(x, plain_16k());
  auto o = invlab::testing::oracle_stft_mag(x.values(), {16000.0, 400, 160, 40, 0.0, 8000.0, 1e-10});
  for (std::size_t k = 0; k < 201; ++k)
    for (std::size_t f = 0; f < m.dim(1); ++f) EXPECT_NEAR(m.at(k, f), o[k][f], 1e-10);
}

TEST(Mel, FormulaValue) {
  EXPECT_NEAR(hz_to_mel(1000.0), 999.99, 0.01);
  EXPECT_NEAR(hz_to_mel(1000.0), 2595.0 * std::log10(1.0 + 1000.0 / 700.0), 1e-12);
  EXPECT_NEAR(mel_to_hz(hz_to_mel(3210.0)), 3210.0, 1e-9);
  EXPECT_NEAR(mel_to_hz(hz_to_mel(3210.0, MelScale::slaney), MelScale::slaney), 3210.0, 1e-9);
  EXPECT_NEAR(hz_to_mel(1000.0, MelScale::slaney), 15.0, 1e-12);
}

TEST(Mel, RowsPositiveAndCentresIncreasing) {
  for (const auto& cfg : {plain_16k(), whisper_preset(), toy_asr_preset(), toy_tts_preset()}) {
    auto fb = mel_filterbank(cfg);
    ASSERT_EQ(fb.shape(), (Shape{cfg.n_mels, cfg.bins()}));
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double row = 0.0;
      for (std::size_t k = 0; k < cfg.bins(); ++k) {
        EXPECT_GE(fb.at(m, k), 0.0);
        row += fb.at(m, k);
      }
      EXPECT_GT(row, 0.0) << "filter " << m;
    }
    auto c = mel_centers(cfg);
    for (std::size_t m = 1; m < c.size(); ++m) EXPECT_GT(c[m], c[m - 1]);
  }
}

TEST(Mel, TooManyFiltersIsAnError) {
  auto cfg = plain_16k(128);  // HTK spacing at n_fft=400 leaves low filters empty
  EXPECT_THROW(mel_filterbank(cfg), ConfigError);
  cfg.n_mels = 500;
  cfg.scale = MelScale::slaney;
  EXPECT_THROW(mel_filterbank(cfg), ConfigError);
}

TEST(Mel, MatchesOracleFilterbank) {
  auto fb = mel_filterbank(plain_16k());
  auto o = invlab::testing::oracle_filterbank({16000.0, 400, 160, 40, 0.0, 8000.0, 1e-10});
  for (std::size_t m = 0; m < 40; ++m)
    for (std::size_t k = 0; k < 201; ++k) EXPECT_NEAR(fb.at(m, k), o[m][k], 1e-12);
}

TEST(LogMel, SilenceIsFloorPlane) {
  auto s = log_mel(Tensor::zeros({16000}), toy_asr_preset());
  for (double v : s.values.data()) EXPECT_EQ(v, -10.0);
}

TEST(LogMel, WhisperThirtySecondsShape) {
  auto s = log_mel(Tensor::vector(sine(440.0, 16000.0, 480000, 0.1)), whisper_preset());
  EXPECT_EQ(s.values.shape(), (Shape{128, 3000}));
  for (double v : s.values.data()) EXPECT_GE(v, -10.0);
}

TEST(LogMel, AmplitudeHomogeneity) {
  const auto cfg = toy_asr_preset();
  std::mt19937_64 gen(4);
  auto x = invlab::testing::random_tensor({4000}, gen, -0.3, 0.3);
  auto a = log_mel(x, cfg).values;
  auto b = log_mel(scale(x, 2.0), cfg).values;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a[i] > -9.0) EXPECT_NEAR(b[i] - a[i], std::log10(2.0), 1e-9);
  }
}

TEST(LogMel, DifferentiableEndToEnd) {
  const auto cfg = toy_asr_preset();
  std::mt19937_64 gen(12);
  auto x = invlab::testing::random_tensor({1600}, gen, -0.5, 0.5);
  auto w = invlab::testing::random_tensor({16, 10}, gen);
  auto rep = invlab::testing::fd_check(
      [&](auto& in) { return sum_all(mul(log_mel(in[0], cfg).values, w)); }, {x}, 64, 1, invlab::testing::kFdStepDsp);
  EXPECT_LT(rep.max_rel_err, invlab::testing::kFdRelTol) << rep.worst;
}

TEST(GriffinLim, ZeroInputGivesZeroWave) {
  const auto cfg = toy_tts_preset();
  Spectrogram lin{Tensor::zeros({cfg.bins(), 10}), cfg, SpecDomain::linear};
  auto y = griffin_lim(lin, 8);
  EXPECT_EQ(y.size(), 9u * 64u + 256u);
  for (double v : y) EXPECT_EQ(v, 0.0);
  Spectrogram lm{Tensor::full({cfg.n_mels, 10}, -10.0), cfg, SpecDomain::log_mel};
  for (double v : griffin_lim(lm, 4)) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(griffin_lim(lin, 0), ConfigError);
}

// 1 s of a 440 Hz tone at the Whisper STFT geometry.
TEST(GriffinLim, SineBenchmark) {
  const auto cfg = plain_16k();
  auto mag = stft_mag(Tensor::vector(sine(440.0, 16000.0, 16000)), cfg);
  Spectrogram s{mag, cfg, SpecDomain::linear};
  auto y8 = griffin_lim(s, 8);
  auto y32 = griffin_lim(s, 32);
  auto y64 = griffin_lim(s, 64);
  EXPECT_EQ(y32.size(), (mag.dim(1) - 1) * 160 + 400);
  const double e8 = spectral_convergence(y8, mag, cfg);
  const double e32 = spectral_convergence(y32, mag, cfg);
  const double e64 = spectral_convergence(y64, mag, cfg);
  EXPECT_LT(e32, 0.1);
  EXPECT_LE(e64, e8);
  EXPECT_EQ(griffin_lim(s, 32), y32);
  // The classic iteration (no momentum) also improves with iterations.
  EXPECT_LE(spectral_convergence(griffin_lim(s, 64, 0.0), mag, cfg),
            spectral_convergence(griffin_lim(s, 8, 0.0), mag, cfg));
}

TEST(GriffinLim, FromLogMelHasExpectedLength) {
  const auto cfg = toy_tts_preset();
  auto s = log_mel(Tensor::vector(sine(500.0, 8000.0, 2048, 0.5)), cfg);
  auto y = griffin_lim(s, 8);
  EXPECT_EQ(y.size(), (s.frames() - 1) * cfg.hop + cfg.n_fft);
  double e = 0.0;
  for (double v : y) e += v * v;
  EXPECT_GT(e, 0.0);
}

TEST(Wav, RoundTripWithinQuantisation) {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(5000);
  for (auto& v : x) v = u(gen);
  for (std::uint32_t sr : {8000u, 16000u, 24000u}) {
    const auto path = std::filesystem::temp_directory_path() / ("invlab_wav_" + std::to_string(sr) + ".wav");
    write_wav(path, x, sr);
    auto back = read_wav(path);
    EXPECT_EQ(back.sample_rate, sr);
    ASSERT_EQ(back.samples.size(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(back.samples[i] - x[i]), 1.0 / 32768.0);
    std::filesystem::remove(path);
  }
}

TEST(Wav, MalformedInputsRejected) {
  EXPECT_THROW(decode_wav("RIFF"), FormatError);
  auto bytes = encode_wav({0.0, 0.5}, 16000);
  auto stereo = bytes;
  stereo[22] = 2;  // channel count
  EXPECT_THROW(decode_wav(stereo), FormatError);
  auto float_fmt = bytes;
  float_fmt[20] = 3;  // IEEE float format tag
  EXPECT_THROW(decode_wav(float_fmt), FormatError);
  EXPECT_THROW(read_wav("/nonexistent/x.wav"), Error);
}
