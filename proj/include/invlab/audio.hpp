#pragma once

// STFT, mel filterbank, log-mel spectrogram and Griffin-Lim reconstruction.
//
// The forward chain (stft_mag -> mel -> log10) is differentiable so it can sit
// inside an inversion objective. Griffin-Lim works on plain buffers.

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "invlab/ops.hpp"

namespace invlab::audio {

enum class MelScale { htk, slaney };

struct MelConfig {
  double sample_rate = 16000.0;
  std::size_t n_fft = 400;
  std::size_t hop = 160;
  std::size_t n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;
  // Reflect-pad n_fft/2 on both sides and drop the trailing frame, so that
  // N samples yield N/hop frames.
  bool center = false;
  MelScale scale = MelScale::htk;

  std::size_t bins() const { return n_fft / 2 + 1; }

  void validate() const {
    if (!(sample_rate > 0.0)) throw ConfigError("sample_rate must be positive");
    if (n_fft < 2) throw ConfigError("n_fft must be at least 2");
    if (hop == 0 || hop > n_fft) throw ConfigError("hop must lie in [1, n_fft]");
    if (n_mels < 1) throw ConfigError("n_mels must be at least 1");
    if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
      throw ConfigError("need 0 <= fmin < fmax <= sample_rate/2");
    if (!(log_floor > 0.0)) throw ConfigError("log_floor must be positive");
  }

  bool operator==(const MelConfig&) const = default;
};

/// 16 kHz, 25 ms window, 10 ms hop, 128 Slaney mels; 30 s -> 128 x 3000.
inline MelConfig whisper_preset() {
  MelConfig c;
  c.sample_rate = 16000.0;
  c.n_fft = 400;
  c.hop = 160;
  c.n_mels = 128;
  c.fmin = 0.0;
  c.fmax = 8000.0;
  c.center = true;
  c.scale = MelScale::slaney;
  return c;
}

/// Whisper geometry at 16 mels; 1 s -> 16 x 100.
inline MelConfig toy_asr_preset() {
  MelConfig c = whisper_preset();
  c.n_mels = 16;
  c.scale = MelScale::htk;
  return c;
}

inline MelConfig toy_tts_preset() {
  MelConfig c;
  c.sample_rate = 8000.0;
  c.n_fft = 256;
  c.hop = 64;
  c.n_mels = 20;
  c.fmin = 0.0;
  c.fmax = 4000.0;
  return c;
}

inline double hz_to_mel(double hz, MelScale s = MelScale::htk) {
  if (s == MelScale::htk) return 2595.0 * std::log10(1.0 + hz / 700.0);
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp, logstep = std::log(6.4) / 27.0;
  return hz >= min_log_hz ? min_log_mel + std::log(hz / min_log_hz) / logstep : hz / f_sp;
}

inline double mel_to_hz(double mel, MelScale s = MelScale::htk) {
  if (s == MelScale::htk) return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp, logstep = std::log(6.4) / 27.0;
  return mel >= min_log_mel ? min_log_hz * std::exp(logstep * (mel - min_log_mel)) : mel * f_sp;
}

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

inline std::size_t frame_count(std::size_t n_samples, const MelConfig& cfg) {
  if (n_samples < cfg.n_fft) return 0;
  return (n_samples - cfg.n_fft) / cfg.hop + 1;
}

/// Windowed real DFT of every frame, with precomputed twiddles.
class StftPlan {
 public:
  explicit StftPlan(const MelConfig& cfg)
      : n_(cfg.n_fft), hop_(cfg.hop), bins_(cfg.bins()), window_(hann_window(cfg.n_fft)),
        cos_(n_), sin_(n_) {
    for (std::size_t j = 0; j < n_; ++j) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_);
      cos_[j] = std::cos(a);
      sin_[j] = std::sin(a);
    }
  }

  std::size_t n_fft() const { return n_; }
  std::size_t hop() const { return hop_; }
  std::size_t bins() const { return bins_; }
  const std::vector<double>& window() const { return window_; }

  /// Complex spectrum laid out [bins x frames] (bin-major).
  std::vector<std::complex<double>> forward(std::span<const double> x, std::size_t frames) const {
    std::vector<std::complex<double>> out(bins_ * frames);
    std::vector<double> seg(n_);
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t j = 0; j < n_; ++j) seg[j] = window_[j] * x[f * hop_ + j];
      for (std::size_t k = 0; k < bins_; ++k) {
        double re = 0.0, im = 0.0;
        std::size_t idx = 0;
        for (std::size_t j = 0; j < n_; ++j) {
          re += seg[j] * cos_[idx];
          im -= seg[j] * sin_[idx];
          idx += k;
          if (idx >= n_) idx -= n_;
        }
        out[k * frames + f] = {re, im};
      }
    }
    return out;
  }

  /// Inverse of forward() by windowed overlap-add with squared-window
  /// normalisation. Output has (frames-1)*hop + n_fft samples.
  std::vector<double> inverse(const std::vector<std::complex<double>>& spec, std::size_t frames) const {
    const std::size_t len = (frames - 1) * hop_ + n_;
    std::vector<double> y(len, 0.0), wsum(len, 0.0), seg(n_);
    const double inv_n = 1.0 / static_cast<double>(n_);
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t j = 0; j < n_; ++j) {
        double acc = 0.0;
        std::size_t idx = 0;
        for (std::size_t k = 0; k < bins_; ++k) {
          const auto c = spec[k * frames + f];
          // Hermitian symmetry: interior bins appear twice in the full spectrum.
          const bool edge = k == 0 || (n_ % 2 == 0 && k == n_ / 2);
          const double w = edge ? 1.0 : 2.0;
          acc += w * (c.real() * cos_[idx] - c.imag() * sin_[idx]);
          idx += j;
          if (idx >= n_) idx -= n_;
        }
        seg[j] = acc * inv_n;
      }
      for (std::size_t j = 0; j < n_; ++j) {
        y[f * hop_ + j] += window_[j] * seg[j];
        wsum[f * hop_ + j] += window_[j] * window_[j];
      }
    }
    for (std::size_t i = 0; i < len; ++i) y[i] = wsum[i] > 1e-10 ? y[i] / wsum[i] : 0.0;
    return y;
  }

  const std::vector<double>& cos_table() const { return cos_; }
  const std::vector<double>& sin_table() const { return sin_; }

 private:
  std::size_t n_, hop_, bins_;
  std::vector<double> window_, cos_, sin_;
};

namespace detail {

inline Tensor stft_mag_frames(const Tensor& wave, const MelConfig& cfg, std::size_t frames) {
  const StftPlan plan(cfg);
  const std::size_t bins = plan.bins(), n = plan.n_fft(), hop = plan.hop();
  auto spec = plan.forward(wave.data(), frames);
  std::vector<double> mag(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) mag[i] = std::abs(spec[i]);
  return make_op_result(
      Shape{bins, frames}, std::move(mag), "stft_mag", {wave},
      [plan, spec = std::move(spec), bins, n, hop, frames](invlab::detail::Node& self) {
        double* g = invlab::detail::input_grad(self, 0);
        if (!g) return;
        const auto& w = plan.window();
        const auto& ct = plan.cos_table();
        const auto& st = plan.sin_table();
        std::vector<double> a(bins), b(bins);
        for (std::size_t f = 0; f < frames; ++f) {
          // d|X|/dx_j = w_j (Re X cos - Im X sin) / |X|; |X| == 0 uses subgradient 0.
          for (std::size_t k = 0; k < bins; ++k) {
            const auto c = spec[k * frames + f];
            const double m = self.value[k * frames + f];
            const double s = m > 0.0 ? self.grad[k * frames + f] / m : 0.0;
            a[k] = s * c.real();
            b[k] = s * c.imag();
          }
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            std::size_t idx = 0;
            for (std::size_t k = 0; k < bins; ++k) {
              acc += a[k] * ct[idx] - b[k] * st[idx];
              idx += j;
              if (idx >= n) idx -= n;
            }
            g[f * hop + j] += w[j] * acc;
          }
        }
      });
}

inline Tensor reflect_pad(const Tensor& wave, std::size_t pad) {
  const std::size_t n = wave.numel();
  if (n <= pad) throw ShapeError("reflect_pad: signal shorter than padding");
  std::vector<std::size_t> src(n + 2 * pad);
  for (std::size_t i = 0; i < src.size(); ++i) {
    long j = static_cast<long>(i) - static_cast<long>(pad);
    if (j < 0) j = -j;
    if (j >= static_cast<long>(n)) j = 2 * (static_cast<long>(n) - 1) - j;
    src[i] = static_cast<std::size_t>(j);
  }
  const std::size_t len = src.size();
  return gather(wave, std::move(src), Shape{len});
}

}  // namespace detail

/// Hann-windowed magnitude spectrogram, [n_fft/2+1 x frames] with
/// frames = floor((N - n_fft)/hop) + 1. No padding is applied.
inline Tensor stft_mag(const Tensor& wave, const MelConfig& cfg) {
  cfg.validate();
  if (wave.rank() != 1) throw ShapeError("stft_mag expects a 1-D waveform");
  if (wave.numel() < cfg.n_fft)
    throw ShapeError("waveform of " + std::to_string(wave.numel()) +
                     " samples is shorter than one window of " + std::to_string(cfg.n_fft));
  return detail::stft_mag_frames(wave, cfg, frame_count(wave.numel(), cfg));
}

/// Triangular filters with centres equally spaced on the mel scale,
/// [n_mels x n_fft/2+1], peak weight 1.
inline Tensor mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.bins();
  const double lo = hz_to_mel(cfg.fmin, cfg.scale), hi = hz_to_mel(cfg.fmax, cfg.scale);
  std::vector<double> pts(cfg.n_mels + 2);
  for (std::size_t i = 0; i < pts.size(); ++i)
    pts[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1),
                       cfg.scale);
  std::vector<double> w(cfg.n_mels * bins, 0.0);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = pts[m], centre = pts[m + 1], right = pts[m + 2];
    double row = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      const double up = (f - left) / (centre - left);
      const double down = (right - f) / (right - centre);
      const double v = std::max(0.0, std::min(up, down));
      w[m * bins + k] = v;
      row += v;
    }
    if (row <= 0.0) {
      throw ConfigError("mel filter " + std::to_string(m) + " covers no FFT bin; n_mels=" +
                        std::to_string(cfg.n_mels) + " is too large for n_fft=" +
                        std::to_string(cfg.n_fft));
    }
  }
  return Tensor(Shape{cfg.n_mels, bins}, std::move(w));
}

/// Frequencies (Hz) of each filter's apex.
inline std::vector<double> mel_centers(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin, cfg.scale), hi = hz_to_mel(cfg.fmax, cfg.scale);
  std::vector<double> c(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m)
    c[m] = mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) / static_cast<double>(cfg.n_mels + 1),
                     cfg.scale);
  return c;
}

enum class SpecDomain { log_mel, linear };

struct Spectrogram {
  Tensor values;  // [n_mels x frames] log10 domain, or [bins x frames] linear magnitude
  MelConfig config;
  SpecDomain domain = SpecDomain::log_mel;

  std::size_t frames() const { return values.dim(1); }
};

/// Number of frames log_mel produces for n samples.
inline std::size_t log_mel_frames(std::size_t n_samples, const MelConfig& cfg) {
  return cfg.center ? n_samples / cfg.hop : frame_count(n_samples, cfg);
}

/// Magnitude spectrogram with log_mel's framing (centre padding when configured).
inline Tensor framed_stft_mag(const Tensor& wave, const MelConfig& cfg) {
  cfg.validate();
  if (wave.rank() != 1) throw ShapeError("expected a 1-D waveform");
  if (!cfg.center) return stft_mag(wave, cfg);
  const std::size_t frames = log_mel_frames(wave.numel(), cfg);
  if (frames == 0) throw ShapeError("waveform shorter than one hop");
  auto padded = detail::reflect_pad(wave, cfg.n_fft / 2);
  return detail::stft_mag_frames(padded, cfg, frames);
}

/// log10(max(mel · |STFT|, log_floor)).
inline Spectrogram log_mel(const Tensor& wave, const MelConfig& cfg) {
  auto mag = framed_stft_mag(wave, cfg);
  auto mel = matmul(mel_filterbank(cfg), mag);
  auto lg = log10(clamp_min(mel, cfg.log_floor));
  return Spectrogram{lg, cfg, SpecDomain::log_mel};
}

/// ‖|STFT(x)| - M‖ / ‖M‖ for a linear magnitude target M laid out [bins x frames].
inline double spectral_convergence(std::span<const double> wave, const Tensor& target_mag,
                                   const MelConfig& cfg) {
  const StftPlan plan(cfg);
  const std::size_t frames = target_mag.dim(1);
  if (frame_count(wave.size(), cfg) < frames) throw ShapeError("waveform too short for target");
  auto spec = plan.forward(wave, frames);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const double d = std::abs(spec[i]) - target_mag[i];
    num += d * d;
    den += target_mag[i] * target_mag[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

/// Lifts mel-domain energies [n_mels x frames] to non-negative linear
/// magnitudes [bins x frames] by projected-gradient NNLS on ‖F s - e‖².
inline Tensor mel_to_linear(const Tensor& mel_energy, const MelConfig& cfg, int iterations = 200) {
  const Tensor fb = mel_filterbank(cfg);
  const std::size_t nm = cfg.n_mels, bins = cfg.bins(), frames = mel_energy.dim(1);
  if (mel_energy.dim(0) != nm) throw ShapeError("mel_to_linear: mel rows do not match n_mels");
  const auto& F = fb.values();
  const auto& E = mel_energy.values();
  // FᵀF and Fᵀe are shared across frames.
  std::vector<double> gram(bins * bins, 0.0);
  for (std::size_t m = 0; m < nm; ++m)
    for (std::size_t i = 0; i < bins; ++i) {
      const double a = F[m * bins + i];
      if (a == 0.0) continue;
      for (std::size_t j = 0; j < bins; ++j) gram[i * bins + j] += a * F[m * bins + j];
    }
  // Lipschitz constant via power iteration.
  std::vector<double> u(bins, 1.0), tmp(bins);
  double lip = 1.0;
  for (int it = 0; it < 100; ++it) {
    double nrm = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < bins; ++j) s += gram[i * bins + j] * u[j];
      tmp[i] = s;
      nrm += s * s;
    }
    nrm = std::sqrt(nrm);
    if (nrm == 0.0) break;
    lip = nrm;
    for (std::size_t i = 0; i < bins; ++i) u[i] = tmp[i] / nrm;
  }
  const double step = 1.0 / lip;
  std::vector<double> out(bins * frames, 0.0);
  std::vector<double> fte(bins), s(bins), y(bins), prev(bins), grad(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < bins; ++i) {
      double acc = 0.0;
      for (std::size_t m = 0; m < nm; ++m) acc += F[m * bins + i] * E[m * frames + f];
      fte[i] = acc;
    }
    std::fill(s.begin(), s.end(), 0.0);
    y = s;
    double t = 1.0;
    for (int it = 0; it < iterations; ++it) {
      for (std::size_t i = 0; i < bins; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < bins; ++j) acc += gram[i * bins + j] * y[j];
        grad[i] = acc - fte[i];
      }
      prev = s;
      for (std::size_t i = 0; i < bins; ++i) s[i] = std::max(0.0, y[i] - step * grad[i]);
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      for (std::size_t i = 0; i < bins; ++i) y[i] = s[i] + ((t - 1.0) / tn) * (s[i] - prev[i]);
      t = tn;
    }
    for (std::size_t i = 0; i < bins; ++i) out[i * frames + f] = s[i];
  }
  return Tensor(Shape{bins, frames}, std::move(out));
}

/// Griffin-Lim phase retrieval from zero initial phase, with the fast
/// (momentum) update; momentum = 0 gives the classic iteration. Accepts a linear
/// magnitude spectrogram or a log-mel one (lifted with mel_to_linear first).
/// Returns (frames-1)*hop + n_fft samples.
inline std::vector<double> griffin_lim(const Spectrogram& spec, int iterations, double momentum = 0.99) {
  if (iterations < 1) throw ConfigError("griffin_lim needs at least one iteration");
  if (!(momentum >= 0.0 && momentum < 2.0)) throw ConfigError("griffin_lim momentum must lie in [0, 2)");
  const MelConfig& cfg = spec.config;
  cfg.validate();
  Tensor mag = spec.values;
  if (spec.domain == SpecDomain::log_mel) {
    std::vector<double> e(spec.values.numel());
    const double floor_log = std::log10(cfg.log_floor);
    for (std::size_t i = 0; i < e.size(); ++i) {
      const double lv = spec.values[i];
      e[i] = lv <= floor_log ? 0.0 : std::pow(10.0, lv);
    }
    mag = mel_to_linear(Tensor(spec.values.shape(), std::move(e)), cfg);
  }
  if (mag.rank() != 2 || mag.dim(0) != cfg.bins())
    throw ShapeError("griffin_lim: magnitude rows must equal n_fft/2+1");
  const std::size_t frames = mag.dim(1);
  const StftPlan plan(cfg);
  const auto& M = mag.values();
  std::vector<std::complex<double>> X(M.size());
  for (std::size_t i = 0; i < M.size(); ++i) X[i] = {M[i], 0.0};
  std::vector<double> y = plan.inverse(X, frames);
  // Accelerated update: extrapolate the consistent spectrum by `momentum`
  // times its last change before projecting onto the target magnitudes.
  std::vector<std::complex<double>> prev;
  for (int it = 0; it < iterations; ++it) {
    auto Y = plan.forward(y, frames);
    auto T = Y;
    if (!prev.empty())
      for (std::size_t i = 0; i < Y.size(); ++i) T[i] = Y[i] + momentum * (Y[i] - prev[i]);
    prev = std::move(Y);
    for (std::size_t i = 0; i < T.size(); ++i) {
      const double a = std::abs(T[i]);
      X[i] = a > 0.0 ? M[i] * (T[i] / a) : std::complex<double>(M[i], 0.0);
    }
    y = plan.inverse(X, frames);
  }
  return y;
}

}  // namespace invlab::audio
