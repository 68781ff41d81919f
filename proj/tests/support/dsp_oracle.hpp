#pragma once

// Straight-line STFT / mel / log-mel reimplementation used as an oracle.
// Evaluates every cos/sin directly; shares no code with invlab::audio.

#include <cmath>
#include <numbers>
#include <vector>

namespace invlab::testing {

struct OracleCfg {
  double sr;
  int n_fft;
  int hop;
  int n_mels;
  double fmin;
  double fmax;
  double floor;
};

inline std::vector<std::vector<double>> oracle_stft_mag(const std::vector<double>& x, const OracleCfg& c) {
  const int frames = (static_cast<int>(x.size()) - c.n_fft) / c.hop + 1;
  const int bins = c.n_fft / 2 + 1;
  std::vector<std::vector<double>> mag(bins, std::vector<double>(frames));
  for (int f = 0; f < frames; ++f)
    for (int k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      for (int j = 0; j < c.n_fft; ++j) {
        const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * j / c.n_fft));
        const double ang = 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * j) % c.n_fft) / c.n_fft;
        re += w * x[f * c.hop + j] * std::cos(ang);
        im -= w * x[f * c.hop + j] * std::sin(ang);
      }
      mag[k][f] = std::sqrt(re * re + im * im);
    }
  return mag;
}

inline std::vector<std::vector<double>> oracle_filterbank(const OracleCfg& c) {
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const int bins = c.n_fft / 2 + 1;
  std::vector<double> edges;
  for (int i = 0; i < c.n_mels + 2; ++i)
    edges.push_back(hz(mel(c.fmin) + (mel(c.fmax) - mel(c.fmin)) * i / (c.n_mels + 1)));
  std::vector<std::vector<double>> fb(c.n_mels, std::vector<double>(bins, 0.0));
  for (int m = 0; m < c.n_mels; ++m)
    for (int k = 0; k < bins; ++k) {
      const double f = k * c.sr / c.n_fft;
      if (f > edges[m] && f <= edges[m + 1]) fb[m][k] = (f - edges[m]) / (edges[m + 1] - edges[m]);
      else if (f > edges[m + 1] && f < edges[m + 2]) fb[m][k] = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
    }
  return fb;
}

inline std::vector<std::vector<double>> oracle_log_mel(const std::vector<double>& x, const OracleCfg& c) {
  const auto mag = oracle_stft_mag(x, c);
  const auto fb = oracle_filterbank(c);
  const std::size_t frames = mag[0].size();
  std::vector<std::vector<double>> out(c.n_mels, std::vector<double>(frames));
  for (int m = 0; m < c.n_mels; ++m)
    for (std::size_t f = 0; f < frames; ++f) {
      double e = 0.0;
      for (std::size_t k = 0; k < mag.size(); ++k) e += fb[m][k] * mag[k][f];
      out[m][f] = std::log10(std::max(e, c.floor));
    }
  return out;
}

inline std::vector<double> sine(double freq, double sr, std::size_t n, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / sr);
  return x;
}

}  // namespace invlab::testing
