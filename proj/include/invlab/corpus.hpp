#pragma once

// Seeded toy exemplar sets standing in for "natural" inputs of the captioner
// and ASR pipelines, plus nearest-exemplar distance statistics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "invlab/audio.hpp"

namespace invlab::corpus {

/// Smooth S x S images in [0, 1]: mid-grey plus three low-frequency cosine
/// gratings and two Gaussian blobs.
inline std::vector<Tensor> smooth_images(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = static_cast<double>(size);
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<Tensor> out;
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<double> px(size * size, 0.5);
    for (int k = 0; k < 3; ++k) {
      const double fx = 2.0 * u(g), fy = 2.0 * u(g), ph = two_pi * u(g), amp = 0.15 * u(g);
      for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c)
          px[r * size + c] += amp * std::cos(two_pi * (fx * c + fy * r) / s + ph);
    }
    for (int k = 0; k < 2; ++k) {
      const double cr = s * u(g), cc = s * u(g), sigma = 3.0 + 5.0 * u(g), amp = 0.6 * u(g) - 0.3;
      for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) {
          const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
          px[r * size + c] += amp * std::exp(-d2 / (2.0 * sigma * sigma));
        }
    }
    for (auto& v : px) v = std::clamp(v, 0.0, 1.0);
    out.emplace_back(Shape{size, size}, std::move(px));
  }
  return out;
}

/// Log-mels of harmonic tones: f0 in [100, 300] Hz, five partials at 0.3/k,
/// a slow tremolo and a white-noise floor of amplitude 1e-3.
inline std::vector<Tensor> harmonic_log_mels(std::size_t count, std::size_t samples, const audio::MelConfig& cfg,
                                             std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1e-3);
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<Tensor> out;
  for (std::size_t n = 0; n < count; ++n) {
    const double f0 = 100.0 + 200.0 * u(g), rate = 1.0 + 4.0 * u(g), depth = 0.5 * u(g);
    std::vector<double> phase(5);
    for (auto& p : phase) p = two_pi * u(g);
    std::vector<double> w(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      const double t = static_cast<double>(i) / cfg.sample_rate;
      double x = 0.0;
      for (int k = 1; k <= 5; ++k) x += 0.3 / k * std::sin(two_pi * k * f0 * t + phase[k - 1]);
      w[i] = x * (1.0 - depth * (0.5 + 0.5 * std::sin(two_pi * rate * t))) + noise(g);
    }
    out.push_back(audio::log_mel(Tensor(Shape{samples}, std::move(w)), cfg).values.detach());
  }
  return out;
}

inline double mean_sq_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("corpus: exemplar and query shapes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.numel());
}

/// Median of the mean squared difference over all unordered exemplar pairs.
inline double median_pairwise_mse(const std::vector<Tensor>& set) {
  if (set.size() < 2) throw ConfigError("corpus: need at least two exemplars");
  std::vector<double> d;
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t j = i + 1; j < set.size(); ++j) d.push_back(mean_sq_diff(set[i], set[j]));
  const auto mid = d.begin() + static_cast<long>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  if (d.size() % 2 == 1) return *mid;
  const double hi = *mid;
  return 0.5 * (hi + *std::max_element(d.begin(), mid));
}

inline double nearest_exemplar_mse(const Tensor& x, const std::vector<Tensor>& set) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : set) best = std::min(best, mean_sq_diff(x, e));
  return best;
}

}  // namespace invlab::corpus
