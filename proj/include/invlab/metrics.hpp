#pragma once

// Consistency metrics: clamped-cosine (CLIPScore-style), greedy-matching
// F1 over token embeddings (BERTScore-style), and a pluggable audio quality
// scorer slot with a log-spectral-distance implementation.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "invlab/audio.hpp"
#include "invlab/interpret.hpp"

namespace invlab {

/// w · max(cos(a, b), 0)
inline double clip_style_score(std::span<const double> a, std::span<const double> b, double w = 2.5) {
  return w * std::max(cosine(a, b), 0.0);
}

struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Greedy matching over rows of cand [m x E] and ref [n x E]: precision is the
/// mean over candidate rows of their best cosine against the reference,
/// recall the converse. No idf weighting. f1 is the harmonic mean when p and
/// r share a sign and 0 otherwise; with mixed signs the raw formula leaves
/// [-1, 1].
inline PrfScore bert_style_f1(const Tensor& cand, const Tensor& ref) {
  if (cand.rank() != 2 || ref.rank() != 2) throw ShapeError("bert_style_f1 expects [rows x E] matrices");
  if (cand.dim(0) == 0 || ref.dim(0) == 0) throw ShapeError("bert_style_f1: empty sequence");
  if (cand.dim(1) != ref.dim(1)) throw ShapeError("bert_style_f1: embedding widths differ");
  const std::size_t m = cand.dim(0), n = ref.dim(0), e = cand.dim(1);
  std::vector<double> sim(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      sim[i * n + j] = cosine(cand.data().subspan(i * e, e), ref.data().subspan(j * e, e));
  PrfScore s;
  for (std::size_t i = 0; i < m; ++i) {
    double best = -1.0;
    for (std::size_t j = 0; j < n; ++j) best = std::max(best, sim[i * n + j]);
    s.precision += best;
  }
  for (std::size_t j = 0; j < n; ++j) {
    double best = -1.0;
    for (std::size_t i = 0; i < m; ++i) best = std::max(best, sim[i * n + j]);
    s.recall += best;
  }
  s.precision /= static_cast<double>(m);
  s.recall /= static_cast<double>(n);
  const double pr = s.precision * s.recall;
  s.f1 = pr > 0.0 ? 2.0 * pr / (s.precision + s.recall) : 0.0;
  return s;
}

/// RMS over STFT cells of 20·log10|X_ref| - 20·log10|X_deg|, magnitudes
/// floored at cfg.log_floor. Zero iff the floored spectra agree.
inline double log_spectral_distance(std::span<const double> ref, std::span<const double> deg,
                                    const audio::MelConfig& cfg) {
  if (ref.size() != deg.size()) throw ShapeError("log_spectral_distance: waveform lengths differ");
  const std::size_t frames = audio::frame_count(ref.size(), cfg);
  if (frames == 0) throw ShapeError("log_spectral_distance: waveform shorter than one window");
  const audio::StftPlan plan(cfg);
  const auto a = plan.forward(ref, frames);
  const auto b = plan.forward(deg, frames);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double la = 20.0 * std::log10(std::max(std::abs(a[i]), cfg.log_floor));
    const double lb = 20.0 * std::log10(std::max(std::abs(b[i]), cfg.log_floor));
    acc += (la - lb) * (la - lb);
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

/// Slot for a perceptual audio metric (e.g. a PESQ wrapper). Must be
/// deterministic for fixed inputs.
class AudioQualityScorer {
 public:
  virtual ~AudioQualityScorer() = default;
  virtual std::string name() const = 0;
  virtual double score(std::span<const double> reference, std::span<const double> degraded,
                       double sample_rate) const = 0;
};

class LogSpectralDistanceScorer final : public AudioQualityScorer {
 public:
  explicit LogSpectralDistanceScorer(audio::MelConfig cfg) : cfg_(cfg) {}
  std::string name() const override { return "lsd"; }
  double score(std::span<const double> reference, std::span<const double> degraded,
               double sample_rate) const override {
    auto cfg = cfg_;
    cfg.sample_rate = sample_rate;
    cfg.fmax = std::min(cfg.fmax, sample_rate / 2.0);
    return log_spectral_distance(reference, degraded, cfg);
  }

 private:
  audio::MelConfig cfg_;
};

/// Embedder pair for clamped-cosine scoring across modalities. Both map
/// their input to a vector in a shared space; outputs must be finite and
/// non-zero.
struct EmbeddingPairScorer {
  std::function<std::vector<double>(const Tensor&)> embed_a;
  std::function<std::vector<double>(const Tensor&)> embed_b;
  double weight = 2.5;

  double operator()(const Tensor& a, const Tensor& b) const {
    const auto ea = embed_a(a);
    const auto eb = embed_b(b);
    return clip_style_score(ea, eb, weight);
  }
};

}  // namespace invlab
