#pragma once

#include <optional>
#include <string>
#include <vector>

#include "invlab/audio.hpp"
#include "invlab/ops.hpp"

namespace invlab {

enum class LossKind { xent_autoregressive, mse, mel_spec };
enum class Reduction { mean, sum };
enum class MelNorm { l1, l2 };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::xent_autoregressive: return "xent_autoregressive";
    case LossKind::mse: return "mse";
    case LossKind::mel_spec: return "mel_spec";
  }
  return "?";
}

struct LossSpec {
  LossKind kind = LossKind::mse;
  Reduction reduction = Reduction::mean;
  std::optional<audio::MelConfig> mel_config;
  MelNorm mel_norm = MelNorm::l1;

  void validate() const {
    if ((kind == LossKind::mel_spec) != mel_config.has_value())
      throw ConfigError("mel_config must be present exactly when the loss is mel_spec");
    if (mel_config) mel_config->validate();
  }
};

namespace detail {
inline Tensor reduce(const Tensor& t, Reduction r) {
  return r == Reduction::mean ? mean_all(t) : sum_all(t);
}
}  // namespace detail

/// Teacher-forced cross-entropy: row t of logits [T x V] scores target[t].
inline Tensor xent_autoregressive(const Tensor& logits, const std::vector<std::size_t>& target,
                                  Reduction r = Reduction::mean) {
  if (target.empty()) throw ShapeError("xent_autoregressive: empty target sequence");
  if (logits.rank() != 2 || logits.dim(0) != target.size())
    throw ShapeError("xent_autoregressive: logits " + shape_str(logits.shape()) +
                     " do not match a target of length " + std::to_string(target.size()));
  for (auto id : target)
    if (id >= logits.dim(1))
      throw ShapeError("xent_autoregressive: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(logits.dim(1)));
  return neg(detail::reduce(pick(log_softmax(logits, 1), target), r));
}

inline Tensor mse(const Tensor& pred, const Tensor& target, Reduction r = Reduction::mean) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse: shapes " + shape_str(pred.shape()) + " and " + shape_str(target.shape()) +
                     " differ");
  return detail::reduce(square(sub(pred, target)), r);
}

/// Distance between log-mel spectrograms of two equal-length waveforms.
inline Tensor mel_spec_loss(const Tensor& pred_wave, const Tensor& target_wave, const audio::MelConfig& cfg,
                            MelNorm norm = MelNorm::l1, Reduction r = Reduction::mean) {
  if (pred_wave.shape() != target_wave.shape())
    throw ShapeError("mel_spec_loss: waveform lengths differ");
  if (pred_wave.rank() != 1) throw ShapeError("mel_spec_loss expects 1-D waveforms");
  if (pred_wave.numel() < cfg.n_fft) throw ShapeError("mel_spec_loss: waveform shorter than one window");
  auto a = audio::log_mel(pred_wave, cfg).values;
  auto b = audio::log_mel(target_wave, cfg).values;
  auto d = sub(a, b);
  return detail::reduce(norm == MelNorm::l1 ? abs(d) : square(d), r);
}

}  // namespace invlab
