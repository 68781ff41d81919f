#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invlab/tensor.hpp"

namespace invlab {

enum class OptimizerKind { gd, adam, adamw };

inline const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::gd: return "gd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  return "?";
}

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "gd") return OptimizerKind::gd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw ConfigError("unknown optimizer '" + s + "' (expected gd, adam or adamw)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Decoupled decay; only read by adamw.
  double weight_decay = 0.0;
  // Global L2 clip over all parameter groups; off unless set.
  std::optional<double> max_grad_norm;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate must be a finite positive number");
    if (kind == OptimizerKind::gd) return;
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (max_grad_norm && !(*max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
  }
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

namespace detail {

inline std::vector<std::span<const double>> checked_grads(std::span<Tensor> params) {
  std::vector<std::span<const double>> grads;
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw Error("parameter " + std::to_string(i) + " has no gradient");
    auto g = params[i].grad();
    if (!all_finite(g)) throw NonFiniteError("parameter " + std::to_string(i) + " has a non-finite gradient", i);
    grads.push_back(g);
  }
  return grads;
}

inline double clip_factor(const std::vector<std::span<const double>>& grads,
                          const std::optional<double>& max_norm) {
  if (!max_norm) return 1.0;
  double sq = 0.0;
  for (auto g : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  return norm > *max_norm ? *max_norm / norm : 1.0;
}

inline void prepare_state(std::span<Tensor> params, OptimizerState& st) {
  if (st.m.empty() && st.v.empty() && st.step == 0) {
    for (auto& p : params) {
      st.m.emplace_back(p.numel(), 0.0);
      st.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (st.m.size() != params.size() || st.v.size() != params.size())
    throw ShapeError("optimizer state tracks a different number of parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (st.m[i].size() != params[i].numel() || st.v[i].size() != params[i].numel())
      throw ShapeError("optimizer state shape does not mirror parameter " + std::to_string(i));
  }
}

inline void adam_family(std::span<Tensor> params, const OptimizerConfig& cfg, OptimizerState& st,
                        double weight_decay) {
  auto grads = checked_grads(params);
  prepare_state(params, st);
  const double c = clip_factor(grads, cfg.max_grad_norm);
  st.step += 1;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto x = params[p].mutable_data();
    auto& m = st.m[p];
    auto& v = st.v[p];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = grads[p][i] * c;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      const double u = mhat / (std::sqrt(vhat) + cfg.epsilon);
      if (weight_decay < 0.0) {
        x[i] -= cfg.learning_rate * u;
      } else {
        x[i] -= cfg.learning_rate * (u + weight_decay * x[i]);
      }
    }
  }
}

}  // namespace detail

/// x <- x - lr * dJ/dx for every component of every parameter.
inline void gd_step(std::span<Tensor> params, const OptimizerConfig& cfg) {
  auto grads = detail::checked_grads(params);
  const double c = detail::clip_factor(grads, cfg.max_grad_norm);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto x = params[p].mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= cfg.learning_rate * (grads[p][i] * c);
  }
}

inline void adam_step(std::span<Tensor> params, const OptimizerConfig& cfg, OptimizerState& st) {
  detail::adam_family(params, cfg, st, -1.0);
}

/// Adam with decay decoupled from the adaptive term: x <- x - lr*(m̂/(√v̂+ε) + λx).
inline void adamw_step(std::span<Tensor> params, const OptimizerConfig& cfg, OptimizerState& st) {
  detail::adam_family(params, cfg, st, cfg.weight_decay);
}

inline void optimizer_step(std::span<Tensor> params, const OptimizerConfig& cfg, OptimizerState& st) {
  switch (cfg.kind) {
    case OptimizerKind::gd:
      gd_step(params, cfg);
      st.step += 1;
      break;
    case OptimizerKind::adam: adam_step(params, cfg, st); break;
    case OptimizerKind::adamw: adamw_step(params, cfg, st); break;
  }
}

}  // namespace invlab
