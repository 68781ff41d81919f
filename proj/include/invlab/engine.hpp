#pragma once

// Input-space optimisation loop: x̂ = argmin_x L(f(x), y) with the model frozen.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "invlab/digest.hpp"
#include "invlab/losses.hpp"
#include "invlab/models.hpp"
#include "invlab/optim.hpp"

namespace invlab {

struct Initialization {
  enum class Kind { gaussian, base_input };
  Kind kind = Kind::gaussian;
  std::vector<Tensor> base;  // one tensor per input group, base_input only
  std::uint64_t seed = 0;
};

/// Phrase token ids without the end token; the objective appends it.
struct TokenTarget {
  std::vector<std::size_t> ids;
};

using Target = std::variant<TokenTarget, Tensor>;

struct BoxProjection {
  double lo = 0.0;
  double hi = 1.0;
};

struct InversionProblem {
  std::shared_ptr<const AdapterModel> model;
  Target target;
  LossSpec loss;
  Initialization init;
  OptimizerConfig optimizer;
  std::vector<std::size_t> schedule{0};
  std::size_t max_steps = 0;
  // Off by default: inputs are optimised unconstrained.
  std::optional<BoxProjection> box;
  double divergence_threshold = 1e12;

  void validate() const {
    if (!model) throw ConfigError("problem has no model");
    loss.validate();
    optimizer.validate();
    if (loss.kind != legal_loss(model->kind()))
      throw ConfigError(std::string("loss ") + to_string(loss.kind) + " is not legal for the " +
                        to_string(model->kind()) + " pipeline");
    if (model->emits_tokens()) {
      const auto* t = std::get_if<TokenTarget>(&target);
      if (!t) throw ConfigError("token pipelines need a token target");
      if (t->ids.empty()) throw ConfigError("token target is empty");
      if (t->ids.size() + 1 > model->max_length())
        throw ConfigError("token target longer than the decoder allows (" +
                          std::to_string(model->max_length() - 1) + " tokens)");
      const std::size_t v = model->output_shape().at(1);
      for (auto id : t->ids) {
        if (id >= v) throw ConfigError("target token id " + std::to_string(id) + " outside vocabulary");
        if (id == kEndToken) throw ConfigError("target phrase may not contain the end token");
      }
    } else {
      const auto* t = std::get_if<Tensor>(&target);
      if (!t) throw ConfigError("dense pipelines need a tensor target");
      if (t->shape() != model->output_shape())
        throw ConfigError("target shape " + shape_str(t->shape()) + " differs from model output " +
                          shape_str(model->output_shape()));
    }
    if (init.kind == Initialization::Kind::base_input) {
      const auto& groups = model->input_groups();
      if (init.base.size() != groups.size()) throw ConfigError("base_input needs one tensor per input group");
      for (std::size_t i = 0; i < groups.size(); ++i)
        if (init.base[i].shape() != groups[i].shape)
          throw ConfigError("base_input for '" + groups[i].name + "' has the wrong shape");
    } else if (!init.base.empty()) {
      throw ConfigError("gaussian initialisation takes no base tensors");
    }
    if (schedule.empty() || !std::is_sorted(schedule.begin(), schedule.end()) ||
        std::adjacent_find(schedule.begin(), schedule.end()) != schedule.end())
      throw ConfigError("schedule must be a strictly increasing list");
    if (schedule.front() != 0) throw ConfigError("schedule must contain step 0");
    if (schedule.back() > max_steps) throw ConfigError("schedule extends past max_steps");
    if (box && !(box->lo < box->hi)) throw ConfigError("box projection needs lo < hi");
  }

  /// Identity of everything that shapes the trajectory except its length
  /// (max_steps and schedule), so a run can be extended by resume().
  std::string digest() const {
    Sha256 h;
    h.update("invlab-problem/1");
    h.update(model->name()).update(model->weight_digest());
    for (const auto& g : model->input_groups()) {
      h.update(g.name);
      for (auto e : g.shape) h.update_u64(e);
    }
    if (const auto* t = std::get_if<TokenTarget>(&target)) {
      h.update("tokens");
      for (auto id : t->ids) h.update_u64(id);
    } else {
      const auto& t2 = std::get<Tensor>(target);
      h.update("tensor");
      for (auto e : t2.shape()) h.update_u64(e);
      h.update(t2.data());
    }
    h.update(to_string(loss.kind)).update_u64(static_cast<std::uint64_t>(loss.reduction));
    h.update_u64(static_cast<std::uint64_t>(loss.mel_norm));
    if (loss.mel_config) {
      const auto& c = *loss.mel_config;
      const double vals[] = {c.sample_rate, double(c.n_fft), double(c.hop), double(c.n_mels),
                             c.fmin,        c.fmax,          c.log_floor,   double(c.center),
                             double(static_cast<int>(c.scale))};
      h.update(std::span<const double>(vals));
    }
    h.update_u64(static_cast<std::uint64_t>(init.kind)).update_u64(init.seed);
    for (const auto& b : init.base) h.update(b.data());
    const auto& o = optimizer;
    const double ov[] = {o.learning_rate, o.beta1, o.beta2, o.epsilon, o.weight_decay,
                         o.max_grad_norm.value_or(-1.0)};
    h.update(to_string(o.kind)).update(std::span<const double>(ov));
    if (box) {
      const double bv[] = {box->lo, box->hi};
      h.update("box").update(std::span<const double>(bv));
    }
    h.update(std::span<const double>(&divergence_threshold, 1));
    return h.hex();
  }
};

struct Checkpoint {
  std::size_t step = 0;
  double loss = 0.0;
  std::vector<Tensor> inputs;  // detached snapshot, one per input group
  std::optional<DecodeResult> decoded;
};

struct RunRecord {
  std::string run_id;
  std::string problem_digest;
  std::vector<double> loss_history;  // entry t is J(x_t)
  std::map<std::size_t, Checkpoint> checkpoints;
  std::size_t steps_done = 0;
  bool diverged = false;
  std::string divergence_reason;
  double wall_time_seconds = 0.0;
  // State needed to continue the chain.
  std::vector<Tensor> current;
  OptimizerState optimizer_state;
};

/// Draws the starting point: i.i.d. N(0,1) per input group from one seeded
/// stream, or a copy of the base tensors.
inline std::vector<Tensor> initial_inputs(const AdapterModel& model, const Initialization& init) {
  std::vector<Tensor> xs;
  if (init.kind == Initialization::Kind::base_input) {
    for (const auto& b : init.base) xs.push_back(b.detach());
  } else {
    std::mt19937_64 gen(init.seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (const auto& g : model.input_groups()) {
      std::vector<double> v(shape_numel(g.shape));
      for (auto& x : v) x = nd(gen);
      xs.emplace_back(g.shape, std::move(v));
    }
  }
  for (auto& x : xs) x.set_requires_grad(true);
  return xs;
}

/// J(x) = L(f(x), y) for the problem's model, loss and target.
inline Tensor objective(const InversionProblem& p, std::span<const Tensor> inputs) {
  const auto& m = *p.model;
  switch (p.loss.kind) {
    case LossKind::xent_autoregressive: {
      const auto& ids = std::get<TokenTarget>(p.target).ids;
      std::vector<std::size_t> seq = ids;
      seq.push_back(kEndToken);
      return xent_autoregressive(m.token_logits(inputs, ids), seq, p.loss.reduction);
    }
    case LossKind::mse: return mse(m.forward(inputs), std::get<Tensor>(p.target), p.loss.reduction);
    case LossKind::mel_spec:
      return mel_spec_loss(m.forward(inputs), std::get<Tensor>(p.target), *p.loss.mel_config, p.loss.mel_norm,
                           p.loss.reduction);
  }
  throw ConfigError("unknown loss");
}

namespace detail {

inline bool scheduled(const InversionProblem& p, std::size_t step) {
  return std::binary_search(p.schedule.begin(), p.schedule.end(), step);
}

inline void take_checkpoint(const InversionProblem& p, RunRecord& rec, std::size_t step, double loss) {
  Checkpoint c;
  c.step = step;
  c.loss = loss;
  for (const auto& x : rec.current) c.inputs.push_back(x.detach());
  if (p.model->emits_tokens()) c.decoded = greedy_decode(*p.model, c.inputs);
  rec.checkpoints[step] = std::move(c);
}

/// Runs the chain from rec.steps_done up to end_step. rec.current holds
/// x_{steps_done}; its loss is appended only if not recorded yet.
inline void advance(const InversionProblem& p, RunRecord& rec, std::size_t end_step) {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t t = rec.steps_done;
  try {
    for (;;) {
      for (auto& x : rec.current) x.zero_grad();
      Tensor loss = objective(p, rec.current);
      const double value = loss.item();
      if (rec.loss_history.size() == t) {
        rec.loss_history.push_back(value);
        if (scheduled(p, t)) take_checkpoint(p, rec, t, value);
      }
      if (!std::isfinite(value) || value > p.divergence_threshold) {
        rec.diverged = true;
        rec.divergence_reason = "loss " + std::to_string(value) + " at step " + std::to_string(t);
        break;
      }
      if (t >= end_step) break;
      backward(loss);
      optimizer_step(rec.current, p.optimizer, rec.optimizer_state);
      if (p.box) {
        for (auto& x : rec.current)
          for (auto& v : x.mutable_data()) v = std::clamp(v, p.box->lo, p.box->hi);
      }
      rec.steps_done = ++t;
    }
  } catch (const NonFiniteError& e) {
    rec.diverged = true;
    rec.divergence_reason = e.what();
  }
  rec.wall_time_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Initialises the input, then iterates optimizer steps on J up to
/// max_steps, snapshotting at every schedule step. A non-finite loss or one
/// above the divergence threshold stops the run and flags it.
inline RunRecord run_inversion(const InversionProblem& p) {
  p.validate();
  RunRecord rec;
  rec.problem_digest = p.digest();
  rec.run_id = rec.problem_digest.substr(0, 12);
  rec.current = initial_inputs(*p.model, p.init);
  detail::advance(p, rec, p.max_steps);
  return rec;
}

/// Continues a run by additional_steps; equivalent bit-for-bit to one
/// uninterrupted run of the combined length.
inline RunRecord resume(const InversionProblem& p, RunRecord rec, std::size_t additional_steps) {
  if (rec.problem_digest != p.digest())
    throw DigestMismatch("problem digest " + p.digest().substr(0, 12) + " does not match record " +
                         rec.problem_digest.substr(0, 12));
  if (rec.diverged) throw Error("cannot resume a diverged run");
  if (rec.current.size() != p.model->input_groups().size()) throw Error("record carries no resumable input state");
  if (additional_steps == 0) return rec;
  for (auto& x : rec.current) {
    x = x.detach();
    x.set_requires_grad(true);
  }
  detail::advance(p, rec, rec.steps_done + additional_steps);
  return rec;
}

}  // namespace invlab
