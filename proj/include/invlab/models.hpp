#pragma once

// Frozen differentiable models behind a uniform adapter interface, plus four
// desk-scale reference models (captioner, generator, ASR, TTS).

#include <cctype>
#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "invlab/audio.hpp"
#include "invlab/digest.hpp"
#include "invlab/losses.hpp"
#include "invlab/ops.hpp"

namespace invlab {

enum class PipelineKind { captioner, generator, asr, tts };

inline const char* to_string(PipelineKind k) {
  switch (k) {
    case PipelineKind::captioner: return "captioner";
    case PipelineKind::generator: return "generator";
    case PipelineKind::asr: return "asr";
    case PipelineKind::tts: return "tts";
  }
  return "?";
}

inline PipelineKind parse_pipeline_kind(const std::string& s) {
  if (s == "captioner") return PipelineKind::captioner;
  if (s == "generator") return PipelineKind::generator;
  if (s == "asr") return PipelineKind::asr;
  if (s == "tts") return PipelineKind::tts;
  throw ConfigError("unknown pipeline '" + s + "' (expected captioner, generator, asr or tts)");
}

/// The only loss kind each pipeline accepts.
inline LossKind legal_loss(PipelineKind k) {
  switch (k) {
    case PipelineKind::captioner:
    case PipelineKind::asr: return LossKind::xent_autoregressive;
    case PipelineKind::generator: return LossKind::mse;
    case PipelineKind::tts: return LossKind::mel_spec;
  }
  return LossKind::mse;
}

/// Token id 0 terminates every decoded sequence.
inline constexpr std::size_t kEndToken = 0;

struct VocabTable {
  std::vector<std::string> tokens;
  Tensor embeddings;  // [V x E]

  std::size_t size() const { return tokens.size(); }
  std::size_t width() const { return embeddings.dim(1); }

  void validate() const {
    if (tokens.size() < 2) throw ConfigError("vocabulary needs at least two tokens");
    if (embeddings.rank() != 2 || embeddings.dim(0) != tokens.size())
      throw ShapeError("vocabulary embeddings must be [V x E] with one row per token");
    const std::size_t e = embeddings.dim(1);
    for (std::size_t r = 0; r < tokens.size(); ++r) {
      double n2 = 0.0;
      for (std::size_t j = 0; j < e; ++j) {
        const double x = embeddings.at(r, j);
        if (!std::isfinite(x)) throw DomainError("vocabulary row " + std::to_string(r) + " is not finite");
        n2 += x * x;
      }
      if (!(n2 > 0.0)) throw DomainError("vocabulary row " + std::to_string(r) + " has zero norm");
    }
  }

  std::size_t id_of(std::string_view tok) const {
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i] == tok) return i;
    throw ConfigError("token '" + std::string(tok) + "' is not in the vocabulary");
  }
};

struct InputGroup {
  std::string name;
  Shape shape;
};

/// f: R^d -> R^k with frozen weights. Token-output models additionally expose
/// teacher-forced logits for an autoregressive decoder.
///
/// External models plug in by subclassing: honour input_groups()/output_shape(),
/// build the output from the given input tensors with invlab ops (or custom
/// make_op_result nodes) so gradients reach the inputs, and never modify
/// weights inside forward.
class AdapterModel {
 public:
  virtual ~AdapterModel() = default;

  virtual PipelineKind kind() const = 0;
  virtual std::string name() const = 0;
  virtual const std::vector<InputGroup>& input_groups() const = 0;
  virtual Shape output_shape() const = 0;

  /// Dense output (image, waveform). Token models throw.
  virtual Tensor forward(std::span<const Tensor> inputs) const {
    (void)inputs;
    throw Error(name() + " emits tokens; use token_logits()");
  }

  virtual bool emits_tokens() const { return false; }
  virtual std::size_t max_length() const { return 0; }
  /// Rows 0..prefix.size(): row t scores position t given prefix[0..t-1].
  virtual Tensor token_logits(std::span<const Tensor> inputs, std::span<const std::size_t> prefix) const {
    (void)inputs;
    (void)prefix;
    throw Error(name() + " does not emit tokens");
  }
  virtual const VocabTable* output_vocab() const { return nullptr; }
  virtual const VocabTable* input_vocab(std::string_view group) const {
    (void)group;
    return nullptr;
  }

  /// Every frozen weight tensor, for hashing.
  virtual std::vector<Tensor> weights() const = 0;

  std::string weight_digest() const {
    Sha256 h;
    h.update(name());
    for (const auto& w : weights()) {
      h.update_u64(w.rank());
      for (auto e : w.shape()) h.update_u64(e);
      h.update(w.data());
    }
    return h.hex();
  }

  void check_inputs(std::span<const Tensor> inputs) const {
    const auto& groups = input_groups();
    if (inputs.size() != groups.size())
      throw ShapeError(name() + " expects " + std::to_string(groups.size()) + " input groups, got " +
                       std::to_string(inputs.size()));
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (inputs[i].shape() != groups[i].shape)
        throw ShapeError(name() + " input '" + groups[i].name + "' must be " + shape_str(groups[i].shape) +
                         ", got " + shape_str(inputs[i].shape()));
  }
};

namespace detail {

/// Deterministic weight source: N(0,1) draws scaled by 1/sqrt(fan_in).
class WeightRng {
 public:
  explicit WeightRng(std::uint64_t seed) : gen_(seed) {}

  Tensor gaussian(Shape shape, double stddev) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = nd(gen_) * stddev;
    return Tensor(std::move(shape), std::move(v));
  }
  Tensor dense(std::size_t fan_in, std::size_t fan_out) {
    return gaussian({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace detail

/// Word list shared by the toy vocabularies. Index 0 is the end token; the
/// tail mixes in sub-word and symbol pieces the way real tokenizers do.
inline std::vector<std::string> toy_vocabulary(std::size_t v) {
  static const std::vector<std::string> words = {
      "<eos>", "a",      "red",    "apple",  "on",     "wooden", "table",  "the",
      "cat",   "dog",    "sits",   "under",  "blue",   "sky",    "green",  "tree",
      "man",   "woman",  "holding", "cup",   "of",     "coffee", "in",     "park",
      "car",   "street", "white",  "house",  "with",   "door",   "small",  "bird",
      "flying", "over",  "river",  "two",    "people", "walking", "beach", "sunset",
      "black", "and",    "yellow", "flower", "field",  "city",   "night",  "light",
      "##ing", "##ed",   "##s",    "##ly",   "ɬ",      "ħ",      "ŋ",      "ʃ",
      "<unk>", "<pad>",  "§",      "¤",      "~",      "^",      "|",      "#"};
  std::vector<std::string> out;
  out.reserve(v);
  for (std::size_t i = 0; i < v; ++i)
    out.push_back(i < words.size() ? words[i] : "tok" + std::to_string(i));
  return out;
}

/// Token ids for a whitespace-separated phrase, without the end token.
inline std::vector<std::size_t> tokenize(const VocabTable& vocab, std::string_view text) {
  std::vector<std::size_t> ids;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      std::string w(text.substr(i, j - i));
      for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      while (!w.empty() && (w.back() == '.' || w.back() == ',')) w.pop_back();
      if (!w.empty()) ids.push_back(vocab.id_of(w));
    }
    i = j;
  }
  return ids;
}

inline std::string detokenize(const VocabTable& vocab, std::span<const std::size_t> ids) {
  std::string s;
  for (auto id : ids) {
    if (!s.empty()) s += ' ';
    s += id < vocab.size() ? vocab.tokens[id] : "<?>";
  }
  return s;
}

namespace detail {

inline VocabTable random_vocab(WeightRng& rng, std::size_t v, std::size_t e) {
  VocabTable t{toy_vocabulary(v), rng.gaussian({v, e}, 1.0)};
  t.validate();
  return t;
}

/// Autoregressive head shared by the captioner and ASR toys:
///   s_t = tanh(ctx_t + E[prev_t] W_prev + b),  logits_t = s_t W_out + b_out
/// where ctx is a [max_len x D] matrix of per-position context slots and
/// prev_0 is a learned start vector.
struct TokenReadout {
  VocabTable vocab;
  Tensor start, w_prev, bias, w_out, b_out;
  std::size_t max_len = 8;

  TokenReadout() = default;
  TokenReadout(WeightRng& rng, std::size_t v, std::size_t d, std::size_t max_len_)
      : vocab(random_vocab(rng, v, d)),
        start(rng.gaussian({1, d}, 1.0)),
        w_prev(rng.dense(d, d)),
        bias(rng.gaussian({d}, 0.1)),
        w_out(rng.dense(d, v)),
        b_out(rng.gaussian({v}, 0.1)),
        max_len(max_len_) {}

  Tensor logits(const Tensor& ctx, std::span<const std::size_t> prefix) const {
    const std::size_t t = prefix.size() + 1;
    if (t > max_len)
      throw ShapeError("prefix of length " + std::to_string(prefix.size()) + " exceeds decoder length " +
                       std::to_string(max_len));
    Tensor prev = start;
    if (!prefix.empty()) {
      std::vector<std::size_t> ids(prefix.begin(), prefix.end());
      prev = concat({start, take_rows(vocab.embeddings, ids)});
    }
    auto s = tanh(add(add(slice_rows(ctx, 0, t), matmul(prev, w_prev)), bias));
    return add(matmul(s, w_out), b_out);
  }

  void collect(std::vector<Tensor>& out) const {
    for (const auto& w : {vocab.embeddings, start, w_prev, bias, w_out, b_out}) out.push_back(w);
  }
};

}  // namespace detail

// ---- captioner -----------------------------------------------------------

struct CaptionerConfig {
  std::size_t image_size = 32;
  std::size_t patch = 8;
  std::size_t patch_hidden = 32;
  std::size_t slot_dim = 48;
  std::size_t vocab = 64;
  std::size_t max_len = 8;

  void validate() const {
    if (image_size == 0 || patch == 0 || image_size % patch != 0)
      throw ConfigError("captioner: image_size must be a positive multiple of patch");
    if (patch_hidden == 0 || slot_dim == 0 || max_len < 2 || vocab < 2)
      throw ConfigError("captioner: dimensions must be positive (max_len >= 2, vocab >= 2)");
  }
};

/// Image [S x S] -> tokens. Non-overlapping patches are flattened and mapped by
/// a shared tanh layer; a linear map over all patch features yields one
/// context slot per output position, and the readout's tanh is the second
/// nonlinearity. Keeping the slots unbounded lets the readout state reach
/// every token's argmax region.
class ToyCaptioner final : public AdapterModel {
 public:
  ToyCaptioner(CaptionerConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    detail::WeightRng rng(seed);
    const std::size_t pp = cfg_.patch * cfg_.patch;
    const std::size_t np = (cfg_.image_size / cfg_.patch) * (cfg_.image_size / cfg_.patch);
    w1_ = rng.dense(pp, cfg_.patch_hidden);
    b1_ = rng.gaussian({cfg_.patch_hidden}, 0.1);
    w2_ = rng.dense(np * cfg_.patch_hidden, cfg_.max_len * cfg_.slot_dim);
    b2_ = rng.gaussian({cfg_.max_len * cfg_.slot_dim}, 0.1);
    head_ = detail::TokenReadout(rng, cfg_.vocab, cfg_.slot_dim, cfg_.max_len);
    groups_ = {{"image", {cfg_.image_size, cfg_.image_size}}};
    // Row-major patch order, each patch row-major inside.
    const std::size_t s = cfg_.image_size, p = cfg_.patch, per = s / p;
    patch_index_.reserve(s * s);
    for (std::size_t pr = 0; pr < per; ++pr)
      for (std::size_t pc = 0; pc < per; ++pc)
        for (std::size_t r = 0; r < p; ++r)
          for (std::size_t c = 0; c < p; ++c) patch_index_.push_back((pr * p + r) * s + pc * p + c);
  }

  PipelineKind kind() const override { return PipelineKind::captioner; }
  std::string name() const override { return "toy_captioner"; }
  const std::vector<InputGroup>& input_groups() const override { return groups_; }
  Shape output_shape() const override { return {cfg_.max_len, cfg_.vocab}; }
  bool emits_tokens() const override { return true; }
  std::size_t max_length() const override { return cfg_.max_len; }
  const VocabTable* output_vocab() const override { return &head_.vocab; }
  const CaptionerConfig& config() const { return cfg_; }

  Tensor context(const Tensor& image) const {
    const std::size_t np = patch_index_.size() / (cfg_.patch * cfg_.patch);
    auto patches = gather(image, patch_index_, {np, cfg_.patch * cfg_.patch});
    auto h = tanh(add(matmul(patches, w1_), b1_));
    auto z = add(matmul(reshape(h, {1, h.numel()}), w2_), b2_);
    return reshape(z, {cfg_.max_len, cfg_.slot_dim});
  }

  Tensor token_logits(std::span<const Tensor> inputs, std::span<const std::size_t> prefix) const override {
    check_inputs(inputs);
    return head_.logits(context(inputs[0]), prefix);
  }

  std::vector<Tensor> weights() const override {
    std::vector<Tensor> w{w1_, b1_, w2_, b2_};
    head_.collect(w);
    return w;
  }

 private:
  CaptionerConfig cfg_;
  Tensor w1_, b1_, w2_, b2_;
  detail::TokenReadout head_;
  std::vector<InputGroup> groups_;
  std::vector<std::size_t> patch_index_;
};

// ---- ASR -----------------------------------------------------------------

struct AsrConfig {
  std::size_t n_mels = 16;
  std::size_t frames = 100;
  std::size_t frame_hidden = 48;
  std::size_t slot_dim = 48;
  std::size_t vocab = 64;
  std::size_t max_len = 8;

  void validate() const {
    if (n_mels == 0 || frames == 0 || frame_hidden == 0 || slot_dim == 0 || max_len < 2 || vocab < 2)
      throw ConfigError("asr: dimensions must be positive (max_len >= 2, vocab >= 2)");
  }
};

/// Log-mel spectrogram [n_mels x frames] -> tokens. Frames are projected by a
/// shared tanh layer, summed under one triangular time window per output
/// position (peak weight 1, unnormalised so segments are not confined to the
/// tanh range), then linearly mapped to context slots.
class ToyAsr final : public AdapterModel {
 public:
  ToyAsr(AsrConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    detail::WeightRng rng(seed);
    w_in_ = rng.dense(cfg_.n_mels, cfg_.frame_hidden);
    b_in_ = rng.gaussian({cfg_.frame_hidden}, 0.1);
    w_ctx_ = rng.dense(cfg_.frame_hidden, cfg_.slot_dim);
    b_ctx_ = rng.gaussian({cfg_.slot_dim}, 0.1);
    head_ = detail::TokenReadout(rng, cfg_.vocab, cfg_.slot_dim, cfg_.max_len);
    groups_ = {{"log_mel", {cfg_.n_mels, cfg_.frames}}};
    std::vector<double> pool(cfg_.max_len * cfg_.frames, 0.0);
    const double width = static_cast<double>(cfg_.frames) / static_cast<double>(cfg_.max_len);
    for (std::size_t t = 0; t < cfg_.max_len; ++t) {
      const double centre = (static_cast<double>(t) + 0.5) * width;
      for (std::size_t f = 0; f < cfg_.frames; ++f) {
        const double d = std::abs(static_cast<double>(f) + 0.5 - centre) / width;
        pool[t * cfg_.frames + f] = std::max(0.0, 1.0 - d);
      }
    }
    pool_ = Tensor({cfg_.max_len, cfg_.frames}, std::move(pool));
  }

  PipelineKind kind() const override { return PipelineKind::asr; }
  std::string name() const override { return "toy_asr"; }
  const std::vector<InputGroup>& input_groups() const override { return groups_; }
  Shape output_shape() const override { return {cfg_.max_len, cfg_.vocab}; }
  bool emits_tokens() const override { return true; }
  std::size_t max_length() const override { return cfg_.max_len; }
  const VocabTable* output_vocab() const override { return &head_.vocab; }
  const AsrConfig& config() const { return cfg_; }

  Tensor token_logits(std::span<const Tensor> inputs, std::span<const std::size_t> prefix) const override {
    check_inputs(inputs);
    auto frames = tanh(add(matmul(transpose(inputs[0]), w_in_), b_in_));  // [frames x H]
    auto segments = matmul(pool_, frames);                                // [max_len x H]
    auto ctx = add(matmul(segments, w_ctx_), b_ctx_);
    return head_.logits(ctx, prefix);
  }

  std::vector<Tensor> weights() const override {
    std::vector<Tensor> w{w_in_, b_in_, w_ctx_, b_ctx_, pool_};
    head_.collect(w);
    return w;
  }

 private:
  AsrConfig cfg_;
  Tensor w_in_, b_in_, w_ctx_, b_ctx_, pool_;
  detail::TokenReadout head_;
  std::vector<InputGroup> groups_;
};

// ---- generator -----------------------------------------------------------

struct GeneratorConfig {
  std::size_t tokens = 4;
  std::size_t token_dim = 32;
  std::size_t pooled_dim = 16;
  std::size_t hidden = 64;
  std::size_t image_size = 16;
  std::size_t vocab = 64;

  void validate() const {
    if (tokens == 0 || token_dim == 0 || pooled_dim == 0 || hidden == 0 || image_size == 0 || vocab < 2)
      throw ConfigError("generator: dimensions must be positive (vocab >= 2)");
  }
};

/// (token embeddings [n x E], pooled embedding [P]) -> image [S x S] in one
/// application: img = tanh(tanh(flat(tok) W_t + pooled W_p + b) W_o + b_o).
class ToyGenerator final : public AdapterModel {
 public:
  ToyGenerator(GeneratorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    detail::WeightRng rng(seed);
    w_tok_ = rng.dense(cfg_.tokens * cfg_.token_dim, cfg_.hidden);
    w_pool_ = rng.dense(cfg_.pooled_dim, cfg_.hidden);
    b_ = rng.gaussian({cfg_.hidden}, 0.1);
    w_out_ = rng.dense(cfg_.hidden, cfg_.image_size * cfg_.image_size);
    b_out_ = rng.gaussian({cfg_.image_size * cfg_.image_size}, 0.1);
    token_vocab_ = detail::random_vocab(rng, cfg_.vocab, cfg_.token_dim);
    pooled_vocab_ = detail::random_vocab(rng, cfg_.vocab, cfg_.pooled_dim);
    groups_ = {{"tokens", {cfg_.tokens, cfg_.token_dim}}, {"pooled", {cfg_.pooled_dim}}};
  }

  PipelineKind kind() const override { return PipelineKind::generator; }
  std::string name() const override { return "toy_generator"; }
  const std::vector<InputGroup>& input_groups() const override { return groups_; }
  Shape output_shape() const override { return {cfg_.image_size, cfg_.image_size}; }
  const GeneratorConfig& config() const { return cfg_; }

  const VocabTable* input_vocab(std::string_view group) const override {
    if (group == "tokens") return &token_vocab_;
    if (group == "pooled") return &pooled_vocab_;
    return nullptr;
  }

  Tensor forward(std::span<const Tensor> inputs) const override {
    check_inputs(inputs);
    auto t = reshape(inputs[0], {1, inputs[0].numel()});
    auto p = reshape(inputs[1], {1, cfg_.pooled_dim});
    auto h = tanh(add(add(matmul(t, w_tok_), matmul(p, w_pool_)), b_));
    auto img = tanh(add(matmul(h, w_out_), b_out_));
    return reshape(img, {cfg_.image_size, cfg_.image_size});
  }

  std::vector<Tensor> weights() const override {
    return {w_tok_, w_pool_, b_, w_out_, b_out_, token_vocab_.embeddings, pooled_vocab_.embeddings};
  }

 private:
  GeneratorConfig cfg_;
  Tensor w_tok_, w_pool_, b_, w_out_, b_out_;
  VocabTable token_vocab_, pooled_vocab_;
  std::vector<InputGroup> groups_;
};

// ---- TTS -----------------------------------------------------------------

struct TtsConfig {
  std::size_t tokens = 8;
  std::size_t token_dim = 64;
  std::size_t hidden = 32;
  std::size_t samples = 4096;
  double sample_rate = 8000.0;
  std::size_t vocab = 64;

  void validate() const {
    if (tokens == 0 || token_dim == 0 || hidden == 0 || vocab < 2)
      throw ConfigError("tts: dimensions must be positive (vocab >= 2)");
    if (samples == 0 || samples % tokens != 0) throw ConfigError("tts: samples must be a multiple of tokens");
    if (!(sample_rate > 0.0)) throw ConfigError("tts: sample_rate must be positive");
  }
};

/// Token embeddings [n x E] -> waveform [N]. Each token drives one segment of
/// N/n samples: per-token features are mixed across tokens, then weight a fixed
/// bank of Hann-tapered sinusoids.
class ToyTts final : public AdapterModel {
 public:
  ToyTts(TtsConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    detail::WeightRng rng(seed);
    w_in_ = rng.dense(cfg_.token_dim, cfg_.hidden);
    b_in_ = rng.gaussian({cfg_.hidden}, 0.1);
    mix_ = rng.dense(cfg_.tokens, cfg_.tokens);
    const std::size_t seg = cfg_.samples / cfg_.tokens;
    std::vector<double> basis(cfg_.hidden * seg);
    const double nyq = cfg_.sample_rate / 2.0;
    const double amp = 0.5 / std::sqrt(static_cast<double>(cfg_.hidden));
    for (std::size_t j = 0; j < cfg_.hidden; ++j) {
      const double f = rng.uniform(0.02 * nyq, 0.9 * nyq);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t n = 0; n < seg; ++n) {
        const double taper = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(n) + 0.5) /
                                                 static_cast<double>(seg));
        basis[j * seg + n] =
            amp * taper * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(n) / cfg_.sample_rate + phase);
      }
    }
    basis_ = Tensor({cfg_.hidden, seg}, std::move(basis));
    vocab_ = detail::random_vocab(rng, cfg_.vocab, cfg_.token_dim);
    groups_ = {{"tokens", {cfg_.tokens, cfg_.token_dim}}};
  }

  PipelineKind kind() const override { return PipelineKind::tts; }
  std::string name() const override { return "toy_tts"; }
  const std::vector<InputGroup>& input_groups() const override { return groups_; }
  Shape output_shape() const override { return {cfg_.samples}; }
  const TtsConfig& config() const { return cfg_; }

  const VocabTable* input_vocab(std::string_view group) const override {
    return group == "tokens" ? &vocab_ : nullptr;
  }

  Tensor forward(std::span<const Tensor> inputs) const override {
    check_inputs(inputs);
    auto h = tanh(add(matmul(inputs[0], w_in_), b_in_));  // [n x H]
    auto mixed = tanh(matmul(mix_, h));                    // [n x H]
    return reshape(matmul(mixed, basis_), {cfg_.samples});
  }

  std::vector<Tensor> weights() const override { return {w_in_, b_in_, mix_, basis_, vocab_.embeddings}; }

 private:
  TtsConfig cfg_;
  Tensor w_in_, b_in_, mix_, basis_;
  VocabTable vocab_;
  std::vector<InputGroup> groups_;
};

// ---- decoding --------------------------------------------------------------

/// Index of the largest value; ties resolve to the lowest index.
inline std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

struct DecodeResult {
  std::vector<std::size_t> ids;  // without the end token
  std::string text;
  bool terminated = false;  // end token emitted before the length bound
};

/// Argmax decoding, feeding each prediction back as the next prefix token,
/// until the end token or max_len positions.
inline DecodeResult greedy_decode(const AdapterModel& model, std::span<const Tensor> inputs,
                                  std::size_t max_len = 0) {
  if (!model.emits_tokens()) throw Error(model.name() + " does not emit tokens");
  const std::size_t bound = max_len ? std::min(max_len, model.max_length()) : model.max_length();
  std::vector<Tensor> frozen;
  frozen.reserve(inputs.size());
  for (const auto& t : inputs) frozen.push_back(t.detach());
  DecodeResult out;
  std::vector<std::size_t> prefix;
  for (std::size_t pos = 0; pos < bound; ++pos) {
    auto logits = model.token_logits(frozen, prefix);
    const std::size_t v = logits.dim(1);
    auto row = logits.data().subspan(pos * v, v);
    const std::size_t id = argmax_lowest(row);
    if (id == kEndToken) {
      out.terminated = true;
      break;
    }
    prefix.push_back(id);
  }
  out.ids = prefix;
  if (const auto* vocab = model.output_vocab()) out.text = detokenize(*vocab, out.ids);
  return out;
}

// ---- factory -------------------------------------------------------------

inline std::unique_ptr<AdapterModel> make_toy_model(PipelineKind kind, std::uint64_t seed) {
  switch (kind) {
    case PipelineKind::captioner: return std::make_unique<ToyCaptioner>(CaptionerConfig{}, seed);
    case PipelineKind::generator: return std::make_unique<ToyGenerator>(GeneratorConfig{}, seed);
    case PipelineKind::asr: return std::make_unique<ToyAsr>(AsrConfig{}, seed);
    case PipelineKind::tts: return std::make_unique<ToyTts>(TtsConfig{}, seed);
  }
  throw ConfigError("unknown pipeline");
}

}  // namespace invlab
