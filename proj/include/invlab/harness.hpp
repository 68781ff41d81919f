#pragma once

// Experiment driver behind the CLI: flat JSON run configs, per-pipeline
// presets, artifact emission and the run registry.

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "invlab/corpus.hpp"
#include "invlab/interpret.hpp"
#include "invlab/metrics.hpp"
#include "invlab/record_io.hpp"
#include "invlab/render.hpp"
#include "invlab/wav.hpp"

namespace invlab::harness {

struct PipelineDefaults {
  OptimizerKind optimizer;
  double learning_rate;
  double weight_decay;
  std::vector<std::size_t> schedule;
};

/// Image and spectrogram inputs step at 0.1, embedding inputs at 0.01.
inline PipelineDefaults defaults_for(PipelineKind k) {
  switch (k) {
    case PipelineKind::captioner: return {OptimizerKind::adam, 0.1, 0.0, {0, 10, 100, 1000, 10000}};
    case PipelineKind::generator: return {OptimizerKind::adam, 0.01, 0.0, {0, 25, 50, 75, 100, 125, 150, 175, 200}};
    case PipelineKind::asr: return {OptimizerKind::adamw, 0.1, 0.01, {0, 750, 1500, 2250, 3000}};
    case PipelineKind::tts: return {OptimizerKind::adam, 0.01, 0.0, {0, 250, 500, 750, 1000}};
  }
  throw ConfigError("unknown pipeline");
}

inline audio::MelConfig spectrogram_preset(PipelineKind k) {
  return k == PipelineKind::tts ? audio::toy_tts_preset() : audio::toy_asr_preset();
}

struct RunConfig {
  PipelineKind pipeline = PipelineKind::captioner;
  std::uint64_t model_seed = 0;
  std::uint64_t seed = 0;
  // Exactly one target source.
  std::optional<std::vector<std::size_t>> target_tokens;
  std::optional<std::string> target_text;
  std::optional<std::string> target_image;
  std::optional<std::string> target_wav;
  std::optional<std::uint64_t> target_seed;
  Initialization::Kind init = Initialization::Kind::gaussian;
  std::optional<std::string> base_image;
  std::optional<std::string> base_wav;
  OptimizerConfig optimizer;
  std::size_t max_steps = 0;
  std::vector<std::size_t> schedule;
  std::optional<BoxProjection> box;
  double divergence_threshold = 1e12;
  MelNorm mel_norm = MelNorm::l1;
  int griffin_lim_iterations = 32;
  std::optional<std::string> out;

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k = {
        "pipeline",     "model_seed", "seed",          "target_tokens", "target_text", "target_image",
        "target_wav",   "target_seed", "init",         "base_image",    "base_wav",    "optimizer",
        "learning_rate", "beta1",     "beta2",         "epsilon",       "weight_decay", "max_grad_norm",
        "max_steps",    "schedule",   "box",           "divergence_threshold", "mel_norm",
        "griffin_lim_iterations",     "out"};
    return k;
  }

  /// Relative file paths are resolved against base_dir. Missing keys take the
  /// pipeline defaults; max_steps and schedule default to each other when only
  /// one is given.
  static RunConfig from_json(const json& j, const fs::path& base_dir = {}) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [k, v] : j.items())
      if (!keys().count(k)) throw ConfigError("unknown config key '" + k + "'");
    auto get = [&j]<typename T>(const char* key, std::type_identity<T>) -> std::optional<T> {
      if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
      try {
        return j.at(key).get<T>();
      } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type: " + e.what());
      }
    };
    auto path = [&](const char* key) -> std::optional<std::string> {
      auto p = get(key, std::type_identity<std::string>{});
      if (!p) return std::nullopt;
      fs::path fp(*p);
      return (fp.is_relative() && !base_dir.empty() ? base_dir / fp : fp).lexically_normal().string();
    };
    RunConfig c;
    const auto pipe = get("pipeline", std::type_identity<std::string>{});
    if (!pipe) throw ConfigError("config key 'pipeline' is required");
    c.pipeline = parse_pipeline_kind(*pipe);
    const auto d = defaults_for(c.pipeline);
    c.model_seed = get("model_seed", std::type_identity<std::uint64_t>{}).value_or(0);
    c.seed = get("seed", std::type_identity<std::uint64_t>{}).value_or(0);
    c.target_tokens = get("target_tokens", std::type_identity<std::vector<std::size_t>>{});
    c.target_text = get("target_text", std::type_identity<std::string>{});
    c.target_image = path("target_image");
    c.target_wav = path("target_wav");
    c.target_seed = get("target_seed", std::type_identity<std::uint64_t>{});
    const auto init = get("init", std::type_identity<std::string>{}).value_or("gaussian");
    if (init == "gaussian")
      c.init = Initialization::Kind::gaussian;
    else if (init == "base_input")
      c.init = Initialization::Kind::base_input;
    else
      throw ConfigError("init must be 'gaussian' or 'base_input'");
    c.base_image = path("base_image");
    c.base_wav = path("base_wav");
    if (auto o = get("optimizer", std::type_identity<std::string>{}))
      c.optimizer.kind = parse_optimizer_kind(*o);
    else
      c.optimizer.kind = d.optimizer;
    c.optimizer.learning_rate = get("learning_rate", std::type_identity<double>{}).value_or(d.learning_rate);
    c.optimizer.beta1 = get("beta1", std::type_identity<double>{}).value_or(c.optimizer.beta1);
    c.optimizer.beta2 = get("beta2", std::type_identity<double>{}).value_or(c.optimizer.beta2);
    c.optimizer.epsilon = get("epsilon", std::type_identity<double>{}).value_or(c.optimizer.epsilon);
    c.optimizer.weight_decay = get("weight_decay", std::type_identity<double>{})
                                   .value_or(c.optimizer.kind == OptimizerKind::adamw ? d.weight_decay : 0.0);
    c.optimizer.max_grad_norm = get("max_grad_norm", std::type_identity<double>{});
    const auto steps = get("max_steps", std::type_identity<std::size_t>{});
    const auto sched = get("schedule", std::type_identity<std::vector<std::size_t>>{});
    c.set_length(steps, sched);
    if (auto b = get("box", std::type_identity<std::vector<double>>{})) {
      if (b->size() != 2) throw ConfigError("box must be [lo, hi]");
      c.box = BoxProjection{(*b)[0], (*b)[1]};
    }
    c.divergence_threshold = get("divergence_threshold", std::type_identity<double>{}).value_or(1e12);
    const auto norm = get("mel_norm", std::type_identity<std::string>{}).value_or("l1");
    if (norm == "l1")
      c.mel_norm = MelNorm::l1;
    else if (norm == "l2")
      c.mel_norm = MelNorm::l2;
    else
      throw ConfigError("mel_norm must be 'l1' or 'l2'");
    c.griffin_lim_iterations = get("griffin_lim_iterations", std::type_identity<int>{}).value_or(32);
    c.out = get("out", std::type_identity<std::string>{});
    c.check();
    return c;
  }

  /// Fills whichever of max_steps / schedule is missing from the other or
  /// from the pipeline's default schedule.
  void set_length(std::optional<std::size_t> steps, std::optional<std::vector<std::size_t>> sched) {
    if (sched) {
      schedule = *sched;
      max_steps = steps.value_or(schedule.empty() ? 0 : schedule.back());
    } else {
      const auto def = defaults_for(pipeline).schedule;
      max_steps = steps.value_or(def.back());
      schedule.clear();
      for (auto s : def)
        if (s <= max_steps) schedule.push_back(s);
      if (schedule.back() != max_steps) schedule.push_back(max_steps);
    }
  }

  void check() const {
    const bool tokens = pipeline == PipelineKind::captioner || pipeline == PipelineKind::asr;
    const int sources = int(target_tokens.has_value()) + int(target_text.has_value()) +
                        int(target_image.has_value()) + int(target_wav.has_value()) + int(target_seed.has_value());
    if (sources != 1)
      throw ConfigError("exactly one of target_tokens, target_text, target_image, target_wav, target_seed is required");
    if (tokens && !(target_tokens || target_text))
      throw ConfigError(std::string(to_string(pipeline)) + " needs target_tokens or target_text");
    if (!tokens && (target_tokens || target_text))
      throw ConfigError(std::string(to_string(pipeline)) + " needs a dense target, not tokens");
    if (target_image && pipeline != PipelineKind::generator) throw ConfigError("target_image is for the generator");
    if (target_wav && pipeline != PipelineKind::tts) throw ConfigError("target_wav is for tts");
    if (init == Initialization::Kind::base_input) {
      if (pipeline == PipelineKind::captioner && !base_image) throw ConfigError("base_input needs base_image");
      if (pipeline == PipelineKind::asr && !base_wav) throw ConfigError("base_input needs base_wav");
      if (pipeline == PipelineKind::generator || pipeline == PipelineKind::tts)
        throw ConfigError("base_input is only available for image and spectrogram inputs");
    }
    if ((base_image && pipeline != PipelineKind::captioner) || (base_wav && pipeline != PipelineKind::asr))
      throw ConfigError("base_image goes with captioner, base_wav with asr");
    if ((base_image || base_wav) && init != Initialization::Kind::base_input)
      throw ConfigError("base_image/base_wav require init = base_input");
    if (griffin_lim_iterations < 1) throw ConfigError("griffin_lim_iterations must be at least 1");
    optimizer.validate();
  }

  /// Every field explicit except the output root, which does not shape the
  /// run; from_json(to_json()) reproduces everything else.
  json to_json() const {
    json j;
    j["pipeline"] = to_string(pipeline);
    j["model_seed"] = model_seed;
    j["seed"] = seed;
    if (target_tokens) j["target_tokens"] = *target_tokens;
    if (target_text) j["target_text"] = *target_text;
    if (target_image) j["target_image"] = *target_image;
    if (target_wav) j["target_wav"] = *target_wav;
    if (target_seed) j["target_seed"] = *target_seed;
    j["init"] = init == Initialization::Kind::gaussian ? "gaussian" : "base_input";
    if (base_image) j["base_image"] = *base_image;
    if (base_wav) j["base_wav"] = *base_wav;
    j["optimizer"] = to_string(optimizer.kind);
    j["learning_rate"] = optimizer.learning_rate;
    j["beta1"] = optimizer.beta1;
    j["beta2"] = optimizer.beta2;
    j["epsilon"] = optimizer.epsilon;
    j["weight_decay"] = optimizer.weight_decay;
    if (optimizer.max_grad_norm) j["max_grad_norm"] = *optimizer.max_grad_norm;
    j["max_steps"] = max_steps;
    j["schedule"] = schedule;
    if (box) j["box"] = {box->lo, box->hi};
    j["divergence_threshold"] = divergence_threshold;
    j["mel_norm"] = mel_norm == MelNorm::l1 ? "l1" : "l2";
    j["griffin_lim_iterations"] = griffin_lim_iterations;
    return j;
  }

  std::string digest() const { return sha256_hex(to_json().dump()); }
};

inline RunConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j, path.parent_path());
}

// ---- problem construction ---------------------------------------------------

inline Tensor image_from_png(const fs::path& path, std::size_t size, double lo, double hi) {
  const auto img = png::read_gray(path);
  if (img.width != size || img.height != size)
    throw ConfigError(path.string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                      ", expected " + std::to_string(size) + "x" + std::to_string(size));
  std::vector<double> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = lo + (hi - lo) * img.pixels[i] / 255.0;
  return Tensor({size, size}, std::move(v));
}

inline audio::WavData wav_exact(const fs::path& path, double sample_rate, std::size_t samples) {
  auto w = audio::read_wav(path);
  if (w.sample_rate != static_cast<std::uint32_t>(sample_rate) || w.samples.size() != samples)
    throw ConfigError(path.string() + " must hold exactly " + std::to_string(samples) + " samples at " +
                      std::to_string(static_cast<int>(sample_rate)) + " Hz");
  return w;
}

/// Toy-ASR input length: one log-mel frame per hop.
inline std::size_t asr_samples(const ToyAsr& m) { return m.config().frames * audio::toy_asr_preset().hop; }

inline InversionProblem build_problem(const RunConfig& c) {
  InversionProblem p;
  std::shared_ptr<const AdapterModel> model = make_toy_model(c.pipeline, c.model_seed);
  p.model = model;
  if (c.target_tokens) {
    p.target = TokenTarget{*c.target_tokens};
  } else if (c.target_text) {
    p.target = TokenTarget{tokenize(*model->output_vocab(), *c.target_text)};
  } else if (c.target_seed) {
    Initialization g;
    g.seed = *c.target_seed;
    p.target = model->forward(initial_inputs(*model, g)).detach();
  } else if (c.target_image) {
    const auto& gen = static_cast<const ToyGenerator&>(*model);
    // Generator outputs live in (-1, 1); black maps to -1.
    p.target = image_from_png(*c.target_image, gen.config().image_size, -1.0, 1.0);
  } else if (c.target_wav) {
    const auto& tts = static_cast<const ToyTts&>(*model);
    auto w = wav_exact(*c.target_wav, tts.config().sample_rate, tts.config().samples);
    const std::size_t n = w.samples.size();
    p.target = Tensor({n}, std::move(w.samples));
  }
  p.loss.kind = legal_loss(c.pipeline);
  if (p.loss.kind == LossKind::mel_spec) {
    p.loss.mel_config = audio::toy_tts_preset();
    p.loss.mel_norm = c.mel_norm;
  }
  p.init.kind = c.init;
  p.init.seed = c.seed;
  if (c.init == Initialization::Kind::base_input) {
    if (c.base_image) {
      const auto& cap = static_cast<const ToyCaptioner&>(*model);
      p.init.base = {image_from_png(*c.base_image, cap.config().image_size, 0.0, 1.0)};
    } else {
      const auto& asr = static_cast<const ToyAsr&>(*model);
      auto w = wav_exact(*c.base_wav, audio::toy_asr_preset().sample_rate, asr_samples(asr));
      const std::size_t n = w.samples.size();
      p.init.base = {audio::log_mel(Tensor({n}, std::move(w.samples)), audio::toy_asr_preset()).values.detach()};
    }
  }
  p.optimizer = c.optimizer;
  p.schedule = c.schedule;
  p.max_steps = c.max_steps;
  p.box = c.box;
  p.divergence_threshold = c.divergence_threshold;
  p.validate();
  return p;
}

// ---- CSV tables ----------------------------------------------------------------

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

inline std::string join_ids(const std::vector<std::size_t>& ids) {
  std::string s;
  for (auto id : ids) s += (s.empty() ? "" : " ") + std::to_string(id);
  return s;
}

inline std::string decoded_csv(const RunRecord& rec) {
  std::string s = "step,ids,text,terminated\n";
  for (const auto& [step, ck] : rec.checkpoints) {
    if (!ck.decoded) continue;
    s += std::to_string(step) + "," + join_ids(ck.decoded->ids) + "," + csv_field(ck.decoded->text) + "," +
         (ck.decoded->terminated ? "1" : "0") + "\n";
  }
  return s;
}

inline const char* kTokenEstimateHeader = "step,position,token_id,token,score\n";

/// Rows of (step, position, token_id, token, score) for one snapshot, k rows
/// per position in rank order.
inline std::string token_estimate_rows(std::size_t step, const Tensor& embeddings, const VocabTable& vocab,
                                       std::size_t k) {
  std::string s;
  for (const auto& pos : nearest_tokens(embeddings, vocab, k))
    for (const auto& e : pos)
      s += std::to_string(step) + "," + std::to_string(e.position) + "," + std::to_string(e.token_id) + "," +
           csv_field(e.token) + "," + format_double(e.score) + "\n";
  return s;
}

inline std::string vocab_tsv(const VocabTable& v) {
  std::string s;
  for (std::size_t r = 0; r < v.size(); ++r) {
    s += v.tokens[r];
    for (std::size_t j = 0; j < v.width(); ++j) s += "\t" + format_double(v.embeddings.at(r, j));
    s += "\n";
  }
  return s;
}

inline VocabTable parse_vocab_tsv(const std::string& text) {
  VocabTable v;
  std::vector<double> vals;
  std::size_t width = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, '\t');
    v.tokens.push_back(cell);
    std::size_t w = 0;
    while (std::getline(row, cell, '\t')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("vocab: bad number '" + cell + "' on row " + std::to_string(v.tokens.size()));
      }
      ++w;
    }
    if (width == 0) width = w;
    if (w == 0 || w != width) throw FormatError("vocab: row " + std::to_string(v.tokens.size()) + " has width " +
                                                std::to_string(w) + ", expected " + std::to_string(width));
  }
  if (v.tokens.empty()) throw FormatError("vocab file is empty");
  v.embeddings = Tensor({v.tokens.size(), width}, std::move(vals));
  v.validate();
  return v;
}

// ---- audio reconstruction ----------------------------------------------------

struct Reconstruction {
  std::vector<double> wave;
  double spectral_convergence = 0.0;
};

/// Lifts a log-mel spectrogram to linear magnitudes and runs Griffin-Lim;
/// the convergence error is measured against the lifted magnitudes.
inline Reconstruction reconstruct_audio(const Tensor& log_mel, const audio::MelConfig& cfg, int iterations) {
  if (log_mel.rank() != 2 || log_mel.dim(0) != cfg.n_mels)
    throw ShapeError("spectrogram has " + shape_str(log_mel.shape()) + ", preset expects " +
                     std::to_string(cfg.n_mels) + " mel rows");
  std::vector<double> e(log_mel.numel());
  const double floor_log = std::log10(cfg.log_floor);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = log_mel[i] <= floor_log ? 0.0 : std::pow(10.0, log_mel[i]);
  audio::Spectrogram lin{audio::mel_to_linear(Tensor(log_mel.shape(), std::move(e)), cfg), cfg,
                         audio::SpecDomain::linear};
  Reconstruction r;
  r.wave = audio::griffin_lim(lin, iterations);
  r.spectral_convergence = audio::spectral_convergence(r.wave, lin.values, cfg);
  return r;
}

/// Scales down only when the peak would clip PCM16.
inline std::vector<double> fit_pcm(std::vector<double> w) {
  double peak = 0.0;
  for (double v : w) peak = std::max(peak, std::abs(v));
  if (peak > 1.0)
    for (auto& v : w) v *= 0.99 / peak;
  return w;
}

// ---- registry --------------------------------------------------------------------

struct RegistryEntry {
  std::string run_id;
  std::string pipeline;
  std::string config_digest;
  std::string problem_digest;
  std::size_t steps_done = 0;
  bool diverged = false;
  std::string final_loss;  // %.17g text; may be inf or nan for diverged runs

  json to_json() const {
    return {{"run_id", run_id},       {"pipeline", pipeline},     {"config_digest", config_digest},
            {"problem_digest", problem_digest}, {"steps_done", steps_done}, {"diverged", diverged},
            {"final_loss", final_loss}};
  }
  static RegistryEntry from_json(const json& j) {
    return {j.at("run_id"), j.at("pipeline"), j.at("config_digest"), j.at("problem_digest"),
            j.at("steps_done"), j.at("diverged"), j.at("final_loss")};
  }
  bool operator==(const RegistryEntry&) const = default;
};

/// One directory per run under root, plus an append-only index.jsonl. The
/// index can always be rebuilt by scanning the run manifests.
class RunRegistry {
 public:
  explicit RunRegistry(fs::path root) : root_(std::move(root)) {}
  const fs::path& root() const { return root_; }

  /// <config digest prefix>-<UTC timestamp>, with a counter on collision.
  std::string allocate(const std::string& config_digest) const {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char ts[32];
    std::strftime(ts, sizeof ts, "%Y%m%dT%H%M%SZ", &tm);
    const std::string base = config_digest.substr(0, 12) + "-" + ts;
    std::string id = base;
    for (int n = 1; fs::exists(root_ / id); ++n) id = base + "-" + std::to_string(n);
    return id;
  }

  void append(const RegistryEntry& e) const {
    fs::create_directories(root_);
    std::ofstream f(root_ / "index.jsonl", std::ios::app);
    if (!f) throw Error("cannot append to " + (root_ / "index.jsonl").string());
    f << e.to_json().dump() << "\n";
  }

  std::vector<RegistryEntry> index() const {
    std::vector<RegistryEntry> out;
    std::ifstream f(root_ / "index.jsonl");
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) out.push_back(RegistryEntry::from_json(json::parse(line)));
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.run_id < b.run_id; });
    return out;
  }

  std::vector<RegistryEntry> scan() const {
    std::vector<RegistryEntry> out;
    if (!fs::exists(root_)) return out;
    for (const auto& d : fs::directory_iterator(root_)) {
      if (!d.is_directory() || !fs::exists(d.path() / "manifest.json")) continue;
      const auto m = load_manifest(d.path());
      if (!m.contains("config_digest")) continue;
      out.push_back(entry_from_manifest(m));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.run_id < b.run_id; });
    return out;
  }

  static RegistryEntry entry_from_manifest(const json& m) {
    return {m.at("run_id"),     m.at("pipeline"), m.at("config_digest"), m.at("problem_digest"),
            m.at("steps_done"), m.at("diverged"), m.at("final_loss")};
  }

 private:
  fs::path root_;
};

/// --out, then INVLAB_OUT, then the config's "out", then ./runs.
inline fs::path output_root(const std::optional<std::string>& flag, const RunConfig* cfg = nullptr) {
  if (flag) return *flag;
  if (const char* env = std::getenv("INVLAB_OUT"); env && *env) return env;
  if (cfg && cfg->out) return *cfg->out;
  return "runs";
}

// ---- invert ----------------------------------------------------------------------

inline void write_png(const fs::path& path, const render::GrayImage& img) {
  fs::create_directories(path.parent_path());
  png::write_gray(path, img);
}

/// Every per-checkpoint artifact of a finished (or diverged) run.
inline void emit_artifacts(const fs::path& dir, const RunConfig& c, const InversionProblem& p, const RunRecord& rec) {
  const auto& model = *p.model;
  std::vector<render::GrayImage> tiles;
  std::string recon = "step,spectral_convergence\n";
  std::map<std::string, std::string> estimates;
  const auto& groups = model.input_groups();
  for (const auto& g : groups)
    if (const auto* v = model.input_vocab(g.name)) {
      estimates[g.name] = kTokenEstimateHeader;
      write_text(dir / ("vocab_" + g.name + ".tsv"), vocab_tsv(*v));
    }
  for (const auto& [step, ck] : rec.checkpoints) {
    const auto tag = step_tag(step);
    switch (c.pipeline) {
      case PipelineKind::captioner: {
        auto img = render::matrix(ck.inputs[0], std::nullopt, 4);
        write_png(dir / "images" / (tag + ".png"), img);
        tiles.push_back(std::move(img));
        break;
      }
      case PipelineKind::generator: {
        auto img = render::matrix(model.forward(ck.inputs).detach(), std::pair{-1.0, 1.0}, 8);
        write_png(dir / "images" / (tag + ".png"), img);
        tiles.push_back(std::move(img));
        break;
      }
      case PipelineKind::asr: {
        write_png(dir / "spectrograms" / (tag + ".png"), render::spectrogram(ck.inputs[0]));
        const auto cfg = audio::toy_asr_preset();
        auto r = reconstruct_audio(ck.inputs[0], cfg, c.griffin_lim_iterations);
        fs::create_directories(dir / "audio");
        audio::write_wav(dir / "audio" / (tag + ".wav"), fit_pcm(r.wave), static_cast<std::uint32_t>(cfg.sample_rate));
        write_png(dir / "waveforms" / (tag + ".png"), render::waveform(r.wave));
        recon += std::to_string(step) + "," + format_double(r.spectral_convergence) + "\n";
        break;
      }
      case PipelineKind::tts: {
        const auto cfg = audio::toy_tts_preset();
        auto wave = model.forward(ck.inputs).detach();
        fs::create_directories(dir / "audio");
        std::vector<double> w(wave.data().begin(), wave.data().end());
        audio::write_wav(dir / "audio" / (tag + ".wav"), fit_pcm(w), static_cast<std::uint32_t>(cfg.sample_rate));
        write_png(dir / "waveforms" / (tag + ".png"), render::waveform(w));
        write_png(dir / "spectrograms" / (tag + ".png"), render::spectrogram(audio::log_mel(wave, cfg).values));
        break;
      }
    }
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (const auto* v = model.input_vocab(groups[i].name))
        estimates[groups[i].name] += token_estimate_rows(step, ck.inputs[i], *v, 1);
  }
  if (!tiles.empty()) write_png(dir / "grid.png", render::grid(tiles));
  if (model.emits_tokens()) write_text(dir / "decoded.csv", decoded_csv(rec));
  if (c.pipeline == PipelineKind::asr) write_text(dir / "reconstruction.csv", recon);
  for (const auto& [g, csv] : estimates) write_text(dir / ("token_estimates_" + g + ".csv"), csv);
  if (const auto* t = std::get_if<Tensor>(&p.target)) {
    write_tensor(dir / "target.bin", *t);
    if (c.pipeline == PipelineKind::generator) write_png(dir / "target.png", render::matrix(*t, std::pair{-1.0, 1.0}, 8));
    if (c.pipeline == PipelineKind::tts) {
      std::vector<double> w(t->data().begin(), t->data().end());
      audio::write_wav(dir / "target.wav", fit_pcm(w), static_cast<std::uint32_t>(audio::toy_tts_preset().sample_rate));
    }
  }
}

struct InvertResult {
  fs::path dir;
  RunRecord record;
  RegistryEntry entry;
};

inline InvertResult invert(const RunConfig& c, const fs::path& root) {
  const auto p = build_problem(c);
  RunRecord rec = run_inversion(p);
  RunRegistry reg(root);
  rec.run_id = reg.allocate(c.digest());
  const fs::path dir = root / rec.run_id;
  RegistryEntry e{rec.run_id, to_string(c.pipeline), c.digest(), rec.problem_digest, rec.steps_done, rec.diverged,
                  format_double(rec.loss_history.back())};
  json extra = e.to_json();
  extra.erase("run_id");
  extra.erase("pipeline");
  extra.erase("problem_digest");
  extra.erase("steps_done");
  extra.erase("diverged");
  save_record(dir, p, rec, c.to_json(), extra);
  emit_artifacts(dir, c, p, rec);
  reg.append(e);
  return {dir, std::move(rec), e};
}

// ---- post-hoc tools over a run directory -------------------------------------------

struct RunView {
  json manifest;
  RunConfig config;
  std::shared_ptr<const AdapterModel> model;
  std::vector<std::size_t> steps;
  std::vector<std::vector<Tensor>> inputs;  // per checkpoint, per group
};

inline RunView open_run(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw ConfigError(dir.string() + " is not a run directory (no manifest.json)");
  RunView v;
  v.manifest = load_manifest(dir);
  v.config = RunConfig::from_json(v.manifest.at("config"));
  v.model = make_toy_model(v.config.pipeline, v.config.model_seed);
  for (const auto& ck : v.manifest.at("checkpoints")) {
    v.steps.push_back(ck.at("step").get<std::size_t>());
    std::vector<Tensor> in;
    for (const auto& g : v.model->input_groups()) {
      const auto f = dir / ck.at("files").at(g.name).get<std::string>();
      if (!fs::exists(f)) throw ConfigError("missing artifact " + f.string());
      in.push_back(read_tensor(f));
    }
    v.inputs.push_back(std::move(in));
  }
  return v;
}

inline Tensor read_target(const fs::path& dir) {
  const auto f = dir / "target.bin";
  if (!fs::exists(f)) throw ConfigError("missing artifact " + f.string());
  return read_tensor(f);
}

/// Mean of the given vocabulary rows.
inline std::vector<double> mean_embedding(const VocabTable& v, const std::vector<std::size_t>& ids) {
  std::vector<double> m(v.width(), 0.0);
  for (auto id : ids)
    for (std::size_t j = 0; j < v.width(); ++j) m[j] += v.embeddings.at(id, j) / static_cast<double>(ids.size());
  return m;
}

inline Tensor embedding_rows(const VocabTable& v, const std::vector<std::size_t>& ids) {
  std::vector<double> rows;
  for (auto id : ids)
    for (std::size_t j = 0; j < v.width(); ++j) rows.push_back(v.embeddings.at(id, j));
  return Tensor({ids.size(), v.width()}, std::move(rows));
}

inline std::vector<std::string> default_metrics(PipelineKind k) {
  switch (k) {
    case PipelineKind::captioner:
    case PipelineKind::asr: return {"clip", "bert"};
    case PipelineKind::generator: return {"clip", "mse"};
    case PipelineKind::tts: return {"lsd"};
  }
  return {};
}

inline std::vector<std::string> parse_metric_spec(const std::string& spec, PipelineKind k) {
  if (spec.empty() || spec == "default") return default_metrics(k);
  const auto allowed = default_metrics(k);
  std::vector<std::string> out;
  std::istringstream in(spec);
  std::string m;
  while (std::getline(in, m, ',')) {
    if (std::find(allowed.begin(), allowed.end(), m) == allowed.end())
      throw ConfigError("metric '" + m + "' is not available for the " + to_string(k) + " pipeline");
    out.push_back(m);
  }
  return out;
}

/// Per-checkpoint metric table: step,metric,category,value. Token pipelines
/// compare the greedy decode against the target phrase in the output
/// vocabulary's embedding space; dense pipelines compare model outputs with
/// the stored target. Undefined values (empty decode) are written as nan.
inline std::string metrics_csv(const fs::path& dir, const std::string& spec = "default") {
  const auto v = open_run(dir);
  const auto kind = v.config.pipeline;
  const auto metrics = parse_metric_spec(spec, kind);
  std::string s = "step,metric,category,value\n";
  auto row = [&s](std::size_t step, const std::string& m, const std::string& cat, double val) {
    s += std::to_string(step) + "," + m + "," + cat + "," + (std::isnan(val) ? "nan" : format_double(val)) + "\n";
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::optional<Tensor> target;
  if (!v.model->emits_tokens()) target = read_target(dir);
  std::vector<std::size_t> target_ids;
  if (v.model->emits_tokens()) {
    target_ids = v.config.target_tokens ? *v.config.target_tokens
                                        : tokenize(*v.model->output_vocab(), *v.config.target_text);
  }
  for (std::size_t i = 0; i < v.steps.size(); ++i) {
    const auto step = v.steps[i];
    if (v.model->emits_tokens()) {
      const auto& vocab = *v.model->output_vocab();
      const auto dec = greedy_decode(*v.model, v.inputs[i]).ids;
      for (const auto& m : metrics) {
        if (m == "clip") {
          row(step, "clip", "text", dec.empty() ? nan : clip_style_score(mean_embedding(vocab, dec), mean_embedding(vocab, target_ids)));
        } else if (m == "bert") {
          PrfScore p{nan, nan, nan};
          if (!dec.empty()) p = bert_style_f1(embedding_rows(vocab, dec), embedding_rows(vocab, target_ids));
          row(step, "bert", "precision", p.precision);
          row(step, "bert", "recall", p.recall);
          row(step, "bert", "f1", p.f1);
        }
      }
    } else {
      const auto out = v.model->forward(v.inputs[i]).detach();
      for (const auto& m : metrics) {
        if (m == "clip") row(step, "clip", "image", clip_style_score(out.data(), target->data()));
        if (m == "mse") row(step, "mse", "image", corpus::mean_sq_diff(out, *target));
        if (m == "lsd") {
          LogSpectralDistanceScorer lsd(audio::toy_tts_preset());
          const auto& cfg = static_cast<const ToyTts&>(*v.model).config();
          row(step, "lsd", "audio", lsd.score(target->data(), out.data(), cfg.sample_rate));
        }
      }
    }
  }
  return s;
}

inline std::string default_trajectory_group(PipelineKind k) {
  switch (k) {
    case PipelineKind::captioner: return "image";
    case PipelineKind::generator: return "pooled";
    case PipelineKind::asr: return "log_mel";
    case PipelineKind::tts: return "tokens";
  }
  return {};
}

/// step,x,y over the checkpoints of one input group (flattened).
inline std::pair<std::string, Trajectory> trajectory_csv(const fs::path& dir, std::string group = {}) {
  const auto v = open_run(dir);
  if (group.empty()) group = default_trajectory_group(v.config.pipeline);
  const auto& groups = v.model->input_groups();
  const auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.name == group; });
  if (it == groups.end()) throw ConfigError("run has no input group '" + group + "'");
  const auto gi = static_cast<std::size_t>(it - groups.begin());
  std::vector<Tensor> snaps;
  for (const auto& in : v.inputs) snaps.push_back(in[gi]);
  const auto t = project_trajectory(v.steps, snaps);
  std::string s = "step,x,y\n";
  for (const auto& p : t.points) s += std::to_string(p.step) + "," + format_double(p.x) + "," + format_double(p.y) + "\n";
  return {s, t};
}

/// Parses the step out of a step_NNNNNN_<group>.bin file name; 0 otherwise.
inline std::size_t step_from_filename(const fs::path& p) {
  const auto name = p.filename().string();
  if (name.rfind("step_", 0) != 0) return 0;
  try {
    return std::stoul(name.substr(5));
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace invlab::harness
