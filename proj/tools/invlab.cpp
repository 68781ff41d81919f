// invlab: command-line driver for inversion runs and their post-hoc analysis.
//
// Exit codes: 0 ok, 2 invalid config or input, 3 run diverged (artifacts kept),
// 1 anything else.

#include <iostream>

#include "CLI11.hpp"
#include "invlab/harness.hpp"

namespace fs = std::filesystem;
using namespace invlab;
using namespace invlab::harness;

namespace {

std::vector<std::size_t> parse_schedule(const std::string& s) {
  std::vector<std::size_t> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoul(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("--schedule expects comma-separated step numbers, got '" + tok + "'");
    }
  }
  return out;
}

void emit(const std::string& text, const std::optional<std::string>& out) {
  if (!out) {
    std::cout << text;
    return;
  }
  write_text(*out, text);
  std::cerr << "wrote " << *out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-inversion lab: optimise model inputs toward target outputs and inspect the results"};
  app.require_subcommand(1);

  std::string config_path, run_dir, checkpoint, vocab_path, metric_spec = "default", group, preset = "toy_asr";
  std::optional<std::string> out, schedule;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::size_t k = 1;
  int iterations = 32;

  auto* inv = app.add_subcommand("invert", "Run one inversion from a JSON config and write its run directory");
  inv->add_option("--config", config_path, "Run config (JSON object)")->required();
  inv->add_option("--out", out, "Output root (overrides INVLAB_OUT and the config)");
  inv->add_option("--seed", seed, "Override the initialisation seed");
  inv->add_option("--steps", steps, "Override max_steps");
  inv->add_option("--schedule", schedule, "Override the checkpoint schedule, e.g. 0,10,100");

  auto* dec = app.add_subcommand("decode-tokens", "Nearest vocabulary tokens for an embedding checkpoint");
  dec->add_option("checkpoint", checkpoint, "Tensor file [n x E] or [E]")->required();
  dec->add_option("vocab", vocab_path, "Vocabulary TSV: token<TAB>e1<TAB>...")->required();
  dec->add_option("--k", k, "Top-k per position")->check(CLI::PositiveNumber);
  dec->add_option("--out", out, "CSV destination (default stdout)");

  auto* rec = app.add_subcommand("reconstruct-audio", "Griffin-Lim waveform from a log-mel checkpoint");
  rec->add_option("checkpoint", checkpoint, "Tensor file [n_mels x frames]")->required();
  rec->add_option("--preset", preset, "Spectrogram geometry")->check(CLI::IsMember({"toy_asr", "toy_tts", "whisper"}));
  rec->add_option("--iterations", iterations, "Griffin-Lim iterations")->check(CLI::PositiveNumber);
  rec->add_option("--out", out, "WAV destination")->required();

  auto* met = app.add_subcommand("metrics", "Per-checkpoint consistency metrics of a run");
  met->add_option("run", run_dir, "Run directory")->required();
  met->add_option("--metrics", metric_spec, "Comma-separated metric names or 'default'");
  met->add_option("--out", out, "CSV destination (default stdout)");

  auto* traj = app.add_subcommand("project-trajectory", "2-D PCA projection of an input group across checkpoints");
  traj->add_option("run", run_dir, "Run directory")->required();
  traj->add_option("--group", group, "Input group (default depends on the pipeline)");
  traj->add_option("--out", out, "CSV destination (default stdout)");

  auto* list = app.add_subcommand("list-runs", "List runs under the output root, rebuilt from the run manifests");
  list->add_option("--out", out, "Output root (overrides INVLAB_OUT)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*inv) {
      auto cfg = load_config(config_path);
      if (seed) cfg.seed = *seed;
      if (schedule) {
        cfg.set_length(steps, parse_schedule(*schedule));
      } else if (steps) {
        // Keep the configured checkpoints that still fit and end on the last step.
        std::vector<std::size_t> kept;
        for (auto s : cfg.schedule)
          if (s < *steps) kept.push_back(s);
        kept.push_back(*steps);
        cfg.set_length(steps, kept);
      }
      cfg.check();
      const auto result = invert(cfg, output_root(out, &cfg));
      std::cout << result.dir.string() << "\n";
      std::cerr << "steps " << result.record.steps_done << ", final loss " << result.entry.final_loss << "\n";
      if (result.record.diverged) {
        std::cerr << "diverged: " << result.record.divergence_reason << "\n";
        return 3;
      }
    } else if (*dec) {
      const auto t = read_tensor(checkpoint);
      const auto vocab = parse_vocab_tsv(read_text(vocab_path));
      emit(std::string(kTokenEstimateHeader) + token_estimate_rows(step_from_filename(checkpoint), t, vocab, k), out);
    } else if (*rec) {
      const auto cfg = preset == "whisper" ? audio::whisper_preset()
                       : preset == "toy_tts" ? audio::toy_tts_preset()
                                              : audio::toy_asr_preset();
      const auto r = reconstruct_audio(read_tensor(checkpoint), cfg, iterations);
      audio::write_wav(*out, fit_pcm(r.wave), static_cast<std::uint32_t>(cfg.sample_rate));
      std::cout << "spectral_convergence," << format_double(r.spectral_convergence) << "\n";
    } else if (*met) {
      emit(metrics_csv(run_dir, metric_spec), out);
    } else if (*traj) {
      const auto [csv, t] = trajectory_csv(run_dir, group);
      if (t.degenerate) std::cerr << "degenerate trajectory: every checkpoint is identical\n";
      emit(csv, out);
    } else if (*list) {
      RunRegistry reg(output_root(out));
      std::cout << "run_id,pipeline,steps_done,diverged,final_loss\n";
      for (const auto& e : reg.scan())
        std::cout << e.run_id << "," << e.pipeline << "," << e.steps_done << "," << (e.diverged ? 1 : 0) << ","
                  << e.final_loss << "\n";
    }
  } catch (const invlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
