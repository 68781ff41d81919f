#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "invlab/harness.hpp"

using namespace invlab;
using namespace invlab::harness;

namespace {

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("invlab_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RunConfig config(const std::string& text) { return RunConfig::from_json(json::parse(text)); }

std::vector<std::string> files_under(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).string());
  std::sort(out.begin(), out.end());
  return out;
}

int cli(const std::string& args) {
  const int rc = std::system((std::string(INVLAB_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) { return read_text(p); }

}  // namespace

TEST(RunConfig, DefaultsFollowThePipeline) {
  auto cap = config(R"({"pipeline":"captioner","target_text":"red apple"})");
  EXPECT_EQ(cap.schedule, (std::vector<std::size_t>{0, 10, 100, 1000, 10000}));
  EXPECT_EQ(cap.max_steps, 10000u);
  EXPECT_EQ(cap.optimizer.kind, OptimizerKind::adam);
  EXPECT_EQ(cap.optimizer.learning_rate, 0.1);
  auto asr = config(R"({"pipeline":"asr","target_tokens":[1,2]})");
  EXPECT_EQ(asr.schedule, (std::vector<std::size_t>{0, 750, 1500, 2250, 3000}));
  EXPECT_EQ(asr.optimizer.kind, OptimizerKind::adamw);
  EXPECT_EQ(asr.optimizer.weight_decay, 0.01);
  auto gen = config(R"({"pipeline":"generator","target_seed":1})");
  EXPECT_EQ(gen.schedule.size(), 9u);
  EXPECT_EQ(gen.schedule.back(), 200u);
  EXPECT_EQ(gen.optimizer.learning_rate, 0.01);
  auto tts = config(R"({"pipeline":"tts","target_seed":1})");
  EXPECT_EQ(tts.schedule, (std::vector<std::size_t>{0, 250, 500, 750, 1000}));
  EXPECT_EQ(tts.optimizer.learning_rate, 0.01);
}

TEST(RunConfig, LengthFieldsFillEachOther) {
  auto a = config(R"({"pipeline":"captioner","target_text":"red","max_steps":500})");
  EXPECT_EQ(a.schedule, (std::vector<std::size_t>{0, 10, 100, 500}));
  auto b = config(R"({"pipeline":"captioner","target_text":"red","schedule":[0,5,20]})");
  EXPECT_EQ(b.max_steps, 20u);
  auto c = config(R"({"pipeline":"captioner","target_text":"red","max_steps":0})");
  EXPECT_EQ(c.schedule, (std::vector<std::size_t>{0}));
}

TEST(RunConfig, RejectsBadConfigs) {
  EXPECT_THROW(config(R"({"pipeline":"captioner","target_text":"red","lr":0.1})"), ConfigError);
  EXPECT_THROW(config(R"({"target_text":"red"})"), ConfigError);
  EXPECT_THROW(config(R"({"pipeline":"painter","target_text":"red"})"), ConfigError);
  EXPECT_THROW(config(R"({"pipeline":"captioner"})"), ConfigError);
  EXPECT_THROW(config(R"({"pipeline":"captioner","target_text":"red","target_tokens":[2]})"), ConfigError);
  EXPECT_THROW(config(R"({"pipeline":"captioner","target_seed":3})"), ConfigError);
  EXPECT_THROW(config(R"({"pipeline":"generator","target_text":"red"})"), ConfigError);
  EXPECT_THROW(config(R"({"pipeline":"captioner","target_text":"red","max_steps":"ten"})"), ConfigError);
  EXPECT_THROW(config(R"({"pipeline":"captioner","target_text":"red","learning_rate":-1})"), ConfigError);
  EXPECT_THROW(config(R"({"pipeline":"captioner","target_text":"red","init":"zeros"})"), ConfigError);
  EXPECT_THROW(config(R"({"pipeline":"captioner","target_text":"red","init":"base_input"})"), ConfigError);
  EXPECT_THROW(config(R"({"pipeline":"tts","target_seed":1,"mel_norm":"l3"})"), ConfigError);
  EXPECT_THROW(config(R"([1,2])"), ConfigError);
  EXPECT_THROW(build_problem(config(R"({"pipeline":"captioner","target_text":"purple apple"})")), ConfigError);
  EXPECT_THROW(build_problem(config(R"({"pipeline":"captioner","target_text":"red","schedule":[1,5]})")), ConfigError);
}

TEST(RunConfig, NormalFormRoundTripsAndDigestIsStable) {
  auto a = config(R"({"pipeline":"tts","target_seed":4,"box":[-2,2],"max_grad_norm":5,"mel_norm":"l2"})");
  auto b = RunConfig::from_json(a.to_json());
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.digest(), b.digest());
  auto c = config(R"({"mel_norm":"l2","max_grad_norm":5,"box":[-2,2],"target_seed":4,"pipeline":"tts"})");
  EXPECT_EQ(a.digest(), c.digest());
  auto d = config(R"({"pipeline":"tts","target_seed":4,"box":[-2,2],"max_grad_norm":5,"mel_norm":"l2","seed":1})");
  EXPECT_NE(a.digest(), d.digest());
}

TEST(RunConfig, RelativePathsResolveAgainstTheConfigFile) {
  const auto dir = scratch("paths");
  write_text(dir / "c.json", R"({"pipeline":"generator","target_image":"img/t.png"})");
  EXPECT_EQ(load_config(dir / "c.json").target_image, (dir / "img/t.png").string());
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
  write_text(dir / "bad.json", "{not json");
  EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
}

TEST(Png, RoundTripAndTargetMapping) {
  const auto dir = scratch("png");
  png::GrayImage img{16, 16, {}};
  for (std::size_t i = 0; i < 256; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i));
  png::write_gray(dir / "t.png", img);
  auto back = png::read_gray(dir / "t.png");
  EXPECT_EQ(back.pixels, img.pixels);
  auto p = build_problem(config(R"({"pipeline":"generator","target_image":")" + (dir / "t.png").string() + "\"}"));
  const auto& t = std::get<Tensor>(p.target);
  EXPECT_EQ(t[0], -1.0);
  EXPECT_EQ(t[255], 1.0);
  png::write_gray(dir / "small.png", {4, 4, std::vector<std::uint8_t>(16, 0)});
  EXPECT_THROW(build_problem(config(R"({"pipeline":"generator","target_image":")" + (dir / "small.png").string() + "\"}")),
               ConfigError);
  write_text(dir / "junk.png", "not a png");
  EXPECT_THROW(png::read_gray(dir / "junk.png"), FormatError);
}

TEST(Targets, WavGeometryIsChecked) {
  const auto dir = scratch("wav");
  audio::write_wav(dir / "ok.wav", std::vector<double>(4096, 0.25), 8000);
  audio::write_wav(dir / "short.wav", std::vector<double>(4000, 0.25), 8000);
  audio::write_wav(dir / "rate.wav", std::vector<double>(4096, 0.25), 16000);
  auto p = build_problem(config(R"({"pipeline":"tts","target_wav":")" + (dir / "ok.wav").string() + "\"}"));
  EXPECT_EQ(std::get<Tensor>(p.target).numel(), 4096u);
  for (auto bad : {"short.wav", "rate.wav"})
    EXPECT_THROW(build_problem(config(R"({"pipeline":"tts","target_wav":")" + (dir / bad).string() + "\"}")), ConfigError);
}

TEST(Targets, BaseInputsLoad) {
  const auto dir = scratch("base");
  png::write_gray(dir / "b.png", {32, 32, std::vector<std::uint8_t>(32 * 32, 255)});
  auto p = build_problem(config(R"({"pipeline":"captioner","target_text":"red","init":"base_input","base_image":")" +
                                (dir / "b.png").string() + "\"}"));
  ASSERT_EQ(p.init.base.size(), 1u);
  EXPECT_EQ(p.init.base[0][0], 1.0);
  std::vector<double> w(16000);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 * std::sin(2.0 * std::numbers::pi * 220.0 * i / 16000.0);
  audio::write_wav(dir / "b.wav", w, 16000);
  auto q = build_problem(config(R"({"pipeline":"asr","target_text":"red","init":"base_input","base_wav":")" +
                                (dir / "b.wav").string() + "\"}"));
  EXPECT_EQ(q.init.base[0].shape(), (Shape{16, 100}));
}

TEST(Invert, ZeroStepsWritesOnlyTheStepZeroSet) {
  const auto root = scratch("zero");
  auto r = invert(config(R"({"pipeline":"captioner","target_text":"red apple on","max_steps":0})"), root);
  const auto files = files_under(r.dir);
  std::vector<std::string> ckpt;
  for (const auto& f : files)
    if (f.rfind("checkpoints/", 0) == 0 || f.rfind("images/", 0) == 0) ckpt.push_back(f);
  EXPECT_EQ(ckpt, (std::vector<std::string>{"checkpoints/step_000000_image.bin", "images/step_000000.png"}));
  const auto loss = slurp(r.dir / "loss.csv");
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 2);
  const auto dec = slurp(r.dir / "decoded.csv");
  EXPECT_EQ(dec.rfind("step,ids,text,terminated\n0,", 0), 0u);
  EXPECT_EQ(std::count(dec.begin(), dec.end(), '\n'), 2);
}

TEST(Invert, AsrPresetReachesTheTargetPhrase) {
  const auto root = scratch("asr");
  auto c = config(R"({"pipeline":"asr","target_text":"a red apple"})");
  c.set_length(std::nullopt, std::vector<std::size_t>{0, 3000});  // fewer Griffin-Lim renders
  auto r = invert(c, root);
  ASSERT_FALSE(r.record.diverged);
  const auto& d = r.record.checkpoints.at(3000).decoded;
  EXPECT_EQ(d->text, "a red apple");
  EXPECT_TRUE(d->terminated);
  for (auto f : {"audio/step_003000.wav", "spectrograms/step_003000.png", "waveforms/step_003000.png",
                 "reconstruction.csv"})
    EXPECT_TRUE(fs::exists(r.dir / f)) << f;
  const auto m = metrics_csv(r.dir);
  EXPECT_NE(m.find("3000,clip,text,2.5\n"), std::string::npos);
  EXPECT_NE(m.find("3000,bert,f1,1\n"), std::string::npos);
}

TEST(Invert, EveryScheduleStepAppearsOnce) {
  const auto root = scratch("sched");
  auto r = invert(config(R"({"pipeline":"generator","target_seed":2,"schedule":[0,3,7,20]})"), root);
  const auto est = slurp(r.dir / "token_estimates_pooled.csv");
  for (std::size_t s : {0, 3, 7, 20}) {
    EXPECT_TRUE(fs::exists(r.dir / "images" / (step_tag(s) + ".png")));
    EXPECT_TRUE(fs::exists(r.dir / "checkpoints" / (step_tag(s) + "_tokens.bin")));
    EXPECT_NE(est.find("\n" + std::to_string(s) + ",0,"), std::string::npos);
  }
  EXPECT_EQ(files_under(r.dir / "images").size(), 4u);
  // One pooled row per checkpoint, four token rows per checkpoint.
  EXPECT_EQ(std::count(est.begin(), est.end(), '\n'), 1 + 4);
  const auto tok = slurp(r.dir / "token_estimates_tokens.csv");
  EXPECT_EQ(std::count(tok.begin(), tok.end(), '\n'), 1 + 4 * 4);
}

TEST(Invert, RerunsGiveIdenticalCsvs) {
  const auto root = scratch("determinism");
  for (auto text : {R"({"pipeline":"generator","target_seed":3,"max_steps":40,"schedule":[0,20,40]})",
                    R"({"pipeline":"tts","target_seed":3,"max_steps":20,"schedule":[0,10,20]})",
                    R"({"pipeline":"captioner","target_text":"dog","max_steps":30,"schedule":[0,30]})"}) {
    auto a = invert(config(text), root), b = invert(config(text), root);
    EXPECT_NE(a.dir, b.dir);
    const auto fa = files_under(a.dir);
    ASSERT_EQ(fa, files_under(b.dir));
    for (const auto& f : fa)
      if (f.ends_with(".csv") || f.ends_with(".bin") || f.ends_with(".tsv") || f.ends_with(".wav") || f.ends_with(".png"))
        EXPECT_EQ(slurp(a.dir / f), slurp(b.dir / f)) << f;
    EXPECT_EQ(metrics_csv(a.dir), metrics_csv(b.dir));
  }
}

TEST(Invert, DivergedRunKeepsPartialArtifacts) {
  const auto root = scratch("diverge");
  auto r = invert(config(R"({"pipeline":"generator","target_seed":1,"divergence_threshold":1e-9})"), root);
  EXPECT_TRUE(r.record.diverged);
  EXPECT_TRUE(fs::exists(r.dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(r.dir / "loss.csv"));
  EXPECT_TRUE(load_manifest(r.dir).at("diverged").get<bool>());
}

TEST(Registry, RebuiltIndexEqualsIncrementalIndex) {
  const auto root = scratch("registry");
  std::set<std::string> ids;
  for (int i = 0; i < 3; ++i) {
    auto r = invert(config(R"({"pipeline":"generator","target_seed":1,"max_steps":5})"), root);
    ids.insert(r.entry.run_id);
  }
  invert(config(R"({"pipeline":"captioner","target_text":"cat","max_steps":0})"), root);
  EXPECT_EQ(ids.size(), 3u);
  RunRegistry reg(root);
  const auto idx = reg.index();
  EXPECT_EQ(idx.size(), 4u);
  EXPECT_EQ(idx, reg.scan());
}

TEST(PostHoc, MetricsAtTheTargetAreMaximal) {
  const auto root = scratch("metrics");
  // Starting from the seed that generated the target puts step 0 on the target.
  auto g = invert(config(R"({"pipeline":"generator","target_seed":6,"seed":6,"max_steps":0})"), root);
  const auto m = metrics_csv(g.dir);
  ASSERT_EQ(m.rfind("step,metric,category,value\n0,clip,image,", 0), 0u);
  EXPECT_NEAR(std::stod(m.substr(m.find("image,") + 6)), 2.5, 1e-12);
  EXPECT_NE(m.find("\n0,mse,image,0\n"), std::string::npos);
  auto t = invert(config(R"({"pipeline":"tts","target_seed":6,"seed":6,"max_steps":0})"), root);
  EXPECT_EQ(metrics_csv(t.dir), "step,metric,category,value\n0,lsd,audio,0\n");
  EXPECT_THROW(metrics_csv(g.dir, "lsd"), ConfigError);
  EXPECT_THROW(metrics_csv(root / "nope"), ConfigError);
  fs::remove(g.dir / "target.bin");
  EXPECT_THROW(metrics_csv(g.dir), ConfigError);
}

TEST(PostHoc, TrajectoryAndTokenTables) {
  const auto root = scratch("traj");
  auto r = invert(config(R"({"pipeline":"generator","target_seed":2,"max_steps":50,"schedule":[0,10,20,50]})"), root);
  const auto [csv, t] = trajectory_csv(r.dir);
  EXPECT_EQ(t.points.size(), 4u);
  EXPECT_FALSE(t.degenerate);
  EXPECT_EQ(csv.rfind("step,x,y\n0,", 0), 0u);
  EXPECT_THROW(trajectory_csv(r.dir, "nothing"), ConfigError);
  const auto vocab = parse_vocab_tsv(slurp(r.dir / "vocab_tokens.tsv"));
  const auto model = make_toy_model(PipelineKind::generator, 0);
  const auto* orig = model->input_vocab("tokens");
  EXPECT_EQ(vocab.tokens, orig->tokens);
  EXPECT_EQ(vocab.embeddings.values(), orig->embeddings.values());
  EXPECT_THROW(parse_vocab_tsv("a\t1\t2\nb\t3\n"), FormatError);
}

TEST(Cli, ExitCodes) {
  const auto root = scratch("cli");
  write_text(root / "ok.json", R"({"pipeline":"captioner","target_text":"red apple","max_steps":3})");
  write_text(root / "typo.json", R"({"pipeline":"captioner","target_text":"red apple","stpes":3})");
  write_text(root / "div.json", R"({"pipeline":"generator","target_seed":1,"divergence_threshold":1e-9})");
  const auto out = (root / "runs").string();
  EXPECT_EQ(cli("invert --config " + (root / "ok.json").string() + " --out " + out), 0);
  EXPECT_EQ(cli("invert --config " + (root / "typo.json").string() + " --out " + out), 2);
  EXPECT_EQ(cli("invert --config " + (root / "missing.json").string() + " --out " + out), 2);
  EXPECT_EQ(cli("invert --config " + (root / "div.json").string() + " --out " + out), 3);
  EXPECT_EQ(cli("invert --config " + (root / "ok.json").string() + " --out " + out + " --schedule 0,x"), 2);
  EXPECT_EQ(cli("list-runs --out " + out), 0);
  EXPECT_EQ(RunRegistry(out).scan().size(), 2u);
}

TEST(Cli, EnvironmentOverridesOnlyTheOutputRoot) {
  const auto root = scratch("env");
  write_text(root / "c.json", R"({"pipeline":"captioner","target_text":"cat","max_steps":2,"out":")" +
                                  (root / "from_config").string() + "\"}");
  const std::string env = "INVLAB_OUT=" + (root / "from_env").string() + " ";
  ASSERT_EQ(std::system((env + INVLAB_CLI + " invert --config " + (root / "c.json").string() + " >/dev/null 2>&1").c_str()), 0);
  EXPECT_EQ(RunRegistry(root / "from_env").scan().size(), 1u);
  ASSERT_EQ(cli("invert --config " + (root / "c.json").string()), 0);
  EXPECT_EQ(RunRegistry(root / "from_config").scan().size(), 1u);
}

TEST(Cli, DecodeTokensSelfMatchAndWidthMismatch) {
  const auto root = scratch("decode");
  auto r = invert(config(R"({"pipeline":"generator","target_seed":1,"max_steps":0})"), root);
  const auto vocab = parse_vocab_tsv(slurp(r.dir / "vocab_tokens.tsv"));
  std::vector<double> rows;
  for (std::size_t id : {5, 9, 0, 63})
    for (std::size_t j = 0; j < vocab.width(); ++j) rows.push_back(vocab.embeddings.at(id, j) * 3.0);
  write_tensor(root / "step_000042_q.bin", Tensor({4, vocab.width()}, rows));
  const auto csv = (root / "out.csv").string();
  ASSERT_EQ(cli("decode-tokens " + (root / "step_000042_q.bin").string() + " " + (r.dir / "vocab_tokens.tsv").string() +
                " --k 2 --out " + csv),
            0);
  const auto text = slurp(csv);
  EXPECT_EQ(text.rfind(kTokenEstimateHeader, 0), 0u);
  for (auto [pos, id] : {std::pair{0, 5}, {1, 9}, {2, 0}, {3, 63}}) {
    const auto needle = "42," + std::to_string(pos) + "," + std::to_string(id) + ",";
    EXPECT_NE(text.find(needle), std::string::npos) << needle;
  }
  EXPECT_EQ(cli("decode-tokens " + (root / "step_000042_q.bin").string() + " " + (r.dir / "vocab_pooled.tsv").string()), 2);
}

TEST(Cli, ReconstructAudio) {
  const auto root = scratch("recon");
  write_tensor(root / "silent.bin", Tensor::full({16, 100}, -10.0));
  const auto wav = (root / "s.wav").string();
  ASSERT_EQ(cli("reconstruct-audio " + (root / "silent.bin").string() + " --iterations 4 --out " + wav), 0);
  const auto w = audio::read_wav(wav);
  EXPECT_EQ(w.sample_rate, 16000u);
  EXPECT_EQ(w.samples.size(), 99u * 160 + 400);
  for (double s : w.samples) ASSERT_EQ(s, 0.0);
  write_tensor(root / "wrong.bin", Tensor::full({20, 100}, -10.0));
  EXPECT_EQ(cli("reconstruct-audio " + (root / "wrong.bin").string() + " --out " + wav), 2);
}

TEST(Reconstruction, SineLogMelRoundTrip) {
  auto cfg = audio::toy_asr_preset();
  std::vector<double> w(16000);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * i / 16000.0);
  const auto lm = audio::log_mel(Tensor({w.size()}, w), cfg).values;
  const auto r = reconstruct_audio(lm, cfg, 32);
  EXPECT_TRUE(std::isfinite(r.spectral_convergence));
  EXPECT_LT(r.spectral_convergence, 0.5);
}
