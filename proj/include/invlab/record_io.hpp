#pragma once

// On-disk layout of a run directory:
//
//   manifest.json            digest, config echo, schedule, checkpoint index
//   loss.csv                 step,loss
//   checkpoints/step_NNNNNN_<group>.bin
//   state/current_<group>.bin, state/m_<i>.bin, state/v_<i>.bin

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "invlab/engine.hpp"
#include "invlab/tensor_io.hpp"

namespace invlab {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string step_tag(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu", step);
  return buf;
}

inline std::string loss_csv(const RunRecord& rec) {
  std::string s = "step,loss\n";
  for (std::size_t t = 0; t < rec.loss_history.size(); ++t)
    s += std::to_string(t) + "," + format_double(rec.loss_history[t]) + "\n";
  return s;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

/// Writes the record into dir (created if needed). `config` is echoed
/// verbatim into the manifest; keys of `extra` are added at the top level.
inline void save_record(const fs::path& dir, const InversionProblem& p, const RunRecord& rec,
                        const json& config = json::object(), const json& extra = json::object()) {
  fs::create_directories(dir / "checkpoints");
  fs::create_directories(dir / "state");
  const auto& groups = p.model->input_groups();
  json m;
  m["format"] = "invlab-run/1";
  m["run_id"] = rec.run_id;
  m["problem_digest"] = rec.problem_digest;
  m["model"] = p.model->name();
  m["pipeline"] = to_string(p.model->kind());
  m["config"] = config;
  m["schedule"] = p.schedule;
  m["max_steps"] = p.max_steps;
  m["steps_done"] = rec.steps_done;
  m["diverged"] = rec.diverged;
  m["divergence_reason"] = rec.divergence_reason;
  m["wall_time_seconds"] = rec.wall_time_seconds;
  m["optimizer_step"] = rec.optimizer_state.step;
  json gs = json::array();
  for (const auto& g : groups) gs.push_back({{"name", g.name}, {"shape", g.shape}});
  m["input_groups"] = gs;
  json cks = json::array();
  for (const auto& [step, c] : rec.checkpoints) {
    json ck{{"step", step}, {"loss", c.loss}};
    json files = json::object();
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
      const auto name = step_tag(step) + "_" + groups[i].name + ".bin";
      write_tensor(dir / "checkpoints" / name, c.inputs[i]);
      files[groups[i].name] = "checkpoints/" + name;
    }
    ck["files"] = files;
    if (c.decoded) {
      ck["decoded_ids"] = c.decoded->ids;
      ck["decoded_text"] = c.decoded->text;
      ck["decoded_terminated"] = c.decoded->terminated;
    }
    cks.push_back(ck);
  }
  m["checkpoints"] = cks;
  for (const auto& [k, v] : extra.items()) m[k] = v;
  for (std::size_t i = 0; i < rec.current.size(); ++i)
    write_tensor(dir / "state" / ("current_" + groups[i].name + ".bin"), rec.current[i]);
  for (std::size_t i = 0; i < rec.optimizer_state.m.size(); ++i) {
    const auto& mv = rec.optimizer_state.m[i];
    const auto& vv = rec.optimizer_state.v[i];
    write_tensor(dir / "state" / ("m_" + std::to_string(i) + ".bin"), Tensor({mv.size()}, mv));
    write_tensor(dir / "state" / ("v_" + std::to_string(i) + ".bin"), Tensor({vv.size()}, vv));
  }
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  write_text(dir / "loss.csv", loss_csv(rec));
}

inline json load_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw Error("missing manifest in " + dir.string());
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
}

inline std::vector<double> parse_loss_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (line != "step,loss") throw FormatError("loss.csv has an unexpected header");
  std::vector<double> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("malformed loss.csv row");
    if (std::stoul(line.substr(0, comma)) != out.size()) throw FormatError("loss.csv steps out of order");
    out.push_back(std::stod(line.substr(comma + 1)));
  }
  return out;
}

/// Reads a run directory back into a record that resume() accepts.
inline RunRecord load_record(const fs::path& dir) {
  const json m = load_manifest(dir);
  RunRecord rec;
  rec.run_id = m.at("run_id").get<std::string>();
  rec.problem_digest = m.at("problem_digest").get<std::string>();
  rec.steps_done = m.at("steps_done").get<std::size_t>();
  rec.diverged = m.at("diverged").get<bool>();
  rec.divergence_reason = m.value("divergence_reason", "");
  rec.wall_time_seconds = m.value("wall_time_seconds", 0.0);
  rec.loss_history = parse_loss_csv(read_text(dir / "loss.csv"));
  if (rec.loss_history.size() != rec.steps_done + 1) throw FormatError("loss.csv length disagrees with manifest");
  std::vector<std::string> names;
  for (const auto& g : m.at("input_groups")) names.push_back(g.at("name").get<std::string>());
  for (const auto& ck : m.at("checkpoints")) {
    Checkpoint c;
    c.step = ck.at("step").get<std::size_t>();
    c.loss = ck.at("loss").get<double>();
    for (const auto& n : names) c.inputs.push_back(read_tensor(dir / ck.at("files").at(n).get<std::string>()));
    if (ck.contains("decoded_ids")) {
      DecodeResult d;
      d.ids = ck.at("decoded_ids").get<std::vector<std::size_t>>();
      d.text = ck.at("decoded_text").get<std::string>();
      d.terminated = ck.value("decoded_terminated", false);
      c.decoded = d;
    }
    rec.checkpoints[c.step] = std::move(c);
  }
  for (const auto& n : names) {
    auto t = read_tensor(dir / "state" / ("current_" + n + ".bin"));
    t.set_requires_grad(true);
    rec.current.push_back(t);
  }
  rec.optimizer_state.step = m.value("optimizer_step", std::uint64_t{0});
  for (std::size_t i = 0;; ++i) {
    const auto mp = dir / "state" / ("m_" + std::to_string(i) + ".bin");
    if (!fs::exists(mp)) break;
    rec.optimizer_state.m.push_back(read_tensor(mp).values());
    rec.optimizer_state.v.push_back(read_tensor(dir / "state" / ("v_" + std::to_string(i) + ".bin")).values());
  }
  return rec;
}

}  // namespace invlab
