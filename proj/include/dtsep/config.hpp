#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtsep/dataset.hpp"
#include "dtsep/error.hpp"
#include "dtsep/mlp.hpp"
#include "dtsep/stft.hpp"

namespace dtsep {

/// Run settings. Defaults reproduce the reference configuration: 4 kHz audio,
/// 128-sample Hann STFT at hop 1, 20-frame windows every 10 frames, a
/// 2600-2600-5200 network trained for 500 epochs, 120 s train / 10 s test.
struct RunConfig {
  int sample_rate = 4000;
  StftConfig stft;
  WindowGeometry window;
  std::vector<std::size_t> mlp_geometry{2600, 2600, 5200};
  TrainConfig train;
  bool gain_adaptation = true;
  int eval_every = 1;
  double train_start_s = 0.0;
  double train_seconds = 120.0;
  double test_seconds = 10.0;

  std::size_t network_input() const {
    return input_size(static_cast<std::size_t>(stft.bins()), static_cast<std::size_t>(window.width));
  }

  void validate() const {
    if (sample_rate <= 0) throw Error(ErrorKind::InvalidArgument, "sample_rate must be positive");
    stft.validate();
    window.validate();
    train.validate();
    if (eval_every < 1) throw Error(ErrorKind::InvalidArgument, "eval_every must be >= 1");
    if (train_start_s < 0.0 || train_seconds <= 0.0 || test_seconds <= 0.0) {
      throw Error(ErrorKind::InvalidArgument, "split offsets must be non-negative and spans positive");
    }
    if (mlp_geometry.size() < 2) {
      throw Error(ErrorKind::InvalidArgument, "mlp.geometry needs at least input and output sizes");
    }
    const std::size_t in = network_input();
    if (mlp_geometry.front() != in || mlp_geometry.back() != 2 * in) {
      throw Error(ErrorKind::ShapeMismatch,
                  "mlp.geometry must start at 2*bins*width = " + std::to_string(in) +
                      " and end at " + std::to_string(2 * in) + ", got " +
                      std::to_string(mlp_geometry.front()) + "..." +
                      std::to_string(mlp_geometry.back()));
    }
    for (std::size_t s : mlp_geometry)
      if (s == 0) throw Error(ErrorKind::InvalidArgument, "mlp.geometry has a zero-size layer");
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["sample_rate"] = c.sample_rate;
  j["stft.window_size"] = c.stft.window_size;
  j["stft.hop"] = c.stft.hop;
  j["window.width"] = c.window.width;
  j["window.train_hop"] = c.window.train_hop;
  j["mlp.geometry"] = c.mlp_geometry;
  j["train.learning_rate"] = c.train.learning_rate;
  j["train.epochs"] = c.train.epochs;
  j["train.seed"] = c.train.seed;
  j["train.shuffle"] = c.train.shuffle;
  j["gain_adaptation"] = c.gain_adaptation;
  j["eval_every"] = c.eval_every;
  j["split.train_start_s"] = c.train_start_s;
  j["split.train_seconds"] = c.train_seconds;
  j["split.test_seconds"] = c.test_seconds;
  return j;
}

/// Applies the keys present in `j` on top of `base`. Unknown keys are errors.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidArgument, "config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "sample_rate") base.sample_rate = v.get<int>();
      else if (key == "stft.window_size") base.stft.window_size = v.get<int>();
      else if (key == "stft.hop") base.stft.hop = v.get<int>();
      else if (key == "window.width") base.window.width = v.get<int>();
      else if (key == "window.train_hop") base.window.train_hop = v.get<int>();
      else if (key == "mlp.geometry") base.mlp_geometry = v.get<std::vector<std::size_t>>();
      else if (key == "train.learning_rate") base.train.learning_rate = v.get<double>();
      else if (key == "train.epochs") base.train.epochs = v.get<int>();
      else if (key == "train.seed") base.train.seed = v.get<std::uint64_t>();
      else if (key == "train.shuffle") base.train.shuffle = v.get<bool>();
      else if (key == "gain_adaptation") base.gain_adaptation = v.get<bool>();
      else if (key == "eval_every") base.eval_every = v.get<int>();
      else if (key == "split.train_start_s") base.train_start_s = v.get<double>();
      else if (key == "split.train_seconds") base.train_seconds = v.get<double>();
      else if (key == "split.test_seconds") base.test_seconds = v.get<double>();
      else throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("bad config value: ") + e.what());
  }
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::FileNotFound, "cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open for writing: " + path.string());
  out << to_json(c).dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

}  // namespace dtsep
