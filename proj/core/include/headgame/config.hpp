#pragma once

// Run configuration. The on-disk dialect is JSON with six sections:
//
//   { "model": {...}, "task": {...}, "losses": {...},
//     "game": {...}, "train": {...}, "analysis": {...} }
//
// Every field is optional and defaults to the struct defaults below; unknown
// sections or keys are rejected with a message naming "section.key". The
// resolved form (all defaults filled in, keys sorted) is what runs echo to
// config.resolved, and parsing it reproduces the same Config exactly.

#include <cstddef>
#include <cstdint>
#include <string>

#include "headgame/attention.hpp"
#include "headgame/game.hpp"
#include "headgame/losses.hpp"
#include "headgame/trainer.hpp"

namespace headgame {

struct AnalysisConfig {
  std::size_t k = 0;  // 0 = eigengap selection
  std::size_t restarts = 8;
  std::size_t n_boot = 1000;
  std::size_t fit_grid = 200;
  std::size_t band_points = 101;
  std::size_t histogram_bins = 20;
  double dynamics_threshold = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Config {
  ModelConfig model;
  TaskConfig task;
  LossConfig losses;
  GameSpec game;
  TrainConfig train;
  AnalysisConfig analysis;

  void validate() const;
};

Config parse_config(const std::string& text);
// Error messages include the path.
Config load_config(const std::string& path);
std::string dump_config(const Config& cfg);

// Trainer inputs with the fingerprint of the resolved config.
TrainSetup make_setup(const Config& cfg);

}  // namespace headgame
