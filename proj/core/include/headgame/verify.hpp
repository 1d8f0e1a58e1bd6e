#pragma once

// Self-verification suite: gradient checks, algebraic identities and the
// runtime monitors, each on a small fixed configuration so the whole suite
// stays fast. Every check reports a worst-case value against a tolerance.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "headgame/autograd.hpp"
#include "headgame/config.hpp"
#include "headgame/losses.hpp"

namespace headgame {

enum class LossKind { kCe, kLdb, kAbt };

const char* to_string(LossKind k);

// Gradient check of one training loss with respect to every parameter of a
// small random model state drawn from `seed`. With inject_ldb_fault the LDB
// gradient is deliberately negated.
ag::GradientCheck loss_gradient_check(LossKind kind, std::uint64_t seed, const LossConfig& losses,
                                      double step = 1e-5, bool inject_ldb_fault = false);

// Small model, task and training settings used by the run-based checks.
Config fast_config();

struct VerifyOptions {
  std::map<std::string, double> tolerances;  // overrides keyed by check name
  std::vector<std::string> only;             // empty runs every check
  bool inject_ldb_fault = false;
  std::uint64_t seed = 0;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;  // worst observed statistic
  double tolerance = 0.0;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyReport {
  std::vector<CheckResult> results;
  double seconds = 0.0;

  bool passed() const;
  std::string to_json() const;
};

struct CheckInfo {
  std::string name;
  double tolerance = 0.0;
  std::string description;
};

std::vector<CheckInfo> list_checks();

// Throws ValidationError for unknown names in `only` or `tolerances`.
VerifyReport run_checks(const VerifyOptions& options = {});

}  // namespace headgame
