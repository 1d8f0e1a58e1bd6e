#pragma once

// Synthetic classification task with a closed-form oracle, and the training
// loop.
//
// Task: each class owns a Gaussian mixture over R^input_dim. An example is a
// sequence of seq_len tokens drawn iid from one class's mixture; the oracle
// row y*(x) is the exact class posterior given all tokens, and the training
// label is sampled from y*(x). A fixed sinusoidal positional offset is added
// to every token after sampling, so it carries no class information.
//
// Training: plain gradient descent. baseline_ce descends Phi (CE plus the
// share-weighted weight decay). game adds the scheduled log-determinant
// barrier and the EMA-normalized Barlow Twins loss and combines the three
// gradients with Nash bargaining weights.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "headgame/analysis.hpp"
#include "headgame/attention.hpp"
#include "headgame/errors.hpp"
#include "headgame/game.hpp"
#include "headgame/losses.hpp"
#include "headgame/numerics.hpp"

namespace headgame {

struct TaskConfig {
  std::size_t classes = 8;
  std::size_t input_dim = 32;
  std::size_t components = 2;  // mixture components per class
  double mean_std = 0.25;      // std of generated component means
  double var_min = 0.5;        // generated covariances are diagonal with
  double var_max = 1.5;        // variances uniform in [var_min, var_max]
  std::vector<double> priors;  // empty means uniform
  // Optional explicit mixture: means[c][m] (input_dim values) and matching
  // full covariances (row-major input_dim^2 values). Empty means generated.
  std::vector<std::vector<std::vector<double>>> means;
  std::vector<std::vector<std::vector<double>>> covariances;
  double pe_scale = 0.1;  // amplitude of the positional offset
  std::size_t n_train = 512;
  std::size_t n_eval = 512;
  std::uint64_t seed = 0;  // mixture structure; samples come from the run seed

  void validate() const;
};

struct Dataset {
  Matrix inputs;            // (n * seq_len) x input_dim, positional offset included
  Matrix oracle;            // n x classes
  std::vector<int> labels;  // sampled from the oracle rows
  Matrix targets;           // one-hot labels
  std::size_t seq_len = 1;

  std::size_t size() const { return labels.size(); }
  std::string fingerprint() const;
  Batch batch(std::span<const std::size_t> indices) const;
  Batch all() const;
};

struct MixtureComponent {
  Matrix mean;        // 1 x input_dim
  Matrix chol;        // lower Cholesky factor of the covariance
  double log_weight = 0.0;
  double log_norm = 0.0;  // -1/2 logdet(2 pi Sigma)
};

struct Task {
  TaskConfig cfg;
  std::size_t seq_len = 1;
  std::vector<double> log_priors;
  std::vector<std::vector<MixtureComponent>> mixture;  // [class][component]
  Dataset train;
  Dataset eval;

  // Exact class posterior for raw token rows (no positional offset).
  Matrix posterior(const Matrix& raw_tokens) const;
  // Offset added to every sequence, seq_len x input_dim.
  Matrix positional() const;
  // Mean entropy of the oracle rows of d.
  static double mean_entropy(const Dataset& d);
};

// Throws ValidationError for singular covariances.
Task make_task(const TaskConfig& cfg, std::size_t seq_len, std::uint64_t data_seed);

// Draws n fresh sequences from an existing task.
Dataset sample_dataset(const Task& task, std::size_t n, Rng& rng);

enum class TrainMode { kBaselineCe, kGame };

const char* to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kGame;
  std::uint64_t seed = 1;  // default run seed; the command line may override it
  std::size_t steps = 4000;
  double lr = 0.05;
  std::size_t snapshot_every = 25;
  double equilibrium_tol = 1e-5;
  std::size_t equilibrium_window = 50;
  bool stop_at_equilibrium = false;
  std::vector<double> deltas{0.1, 0.2, 0.4};
  std::vector<double> taus{0.1, 0.5};

  void validate() const;
};

struct MetricsRow {
  std::size_t step = 0;
  double ce = 0.0;
  double ldb_raw = 0.0;
  double abt_raw = 0.0;
  double abt_normalized = 0.0;
  double lambda_ldb_t = 0.0;
  double lambda_abt_t = 0.0;
  double alpha_ce = 0.0;
  double alpha_ldb = 0.0;
  double alpha_abt = 0.0;
  double gamma = 0.0;
  double grad_norm = 0.0;  // norm of the applied descent direction
  bool arb_fallback = false;
};

struct FinalReport {
  SocialObjectiveReport social;
  std::vector<HallucinationReport> hallucination;  // one per delta
  std::vector<FreeRiderReport> free_riders;        // one per tau
  ExternalityCharges charges;
  Matrix g;  // eval-set interaction matrix
  double gamma = 0.0;
  double eval_ce = 0.0;  // CE against sampled eval labels
};

struct RunLog {
  TrainMode mode = TrainMode::kGame;
  std::uint64_t seed = 0;
  std::string config_fingerprint;
  std::string eval_fingerprint;
  std::vector<MetricsRow> rows;
  std::vector<Snapshot> snapshots;
  FinalReport final;
  std::optional<std::size_t> equilibrium_step;  // first step closing a full window below tol
  std::size_t steps_run = 0;
  Params final_params;
};

// A non-finite value during training. Carries the step and the parameters
// before that step.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::size_t step, Params last_good, const std::string& what);
  std::size_t step() const { return step_; }
  const Params& last_good() const { return last_good_; }

 private:
  std::size_t step_;
  Params last_good_;
};

struct TrainSetup {
  ModelConfig model;
  LossConfig losses;
  GameSpec game;
  TrainConfig train;
  std::string config_fingerprint;
};

RunLog train(const TrainSetup& setup, const Task& task, std::uint64_t seed);
// Same, starting from given parameters.
RunLog train_from(const TrainSetup& setup, const Task& task, std::uint64_t seed, Params params);

// Reports for one parameter state on the task's eval set.
FinalReport evaluate_state(const Params& params, const TrainSetup& setup, const Task& task,
                           std::uint64_t seed);

// --- comparisons ----------------------------------------------------------------

struct RunComparison {
  // All deltas are baseline minus game: positive means game mode is better.
  double gamma_delta = 0.0;
  double c_ib_delta = 0.0;
  std::vector<double> deltas;        // hallucination thresholds
  std::vector<double> p_hat_delta;   // per delta
  std::vector<double> taus;
  std::vector<double> fr_count_delta;  // per tau
  double eval_ce_delta = 0.0;
};

// Throws ValidationError when the runs were evaluated on different sets.
RunComparison compare_runs(const RunLog& baseline, const RunLog& game);

struct SignTest {
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t ties = 0;
  double p_value = 1.0;  // two-sided exact binomial, ties dropped
};

SignTest sign_test(std::span<const double> deltas);

}  // namespace headgame
