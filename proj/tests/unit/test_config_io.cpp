#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "headgame/config.hpp"
#include "headgame/errors.hpp"
#include "headgame/runlog_io.hpp"
#include "headgame/trainer.hpp"
#include "headgame/verify.hpp"

using namespace headgame;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("headgame_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("config_io") {
  TEST_CASE("empty document resolves to defaults") {
    const Config c = parse_config("{}");
    CHECK(c.model.heads == 8);
    CHECK(c.model.head_dim == 4);
    CHECK(c.model.seq_len == 8);
    CHECK(c.model.batch_size == 32);
    CHECK(c.model.classes == 8);
    CHECK(c.model.b_clip == 10.0);
    CHECK(c.task.input_dim == 32);
    CHECK(c.train.steps == 4000);
    CHECK(c.train.lr == 0.05);
    CHECK(c.train.snapshot_every == 25);
    CHECK(c.losses.lambda_abt == 0.179);
    CHECK(c.game.sigma_z == 0.05);
    CHECK(c.analysis.n_boot == 1000);
  }

  TEST_CASE("unknown keys and sections are named in the error") {
    CHECK(error_of(R"({"model": {"headz": 3}})").find("model.headz") != std::string::npos);
    CHECK(error_of(R"({"modle": {}})").find("modle") != std::string::npos);
    CHECK(error_of(R"({"train": {"mode": "sgd"}})").find("train.mode") != std::string::npos);
    CHECK(error_of(R"({"model": {"heads": "eight"}})").find("model.heads") != std::string::npos);
    CHECK_FALSE(error_of("{not json").empty());
  }

  TEST_CASE("resolved form round-trips exactly") {
    Config c = parse_config(R"({"model": {"heads": 4, "head_dim": 3},
                               "task": {"input_dim": 12, "mean_std": 0.1234567890123},
                               "losses": {"bt_beta": 7.5},
                               "game": {"pi": [0.1, 0.2, 0.3, 0.4]},
                               "train": {"mode": "baseline_ce", "steps": 17, "deltas": [0.3]}})");
    const std::string dumped = dump_config(c);
    const Config back = parse_config(dumped);
    CHECK(dump_config(back) == dumped);
    CHECK(back.task.mean_std == c.task.mean_std);
    CHECK(back.game.pi == c.game.pi);
    CHECK(back.train.mode == TrainMode::kBaselineCe);
    CHECK(make_setup(back).config_fingerprint == make_setup(c).config_fingerprint);
    c.train.steps = 18;
    CHECK(make_setup(c).config_fingerprint != make_setup(back).config_fingerprint);
  }

  TEST_CASE("load_config names a missing path") {
    try {
      load_config("/nonexistent/desk.json");
      FAIL("expected an error");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("/nonexistent/desk.json") != std::string::npos);
    }
  }

  TEST_CASE("inconsistent model and task are rejected") {
    CHECK_THROWS_AS(make_setup(parse_config(R"({"model": {"heads": 3}})")), ValidationError);
  }

  TEST_CASE("metrics csv round-trips bit-exactly") {
    std::vector<MetricsRow> rows(3);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      rows[k].step = k;
      rows[k].ce = 1.0 / 3.0 + static_cast<double>(k);
      rows[k].gamma = std::sqrt(2.0) * static_cast<double>(k);
      rows[k].alpha_abt = 1e-300;
      rows[k].arb_fallback = k == 1;
    }
    std::stringstream ss;
    write_metrics_csv(ss, rows);
    CHECK(ss.str().rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
    const auto back = read_metrics_csv(ss);
    REQUIRE(back.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(back[k].ce == rows[k].ce);
      CHECK(back[k].gamma == rows[k].gamma);
      CHECK(back[k].alpha_abt == rows[k].alpha_abt);
      CHECK(back[k].arb_fallback == rows[k].arb_fallback);
    }
    std::stringstream bad("step,ce\n0,1\n");
    CHECK_THROWS(read_metrics_csv(bad));
    std::stringstream unordered;
    write_metrics_csv(unordered, std::vector<MetricsRow>{rows[1], rows[0]});
    CHECK_THROWS(read_metrics_csv(unordered));
  }

  TEST_CASE("run directory round-trip") {
    Config cfg = fast_config();
    cfg.train.steps = 30;
    cfg.train.snapshot_every = 10;
    const TrainSetup setup = make_setup(cfg);
    const Task task = make_task(cfg.task, cfg.model.seq_len, 2);
    const RunLog log = train(setup, task, 2);
    const fs::path dir = scratch("run");
    write_run(dir.string(), log, dump_config(cfg));
    for (const char* f : {"metrics.csv", "snapshots.json", "report.json", "config.resolved"})
      CHECK(fs::exists(dir / f));
    const RunLog back = load_run(dir.string());
    CHECK(back.mode == log.mode);
    CHECK(back.seed == log.seed);
    CHECK(back.config_fingerprint == log.config_fingerprint);
    CHECK(back.eval_fingerprint == log.eval_fingerprint);
    CHECK(back.rows.size() == log.rows.size());
    CHECK(back.snapshots.size() == log.snapshots.size());
    CHECK(back.snapshots.back().g == log.snapshots.back().g);
    CHECK(back.final.gamma == log.final.gamma);
    CHECK(back.final.social.c_ib == log.final.social.c_ib);
    CHECK(back.final.hallucination.size() == log.final.hallucination.size());
    CHECK(back.final.hallucination[1].p_hat == log.final.hallucination[1].p_hat);
    CHECK(report_to_json(back) == report_to_json(log));
    CHECK(parse_config(read_text_file((dir / "config.resolved").string())).train.steps == 30);
    fs::remove_all(dir);
  }

  TEST_CASE("non-finite reals are written as null and read as infinity") {
    Config cfg = fast_config();
    cfg.train.steps = 2;
    cfg.game.beta_r = 0.0;
    const TrainSetup setup = make_setup(cfg);
    const Task task = make_task(cfg.task, cfg.model.seq_len, 2);
    const RunLog log = train(setup, task, 1);
    REQUIRE(std::isinf(log.final.free_riders[0].counting_bound));
    const std::string json = report_to_json(log);
    CHECK(json.find("null") != std::string::npos);
    const RunLog back = report_from_json(json);
    CHECK(std::isinf(back.final.free_riders[0].counting_bound));
  }

  TEST_CASE("comparison json carries the sign convention") {
    RunComparison c;
    c.gamma_delta = 0.5;
    c.deltas = {0.2};
    c.p_hat_delta = {0.01};
    c.taus = {0.1};
    c.fr_count_delta = {1};
    const std::vector<RunComparison> per{c, c};
    const std::vector<std::uint64_t> seeds{1, 2};
    const std::string json = comparison_to_json(per, seeds);
    CHECK(json.find("sign_test_gamma") != std::string::npos);
    CHECK(json.find("baseline minus game") != std::string::npos);
  }
}
