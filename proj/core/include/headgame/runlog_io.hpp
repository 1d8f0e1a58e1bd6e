#pragma once

// Run directory layout (all text):
//
//   metrics.csv      one row per training step, header kMetricsHeader,
//                    reals as %.17g, arb_fallback as 0/1
//   snapshots.json   {"mode", "seed", "snapshots": [{"step", "gamma", "p_hat", "g"}]}
//   report.json      final reports plus seed, mode and fingerprints
//   config.resolved  the resolved configuration
//
// Non-finite reals (an unbounded counting bound, say) are written as null
// and read back as +inf.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "headgame/analysis.hpp"
#include "headgame/game.hpp"
#include "headgame/trainer.hpp"

namespace headgame {

inline constexpr const char* kMetricsHeader =
    "step,ce,ldb_raw,abt_raw,abt_normalized,lambda_ldb_t,lambda_abt_t,alpha_ce,alpha_ldb,"
    "alpha_abt,gamma,grad_norm,arb_fallback";

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

std::string snapshots_to_json(const RunLog& log);
std::vector<Snapshot> snapshots_from_json(const std::string& text);

std::string report_to_json(const RunLog& log);
// Restores everything in report.json (mode, seed, fingerprints, final reports).
RunLog report_from_json(const std::string& text);

void write_run(const std::string& dir, const RunLog& log, const std::string& resolved_config);
// Metrics, snapshots and final reports; parameters are not stored.
RunLog load_run(const std::string& dir);

std::string comparison_to_json(std::span<const RunComparison> per_seed,
                               std::span<const std::uint64_t> seeds);
std::string poa_report_to_json(const PoAReport& report);
std::string partition_to_json(const CoalitionPartition& p, const CoalitionDeltaResult* delta);
std::string fit_to_json(const FitResult& fit);
std::string dynamics_to_json(const PairDynamics& d);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace headgame
