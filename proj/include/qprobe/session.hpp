#pragma once

// Probing sessions: plan -> dual-order judge queries -> outcomes -> C ->
// rankings -> reports, with an append-only trial log that can be resumed.

#include "qprobe/aggregate.hpp"
#include "qprobe/core.hpp"
#include "qprobe/judges.hpp"
#include "qprobe/metrics.hpp"
#include "qprobe/pairing.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace qprobe {

struct SessionConfig {
  std::vector<PromptPart> prompt = default_prompt();
  int rounds = 12;
  std::uint64_t seed = 0;
  std::string judge_spec;  // recorded so resume can rebuild the judge
  std::string judge_id;    // empty = judge.id()
  std::vector<Method> methods = {Method::MAP};  // first one drives report.csv
  int max_in_flight = 1;
  std::filesystem::path output_dir;  // empty = keep everything in memory
  std::filesystem::path manifest_path;  // recorded for resume
  AggregateOptions aggregate;

  // Circuit breaker over transport failures.
  double max_failure_rate = 0.5;
  std::size_t breaker_min_trials = 20;

  // Stop after this many new trials (simulated interruption).
  std::optional<std::size_t> stop_after_trials;
};

/// Thrown when the circuit breaker trips; the partial log stays on disk.
class SessionAborted : public Error {
 public:
  using Error::Error;
};

enum class PairStatus { Pending, HalfDone, Done };

struct SessionState {
  std::vector<TrialRecord> trials;
  std::vector<PairOutcome> outcomes;
  std::vector<PairStatus> status;  // per planned pair
  std::size_t done() const;
};

/// Rebuilds the per-pair status and outcomes of `plan` from a trial log.
SessionState derive_state(const PairingPlan& plan, std::vector<TrialRecord> trials);

/// Trial id of one presentation order of planned pair `pair_index`.
std::string trial_id(std::size_t pair_index, bool reverse);

struct Analysis {
  std::vector<PairOutcome> outcomes;
  PreferenceMatrix matrix;
  std::vector<RankingResult> rankings;
  std::vector<EvalReport> reports;
};

/// Everything derived from a trial log: shared by sessions and by the
/// aggregate/eval commands, so replaying a log reproduces the outputs.
Analysis analyze(std::span<const TrialRecord> trials, const DatasetManifest& manifest,
                 const std::vector<Method>& methods, const AggregateOptions& options = {});

/// Writes matrix.csv, scores.csv and report.csv into `dir`.
void write_outputs(const Analysis& analysis, const std::filesystem::path& dir);

struct SessionResult {
  std::vector<TrialRecord> trials;
  bool complete = false;
  std::optional<Analysis> analysis;  // set when complete
};

SessionResult run_session(const DatasetManifest& manifest, const PairingPlan& plan, Judge& judge,
                          const SessionConfig& cfg);

/// Continues the session stored in `dir`. The manifest is reloaded from its
/// recorded path and must hash to the recorded value. With no judge given,
/// it is rebuilt from the recorded spec and seed.
SessionResult resume_session(const std::filesystem::path& dir, Judge* judge = nullptr,
                             std::optional<std::size_t> stop_after_trials = std::nullopt);

struct ConvergencePoint {
  int round = 0;
  double plcc = 0.0;
  double upper_bound = 0.0;
};

/// Mean PLCC(MAP scores, true scores) after M = 1..m_max coarse rounds, on
/// synthetic manifests of n items with true scores uniform on [0, 100].
/// Judge specs: oracle, thurstone:S, biased:P.
std::vector<ConvergencePoint> simulate_convergence(std::size_t n, const std::string& judge_spec, int m_max,
                                                   int repeats, std::uint64_t seed);

std::string convergence_to_csv(std::span<const ConvergencePoint> curve);

/// Synthetic manifest "sim" with ids img0000.. and the given MOS values.
DatasetManifest synthetic_manifest(const std::vector<double>& mos);

}  // namespace qprobe
