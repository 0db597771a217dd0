#pragma once

// Consistency, accuracy and correlation of a judge, plus the monotone
// logistic mapping applied to scores before correlation.

#include "qprobe/core.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace qprobe {

using MosTable = std::unordered_map<std::string, double>;

MosTable mos_table(const DatasetManifest& manifest);

/// Fraction of outcomes whose verdict flips with presentation order.
double consistency_kappa(std::span<const PairOutcome> outcomes);

/// Agreement with the MOS ordering over consistent outcomes only. A MOS tie
/// counts the first-listed image as the better one. Returns nullopt when no
/// outcome is consistent.
std::optional<double> accuracy_alpha(std::span<const PairOutcome> outcomes, const MosTable& mos);

/// Pearson linear correlation.
double plcc(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y);

struct MappingParams {
  double beta1 = 0.0;
  double beta2 = 0.0;
  double beta3 = 0.0;
  double beta4 = 1.0;
  double residual = 0.0;

  /// (beta1 - beta2) / (1 + exp(-(s - beta3) / |beta4|)) + beta2
  double operator()(double s) const;
};

struct LogisticFit {
  MappingParams params;
  Eigen::VectorXd mapped;
  bool fallback = false;  // minimizer failed; mapped holds the raw scores
};

/// Least-squares fit of the 4-parameter logistic by Nelder-Mead.
LogisticFit fit_monotonic_logistic(const Eigen::Ref<const Eigen::VectorXd>& scores,
                                   const Eigen::Ref<const Eigen::VectorXd>& mos);

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Derivative-free simplex minimizer.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x0,
                             const Eigen::VectorXd& initial_step, int max_evaluations = 20000,
                             double tol = 1e-14);

struct EvalReport {
  std::string group_id;
  double kappa = 0.0;
  std::optional<double> alpha;  // undefined when nothing is consistent
  std::optional<double> rho;    // omitted for < 5 scored images or degenerate scores
  std::size_t n_pairs = 0;
  std::size_t n_consistent = 0;
  std::size_t n_trials = 0;
  double bias_first_rate = 0.0;
  double bias_second_rate = 0.0;
  std::size_t n_scored = 0;
  bool mapping_fallback = false;
  std::string note;
};

/// Group key of an outcome/trial: its explicit group when set, otherwise the
/// shared dataset id (or "mixed" for cross-dataset pairs).
std::string group_key(const std::string& explicit_group, const std::string& a, const std::string& b,
                      const DatasetManifest& manifest);

/// One report per group (sorted by key) plus a pooled "all" row when there
/// is more than one group.
std::vector<EvalReport> eval_report(std::span<const TrialRecord> trials, const DatasetManifest& manifest,
                                    const RankingResult& ranking);

std::string reports_to_csv(std::span<const EvalReport> reports);
std::string reports_to_table(std::span<const EvalReport> reports);

}  // namespace qprobe
