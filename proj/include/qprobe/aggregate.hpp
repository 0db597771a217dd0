#pragma once

// Global ranking from pairwise preference counts: Thurstone Case V MAP and
// MLE, Perron eigenvector rank, and two-player TrueSkill.

#include "qprobe/core.hpp"
#include "qprobe/numerics.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace qprobe {

struct MapConfig {
  double ridge_weight = 1.0;  // weight on sum(q^2)/2
  double tol = 1e-8;          // projected-gradient norm
  int max_iter = 10000;
  double step = 0.1;  // initial step of each line search, halved on rejection
  bool record_trace = false;
};

struct MleConfig {
  double tol = 1e-8;
  int max_iter = 10000;
  double divergence_cap = 50.0;
  double step = 0.1;
  bool record_trace = false;
};

struct PerronConfig {
  double smoothing = 0.5;
  double tol = 1e-10;
  int max_iter = 10000;
};

struct TrueSkillConfig {
  double mu0 = 25.0;
  double sigma0 = 25.0 / 3.0;
  double beta = 25.0 / 6.0;
  double tau = 25.0 / 300.0;
};

struct AggregateOptions {
  MapConfig map;
  MleConfig mle;
  PerronConfig perron;
  TrueSkillConfig trueskill;
};

/// Nonzero cells of a count matrix.
struct Comparison {
  Eigen::Index winner;
  Eigen::Index loser;
  double count;
};

std::vector<Comparison> nonzero_comparisons(const CountMatrix& counts);

/// sum_ij C_ij log Phi(q_i - q_j) - ridge * sum_i q_i^2 / 2
template <typename Derived>
typename Derived::Scalar thurstone_objective(std::span<const Comparison> cmp,
                                             const Eigen::MatrixBase<Derived>& q,
                                             typename Derived::Scalar ridge) {
  using Scalar = typename Derived::Scalar;
  Scalar value = -ridge * q.squaredNorm() / Scalar(2);
  for (const auto& c : cmp) value += Scalar(c.count) * log_normal_cdf<Scalar>(q(c.winner) - q(c.loser));
  return value;
}

/// Gradient of thurstone_objective with respect to q.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> thurstone_gradient(
    std::span<const Comparison> cmp, const Eigen::MatrixBase<Derived>& q, typename Derived::Scalar ridge) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g = -ridge * q;
  for (const auto& c : cmp) {
    const Scalar v = Scalar(c.count) * inverse_mills<Scalar>(q(c.winner) - q(c.loser));
    g(c.winner) += v;
    g(c.loser) -= v;
  }
  return g;
}

/// Dense-matrix convenience overloads.
template <typename Derived>
typename Derived::Scalar thurstone_objective(const CountMatrix& counts, const Eigen::MatrixBase<Derived>& q,
                                             typename Derived::Scalar ridge) {
  const auto cmp = nonzero_comparisons(counts);
  return thurstone_objective(std::span<const Comparison>(cmp), q, ridge);
}

/// True iff the directed win graph is strongly connected, i.e. the
/// unregularized likelihood has a finite maximizer.
bool has_finite_mle(const CountMatrix& counts);

/// Projected gradient ascent on the ridge-regularized Thurstone posterior,
/// constrained to sum(q) = 0. Returns the last iterate with converged=false
/// when max_iter is exhausted.
RankingResult map_estimate(const PreferenceMatrix& c, const MapConfig& cfg = {});

/// The unregularized variant. Divergence (an unbounded likelihood, or an
/// iterate beyond the cap) is reported with converged=false.
RankingResult mle_estimate(const PreferenceMatrix& c, const MleConfig& cfg = {});

/// Principal eigenvector of A_ij = (C_ij + a) / (C_ji + a), normalized to sum 1.
RankingResult perron_scores(const PreferenceMatrix& c, const PerronConfig& cfg = {});

/// Sequential two-player no-draw TrueSkill over consistent outcomes in
/// stream order; inconsistent outcomes are skipped.
RankingResult trueskill_scores(const std::vector<std::string>& ids, std::span<const PairOutcome> stream,
                               const TrueSkillConfig& cfg = {});

/// Affine min-max map onto [0, 100]; constant input maps to 50.
Eigen::VectorXd rescale_to_0_100(const Eigen::Ref<const Eigen::VectorXd>& scores);

/// Runs one method; rounds_used is taken from the outcomes.
RankingResult aggregate(Method method, const PreferenceMatrix& c, std::span<const PairOutcome> outcomes,
                        const AggregateOptions& options = {});

}  // namespace qprobe
