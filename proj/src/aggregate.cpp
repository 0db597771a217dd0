#include "qprobe/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace qprobe {

std::vector<Comparison> nonzero_comparisons(const CountMatrix& counts) {
  std::vector<Comparison> out;
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    for (Eigen::Index j = 0; j < counts.cols(); ++j) {
      if (counts(i, j) < 0) throw ValidationError("negative count in preference matrix");
      if (i != j && counts(i, j) > 0) out.push_back({i, j, static_cast<double>(counts(i, j))});
    }
  }
  return out;
}

bool has_finite_mle(const CountMatrix& counts) {
  const Eigen::Index n = counts.rows();
  if (n < 2) return false;
  auto reaches_all = [&](bool transposed) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::queue<Eigen::Index> todo;
    todo.push(0);
    seen[0] = 1;
    Eigen::Index visited = 1;
    while (!todo.empty()) {
      const Eigen::Index u = todo.front();
      todo.pop();
      for (Eigen::Index v = 0; v < n; ++v) {
        const auto c = transposed ? counts(v, u) : counts(u, v);
        if (c > 0 && !seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = 1;
          ++visited;
          todo.push(v);
        }
      }
    }
    return visited == n;
  };
  return reaches_all(false) && reaches_all(true);
}

namespace {

struct AscentOutcome {
  Eigen::VectorXd q;
  bool converged = false;
  bool capped = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::vector<double> trace;
};

Eigen::VectorXd project(Eigen::VectorXd g) {
  g.array() -= g.mean();
  return g;
}

// Projected gradient ascent from q = 0 on the zero-sum subspace.
//
// A trial step q + s*g is accepted when the directional derivative at the
// trial point is still nonnegative (the step has not passed the maximum of
// the concave line function, so the objective cannot have decreased) and the
// computed objective has not dropped beyond rounding. Otherwise s is halved.
AscentOutcome projected_ascent(std::span<const Comparison> cmp, Eigen::Index n, double ridge, double tol,
                               int max_iter, double step, double cap, bool record) {
  AscentOutcome out;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
  double f = thurstone_objective(cmp, q, ridge);
  Eigen::VectorXd g = project(thurstone_gradient(cmp, q, ridge));
  if (record) out.trace.push_back(f);
  const double eps = std::numeric_limits<double>::epsilon();

  int it = 0;
  for (; it < max_iter; ++it) {
    const double gnorm = g.norm();
    if (gnorm <= tol) {
      out.converged = true;
      break;
    }
    const double slope = g.squaredNorm();
    bool accepted = false;
    double s = step;
    for (int halvings = 0; halvings < 80; ++halvings, s *= 0.5) {
      Eigen::VectorXd trial = q + s * g;
      const double f_trial = thurstone_objective(cmp, trial, ridge);
      if (!std::isfinite(f_trial)) continue;
      Eigen::VectorXd g_trial = project(thurstone_gradient(cmp, trial, ridge));
      const bool before_peak = g_trial.dot(g) >= 0.0;
      const bool improved = f_trial >= f + 1e-4 * s * slope;
      const bool flat = f_trial >= f - 16.0 * eps * (std::abs(f) + 1.0);
      if (improved || (before_peak && flat)) {
        q = std::move(trial);
        f = f_trial;
        g = std::move(g_trial);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // no representable ascent step left
    if (record) out.trace.push_back(f);
    if (cap > 0.0 && q.cwiseAbs().maxCoeff() > cap) {
      q = q.cwiseMax(-cap).cwiseMin(cap);
      out.capped = true;
      ++it;
      break;
    }
  }
  q.array() -= q.mean();
  out.iterations = it;
  out.gradient_norm = project(thurstone_gradient(cmp, q, ridge)).norm();
  if (!out.converged && !out.capped && out.gradient_norm <= tol) out.converged = true;
  out.q = std::move(q);
  return out;
}

RankingResult make_result(Method method, const std::vector<std::string>& ids, Eigen::VectorXd scores) {
  RankingResult r;
  r.method = method;
  r.ids = ids;
  r.scores_0_100 = rescale_to_0_100(scores);
  r.scores = std::move(scores);
  return r;
}

}  // namespace

RankingResult map_estimate(const PreferenceMatrix& c, const MapConfig& cfg) {
  if (c.size() < 2) throw ValidationError("map_estimate: need at least 2 items");
  if (!(cfg.tol > 0.0) || cfg.max_iter < 1 || !(cfg.ridge_weight >= 0.0) || !(cfg.step > 0.0)) {
    throw ValidationError("map_estimate: invalid configuration");
  }
  const auto cmp = nonzero_comparisons(c.counts());
  auto res = projected_ascent(cmp, static_cast<Eigen::Index>(c.size()), cfg.ridge_weight, cfg.tol, cfg.max_iter,
                              cfg.step, 0.0, cfg.record_trace);
  RankingResult r = make_result(Method::MAP, c.ids(), std::move(res.q));
  r.converged = res.converged;
  r.iterations = res.iterations;
  r.final_gradient_norm = res.gradient_norm;
  r.objective_trace = std::move(res.trace);
  return r;
}

RankingResult mle_estimate(const PreferenceMatrix& c, const MleConfig& cfg) {
  if (c.size() < 2) throw ValidationError("mle_estimate: need at least 2 items");
  if (!(cfg.tol > 0.0) || cfg.max_iter < 1 || !(cfg.divergence_cap > 0.0) || !(cfg.step > 0.0)) {
    throw ValidationError("mle_estimate: invalid configuration");
  }
  const auto cmp = nonzero_comparisons(c.counts());
  auto res = projected_ascent(cmp, static_cast<Eigen::Index>(c.size()), 0.0, cfg.tol, cfg.max_iter, cfg.step,
                              cfg.divergence_cap, cfg.record_trace);
  RankingResult r = make_result(Method::MLE, c.ids(), std::move(res.q));
  // Without a strongly connected win graph the likelihood keeps increasing
  // along some direction; the gradient merely becomes too small to follow.
  r.converged = res.converged && !res.capped && has_finite_mle(c.counts());
  r.iterations = res.iterations;
  r.final_gradient_norm = res.gradient_norm;
  r.objective_trace = std::move(res.trace);
  return r;
}

RankingResult perron_scores(const PreferenceMatrix& c, const PerronConfig& cfg) {
  const Eigen::Index n = static_cast<Eigen::Index>(c.size());
  if (n < 2) throw ValidationError("perron_scores: need at least 2 items");
  if (!(cfg.smoothing > 0.0) || !(cfg.tol > 0.0) || cfg.max_iter < 1) {
    throw ValidationError("perron_scores: invalid configuration");
  }
  const Eigen::MatrixXd counts = c.counts().cast<double>();
  Eigen::MatrixXd a = (counts.array() + cfg.smoothing) / (counts.transpose().array() + cfg.smoothing);
  a.diagonal().setOnes();

  Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  bool converged = false;
  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    Eigen::VectorXd y = a * x;
    y /= y.sum();
    const double delta = (y - x).cwiseAbs().maxCoeff();
    x = std::move(y);
    if (delta <= cfg.tol) {
      converged = true;
      ++it;
      break;
    }
  }
  if (!converged) throw Error("perron_scores: power iteration did not converge");
  RankingResult r = make_result(Method::Perron, c.ids(), std::move(x));
  r.converged = true;
  r.iterations = it;
  return r;
}

RankingResult trueskill_scores(const std::vector<std::string>& ids, std::span<const PairOutcome> stream,
                               const TrueSkillConfig& cfg) {
  if (ids.empty()) throw ValidationError("trueskill_scores: no items");
  if (!(cfg.sigma0 > 0.0) || !(cfg.beta > 0.0) || !(cfg.tau >= 0.0)) {
    throw ValidationError("trueskill_scores: invalid configuration");
  }
  std::unordered_map<std::string, Eigen::Index> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], static_cast<Eigen::Index>(i));
  auto lookup = [&](const std::string& id) {
    auto it = index.find(id);
    if (it == index.end()) throw NotFoundError("trueskill_scores: unknown image id '" + id + "'");
    return it->second;
  };

  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  Eigen::VectorXd mu = Eigen::VectorXd::Constant(n, cfg.mu0);
  Eigen::VectorXd var = Eigen::VectorXd::Constant(n, cfg.sigma0 * cfg.sigma0);
  const double beta2 = cfg.beta * cfg.beta;
  const double tau2 = cfg.tau * cfg.tau;
  int updates = 0;
  int max_round = 0;

  for (const auto& o : stream) {
    lookup(o.a_id);
    lookup(o.b_id);
    if (!o.consistent) continue;
    const Eigen::Index w = lookup(*o.winner());
    const Eigen::Index l = lookup(*o.loser());
    var(w) += tau2;
    var(l) += tau2;
    const double c2 = 2.0 * beta2 + var(w) + var(l);
    const double c = std::sqrt(c2);
    const double t = (mu(w) - mu(l)) / c;
    const double v = inverse_mills(t);
    const double wf = v * (v + t);
    mu(w) += var(w) / c * v;
    mu(l) -= var(l) / c * v;
    var(w) *= 1.0 - var(w) / c2 * wf;
    var(l) *= 1.0 - var(l) / c2 * wf;
    ++updates;
    max_round = std::max(max_round, o.round);
  }

  RankingResult r = make_result(Method::TrueSkill, ids, mu);
  r.sigma = var.cwiseSqrt();
  r.converged = true;
  r.iterations = updates;
  r.rounds_used = max_round;
  return r;
}

Eigen::VectorXd rescale_to_0_100(const Eigen::Ref<const Eigen::VectorXd>& scores) {
  if (scores.size() == 0) throw ValidationError("rescale_to_0_100: empty input");
  if (!scores.allFinite()) throw ValidationError("rescale_to_0_100: non-finite score");
  const double lo = scores.minCoeff();
  const double hi = scores.maxCoeff();
  if (!(hi > lo)) return Eigen::VectorXd::Constant(scores.size(), 50.0);
  Eigen::VectorXd out = (scores.array() - lo) * (100.0 / (hi - lo));
  // Pin the extremes exactly against rounding.
  return out.cwiseMax(0.0).cwiseMin(100.0);
}

RankingResult aggregate(Method method, const PreferenceMatrix& c, std::span<const PairOutcome> outcomes,
                        const AggregateOptions& options) {
  RankingResult r;
  switch (method) {
    case Method::MAP: r = map_estimate(c, options.map); break;
    case Method::MLE: r = mle_estimate(c, options.mle); break;
    case Method::Perron: r = perron_scores(c, options.perron); break;
    case Method::TrueSkill: r = trueskill_scores(c.ids(), outcomes, options.trueskill); break;
  }
  int rounds = 0;
  for (const auto& o : outcomes) rounds = std::max(rounds, o.round);
  r.rounds_used = rounds;
  return r;
}

}  // namespace qprobe
