#include "qprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace qprobe {

MosTable mos_table(const DatasetManifest& manifest) {
  MosTable out;
  for (const auto& r : manifest.images()) {
    if (r.mos) out.emplace(r.id, *r.mos);
  }
  return out;
}

double consistency_kappa(std::span<const PairOutcome> outcomes) {
  if (outcomes.empty()) throw ValidationError("consistency_kappa: no outcomes");
  const auto n = std::count_if(outcomes.begin(), outcomes.end(), [](const PairOutcome& o) { return o.consistent; });
  return static_cast<double>(n) / static_cast<double>(outcomes.size());
}

std::optional<double> accuracy_alpha(std::span<const PairOutcome> outcomes, const MosTable& mos) {
  auto lookup = [&](const std::string& id) {
    auto it = mos.find(id);
    if (it == mos.end()) throw NotFoundError("accuracy_alpha: no MOS for image '" + id + "'");
    return it->second;
  };
  std::size_t consistent = 0;
  std::size_t correct = 0;
  for (const auto& o : outcomes) {
    const double qa = lookup(o.a_id);
    const double qb = lookup(o.b_id);
    if (!o.consistent) continue;
    ++consistent;
    const bool judged_first = o.forward == Response::First;
    if (judged_first == (qa >= qb)) ++correct;
  }
  if (consistent == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(consistent);
}

double plcc(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (x.size() != y.size()) throw ValidationError("plcc: length mismatch");
  if (x.size() < 2) throw ValidationError("plcc: need at least 2 points");
  const Eigen::ArrayXd dx = x.array() - x.mean();
  const Eigen::ArrayXd dy = y.array() - y.mean();
  const double sxx = dx.square().sum();
  const double syy = dy.square().sum();
  if (!(sxx > 0.0) || !(syy > 0.0)) throw ValidationError("plcc: zero variance");
  return (dx * dy).sum() / (std::sqrt(sxx) * std::sqrt(syy));
}

double MappingParams::operator()(double s) const {
  return (beta1 - beta2) / (1.0 + std::exp(-(s - beta3) / std::abs(beta4))) + beta2;
}

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x0,
                             const Eigen::VectorXd& initial_step, int max_evaluations, double tol) {
  const Eigen::Index n = x0.size();
  std::vector<Eigen::VectorXd> pts;
  std::vector<double> vals;
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  auto build = [&](const Eigen::VectorXd& base) {
    pts.assign(1, base);
    vals.assign(1, eval(base));
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd p = base;
      p(i) += initial_step(i);
      pts.push_back(p);
      vals.push_back(eval(p));
    }
  };

  NelderMeadResult best;
  best.x = x0;
  best.value = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < 4; ++restart) {
    build(best.value < std::numeric_limits<double>::infinity() ? best.x : x0);
    bool converged = false;
    while (evals < max_evaluations) {
      std::vector<std::size_t> order(pts.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
      std::vector<Eigen::VectorXd> p2;
      std::vector<double> v2;
      for (auto k : order) {
        p2.push_back(pts[k]);
        v2.push_back(vals[k]);
      }
      pts = std::move(p2);
      vals = std::move(v2);

      double diameter = 0.0;
      for (std::size_t k = 1; k < pts.size(); ++k) diameter = std::max(diameter, (pts[k] - pts[0]).cwiseAbs().maxCoeff());
      if (vals.back() - vals.front() <= tol * (std::abs(vals.front()) + 1e-30) &&
          diameter <= 1e-10 * (1.0 + pts[0].cwiseAbs().maxCoeff())) {
        converged = true;
        break;
      }

      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
      for (Eigen::Index k = 0; k < n; ++k) centroid += pts[static_cast<std::size_t>(k)];
      centroid /= static_cast<double>(n);
      const Eigen::VectorXd& worst = pts.back();

      const Eigen::VectorXd xr = centroid + (centroid - worst);
      const double fr = eval(xr);
      if (fr < vals.front()) {
        const Eigen::VectorXd xe = centroid + 2.0 * (centroid - worst);
        const double fe = eval(xe);
        if (fe < fr) {
          pts.back() = xe;
          vals.back() = fe;
        } else {
          pts.back() = xr;
          vals.back() = fr;
        }
        continue;
      }
      if (fr < vals[vals.size() - 2]) {
        pts.back() = xr;
        vals.back() = fr;
        continue;
      }
      const bool outside = fr < vals.back();
      const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                         : Eigen::VectorXd(centroid + 0.5 * (worst - centroid));
      const double fc = eval(xc);
      if (fc < (outside ? fr : vals.back())) {
        pts.back() = xc;
        vals.back() = fc;
        continue;
      }
      for (std::size_t k = 1; k < pts.size(); ++k) {
        pts[k] = pts[0] + 0.5 * (pts[k] - pts[0]);
        vals[k] = eval(pts[k]);
      }
    }
    const auto it = std::min_element(vals.begin(), vals.end());
    const double improvement = best.value - *it;
    const bool first = !std::isfinite(best.value);
    if (*it < best.value) {
      best.x = pts[static_cast<std::size_t>(std::distance(vals.begin(), it))];
      best.value = *it;
    }
    best.converged = converged;
    if (!converged || (!first && improvement <= tol * (std::abs(best.value) + 1e-30))) break;
  }
  best.evaluations = evals;
  return best;
}

LogisticFit fit_monotonic_logistic(const Eigen::Ref<const Eigen::VectorXd>& scores,
                                   const Eigen::Ref<const Eigen::VectorXd>& mos) {
  if (scores.size() != mos.size()) throw ValidationError("fit_monotonic_logistic: length mismatch");
  if (scores.size() < 5) throw ValidationError("fit_monotonic_logistic: need at least 5 points");
  if (!scores.allFinite() || !mos.allFinite()) throw ValidationError("fit_monotonic_logistic: non-finite input");

  const auto n = static_cast<double>(scores.size());
  const double s_mean = scores.mean();
  const double s_sd = std::sqrt((scores.array() - s_mean).square().sum() / n);
  if (!(s_sd > 0.0)) throw ValidationError("fit_monotonic_logistic: scores are all equal");
  const double m_mean = mos.mean();
  double m_sd = std::sqrt((mos.array() - m_mean).square().sum() / n);
  if (!(m_sd > 0.0)) m_sd = 1.0;

  // Fit on standardized data so the result does not depend on the affine
  // scale of either input.
  const Eigen::ArrayXd z = (scores.array() - s_mean) / s_sd;
  const Eigen::ArrayXd m = (mos.array() - m_mean) / m_sd;
  auto model = [](const Eigen::VectorXd& b, const Eigen::ArrayXd& x) -> Eigen::ArrayXd {
    return (b(0) - b(1)) / (1.0 + (-(x - b(2)) / std::abs(b(3))).exp()) + b(1);
  };
  auto sse = [&](const Eigen::VectorXd& b) {
    if (b(3) == 0.0) return std::numeric_limits<double>::infinity();
    return (model(b, z) - m).square().sum();
  };

  // Start: upper/lower asymptotes at the MOS extremes, centre at the mean
  // score, scale at a quarter of the score spread.
  Eigen::VectorXd b0(4);
  b0 << m.maxCoeff(), m.minCoeff(), 0.0, 0.25;
  Eigen::VectorXd step(4);
  step << 0.1, 0.1, 0.1, 0.05;
  const auto nm = nelder_mead(sse, b0, step, 40000, 1e-15);

  LogisticFit fit;
  if (!std::isfinite(nm.value) || nm.x(3) == 0.0) {
    fit.fallback = true;
    fit.params = {1.0, 0.0, 0.0, 1.0, std::numeric_limits<double>::quiet_NaN()};
    fit.mapped = scores;
    return fit;
  }
  const Eigen::VectorXd& b = nm.x;
  fit.params.beta1 = b(0) * m_sd + m_mean;
  fit.params.beta2 = b(1) * m_sd + m_mean;
  fit.params.beta3 = s_mean + b(2) * s_sd;
  fit.params.beta4 = std::abs(b(3)) * s_sd;
  fit.params.residual = nm.value * m_sd * m_sd;
  fit.mapped = (model(b, z) * m_sd + m_mean).matrix();
  return fit;
}

std::string group_key(const std::string& explicit_group, const std::string& a, const std::string& b,
                      const DatasetManifest& manifest) {
  if (!explicit_group.empty()) return explicit_group;
  const auto& da = manifest.at(a).dataset_id;
  const auto& db = manifest.at(b).dataset_id;
  return da == db ? da : std::string("mixed");
}

namespace {

struct GroupData {
  std::vector<PairOutcome> outcomes;
  std::size_t trials = 0;
  std::size_t first = 0;
  std::size_t second = 0;
  std::set<std::string> images;
};

EvalReport summarize(const std::string& key, const GroupData& g, const MosTable& mos,
                     const RankingResult& ranking) {
  EvalReport rep;
  rep.group_id = key;
  rep.n_pairs = g.outcomes.size();
  rep.n_consistent = static_cast<std::size_t>(
      std::count_if(g.outcomes.begin(), g.outcomes.end(), [](const PairOutcome& o) { return o.consistent; }));
  rep.n_trials = g.trials;
  if (g.trials > 0) {
    rep.bias_first_rate = static_cast<double>(g.first) / static_cast<double>(g.trials);
    rep.bias_second_rate = static_cast<double>(g.second) / static_cast<double>(g.trials);
  }
  if (!g.outcomes.empty()) {
    rep.kappa = consistency_kappa(g.outcomes);
    rep.alpha = accuracy_alpha(g.outcomes, mos);
  }

  std::vector<double> s;
  std::vector<double> q;
  std::unordered_map<std::string, Eigen::Index> pos;
  for (std::size_t i = 0; i < ranking.ids.size(); ++i) pos.emplace(ranking.ids[i], static_cast<Eigen::Index>(i));
  for (const auto& id : g.images) {
    auto p = pos.find(id);
    auto m = mos.find(id);
    if (p == pos.end() || m == mos.end()) continue;
    s.push_back(ranking.scores(p->second));
    q.push_back(m->second);
  }
  rep.n_scored = s.size();
  if (s.size() < 5) {
    rep.note = "rho omitted: fewer than 5 scored images";
    return rep;
  }
  const Eigen::Map<const Eigen::VectorXd> sv(s.data(), static_cast<Eigen::Index>(s.size()));
  const Eigen::Map<const Eigen::VectorXd> qv(q.data(), static_cast<Eigen::Index>(q.size()));
  try {
    const auto fit = fit_monotonic_logistic(sv, qv);
    rep.mapping_fallback = fit.fallback;
    rep.rho = plcc(fit.mapped, qv);
    if (fit.fallback) rep.note = "logistic mapping failed; identity mapping used";
  } catch (const ValidationError& e) {
    rep.note = std::string("rho undefined: ") + e.what();
  }
  return rep;
}

}  // namespace

std::vector<EvalReport> eval_report(std::span<const TrialRecord> trials, const DatasetManifest& manifest,
                                    const RankingResult& ranking) {
  const MosTable mos = mos_table(manifest);
  const auto outcomes = pair_outcomes(trials);

  std::map<std::string, GroupData> groups;
  GroupData all;
  for (const auto& t : trials) {
    auto& g = groups[group_key(t.group, t.first_id, t.second_id, manifest)];
    for (GroupData* d : {&g, &all}) {
      ++d->trials;
      if (t.response == Response::First) ++d->first;
      if (t.response == Response::Second) ++d->second;
      d->images.insert(t.first_id);
      d->images.insert(t.second_id);
    }
  }
  for (const auto& o : outcomes) {
    groups[group_key(o.group, o.a_id, o.b_id, manifest)].outcomes.push_back(o);
    all.outcomes.push_back(o);
  }

  std::vector<EvalReport> out;
  for (const auto& [key, g] : groups) out.push_back(summarize(key, g, mos, ranking));
  if (groups.size() > 1) out.push_back(summarize("all", all, mos, ranking));
  return out;
}

namespace {

std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string fixed3(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << *v;
  return s.str();
}

}  // namespace

std::string reports_to_csv(std::span<const EvalReport> reports) {
  std::ostringstream out;
  out << "group,kappa,alpha,rho,n_pairs,n_consistent,bias_first,bias_second\n";
  for (const auto& r : reports) {
    out << csv_escape(r.group_id) << ',' << format_double(r.kappa) << ',' << opt_cell(r.alpha) << ','
        << opt_cell(r.rho) << ',' << r.n_pairs << ',' << r.n_consistent << ',' << format_double(r.bias_first_rate)
        << ',' << format_double(r.bias_second_rate) << '\n';
  }
  return out.str();
}

std::string reports_to_table(std::span<const EvalReport> reports) {
  std::size_t width = 5;
  for (const auto& r : reports) width = std::max(width, r.group_id.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "Group"
      << " | kappa | alpha |  rho  | pairs | consistent | first% | second%\n";
  out << std::string(width, '-') << "-+-------+-------+-------+-------+------------+--------+--------\n";
  for (const auto& r : reports) {
    out << std::left << std::setw(static_cast<int>(width)) << r.group_id << " | " << fixed3(r.kappa) << " | "
        << std::setw(5) << fixed3(r.alpha) << " | " << std::setw(5) << fixed3(r.rho) << " | " << std::right
        << std::setw(5) << r.n_pairs << " | " << std::setw(10) << r.n_consistent << " | " << std::setw(6)
        << std::fixed << std::setprecision(1) << 100.0 * r.bias_first_rate << " | " << std::setw(7)
        << 100.0 * r.bias_second_rate << '\n';
    out.unsetf(std::ios::fixed);
  }
  return out.str();
}

}  // namespace qprobe
