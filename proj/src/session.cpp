#include "qprobe/session.hpp"

#include "json.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>
#include <unordered_set>

namespace qprobe {

using nlohmann::json;

std::size_t SessionState::done() const {
  return static_cast<std::size_t>(std::count(status.begin(), status.end(), PairStatus::Done));
}

std::string trial_id(std::size_t pair_index, bool reverse) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%06zu-%c", pair_index, reverse ? 'r' : 'f');
  return buf;
}

SessionState derive_state(const PairingPlan& plan, std::vector<TrialRecord> trials) {
  SessionState state;
  state.status.assign(plan.size(), PairStatus::Pending);
  std::vector<int> seen(plan.size(), 0);
  std::unordered_set<std::string> ids;
  for (const auto& t : trials) {
    if (!t.pair_index || *t.pair_index >= plan.size()) {
      throw ValidationError("trial '" + t.trial_id + "' does not belong to the session plan");
    }
    const auto& p = plan.pairs[*t.pair_index];
    const bool forward = t.first_id == p.a && t.second_id == p.b;
    const bool reverse = t.first_id == p.b && t.second_id == p.a;
    if (!forward && !reverse) throw ValidationError("trial '" + t.trial_id + "' does not match its planned pair");
    if (!ids.insert(t.trial_id).second) throw ValidationError("duplicate trial id '" + t.trial_id + "' in log");
    ++seen[*t.pair_index];
  }
  for (std::size_t i = 0; i < plan.size(); ++i) {
    state.status[i] = seen[i] == 0 ? PairStatus::Pending : seen[i] == 1 ? PairStatus::HalfDone : PairStatus::Done;
  }
  state.outcomes = pair_outcomes(trials);
  state.trials = std::move(trials);
  return state;
}

Analysis analyze(std::span<const TrialRecord> trials, const DatasetManifest& manifest,
                 const std::vector<Method>& methods, const AggregateOptions& options) {
  if (methods.empty()) throw ValidationError("no aggregation method selected");
  for (const auto& t : trials) {
    if (!manifest.contains(t.first_id) || !manifest.contains(t.second_id)) {
      throw NotFoundError("trial '" + t.trial_id + "' references an image missing from the manifest");
    }
  }
  auto outcomes = pair_outcomes(trials);
  auto matrix = build_matrix(manifest.ids(), outcomes);
  std::vector<RankingResult> rankings;
  for (Method m : methods) rankings.push_back(aggregate(m, matrix, outcomes, options));
  auto reports = eval_report(trials, manifest, rankings.front());
  return {std::move(outcomes), std::move(matrix), std::move(rankings), std::move(reports)};
}

void write_outputs(const Analysis& analysis, const std::filesystem::path& dir) {
  write_file(dir / "matrix.csv", matrix_to_csv(analysis.matrix));
  write_file(dir / "scores.csv", scores_to_csv(analysis.rankings));
  write_file(dir / "report.csv", reports_to_csv(analysis.reports));
}

namespace {

constexpr const char* kLog = "trials.jsonl";
constexpr const char* kPlan = "plan.jsonl";
constexpr const char* kMeta = "session.json";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Pending {
  std::size_t pair_index;
  bool reverse;
};

/// Serializes log appends; the file is flushed after every line.
class LogWriter {
 public:
  explicit LogWriter(const std::filesystem::path& path) {
    if (path.empty()) return;
    out_.open(path, std::ios::app | std::ios::binary);
    if (!out_) throw Error("cannot open trial log " + path.string());
  }
  void append(const TrialRecord& t) {
    if (!out_.is_open()) return;
    out_ << trial_to_json_line(t) << '\n';
    out_.flush();
    if (!out_) throw Error("failed to append to trial log");
  }

 private:
  std::ofstream out_;
};

TrialRecord make_trial(const PlannedPair& p, std::size_t pair_index, bool reverse, const std::string& judge_id,
                       const JudgeVerdict& v) {
  TrialRecord t;
  t.trial_id = trial_id(pair_index, reverse);
  t.first_id = reverse ? p.b : p.a;
  t.second_id = reverse ? p.a : p.b;
  t.judge_id = judge_id;
  t.response = v.choice;
  t.round = p.round;
  t.raw_reply = v.raw_reply;
  t.timestamp = utc_timestamp();
  t.failure = v.failure;
  t.pair_index = pair_index;
  t.group = p.group;
  return t;
}

class Breaker {
 public:
  Breaker(double rate, std::size_t min_trials, const std::vector<TrialRecord>& prior)
      : rate_(rate), min_(min_trials) {
    for (const auto& t : prior) record(t);
  }
  void record(const TrialRecord& t) {
    ++n_;
    if (t.failure == FailureKind::Transport) ++failed_;
  }
  void check() const {
    if (n_ >= min_ && static_cast<double>(failed_) > rate_ * static_cast<double>(n_)) {
      throw SessionAborted("circuit breaker: " + std::to_string(failed_) + " of " + std::to_string(n_) +
                           " trials failed in transport; partial log kept");
    }
  }

 private:
  double rate_;
  std::size_t min_;
  std::size_t n_ = 0;
  std::size_t failed_ = 0;
};

// Queries every pending trial, committing verdicts to the log in schedule
// order. With max_in_flight > 1 queries overlap but commits stay ordered, so
// the log and C do not depend on thread timing.
void execute(const DatasetManifest& manifest, const PairingPlan& plan, Judge& judge, const SessionConfig& cfg,
             std::vector<TrialRecord>& trials, const std::vector<Pending>& todo) {
  const std::string judge_id = cfg.judge_id.empty() ? judge.id() : cfg.judge_id;
  LogWriter log(cfg.output_dir.empty() ? std::filesystem::path{} : cfg.output_dir / kLog);
  Breaker breaker(cfg.max_failure_rate, cfg.breaker_min_trials, trials);

  const std::size_t count = std::min(todo.size(), cfg.stop_after_trials.value_or(todo.size()));
  auto query = [&](const Pending& job) {
    const auto& p = plan.pairs[job.pair_index];
    JudgeQuery q;
    q.prompt_parts = cfg.prompt;
    q.first = &manifest.at(job.reverse ? p.b : p.a);
    q.second = &manifest.at(job.reverse ? p.a : p.b);
    q.key = trial_id(job.pair_index, job.reverse);
    return judge.judge(q);
  };
  auto commit = [&](const Pending& job, const JudgeVerdict& v) {
    TrialRecord t = make_trial(plan.pairs[job.pair_index], job.pair_index, job.reverse, judge_id, v);
    log.append(t);
    breaker.record(t);
    trials.push_back(std::move(t));
    breaker.check();
  };

  const std::size_t workers = std::min<std::size_t>(std::max(cfg.max_in_flight, 1), count);
  if (workers <= 1 || !judge.concurrent()) {
    for (std::size_t k = 0; k < count; ++k) commit(todo[k], query(todo[k]));
    return;
  }

  std::mutex mu;
  std::condition_variable cv;
  std::vector<std::optional<JudgeVerdict>> results(count);
  std::vector<std::exception_ptr> errors(count);
  std::size_t issued = 0;
  std::size_t committed = 0;
  bool stop = false;
  const std::size_t window = static_cast<std::size_t>(cfg.max_in_flight);

  auto worker = [&] {
    for (;;) {
      std::size_t k;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return stop || issued >= count || issued < committed + window; });
        if (stop || issued >= count) return;
        k = issued++;
      }
      std::optional<JudgeVerdict> v;
      std::exception_ptr err;
      try {
        v = query(todo[k]);
      } catch (...) {
        err = std::current_exception();
      }
      {
        std::lock_guard lock(mu);
        results[k] = std::move(v);
        errors[k] = err;
        if (err && !results[k]) results[k] = JudgeVerdict{};  // marks slot as finished
      }
      cv.notify_all();
    }
  };

  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  auto shutdown = [&] {
    {
      std::lock_guard lock(mu);
      stop = true;
    }
    cv.notify_all();
    for (auto& th : pool) th.join();
  };

  try {
    for (std::size_t k = 0; k < count; ++k) {
      JudgeVerdict v;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return results[k].has_value(); });
        if (errors[k]) std::rethrow_exception(errors[k]);
        v = *results[k];
      }
      commit(todo[k], v);
      {
        std::lock_guard lock(mu);
        ++committed;
      }
      cv.notify_all();
    }
  } catch (...) {
    shutdown();
    throw;
  }
  shutdown();
}

std::vector<Pending> pending_trials(const PairingPlan& plan, const std::vector<TrialRecord>& done) {
  std::unordered_set<std::string> have;
  for (const auto& t : done) have.insert(t.trial_id);
  std::vector<Pending> todo;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    for (bool reverse : {false, true}) {
      if (!have.contains(trial_id(i, reverse))) todo.push_back({i, reverse});
    }
  }
  return todo;
}

SessionResult finish(const DatasetManifest& manifest, const PairingPlan& plan, const SessionConfig& cfg,
                     std::vector<TrialRecord> trials) {
  SessionResult res;
  res.complete = trials.size() == 2 * plan.size();
  res.trials = std::move(trials);
  if (res.complete) {
    res.analysis = analyze(res.trials, manifest, cfg.methods, cfg.aggregate);
    if (!cfg.output_dir.empty()) write_outputs(*res.analysis, cfg.output_dir);
  }
  return res;
}

json session_meta(const DatasetManifest& manifest, const PairingPlan& plan, const SessionConfig& cfg,
                  const std::string& judge_id) {
  json methods = json::array();
  for (Method m : cfg.methods) methods.push_back(to_string(m));
  std::string manifest_path;
  if (!cfg.manifest_path.empty()) manifest_path = std::filesystem::absolute(cfg.manifest_path).string();
  return {{"manifest_hash", hex64(manifest.content_hash())},
          {"manifest_path", manifest_path},
          {"seed", cfg.seed},
          {"rounds", cfg.rounds},
          {"plan_kind", to_string(plan.kind)},
          {"n_pairs", plan.size()},
          {"judge", cfg.judge_spec},
          {"judge_id", judge_id},
          {"methods", methods},
          {"max_in_flight", cfg.max_in_flight},
          {"max_failure_rate", cfg.max_failure_rate},
          {"breaker_min_trials", cfg.breaker_min_trials}};
}

// Reads the log, tolerating a torn final line left by an interrupted write.
std::vector<TrialRecord> read_log_for_resume(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  std::string text = read_file(path);
  if (!text.empty() && text.back() != '\n') {
    const auto cut = text.find_last_of('\n');
    text.erase(cut == std::string::npos ? 0 : cut + 1);
  }
  auto trials = parse_trial_log(text);
  write_file(path, text);
  return trials;
}

}  // namespace

SessionResult run_session(const DatasetManifest& manifest, const PairingPlan& plan, Judge& judge,
                          const SessionConfig& cfg) {
  if (cfg.rounds < 1) throw ValidationError("session rounds must be >= 1");
  if (cfg.max_in_flight < 1) throw ValidationError("max_in_flight must be >= 1");
  if (cfg.methods.empty()) throw ValidationError("no aggregation method selected");
  validate_prompt(cfg.prompt);
  validate_plan(plan, manifest);
  if (manifest.size() < 2) throw ValidationError("session needs at least 2 images");

  if (!cfg.output_dir.empty()) {
    if (std::filesystem::exists(cfg.output_dir / kLog)) {
      throw ValidationError("output directory " + cfg.output_dir.string() +
                            " already holds a trial log; resume it or choose another directory");
    }
    std::filesystem::create_directories(cfg.output_dir);
    const std::string judge_id = cfg.judge_id.empty() ? judge.id() : cfg.judge_id;
    write_file(cfg.output_dir / kMeta, session_meta(manifest, plan, cfg, judge_id).dump(2) + "\n");
    write_file(cfg.output_dir / kPlan, plan_to_jsonl(plan));
    write_file(cfg.output_dir / kLog, "");
  }

  std::vector<TrialRecord> trials;
  execute(manifest, plan, judge, cfg, trials, pending_trials(plan, trials));
  return finish(manifest, plan, cfg, std::move(trials));
}

SessionResult resume_session(const std::filesystem::path& dir, Judge* judge,
                             std::optional<std::size_t> stop_after_trials) {
  if (!std::filesystem::exists(dir / kMeta)) throw NotFoundError("no session found in " + dir.string());
  json meta;
  try {
    meta = json::parse(read_file(dir / kMeta));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("session.json: ") + e.what());
  }
  SessionConfig cfg;
  std::string recorded_hash;
  try {
    cfg.seed = meta.at("seed").get<std::uint64_t>();
    cfg.rounds = meta.at("rounds").get<int>();
    cfg.judge_spec = meta.at("judge").get<std::string>();
    cfg.judge_id = meta.at("judge_id").get<std::string>();
    cfg.methods.clear();
    for (const auto& m : meta.at("methods")) cfg.methods.push_back(method_from_string(m.get<std::string>()));
    cfg.max_in_flight = meta.value("max_in_flight", 1);
    cfg.max_failure_rate = meta.value("max_failure_rate", cfg.max_failure_rate);
    cfg.breaker_min_trials = meta.value("breaker_min_trials", cfg.breaker_min_trials);
    cfg.manifest_path = meta.at("manifest_path").get<std::string>();
    recorded_hash = meta.at("manifest_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("session.json: ") + e.what());
  }
  cfg.output_dir = dir;
  cfg.stop_after_trials = stop_after_trials;
  if (cfg.manifest_path.empty()) throw ValidationError("session.json records no manifest path; cannot resume");

  const DatasetManifest manifest = load_manifest(cfg.manifest_path);
  if (hex64(manifest.content_hash()) != recorded_hash) {
    throw ValidationError("manifest hash mismatch: " + cfg.manifest_path.string() + " changed since the session began");
  }
  const PairingPlan plan = plan_from_jsonl(read_file(dir / kPlan));
  if (plan.size() != meta.at("n_pairs").get<std::size_t>()) throw ValidationError("plan.jsonl does not match session.json");
  validate_plan(plan, manifest);

  std::unique_ptr<Judge> owned;
  if (judge == nullptr) {
    if (cfg.judge_spec.empty()) throw ValidationError("session.json records no judge spec; pass a judge");
    owned = make_judge(cfg.judge_spec, manifest, cfg.seed);
    judge = owned.get();
  }

  auto trials = read_log_for_resume(dir / kLog);
  derive_state(plan, trials);  // validates the log against the plan
  execute(manifest, plan, *judge, cfg, trials, pending_trials(plan, trials));
  return finish(manifest, plan, cfg, std::move(trials));
}

DatasetManifest synthetic_manifest(const std::vector<double>& mos) {
  std::vector<ImageRecord> images;
  images.reserve(mos.size());
  for (std::size_t i = 0; i < mos.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img%04zu", i);
    ImageRecord r;
    r.id = buf;
    r.dataset_id = "sim";
    r.file_ref = std::string(buf) + ".pgm";
    r.mos = mos[i];
    images.push_back(std::move(r));
  }
  return DatasetManifest("sim", std::move(images));
}

std::vector<ConvergencePoint> simulate_convergence(std::size_t n, const std::string& judge_spec, int m_max,
                                                   int repeats, std::uint64_t seed) {
  if (n < 2) throw ValidationError("simulate: n must be >= 2");
  if (m_max < 1) throw ValidationError("simulate: mmax must be >= 1");
  if (repeats < 1) throw ValidationError("simulate: repeats must be >= 1");
  const std::string kind = judge_spec.substr(0, judge_spec.find(':'));
  if (kind != "oracle" && kind != "thurstone" && kind != "biased") {
    throw ValidationError("simulate: judge must be oracle, thurstone:S or biased:P");
  }

  std::vector<ConvergencePoint> curve(static_cast<std::size_t>(m_max));
  for (int m = 0; m < m_max; ++m) curve[m].round = m + 1;

  for (int rep = 0; rep < repeats; ++rep) {
    const std::uint64_t rep_seed = query_seed(seed, "repeat-" + std::to_string(rep));
    std::mt19937_64 rng(rep_seed);
    std::vector<double> truth(n);
    for (auto& t : truth) t = 100.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const auto manifest = synthetic_manifest(truth);
    const Eigen::Map<const Eigen::VectorXd> truth_vec(truth.data(), static_cast<Eigen::Index>(n));

    auto judge = make_judge(judge_spec, manifest, rep_seed);
    const auto plan = coarse_rounds(manifest, m_max, rep_seed);
    SessionConfig cfg;
    cfg.seed = rep_seed;
    cfg.rounds = m_max;
    const auto res = run_session(manifest, plan, *judge, cfg);
    const auto outcomes = pair_outcomes(res.trials);

    // Rounds 1..M of one session are exactly the M-round session.
    PreferenceMatrix c(manifest.ids());
    std::size_t next = 0;
    for (int m = 1; m <= m_max; ++m) {
      while (next < outcomes.size() && outcomes[next].round <= m) c.accumulate(outcomes[next++]);
      const auto est = map_estimate(c);
      double r = 0.0;
      if (est.scores.maxCoeff() > est.scores.minCoeff()) r = plcc(est.scores, truth_vec);
      curve[m - 1].plcc += r / repeats;
    }

    double bound = 0.0;
    if (kind == "oracle") {
      bound = 1.0;
    } else if (kind == "thurstone") {
      const double sigma = std::stod(judge_spec.substr(judge_spec.find(':') + 1));
      Eigen::VectorXd latent(static_cast<Eigen::Index>(n));
      std::mt19937_64 noise(query_seed(rep_seed, "latent"));
      std::normal_distribution<double> normal(0.0, sigma);
      for (std::size_t i = 0; i < n; ++i) latent(static_cast<Eigen::Index>(i)) = truth[i] + normal(noise);
      bound = plcc(latent, truth_vec);
    }
    for (auto& pt : curve) pt.upper_bound += bound / repeats;
  }
  return curve;
}

std::string convergence_to_csv(std::span<const ConvergencePoint> curve) {
  std::string out = "round,plcc,upper_bound\n";
  for (const auto& p : curve) {
    out += std::to_string(p.round) + "," + format_double(p.plcc) + "," + format_double(p.upper_bound) + "\n";
  }
  return out;
}

}  // namespace qprobe
