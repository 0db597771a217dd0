#include "qprobe/service.hpp"

#include "httplib.h"
#include "json.hpp"

#include <fstream>
#include <map>
#include <random>

namespace qprobe {

using nlohmann::json;

std::vector<std::string> human_schedule(std::size_t n_pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> order;
  order.reserve(2 * n_pairs);
  std::multimap<std::size_t, std::size_t> deferred;  // due slot -> pair index
  auto flush_due = [&] {
    while (!deferred.empty() && deferred.begin()->first <= order.size()) {
      order.push_back(trial_id(deferred.begin()->second, true));
      deferred.erase(deferred.begin());
    }
  };
  for (std::size_t i = 0; i < n_pairs; ++i) {
    flush_due();
    order.push_back(trial_id(i, false));
    const std::size_t gap = 3 + uniform_index(rng, 8);  // 3..10
    deferred.emplace(order.size() - 1 + gap, i);
  }
  for (const auto& [due, i] : deferred) order.push_back(trial_id(i, true));
  return order;
}

HumanSession::HumanSession(DatasetManifest manifest, PairingPlan plan, SessionConfig cfg, std::string session_id)
    : manifest_(std::move(manifest)), plan_(std::move(plan)), cfg_(std::move(cfg)), id_(std::move(session_id)) {
  validate_plan(plan_, manifest_);
  if (cfg_.methods.empty()) throw ValidationError("no aggregation method selected");
  if (id_.empty()) throw ValidationError("session id must not be empty");
  schedule_ = human_schedule(plan_.size(), cfg_.seed);
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    slots_.emplace(trial_id(i, false), Slot{i, false});
    slots_.emplace(trial_id(i, true), Slot{i, true});
  }
  if (cfg_.judge_id.empty()) cfg_.judge_id = "human";

  if (!cfg_.output_dir.empty()) {
    std::filesystem::create_directories(cfg_.output_dir);
    const auto log_path = cfg_.output_dir / "trials.jsonl";
    if (std::filesystem::exists(log_path)) {
      // Pick up where a previous server process stopped.
      for (auto& t : load_trial_log(log_path)) {
        if (!slots_.contains(t.trial_id)) throw ValidationError("trial log does not match the plan: " + t.trial_id);
        answered_.emplace(t.trial_id, t);
        log_.push_back(std::move(t));
      }
    } else {
      write_file(log_path, "");
    }
    write_file(cfg_.output_dir / "plan.jsonl", plan_to_jsonl(plan_));
    if (answered_.size() == schedule_.size() && !schedule_.empty()) {
      analysis_ = analyze(log_, manifest_, cfg_.methods, cfg_.aggregate);
      write_outputs(*analysis_, cfg_.output_dir);
    }
  }
}

std::optional<ServedTrial> HumanSession::next() const {
  std::lock_guard lock(mutex_);
  for (const auto& id : schedule_) {
    if (answered_.contains(id)) continue;
    const Slot& s = slots_.at(id);
    const auto& p = plan_.pairs[s.pair_index];
    return ServedTrial{id, s.reverse ? p.b : p.a, s.reverse ? p.a : p.b, answered_.size(), schedule_.size()};
  }
  return std::nullopt;
}

SubmitStatus HumanSession::submit(const std::string& id, Response choice) {
  std::lock_guard lock(mutex_);
  auto it = slots_.find(id);
  if (it == slots_.end()) return SubmitStatus::Unknown;
  if (answered_.contains(id)) return SubmitStatus::Duplicate;
  const Slot& s = it->second;
  const auto& p = plan_.pairs[s.pair_index];
  TrialRecord t;
  t.trial_id = id;
  t.first_id = s.reverse ? p.b : p.a;
  t.second_id = s.reverse ? p.a : p.b;
  t.judge_id = cfg_.judge_id;
  t.response = choice;
  t.round = p.round;
  t.timestamp = utc_timestamp();
  t.pair_index = s.pair_index;
  t.group = p.group;
  if (!cfg_.output_dir.empty()) {
    std::ofstream out(cfg_.output_dir / "trials.jsonl", std::ios::app | std::ios::binary);
    out << trial_to_json_line(t) << '\n';
    out.flush();
    if (!out) throw Error("failed to append to trial log");
  }
  answered_.emplace(id, t);
  log_.push_back(std::move(t));
  if (answered_.size() == schedule_.size()) {
    analysis_ = analyze(log_, manifest_, cfg_.methods, cfg_.aggregate);
    if (!cfg_.output_dir.empty()) write_outputs(*analysis_, cfg_.output_dir);
  }
  return SubmitStatus::Accepted;
}

bool HumanSession::complete() const {
  std::lock_guard lock(mutex_);
  return answered_.size() == schedule_.size();
}

std::vector<TrialRecord> HumanSession::trials() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::optional<Analysis> HumanSession::analysis() const {
  std::lock_guard lock(mutex_);
  return analysis_;
}

std::unique_ptr<httplib::Server> make_session_server(HumanSession& session, std::filesystem::path image_root) {
  auto server = std::make_unique<httplib::Server>();
  server->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                               {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                               {"Access-Control-Allow-Headers", "Content-Type"}});
  auto error = [](httplib::Response& res, int status, const std::string& msg) {
    res.status = status;
    res.set_content(json{{"error", msg}}.dump(), "application/json");
  };

  server->Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server->Get(R"(/api/session/([^/]+)/next)", [&session, error](const httplib::Request& req, httplib::Response& res) {
    if (req.matches[1] != session.id()) return error(res, 404, "unknown session");
    const auto trial = session.next();
    if (!trial) {
      res.status = 204;
      return;
    }
    json body = {{"trial_id", trial->trial_id},
                 {"first_image_url", "/images/" + trial->first_id},
                 {"second_image_url", "/images/" + trial->second_id},
                 {"progress", {{"done", trial->done}, {"total", trial->total}}}};
    res.set_content(body.dump(), "application/json");
  });

  server->Post(R"(/api/session/([^/]+)/response)",
               [&session, error](const httplib::Request& req, httplib::Response& res) {
                 if (req.matches[1] != session.id()) return error(res, 404, "unknown session");
                 const json body = json::parse(req.body, nullptr, false);
                 if (body.is_discarded() || !body.is_object() || !body.contains("trial_id") ||
                     !body["trial_id"].is_string() || !body.contains("choice") || !body["choice"].is_string()) {
                   return error(res, 400, "expected {trial_id, choice}");
                 }
                 const std::string choice = body["choice"].get<std::string>();
                 if (choice != "first" && choice != "second") return error(res, 400, "choice must be first or second");
                 const auto status = session.submit(body["trial_id"].get<std::string>(),
                                                    choice == "first" ? Response::First : Response::Second);
                 if (status == SubmitStatus::Duplicate) return error(res, 409, "trial already answered");
                 if (status == SubmitStatus::Unknown) return error(res, 409, "unknown trial id");
                 res.set_content(json{{"accepted", true}, {"complete", session.complete()}}.dump(),
                                 "application/json");
               });

  server->Get(R"(/images/([^/]+))", [&session, image_root, error](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!session.manifest().contains(id)) return error(res, 404, "unknown image");
    std::filesystem::path path = session.manifest().at(id).file_ref;
    if (path.is_relative()) path = image_root / path;
    std::string bytes;
    try {
      bytes = read_file(path);
    } catch (const Error&) {
      return error(res, 404, "image file unreadable");
    }
    res.set_content(std::move(bytes), mime_type_for(path));
  });

  server->set_exception_handler([error](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      error(res, 500, e.what());
    }
  });
  return server;
}

}  // namespace qprobe
