#pragma once

// Human 2AFC sessions served over HTTP.

#include "qprobe/session.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace qprobe {

struct ServedTrial {
  std::string trial_id;
  std::string first_id;
  std::string second_id;
  std::size_t done = 0;
  std::size_t total = 0;
};

enum class SubmitStatus { Accepted, Duplicate, Unknown };

/// Server-side state of one human session. Each reverse-order trial is
/// served 3-10 trials after its forward trial (seeded). Thread-safe.
class HumanSession {
 public:
  HumanSession(DatasetManifest manifest, PairingPlan plan, SessionConfig cfg, std::string session_id);

  const std::string& id() const { return id_; }
  const DatasetManifest& manifest() const { return manifest_; }

  /// Earliest unanswered trial in schedule order; nullopt when complete.
  std::optional<ServedTrial> next() const;
  SubmitStatus submit(const std::string& trial_id, Response choice);

  bool complete() const;
  std::size_t total() const { return schedule_.size(); }
  std::vector<TrialRecord> trials() const;
  const std::vector<std::string>& schedule() const { return schedule_; }
  /// Set once the plan completes (outputs are then on disk when configured).
  std::optional<Analysis> analysis() const;

 private:
  struct Slot {
    std::size_t pair_index;
    bool reverse;
  };

  DatasetManifest manifest_;
  PairingPlan plan_;
  SessionConfig cfg_;
  std::string id_;
  std::vector<std::string> schedule_;  // trial ids in serving order
  std::unordered_map<std::string, Slot> slots_;
  std::unordered_map<std::string, TrialRecord> answered_;
  std::vector<TrialRecord> log_;
  std::optional<Analysis> analysis_;
  mutable std::mutex mutex_;
};

/// Serving order for a plan: forward trials in plan order, each reverse
/// deferred by a seeded gap of 3-10 slots where the plan length allows.
std::vector<std::string> human_schedule(std::size_t n_pairs, std::uint64_t seed);

/// Routes for GET /api/session/{sid}/next, POST /api/session/{sid}/response
/// and GET /images/{id}. Image paths resolve against `image_root`.
std::unique_ptr<httplib::Server> make_session_server(HumanSession& session, std::filesystem::path image_root);

}  // namespace qprobe
