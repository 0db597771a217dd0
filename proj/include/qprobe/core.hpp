#pragma once

// Domain model shared by every module: image manifests, judge trials,
// dual-order pair outcomes and the preference count matrix.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace qprobe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: manifests, logs, plans, configs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A referenced image, trial or score is absent.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct ImageRecord {
  std::string id;
  std::string dataset_id;
  std::string file_ref;
  std::optional<double> mos;
  std::optional<std::string> distortion_type;
  std::optional<int> distortion_level;
  std::optional<std::string> reference_id;
  std::optional<double> si;
  std::optional<double> cf;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

class DatasetManifest {
 public:
  DatasetManifest() = default;
  /// Validates on construction; throws ValidationError.
  DatasetManifest(std::string name, std::vector<ImageRecord> images,
                  std::pair<double, double> mos_scale = {0.0, 100.0});

  const std::string& name() const { return name_; }
  const std::vector<ImageRecord>& images() const { return images_; }
  std::pair<double, double> mos_scale() const { return mos_scale_; }
  std::size_t size() const { return images_.size(); }

  bool contains(const std::string& id) const { return index_.contains(id); }
  std::size_t index_of(const std::string& id) const;
  const ImageRecord& at(const std::string& id) const { return images_[index_of(id)]; }
  std::vector<std::string> ids() const;

  /// Content hash over every record field, used to pin resumable sessions.
  std::uint64_t content_hash() const;

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.name_ == b.name_ && a.images_ == b.images_ && a.mos_scale_ == b.mos_scale_;
  }

 private:
  std::string name_;
  std::vector<ImageRecord> images_;
  std::pair<double, double> mos_scale_{0.0, 100.0};
  std::unordered_map<std::string, std::size_t> index_;
};

/// Loads a manifest from `.csv` or `.json` (chosen by extension).
DatasetManifest load_manifest(const std::filesystem::path& source);
DatasetManifest parse_manifest_csv(const std::string& text, std::string name = "manifest");
DatasetManifest parse_manifest_json(const std::string& text);
std::string manifest_to_csv(const DatasetManifest& manifest);
std::string manifest_to_json(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dest);

enum class Response { First, Second, Abstain };

/// Why a trial ended in Abstain. Transport failures are kept apart from
/// unparseable replies so consistency penalties can be attributed.
enum class FailureKind { None, Parse, Transport };

std::string to_string(Response r);
Response response_from_string(const std::string& s);
std::string to_string(FailureKind f);
FailureKind failure_from_string(const std::string& s);

struct TrialRecord {
  std::string trial_id;
  std::string first_id;
  std::string second_id;
  std::string judge_id;
  Response response = Response::Abstain;
  int round = 1;
  std::optional<std::string> raw_reply;
  std::string timestamp;  // UTC, ISO-8601; excluded from every derived output
  FailureKind failure = FailureKind::None;
  std::optional<std::size_t> pair_index;
  std::string group;  // report grouping key; empty = by dataset

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

/// One JSON object per line, no trailing newline.
std::string trial_to_json_line(const TrialRecord& trial);
TrialRecord trial_from_json_line(const std::string& line);
std::vector<TrialRecord> parse_trial_log(const std::string& text);
std::vector<TrialRecord> load_trial_log(const std::filesystem::path& path);

struct PairOutcome {
  std::string a_id;  // a_id < b_id
  std::string b_id;
  Response forward = Response::Abstain;  // trial presenting (a, b)
  Response reverse = Response::Abstain;  // trial presenting (b, a)
  bool consistent = false;
  int round = 1;
  std::size_t pair_index = 0;
  std::string group;

  /// Image chosen in both orders, if consistent.
  std::optional<std::string> winner() const;
  std::optional<std::string> loser() const;
};

/// Builds the outcome of one logical pair from its two presentation orders.
PairOutcome make_outcome(const TrialRecord& one, const TrialRecord& other);

/// Groups a trial log into dual-order outcomes. Trials are matched by
/// pair_index when every trial carries one, otherwise each trial is matched
/// with the earliest unmatched opposite-order trial of the same pair.
/// Unmatched (half-done) trials are ignored. Result is ordered by pair index
/// (or first appearance).
std::vector<PairOutcome> pair_outcomes(std::span<const TrialRecord> trials);

class PreferenceMatrix {
 public:
  explicit PreferenceMatrix(std::vector<std::string> ids);

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const CountMatrix& counts() const { return counts_; }
  std::size_t index_of(const std::string& id) const;

  std::int64_t operator()(const std::string& winner, const std::string& loser) const {
    return counts_(index_of(winner), index_of(loser));
  }

  /// Adds one count to (winner, loser) for a consistent outcome; leaves the
  /// matrix untouched otherwise. Not internally synchronized.
  void accumulate(const PairOutcome& outcome);
  void add(std::size_t winner, std::size_t loser, std::int64_t count = 1);

  std::int64_t total() const { return counts_.sum(); }

  /// Same matrix restricted/reordered to the given ids.
  PreferenceMatrix permuted(const std::vector<std::string>& order) const;

  friend bool operator==(const PreferenceMatrix& a, const PreferenceMatrix& b) {
    return a.ids_ == b.ids_ && a.counts_ == b.counts_;
  }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  CountMatrix counts_;
};

PreferenceMatrix accumulate(PreferenceMatrix c, const PairOutcome& outcome);

PreferenceMatrix build_matrix(const std::vector<std::string>& ids,
                              std::span<const PairOutcome> outcomes);

/// Dense CSV: header `id,<id...>`, one row per winner.
std::string matrix_to_csv(const PreferenceMatrix& c);

enum class Method { MAP, MLE, Perron, TrueSkill };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct RankingResult {
  Method method = Method::MAP;
  std::vector<std::string> ids;
  Eigen::VectorXd scores;        // internal scale
  Eigen::VectorXd scores_0_100;  // min-max rescaled
  std::optional<Eigen::VectorXd> sigma;  // TrueSkill only
  int rounds_used = 0;
  bool converged = false;
  int iterations = 0;
  double final_gradient_norm = 0.0;
  std::vector<double> objective_trace;  // accepted-step objective values, when requested

  double score(const std::string& id) const;
};

/// `id,method,score_internal,score_0_100,sigma` for each result.
std::string scores_to_csv(std::span<const RankingResult> results);

// -- small shared utilities ------------------------------------------------

/// Shortest decimal text that round-trips the double.
std::string format_double(double v);
std::vector<std::vector<std::string>> parse_csv(const std::string& text);
std::string csv_escape(const std::string& field);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 1469598103934665603ULL);
std::string utc_timestamp();

}  // namespace qprobe
