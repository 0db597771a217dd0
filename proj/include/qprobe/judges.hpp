#pragma once

// Judges: anything that, given a text prompt and two images, says which
// image has better quality.

#include "qprobe/core.hpp"
#include "qprobe/metrics.hpp"

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace qprobe {

struct ImageSlot {
  int index = 0;  // 0 = first image, 1 = second image
  friend bool operator==(const ImageSlot&, const ImageSlot&) = default;
};

using PromptPart = std::variant<std::string, ImageSlot>;

/// The fixed interleaved prompt: text, image, text, image, question.
std::vector<PromptPart> default_prompt();

/// Throws ValidationError unless the prompt has exactly one slot for each image.
void validate_prompt(const std::vector<PromptPart>& parts);

struct JudgeQuery {
  std::vector<PromptPart> prompt_parts;
  const ImageRecord* first = nullptr;
  const ImageRecord* second = nullptr;
  std::string key;  // stable per-trial key; seeds stochastic judges
};

struct JudgeVerdict {
  Response choice = Response::Abstain;
  std::optional<std::string> raw_reply;
  std::optional<std::chrono::milliseconds> latency;
  FailureKind failure = FailureKind::None;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeVerdict judge(const JudgeQuery& query) = 0;
  virtual std::string id() const = 0;
  /// Whether judge() may be called from several threads at once.
  virtual bool concurrent() const { return true; }
};

/// Per-query engine seed derived from the judge seed and the query key.
std::uint64_t query_seed(std::uint64_t seed, const std::string& key);

/// First iff mos(first) >= mos(second).
class OracleJudge final : public Judge {
 public:
  explicit OracleJudge(MosTable mos) : mos_(std::move(mos)) {}
  JudgeVerdict judge(const JudgeQuery& q) override;
  std::string id() const override { return "oracle"; }

 private:
  MosTable mos_;
};

/// Latent MOS plus fresh N(0, sigma^2) noise for each presented image.
class ThurstoneJudge final : public Judge {
 public:
  ThurstoneJudge(MosTable mos, double sigma, std::uint64_t seed);
  JudgeVerdict judge(const JudgeQuery& q) override;
  std::string id() const override;

 private:
  MosTable mos_;
  double sigma_;
  std::uint64_t seed_;
};

/// Content-blind position bias: Second with probability p_second.
class BiasedJudge final : public Judge {
 public:
  BiasedJudge(double p_second, std::uint64_t seed);
  JudgeVerdict judge(const JudgeQuery& q) override;
  std::string id() const override;

 private:
  double p_second_;
  std::uint64_t seed_;
};

enum class Polarity { HigherBetter, LowerBetter };

struct ScoreTable {
  std::unordered_map<std::string, double> scores;
  Polarity polarity = Polarity::HigherBetter;
  std::string name = "scored";
};

/// CSV with columns id,score. Polarity is supplied by the caller.
ScoreTable load_score_table(const std::filesystem::path& path, Polarity polarity);

/// Picks the better precomputed score (e.g. NIQE, DBCNN) under the polarity.
class ScoredJudge final : public Judge {
 public:
  explicit ScoredJudge(ScoreTable table) : table_(std::move(table)) {}
  JudgeVerdict judge(const JudgeQuery& q) override;
  std::string id() const override { return table_.name; }

 private:
  ScoreTable table_;
};

/// Answers from a recorded trial log, matching the presentation order
/// exactly and consuming the first unconsumed match.
class ReplayJudge final : public Judge {
 public:
  explicit ReplayJudge(std::vector<TrialRecord> log, std::string judge_id = "replay");
  JudgeVerdict judge(const JudgeQuery& q) override;
  std::string id() const override { return judge_id_; }
  bool concurrent() const override { return false; }

 private:
  std::map<std::pair<std::string, std::string>, std::deque<TrialRecord>> queue_;
  std::string judge_id_;
  std::mutex mutex_;
};

// -- remote LMM ---------------------------------------------------------------

struct EndpointConfig {
  std::string url;  // e.g. https://api.example.com/v1/chat/completions
  std::string model;
  std::string auth_env;  // environment variable holding the API key
  int max_concurrency = 4;
  int timeout_ms = 60000;
  int max_retries = 3;
  std::string image_encoding = "data_url";  // data_url | base64
  int initial_backoff_ms = 500;
};

EndpointConfig load_endpoint_config(const std::filesystem::path& path);
EndpointConfig parse_endpoint_config(const std::string& json_text);

/// Keyword rule: "first" without "second" -> First, "second" without
/// "first" -> Second, anything else -> Abstain. Case-insensitive.
Response parse_reply(const std::string& reply);

std::string base64_encode(std::string_view bytes);
std::string mime_type_for(const std::filesystem::path& path);

/// OpenAI-style chat-completions request body for one query.
std::string build_chat_request(const EndpointConfig& cfg, const JudgeQuery& q,
                               const std::function<std::string(const ImageRecord&)>& load_image);

/// Reply text from a chat-completions response body, if present.
std::optional<std::string> extract_reply_text(const std::string& response_body);

struct HttpReply {
  int status = 0;  // 0 = connection failure
  std::string body;
};

/// POST body -> reply. Injectable so the judge can run against fakes.
using HttpTransport = std::function<HttpReply(const std::string& body)>;

HttpTransport make_http_transport(const EndpointConfig& cfg);

class HttpLmmJudge final : public Judge {
 public:
  explicit HttpLmmJudge(EndpointConfig cfg);
  HttpLmmJudge(EndpointConfig cfg, HttpTransport transport,
               std::function<void(std::chrono::milliseconds)> sleeper = {});
  JudgeVerdict judge(const JudgeQuery& q) override;
  std::string id() const override { return cfg_.model.empty() ? "http" : cfg_.model; }
  const EndpointConfig& config() const { return cfg_; }

 private:
  EndpointConfig cfg_;
  HttpTransport transport_;
  std::function<void(std::chrono::milliseconds)> sleep_;
};

/// Builds a judge from a CLI spec: oracle | thurstone:SIGMA | biased:P |
/// scored:FILE[:lower|:higher] | replay:FILE | http:CONFIG.
std::unique_ptr<Judge> make_judge(const std::string& spec, const DatasetManifest& manifest, std::uint64_t seed);

}  // namespace qprobe
