#include "qprobe/judges.hpp"

#include "httplib.h"
#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <thread>

namespace qprobe {

using nlohmann::json;

EndpointConfig parse_endpoint_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("endpoint config: ") + e.what());
  }
  EndpointConfig cfg;
  try {
    cfg.url = j.at("url").get<std::string>();
    cfg.model = j.value("model", std::string{});
    cfg.auth_env = j.value("auth_env", std::string{});
    cfg.max_concurrency = j.value("max_concurrency", cfg.max_concurrency);
    cfg.timeout_ms = j.value("timeout_ms", cfg.timeout_ms);
    cfg.max_retries = j.value("max_retries", cfg.max_retries);
    cfg.image_encoding = j.value("image_encoding", cfg.image_encoding);
    cfg.initial_backoff_ms = j.value("initial_backoff_ms", cfg.initial_backoff_ms);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("endpoint config: ") + e.what());
  }
  if (cfg.max_concurrency < 1 || cfg.timeout_ms < 1 || cfg.max_retries < 0 || cfg.initial_backoff_ms < 0) {
    throw ValidationError("endpoint config: concurrency/timeout must be positive, retries nonnegative");
  }
  if (cfg.image_encoding != "data_url" && cfg.image_encoding != "base64") {
    throw ValidationError("endpoint config: image_encoding must be data_url or base64");
  }
  return cfg;
}

EndpointConfig load_endpoint_config(const std::filesystem::path& path) {
  return parse_endpoint_config(read_file(path));
}

Response parse_reply(const std::string& reply) {
  std::string lower(reply);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  const bool first = lower.find("first") != std::string::npos;
  const bool second = lower.find("second") != std::string::npos;
  if (first && !second) return Response::First;
  if (second && !first) return Response::Second;
  return Response::Abstain;
}

std::string base64_encode(std::string_view bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto n = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                   static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  if (i < bytes.size()) {
    unsigned n = static_cast<unsigned char>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) n |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string mime_type_for(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return "image/x-portable-anymap";
  return "application/octet-stream";
}

std::string build_chat_request(const EndpointConfig& cfg, const JudgeQuery& q,
                               const std::function<std::string(const ImageRecord&)>& load_image) {
  validate_prompt(q.prompt_parts);
  if (q.first == nullptr || q.second == nullptr) throw ValidationError("judge query without image");
  json content = json::array();
  for (const auto& part : q.prompt_parts) {
    if (const auto* text = std::get_if<std::string>(&part)) {
      content.push_back({{"type", "text"}, {"text", *text}});
      continue;
    }
    const ImageRecord& rec = std::get<ImageSlot>(part).index == 0 ? *q.first : *q.second;
    const std::string mime = mime_type_for(rec.file_ref);
    const std::string b64 = base64_encode(load_image(rec));
    if (cfg.image_encoding == "base64") {
      content.push_back({{"type", "image"}, {"source", {{"type", "base64"}, {"media_type", mime}, {"data", b64}}}});
    } else {
      content.push_back({{"type", "image_url"}, {"image_url", {{"url", "data:" + mime + ";base64," + b64}}}});
    }
  }
  json body = {{"messages", json::array({{{"role", "user"}, {"content", content}}})}};
  if (!cfg.model.empty()) body["model"] = cfg.model;
  return body.dump();
}

std::optional<std::string> extract_reply_text(const std::string& response_body) {
  const json j = json::parse(response_body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  auto join_parts = [](const json& parts) -> std::optional<std::string> {
    if (parts.is_string()) return parts.get<std::string>();
    if (!parts.is_array()) return std::nullopt;
    std::string text;
    for (const auto& p : parts) {
      if (p.is_object() && p.contains("text") && p["text"].is_string()) text += p["text"].get<std::string>();
    }
    return text;
  };
  if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const auto& c = j["choices"][0];
    if (c.contains("message") && c["message"].contains("content")) return join_parts(c["message"]["content"]);
    if (c.contains("text")) return join_parts(c["text"]);
  }
  if (j.contains("content")) return join_parts(j["content"]);
  if (j.contains("response") && j["response"].is_string()) return j["response"].get<std::string>();
  return std::nullopt;
}

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("endpoint url must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpTransport make_http_transport(const EndpointConfig& cfg) {
  const ParsedUrl url = split_url(cfg.url);
  httplib::Headers headers;
  if (!cfg.auth_env.empty()) {
    const char* key = std::getenv(cfg.auth_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw ValidationError("endpoint credentials: environment variable " + cfg.auth_env + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const int timeout_ms = cfg.timeout_ms;
  return [url, headers, timeout_ms](const std::string& body) -> HttpReply {
    httplib::Client client(url.origin);
    client.set_connection_timeout(std::chrono::milliseconds(timeout_ms));
    client.set_read_timeout(std::chrono::milliseconds(timeout_ms));
    client.set_write_timeout(std::chrono::milliseconds(timeout_ms));
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) return {0, httplib::to_string(res.error())};
    return {res->status, res->body};
  };
}

HttpLmmJudge::HttpLmmJudge(EndpointConfig cfg) : HttpLmmJudge(cfg, make_http_transport(cfg)) {}

HttpLmmJudge::HttpLmmJudge(EndpointConfig cfg, HttpTransport transport,
                           std::function<void(std::chrono::milliseconds)> sleeper)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), sleep_(std::move(sleeper)) {
  if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

JudgeVerdict HttpLmmJudge::judge(const JudgeQuery& q) {
  const auto start = std::chrono::steady_clock::now();
  JudgeVerdict verdict;
  std::string body;
  try {
    body = build_chat_request(cfg_, q, [](const ImageRecord& r) { return read_file(r.file_ref); });
  } catch (const Error& e) {
    verdict.failure = FailureKind::Transport;
    verdict.raw_reply = std::string("request not built: ") + e.what();
    return verdict;
  }

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) sleep_(std::chrono::milliseconds(static_cast<long>(cfg_.initial_backoff_ms) << (attempt - 1)));
    HttpReply reply;
    try {
      reply = transport_(body);
    } catch (const std::exception& e) {
      reply = {0, e.what()};
    }
    const bool retryable = reply.status == 0 || reply.status == 408 || reply.status == 429 || reply.status >= 500;
    if (reply.status >= 200 && reply.status < 300) {
      verdict.latency =
          std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
      const auto text = extract_reply_text(reply.body);
      if (!text) {
        verdict.failure = FailureKind::Parse;
        verdict.raw_reply = reply.body;
        return verdict;
      }
      verdict.raw_reply = *text;
      verdict.choice = parse_reply(*text);
      verdict.failure = verdict.choice == Response::Abstain ? FailureKind::Parse : FailureKind::None;
      return verdict;
    }
    last_error = "HTTP " + std::to_string(reply.status) + ": " + reply.body.substr(0, 500);
    if (!retryable) break;
  }
  verdict.failure = FailureKind::Transport;
  verdict.raw_reply = last_error;
  verdict.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
  return verdict;
}

std::unique_ptr<Judge> make_judge(const std::string& spec, const DatasetManifest& manifest, std::uint64_t seed) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? std::string() : spec.substr(colon + 1);
  auto need_arg = [&] {
    if (arg.empty()) throw ValidationError("judge '" + kind + "' needs an argument (" + kind + ":...)");
  };
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ValidationError("judge '" + spec + "': bad number '" + s + "'");
    }
  };
  if (kind == "oracle") return std::make_unique<OracleJudge>(mos_table(manifest));
  if (kind == "thurstone") {
    need_arg();
    return std::make_unique<ThurstoneJudge>(mos_table(manifest), number(arg), seed);
  }
  if (kind == "biased") {
    need_arg();
    return std::make_unique<BiasedJudge>(number(arg), seed);
  }
  if (kind == "scored") {
    need_arg();
    std::string path = arg;
    Polarity polarity = Polarity::HigherBetter;
    for (const auto& [suffix, pol] : {std::pair{":lower", Polarity::LowerBetter}, {":higher", Polarity::HigherBetter}}) {
      const std::string s(suffix);
      if (path.size() > s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0) {
        path.resize(path.size() - s.size());
        polarity = pol;
      }
    }
    return std::make_unique<ScoredJudge>(load_score_table(path, polarity));
  }
  if (kind == "replay") {
    need_arg();
    auto log = load_trial_log(arg);
    std::string id = log.empty() ? std::string("replay") : log.front().judge_id;
    return std::make_unique<ReplayJudge>(std::move(log), id);
  }
  if (kind == "http") {
    need_arg();
    return std::make_unique<HttpLmmJudge>(load_endpoint_config(arg));
  }
  throw ValidationError("unknown judge '" + spec + "' (oracle|thurstone:S|biased:P|scored:F|replay:F|http:F)");
}

}  // namespace qprobe
