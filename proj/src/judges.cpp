#include "qprobe/judges.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace qprobe {

std::vector<PromptPart> default_prompt() {
  return {std::string("This is the first image:"), ImageSlot{0}, std::string("This is the second image:"),
          ImageSlot{1}, std::string("Which image has better visual quality?")};
}

void validate_prompt(const std::vector<PromptPart>& parts) {
  int slots[2] = {0, 0};
  for (const auto& p : parts) {
    if (const auto* s = std::get_if<ImageSlot>(&p)) {
      if (s->index != 0 && s->index != 1) throw ValidationError("prompt image slot must be 0 or 1");
      ++slots[s->index];
    }
  }
  if (slots[0] != 1 || slots[1] != 1) throw ValidationError("prompt must contain exactly one slot per image");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform in [0, 1) with 53 random bits.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double standard_normal(std::mt19937_64& rng) {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double lookup_mos(const MosTable& mos, const ImageRecord* rec) {
  if (rec == nullptr) throw ValidationError("judge query without image");
  auto it = mos.find(rec->id);
  if (it == mos.end()) throw NotFoundError("no MOS for image '" + rec->id + "'");
  return it->second;
}

void require_images(const JudgeQuery& q) {
  if (q.first == nullptr || q.second == nullptr) throw ValidationError("judge query without image");
}

}  // namespace

std::uint64_t query_seed(std::uint64_t seed, const std::string& key) {
  return splitmix64(splitmix64(seed) ^ fnv1a64(key));
}

JudgeVerdict OracleJudge::judge(const JudgeQuery& q) {
  const double a = lookup_mos(mos_, q.first);
  const double b = lookup_mos(mos_, q.second);
  return {a >= b ? Response::First : Response::Second, std::nullopt, std::nullopt, FailureKind::None};
}

ThurstoneJudge::ThurstoneJudge(MosTable mos, double sigma, std::uint64_t seed)
    : mos_(std::move(mos)), sigma_(sigma), seed_(seed) {
  if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) throw ValidationError("thurstone judge: sigma must be > 0");
}

std::string ThurstoneJudge::id() const { return "thurstone:" + format_double(sigma_); }

JudgeVerdict ThurstoneJudge::judge(const JudgeQuery& q) {
  const double a = lookup_mos(mos_, q.first);
  const double b = lookup_mos(mos_, q.second);
  std::mt19937_64 rng(query_seed(seed_, q.key));
  const double u = a + sigma_ * standard_normal(rng);
  const double w = b + sigma_ * standard_normal(rng);
  return {u >= w ? Response::First : Response::Second, std::nullopt, std::nullopt, FailureKind::None};
}

BiasedJudge::BiasedJudge(double p_second, std::uint64_t seed) : p_second_(p_second), seed_(seed) {
  if (!(p_second_ >= 0.0 && p_second_ <= 1.0)) throw ValidationError("biased judge: p_second must lie in [0,1]");
}

std::string BiasedJudge::id() const { return "biased:" + format_double(p_second_); }

JudgeVerdict BiasedJudge::judge(const JudgeQuery& q) {
  require_images(q);
  std::mt19937_64 rng(query_seed(seed_, q.key));
  const bool second = unit_uniform(rng) < p_second_;
  return {second ? Response::Second : Response::First, std::nullopt, std::nullopt, FailureKind::None};
}

ScoreTable load_score_table(const std::filesystem::path& path, Polarity polarity) {
  const auto rows = parse_csv(read_file(path));
  if (rows.empty()) throw ValidationError("score table " + path.string() + ": empty");
  const auto& header = rows.front();
  std::size_t id_col = header.size();
  std::size_t score_col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "id") id_col = i;
    if (header[i] == "score") score_col = i;
  }
  if (id_col == header.size() || score_col == header.size()) {
    throw ValidationError("score table " + path.string() + ": need columns id,score");
  }
  ScoreTable table;
  table.polarity = polarity;
  table.name = "scored:" + path.stem().string();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size()) throw ValidationError("score table row " + std::to_string(r + 1) + ": malformed");
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(row[score_col], &used);
      if (used != row[score_col].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError("score table row " + std::to_string(r + 1) + ": bad score '" + row[score_col] + "'");
    }
    table.scores[row[id_col]] = v;
  }
  return table;
}

JudgeVerdict ScoredJudge::judge(const JudgeQuery& q) {
  require_images(q);
  auto get = [&](const ImageRecord* rec) {
    auto it = table_.scores.find(rec->id);
    if (it == table_.scores.end()) throw NotFoundError("no score for image '" + rec->id + "'");
    return it->second;
  };
  const double a = get(q.first);
  const double b = get(q.second);
  const bool first = table_.polarity == Polarity::HigherBetter ? a >= b : a <= b;
  return {first ? Response::First : Response::Second, std::nullopt, std::nullopt, FailureKind::None};
}

ReplayJudge::ReplayJudge(std::vector<TrialRecord> log, std::string judge_id) : judge_id_(std::move(judge_id)) {
  for (auto& t : log) {
    auto key = std::make_pair(t.first_id, t.second_id);
    queue_[key].push_back(std::move(t));
  }
}

JudgeVerdict ReplayJudge::judge(const JudgeQuery& q) {
  require_images(q);
  std::lock_guard lock(mutex_);
  auto it = queue_.find({q.first->id, q.second->id});
  if (it == queue_.end() || it->second.empty()) {
    throw NotFoundError("replay: no recorded trial presenting ('" + q.first->id + "', '" + q.second->id + "')");
  }
  TrialRecord t = std::move(it->second.front());
  it->second.pop_front();
  return {t.response, t.raw_reply, std::nullopt, t.failure};
}

}  // namespace qprobe
