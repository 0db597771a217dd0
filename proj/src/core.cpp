#include "qprobe/core.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>

namespace qprobe {

using nlohmann::json;

// -- manifest ---------------------------------------------------------------

DatasetManifest::DatasetManifest(std::string name, std::vector<ImageRecord> images,
                                 std::pair<double, double> mos_scale)
    : name_(std::move(name)), images_(std::move(images)), mos_scale_(mos_scale) {
  if (images_.empty()) throw ValidationError("manifest '" + name_ + "' is empty");
  if (!(mos_scale_.first < mos_scale_.second)) throw ValidationError("mos_scale must satisfy min < max");
  for (std::size_t i = 0; i < images_.size(); ++i) {
    const auto& rec = images_[i];
    if (rec.id.empty()) throw ValidationError("image #" + std::to_string(i + 1) + " has an empty id");
    if (!index_.emplace(rec.id, i).second) throw ValidationError("duplicate image id '" + rec.id + "'");
    if (rec.mos) {
      const double m = *rec.mos;
      if (!(m >= 0.0 && m <= 100.0) || m < mos_scale_.first || m > mos_scale_.second) {
        throw ValidationError("image '" + rec.id + "': mos " + format_double(m) + " out of range");
      }
    }
    if (rec.distortion_level && !rec.distortion_type) {
      throw ValidationError("image '" + rec.id + "': distortion level without distortion type");
    }
    if (rec.distortion_level && *rec.distortion_level < 1) {
      throw ValidationError("image '" + rec.id + "': distortion level must be >= 1");
    }
    if ((rec.si && !(*rec.si >= 0.0)) || (rec.cf && !(*rec.cf >= 0.0))) {
      throw ValidationError("image '" + rec.id + "': si/cf must be >= 0");
    }
  }
}

std::size_t DatasetManifest::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw NotFoundError("unknown image id '" + id + "'");
  return it->second;
}

std::vector<std::string> DatasetManifest::ids() const {
  std::vector<std::string> out;
  out.reserve(images_.size());
  for (const auto& r : images_) out.push_back(r.id);
  return out;
}


namespace {

const std::vector<std::string> kCsvColumns = {"id",      "dataset",    "path",   "mos", "dist_type",
                                              "dist_level", "ref_id", "si",  "cf"};

double parse_real(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ValidationError(what + ": '" + s + "' is not a number");
  }
  return v;
}

int parse_int(const std::string& s, const std::string& what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError(what + ": '" + s + "' is not an integer");
  }
  return v;
}

json record_to_json(const ImageRecord& r) {
  json j = {{"id", r.id}, {"dataset", r.dataset_id}, {"path", r.file_ref}};
  if (r.mos) j["mos"] = *r.mos;
  if (r.distortion_type) j["dist_type"] = *r.distortion_type;
  if (r.distortion_level) j["dist_level"] = *r.distortion_level;
  if (r.reference_id) j["ref_id"] = *r.reference_id;
  if (r.si) j["si"] = *r.si;
  if (r.cf) j["cf"] = *r.cf;
  return j;
}

ImageRecord record_from_json(const json& j, std::size_t n) {
  const std::string where = "image #" + std::to_string(n);
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (const char* key : {"id", "dataset", "path"}) {
    if (!j.contains(key) || !j[key].is_string()) {
      throw ValidationError(where + ": missing string field '" + key + "'");
    }
  }
  ImageRecord r;
  r.id = j["id"].get<std::string>();
  r.dataset_id = j["dataset"].get<std::string>();
  r.file_ref = j["path"].get<std::string>();
  auto num = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_number()) throw ValidationError(where + ": '" + key + "' must be a number");
    return j[key].get<double>();
  };
  auto str = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string()) throw ValidationError(where + ": '" + key + "' must be a string");
    return j[key].get<std::string>();
  };
  r.mos = num("mos");
  r.distortion_type = str("dist_type");
  if (j.contains("dist_level") && !j["dist_level"].is_null()) {
    if (!j["dist_level"].is_number_integer()) throw ValidationError(where + ": 'dist_level' must be an integer");
    r.distortion_level = j["dist_level"].get<int>();
  }
  r.reference_id = str("ref_id");
  r.si = num("si");
  r.cf = num("cf");
  return r;
}

}  // namespace

std::uint64_t DatasetManifest::content_hash() const {
  // Records only: the name depends on how the manifest was loaded.
  std::string text;
  for (const auto& r : images_) text += record_to_json(r).dump() + "\n";
  return fnv1a64(text);
}

DatasetManifest parse_manifest_csv(const std::string& text, std::string name) {
  const auto rows = parse_csv(text);
  if (rows.empty()) throw ValidationError("manifest csv: missing header");
  const auto& header = rows.front();
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"id", "dataset", "path"}) {
    if (!col.contains(required)) throw ValidationError(std::string("manifest csv: missing column '") + required + "'");
  }
  std::vector<ImageRecord> images;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = "manifest csv row " + std::to_string(r + 1);
    if (row.size() != header.size()) {
      throw ValidationError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(row.size()));
    }
    auto cell = [&](const std::string& name) -> std::optional<std::string> {
      auto it = col.find(name);
      if (it == col.end() || row[it->second].empty()) return std::nullopt;
      return row[it->second];
    };
    ImageRecord rec;
    rec.id = cell("id").value_or("");
    if (rec.id.empty()) throw ValidationError(where + ": empty id");
    rec.dataset_id = cell("dataset").value_or("");
    rec.file_ref = cell("path").value_or("");
    if (auto v = cell("mos")) rec.mos = parse_real(*v, where + " mos");
    rec.distortion_type = cell("dist_type");
    if (auto v = cell("dist_level")) rec.distortion_level = parse_int(*v, where + " dist_level");
    rec.reference_id = cell("ref_id");
    if (auto v = cell("si")) rec.si = parse_real(*v, where + " si");
    if (auto v = cell("cf")) rec.cf = parse_real(*v, where + " cf");
    if (rec.mos && !(*rec.mos >= 0.0 && *rec.mos <= 100.0)) {
      throw ValidationError(where + ": mos " + format_double(*rec.mos) + " out of range [0,100]");
    }
    images.push_back(std::move(rec));
  }
  return DatasetManifest(std::move(name), std::move(images));
}

DatasetManifest parse_manifest_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("manifest json: ") + e.what());
  }
  std::string name = "manifest";
  std::pair<double, double> scale{0.0, 100.0};
  const json* images = &j;
  if (j.is_object()) {
    if (j.contains("name")) name = j["name"].get<std::string>();
    if (j.contains("mos_scale")) {
      const auto& s = j["mos_scale"];
      if (!s.is_array() || s.size() != 2) throw ValidationError("manifest json: mos_scale must be [min,max]");
      scale = {s[0].get<double>(), s[1].get<double>()};
    }
    if (!j.contains("images")) throw ValidationError("manifest json: missing 'images'");
    images = &j["images"];
  }
  if (!images->is_array()) throw ValidationError("manifest json: 'images' must be an array");
  std::vector<ImageRecord> records;
  std::size_t n = 0;
  for (const auto& item : *images) records.push_back(record_from_json(item, ++n));
  return DatasetManifest(std::move(name), std::move(records), scale);
}

DatasetManifest load_manifest(const std::filesystem::path& source) {
  const std::string text = read_file(source);
  const auto ext = source.extension().string();
  if (ext == ".json") return parse_manifest_json(text);
  return parse_manifest_csv(text, source.stem().string());
}

std::string manifest_to_csv(const DatasetManifest& manifest) {
  std::ostringstream out;
  for (std::size_t i = 0; i < kCsvColumns.size(); ++i) out << (i ? "," : "") << kCsvColumns[i];
  out << '\n';
  auto opt = [](const auto& v) -> std::string {
    if (!v) return {};
    using T = std::decay_t<decltype(*v)>;
    if constexpr (std::is_same_v<T, std::string>) return csv_escape(*v);
    else if constexpr (std::is_same_v<T, int>) return std::to_string(*v);
    else return format_double(*v);
  };
  for (const auto& r : manifest.images()) {
    out << csv_escape(r.id) << ',' << csv_escape(r.dataset_id) << ',' << csv_escape(r.file_ref) << ','
        << opt(r.mos) << ',' << opt(r.distortion_type) << ',' << opt(r.distortion_level) << ','
        << opt(r.reference_id) << ',' << opt(r.si) << ',' << opt(r.cf) << '\n';
  }
  return out.str();
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json images = json::array();
  for (const auto& r : manifest.images()) images.push_back(record_to_json(r));
  json j = {{"name", manifest.name()},
            {"mos_scale", {manifest.mos_scale().first, manifest.mos_scale().second}},
            {"images", images}};
  return j.dump(2) + "\n";
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dest) {
  write_file(dest, dest.extension() == ".json" ? manifest_to_json(manifest) : manifest_to_csv(manifest));
}

// -- enums ----------------------------------------------------------------

std::string to_string(Response r) {
  switch (r) {
    case Response::First: return "first";
    case Response::Second: return "second";
    case Response::Abstain: return "abstain";
  }
  return "abstain";
}

Response response_from_string(const std::string& s) {
  if (s == "first") return Response::First;
  if (s == "second") return Response::Second;
  if (s == "abstain") return Response::Abstain;
  throw ValidationError("unknown response '" + s + "'");
}

std::string to_string(FailureKind f) {
  switch (f) {
    case FailureKind::None: return "none";
    case FailureKind::Parse: return "parse";
    case FailureKind::Transport: return "transport";
  }
  return "none";
}

FailureKind failure_from_string(const std::string& s) {
  if (s == "none" || s.empty()) return FailureKind::None;
  if (s == "parse") return FailureKind::Parse;
  if (s == "transport") return FailureKind::Transport;
  throw ValidationError("unknown failure kind '" + s + "'");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::MAP: return "map";
    case Method::MLE: return "mle";
    case Method::Perron: return "perron";
    case Method::TrueSkill: return "trueskill";
  }
  return "map";
}

Method method_from_string(const std::string& s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "map") return Method::MAP;
  if (lower == "mle") return Method::MLE;
  if (lower == "perron") return Method::Perron;
  if (lower == "trueskill") return Method::TrueSkill;
  throw ValidationError("unknown aggregation method '" + s + "'");
}

// -- trial log ------------------------------------------------------------

std::string trial_to_json_line(const TrialRecord& t) {
  json j;
  j["trial_id"] = t.trial_id;
  j["first_id"] = t.first_id;
  j["second_id"] = t.second_id;
  j["judge_id"] = t.judge_id;
  j["response"] = to_string(t.response);
  j["round"] = t.round;
  j["raw_reply"] = t.raw_reply ? json(*t.raw_reply) : json(nullptr);
  j["failure"] = to_string(t.failure);
  j["pair_index"] = t.pair_index ? json(*t.pair_index) : json(nullptr);
  j["group"] = t.group;
  j["timestamp"] = t.timestamp;
  return j.dump();
}

TrialRecord trial_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("trial log: ") + e.what());
  }
  TrialRecord t;
  try {
    t.trial_id = j.at("trial_id").get<std::string>();
    t.first_id = j.at("first_id").get<std::string>();
    t.second_id = j.at("second_id").get<std::string>();
    t.judge_id = j.value("judge_id", std::string{});
    t.response = response_from_string(j.at("response").get<std::string>());
    t.round = j.value("round", 1);
    if (j.contains("raw_reply") && !j["raw_reply"].is_null()) t.raw_reply = j["raw_reply"].get<std::string>();
    t.failure = failure_from_string(j.value("failure", std::string{"none"}));
    if (j.contains("pair_index") && !j["pair_index"].is_null()) t.pair_index = j["pair_index"].get<std::size_t>();
    t.group = j.value("group", std::string{});
    t.timestamp = j.value("timestamp", std::string{});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("trial log: ") + e.what());
  }
  if (t.first_id == t.second_id) throw ValidationError("trial '" + t.trial_id + "' compares an image with itself");
  if (t.round < 1) throw ValidationError("trial '" + t.trial_id + "': round must be >= 1");
  return t;
}

std::vector<TrialRecord> parse_trial_log(const std::string& text) {
  std::vector<TrialRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trial_from_json_line(line));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::vector<TrialRecord> load_trial_log(const std::filesystem::path& path) {
  return parse_trial_log(read_file(path));
}

// -- outcomes -------------------------------------------------------------

std::optional<std::string> PairOutcome::winner() const {
  if (!consistent) return std::nullopt;
  return forward == Response::First ? a_id : b_id;
}

std::optional<std::string> PairOutcome::loser() const {
  if (!consistent) return std::nullopt;
  return forward == Response::First ? b_id : a_id;
}

PairOutcome make_outcome(const TrialRecord& one, const TrialRecord& other) {
  if (one.first_id != other.second_id || one.second_id != other.first_id) {
    throw ValidationError("trials '" + one.trial_id + "' and '" + other.trial_id +
                          "' are not the two orders of one pair");
  }
  const bool one_is_forward = one.first_id < one.second_id;
  const TrialRecord& fwd = one_is_forward ? one : other;
  const TrialRecord& rev = one_is_forward ? other : one;
  PairOutcome o;
  o.a_id = fwd.first_id;
  o.b_id = fwd.second_id;
  o.forward = fwd.response;
  o.reverse = rev.response;
  o.consistent = (o.forward == Response::First && o.reverse == Response::Second) ||
                 (o.forward == Response::Second && o.reverse == Response::First);
  o.round = std::max(one.round, other.round);
  o.pair_index = one.pair_index.value_or(0);
  o.group = !one.group.empty() ? one.group : other.group;
  return o;
}

std::vector<PairOutcome> pair_outcomes(std::span<const TrialRecord> trials) {
  std::vector<PairOutcome> out;
  const bool indexed = !trials.empty() && std::all_of(trials.begin(), trials.end(),
                                                      [](const TrialRecord& t) { return t.pair_index.has_value(); });
  if (indexed) {
    std::map<std::size_t, std::vector<const TrialRecord*>> by_pair;
    for (const auto& t : trials) by_pair[*t.pair_index].push_back(&t);
    for (const auto& [idx, group] : by_pair) {
      if (group.size() == 1) continue;
      if (group.size() != 2) {
        throw ValidationError("pair index " + std::to_string(idx) + " has " + std::to_string(group.size()) + " trials");
      }
      out.push_back(make_outcome(*group[0], *group[1]));
      out.back().pair_index = idx;
    }
    return out;
  }
  // Sequential matching keyed by the ordered presentation.
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> pending;
  std::vector<std::pair<std::size_t, PairOutcome>> matched;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    auto& waiting = pending[{t.second_id, t.first_id}];
    if (!waiting.empty()) {
      const std::size_t j = waiting.front();
      waiting.erase(waiting.begin());
      PairOutcome o = make_outcome(trials[j], t);
      o.pair_index = matched.size();
      matched.emplace_back(j, std::move(o));
    } else {
      pending[{t.first_id, t.second_id}].push_back(i);
    }
  }
  std::sort(matched.begin(), matched.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  for (std::size_t k = 0; k < matched.size(); ++k) {
    matched[k].second.pair_index = k;
    out.push_back(std::move(matched[k].second));
  }
  return out;
}

// -- preference matrix ----------------------------------------------------

PreferenceMatrix::PreferenceMatrix(std::vector<std::string> ids) : ids_(std::move(ids)) {
  if (ids_.size() < 2) throw ValidationError("preference matrix needs at least 2 items");
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw ValidationError("duplicate id '" + ids_[i] + "' in matrix");
  }
  counts_ = CountMatrix::Zero(static_cast<Eigen::Index>(ids_.size()), static_cast<Eigen::Index>(ids_.size()));
}

std::size_t PreferenceMatrix::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw NotFoundError("image id '" + id + "' is not indexed in the preference matrix");
  return it->second;
}

void PreferenceMatrix::accumulate(const PairOutcome& outcome) {
  const std::size_t a = index_of(outcome.a_id);
  const std::size_t b = index_of(outcome.b_id);
  if (!outcome.consistent) return;
  if (outcome.forward == Response::First) add(a, b);
  else add(b, a);
}

void PreferenceMatrix::add(std::size_t winner, std::size_t loser, std::int64_t count) {
  if (winner == loser) throw ValidationError("preference matrix diagonal must stay zero");
  if (count < 0) throw ValidationError("counts must be nonnegative");
  counts_(static_cast<Eigen::Index>(winner), static_cast<Eigen::Index>(loser)) += count;
}

PreferenceMatrix PreferenceMatrix::permuted(const std::vector<std::string>& order) const {
  PreferenceMatrix out(order);
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t j = 0; j < order.size(); ++j) {
      out.counts_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          counts_(static_cast<Eigen::Index>(index_of(order[i])), static_cast<Eigen::Index>(index_of(order[j])));
    }
  }
  return out;
}

PreferenceMatrix accumulate(PreferenceMatrix c, const PairOutcome& outcome) {
  c.accumulate(outcome);
  return c;
}

PreferenceMatrix build_matrix(const std::vector<std::string>& ids, std::span<const PairOutcome> outcomes) {
  PreferenceMatrix c(ids);
  for (const auto& o : outcomes) c.accumulate(o);
  return c;
}

std::string matrix_to_csv(const PreferenceMatrix& c) {
  std::ostringstream out;
  out << "id";
  for (const auto& id : c.ids()) out << ',' << csv_escape(id);
  out << '\n';
  for (std::size_t i = 0; i < c.size(); ++i) {
    out << csv_escape(c.ids()[i]);
    for (std::size_t j = 0; j < c.size(); ++j) {
      out << ',' << c.counts()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    out << '\n';
  }
  return out.str();
}

// -- ranking output -------------------------------------------------------

double RankingResult::score(const std::string& id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw NotFoundError("no score for image '" + id + "'");
  return scores(std::distance(ids.begin(), it));
}

std::string scores_to_csv(std::span<const RankingResult> results) {
  std::ostringstream out;
  out << "id,method,score_internal,score_0_100,sigma\n";
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.ids.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      out << csv_escape(r.ids[i]) << ',' << to_string(r.method) << ',' << format_double(r.scores(k)) << ','
          << format_double(r.scores_0_100(k)) << ',';
      if (r.sigma) out << format_double((*r.sigma)(k));
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace qprobe
