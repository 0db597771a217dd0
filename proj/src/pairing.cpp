#include "qprobe/pairing.hpp"

#include "json.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

namespace qprobe {

using nlohmann::json;

std::string to_string(PlanKind k) {
  switch (k) {
    case PlanKind::CoarseRounds: return "coarse";
    case PlanKind::FineSameContentType: return "fine-type";
    case PlanKind::FineSameContentLevel: return "fine-level";
    case PlanKind::FineMosInterval: return "fine-mos";
  }
  return "coarse";
}

PlanKind plan_kind_from_string(const std::string& s) {
  if (s == "coarse") return PlanKind::CoarseRounds;
  if (s == "fine-type") return PlanKind::FineSameContentType;
  if (s == "fine-level") return PlanKind::FineSameContentLevel;
  if (s == "fine-mos") return PlanKind::FineMosInterval;
  throw ValidationError("unknown plan kind '" + s + "' (coarse|fine-type|fine-level|fine-mos)");
}

std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw ValidationError("uniform_index: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

PairingPlan coarse_rounds(const DatasetManifest& manifest, int rounds, std::uint64_t seed) {
  const std::size_t n = manifest.size();
  if (n < 2) throw ValidationError("coarse_rounds: need at least 2 images");
  if (rounds < 1) throw ValidationError("coarse_rounds: rounds must be >= 1");
  PairingPlan plan;
  plan.kind = PlanKind::CoarseRounds;
  plan.seed = seed;
  plan.rounds = rounds;
  plan.pairs.reserve(n * static_cast<std::size_t>(rounds));
  std::mt19937_64 rng(seed);
  const auto& images = manifest.images();
  for (int r = 1; r <= rounds; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t j = uniform_index(rng, n - 1);
      if (j >= i) ++j;
      plan.pairs.push_back({r, images[i].id, images[j].id, "", ""});
    }
  }
  return plan;
}

namespace {

struct Synthetic {
  const ImageRecord* rec;
  std::string ref;
  std::string type;
  int level;
};

std::vector<Synthetic> synthetic_records(const DatasetManifest& manifest, std::vector<std::string>& notes) {
  std::vector<Synthetic> out;
  std::set<std::tuple<std::string, std::string, int>> seen;
  std::size_t missing = 0;
  for (const auto& r : manifest.images()) {
    if (!r.reference_id || !r.distortion_type || !r.distortion_level) {
      ++missing;
      continue;
    }
    if (!seen.emplace(*r.reference_id, *r.distortion_type, *r.distortion_level).second) {
      throw ValidationError("duplicate (reference, type, level) = (" + *r.reference_id + ", " + *r.distortion_type +
                            ", " + std::to_string(*r.distortion_level) + ") at image '" + r.id + "'");
    }
    out.push_back({&r, *r.reference_id, *r.distortion_type, *r.distortion_level});
  }
  if (missing > 0) {
    notes.push_back(std::to_string(missing) + " image(s) without reference/type/level metadata ignored");
  }
  return out;
}

template <typename Key, typename CellName, typename GroupName, typename Less>
void all_pairs_by_cell(const std::vector<Synthetic>& recs, PairingPlan& plan, Key key, CellName cell_name,
                       GroupName group_name, Less less) {
  std::map<decltype(key(recs.front())), std::vector<const Synthetic*>> cells;
  for (const auto& s : recs) cells[key(s)].push_back(&s);
  for (auto& [k, members] : cells) {
    if (members.size() < 2) {
      plan.notes.push_back("cell " + cell_name(*members.front()) + " skipped: fewer than 2 members");
      continue;
    }
    std::sort(members.begin(), members.end(), [&](const Synthetic* x, const Synthetic* y) { return less(*x, *y); });
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        plan.pairs.push_back({1, members[i]->rec->id, members[j]->rec->id, cell_name(*members[i]),
                              group_name(*members[i])});
      }
    }
  }
}

}  // namespace

PairingPlan fine_same_content_type(const DatasetManifest& manifest) {
  PairingPlan plan;
  plan.kind = PlanKind::FineSameContentType;
  const auto recs = synthetic_records(manifest, plan.notes);
  if (recs.empty()) {
    plan.notes.push_back("no images carry reference/type/level metadata; plan is empty");
    return plan;
  }
  all_pairs_by_cell(
      recs, plan, [](const Synthetic& s) { return std::make_pair(s.ref, s.type); },
      [](const Synthetic& s) { return s.ref + "|" + s.type; }, [](const Synthetic& s) { return s.type; },
      [](const Synthetic& x, const Synthetic& y) { return x.level < y.level; });
  return plan;
}

PairingPlan fine_same_content_level(const DatasetManifest& manifest) {
  PairingPlan plan;
  plan.kind = PlanKind::FineSameContentLevel;
  const auto recs = synthetic_records(manifest, plan.notes);
  if (recs.empty()) {
    plan.notes.push_back("no images carry reference/type/level metadata; plan is empty");
    return plan;
  }
  all_pairs_by_cell(
      recs, plan, [](const Synthetic& s) { return std::make_pair(s.ref, s.level); },
      [](const Synthetic& s) { return s.ref + "|Level-" + std::to_string(s.level); },
      [](const Synthetic& s) { return "Level-" + std::to_string(s.level); },
      [](const Synthetic& x, const Synthetic& y) { return x.type < y.type; });
  return plan;
}

std::optional<std::size_t> interval_index(double mos, const std::vector<double>& bounds) {
  if (bounds.size() < 2) return std::nullopt;
  if (mos < bounds.front() || mos > bounds.back()) return std::nullopt;
  for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
    const bool last = k + 2 == bounds.size();
    if (mos >= bounds[k] && (mos < bounds[k + 1] || (last && mos <= bounds[k + 1]))) return k;
  }
  return std::nullopt;
}

std::string interval_label(const std::vector<double>& bounds, std::size_t k) {
  const bool last = k + 2 == bounds.size();
  return "[" + format_double(bounds[k]) + "," + format_double(bounds[k + 1]) + (last ? "]" : ")");
}

PairingPlan fine_mos_interval(const DatasetManifest& manifest, std::vector<double> bounds,
                              std::optional<std::size_t> cap, std::uint64_t seed) {
  if (bounds.size() < 2 || !std::is_sorted(bounds.begin(), bounds.end()) ||
      std::adjacent_find(bounds.begin(), bounds.end()) != bounds.end()) {
    throw ValidationError("fine_mos_interval: bounds must be strictly increasing with at least 2 entries");
  }
  PairingPlan plan;
  plan.kind = PlanKind::FineMosInterval;
  plan.bounds = bounds;
  plan.seed = seed;
  std::vector<std::vector<const ImageRecord*>> bins(bounds.size() - 1);
  for (const auto& r : manifest.images()) {
    if (!r.mos) throw ValidationError("fine_mos_interval: image '" + r.id + "' has no mos");
    const auto k = interval_index(*r.mos, bounds);
    if (!k) {
      plan.notes.push_back("image '" + r.id + "' outside the interval bounds ignored");
      continue;
    }
    bins[*k].push_back(&r);
  }
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < bins.size(); ++k) {
    const auto& members = bins[k];
    const std::string label = interval_label(bounds, k);
    if (members.size() < 2) {
      plan.notes.push_back("interval " + label + " skipped: fewer than 2 images");
      continue;
    }
    const std::size_t exhaustive = members.size() * (members.size() - 1) / 2;
    if (!cap || exhaustive <= *cap) {
      for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = i + 1; j < members.size(); ++j) {
          plan.pairs.push_back({1, members[i]->id, members[j]->id, label, label});
        }
      }
      continue;
    }
    std::size_t emitted = 0;
    for (int r = 1; emitted < *cap; ++r) {
      for (std::size_t i = 0; i < members.size() && emitted < *cap; ++i, ++emitted) {
        std::size_t j = uniform_index(rng, members.size() - 1);
        if (j >= i) ++j;
        plan.pairs.push_back({r, members[i]->id, members[j]->id, label, label});
      }
    }
    plan.rounds = std::max(plan.rounds, plan.pairs.back().round);
  }
  return plan;
}

std::string plan_to_jsonl(const PairingPlan& plan) {
  std::ostringstream out;
  const std::string kind = to_string(plan.kind);
  for (const auto& p : plan.pairs) {
    json j = {{"round", p.round}, {"a", p.a}, {"b", p.b}, {"kind", kind}, {"cell", p.cell}, {"group", p.group}};
    out << j.dump() << '\n';
  }
  return out.str();
}

PairingPlan plan_from_jsonl(const std::string& text) {
  PairingPlan plan;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  bool have_kind = false;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      PlannedPair p;
      p.round = j.value("round", 1);
      p.a = j.at("a").get<std::string>();
      p.b = j.at("b").get<std::string>();
      p.cell = j.value("cell", std::string{});
      p.group = j.value("group", std::string{});
      if (p.a == p.b) throw ValidationError("self-pair '" + p.a + "'");
      if (p.round < 1) throw ValidationError("round must be >= 1");
      const auto kind = plan_kind_from_string(j.value("kind", std::string{"coarse"}));
      if (have_kind && kind != plan.kind) throw ValidationError("mixed plan kinds");
      plan.kind = kind;
      have_kind = true;
      plan.rounds = std::max(plan.rounds, p.round);
      plan.pairs.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ValidationError("plan line " + std::to_string(n) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("plan line " + std::to_string(n) + ": " + e.what());
    }
  }
  return plan;
}

void validate_plan(const PairingPlan& plan, const DatasetManifest& manifest) {
  for (const auto& p : plan.pairs) {
    if (p.a == p.b) throw ValidationError("plan contains self-pair '" + p.a + "'");
    if (!manifest.contains(p.a)) throw NotFoundError("plan references unknown image '" + p.a + "'");
    if (!manifest.contains(p.b)) throw NotFoundError("plan references unknown image '" + p.b + "'");
  }
}

}  // namespace qprobe
