#pragma once

// Pair plans: random coarse rounds and the three fine-grained rules
// (same content+type, same content+level, same MOS interval).

#include "qprobe/core.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace qprobe {

enum class PlanKind { CoarseRounds, FineSameContentType, FineSameContentLevel, FineMosInterval };

std::string to_string(PlanKind k);
PlanKind plan_kind_from_string(const std::string& s);

struct PlannedPair {
  int round = 1;
  std::string a;  // presented first in the forward trial
  std::string b;
  std::string cell;   // finest grouping cell, e.g. "ref03|JPEG"
  std::string group;  // report row, e.g. "JPEG"; empty for coarse plans

  friend bool operator==(const PlannedPair&, const PlannedPair&) = default;
};

struct PairingPlan {
  PlanKind kind = PlanKind::CoarseRounds;
  std::vector<PlannedPair> pairs;
  std::uint64_t seed = 0;
  int rounds = 1;
  std::vector<double> bounds;      // MOS-interval plans only
  std::vector<std::string> notes;  // skipped cells and other diagnostics

  std::size_t size() const { return pairs.size(); }
};

/// Uniform integer in [0, n) by rejection on a 64-bit engine; portable
/// across standard libraries, unlike std::uniform_int_distribution.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

/// Each round, every image anchors one pair with a uniformly drawn partner.
/// Plans are prefix-stable: the first M rounds of an (M+k)-round plan equal
/// the M-round plan with the same seed.
PairingPlan coarse_rounds(const DatasetManifest& manifest, int rounds = 12, std::uint64_t seed = 0);

/// All level pairs within each (reference, distortion type) cell.
PairingPlan fine_same_content_type(const DatasetManifest& manifest);

/// All type pairs within each (reference, distortion level) cell.
PairingPlan fine_same_content_level(const DatasetManifest& manifest);

/// All pairs within each MOS interval: half-open bins with a closed top bin.
/// When an interval would yield more than `cap` pairs, anchor rounds within
/// the interval are drawn (seeded) until `cap` pairs are reached.
PairingPlan fine_mos_interval(const DatasetManifest& manifest, std::vector<double> bounds = {0, 25, 50, 75, 100},
                              std::optional<std::size_t> cap = std::nullopt, std::uint64_t seed = 0);

/// Interval index of `mos` under the half-open / closed-top convention, or
/// nullopt when outside [bounds.front(), bounds.back()].
std::optional<std::size_t> interval_index(double mos, const std::vector<double>& bounds);
std::string interval_label(const std::vector<double>& bounds, std::size_t k);

/// JSONL: one `{round, a, b, kind, cell, group}` object per logical pair.
std::string plan_to_jsonl(const PairingPlan& plan);
PairingPlan plan_from_jsonl(const std::string& text);

/// Throws NotFoundError when a planned id is missing from the manifest.
void validate_plan(const PairingPlan& plan, const DatasetManifest& manifest);

}  // namespace qprobe
