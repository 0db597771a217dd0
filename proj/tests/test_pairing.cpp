#include "doctest.h"

#include "qprobe/pairing.hpp"

#include <map>
#include <set>

using namespace qprobe;

namespace {

DatasetManifest plain(int n) {
  std::vector<ImageRecord> images;
  for (int i = 0; i < n; ++i) {
    ImageRecord r;
    r.id = "im" + std::to_string(100 + i);
    r.dataset_id = "d";
    r.file_ref = r.id + ".pgm";
    r.mos = 100.0 * i / std::max(1, n - 1);
    images.push_back(r);
  }
  return DatasetManifest("plain", images);
}

DatasetManifest synthetic() {
  std::vector<ImageRecord> images;
  for (const std::string ref : {"r1", "r2"}) {
    for (const std::string type : {"JPEG", "blur", "noise"}) {
      for (int level = 1; level <= 3; ++level) {
        ImageRecord r;
        r.id = ref + "_" + type + "_" + std::to_string(level);
        r.dataset_id = "syn";
        r.file_ref = r.id + ".ppm";
        r.reference_id = ref;
        r.distortion_type = type;
        r.distortion_level = level;
        images.push_back(r);
      }
    }
  }
  return DatasetManifest("syn", images);
}

}  // namespace

TEST_CASE("coarse rounds: N pairs per round, no self pairs") {
  const auto m = plain(25);
  const auto plan = coarse_rounds(m, 12, 9);
  CHECK(plan.size() == 25 * 12);
  std::map<int, int> per_round;
  for (std::size_t k = 0; k < plan.pairs.size(); ++k) {
    const auto& p = plan.pairs[k];
    CHECK(p.a != p.b);
    CHECK(m.contains(p.b));
    CHECK(p.a == m.images()[k % 25].id);  // every image anchors once per round
    ++per_round[p.round];
  }
  CHECK(per_round.size() == 12);
  for (auto [r, n] : per_round) CHECK(n == 25);
  CHECK_NOTHROW(validate_plan(plan, m));
}

TEST_CASE("coarse rounds: two images always pair with each other") {
  const auto plan = coarse_rounds(plain(2), 1, 0);
  REQUIRE(plan.size() == 2);
  CHECK(plan.pairs[0].b == plan.pairs[1].a);
  CHECK(plan.pairs[1].b == plan.pairs[0].a);
}

TEST_CASE("coarse rounds are seeded and prefix stable") {
  const auto m = plain(30);
  const auto p12 = coarse_rounds(m, 12, 77);
  const auto p5 = coarse_rounds(m, 5, 77);
  CHECK(std::equal(p5.pairs.begin(), p5.pairs.end(), p12.pairs.begin()));
  CHECK(coarse_rounds(m, 12, 77).pairs == p12.pairs);
  CHECK(coarse_rounds(m, 12, 78).pairs != p12.pairs);
  CHECK_THROWS_AS(coarse_rounds(m, 0, 1), ValidationError);
  CHECK_THROWS_AS(coarse_rounds(plain(1), 1, 1), ValidationError);
}

TEST_CASE("partners are roughly uniform") {
  const auto m = plain(5);
  const auto plan = coarse_rounds(m, 4000, 3);
  std::map<std::string, int> partner_of_first;
  for (const auto& p : plan.pairs)
    if (p.a == m.images()[0].id) ++partner_of_first[p.b];
  CHECK(partner_of_first.size() == 4);
  for (auto [id, n] : partner_of_first) CHECK(std::abs(n - 1000) < 120);
}

TEST_CASE("fine plans on a synthetic manifest") {
  const auto m = synthetic();
  const auto by_type = fine_same_content_type(m);
  CHECK(by_type.size() == 2 * 3 * 3);  // 2 refs x 3 types x C(3,2)
  for (const auto& p : by_type.pairs) {
    const auto& a = m.at(p.a);
    const auto& b = m.at(p.b);
    CHECK(a.reference_id == b.reference_id);
    CHECK(a.distortion_type == b.distortion_type);
    CHECK(*a.distortion_level < *b.distortion_level);
    CHECK(p.group == *a.distortion_type);
  }
  const auto by_level = fine_same_content_level(m);
  CHECK(by_level.size() == 2 * 3 * 3);
  for (const auto& p : by_level.pairs) {
    const auto& a = m.at(p.a);
    const auto& b = m.at(p.b);
    CHECK(a.distortion_level == b.distortion_level);
    CHECK(a.distortion_type != b.distortion_type);
    CHECK(p.group == "Level-" + std::to_string(*a.distortion_level));
  }
}

TEST_CASE("fine plans reject duplicate metadata and note missing metadata") {
  auto images = synthetic().images();
  images[1].distortion_level = 1;  // collides with images[0]
  CHECK_THROWS_AS(fine_same_content_type(DatasetManifest("dup", images)), ValidationError);
  const auto empty = fine_same_content_type(plain(4));
  CHECK(empty.size() == 0);
  CHECK_FALSE(empty.notes.empty());
}

TEST_CASE("MOS intervals: half-open with a closed top") {
  const std::vector<double> b = {0, 25, 50, 75, 100};
  CHECK(interval_index(0.0, b) == 0u);
  CHECK(interval_index(24.999, b) == 0u);
  CHECK(interval_index(25.0, b) == 1u);
  CHECK(interval_index(75.0, b) == 3u);
  CHECK(interval_index(100.0, b) == 3u);
  CHECK_FALSE(interval_index(100.5, b).has_value());
  CHECK(interval_label(b, 0) == "[0,25)");
  CHECK(interval_label(b, 3) == "[75,100]");
}

TEST_CASE("MOS-interval plan: all pairs inside each interval") {
  const auto m = plain(21);  // mos 0,5,...,100
  const auto plan = fine_mos_interval(m);
  // Intervals hold 5,5,5,6 images.
  CHECK(plan.size() == 10 + 10 + 10 + 15);
  for (const auto& p : plan.pairs) {
    CHECK(interval_index(*m.at(p.a).mos, plan.bounds) == interval_index(*m.at(p.b).mos, plan.bounds));
  }
  const auto capped = fine_mos_interval(m, {0, 50, 100}, 12, 4);
  std::map<std::string, int> per_cell;
  for (const auto& p : capped.pairs) ++per_cell[p.cell];
  for (auto [cell, n] : per_cell) CHECK(n == 12);
  CHECK(fine_mos_interval(m, {0, 50, 100}, 12, 4).pairs == capped.pairs);
  CHECK_THROWS_AS(fine_mos_interval(m, {0, 50, 50, 100}), ValidationError);
}

TEST_CASE("plan JSONL round trip and validation") {
  const auto m = synthetic();
  const auto plan = fine_same_content_level(m);
  const auto back = plan_from_jsonl(plan_to_jsonl(plan));
  CHECK(back.kind == plan.kind);
  CHECK(back.pairs == plan.pairs);
  CHECK_THROWS_AS(plan_from_jsonl("{\"a\":\"x\",\"b\":\"x\"}\n"), ValidationError);
  CHECK_THROWS_AS(plan_from_jsonl("{\"a\":\"x\"}\n"), ValidationError);
  PairingPlan bad;
  bad.pairs.push_back({1, "r1_JPEG_1", "missing", "", ""});
  CHECK_THROWS_AS(validate_plan(bad, m), NotFoundError);
}

TEST_CASE("uniform_index is unbiased and in range") {
  std::mt19937_64 rng(1);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) ++hist[uniform_index(rng, 7)];
  for (int h : hist) CHECK(std::abs(h - 10000) < 400);
  CHECK_THROWS_AS(uniform_index(rng, 0), ValidationError);
}
