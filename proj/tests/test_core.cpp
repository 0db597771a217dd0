#include "doctest.h"

#include "qprobe/core.hpp"

#include <filesystem>
#include <random>

using namespace qprobe;

namespace {

ImageRecord rec(std::string id, std::optional<double> mos = std::nullopt, std::string ds = "d") {
  ImageRecord r;
  r.id = std::move(id);
  r.dataset_id = std::move(ds);
  r.file_ref = r.id + ".pgm";
  r.mos = mos;
  return r;
}

TrialRecord trial(std::string id, std::string first, std::string second, Response r,
                  std::optional<std::size_t> pair = std::nullopt) {
  TrialRecord t;
  t.trial_id = std::move(id);
  t.first_id = std::move(first);
  t.second_id = std::move(second);
  t.response = r;
  t.pair_index = pair;
  return t;
}

}  // namespace

TEST_CASE("manifest validation") {
  CHECK_THROWS_AS(DatasetManifest("m", {}), ValidationError);
  CHECK_THROWS_AS(DatasetManifest("m", {rec("a"), rec("a")}), ValidationError);
  CHECK_THROWS_AS(DatasetManifest("m", {rec("a", 101.0)}), ValidationError);
  CHECK_THROWS_AS(DatasetManifest("m", {rec("a", -0.5)}), ValidationError);
  auto r = rec("a");
  r.distortion_level = 2;
  CHECK_THROWS_AS(DatasetManifest("m", {r}), ValidationError);  // level without type
  r.distortion_type = "JPEG";
  r.distortion_level = 0;
  CHECK_THROWS_AS(DatasetManifest("m", {r}), ValidationError);
  r.distortion_level = 1;
  CHECK_NOTHROW(DatasetManifest("m", {r}));

  const DatasetManifest m("m", {rec("x", 5.0), rec("y", 95.0)});
  CHECK(m.size() == 2);
  CHECK(m.index_of("y") == 1);
  CHECK_THROWS_AS(m.index_of("z"), NotFoundError);
}

TEST_CASE("manifest csv and json round trip") {
  auto a = rec("a", 12.5);
  a.distortion_type = "blur, gaussian";
  a.distortion_level = 3;
  a.reference_id = "ref1";
  a.si = 40.25;
  auto b = rec("b");
  b.cf = 7.0;
  const DatasetManifest m("toy", {a, b});
  CHECK(parse_manifest_csv(manifest_to_csv(m), "toy") == m);
  CHECK(parse_manifest_json(manifest_to_json(m)) == m);

  const auto dir = std::filesystem::temp_directory_path() / "qprobe_core_manifest";
  std::filesystem::remove_all(dir);
  save_manifest(m, dir / "toy.csv");
  save_manifest(m, dir / "toy.json");
  CHECK(load_manifest(dir / "toy.csv") == m);
  CHECK(load_manifest(dir / "toy.json") == m);
  CHECK(load_manifest(dir / "toy.json").content_hash() == m.content_hash());
  std::filesystem::remove_all(dir);
}

TEST_CASE("manifest csv errors name the row") {
  const std::string bad = "id,dataset,path,mos\na,d,a.pgm,50\nb,d,b.pgm,abc\n";
  try {
    parse_manifest_csv(bad);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_manifest_csv("id,path\na,a.pgm\n"), ValidationError);  // no dataset column
}

TEST_CASE("content hash tracks every field") {
  const DatasetManifest m1("m", {rec("a", 10.0), rec("b", 20.0)});
  const DatasetManifest m2("m", {rec("a", 10.0), rec("b", 20.5)});
  CHECK(m1.content_hash() != m2.content_hash());
  CHECK(m1.content_hash() == DatasetManifest("m", {rec("a", 10.0), rec("b", 20.0)}).content_hash());
}

TEST_CASE("trial json line round trip") {
  TrialRecord t = trial("p000001-f", "a", "b", Response::Second, 1);
  t.judge_id = "gpt";
  t.round = 3;
  t.raw_reply = "The \"second\" image.\n";
  t.failure = FailureKind::None;
  t.group = "JPEG";
  t.timestamp = "2024-01-01T00:00:00Z";
  const auto back = trial_from_json_line(trial_to_json_line(t));
  CHECK(back.trial_id == t.trial_id);
  CHECK(back.first_id == "a");
  CHECK(back.second_id == "b");
  CHECK(back.response == Response::Second);
  CHECK(back.round == 3);
  CHECK(back.raw_reply == t.raw_reply);
  CHECK(back.pair_index == t.pair_index);
  CHECK(back.group == "JPEG");
  CHECK(back.timestamp == t.timestamp);
  CHECK(trial_to_json_line(t).find('\n') == std::string::npos);

  CHECK_THROWS_AS(trial_from_json_line("{\"trial_id\":\"x\"}"), ValidationError);
  CHECK_THROWS_AS(trial_from_json_line("not json"), ValidationError);
  CHECK_THROWS_AS(trial_from_json_line(R"({"trial_id":"x","first_id":"a","second_id":"a","response":"first"})"),
                  ValidationError);
  CHECK_THROWS_AS(trial_from_json_line(R"({"trial_id":"x","first_id":"a","second_id":"b","response":"maybe"})"),
                  ValidationError);
}

TEST_CASE("dual-order outcome") {
  SUBCASE("consistent") {
    const auto o = make_outcome(trial("1", "b", "a", Response::First), trial("2", "a", "b", Response::Second));
    CHECK(o.a_id == "a");
    CHECK(o.b_id == "b");
    CHECK(o.forward == Response::Second);
    CHECK(o.reverse == Response::First);
    CHECK(o.consistent);
    CHECK(o.winner() == "b");
    CHECK(o.loser() == "a");
  }
  SUBCASE("position bias is inconsistent") {
    const auto o = make_outcome(trial("1", "a", "b", Response::Second), trial("2", "b", "a", Response::Second));
    CHECK_FALSE(o.consistent);
    CHECK_FALSE(o.winner().has_value());
  }
  SUBCASE("abstain is inconsistent") {
    const auto o = make_outcome(trial("1", "a", "b", Response::Abstain), trial("2", "b", "a", Response::Second));
    CHECK_FALSE(o.consistent);
  }
  SUBCASE("mismatched trials rejected") {
    CHECK_THROWS_AS(make_outcome(trial("1", "a", "b", Response::First), trial("2", "a", "c", Response::First)),
                    ValidationError);
  }
}

TEST_CASE("pair_outcomes matches orders sequentially and ignores half-done pairs") {
  const std::vector<TrialRecord> log = {
      trial("1", "a", "b", Response::First),  trial("2", "a", "b", Response::First),
      trial("3", "b", "a", Response::Second), trial("4", "c", "a", Response::First),
      trial("5", "b", "a", Response::First),
  };
  const auto out = pair_outcomes(log);
  REQUIRE(out.size() == 2);
  CHECK(out[0].consistent);        // trials 1 + 3
  CHECK_FALSE(out[1].consistent);  // trials 2 + 5
}

TEST_CASE("pair_outcomes groups by pair index") {
  const std::vector<TrialRecord> log = {
      trial("x", "b", "a", Response::First, 7), trial("y", "c", "d", Response::First, 2),
      trial("z", "a", "b", Response::Second, 7), trial("w", "d", "c", Response::Second, 2),
  };
  const auto out = pair_outcomes(log);
  REQUIRE(out.size() == 2);
  CHECK(out[0].pair_index == 2);
  CHECK(out[1].pair_index == 7);
  CHECK(out[1].winner() == "b");
}

TEST_CASE("preference matrix accumulation") {
  PreferenceMatrix c({"a", "b", "c"});
  const auto o = make_outcome(trial("1", "a", "b", Response::First), trial("2", "b", "a", Response::Second));
  c.accumulate(o);
  c.accumulate(o);
  CHECK(c("a", "b") == 2);
  CHECK(c("b", "a") == 0);
  CHECK(c.total() == 2);
  const auto bad = make_outcome(trial("1", "a", "c", Response::First), trial("2", "c", "a", Response::First));
  c.accumulate(bad);
  CHECK(c.total() == 2);
  CHECK_THROWS_AS(PreferenceMatrix({"a"}), ValidationError);
  CHECK_THROWS_AS(PreferenceMatrix({"a", "a"}), ValidationError);
  const auto unknown = make_outcome(trial("1", "a", "z", Response::First), trial("2", "z", "a", Response::Second));
  CHECK_THROWS_AS(c.accumulate(unknown), NotFoundError);
  CHECK(c.counts().diagonal().isZero());

  const auto p = c.permuted({"c", "b", "a"});
  CHECK(p("a", "b") == 2);
  CHECK(p.counts()(2, 1) == 2);
}

TEST_CASE("property: sum of C equals the number of consistent outcomes") {
  std::mt19937_64 rng(11);
  const std::vector<std::string> ids = {"a", "b", "c", "d", "e"};
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<TrialRecord> log;
    std::size_t consistent = 0;
    for (int k = 0; k < 40; ++k) {
      const auto i = rng() % 5, j = (i + 1 + rng() % 4) % 5;
      const Response r1 = static_cast<Response>(rng() % 3), r2 = static_cast<Response>(rng() % 3);
      log.push_back(trial("f" + std::to_string(k), ids[i], ids[j], r1, k));
      log.push_back(trial("r" + std::to_string(k), ids[j], ids[i], r2, k));
      consistent += (r1 == Response::First && r2 == Response::Second) ||
                    (r1 == Response::Second && r2 == Response::First);
    }
    const auto outcomes = pair_outcomes(log);
    const auto c = build_matrix(ids, outcomes);
    CHECK(static_cast<std::size_t>(c.total()) == consistent);
    CHECK(c.counts().diagonal().isZero());
    CHECK((c.counts().array() >= 0).all());
    // Order of accumulation does not matter.
    auto shuffled = outcomes;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(build_matrix(ids, shuffled) == c);
  }
}

TEST_CASE("matrix csv is dense with a header") {
  PreferenceMatrix c({"a", "b"});
  c.add(1, 0, 3);
  CHECK(matrix_to_csv(c) == "id,a,b\na,0,0\nb,3,0\n");
}

TEST_CASE("csv helpers") {
  const auto rows = parse_csv("a,\"b,c\",\"say \"\"hi\"\"\"\r\n1,2,3\n");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0][1] == "b,c");
  CHECK(rows[0][2] == "say \"hi\"");
  CHECK(csv_escape("x,y") == "\"x,y\"");
  CHECK(csv_escape("plain") == "plain");
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(method_from_string("perron") == Method::Perron);
  CHECK_THROWS_AS(method_from_string("elo"), ValidationError);
}
