#include "doctest.h"

#include "oracles/oracles.hpp"
#include "qprobe/curation.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

using namespace qprobe;

TEST_CASE("spatial information") {
  CHECK(spatial_information(PixelImage(8, 6, 1, 77.0)) == 0.0);

  PixelImage step(5, 5, 1);
  step.samples = oracle::step_image_5x5();
  CHECK(spatial_information(step) == doctest::Approx(oracle::step_image_si()).epsilon(1e-12));

  // Adding a constant leaves SI unchanged.
  PixelImage shifted = step;
  for (auto& v : shifted.samples) v += 100.0;
  CHECK(spatial_information(shifted) == doctest::Approx(spatial_information(step)).epsilon(1e-12));

  // RGB goes through Rec.601 luma first.
  PixelImage rgb(5, 5, 3);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x)
      for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = step.at(x, y);
  CHECK(spatial_information(rgb) == doctest::Approx(oracle::step_image_si()).epsilon(1e-12));
  CHECK(to_luma(rgb).at(0, 0) == doctest::Approx(10.0));

  CHECK_THROWS_AS(spatial_information(PixelImage(2, 9, 1)), ValidationError);
}

TEST_CASE("colorfulness") {
  CHECK(colorfulness(PixelImage(4, 4, 3, 128.0)) == 0.0);

  PixelImage red(6, 3, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 6; ++x) red.at(x, y, 0) = 255.0;
  // rg = 255, yb = 127.5, both constant.
  CHECK(colorfulness(red) == doctest::Approx(0.3 * std::sqrt(255.0 * 255.0 + 127.5 * 127.5)).epsilon(1e-14));
  CHECK(colorfulness(red) == doctest::Approx(85.5296).epsilon(1e-6));

  std::mt19937_64 rng(4);
  PixelImage noisy(7, 5, 3);
  for (auto& v : noisy.samples) v = static_cast<double>(rng() % 256);
  PixelImage shuffled = noisy;
  std::vector<int> order(35);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int k = 0; k < 35; ++k)
    for (int c = 0; c < 3; ++c) shuffled.samples[3 * k + c] = noisy.samples[3 * order[k] + c];
  CHECK(colorfulness(shuffled) == doctest::Approx(colorfulness(noisy)).epsilon(1e-12));

  CHECK_THROWS_AS(colorfulness(PixelImage(4, 4, 1)), ValidationError);
}

TEST_CASE("PNM read and write") {
  PixelImage img(3, 2, 3);
  for (std::size_t k = 0; k < img.samples.size(); ++k) img.samples[k] = static_cast<double>(k * 13 % 256);
  const auto back = parse_pnm(encode_pnm(img));
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.channels == 3);
  CHECK(back.samples == img.samples);
  CHECK(parse_pnm("P5\n# comment\n2 1\n255\n\x05\x06").samples == std::vector<double>{5, 6});
  CHECK_THROWS_AS(parse_pnm("P2\n1 1\n255\n0"), ValidationError);
  CHECK_THROWS_AS(parse_pnm("P5\n1 1\n65535\n00"), ValidationError);
  CHECK_THROWS_AS(parse_pnm("P5\n4 4\n255\nab"), ValidationError);
}

namespace {

DatasetManifest spread_manifest(int n, std::uint64_t seed, bool with_refs = false) {
  std::mt19937_64 rng(seed);
  std::vector<ImageRecord> images;
  for (int i = 0; i < n; ++i) {
    ImageRecord r;
    r.id = "i" + std::to_string(i);
    r.dataset_id = "d";
    r.file_ref = r.id + ".ppm";
    r.mos = 100.0 * (i + 0.5) / n;
    if (with_refs) {
      r.reference_id = "ref" + std::to_string(i / 2);
      r.distortion_type = i % 2 ? "blur" : "jpeg";
      r.distortion_level = 1;
    }
    images.push_back(r);
  }
  return DatasetManifest("spread", images);
}

}  // namespace

TEST_CASE("uniform MOS sample") {
  const auto m = spread_manifest(500, 1);
  const auto s = uniform_mos_sample(m, 10, 7);
  CHECK(s.ids.size() == 50);
  for (auto n : s.per_band) CHECK(n == 10);
  CHECK_FALSE(s.any_shortfall());
  CHECK(uniform_mos_sample(m, 10, 7).ids == s.ids);
  CHECK(uniform_mos_sample(m, 10, 8).ids != s.ids);
  const auto sub = s.subset(m);
  CHECK(sub.size() == 50);
  for (const auto& r : sub.images()) CHECK(m.contains(r.id));

  // Band 0 holds only three candidates here.
  auto images = m.images();
  images.erase(std::remove_if(images.begin(), images.end(),
                              [](const ImageRecord& r) { return *r.mos < 20.0 && r.id != "i0" && r.id != "i1" && r.id != "i2"; }),
               images.end());
  const auto thin = uniform_mos_sample(DatasetManifest("thin", images), 10, 1);
  CHECK(thin.per_band[0] == 3);
  CHECK(thin.shortfall[0]);
  CHECK(thin.any_shortfall());
}

TEST_CASE("uniform MOS sample takes at most one image per reference") {
  const auto m = spread_manifest(200, 2, true);
  const auto s = uniform_mos_sample(m, 30, 3);
  std::set<std::string> refs;
  for (const auto& id : s.ids) CHECK(refs.insert(*m.at(id).reference_id).second);
}

TEST_CASE("mos bands") {
  CHECK(mos_band(0.0) == 0);
  CHECK(mos_band(19.99) == 0);
  CHECK(mos_band(20.0) == 1);
  CHECK(mos_band(100.0) == 4);
  CHECK(std::string(mos_band_name(4)) == "excellent");
  CHECK_THROWS_AS(mos_band(101.0), ValidationError);
}

TEST_CASE("subject screening: inverted subject rejected") {
  const Eigen::MatrixXd s = oracle::inverted_subject_matrix();
  const auto r = bt500_outlier_reject(s);
  REQUIRE(r.rejected.size() == 1);
  CHECK(r.rejected[0] == 19);
  CHECK(r.kept.size() == 19);
  CHECK(r.p(19) == 8);
  CHECK(r.q(19) == 8);
  // MOS over the kept subjects equals the condition values.
  const std::array<double, 16> x = {33, 34, 35, 36, 37, 38, 39, 35, 67, 66, 65, 64, 63, 62, 61, 65};
  for (int c = 0; c < 16; ++c) CHECK(r.mos(c) == doctest::Approx(x[c]).epsilon(1e-12));
}

TEST_CASE("subject screening is invariant to subject order") {
  Eigen::MatrixXd s = oracle::inverted_subject_matrix();
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(20);
  perm.setIdentity();
  std::mt19937_64 rng(9);
  std::shuffle(perm.indices().data(), perm.indices().data() + 20, rng);
  const Eigen::MatrixXd shuffled = perm * s;
  const auto r = bt500_outlier_reject(shuffled);
  REQUIRE(r.rejected.size() == 1);
  CHECK(r.rejected[0] == perm.indices()(19));
}

TEST_CASE("subject screening: identical scores and a single wild score") {
  Eigen::MatrixXd same(5, 4);
  same.rowwise() = Eigen::RowVector4d(10, 40, 60, 90);
  const auto r = bt500_outlier_reject(same);
  CHECK(r.rejected.empty());
  CHECK(r.mos.transpose().isApprox(Eigen::RowVector4d(10, 40, 60, 90)));

  // 20 subjects x 40 conditions with evenly spread scores; subject 0 has one
  // wild value.
  Eigen::MatrixXd wild(20, 40);
  for (int c = 0; c < 40; ++c)
    for (int k = 0; k < 20; ++k) wild(k, c) = 40.0 + ((k + 3 * c) % 20);
  wild(0, 7) = 100.0;
  const auto w = bt500_outlier_reject(wild);
  CHECK(w.p(0) + w.q(0) <= 1);
  CHECK(w.rejected.empty());

  CHECK_THROWS_AS(bt500_outlier_reject(Eigen::MatrixXd::Constant(2, 5, 50.0)), ValidationError);
  CHECK_THROWS_AS(bt500_outlier_reject(Eigen::MatrixXd::Constant(4, 3, 150.0)), ValidationError);
}

TEST_CASE("score matrix csv with labels and missing cells") {
  std::vector<std::string> labels;
  const auto m = parse_score_matrix("subject,c1,c2\ns1,10,\ns2,20,30\n", &labels);
  CHECK(labels == std::vector<std::string>{"s1", "s2"});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 2);
  CHECK(std::isnan(m(0, 1)));
  CHECK(m(1, 1) == 30.0);
}
