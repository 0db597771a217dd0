#pragma once

// Dataset curation: spatial information, colorfulness, MOS-band sampling and
// subject screening for single-stimulus studies.

#include "qprobe/core.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qprobe {

struct PixelImage {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 = luminance, 3 = RGB
  std::vector<double> samples;  // row-major, interleaved, in [0, 255]

  PixelImage() = default;
  PixelImage(int w, int h, int c, double fill = 0.0);

  double& at(int x, int y, int c = 0) { return samples[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c = 0) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Binary PGM (P5) or PPM (P6) with maxval 255.
PixelImage read_pnm(const std::filesystem::path& path);
PixelImage parse_pnm(const std::string& bytes);
std::string encode_pnm(const PixelImage& img);

/// Rec.601 luma of an RGB image; luminance images pass through.
PixelImage to_luma(const PixelImage& img);

/// Population std of the 3x3 Sobel magnitude over interior pixels.
double spatial_information(const PixelImage& img);

/// Hasler-Suesstrunk colorfulness; requires 3 channels.
double colorfulness(const PixelImage& img);

/// Band index 0..4 of a MOS value: [0,20), [20,40), ..., [80,100].
int mos_band(double mos);
const char* mos_band_name(int band);  // bad, poor, fair, good, excellent

struct MosSample {
  std::vector<std::string> ids;  // selected, in band order
  std::array<std::size_t, 5> per_band{};
  std::array<bool, 5> shortfall{};
  bool any_shortfall() const;
  DatasetManifest subset(const DatasetManifest& source) const;
};

/// Seeded draw of up to k images per MOS band; at most one image per
/// reference id across the whole sample.
MosSample uniform_mos_sample(const DatasetManifest& manifest, std::size_t k_per_band, std::uint64_t seed);

/// Subjects x conditions, NaN = missing.
using SubjectScoreMatrix = Eigen::MatrixXd;

struct ScreeningResult {
  std::vector<Eigen::Index> kept;
  std::vector<Eigen::Index> rejected;
  Eigen::VectorXi p;  // per subject: scores above the upper bound
  Eigen::VectorXi q;  // per subject: scores below the lower bound
  Eigen::VectorXd mos;  // per condition, over kept subjects
};

/// Subject screening with kurtosis-dependent 2s / sqrt(20)s bounds.
ScreeningResult bt500_outlier_reject(const SubjectScoreMatrix& scores);

/// CSV: header then one row per subject; the first column may hold a
/// subject label when non-numeric.
SubjectScoreMatrix parse_score_matrix(const std::string& csv, std::vector<std::string>* subject_labels = nullptr);

struct CurationRow {
  std::string id;
  std::optional<double> si;
  std::optional<double> cf;
  std::optional<int> band;
};

/// SI/CF/band for every manifest image; relative paths resolve against root.
std::vector<CurationRow> curation_report(const DatasetManifest& manifest, const std::filesystem::path& image_root);
std::string curation_to_csv(std::span<const CurationRow> rows);

}  // namespace qprobe
