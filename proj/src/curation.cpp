#include "qprobe/curation.hpp"

#include "qprobe/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace qprobe {

PixelImage::PixelImage(int w, int h, int c, double fill) : width(w), height(h), channels(c) {
  if (w < 1 || h < 1) throw ValidationError("image dimensions must be >= 1");
  if (c != 1 && c != 3) throw ValidationError("image must have 1 or 3 channels");
  samples.assign(static_cast<std::size_t>(w) * h * c, fill);
}

namespace {

void check_image(const PixelImage& img) {
  if (img.width < 1 || img.height < 1 || (img.channels != 1 && img.channels != 3) ||
      img.samples.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
    throw ValidationError("malformed pixel image");
  }
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(const std::string& bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw ValidationError("truncated PNM header");
  return bytes.substr(start, pos - start);
}

int pnm_int(const std::string& tok) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("bad PNM header field '" + tok + "'");
  }
}

}  // namespace

PixelImage parse_pnm(const std::string& bytes) {
  std::size_t pos = 0;
  const std::string magic = pnm_token(bytes, pos);
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw ValidationError("unsupported image format '" + magic + "' (binary P5/P6 only)");
  const int w = pnm_int(pnm_token(bytes, pos));
  const int h = pnm_int(pnm_token(bytes, pos));
  const int maxval = pnm_int(pnm_token(bytes, pos));
  if (maxval != 255) throw ValidationError("PNM maxval must be 255, got " + std::to_string(maxval));
  if (w < 1 || h < 1) throw ValidationError("PNM dimensions must be >= 1");
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() < pos + n) throw ValidationError("PNM raster truncated");
  PixelImage img(w, h, channels);
  for (std::size_t i = 0; i < n; ++i) img.samples[i] = static_cast<unsigned char>(bytes[pos + i]);
  return img;
}

PixelImage read_pnm(const std::filesystem::path& path) {
  try {
    return parse_pnm(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string encode_pnm(const PixelImage& img) {
  check_image(img);
  std::string out = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.samples.size());
  for (double v : img.samples) {
    out += static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L)));
  }
  return out;
}

PixelImage to_luma(const PixelImage& img) {
  check_image(img);
  if (img.channels == 1) return img;
  PixelImage y(img.width, img.height, 1);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      y.at(c, r) = 0.299 * img.at(c, r, 0) + 0.587 * img.at(c, r, 1) + 0.114 * img.at(c, r, 2);
    }
  }
  return y;
}

double spatial_information(const PixelImage& img) {
  check_image(img);
  if (img.width < 3 || img.height < 3) throw ValidationError("spatial information needs an image of at least 3x3");
  const PixelImage y = to_luma(img);
  const Eigen::Index n = static_cast<Eigen::Index>(img.width - 2) * (img.height - 2);
  Eigen::ArrayXd mag(n);
  Eigen::Index k = 0;
  for (int r = 1; r + 1 < y.height; ++r) {
    for (int c = 1; c + 1 < y.width; ++c) {
      const double gx = (y.at(c + 1, r - 1) + 2 * y.at(c + 1, r) + y.at(c + 1, r + 1)) -
                        (y.at(c - 1, r - 1) + 2 * y.at(c - 1, r) + y.at(c - 1, r + 1));
      const double gy = (y.at(c - 1, r + 1) + 2 * y.at(c, r + 1) + y.at(c + 1, r + 1)) -
                        (y.at(c - 1, r - 1) + 2 * y.at(c, r - 1) + y.at(c + 1, r - 1));
      mag(k++) = std::hypot(gx, gy);
    }
  }
  return std::sqrt((mag - mag.mean()).square().mean());
}

double colorfulness(const PixelImage& img) {
  check_image(img);
  if (img.channels != 3) throw ValidationError("colorfulness needs an RGB image");
  const Eigen::Index n = static_cast<Eigen::Index>(img.width) * img.height;
  const Eigen::Map<const Eigen::Array<double, 3, Eigen::Dynamic>> px(img.samples.data(), 3, n);
  const Eigen::ArrayXd rg = px.row(0) - px.row(1);
  const Eigen::ArrayXd yb = 0.5 * (px.row(0) + px.row(1)) - px.row(2);
  const double mu_rg = rg.mean();
  const double mu_yb = yb.mean();
  const double var_rg = (rg - mu_rg).square().mean();
  const double var_yb = (yb - mu_yb).square().mean();
  return std::sqrt(var_rg + var_yb) + 0.3 * std::sqrt(mu_rg * mu_rg + mu_yb * mu_yb);
}

int mos_band(double mos) {
  if (!(mos >= 0.0 && mos <= 100.0)) throw ValidationError("mos " + format_double(mos) + " outside [0,100]");
  return std::min(4, static_cast<int>(mos / 20.0));
}

const char* mos_band_name(int band) {
  static constexpr const char* kNames[] = {"bad", "poor", "fair", "good", "excellent"};
  if (band < 0 || band > 4) throw ValidationError("band must lie in 0..4");
  return kNames[band];
}

bool MosSample::any_shortfall() const { return std::find(shortfall.begin(), shortfall.end(), true) != shortfall.end(); }

DatasetManifest MosSample::subset(const DatasetManifest& source) const {
  std::vector<ImageRecord> images;
  for (const auto& id : ids) images.push_back(source.at(id));
  return DatasetManifest(source.name(), std::move(images), source.mos_scale());
}

MosSample uniform_mos_sample(const DatasetManifest& manifest, std::size_t k_per_band, std::uint64_t seed) {
  if (k_per_band < 1) throw ValidationError("sample size per band must be >= 1");
  std::array<std::vector<const ImageRecord*>, 5> bands;
  for (const auto& r : manifest.images()) {
    if (!r.mos) throw ValidationError("image '" + r.id + "' has no mos; cannot sample by band");
    bands[mos_band(*r.mos)].push_back(&r);
  }
  MosSample out;
  std::set<std::string> used_refs;
  std::mt19937_64 rng(seed);
  for (int b = 0; b < 5; ++b) {
    auto& cand = bands[b];
    // Fisher-Yates with the portable index draw.
    for (std::size_t i = cand.size(); i > 1; --i) std::swap(cand[i - 1], cand[uniform_index(rng, i)]);
    for (const ImageRecord* r : cand) {
      if (out.per_band[b] == k_per_band) break;
      if (r->reference_id && !used_refs.insert(*r->reference_id).second) continue;
      out.ids.push_back(r->id);
      ++out.per_band[b];
    }
    out.shortfall[b] = out.per_band[b] < k_per_band;
  }
  return out;
}

ScreeningResult bt500_outlier_reject(const SubjectScoreMatrix& scores) {
  const Eigen::Index n_sub = scores.rows();
  const Eigen::Index n_cond = scores.cols();
  if (n_sub < 3) throw ValidationError("screening needs at least 3 subjects");
  if (n_cond < 2) throw ValidationError("screening needs at least 2 conditions");
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double v = scores.data()[i];
    if (!std::isnan(v) && !(v >= 0.0 && v <= 100.0)) throw ValidationError("subject scores must lie in [0,100]");
  }

  ScreeningResult res;
  res.p = Eigen::VectorXi::Zero(n_sub);
  res.q = Eigen::VectorXi::Zero(n_sub);
  Eigen::VectorXi rated = Eigen::VectorXi::Zero(n_sub);
  for (Eigen::Index c = 0; c < n_cond; ++c) {
    double sum = 0.0;
    int n = 0;
    for (Eigen::Index s = 0; s < n_sub; ++s) {
      if (std::isnan(scores(s, c))) continue;
      sum += scores(s, c);
      ++n;
      ++rated(s);
    }
    if (n == 0) continue;
    const double mu = sum / n;
    double m2 = 0.0, m4 = 0.0;
    for (Eigen::Index s = 0; s < n_sub; ++s) {
      if (std::isnan(scores(s, c))) continue;
      const double d2 = (scores(s, c) - mu) * (scores(s, c) - mu);
      m2 += d2;
      m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    const double sd = std::sqrt(m2);
    const double kurt = m2 > 0.0 ? m4 / (m2 * m2) : 3.0;
    const double width = (kurt >= 2.0 && kurt <= 4.0) ? 2.0 * sd : std::sqrt(20.0) * sd;
    for (Eigen::Index s = 0; s < n_sub; ++s) {
      const double v = scores(s, c);
      if (std::isnan(v)) continue;
      if (v > mu + width) ++res.p(s);
      if (v < mu - width) ++res.q(s);
    }
  }
  for (Eigen::Index s = 0; s < n_sub; ++s) {
    const int pq = res.p(s) + res.q(s);
    const bool reject = rated(s) > 0 && pq > 0 && static_cast<double>(pq) / rated(s) > 0.05 &&
                        std::abs(res.p(s) - res.q(s)) / static_cast<double>(pq) < 0.3;
    (reject ? res.rejected : res.kept).push_back(s);
  }
  if (res.kept.empty()) throw ValidationError("screening rejected every subject; check the score matrix");

  res.mos.resize(n_cond);
  for (Eigen::Index c = 0; c < n_cond; ++c) {
    double sum = 0.0;
    int n = 0;
    for (Eigen::Index s : res.kept) {
      if (std::isnan(scores(s, c))) continue;
      sum += scores(s, c);
      ++n;
    }
    res.mos(c) = n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
  }
  return res;
}

SubjectScoreMatrix parse_score_matrix(const std::string& csv, std::vector<std::string>* subject_labels) {
  const auto rows = parse_csv(csv);
  if (rows.size() < 2) throw ValidationError("score matrix: need a header and at least one subject row");
  const std::size_t width = rows.front().size();
  auto numeric = [](const std::string& s, double& v) {
    if (s.empty()) {
      v = std::numeric_limits<double>::quiet_NaN();
      return true;
    }
    try {
      std::size_t used = 0;
      v = std::stod(s, &used);
      return used == s.size();
    } catch (const std::exception&) {
      return false;
    }
  };
  double probe = 0.0;
  const bool labelled = !numeric(rows[1].front(), probe) || rows.front().front() == "subject";
  const std::size_t first = labelled ? 1 : 0;
  SubjectScoreMatrix m(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(width - first));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != width) throw ValidationError("score matrix row " + std::to_string(r + 1) + ": wrong width");
    if (subject_labels) subject_labels->push_back(labelled ? rows[r].front() : std::to_string(r));
    for (std::size_t c = first; c < width; ++c) {
      double v = 0.0;
      if (!numeric(rows[r][c], v)) {
        throw ValidationError("score matrix row " + std::to_string(r + 1) + ": bad value '" + rows[r][c] + "'");
      }
      m(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c - first)) = v;
    }
  }
  return m;
}

std::vector<CurationRow> curation_report(const DatasetManifest& manifest, const std::filesystem::path& image_root) {
  std::vector<CurationRow> rows;
  for (const auto& rec : manifest.images()) {
    std::filesystem::path path = rec.file_ref;
    if (path.is_relative()) path = image_root / path;
    const PixelImage img = read_pnm(path);
    CurationRow row;
    row.id = rec.id;
    row.si = spatial_information(img);
    if (img.channels == 3) row.cf = colorfulness(img);
    if (rec.mos) row.band = mos_band(*rec.mos);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string curation_to_csv(std::span<const CurationRow> rows) {
  std::ostringstream out;
  out << "id,si,cf,band\n";
  for (const auto& r : rows) {
    out << csv_escape(r.id) << ',' << (r.si ? format_double(*r.si) : "") << ',' << (r.cf ? format_double(*r.cf) : "")
        << ',' << (r.band ? mos_band_name(*r.band) : "") << '\n';
  }
  return out.str();
}

}  // namespace qprobe
