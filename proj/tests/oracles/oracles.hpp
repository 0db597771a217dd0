#pragma once

// Reference computations kept apart from the library: brute-force optimizers,
// closed forms and hand-built fixtures used as ground truth by the tests.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace oracle {

// log Phi via erfc; adequate for the moderate arguments these fixtures use.
inline double log_phi(double z) { return std::log(0.5 * std::erfc(-z / std::sqrt(2.0))); }

inline double map_objective(const Eigen::MatrixXd& c, const Eigen::VectorXd& q, double ridge) {
  double f = -0.5 * ridge * q.squaredNorm();
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = 0; j < c.cols(); ++j)
      if (c(i, j) > 0) f += c(i, j) * log_phi(q(i) - q(j));
  return f;
}

// Zero-sum coordinates: q = (t_1, ..., t_{n-1}, -sum t).
inline Eigen::VectorXd embed(const Eigen::VectorXd& t) {
  Eigen::VectorXd q(t.size() + 1);
  q.head(t.size()) = t;
  q(t.size()) = -t.sum();
  return q;
}

// Grid search over t in [-R, R]^(n-1); each pass re-centres a 21-point grid
// per axis on the incumbent and shrinks it fourfold.
inline Eigen::VectorXd map_grid_search(const Eigen::MatrixXd& c, double ridge, double radius = 6.0,
                                       int passes = 14) {
  const Eigen::Index d = c.rows() - 1;
  Eigen::VectorXd best = Eigen::VectorXd::Zero(d);
  double best_f = map_objective(c, embed(best), ridge);
  double half = radius;
  const int k = 21;
  for (int pass = 0; pass < passes; ++pass) {
    const Eigen::VectorXd centre = best;
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (;;) {
      Eigen::VectorXd t(d);
      for (Eigen::Index a = 0; a < d; ++a) t(a) = centre(a) - half + 2.0 * half * idx[a] / (k - 1);
      const double f = map_objective(c, embed(t), ridge);
      if (f > best_f) {
        best_f = f;
        best = t;
      }
      Eigen::Index a = 0;
      while (a < d && ++idx[a] == k) idx[a++] = 0;
      if (a == d) break;
    }
    half /= 4.0;
  }
  return embed(best);
}

// Two items: maximise c01 log Phi(2t) + c10 log Phi(-2t) - ridge t^2 on a
// fine 1-D grid with golden-section polish.
inline double map_two_items(double c01, double c10, double ridge) {
  auto f = [&](double t) { return c01 * log_phi(2 * t) + c10 * log_phi(-2 * t) - ridge * t * t; };
  double lo = -20, hi = 20, best = 0, best_f = f(0);
  for (int i = 0; i <= 400000; ++i) {
    const double t = lo + (hi - lo) * i / 400000.0;
    if (f(t) > best_f) best_f = f(t), best = t;
  }
  double a = best - 1e-4, b = best + 1e-4;
  const double g = (std::sqrt(5.0) - 1) / 2;
  for (int i = 0; i < 200; ++i) {
    const double x1 = b - g * (b - a), x2 = a + g * (b - a);
    if (f(x1) > f(x2)) b = x2; else a = x1;
  }
  return 0.5 * (a + b);
}

// Dominant eigenpair of a positive 3x3 matrix from its characteristic
// polynomial (Cardano) and a cross product of two rows of A - lambda I.
inline Eigen::Vector3d perron_3x3(const Eigen::Matrix3d& a) {
  const double c2 = -a.trace();
  const double c1 = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0) + a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0) +
                    a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1);
  const double c0 = -a.determinant();
  // Depressed cubic x = y - c2/3.
  const double p = c1 - c2 * c2 / 3.0;
  const double q = 2.0 * c2 * c2 * c2 / 27.0 - c2 * c1 / 3.0 + c0;
  double lambda;
  const double disc = q * q / 4.0 + p * p * p / 27.0;
  if (disc >= 0) {
    lambda = std::cbrt(-q / 2.0 + std::sqrt(disc)) + std::cbrt(-q / 2.0 - std::sqrt(disc)) - c2 / 3.0;
  } else {
    const double r = std::sqrt(-p / 3.0);
    const double phi = std::acos(-q / (2.0 * r * r * r));
    lambda = 2.0 * r * std::cos(phi / 3.0) - c2 / 3.0;  // largest of the three real roots
  }
  const Eigen::Matrix3d m = a - lambda * Eigen::Matrix3d::Identity();
  Eigen::Vector3d v = m.row(0).transpose().cross(m.row(1).transpose());
  if (v.norm() < 1e-12) v = m.row(0).transpose().cross(m.row(2).transpose());
  v /= v.sum();
  return v;
}

// The 5x5 step image (columns 0-1 at 10, columns 2-4 at 50) and its Sobel
// magnitudes on the 3x3 interior, worked out by hand:
//   column 1: Gx = (50 + 2*50 + 50) - (10 + 2*10 + 10) = 160
//   column 2: Gx = 160 as well (left neighbour 10, right neighbour 50)
//   column 3: Gx = 0; Gy = 0 everywhere.
// Magnitudes per interior row: {160, 160, 0}; mean 320/3, population std
// sqrt(2*(160-320/3)^2 + (320/3)^2)/sqrt(3) = 160*sqrt(2)/3.
inline std::vector<double> step_image_5x5() {
  std::vector<double> px(25);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) px[r * 5 + c] = c < 2 ? 10.0 : 50.0;
  return px;
}
inline double step_image_si() { return 160.0 * std::sqrt(2.0) / 3.0; }

// 20 subjects x 16 conditions. Subjects 0..18 score the condition value x_c
// plus a rotating offset from an evenly spaced set in [-15, 15]; subject 19
// scores 100 - x_c. Half the conditions sit below 50 and half above, so the
// inverted subject lands above the upper bound on the first half and below
// the lower bound on the second. Conditions stay within 17 of the midpoint
// so every column keeps kurtosis in [2, 4] and the 2-sigma bounds apply;
// the inverted score then sits 2.1 to 2.8 sigma out.
inline Eigen::MatrixXd inverted_subject_matrix() {
  const std::array<double, 16> x = {33, 34, 35, 36, 37, 38, 39, 35, 67, 66, 65, 64, 63, 62, 61, 65};
  Eigen::MatrixXd s(20, 16);
  for (int c = 0; c < 16; ++c) {
    for (int k = 0; k < 19; ++k) {
      const int slot = ((k - 5 * c) % 19 + 19) % 19;  // np.roll(offsets, 5c)
      s(k, c) = x[c] - 15.0 + 30.0 * slot / 18.0;
    }
    s(19, c) = 100.0 - x[c];
  }
  return s;
}

// Replay log over six images. MOS: a=10 b=20 c=30 d=40 e=50 f=60.
// Six logical pairs, both orders each:
//   (a,b) consistent, picks b  -> correct
//   (c,d) consistent, picks d  -> correct
//   (e,f) consistent, picks f  -> correct
//   (a,f) consistent, picks a  -> wrong
//   (b,c) first/first          -> inconsistent
//   (d,e) abstain in one order -> inconsistent
// kappa = 4/6, alpha = 3/4.
inline const char* metric_replay_log() {
  return R"({"trial_id":"t1","first_id":"a","second_id":"b","judge_id":"hand","response":"second","round":1}
{"trial_id":"t2","first_id":"b","second_id":"a","judge_id":"hand","response":"first","round":1}
{"trial_id":"t3","first_id":"c","second_id":"d","judge_id":"hand","response":"second","round":1}
{"trial_id":"t4","first_id":"d","second_id":"c","judge_id":"hand","response":"first","round":1}
{"trial_id":"t5","first_id":"e","second_id":"f","judge_id":"hand","response":"second","round":1}
{"trial_id":"t6","first_id":"f","second_id":"e","judge_id":"hand","response":"first","round":1}
{"trial_id":"t7","first_id":"a","second_id":"f","judge_id":"hand","response":"first","round":1}
{"trial_id":"t8","first_id":"f","second_id":"a","judge_id":"hand","response":"second","round":1}
{"trial_id":"t9","first_id":"b","second_id":"c","judge_id":"hand","response":"first","round":1}
{"trial_id":"t10","first_id":"c","second_id":"b","judge_id":"hand","response":"first","round":1}
{"trial_id":"t11","first_id":"d","second_id":"e","judge_id":"hand","response":"abstain","round":1}
{"trial_id":"t12","first_id":"e","second_id":"d","judge_id":"hand","response":"first","round":1}
)";
}

inline const char* metric_manifest_csv() {
  return "id,dataset,path,mos\n"
         "a,hand,a.pgm,10\nb,hand,b.pgm,20\nc,hand,c.pgm,30\n"
         "d,hand,d.pgm,40\ne,hand,e.pgm,50\nf,hand,f.pgm,60\n";
}

// Random 4x4 count matrix, counts 0..10, every item with at least one win
// and one loss.
inline Eigen::MatrixXd random_counts_4x4(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(0, 10);
  for (;;) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        if (i != j) c(i, j) = count(rng);
    const Eigen::VectorXd wins = c.rowwise().sum();
    const Eigen::VectorXd losses = c.colwise().sum().transpose();
    if ((wins.array() > 0).all() && (losses.array() > 0).all()) return c;
  }
}

// Hand-checked TrueSkill values (defaults mu 25, sigma 25/3, beta 25/6,
// tau 25/300) after one win, from arbitrary-precision evaluation.
inline constexpr double kTsWinnerMu = 29.205473176557785;
inline constexpr double kTsLoserMu = 20.794526823442215;
inline constexpr double kTsSigma = 7.194816484813345;

}  // namespace oracle
