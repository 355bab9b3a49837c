#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "behaveformer/evaluation.hpp"
#include "testutil.hpp"

using namespace bf;

using bftest::det_oracle;
using bftest::SweepOracle;

namespace {

ScoredTimeline timeline(const std::string& user, SampleLabel label,
                        std::vector<std::pair<Scalar, Scalar>> ts) {
  ScoredTimeline tl{user, {}};
  for (auto [t, s] : ts) tl.samples.push_back({t, s, label});
  return tl;
}

}  // namespace

TEST_CASE("verification score is the mean enrollment distance") {
  Vector a = (Vector(2) << 1.0, 0.0).finished();
  CHECK(verification_score({"u", {a}}, a) == 0.0);

  EnrollmentProfile p{"u", {(Vector(1) << 0.0).finished(), (Vector(1) << 4.0).finished()}};
  CHECK(verification_score(p, (Vector(1) << 1.0).finished()) == doctest::Approx(2.0));

  CHECK_THROWS_AS(verification_score({"u", {}}, a), std::invalid_argument);
  CHECK_THROWS_AS(verification_score(p, a), std::invalid_argument);
}

TEST_CASE("verification score scales with the embeddings") {
  std::mt19937_64 rng(1);
  EnrollmentProfile p{"u", {}};
  for (int i = 0; i < 4; ++i) p.embeddings.push_back(bftest::random_matrix(8, 1, rng));
  Vector v = bftest::random_matrix(8, 1, rng);
  const Scalar base = verification_score(p, v);
  EnrollmentProfile scaled = p;
  for (Vector& e : scaled.embeddings) e *= 3.5;
  CHECK(verification_score(scaled, Vector(3.5 * v)) == doctest::Approx(3.5 * base));
}

TEST_CASE("verification score is invariant under rigid transformations") {
  std::mt19937_64 rng(2);
  EnrollmentProfile p{"u", {}};
  for (int i = 0; i < 5; ++i) p.embeddings.push_back(bftest::random_matrix(6, 1, rng));
  Vector v = bftest::random_matrix(6, 1, rng);

  Matrix q = Eigen::HouseholderQR<Matrix>(bftest::random_matrix(6, 6, rng)).householderQ();
  Vector shift = bftest::random_matrix(6, 1, rng, -5.0, 5.0);
  EnrollmentProfile moved{"u", {}};
  for (const Vector& e : p.embeddings) moved.embeddings.push_back(Vector(q * e + shift));
  CHECK(std::abs(verification_score(moved, Vector(q * v + shift)) - verification_score(p, v)) <
        1e-9);
}

TEST_CASE("DET handles separable and indistinguishable score sets exactly") {
  DetCurve sep = compute_det({0.1, 0.2}, {0.3, 0.4});
  CHECK(sep.eer == 0.0);

  DetCurve same = compute_det({0.1, 0.2, 0.3}, {0.1, 0.2, 0.3});
  CHECK(same.eer == 0.5);

  CHECK_THROWS_AS(compute_det({}, {0.1}), std::invalid_argument);
  CHECK_THROWS_AS(compute_det({0.1}, {}), std::invalid_argument);
}

TEST_CASE("DET matches the exhaustive sweep oracle on random scores") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<Scalar> uni(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Scalar> gen, imp;
    for (int i = 0; i < 50; ++i) {
      gen.push_back(uni(rng));
      imp.push_back(uni(rng) + 0.2);
    }
    DetCurve det = compute_det(gen, imp);
    SweepOracle oracle = det_oracle(gen, imp);
    CHECK(std::abs(det.eer - oracle.eer_interpolated) < 1e-9);
    CHECK(std::abs(det.eer - oracle.eer_discrete) <= 1.0 / (2.0 * 50.0) + 1e-12);
  }
}

TEST_CASE("DET rates are monotone along the sweep and EER stays in [0, 1/2]") {
  std::mt19937_64 rng(4);
  std::normal_distribution<Scalar> gen_dist(0.0, 1.0), imp_dist(1.0, 1.0);
  std::vector<Scalar> gen, imp;
  for (int i = 0; i < 80; ++i) {
    gen.push_back(gen_dist(rng));
    imp.push_back(imp_dist(rng));
  }
  DetCurve det = compute_det(gen, imp);
  for (std::size_t i = 1; i < det.points.size(); ++i) {
    CHECK(det.points[i].far >= det.points[i - 1].far);
    CHECK(det.points[i].frr <= det.points[i - 1].frr);
  }
  CHECK(det.eer >= 0.0);
  CHECK(det.eer <= 0.5);
}

TEST_CASE("per-user EER averages the per-identity curves") {
  std::vector<UserScores> users;
  users.push_back({"a", {0.1, 0.2}, {0.5, 0.6}});        // EER 0
  users.push_back({"b", {0.1, 0.2}, {0.1, 0.2}});        // EER 0.5
  CHECK(per_user_mean_eer(users) == doctest::Approx(0.25));
  CHECK_THROWS_AS(per_user_mean_eer({}), std::invalid_argument);
}

TEST_CASE("fully accepted genuine traffic has usability 1 and no reject runs") {
  auto tl = timeline("u", SampleLabel::Genuine, {{0.0, 0.1}, {10.0, 0.2}, {20.0, 0.15}});
  CaMetrics m = ca_metrics({tl}, 0.5);
  CHECK(m.usability == 1.0);
  CHECK(m.frwi_minutes == 0.0);
}

TEST_CASE("time to correct reject measures first-reject delay") {
  auto tl = timeline("u", SampleLabel::Impostor, {{10.0, 0.1}, {20.0, 0.1}, {30.0, 0.9}});
  CaMetrics m = ca_metrics({tl}, 0.5);
  CHECK(m.tcr_seconds == doctest::Approx(20.0));
  CHECK(m.never_rejected_impostors == 0);
}

TEST_CASE("false-reject worst interval spans the longest reject run") {
  auto tl = timeline("u", SampleLabel::Genuine,
                     {{0.0, 0.1}, {60.0, 0.9}, {90.0, 0.9}, {120.0, 0.9}, {150.0, 0.1}});
  CaMetrics m = ca_metrics({tl}, 0.5);
  CHECK(m.frwi_minutes == doctest::Approx(1.0));
  CHECK(m.usability == doctest::Approx(2.0 / 5.0));
}

TEST_CASE("never-rejected impostors contribute their duration and are flagged") {
  auto good = timeline("u", SampleLabel::Impostor, {{0.0, 0.9}, {5.0, 0.9}});
  auto sneaky = timeline("u", SampleLabel::Impostor, {{0.0, 0.1}, {30.0, 0.2}, {40.0, 0.1}});
  CaMetrics m = ca_metrics({good, sneaky}, 0.5);
  CHECK(m.never_rejected_impostors == 1);
  CHECK(m.tcr_seconds == doctest::Approx((0.0 + 40.0) / 2.0));
  CHECK(m.fawi_minutes == doctest::Approx(40.0 / 60.0));
}

TEST_CASE("single-sample runs have zero duration") {
  auto g = timeline("u", SampleLabel::Genuine, {{0.0, 0.9}, {60.0, 0.1}});
  auto i = timeline("u", SampleLabel::Impostor, {{0.0, 0.1}, {60.0, 0.9}});
  CaMetrics m = ca_metrics({g, i}, 0.5);
  CHECK(m.frwi_minutes == 0.0);
  CHECK(m.fawi_minutes == 0.0);
}

TEST_CASE("a threshold below every score rejects everything") {
  auto g = timeline("u", SampleLabel::Genuine, {{0.0, 0.5}, {10.0, 0.6}});
  auto i = timeline("u", SampleLabel::Impostor, {{5.0, 0.7}, {15.0, 0.8}});
  CaMetrics m = ca_metrics({g, i}, 0.01);
  CHECK(m.usability == 0.0);
  CHECK(m.tcr_seconds == 0.0);  // first reject at the first sample
}

TEST_CASE("ca_metrics validates its timelines") {
  CHECK_THROWS_AS(ca_metrics({}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(ca_metrics({ScoredTimeline{"u", {}}}, 0.5), std::invalid_argument);

  ScoredTimeline mixed{"u",
                       {{0.0, 0.1, SampleLabel::Genuine}, {1.0, 0.2, SampleLabel::Impostor}}};
  CHECK_THROWS_AS(ca_metrics({mixed}, 0.5), std::invalid_argument);

  ScoredTimeline unsorted{"u",
                          {{5.0, 0.1, SampleLabel::Genuine}, {1.0, 0.2, SampleLabel::Genuine}}};
  CHECK_THROWS_AS(ca_metrics({unsorted}, 0.5), std::invalid_argument);
}

TEST_CASE("two tight far-apart clusters score near 1") {
  std::vector<Vector> pts{(Vector(2) << 0.0, 0.0).finished(), (Vector(2) << 0.0, 0.1).finished(),
                          (Vector(2) << 10.0, 10.0).finished(),
                          (Vector(2) << 10.0, 10.1).finished()};
  std::vector<std::string> labels{"a", "a", "b", "b"};
  const Scalar s = silhouette(pts, labels);
  CHECK(s > 0.9);

  // Closed form: per point a = 0.1 (its cluster mate) and b = mean distance
  // to the two points of the other cluster.
  Scalar expected = 0.0;
  for (int i = 0; i < 4; ++i) {
    const int o1 = i < 2 ? 2 : 0, o2 = o1 + 1;
    const Scalar b = 0.5 * ((pts[i] - pts[o1]).norm() + (pts[i] - pts[o2]).norm());
    expected += (b - 0.1) / b;
  }
  CHECK(s == doctest::Approx(expected / 4.0).epsilon(1e-12));
}

TEST_CASE("identical points across labels score zero") {
  Vector p = (Vector(3) << 1.0, 2.0, 3.0).finished();
  CHECK(silhouette({p, p, p, p}, {"a", "a", "b", "b"}) == 0.0);
}

TEST_CASE("silhouette matches a direct evaluation of the formula") {
  std::mt19937_64 rng(5);
  std::vector<Vector> pts;
  std::vector<std::string> labels;
  for (int i = 0; i < 12; ++i) {
    pts.push_back(bftest::random_matrix(3, 1, rng));
    labels.push_back(i % 3 == 0 ? "a" : (i % 3 == 1 ? "b" : "c"));
  }
  // Independent direct evaluation.
  Scalar expected = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Scalar a = 0.0;
    int same = 0;
    std::map<std::string, std::pair<Scalar, int>> per_label;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j == i) continue;
      const Scalar d = (pts[i] - pts[j]).norm();
      if (labels[j] == labels[i]) {
        a += d;
        ++same;
      } else {
        per_label[labels[j]].first += d;
        per_label[labels[j]].second += 1;
      }
    }
    a /= same;
    Scalar b = std::numeric_limits<Scalar>::infinity();
    for (auto& [l, acc] : per_label) b = std::min(b, acc.first / acc.second);
    expected += (b - a) / std::max(a, b);
  }
  expected /= static_cast<Scalar>(pts.size());
  CHECK(silhouette(pts, labels) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("silhouette stays in [-1,1] and ignores label naming") {
  std::mt19937_64 rng(6);
  std::vector<Vector> pts;
  std::vector<std::string> labels;
  for (int i = 0; i < 20; ++i) {
    pts.push_back(bftest::random_matrix(4, 1, rng));
    labels.push_back(std::string(1, static_cast<char>('a' + i % 4)));
  }
  const Scalar s = silhouette(pts, labels);
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);

  std::vector<std::string> renamed;
  for (const std::string& l : labels) renamed.push_back(l == "a" ? "d" : (l == "d" ? "a" : l));
  CHECK(silhouette(pts, renamed) == doctest::Approx(s).epsilon(1e-15));

  CHECK_THROWS_AS(silhouette(pts, std::vector<std::string>(20, "only")), std::invalid_argument);
}
