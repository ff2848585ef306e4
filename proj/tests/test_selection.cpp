#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "defectloop/selection.hpp"
#include "oracles.hpp"

#include <random>
#include <set>

using namespace defectloop;

namespace {

Prediction seg_prediction(const GridF& p) {
  Prediction pred;
  pred.image_id = "img";
  pred.probability_maps[DefectClass::PolycrystallineDefect] = p;
  return pred;
}

std::vector<ImageId> ids(int n) {
  std::vector<ImageId> out;
  for (int i = 0; i < n; ++i) out.push_back("i" + std::to_string(100 + i));
  return out;
}

}  // namespace

TEST_CASE("segmentation uncertainty examples") {
  auto score = [](const GridF& p) {
    return score_uncertainty(seg_prediction(p)).per_class_scores.at(DefectClass::PolycrystallineDefect);
  };
  CHECK(score(GridF::Constant(4, 4, 0.5f)) == doctest::Approx(1.0));
  CHECK(score(GridF::Constant(4, 4, 1.0f)) == 0.0);
  GridF half = GridF::Constant(4, 4, 0.5f);
  half.topRows(2).setConstant(1.0f);
  CHECK(score(half) == doctest::Approx(0.5));
  GridF bad = GridF::Constant(2, 2, 0.5f);
  bad(0, 0) = 1.5f;
  try {
    score_uncertainty(seg_prediction(bad));
    FAIL("expected ProbabilityOutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ProbabilityOutOfRange);
  }
}

TEST_CASE("segmentation uncertainty matches the entropy oracle and is symmetric") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int t = 0; t < 100; ++t) {
    GridF p(5, 7);
    for (long i = 0; i < p.size(); ++i) p(i / 7, i % 7) = u(rng);
    double ref = 0;
    for (long i = 0; i < p.size(); ++i) ref += oracle::binary_entropy_bits(p(i / 7, i % 7));
    ref /= static_cast<double>(p.size());
    const double lib = score_uncertainty(seg_prediction(p)).per_class_scores.at(DefectClass::PolycrystallineDefect);
    CHECK(lib == doctest::Approx(ref).epsilon(1e-9));
    const GridF flipped = 1.0f - p;
    CHECK(score_uncertainty(seg_prediction(flipped)).per_class_scores.at(DefectClass::PolycrystallineDefect) ==
          doctest::Approx(lib).epsilon(1e-6));
  }
}

TEST_CASE("detection uncertainty") {
  Prediction pred;
  pred.image_id = "img";
  auto s = score_uncertainty(pred);
  CHECK(s.per_class_scores.at(DefectClass::CenterDefect) == 0.5);
  CHECK(s.per_class_scores.at(DefectClass::EdgeDefect) == 0.5);
  pred.boxes.push_back({DefectClass::CenterDefect, {0, 0, 2, 2}, 0.5});
  pred.boxes.push_back({DefectClass::EdgeDefect, {0, 0, 2, 2}, 1.0});
  s = score_uncertainty(pred);
  CHECK(s.per_class_scores.at(DefectClass::CenterDefect) == 1.0);
  CHECK(s.per_class_scores.at(DefectClass::EdgeDefect) == 0.0);
  CHECK(s.score == doctest::Approx(0.5));
}

TEST_CASE("score is the mean of the per-class scores") {
  Prediction pred = seg_prediction(GridF::Constant(3, 3, 0.5f));
  pred.boxes.push_back({DefectClass::CenterDefect, {0, 0, 2, 2}, 0.9});
  const auto s = score_uncertainty(pred);
  double sum = 0;
  for (const auto& [c, v] : s.per_class_scores) sum += v;
  CHECK(s.score == doctest::Approx(sum / static_cast<double>(s.per_class_scores.size())));
}

TEST_CASE("histogram features") {
  ImageF img(4, 4, 1, 0.0f);
  img[0].topRows(2).setConstant(1.0f);
  const auto h = histogram_features(img);
  CHECK(h.size() == 64);
  CHECK(h.sum() == doctest::Approx(1.0));
  CHECK(h(0) == doctest::Approx(0.5));
  CHECK(h(63) == doctest::Approx(0.5));
}

TEST_CASE("select_batch examples") {
  const auto pool = ids(50);
  std::map<ImageId, double> scores;
  for (const auto& id : pool) scores[id] = 0.1;
  CHECK(select_batch(pool, scores, nullptr, 100) == pool);

  const std::vector<ImageId> three{"a", "b", "c"};
  std::map<ImageId, double> distinct{{"a", 0.9}, {"b", 0.5}, {"c", 0.1}};
  auto picked = select_batch(three, distinct, nullptr, 2);
  CHECK(std::set<ImageId>(picked.begin(), picked.end()) == std::set<ImageId>{"a", "b"});

  std::map<ImageId, double> tied{{"a", 0.5}, {"b", 0.5}, {"c", 0.5}};
  FeatureMap line;
  line["a"] = Eigen::VectorXd::Constant(1, 0.0);
  line["b"] = Eigen::VectorXd::Constant(1, 1.0);
  line["c"] = Eigen::VectorXd::Constant(1, 10.0);
  picked = select_batch(three, tied, &line, 2);
  CHECK(std::set<ImageId>(picked.begin(), picked.end()) == std::set<ImageId>{"a", "c"});
  picked = select_batch(three, tied, nullptr, 2);
  CHECK(picked == std::vector<ImageId>{"a", "b"});

  std::map<ImageId, double> partial{{"a", 0.5}};
  try {
    select_batch(three, partial, nullptr, 1);
    FAIL("expected MissingScore");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingScore);
    CHECK(e.detail() == "b");
  }
}

TEST_CASE("select_batch properties") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> n_dist(1, 30), k_dist(0, 35), level(0, 4);
  std::normal_distribution<double> feat(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    const auto pool = ids(n_dist(rng));
    const auto k = static_cast<std::size_t>(k_dist(rng));
    std::map<ImageId, double> scores;
    FeatureMap features;
    for (const auto& id : pool) {
      scores[id] = level(rng) / 4.0;  // plenty of ties
      features[id] = Eigen::VectorXd::NullaryExpr(3, [&] { return feat(rng); });
    }
    const auto picked = select_batch(pool, scores, &features, k);
    CHECK(picked.size() == std::min(k, pool.size()));
    std::set<ImageId> uniq(picked.begin(), picked.end());
    CHECK(uniq.size() == picked.size());
    for (const auto& id : picked) CHECK(scores.contains(id));
    CHECK(select_batch(pool, scores, &features, k) == picked);

    // every non-selected image scores at most the lowest selected one
    if (!picked.empty()) {
      double low = 1.0;
      for (const auto& id : picked) low = std::min(low, scores[id]);
      for (const auto& id : pool)
        if (!uniq.contains(id)) CHECK(scores[id] <= low);
    }

    // monotone: raising a selected image's score keeps it
    if (!picked.empty() && k < pool.size()) {
      const auto& chosen = picked[static_cast<std::size_t>(level(rng)) % picked.size()];
      auto raised = scores;
      raised[chosen] += 0.1;
      const auto again = select_batch(pool, raised, &features, k);
      CHECK(std::find(again.begin(), again.end(), chosen) != again.end());
    }
  }
}
