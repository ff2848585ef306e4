#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "defectloop/preprocess.hpp"

#include <random>
#include <set>

using namespace defectloop;

namespace {

ImageRecord frame(const std::string& id, std::int64_t t) {
  return ImageRecord{id, "run", t, 8, 8, id + ".png", ImageStatus::Raw, std::nullopt};
}

Image8 constant(int w, int h, std::uint8_t v) { return Image8(w, h, 1, v); }

// Direct 3x3 box-filter residual variance with replicated borders.
double residual_oracle(const Image8& img) {
  const int w = img.width(), h = img.height();
  std::vector<double> res;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double s = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc)
          s += img[0](std::clamp(r + dr, 0, h - 1), std::clamp(c + dc, 0, w - 1)) / 255.0;
      res.push_back(img[0](r, c) / 255.0 - s / 9.0);
    }
  }
  double mean = 0;
  for (double v : res) mean += v;
  mean /= static_cast<double>(res.size());
  double var = 0;
  for (double v : res) var += (v - mean) * (v - mean);
  return var / static_cast<double>(res.size());
}

}  // namespace

TEST_CASE("resample_sequence") {
  std::vector<ImageRecord> frames;
  for (int m = 0; m < 30; ++m) frames.push_back(frame("f" + std::to_string(m), 60 * m));
  const auto kept = resample_sequence(frames, 900);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].captured_at == 0);
  CHECK(kept[1].captured_at == 900);
  CHECK(resample_sequence({}, 900).empty());
  const std::vector<ImageRecord> one{frame("x", 5)};
  CHECK(resample_sequence(one, 900).size() == 1);
  std::vector<ImageRecord> unsorted{frame("a", 10), frame("b", 5)};
  CHECK_THROWS_AS(resample_sequence(unsorted, 900), Error);
}

TEST_CASE("resample_sequence properties on random cadences") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> gap(1, 400), count(1, 80), window(60, 1200);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ImageRecord> frames;
    std::int64_t t = 1000;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      frames.push_back(frame("f" + std::to_string(i), t));
      t += gap(rng);
    }
    const int w = window(rng);
    const auto kept = resample_sequence(frames, w);
    const auto span = frames.back().captured_at - frames.front().captured_at + 1;
    CHECK(kept.size() <= static_cast<std::size_t>((span + w - 1) / w));
    for (std::size_t i = 1; i < kept.size(); ++i) {
      const auto k0 = (kept[i - 1].captured_at - frames.front().captured_at) / w;
      const auto k1 = (kept[i].captured_at - frames.front().captured_at) / w;
      CHECK(k1 > k0);
      if (k1 == k0 + 1) CHECK(kept[i].captured_at - kept[i - 1].captured_at >= 0);
    }
    // first frame of each bucket
    std::set<std::int64_t> buckets;
    for (const auto& f : frames) {
      const auto k = (f.captured_at - frames.front().captured_at) / w;
      if (buckets.insert(k).second) {
        CHECK(std::any_of(kept.begin(), kept.end(), [&](const auto& x) { return x.image_id == f.image_id; }));
      }
    }
    CHECK(buckets.size() == kept.size());
  }
}

TEST_CASE("filter_frames") {
  PreprocessConfig cfg;
  cfg.blackout_luminance_max = 0.02;
  cfg.noise_variance_max = 0.01;
  std::map<std::string, Image8> images;
  images["black"] = constant(16, 16, 0);
  images["gray"] = constant(16, 16, 128);
  Image8 noisy = constant(16, 16, 128);
  std::mt19937_64 rng(9);
  std::bernoulli_distribution corrupt(0.5), salt(0.5);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c)
      if (corrupt(rng)) noisy[0](r, c) = salt(rng) ? 255 : 0;
  images["noisy"] = noisy;
  CHECK(residual_variance(noisy) == doctest::Approx(residual_oracle(noisy)).epsilon(1e-9));
  CHECK(residual_oracle(noisy) > 0.01);

  std::vector<ImageRecord> frames{frame("black", 0), frame("gray", 1), frame("noisy", 2)};
  const auto loader = [&](const ImageRecord& r) { return images.at(r.image_id); };
  const auto res = filter_frames(frames, cfg, loader);
  REQUIRE(res.kept.size() == 1);
  CHECK(res.kept[0].image_id == "gray");
  CHECK(res.kept[0].status == ImageStatus::Filtered);
  REQUIRE(res.rejected.size() == 2);
  CHECK(res.rejected[0].reject_reason == RejectReason::Blackout);
  CHECK(res.rejected[1].reject_reason == RejectReason::Noise);
  for (const auto& r : res.rejected) CHECK(r.status == ImageStatus::Rejected);

  // idempotent on the kept set
  const auto again = filter_frames(res.kept, cfg, loader);
  CHECK(again.rejected.empty());

  const auto failing = [](const ImageRecord&) -> Image8 { throw Error(Errc::Io, "gone"); };
  try {
    filter_frames(frames, cfg, failing);
    FAIL("expected UnreadableImage");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnreadableImage);
  }
}

TEST_CASE("preprocess_image") {
  const Image8 white = constant(256, 256, 255);
  const ImageF out = preprocess_image(white, {0, 0, 256, 256}, 256, false);
  CHECK(out.width() == 256);
  CHECK((out[0] == 1.0f).all());

  Image8 blocks(512, 512, 1);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> v(0, 255);
  for (int r = 0; r < 256; ++r) {
    for (int c = 0; c < 256; ++c) {
      const auto val = static_cast<std::uint8_t>(v(rng));
      blocks[0].block(2 * r, 2 * c, 2, 2).setConstant(val);
    }
  }
  const ImageF small = preprocess_image(blocks, {0, 0, 512, 512}, 256, false);
  bool exact = true;
  for (int r = 0; r < 256; ++r)
    for (int c = 0; c < 256; ++c) exact &= std::abs(small[0](r, c) - blocks[0](2 * r, 2 * c) / 255.0f) < 1e-6f;
  CHECK(exact);
  CHECK(small[0].mean() == doctest::Approx(blocks[0].cast<double>().mean() / 255.0).epsilon(1e-6));
  CHECK((small[0] >= 0.0f).all());
  CHECK((small[0] <= 1.0f).all());

  try {
    preprocess_image(blocks, {500, 500, 100, 100}, 256, false);
    FAIL("expected CropOutOfBounds");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::CropOutOfBounds);
  }

  Image8 spiky = constant(9, 9, 100);
  spiky[0](4, 4) = 255;
  const ImageF denoised = preprocess_image(spiky, {0, 0, 9, 9}, 9, true);
  CHECK(denoised[0](4, 4) == doctest::Approx(100.0 / 255.0));
}

TEST_CASE("area_resize handles fractional overlaps") {
  ImageF img(3, 1, 1);
  img[0] << 0.0f, 0.3f, 0.9f;
  const ImageF out = area_resize(img, 2, 1);
  CHECK(out[0](0, 0) == doctest::Approx((0.0 + 0.5 * 0.3) / 1.5));
  CHECK(out[0](0, 1) == doctest::Approx((0.5 * 0.3 + 0.9) / 1.5));
}

TEST_CASE("split_dataset") {
  std::vector<ImageId> ids;
  for (int i = 0; i < 300; ++i) ids.push_back("img" + std::to_string(i));
  const auto a = split_dataset(ids, 0.9, 17);
  const auto b = split_dataset(ids, 0.9, 17);
  CHECK(a.train.size() == 270);
  CHECK(a.test.size() == 30);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(split_dataset(ids, 0.9, 18).test != a.test);
  try {
    split_dataset(ids, 0.999, 1);
    FAIL("expected DegenerateRatio");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateRatio);
  }
  const std::vector<ImageId> one{"x"};
  CHECK_THROWS_AS(split_dataset(one, 0.5, 1), Error);
}

TEST_CASE("split_dataset partitions for random inputs") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> n_dist(2, 400);
  std::uniform_real_distribution<double> ratio(0.05, 0.95);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = n_dist(rng);
    const double r = ratio(rng);
    std::vector<ImageId> ids;
    for (int i = 0; i < n; ++i) ids.push_back("i" + std::to_string(i));
    const auto n_train = static_cast<std::size_t>(std::llround(r * n));
    if (n_train == 0 || n_train == static_cast<std::size_t>(n)) {
      CHECK_THROWS_AS(split_dataset(ids, r, trial), Error);
      continue;
    }
    const auto s = split_dataset(ids, r, static_cast<std::uint64_t>(trial));
    CHECK(s.train.size() == n_train);
    CHECK(s.test.size() == n - n_train);
    std::set<ImageId> all(s.train.begin(), s.train.end());
    for (const auto& id : s.test) CHECK(all.insert(id).second);
    CHECK(all.size() == static_cast<std::size_t>(n));
    ++checked;
  }
  CHECK(checked > 150);
}

TEST_CASE("manifest invariants and json") {
  DatasetManifest m;
  m.dataset_id = "d";
  m.split_seed = 4;
  m.entries.push_back({"a", 256, {0, 0, 10, 10}, std::nullopt});
  m.entries.push_back({"b", 256, {0, 0, 10, 10}, std::nullopt});
  m.split = {{"a", Split::Train}, {"b", Split::Test}};
  CHECK_NOTHROW(m.validate());
  m.entries.push_back({"a_aug1", 256, {0, 0, 10, 10}, Lineage{"a", {}}});
  CHECK_NOTHROW(m.validate());
  CHECK(m.count_entries(Split::Train) == 2);
  CHECK(m.ids_in(Split::Train, true) == std::vector<ImageId>{"a"});

  const auto back = manifest_from_json(manifest_to_json(m));
  CHECK(back.entries == m.entries);
  CHECK(back.split == m.split);

  auto leak = m;
  leak.entries.push_back({"b_aug1", 256, {0, 0, 10, 10}, Lineage{"b", {}}});
  CHECK_THROWS_AS(leak.validate(), Error);
  auto unassigned = m;
  unassigned.split.erase("a");
  CHECK_THROWS_AS(unassigned.validate(), Error);
}

TEST_CASE("config validation") {
  PreprocessConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.target_resolutions.clear();
  CHECK_THROWS_AS(cfg.validate(), Error);
  GrowthRunManifest run;
  run.growth_run_id = "r";
  run.frames = {frame("b", 10), frame("a", 5)};
  CHECK_THROWS_AS(run.validate(), Error);
}
