#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "copatch/fixture.hpp"
#include "copatch/tensorio.hpp"
#include "support/golden.hpp"

namespace fs = std::filesystem;
using namespace copatch;
using copatch::test::copy_golden;
using copatch::test::read_json;
using copatch::test::write_json;

TEST(Fixture, GoldenLoadsFiveValidRecords) {
  const auto fx = load_fixture(copatch::test::golden_fixture());
  const auto& m = fx.manifest();
  EXPECT_EQ(m.model, "clip-vit-b-32");
  EXPECT_EQ(m.d, 8u);
  EXPECT_EQ(m.d_star, 16u);
  EXPECT_EQ(m.p, 7u);
  ASSERT_EQ(m.samples.size(), 5u);
  const auto params = fx.params(10);
  EXPECT_EQ(params.proj.shape(), (std::vector<std::size_t>{16, 8}));
  for (const auto& id : fx.sample_ids()) {
    const auto s = fx.sample(id, 10);
    EXPECT_EQ(s.mask_count(), 4u);
    EXPECT_EQ(s.e_sen.size(), 8u);
    EXPECT_EQ(s.gt_mask.shape(), (std::vector<std::size_t>{56, 56}));
    EXPECT_TRUE(s.cls_layers.has_value());
    EXPECT_TRUE(fx.missing_files(fx.entry(id)).empty());
  }
}

TEST(Fixture, LoadingIsOrderIndependent) {
  const auto fx = load_fixture(copatch::test::golden_fixture());
  auto ids = fx.sample_ids();
  std::vector<SampleRecord> forward, backward;
  for (const auto& id : ids) forward.push_back(fx.sample(id, 10));
  std::reverse(ids.begin(), ids.end());
  for (const auto& id : ids) backward.push_back(fx.sample(id, 10));
  std::reverse(backward.begin(), backward.end());
  for (std::size_t i = 0; i < forward.size(); ++i) {
    EXPECT_EQ(forward[i].patch_embeddings, backward[i].patch_embeddings);
    EXPECT_EQ(forward[i].candidate_masks, backward[i].candidate_masks);
    EXPECT_EQ(forward[i].e_img, backward[i].e_img);
    EXPECT_EQ(forward[i].e_sen, backward[i].e_sen);
  }
}

TEST(Fixture, MissingFileNamesSampleAndPath) {
  const auto dir = copy_golden("missing");
  fs::remove(dir / "s002" / "masks.cpt");
  const auto fx = load_fixture(dir);
  try {
    fx.sample("s002", 10);
    FAIL();
  } catch (const FixtureError& e) {
    EXPECT_EQ(e.sample_id(), "s002");
    EXPECT_NE(std::string(e.what()).find("masks.cpt"), std::string::npos);
  }
  EXPECT_EQ(fx.missing_files(fx.entry("s002")), (std::vector<std::string>{"s002/masks.cpt"}));
  fs::remove_all(dir);
}

TEST(Fixture, WrongEmbeddingLength) {
  const auto dir = copy_golden("badlen");
  write_tensor(TensorF32({7}, 1.0f), dir / "s001" / "e_sen.cpt");
  const auto fx = load_fixture(dir);
  try {
    fx.sample("s001", 10);
    FAIL();
  } catch (const FixtureError& e) {
    EXPECT_EQ(e.sample_id(), "s001");
    EXPECT_NE(std::string(e.what()).find("e_sen"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Fixture, ShapeMismatchReported) {
  const auto dir = copy_golden("badshape");
  write_tensor(TensorF32({7, 7, 15}, 1.0f), dir / "s000" / "patches_l10.cpt");
  write_tensor(Bitmap({4, 56, 56}, std::uint8_t{2}), dir / "s003" / "masks.cpt");
  const auto fx = load_fixture(dir);
  EXPECT_THROW(fx.sample("s000", 10), FixtureError);
  EXPECT_THROW(fx.sample("s003", 10), FixtureError);
  EXPECT_NO_THROW(fx.sample("s000", 8));
  fs::remove_all(dir);
}

TEST(Fixture, UnknownLayer) {
  const auto fx = load_fixture(copatch::test::golden_fixture());
  EXPECT_THROW(fx.sample("s000", 3), FixtureError);
  EXPECT_THROW(fx.sample("nope", 10), FixtureError);
}

TEST(Fixture, VersionMismatch) {
  const auto dir = copy_golden("version");
  auto j = read_json(dir / "manifest.json");
  j["version"] = 2;
  write_json(dir / "manifest.json", j);
  EXPECT_THROW(load_fixture(dir), FixtureError);
  fs::remove_all(dir);
}

TEST(Fixture, MissingManifestAndBadJson) {
  EXPECT_THROW(load_fixture("/nonexistent"), FixtureError);
  const auto dir = copy_golden("badjson");
  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(load_fixture(dir), FixtureError);
  fs::remove_all(dir);
}

TEST(Fixture, CorruptTensorBecomesFixtureError) {
  const auto dir = copy_golden("corrupt");
  std::ofstream(dir / "s004" / "gt.cpt", std::ios::binary) << "XXXXjunk";
  const auto fx = load_fixture(dir);
  try {
    fx.sample("s004", 10);
    FAIL();
  } catch (const FixtureError& e) {
    EXPECT_EQ(e.sample_id(), "s004");
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
  fs::remove_all(dir);
}
