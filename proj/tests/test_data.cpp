#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "fixtures.hpp"
#include "qfm/data.hpp"
#include "qfm/error.hpp"

using namespace qfm;

namespace {

std::set<std::string> refs_of(const Manifest& m, const std::vector<std::string>& ids) {
  std::set<std::string> out;
  for (const auto& id : ids) out.insert(m.find(id).reference_id);
  return out;
}

std::string error_of(const std::string& text) {
  try {
    parse_manifest(text, "m.csv");
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(MosProxy, UndistortedIsExactlyHundred) {
  EXPECT_EQ(mos_proxy(DistortionParams{}, DistortionWeights{}), 100.0f);
}

TEST(MosProxy, StrictlyDecreasingInEachKnob) {
  const DistortionWeights w;
  DistortionParams p{0.5f, 0.05f, 0.8f, 0.2f};
  float prev = mos_proxy(p, w);
  for (int i = 1; i <= 25; ++i) {
    p.blur_sigma = 0.5f + 0.1f * static_cast<float>(i);
    const float cur = mos_proxy(p, w);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  DistortionParams q{};
  EXPECT_LT(mos_proxy({0, 0.2f, 1, 0}, w), mos_proxy({0, 0.1f, 1, 0}, w));
  EXPECT_LT(mos_proxy({0, 0, 0.5f, 0}, w), mos_proxy({0, 0, 0.9f, 0}, w));
  EXPECT_LT(mos_proxy({0, 0, 1, 0.7f}, w), mos_proxy(q, w));
}

TEST(Generate, KadidShapedCounts) {
  SyntheticOptions o;
  o.n_contents = 81;
  o.distortions_per_content = 125;
  o.image_size = 8;
  const Manifest m = generate_synthetic(o);
  EXPECT_EQ(m.samples.size(), 10125u);
  std::set<std::string> refs, ids;
  for (const auto& s : m.samples) {
    refs.insert(s.reference_id);
    ids.insert(s.id);
    ASSERT_TRUE(s.score.has_value());
  }
  EXPECT_EQ(refs.size(), 81u);
  EXPECT_EQ(ids.size(), 10125u);
  EXPECT_TRUE(m.synthetic());
}

TEST(Generate, DeterministicPerSeed) {
  const Manifest a = qfm::testing::tiny_manifest(3, ""), b = qfm::testing::tiny_manifest(3, "");
  const Manifest c = qfm::testing::tiny_manifest(4, "");
  ASSERT_EQ(a.samples.size(), b.samples.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(*a.samples[i].score, *b.samples[i].score);
    const auto da = a.samples[i].image.data(), db = b.samples[i].image.data();
    EXPECT_TRUE(std::equal(da.begin(), da.end(), db.begin()));
    const auto dc = c.samples[i].image.data();
    any_diff |= !std::equal(da.begin(), da.end(), dc.begin());
  }
  EXPECT_TRUE(any_diff);
}

TEST(Generate, ImagesInRangeAndScoresMatchMetadata) {
  const Manifest m = qfm::testing::tiny_manifest(5, "p");
  for (const auto& s : m.samples) {
    EXPECT_EQ(s.image.shape(), (Shape{3, 8, 8}));
    for (float v : s.image.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    EXPECT_GT(*s.score, 0.0f);
    EXPECT_LE(*s.score, 100.0f);
    EXPECT_EQ(s.id.rfind("p", 0), 0u);
  }
  EXPECT_EQ(m.metadata.at("w_noise"), std::to_string(DistortionWeights{}.noise));
  EXPECT_THROW(qfm::testing::tiny_manifest(5, "", 0, 3), ConfigError);
}

TEST(Generate, WritesReadableFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "qfm_data_test";
  std::filesystem::remove_all(dir);
  SyntheticOptions o;
  o.n_contents = 2;
  o.distortions_per_content = 3;
  o.image_size = 8;
  o.name = "written";
  const Manifest m = generate_synthetic(o, dir);
  const Manifest back = load_manifest(dir / "manifest.csv");
  std::filesystem::remove_all(dir);
  ASSERT_EQ(back.samples.size(), 6u);
  EXPECT_EQ(back.name, "written");
  EXPECT_TRUE(back.synthetic());
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(back.samples[i].score, m.samples[i].score);
    const auto a = back.samples[i].image.data(), b = m.samples[i].image.data();
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 0.5f / 255.0f + 1e-6f);
  }
}

TEST(Split, SizesAndDeterminism) {
  Manifest m;
  for (int i = 0; i < 100; ++i) m.samples.push_back({"s" + std::to_string(i), "", {}, 1.0f, ""});
  const auto plans = split(m, 0.8, 3, 7);
  ASSERT_EQ(plans.size(), 3u);
  for (const auto& p : plans) {
    EXPECT_EQ(p.train_ids.size(), 80u);
    EXPECT_EQ(p.test_ids.size(), 20u);
  }
  const auto again = split(m, 0.8, 3, 7);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(plans[r].train_ids, again[r].train_ids);
    EXPECT_EQ(plans[r].test_ids, again[r].test_ids);
  }
  EXPECT_NE(plans[0].test_ids, plans[1].test_ids);
  EXPECT_THROW(split(m, 1.0, 1, 0), ConfigError);
  EXPECT_THROW(split(m, 0.001, 1, 0), ConfigError);
}

TEST(Split, ReferenceDisjointOnRandomManifests) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Manifest m;
    m.metadata["synthetic"] = "true";
    const std::size_t refs = 2 + rng.index(30);
    for (std::size_t r = 0; r < refs; ++r) {
      const std::size_t k = 1 + rng.index(6);
      for (std::size_t d = 0; d < k; ++d) {
        m.samples.push_back({"r" + std::to_string(r) + "_" + std::to_string(d), "", {},
                             rng.uniform(0, 100), "r" + std::to_string(r)});
      }
    }
    const double fraction = rng.uniform(0.2f, 0.8f);
    std::vector<SplitPlan> plans;
    try {
      plans = split(m, fraction, 2, trial);
    } catch (const ConfigError&) {
      continue;  // too few groups for this fraction
    }
    for (const auto& p : plans) {
      std::set<std::string> train(p.train_ids.begin(), p.train_ids.end());
      for (const auto& id : p.test_ids) EXPECT_EQ(train.count(id), 0u);
      EXPECT_EQ(p.train_ids.size() + p.test_ids.size(), m.samples.size());
      const auto tr = refs_of(m, p.train_ids), te = refs_of(m, p.test_ids);
      for (const auto& r : te) EXPECT_EQ(tr.count(r), 0u) << "trial " << trial;
    }
  }
}

TEST(Manifest, ParsesWellFormedFileWithEitherLineEnding) {
  const std::string lf = "#name=demo\nid,path,score,reference_id\na,a.ppm,10,r1\nb,b.ppm,20.5,r1\nc,c.ppm,30,r2\n";
  std::string crlf;
  for (char c : lf) {
    if (c == '\n') crlf += '\r';
    crlf += c;
  }
  for (const auto& text : {lf, crlf}) {
    const Manifest m = parse_manifest(text);
    ASSERT_EQ(m.samples.size(), 3u);
    EXPECT_EQ(m.name, "demo");
    EXPECT_EQ(m.samples[1].score, 20.5f);
    EXPECT_EQ(m.samples[2].reference_id, "r2");
    EXPECT_EQ(m.label_range(), (std::pair<float, float>{10, 30}));
  }
}

TEST(Manifest, ErrorsNameTheLine) {
  EXPECT_NE(error_of("id,path,score,reference_id\na,a.ppm,1,r\nb,b.ppm,abc,r\n").find("m.csv:3"),
            std::string::npos);
  EXPECT_NE(error_of("id,path,score,reference_id\na,a.ppm,1\n").find("m.csv:2"), std::string::npos);
  EXPECT_NE(error_of("#broken\nid,path,score,reference_id\n").find("m.csv:1"), std::string::npos);
  EXPECT_NE(error_of("a,b,c,d\n").find("header"), std::string::npos);
}

TEST(Manifest, ValidationRules) {
  EXPECT_NE(error_of("id,path,score,reference_id\na,a.ppm,1,r\nb,b.ppm,,r\n").find("no score"),
            std::string::npos);
  EXPECT_NE(error_of("id,path,score,reference_id\na,a.ppm,1,r\na,b.ppm,2,r\n").find("duplicate"),
            std::string::npos);
  const Manifest pool = parse_manifest("#labeled=false\nid,path,score,reference_id\na,a.ppm,,\nb,b.ppm,,\n");
  EXPECT_FALSE(pool.labeled());
  EXPECT_EQ(pool.samples.size(), 2u);
  EXPECT_NE(error_of("#label_min=0\n#label_max=5\nid,path,score,reference_id\na,a.ppm,9,r\n").find("range"),
            std::string::npos);
}

TEST(Ppm, RoundTripAndErrors) {
  const auto path = std::filesystem::temp_directory_path() / "qfm_ppm_test.ppm";
  Tensor img({3, 2, 3}, {0, 1, 0.5f, 0.25f, 0.75f, 1, 0, 0, 0, 1, 1, 1, 0.2f, 0.4f, 0.6f, 0.8f, 0.1f, 0.9f});
  write_ppm(path, img);
  const Tensor back = read_ppm(path);
  EXPECT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(back.at(i), img.at(i), 0.5f / 255 + 1e-6f);
  std::filesystem::remove(path);
  EXPECT_THROW(read_ppm(path), IoError);
  EXPECT_THROW(write_ppm(path, Tensor({1, 2, 2})), ShapeError);
}
