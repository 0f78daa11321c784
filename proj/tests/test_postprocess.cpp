#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pclformer/error.hpp"
#include "pclformer/postprocess.hpp"
#include "pclformer/random.hpp"

using namespace pclformer;

namespace {

Prediction pred(double s, double e, int c, double score, std::string vid = "v") {
  return {std::move(vid), s, e, c, score};
}

Segment window(std::size_t start, std::size_t length) {
  return {"v", start, length, length, Tensor::zeros({1})};
}

std::vector<Prediction> random_predictions(CounterRng& rng, std::size_t n) {
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(rng.uniform_int(0, 30));
    const double len = static_cast<double>(rng.uniform_int(1, 20));
    // Coarse scores make ties, exercising the tie-break.
    const double score = static_cast<double>(rng.uniform_int(1, 10)) / 10.0;
    out.push_back(pred(s, s + len, static_cast<int>(rng.uniform_int(1, 2)), score,
                       rng.uniform_int(0, 3) == 0 ? "w" : "v"));
  }
  return out;
}

}  // namespace

TEST(FilterTest, Examples) {
  EXPECT_EQ(filter_segments({{0.0, 1.0}}), std::vector<std::size_t>{0});
  EXPECT_TRUE(filter_segments({{1.0, 0.0}}).empty());
  EXPECT_EQ(filter_segments({{0.5, 0.5}}, 0.5), std::vector<std::size_t>{0});
  EXPECT_EQ(filter_segments({{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}, {0.3, 0.7}}, 0.5), (std::vector<std::size_t>{1, 3}));
  EXPECT_THROW(filter_segments({{0.5}}), DimensionError);
}

TEST(ScoreTest, Examples) {
  const std::vector<Segment> one{window(32, 64)};
  auto p = score_predictions(one, {{0.0, 1.0, 0.0}}, {{0.0, 1.0, 0.0}});
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].score, 1.0);
  EXPECT_EQ(p[0].c, 1);
  EXPECT_EQ(p[0].t_s, 32.0);
  EXPECT_EQ(p[0].t_e, 96.0);

  EXPECT_EQ(score_predictions(one, {{0.0, 1.0, 0.0}}, {{1.0, 0.0, 0.0}})[0].score, 0.0);
  auto q = score_predictions(one, {{0.05, 0.15, 0.8}}, {{0.0, 0.1, 0.9}});
  EXPECT_EQ(q[0].c, 2);
  EXPECT_NEAR(q[0].score, 0.72, 1e-12);

  // Background probability never wins the argmax.
  EXPECT_EQ(score_predictions(one, {{0.9, 0.04, 0.06}}, {{}})[0].c, 2);
  EXPECT_NEAR(score_predictions(one, {{0.9, 0.04, 0.06}}, {{}})[0].score, 0.06, 1e-15);
  EXPECT_THROW(score_predictions(one, {}, {}), DimensionError);
}

TEST(BrmTest, Examples) {
  const std::vector<Prediction> apart{pred(0, 10, 1, 0.5), pred(20, 30, 1, 0.6), pred(0, 10, 2, 0.7)};
  EXPECT_EQ(brm_refine(apart, 0.1), apart);

  auto dropped = brm_refine({pred(0, 10, 1, 0.05), pred(20, 30, 1, 0.6)}, 0.1);
  ASSERT_EQ(dropped.size(), 1u);
  EXPECT_EQ(dropped[0].score, 0.6);

  auto merged = brm_refine({pred(0, 64, 1, 0.9), pred(32, 96, 1, 0.8)}, 0.1, 0.3);
  ASSERT_EQ(merged.size(), 1u);
  EXPECT_EQ(merged[0], pred(0, 96, 1, 0.9));

  // Different classes or videos never merge; merging can be turned off.
  EXPECT_EQ(brm_refine({pred(0, 64, 1, 0.9), pred(32, 96, 2, 0.8)}, 0.1).size(), 2u);
  EXPECT_EQ(brm_refine({pred(0, 64, 1, 0.9), pred(32, 96, 1, 0.8, "w")}, 0.1).size(), 2u);
  EXPECT_EQ(brm_refine({pred(0, 64, 1, 0.9), pred(32, 96, 1, 0.8)}, 0.1, 0.3, false).size(), 2u);

  // Chains merge transitively into one span.
  auto chain = brm_refine({pred(0, 64, 1, 0.5), pred(32, 96, 1, 0.7), pred(64, 128, 1, 0.6)}, 0.1);
  ASSERT_EQ(chain.size(), 1u);
  EXPECT_EQ(chain[0], pred(0, 128, 1, 0.7));
  EXPECT_THROW(brm_refine(apart, 1.5), ParameterError);
}

TEST(NmsTest, Examples) {
  EXPECT_EQ(nms({pred(0, 10, 1, 0.3)}, 0.4), std::vector<Prediction>{pred(0, 10, 1, 0.3)});
  EXPECT_EQ(nms({pred(0, 10, 1, 0.3), pred(20, 30, 1, 0.4)}, 0.4).size(), 2u);
  auto kept = nms({pred(0, 10, 1, 0.8), pred(0, 10, 1, 0.9)}, 0.4);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, 0.9);
  // Exactly at the threshold is not suppressed.
  EXPECT_EQ(nms({pred(0, 10, 1, 0.9), pred(5, 15, 1, 0.8)}, 1.0 / 3.0).size(), 2u);
  EXPECT_THROW(nms({}, 0.0), ParameterError);
  EXPECT_THROW(nms({}, 1.0), ParameterError);
}

TEST(NmsTest, TieBreakOrder) {
  // Equal scores: earlier start wins, then the smaller class.
  auto out = nms({pred(5, 15, 1, 0.5), pred(4, 14, 1, 0.5), pred(4, 14, 2, 0.5)}, 0.4);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], pred(4, 14, 1, 0.5));
  EXPECT_EQ(out[1], pred(4, 14, 2, 0.5));
}

TEST(NmsTest, MatchesFixedPointOracleOnOneThousandInstances) {
  CounterRng rng(3);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(0, 10));
    const auto preds = random_predictions(rng, n);
    const double thr = rng.uniform(0.05, 0.95);
    const auto got = nms(preds, thr);
    const auto fixed = oracle::nms_fixed_points(preds, thr);
    if (fixed.size() != 1 || fixed[0] != got) ++mismatches;

    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NE(std::find(preds.begin(), preds.end(), got[i]), preds.end());
      for (std::size_t j = i + 1; j < got.size(); ++j) {
        if (got[i].c == got[j].c && got[i].video_id == got[j].video_id) {
          EXPECT_LE(temporal_iou(got[i].interval(), got[j].interval()), thr);
        }
      }
    }
  }
  EXPECT_EQ(mismatches, 0u);
}

TEST(PostprocessTest, ChainIsDeterministic) {
  CounterRng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto preds = random_predictions(rng, 12);
    auto run = [&] { return nms(brm_refine(preds, 0.2), 0.4); };
    EXPECT_EQ(run(), run());
    auto shuffled = preds;
    std::reverse(shuffled.begin(), shuffled.end());
    EXPECT_EQ(nms(shuffled, 0.4), nms(preds, 0.4));
  }
}
