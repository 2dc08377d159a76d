/* Copyright 2026 The CBT Runtime Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "cbt/calibration.hpp"
#include "test_util.hpp"

namespace cbt {
namespace {

ConfidenceGaps present(std::vector<double> g) {
  return {g, std::vector<bool>(g.size(), false)};
}

TEST(ClassMeanTableTest, TwoPixelHandAccumulation) {
  ClassMeanTable t(1, 2);
  Tensor probs({2, 1, 2}, {0.8f, 0.4f, 0.2f, 0.6f});
  const std::vector<std::uint8_t> labels{0, 1};
  t.add(std::span(&probs, 1), labels, std::nullopt);
  EXPECT_NEAR(t.mean(0, 0, 0), 0.8, 1e-7);
  EXPECT_NEAR(t.mean(0, 0, 1), 0.2, 1e-7);
  EXPECT_NEAR(t.mean(0, 1, 0), 0.4, 1e-7);
  EXPECT_NEAR(t.mean(0, 1, 1), 0.6, 1e-7);
}

TEST(ClassMeanTableTest, SymmetricAverage) {
  ClassMeanTable t(1, 2);
  Tensor probs({2, 1, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  const std::vector<std::uint8_t> labels{0, 0};
  t.add(std::span(&probs, 1), labels, std::nullopt);
  EXPECT_EQ(t.mean(0, 0, 0), 0.5);
  EXPECT_EQ(t.mean(0, 0, 1), 0.5);
  EXPECT_EQ(t.count(0), 2u);
}

TEST(ClassMeanTableTest, AbsentClassFlagged) {
  ClassMeanTable t(1, 3);
  Tensor probs({3, 1, 2}, std::vector<float>(6, 1.0f / 3));
  const std::vector<std::uint8_t> labels{0, 1};
  t.add(std::span(&probs, 1), labels, std::nullopt);
  EXPECT_EQ(t.count(2), 0u);
  EXPECT_TRUE(t.absent(2));
  EXPECT_FALSE(t.absent(0));
  const auto p = average_over_layers(t);
  EXPECT_TRUE(p.absent[2]);
  const auto g = confidence_gaps(p);
  EXPECT_TRUE(g.absent[2]);
}

TEST(ClassMeanTableTest, IgnoreLabelExcluded) {
  ClassMeanTable t(1, 2);
  Tensor probs({2, 1, 2}, {0.8f, 0.1f, 0.2f, 0.9f});
  const std::vector<std::uint8_t> labels{0, 255};
  t.add(std::span(&probs, 1), labels, std::uint8_t{255});
  EXPECT_EQ(t.count(0), 1u);
  EXPECT_EQ(t.count(1), 0u);
  EXPECT_THROW(t.add(std::span(&probs, 1), labels, std::nullopt), DataError);
}

TEST(AverageOverLayersTest, SingleExitIsIdentity) {
  ClassMeanTable t(1, 2);
  Tensor probs({2, 1, 1}, {0.3f, 0.7f});
  const std::vector<std::uint8_t> labels{1};
  t.add(std::span(&probs, 1), labels, std::nullopt);
  const auto p = average_over_layers(t);
  EXPECT_EQ(p.at(1, 0), t.mean(0, 1, 0));
  EXPECT_EQ(p.at(1, 1), t.mean(0, 1, 1));
}

TEST(AverageOverLayersTest, TwoExitsOpposite) {
  ClassMeanTable t(2, 2);
  std::vector<Tensor> probs{Tensor({2, 1, 1}, {1.0f, 0.0f}),
                            Tensor({2, 1, 1}, {0.0f, 1.0f})};
  const std::vector<std::uint8_t> labels{0};
  t.add(probs, labels, std::nullopt);
  const auto p = average_over_layers(t);
  EXPECT_EQ(p.at(0, 0), 0.5);
  EXPECT_EQ(p.at(0, 1), 0.5);
}

TEST(AverageOverLayersTest, FourExitsMatchSummationOracle) {
  std::mt19937_64 rng(51);
  ClassMeanTable t(4, 3);
  std::vector<Tensor> probs;
  for (int n = 0; n < 4; ++n) {
    probs.push_back(softmax_channels(testing::random_tensor(rng, {3, 4, 4}, -3, 3)));
  }
  std::vector<std::uint8_t> labels(16);
  for (std::size_t i = 0; i < 16; ++i) labels[i] = static_cast<std::uint8_t>(i % 3);
  t.add(probs, labels, std::nullopt);
  const auto p = average_over_layers(t);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t j = 0; j < 3; ++j) {
      // Direct mean over (exit, pixel) pairs of class k.
      double s = 0.0;
      std::size_t cnt = 0;
      for (std::size_t pos = 0; pos < 16; ++pos) {
        if (labels[pos] != k) continue;
        ++cnt;
      }
      for (int n = 0; n < 4; ++n) {
        double sn = 0.0;
        for (std::size_t pos = 0; pos < 16; ++pos) {
          if (labels[pos] == k) sn += probs[n].data()[j * 16 + pos];
        }
        s += sn / static_cast<double>(cnt);
      }
      EXPECT_NEAR(p.at(k, j), s / 4.0, 1e-12);
    }
  }
}

TEST(ConfidenceGapsTest, Cases) {
  ClassConfidenceMatrix p{3,
                          {0.7, 0.2, 0.1,   //
                           0.0, 1.0, 0.0,   //
                           1.0 / 3, 1.0 / 3, 1.0 / 3},
                          {false, false, false}};
  const auto g = confidence_gaps(p);
  EXPECT_NEAR(g.values[0], 0.5, 1e-15);
  EXPECT_EQ(g.values[1], 1.0);
  EXPECT_EQ(g.values[2], 0.0);
}

TEST(ScaleThresholdsTest, TwoClassEndpoints) {
  const auto t = scale_thresholds(present({0.5, 0.1}), 0.9, 0.998);
  EXPECT_EQ(t.thresholds[0], 0.9);
  EXPECT_EQ(t.thresholds[1], 0.998);
}

TEST(ScaleThresholdsTest, MiddleValue) {
  const auto t = scale_thresholds(present({0.5, 0.3, 0.1}), 0.9, 0.998);
  EXPECT_EQ(t.thresholds[0], 0.9);
  EXPECT_NEAR(t.thresholds[1], 0.949, 1e-12);
  EXPECT_EQ(t.thresholds[2], 0.998);
}

TEST(ScaleThresholdsTest, DegenerateGapsAllBeta) {
  const auto t = scale_thresholds(present({0.3, 0.3, 0.3}), 0.9, 0.998);
  for (double v : t.thresholds) EXPECT_EQ(v, 0.998);
}

TEST(ScaleThresholdsTest, AbsentClassesGetBetaAndAreExcluded) {
  ConfidenceGaps g{{0.5, 0.0, 0.1, 0.3}, {false, true, false, false}};
  const auto t = scale_thresholds(g, 0.9, 0.998);
  EXPECT_EQ(t.thresholds[1], 0.998);
  EXPECT_EQ(t.thresholds[0], 0.9);
  EXPECT_EQ(t.thresholds[2], 0.998);
  EXPECT_NEAR(t.thresholds[3], 0.949, 1e-12);
  EXPECT_EQ(t.absent_classes, std::vector<std::size_t>{1});
}

TEST(ScaleThresholdsTest, AlphaNotBelowBetaRejected) {
  EXPECT_THROW(scale_thresholds(present({0.5, 0.1}), 0.998, 0.998), ConfigError);
  EXPECT_THROW(scale_thresholds(present({0.5, 0.1}), 0.99, 0.9), ConfigError);
  EXPECT_THROW(scale_thresholds(present({0.5, 0.1}), 0.0, 0.9), ConfigError);
}

TEST(ScaleThresholdsTest, OrderReversalAndRangeProperty) {
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> g(2 + trial % 7);
    for (auto& v : g) v = u(rng);
    double a = 0.5 + 0.4 * u(rng);
    double b = a + (1.0 - a) * (0.01 + 0.99 * u(rng));
    const auto t = scale_thresholds(present(g), a, b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      EXPECT_GE(t.thresholds[i], a);
      EXPECT_LE(t.thresholds[i], b);
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (g[i] > g[j]) {
          EXPECT_LT(t.thresholds[i], t.thresholds[j]);
        }
      }
    }
  }
}

TEST(ScaleThresholdsTest, PermutationEquivariant) {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> g(6);
  for (auto& v : g) v = u(rng);
  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> gp(6);
  for (std::size_t i = 0; i < 6; ++i) gp[perm[i]] = g[i];
  const auto t = scale_thresholds(present(g), 0.7, 0.998);
  const auto tp = scale_thresholds(present(gp), 0.7, 0.998);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(tp.thresholds[perm[i]], t.thresholds[i]);
}

// Per-pixel brute force over a small image set, written without the
// ClassMeanTable accumulator.
std::vector<double> brute_force_means(const MultiExitNet& net, const Dataset& ds,
                                      std::uint8_t ignore) {
  const std::size_t n_exits = net.config.num_exits;
  const std::size_t k = net.config.num_classes;
  std::vector<double> sums(n_exits * k * k, 0.0);
  std::vector<double> counts(k, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto img = ds.image(i);
    const auto labels = ds.labels(i);
    const auto probs = forward_dense(net, img);
    for (std::size_t y = 0; y < ds.height(); ++y) {
      for (std::size_t x = 0; x < ds.width(); ++x) {
        const auto l = labels[y * ds.width() + x];
        if (l == ignore) continue;
        counts[l] += 1.0;
        for (std::size_t n = 0; n < n_exits; ++n)
          for (std::size_t j = 0; j < k; ++j)
            sums[(n * k + l) * k + j] += probs[n].at(j, y, x);
      }
    }
  }
  for (std::size_t n = 0; n < n_exits; ++n)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < k; ++j)
        if (counts[c] > 0) sums[(n * k + c) * k + j] /= counts[c];
  return sums;
}

TEST(AccumulateClassMeansTest, MatchesBruteForce) {
  SyntheticSpec spec;
  spec.num_images = 4;
  spec.height = 12;
  spec.width = 12;
  const auto ds = generate_synthetic_dataset(spec);
  const auto net = build_fixture_model(3, ModelConfig{});
  const auto table = accumulate_class_means(net, ds);
  const auto want = brute_force_means(net, ds, kIgnoreLabel);
  const std::size_t k = net.config.num_classes;
  for (std::size_t n = 0; n < net.config.num_exits; ++n)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < k; ++j)
        EXPECT_NEAR(table.mean(n, c, j), want[(n * k + c) * k + j], 1e-6);
}

TEST(AccumulateClassMeansTest, IndependentOfJobs) {
  const auto ds = generate_synthetic_dataset({});
  const auto net = build_fixture_model(3, ModelConfig{});
  const auto a = average_over_layers(accumulate_class_means(net, ds, kIgnoreLabel, 1));
  const auto b = average_over_layers(accumulate_class_means(net, ds, kIgnoreLabel, 4));
  EXPECT_EQ(a.values, b.values);
}

TEST(AccumulateClassMeansTest, RowsAreDistributions) {
  const auto ds = generate_synthetic_dataset({});
  const auto net = build_fixture_model(3, ModelConfig{});
  const auto table = accumulate_class_means(net, ds);
  for (std::size_t n = 0; n < table.num_exits(); ++n) {
    for (std::size_t k = 0; k < table.num_classes(); ++k) {
      ASSERT_FALSE(table.absent(k));
      const auto v = table.mean_vector(n, k);
      EXPECT_NEAR(std::accumulate(v.begin(), v.end(), 0.0), 1.0, 1e-5);
    }
  }
}

TEST(AccumulateClassMeansTest, Errors) {
  const auto net = build_fixture_model(3, ModelConfig{});
  EXPECT_THROW(accumulate_class_means(net, Dataset(4, 8, 8)), DataError);
  SyntheticSpec spec;
  spec.num_classes = 3;
  EXPECT_THROW(accumulate_class_means(net, generate_synthetic_dataset(spec)),
               ConfigError);
}

TEST(ThresholdsJsonTest, RoundTrip) {
  ThresholdVector t{{0.9, 0.949, 0.998}, 0.9, 0.998, {}};
  EXPECT_EQ(load_thresholds(save_thresholds(t)), t);
  ThresholdVector with_absent{{0.9, 0.998, 0.93}, 0.9, 0.998, {1}};
  EXPECT_EQ(load_thresholds(save_thresholds(with_absent)), with_absent);
}

TEST(ThresholdsJsonTest, OutOfRangeEntryRejected) {
  const std::string text =
      R"({"version":1,"alpha":0.9,"beta":0.998,"num_classes":2,"thresholds":[1.5,0.9],"absent_classes":[]})";
  EXPECT_THROW(load_thresholds(text), FormatError);
}

TEST(ThresholdsJsonTest, MalformedRejected) {
  EXPECT_THROW(load_thresholds("{not json"), FormatError);
  EXPECT_THROW(load_thresholds(R"({"version":1})"), FormatError);
  EXPECT_THROW(
      load_thresholds(
          R"({"version":1,"alpha":0.9,"beta":0.9,"num_classes":2,"thresholds":[0.9,0.9]})"),
      FormatError);
  EXPECT_THROW(
      load_thresholds(
          R"({"version":1,"alpha":0.9,"beta":0.99,"num_classes":3,"thresholds":[0.9,0.95]})"),
      FormatError);
}

TEST(ThresholdsJsonTest, ClassCountCheckedAtUse) {
  ThresholdVector t{{0.9, 0.998}, 0.9, 0.998, {}};
  EXPECT_THROW(check_num_classes(t, 4), ConfigError);
  const auto net = build_fixture_model(0, ModelConfig{});
  EXPECT_THROW(forward_adaptive(net, Tensor({3, 4, 4}), PerClassPolicy{t}),
               ConfigError);
}

}  // namespace
}  // namespace cbt
