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

#include <numeric>
#include <random>

#include "cbt/masked_exec.hpp"
#include "test_util.hpp"

namespace cbt {
namespace {

TEST(CostPerPositionTest, SingleMac) {
  EXPECT_EQ(cost_per_position(1, 1, 1), 3u);
}

TEST(CostPerPositionTest, ThreeBySixteen) {
  EXPECT_EQ(cost_per_position(3, 16, 16), 4624u);
}

TEST(CostPerPositionTest, LinearInOutChannels) {
  for (std::size_t k : {1, 3, 5}) {
    for (std::size_t c : {1, 4, 9}) {
      EXPECT_EQ(cost_per_position(k, c, 14), 2 * cost_per_position(k, c, 7));
    }
  }
}

TEST(MaskedConvTest, AllActiveEqualsDense) {
  std::mt19937_64 rng(21);
  const auto in = testing::random_tensor(rng, {3, 6, 5});
  const auto p = testing::random_conv(rng, 4, 3, 3);
  const Tensor carry({4, 6, 5}, 42.0f);
  const auto r = masked_conv2d(in, p, PixelMask::all_active(6, 5), carry);
  EXPECT_TRUE(bitwise_equal(r.output, conv2d(in, p)));
  EXPECT_EQ(r.flops, 30 * cost_per_position(p));
}

TEST(MaskedConvTest, AllInactiveReturnsCarry) {
  std::mt19937_64 rng(22);
  const auto in = testing::random_tensor(rng, {2, 4, 4});
  const auto p = testing::random_conv(rng, 2, 2, 3);
  const auto carry = testing::random_tensor(rng, {2, 4, 4});
  const auto mask = PixelMask::intersect(PixelMask::all_active(4, 4),
                                         std::vector<std::uint8_t>(16, 0));
  const auto r = masked_conv2d(in, p, mask, carry);
  EXPECT_TRUE(bitwise_equal(r.output, carry));
  EXPECT_EQ(r.flops, 0u);
}

TEST(MaskedConvTest, SingleActivePosition) {
  std::mt19937_64 rng(23);
  const auto in = testing::random_tensor(rng, {4, 3, 3});
  const auto p = testing::random_conv(rng, 8, 4, 1);
  const auto carry = testing::random_tensor(rng, {8, 3, 3});
  std::vector<std::uint8_t> keep(9, 0);
  keep[4] = 1;
  const auto mask = PixelMask::intersect(PixelMask::all_active(3, 3), keep);
  const auto r = masked_conv2d(in, p, mask, carry);
  EXPECT_EQ(r.flops, 72u);  // (2*1*1*4 + 1) * 8
  const auto dense = conv2d(in, p);
  for (std::size_t o = 0; o < 8; ++o) {
    for (std::size_t pos = 0; pos < 9; ++pos) {
      const float want = pos == 4 ? dense.data()[o * 9 + pos] : carry.data()[o * 9 + pos];
      EXPECT_EQ(r.output.data()[o * 9 + pos], want);
    }
  }
}

TEST(MaskedConvTest, RandomMasksProperty) {
  std::mt19937_64 rng(24);
  std::uniform_int_distribution<std::size_t> dim(1, 7);
  std::uniform_int_distribution<std::size_t> ks(0, 2);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = dim(rng), w = dim(rng), cin = dim(rng), cout = dim(rng);
    const std::size_t k = 2 * ks(rng) + 1;
    const auto in = testing::random_tensor(rng, {cin, h, w});
    const auto p = testing::random_conv(rng, cout, cin, k);
    const auto carry = testing::random_tensor(rng, {cout, h, w});
    const auto mask = testing::random_mask(rng, h, w, frac(rng));
    const auto r = masked_conv2d(in, p, mask, carry);
    EXPECT_EQ(r.flops, mask.active_count() * (2 * k * k * cin + 1) * cout);
    const auto ref = testing::reference_conv(in, p);
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t pos = 0; pos < h * w; ++pos) {
        const std::size_t i = o * h * w + pos;
        if (mask.active(pos)) {
          EXPECT_NEAR(r.output.data()[i], ref.data()[i], 1e-6);
        } else {
          EXPECT_EQ(std::bit_cast<std::uint32_t>(r.output.data()[i]),
                    std::bit_cast<std::uint32_t>(carry.data()[i]));
        }
      }
    }
  }
}

TEST(MaskedConvTest, ZeroReadsIgnoreFrozenNeighbours) {
  Tensor in({1, 1, 3}, {1.0f, 100.0f, 1.0f});
  ConvParams p(1, 1, 3);
  std::fill(p.weights.begin(), p.weights.end(), 1.0f);
  std::vector<std::uint8_t> keep{1, 0, 1};
  const auto mask = PixelMask::intersect(PixelMask::all_active(1, 3), keep);
  const Tensor carry({1, 1, 3}, -1.0f);
  const auto frozen = masked_conv2d(in, p, mask, carry, FrozenReads::kCarry);
  const auto zeroed = masked_conv2d(in, p, mask, carry, FrozenReads::kZero);
  EXPECT_EQ(frozen.output.data()[0], 101.0f);
  EXPECT_EQ(zeroed.output.data()[0], 1.0f);
  EXPECT_EQ(zeroed.output.data()[1], -1.0f);
}

TEST(MaskedConvTest, CarryShapeMismatch) {
  Tensor in({2, 3, 3});
  ConvParams p(4, 2, 1);
  EXPECT_THROW(masked_conv2d(in, p, PixelMask::all_active(3, 3), Tensor({2, 3, 3})),
               ConfigError);
  EXPECT_THROW(masked_conv2d(in, p, PixelMask::all_active(3, 4), Tensor({4, 3, 3})),
               ConfigError);
}

TEST(PixelMaskTest, IntersectionOnlyShrinks) {
  std::mt19937_64 rng(25);
  auto mask = PixelMask::all_active(5, 5);
  for (int step = 0; step < 10; ++step) {
    const auto next = PixelMask::intersect(
        mask, testing::random_mask(rng, 5, 5, 0.8).bits());
    EXPECT_TRUE(next.subset_of(mask));
    EXPECT_LE(next.active_count(), mask.active_count());
    const auto bits = next.bits();
    EXPECT_EQ(next.active_count(),
              static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)));
    mask = next;
  }
}

TEST(FlopsLedgerTest, SingleEntry) {
  FlopsLedger l;
  l.record(0, 100);
  EXPECT_EQ(l.total(), 100u);
}

TEST(FlopsLedgerTest, CumulativeAtExits) {
  FlopsLedger l;
  l.record(0, 100, true);
  l.record(1, 50, true);
  EXPECT_EQ(l.exit_totals(), (std::vector<std::uint64_t>{100, 150}));
}

TEST(FlopsLedgerTest, OutOfOrderIsUsageError) {
  FlopsLedger l;
  l.record(3, 1);
  EXPECT_THROW(l.record(3, 1), UsageError);
  EXPECT_THROW(l.record(1, 1), UsageError);
}

TEST(FlopsLedgerTest, RandomSequenceMatchesSummation) {
  std::mt19937_64 rng(26);
  std::uniform_int_distribution<std::uint64_t> amount(0, 1'000'000);
  std::bernoulli_distribution boundary(0.3);
  for (int trial = 0; trial < 20; ++trial) {
    FlopsLedger l;
    std::vector<std::uint64_t> values;
    std::vector<std::size_t> exits_at;
    for (std::size_t s = 0; s < 25; ++s) {
      values.push_back(amount(rng));
      const bool b = boundary(rng);
      if (b) exits_at.push_back(s);
      l.record(s, values.back(), b);
    }
    EXPECT_EQ(l.total(), std::accumulate(values.begin(), values.end(), std::uint64_t{0}));
    ASSERT_EQ(l.exit_totals().size(), exits_at.size());
    for (std::size_t e = 0; e < exits_at.size(); ++e) {
      const auto want = std::accumulate(values.begin(),
                                        values.begin() + exits_at[e] + 1,
                                        std::uint64_t{0});
      EXPECT_EQ(l.exit_totals()[e], want);
      if (e > 0) {
        EXPECT_GE(l.exit_totals()[e], l.exit_totals()[e - 1]);
      }
    }
  }
}

}  // namespace
}  // namespace cbt
