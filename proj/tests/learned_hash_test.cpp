#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lead/learned_hash.hpp"
#include "lead/rng.hpp"

using namespace lead;

namespace {

TrainingSet iota_set(std::size_t n) {
  std::vector<Key> keys(n);
  std::iota(keys.begin(), keys.end(), Key{0});
  return TrainingSet(std::move(keys));
}

TrainingSet lognormal_set(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Key> keys;
  keys.reserve(n);
  for (std::size_t i = 0; i < n; ++i) keys.push_back(static_cast<Key>(std::exp(rng.normal(0.0, 2.0)) * 1e9));
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return TrainingSet(std::move(keys));
}

TrainConfig config(LeafFamily family, std::uint32_t b, unsigned __int128 h = RingSpace{}.size()) {
  TrainConfig c;
  c.family = family;
  c.branching = b;
  c.hash_space = h;
  return c;
}

// floor(rank * H / N) computed with integers only.
std::uint64_t oracle_hash(std::uint64_t rank, unsigned __int128 h, std::uint64_t n) {
  return static_cast<std::uint64_t>(static_cast<unsigned __int128>(rank) * h / n);
}

double loss(const RmiModel& m, std::uint32_t leaf, double u, double target) {
  const double e = m.raw_prediction(leaf, u) - target;
  return e * e;
}

}  // namespace

TEST(TrainingSet, DuplicateKeysUseFirstIndex) {
  TrainingSet t({1, 5, 5, 5, 9});
  EXPECT_EQ(t.rank(0), 0u);
  EXPECT_EQ(t.rank(2), 1u);
  EXPECT_EQ(t.rank(3), 1u);
  EXPECT_EQ(t.rank(4), 4u);
  EXPECT_EQ(t.rank_of(5), 1u);
  EXPECT_EQ(t.rank_of(6), 4u);
}

TEST(TrainingSet, RejectsUnsortedKeys) {
  try {
    TrainingSet t({3, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "unsorted-keys");
  }
}

TEST(TrainingSet, SketchKeepsMinimum) {
  auto t = iota_set(50'000);
  EXPECT_EQ(t.sketch().size(), 1000u);
  EXPECT_EQ(iota_set(300).sketch().size(), 300u);
  EXPECT_EQ(iota_set(500'000).sketch().size(), 5000u);
}

TEST(Train, UniformKeysHashToThemselves) {
  auto t = iota_set(1000);
  auto m = train_rmi(t, config(LeafFamily::Linear, 4, 1000));
  EXPECT_EQ(m.version(), 1u);
  for (const auto& leaf : m.leaves()) EXPECT_DOUBLE_EQ(leaf.params[1], 1.0);
  for (Key k = 0; k < 1000; ++k) ASSERT_EQ(m.hash(k), oracle_hash(t.rank(k), 1000, 1000));
  EXPECT_EQ(m.hash(500), 500u);
}

TEST(Train, SingleKey) {
  auto m = train_rmi(TrainingSet({42}), config(LeafFamily::Linear, 1, 100));
  EXPECT_EQ(m.hash(42), 0u);
  EXPECT_EQ(m.hash(0), 0u);
  EXPECT_LT(m.hash(~Key{0}), 100u);
}

TEST(Train, TwoKeys) {
  auto m = train_rmi(TrainingSet({10, 20}), config(LeafFamily::Linear, 1, 100));
  EXPECT_EQ(m.hash(10), 0u);
  EXPECT_EQ(m.hash(20), 50u);
}

TEST(Train, EmptyDatasetFails) {
  try {
    train_rmi(TrainingSet{}, config(LeafFamily::Linear, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "empty-dataset");
  }
}

TEST(Train, MoreLeavesThanKeys) {
  auto m = train_rmi(TrainingSet({3, 7, 11}), config(LeafFamily::Cubic, 16, 300));
  EXPECT_EQ(m.hash(3), 0u);
  EXPECT_EQ(m.hash(7), 100u);
  EXPECT_EQ(m.hash(11), 200u);
}

TEST(Train, KeyBelowAllTrainingKeysMapsToZero) {
  TrainingSet t({1000, 2000, 3000, 4000});
  for (auto fam : {LeafFamily::Linear, LeafFamily::Cubic, LeafFamily::RadixTable}) {
    auto m = train_rmi(t, config(fam, 2));
    EXPECT_EQ(m.hash(5), 0u);
  }
}

TEST(Train, LeafIntervalsPartitionRanks) {
  auto t = lognormal_set(20'000, 3);
  auto m = train_rmi(t, config(LeafFamily::Cubic, 64));
  std::uint64_t prev_hi = 0;
  for (const auto& leaf : m.leaves()) {
    EXPECT_LE(leaf.rank_lo, leaf.rank_hi);
    EXPECT_GE(leaf.rank_lo, prev_hi);
    prev_hi = leaf.rank_hi;
  }
  EXPECT_EQ(m.effective_count(), t.size());
}

class FamilyTest : public ::testing::TestWithParam<LeafFamily> {};

TEST_P(FamilyTest, MonotoneOnRandomPairs) {
  auto t = lognormal_set(30'000, 11);
  auto m = train_rmi(t, config(GetParam(), 128));
  SplitMix64 rng(5);
  for (int i = 0; i < 20'000; ++i) {
    Key a = rng.next() >> (rng.below(64));
    Key b = rng.next() >> (rng.below(64));
    if (a > b) std::swap(a, b);
    ASSERT_LE(m.hash(a), m.hash(b)) << a << " " << b;
  }
  for (std::size_t i = 1; i < t.size(); ++i) ASSERT_LE(m.hash(t.keys()[i - 1]), m.hash(t.keys()[i]));
}

TEST_P(FamilyTest, ErrorBoundMatchesOracle) {
  auto t = lognormal_set(10'000, 17);
  const unsigned __int128 h = 1'000'000;
  auto m = train_rmi(t, config(GetParam(), 32, h));
  const auto stats = error_stats(m, t);
  EXPECT_GE(stats.max_log2_error, stats.avg_log2_error);
  EXPECT_GE(stats.avg_log2_error, 0.0);
  const double slack = std::ceil((std::exp2(stats.max_log2_error) - 1) * static_cast<double>(h) / t.size()) + 1;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double o = static_cast<double>(oracle_hash(t.rank(i), h, t.size()));
    ASSERT_LE(std::fabs(static_cast<double>(m.hash(t.keys()[i])) - o), slack);
  }
}

TEST_P(FamilyTest, GradientMatchesFiniteDifferences) {
  auto t = lognormal_set(5000, 23);
  auto m = train_rmi(t, config(GetParam(), 16));
  SplitMix64 rng(99);
  for (int c = 0; c < 50; ++c) {
    const Key key = t.keys()[rng.below(t.size())];
    const auto [leaf, u] = m.route(key);
    const double target = m.raw_prediction(leaf, u) + rng.uniform(-200.0, 200.0);
    const auto g = leaf_gradient(m, leaf, u, target);
    for (std::size_t p = 0; p < g.size(); ++p) {
      LeafModel lm = m.leaf(leaf);
      const double step = 1e-3 * std::max(1.0, std::fabs(lm.params[p])) / std::pow(std::max(1.0, u), p);
      auto plus = m, minus = m;
      lm.params[p] += step;
      plus.set_leaf(leaf, lm);
      lm.params[p] -= 2 * step;
      minus.set_leaf(leaf, lm);
      const double fd = (loss(plus, leaf, u, target) - loss(minus, leaf, u, target)) / (2 * step);
      ASSERT_NEAR(g[p], fd, 1e-5 * std::max(1.0, std::fabs(fd))) << "param " << p;
    }
  }
}

TEST_P(FamilyTest, SegmentRoundTrip) {
  auto t = lognormal_set(5000, 29);
  auto m = train_rmi(t, config(GetParam(), 64));
  const auto blob = serialize_changed_segments(m, 0);
  RmiModel copy = m;
  copy.set_version(0, 0);
  ASSERT_EQ(apply_segments(copy, blob), ApplyResult::Applied);
  EXPECT_EQ(copy.version(), m.version());
  for (std::uint32_t j = 0; j < m.branching(); ++j)
    for (std::size_t p = 0; p < m.param_count(); ++p)
      EXPECT_EQ(copy.leaf(j).params[p], static_cast<double>(static_cast<float>(m.leaf(j).params[p])));
  EXPECT_EQ(serialize_changed_segments(copy, 0), blob);

  auto full = deserialize_full(serialize_full(copy));
  EXPECT_EQ(full, copy);
}

INSTANTIATE_TEST_SUITE_P(Families, FamilyTest,
                         ::testing::Values(LeafFamily::Linear, LeafFamily::Cubic, LeafFamily::RadixTable),
                         [](const auto& info) { return to_string(info.param); });

TEST(Serialize, HeaderOnlyWhenNothingChanged) {
  auto m = train_rmi(iota_set(100), config(LeafFamily::Linear, 4));
  const auto blob = serialize_changed_segments(m, m.version());
  EXPECT_EQ(blob.size(), kSegmentHeaderBytes);
  EXPECT_TRUE(decode_segments(blob).leaves.empty());
}

TEST(Serialize, ThousandLinearLeavesFitBudget) {
  auto m = train_rmi(iota_set(100'000), config(LeafFamily::Linear, 1000));
  const auto blob = serialize_changed_segments(m, 0);
  EXPECT_EQ(blob.size(), kSegmentHeaderBytes + 1000 * (4 + 2 * 4 + 2 * 8));
  EXPECT_LE(blob.size(), 32u * 1024);
}

TEST(Serialize, StaleAndIncompatibleBlobs) {
  auto m = train_rmi(iota_set(100), config(LeafFamily::Linear, 4));
  const auto blob = serialize_changed_segments(m, 0);
  auto same = m;
  EXPECT_EQ(apply_segments(same, blob), ApplyResult::Stale);
  EXPECT_EQ(same, m);

  auto cubic = train_rmi(iota_set(100), config(LeafFamily::Cubic, 4));
  cubic.set_version(0, 0);
  try {
    apply_segments(cubic, blob);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "incompatible-model");
  }
}

TEST(Serialize, CorruptBlob) {
  auto m = train_rmi(iota_set(100), config(LeafFamily::Linear, 4));
  auto blob = serialize_changed_segments(m, 0);
  blob.pop_back();
  EXPECT_THROW(decode_segments(blob), Error);
  blob[0] = 'X';
  EXPECT_THROW(decode_segments(blob), Error);
}

TEST(LeafUpdate, ExactPredictionLeavesParametersAlone) {
  auto m = train_rmi(iota_set(1000), config(LeafFamily::Linear, 1, 1000));
  const auto before = m.leaf(0).params;
  leaf_update(m, 100, 100.0, 0.05);
  EXPECT_EQ(m.leaf(0).params, before);
}

TEST(LeafUpdate, InterceptMovesTowardTarget) {
  auto m = train_rmi(iota_set(1000), config(LeafFamily::Linear, 1, 1000));
  auto [leaf, u] = m.route(100);
  double prev = m.raw_prediction(leaf, u);
  for (int i = 0; i < 30'000; ++i) leaf_update(m, 100, 110.0, 1e-4);
  EXPECT_GT(m.leaf(0).params[0], 0.0);
  EXPECT_LE(m.leaf(0).params[0], 10.0);
  EXPECT_NEAR(m.raw_prediction(leaf, u), 110.0, 1.0);
  EXPECT_GT(m.raw_prediction(leaf, u), prev);
}

TEST(LeafUpdate, WidensIntervalAndStampsPending) {
  auto m = train_rmi(iota_set(1000), config(LeafFamily::Linear, 4, 1000));
  leaf_update(m, 999, 1500.0, 0.01);
  EXPECT_EQ(m.leaf(3).rank_hi, 1500u);
  EXPECT_EQ(m.leaf(3).changed_at, m.version() + 1);
  EXPECT_EQ(m.effective_count(), 1501u);
  EXPECT_EQ(m.changed_since(m.version()), std::vector<std::uint32_t>{3});
}

TEST(Anchor, FixedPoint) {
  auto m = train_rmi(iota_set(1000), config(LeafFamily::Linear, 4, 1000));
  const auto& leaf = m.leaf(1);
  adjust_anchor(m, 1, {300.0, 300.0, static_cast<double>(leaf.rank_hi)});
  EXPECT_EQ(m.leaf(1).anchor, Anchor{});
}

TEST(Anchor, OffsetAndScaleRules) {
  auto m = train_rmi(iota_set(1000), config(LeafFamily::Linear, 4, 1000));
  adjust_anchor(m, 1, {290.0, 300.0, 499.0}, 0.5);
  EXPECT_DOUBLE_EQ(m.leaf(1).anchor.offset, 5.0);
  EXPECT_DOUBLE_EQ(m.leaf(1).anchor.scale, 1.0);

  const double lo = m.leaf(2).rank_lo, hi = m.leaf(2).rank_hi;
  adjust_anchor(m, 2, {600.0, 600.0, lo + 0.8 * (hi - lo)});
  EXPECT_DOUBLE_EQ(m.leaf(2).anchor.scale, 1.04);
  adjust_anchor(m, 2, {600.0, 600.0, lo + 1.2 * (hi - lo)});
  EXPECT_DOUBLE_EQ(m.leaf(2).anchor.scale, 1.04 * 0.96);
}

TEST(Anchor, FoldedIntoWire) {
  auto m = train_rmi(iota_set(1000), config(LeafFamily::Cubic, 4, 1000));
  adjust_anchor(m, 1, {290.0, 300.0, 400.0});
  m.set_version(2, 0);
  auto copy = train_rmi(iota_set(1000), config(LeafFamily::Cubic, 4, 1000));
  ASSERT_EQ(apply_segments(copy, serialize_changed_segments(m, 1)), ApplyResult::Applied);
  for (double u = 0; u < 250; u += 10) EXPECT_NEAR(copy.raw_prediction(1, u), m.raw_prediction(1, u), 1e-3);
}

TEST(ErrorStats, PerfectAndConstantModels) {
  auto t = iota_set(10);
  auto m = train_rmi(t, config(LeafFamily::Linear, 1, 10));
  auto s = error_stats(m, t);
  EXPECT_EQ(s.max_log2_error, 0.0);
  EXPECT_EQ(s.avg_log2_error, 0.0);
  EXPECT_EQ(s.size_bytes, serialize_full(m).size());

  LeafModel flat = m.leaf(0);
  flat.params = {};
  m.set_leaf(0, flat);
  s = error_stats(m, t);
  EXPECT_DOUBLE_EQ(s.max_log2_error, std::log2(10.0));
  EXPECT_THROW(error_stats(m, TrainingSet{}), Error);
}

TEST(ErrorStats, CubicBeatsLinearOnLognormal) {
  auto t = lognormal_set(100'000, 41);
  const auto lin = error_stats(train_rmi(t, config(LeafFamily::Linear, 256)), t);
  const auto radix = error_stats(train_rmi(t, config(LeafFamily::RadixTable, 256)), t);
  const auto cubic = error_stats(train_rmi(t, config(LeafFamily::Cubic, 256)), t);
  EXPECT_LE(cubic.avg_log2_error, radix.avg_log2_error);
  EXPECT_LE(radix.avg_log2_error, lin.avg_log2_error);
  EXPECT_LT(lin.size_bytes, radix.size_bytes);
  EXPECT_LT(radix.size_bytes, cubic.size_bytes);
}

TEST(Scout, UniformPicksLinear) {
  auto r = model_scout(iota_set(5000));
  EXPECT_EQ(r.family, LeafFamily::Linear);
  EXPECT_EQ(r.branching, 64u);
  EXPECT_EQ(r.p99_error, 0.0);
}

TEST(Scout, SingleKey) {
  auto r = model_scout(TrainingSet({77}));
  EXPECT_EQ(r.family, LeafFamily::Linear);
  EXPECT_EQ(r.branching, 64u);
  EXPECT_EQ(r.p99_error, 0.0);
  EXPECT_THROW(model_scout(TrainingSet{}), Error);
}

TEST(Scout, SkewedPicksNonLinear) {
  auto t = lognormal_set(200'000, 43).sketch();
  ScoutConfig cfg;
  auto r = model_scout(t, cfg);
  // Brute-force p99 of the linear candidate at the same B.
  auto lin = train_rmi(t, config(LeafFamily::Linear, r.branching));
  std::vector<double> errs;
  for (std::size_t i = 0; i < t.size(); ++i)
    errs.push_back(std::fabs(lin.predict_rank(t.keys()[i]) - static_cast<double>(t.rank(i))));
  std::sort(errs.begin(), errs.end());
  const double lin_p99 = errs[static_cast<std::size_t>(std::ceil(0.99 * errs.size())) - 1];
  EXPECT_LE(r.p99_error, lin_p99);
}

TEST(Merge, LastWriterWinsPerLeaf) {
  auto base = train_rmi(iota_set(1000), config(LeafFamily::Linear, 4, 1000));
  auto a = base, b = base;
  leaf_update(a, 10, 30.0, 0.1);
  a.set_version(2, 5);
  auto la = a.leaf(0);
  la.changed_at = 2;
  la.author = 5;
  a.set_leaf(0, la);
  leaf_update(b, 900, 880.0, 0.1);
  auto lb = b.leaf(3);
  lb.changed_at = 2;
  lb.author = 7;
  b.set_leaf(3, lb);
  b.set_version(2, 7);

  auto ab = merge_models(a, b);
  auto ba = merge_models(b, a);
  EXPECT_EQ(ab, ba);
  EXPECT_EQ(merge_models(ab, ab), ab);
  EXPECT_EQ(merge_models(merge_models(ab, base), a), ab);
  EXPECT_EQ(ab.leaf(0), a.leaf(0));
  EXPECT_EQ(ab.leaf(3), b.leaf(3));
  EXPECT_EQ(ab.version(), 2u);
  EXPECT_EQ(ab.author(), 5u);
}

TEST(Aggregate, MeansSlopesAndKeepsAbsentLeaves) {
  auto base = train_rmi(iota_set(1000), config(LeafFamily::Linear, 4, 1000));
  auto one = base, three = base;
  auto l = base.leaf(2);
  l.params[1] = 1.0;
  one.set_leaf(2, l);
  l.params[1] = 3.0;
  l.rank_hi = 800;
  three.set_leaf(2, l);
  std::vector<SegmentBlob> blobs;
  for (auto* m : {&one, &three}) {
    auto x = m->leaf(2);
    x.changed_at = 2;
    m->set_leaf(2, x);
    blobs.push_back(decode_segments(serialize_changed_segments(*m, 1)));
  }
  auto res = aggregate_segments(base, blobs, 2, 9);
  EXPECT_EQ(res.dropped, 0u);
  EXPECT_DOUBLE_EQ(res.model.leaf(2).params[1], 2.0);
  EXPECT_EQ(res.model.leaf(2).rank_hi, 800u);
  EXPECT_EQ(res.model.leaf(0), base.leaf(0));
  EXPECT_EQ(res.model.version(), 2u);
  const auto [lo3, hi3] = res.model.effective_interval(3);
  EXPECT_GE(lo3, res.model.effective_interval(2).second);
  EXPECT_LE(lo3, hi3);
}

TEST(Aggregate, IdenticalParticipantIsIdentity) {
  auto base = train_rmi(iota_set(1000), config(LeafFamily::Linear, 4, 1000));
  std::vector<SegmentBlob> blobs{decode_segments(serialize_changed_segments(base, 0)),
                                 decode_segments(serialize_changed_segments(base, 0))};
  auto res = aggregate_segments(base, blobs, base.version() + 1, 0);
  EXPECT_EQ(res.model.version(), base.version() + 1);
  for (Key k = 0; k < 1000; k += 7) EXPECT_EQ(res.model.hash(k), base.hash(k));
}

TEST(Aggregate, DropsIncompatibleBlobs) {
  auto base = train_rmi(iota_set(1000), config(LeafFamily::Linear, 4, 1000));
  auto other = train_rmi(iota_set(1000), config(LeafFamily::Linear, 8, 1000));
  std::vector<SegmentBlob> blobs{decode_segments(serialize_changed_segments(other, 0))};
  EXPECT_EQ(aggregate_segments(base, blobs, 2, 0).dropped, 1u);
}

TEST(Remonotonize, SplitsOverlapAtMidpoint) {
  std::vector<LeafModel> leaves(3);
  leaves[0].rank_lo = 0;
  leaves[0].rank_hi = 60;
  leaves[1].rank_lo = 40;
  leaves[1].rank_hi = 90;
  leaves[2].rank_lo = 91;
  leaves[2].rank_hi = 95;
  auto eff = remonotonize(leaves);
  EXPECT_EQ(eff[0], std::make_pair(0.0, 50.0));
  EXPECT_EQ(eff[1], std::make_pair(50.0, 90.0));
  EXPECT_EQ(eff[2], std::make_pair(91.0, 95.0));
}
