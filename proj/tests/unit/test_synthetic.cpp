#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gvd/dataset.hpp"
#include "gvd/errors.hpp"
#include "gvd/synthetic.hpp"
#include "oracle.hpp"
#include "synth_fixture.hpp"

using namespace gvd;

namespace {

// Independent oracle: walk every permutation of the classes and credit the
// first `count` entries with the sequential-draw probability.
std::vector<double> permutation_inclusion(const std::vector<double>& w, int count) {
  const int k = static_cast<int>(w.size());
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> out(k, 0.0);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double fact = 1;
  for (int i = 2; i <= k - count; ++i) fact *= i;  // tails share a prefix
  do {
    double p = 1, rem = total;
    for (int i = 0; i < count; ++i) {
      p *= w[perm[i]] / rem;
      rem -= w[perm[i]];
    }
    for (int i = 0; i < count; ++i) out[perm[i]] += p / fact;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

}  // namespace

TEST(InclusionProbabilities, MatchPermutationOracle) {
  const std::vector<double> w = {1, 2, 3, 0.5, 4};
  for (int count = 1; count <= 5; ++count) {
    const auto a = inclusion_probabilities(w, count);
    const auto b = permutation_inclusion(w, count);
    EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), count, 1e-12);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12) << count << " " << i;
  }
  const auto one = inclusion_probabilities(w, 1);
  EXPECT_NEAR(one[4], 4 / 10.5, 1e-15);
}

TEST(Synthetic, Deterministic) {
  SyntheticSpec s = oracle::small_spec(11);
  const auto a = make_synthetic(s);
  const auto b = make_synthetic(s);
  ASSERT_EQ(a.splits.at("train").size(), 24u);
  for (std::size_t i = 0; i < a.splits.at("train").size(); ++i)
    EXPECT_EQ(a.splits.at("train")[i].caption, b.splits.at("train")[i].caption);
  for (const auto& [stem, f] : a.regions) {
    const auto& g = b.regions.at(stem);
    ASSERT_EQ(f.proposals.size(), g.proposals.size());
    for (std::size_t i = 0; i < f.proposals.size(); ++i)
      EXPECT_EQ(f.proposals[i].feature, g.proposals[i].feature);
  }
  s.seed = 12;
  const auto c = make_synthetic(s);
  EXPECT_NE(c.regions.begin()->second.proposals[0].feature,
            a.regions.begin()->second.proposals[0].feature);
}

TEST(Synthetic, PlantedRegionsCoincideWithMentions) {
  const SyntheticSpec s = oracle::small_spec(5);
  const auto corpus = make_synthetic(s);
  int mentions = 0;
  for (const auto& [split, anns] : corpus.splits) {
    for (const auto& a : anns) {
      const auto& file = corpus.regions.at(segment_stem(a));
      EXPECT_EQ(static_cast<int>(file.proposals.size()), s.frames * s.regions_per_frame);
      for (const auto& m : a.mentions) {
        double best = 0;
        for (std::size_t i = 0; i < file.proposals.size(); ++i)
          if (file.frames[i] == m.frame_index)
            best = std::max(best, oracle::oracle_iou(file.proposals[i].box, m.boxes[0]));
        EXPECT_EQ(best, 1.0);
        ++mentions;
      }
      // proposals in one frame never overlap
      for (std::size_t i = 0; i < file.proposals.size(); ++i)
        for (std::size_t j = i + 1; j < file.proposals.size(); ++j)
          if (file.frames[i] == file.frames[j])
            EXPECT_EQ(oracle::oracle_iou(file.proposals[i].box, file.proposals[j].box), 0.0);
    }
  }
  EXPECT_GT(mentions, 32);
}

TEST(Synthetic, ClassHistogramWithinThreeSigma) {
  SyntheticSpec s;
  s.class_weights = {1, 2, 3, 4, 1, 2, 3, 4};
  s.train = 4000;
  s.val = 0;
  s.feature_dim = 8;
  s.temporal_dim = 12;
  const auto corpus = make_synthetic(s);
  const int k = static_cast<int>(s.class_words.size());
  std::vector<double> expect(k, 0.0);
  for (int count = 1; count <= s.max_mentions; ++count) {
    const auto p = inclusion_probabilities(s.class_weights, count);
    for (int c = 0; c < k; ++c) expect[c] += p[c] / s.max_mentions;
  }
  std::vector<int> seen(k, 0);
  for (const auto& a : corpus.splits.at("train"))
    for (const auto& m : a.mentions)
      ++seen[std::find(s.class_words.begin(), s.class_words.end(), m.labels[0]) - s.class_words.begin()];
  const double n = s.train;
  for (int c = 0; c < k; ++c) {
    const double sigma = std::sqrt(n * expect[c] * (1 - expect[c]));
    EXPECT_LT(std::abs(seen[c] - n * expect[c]), 3 * sigma) << s.class_words[c];
  }
}

TEST(Synthetic, SpecJson) {
  SyntheticSpec s = oracle::small_spec();
  const SyntheticSpec r = SyntheticSpec::from_json(s.to_json());
  EXPECT_EQ(r.to_json(), s.to_json());
  EXPECT_EQ(SyntheticSpec::from_json({{"seed", 9}}).seed, 9u);
  EXPECT_THROW(SyntheticSpec::from_json({{"sead", 9}}), ConfigError);
  EXPECT_THROW(SyntheticSpec::from_json({{"frames", "two"}}), ConfigError);
  s.regions_per_frame = 7;
  EXPECT_THROW(make_synthetic(s), ConfigError);
  s = oracle::small_spec();
  s.class_weights = {1, 2};
  EXPECT_THROW(make_synthetic(s), ConfigError);
}

TEST(Synthetic, WrittenDirectoryLoads) {
  const auto dir = oracle::scratch_dir("synth_write");
  const auto d = oracle::make_synth_data(dir, oracle::small_spec());
  EXPECT_EQ(d.train.size(), 24u);
  EXPECT_EQ(d.val.size(), 8u);
  EXPECT_EQ(d.classes.size(), 4);
  EXPECT_TRUE(std::filesystem::exists(dir / "spec.json"));
  for (const auto& s : d.train.samples) {
    EXPECT_EQ(s.frames.rows, 8);
    int grounded = 0;
    for (const auto& g : s.grounding) grounded += g.has_value();
    EXPECT_GE(grounded, 1);
  }
  std::filesystem::remove_all(dir);
}
