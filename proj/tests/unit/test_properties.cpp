#include <doctest.h>

#include <cmath>

#include "check.hpp"
#include "prefrl/discriminator.hpp"
#include "prefrl/reward_model.hpp"

using namespace prefrl;
using prefrl::testing::random_segment;

namespace {

constexpr int kCases = 1000;

// Random per-step reward: a weighted sum of squashed features.
StepRewardFn random_reward(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const Vec w{n(rng), n(rng), n(rng), n(rng)};
  return [w](std::span<const double> s, std::span<const double> a) {
    return w[0] * std::tanh(s[0]) + w[1] * s[1] * s[1] + w[2] * a[0] + w[3] * std::sin(a[1]);
  };
}

SegmentPair random_pair(Rng& rng, std::size_t k) {
  return {random_segment(rng, k, 2, 2, 0), random_segment(rng, k, 2, 2, 1), 1};
}

std::size_t random_length(Rng& rng) { return 1 + rng() % 30; }

}  // namespace

TEST_SUITE("properties") {
  TEST_CASE("C3 labels are invariant under a uniform reward shift on equal-length segments") {
    Rng rng(101);
    std::uniform_real_distribution<double> shift(-50.0, 50.0);
    std::uniform_real_distribution<double> gamma(0.5, 1.0);
    int agreements = 0;
    for (int i = 0; i < kCases; ++i) {
      const StepRewardFn r = random_reward(rng);
      const double c = shift(rng);
      const StepRewardFn shifted = [&](std::span<const double> s, std::span<const double> a) { return r(s, a) + c; };
      const SegmentPair pair = random_pair(rng, random_length(rng));
      const double g = gamma(rng);
      agreements += c3_label(pair, r, g).xi == c3_label(pair, shifted, g).xi ? 1 : 0;
    }
    CHECK(agreements == kCases);
  }

  TEST_CASE("oracle labels are invariant under a uniform shift of the hidden reward") {
    Rng rng(102);
    const Environment env = Environment::point_goal();
    std::uniform_real_distribution<double> shift(-50.0, 50.0);
    int agreements = 0;
    for (int i = 0; i < kCases; ++i) {
      const double c = shift(rng);
      const StepRewardFn shifted = [&](std::span<const double> s, std::span<const double> a) {
        return env.true_reward(s, a) + c;
      };
      const SegmentPair pair = random_pair(rng, random_length(rng));
      agreements += oracle_label(pair, env).xi == c3_label(pair, shifted, env.spec().gamma).xi ? 1 : 0;
    }
    CHECK(agreements == kCases);
  }

  TEST_CASE("reward-model C3 labels and preference probabilities are invariant under an output shift") {
    Rng rng(103);
    std::uniform_real_distribution<double> shift(-5.0, 5.0);
    int agreements = 0;
    for (int i = 0; i < kCases; ++i) {
      RewardModel rm = make_reward_model(2, 2, rng(), {8});
      rm.fit_count = 1;
      RewardModel moved = rm;
      moved.model.params.back() += shift(rng);
      const SegmentPair pair = random_pair(rng, random_length(rng));
      const bool same_label = c3_label(pair, rm, 0.99).xi == c3_label(pair, moved, 0.99).xi;
      const bool same_prob = std::abs(pref_prob(rm, pair.first, pair.second).first -
                                      pref_prob(moved, pair.first, pair.second).first) < 1e-9;
      agreements += same_label && same_prob ? 1 : 0;
    }
    CHECK(agreements == kCases);
  }

  TEST_CASE("labels are antisymmetric under a pair swap") {
    Rng rng(104);
    const Environment env = Environment::point_goal();
    int agreements = 0;
    for (int i = 0; i < kCases; ++i) {
      const StepRewardFn r = random_reward(rng);
      const SegmentPair pair = random_pair(rng, random_length(rng));
      const SegmentPair flipped{pair.second, pair.first, pair.pair_id};
      const bool c3 = c3_label(flipped, r, 0.99).xi == swapped(c3_label(pair, r, 0.99)).xi;
      const bool oracle = oracle_label(flipped, env).xi == swapped(oracle_label(pair, env)).xi;
      agreements += c3 && oracle ? 1 : 0;
    }
    CHECK(agreements == kCases);
  }

  TEST_CASE("C2 labels and scores are antisymmetric under a pair swap") {
    Rng rng(105);
    int agreements = 0;
    for (int i = 0; i < kCases; ++i) {
      const std::size_t k = 1 + rng() % 6;
      Discriminator disc = make_discriminator(k, 2, 2, rng(), {8});
      for (double& p : disc.model.params) p += 0.5 * std::normal_distribution<double>(0, 1)(rng);
      const SegmentPair pair = random_pair(rng, k);
      const SegmentPair flipped{pair.second, pair.first, pair.pair_id};
      const PreferenceRecord a = c2_label(disc, pair);
      const PreferenceRecord b = c2_label(disc, flipped);
      const PreferenceRecord back = swapped(a);
      agreements += b.xi == back.xi && b.scores == back.scores ? 1 : 0;
    }
    CHECK(agreements == kCases);
  }

  TEST_CASE("preference probabilities and losses respect a pair swap") {
    Rng rng(106);
    int agreements = 0;
    for (int i = 0; i < kCases; ++i) {
      const RewardModel rm = make_reward_model(2, 2, rng(), {8});
      PreferenceRecord r;
      r.seg1 = random_segment(rng, 4, 2, 2, 0);
      r.seg2 = random_segment(rng, 4, 2, 2, 1);
      const double x = std::uniform_real_distribution<double>(0, 1)(rng);
      r.xi = Xi{x, 1.0 - x};
      r.scores = std::array<double, 2>{std::uniform_real_distribution<double>(0, 1)(rng),
                                       std::uniform_real_distribution<double>(0, 1)(rng)};
      const auto [p12, p21] = pref_prob(rm, r.seg1, r.seg2);
      const auto [q12, q21] = pref_prob(rm, r.seg2, r.seg1);
      const std::vector<PreferenceRecord> one{r};
      const std::vector<PreferenceRecord> other{swapped(r)};
      const bool ok = p12 == q21 && p21 == q12 &&
                      std::abs(loss_a(rm, one) - loss_a(rm, other)) < 1e-12 &&
                      std::abs(loss_g(rm, one) - loss_g(rm, other)) < 1e-12;
      agreements += ok ? 1 : 0;
    }
    CHECK(agreements == kCases);
  }

  TEST_CASE("reward-model preference probabilities are complementary") {
    Rng rng(107);
    std::normal_distribution<double> q(0.0, 30.0);
    double worst = 0.0;
    for (int i = 0; i < kCases; ++i) {
      const auto [a, b] = preference_probabilities(q(rng), q(rng));
      worst = std::max(worst, std::abs(a + b - 1.0));
      const RewardModel rm = make_reward_model(2, 2, rng(), {8});
      const auto [c, d] = pref_prob(rm, random_segment(rng, 5, 2, 2), random_segment(rng, 5, 2, 2));
      worst = std::max(worst, std::abs(c + d - 1.0));
    }
    CHECK(worst <= 1e-12);
  }
}
