#include <doctest.h>

#include <cmath>
#include <limits>

#include "check.hpp"
#include "prefrl/discriminator.hpp"
#include "prefrl/error.hpp"

using namespace prefrl;
using prefrl::testing::random_segment;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

// Length-1 segment whose first state feature is x.
Segment feature_segment(double x, std::int64_t episode = 0) {
  Segment s;
  s.episode_id = episode;
  s.state_dim = 2;
  s.action_dim = 2;
  s.states = {x, 0.0};
  s.actions = {0.0, 0.0};
  return s;
}

// No hidden layer: Y(x) = logistic(w x + b) with Y(0) = y0 and Y(1) = y1.
Discriminator linear_discriminator(double y0, double y1) {
  Discriminator disc = make_discriminator(1, 2, 2, 0, {});
  disc.model.params = {logit(y1) - logit(y0), 0.0, 0.0, 0.0, logit(y0)};
  return disc;
}

}  // namespace

TEST_SUITE("discriminator") {
  TEST_CASE("a fresh discriminator scores every segment 0.5") {
    const Discriminator disc = make_discriminator(5, 2, 2, 3);
    Rng rng(1);
    for (int i = 0; i < 10; ++i) CHECK(score(disc, random_segment(rng, 5, 2, 2)) == 0.5);
  }

  TEST_CASE("scores are deterministic and strictly inside (0, 1)") {
    Discriminator disc = make_discriminator(4, 2, 2, 3);
    for (double& p : disc.model.params) p *= 50.0;
    disc.model.params.back() = 30.0;
    Rng rng(2);
    const Segment s = random_segment(rng, 4, 2, 2);
    const double y = score(disc, s);
    CHECK(y == score(disc, s));
    CHECK(y > 0.0);
    CHECK(y < 1.0);
  }

  TEST_CASE("a segment of the wrong length is rejected") {
    const Discriminator disc = make_discriminator(5, 2, 2, 3);
    Rng rng(3);
    CHECK_THROWS_AS((void)score(disc, random_segment(rng, 4, 2, 2)), ContractViolation);
  }

  TEST_CASE("training on a linearly separable toy set scores the preferred class above 0.5") {
    Discriminator disc = make_discriminator(3, 2, 2, 4, {16, 16});
    Rng rng(4);
    std::vector<Segment> preferred;
    std::vector<Segment> non_preferred;
    for (int i = 0; i < 20; ++i) {
      Segment p = random_segment(rng, 3, 2, 2, i);
      Segment n = random_segment(rng, 3, 2, 2, 100 + i);
      for (std::size_t t = 0; t < 3; ++t) {
        p.states[2 * t] = std::abs(p.states[2 * t]) + 0.5;
        n.states[2 * t] = -std::abs(n.states[2 * t]) - 0.5;
      }
      preferred.push_back(p);
      non_preferred.push_back(n);
    }
    for (int step = 0; step < 200; ++step) disc = train_step(disc, preferred, non_preferred, 0.05);
    for (const auto& s : preferred) CHECK(score(disc, s) > 0.5);
    for (const auto& s : non_preferred) CHECK(score(disc, s) < 0.5);
  }

  TEST_CASE("one ascent step on a lone preferred segment raises its score") {
    Discriminator disc = make_discriminator(3, 2, 2, 5);
    Rng rng(5);
    const std::vector<Segment> preferred{random_segment(rng, 3, 2, 2)};
    const double before = score(disc, preferred[0]);
    const Discriminator after = train_step(disc, preferred, {}, 1e-2);
    CHECK(score(after, preferred[0]) > before);
    CHECK(after.steps_taken == disc.steps_taken + 1);
  }

  TEST_CASE("the same segment on both sides pulls its score toward 0.5") {
    Rng rng(6);
    const Segment s = random_segment(rng, 1, 2, 2);
    for (double start : {0.9, 0.2}) {
      Discriminator disc = make_discriminator(1, 2, 2, 6, {});
      disc.model.params = {0.0, 0.0, 0.0, 0.0, logit(start)};
      const std::vector<Segment> both{s};
      const double y = score(train_step(disc, both, both, 0.1), s);
      CHECK(std::abs(y - 0.5) < std::abs(start - 0.5));
    }
  }

  TEST_CASE("a non-finite objective rejects the step") {
    Discriminator disc = make_discriminator(1, 2, 2, 7, {});
    const std::vector<Segment> bad{feature_segment(std::numeric_limits<double>::infinity())};
    const MlpModel before = disc.model;
    CHECK_THROWS_AS((void)train_step(disc, bad, bad, 0.1), NonFiniteError);
    CHECK(disc.model == before);
  }

  TEST_CASE("C2 labels from independent scores") {
    const Segment zero = feature_segment(0.0, 1);
    const Segment one = feature_segment(1.0, 2);

    const Discriminator equal = linear_discriminator(0.4, 0.4);
    CHECK(c2_label(equal, {zero, one, 1}).xi == kIndifferent);

    const Discriminator apart = linear_discriminator(0.2, 0.9);
    const PreferenceRecord r = c2_label(apart, {one, zero, 2});
    CHECK(r.xi == kPreferFirst);
    CHECK(r.source == LabelSource::discriminator);
    CHECK((*r.scores)[0] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK((*r.scores)[1] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK((*r.scores)[0] + (*r.scores)[1] != doctest::Approx(1.0));

    const Discriminator close = linear_discriminator(0.50, 0.51);
    CHECK(c2_label(close, {one, zero, 3}, 0.05).xi == kIndifferent);
  }

  TEST_CASE("GAN-test scoring rule") {
    Rng rng(8);
    std::vector<SegmentPair> pairs;
    for (int i = 0; i < 30; ++i)
      pairs.push_back({random_segment(rng, 4, 2, 2, 2 * i), random_segment(rng, 4, 2, 2, 2 * i + 1),
                       static_cast<std::uint64_t>(i)});
    const Environment env = Environment::point_goal();
    const auto oracle = [&](const SegmentPair& p) { return oracle_label(p, env); };
    // A scorer that is the oracle's own decision rule.
    const SegmentScorer consistent = [&](const Segment& s) {
      const StepRewardFn r = [&](std::span<const double> st, std::span<const double> a) {
        return env.true_reward(st, a);
      };
      return discounted_segment_return(s, r, env.spec().gamma);
    };
    CHECK(gan_test(pairs, consistent, oracle, 0.0) == 1.0);
    CHECK(gan_test(make_discriminator(4, 2, 2, 1), pairs, env) == 0.5);
    auto reversed = pairs;
    std::reverse(reversed.begin(), reversed.end());
    const Discriminator trained = [&] {
      Discriminator d = make_discriminator(4, 2, 2, 9, {8});
      for (double& p : d.model.params) p += 0.3;
      return d;
    }();
    CHECK(gan_test(trained, pairs, env) == gan_test(trained, reversed, env));
  }

  TEST_CASE("GAN-test without strict reference labels is an error") {
    Rng rng(9);
    const Segment s = random_segment(rng, 4, 2, 2);
    const std::vector<SegmentPair> ties{{s, s, 1}};
    CHECK_THROWS_AS((void)gan_test(make_discriminator(4, 2, 2, 1), ties, Environment::point_goal()),
                    InsufficientData);
  }

  TEST_CASE("standardization centers and scales each feature") {
    Discriminator disc = make_discriminator(2, 2, 2, 1);
    Rng rng(10);
    std::vector<Segment> segments;
    for (int i = 0; i < 50; ++i) {
      Segment s = random_segment(rng, 2, 2, 2, i);
      for (double& x : s.states) x = 10.0 + 4.0 * x;
      segments.push_back(s);
    }
    standardize_inputs(disc, segments, {});
    REQUIRE(disc.feature_mean.size() == 4);
    double mean = 0.0;
    double sq = 0.0;
    std::size_t n = 0;
    for (const auto& s : segments) {
      const Vec x = discriminator_input(disc, s);
      for (std::size_t t = 0; t < 2; ++t) {
        mean += x[4 * t];
        sq += x[4 * t] * x[4 * t];
        ++n;
      }
    }
    mean /= static_cast<double>(n);
    CHECK(std::abs(mean) < 1e-9);
    CHECK(sq / static_cast<double>(n) == doctest::Approx(1.0).epsilon(0.05));
  }
}
