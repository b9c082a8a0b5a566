#include <cmath>

#include "doctest.h"
#include "poe/analytics.hpp"
#include "stat_oracles.hpp"

using namespace poe;
using namespace poe::stats;

namespace {

std::vector<ScoredSequence> sequences(std::size_t n, std::uint64_t seed) {
  synth::WorldConfig w;
  Rng rng(seed);
  std::vector<ScoredSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = synth::sample_prompt(w, rng);
    out.push_back({p, synth::sample_response(p, w, synth::SamplerSpec{}, rng)});
  }
  return out;
}

}  // namespace

TEST_SUITE("analytics") {
  TEST_CASE("spearman examples") {
    const std::vector<double> xs{1, 2, 3, 4, 5, 6};
    std::vector<double> rev(xs.rbegin(), xs.rend());
    CHECK(spearman(xs, xs) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(spearman(xs, rev) == doctest::Approx(-1.0).epsilon(1e-15));
    const std::vector<double> a{1, 2, 3, 4};
    const std::vector<double> b{1, 3, 2, 4};
    CHECK(spearman(a, b) == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(poe::testing::brute_spearman(a, b) == doctest::Approx(0.8).epsilon(1e-14));
  }

  TEST_CASE("average ranks share tied positions") {
    const std::vector<double> xs{10, 20, 10, 30, 20, 10};
    const auto r = average_ranks(xs);
    CHECK(r == std::vector<double>{2, 4.5, 2, 6, 4.5, 2});
  }

  TEST_CASE("pearson examples") {
    const std::vector<double> xs{0.5, 1.5, -2, 3, 7};
    std::vector<double> lin;
    std::vector<double> neg;
    for (double x : xs) {
      lin.push_back(2 * x + 1);
      neg.push_back(-x);
    }
    CHECK(pearson(xs, lin) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(pearson(xs, neg) == doctest::Approx(-1.0).epsilon(1e-14));
    Rng rng(17);
    std::vector<double> u(10000);
    std::vector<double> v(10000);
    for (auto& x : u) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    CHECK(std::abs(pearson(u, v)) < 0.03);
  }

  TEST_CASE("constant inputs are undefined") {
    const std::vector<double> c{2, 2, 2, 2};
    const std::vector<double> x{1, 2, 3, 4};
    CHECK_THROWS_AS(spearman(c, x), UndefinedCorrelation);
    CHECK_THROWS_AS(pearson(x, c), UndefinedCorrelation);
    CHECK_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  }

  TEST_CASE("match brute-force oracles on random vectors") {
    Rng rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const auto [xs, ys] = poe::testing::random_stat_vectors(rng, i);
      worst = std::max(worst, std::abs(spearman(xs, ys) - poe::testing::brute_spearman(xs, ys)));
      worst = std::max(worst, std::abs(pearson(xs, ys) - poe::testing::brute_pearson(xs, ys)));
    }
    CHECK(worst < 1e-10);
  }

  TEST_CASE("spearman is invariant under increasing transforms") {
    Rng rng(31);
    for (int i = 0; i < 200; ++i) {
      const auto [xs, ys] = poe::testing::random_stat_vectors(rng, i);
      std::vector<double> t1;
      std::vector<double> t2;
      for (double y : ys) {
        t1.push_back(std::exp(y / 4));
        t2.push_back(y * y * y + 3 * y - 11);
      }
      CHECK(spearman(xs, t1) == spearman(xs, ys));
      CHECK(spearman(xs, t2) == spearman(xs, ys));
    }
  }

  TEST_CASE("pearson affine equivariance") {
    Rng rng(32);
    for (int i = 0; i < 200; ++i) {
      const auto [xs, ys] = poe::testing::random_stat_vectors(rng, i);
      const double a = 0.1 + 5 * rng.uniform();
      const double b = rng.normal(0, 10);
      std::vector<double> pos;
      std::vector<double> neg;
      for (double y : ys) {
        pos.push_back(a * y + b);
        neg.push_back(-a * y + b);
      }
      const double r = pearson(xs, ys);
      CHECK(std::abs(pearson(xs, pos) - r) < 1e-12);
      CHECK(std::abs(pearson(xs, neg) + r) < 1e-12);
    }
  }

  TEST_CASE("reward-length report on probe models") {
    const auto seqs = sequences(400, 3);
    const auto rep = reward_length_report([](const synth::Prompt&, const synth::Sequence& y) { return double(y.len); },
                                          seqs);
    CHECK(rep.spearman == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(rep.n == 400);
    CHECK(decile_increases(rep.decile_mean_reward) == 9);
    std::size_t mass = 0;
    for (const auto& row : rep.histogram)
      for (auto c : row) mass += c;
    CHECK(mass == 400);
    CHECK_THROWS_AS(reward_length_report([](const synth::Prompt&, const synth::Sequence&) { return 1.0; }, seqs),
                    UndefinedCorrelation);
    const std::vector<ScoredSequence> few(seqs.begin(), seqs.begin() + 50);
    CHECK_THROWS_AS(reward_length_report([](const synth::Prompt&, const synth::Sequence& y) { return double(y.len); },
                                         few),
                    std::invalid_argument);
  }

  TEST_CASE("reports are pure functions of their inputs") {
    const auto seqs = sequences(300, 4);
    auto rm = [](const synth::Prompt& p, const synth::Sequence& y) {
      return std::sin(double(y.len)) + 0.1 * double(p.relevant_set.size());
    };
    const auto a = reward_length_report(rm, seqs);
    const auto b = reward_length_report(rm, seqs);
    CHECK(a.spearman == b.spearman);
    CHECK(a.histogram == b.histogram);
    CHECK(a.decile_mean_reward == b.decile_mean_reward);
  }

  TEST_CASE("separation report") {
    std::vector<double> same{0.1, 0.5, 0.9, 1.3, 2.0};
    const auto s = separation_from_scores(same, same);
    CHECK(s.overlap == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(s.accuracy == 0.5);

    const auto d = separation_from_scores({5, 6, 7, 8}, {0, 1, 2, 3});
    CHECK(d.overlap == 0.0);
    CHECK(d.accuracy == 1.0);

    Rng rng(6);
    std::vector<double> c(2000);
    std::vector<double> r(2000);
    for (auto& x : c) x = rng.normal();
    for (auto& x : r) x = rng.normal();
    CHECK(std::abs(separation_from_scores(c, r).accuracy - 0.5) < 0.03);
    CHECK_THROWS_AS(separation_from_scores({}, {}), std::invalid_argument);
  }

  TEST_CASE("histogram mass and edges") {
    const std::vector<double> xs{0, 0.5, 1, 1, 0.25};
    const auto h = histogram(xs, 0, 1, 4);
    CHECK(h == std::vector<double>{0.2, 0.2, 0.2, 0.4});
    double total = 0.0;
    Rng rng(7);
    std::vector<double> ys(999);
    for (auto& y : ys) y = rng.normal();
    for (double v : histogram(ys, -1, 1, kOverlapBins)) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("decile helpers") {
    std::array<double, kDeciles> m{0, 1, 2, 3, 3, 5, 4, 7, 8, 9};
    CHECK(decile_increases(m) == 7);
    CHECK(decile_spread(m) == 9.0);
    const std::vector<double> xs{5, 1, 4, 2, 3, 9, 8, 7, 6, 0};
    const auto d = rank_deciles(xs);
    CHECK(d == std::vector<std::size_t>{5, 1, 4, 2, 3, 9, 8, 7, 6, 0});
  }
}
