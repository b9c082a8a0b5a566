#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "poe/synthworld.hpp"

using namespace poe;
using namespace poe::synth;

namespace {

Sequence seq(std::vector<Token> content, const Vocab& v) {
  content.push_back(v.eos());
  return Sequence::from_tokens(std::move(content), v);
}

std::string dump(const Dataset& d) {
  std::ostringstream os;
  write_dataset(os, d);
  return os.str();
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_SUITE("synthworld") {
  TEST_CASE("true reward formula") {
    WorldConfig cfg;
    const Vocab v = cfg.vocab();
    Prompt p{{1, 3, 5, 7, 9, 11, 13}, 0};
    // d = 3 distinct relevant, len 10.
    std::vector<Token> toks{1, 3, 5, 1, 2, v.filler(), v.filler(), v.filler(), v.filler(), v.filler()};
    CHECK(true_reward(p, seq(toks, v), cfg) == 3.0);
    CHECK(true_reward(p, seq({}, v), cfg) == 0.0);
    // d = 7 saturates at 5; len 40 costs 0.05 * 20.
    std::vector<Token> long_toks{1, 3, 5, 7, 9, 11, 13};
    while (long_toks.size() < 40) long_toks.push_back(v.filler());
    CHECK(true_reward(p, seq(long_toks, v), cfg) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK_THROWS_AS(true_reward(p, Sequence::from_tokens({99}, v), cfg), WorldError);
  }

  TEST_CASE("annotator choice probabilities") {
    WorldConfig cfg;
    CHECK(preference_probability(1.0, 1.0, 7, 7, 0.0, cfg) == 0.5);
    cfg.lambda_len = 0.0;
    cfg.beta_anno = 1.0;
    CHECK(preference_probability(3.0, 1.0, 5, 9, 0.0, cfg) == doctest::Approx(0.8807970779778823).epsilon(1e-14));
    cfg.lambda_len = 0.1;
    CHECK(preference_probability(2.0, 2.0, 30, 10, 0.0, cfg) == doctest::Approx(sig(2.0)).epsilon(1e-14));
  }

  TEST_CASE("annotate matches the empirical choice rate") {
    WorldConfig cfg;
    cfg.sigma_eta = 0.0;
    cfg.lambda_len = 0.1;
    const Vocab v = cfg.vocab();
    Prompt p{{0, 1}, 0};
    const Sequence a = seq({0, 1, v.filler()}, v);
    const Sequence b = seq({0, v.filler(), v.filler()}, v);
    // r_a - r_b = 1, equal lengths: P(a) = sigmoid(2).
    Rng rng(3);
    int wins = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) wins += annotate(p, a, b, cfg, rng) == Choice::a;
    CHECK(std::abs(wins / double(n) - sig(2.0)) < 0.01);
  }

  TEST_CASE("gen_dataset determinism and splits") {
    WorldConfig cfg;
    const auto g1 = gen_dataset(cfg, 1000);
    const auto g2 = gen_dataset(cfg, 1000);
    CHECK(dump(g1.data) == dump(g2.data));
    CHECK(g1.truth.rows == g2.truth.rows);
    CHECK(g1.data.count(Split::train) == 800);
    CHECK(g1.data.count(Split::valid) == 100);
    CHECK(g1.data.count(Split::test) == 100);
    for (const auto& p : g1.data.pairs) CHECK(p.a.tokens != p.b.tokens);
    cfg.seed = 14;
    CHECK(dump(gen_dataset(cfg, 1000).data) != dump(g1.data));
  }

  TEST_CASE("gen_dataset validation") {
    WorldConfig cfg;
    CHECK_THROWS_AS(gen_dataset(cfg, 0), WorldError);
    // Every response is a single filler token, so every pair is identical.
    SamplerSpec degenerate;
    degenerate.min_len = 1;
    degenerate.max_len = 1;
    degenerate.p_info = 0.0;
    CHECK_THROWS_AS(gen_dataset(cfg, 10, degenerate), WorldError);
    SamplerSpec bad;
    bad.p_info = 1.5;
    CHECK_THROWS_AS(gen_dataset(cfg, 10, bad), WorldError);
    WorldConfig bad_world;
    bad_world.min_relevant = 9;
    bad_world.max_relevant = 3;
    CHECK_THROWS_AS(gen_dataset(bad_world, 10), WorldError);
  }

  TEST_CASE("labels follow true reward without confounding") {
    WorldConfig cfg;
    cfg.lambda_len = 0.0;
    cfg.sigma_eta = 0.0;
    cfg.beta_anno = 10.0;
    const auto g = gen_dataset(cfg, 4000);
    int agree = 0;
    int informative = 0;
    for (std::size_t i = 0; i < g.data.pairs.size(); ++i) {
      const auto& t = g.truth.rows[i];
      if (t.r_a == t.r_b) continue;
      ++informative;
      agree += (t.r_a > t.r_b) == (g.data.pairs[i].label == Choice::a);
    }
    CHECK(agree / double(informative) >= 0.95);
  }

  TEST_CASE("annotate agrees with the true-reward argmax in the noiseless limit") {
    WorldConfig cfg;
    cfg.lambda_len = 0.0;
    cfg.sigma_eta = 0.0;
    cfg.beta_anno = 1e6;
    Rng rng(4);
    Rng draw(5);
    for (int i = 0; i < 500; ++i) {
      const Prompt p = sample_prompt(cfg, draw);
      const Sequence a = sample_response(p, cfg, SamplerSpec{}, draw);
      const Sequence b = sample_response(p, cfg, SamplerSpec{}, draw);
      const double ra = true_reward(p, a, cfg);
      const double rb = true_reward(p, b, cfg);
      if (std::abs(ra - rb) < 1e-9) continue;
      CHECK((annotate(p, a, b, cfg, rng) == Choice::a) == (ra > rb));
    }
  }

  TEST_CASE("length confounding shows in the labels") {
    WorldConfig cfg;
    cfg.lambda_len = 0.5;
    const auto g = gen_dataset(cfg, 4000);
    int longer = 0;
    int unequal = 0;
    for (const auto& p : g.data.pairs) {
      if (p.a.len == p.b.len) continue;
      ++unequal;
      longer += p.preferred().len > p.rejected().len;
    }
    CHECK(longer / double(unequal) > 0.6);
  }

  TEST_CASE("confounding is monotone in lambda_len") {
    double prev = -1.0;
    for (double lam : {0.0, 0.1, 0.5}) {
      WorldConfig cfg;
      cfg.lambda_len = lam;
      const auto g = gen_dataset(cfg, 10000);
      int longer = 0;
      int unequal = 0;
      for (const auto& p : g.data.pairs) {
        if (p.a.len == p.b.len) continue;
        ++unequal;
        longer += p.preferred().len > p.rejected().len;
      }
      const double frac = longer / double(unequal);
      CAPTURE(lam);
      CHECK(frac >= prev - 0.02);
      prev = frac;
    }
  }

  TEST_CASE("length jitter bounds the length gap within a pair") {
    WorldConfig cfg;
    SamplerSpec s;
    s.length_jitter = 2;
    s.p_info_spread = 0.3;
    const auto g = gen_dataset(cfg, 2000, s);
    int max_gap = 0;
    for (const auto& p : g.data.pairs) max_gap = std::max(max_gap, std::abs(p.a.len - p.b.len));
    CHECK(max_gap <= 2);
    // Off by default: the default sampler's stream is unchanged by the new fields.
    SamplerSpec plain;
    SamplerSpec explicit_off;
    explicit_off.length_jitter = -1;
    explicit_off.p_info_spread = 0.0;
    CHECK(dump(gen_dataset(cfg, 300, plain).data) == dump(gen_dataset(cfg, 300, explicit_off).data));
  }

  TEST_CASE("demos") {
    WorldConfig cfg;
    const Vocab v = cfg.vocab();
    const auto demos = gen_demos(cfg, 500);
    for (const auto& d : demos) {
      CHECK(true_reward(d.prompt, d.response, cfg) >= max_achievable_reward(d.prompt, cfg) - 0.5);
      CHECK(d.response.tokens.back() == v.eos());
    }
    const auto again = gen_demos(cfg, 50);
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(again[i].prompt == demos[i].prompt);
      CHECK(again[i].response == demos[i].response);
    }
    // p_fill = 0: a permutation of the relevant tokens followed by EOS.
    for (const auto& d : gen_demos(cfg, 200, 0.0)) {
      auto body = d.response.content(v);
      std::sort(body.begin(), body.end());
      CHECK(body == d.prompt.relevant_set);
      CHECK(d.response.tokens.size() == d.prompt.relevant_set.size() + 1);
    }
  }

  TEST_CASE("dataset and truth serialization round trip") {
    WorldConfig cfg;
    SamplerSpec s;
    s.length_jitter = 2;
    const auto g = gen_dataset(cfg, 700, s);
    const std::string first = dump(g.data);
    std::istringstream is(first);
    const Dataset back = read_dataset(is);
    CHECK(back.pairs == g.data.pairs);
    CHECK(dump(back) == first);

    std::ostringstream ts;
    write_truth(ts, g.truth);
    std::istringstream tis(ts.str());
    CHECK(read_truth(tis).rows == g.truth.rows);

    std::istringstream bad("# something else\n");
    CHECK_THROWS_AS(read_dataset(bad), WorldError);
  }

  TEST_CASE("training code never touches the hidden truth") {
    // Static half of the hygiene check; the trainer suite covers the call counter.
    for (const char* file : {"/src/trainer.cpp", "/src/rmodels.cpp", "/include/poe/trainer.hpp",
                             "/include/poe/rmodels.hpp"}) {
      std::ifstream in(std::string(POE_SOURCE_DIR) + file);
      REQUIRE(in.good());
      std::stringstream ss;
      ss << in.rdbuf();
      const std::string text = ss.str();
      CAPTURE(file);
      CHECK(text.find("true_reward") == std::string::npos);
      CHECK(text.find("TruthSidecar") == std::string::npos);
      CHECK(text.find("HiddenTruth") == std::string::npos);
    }
  }
}
