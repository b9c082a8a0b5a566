#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "poe/policyopt.hpp"

using namespace poe;
using namespace poe::ppo;
using diff::Tensor;

namespace {

synth::WorldConfig world() { return synth::WorldConfig{}; }

std::vector<synth::Prompt> prompts(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<synth::Prompt> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth::sample_prompt(world(), rng));
  return out;
}

RewardSource length_reward() {
  return RewardSource("length", [](const synth::Prompt&, const synth::Sequence& y) { return double(y.len); });
}

RewardSource coverage_reward() {
  return RewardSource("coverage", [](const synth::Prompt& p, const synth::Sequence& y) {
    double hits = 0;
    for (auto t : y.tokens) hits += std::binary_search(p.relevant_set.begin(), p.relevant_set.end(), t);
    return hits - 0.1 * y.len;
  });
}

// A reference policy trained by imitation, shared across the slow cases.
struct Pretrained {
  Policy policy;
  ImitationReport report;
  std::vector<synth::Demo> train;
};

const Pretrained& pretrained() {
  static const Pretrained p = [] {
    synth::WorldConfig w = world();
    const auto train = synth::gen_demos(w, 2000);
    w.seed += 1000;
    const auto held = synth::gen_demos(w, 500);
    Policy pol(PolicyConfig{}, w.k_info, w.max_len);
    auto rep = imitation_pretrain(pol, train, held, ImitationConfig{});
    return Pretrained{std::move(pol), std::move(rep), train};
  }();
  return p;
}

std::vector<double> brute_gae(const std::vector<double>& r, const std::vector<double>& v, double gamma, double lam) {
  const std::size_t n = r.size();
  std::vector<double> adv(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double acc = 0.0;
    for (std::size_t l = t; l < n; ++l) {
      const double next = l + 1 < n ? v[l + 1] : 0.0;
      const double delta = r[l] + gamma * next - v[l];
      acc += std::pow(gamma * lam, double(l - t)) * delta;
    }
    adv[t] = acc;
  }
  return adv;
}

}  // namespace

TEST_SUITE("policyopt") {
  TEST_CASE("distribution respects the EOS floor and matches action log-probs") {
    Policy pol(PolicyConfig{}, 16, 64);
    const auto ps = prompts(5, 1);
    for (double temp : {1.0, 0.8}) {
      for (const auto& p : ps) {
        const auto x = features(pol, p, {});
        diff::Tape t;
        const auto b = bind(pol, t);
        const auto heads = forward(b, Tensor(diff::Shape{1, x.size()}, x));
        const auto dist = distribution(pol, heads.logits.value().data(), temp);
        double total = 0.0;
        for (double v : dist) total += v;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(dist[17] >= pol.config().eos_floor);
        for (Token a = 0; a < 18; ++a) {
          const double lp = action_logprobs(b, heads.logits, {a}, temp).value()[0];
          CHECK(lp == doctest::Approx(std::log(dist[static_cast<std::size_t>(a)])).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("features") {
    Policy pol(PolicyConfig{}, 4, 10);
    const synth::Prompt p{{1, 3}, 0};
    auto x = features(pol, p, {});
    CHECK(x.size() == 15);
    CHECK(x == std::vector<double>{0, 1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0});
    x = features(pol, p, {1, 4, 3});
    CHECK(x == std::vector<double>{0, 1, 0, 1, 0, 1, 0, 1, 0, 0, 0, 0, 0.1, 0.3, 1});
  }

  TEST_CASE("responses are force-terminated at max_len") {
    Policy pol(PolicyConfig{}, 16, 64);
    PpoConfig cfg;
    cfg.max_len = 3;
    RewardNormalizer norm;
    Rng rng(2);
    const auto batch = rollout(pol, pol, prompts(20, 2), length_reward(), cfg, norm, rng);
    for (const auto& t : batch.trajectories) {
      CHECK(t.actions.size() <= 3);
      CHECK(t.response.len <= 3);
    }
  }

  TEST_CASE("KL shaping is exactly zero against a clone") {
    Policy pol(PolicyConfig{}, 16, 64);
    const Policy ref = pol;
    PpoConfig cfg;
    RewardNormalizer norm;
    Rng rng(3);
    const auto batch = rollout(pol, ref, prompts(16, 3), coverage_reward(), cfg, norm, rng);
    for (const auto& t : batch.trajectories) {
      CHECK(t.logp == t.ref_logp);
      for (std::size_t k = 0; k + 1 < t.rewards.size(); ++k) CHECK(t.rewards[k] == 0.0);
      CHECK(t.rewards.back() == t.rm_applied);
    }
  }

  TEST_CASE("applied rewards respect the clip") {
    Policy pol(PolicyConfig{}, 16, 64);
    PpoConfig cfg;
    cfg.beta_kl = 0.0;
    RewardNormalizer norm;
    Rng rng(4);
    for (int it = 0; it < 5; ++it) {
      const auto batch = rollout(pol, pol, prompts(16, 10 + it), length_reward(), cfg, norm, rng);
      for (const auto& t : batch.trajectories) {
        CHECK(std::abs(t.rm_applied) <= cfg.reward_clip);
        CHECK(t.rewards.back() == t.rm_applied);
      }
    }
  }

  TEST_CASE("running reward normalization") {
    Policy pol(PolicyConfig{}, 16, 64);
    PpoConfig cfg;
    cfg.reward_clip = 1e9;
    RewardNormalizer norm;
    Rng rng(5);
    std::vector<double> raw;
    std::vector<double> applied;
    for (int it = 0; it < 16; ++it) {
      const auto batch = rollout(pol, pol, prompts(16, 100 + it), coverage_reward(), cfg, norm, rng);
      for (const auto& t : batch.trajectories) {
        raw.push_back(t.rm_raw);
        applied.push_back(t.rm_applied);
      }
    }
    REQUIRE(raw.size() >= 1000);
    // Recompute from the logged raw rewards.
    double m = 0.0;
    for (double r : raw) m += r;
    m /= double(raw.size());
    double var = 0.0;
    for (double r : raw) var += (r - m) * (r - m);
    var /= double(raw.size() - 1);
    CHECK(norm.mean() == doctest::Approx(m).epsilon(1e-12));
    CHECK(norm.stddev() == doctest::Approx(std::sqrt(var)).epsilon(1e-10));
    double am = 0.0;
    for (double a : applied) am += a;
    am /= double(applied.size());
    double av = 0.0;
    for (double a : applied) av += (a - am) * (a - am);
    const double asd = std::sqrt(av / double(applied.size()));
    CHECK(std::abs(am) < 0.1);
    CHECK(asd >= 0.8);
    CHECK(asd <= 1.2);
  }

  TEST_CASE("gae oracles") {
    // gamma = lam = 1 with zero values telescopes to the reward-to-go.
    const std::vector<double> r{0.5, -1.0, 2.0, 0.25};
    const std::vector<double> zeros(4, 0.0);
    const auto a = gae(r, zeros, 1.0, 1.0);
    CHECK(a == std::vector<double>{1.75, 1.25, 2.25, 0.25});

    // Perfect value fit on constant rewards.
    const double gamma = 0.9;
    std::vector<double> c(6, 0.3);
    std::vector<double> v(6);
    double acc = 0.0;
    for (std::size_t k = 6; k-- > 0;) {
      acc = c[k] + gamma * acc;
      v[k] = acc;
    }
    for (double x : gae(c, v, gamma, 0.95)) CHECK(std::abs(x) < 1e-9);

    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
      const auto n = static_cast<std::size_t>(rng.uniform_int(1, 40));
      std::vector<double> rr(n);
      std::vector<double> vv(n);
      for (auto& x : rr) x = rng.normal();
      for (auto& x : vv) x = rng.normal();
      const double g = rng.uniform();
      const double l = rng.uniform();
      const auto fast = gae(rr, vv, g, l);
      const auto slow = brute_gae(rr, vv, g, l);
      for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(fast[k] - slow[k]) < 1e-10);
    }
  }

  TEST_CASE("batch advantages are normalized and returns use the raw estimate") {
    Policy pol(PolicyConfig{}, 16, 64);
    PpoConfig cfg;
    RewardNormalizer norm;
    Rng rng(7);
    auto batch = rollout(pol, pol, prompts(16, 7), coverage_reward(), cfg, norm, rng);
    std::vector<std::vector<double>> raw;
    for (auto& t : batch.trajectories) {
      // Non-zero values so returns differ from advantages.
      for (auto& v : t.values) v = rng.normal();
      raw.push_back(gae(t.rewards, t.values, cfg.gamma, cfg.gae_lambda));
    }
    gae_advantages(batch, cfg.gamma, cfg.gae_lambda);
    double s = 0.0;
    double s2 = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < batch.trajectories.size(); ++i) {
      const auto& t = batch.trajectories[i];
      for (std::size_t k = 0; k < t.advantages.size(); ++k) {
        CHECK(t.returns[k] == doctest::Approx(raw[i][k] + t.values[k]).epsilon(1e-12));
        s += t.advantages[k];
        s2 += t.advantages[k] * t.advantages[k];
        ++n;
      }
    }
    CHECK(std::abs(s / double(n)) < 1e-12);
    CHECK(s2 / double(n) == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("zero advantages leave the actor unchanged") {
    Policy pol(PolicyConfig{}, 16, 64);
    const Policy ref = pol;
    PpoConfig cfg;
    RewardNormalizer norm;
    Rng rng(8);
    auto batch = rollout(pol, ref, prompts(16, 8), coverage_reward(), cfg, norm, rng);
    gae_advantages(batch, cfg.gamma, cfg.gae_lambda);
    for (auto& t : batch.trajectories) std::fill(t.advantages.begin(), t.advantages.end(), 0.0);
    PpoOptimizers opt(pol);
    const auto actor0 = pol.actor();
    const auto critic0 = pol.critic();
    (void)ppo_update(pol, opt, batch, cfg);
    CHECK(pol.actor() == actor0);
    CHECK(pol.critic() != critic0);
  }

  TEST_CASE("at ratio one the surrogate gradient is the policy gradient") {
    Policy pol(PolicyConfig{}, 16, 64);
    PpoConfig cfg;
    cfg.ppo_epochs = 1;
    cfg.value_lr = 0.0;
    RewardNormalizer norm;
    Rng rng(9);
    auto batch = rollout(pol, pol, prompts(8, 9), coverage_reward(), cfg, norm, rng);
    gae_advantages(batch, cfg.gamma, cfg.gae_lambda);

    // Reference gradient of -mean(A * log pi).
    std::vector<std::vector<double>> rows;
    std::vector<Token> acts;
    std::vector<double> adv;
    for (const auto& t : batch.trajectories) {
      rows.insert(rows.end(), t.inputs.begin(), t.inputs.end());
      acts.insert(acts.end(), t.actions.begin(), t.actions.end());
      adv.insert(adv.end(), t.advantages.begin(), t.advantages.end());
    }
    const std::size_t n = acts.size();
    Tensor x(diff::Shape{n, static_cast<std::size_t>(pol.feature_dim())});
    for (std::size_t r = 0; r < n; ++r) std::copy(rows[r].begin(), rows[r].end(), &x[r * rows[r].size()]);
    diff::Tape tape;
    const auto b = bind(pol, tape);
    const auto heads = forward(b, x);
    const auto lp = action_logprobs(b, heads.logits, acts, cfg.temperature);
    tape.backward(diff::neg(diff::mean(diff::mul(lp, tape.constant(Tensor(diff::Shape{n}, adv))))));

    const double lr = 1e-3;
    cfg.policy_lr = lr;
    PpoOptimizers opt(pol);
    opt.actor = Optimizer(OptimizerConfig{OptimizerConfig::Kind::sgd}, pol.actor());
    Policy moved = pol;
    const auto st = ppo_update(moved, opt, batch, cfg);
    for (double r : st.ratios) CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t k = 0; k < pol.actor().size(); ++k) {
      const Tensor& g = b.actor[k].grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double step = (pol.actor()[k][i] - moved.actor()[k][i]) / lr;
        CHECK(step == doctest::Approx(g[i]).epsilon(1e-6).scale(1e-9));
      }
    }
  }

  TEST_CASE("clip fraction equals a recount of the ratios") {
    Policy pol(PolicyConfig{}, 16, 64);
    const Policy ref = pol;
    PpoConfig cfg;
    cfg.policy_lr = 3e-2;  // large enough that later epochs leave the clip band
    RewardNormalizer norm;
    Rng rng(10);
    auto batch = rollout(pol, ref, prompts(16, 10), coverage_reward(), cfg, norm, rng);
    gae_advantages(batch, cfg.gamma, cfg.gae_lambda);
    PpoOptimizers opt(pol);
    const auto st = ppo_update(pol, opt, batch, cfg);
    REQUIRE(st.ratios.size() == batch.steps() * static_cast<std::size_t>(cfg.ppo_epochs));
    std::size_t clipped = 0;
    for (double r : st.ratios) clipped += std::abs(r - 1.0) > cfg.clip_ratio;
    CHECK(st.clip_frac == double(clipped) / double(st.ratios.size()));
    CHECK(clipped > 0);
  }

  TEST_CASE("run_ppo is deterministic and the PoE head never calls the bias expert") {
    rm::PoeRewardHead head(rm::ExpertModel(rm::ExpertConfig::default_main(), 18),
                           rm::ExpertModel(rm::ExpertConfig::default_bias(), 18));
    head.bias().reset_forward_calls();
    Policy ref(PolicyConfig{}, 16, 64);
    PpoConfig cfg;
    cfg.iters = 3;
    cfg.prompts_per_iter = 8;
    cfg.eval_prompts = 16;
    const auto a = run_ppo(ref, RewardSource::poe_main(head), cfg, world());
    const auto b = run_ppo(ref, RewardSource::poe_main(head), cfg, world());
    CHECK(a.curves == b.curves);
    CHECK(a.policy.actor() == b.policy.actor());
    CHECK(head.bias().forward_calls() == 0);
    CHECK(head.main().forward_calls() > 0);
    std::ostringstream c1;
    std::ostringstream c2;
    write_curves(c1, a.curves);
    write_curves(c2, b.curves);
    CHECK(c1.str() == c2.str());
  }

  TEST_CASE("curves and policy files round trip") {
    std::vector<CurveRow> rows{{1, 0.1, 2.5, 5.25, 0.001, 0.0}, {2, -0.3, 1.0 / 3.0, 6.0, 0.02, 0.125}};
    std::ostringstream os;
    write_curves(os, rows);
    std::istringstream is(os.str());
    CHECK(read_curves(is) == rows);

    Policy pol(PolicyConfig{}, 16, 64);
    pol.critic()[1][0] = 0.3;
    std::ostringstream ps;
    write_policy(ps, pol);
    std::istringstream pis(ps.str());
    const Policy back = read_policy(pis);
    CHECK(back.actor() == pol.actor());
    CHECK(back.critic() == pol.critic());
    CHECK(back.config() == pol.config());

    std::istringstream bad("poe-policy v2\n");
    CHECK_THROWS_AS(read_policy(bad), PolicyError);
  }

  TEST_CASE("config validation") {
    PpoConfig cfg;
    cfg.clip_ratio = 0.0;
    CHECK_THROWS_AS(cfg.validate(), PolicyError);
    cfg = PpoConfig{};
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(cfg.validate(), PolicyError);
    PolicyConfig pc;
    pc.eos_floor = 0.0;
    CHECK_THROWS_AS(Policy(pc, 16, 64), PolicyError);
  }
}

TEST_SUITE("policyopt_slow") {
  TEST_CASE("imitation pre-training") {
    const auto& p = pretrained();
    const double gain = (p.report.final_loglik - p.report.initial_loglik) / std::abs(p.report.initial_loglik);
    CHECK(gain >= 0.3);
    // Greedy decoding emits only relevant information tokens and EOS.
    const auto vocab = p.policy.vocab();
    int ok = 0;
    Rng rng(1);
    for (std::size_t i = 0; i < 200; ++i) {
      const auto& prompt = p.train[i].prompt;
      const auto y = generate(p.policy, prompt, 0.0, rng);
      bool clean = true;
      for (auto t : y.tokens)
        clean = clean && (t == vocab.eos() ||
                          std::binary_search(prompt.relevant_set.begin(), prompt.relevant_set.end(), t));
      ok += clean;
    }
    CHECK(ok >= 160);
  }

  TEST_CASE("reference clone produces identical logits") {
    const Policy& ref = pretrained().policy;
    const Policy rl = ref;
    const auto ps = prompts(10, 12);
    for (const auto& pr : ps) {
      const auto x = features(ref, pr, {});
      diff::Tape t;
      const Tensor xt(diff::Shape{1, x.size()}, x);
      const Tensor a = forward(bind(ref, t), xt).logits.value();
      const Tensor b = forward(bind(rl, t), xt).logits.value();
      CHECK(a == b);
    }
  }

  TEST_CASE("a heavy KL penalty anchors the length") {
    PpoConfig cfg;
    cfg.beta_kl = 10.0;
    const auto run = run_ppo(pretrained().policy, length_reward(), cfg, world());
    CHECK(run.final.mean_len <= 1.1 * run.reference.mean_len);
    CHECK(run.final.mean_len >= 0.9 * run.reference.mean_len);
  }
}
