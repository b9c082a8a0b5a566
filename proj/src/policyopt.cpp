#include "poe/policyopt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace poe::ppo {

void PolicyConfig::validate() const {
  if (hidden < 1) throw PolicyError("policy.hidden must be >= 1");
  if (!(eos_floor > 0 && eos_floor < 1)) throw PolicyError("policy.eos_floor must lie in (0,1)");
}

namespace {

Tensor gaussian(diff::Shape shape, double sd, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

void check_shapes(const std::vector<Tensor>& got, const std::vector<Tensor>& want, const char* what) {
  if (got.size() != want.size()) throw PolicyError(std::string(what) + ": wrong number of tensors");
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (got[i].shape() != want[i].shape()) {
      throw PolicyError(std::string(what) + ": tensor " + std::to_string(i) + " has shape " +
                        diff::shape_str(got[i].shape()) + ", expected " + diff::shape_str(want[i].shape()));
    }
  }
}

}  // namespace

Policy::Policy(PolicyConfig cfg, int k_info, int max_len) : cfg_(cfg), k_info_(k_info), max_len_(max_len) {
  cfg_.validate();
  if (k_info < 1 || max_len < 1) throw PolicyError("policy needs k_info >= 1 and max_len >= 1");
  Rng rng(cfg_.param_seed);
  const auto f = static_cast<std::size_t>(feature_dim());
  const auto h = static_cast<std::size_t>(cfg_.hidden);
  const auto v = static_cast<std::size_t>(vocab_size());
  actor_.push_back(gaussian({f, h}, 1.0 / std::sqrt(static_cast<double>(f)), rng));
  actor_.emplace_back(diff::Shape{1, h}, 0.0);
  actor_.push_back(gaussian({h, v}, 0.1 / std::sqrt(static_cast<double>(h)), rng));
  actor_.emplace_back(diff::Shape{1, v}, 0.0);
  critic_.emplace_back(diff::Shape{h, 1}, 0.0);
  critic_.emplace_back(diff::Shape{1, 1}, 0.0);
}

Policy::Policy(PolicyConfig cfg, int k_info, int max_len, std::vector<Tensor> actor, std::vector<Tensor> critic)
    : Policy(cfg, k_info, max_len) {
  check_shapes(actor, actor_, "policy actor");
  check_shapes(critic, critic_, "policy critic");
  actor_ = std::move(actor);
  critic_ = std::move(critic);
}

std::vector<double> features(const Policy& policy, const synth::Prompt& prompt, const std::vector<Token>& prefix) {
  const int k = policy.k_info();
  std::vector<double> x(static_cast<std::size_t>(policy.feature_dim()), 0.0);
  const synth::Vocab vocab = policy.vocab();
  for (Token t : prompt.relevant_set)
    if (vocab.is_info(t)) x[static_cast<std::size_t>(t)] = 1.0;
  int fillers = 0;
  for (Token t : prefix) {
    if (vocab.is_info(t)) {
      x[static_cast<std::size_t>(k + t)] = 1.0;
    } else if (t == vocab.filler()) {
      ++fillers;
    }
  }
  bool missing = false;
  for (int i = 0; i < k; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const double m = x[u] > 0 && x[static_cast<std::size_t>(k) + u] == 0 ? 1.0 : 0.0;
    x[static_cast<std::size_t>(2 * k) + u] = m;
    missing = missing || m > 0;
  }
  const double L = policy.max_len();
  x[static_cast<std::size_t>(3 * k)] = fillers / L;
  x[static_cast<std::size_t>(3 * k + 1)] = static_cast<double>(prefix.size()) / L;
  x[static_cast<std::size_t>(3 * k + 2)] = missing ? 0.0 : 1.0;
  return x;
}

BoundPolicy bind(const Policy& policy, Tape& tape) {
  BoundPolicy b;
  b.policy = &policy;
  for (const auto& p : policy.actor()) b.actor.push_back(tape.leaf(p));
  for (const auto& p : policy.critic()) b.critic.push_back(tape.leaf(p));
  return b;
}

PolicyHeads forward(const BoundPolicy& bound, const Tensor& x) {
  Tape& tape = *bound.actor[0].tape();
  Var in = tape.constant(x);
  Var h = diff::tanh(diff::add(diff::matmul(in, bound.actor[0]), bound.actor[1]));
  PolicyHeads out;
  out.logits = diff::add(diff::matmul(h, bound.actor[2]), bound.actor[3]);
  Var trunk = tape.constant(h.value());
  out.value = diff::add(diff::matmul(trunk, bound.critic[0]), bound.critic[1]);
  return out;
}

Var action_logprobs(const BoundPolicy& bound, Var logits, const std::vector<Token>& actions, double temperature) {
  const Policy& policy = *bound.policy;
  const double eps = policy.config().eos_floor;
  const auto eos = static_cast<std::size_t>(policy.vocab().eos());
  const std::size_t n = actions.size();
  std::vector<std::size_t> cols(n), eos_cols(n, eos);
  Tensor is_eos(diff::Shape{n}), not_eos(diff::Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    cols[i] = static_cast<std::size_t>(actions[i]);
    is_eos[i] = cols[i] == eos ? 1.0 : 0.0;
    not_eos[i] = 1.0 - is_eos[i];
  }
  Tape& tape = *logits.tape();
  Var z = diff::scale(logits, 1.0 / temperature);
  // Non-EOS tokens: log(1 - eps) + log_softmax. EOS: log((1 - eps) p + eps).
  Var lp_tok = diff::shift(diff::pick(diff::log_softmax(z), cols), std::log1p(-eps));
  Var lp_eos = diff::log(diff::shift(diff::scale(diff::pick(diff::softmax(z), eos_cols), 1.0 - eps), eps));
  return diff::add(diff::mul(lp_tok, tape.constant(std::move(not_eos))),
                   diff::mul(lp_eos, tape.constant(std::move(is_eos))));
}

std::vector<double> distribution(const Policy& policy, std::span<const double> logits_row, double temperature) {
  const double eps = policy.config().eos_floor;
  std::vector<double> p(logits_row.size());
  const double mx = *std::max_element(logits_row.begin(), logits_row.end()) / temperature;
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits_row[i] / temperature - mx);
    s += p[i];
  }
  for (auto& v : p) v = (1.0 - eps) * v / s;
  p[static_cast<std::size_t>(policy.vocab().eos())] += eps;
  return p;
}

Token sample_token(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double c = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    c += probs[i];
    if (u < c) return static_cast<Token>(i);
  }
  return static_cast<Token>(probs.size() - 1);
}

namespace {

Tensor stack_rows(const std::vector<std::vector<double>>& rows, std::size_t cols) {
  Tensor t(diff::Shape{rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), &t[r * cols]);
  return t;
}

Token argmax_token(std::span<const double> p) {
  return static_cast<Token>(std::max_element(p.begin(), p.end()) - p.begin());
}

synth::Sequence finish(std::vector<Token> tokens, const synth::Vocab& vocab) {
  return synth::Sequence::from_tokens(std::move(tokens), vocab);
}

}  // namespace

synth::Sequence generate(const Policy& policy, const synth::Prompt& prompt, double temperature, Rng& rng) {
  const synth::Vocab vocab = policy.vocab();
  std::vector<Token> prefix;
  while (static_cast<int>(prefix.size()) < policy.max_len()) {
    Tape tape;
    const BoundPolicy b = bind(policy, tape);
    const auto x = features(policy, prompt, prefix);
    const auto heads = forward(b, Tensor(diff::Shape{1, x.size()}, x));
    const auto p = distribution(policy, heads.logits.value().data(), temperature > 0 ? temperature : 1.0);
    const Token t = temperature > 0 ? sample_token(p, rng) : argmax_token(p);
    prefix.push_back(t);
    if (t == vocab.eos()) break;
  }
  return finish(std::move(prefix), vocab);
}

// ---------------------------------------------------------------------------
// Imitation

void ImitationConfig::validate() const {
  if (epochs < 0) throw PolicyError("imitation.epochs must be >= 0");
  if (!(lr >= 0)) throw PolicyError("imitation.lr must be >= 0");
  if (batch_size == 0) throw PolicyError("imitation.batch_size must be > 0");
}

namespace {

struct StepSet {
  std::vector<std::vector<double>> inputs;
  std::vector<Token> actions;
};

void add_demo(const Policy& policy, const synth::Demo& d, StepSet& out) {
  std::vector<Token> prefix;
  for (Token t : d.response.tokens) {
    if (!policy.vocab().contains(t)) throw PolicyError("demo contains a token outside the vocabulary");
    out.inputs.push_back(features(policy, d.prompt, prefix));
    out.actions.push_back(t);
    prefix.push_back(t);
  }
}

Var steps_loglik(const BoundPolicy& b, const StepSet& s, double temperature) {
  const auto heads = forward(b, stack_rows(s.inputs, static_cast<std::size_t>(b.policy->feature_dim())));
  return diff::mean(action_logprobs(b, heads.logits, s.actions, temperature));
}

}  // namespace

double mean_loglik(const Policy& policy, const std::vector<synth::Demo>& demos) {
  StepSet s;
  for (const auto& d : demos) add_demo(policy, d, s);
  if (s.actions.empty()) throw PolicyError("mean_loglik: no demo tokens");
  Tape tape;
  return steps_loglik(bind(policy, tape), s, 1.0).item();
}

ImitationReport imitation_pretrain(Policy& policy, const std::vector<synth::Demo>& train,
                                   const std::vector<synth::Demo>& heldout, const ImitationConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw PolicyError("imitation_pretrain: no demos");
  ImitationReport rep;
  rep.initial_loglik = mean_loglik(policy, heldout.empty() ? train : heldout);
  Optimizer opt(OptimizerConfig{}, policy.actor());
  Rng rng(derive_seed(cfg.seed, "imitation.order"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      StepSet s;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t i = start; i < end; ++i) add_demo(policy, train[order[i]], s);
      Tape tape;
      const BoundPolicy b = bind(policy, tape);
      Var loss = diff::neg(steps_loglik(b, s, 1.0));
      if (!std::isfinite(loss.item())) {
        throw PolicyError("imitation_pretrain: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batches));
      }
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (const auto& v : b.actor) grads.push_back(v.grad());
      opt.step(policy.actor(), grads, cfg.lr);
      total += loss.item();
      ++batches;
    }
    rep.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  rep.final_loglik = mean_loglik(policy, heldout.empty() ? train : heldout);
  return rep;
}

// ---------------------------------------------------------------------------
// Reward sources

RewardSource RewardSource::vanilla(const rm::ExpertModel& model) {
  return RewardSource("vanilla", [&model](const synth::Prompt& p, const synth::Sequence& y) {
    return rm::score_value(model, p, y);
  });
}

RewardSource RewardSource::poe_main(const rm::PoeRewardHead& head) {
  return RewardSource("poe_main", [&head](const synth::Prompt& p, const synth::Sequence& y) {
    return rm::inference_reward(head, p, y);
  });
}

// ---------------------------------------------------------------------------
// PPO

void PpoConfig::validate() const {
  if (!(beta_kl >= 0)) throw PolicyError("ppo.beta_kl must be >= 0");
  if (!(clip_ratio > 0 && clip_ratio < 1)) throw PolicyError("ppo.clip_ratio must lie in (0,1)");
  if (!(reward_clip > 0)) throw PolicyError("ppo.reward_clip must be > 0");
  if (rollouts_per_prompt < 1) throw PolicyError("ppo.rollouts_per_prompt must be >= 1");
  if (max_len < 0) throw PolicyError("ppo.max_len must be >= 0");
  if (!(gamma >= 0 && gamma <= 1)) throw PolicyError("ppo.gamma must lie in [0,1]");
  if (!(gae_lambda >= 0 && gae_lambda <= 1)) throw PolicyError("ppo.gae_lambda must lie in [0,1]");
  if (!(policy_lr >= 0) || !(value_lr >= 0)) throw PolicyError("ppo learning rates must be >= 0");
  if (!(temperature > 0)) throw PolicyError("ppo.temperature must be > 0");
  if (iters < 0) throw PolicyError("ppo.iters must be >= 0");
  if (prompts_per_iter < 1) throw PolicyError("ppo.prompts_per_iter must be >= 1");
  if (ppo_epochs < 1) throw PolicyError("ppo.ppo_epochs must be >= 1");
  if (eval_prompts < 1) throw PolicyError("ppo.eval_prompts must be >= 1");
}

void RewardNormalizer::update(double x) {
  ++n_;
  const double d = x - mean_;
  mean_ += d / static_cast<double>(n_);
  m2_ += d * (x - mean_);
}

double RewardNormalizer::stddev() const { return n_ < 2 ? 1.0 : std::sqrt(m2_ / static_cast<double>(n_ - 1)); }

double RewardNormalizer::normalize(double x) const { return (x - mean_) / std::max(stddev(), 1e-6); }

std::size_t RolloutBatch::steps() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.actions.size();
  return n;
}

RolloutBatch rollout(const Policy& policy, const Policy& reference, const std::vector<synth::Prompt>& prompts,
                     const RewardSource& rm, const PpoConfig& cfg, RewardNormalizer& norm, Rng& rng) {
  if (policy.feature_dim() != reference.feature_dim() || policy.vocab_size() != reference.vocab_size()) {
    throw PolicyError("rollout: policy and reference disagree on the vocabulary");
  }
  const synth::Vocab vocab = policy.vocab();
  const int max_len = cfg.max_len > 0 ? std::min(cfg.max_len, policy.max_len()) : policy.max_len();
  const auto fdim = static_cast<std::size_t>(policy.feature_dim());

  RolloutBatch batch;
  for (const auto& p : prompts)
    for (int r = 0; r < cfg.rollouts_per_prompt; ++r) {
      Trajectory t;
      t.prompt = p;
      batch.trajectories.push_back(std::move(t));
    }
  auto& trajs = batch.trajectories;

  std::vector<std::vector<Token>> prefix(trajs.size());
  std::vector<std::size_t> active(trajs.size());
  std::iota(active.begin(), active.end(), std::size_t{0});
  while (!active.empty()) {
    std::vector<std::vector<double>> rows;
    rows.reserve(active.size());
    for (auto i : active) rows.push_back(features(policy, trajs[i].prompt, prefix[i]));
    const Tensor x = stack_rows(rows, fdim);

    Tape tape;
    const BoundPolicy bp = bind(policy, tape);
    const auto heads = forward(bp, x);
    std::vector<Token> acts(active.size());
    for (std::size_t r = 0; r < active.size(); ++r) {
      const auto row = heads.logits.value().data().subspan(r * static_cast<std::size_t>(policy.vocab_size()),
                                                           static_cast<std::size_t>(policy.vocab_size()));
      acts[r] = sample_token(distribution(policy, row, cfg.temperature), rng);
    }
    const Var lp = action_logprobs(bp, heads.logits, acts, cfg.temperature);
    const BoundPolicy br = bind(reference, tape);
    const Var lr = action_logprobs(br, forward(br, x).logits, acts, cfg.temperature);

    std::vector<std::size_t> still;
    for (std::size_t r = 0; r < active.size(); ++r) {
      const auto i = active[r];
      Trajectory& t = trajs[i];
      t.inputs.push_back(std::move(rows[r]));
      t.actions.push_back(acts[r]);
      t.logp.push_back(lp.value()[r]);
      t.ref_logp.push_back(lr.value()[r]);
      t.values.push_back(heads.value.value()[r]);
      prefix[i].push_back(acts[r]);
      if (acts[r] != vocab.eos() && static_cast<int>(prefix[i].size()) < max_len) still.push_back(i);
    }
    active = std::move(still);
  }

  for (std::size_t i = 0; i < trajs.size(); ++i) {
    Trajectory& t = trajs[i];
    t.response = finish(prefix[i], vocab);
    t.rm_raw = rm(t.prompt, t.response);
    if (!std::isfinite(t.rm_raw)) throw PpoDiverged("rollout: reward source returned a non-finite score");
    if (cfg.reward_norm) norm.update(t.rm_raw);
  }
  for (auto& t : trajs) {
    const double r = cfg.reward_norm ? norm.normalize(t.rm_raw) : t.rm_raw;
    t.rm_applied = std::clamp(r, -cfg.reward_clip, cfg.reward_clip);
    t.rewards.resize(t.actions.size());
    for (std::size_t s = 0; s < t.actions.size(); ++s) t.rewards[s] = -cfg.beta_kl * (t.logp[s] - t.ref_logp[s]);
    t.rewards.back() += t.rm_applied;
  }
  return batch;
}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lam) {
  if (rewards.size() != values.size()) throw std::invalid_argument("gae: rewards and values differ in length");
  std::vector<double> adv(rewards.size());
  double next_value = 0.0;
  double running = 0.0;
  for (std::size_t k = rewards.size(); k-- > 0;) {
    const double delta = rewards[k] + gamma * next_value - values[k];
    running = delta + gamma * lam * running;
    adv[k] = running;
    next_value = values[k];
  }
  return adv;
}

void gae_advantages(RolloutBatch& batch, double gamma, double lam) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (auto& t : batch.trajectories) {
    t.advantages = gae(t.rewards, t.values, gamma, lam);
    t.returns.resize(t.advantages.size());
    for (std::size_t k = 0; k < t.advantages.size(); ++k) {
      t.returns[k] = t.advantages[k] + t.values[k];
      sum += t.advantages[k];
      ++n;
    }
  }
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  for (const auto& t : batch.trajectories)
    for (double a : t.advantages) sq += (a - mean) * (a - mean);
  const double sd = std::max(std::sqrt(sq / static_cast<double>(n)), 1e-6);
  for (auto& t : batch.trajectories)
    for (auto& a : t.advantages) a = (a - mean) / sd;
}

PpoStats ppo_update(Policy& policy, PpoOptimizers& opt, const RolloutBatch& batch, const PpoConfig& cfg) {
  std::vector<std::vector<double>> rows;
  std::vector<Token> acts;
  std::vector<double> old_lp, adv, ret;
  for (const auto& t : batch.trajectories) {
    if (t.advantages.size() != t.actions.size()) throw PolicyError("ppo_update: advantages missing");
    rows.insert(rows.end(), t.inputs.begin(), t.inputs.end());
    acts.insert(acts.end(), t.actions.begin(), t.actions.end());
    old_lp.insert(old_lp.end(), t.logp.begin(), t.logp.end());
    adv.insert(adv.end(), t.advantages.begin(), t.advantages.end());
    ret.insert(ret.end(), t.returns.begin(), t.returns.end());
  }
  const std::size_t n = acts.size();
  if (n == 0) throw PolicyError("ppo_update: empty batch");
  const Tensor x = stack_rows(rows, static_cast<std::size_t>(policy.feature_dim()));

  PpoStats st;
  st.ratios.reserve(n * static_cast<std::size_t>(cfg.ppo_epochs));
  std::size_t clipped = 0;
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    Tape tape;
    const BoundPolicy b = bind(policy, tape);
    const auto heads = forward(b, x);
    const Var lp = action_logprobs(b, heads.logits, acts, cfg.temperature);
    const Var ratio = diff::exp(diff::sub(lp, tape.constant(Tensor(diff::Shape{n}, old_lp))));
    const Var a = tape.constant(Tensor(diff::Shape{n}, adv));
    const Var surr = diff::minimum(diff::mul(ratio, a),
                                   diff::mul(diff::clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio), a));
    const Var policy_loss = diff::neg(diff::mean(surr));
    const Var err = diff::sub(heads.value, tape.constant(Tensor(diff::Shape{n, 1}, ret)));
    const Var value_loss = diff::mean(diff::mul(err, err));
    const Var loss = diff::add(policy_loss, value_loss);
    if (!std::isfinite(loss.item())) {
      throw PpoDiverged("ppo_update: non-finite loss at epoch " + std::to_string(epoch) + " (policy " +
                        std::to_string(policy_loss.item()) + ", value " + std::to_string(value_loss.item()) + ")");
    }
    for (double r : ratio.value().data()) {
      st.ratios.push_back(r);
      if (std::abs(r - 1.0) > cfg.clip_ratio) ++clipped;
    }
    st.policy_loss += policy_loss.item();
    st.value_loss += value_loss.item();
    tape.backward(loss);
    std::vector<Tensor> ga, gc;
    for (const auto& v : b.actor) ga.push_back(v.grad());
    for (const auto& v : b.critic) gc.push_back(v.grad());
    opt.actor.step(policy.actor(), ga, cfg.policy_lr);
    opt.critic.step(policy.critic(), gc, cfg.value_lr);
  }
  const double m = static_cast<double>(st.ratios.size());
  st.mean_ratio = std::accumulate(st.ratios.begin(), st.ratios.end(), 0.0) / m;
  st.clip_frac = static_cast<double>(clipped) / m;
  st.policy_loss /= cfg.ppo_epochs;
  st.value_loss /= cfg.ppo_epochs;
  return st;
}

EvalSummary evaluate(const Policy& policy, const RewardSource& rm, const synth::WorldConfig& world, double temperature,
                     int n_prompts, std::uint64_t seed) {
  Rng prompts(derive_seed(seed, "eval.prompts"));
  Rng draws(derive_seed(seed, "eval.sample"));
  EvalSummary s;
  for (int i = 0; i < n_prompts; ++i) {
    const auto p = synth::sample_prompt(world, prompts);
    const auto y = generate(policy, p, temperature, draws);
    s.mean_len += y.len;
    s.true_reward += synth::true_reward(p, y, world);
    s.rm_reward += rm(p, y);
  }
  s.mean_len /= n_prompts;
  s.true_reward /= n_prompts;
  s.rm_reward /= n_prompts;
  return s;
}

PpoRun run_ppo(const Policy& reference, const RewardSource& rm, const PpoConfig& cfg, const synth::WorldConfig& world) {
  cfg.validate();
  if (reference.k_info() != world.k_info) throw PolicyError("run_ppo: policy and world disagree on k_info");
  PpoRun run{.curves = {},
             .reference = evaluate(reference, rm, world, cfg.temperature, cfg.eval_prompts, cfg.seed),
             .final = {},
             .policy = reference};
  PpoOptimizers opt(run.policy);
  RewardNormalizer norm;
  Rng prompt_rng(derive_seed(cfg.seed, "ppo.prompts"));
  Rng sample_rng(derive_seed(cfg.seed, "ppo.sample"));
  for (int it = 1; it <= cfg.iters; ++it) {
    std::vector<synth::Prompt> prompts;
    for (int i = 0; i < cfg.prompts_per_iter; ++i) prompts.push_back(synth::sample_prompt(world, prompt_rng));
    auto batch = rollout(run.policy, reference, prompts, rm, cfg, norm, sample_rng);
    gae_advantages(batch, cfg.gamma, cfg.gae_lambda);
    const auto st = ppo_update(run.policy, opt, batch, cfg);

    CurveRow row;
    row.iter = it;
    double kl = 0.0;
    for (const auto& t : batch.trajectories) {
      row.rm_reward += t.rm_raw;
      row.true_reward += synth::true_reward(t.prompt, t.response, world);
      row.mean_len += t.response.len;
      for (std::size_t k = 0; k < t.logp.size(); ++k) kl += t.logp[k] - t.ref_logp[k];
    }
    const auto m = static_cast<double>(batch.trajectories.size());
    row.rm_reward /= m;
    row.true_reward /= m;
    row.mean_len /= m;
    row.mean_kl = kl / static_cast<double>(batch.steps());
    row.clip_frac = st.clip_frac;
    run.curves.push_back(row);
  }
  run.final = evaluate(run.policy, rm, world, cfg.temperature, cfg.eval_prompts, cfg.seed);
  return run;
}

// ---------------------------------------------------------------------------
// Files

namespace {

constexpr const char* kCurvesHeader = "# poe-ppo-curves v1";
constexpr const char* kCurvesColumns = "iter,rm_reward,true_reward,mean_len,mean_kl,clip_frac";
constexpr const char* kPolicyHeader = "poe-policy v1";

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_curves(std::ostream& os, const std::vector<CurveRow>& rows) {
  os << kCurvesHeader << '\n' << kCurvesColumns << '\n';
  for (const auto& r : rows) {
    os << r.iter << ',' << num(r.rm_reward) << ',' << num(r.true_reward) << ',' << num(r.mean_len) << ','
       << num(r.mean_kl) << ',' << num(r.clip_frac) << '\n';
  }
}

std::vector<CurveRow> read_curves(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCurvesHeader) throw PolicyError("curves: bad or missing header");
  if (!std::getline(is, line) || line != kCurvesColumns) throw PolicyError("curves: unexpected column line");
  std::vector<CurveRow> rows;
  int lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    CurveRow r;
    char c1, c2, c3, c4, c5;
    if (!(ls >> r.iter >> c1 >> r.rm_reward >> c2 >> r.true_reward >> c3 >> r.mean_len >> c4 >> r.mean_kl >> c5 >>
          r.clip_frac)) {
      throw PolicyError("curves: malformed row at line " + std::to_string(lineno));
    }
    rows.push_back(r);
  }
  return rows;
}

void write_policy(std::ostream& os, const Policy& policy) {
  const auto& c = policy.config();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", c.eos_floor);
  os << kPolicyHeader << '\n';
  os << "k_info " << policy.k_info() << '\n';
  os << "max_len " << policy.max_len() << '\n';
  os << "hidden " << c.hidden << '\n';
  os << "eos_floor " << buf << '\n';
  os << "param_seed " << c.param_seed << '\n';
  for (const auto& t : policy.actor()) rm::write_tensor(os, t);
  for (const auto& t : policy.critic()) rm::write_tensor(os, t);
}

Policy read_policy(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kPolicyHeader) throw PolicyError("policy: bad or missing header");
  auto field = [&](const char* key) {
    std::string k, v;
    if (!(is >> k >> v) || k != key) throw PolicyError(std::string("policy: expected field '") + key + "'");
    return v;
  };
  const int k_info = std::stoi(field("k_info"));
  const int max_len = std::stoi(field("max_len"));
  PolicyConfig c;
  c.hidden = std::stoi(field("hidden"));
  c.eos_floor = std::strtod(field("eos_floor").c_str(), nullptr);
  c.param_seed = std::stoull(field("param_seed"));
  std::vector<Tensor> actor, critic;
  for (int i = 0; i < 4; ++i) actor.push_back(rm::read_tensor(is));
  for (int i = 0; i < 2; ++i) critic.push_back(rm::read_tensor(is));
  return Policy(c, k_info, max_len, std::move(actor), std::move(critic));
}

}  // namespace poe::ppo
