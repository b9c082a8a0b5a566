#pragma once

// Toy autoregressive policy over the synthetic vocabulary, imitation
// pre-training of the reference policy, and PPO against a scalar reward
// source with a per-token KL penalty toward the reference.
//
// The policy sees a bag-of-tokens summary of the prompt and of what it has
// emitted so far; there is no recurrence. One tanh trunk feeds a token head
// and a value head. The value head reads the trunk activations as constants,
// so value regression never moves the token distribution.

#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "poe/diffcore.hpp"
#include "poe/optim.hpp"
#include "poe/rmodels.hpp"
#include "poe/rng.hpp"
#include "poe/synthworld.hpp"

namespace poe::ppo {

using diff::Tape;
using diff::Tensor;
using diff::Var;
using synth::Token;

class PolicyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PolicyConfig {
  int hidden = 64;
  double eos_floor = 1e-4;
  std::uint64_t param_seed = 3;

  void validate() const;
  bool operator==(const PolicyConfig&) const = default;
};

class Policy {
 public:
  Policy(PolicyConfig cfg, int k_info, int max_len);
  Policy(PolicyConfig cfg, int k_info, int max_len, std::vector<Tensor> actor, std::vector<Tensor> critic);

  const PolicyConfig& config() const { return cfg_; }
  int k_info() const { return k_info_; }
  int max_len() const { return max_len_; }
  synth::Vocab vocab() const { return synth::Vocab{k_info_}; }
  int vocab_size() const { return k_info_ + 2; }
  int feature_dim() const { return 3 * k_info_ + 3; }

  // actor: W1, b1, W_token, b_token. critic: W_value, b_value.
  std::vector<Tensor>& actor() { return actor_; }
  const std::vector<Tensor>& actor() const { return actor_; }
  std::vector<Tensor>& critic() { return critic_; }
  const std::vector<Tensor>& critic() const { return critic_; }

 private:
  PolicyConfig cfg_;
  int k_info_;
  int max_len_;
  std::vector<Tensor> actor_;
  std::vector<Tensor> critic_;
};

// Feature row for the next decision given the tokens emitted so far:
// prompt multi-hot, emitted-info indicators, still-missing relevant tokens,
// filler count / max_len, position / max_len, and a "nothing missing" flag.
std::vector<double> features(const Policy& policy, const synth::Prompt& prompt, const std::vector<Token>& prefix);

struct BoundPolicy {
  const Policy* policy = nullptr;
  std::vector<Var> actor;
  std::vector<Var> critic;
};

BoundPolicy bind(const Policy& policy, Tape& tape);

struct PolicyHeads {
  Var logits;  // n x vocab, untempered
  Var value;   // n x 1
};

PolicyHeads forward(const BoundPolicy& bound, const Tensor& features);

// Log-probability of each row's action under the tempered distribution with
// the EOS floor: p = (1 - eps) * softmax(logits / T) + eps * [a == EOS].
Var action_logprobs(const BoundPolicy& bound, Var logits, const std::vector<Token>& actions, double temperature);

// Full next-token distribution for one row of logits.
std::vector<double> distribution(const Policy& policy, std::span<const double> logits_row, double temperature);

Token sample_token(std::span<const double> probs, Rng& rng);

// Decode one response. temperature <= 0 selects greedy decoding.
synth::Sequence generate(const Policy& policy, const synth::Prompt& prompt, double temperature, Rng& rng);

// ---------------------------------------------------------------------------
// Imitation pre-training

struct ImitationConfig {
  int epochs = 30;
  double lr = 3e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 5;

  void validate() const;
  bool operator==(const ImitationConfig&) const = default;
};

struct ImitationReport {
  std::vector<double> epoch_loss;
  double initial_loglik = 0.0;  // mean per-token log-likelihood on held-out demos
  double final_loglik = 0.0;
};

// Mean per-token log-likelihood of the demos at temperature 1.
double mean_loglik(const Policy& policy, const std::vector<synth::Demo>& demos);

// Trains `policy` by next-token cross-entropy on `train` and reports the
// log-likelihood on `heldout` before and after.
ImitationReport imitation_pretrain(Policy& policy, const std::vector<synth::Demo>& train,
                                   const std::vector<synth::Demo>& heldout, const ImitationConfig& cfg);

// ---------------------------------------------------------------------------
// Reward sources

class RewardSource {
 public:
  using Fn = std::function<double(const synth::Prompt&, const synth::Sequence&)>;

  RewardSource(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}

  // Vanilla reward model: the single expert's score.
  static RewardSource vanilla(const rm::ExpertModel& model);
  // PoE reward model at inference: the main expert only.
  static RewardSource poe_main(const rm::PoeRewardHead& head);

  double operator()(const synth::Prompt& p, const synth::Sequence& y) const { return fn_(p, y); }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  Fn fn_;
};

// ---------------------------------------------------------------------------
// PPO

struct PpoConfig {
  double beta_kl = 0.05;
  double clip_ratio = 0.2;
  int rollouts_per_prompt = 4;
  int max_len = 0;  // 0 selects the policy's max_len
  double gamma = 1.0;
  double gae_lambda = 0.95;
  double policy_lr = 3e-4;
  double value_lr = 1e-3;
  double reward_clip = 0.8;
  bool reward_norm = true;
  double temperature = 0.8;
  int iters = 200;
  int prompts_per_iter = 64;
  int ppo_epochs = 4;
  int eval_prompts = 512;
  std::uint64_t seed = 11;

  void validate() const;
  bool operator==(const PpoConfig&) const = default;
};

// Running mean / variance (Welford) of raw reward-model scores.
class RewardNormalizer {
 public:
  void update(double x);
  double normalize(double x) const;
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double stddev() const;

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct Trajectory {
  synth::Prompt prompt;
  synth::Sequence response;
  std::vector<Token> actions;               // one per decision, EOS included when sampled
  std::vector<std::vector<double>> inputs;  // feature row per decision
  std::vector<double> logp;                 // policy
  std::vector<double> ref_logp;             // reference
  std::vector<double> values;
  std::vector<double> rewards;              // shaped, per decision
  std::vector<double> advantages;
  std::vector<double> returns;
  double rm_raw = 0.0;                      // reward-model score
  double rm_applied = 0.0;                  // after normalization and clipping
};

struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  std::size_t steps() const;
};

// Samples rollouts_per_prompt responses per prompt, scores each finished
// sequence once, and fills logp, ref_logp, values and shaped rewards.
RolloutBatch rollout(const Policy& policy, const Policy& reference, const std::vector<synth::Prompt>& prompts,
                     const RewardSource& rm, const PpoConfig& cfg, RewardNormalizer& norm, Rng& rng);

// Generalized advantage estimates for one trajectory, before normalization.
// The value after the final decision is taken as 0.
std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lam);

// Fills advantages (normalized over the whole batch) and returns
// (unnormalized advantage + value).
void gae_advantages(RolloutBatch& batch, double gamma, double lam);

struct PpoStats {
  double mean_ratio = 0.0;
  double clip_frac = 0.0;
  double value_loss = 0.0;
  double policy_loss = 0.0;
  std::vector<double> ratios;  // every ratio seen, all epochs
};

class PpoDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PpoOptimizers {
  Optimizer actor;
  Optimizer critic;
  explicit PpoOptimizers(const Policy& p)
      : actor(OptimizerConfig{}, p.actor()), critic(OptimizerConfig{}, p.critic()) {}
};

PpoStats ppo_update(Policy& policy, PpoOptimizers& opt, const RolloutBatch& batch, const PpoConfig& cfg);

struct CurveRow {
  int iter = 0;
  double rm_reward = 0.0;    // mean raw reward-model score
  double true_reward = 0.0;  // evaluation only
  double mean_len = 0.0;
  double mean_kl = 0.0;      // mean per-token log(pi / pi_ref) of sampled tokens
  double clip_frac = 0.0;

  bool operator==(const CurveRow&) const = default;
};

struct EvalSummary {
  double mean_len = 0.0;
  double true_reward = 0.0;
  double rm_reward = 0.0;
};

struct PpoRun {
  std::vector<CurveRow> curves;
  EvalSummary reference;  // reference policy on the evaluation prompts
  EvalSummary final;      // trained policy on the same prompts and draws
  Policy policy;
};

// Samples one response per evaluation prompt and averages length, hidden
// true reward and reward-model score.
EvalSummary evaluate(const Policy& policy, const RewardSource& rm, const synth::WorldConfig& world, double temperature,
                     int n_prompts, std::uint64_t seed);

PpoRun run_ppo(const Policy& reference, const RewardSource& rm, const PpoConfig& cfg, const synth::WorldConfig& world);

// Curves table: header line, then iter,rm_reward,true_reward,mean_len,mean_kl,clip_frac.
void write_curves(std::ostream& os, const std::vector<CurveRow>& rows);
std::vector<CurveRow> read_curves(std::istream& is);

void write_policy(std::ostream& os, const Policy& policy);
Policy read_policy(std::istream& is);

}  // namespace poe::ppo
