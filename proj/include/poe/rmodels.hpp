#pragma once

// Scoring experts for reward modeling. An ExpertModel embeds the token
// stream prompt + SEP + response, pools it, and maps the pooled vector
// through a small MLP to one scalar. A PoeRewardHead pairs a main expert with
// a bias-only expert whose input embeddings receive Gaussian noise.

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "poe/diffcore.hpp"
#include "poe/rng.hpp"
#include "poe/synthworld.hpp"

namespace poe::rm {

using diff::Tape;
using diff::Tensor;
using diff::Var;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Pooling : std::uint8_t { mean, sum };
enum class Activation : std::uint8_t { tanh, relu };

const char* to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);
const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct ExpertConfig {
  int embed_dim = 32;
  std::vector<int> hidden_dims{64, 64};
  Pooling pooling = Pooling::mean;
  Activation activation = Activation::tanh;
  double lr = 1e-3;
  double noise_sigma = 0.0;
  std::uint64_t param_seed = 1;

  void validate() const;
  bool operator==(const ExpertConfig&) const = default;

  static ExpertConfig default_main();
  static ExpertConfig default_bias();
};

// Exact number of trainable scalars for a model over `vocab_size` tokens
// (SEP included).
std::size_t param_count(const ExpertConfig& cfg, int vocab_size);

// Forward-pass counter that survives copies by value.
class CallCounter {
 public:
  CallCounter() = default;
  CallCounter(const CallCounter& o) : n_(o.get()) {}
  CallCounter& operator=(const CallCounter& o) {
    n_.store(o.get());
    return *this;
  }
  void bump() { n_.fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t get() const { return n_.load(std::memory_order_relaxed); }
  void reset() { n_.store(0); }

 private:
  std::atomic<std::uint64_t> n_{0};
};

class ExpertModel {
 public:
  // `world_vocab_size` excludes SEP; the model appends it.
  ExpertModel(ExpertConfig cfg, int world_vocab_size);
  ExpertModel(ExpertConfig cfg, int world_vocab_size, std::vector<Tensor> params);

  const ExpertConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  int vocab_size() const { return world_vocab_ + 1; }
  int world_vocab_size() const { return world_vocab_; }
  synth::Token sep_token() const { return world_vocab_; }

  // Layout: embedding, then (weight, bias) per hidden layer, then the head.
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::size_t param_count() const;

  void zero_head();
  Tensor& head_bias() { return params_.back(); }

  std::uint64_t forward_calls() const { return calls_.get(); }
  void reset_forward_calls() { calls_.reset(); }
  void note_forward() const { calls_.bump(); }

 private:
  ExpertConfig cfg_;
  int world_vocab_;
  std::vector<Tensor> params_;
  mutable CallCounter calls_;
};

// Model parameters registered as leaves on one tape.
struct BoundExpert {
  const ExpertModel* model = nullptr;
  std::vector<Var> params;
};

BoundExpert bind(const ExpertModel& model, Tape& tape);

// Gradients of the bound parameters after Tape::backward.
std::vector<Tensor> gradients(const BoundExpert& bound);

// Token ids fed to an expert: prompt tokens, SEP, response tokens without EOS.
std::vector<std::size_t> input_stream(const ExpertModel& model, const synth::Prompt& prompt,
                                      const synth::Sequence& y);

// Scalar score node. With a non-null rng and noise_sigma > 0, fresh
// Gaussian noise of that std is added to every input embedding.
Var score(const BoundExpert& bound, const synth::Prompt& prompt, const synth::Sequence& y, Rng* rng);

// Deterministic, noise-free score without keeping a tape around.
double score_value(const ExpertModel& model, const synth::Prompt& prompt, const synth::Sequence& y);

class PoeRewardHead {
 public:
  PoeRewardHead(ExpertModel main, ExpertModel bias);

  ExpertModel& main() { return main_; }
  const ExpertModel& main() const { return main_; }
  ExpertModel& bias() { return bias_; }
  const ExpertModel& bias() const { return bias_; }

 private:
  ExpertModel main_;
  ExpertModel bias_;
};

struct PoeScore {
  Var combined;
  double main_only = 0.0;
  double bias_only = 0.0;
};

// combined = main + bias; noise (when rng is given) only enters the bias
// expert's forward pass.
PoeScore poe_score(const BoundExpert& main, const BoundExpert& bias, const synth::Prompt& prompt,
                   const synth::Sequence& y, Rng* rng);

// Reward used downstream of training: the main expert alone. The bias
// expert is never evaluated.
double inference_reward(const PoeRewardHead& head, const synth::Prompt& prompt, const synth::Sequence& y);

// ---------------------------------------------------------------------------
// Checkpoints: a versioned text dump of config and tensors (hex floats, so
// the round trip is exact). `kind` tags the role, e.g. "vanilla",
// "poe_main", "poe_bias".

struct Checkpoint {
  std::string kind;
  ExpertModel model;
};

void write_checkpoint(std::ostream& os, const ExpertModel& model, const std::string& kind);
Checkpoint read_checkpoint(std::istream& is);

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

}  // namespace poe::rm
