#pragma once

// Synthetic preference world: prompts carry a set of relevant information
// tokens, responses mix information and filler tokens, and annotators prefer
// responses through a logistic choice over the true-reward gap plus a length
// bias. The response length acts as the confounder.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "poe/rng.hpp"

namespace poe::synth {

using Token = int;

class WorldError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Token ids 0..k_info-1 are information tokens, then FILLER, then EOS.
struct Vocab {
  int k_info = 16;

  Token info(int i) const { return i; }
  Token filler() const { return k_info; }
  Token eos() const { return k_info + 1; }
  int size() const { return k_info + 2; }
  bool is_info(Token t) const { return t >= 0 && t < k_info; }
  bool contains(Token t) const { return t >= 0 && t < size(); }
};

struct Prompt {
  std::vector<Token> relevant_set;  // sorted, distinct info tokens
  std::uint64_t seed = 0;

  bool operator==(const Prompt&) const = default;
};

struct Sequence {
  std::vector<Token> tokens;  // ends in EOS unless truncated at max_len
  int len = 0;                // number of non-EOS tokens

  static Sequence from_tokens(std::vector<Token> tokens, const Vocab& vocab);
  // The non-EOS tokens, in order.
  std::vector<Token> content(const Vocab& vocab) const;

  bool operator==(const Sequence&) const = default;
};

enum class Choice : std::uint8_t { a, b };
enum class Split : std::uint8_t { train, valid, test };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct PreferencePair {
  Prompt prompt;
  Sequence a;
  Sequence b;
  Choice label = Choice::a;
  Split split = Split::train;

  const Sequence& preferred() const { return label == Choice::a ? a : b; }
  const Sequence& rejected() const { return label == Choice::a ? b : a; }
  bool operator==(const PreferencePair&) const = default;
};

// Evaluation-only record; lives in its own container so that training code,
// which only ever receives a Dataset, cannot read it.
struct HiddenTruth {
  double r_a = 0.0;
  double r_b = 0.0;
  bool operator==(const HiddenTruth&) const = default;
};

struct WorldConfig {
  int k_info = 16;
  int max_len = 64;
  double u_cap = 5.0;
  double c_verb = 0.05;
  int len0 = 20;
  double lambda_len = 0.5;
  double sigma_eta = 0.5;
  double beta_anno = 2.0;
  int min_relevant = 2;
  int max_relevant = 8;
  std::uint64_t seed = 13;

  Vocab vocab() const { return Vocab{k_info}; }
  void validate() const;
  bool operator==(const WorldConfig&) const = default;
};

// How responses for preference pairs are drawn. The default draws each
// response length uniformly in [min_len, max_len] independently; a
// non-negative length_jitter instead draws the second response's length
// within +-length_jitter of the first.
struct SamplerSpec {
  double p_info = 0.3;
  int min_len = 1;
  int max_len = 0;  // 0 selects WorldConfig::max_len
  int length_jitter = -1;
  // > 0 draws each response's info rate uniformly from p_info +/- spread.
  double p_info_spread = 0.0;

  void validate(const WorldConfig& cfg) const;
  bool operator==(const SamplerSpec&) const = default;
};

struct Dataset {
  Vocab vocab;
  int max_len = 64;
  std::vector<PreferencePair> pairs;

  std::vector<PreferencePair> split(Split s) const;
  std::size_t count(Split s) const;
};

struct TruthSidecar {
  std::vector<HiddenTruth> rows;
};

struct GeneratedData {
  Dataset data;
  TruthSidecar truth;
};

struct Demo {
  Prompt prompt;
  Sequence response;
};

double true_reward(const Prompt& prompt, const Sequence& y, const WorldConfig& cfg);

// Highest true reward any response can reach for this prompt.
double max_achievable_reward(const Prompt& prompt, const WorldConfig& cfg);

// Probability that the annotator prefers a, for a given noise draw.
double preference_probability(double r_a, double r_b, int len_a, int len_b, double eta, const WorldConfig& cfg);

Choice annotate(const Prompt& prompt, const Sequence& a, const Sequence& b, const WorldConfig& cfg, Rng& rng);

Prompt sample_prompt(const WorldConfig& cfg, Rng& rng);
Sequence sample_response(const Prompt& prompt, const WorldConfig& cfg, const SamplerSpec& sampler, Rng& rng);

// Pairs are generated in fixed-size shards; shard i draws from seed ^ i and
// the shards are concatenated in order. Splits are stamped 80/10/10 by index.
GeneratedData gen_dataset(const WorldConfig& cfg, std::size_t n_pairs, const SamplerSpec& sampler = {});

std::vector<Demo> gen_demos(const WorldConfig& cfg, std::size_t n, double p_fill = 0.1);

// Number of true_reward evaluations so far in this process.
std::uint64_t true_reward_calls();

void write_dataset(std::ostream& os, const Dataset& d);
Dataset read_dataset(std::istream& is);
void write_truth(std::ostream& os, const TruthSidecar& t);
TruthSidecar read_truth(std::istream& is);

}  // namespace poe::synth
