#pragma once

// Bradley-Terry reward-model training: the vanilla single-expert loss and
// the joint product-of-experts loss, with per-expert learning rates.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "poe/optim.hpp"
#include "poe/rmodels.hpp"
#include "poe/synthworld.hpp"

namespace poe::train {

using diff::Var;

// vanilla:       main expert alone
// poe:           main + noisy bias expert
// poe_no_noise:  main + bias expert with noise disabled
// bias_only:     noisy bias expert alone
enum class Mode : std::uint8_t { vanilla, poe, poe_no_noise, bias_only };

const char* to_string(Mode m);
Mode mode_from_string(const std::string& s);

enum class HeadSelector : std::uint8_t { combined, main, bias };

struct TrainConfig {
  std::size_t batch_size = 32;
  int epochs = 3;
  OptimizerConfig optimizer{};
  double main_lr = 1e-3;
  double bias_lr = 3e-3;
  Mode mode = Mode::poe;
  std::size_t eval_every = 50;
  std::uint64_t seed = 7;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EvalRow {
  std::size_t step = 0;
  double loss = 0.0;  // mean training loss since the previous row
  double acc_combined = 0.0;
  double acc_main = 0.0;
  double acc_bias = 0.0;

  bool operator==(const EvalRow&) const = default;
};

struct TrainReport {
  std::vector<double> step_loss;
  std::vector<EvalRow> evals;
  double wall_seconds = 0.0;
  std::string checkpoint_path;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, std::size_t batch, const std::string& what)
      : std::runtime_error(what), step_(step), batch_(batch) {}
  std::size_t step() const { return step_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t step_;
  std::size_t batch_;
};

// -log sigmoid(s_pref - s_rej).
Var bt_loss(Var s_pref, Var s_rej);

// Pair loss under the given mode. `rng` feeds the bias expert's noise.
Var poe_pair_loss(const rm::BoundExpert& main, const rm::BoundExpert& bias, const synth::PreferencePair& pair,
                  Mode mode, Rng& rng);

// Mean pair loss over a batch.
Var batch_loss(const rm::BoundExpert& main, const rm::BoundExpert& bias,
               const std::vector<const synth::PreferencePair*>& batch, Mode mode, Rng& rng);

// Fraction of pairs whose preferred side outscores the rejected side under
// the selected head; exact ties count one half. Noise is off.
double accuracy(HeadSelector sel, const rm::PoeRewardHead& head, const std::vector<synth::PreferencePair>& pairs);

TrainReport train(rm::PoeRewardHead& head, const synth::Dataset& data, const TrainConfig& cfg);

// Metrics table: header line, then step,loss,acc_combined,acc_main,acc_bias.
void write_metrics(std::ostream& os, const TrainReport& report);

}  // namespace poe::train
