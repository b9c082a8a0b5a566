#include "poe/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

namespace poe::train {

const char* to_string(Mode m) {
  switch (m) {
    case Mode::vanilla: return "vanilla";
    case Mode::poe: return "poe";
    case Mode::poe_no_noise: return "poe_no_noise";
    case Mode::bias_only: return "bias_only";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "vanilla") return Mode::vanilla;
  if (s == "poe") return Mode::poe;
  if (s == "poe_no_noise") return Mode::poe_no_noise;
  if (s == "bias_only") return Mode::bias_only;
  throw std::invalid_argument("unknown training mode '" + s + "' (expected vanilla, poe, poe_no_noise, bias_only)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("rm_train.batch_size must be > 0");
  if (epochs < 0) throw std::invalid_argument("rm_train.epochs must be >= 0");
  // A zero rate freezes an expert; negative rates are rejected.
  if (!(main_lr >= 0) || !(bias_lr >= 0)) throw std::invalid_argument("rm_train learning rates must be >= 0");
  if (eval_every == 0) throw std::invalid_argument("rm_train.eval_every must be > 0");
}

Var bt_loss(Var s_pref, Var s_rej) {
  if (!s_pref.value().all_finite() || !s_rej.value().all_finite()) {
    throw diff::DomainError("bt_loss: non-finite score");
  }
  if (s_pref.value().size() != 1 || s_rej.value().size() != 1) {
    throw diff::ShapeError("bt_loss: scores must be scalar");
  }
  return diff::neg(diff::log_sigmoid(diff::sub(s_pref, s_rej)));
}

Var poe_pair_loss(const rm::BoundExpert& main, const rm::BoundExpert& bias, const synth::PreferencePair& pair,
                  Mode mode, Rng& rng) {
  const auto& pref = pair.preferred();
  const auto& rej = pair.rejected();
  switch (mode) {
    case Mode::vanilla:
      return bt_loss(rm::score(main, pair.prompt, pref, nullptr), rm::score(main, pair.prompt, rej, nullptr));
    case Mode::bias_only:
      return bt_loss(rm::score(bias, pair.prompt, pref, &rng), rm::score(bias, pair.prompt, rej, &rng));
    case Mode::poe:
    case Mode::poe_no_noise: {
      Rng* noise = mode == Mode::poe ? &rng : nullptr;
      auto a = rm::poe_score(main, bias, pair.prompt, pref, noise);
      auto b = rm::poe_score(main, bias, pair.prompt, rej, noise);
      return bt_loss(a.combined, b.combined);
    }
  }
  throw std::logic_error("unreachable");
}

Var batch_loss(const rm::BoundExpert& main, const rm::BoundExpert& bias,
               const std::vector<const synth::PreferencePair*>& batch, Mode mode, Rng& rng) {
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const auto* p : batch) losses.push_back(poe_pair_loss(main, bias, *p, mode, rng));
  return diff::mean(diff::concat_rows(losses));
}

double accuracy(HeadSelector sel, const rm::PoeRewardHead& head, const std::vector<synth::PreferencePair>& pairs) {
  if (pairs.empty()) return 0.0;
  auto eval = [&](const synth::Prompt& prompt, const synth::Sequence& y) {
    switch (sel) {
      case HeadSelector::main: return rm::score_value(head.main(), prompt, y);
      case HeadSelector::bias: return rm::score_value(head.bias(), prompt, y);
      case HeadSelector::combined:
        return rm::score_value(head.main(), prompt, y) + rm::score_value(head.bias(), prompt, y);
    }
    return 0.0;
  };
  double hits = 0.0;
  for (const auto& p : pairs) {
    const double a = eval(p.prompt, p.preferred());
    const double b = eval(p.prompt, p.rejected());
    hits += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return hits / static_cast<double>(pairs.size());
}

TrainReport train(rm::PoeRewardHead& head, const synth::Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_pairs = data.split(synth::Split::train);
  const auto valid_pairs = data.split(synth::Split::valid);
  if (train_pairs.empty()) throw std::invalid_argument("train: dataset has no train split");
  if (valid_pairs.empty()) throw std::invalid_argument("train: dataset has no valid split");

  const bool update_main = cfg.mode != Mode::bias_only;
  const bool update_bias = cfg.mode != Mode::vanilla;
  Optimizer main_opt(cfg.optimizer, head.main().params());
  Optimizer bias_opt(cfg.optimizer, head.bias().params());
  Rng order_rng(derive_seed(cfg.seed, "rm.order"));
  Rng noise_rng(derive_seed(cfg.seed, "rm.noise"));

  TrainReport report;
  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::size_t step = 0;
  std::size_t since_eval = 0;
  double loss_since_eval = 0.0;
  auto log_eval = [&] {
    EvalRow row;
    row.step = step;
    row.loss = since_eval ? loss_since_eval / static_cast<double>(since_eval) : 0.0;
    row.acc_combined = accuracy(HeadSelector::combined, head, valid_pairs);
    row.acc_main = accuracy(HeadSelector::main, head, valid_pairs);
    row.acc_bias = accuracy(HeadSelector::bias, head, valid_pairs);
    report.evals.push_back(row);
    since_eval = 0;
    loss_since_eval = 0.0;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const synth::PreferencePair*> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train_pairs[order[i]]);

      diff::Tape tape;
      const auto main_b = rm::bind(head.main(), tape);
      const auto bias_b = rm::bind(head.bias(), tape);
      Var loss = batch_loss(main_b, bias_b, batch, cfg.mode, noise_rng);
      const double lv = loss.item();
      const std::size_t batch_id = start / cfg.batch_size;
      if (!std::isfinite(lv)) {
        throw TrainingDiverged(step, batch_id,
                               "train: non-finite loss at step " + std::to_string(step) + " (epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(batch_id) + ")");
      }
      tape.backward(loss);
      if (update_main) main_opt.step(head.main().params(), rm::gradients(main_b), cfg.main_lr);
      if (update_bias) bias_opt.step(head.bias().params(), rm::gradients(bias_b), cfg.bias_lr);

      report.step_loss.push_back(lv);
      loss_since_eval += lv;
      ++since_eval;
      ++step;
      if (step % cfg.eval_every == 0) log_eval();
    }
  }
  if (report.evals.empty() || report.evals.back().step != step) log_eval();

  head.main().set_lr(cfg.main_lr > 0 ? cfg.main_lr : head.main().config().lr);
  head.bias().set_lr(cfg.bias_lr > 0 ? cfg.bias_lr : head.bias().config().lr);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

void write_metrics(std::ostream& os, const TrainReport& report) {
  os << "# poe-rm-metrics v1\n";
  os << "step,loss,acc_combined,acc_main,acc_bias\n";
  char buf[256];
  for (const auto& r : report.evals) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.6f,%.6f,%.6f\n", r.step, r.loss, r.acc_combined, r.acc_main,
                  r.acc_bias);
    os << buf;
  }
}

}  // namespace poe::train
