#pragma once

// Evaluation statistics: rank and product-moment correlation, reward-vs-
// length reports, chosen/rejected score separation.

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "poe/synthworld.hpp"

namespace poe::stats {

class UndefinedCorrelation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> xs);

double pearson(std::span<const double> xs, std::span<const double> ys);
double spearman(std::span<const double> xs, std::span<const double> ys);

// Any reward model seen from the outside: (prompt, response) -> scalar.
using RewardFn = std::function<double(const synth::Prompt&, const synth::Sequence&)>;

struct ScoredSequence {
  synth::Prompt prompt;
  synth::Sequence response;
};

inline constexpr std::size_t kDeciles = 10;
using Grid = std::array<std::array<std::size_t, kDeciles>, kDeciles>;

struct CorrelationReport {
  std::size_t n = 0;
  double spearman = 0.0;
  double pearson = 0.0;
  std::array<double, kDeciles> decile_mean_reward{};
  std::array<double, kDeciles> decile_mean_length{};
  Grid histogram{};  // [length decile][score decile]
  std::vector<double> lengths;
  std::vector<double> rewards;
};

// Decile index of each element by rank (stable on ties by position).
std::vector<std::size_t> rank_deciles(std::span<const double> xs);

// Correlates rewards with response length. Needs at least 100 sequences
// spanning at least 5 distinct lengths.
CorrelationReport reward_length_report(const RewardFn& rm, const std::vector<ScoredSequence>& seqs);

// Same statistics from already-computed (length, reward) columns.
CorrelationReport correlation_report(std::vector<double> lengths, std::vector<double> rewards);

inline constexpr std::size_t kOverlapBins = 50;

struct SeparationReport {
  double mean_chosen = 0.0;
  double std_chosen = 0.0;
  double mean_rejected = 0.0;
  double std_rejected = 0.0;
  double overlap = 0.0;
  double accuracy = 0.0;
  std::vector<double> chosen;
  std::vector<double> rejected;
};

SeparationReport separation_report(const RewardFn& rm, const std::vector<synth::PreferencePair>& pairs);
SeparationReport separation_from_scores(std::vector<double> chosen, std::vector<double> rejected);

// Histogram over `bins` equal bins spanning [lo, hi]; values at hi fall in
// the last bin.
std::vector<double> histogram(std::span<const double> xs, double lo, double hi, std::size_t bins);

// Overlap coefficient sum_b min(p_b, q_b) over a shared grid.
double overlap_coefficient(std::span<const double> a, std::span<const double> b, std::size_t bins = kOverlapBins);

// Count of deciles whose mean strictly exceeds the previous decile's.
std::size_t decile_increases(const std::array<double, kDeciles>& means);
double decile_spread(const std::array<double, kDeciles>& means);

}  // namespace poe::stats
