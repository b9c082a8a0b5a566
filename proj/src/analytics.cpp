#include "poe/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

namespace poe::stats {

namespace {

void check_pair(std::span<const double> xs, std::span<const double> ys, const char* what) {
  if (xs.size() != ys.size()) {
    throw std::invalid_argument(std::string(what) + ": length mismatch " + std::to_string(xs.size()) + " vs " +
                                std::to_string(ys.size()));
  }
  if (xs.size() < 3) throw std::invalid_argument(std::string(what) + ": need at least 3 observations");
}

std::vector<std::size_t> sorted_order(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  return idx;
}

double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double std_of(std::span<const double> xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> xs) {
  const auto idx = sorted_order(xs);
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys, "pearson");
  const double mx = mean_of(xs);
  const double my = mean_of(ys);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("undefined correlation: constant input vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys, "spearman");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

std::vector<std::size_t> rank_deciles(std::span<const double> xs) {
  const auto idx = sorted_order(xs);
  std::vector<std::size_t> dec(xs.size());
  for (std::size_t r = 0; r < idx.size(); ++r) dec[idx[r]] = r * kDeciles / idx.size();
  return dec;
}

CorrelationReport correlation_report(std::vector<double> lengths, std::vector<double> rewards) {
  CorrelationReport rep;
  rep.n = lengths.size();
  rep.spearman = spearman(lengths, rewards);
  rep.pearson = pearson(lengths, rewards);

  const auto len_dec = rank_deciles(lengths);
  const auto score_dec = rank_deciles(rewards);
  std::array<std::size_t, kDeciles> counts{};
  for (std::size_t i = 0; i < rep.n; ++i) {
    rep.decile_mean_reward[len_dec[i]] += rewards[i];
    rep.decile_mean_length[len_dec[i]] += lengths[i];
    ++counts[len_dec[i]];
    ++rep.histogram[len_dec[i]][score_dec[i]];
  }
  for (std::size_t d = 0; d < kDeciles; ++d) {
    if (counts[d] == 0) continue;
    rep.decile_mean_reward[d] /= static_cast<double>(counts[d]);
    rep.decile_mean_length[d] /= static_cast<double>(counts[d]);
  }
  rep.lengths = std::move(lengths);
  rep.rewards = std::move(rewards);
  return rep;
}

CorrelationReport reward_length_report(const RewardFn& rm, const std::vector<ScoredSequence>& seqs) {
  if (seqs.size() < 100) throw std::invalid_argument("reward_length_report: need at least 100 sequences");
  std::set<int> distinct;
  for (const auto& s : seqs) distinct.insert(s.response.len);
  if (distinct.size() < 5) throw std::invalid_argument("reward_length_report: need at least 5 distinct lengths");
  std::vector<double> lengths, rewards;
  lengths.reserve(seqs.size());
  rewards.reserve(seqs.size());
  for (const auto& s : seqs) {
    lengths.push_back(static_cast<double>(s.response.len));
    rewards.push_back(rm(s.prompt, s.response));
  }
  return correlation_report(std::move(lengths), std::move(rewards));
}

std::vector<double> histogram(std::span<const double> xs, double lo, double hi, std::size_t bins) {
  std::vector<double> h(bins, 0.0);
  if (xs.empty() || bins == 0) return h;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double x : xs) {
    std::size_t b = 0;
    if (width > 0) {
      const double pos = (x - lo) / width;
      b = pos <= 0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(pos));
    }
    h[b] += 1.0;
  }
  for (auto& v : h) v /= static_cast<double>(xs.size());
  return h;
}

double overlap_coefficient(std::span<const double> a, std::span<const double> b, std::size_t bins) {
  if (a.empty() || b.empty()) return 0.0;
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  const double lo = std::min(*amin, *bmin);
  const double hi = std::max(*amax, *bmax);
  const auto ha = histogram(a, lo, hi, bins);
  const auto hb = histogram(b, lo, hi, bins);
  double s = 0.0;
  for (std::size_t i = 0; i < bins; ++i) s += std::min(ha[i], hb[i]);
  return std::clamp(s, 0.0, 1.0);
}

SeparationReport separation_from_scores(std::vector<double> chosen, std::vector<double> rejected) {
  if (chosen.empty() || chosen.size() != rejected.size()) {
    throw std::invalid_argument("separation_report: need matching, non-empty score lists");
  }
  SeparationReport rep;
  rep.mean_chosen = mean_of(chosen);
  rep.std_chosen = std_of(chosen, rep.mean_chosen);
  rep.mean_rejected = mean_of(rejected);
  rep.std_rejected = std_of(rejected, rep.mean_rejected);
  rep.overlap = overlap_coefficient(chosen, rejected);
  double hits = 0.0;
  for (std::size_t i = 0; i < chosen.size(); ++i)
    hits += chosen[i] > rejected[i] ? 1.0 : (chosen[i] == rejected[i] ? 0.5 : 0.0);
  rep.accuracy = hits / static_cast<double>(chosen.size());
  rep.chosen = std::move(chosen);
  rep.rejected = std::move(rejected);
  return rep;
}

SeparationReport separation_report(const RewardFn& rm, const std::vector<synth::PreferencePair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("separation_report: no pairs");
  std::vector<double> chosen, rejected;
  chosen.reserve(pairs.size());
  rejected.reserve(pairs.size());
  for (const auto& p : pairs) {
    chosen.push_back(rm(p.prompt, p.preferred()));
    rejected.push_back(rm(p.prompt, p.rejected()));
  }
  return separation_from_scores(std::move(chosen), std::move(rejected));
}

std::size_t decile_increases(const std::array<double, kDeciles>& means) {
  std::size_t n = 0;
  for (std::size_t d = 1; d < kDeciles; ++d)
    if (means[d] > means[d - 1]) ++n;
  return n;
}

double decile_spread(const std::array<double, kDeciles>& means) {
  const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
  return *hi - *lo;
}

}  // namespace poe::stats
