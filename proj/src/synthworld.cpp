#include "poe/synthworld.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace poe::synth {

namespace {

std::atomic<std::uint64_t> g_true_reward_calls{0};

constexpr std::size_t kShardSize = 1024;
constexpr int kMaxRejections = 100;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Sequence make_response(const Prompt& prompt, int length, const WorldConfig& cfg, double p_info, Rng& rng) {
  const Vocab vocab = cfg.vocab();
  std::vector<Token> tokens;
  tokens.reserve(static_cast<std::size_t>(length) + 1);
  const auto n_rel = static_cast<std::int64_t>(prompt.relevant_set.size());
  for (int i = 0; i < length; ++i) {
    if (rng.bernoulli(p_info)) {
      tokens.push_back(prompt.relevant_set[static_cast<std::size_t>(rng.uniform_int(0, n_rel - 1))]);
    } else {
      tokens.push_back(vocab.filler());
    }
  }
  if (length < cfg.max_len) tokens.push_back(vocab.eos());
  return Sequence{std::move(tokens), length};
}

double response_rate(const SamplerSpec& sampler, Rng& rng) {
  if (sampler.p_info_spread <= 0) return sampler.p_info;
  const double u = sampler.p_info - sampler.p_info_spread + 2.0 * sampler.p_info_spread * rng.uniform();
  return std::clamp(u, 0.0, 1.0);
}

std::vector<PreferencePair> gen_shard(const WorldConfig& cfg, const SamplerSpec& sampler, std::size_t shard,
                                      std::size_t count, std::vector<HiddenTruth>& truth) {
  Rng rng(cfg.seed ^ static_cast<std::uint64_t>(shard));
  const int max_len = sampler.max_len > 0 ? sampler.max_len : cfg.max_len;
  std::vector<PreferencePair> out;
  out.reserve(count);
  truth.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PreferencePair p;
    p.prompt = sample_prompt(cfg, rng);
    int rejections = 0;
    for (;;) {
      const int la = static_cast<int>(rng.uniform_int(sampler.min_len, max_len));
      int lb;
      if (sampler.length_jitter >= 0) {
        lb = la + static_cast<int>(rng.uniform_int(-sampler.length_jitter, sampler.length_jitter));
        lb = std::clamp(lb, sampler.min_len, max_len);
      } else {
        lb = static_cast<int>(rng.uniform_int(sampler.min_len, max_len));
      }
      p.a = make_response(p.prompt, la, cfg, response_rate(sampler, rng), rng);
      p.b = make_response(p.prompt, lb, cfg, response_rate(sampler, rng), rng);
      if (p.a.tokens != p.b.tokens) break;
      if (++rejections >= kMaxRejections) {
        throw WorldError("gen_dataset: degenerate sampler, " + std::to_string(kMaxRejections) +
                         " identical response pairs in a row");
      }
    }
    HiddenTruth t{true_reward(p.prompt, p.a, cfg), true_reward(p.prompt, p.b, cfg)};
    const double eta = cfg.sigma_eta > 0 ? rng.normal(0.0, cfg.sigma_eta) : 0.0;
    const double pa = preference_probability(t.r_a, t.r_b, p.a.len, p.b.len, eta, cfg);
    p.label = rng.uniform() < pa ? Choice::a : Choice::b;
    out.push_back(std::move(p));
    truth.push_back(t);
  }
  return out;
}

}  // namespace

Sequence Sequence::from_tokens(std::vector<Token> tokens, const Vocab& vocab) {
  Sequence s;
  s.len = static_cast<int>(std::count_if(tokens.begin(), tokens.end(), [&](Token t) { return t != vocab.eos(); }));
  s.tokens = std::move(tokens);
  return s;
}

std::vector<Token> Sequence::content(const Vocab& vocab) const {
  std::vector<Token> out;
  out.reserve(tokens.size());
  for (Token t : tokens)
    if (t != vocab.eos()) out.push_back(t);
  return out;
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw WorldError("unknown split '" + s + "'");
}

void WorldConfig::validate() const {
  if (k_info < 2) throw WorldError("world.k_info must be >= 2");
  if (max_len < 1) throw WorldError("world.max_len must be >= 1");
  if (u_cap < 0 || c_verb < 0 || lambda_len < 0 || sigma_eta < 0 || len0 < 0) {
    throw WorldError("world penalties and weights must be >= 0");
  }
  if (!(beta_anno > 0)) throw WorldError("world.beta_anno must be > 0");
  if (min_relevant < 1 || max_relevant > k_info || min_relevant > max_relevant) {
    throw WorldError("world relevant-set size range must satisfy 1 <= min <= max <= k_info");
  }
}

void SamplerSpec::validate(const WorldConfig& cfg) const {
  const int hi = max_len > 0 ? max_len : cfg.max_len;
  if (!(p_info >= 0 && p_info <= 1)) throw WorldError("sampler.p_info must lie in [0,1]");
  if (!(p_info_spread >= 0 && p_info_spread <= 1)) throw WorldError("sampler.p_info_spread must lie in [0,1]");
  if (min_len < 0 || min_len > hi || hi > cfg.max_len) throw WorldError("sampler length range is invalid");
}

std::vector<PreferencePair> Dataset::split(Split s) const {
  std::vector<PreferencePair> out;
  for (const auto& p : pairs)
    if (p.split == s) out.push_back(p);
  return out;
}

std::size_t Dataset::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [s](const auto& p) { return p.split == s; }));
}

double true_reward(const Prompt& prompt, const Sequence& y, const WorldConfig& cfg) {
  g_true_reward_calls.fetch_add(1, std::memory_order_relaxed);
  const Vocab vocab = cfg.vocab();
  std::vector<bool> seen(static_cast<std::size_t>(vocab.k_info), false);
  int len = 0;
  for (Token t : y.tokens) {
    if (!vocab.contains(t)) throw WorldError("true_reward: token " + std::to_string(t) + " outside the vocabulary");
    if (t == vocab.eos()) continue;
    ++len;
    if (vocab.is_info(t)) seen[static_cast<std::size_t>(t)] = true;
  }
  int d = 0;
  for (Token r : prompt.relevant_set)
    if (seen[static_cast<std::size_t>(r)]) ++d;
  return std::min(static_cast<double>(d), cfg.u_cap) - cfg.c_verb * std::max(0, len - cfg.len0);
}

double max_achievable_reward(const Prompt& prompt, const WorldConfig& cfg) {
  const double reach = std::min(static_cast<double>(prompt.relevant_set.size()), cfg.u_cap);
  // Covering `reach` distinct tokens takes at least ceil(reach) tokens.
  const int min_len = static_cast<int>(std::ceil(reach));
  return reach - cfg.c_verb * std::max(0, min_len - cfg.len0);
}

double preference_probability(double r_a, double r_b, int len_a, int len_b, double eta, const WorldConfig& cfg) {
  return sigmoid(cfg.beta_anno * (r_a - r_b) + cfg.lambda_len * (len_a - len_b) + eta);
}

Choice annotate(const Prompt& prompt, const Sequence& a, const Sequence& b, const WorldConfig& cfg, Rng& rng) {
  const double r_a = true_reward(prompt, a, cfg);
  const double r_b = true_reward(prompt, b, cfg);
  const double eta = cfg.sigma_eta > 0 ? rng.normal(0.0, cfg.sigma_eta) : 0.0;
  return rng.uniform() < preference_probability(r_a, r_b, a.len, b.len, eta, cfg) ? Choice::a : Choice::b;
}

Prompt sample_prompt(const WorldConfig& cfg, Rng& rng) {
  std::vector<Token> ids(static_cast<std::size_t>(cfg.k_info));
  for (int i = 0; i < cfg.k_info; ++i) ids[static_cast<std::size_t>(i)] = i;
  rng.shuffle(ids);
  const auto k = static_cast<std::size_t>(rng.uniform_int(cfg.min_relevant, cfg.max_relevant));
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return Prompt{std::move(ids), rng.next_u64()};
}

Sequence sample_response(const Prompt& prompt, const WorldConfig& cfg, const SamplerSpec& sampler, Rng& rng) {
  const int hi = sampler.max_len > 0 ? sampler.max_len : cfg.max_len;
  const int len = static_cast<int>(rng.uniform_int(sampler.min_len, hi));
  return make_response(prompt, len, cfg, sampler.p_info, rng);
}

GeneratedData gen_dataset(const WorldConfig& cfg, std::size_t n_pairs, const SamplerSpec& sampler) {
  cfg.validate();
  sampler.validate(cfg);
  if (n_pairs == 0) throw WorldError("gen_dataset: n_pairs must be > 0");

  const std::size_t n_shards = (n_pairs + kShardSize - 1) / kShardSize;
  std::vector<std::future<std::pair<std::vector<PreferencePair>, std::vector<HiddenTruth>>>> jobs;
  for (std::size_t s = 0; s < n_shards; ++s) {
    const std::size_t count = std::min(kShardSize, n_pairs - s * kShardSize);
    jobs.push_back(std::async(std::launch::deferred, [&cfg, &sampler, s, count] {
      std::vector<HiddenTruth> truth;
      auto pairs = gen_shard(cfg, sampler, s, count, truth);
      return std::make_pair(std::move(pairs), std::move(truth));
    }));
  }

  GeneratedData out;
  out.data.vocab = cfg.vocab();
  out.data.max_len = cfg.max_len;
  out.data.pairs.reserve(n_pairs);
  out.truth.rows.reserve(n_pairs);
  for (auto& job : jobs) {
    auto [pairs, truth] = job.get();
    std::move(pairs.begin(), pairs.end(), std::back_inserter(out.data.pairs));
    out.truth.rows.insert(out.truth.rows.end(), truth.begin(), truth.end());
  }

  const std::size_t n_train = n_pairs * 8 / 10;
  const std::size_t n_valid = n_pairs / 10;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    out.data.pairs[i].split = i < n_train ? Split::train : (i < n_train + n_valid ? Split::valid : Split::test);
  }
  return out;
}

std::vector<Demo> gen_demos(const WorldConfig& cfg, std::size_t n, double p_fill) {
  cfg.validate();
  if (n == 0) throw WorldError("gen_demos: n must be > 0");
  const Vocab vocab = cfg.vocab();
  Rng rng(derive_seed(cfg.seed, "demos"));
  std::vector<Demo> demos;
  demos.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Demo d;
    d.prompt = sample_prompt(cfg, rng);
    std::vector<Token> order = d.prompt.relevant_set;
    rng.shuffle(order);
    std::vector<Token> tokens;
    for (Token t : order) {
      if (static_cast<int>(tokens.size()) >= cfg.max_len) break;
      tokens.push_back(t);
      if (static_cast<int>(tokens.size()) < cfg.max_len && rng.bernoulli(p_fill)) tokens.push_back(vocab.filler());
    }
    if (static_cast<int>(tokens.size()) < cfg.max_len) tokens.push_back(vocab.eos());
    d.response = Sequence::from_tokens(std::move(tokens), vocab);
    demos.push_back(std::move(d));
  }
  return demos;
}

std::uint64_t true_reward_calls() { return g_true_reward_calls.load(std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// Line-delimited records

namespace {

constexpr const char* kDatasetHeader = "# poe-dataset v1";
constexpr const char* kTruthHeader = "# poe-truth v1";

std::string expect_header(std::istream& is, const char* header) {
  std::string line;
  if (!std::getline(is, line) || line.rfind(header, 0) != 0) {
    throw WorldError(std::string("missing header line '") + header + "'");
  }
  return line.substr(std::string(header).size());
}

}  // namespace

void write_dataset(std::ostream& os, const Dataset& d) {
  os << kDatasetHeader << " k_info=" << d.vocab.k_info << " max_len=" << d.max_len << '\n';
  for (const auto& p : d.pairs) {
    nlohmann::json j;
    j["prompt.relevant_set"] = p.prompt.relevant_set;
    j["prompt.seed"] = p.prompt.seed;
    j["a.tokens"] = p.a.tokens;
    j["b.tokens"] = p.b.tokens;
    j["label"] = p.label == Choice::a ? "a" : "b";
    j["split"] = to_string(p.split);
    os << j.dump() << '\n';
  }
}

Dataset read_dataset(std::istream& is) {
  const std::string rest = expect_header(is, kDatasetHeader);
  Dataset d;
  {
    std::istringstream hs(rest);
    std::string kv;
    while (hs >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw WorldError("dataset header: malformed field '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      const int val = std::stoi(kv.substr(eq + 1));
      if (key == "k_info") d.vocab.k_info = val;
      else if (key == "max_len") d.max_len = val;
    }
  }
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PreferencePair p;
      p.prompt.relevant_set = j.at("prompt.relevant_set").get<std::vector<Token>>();
      p.prompt.seed = j.at("prompt.seed").get<std::uint64_t>();
      p.a = Sequence::from_tokens(j.at("a.tokens").get<std::vector<Token>>(), d.vocab);
      p.b = Sequence::from_tokens(j.at("b.tokens").get<std::vector<Token>>(), d.vocab);
      const auto label = j.at("label").get<std::string>();
      if (label != "a" && label != "b") throw WorldError("label must be 'a' or 'b'");
      p.label = label == "a" ? Choice::a : Choice::b;
      p.split = split_from_string(j.at("split").get<std::string>());
      d.pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw WorldError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return d;
}

void write_truth(std::ostream& os, const TruthSidecar& t) {
  os << kTruthHeader << '\n';
  for (const auto& r : t.rows) {
    nlohmann::json j;
    j["r_a"] = r.r_a;
    j["r_b"] = r.r_b;
    os << j.dump() << '\n';
  }
}

TruthSidecar read_truth(std::istream& is) {
  expect_header(is, kTruthHeader);
  TruthSidecar t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    t.rows.push_back(HiddenTruth{j.at("r_a").get<double>(), j.at("r_b").get<double>()});
  }
  return t;
}

}  // namespace poe::synth
