#include "poe/rmodels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace poe::rm {

const char* to_string(Pooling p) { return p == Pooling::mean ? "mean" : "sum"; }

Pooling pooling_from_string(const std::string& s) {
  if (s == "mean") return Pooling::mean;
  if (s == "sum") return Pooling::sum;
  throw ModelError("unknown pooling '" + s + "' (expected mean or sum)");
}

const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ModelError("unknown activation '" + s + "' (expected tanh or relu)");
}

void ExpertConfig::validate() const {
  if (embed_dim < 1) throw ModelError("expert.embed_dim must be >= 1");
  for (int h : hidden_dims)
    if (h < 1) throw ModelError("expert hidden widths must be >= 1");
  if (!(lr > 0)) throw ModelError("expert.lr must be > 0");
  if (!(noise_sigma >= 0)) throw ModelError("expert.noise_sigma must be >= 0");
}

ExpertConfig ExpertConfig::default_main() { return ExpertConfig{}; }

ExpertConfig ExpertConfig::default_bias() {
  ExpertConfig c;
  c.embed_dim = 8;
  c.hidden_dims = {8};
  c.pooling = Pooling::sum;
  c.activation = Activation::relu;
  c.lr = 3e-3;
  c.noise_sigma = 1.0;
  c.param_seed = 2;
  return c;
}

std::size_t param_count(const ExpertConfig& cfg, int vocab_size) {
  std::size_t n = static_cast<std::size_t>(vocab_size) * static_cast<std::size_t>(cfg.embed_dim);
  std::size_t in = static_cast<std::size_t>(cfg.embed_dim);
  for (int h : cfg.hidden_dims) {
    const auto out = static_cast<std::size_t>(h);
    n += in * out + out;
    in = out;
  }
  return n + in + 1;
}

namespace {

std::vector<Tensor> init_params(const ExpertConfig& cfg, int vocab_size) {
  Rng rng(cfg.param_seed);
  std::vector<Tensor> ps;
  const auto v = static_cast<std::size_t>(vocab_size);
  auto in = static_cast<std::size_t>(cfg.embed_dim);
  Tensor emb(diff::Shape{v, in});
  for (auto& x : emb.data()) x = rng.normal();
  ps.push_back(std::move(emb));
  auto dense = [&](std::size_t fan_in, std::size_t fan_out) {
    Tensor w(diff::Shape{fan_in, fan_out});
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : w.data()) x = rng.normal(0.0, sd);
    ps.push_back(std::move(w));
    ps.emplace_back(diff::Shape{1, fan_out}, 0.0);
  };
  for (int h : cfg.hidden_dims) {
    dense(in, static_cast<std::size_t>(h));
    in = static_cast<std::size_t>(h);
  }
  dense(in, 1);
  return ps;
}

}  // namespace

ExpertModel::ExpertModel(ExpertConfig cfg, int world_vocab_size)
    : cfg_(std::move(cfg)), world_vocab_(world_vocab_size) {
  cfg_.validate();
  if (world_vocab_size < 1) throw ModelError("vocabulary must be non-empty");
  params_ = init_params(cfg_, vocab_size());
}

ExpertModel::ExpertModel(ExpertConfig cfg, int world_vocab_size, std::vector<Tensor> params)
    : cfg_(std::move(cfg)), world_vocab_(world_vocab_size), params_(std::move(params)) {
  cfg_.validate();
  const auto expected = init_params(cfg_, vocab_size());
  if (expected.size() != params_.size()) throw ModelError("parameter list does not match the config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].shape() != params_[i].shape()) {
      throw ModelError("parameter " + std::to_string(i) + " has shape " + diff::shape_str(params_[i].shape()) +
                       ", config expects " + diff::shape_str(expected[i].shape()));
    }
  }
}

std::size_t ExpertModel::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void ExpertModel::zero_head() {
  params_[params_.size() - 2].fill(0.0);
  params_.back().fill(0.0);
}

BoundExpert bind(const ExpertModel& model, Tape& tape) {
  BoundExpert b;
  b.model = &model;
  b.params.reserve(model.params().size());
  for (const auto& p : model.params()) b.params.push_back(tape.leaf(p));
  return b;
}

std::vector<Tensor> gradients(const BoundExpert& bound) {
  std::vector<Tensor> g;
  g.reserve(bound.params.size());
  for (const auto& v : bound.params) g.push_back(v.grad());
  return g;
}

std::vector<std::size_t> input_stream(const ExpertModel& model, const synth::Prompt& prompt,
                                      const synth::Sequence& y) {
  const auto world_eos = static_cast<synth::Token>(model.world_vocab_size() - 1);
  std::vector<std::size_t> ids;
  ids.reserve(prompt.relevant_set.size() + y.tokens.size() + 1);
  for (auto t : prompt.relevant_set) ids.push_back(static_cast<std::size_t>(t));
  ids.push_back(static_cast<std::size_t>(model.sep_token()));
  for (auto t : y.tokens) {
    if (t == world_eos) continue;
    ids.push_back(static_cast<std::size_t>(t));
  }
  if (ids.size() == 1) throw ModelError("score: empty token stream");
  for (auto id : ids) {
    if (id >= static_cast<std::size_t>(model.vocab_size())) {
      throw ModelError("score: token " + std::to_string(id) + " outside the model vocabulary");
    }
  }
  return ids;
}

Var score(const BoundExpert& bound, const synth::Prompt& prompt, const synth::Sequence& y, Rng* rng) {
  const ExpertModel& model = *bound.model;
  const ExpertConfig& cfg = model.config();
  model.note_forward();
  // Pooling ignores order; sorting makes the pooled sum independent of it bit for bit.
  auto ids = input_stream(model, prompt, y);
  std::sort(ids.begin(), ids.end());
  Tape& tape = *bound.params[0].tape();

  Var x = diff::gather_rows(bound.params[0], ids);
  if (rng != nullptr && cfg.noise_sigma > 0) {
    Tensor noise(x.value().shape());
    for (auto& v : noise.data()) v = rng->normal(0.0, cfg.noise_sigma);
    x = diff::add(x, tape.constant(std::move(noise)));
  }
  Var h = cfg.pooling == Pooling::mean ? diff::mean_rows(x) : diff::sum_rows(x);
  std::size_t k = 1;
  for (std::size_t layer = 0; layer < cfg.hidden_dims.size(); ++layer, k += 2) {
    Var pre = diff::add(diff::matmul(h, bound.params[k]), bound.params[k + 1]);
    h = cfg.activation == Activation::tanh ? diff::tanh(pre) : diff::relu(pre);
  }
  return diff::add(diff::matmul(h, bound.params[k]), bound.params[k + 1]);
}

double score_value(const ExpertModel& model, const synth::Prompt& prompt, const synth::Sequence& y) {
  Tape tape;
  const BoundExpert b = bind(model, tape);
  return score(b, prompt, y, nullptr).item();
}

PoeRewardHead::PoeRewardHead(ExpertModel main, ExpertModel bias) : main_(std::move(main)), bias_(std::move(bias)) {
  if (main_.config().noise_sigma != 0.0) throw ModelError("PoE main expert must not use input noise");
  if (main_.vocab_size() != bias_.vocab_size()) throw ModelError("PoE experts must share a vocabulary");
}

PoeScore poe_score(const BoundExpert& main, const BoundExpert& bias, const synth::Prompt& prompt,
                   const synth::Sequence& y, Rng* rng) {
  Var m = score(main, prompt, y, nullptr);
  Var b = score(bias, prompt, y, rng);
  PoeScore out;
  out.main_only = m.item();
  out.bias_only = b.item();
  out.combined = diff::add(m, b);
  return out;
}

double inference_reward(const PoeRewardHead& head, const synth::Prompt& prompt, const synth::Sequence& y) {
  return score_value(head.main(), prompt, y);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointHeader = "poe-checkpoint v1";

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

template <class T>
T read_field(std::istream& is, const char* key) {
  std::string k;
  T v{};
  if (!(is >> k) || k != key || !(is >> v)) throw ModelError(std::string("checkpoint: expected field '") + key + "'");
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os << "tensor " << t.rank();
  for (auto d : t.shape()) os << ' ' << d;
  os << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) os << hexfloat(t[i]) << (i + 1 == t.size() ? '\n' : ' ');
  if (t.size() == 0) os << '\n';
}

Tensor read_tensor(std::istream& is) {
  const auto rank = read_field<std::size_t>(is, "tensor");
  diff::Shape shape(rank);
  for (auto& d : shape)
    if (!(is >> d)) throw ModelError("checkpoint: truncated tensor shape");
  Tensor t(shape);
  std::string tok;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(is >> tok)) throw ModelError("checkpoint: truncated tensor data");
    t[i] = std::strtod(tok.c_str(), nullptr);
  }
  return t;
}

void write_checkpoint(std::ostream& os, const ExpertModel& model, const std::string& kind) {
  const auto& c = model.config();
  os << kCheckpointHeader << '\n';
  os << "kind " << kind << '\n';
  os << "world_vocab " << model.world_vocab_size() << '\n';
  os << "embed_dim " << c.embed_dim << '\n';
  os << "hidden " << c.hidden_dims.size();
  for (int h : c.hidden_dims) os << ' ' << h;
  os << '\n';
  os << "pooling " << to_string(c.pooling) << '\n';
  os << "activation " << to_string(c.activation) << '\n';
  os << "lr " << hexfloat(c.lr) << '\n';
  os << "noise_sigma " << hexfloat(c.noise_sigma) << '\n';
  os << "param_seed " << c.param_seed << '\n';
  os << "params " << model.params().size() << '\n';
  for (const auto& p : model.params()) write_tensor(os, p);
}

Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointHeader) throw ModelError("checkpoint: bad or missing header");
  const auto kind = read_field<std::string>(is, "kind");
  const int world_vocab = read_field<int>(is, "world_vocab");
  ExpertConfig c;
  c.embed_dim = read_field<int>(is, "embed_dim");
  const auto n_hidden = read_field<std::size_t>(is, "hidden");
  c.hidden_dims.resize(n_hidden);
  for (auto& h : c.hidden_dims)
    if (!(is >> h)) throw ModelError("checkpoint: truncated hidden widths");
  c.pooling = pooling_from_string(read_field<std::string>(is, "pooling"));
  c.activation = activation_from_string(read_field<std::string>(is, "activation"));
  c.lr = std::strtod(read_field<std::string>(is, "lr").c_str(), nullptr);
  c.noise_sigma = std::strtod(read_field<std::string>(is, "noise_sigma").c_str(), nullptr);
  c.param_seed = read_field<std::uint64_t>(is, "param_seed");
  const auto n_params = read_field<std::size_t>(is, "params");
  std::vector<Tensor> ps;
  ps.reserve(n_params);
  for (std::size_t i = 0; i < n_params; ++i) ps.push_back(read_tensor(is));
  return Checkpoint{kind, ExpertModel(std::move(c), world_vocab, std::move(ps))};
}

}  // namespace poe::rm
