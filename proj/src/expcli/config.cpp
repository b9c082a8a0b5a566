#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include "poe/expcli.hpp"

namespace poe::exp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  } else if constexpr (std::is_integral_v<T>) {
    return std::to_string(v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
  } else if constexpr (std::is_same_v<T, rm::Pooling> || std::is_same_v<T, rm::Activation>) {
    return rm::to_string(v);
  } else {
    static_assert(std::is_same_v<T, OptimizerConfig::Kind>);
    return poe::to_string(v);
  }
}

template <class T>
T parse_number(const std::string& s, const char* what) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument(std::string("expected ") + what + ", got '" + s + "'");
  }
  return v;
}

template <class T>
void parse_value(const std::string& s, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (s == "true") {
      out = true;
    } else if (s == "false") {
      out = false;
    } else {
      throw std::invalid_argument("expected true or false, got '" + s + "'");
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    out = parse_number<T>(s, "a number");
  } else if constexpr (std::is_integral_v<T> && std::is_signed_v<T>) {
    out = parse_number<T>(s, "an integer");
  } else if constexpr (std::is_integral_v<T>) {
    out = parse_number<T>(s, "a non-negative integer");
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = s;
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    out.clear();
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(parse_number<int>(trim(item), "a comma-separated integer list"));
  } else if constexpr (std::is_same_v<T, rm::Pooling>) {
    out = rm::pooling_from_string(s);
  } else if constexpr (std::is_same_v<T, rm::Activation>) {
    out = rm::activation_from_string(s);
  } else {
    out = optimizer_kind_from_string(s);
  }
}

struct Field {
  std::string name;  // section.key
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class Acc>
Field make_field(std::string name, Acc acc) {
  return Field{std::move(name), [acc](const ExperimentConfig& c) { return format_value(acc(c)); },
               [acc](ExperimentConfig& c, const std::string& s) { parse_value(s, acc(c)); }};
}

#define POE_FIELD(name, member) make_field(name, [](auto& c) -> auto& { return c.member; })

void expert_fields(std::vector<Field>& f, const std::string& sec, rm::ExpertConfig ExperimentConfig::*which) {
  auto acc = [which](auto& c) -> auto& { return c.*which; };
  f.push_back(make_field(sec + ".embed_dim", [acc](auto& c) -> auto& { return acc(c).embed_dim; }));
  f.push_back(make_field(sec + ".hidden_dims", [acc](auto& c) -> auto& { return acc(c).hidden_dims; }));
  f.push_back(make_field(sec + ".pooling", [acc](auto& c) -> auto& { return acc(c).pooling; }));
  f.push_back(make_field(sec + ".activation", [acc](auto& c) -> auto& { return acc(c).activation; }));
  f.push_back(make_field(sec + ".noise_sigma", [acc](auto& c) -> auto& { return acc(c).noise_sigma; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        POE_FIELD("experiment.id", id),
        POE_FIELD("experiment.seed", seed),
        POE_FIELD("experiment.output_dir", output_dir),
        POE_FIELD("world.k_info", world.k_info),
        POE_FIELD("world.max_len", world.max_len),
        POE_FIELD("world.u_cap", world.u_cap),
        POE_FIELD("world.c_verb", world.c_verb),
        POE_FIELD("world.len0", world.len0),
        POE_FIELD("world.lambda_len", world.lambda_len),
        POE_FIELD("world.sigma_eta", world.sigma_eta),
        POE_FIELD("world.beta_anno", world.beta_anno),
        POE_FIELD("world.min_relevant", world.min_relevant),
        POE_FIELD("world.max_relevant", world.max_relevant),
        POE_FIELD("sampler.p_info", sampler.p_info),
        POE_FIELD("sampler.min_len", sampler.min_len),
        POE_FIELD("sampler.max_len", sampler.max_len),
        POE_FIELD("sampler.length_jitter", sampler.length_jitter),
        POE_FIELD("sampler.p_info_spread", sampler.p_info_spread),
        POE_FIELD("data.n_pairs", n_pairs),
        POE_FIELD("data.n_demos", n_demos),
        POE_FIELD("data.n_heldout_demos", n_heldout_demos),
        POE_FIELD("data.n_eval", n_eval),
        POE_FIELD("rm_train.batch_size", rm_train.batch_size),
        POE_FIELD("rm_train.epochs", rm_train.epochs),
        POE_FIELD("rm_train.optimizer", rm_train.optimizer.kind),
        POE_FIELD("rm_train.main_lr", rm_train.main_lr),
        POE_FIELD("rm_train.bias_lr", rm_train.bias_lr),
        POE_FIELD("rm_train.eval_every", rm_train.eval_every),
    };
    expert_fields(f, "rm_main", &ExperimentConfig::rm_main);
    expert_fields(f, "rm_bias", &ExperimentConfig::rm_bias);
    const std::vector<Field> tail{
        POE_FIELD("policy.hidden", policy.hidden),
        POE_FIELD("policy.eos_floor", policy.eos_floor),
        POE_FIELD("imitation.epochs", imitation.epochs),
        POE_FIELD("imitation.lr", imitation.lr),
        POE_FIELD("imitation.batch_size", imitation.batch_size),
        POE_FIELD("ppo.beta_kl", ppo.beta_kl),
        POE_FIELD("ppo.clip_ratio", ppo.clip_ratio),
        POE_FIELD("ppo.rollouts_per_prompt", ppo.rollouts_per_prompt),
        POE_FIELD("ppo.max_len", ppo.max_len),
        POE_FIELD("ppo.gamma", ppo.gamma),
        POE_FIELD("ppo.gae_lambda", ppo.gae_lambda),
        POE_FIELD("ppo.policy_lr", ppo.policy_lr),
        POE_FIELD("ppo.value_lr", ppo.value_lr),
        POE_FIELD("ppo.reward_clip", ppo.reward_clip),
        POE_FIELD("ppo.reward_norm", ppo.reward_norm),
        POE_FIELD("ppo.temperature", ppo.temperature),
        POE_FIELD("ppo.iters", ppo.iters),
        POE_FIELD("ppo.prompts_per_iter", ppo.prompts_per_iter),
        POE_FIELD("ppo.ppo_epochs", ppo.ppo_epochs),
        POE_FIELD("ppo.eval_prompts", ppo.eval_prompts),
    };
    f.insert(f.end(), tail.begin(), tail.end());
    return f;
  }();
  return table;
}

#undef POE_FIELD

const Field* find_field(const std::string& name) {
  for (const auto& f : fields())
    if (f.name == name) return &f;
  return nullptr;
}

void set_field(ExperimentConfig& cfg, const std::string& name, const std::string& value, const std::string& where) {
  const Field* f = find_field(name);
  if (!f) throw ValidationError(where + "unknown field '" + name + "'");
  try {
    f->set(cfg, value);
  } catch (const std::exception& e) {
    throw ValidationError(where + name + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.sampler.length_jitter = 2;
  c.sampler.p_info_spread = 0.3;
  c.rm_train.bias_lr = 1e-2;
  c.rm_train.eval_every = 250;
  c.rm_main = rm::ExpertConfig::default_main();
  c.rm_bias = rm::ExpertConfig::default_bias();
  c.derive_seeds();
  return c;
}

void ExperimentConfig::derive_seeds() {
  world.seed = derive_seed(seed, "world");
  demo_seed = derive_seed(seed, "demos");
  heldout_seed = derive_seed(seed, "demos.heldout");
  report_seed = derive_seed(seed, "report");
  rm_main.param_seed = derive_seed(seed, "rm.main");
  rm_bias.param_seed = derive_seed(seed, "rm.bias");
  rm_train.seed = derive_seed(seed, "rm.train");
  policy.param_seed = derive_seed(seed, "policy");
  imitation.seed = derive_seed(seed, "imitation");
  ppo.seed = derive_seed(seed, "ppo");
}

Json ExperimentConfig::seeds() const {
  Json j;
  j["master"] = seed;
  j["world"] = world.seed;
  j["demos"] = demo_seed;
  j["demos.heldout"] = heldout_seed;
  j["rm.main"] = rm_main.param_seed;
  j["rm.bias"] = rm_bias.param_seed;
  j["rm.train"] = rm_train.seed;
  j["policy"] = policy.param_seed;
  j["imitation"] = imitation.seed;
  j["ppo"] = ppo.seed;
  j["report"] = report_seed;
  return j;
}

void ExperimentConfig::validate() const {
  auto check = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception& e) {
      throw ValidationError(std::string("[") + section + "] " + e.what());
    }
  };
  if (id.empty() || id.find_first_of("/\\") != std::string::npos || id == "." || id == "..") {
    throw ValidationError("experiment.id must be a non-empty name without path separators");
  }
  if (n_pairs < 1) throw ValidationError("data.n_pairs must be >= 1");
  if (n_demos < 1) throw ValidationError("data.n_demos must be >= 1");
  if (n_heldout_demos < 1) throw ValidationError("data.n_heldout_demos must be >= 1");
  check("world", [&] { world.validate(); });
  check("sampler", [&] { sampler.validate(world); });
  check("rm_train", [&] { rm_train.validate(); });
  check("rm_main", [&] { rm_main.validate(); });
  check("rm_bias", [&] { rm_bias.validate(); });
  if (rm_main.noise_sigma != 0.0) throw ValidationError("rm_main.noise_sigma must be 0: only the bias expert is noisy");
  check("policy", [&] { policy.validate(); });
  check("imitation", [&] { imitation.validate(); });
  check("ppo", [&] { ppo.validate(); });
}

ExperimentConfig parse_config(std::istream& is, const std::string& source) {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  std::string section;
  std::set<std::string> seen;
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ValidationError(where + "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      const bool known = std::any_of(fields().begin(), fields().end(),
                                     [&](const Field& f) { return f.name.rfind(section + ".", 0) == 0; });
      if (!known) throw ValidationError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(where + "expected 'key = value', got '" + line + "'");
    if (section.empty()) throw ValidationError(where + "field outside of any [section]");
    const std::string name = section + "." + trim(line.substr(0, eq));
    if (!seen.insert(name).second) throw ValidationError(where + "duplicate field '" + name + "'");
    set_field(cfg, name, trim(line.substr(eq + 1)), where);
  }
  cfg.derive_seeds();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  return parse_config(in, path.string());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "# poe-config v1\n";
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.name.find('.');
    const std::string sec = f.name.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    os << f.name.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  set_field(cfg, key, value, "--" + key + ": ");
  cfg.derive_seeds();
}

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos) {
      throw ValidationError("unexpected argument '" + a + "'");
    }
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else if (i + 1 < args.size()) {
      out.emplace_back(a.substr(2), args[++i]);
    } else {
      throw ValidationError("override " + a + " needs a value");
    }
  }
  return out;
}

fs::path default_run_dir(const ExperimentConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const char* root = std::getenv(kOutputRootEnv);
  return fs::path(root && *root ? root : "runs") / cfg.id;
}

}  // namespace poe::exp
