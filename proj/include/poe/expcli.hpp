#pragma once

// Experiment runner behind the `poe` binary: the experiment config file,
// run directories with manifests and a lock file, and one function per
// pipeline command. Commands write into a staging area and only rename
// files into place once everything succeeded.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "poe/policyopt.hpp"
#include "poe/rmodels.hpp"
#include "poe/synthworld.hpp"
#include "poe/trainer.hpp"

namespace poe::exp {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// Bad input: config, flags, or missing prerequisites. Exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Anything that goes wrong once a command is running. Exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr const char* kOutputRootEnv = "POE_OUTPUT_ROOT";

struct ExperimentConfig {
  std::string id = "default";
  std::uint64_t seed = 1;
  std::string output_dir;  // empty: $POE_OUTPUT_ROOT/<id>, or runs/<id>

  synth::WorldConfig world;
  synth::SamplerSpec sampler;
  std::size_t n_pairs = 20000;
  std::size_t n_demos = 2000;
  std::size_t n_heldout_demos = 500;
  std::size_t n_eval = 4000;  // reference-policy samples scored by the report

  train::TrainConfig rm_train;
  rm::ExpertConfig rm_main;
  rm::ExpertConfig rm_bias;
  ppo::PolicyConfig policy;
  ppo::ImitationConfig imitation;
  ppo::PpoConfig ppo;

  // Seeds of the nested stages follow from `seed` and are never stored in
  // the config file.
  std::uint64_t demo_seed = 0;
  std::uint64_t heldout_seed = 0;
  std::uint64_t report_seed = 0;

  static ExperimentConfig defaults();
  void derive_seeds();
  void validate() const;
  Json seeds() const;

  bool operator==(const ExperimentConfig&) const = default;
};

// Line-oriented text: `[section]` headers, `key = value`, `#` comments.
// Errors name the source, the line and the field.
ExperimentConfig parse_config(std::istream& is, const std::string& source = "<config>");
ExperimentConfig load_config(const fs::path& path);
std::string serialize_config(const ExperimentConfig& cfg);

// Dotted override such as world.lambda_len = 0.5. Re-derives seeds.
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Turns leftover CLI tokens (--a.b=v or --a.b v) into key/value pairs.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& args);

fs::path default_run_dir(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Run directory plumbing

// Git blob id: sha1("blob <size>\0" + content), lowercase hex.
std::string blob_hash(const std::string& content);
std::string file_blob_hash(const fs::path& path);

std::string read_file(const fs::path& path);

// Exclusive lock on a run directory, held for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

struct Artifact {
  std::string path;  // relative to the run directory
  std::uintmax_t size = 0;
  std::string hash;
};

// Collects a command's outputs as temp files and renames them into place on
// commit. Without a commit the destructor removes everything it staged.
class Staging {
 public:
  explicit Staging(fs::path run_dir) : run_dir_(std::move(run_dir)) {}
  ~Staging();
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;

  void put(const std::string& rel, const std::string& content);
  // Renames staged files into place and writes the manifest last.
  void commit(const std::string& manifest_name, Json& manifest);
  const std::vector<Artifact>& artifacts() const { return artifacts_; }

 private:
  fs::path run_dir_;
  std::vector<Artifact> artifacts_;
  std::vector<fs::path> temps_;
  bool committed_ = false;
};

struct CommandResult {
  Json manifest;
  std::vector<std::string> messages;  // human summary lines
};

// ---------------------------------------------------------------------------
// Commands. Each one locks the run directory for its duration.

CommandResult cmd_gen_data(const ExperimentConfig& cfg, const fs::path& run_dir);

CommandResult cmd_train_rm(const ExperimentConfig& cfg, const fs::path& run_dir, train::Mode mode);

struct PpoRequest {
  fs::path checkpoint;  // empty: rm/vanilla/main.ckpt or rm/poe/main.ckpt
  std::string kind;     // vanilla or poe_main
};

// One request runs one PPO job; two requests (vanilla, poe_main) also write
// the paired comparison table.
CommandResult cmd_run_ppo(const ExperimentConfig& cfg, const fs::path& run_dir, const std::vector<PpoRequest>& jobs);

CommandResult cmd_report(const fs::path& run_dir);

struct VerifyResult {
  std::size_t checked = 0;
  std::vector<std::string> problems;
};
VerifyResult cmd_verify(const fs::path& run_dir);

enum class SweepKind : std::uint8_t { ablation, sizes };

// sizes sweeps the `expert` ("main" or "bias") over the tiny/small/medium
// presets in PoE mode.
CommandResult cmd_sweep(const ExperimentConfig& cfg, const fs::path& run_dir, SweepKind kind,
                        const std::string& expert = "bias");

rm::ExpertConfig size_preset(const std::string& expert, const std::string& size, const rm::ExpertConfig& base);

}  // namespace poe::exp
