#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>

#include "poe/analytics.hpp"
#include "poe/expcli.hpp"
#include "poe/svg.hpp"

namespace poe::exp {

namespace {

const char* const kRmModes[] = {"vanilla", "poe", "poe_no_noise"};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Rethrows library errors raised by bad settings as validation errors.
template <class Fn>
auto validated(Fn&& fn) {
  try {
    return fn();
  } catch (const ValidationError&) {
    throw;
  } catch (const synth::WorldError& e) {
    throw ValidationError(e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
}

Json base_manifest(const std::string& command, const ExperimentConfig& cfg, const fs::path& run_dir,
                   const std::vector<std::string>& inputs) {
  const std::string config_text = serialize_config(cfg);
  Json in = Json::array();
  std::string joined = "config " + blob_hash(config_text) + "\n";
  for (const auto& rel : inputs) {
    const std::string h = file_blob_hash(run_dir / rel);
    in.push_back(Json{{"path", rel}, {"hash", h}});
    joined += rel + " " + h + "\n";
  }
  Json m;
  m["format"] = "poe-manifest v1";
  m["command"] = command;
  m["experiment_id"] = cfg.id;
  m["started"] = utc_now();
  m["config"] = config_text;
  m["inputs"] = std::move(in);
  m["input_hash"] = blob_hash(joined);
  m["seeds"] = cfg.seeds();
  return m;
}

void finish(Json& m) { m["finished"] = utc_now(); }

void require_files(const fs::path& run_dir, const std::vector<std::string>& rels, const std::string& hint) {
  std::string missing;
  for (const auto& r : rels)
    if (!fs::exists(run_dir / r)) missing += (missing.empty() ? "" : ", ") + r;
  if (!missing.empty()) throw ValidationError("run directory " + run_dir.string() + " lacks " + missing + hint);
}

synth::Dataset load_dataset(const fs::path& run_dir, const ExperimentConfig& cfg) {
  require_files(run_dir, {"data/dataset.jsonl"}, " (run gen-data first)");
  std::ifstream in(run_dir / "data/dataset.jsonl");
  synth::Dataset d = validated([&] { return synth::read_dataset(in); });
  if (d.vocab.k_info != cfg.world.k_info || d.max_len != cfg.world.max_len) {
    throw ValidationError("dataset vocabulary or max_len does not match the config's world section");
  }
  return d;
}

std::string write_to_string(auto&& writer) {
  std::ostringstream os;
  writer(os);
  return os.str();
}

std::string join_dims(const std::vector<int>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s.empty() ? "-" : s;
}

std::vector<stats::ScoredSequence> responses_of(const std::vector<synth::PreferencePair>& pairs) {
  std::vector<stats::ScoredSequence> out;
  for (const auto& p : pairs) {
    out.push_back({p.prompt, p.a});
    out.push_back({p.prompt, p.b});
  }
  return out;
}

struct Trained {
  std::unique_ptr<rm::PoeRewardHead> head;
  train::TrainReport report;
};

Trained train_head(const ExperimentConfig& cfg, const synth::Dataset& data, train::Mode mode,
                   const rm::ExpertConfig& main_cfg, const rm::ExpertConfig& bias_cfg) {
  Trained t;
  const int vocab = data.vocab.size();
  t.head = std::make_unique<rm::PoeRewardHead>(rm::ExpertModel(main_cfg, vocab), rm::ExpertModel(bias_cfg, vocab));
  train::TrainConfig tc = cfg.rm_train;
  tc.mode = mode;
  try {
    t.report = train::train(*t.head, data, tc);
  } catch (const train::TrainingDiverged& e) {
    throw RuntimeFailure(std::string("reward-model training diverged: ") + e.what());
  }
  return t;
}

double spearman_vs_length(const stats::RewardFn& fn, const std::vector<stats::ScoredSequence>& seqs) {
  return stats::reward_length_report(fn, seqs).spearman;
}

// Loads a scorer for a trained mode directory. PoE modes are wrapped with
// their bias expert so that inference purity can be counted.
struct LoadedRm {
  std::string name;
  std::unique_ptr<rm::PoeRewardHead> head;  // PoE modes
  std::unique_ptr<rm::ExpertModel> single;  // vanilla
  stats::RewardFn fn;
};

rm::Checkpoint read_ckpt(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot open checkpoint " + p.string());
  try {
    return rm::read_checkpoint(in);
  } catch (const rm::ModelError& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

std::unique_ptr<rm::PoeRewardHead> load_poe_head(const fs::path& main_path, rm::ExpertModel main_model) {
  const fs::path bias_path = main_path.parent_path() / "bias.ckpt";
  if (fs::exists(bias_path)) {
    auto ck = read_ckpt(bias_path);
    return std::make_unique<rm::PoeRewardHead>(std::move(main_model), std::move(ck.model));
  }
  const int vocab = main_model.world_vocab_size();
  return std::make_unique<rm::PoeRewardHead>(std::move(main_model),
                                             rm::ExpertModel(rm::ExpertConfig::default_bias(), vocab));
}

LoadedRm load_rm(const fs::path& run_dir, const std::string& mode) {
  LoadedRm r;
  r.name = mode;
  const fs::path main_path = run_dir / "rm" / mode / "main.ckpt";
  auto ck = read_ckpt(main_path);
  if (mode == "vanilla") {
    r.single = std::make_unique<rm::ExpertModel>(std::move(ck.model));
    const rm::ExpertModel* m = r.single.get();
    r.fn = [m](const synth::Prompt& p, const synth::Sequence& y) { return rm::score_value(*m, p, y); };
  } else {
    r.head = load_poe_head(main_path, std::move(ck.model));
    r.head->bias().reset_forward_calls();
    const rm::PoeRewardHead* h = r.head.get();
    r.fn = [h](const synth::Prompt& p, const synth::Sequence& y) { return rm::inference_reward(*h, p, y); };
  }
  return r;
}

std::vector<synth::Demo> demos(const ExperimentConfig& cfg, bool heldout) {
  synth::WorldConfig w = cfg.world;
  w.seed = heldout ? cfg.heldout_seed : cfg.demo_seed;
  return synth::gen_demos(w, heldout ? cfg.n_heldout_demos : cfg.n_demos);
}

}  // namespace

// ---------------------------------------------------------------------------

CommandResult cmd_gen_data(const ExperimentConfig& cfg, const fs::path& run_dir) {
  cfg.validate();
  const auto g = validated([&] { return synth::gen_dataset(cfg.world, cfg.n_pairs, cfg.sampler); });

  RunLock lock(run_dir);
  Json m = base_manifest("gen-data", cfg, run_dir, {});
  Staging st(run_dir);
  st.put("config.ini", serialize_config(cfg));
  st.put("data/dataset.jsonl", write_to_string([&](std::ostream& os) { synth::write_dataset(os, g.data); }));
  st.put("data/truth.txt", write_to_string([&](std::ostream& os) { synth::write_truth(os, g.truth); }));
  Json counts;
  counts["train"] = g.data.count(synth::Split::train);
  counts["valid"] = g.data.count(synth::Split::valid);
  counts["test"] = g.data.count(synth::Split::test);
  counts["total"] = g.data.pairs.size();
  m["counts"] = counts;
  finish(m);
  CommandResult res;
  res.messages.push_back("pairs: train " + counts["train"].dump() + ", valid " + counts["valid"].dump() + ", test " +
                         counts["test"].dump());
  st.commit("gen-data", m);
  res.manifest = std::move(m);
  return res;
}

CommandResult cmd_train_rm(const ExperimentConfig& cfg, const fs::path& run_dir, train::Mode mode) {
  cfg.validate();
  const synth::Dataset data = load_dataset(run_dir, cfg);
  const std::string mode_name = train::to_string(mode);

  RunLock lock(run_dir);
  Json m = base_manifest("train-rm", cfg, run_dir, {"data/dataset.jsonl"});
  m["mode"] = mode_name;
  Trained t = train_head(cfg, data, mode, cfg.rm_main, cfg.rm_bias);

  Staging st(run_dir);
  const std::string dir = "rm/" + mode_name + "/";
  st.put(dir + "metrics.csv", write_to_string([&](std::ostream& os) { train::write_metrics(os, t.report); }));
  st.put(dir + "loss.csv", write_to_string([&](std::ostream& os) {
           os << "# poe-rm-loss v1\nstep,loss\n";
           for (std::size_t i = 0; i < t.report.step_loss.size(); ++i)
             os << i + 1 << ',' << num(t.report.step_loss[i]) << '\n';
         }));
  const bool poe_mode = mode == train::Mode::poe || mode == train::Mode::poe_no_noise;
  if (mode == train::Mode::vanilla) {
    st.put(dir + "main.ckpt", write_to_string([&](std::ostream& os) { rm::write_checkpoint(os, t.head->main(), "vanilla"); }));
  } else if (poe_mode) {
    st.put(dir + "main.ckpt", write_to_string([&](std::ostream& os) { rm::write_checkpoint(os, t.head->main(), "poe_main"); }));
    st.put(dir + "bias.ckpt", write_to_string([&](std::ostream& os) { rm::write_checkpoint(os, t.head->bias(), "poe_bias"); }));
  } else {
    st.put(dir + "bias.ckpt", write_to_string([&](std::ostream& os) { rm::write_checkpoint(os, t.head->bias(), "bias_only"); }));
  }
  const auto& last = t.report.evals.back();
  m["final_valid_accuracy"] = Json{{"combined", last.acc_combined}, {"main", last.acc_main}, {"bias", last.acc_bias}};
  m["steps"] = t.report.step_loss.size();
  m["wall_seconds"] = t.report.wall_seconds;
  finish(m);
  CommandResult res;
  res.messages.push_back(mode_name + ": final valid accuracy combined " + fixed(last.acc_combined, 4) + ", main " +
                         fixed(last.acc_main, 4) + ", bias " + fixed(last.acc_bias, 4));
  st.commit("train-rm-" + mode_name, m);
  res.manifest = std::move(m);
  return res;
}

CommandResult cmd_run_ppo(const ExperimentConfig& cfg, const fs::path& run_dir, const std::vector<PpoRequest>& jobs) {
  cfg.validate();
  if (jobs.empty()) throw ValidationError("run-ppo needs at least one reward model");
  struct Job {
    std::string kind;
    std::string ckpt_rel;
    rm::Checkpoint ck;
  };
  std::vector<Job> resolved;
  for (const auto& j : jobs) {
    if (j.kind != "vanilla" && j.kind != "poe_main") {
      throw ValidationError("--kind must be vanilla or poe_main, got '" + j.kind + "'");
    }
    fs::path p = j.checkpoint;
    if (p.empty()) p = run_dir / "rm" / (j.kind == "vanilla" ? "vanilla" : "poe") / "main.ckpt";
    if (!fs::exists(p)) throw ValidationError("reward-model checkpoint " + p.string() + " does not exist");
    auto ck = read_ckpt(p);
    if (ck.kind != j.kind) {
      throw ValidationError("checkpoint " + p.string() + " has kind '" + ck.kind + "' but --kind is '" + j.kind + "'");
    }
    const fs::path rel = fs::proximate(p, run_dir);
    resolved.push_back(Job{j.kind, rel.string(), std::move(ck)});
    for (std::size_t k = 0; k + 1 < resolved.size(); ++k)
      if (resolved[k].kind == j.kind) throw ValidationError("run-ppo got kind '" + j.kind + "' twice");
  }

  RunLock lock(run_dir);
  std::vector<std::string> inputs;
  for (const auto& j : resolved) inputs.push_back(j.ckpt_rel);
  Json m = base_manifest("run-ppo", cfg, run_dir, inputs);

  const synth::WorldConfig& w = cfg.world;
  ppo::Policy reference(cfg.policy, w.k_info, w.max_len);
  const auto imit = ppo::imitation_pretrain(reference, demos(cfg, false), demos(cfg, true), cfg.imitation);
  m["imitation"] = Json{{"initial_loglik", imit.initial_loglik}, {"final_loglik", imit.final_loglik}};

  Staging st(run_dir);
  st.put("ppo/reference.policy", write_to_string([&](std::ostream& os) { ppo::write_policy(os, reference); }));
  CommandResult res;
  Json runs = Json::array();
  std::vector<std::pair<std::string, std::vector<ppo::CurveRow>>> curves;
  for (auto& j : resolved) {
    std::unique_ptr<rm::PoeRewardHead> head;
    std::unique_ptr<rm::ExpertModel> single;
    std::unique_ptr<ppo::RewardSource> src;
    if (j.kind == "vanilla") {
      single = std::make_unique<rm::ExpertModel>(std::move(j.ck.model));
      src = std::make_unique<ppo::RewardSource>(ppo::RewardSource::vanilla(*single));
    } else {
      head = load_poe_head(run_dir / j.ckpt_rel, std::move(j.ck.model));
      head->bias().reset_forward_calls();
      src = std::make_unique<ppo::RewardSource>(ppo::RewardSource::poe_main(*head));
    }
    ppo::PpoRun run = [&] {
      try {
        return ppo::run_ppo(reference, *src, cfg.ppo, w);
      } catch (const ppo::PpoDiverged& e) {
        throw RuntimeFailure(std::string("PPO diverged: ") + e.what());
      }
    }();
    const std::string dir = "ppo/" + j.kind + "/";
    st.put(dir + "curves.csv", write_to_string([&](std::ostream& os) { ppo::write_curves(os, run.curves); }));
    st.put(dir + "final.policy", write_to_string([&](std::ostream& os) { ppo::write_policy(os, run.policy); }));
    const double change = run.final.mean_len / run.reference.mean_len - 1.0;
    st.put(dir + "summary.csv", write_to_string([&](std::ostream& os) {
             os << "# poe-ppo-summary v1\nkind,ref_len,final_len,len_change,ref_true,final_true,ref_rm,final_rm\n"
                << j.kind << ',' << num(run.reference.mean_len) << ',' << num(run.final.mean_len) << ','
                << num(change) << ',' << num(run.reference.true_reward) << ',' << num(run.final.true_reward) << ','
                << num(run.reference.rm_reward) << ',' << num(run.final.rm_reward) << '\n';
           }));
    Json r{{"kind", j.kind},
           {"checkpoint", j.ckpt_rel},
           {"reference_len", run.reference.mean_len},
           {"final_len", run.final.mean_len},
           {"reference_true_reward", run.reference.true_reward},
           {"final_true_reward", run.final.true_reward}};
    if (head) r["bias_forward_calls"] = head->bias().forward_calls();
    runs.push_back(r);
    char line[200];
    std::snprintf(line, sizeof line, "%s: mean length %.2f -> %.2f (%+.1f%%), true reward %.3f -> %.3f", j.kind.c_str(),
                  run.reference.mean_len, run.final.mean_len, 100.0 * change, run.reference.true_reward,
                  run.final.true_reward);
    res.messages.push_back(line);
    curves.emplace_back(j.kind, std::move(run.curves));
  }
  if (curves.size() == 2) {
    if (curves[0].first != "vanilla") std::swap(curves[0], curves[1]);
    const auto& a = curves[0].second;
    const auto& b = curves[1].second;
    st.put("ppo/comparison.csv", write_to_string([&](std::ostream& os) {
             os << "# poe-ppo-comparison v1\n"
                << "iter,len_vanilla,len_poe_main,true_vanilla,true_poe_main,rm_vanilla,rm_poe_main,kl_vanilla,"
                   "kl_poe_main\n";
             for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
               os << a[i].iter << ',' << num(a[i].mean_len) << ',' << num(b[i].mean_len) << ','
                  << num(a[i].true_reward) << ',' << num(b[i].true_reward) << ',' << num(a[i].rm_reward) << ','
                  << num(b[i].rm_reward) << ',' << num(a[i].mean_kl) << ',' << num(b[i].mean_kl) << '\n';
             }
           }));
  }
  m["runs"] = runs;
  finish(m);
  std::string name = "run-ppo";
  for (const auto& c : curves) name += "-" + c.first;
  st.commit(name, m);
  res.manifest = std::move(m);
  return res;
}

// ---------------------------------------------------------------------------

CommandResult cmd_report(const fs::path& run_dir) {
  std::vector<std::string> missing;
  for (const char* f : {"config.ini", "data/dataset.jsonl", "data/truth.txt"})
    if (!fs::exists(run_dir / f)) missing.push_back(f);
  std::vector<std::string> modes;
  for (const char* mode : kRmModes)
    if (fs::exists(run_dir / "rm" / mode)) {
      if (fs::exists(run_dir / "rm" / mode / "main.ckpt")) {
        modes.push_back(mode);
      } else {
        missing.push_back(std::string("rm/") + mode + "/main.ckpt");
      }
    }
  if (modes.empty() && missing.empty()) missing.push_back("rm/<mode>/main.ckpt (no trained reward model)");
  if (fs::exists(run_dir / "manifests")) {
    for (const auto& e : fs::directory_iterator(run_dir / "manifests")) {
      if (e.path().extension() != ".json") continue;
      const Json mj = Json::parse(read_file(e.path()), nullptr, false);
      if (mj.is_discarded() || !mj.contains("artifacts")) {
        missing.push_back(fs::proximate(e.path(), run_dir).string() + " (unreadable)");
        continue;
      }
      for (const auto& a : mj["artifacts"])
        if (!fs::exists(run_dir / a["path"].get<std::string>())) missing.push_back(a["path"].get<std::string>());
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& s : missing) list += "\n  " + s;
    throw ValidationError("incomplete run directory " + run_dir.string() + "; missing artifacts:" + list);
  }

  const ExperimentConfig cfg = load_config(run_dir / "config.ini");
  const synth::Dataset data = load_dataset(run_dir, cfg);
  std::ifstream truth_in(run_dir / "data/truth.txt");
  const synth::TruthSidecar truth = validated([&] { return synth::read_truth(truth_in); });
  if (truth.rows.size() != data.pairs.size()) throw ValidationError("truth sidecar does not match the dataset");

  RunLock lock(run_dir);
  std::vector<std::string> inputs{"data/dataset.jsonl", "data/truth.txt"};
  for (const auto& mode : modes) {
    inputs.push_back("rm/" + mode + "/main.ckpt");
    if (fs::exists(run_dir / "rm" / mode / "bias.ckpt")) inputs.push_back("rm/" + mode + "/bias.ckpt");
  }
  const bool have_ref = fs::exists(run_dir / "ppo/reference.policy");
  if (have_ref) inputs.push_back("ppo/reference.policy");
  Json m = base_manifest("report", cfg, run_dir, inputs);

  std::vector<synth::PreferencePair> test;
  std::vector<double> test_truth;
  for (std::size_t i = 0; i < data.pairs.size(); ++i) {
    if (data.pairs[i].split != synth::Split::test) continue;
    test.push_back(data.pairs[i]);
    test_truth.push_back(truth.rows[i].r_a);
    test_truth.push_back(truth.rows[i].r_b);
  }
  const auto test_seqs = responses_of(test);

  std::vector<stats::ScoredSequence> sft;
  if (have_ref) {
    std::ifstream pin(run_dir / "ppo/reference.policy");
    const ppo::Policy ref = ppo::read_policy(pin);
    Rng rng(cfg.report_seed);
    for (std::size_t i = 0; i < cfg.n_eval; ++i) {
      const synth::Prompt p = synth::sample_prompt(cfg.world, rng);
      sft.push_back({p, ppo::generate(ref, p, cfg.ppo.temperature, rng)});
    }
  }

  std::ostringstream corr, dec, sep;
  corr << "# poe-correlation v1\nrm,source,n,spearman,pearson,decile_increases,decile_spread\n";
  dec << "# poe-deciles v1\nrm,source,decile,mean_length,mean_reward\n";
  sep << "# poe-separation v1\nrm,n_pairs,mean_chosen,std_chosen,mean_rejected,std_rejected,overlap,accuracy\n";
  Staging st(run_dir);
  auto add_corr = [&](const std::string& rm_name, const std::string& source, const stats::CorrelationReport& r) {
    corr << rm_name << ',' << source << ',' << r.n << ',' << num(r.spearman) << ',' << num(r.pearson) << ','
         << stats::decile_increases(r.decile_mean_reward) << ',' << num(stats::decile_spread(r.decile_mean_reward))
         << '\n';
    for (std::size_t d = 0; d < stats::kDeciles; ++d)
      dec << rm_name << ',' << source << ',' << d + 1 << ',' << num(r.decile_mean_length[d]) << ','
          << num(r.decile_mean_reward[d]) << '\n';
    std::ostringstream grid;
    grid << "# poe-grid v1 rows=length_decile cols=score_decile\n";
    for (const auto& row : r.histogram) {
      for (std::size_t c = 0; c < row.size(); ++c) grid << (c ? " " : "") << row[c];
      grid << '\n';
    }
    st.put("report/grid_" + rm_name + "_" + source + ".txt", grid.str());
  };

  {
    std::vector<double> lens;
    for (const auto& s : test_seqs) lens.push_back(s.response.len);
    add_corr("hidden_truth", "test_responses", stats::correlation_report(lens, test_truth));
  }

  CommandResult res;
  std::uint64_t bias_calls = 0;
  std::vector<svg::Series> scatter_series;
  for (const auto& mode : modes) {
    LoadedRm r = load_rm(run_dir, mode);
    const auto c = stats::reward_length_report(r.fn, test_seqs);
    add_corr(mode, "test_responses", c);
    if (!sft.empty()) add_corr(mode, "sft_samples", stats::reward_length_report(r.fn, sft));
    const auto s = stats::separation_report(r.fn, test);
    sep << mode << ',' << test.size() << ',' << num(s.mean_chosen) << ',' << num(s.std_chosen) << ','
        << num(s.mean_rejected) << ',' << num(s.std_rejected) << ',' << num(s.overlap) << ',' << num(s.accuracy)
        << '\n';

    std::vector<double> loglen;
    for (double l : c.lengths) loglen.push_back(std::log1p(l));
    st.put("report/reward_length_" + mode + ".svg",
           svg::scatter({"Reward vs log length: " + mode, "log(1 + length)", "reward"}, {{mode, loglen, c.rewards}}));
    std::vector<std::vector<double>> cells;
    for (const auto& row : c.histogram) cells.emplace_back(row.begin(), row.end());
    st.put("report/reward_length_grid_" + mode + ".svg",
           svg::heat_grid({"Length decile (x) vs score decile (y): " + mode, "length decile", "score decile"}, [&] {
             std::vector<std::vector<double>> t(stats::kDeciles, std::vector<double>(stats::kDeciles));
             for (std::size_t l = 0; l < stats::kDeciles; ++l)
               for (std::size_t q = 0; q < stats::kDeciles; ++q) t[q][l] = cells[l][q];
             return t;
           }()));
    st.put("report/separation_" + mode + ".svg",
           svg::histogram_pair({"Chosen vs rejected scores: " + mode, "score", "fraction"}, "chosen", s.chosen,
                               "rejected", s.rejected, stats::kOverlapBins));
    if (r.head) bias_calls += r.head->bias().forward_calls();
    res.messages.push_back(mode + ": spearman " + fixed(c.spearman, 4) + ", pearson " + fixed(c.pearson, 4) +
                           ", overlap " + fixed(s.overlap, 4) + ", accuracy " + fixed(s.accuracy, 4));
  }
  st.put("report/correlation.csv", corr.str());
  st.put("report/deciles.csv", dec.str());
  st.put("report/separation.csv", sep.str());

  std::vector<svg::Series> len_s, true_s, rm_s;
  for (const char* kind : {"vanilla", "poe_main"}) {
    const fs::path p = run_dir / "ppo" / kind / "curves.csv";
    if (!fs::exists(p)) continue;
    std::ifstream cin(p);
    const auto rows = ppo::read_curves(cin);
    svg::Series l{kind, {}, {}}, t{kind, {}, {}}, r{kind, {}, {}};
    for (const auto& row : rows) {
      l.x.push_back(row.iter);
      l.y.push_back(row.mean_len);
      t.x.push_back(row.iter);
      t.y.push_back(row.true_reward);
      r.x.push_back(row.iter);
      r.y.push_back(row.rm_reward);
    }
    len_s.push_back(l);
    true_s.push_back(t);
    rm_s.push_back(r);
  }
  if (!len_s.empty()) {
    st.put("report/curves_length.svg", svg::line_chart({"Mean response length during PPO", "iteration", "length"}, len_s));
    st.put("report/curves_true_reward.svg",
           svg::line_chart({"Hidden true reward during PPO", "iteration", "true reward"}, true_s));
    st.put("report/curves_rm_reward.svg",
           svg::line_chart({"Reward-model score during PPO", "iteration", "rm score"}, rm_s));
  }
  m["bias_forward_calls"] = bias_calls;
  m["reward_models"] = modes;
  finish(m);
  st.commit("report", m);
  res.manifest = std::move(m);
  return res;
}

VerifyResult cmd_verify(const fs::path& run_dir) {
  VerifyResult v;
  const fs::path dir = run_dir / "manifests";
  if (!fs::exists(dir)) {
    v.problems.push_back("no manifests in " + run_dir.string());
    return v;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const Json mj = Json::parse(read_file(f), nullptr, false);
    if (mj.is_discarded() || !mj.contains("artifacts")) {
      v.problems.push_back(f.filename().string() + ": not a manifest");
      continue;
    }
    for (const auto& a : mj["artifacts"]) {
      const std::string rel = a["path"].get<std::string>();
      const fs::path p = run_dir / rel;
      ++v.checked;
      if (!fs::exists(p)) {
        v.problems.push_back(rel + ": missing");
        continue;
      }
      if (fs::file_size(p) != a["size"].get<std::uintmax_t>()) {
        v.problems.push_back(rel + ": size differs");
      } else if (file_blob_hash(p) != a["hash"].get<std::string>()) {
        v.problems.push_back(rel + ": hash differs");
      }
    }
  }
  if (files.empty()) v.problems.push_back("no manifests in " + run_dir.string());
  return v;
}

// ---------------------------------------------------------------------------

rm::ExpertConfig size_preset(const std::string& expert, const std::string& size, const rm::ExpertConfig& base) {
  rm::ExpertConfig c = base;
  const bool main = expert == "main";
  if (!main && expert != "bias") throw ValidationError("--expert must be main or bias, got '" + expert + "'");
  if (size == "tiny") {
    c.embed_dim = main ? 8 : 4;
    c.hidden_dims = main ? std::vector<int>{16} : std::vector<int>{4};
  } else if (size == "small") {
    c.embed_dim = main ? 16 : 8;
    c.hidden_dims = main ? std::vector<int>{32, 32} : std::vector<int>{8};
  } else if (size == "medium") {
    c.embed_dim = main ? 32 : 16;
    c.hidden_dims = main ? std::vector<int>{64, 64} : std::vector<int>{16};
  } else {
    throw ValidationError("unknown size preset '" + size + "'");
  }
  return c;
}

CommandResult cmd_sweep(const ExperimentConfig& cfg, const fs::path& run_dir, SweepKind kind, const std::string& expert) {
  cfg.validate();
  if (kind == SweepKind::sizes) (void)size_preset(expert, "tiny", cfg.rm_main);
  const synth::Dataset data = load_dataset(run_dir, cfg);
  std::vector<synth::PreferencePair> test = data.split(synth::Split::test);
  const auto seqs = responses_of(test);

  RunLock lock(run_dir);
  Json m = base_manifest("sweep", cfg, run_dir, {"data/dataset.jsonl"});
  Staging st(run_dir);
  CommandResult res;
  std::ostringstream table;
  Json rows = Json::array();
  if (kind == SweepKind::ablation) {
    m["sweep"] = "ablation";
    table << "# poe-ablation v1\nmode,acc_combined,acc_main,acc_bias,spearman_inference\n";
    for (auto mode : {train::Mode::vanilla, train::Mode::poe, train::Mode::poe_no_noise, train::Mode::bias_only}) {
      Trained t = train_head(cfg, data, mode, cfg.rm_main, cfg.rm_bias);
      const rm::ExpertModel& scorer = mode == train::Mode::bias_only ? t.head->bias() : t.head->main();
      const double sp = spearman_vs_length(
          [&](const synth::Prompt& p, const synth::Sequence& y) { return rm::score_value(scorer, p, y); }, seqs);
      const auto& e = t.report.evals.back();
      table << train::to_string(mode) << ',' << num(e.acc_combined) << ',' << num(e.acc_main) << ','
            << num(e.acc_bias) << ',' << num(sp) << '\n';
      rows.push_back(Json{{"mode", train::to_string(mode)}, {"acc_main", e.acc_main}, {"spearman", sp}});
      res.messages.push_back(std::string(train::to_string(mode)) + ": acc combined " + fixed(e.acc_combined, 4) +
                             ", main " + fixed(e.acc_main, 4) + ", bias " + fixed(e.acc_bias, 4) +
                             ", spearman " + fixed(sp, 4));
    }
    st.put("sweeps/ablation.csv", table.str());
  } else {
    m["sweep"] = "sizes";
    m["expert"] = expert;
    table << "# poe-size-sweep v1 expert=" << expert << "\nsize,embed_dim,hidden_dims,params,acc_combined,acc_main,"
          << "acc_bias,spearman_main\n";
    for (const char* size : {"tiny", "small", "medium"}) {
      rm::ExpertConfig mc = cfg.rm_main;
      rm::ExpertConfig bc = cfg.rm_bias;
      rm::ExpertConfig& target = expert == "main" ? mc : bc;
      target = size_preset(expert, size, target);
      Trained t = train_head(cfg, data, train::Mode::poe, mc, bc);
      const double sp = spearman_vs_length(
          [&](const synth::Prompt& p, const synth::Sequence& y) { return rm::inference_reward(*t.head, p, y); }, seqs);
      const auto& e = t.report.evals.back();
      const auto params = rm::param_count(target, data.vocab.size() + 1);
      table << size << ',' << target.embed_dim << ',' << join_dims(target.hidden_dims) << ',' << params << ','
            << num(e.acc_combined) << ',' << num(e.acc_main) << ',' << num(e.acc_bias) << ',' << num(sp) << '\n';
      rows.push_back(Json{{"size", size}, {"params", params}, {"acc_main", e.acc_main}, {"spearman", sp}});
      res.messages.push_back(std::string(size) + " (" + std::to_string(params) + " params): acc main " +
                             fixed(e.acc_main, 4) + ", combined " + fixed(e.acc_combined, 4));
    }
    st.put("sweeps/sizes_" + expert + ".csv", table.str());
  }
  m["rows"] = rows;
  finish(m);
  st.commit(kind == SweepKind::ablation ? "sweep-ablation" : "sweep-sizes-" + expert, m);
  res.manifest = std::move(m);
  return res;
}

}  // namespace poe::exp
