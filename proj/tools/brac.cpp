#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <json.hpp>

#include "brac/checks.hpp"
#include "brac/data.hpp"
#include "brac/errors.hpp"
#include "brac/harness.hpp"
#include "brac/trainer.hpp"

namespace fs = std::filesystem;
using namespace brac;

namespace {

struct Globals {
  std::string config_file;
  std::string scale = "desk";
};

// BRAC_SEED replaces the seed given on the command line.
std::uint64_t seed_override(std::uint64_t seed) {
  if (const char* s = std::getenv("BRAC_SEED")) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw ConfigError(std::string("BRAC_SEED is not an unsigned integer: ") + s);
    }
  }
  return seed;
}

// Relative output paths are placed under BRAC_OUT_DIR when it is set.
fs::path out_path(const std::string& p) {
  const fs::path path(p);
  if (const char* dir = std::getenv("BRAC_OUT_DIR"); dir && *dir && path.is_relative()) return fs::path(dir) / path;
  return path;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  ensure_parent(p);
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw FormatError("cannot write " + tmp.string());
    f << j.dump(2) << '\n';
  }
  fs::rename(tmp, p);
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw FormatError("cannot read " + p.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

TrainerConfig build_config(const Globals& g, const std::string& algo, std::size_t action_dim) {
  TrainerConfig cfg = preset(algo, action_dim);
  if (g.scale == "desk") {
    apply_desk_scale(cfg);
  } else {
    cfg.total_steps = 500000;
  }
  if (!g.config_file.empty()) cfg = config_from_json(read_json(g.config_file), cfg);
  return cfg;
}

CloneConfig clone_config(const Globals& g) {
  CloneConfig c;
  if (g.scale == "desk") c.hidden = {64, 64};
  return c;
}

int report_suite(const checks::SuiteResult& r) {
  for (const std::string& l : r.lines) std::cout << r.name << ": " << l << '\n';
  std::cout << r.name << ": " << (r.passed ? "PASS" : "FAIL") << '\n';
  return r.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline RL lab: datasets, behavior cloning, regularized actor-critic training and grids."};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_file, "JSON file with TrainerConfig fields applied over the preset");
  app.add_option("--scale", g.scale, "desk (small nets, 100k steps) or full (large nets, 500k steps)")
      ->check(CLI::IsMember({"desk", "full"}));

  // collect
  auto* collect_cmd = app.add_subcommand("collect", "Log a dataset from a policy checkpoint or the controller");
  std::string c_env, c_policy, c_noise = "none", c_out;
  std::size_t c_n = 50000;
  std::uint64_t c_seed = 0;
  bool c_mean = false;
  collect_cmd->add_option("--env", c_env)->required();
  collect_cmd->add_option("--policy", c_policy, "policy checkpoint, or 'controller'")->required();
  collect_cmd->add_option("--noise", c_noise, "none | eps:P | gauss:S");
  collect_cmd->add_option("--n", c_n);
  collect_cmd->add_option("--out", c_out)->required();
  collect_cmd->add_option("--seed", c_seed);
  collect_cmd->add_flag("--mean-action", c_mean, "log the policy mean instead of samples");

  // clone
  auto* clone_cmd = app.add_subcommand("clone", "Fit a behavior policy by maximum likelihood");
  std::string cl_data, cl_out;
  std::optional<std::size_t> cl_steps;
  std::uint64_t cl_seed = 0;
  clone_cmd->add_option("--data", cl_data)->required();
  clone_cmd->add_option("--out", cl_out)->required();
  clone_cmd->add_option("--steps", cl_steps);
  clone_cmd->add_option("--seed", cl_seed);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one run and write its RunRecord");
  std::string t_algo, t_data, t_behavior, t_out, t_save_policy, t_save_critic;
  std::optional<double> t_alpha, t_epsilon, t_phi, t_lr;
  std::optional<std::size_t> t_steps;
  std::uint64_t t_seed = 0;
  std::size_t t_episodes = 20;
  train_cmd->add_option("--algo", t_algo)->required()->check(CLI::IsMember(preset_names()));
  train_cmd->add_option("--data", t_data)->required();
  train_cmd->add_option("--behavior", t_behavior, "cloned behavior checkpoint");
  auto* o_alpha = train_cmd->add_option("--alpha", t_alpha);
  auto* o_eps = train_cmd->add_option("--epsilon", t_epsilon);
  auto* o_phi = train_cmd->add_option("--phi", t_phi);
  o_alpha->excludes(o_eps)->excludes(o_phi);
  o_eps->excludes(o_phi);
  train_cmd->add_option("--policy-lr", t_lr);
  train_cmd->add_option("--seed", t_seed);
  train_cmd->add_option("--steps", t_steps);
  train_cmd->add_option("--episodes", t_episodes, "episodes per evaluation point");
  train_cmd->add_option("--out", t_out)->required();
  train_cmd->add_option("--save-policy", t_save_policy);
  train_cmd->add_option("--save-critic", t_save_critic);

  // grid
  auto* grid_cmd = app.add_subcommand("grid", "Grid search over policy lr x strength, resumable");
  std::string gr_algo, gr_env, gr_datasets, gr_out;
  std::size_t gr_parallel = 1, gr_seeds = 5, gr_episodes = 20;
  std::optional<std::size_t> gr_steps;
  std::vector<double> gr_lrs, gr_strengths;
  std::uint64_t gr_seed = 0;
  grid_cmd->add_option("--algo", gr_algo)->required()->check(CLI::IsMember(preset_names()));
  grid_cmd->add_option("--env", gr_env)->required();
  grid_cmd->add_option("--datasets", gr_datasets, "directory of *.bin datasets (behavior clones cached as *.policy)")
      ->required();
  grid_cmd->add_option("--out", gr_out)->required();
  grid_cmd->add_option("--parallel", gr_parallel);
  grid_cmd->add_option("--seeds", gr_seeds);
  grid_cmd->add_option("--seed", gr_seed, "base seed for per-cell seeds");
  grid_cmd->add_option("--steps", gr_steps);
  grid_cmd->add_option("--episodes", gr_episodes);
  grid_cmd->add_option("--lrs", gr_lrs, "override the learning-rate list");
  grid_cmd->add_option("--strengths", gr_strengths, "override the strength list");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a policy (with max-Q selection when a critic is given)");
  std::string e_policy, e_critic, e_env;
  std::size_t e_episodes = 20, e_candidates = 10;
  std::uint64_t e_seed = 0;
  eval_cmd->add_option("--policy", e_policy)->required();
  eval_cmd->add_option("--critic", e_critic);
  eval_cmd->add_option("--env", e_env)->required();
  eval_cmd->add_option("--episodes", e_episodes);
  eval_cmd->add_option("--candidates", e_candidates);
  eval_cmd->add_option("--seed", e_seed);

  // report
  auto* report_cmd = app.add_subcommand("report", "Aggregate grid records into grid.csv and summary.json");
  std::string r_runs, r_format = "csv", r_out;
  report_cmd->add_option("--runs", r_runs)->required();
  report_cmd->add_option("--format", r_format)->check(CLI::IsMember({"csv"}));
  report_cmd->add_option("--out", r_out, "output directory (default: the runs directory)");

  // check
  auto* check_cmd = app.add_subcommand("check", "Run an oracle suite");
  std::string k_suite;
  std::uint64_t k_seed = 0;
  check_cmd->add_option("--suite", k_suite)->required()->check(CLI::IsMember({"grad", "divergence", "combiner", "sac-equiv"}));
  check_cmd->add_option("--seed", k_seed);

  // pretrain
  auto* pre_cmd = app.add_subcommand("pretrain", "Online SAC until the policy is partially trained");
  std::string p_env, p_out;
  PretrainConfig pcfg;
  pre_cmd->add_option("--env", p_env)->required();
  pre_cmd->add_option("--out", p_out)->required();
  pre_cmd->add_option("--target", pcfg.target, "normalized return (0 random, 1 controller)");
  pre_cmd->add_option("--tolerance", pcfg.tolerance);
  pre_cmd->add_option("--max-steps", pcfg.max_steps);
  pre_cmd->add_option("--seed", pcfg.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (collect_cmd->parsed()) {
      const auto env = make_env(c_env);
      Rng rng(seed_override(c_seed));
      std::optional<TanhGaussianPolicy> pi;
      BehaviorSource src;
      if (c_policy == "controller") {
        src = [&env](std::span<const double> obs, Rng&) { return env->reference_action(obs); };
      } else {
        pi = TanhGaussianPolicy::load(c_policy);
        if (pi->state_dim() != env->state_dim() || !(pi->bounds() == env->bounds())) {
          throw ConfigError("policy checkpoint does not match environment " + c_env);
        }
        src = [&pi, c_mean](std::span<const double> obs, Rng& r) {
          Tensor s = Tensor::matrix(1, obs.size());
          std::copy(obs.begin(), obs.end(), s.row(0).begin());
          const Tensor a = c_mean ? pi->mean_action(s) : pi->sample(s, 1, r).first;
          return std::vector<double>(a.values().begin(), a.values().end());
        };
      }
      CollectStats stats;
      const OfflineDataset ds = collect(*env, src, NoiseConfig::parse(c_noise), c_n, rng, &stats);
      const fs::path out = out_path(c_out);
      ensure_parent(out);
      ds.save(out);
      std::cout << "collected " << ds.size() << " transitions (" << stats.episodes << " episodes), average return "
                << ds.average_episode_return(env->horizon()) << " -> " << out.string() << '\n';
    } else if (clone_cmd->parsed()) {
      const OfflineDataset ds = OfflineDataset::load(cl_data);
      CloneConfig cc = clone_config(g);
      if (cl_steps) cc.steps = *cl_steps;
      Rng rng(seed_override(cl_seed));
      const CloneResult res = clone_behavior(ds, cc, rng);
      const fs::path out = out_path(cl_out);
      ensure_parent(out);
      res.policy.save(out);
      std::cout << "clone log-likelihood " << res.final_log_likelihood << " -> " << out.string() << '\n';
    } else if (train_cmd->parsed()) {
      const OfflineDataset ds = OfflineDataset::load(t_data);
      const auto env = make_env(ds.env_name());
      TrainerConfig cfg = build_config(g, t_algo, env->action_dim());
      const std::string knob = strength_name(cfg);
      auto set_knob = [&](const std::optional<double>& v, const char* name) {
        if (!v) return;
        if (knob != name) throw ConfigError(std::string("--") + name + " does not apply to " + t_algo);
        set_strength(cfg, *v);
      };
      set_knob(t_alpha, "alpha");
      set_knob(t_epsilon, "epsilon");
      set_knob(t_phi, "phi");
      if (t_lr) cfg.policy_lr = *t_lr;
      if (t_steps) cfg.total_steps = *t_steps;
      cfg.seed = seed_override(t_seed);
      cfg.validate();
      std::optional<TanhGaussianPolicy> behavior;
      if (!t_behavior.empty()) behavior = TanhGaussianPolicy::load(t_behavior);
      EvalProtocol protocol;
      protocol.episodes = t_episodes;
      const RunRecord rec = train_offline(
          cfg, ds, behavior ? &*behavior : nullptr, *env, protocol,
          [](const EvalPoint& p) { std::cerr << "step " << p.step << " return " << p.mean_return << '\n'; },
          [&](const Trainer& tr) {
            if (!t_save_policy.empty()) {
              ensure_parent(out_path(t_save_policy));
              tr.policy().save(out_path(t_save_policy));
            }
            if (!t_save_critic.empty() && cfg.algorithm != Algorithm::kBc) {
              ensure_parent(out_path(t_save_critic));
              tr.critic().save(out_path(t_save_critic));
            }
          });
      write_json(out_path(t_out), rec.to_json());
      std::cout << t_algo << " final score " << rec.final_score << " (reported " << rec.reported_score() << ")"
                << (rec.failed ? " FAILED: " + rec.failure : "") << '\n';
    } else if (grid_cmd->parsed()) {
      const auto env = make_env(gr_env);
      TrainerConfig base = build_config(g, gr_algo, env->action_dim());
      if (gr_steps) base.total_steps = *gr_steps;
      base.seed = seed_override(gr_seed);
      GridSpec grid = default_grid(base);
      grid.seeds = gr_seeds;
      if (!gr_lrs.empty()) grid.policy_lrs = gr_lrs;
      if (!gr_strengths.empty()) grid.strengths = gr_strengths;

      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(gr_datasets)) {
        if (e.path().extension() == ".bin") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) throw ConfigError("no *.bin datasets in " + gr_datasets);
      std::vector<OfflineDataset> data;
      std::vector<TanhGaussianPolicy> clones;
      data.reserve(files.size());
      clones.reserve(files.size());
      for (const fs::path& f : files) {
        data.push_back(OfflineDataset::load(f));
        if (data.back().env_name() != env->name()) throw ConfigError(f.string() + " was not collected on " + gr_env);
        fs::path ckpt = f;
        ckpt.replace_extension(".policy");
        if (fs::exists(ckpt)) {
          clones.push_back(TanhGaussianPolicy::load(ckpt));
        } else {
          Rng rng(derive_seed(base.seed, {0xc10e, clones.size()}));
          clones.push_back(clone_behavior(data.back(), clone_config(g), rng).policy);
          clones.back().save(ckpt);
          std::cerr << "cloned behavior for " << f.filename().string() << '\n';
        }
      }
      std::vector<GridDataset> sets;
      for (std::size_t i = 0; i < data.size(); ++i) sets.push_back({data[i].noise_tag(), &data[i], &clones[i]});
      EvalProtocol protocol;
      protocol.episodes = gr_episodes;
      GridOptions opt;
      opt.parallelism = gr_parallel;
      opt.on_record = [](const GridRecord& r) {
        std::cerr << "lr " << r.policy_lr << " strength " << r.strength << " " << r.dataset << " seed " << r.cell.seed
                  << ": " << r.run.final_score << (r.run.failed ? " (failed)" : "") << '\n';
      };
      const fs::path out = out_path(gr_out);
      const GridResult res = run_grid(grid, base, sets, *env, protocol, out, opt);
      std::cout << "grid: " << res.executed << " runs executed, " << res.resumed << " resumed\n";
      const BestCell best = select_best(res.records);
      std::cout << "best: policy_lr " << best.policy_lr << " strength " << best.strength << " mean "
                << best.mean_score << '\n';
    } else if (eval_cmd->parsed()) {
      const auto env = make_env(e_env);
      const TanhGaussianPolicy pi = TanhGaussianPolicy::load(e_policy);
      EvalProtocol protocol;
      protocol.episodes = e_episodes;
      protocol.candidates = e_candidates;
      Rng rng(seed_override(e_seed));
      double score;
      if (!e_critic.empty()) {
        score = evaluate(pi, QEnsemble::load(e_critic), *env, protocol, rng);
      } else {
        score = evaluate(
            *env, [&pi](const Tensor& s, Rng& r) { return pi.sample(s, 1, r).first.reshaped({s.rows(), pi.action_dim()}); },
            protocol, rng);
      }
      std::cout << "mean return " << score << " (reported " << clamp_score(score) << ")\n";
    } else if (report_cmd->parsed()) {
      const std::vector<GridRecord> records = load_grid_records(r_runs);
      const ReportFiles f = emit_report(records, r_out.empty() ? fs::path(r_runs) : out_path(r_out));
      std::cout << records.size() << " records -> " << f.grid_csv.string() << ", " << f.summary_json.string() << '\n';
    } else if (check_cmd->parsed()) {
      const std::uint64_t seed = seed_override(k_seed);
      if (k_suite == "grad") return report_suite(checks::run_grad_suite(100, seed));
      if (k_suite == "divergence") return report_suite(checks::run_divergence_suite(seed));
      if (k_suite == "combiner") return report_suite(checks::run_combiner_suite());
      return report_suite(checks::run_sac_equivalence_suite(seed));
    } else if (pre_cmd->parsed()) {
      const auto env = make_env(p_env);
      pcfg.seed = seed_override(pcfg.seed);
      const PretrainResult res = pretrain_online(*env, pcfg);
      const fs::path out = out_path(p_out);
      ensure_parent(out);
      res.policy.save(out);
      std::cout << "normalized return " << res.normalized << " after " << res.steps << " steps"
                << (res.reached ? "" : " (target band not reached; closest checkpoint kept)") << " -> "
                << out.string() << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "file error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
