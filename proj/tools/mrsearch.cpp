// mrsearch: command-line driver for training, evaluation, comparison,
// gradient checks, exhaustive oracles and log post-processing.
//
// Exit codes: 0 success, 1 a check failed or a runtime error occurred,
// 2 invalid configuration or usage.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrsearch/harness.hpp"

namespace fs = std::filesystem;
using namespace mrsearch;

namespace {

constexpr int kExitFailed = 1;
constexpr int kExitConfig = 2;

fs::path output_dir(const std::string& flag, const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MRSEARCH_OUTPUT_DIR"); env && *env) return env;
  return fallback;
}

TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    try {
      j = read_json_file(path);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError({std::string("<file>: not valid JSON (") + e.what() + ")"});
    }
  }
  apply_overrides(j, overrides);
  return config_from_json(j);
}

std::uint64_t pick_seed(const TrainConfig& cfg, long long flag) {
  return flag >= 0 ? static_cast<std::uint64_t>(flag) : cfg.seeds.front();
}

void print_em(const std::string& label, const std::vector<double>& em) {
  std::cout << label;
  for (double e : em) std::cout << ' ' << format_double(e);
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-RL search agent laboratory"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a policy and write metrics and checkpoints");
  std::string train_config, train_out;
  std::vector<std::string> train_sets;
  long long train_seed = -1;
  bool log_traj = false;
  train_cmd->add_option("config", train_config, "JSON config file")->required();
  train_cmd->add_option("--set", train_sets, "Override a config field: key=value");
  train_cmd->add_option("--seed", train_seed, "Seed (default: first entry of 'seeds')");
  train_cmd->add_option("--out", train_out, "Output directory");
  train_cmd->add_flag("--log-trajectories", log_traj, "Also write trajectories.jsonl");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Greedy evaluation with per-turn EM");
  std::string eval_ckpt, eval_config, eval_out, eval_mode, eval_decoding = "greedy", eval_protocol = "sequential";
  std::vector<std::string> eval_sets;
  long long eval_seed = -1;
  int eval_turns = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint JSON")->required();
  eval_cmd->add_option("--config", eval_config, "JSON config file")->required();
  eval_cmd->add_option("--set", eval_sets, "Override a config field: key=value");
  eval_cmd->add_option("--n-eval", eval_turns, "Number of turns to evaluate (default: N_eval)");
  eval_cmd->add_option("--seed", eval_seed, "Seed for the evaluation task stream");
  eval_cmd->add_option("--mode", eval_mode, "Context mode: full, short or fresh (default: config)");
  eval_cmd->add_option("--decoding", eval_decoding, "greedy or sample")->check(CLI::IsMember({"greedy", "sample"}));
  eval_cmd->add_option("--protocol", eval_protocol, "sequential or parallel (majority vote)")
      ->check(CLI::IsMember({"sequential", "parallel"}));
  eval_cmd->add_option("--out", eval_out, "Output directory");

  // compare
  auto* cmp_cmd = app.add_subcommand("compare", "Train meta and independent arms and compare per-turn EM");
  std::string cmp_config, cmp_out, cmp_baseline = "fresh";
  std::vector<std::string> cmp_sets;
  cmp_cmd->add_option("config", cmp_config, "JSON config file")->required();
  cmp_cmd->add_option("--set", cmp_sets, "Override a config field: key=value");
  cmp_cmd->add_option("--baseline", cmp_baseline, "Independent-arm evaluation: fresh, carry or parallel")
      ->check(CLI::IsMember({"fresh", "carry", "parallel"}));
  cmp_cmd->add_option("--out", cmp_out, "Output directory");

  // grad-check
  auto* gc_cmd = app.add_subcommand("grad-check", "Analytic surrogate gradient vs central differences");
  std::string gc_config;
  std::vector<std::string> gc_sets;
  std::vector<double> gc_steps;
  int gc_instances = 20;
  long long gc_seed = 1;
  double gc_tol = 1e-6;
  gc_cmd->set_help_flag("--help", "Print this help message and exit");
  gc_cmd->add_option("--config", gc_config, "JSON config file (default: built-in defaults)");
  gc_cmd->add_option("--set", gc_sets, "Override a config field: key=value");
  gc_cmd->add_option("--h", gc_steps, "Finite-difference step; repeatable (default 1e-6)");
  gc_cmd->add_option("--instances", gc_instances, "Random instances")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--seed", gc_seed, "Seed");
  gc_cmd->add_option("--tolerance", gc_tol, "Maximum relative error");

  // oracle
  auto* or_cmd = app.add_subcommand("oracle", "Exhaustive enumeration vs Monte Carlo on a micro environment");
  MicroConfig micro;
  std::string or_ckpt;
  or_cmd->add_option("--entities", micro.entities, "Entities (2 or 3)");
  or_cmd->add_option("--relations", micro.relations, "Relations (1 to 3)");
  or_cmd->add_option("--k", micro.hops, "Hops (must be 1)");
  or_cmd->add_option("--T", micro.tool_budget, "Tool budget (must be 1)");
  or_cmd->add_option("--N", micro.episodes, "Episodes per meta-episode (1 or 2)");
  or_cmd->add_option("--rho", micro.noise, "Tool noise");
  or_cmd->add_option("--gamma", micro.gamma, "Discount");
  or_cmd->add_option("--samples", micro.samples, "Monte-Carlo meta-episodes");
  or_cmd->add_option("--seed", micro.seed, "Seed");
  or_cmd->add_option("--param-scale", micro.param_scale, "Std-dev of random policy weights");
  or_cmd->add_option("--checkpoint", or_ckpt, "Use these weights instead of random ones");

  // advantages
  auto* adv_cmd = app.add_subcommand("advantages", "Turn- or step-level advantages for a JSONL trajectory log");
  std::string adv_in = "-", adv_out = "-";
  AdvantageOptions adv_opt;
  std::vector<int> adv_mask;
  adv_cmd->add_option("--input", adv_in, "JSONL log ('-' for stdin)");
  adv_cmd->add_option("--output", adv_out, "CSV output ('-' for stdout)");
  adv_cmd->add_option("--gamma", adv_opt.gamma, "Discount")->check(CLI::Range(0.0, 1.0));
  adv_cmd->add_option("--mask", adv_mask, "Per-episode mask, e.g. --mask 0,0,1,1")->delimiter(',');
  adv_cmd->add_flag("--step", adv_opt.step_level, "Step-level micro-episodes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) {
      const TrainConfig cfg = load_config(train_config, train_sets);
      const auto seed = pick_seed(cfg, train_seed);
      const fs::path dir = output_dir(train_out, "runs/train_seed" + std::to_string(seed));
      const auto result = run_train(cfg, seed, dir, Arm::Meta, log_traj);
      print_em("final mean reward per turn:", result.history.back().mean_reward);
      std::cout << "wrote " << (dir / "metrics.csv").string() << " and " << (dir / "checkpoint_final.json").string()
                << '\n';
      return 0;
    }

    if (*eval_cmd) {
      const TrainConfig cfg = load_config(eval_config, eval_sets);
      const PolicyParams params = params_from_json(read_json_file(eval_ckpt));
      if (params.hops != cfg.hops || params.feature_dim() != feature_dim(cfg.hops)) {
        std::cerr << "error: checkpoint has k=" << params.hops << " (feature_dim " << params.feature_dim()
                  << ") but config has k=" << cfg.hops << '\n';
        return kExitConfig;
      }
      EvalOptions opt;
      opt.num_turns = eval_turns > 0 ? eval_turns : cfg.eval_episodes;
      opt.mode = eval_mode.empty() ? cfg.context_mode : context_mode_from_string(eval_mode);
      opt.decoding = eval_decoding == "sample" ? Decoding::Sample : Decoding::Greedy;
      opt.protocol = eval_protocol == "parallel" ? EvalProtocol::ParallelMajority : EvalProtocol::Sequential;
      const auto rep = evaluate(params, cfg, pick_seed(cfg, eval_seed), opt);
      const fs::path dir = output_dir(eval_out, "runs/eval");
      fs::create_directories(dir);
      std::ofstream csv(dir / "eval.csv", std::ios::binary);
      csv << eval_header() << '\n';
      write_eval_rows(csv, rep);
      print_em("EM per turn:", rep.em);
      std::cout << "mean tool calls: " << format_double(rep.mean_tool_calls) << '\n';
      return 0;
    }

    if (*cmp_cmd) {
      const TrainConfig cfg = load_config(cmp_config, cmp_sets);
      const auto baseline = baseline_eval_from_string(cmp_baseline);
      const fs::path dir = output_dir(cmp_out, "runs/compare");
      fs::create_directories(dir);
      std::ofstream csv(dir / "comparison.csv", std::ios::binary);
      csv << compare_header() << '\n';
      for (auto seed : cfg.seeds) {
        const auto r = compare_seed(cfg, seed, baseline);
        write_compare_rows(csv, r);
        std::cout << "seed " << seed << '\n';
        print_em("  meta        EM:", r.meta.em);
        print_em("  independent EM:", r.independent.em);
      }
      std::cout << "wrote " << (dir / "comparison.csv").string() << '\n';
      return 0;
    }

    if (*gc_cmd) {
      TrainConfig cfg;
      if (!gc_config.empty() || !gc_sets.empty()) {
        nlohmann::json j = gc_config.empty() ? to_json(TrainConfig{}) : read_json_file(gc_config);
        apply_overrides(j, gc_sets);
        cfg = config_from_json(j);
      }
      if (gc_steps.empty()) gc_steps = {1e-6};
      const auto rep = grad_check(cfg, static_cast<std::uint64_t>(gc_seed), gc_steps, gc_instances, &grad_logprob, gc_tol);
      for (const auto& r : rep.results) {
        std::cout << "h=" << format_double(r.step) << " max_relative_error=" << format_double(r.max_relative_error)
                  << '\n';
      }
      std::cout << (rep.passed() ? "PASS" : "FAIL") << " (tolerance " << format_double(gc_tol) << ")\n";
      return rep.passed() ? 0 : kExitFailed;
    }

    if (*or_cmd) {
      if (auto problems = validate(micro); !problems.empty()) throw ConfigError(problems);
      const PolicyParams params =
          or_ckpt.empty() ? random_params(1, micro.param_scale, micro.seed) : params_from_json(read_json_file(or_ckpt));
      const auto rep = run_oracle(micro, params);
      std::cout << "enumerated trajectories: " << rep.trajectories << '\n'
                << "exact objective: " << format_double(rep.exact_objective) << '\n'
                << "mc objective:    " << format_double(rep.mc_objective) << " (se "
                << format_double(rep.mc_objective_se) << ")\n";
      for (Eigen::Index r = 0; r < rep.exact_gradient.rows(); ++r)
        for (Eigen::Index c = 0; c < rep.exact_gradient.cols(); ++c)
          std::cout << "grad[" << r << "][" << c << "] exact=" << format_double(rep.exact_gradient(r, c))
                    << " mc=" << format_double(rep.mc_gradient(r, c))
                    << " se=" << format_double(rep.mc_gradient_se(r, c)) << '\n';
      std::cout << "objective " << (rep.objective_ok() ? "PASS" : "FAIL") << ", gradient "
                << (rep.gradient_ok() ? "PASS" : "FAIL") << '\n';
      return rep.passed() ? 0 : kExitFailed;
    }

    if (*adv_cmd) {
      adv_opt.mask = adv_mask;
      std::ifstream fin;
      std::istream* in = &std::cin;
      if (adv_in != "-") {
        fin.open(adv_in, std::ios::binary);
        if (!fin) throw std::runtime_error("cannot read " + adv_in);
        in = &fin;
      }
      std::ofstream fout;
      std::ostream* out = &std::cout;
      if (adv_out != "-") {
        fout.open(adv_out, std::ios::binary);
        if (!fout) throw std::runtime_error("cannot write " + adv_out);
        out = &fout;
      }
      compute_log_advantages(*in, *out, adv_opt);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailed;
  }
  return 0;
}
