#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include <shiftlab/shiftlab.hpp>

namespace {

constexpr double kGradCheckTolerance = 1e-5;

std::vector<std::string> find_model_checkpoints(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw shiftlab::InputError("checkpoint directory not found: " + dir);
  std::vector<std::pair<unsigned long long, std::string>> found;
  for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    constexpr std::string_view prefix = "model_", suffix = ".json";
    if (name.size() <= prefix.size() + suffix.size()) continue;
    if (!name.starts_with(prefix) || !name.ends_with(suffix)) continue;
    const char* first = name.data() + prefix.size();
    const char* last = name.data() + name.size() - suffix.size();
    unsigned long long index = 0;
    auto [ptr, ec] = std::from_chars(first, last, index);
    if (ec != std::errc() || ptr != last) continue;
    found.emplace_back(index, entry.path().string());
  }
  if (found.empty())
    throw shiftlab::InputError("no model_<i>.json checkpoints in " + dir);
  std::sort(found.begin(), found.end());
  std::vector<std::string> paths;
  paths.reserve(found.size());
  for (auto& [index, path] : found) paths.push_back(std::move(path));
  return paths;
}

void print_report_line(const shiftlab::ExperimentReport& r) {
  std::printf("%-12s ensemble_acc=%.4f mean_disagreement=%.4f budget=%zu\n",
              r.strategy.c_str(), r.ensemble_accuracy, r.mean_disagreement,
              r.budget_model_epochs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep ensemble transfer via a shared encoder shift vector"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  auto* config_opt = app.add_option("--config", config_path, "experiment config file (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "root random seed");
  auto* out_opt = app.add_option("--out", out_dir, "output directory");

  auto* pre_cmd = app.add_subcommand(
      "pretrain", "Train independent source-task models and write checkpoints");
  auto* transfer_cmd = app.add_subcommand(
      "transfer", "Run one transfer strategy starting from source checkpoints");
  std::string strategy_name;
  auto* strategy_opt = transfer_cmd->add_option(
      "--strategy", strategy_name, "finetune|shift_random|shift_sum|combined");
  std::vector<std::string> transfer_ckpts;
  transfer_cmd->add_option("checkpoints", transfer_ckpts,
                           "checkpoint files (default: <out>/checkpoints/model_<i>.json)");
  auto* eval_cmd = app.add_subcommand(
      "evaluate", "Score checkpoints on the target task without training");
  std::vector<std::string> eval_ckpts;
  eval_cmd->add_option("checkpoints", eval_ckpts,
                       "model checkpoints or one ensemble checkpoint")
      ->required();
  auto* compare_cmd = app.add_subcommand(
      "compare", "Pretrain once, then run all four strategies at a matched budget");
  auto* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "Compare analytic gradients against finite differences");
  std::size_t gradcheck_count = 100;
  gradcheck_cmd->add_option("--count", gradcheck_count, "number of random instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    shiftlab::CliOverrides cli;
    if (seed_opt->count() > 0) cli.seed = seed;
    if (out_opt->count() > 0) cli.out_dir = out_dir;
    if (strategy_opt->count() > 0) {
      try {
        cli.strategy = shiftlab::strategy_from_string(strategy_name);
      } catch (const shiftlab::InputError& e) {
        throw shiftlab::ConfigError(e.what());
      }
    }
    const shiftlab::ExperimentConfig cfg =
        config_opt->count() > 0 ? shiftlab::load_config(config_path, cli)
                                : shiftlab::default_config(cli);

    if (pre_cmd->parsed()) {
      const shiftlab::PretrainResult result = shiftlab::pretrain(cfg);
      std::printf("wrote %zu checkpoints:\n", result.checkpoint_paths.size());
      for (const std::string& path : result.checkpoint_paths)
        std::printf("  %s\n", path.c_str());
    } else if (transfer_cmd->parsed()) {
      const std::vector<std::string> paths =
          transfer_ckpts.empty()
              ? find_model_checkpoints(
                    (std::filesystem::path(cfg.out_dir) / "checkpoints").string())
              : transfer_ckpts;
      const shiftlab::ExperimentReport report = shiftlab::run_experiment(cfg, paths);
      print_report_line(report);
      std::printf("report: %s\n",
                  (std::filesystem::path(cfg.out_dir) / "report.json").string().c_str());
    } else if (eval_cmd->parsed()) {
      const shiftlab::ExperimentReport report = shiftlab::evaluate(cfg, eval_ckpts);
      print_report_line(report);
    } else if (compare_cmd->parsed()) {
      const std::vector<shiftlab::ExperimentReport> reports = shiftlab::compare(cfg);
      for (const shiftlab::ExperimentReport& r : reports) print_report_line(r);
      std::printf("summary: %s\n",
                  (std::filesystem::path(cfg.out_dir) / "summary.csv").string().c_str());
    } else if (gradcheck_cmd->parsed()) {
      const double worst = shiftlab::gradcheck_max_error(cfg.seed, gradcheck_count);
      std::printf("max relative gradient error over %zu instances: %.3e\n",
                  gradcheck_count, worst);
      if (!(worst < kGradCheckTolerance)) {
        std::fprintf(stderr, "gradient check failed (tolerance %.1e)\n",
                     kGradCheckTolerance);
        return 2;
      }
    }
    return 0;
  } catch (const shiftlab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
