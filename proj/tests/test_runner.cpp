#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "shiftlab/shiftlab.hpp"

using namespace shiftlab;
namespace fs = std::filesystem;

namespace {

// Scratch directory, wiped on construction and destruction.
struct TempDir {
  fs::path path;

  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("shiftlab_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str(const std::string& sub = "") const {
    return sub.empty() ? path.string() : (path / sub).string();
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small synthetic experiment that keeps runner tests fast.
ExperimentConfig small_config(const std::string& out_dir, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.out_dir = out_dir;
  cfg.hidden = {16, 8};
  cfg.task.synthetic.samples_per_class = 40;
  cfg.pretrain.models = 3;
  cfg.pretrain.epochs = 2;
  cfg.transfer = TrainConfig::defaults_for(Strategy::Combined);
  cfg.transfer.shift_epochs = 2;
  cfg.transfer.finetune_epochs_per_model = 2;
  cfg.transfer.seed = seed;
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string("\"") + SHIFTLAB_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("default config validates and mirrors the root seed", "[config]") {
  const ExperimentConfig cfg = default_config();
  REQUIRE(cfg.seed == 42);
  REQUIRE(cfg.out_dir == "out");
  REQUIRE(cfg.hidden == std::vector<std::size_t>{32, 16});
  REQUIRE(cfg.pretrain.models == 5);
  REQUIRE(cfg.pretrain.epochs == 15);
  REQUIRE(cfg.transfer.strategy == Strategy::Combined);
  REQUIRE(cfg.transfer.shift_epochs == 10);
  REQUIRE(cfg.transfer.finetune_epochs_per_model == 8);
  REQUIRE(cfg.transfer.seed == cfg.seed);
  REQUIRE(cfg.metrics.rejection_threshold == 0.065);
}

TEST_CASE("unknown config keys are rejected by name", "[config]") {
  using Catch::Matchers::ContainsSubstring;
  nlohmann::json top;
  top["sede"] = 1;
  REQUIRE_THROWS_WITH(config_from_json(top), ContainsSubstring("sede"));

  nlohmann::json nested;
  nested["transfer"]["epochs"] = 3;
  REQUIRE_THROWS_WITH(config_from_json(nested),
                      ContainsSubstring("'epochs' in transfer"));

  nlohmann::json task;
  task["task"]["sigma"] = 0.5;
  REQUIRE_THROWS_WITH(config_from_json(task), ContainsSubstring("sigma"));

  nlohmann::json net;
  net["net"]["depth"] = 2;
  REQUIRE_THROWS_WITH(config_from_json(net), ContainsSubstring("depth"));
}

TEST_CASE("config file errors surface as ConfigError", "[config]") {
  TempDir tmp("config_errors");
  REQUIRE_THROWS_AS(load_config(tmp.str("missing.json")), ConfigError);

  const std::string bad = tmp.str("bad.json");
  std::ofstream(bad) << "{ not json";
  REQUIRE_THROWS_AS(load_config(bad), ConfigError);

  const std::string wrong = tmp.str("wrong.json");
  std::ofstream(wrong) << R"({"transfer": {"strategy": "sgd"}})";
  REQUIRE_THROWS_AS(load_config(wrong), ConfigError);
}

TEST_CASE("command-line overrides beat the config file", "[config]") {
  nlohmann::json j;
  j["seed"] = 7;
  j["out_dir"] = "from_file";
  j["transfer"]["strategy"] = "finetune";

  CliOverrides cli;
  cli.seed = 9;
  cli.out_dir = "from_cli";
  cli.strategy = Strategy::Combined;

  const ExperimentConfig cfg = config_from_json(j, cli);
  REQUIRE(cfg.seed == 9);
  REQUIRE(cfg.out_dir == "from_cli");
  REQUIRE(cfg.transfer.strategy == Strategy::Combined);
  REQUIRE(cfg.transfer.finetune_epochs_per_model == 8);  // combined default
  REQUIRE(cfg.transfer.seed == 9);
}

TEST_CASE("strategy choice picks its own epoch defaults", "[config]") {
  nlohmann::json shift_sum;
  shift_sum["transfer"]["strategy"] = "shift_sum";
  REQUIRE(config_from_json(shift_sum).transfer.finetune_epochs_per_model == 18);

  nlohmann::json combined;
  combined["transfer"]["strategy"] = "combined";
  REQUIRE(config_from_json(combined).transfer.finetune_epochs_per_model == 8);

  nlohmann::json explicit_epochs;
  explicit_epochs["transfer"]["strategy"] = "shift_sum";
  explicit_epochs["transfer"]["finetune_epochs_per_model"] = 4;
  REQUIRE(config_from_json(explicit_epochs).transfer.finetune_epochs_per_model == 4);
}

TEST_CASE("config serialization round trips", "[config]") {
  nlohmann::json j;
  j["seed"] = 11;
  j["net"]["hidden"] = {12, 6};
  j["task"]["samples_per_class"] = 50;
  j["task"]["rotation"] = 0.7;
  j["transfer"]["strategy"] = "shift_random";
  j["transfer"]["total_epochs"] = 30;
  j["metrics"]["uncertainty_aggregation"] = "max";

  const ExperimentConfig cfg = config_from_json(j);
  const nlohmann::json echo = config_to_json(cfg);
  const ExperimentConfig cfg2 = config_from_json(echo);
  REQUIRE(config_to_json(cfg2).dump() == echo.dump());
  REQUIRE(cfg2.transfer.strategy == Strategy::ShiftRandom);
  REQUIRE(cfg2.transfer.total_epochs == 30);
  REQUIRE(cfg2.metrics.uncertainty_aggregation == ScoreAggregation::Max);
}

TEST_CASE("model checkpoints round trip bitwise", "[checkpoint]") {
  TempDir tmp("ckpt_model");
  const NetSpec spec{{4, 6, 3}};
  const Model model = make_model(spec, init_params(spec, 17));
  const std::string path = tmp.str("model.json");
  save_checkpoint(model, path);

  const Model loaded = load_model_checkpoint(path);
  REQUIRE(loaded.spec == spec);
  REQUIRE(loaded.full() == model.full());
}

TEST_CASE("ensemble checkpoints round trip bitwise", "[checkpoint]") {
  TempDir tmp("ckpt_ens");
  const NetSpec spec{{3, 5, 2}};
  ShiftedEnsemble ens;
  ens.spec = spec;
  for (std::uint64_t i = 0; i < 2; ++i) {
    auto [enc, head] = split(init_params(spec, 20 + i), spec);
    ens.base_encoders.push_back(std::move(enc));
    ens.heads.push_back(std::move(head));
  }
  ens.shift = ParamVector::zeros(spec.encoder_param_count());
  ens.shift[0] = 0.25;

  const std::string path = tmp.str("ens.json");
  save_checkpoint(ens, path);
  const Checkpoint loaded = load_checkpoint(path);
  const ShiftedEnsemble& back = std::get<ShiftedEnsemble>(loaded);
  REQUIRE(back.spec == spec);
  REQUIRE(back.shift == ens.shift);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(back.base_encoders[i] == ens.base_encoders[i]);
    REQUIRE(back.heads[i] == ens.heads[i]);
  }
}

TEST_CASE("checkpoint loader rejects damaged files", "[checkpoint]") {
  TempDir tmp("ckpt_bad");
  const NetSpec spec{{3, 4, 2}};
  const Model model = make_model(spec, init_params(spec, 1));
  const std::string good = tmp.str("good.json");
  save_checkpoint(model, good);

  const std::string truncated = tmp.str("truncated.json");
  const std::string full_text = read_file(good);
  std::ofstream(truncated) << full_text.substr(0, full_text.size() / 2);
  REQUIRE_THROWS_AS(load_checkpoint(truncated), ParseError);

  const std::string future = tmp.str("future.json");
  nlohmann::json j;
  j["format_version"] = 99;
  j["kind"] = "model";
  std::ofstream(future) << j.dump();
  REQUIRE_THROWS_AS(load_checkpoint(future), ParseError);

  const NetSpec other{{3, 5, 2}};
  REQUIRE_THROWS_AS(load_model_checkpoint(good, &other), ParseError);
  REQUIRE_THROWS_AS(load_checkpoint(tmp.str("absent.json")), IoError);
}

TEST_CASE("a model loader refuses an ensemble checkpoint", "[checkpoint]") {
  TempDir tmp("ckpt_kind");
  const NetSpec spec{{3, 4, 2}};
  ShiftedEnsemble ens;
  ens.spec = spec;
  for (std::uint64_t i = 0; i < 2; ++i) {
    auto [enc, head] = split(init_params(spec, 30 + i), spec);
    ens.base_encoders.push_back(std::move(enc));
    ens.heads.push_back(std::move(head));
  }
  ens.shift = ParamVector::zeros(spec.encoder_param_count());
  const std::string path = tmp.str("ens.json");
  save_checkpoint(ens, path);
  REQUIRE_THROWS_AS(load_model_checkpoint(path), ParseError);
}

TEST_CASE("pretrain writes distinct reproducible checkpoints", "[runner]") {
  TempDir tmp("pretrain");
  const ExperimentConfig cfg = small_config(tmp.str(), 5);

  const PretrainResult first = pretrain(cfg);
  REQUIRE(first.models.size() == 3);
  REQUIRE(first.checkpoint_paths.size() == 3);
  REQUIRE(first.models[0].full() != first.models[1].full());
  REQUIRE(first.log.units() == 3 * cfg.pretrain.epochs);

  const std::string snapshot = read_file(first.checkpoint_paths[0]);
  const PretrainResult second = pretrain(cfg);
  REQUIRE(read_file(second.checkpoint_paths[0]) == snapshot);
}

TEST_CASE("pretrain with zero epochs returns the seeded initializations", "[runner]") {
  TempDir tmp("pretrain0");
  ExperimentConfig cfg = small_config(tmp.str(), 6);
  cfg.pretrain.epochs = 0;

  const PretrainResult result = pretrain(cfg);
  const NetSpec spec{{8, 16, 8, 6}};
  for (std::size_t i = 0; i < result.models.size(); ++i) {
    const ParamVector expected =
        init_params(spec, rng::derive(cfg.seed, rng::Purpose::WeightInit, i));
    REQUIRE(result.models[i].full() == expected);
  }
}

TEST_CASE("identical runs produce identical artifacts", "[runner]") {
  TempDir tmp("determinism");
  ExperimentConfig pre_cfg = small_config(tmp.str("pre"), 7);
  const PretrainResult pre = pretrain(pre_cfg);

  auto run_into = [&](const std::string& sub) {
    ExperimentConfig cfg = small_config(tmp.str(sub), 7);
    run_experiment(cfg, pre.checkpoint_paths);
    nlohmann::json j;
    std::ifstream(tmp.str(sub) + "/report.json") >> j;
    j["wall_clock_seconds"] = 0.0;
    j["config"]["out_dir"] = "";
    return j.dump();
  };
  REQUIRE(run_into("a") == run_into("b"));
  REQUIRE(read_file(tmp.str("a") + "/final/model_0.json") ==
          read_file(tmp.str("b") + "/final/model_0.json"));
}

TEST_CASE("evaluate equals a zero-epoch fine-tuning run", "[runner]") {
  TempDir tmp("eval_ft0");
  ExperimentConfig cfg = small_config(tmp.str("pre"), 8);
  const PretrainResult pre = pretrain(cfg);

  ExperimentConfig ft0 = small_config(tmp.str("ft0"), 8);
  ft0.transfer = TrainConfig::defaults_for(Strategy::Finetune);
  ft0.transfer.finetune_epochs_per_model = 0;
  ft0.transfer.seed = ft0.seed;
  const ExperimentReport trained = run_experiment(ft0, pre.checkpoint_paths);

  ExperimentConfig ev = small_config(tmp.str("eval"), 8);
  const ExperimentReport scored = evaluate(ev, pre.checkpoint_paths);

  REQUIRE(scored.per_model_accuracy == trained.per_model_accuracy);
  REQUIRE(scored.ensemble_accuracy == trained.ensemble_accuracy);
  REQUIRE(scored.mean_disagreement == trained.mean_disagreement);
  REQUIRE(scored.budget_model_epochs == 0);
}

TEST_CASE("evaluate accepts ensemble and model checkpoints alike", "[runner]") {
  TempDir tmp("eval_paths");
  ExperimentConfig cfg = small_config(tmp.str("out"), 9);
  const NetSpec tgt{{8, 16, 8, 3}};

  ShiftedEnsemble ens;
  ens.spec = tgt;
  for (std::uint64_t i = 0; i < 3; ++i) {
    auto [enc, head] = split(init_params(tgt, 40 + i), tgt);
    ens.base_encoders.push_back(std::move(enc));
    ens.heads.push_back(std::move(head));
  }
  ens.shift = init_shift(ShiftInit::Mean, ens.base_encoders, 0);
  const std::string ens_path = tmp.str("ens.json");
  save_checkpoint(ens, ens_path);

  const ExperimentReport via_ensemble = evaluate(cfg, {ens_path});

  const std::vector<Model> members = materialize(ens);
  std::vector<std::string> model_paths;
  for (std::size_t i = 0; i < members.size(); ++i) {
    model_paths.push_back(tmp.str("m" + std::to_string(i) + ".json"));
    save_checkpoint(members[i], model_paths.back());
  }
  ExperimentConfig cfg2 = small_config(tmp.str("out2"), 9);
  const ExperimentReport via_models = evaluate(cfg2, model_paths);

  REQUIRE(via_ensemble.per_model_accuracy == via_models.per_model_accuracy);
  REQUIRE(via_ensemble.ensemble_accuracy == via_models.ensemble_accuracy);
}

TEST_CASE("evaluate rejects unusable checkpoint sets", "[runner]") {
  TempDir tmp("eval_bad");
  ExperimentConfig cfg = small_config(tmp.str("out"), 10);

  const NetSpec tgt{{8, 16, 8, 3}};
  const std::string single = tmp.str("single.json");
  save_checkpoint(make_model(tgt, init_params(tgt, 50)), single);
  REQUIRE_THROWS_AS(evaluate(cfg, {single}), InputError);

  const NetSpec alien{{8, 4, 3}};
  ShiftedEnsemble ens;
  ens.spec = alien;
  for (std::uint64_t i = 0; i < 2; ++i) {
    auto [enc, head] = split(init_params(alien, 60 + i), alien);
    ens.base_encoders.push_back(std::move(enc));
    ens.heads.push_back(std::move(head));
  }
  ens.shift = ParamVector::zeros(alien.encoder_param_count());
  const std::string alien_path = tmp.str("alien.json");
  save_checkpoint(ens, alien_path);
  REQUIRE_THROWS_AS(evaluate(cfg, {alien_path}), ParseError);

  const std::string stranger = tmp.str("stranger.json");
  save_checkpoint(make_model(alien, init_params(alien, 70)), stranger);
  REQUIRE_THROWS_AS(evaluate(cfg, {single, stranger}), ParseError);
}

TEST_CASE("compare runs all four strategies at one budget", "[runner][slow]") {
  TempDir tmp("compare");
  const ExperimentConfig cfg = small_config(tmp.str(), 12);
  const std::vector<ExperimentReport> reports = compare(cfg);

  REQUIRE(reports.size() == 4);
  REQUIRE(reports[0].strategy == "combined");
  REQUIRE(reports[1].strategy == "finetune");
  REQUIRE(reports[2].strategy == "shift_random");
  REQUIRE(reports[3].strategy == "shift_sum");
  for (const ExperimentReport& r : reports) {
    REQUIRE(r.budget_model_epochs == 12);
    REQUIRE(r.per_model_accuracy.size() == 3);
  }
  REQUIRE(reports[0].rel_l2_trajectory.size() == 2);
  REQUIRE(reports[1].rel_l2_trajectory.empty());

  const std::string csv = read_file(tmp.str("summary.csv"));
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  REQUIRE(lines == 5);
  REQUIRE(csv.rfind("strategy,model_0_accuracy", 0) == 0);
  for (const char* name : {"combined", "finetune", "shift_random", "shift_sum"})
    REQUIRE(csv.find(std::string("\n") + name + ",") != std::string::npos);
  for (const char* sub : {"combined", "finetune", "shift_random", "shift_sum"})
    REQUIRE(fs::exists(tmp.path / sub / "report.json"));
}

TEST_CASE("budget matching solves for each strategy's schedule", "[runner]") {
  const TrainConfig base = TrainConfig::defaults_for(Strategy::Combined);
  const auto configs = budget_matched_configs(base, 5);
  REQUIRE(configs.size() == 4);
  REQUIRE(configs[0].first == "combined");
  REQUIRE(configs[0].second.shift_epochs == 10);
  REQUIRE(configs[0].second.finetune_epochs_per_model == 8);
  REQUIRE(configs[1].first == "finetune");
  REQUIRE(configs[1].second.finetune_epochs_per_model == 18);
  REQUIRE(configs[2].first == "shift_random");
  REQUIRE(configs[2].second.total_epochs == 90);
  REQUIRE(configs[3].first == "shift_sum");
  REQUIRE(configs[3].second.total_epochs == 18);
  for (const auto& [name, cfg] : configs)
    REQUIRE(compute_budget(cfg, 5) == 90);

  TrainConfig ragged = TrainConfig::defaults_for(Strategy::ShiftRandom);
  ragged.total_epochs = 91;
  REQUIRE_THROWS_AS(budget_matched_configs(ragged, 5), ConfigError);

  TrainConfig cramped = TrainConfig::defaults_for(Strategy::Combined);
  cramped.finetune_epochs_per_model = 0;
  REQUIRE_THROWS_AS(budget_matched_configs(cramped, 5), ConfigError);
}

TEST_CASE("reports round trip through JSON", "[report]") {
  TempDir tmp("report");
  ExperimentReport r;
  r.strategy = "finetune";
  r.seed = 9;
  r.config_echo = config_to_json(default_config());
  r.per_model_accuracy = {0.5, 0.75};
  r.ensemble_accuracy = 0.625;
  r.disagreement = Matrix(2, 2, 0.0);
  r.disagreement(0, 1) = 0.3;
  r.disagreement(1, 0) = 0.3;
  r.mean_disagreement = 0.3;
  r.rejection.threshold = 0.065;
  r.rejection.num_classes = 3;
  r.rejection.retained = 10;
  r.rejection.accuracy_before = 0.6;
  r.rejection.accuracy_after = 0.7;
  r.rejection.delta = 0.1;
  r.rel_l2_trajectory = {0.1, 0.2};
  r.budget_model_epochs = 90;
  r.wall_clock_seconds = 1.5;

  const std::string path = tmp.str("report.json");
  write_report(r, path);
  const ExperimentReport back = read_report(path);
  REQUIRE(back.strategy == r.strategy);
  REQUIRE(back.seed == r.seed);
  REQUIRE(back.per_model_accuracy == r.per_model_accuracy);
  REQUIRE(back.ensemble_accuracy == r.ensemble_accuracy);
  REQUIRE(back.disagreement == r.disagreement);
  REQUIRE(back.mean_disagreement == r.mean_disagreement);
  REQUIRE(back.rejection.retained == 10);
  REQUIRE(back.rejection.accuracy_after == r.rejection.accuracy_after);
  REQUIRE(back.rejection.delta == r.rejection.delta);
  REQUIRE(back.rel_l2_trajectory == r.rel_l2_trajectory);
  REQUIRE(back.budget_model_epochs == 90);
  REQUIRE(back.wall_clock_seconds == 1.5);
  REQUIRE(back.config_echo.dump() == r.config_echo.dump());

  ExperimentReport empty = r;
  empty.rejection.empty_retention = true;
  empty.rejection.accuracy_after.reset();
  empty.rejection.delta.reset();
  write_report(empty, path);
  const ExperimentReport back2 = read_report(path);
  REQUIRE(back2.rejection.empty_retention);
  REQUIRE(!back2.rejection.accuracy_after);
  REQUIRE(!back2.rejection.delta);
}

TEST_CASE("summary table pins its header", "[report]") {
  ExperimentReport r;
  r.strategy = "finetune";
  r.per_model_accuracy = {0.5, 0.5};
  const std::string csv = summary_csv({r});
  const std::string header = csv.substr(0, csv.find('\n'));
  REQUIRE(header ==
          "strategy,model_0_accuracy,model_1_accuracy,ensemble_accuracy,"
          "mean_disagreement,accuracy_before_rejection,accuracy_after_rejection,"
          "rejection_delta,budget_model_epochs");
}

TEST_CASE("cli exit codes distinguish usage from runtime failures", "[cli]") {
  TempDir tmp("cli");
  REQUIRE(run_cli("gradcheck --count 3 --seed 42") == 0);

  const std::string bad = tmp.str("bad.json");
  std::ofstream(bad) << "{ nope";
  REQUIRE(run_cli("pretrain --config " + bad) == 1);

  REQUIRE(run_cli("transfer --out " + tmp.str("out") + " " + tmp.str("no_a.json") +
                  " " + tmp.str("no_b.json")) == 2);
}
