// End-to-end acceptance checks, one printed line per criterion. Exit code 0
// only if every criterion passes. Runs its own pretrain + four-strategy
// protocol over five seeds in a scratch directory.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include <shiftlab/shiftlab.hpp>

using namespace shiftlab;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};
constexpr std::size_t kStrategies = 4;  // combined, finetune, shift_random, shift_sum
constexpr std::size_t kCombined = 0, kFinetune = 1, kShiftRandom = 2, kShiftSum = 3;

bool g_all_pass = true;

void criterion(int number, bool pass, const std::string& what) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", number, what.c_str());
  if (!pass) g_all_pass = false;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median5(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

bool bitwise_equal(const ParamVector& a, const ParamVector& b) {
  return a.size() == b.size() &&
         (a.size() == 0 || std::memcmp(a.values.data(), b.values.data(),
                                       a.size() * sizeof(double)) == 0);
}

std::string fmt(const char* format, ...) {
  char buf[256];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

// Report text with the wall clock zeroed, for byte comparisons.
std::string normalized_report(const std::string& path) {
  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  j["wall_clock_seconds"] = 0.0;
  return j.dump();
}

Dataset random_dataset(std::uint64_t seed, std::size_t n, std::size_t dim,
                       std::size_t classes) {
  Dataset ds;
  ds.features = Matrix(n, dim);
  rng::SplitMix64 stream(seed);
  for (double& x : ds.features.data) x = stream.next_normal();
  ds.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    ds.labels.push_back(static_cast<int>(stream.next_below(classes)));
  ds.num_classes = classes;
  return ds;
}

ShiftedEnsemble random_ensemble(const NetSpec& spec, std::size_t n,
                                std::uint64_t seed) {
  ShiftedEnsemble ens;
  ens.spec = spec;
  for (std::size_t i = 0; i < n; ++i) {
    auto [enc, head] =
        split(init_params(spec, rng::derive(seed, rng::Purpose::WeightInit, i)), spec);
    ens.base_encoders.push_back(std::move(enc));
    ens.heads.push_back(std::move(head));
  }
  ens.shift = ParamVector::zeros(spec.encoder_param_count());
  rng::SplitMix64 stream(seed + 7);
  for (double& x : ens.shift.values) x = 0.1 * stream.next_normal();
  return ens;
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "shiftlab_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  // Shared protocol: per seed, pretrain once and run all four strategies at
  // the matched budget. Reports come back in strategy name order.
  const auto protocol_start = std::chrono::steady_clock::now();
  std::vector<std::vector<ExperimentReport>> reports;  // [seed][strategy]
  for (std::uint64_t seed : kSeeds) {
    ExperimentConfig cfg = default_config();
    cfg.seed = seed;
    cfg.transfer.seed = seed;
    cfg.out_dir = (root / ("seed_" + std::to_string(seed))).string();
    reports.push_back(compare(cfg));
  }
  const double protocol_seconds = seconds_since(protocol_start);

  // 1: analytic gradients against central finite differences.
  {
    const auto t0 = std::chrono::steady_clock::now();
    const double worst = gradcheck_max_error(42, 100);
    const double secs = seconds_since(t0);
    criterion(1, worst < 1e-5 && secs < 30.0,
              fmt("gradient check over 100 instances, max rel err %.3e in %.2f s",
                  worst, secs));
  }

  // 2: frozen bases and one shared shift after shift-strategy training.
  {
    bool bases_frozen = true;
    bool shared_shift = true;
    const fs::path seed_dir = root / "seed_1";
    for (const char* strategy : {"shift_random", "shift_sum"}) {
      const Checkpoint ckpt =
          load_checkpoint((seed_dir / strategy / "final" / "ensemble.json").string());
      const ShiftedEnsemble& ens = std::get<ShiftedEnsemble>(ckpt);
      for (std::size_t i = 0; i < ens.size(); ++i) {
        const Model original = load_model_checkpoint(
            (seed_dir / "checkpoints" / ("model_" + std::to_string(i) + ".json"))
                .string());
        if (!bitwise_equal(ens.base_encoders[i], original.encoder_params))
          bases_frozen = false;
        // The effective encoder of every member must be reproducible from its
        // base plus the one stored shift vector, bit for bit.
        if (!bitwise_equal(effective_encoder(ens, i), add(ens.base_encoders[i], ens.shift)))
          shared_shift = false;
      }
    }
    criterion(2, bases_frozen && shared_shift,
              fmt("bases bitwise unchanged (%s) and every effective encoder equals "
                  "base + the single shared shift (%s)",
                  bases_frozen ? "yes" : "no", shared_shift ? "yes" : "no"));
  }

  // 3: shift gradient equals the ascending-order mean of per-model encoder
  // gradients.
  {
    double worst_rel = 0.0;
    for (std::uint64_t k = 0; k < 20; ++k) {
      rng::SplitMix64 shape(900 + k);
      const std::size_t n = 2 + shape.next_below(2);
      const NetSpec spec{{3, 4 + static_cast<std::size_t>(k % 5), 3}};
      const Dataset data = random_dataset(1000 + k, 16, 3, 3);
      const ShiftedEnsemble ens = random_ensemble(spec, n, 2000 + k);

      const EnsembleBatchGrads grads = ensemble_batch_gradients(
          ens, data.features, data.labels, LossAggregation::Mean);

      std::vector<ParamVector> enc_grads;
      for (std::size_t i = 0; i < n; ++i) {
        const ParamVector full = effective_full(ens, i);
        const ForwardTrace trace = forward(spec, full, data.features);
        const LossAndGrad lg = softmax_cross_entropy(trace.logits(), data.labels);
        enc_grads.push_back(split(backward(spec, full, trace, lg.dlogits), spec).first);
      }
      for (std::size_t j = 0; j < grads.shift_grad.size(); ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += enc_grads[i][j];
        const double mean = sum / static_cast<double>(n);
        const double diff = std::fabs(grads.shift_grad[j] - mean);
        if (diff > 0.0) {
          const double denom = std::max(std::fabs(grads.shift_grad[j]), std::fabs(mean));
          worst_rel = std::max(worst_rel, diff / denom);
        }
      }
    }
    criterion(3, worst_rel < 1e-12,
              fmt("shift gradient vs per-model mean on 20 instances, worst rel err %.3e",
                  worst_rel));
  }

  // 4: metric oracles, exact.
  {
    const double hand = pairwise_disagreement({0, 1, 0, 0}, {0, 1, 1, 1}, {0, 1, 0, 1});
    const bool hand_exact = hand == 2.0 / 3.0;

    bool brute_exact = true;
    for (std::uint64_t k = 0; k < 50 && brute_exact; ++k) {
      rng::SplitMix64 shape(300 + k);
      const std::size_t n = 2 + shape.next_below(5);
      const std::size_t samples = 1 + shape.next_below(50);
      const std::size_t classes = 2 + shape.next_below(3);
      rng::SplitMix64 stream(3000 + k);
      std::vector<Matrix> probs;
      for (std::size_t m = 0; m < n; ++m) {
        Matrix logits(samples, classes);
        for (double& x : logits.data) x = 2.0 * stream.next_normal();
        probs.push_back(softmax(logits));
      }
      std::vector<int> truth;
      for (std::size_t s = 0; s < samples; ++s)
        truth.push_back(static_cast<int>(stream.next_below(classes)));
      const PredictionSet ps =
          PredictionSet::from_probabilities(std::move(probs), std::move(truth));

      double sum = 0.0;
      bool defined = true;
      for (std::size_t i = 0; i < n && defined; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          std::size_t hits_i = 0, hits_j = 0, mismatches = 0;
          for (std::size_t s = 0; s < samples; ++s) {
            if (ps.predicted[i][s] == ps.true_labels[s]) ++hits_i;
            if (ps.predicted[j][s] == ps.true_labels[s]) ++hits_j;
            if (ps.predicted[i][s] != ps.predicted[j][s]) ++mismatches;
          }
          const double a_i = static_cast<double>(hits_i) / static_cast<double>(samples);
          const double a_j = static_cast<double>(hits_j) / static_cast<double>(samples);
          const double denom =
              static_cast<double>(samples) * (0.5 * a_i + 0.5 * a_j);
          if (denom <= 0.0) {
            defined = false;
            break;
          }
          sum += static_cast<double>(mismatches) / denom;
        }
      }
      if (!defined) continue;
      const double expected =
          sum / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
      if (mean_disagreement(ps) != expected) brute_exact = false;
    }

    const ParamVector v(std::vector<double>{3.0, 4.0});
    const std::vector<ParamVector> unit = {ParamVector(std::vector<double>{1.0, 0.0}),
                                           ParamVector(std::vector<double>{0.0, 1.0})};
    const bool l2_exact = relative_l2(v, unit) == 5.0;

    criterion(4, hand_exact && brute_exact && l2_exact,
              fmt("disagreement hand case %s, 50 brute-force cases %s, "
                  "relative L2 case %s",
                  hand_exact ? "exact" : "off", brute_exact ? "exact" : "off",
                  l2_exact ? "exact" : "off"));
  }

  // 5: rejection at threshold 0.065 does not hurt accuracy on most seeds.
  {
    std::size_t improved = 0;
    for (std::size_t s = 0; s < reports.size(); ++s) {
      const RejectionSection& rej = reports[s][kCombined].rejection;
      if (!rej.empty_retention && rej.accuracy_after &&
          *rej.accuracy_after >= rej.accuracy_before)
        ++improved;
    }
    criterion(5, improved >= 4,
              fmt("post-rejection accuracy >= pre-rejection in %zu of 5 seeds",
                  improved));
  }

  // 6: matched-budget directional results, medians over 5 seeds.
  {
    std::vector<double> dis_sum, dis_ft, acc_cmb, acc_ft, acc_sum;
    for (const auto& per_seed : reports) {
      dis_sum.push_back(per_seed[kShiftSum].mean_disagreement);
      dis_ft.push_back(per_seed[kFinetune].mean_disagreement);
      acc_cmb.push_back(per_seed[kCombined].ensemble_accuracy);
      acc_ft.push_back(per_seed[kFinetune].ensemble_accuracy);
      acc_sum.push_back(per_seed[kShiftSum].ensemble_accuracy);
    }
    const double md_dis_sum = median5(dis_sum), md_dis_ft = median5(dis_ft);
    const double md_acc_cmb = median5(acc_cmb), md_acc_ft = median5(acc_ft);
    const double md_acc_sum = median5(acc_sum);
    const bool a = md_dis_sum > md_dis_ft;
    const bool b = md_acc_cmb >= md_acc_ft - 0.02;
    const bool c = md_acc_sum < md_acc_ft;
    const bool fast = protocol_seconds < 300.0;
    criterion(6, a && b && c && fast,
              fmt("medians: disagreement %.4f vs %.4f (%s), accuracy %.4f vs %.4f "
                  "(%s), %.4f vs %.4f (%s), protocol %.1f s (%s)",
                  md_dis_sum, md_dis_ft, a ? "ok" : "bad", md_acc_cmb, md_acc_ft,
                  b ? "ok" : "bad", md_acc_sum, md_acc_ft, c ? "ok" : "bad",
                  protocol_seconds, fast ? "ok" : "slow"));
  }

  // 7: budget accounting.
  {
    TrainConfig combined = TrainConfig::defaults_for(Strategy::Combined);
    TrainConfig finetune = TrainConfig::defaults_for(Strategy::Finetune);
    bool exact = compute_budget(combined, 5) == 90 && compute_budget(finetune, 5) == 90;
    for (const auto& per_seed : reports)
      for (const ExperimentReport& r : per_seed)
        if (r.budget_model_epochs != 90) exact = false;
    criterion(7, exact, "combined(10+8) and finetune(18) both cost exactly 90 "
                        "model-epochs for 5 models, echoed by every report");
  }

  // 8: determinism and persistence.
  {
    std::vector<std::string> ckpts;
    for (std::size_t i = 0; i < 5; ++i)
      ckpts.push_back((root / "seed_1" / "checkpoints" /
                       ("model_" + std::to_string(i) + ".json"))
                          .string());
    ExperimentConfig cfg = default_config();
    cfg.seed = 1;
    cfg.transfer.seed = 1;
    cfg.out_dir = (root / "determinism").string();
    run_experiment(cfg, ckpts);
    const std::string first = normalized_report(cfg.out_dir + "/report.json");
    const std::string model_snapshot = [&] {
      std::ifstream in(cfg.out_dir + "/final/model_0.json");
      std::stringstream ss;
      ss << in.rdbuf();
      return ss.str();
    }();
    run_experiment(cfg, ckpts);
    const std::string second = normalized_report(cfg.out_dir + "/report.json");
    const bool reports_identical = first == second;

    const NetSpec spec{{4, 6, 3}};
    const Model model = make_model(spec, init_params(spec, 17));
    const std::string ckpt_path = (root / "roundtrip.json").string();
    save_checkpoint(model, ckpt_path);
    const bool roundtrip =
        bitwise_equal(load_model_checkpoint(ckpt_path).full(), model.full());

    std::ifstream again(cfg.out_dir + "/final/model_0.json");
    std::stringstream ss;
    ss << again.rdbuf();
    const bool checkpoints_identical = ss.str() == model_snapshot;

    criterion(8, reports_identical && checkpoints_identical && roundtrip,
              fmt("repeat run report bytes %s, checkpoint bytes %s, save/load "
                  "round trip %s",
                  reports_identical ? "identical" : "differ",
                  checkpoints_identical ? "identical" : "differ",
                  roundtrip ? "bitwise" : "lossy"));
  }

  // 9: shift-magnitude trajectory is logged per shift epoch and stays positive.
  {
    const std::size_t expected_len[] = {10, 0, 90, 18};
    bool lengths_ok = true;
    std::size_t positive_random = 0, positive_sum = 0, positive_combined = 0;
    for (const auto& per_seed : reports) {
      for (std::size_t s = 0; s < kStrategies; ++s)
        if (per_seed[s].rel_l2_trajectory.size() != expected_len[s]) lengths_ok = false;
      auto positive_after_first = [](const std::vector<double>& t) {
        if (t.size() < 2) return false;
        for (std::size_t i = 1; i < t.size(); ++i)
          if (!(t[i] > 0.0)) return false;
        return true;
      };
      positive_combined += positive_after_first(per_seed[kCombined].rel_l2_trajectory);
      positive_random += positive_after_first(per_seed[kShiftRandom].rel_l2_trajectory);
      positive_sum += positive_after_first(per_seed[kShiftSum].rel_l2_trajectory);
    }
    criterion(9,
              lengths_ok && positive_combined >= 4 && positive_random >= 4 &&
                  positive_sum >= 4,
              fmt("per-epoch trajectory lengths %s; positive after the first epoch "
                  "in %zu/%zu/%zu of 5 seeds (combined/shift_random/shift_sum)",
                  lengths_ok ? "as scheduled" : "wrong", positive_combined,
                  positive_random, positive_sum));
  }

  std::error_code ec;
  fs::remove_all(root, ec);
  return g_all_pass ? 0 : 1;
}
