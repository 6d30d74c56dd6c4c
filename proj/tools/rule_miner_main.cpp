// Dynamic rule mining over windowed sensor time series: dataset synthesis,
// training, rule extraction, evaluation, ablations, figure export.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "ruleminer/eval.hpp"

namespace fs = std::filesystem;
using namespace ruleminer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

int ablation_threads() {
  const char* env = std::getenv("RULE_MINER_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<uint64_t> seeds;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) seeds.push_back(std::stoull(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return seeds;
}

// Loads the checkpoint and prepares the dataset at `data_path` for it.
struct CheckpointRun {
  Model model;
  std::vector<WindowedSample> windows;
  std::optional<std::vector<PlantedRule>> planted;
};

CheckpointRun load_for_inference(const std::string& checkpoint_path,
                                 const std::string& data_path) {
  CheckpointRun run{load_checkpoint(checkpoint_path), {}, {}};
  WindowingConfig wc = run.model.windowing;
  LoadedDataset ds = load_dataset(data_path, wc);
  if (ds.windows.empty())
    throw InputError("dataset " + data_path + " produced no windows");
  run.windows = std::move(ds.windows);
  run.planted = std::move(ds.planted);
  prepare_eval_windows(run.model, run.windows);
  return run;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"dynamic rule miner for windowed sensor time series"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a planted-rule dataset");
  uint64_t synth_seed = 7;
  int synth_rules = 5, synth_windows = 2000, synth_sensors = 12, synth_T = 30;
  int synth_bands = 4;
  double synth_signal = 1.0, synth_noise = 0.0;
  std::vector<std::string> synth_overlaps;
  std::string synth_out;
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--rules", synth_rules, "planted rule count");
  synth->add_option("--windows", synth_windows, "window count");
  synth->add_option("--sensors", synth_sensors, "sensor channels");
  synth->add_option("--length", synth_T, "window length in cycles");
  synth->add_option("--bands", synth_bands, "RUL bands");
  synth->add_option("--signal", synth_signal, "pattern strength multiplier");
  synth->add_option("--label-noise", synth_noise,
                    "fraction of injected windows relabeled at random");
  synth->add_option("--overlap", synth_overlaps,
                    "engineered coverage overlap a:b:jaccard (repeatable)");
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model per config");
  std::string train_config, train_out;
  train_cmd->add_option("--config", train_config, "run config JSON")
      ->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();

  // mine / eval / export share flags
  std::string ck_path, data_path, out_dir;
  auto add_ck_flags = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", ck_path, "checkpoint JSON")->required();
    cmd->add_option("--data", data_path, "dataset directory or CMAPSS file")
        ->required();
    cmd->add_option("--out", out_dir, "output directory")->required();
  };
  auto* mine_cmd = app.add_subcommand("mine", "extract discrete rules");
  add_ck_flags(mine_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "mine and score rules");
  add_ck_flags(eval_cmd);
  auto* export_cmd =
      app.add_subcommand("export", "write figure CSV data");
  add_ck_flags(export_cmd);

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "run the ablation grid");
  std::string ablate_config, ablate_out, ablate_seeds = "1,2,3,4,5";
  ablate_cmd->add_option("--config", ablate_config, "run config JSON")
      ->required();
  ablate_cmd->add_option("--seeds", ablate_seeds, "comma-separated seed list");
  ablate_cmd->add_option("--out", ablate_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    SynthConfig sc;
    sc.seed = synth_seed;
    sc.rules = synth_rules;
    sc.windows = synth_windows;
    sc.sensors = synth_sensors;
    sc.T = synth_T;
    sc.bands = synth_bands;
    sc.signal_strength = synth_signal;
    sc.label_noise = synth_noise;
    for (const auto& ov : synth_overlaps) {
      OverlapSpec spec;
      if (std::sscanf(ov.c_str(), "%d:%d:%lf", &spec.rule_a, &spec.rule_b,
                      &spec.jaccard) != 3)
        throw ConfigError("bad --overlap spec: " + ov);
      sc.overlaps.push_back(spec);
    }
    SynthDataset ds = synth_planted_rules(sc);
    save_dataset(ds, synth_out);
    std::cout << "wrote " << ds.windows.size() << " windows, "
              << ds.planted.size() << " planted rules to " << synth_out
              << "\n";
    return kExitOk;
  }

  if (train_cmd->parsed()) {
    RunConfig cfg = load_run_config(train_config);
    TrainRun run = run_training(cfg);
    fs::create_directories(train_out);
    save_checkpoint(run.model, (fs::path(train_out) / "checkpoint.json").string());
    write_training_log((fs::path(train_out) / "training_log.csv").string(),
                       run.history);
    const double final_loss =
        run.history.empty() ? 0.0 : run.history.back().total;
    std::cout << "trained " << run.history.size() << " steps on "
              << run.data.windows.size() << " windows, final loss "
              << final_loss << "\n";
    return kExitOk;
  }

  if (mine_cmd->parsed()) {
    CheckpointRun run = load_for_inference(ck_path, data_path);
    MiningArtifacts art =
        mine_rules(run.model, run.windows, run.model.mining);
    fs::create_directories(out_dir);
    save_rules_json(art.rules, (fs::path(out_dir) / "rules.json").string());
    std::cout << "mined " << art.rules.size() << " rules from "
              << run.windows.size() << " windows\n";
    return kExitOk;
  }

  if (eval_cmd->parsed()) {
    CheckpointRun run = load_for_inference(ck_path, data_path);
    const std::vector<PlantedRule>* planted =
        run.planted ? &*run.planted : nullptr;
    MetricsReport rep = evaluate(run.model, run.windows, run.model.mining,
                                 run.model.fingerprint, planted);
    fs::create_directories(out_dir);
    save_metrics_json(rep, (fs::path(out_dir) / "metrics.json").string());
    std::cout << "accuracy " << rep.rule_mining_accuracy << ", coverage "
              << rep.rule_coverage << ", rules " << rep.rule_count << "\n";
    return kExitOk;
  }

  if (export_cmd->parsed()) {
    CheckpointRun run = load_for_inference(ck_path, data_path);
    MiningArtifacts art =
        mine_rules(run.model, run.windows, run.model.mining);
    export_figures(art, out_dir);
    std::cout << "wrote figure data for " << art.rules.size() << " rules to "
              << out_dir << "\n";
    return kExitOk;
  }

  if (ablate_cmd->parsed()) {
    RunConfig cfg = load_run_config(ablate_config);
    const std::vector<uint64_t> seeds = parse_seed_list(ablate_seeds);
    std::vector<AblationRow> rows =
        run_ablations(cfg, seeds, ablation_threads());
    fs::create_directories(ablate_out);
    write_ablation_csv(rows,
                       (fs::path(ablate_out) / "ablation.csv").string());
    for (const auto& r : rows)
      std::cout << r.variant << ": accuracy "
                << (r.failed ? std::string("failed")
                             : std::to_string(r.metrics.rule_mining_accuracy))
                << "\n";
    return kExitOk;
  }

  return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitIo;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitIo;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}
