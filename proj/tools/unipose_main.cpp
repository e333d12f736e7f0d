// unipose CLI: simulate / train-stage1 / export-labels / train-stage2 /
// eval / ablate. Exit code 0 on success; failures print one machine-readable
// JSON line to stderr and exit nonzero. UNIPOSE_SEED overrides the config
// seed.

#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "unipose/pipeline.hpp"

using namespace unipose;

namespace {

nlohmann::json report_json(const EvalReport& rep) {
  return nlohmann::json{{"mean_map", rep.mean_map},
                        {"mpjpe_cm", rep.mpjpe_cm},
                        {"per_joint_map", rep.per_joint_map},
                        {"per_joint_err_cm", rep.per_joint_err_cm}};
}

SequenceDataset load_split(const std::string& dir, const char* split) {
  return read_dataset(dir + "/" + split + ".jsonl");
}

int run(int argc, char** argv) {
  CLI::App app{"unipose: weakly supervised 3D human pose estimation on synthetic RGB-D"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, data_dir, labels_path;
  bool use_gt = false;
  int eval_stage = 1;

  auto* simulate = app.add_subcommand("simulate", "generate train/test datasets");
  simulate->add_option("--config", config_path, "run config JSON")->required();
  simulate->add_option("--out", out_dir, "output directory")->required();

  auto* train1 = app.add_subcommand("train-stage1", "train the point-cloud branch");
  train1->add_option("--config", config_path)->required();

  auto* exportl = app.add_subcommand("export-labels", "export stage-1 pseudo labels");
  exportl->add_option("--ckpt", ckpt_path)->required();
  exportl->add_option("--data", data_dir)->required();
  exportl->add_option("--out", labels_path, "defaults to <data>/pseudo_labels.jsonl");
  exportl->add_option("--config", config_path, "network dims when not default");

  auto* train2 = app.add_subcommand("train-stage2", "train the lifting network");
  train2->add_option("--config", config_path)->required();
  auto* labels_opt = train2->add_option("--labels", labels_path, "pseudo-label file");
  train2->add_flag("--use-gt", use_gt, "ground-truth oracle regime");
  labels_opt->excludes("--use-gt");

  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  evalc->add_option("--ckpt", ckpt_path)->required();
  evalc->add_option("--data", data_dir)->required();
  evalc->add_option("--stage", eval_stage)->required()->check(CLI::Range(1, 2));
  evalc->add_option("--config", config_path, "network dims when not default");

  auto* ablatec = app.add_subcommand("ablate", "run the ablation table");
  ablatec->add_option("--config", config_path)->required();

  CLI11_PARSE(app, argc, argv);

  if (simulate->parsed()) {
    const RunConfig cfg = load_run_config(config_path);
    SimConfig train_sim = cfg.sim;
    const SequenceDataset train = generate_dataset(train_sim, cfg.sim.seed);
    SimConfig test_sim = cfg.sim;
    test_sim.n_sequences = cfg.test_sequences;
    const SequenceDataset test = generate_dataset(test_sim, mix_seed(cfg.sim.seed, 0x7e57));
    std::filesystem::create_directories(out_dir);
    write_dataset(train, out_dir + "/train.jsonl");
    write_dataset(test, out_dir + "/test.jsonl");
    std::cout << nlohmann::json{{"train_frames", train.frame_count()},
                                {"test_frames", test.frame_count()},
                                {"out", out_dir}}
                     .dump()
              << "\n";
    return 0;
  }

  if (train1->parsed()) {
    const RunConfig cfg = load_run_config(config_path);
    const SequenceDataset train = load_split(cfg.dataset_dir, "train");
    TrainResult result = train_stage1(cfg, train);
    const std::string ckpt = cfg.out_dir + "/stage1.ckpt.json";
    result.params.save(ckpt);
    std::cout << nlohmann::json{{"checkpoint", ckpt},
                                {"metrics", cfg.out_dir + "/stage1_metrics.csv"},
                                {"final_total", result.history.back().total}}
                     .dump()
              << "\n";
    return 0;
  }

  if (exportl->parsed()) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    diff::ParamStore params = diff::ParamStore::load(ckpt_path);
    const SequenceDataset train = load_split(data_dir, "train");
    const PseudoLabels labels =
        predict_stage1(params, train, cfg.fusion);
    if (labels_path.empty()) labels_path = data_dir + "/pseudo_labels.jsonl";
    write_pseudo_labels(labels, labels_path);
    std::cout << nlohmann::json{{"labels", labels_path},
                                {"count", labels.frame_count()}}
                     .dump()
              << "\n";
    return 0;
  }

  if (train2->parsed()) {
    RunConfig cfg = load_run_config(config_path);
    cfg.stage = 2;
    const SequenceDataset train = load_split(cfg.dataset_dir, "train");
    PseudoLabels labels;
    const bool have_labels = !labels_path.empty();
    if (!have_labels && !use_gt)
      throw ConfigError("train-stage2 requires --labels <file> or --use-gt");
    if (have_labels) labels = read_pseudo_labels(labels_path, train);
    TrainResult result = train_stage2(cfg, train, have_labels ? &labels : nullptr);
    const std::string ckpt = cfg.out_dir + "/stage2.ckpt.json";
    result.params.save(ckpt);
    std::cout << nlohmann::json{{"checkpoint", ckpt},
                                {"metrics", cfg.out_dir + "/stage2_metrics.csv"},
                                {"final_total", result.history.back().total}}
                     .dump()
              << "\n";
    return 0;
  }

  if (evalc->parsed()) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    diff::ParamStore params = diff::ParamStore::load(ckpt_path);
    const SequenceDataset test = load_split(data_dir, "test");
    const EvalReport rep = evaluate(params, test, cfg, eval_stage);
    std::cout << report_json(rep).dump() << "\n";
    return 0;
  }

  if (ablatec->parsed()) {
    const RunConfig cfg = load_run_config(config_path);
    const SequenceDataset train = load_split(cfg.dataset_dir, "train");
    const SequenceDataset test = load_split(cfg.dataset_dir, "test");
    const std::vector<AblationRow> rows = ablate(cfg, train, test);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows)
      out.push_back({{"variant", r.variant},
                     {"mean_map", r.mean_map},
                     {"mpjpe_cm", r.mpjpe_cm},
                     {"extra", r.extra}});
    std::cout << nlohmann::json{{"table", cfg.out_dir + "/ablation.csv"},
                                {"rows", out}}
                     .dump()
              << "\n";
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << nlohmann::json{{"error", {{"code", e.code()}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", {{"code", "Internal"}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return 2;
  }
}
