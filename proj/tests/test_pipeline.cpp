#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "unipose/pipeline.hpp"
#include "unipose/rng.hpp"

using namespace unipose;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig tiny_run_config() {
  RunConfig cfg;
  cfg.steps = 6;
  cfg.batch_sequences = 1;
  cfg.batch_frames = 4;
  cfg.seed = 5;
  cfg.optimizer.lr = 1e-3;
  cfg.out_dir = "pipe_test_out";
  cfg.fusion.channels = 8;
  cfg.fusion.code_width = 6;
  cfg.fusion.points_used = 24;
  cfg.lift.channels = 8;
  cfg.lift.code_width = 6;
  cfg.lift.tokens = 8;
  cfg.lift.heads = 2;
  cfg.lift.n_local = 3;
  cfg.lift.grid_h = 2;
  cfg.lift.grid_w = 2;
  cfg.sim.n_sequences = 3;
  cfg.sim.frames_per_sequence = 5;
  cfg.sim.n_points = 64;
  cfg.sim.pyramid_levels = 2;
  cfg.sim.pyramid_base_height = 8;
  cfg.sim.pyramid_base_width = 6;
  return cfg;
}

SequenceDataset tiny_dataset(const RunConfig& cfg, uint64_t seed) {
  return generate_dataset(cfg.sim, seed);
}

void corrupt_ground_truth(SequenceDataset& ds, uint64_t seed) {
  Rng rng(seed);
  for (auto& seq : ds.sequences) {
    for (auto& f : seq) {
      Pose3D garbage;
      garbage.joints.resize(ds.topology.joint_count());
      for (auto& j : garbage.joints)
        j = {rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(1, 99)};
      f.set_ground_truth(garbage);
    }
  }
}

}  // namespace

TEST_CASE("evaluate_labels: exact labels score perfectly; offsets follow the 10cm rule") {
  RunConfig cfg = tiny_run_config();
  const SequenceDataset ds = tiny_dataset(cfg, 31);
  PseudoLabels labels;
  for (const auto& seq : ds.sequences) {
    std::vector<Pose3D> frames;
    for (const auto& f : seq) frames.push_back(f.evaluation_ground_truth());
    labels.poses.push_back(std::move(frames));
  }
  const EvalReport perfect = evaluate_labels(labels, ds);
  CHECK(perfect.mean_map == doctest::Approx(1.0));
  CHECK(perfect.mpjpe_cm == doctest::Approx(0.0));

  // constant 5 cm error field -> MPJPE exactly 5 cm, all within 10 cm
  PseudoLabels shifted = labels;
  for (auto& seq : shifted.poses)
    for (auto& p : seq)
      for (auto& j : p.joints) j.z += 0.05;
  const EvalReport five = evaluate_labels(shifted, ds);
  CHECK(five.mpjpe_cm == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(five.mean_map == doctest::Approx(1.0));

  // 9 cm counts toward mAP; 11 cm does not; exactly 10 cm is excluded (strict)
  PseudoLabels nine = labels;
  for (auto& seq : nine.poses)
    for (auto& p : seq)
      for (auto& j : p.joints) j.x += 0.09;
  CHECK(evaluate_labels(nine, ds).mean_map == doctest::Approx(1.0));

  PseudoLabels eleven = labels;
  for (auto& seq : eleven.poses)
    for (auto& p : seq)
      for (auto& j : p.joints) j.x += 0.11;
  CHECK(evaluate_labels(eleven, ds).mean_map == doctest::Approx(0.0));

  // boundary: an error of exactly 0.10 m is excluded (strict inequality);
  // pin coordinates so the distance is the same double as the threshold
  SequenceDataset exact = ds;
  PseudoLabels at_boundary;
  for (auto& seq : exact.sequences) {
    std::vector<Pose3D> lab;
    for (auto& f : seq) {
      Pose3D gt;
      gt.joints.assign(15, Point3{0.0, 0.0, 2.0});
      f.set_ground_truth(gt);
      Pose3D l = gt;
      for (auto& j : l.joints) j.x = 0.10;
      lab.push_back(std::move(l));
    }
    at_boundary.poses.push_back(std::move(lab));
  }
  CHECK(evaluate_labels(at_boundary, exact).mean_map == doctest::Approx(0.0));
  CHECK(evaluate_labels(at_boundary, exact).mpjpe_cm == doctest::Approx(10.0));
}

TEST_CASE("stage-1 training: deterministic checkpoints, metrics schema, csv rows") {
  RunConfig cfg = tiny_run_config();
  const SequenceDataset ds = tiny_dataset(cfg, 41);

  TrainResult a = train_stage1(cfg, ds);
  TrainResult b = train_stage1(cfg, ds);
  CHECK(a.metrics_csv == b.metrics_csv);
  a.params.save("pipe_ckpt_a.json");
  b.params.save("pipe_ckpt_b.json");
  CHECK(slurp("pipe_ckpt_a.json") == slurp("pipe_ckpt_b.json"));

  RunConfig other = cfg;
  other.seed = 6;
  TrainResult c = train_stage1(other, ds);
  c.params.save("pipe_ckpt_c.json");
  CHECK(slurp("pipe_ckpt_a.json") != slurp("pipe_ckpt_c.json"));

  // schema: header + one row per step
  std::istringstream csv(a.metrics_csv);
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line == "step,l_2d,l_bone,l_sym,l_con,total");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == cfg.steps);

  // the 3d-to-2d manner logs l_rgb instead of l_2d and still runs
  RunConfig manner = cfg;
  manner.ablation.loss_manner = SupervisionManner::kProject3dTo2d;
  TrainResult d = train_stage1(manner, ds);
  std::istringstream csv2(d.metrics_csv);
  REQUIRE(std::getline(csv2, line));
  CHECK(line == "step,l_rgb,l_bone,l_sym,l_con,total");

  std::remove("pipe_ckpt_a.json");
  std::remove("pipe_ckpt_b.json");
  std::remove("pipe_ckpt_c.json");
}

TEST_CASE("label hygiene: corrupting hidden ground truth cannot change training") {
  RunConfig cfg = tiny_run_config();
  const SequenceDataset clean = tiny_dataset(cfg, 43);
  SequenceDataset corrupted = clean;
  corrupt_ground_truth(corrupted, 999);

  TrainResult a = train_stage1(cfg, clean);
  TrainResult b = train_stage1(cfg, corrupted);
  CHECK(a.metrics_csv == b.metrics_csv);
  a.params.save("pipe_hyg_a.json");
  b.params.save("pipe_hyg_b.json");
  CHECK(slurp("pipe_hyg_a.json") == slurp("pipe_hyg_b.json"));

  // stage 2 under pseudo labels is equally blind to ground truth
  const PseudoLabels labels = predict_stage1(a.params, clean, cfg.fusion);
  RunConfig s2 = cfg;
  s2.stage = 2;
  TrainResult p = train_stage2(s2, clean, &labels);
  TrainResult q = train_stage2(s2, corrupted, &labels);
  CHECK(p.metrics_csv == q.metrics_csv);
  p.params.save("pipe_hyg_a.json");
  q.params.save("pipe_hyg_b.json");
  CHECK(slurp("pipe_hyg_a.json") == slurp("pipe_hyg_b.json"));

  // evaluation, by contrast, must see the corruption
  const EvalReport ra = evaluate(a.params, clean, cfg, 1);
  const EvalReport rb = evaluate(b.params, corrupted, cfg, 1);
  CHECK(ra.mpjpe_cm != rb.mpjpe_cm);

  std::remove("pipe_hyg_a.json");
  std::remove("pipe_hyg_b.json");
}

TEST_CASE("pseudo labels: count, bit-identical re-export, roundtrip, mismatch error") {
  RunConfig cfg = tiny_run_config();
  const SequenceDataset ds = tiny_dataset(cfg, 47);
  TrainResult tr = train_stage1(cfg, ds);

  const PseudoLabels labels = predict_stage1(tr.params, ds, cfg.fusion);
  CHECK(labels.frame_count() == ds.frame_count());

  write_pseudo_labels(labels, "pipe_labels_1.jsonl");
  write_pseudo_labels(labels, "pipe_labels_2.jsonl");
  CHECK(slurp("pipe_labels_1.jsonl") == slurp("pipe_labels_2.jsonl"));

  const PseudoLabels rt = read_pseudo_labels("pipe_labels_1.jsonl", ds);
  for (size_t s = 0; s < labels.poses.size(); ++s)
    for (size_t f = 0; f < labels.poses[s].size(); ++f)
      for (int j = 0; j < 15; ++j) {
        CHECK(rt.poses[s][f].joints[j].x == labels.poses[s][f].joints[j].x);
        CHECK(rt.poses[s][f].joints[j].z == labels.poses[s][f].joints[j].z);
      }

  // an incompatible checkpoint is rejected with a format error
  RunConfig other = cfg;
  other.fusion.channels = 12;
  diff::ParamStore wrong;
  Rng rng(7);
  init_stage1_params(wrong, other.fusion, other.sim, 15, rng);
  CHECK_THROWS_AS(predict_stage1(wrong, ds, cfg.fusion), FormatError);

  std::remove("pipe_labels_1.jsonl");
  std::remove("pipe_labels_2.jsonl");
}

TEST_CASE("stage-2 training: deterministic, fits labels, gt regime runs") {
  RunConfig cfg = tiny_run_config();
  cfg.stage = 2;
  cfg.steps = 8;
  const SequenceDataset ds = tiny_dataset(cfg, 53);

  TrainResult gt1 = train_stage2(cfg, ds, nullptr);
  TrainResult gt2 = train_stage2(cfg, ds, nullptr);
  CHECK(gt1.metrics_csv == gt2.metrics_csv);
  CHECK(gt1.history.front().total > gt1.history.back().total);

  const EvalReport rep = evaluate(gt1.params, ds, cfg, 2);
  CHECK(rep.mpjpe_cm >= 0.0);
  CHECK(rep.mean_map >= 0.0);
  CHECK(rep.mean_map <= 1.0);
}

TEST_CASE("perturbation sensitivity is positive and finite on a fresh model") {
  RunConfig cfg = tiny_run_config();
  const SequenceDataset ds = tiny_dataset(cfg, 59);
  diff::ParamStore store;
  Rng rng(61);
  init_lift_params(store, cfg.lift, cfg.sim, 15, rng);
  const double s = perturbation_sensitivity(store, ds, cfg.lift, 40.0, 2);
  CHECK(s > 0.0);
  CHECK(std::isfinite(s));
}

TEST_CASE("run config: roundtrip, env seed override, validation") {
  RunConfig cfg = tiny_run_config();
  cfg.ablation.disable_con = true;
  write_run_config(cfg, "pipe_cfg.json");
  const RunConfig rt = load_run_config("pipe_cfg.json");
  CHECK(rt.steps == cfg.steps);
  CHECK(rt.fusion.points_used == cfg.fusion.points_used);
  CHECK(rt.ablation.disable_con);
  CHECK(rt.sim.n_points == cfg.sim.n_points);

  setenv("UNIPOSE_SEED", "4242", 1);
  const RunConfig env = load_run_config("pipe_cfg.json");
  unsetenv("UNIPOSE_SEED");
  CHECK(env.seed == 4242);

  std::ofstream bad("pipe_cfg_bad.json");
  bad << "{\"schema_version\": 3}\n";
  bad.close();
  CHECK_THROWS_AS(load_run_config("pipe_cfg_bad.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config("pipe_cfg_missing.json"), IoError);

  std::remove("pipe_cfg.json");
  std::remove("pipe_cfg_bad.json");
}

#ifdef UNIPOSE_CLI
TEST_CASE("cli: simulate/train/export/eval plumbing and error lines") {
  RunConfig cfg = tiny_run_config();
  cfg.dataset_dir = "pipe_cli_data";
  cfg.out_dir = "pipe_cli_out";
  cfg.test_sequences = 2;
  write_run_config(cfg, "pipe_cli_cfg.json");

  const std::string cli = UNIPOSE_CLI;
  auto shell = [&](const std::string& args) {
    return std::system((cli + " " + args + " >/dev/null 2>pipe_cli_err.txt").c_str());
  };

  CHECK(shell("simulate --config pipe_cli_cfg.json --out pipe_cli_data") == 0);
  CHECK(shell("train-stage1 --config pipe_cli_cfg.json") == 0);
  CHECK(shell("export-labels --ckpt pipe_cli_out/stage1.ckpt.json --data pipe_cli_data "
              "--config pipe_cli_cfg.json --out pipe_cli_out/labels.jsonl") == 0);
  CHECK(shell("train-stage2 --config pipe_cli_cfg.json --labels pipe_cli_out/labels.jsonl") == 0);
  CHECK(shell("eval --ckpt pipe_cli_out/stage2.ckpt.json --data pipe_cli_data --stage 2 "
              "--config pipe_cli_cfg.json") == 0);

  // failure: missing dataset produces a machine-readable error line
  CHECK(shell("eval --ckpt pipe_cli_out/stage2.ckpt.json --data no_such_dir --stage 2") != 0);
  const std::string err = slurp("pipe_cli_err.txt");
  CHECK(err.find("\"error\"") != std::string::npos);
  CHECK(err.find("\"code\"") != std::string::npos);

  std::filesystem::remove_all("pipe_cli_data");
  std::filesystem::remove_all("pipe_cli_out");
  std::remove("pipe_cli_cfg.json");
  std::remove("pipe_cli_err.txt");
}
#endif
