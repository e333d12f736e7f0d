#include "unipose/config.hpp"

#include <cstdlib>
#include <fstream>

#include <json.hpp>

namespace unipose {

using nlohmann::json;

namespace {

SupervisionManner manner_from_string(const std::string& s) {
  if (s == "ray") return SupervisionManner::kRay2dTo3d;
  if (s == "project3d2d") return SupervisionManner::kProject3dTo2d;
  throw ConfigError("loss_manner must be 'ray' or 'project3d2d', got " + s);
}

std::string manner_to_string(SupervisionManner m) {
  return m == SupervisionManner::kRay2dTo3d ? "ray" : "project3d2d";
}

void read_sim(const json& j, SimConfig& c) {
  c.n_sequences = j.value("n_sequences", c.n_sequences);
  c.frames_per_sequence = j.value("frames_per_sequence", c.frames_per_sequence);
  c.frame_rate = j.value("frame_rate", c.frame_rate);
  c.n_points = j.value("n_points", c.n_points);
  c.cloud_noise_sigma = j.value("cloud_noise_sigma", c.cloud_noise_sigma);
  c.pixel_sigma = j.value("pixel_sigma", c.pixel_sigma);
  c.outlier_rate = j.value("outlier_rate", c.outlier_rate);
  c.image_height = j.value("image_height", c.image_height);
  c.image_width = j.value("image_width", c.image_width);
  c.fx = j.value("fx", c.fx);
  c.fy = j.value("fy", c.fy);
  c.cx = j.value("cx", c.cx);
  c.cy = j.value("cy", c.cy);
  c.pyramid_levels = j.value("pyramid_levels", c.pyramid_levels);
  c.pyramid_base_height = j.value("pyramid_base_height", c.pyramid_base_height);
  c.pyramid_base_width = j.value("pyramid_base_width", c.pyramid_base_width);
  c.heatmap_channels_per_joint =
      j.value("heatmap_channels_per_joint", c.heatmap_channels_per_joint);
  c.heatmap_sigma = j.value("heatmap_sigma", c.heatmap_sigma);
  c.heatmap_noise = j.value("heatmap_noise", c.heatmap_noise);
  c.motion_mode = j.value("motion_mode", c.motion_mode);
  c.seed = j.value("seed", c.seed);
}

json sim_json(const SimConfig& c) {
  return json{{"n_sequences", c.n_sequences},
              {"frames_per_sequence", c.frames_per_sequence},
              {"frame_rate", c.frame_rate},
              {"n_points", c.n_points},
              {"cloud_noise_sigma", c.cloud_noise_sigma},
              {"pixel_sigma", c.pixel_sigma},
              {"outlier_rate", c.outlier_rate},
              {"image_height", c.image_height},
              {"image_width", c.image_width},
              {"fx", c.fx},
              {"fy", c.fy},
              {"cx", c.cx},
              {"cy", c.cy},
              {"pyramid_levels", c.pyramid_levels},
              {"pyramid_base_height", c.pyramid_base_height},
              {"pyramid_base_width", c.pyramid_base_width},
              {"heatmap_channels_per_joint", c.heatmap_channels_per_joint},
              {"heatmap_sigma", c.heatmap_sigma},
              {"heatmap_noise", c.heatmap_noise},
              {"motion_mode", c.motion_mode},
              {"seed", c.seed}};
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse failure: ") + e.what());
  }
  if (j.value("schema_version", 0) != 1)
    throw ConfigError("config schema_version must be 1");

  RunConfig c;
  c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.stage = j.value("stage", c.stage);
  c.steps = j.value("steps", c.steps);
  c.batch_sequences = j.value("batch_sequences", c.batch_sequences);
  c.batch_frames = j.value("batch_frames", c.batch_frames);
  c.seed = j.value("seed", c.seed);
  c.test_sequences = j.value("test_sequences", c.test_sequences);
  c.eval_frames = j.value("eval_frames", c.eval_frames);
  c.ablate_steps = j.value("ablate_steps", c.ablate_steps);

  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
    c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
    c.optimizer.eps = o.value("eps", c.optimizer.eps);
  }
  if (j.contains("loss_weights")) {
    const json& w = j["loss_weights"];
    c.weights.lambda1 = w.value("lambda1", c.weights.lambda1);
    c.weights.lambda2 = w.value("lambda2", c.weights.lambda2);
    c.weights.lambda3 = w.value("lambda3", c.weights.lambda3);
    c.weights.lambda4 = w.value("lambda4", c.weights.lambda4);
  }
  if (j.contains("network")) {
    const json& n = j["network"];
    c.fusion.channels = n.value("channels", c.fusion.channels);
    c.fusion.code_width = n.value("code_width", c.fusion.code_width);
    c.fusion.points_used = n.value("points_used", c.fusion.points_used);
    c.fusion.encoder_factor = n.value("encoder_factor", c.fusion.encoder_factor);
    c.lift.channels = n.value("channels", c.lift.channels);
    c.lift.code_width = n.value("code_width", c.lift.code_width);
    c.lift.tokens = n.value("lift_tokens", c.lift.tokens);
    c.lift.encoder_layers = n.value("encoder_layers", c.lift.encoder_layers);
    c.lift.decoder_layers = n.value("decoder_layers", c.lift.decoder_layers);
    c.lift.heads = n.value("heads", c.lift.heads);
    c.lift.n_local = n.value("n_local", c.lift.n_local);
    c.lift.grid_h = n.value("grid_h", c.lift.grid_h);
    c.lift.grid_w = n.value("grid_w", c.lift.grid_w);
  }
  if (j.contains("ablation")) {
    const json& a = j["ablation"];
    c.ablation.loss_manner = manner_from_string(a.value("loss_manner", std::string("ray")));
    c.ablation.disable_sym = a.value("disable_sym", false);
    c.ablation.disable_bone = a.value("disable_bone", false);
    c.ablation.disable_con = a.value("disable_con", false);
    c.ablation.disable_fusion = a.value("disable_fusion", false);
    c.ablation.single_anchor_baseline = a.value("single_anchor_baseline", false);
  }
  if (j.contains("ablate_groups")) {
    const json& g = j["ablate_groups"];
    c.groups.manner = g.value("manner", c.groups.manner);
    c.groups.selfsup = g.value("selfsup", c.groups.selfsup);
    c.groups.fusion = g.value("fusion", c.groups.fusion);
    c.groups.stage2 = g.value("stage2", c.groups.stage2);
  }
  if (j.contains("sim")) read_sim(j["sim"], c.sim);

  c.fusion.enable_align = !c.ablation.disable_fusion;
  c.lift.single_anchor = c.ablation.single_anchor_baseline;

  if (const char* env = std::getenv("UNIPOSE_SEED")) {
    c.seed = static_cast<uint64_t>(std::strtoull(env, nullptr, 10));
  }
  if (c.steps < 1 || c.batch_sequences < 1 || c.batch_frames < 1)
    throw ConfigError("steps and batch sizes must be positive");
  if (c.stage != 1 && c.stage != 2) throw ConfigError("stage must be 1 or 2");
  return c;
}

void write_run_config(const RunConfig& c, const std::string& path) {
  json j{
      {"schema_version", 1},
      {"dataset_dir", c.dataset_dir},
      {"out_dir", c.out_dir},
      {"stage", c.stage},
      {"steps", c.steps},
      {"batch_sequences", c.batch_sequences},
      {"batch_frames", c.batch_frames},
      {"seed", c.seed},
      {"test_sequences", c.test_sequences},
      {"eval_frames", c.eval_frames},
      {"ablate_steps", c.ablate_steps},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"weight_decay", c.optimizer.weight_decay},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps}}},
      {"loss_weights",
       {{"lambda1", c.weights.lambda1},
        {"lambda2", c.weights.lambda2},
        {"lambda3", c.weights.lambda3},
        {"lambda4", c.weights.lambda4}}},
      {"network",
       {{"channels", c.fusion.channels},
        {"code_width", c.fusion.code_width},
        {"points_used", c.fusion.points_used},
        {"encoder_factor", c.fusion.encoder_factor},
        {"lift_tokens", c.lift.tokens},
        {"encoder_layers", c.lift.encoder_layers},
        {"decoder_layers", c.lift.decoder_layers},
        {"heads", c.lift.heads},
        {"n_local", c.lift.n_local},
        {"grid_h", c.lift.grid_h},
        {"grid_w", c.lift.grid_w}}},
      {"ablation",
       {{"loss_manner", manner_to_string(c.ablation.loss_manner)},
        {"disable_sym", c.ablation.disable_sym},
        {"disable_bone", c.ablation.disable_bone},
        {"disable_con", c.ablation.disable_con},
        {"disable_fusion", c.ablation.disable_fusion},
        {"single_anchor_baseline", c.ablation.single_anchor_baseline}}},
      {"ablate_groups",
       {{"manner", c.groups.manner},
        {"selfsup", c.groups.selfsup},
        {"fusion", c.groups.fusion},
        {"stage2", c.groups.stage2}}},
      {"sim", sim_json(c.sim)},
  };
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config: " + path);
  out << j.dump(2) << "\n";
}

std::string train_metrics_header(SupervisionManner manner) {
  const char* first =
      manner == SupervisionManner::kRay2dTo3d ? "l_2d" : "l_rgb";
  return std::string("step,") + first + ",l_bone,l_sym,l_con,total";
}

}  // namespace unipose
