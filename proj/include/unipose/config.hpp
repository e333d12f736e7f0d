#pragma once

#include <string>

#include "unipose/fusion.hpp"
#include "unipose/lifting.hpp"
#include "unipose/param_store.hpp"
#include "unipose/simkit.hpp"
#include "unipose/supervision.hpp"

namespace unipose {

struct AblationFlags {
  SupervisionManner loss_manner = SupervisionManner::kRay2dTo3d;
  bool disable_sym = false;
  bool disable_bone = false;
  bool disable_con = false;
  bool disable_fusion = false;
  bool single_anchor_baseline = false;

  SelfSupFlags selfsup() const {
    SelfSupFlags f;
    f.sym = !disable_sym;
    f.bone = !disable_bone;
    f.con = !disable_con;
    return f;
  }
};

// which comparison groups the ablate command runs
struct AblationGroups {
  bool manner = true;    // ray vs 3d-to-2d projection supervision
  bool selfsup = true;   // w/o bone, w/o sym, w/o con
  bool fusion = false;   // dynamic alignment on vs off
  bool stage2 = true;    // gt vs pseudo labels, single-anchor robustness
};

struct RunConfig {
  int schema_version = 1;
  std::string dataset_dir;
  std::string out_dir = ".";
  int stage = 1;
  int steps = 240;
  int batch_sequences = 2;   // stage 1 batches whole sequences
  int batch_frames = 32;     // stage 2 batches frames
  uint64_t seed = 1;
  diff::AdamWConfig optimizer;
  LossWeights weights;
  FusionConfig fusion;
  LiftConfig lift;
  AblationFlags ablation;
  AblationGroups groups;
  SimConfig sim;             // used by `simulate`
  int test_sequences = 40;   // test split size for `simulate`
  int eval_frames = 0;       // 0 = every test frame
  int ablate_steps = 0;      // 0 = same as steps
};

RunConfig load_run_config(const std::string& path);
void write_run_config(const RunConfig& cfg, const std::string& path);

std::string train_metrics_header(SupervisionManner manner);

}  // namespace unipose
