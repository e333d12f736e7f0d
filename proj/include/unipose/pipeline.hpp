#pragma once

#include <string>
#include <vector>

#include "unipose/config.hpp"

namespace unipose {

struct EvalReport {
  std::vector<double> per_joint_map;     // mAP@10cm, strict < 0.10 m
  std::vector<double> per_joint_err_cm;  // mean per-joint error
  double mean_map = 0.0;
  double mpjpe_cm = 0.0;
};

struct TrainResult {
  diff::ParamStore params;
  std::vector<LossReport> history;
  std::string metrics_csv;  // full transcript, also written to disk
};

// stage-1 point-branch training under Eq.3 weak/self supervision; never reads
// frame ground truth
TrainResult train_stage1(const RunConfig& cfg, const SequenceDataset& train);

std::vector<Pose3D> stage1_predict_sequence(diff::ParamStore& params,
                                            const std::vector<Frame>& frames,
                                            const FusionConfig& cfg, int joint_count,
                                            const CameraIntrinsics& k);

struct PseudoLabels {
  std::vector<std::vector<Pose3D>> poses;  // [sequence][frame]

  int frame_count() const {
    int n = 0;
    for (const auto& s : poses) n += static_cast<int>(s.size());
    return n;
  }
};

PseudoLabels predict_stage1(diff::ParamStore& params, const SequenceDataset& ds,
                            const FusionConfig& cfg);
void write_pseudo_labels(const PseudoLabels& labels, const std::string& path);
PseudoLabels read_pseudo_labels(const std::string& path, const SequenceDataset& ds);

// stage-2 lifting training with per-joint L1 label fitting; labels == nullptr
// selects the ground-truth oracle regime
TrainResult train_stage2(const RunConfig& cfg, const SequenceDataset& train,
                         const PseudoLabels* labels);

EvalReport evaluate(diff::ParamStore& params, const SequenceDataset& test,
                    const RunConfig& cfg, int stage);

// mAP/MPJPE of raw label poses against ground truth (pseudo-label quality)
EvalReport evaluate_labels(const PseudoLabels& labels, const SequenceDataset& ds);

// mean 3D displacement (meters) of a joint's prediction when its 2D input is
// shifted by `px` pixels; averaged over joints and sampled test frames
double perturbation_sensitivity(diff::ParamStore& params, const SequenceDataset& test,
                                const LiftConfig& cfg, double px, int max_frames);

struct AblationRow {
  std::string variant;
  double mean_map = 0.0;
  double mpjpe_cm = 0.0;
  double extra = 0.0;  // robustness rows: perturbation sensitivity (m)
};

std::vector<AblationRow> ablate(const RunConfig& cfg, const SequenceDataset& train,
                                const SequenceDataset& test);
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);

// learned anchor geometry dump for the ablate subcommand
void write_anchor_dump(diff::ParamStore& params, const LiftConfig& cfg,
                       const SimConfig& sim, int joint_count, const std::string& path);

}  // namespace unipose
