#include "unipose/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "unipose/base64.hpp"
#include "unipose/rng.hpp"

namespace unipose {

using diff::Graph;
using diff::ParamBinder;
using diff::ParamStore;
using diff::Tensor;
using diff::ValueId;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("failed writing: " + path);
}

Tensor seed_from_grad(const std::vector<Point3>& g, double scale) {
  Tensor t({static_cast<int64_t>(g.size()), 3});
  for (size_t j = 0; j < g.size(); ++j) {
    t.at(j, 0) = g[j].x * scale;
    t.at(j, 1) = g[j].y * scale;
    t.at(j, 2) = g[j].z * scale;
  }
  return t;
}

std::string csv_row(int step, const LossReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << step << "," << r.l_2d << "," << r.l_bone << "," << r.l_sym << ","
     << r.l_con << "," << r.total;
  return os.str();
}

// deterministic two-way frame parallelism: results land in preassigned slots
template <typename Fn>
void for_each_frame_parallel(int n, Fn&& fn) {
  const int workers = n >= 8 ? 2 : 1;
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::thread other([&] {
    for (int i = n / 2; i < n; ++i) fn(i);
  });
  for (int i = 0; i < n / 2; ++i) fn(i);
  other.join();
}

Pose3D lift_predict_frame(ParamStore& store, const FrameInputs& frame,
                          const LiftConfig& cfg, const CameraIntrinsics& k, int K) {
  Graph g;
  ParamBinder params(g, store);
  const LiftForward out = lift_forward(params, frame, cfg, k, K);
  return pose_from_tensor(g.value(out.pose));
}

}  // namespace

TrainResult train_stage1(const RunConfig& cfg, const SequenceDataset& train) {
  const int K = train.topology.joint_count();
  const CameraIntrinsics k = train.config.intrinsics();

  TrainResult result;
  Rng init_rng(mix_seed(cfg.seed, 0x51a6e1));
  init_stage1_params(result.params, cfg.fusion, train.config, K, init_rng);

  Rng batch_rng(mix_seed(cfg.seed, 0xba7c4));
  std::ostringstream csv;
  csv << train_metrics_header(cfg.ablation.loss_manner) << "\n";

  for (int step = 0; step < cfg.steps; ++step) {
    std::map<std::string, Tensor> grads;
    LossReport mean{};
    mean.per_joint_ray.assign(K, 0.0);
    const double batch_scale = 1.0 / cfg.batch_sequences;

    for (int b = 0; b < cfg.batch_sequences; ++b) {
      const auto& frames =
          train.sequences[batch_rng.uniform_index(train.sequences.size())];
      std::vector<std::unique_ptr<Graph>> graphs;
      std::vector<std::unique_ptr<ParamBinder>> binders;
      std::vector<ValueId> outs;
      std::vector<Pose3D> preds;
      std::vector<Pose2D> targets;
      graphs.reserve(frames.size());
      for (const Frame& f : frames) {
        graphs.push_back(std::make_unique<Graph>());
        binders.push_back(std::make_unique<ParamBinder>(*graphs.back(), result.params));
        outs.push_back(
            point_branch_forward(*binders.back(), training_view(f), cfg.fusion, K, k));
        preds.push_back(pose_from_tensor(graphs.back()->value(outs.back())));
        targets.push_back(f.pose2d);
      }

      TotalLoss tl;
      try {
        tl = total_loss(preds, targets, k, train.topology, cfg.weights,
                        cfg.ablation.loss_manner, cfg.ablation.selfsup());
      } catch (const NearZeroJoint& e) {
        throw NearZeroJoint(std::string(e.what()) + " (training step " +
                            std::to_string(step) + ")");
      }

      for (size_t t = 0; t < frames.size(); ++t) {
        graphs[t]->backward_seeded(outs[t], seed_from_grad(tl.grad[t], batch_scale));
        binders[t]->accumulate_grads(grads);
      }
      mean.l_2d += tl.report.l_2d * batch_scale;
      mean.l_bone += tl.report.l_bone * batch_scale;
      mean.l_sym += tl.report.l_sym * batch_scale;
      mean.l_con += tl.report.l_con * batch_scale;
      mean.total += tl.report.total * batch_scale;
      for (int j = 0; j < K; ++j)
        mean.per_joint_ray[j] += tl.report.per_joint_ray[j] * batch_scale;
    }

    result.params.adamw_step(grads, cfg.optimizer);
    mean.l_2d_per_joint = mean.l_2d / K;
    csv << csv_row(step, mean) << "\n";
    result.history.push_back(std::move(mean));
  }

  result.metrics_csv = csv.str();
  ensure_dir(cfg.out_dir);
  write_text(cfg.out_dir + "/stage1_metrics.csv", result.metrics_csv);
  return result;
}

std::vector<Pose3D> stage1_predict_sequence(ParamStore& params,
                                            const std::vector<Frame>& frames,
                                            const FusionConfig& cfg, int joint_count,
                                            const CameraIntrinsics& k) {
  std::vector<Pose3D> out(frames.size());
  for_each_frame_parallel(static_cast<int>(frames.size()), [&](int i) {
    Graph g;
    ParamBinder binder(g, params);
    const ValueId pose =
        point_branch_forward(binder, training_view(frames[i]), cfg, joint_count, k);
    out[i] = pose_from_tensor(g.value(pose));
  });
  return out;
}

PseudoLabels predict_stage1(ParamStore& params, const SequenceDataset& ds,
                            const FusionConfig& cfg) {
  const int K = ds.topology.joint_count();
  PseudoLabels labels;
  labels.poses.reserve(ds.sequences.size());
  try {
    for (const auto& seq : ds.sequences)
      labels.poses.push_back(
          stage1_predict_sequence(params, seq, cfg, K, ds.config.intrinsics()));
  } catch (const Error& e) {
    if (std::string(e.code()) == "ShapeMismatch" || std::string(e.code()) == "UnknownParam")
      throw FormatError(std::string("checkpoint incompatible with dataset: ") + e.what());
    throw;
  }
  return labels;
}

void write_pseudo_labels(const PseudoLabels& labels, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open labels for writing: " + path);
  nlohmann::json header{{"format", "unipose-labels"},
                        {"version", 1},
                        {"sequences", labels.poses.size()}};
  out << header.dump() << "\n";
  for (size_t s = 0; s < labels.poses.size(); ++s) {
    for (size_t f = 0; f < labels.poses[s].size(); ++f) {
      std::vector<double> joints;
      joints.reserve(labels.poses[s][f].joints.size() * 3);
      for (const auto& j : labels.poses[s][f].joints) {
        joints.push_back(j.x);
        joints.push_back(j.y);
        joints.push_back(j.z);
      }
      nlohmann::json line{{"seq", s}, {"frame", f}, {"joints", encode_f64(joints)}};
      out << line.dump() << "\n";
    }
  }
  if (!out) throw IoError("failed writing labels: " + path);
}

PseudoLabels read_pseudo_labels(const std::string& path, const SequenceDataset& ds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open labels: " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("labels: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw FormatError(std::string("labels header parse failure: ") + e.what());
  }
  if (header.value("format", "") != "unipose-labels" || header.value("version", 0) != 1)
    throw FormatError("labels format/version mismatch");

  PseudoLabels labels;
  labels.poses.resize(ds.sequences.size());
  for (size_t s = 0; s < ds.sequences.size(); ++s)
    labels.poses[s].resize(ds.sequences[s].size());
  const int K = ds.topology.joint_count();
  int count = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw FormatError(std::string("labels parse failure: ") + e.what());
    }
    const size_t s = j.at("seq").get<size_t>();
    const size_t f = j.at("frame").get<size_t>();
    if (s >= labels.poses.size() || f >= labels.poses[s].size())
      throw FormatError("labels: index out of range for dataset");
    const auto joints = decode_f64(j.at("joints").get<std::string>());
    if (static_cast<int>(joints.size()) != K * 3)
      throw FormatError("labels: joint payload size mismatch");
    labels.poses[s][f].joints.resize(K);
    for (int jj = 0; jj < K; ++jj)
      labels.poses[s][f].joints[jj] = {joints[jj * 3], joints[jj * 3 + 1],
                                       joints[jj * 3 + 2]};
    ++count;
  }
  if (count != ds.frame_count()) throw FormatError("labels: frame count mismatch");
  return labels;
}

TrainResult train_stage2(const RunConfig& cfg, const SequenceDataset& train,
                         const PseudoLabels* labels) {
  const int K = train.topology.joint_count();
  const CameraIntrinsics k = train.config.intrinsics();
  if (labels && labels->frame_count() != train.frame_count())
    throw FormatError("train_stage2: labels do not cover the dataset");

  TrainResult result;
  Rng init_rng(mix_seed(cfg.seed, 0x52a6e2));
  init_lift_params(result.params, cfg.lift, train.config, K, init_rng);

  // flat frame index
  std::vector<std::pair<int, int>> flat;
  for (size_t s = 0; s < train.sequences.size(); ++s)
    for (size_t f = 0; f < train.sequences[s].size(); ++f)
      flat.emplace_back(static_cast<int>(s), static_cast<int>(f));

  Rng batch_rng(mix_seed(cfg.seed, 0xba7c5));
  std::ostringstream csv;
  csv << "step,l1_label,total\n";

  for (int step = 0; step < cfg.steps; ++step) {
    std::map<std::string, Tensor> grads;
    double loss_sum = 0.0;
    const double scale = 1.0 / (cfg.batch_frames * K);

    for (int b = 0; b < cfg.batch_frames; ++b) {
      const auto [s, f] = flat[batch_rng.uniform_index(flat.size())];
      const Frame& frame = train.sequences[s][f];
      const Pose3D& label = labels ? labels->poses[s][f]
                                   : frame.evaluation_ground_truth();

      Graph g;
      ParamBinder binder(g, result.params);
      const LiftForward out =
          lift_forward(binder, training_view(frame), cfg.lift, k, K);
      const Tensor& pose = g.value(out.pose);

      // per-joint L1 in metric space
      Tensor seed({K, 3});
      for (int j = 0; j < K; ++j) {
        const double dx = pose.at(j, 0) - label.joints[j].x;
        const double dy = pose.at(j, 1) - label.joints[j].y;
        const double dz = pose.at(j, 2) - label.joints[j].z;
        loss_sum += (std::fabs(dx) + std::fabs(dy) + std::fabs(dz)) * scale;
        seed.at(j, 0) = (dx > 0 ? 1.0 : (dx < 0 ? -1.0 : 0.0)) * scale;
        seed.at(j, 1) = (dy > 0 ? 1.0 : (dy < 0 ? -1.0 : 0.0)) * scale;
        seed.at(j, 2) = (dz > 0 ? 1.0 : (dz < 0 ? -1.0 : 0.0)) * scale;
      }
      g.backward_seeded(out.pose, seed);
      binder.accumulate_grads(grads);
    }

    result.params.adamw_step(grads, cfg.optimizer);
    LossReport r{};
    r.total = loss_sum;
    std::ostringstream row;
    row.precision(10);
    row << step << "," << loss_sum << "," << loss_sum;
    csv << row.str() << "\n";
    result.history.push_back(std::move(r));
  }

  result.metrics_csv = csv.str();
  ensure_dir(cfg.out_dir);
  write_text(cfg.out_dir + "/stage2_metrics.csv", result.metrics_csv);
  return result;
}

namespace {

EvalReport report_from_errors(const std::vector<std::vector<double>>& per_joint_errors) {
  const int K = static_cast<int>(per_joint_errors.size());
  EvalReport rep;
  rep.per_joint_map.assign(K, 0.0);
  rep.per_joint_err_cm.assign(K, 0.0);
  double total_err = 0.0;
  int64_t total_n = 0;
  for (int j = 0; j < K; ++j) {
    const auto& errs = per_joint_errors[j];
    int hits = 0;
    double sum = 0.0;
    for (double e : errs) {
      if (e < 0.10) ++hits;  // strict 10-cm rule
      sum += e;
    }
    rep.per_joint_map[j] = errs.empty() ? 0.0 : static_cast<double>(hits) / errs.size();
    rep.per_joint_err_cm[j] = errs.empty() ? 0.0 : 100.0 * sum / errs.size();
    rep.mean_map += rep.per_joint_map[j] / K;
    total_err += sum;
    total_n += static_cast<int64_t>(errs.size());
  }
  rep.mpjpe_cm = total_n ? 100.0 * total_err / total_n : 0.0;
  return rep;
}

}  // namespace

EvalReport evaluate(ParamStore& params, const SequenceDataset& test,
                    const RunConfig& cfg, int stage) {
  const int K = test.topology.joint_count();
  const CameraIntrinsics k = test.config.intrinsics();

  std::vector<const Frame*> frames;
  for (const auto& seq : test.sequences)
    for (const auto& f : seq) frames.push_back(&f);
  if (cfg.eval_frames > 0 && static_cast<int>(frames.size()) > cfg.eval_frames)
    frames.resize(cfg.eval_frames);

  std::vector<Pose3D> preds(frames.size());
  try {
    for_each_frame_parallel(static_cast<int>(frames.size()), [&](int i) {
      if (stage == 1) {
        Graph g;
        ParamBinder binder(g, params);
        const ValueId pose =
            point_branch_forward(binder, training_view(*frames[i]), cfg.fusion, K, k);
        preds[i] = pose_from_tensor(g.value(pose));
      } else {
        preds[i] = lift_predict_frame(params, training_view(*frames[i]), cfg.lift, k, K);
      }
    });
  } catch (const Error& e) {
    if (std::string(e.code()) == "ShapeMismatch" || std::string(e.code()) == "UnknownParam")
      throw FormatError(std::string("checkpoint incompatible with dataset: ") + e.what());
    throw;
  }

  std::vector<std::vector<double>> per_joint_errors(K);
  for (size_t i = 0; i < frames.size(); ++i) {
    const Pose3D& gt = frames[i]->evaluation_ground_truth();
    for (int j = 0; j < K; ++j)
      per_joint_errors[j].push_back((preds[i].joints[j] - gt.joints[j]).norm());
  }
  return report_from_errors(per_joint_errors);
}

EvalReport evaluate_labels(const PseudoLabels& labels, const SequenceDataset& ds) {
  const int K = ds.topology.joint_count();
  std::vector<std::vector<double>> per_joint_errors(K);
  for (size_t s = 0; s < ds.sequences.size(); ++s) {
    for (size_t f = 0; f < ds.sequences[s].size(); ++f) {
      const Pose3D& gt = ds.sequences[s][f].evaluation_ground_truth();
      for (int j = 0; j < K; ++j)
        per_joint_errors[j].push_back(
            (labels.poses[s][f].joints[j] - gt.joints[j]).norm());
    }
  }
  return report_from_errors(per_joint_errors);
}

double perturbation_sensitivity(ParamStore& params, const SequenceDataset& test,
                                const LiftConfig& cfg, double px, int max_frames) {
  const int K = test.topology.joint_count();
  const CameraIntrinsics k = test.config.intrinsics();

  std::vector<const Frame*> frames;
  for (const auto& seq : test.sequences)
    for (const auto& f : seq) frames.push_back(&f);
  if (max_frames > 0 && static_cast<int>(frames.size()) > max_frames)
    frames.resize(max_frames);

  double total = 0.0;
  int64_t count = 0;
  for (const Frame* f : frames) {
    const Pose3D base = lift_predict_frame(params, training_view(*f), cfg, k, K);
    for (int j = 0; j < K; ++j) {
      Pose2D nudged = f->pose2d;
      nudged.joints[j].u += px;
      FrameInputs inputs = training_view(*f);
      inputs.pose2d = &nudged;
      const Pose3D moved = lift_predict_frame(params, inputs, cfg, k, K);
      total += (moved.joints[j] - base.joints[j]).norm();
      ++count;
    }
  }
  return count ? total / count : 0.0;
}

std::vector<AblationRow> ablate(const RunConfig& cfg, const SequenceDataset& train,
                                const SequenceDataset& test) {
  RunConfig base = cfg;
  if (cfg.ablate_steps > 0) base.steps = cfg.ablate_steps;
  base.ablation = AblationFlags{};
  base.fusion.enable_align = true;
  base.lift.single_anchor = false;

  std::vector<AblationRow> rows;
  auto eval_variant = [&](const std::string& name, const RunConfig& variant) {
    RunConfig vc = variant;
    TrainResult tr = train_stage1(vc, train);
    const EvalReport rep = evaluate(tr.params, test, vc, 1);
    rows.push_back({name, rep.mean_map, rep.mpjpe_cm, 0.0});
    return tr;
  };

  TrainResult full = eval_variant("full", base);

  if (cfg.groups.manner) {
    RunConfig v = base;
    v.ablation.loss_manner = SupervisionManner::kProject3dTo2d;
    eval_variant("manner_3d2d", v);
  }
  if (cfg.groups.selfsup) {
    RunConfig v = base;
    v.ablation.disable_bone = true;
    eval_variant("wo_bone", v);
    v = base;
    v.ablation.disable_sym = true;
    eval_variant("wo_sym", v);
    v = base;
    v.ablation.disable_con = true;
    eval_variant("wo_con", v);
  }
  if (cfg.groups.fusion) {
    RunConfig v = base;
    v.ablation.disable_fusion = true;
    v.fusion.enable_align = false;
    eval_variant("wo_fusion", v);
  }

  if (cfg.groups.stage2) {
    const PseudoLabels labels = predict_stage1(full.params, train, base.fusion);
    const EvalReport label_quality = evaluate(full.params, test, base, 1);
    rows.push_back({"pseudo_label_quality", label_quality.mean_map,
                    label_quality.mpjpe_cm, 0.0});

    RunConfig s2 = base;
    s2.stage = 2;
    TrainResult gt_run = train_stage2(s2, train, nullptr);
    const EvalReport gt_rep = evaluate(gt_run.params, test, s2, 2);
    rows.push_back({"stage2_gt", gt_rep.mean_map, gt_rep.mpjpe_cm, 0.0});

    TrainResult pseudo_run = train_stage2(s2, train, &labels);
    const EvalReport ps_rep = evaluate(pseudo_run.params, test, s2, 2);
    const double sens =
        perturbation_sensitivity(pseudo_run.params, test, s2.lift, 40.0, 12);
    rows.push_back({"stage2_pseudo", ps_rep.mean_map, ps_rep.mpjpe_cm, sens});

    RunConfig sa = s2;
    sa.ablation.single_anchor_baseline = true;
    sa.lift.single_anchor = true;
    TrainResult sa_run = train_stage2(sa, train, &labels);
    const EvalReport sa_rep = evaluate(sa_run.params, test, sa, 2);
    const double sa_sens =
        perturbation_sensitivity(sa_run.params, test, sa.lift, 40.0, 12);
    rows.push_back({"stage2_single_anchor", sa_rep.mean_map, sa_rep.mpjpe_cm, sa_sens});

    ensure_dir(cfg.out_dir);
    write_anchor_dump(pseudo_run.params, s2.lift, test.config,
                      test.topology.joint_count(), cfg.out_dir + "/anchors.json");
  }

  ensure_dir(cfg.out_dir);
  write_ablation_csv(rows, cfg.out_dir + "/ablation.csv");
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ostringstream os;
  os.precision(10);
  os << "variant,mean_map,mpjpe_cm,extra\n";
  for (const auto& r : rows)
    os << r.variant << "," << r.mean_map << "," << r.mpjpe_cm << "," << r.extra << "\n";
  write_text(path, os.str());
}

void write_anchor_dump(ParamStore& params, const LiftConfig& cfg, const SimConfig& sim,
                       int joint_count, const std::string& path) {
  nlohmann::json j;
  j["n_local"] = cfg.local_per_joint();
  j["n_global"] = cfg.n_global();
  j["image"] = {{"width", sim.image_width}, {"height", sim.image_height}};

  const Tensor& duv = params.value("lift/anchors/duv");
  const Tensor& dz = params.value("lift/anchors/dz");
  nlohmann::json local = nlohmann::json::array();
  const int nl = cfg.local_per_joint();
  for (int jj = 0; jj < joint_count; ++jj) {
    nlohmann::json anchors = nlohmann::json::array();
    for (int i = 0; i < nl; ++i) {
      const int64_t row = static_cast<int64_t>(jj) * nl + i;
      anchors.push_back({duv.at(row, 0), duv.at(row, 1), dz.at(row, 0)});
    }
    local.push_back({{"joint", jj}, {"offsets_uvz", anchors}});
  }
  j["local"] = std::move(local);

  nlohmann::json grid = nlohmann::json::array();
  for (int gy = 0; gy < cfg.grid_h && cfg.n_global() > 0; ++gy)
    for (int gx = 0; gx < cfg.grid_w; ++gx)
      grid.push_back({(gx + 0.5) * sim.image_width / cfg.grid_w,
                      (gy + 0.5) * sim.image_height / cfg.grid_h, 0.0});
  j["global"] = std::move(grid);

  write_text(path, j.dump(2) + "\n");
}

}  // namespace unipose
