// Dataset persistence: one JSON header line, then one JSON line per frame
// with base64 little-endian float32 payloads for cloud and pyramid data.

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "unipose/base64.hpp"
#include "unipose/simkit.hpp"

namespace unipose {
namespace {

using nlohmann::json;

json intrinsics_json(const SimConfig& c) {
  return json{{"fx", c.fx},           {"fy", c.fy},
              {"cx", c.cx},           {"cy", c.cy},
              {"width", c.image_width}, {"height", c.image_height}};
}

json topology_json(const SkeletonTopology& t) {
  return json{{"joint_names", t.joint_names},
              {"bones", t.bones},
              {"symmetric_pairs", t.symmetric_pairs},
              {"rest_lengths", t.rest_lengths}};
}

SkeletonTopology topology_from_json(const json& j) {
  SkeletonTopology t;
  t.joint_names = j.at("joint_names").get<std::vector<std::string>>();
  t.bones = j.at("bones").get<std::vector<std::pair<int, int>>>();
  t.symmetric_pairs = j.at("symmetric_pairs").get<std::vector<std::pair<int, int>>>();
  t.rest_lengths = j.at("rest_lengths").get<std::vector<double>>();
  return t;
}

json config_json(const SimConfig& c) {
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

SimConfig config_from_json(const json& j) {
  SimConfig c;
  c.n_sequences = j.at("n_sequences").get<int>();
  c.frames_per_sequence = j.at("frames_per_sequence").get<int>();
  c.frame_rate = j.at("frame_rate").get<double>();
  c.n_points = j.at("n_points").get<int>();
  c.cloud_noise_sigma = j.at("cloud_noise_sigma").get<double>();
  c.pixel_sigma = j.at("pixel_sigma").get<double>();
  c.outlier_rate = j.at("outlier_rate").get<double>();
  c.image_height = j.at("image_height").get<int>();
  c.image_width = j.at("image_width").get<int>();
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.pyramid_levels = j.at("pyramid_levels").get<int>();
  c.pyramid_base_height = j.at("pyramid_base_height").get<int>();
  c.pyramid_base_width = j.at("pyramid_base_width").get<int>();
  c.heatmap_channels_per_joint = j.at("heatmap_channels_per_joint").get<int>();
  c.heatmap_sigma = j.at("heatmap_sigma").get<double>();
  c.heatmap_noise = j.at("heatmap_noise").get<double>();
  c.motion_mode = j.at("motion_mode").get<std::string>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

json pyramid_payload(const PyramidFeatures& p) {
  json levels = json::array();
  for (const auto& l : p.levels) levels.push_back(encode_f32(l.data));
  return levels;
}

PyramidFeatures pyramid_from_payload(const json& levels, const SimConfig& cfg,
                                     int channels) {
  PyramidFeatures p;
  int li = 0;
  for (const auto& blob : levels) {
    PyramidFeatures::Level level;
    level.height = std::max(1, cfg.pyramid_base_height >> li);
    level.width = std::max(1, cfg.pyramid_base_width >> li);
    level.channels = channels;
    level.data = decode_f32(blob.get<std::string>());
    if (static_cast<int>(level.data.size()) != level.height * level.width * channels)
      throw FormatError("pyramid level payload size mismatch");
    p.levels.push_back(std::move(level));
    ++li;
  }
  if (li != cfg.pyramid_levels) throw FormatError("pyramid level count mismatch");
  return p;
}

}  // namespace

void write_dataset(const SequenceDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open dataset for writing: " + path);

  json header{{"format", "unipose-dataset"},
              {"version", 1},
              {"intrinsics", intrinsics_json(ds.config)},
              {"topology", topology_json(ds.topology)},
              {"config", config_json(ds.config)}};
  out << header.dump() << "\n";

  for (const auto& seq : ds.sequences) {
    for (const Frame& f : seq) {
      std::vector<double> u, v;
      u.reserve(f.pose2d.joints.size());
      v.reserve(f.pose2d.joints.size());
      for (const auto& px : f.pose2d.joints) {
        u.push_back(px.u);
        v.push_back(px.v);
      }
      std::vector<double> gt;
      gt.reserve(f.evaluation_ground_truth().joints.size() * 3);
      for (const auto& j : f.evaluation_ground_truth().joints) {
        gt.push_back(j.x);
        gt.push_back(j.y);
        gt.push_back(j.z);
      }
      json line{{"seq", f.seq_index},
                {"frame", f.frame_index},
                {"u", u},
                {"v", v},
                {"conf", f.pose2d.confidence},
                {"cloud", encode_f32(f.cloud)},
                {"rgb", pyramid_payload(f.rgb_pyramid)},
                {"depth", pyramid_payload(f.depth_pyramid)},
                {"gt", encode_f64(gt)}};
      out << line.dump() << "\n";
    }
  }
  if (!out) throw IoError("failed writing dataset: " + path);
}

SequenceDataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path);

  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset: missing header line");
  json header;
  try {
    header = json::parse(line);
  } catch (const std::exception& e) {
    throw FormatError(std::string("dataset header parse failure: ") + e.what());
  }
  if (header.value("format", "") != "unipose-dataset" || header.value("version", 0) != 1)
    throw FormatError("dataset format/version mismatch");

  SequenceDataset ds;
  ds.config = config_from_json(header.at("config"));
  ds.topology = topology_from_json(header.at("topology"));
  ds.sequences.resize(ds.config.n_sequences);
  const int K = ds.topology.joint_count();
  const int cpj = ds.config.heatmap_channels_per_joint;

  int n_lines = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw FormatError(std::string("dataset frame parse failure: ") + e.what());
    }
    Frame f;
    f.seq_index = j.at("seq").get<int>();
    f.frame_index = j.at("frame").get<int>();
    if (f.seq_index < 0 || f.seq_index >= ds.config.n_sequences)
      throw FormatError("dataset frame: sequence index out of range");
    const auto u = j.at("u").get<std::vector<double>>();
    const auto v = j.at("v").get<std::vector<double>>();
    f.pose2d.confidence = j.at("conf").get<std::vector<double>>();
    if (static_cast<int>(u.size()) != K || static_cast<int>(v.size()) != K ||
        static_cast<int>(f.pose2d.confidence.size()) != K)
      throw FormatError("dataset frame: bad 2d pose arity");
    f.pose2d.joints.resize(K);
    for (int k = 0; k < K; ++k) f.pose2d.joints[k] = {u[k], v[k]};
    f.cloud = decode_f32(j.at("cloud").get<std::string>());
    if (static_cast<int>(f.cloud.size()) != ds.config.n_points * 3)
      throw FormatError("dataset frame: cloud payload size mismatch");
    f.rgb_pyramid = pyramid_from_payload(j.at("rgb"), ds.config, K * cpj);
    f.depth_pyramid = pyramid_from_payload(j.at("depth"), ds.config, K * cpj + 1);
    const auto gt = decode_f64(j.at("gt").get<std::string>());
    if (static_cast<int>(gt.size()) != K * 3)
      throw FormatError("dataset frame: gt payload size mismatch");
    Pose3D gtp;
    gtp.joints.resize(K);
    for (int k = 0; k < K; ++k) gtp.joints[k] = {gt[k * 3], gt[k * 3 + 1], gt[k * 3 + 2]};
    f.set_ground_truth(std::move(gtp));
    ds.sequences[f.seq_index].push_back(std::move(f));
    ++n_lines;
  }
  if (n_lines != ds.config.n_sequences * ds.config.frames_per_sequence)
    throw FormatError("dataset: truncated frame section");
  for (auto& seq : ds.sequences) {
    std::sort(seq.begin(), seq.end(),
              [](const Frame& a, const Frame& b) { return a.frame_index < b.frame_index; });
  }
  return ds;
}

}  // namespace unipose
