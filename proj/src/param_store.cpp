#include "unipose/param_store.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "unipose/base64.hpp"
#include "unipose/kernels.hpp"

namespace unipose::diff {

Tensor& ParamStore::create(const std::string& name, std::vector<int64_t> shape,
                           Init init, Rng& rng) {
  if (params_.count(name)) throw Error("DuplicateParam", "parameter exists: " + name);
  Param p;
  p.value = Tensor(shape);
  p.m = Tensor(shape);
  p.v = Tensor(shape);
  if (init == Init::kXavierUniform) {
    // fan_in/fan_out from the trailing two extents; vectors fall back to numel
    int64_t fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : p.value.numel();
    int64_t fan_out = shape.size() >= 2 ? shape[shape.size() - 1] : p.value.numel();
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : p.value.data) v = rng.uniform(-bound, bound);
  }
  auto [it, ok] = params_.emplace(name, std::move(p));
  (void)ok;
  return it->second.value;
}

Tensor& ParamStore::create_with(const std::string& name, Tensor value) {
  if (params_.count(name)) throw Error("DuplicateParam", "parameter exists: " + name);
  Param p;
  p.m = Tensor(value.shape);
  p.v = Tensor(value.shape);
  p.value = std::move(value);
  auto [it, ok] = params_.emplace(name, std::move(p));
  (void)ok;
  return it->second.value;
}

Tensor& ParamStore::value(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("UnknownParam", "no parameter named " + name);
  return it->second.value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("UnknownParam", "no parameter named " + name);
  return it->second.value;
}

void ParamStore::adamw_step(const std::map<std::string, Tensor>& grads,
                            const AdamWConfig& cfg) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (auto& [name, p] : params_) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    if (!g.same_shape(p.value))
      throw ShapeMismatch("adamw_step: gradient shape mismatch for " + name);
    check_finite(g, "adamw_step");
    kernels::active().adamw(p.value.data.data(), g.data.data(), p.m.data.data(),
                            p.v.data.data(), p.value.data.size(), cfg.lr,
                            cfg.weight_decay, cfg.beta1, cfg.beta2, bc1, bc2, cfg.eps);
  }
}

void ParamStore::save(const std::string& path) const {
  nlohmann::json j;
  j["format"] = "unipose-checkpoint";
  j["version"] = 1;
  j["step"] = step_;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, p] : params_) {
    nlohmann::json entry;
    entry["shape"] = p.value.shape;
    entry["value"] = encode_f64(p.value.data);
    entry["m"] = encode_f64(p.m.data);
    entry["v"] = encode_f64(p.v.data);
    params[name] = std::move(entry);
  }
  j["params"] = std::move(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << j.dump() << "\n";
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

void ParamBinder::accumulate_grads(std::map<std::string, Tensor>& sink) const {
  for (const auto& [name, id] : bound_) {
    if (!graph_.has_grad(id)) continue;
    const Tensor& g = graph_.grad(id);
    auto it = sink.find(name);
    if (it == sink.end()) {
      sink.emplace(name, g);
    } else {
      if (!it->second.same_shape(g))
        throw ShapeMismatch("accumulate_grads: shape drift for " + name);
      kernels::active().add(it->second.data.data(), g.data.data(),
                            it->second.data.data(), g.data.size());
    }
  }
}

ParamStore ParamStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint parse failure: ") + e.what());
  }
  if (j.value("format", "") != "unipose-checkpoint" || j.value("version", 0) != 1)
    throw FormatError("checkpoint format/version mismatch");
  ParamStore store;
  store.step_ = j.at("step").get<int64_t>();
  for (const auto& [name, entry] : j.at("params").items()) {
    Param p;
    p.value.shape = entry.at("shape").get<std::vector<int64_t>>();
    p.value.data = decode_f64(entry.at("value").get<std::string>());
    p.m.shape = p.value.shape;
    p.m.data = decode_f64(entry.at("m").get<std::string>());
    p.v.shape = p.value.shape;
    p.v.data = decode_f64(entry.at("v").get<std::string>());
    if (p.value.numel() != Tensor::numel_of(p.value.shape) ||
        p.m.data.size() != p.value.data.size() || p.v.data.size() != p.value.data.size())
      throw FormatError("checkpoint payload size mismatch for " + name);
    store.params_.emplace(name, std::move(p));
  }
  return store;
}

}  // namespace unipose::diff
