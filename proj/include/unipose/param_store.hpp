#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "unipose/graph.hpp"
#include "unipose/rng.hpp"
#include "unipose/tensor.hpp"

namespace unipose::diff {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named trainable tensors with paired AdamW state. Iteration order is the
// map's (lexicographic), which keeps updates and checkpoints deterministic.
class ParamStore {
 public:
  enum class Init { kZeros, kXavierUniform };

  Tensor& create(const std::string& name, std::vector<int64_t> shape, Init init,
                 Rng& rng);
  Tensor& create_with(const std::string& name, Tensor value);

  bool has(const std::string& name) const { return params_.count(name) != 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  int64_t step_count() const { return step_; }
  size_t size() const { return params_.size(); }

  // Updates parameters that have an entry in grads; parameters without a
  // gradient this step are left untouched. The step count increments once.
  void adamw_step(const std::map<std::string, Tensor>& grads, const AdamWConfig& cfg);

  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [name, p] : params_) fn(name, p.value);
  }

 private:
  struct Param {
    Tensor value;
    Tensor m;
    Tensor v;
  };
  std::map<std::string, Param> params_;
  int64_t step_ = 0;
};

// Binds store parameters into a graph as named leaves (once per graph) and
// harvests their gradients after backward.
class ParamBinder {
 public:
  ParamBinder(Graph& graph, ParamStore& store) : graph_(graph), store_(store) {}

  ValueId operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const ValueId id = graph_.leaf_ref(&store_.value(name), name);
    bound_.emplace(name, id);
    return id;
  }

  Graph& graph() { return graph_; }
  ParamStore& store() { return store_; }

  // sums gradients into `sink`, creating zero-filled entries as needed;
  // leaves that received no gradient are skipped
  void accumulate_grads(std::map<std::string, Tensor>& sink) const;

 private:
  Graph& graph_;
  ParamStore& store_;
  std::map<std::string, ValueId> bound_;
};

}  // namespace unipose::diff
