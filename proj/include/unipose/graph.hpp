#pragma once

#include <functional>
#include <string>
#include <vector>

#include "unipose/geometry.hpp"
#include "unipose/tensor.hpp"

namespace unipose::diff {

using ValueId = int32_t;

// Reverse-mode tape over dense tensors. Each recorded op stores a closure
// that routes the node's gradient into its parents; backward() walks the
// tape in reverse. Graphs are single-threaded; independent forward passes
// use independent graphs.
class Graph {
 public:
  // leaves
  ValueId constant(Tensor t);              // no gradient tracked
  ValueId leaf(Tensor t);                  // gradient tracked
  ValueId leaf(Tensor t, std::string name);
  // non-owning leaf over caller-kept storage (parameters); the tensor must
  // outlive the graph and is not finite-checked here
  ValueId leaf_ref(const Tensor* t, std::string name);

  // core ops (forward + registered backward)
  ValueId matmul(ValueId a, ValueId b);
  ValueId transpose(ValueId a);
  ValueId add(ValueId a, ValueId b);
  ValueId sub(ValueId a, ValueId b);
  ValueId mul(ValueId a, ValueId b);       // hadamard
  ValueId add_rowvec(ValueId a, ValueId bias);  // (n,c) + (1,c)
  ValueId scale(ValueId a, double s);
  ValueId relu(ValueId a);
  ValueId softmax(ValueId a, int axis);    // 2-d, axis 0 or 1
  // softmax over axis 0 restricted to mask!=0 entries; masked outputs are 0
  ValueId softmax_axis0_masked(ValueId a, const std::vector<uint8_t>& mask);
  ValueId concat(ValueId a, ValueId b, int axis);
  ValueId mean_all(ValueId a);             // -> scalar (1,)
  ValueId sum_all(ValueId a);              // -> scalar (1,)
  ValueId max_pool_rows(ValueId a);        // (n,c) -> (1,c), argmax backward
  ValueId layer_norm(ValueId a, ValueId gamma, ValueId beta);  // per row
  ValueId gather_rows(ValueId a, std::vector<int32_t> idx);
  ValueId tile_rows(ValueId a, int64_t n); // (1,c) -> (n,c)
  ValueId slice_cols(ValueId a, int64_t lo, int64_t hi);
  ValueId reshape(ValueId a, std::vector<int64_t> shape);
  // out[k,c] = sum_a w[a,k] * o[a,k,c]
  ValueId weighted_offset_sum(ValueId w, ValueId o);
  // rows of (u,v,depth) -> camera-frame xyz; depth clamped at eps with zero
  // gradient below the clamp; *clamped reports whether any row was clamped
  ValueId uvd_to_xyz(ValueId uvd, const CameraIntrinsics& k, double eps,
                     bool* clamped = nullptr);

  // execution
  void backward(ValueId out);                              // scalar outputs
  void backward_seeded(ValueId out, const Tensor& seed);   // arbitrary outputs
  const Tensor& value(ValueId id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  const Tensor& grad(ValueId id) const;
  bool has_grad(ValueId id) const { return nodes_[id].grad_ready; }
  bool requires_grad(ValueId id) const { return nodes_[id].requires_grad; }
  const std::string& leaf_name(ValueId id) const { return nodes_[id].name; }
  std::vector<ValueId> named_leaves() const;
  int64_t node_count() const { return static_cast<int64_t>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;  // set for leaf_ref nodes
    Tensor grad;                 // allocated lazily in backward
    bool requires_grad = false;
    bool grad_ready = false;
    std::string name;            // nonempty only for named leaves
    std::function<void(Graph&)> backprop;  // null for leaves/constants
  };

  ValueId push(Tensor value, bool requires_grad, std::function<void(Graph&)> backprop,
               const char* op_name);
  Tensor& grad_buffer(ValueId id);
  void run_backward(ValueId out, Tensor seed);

  std::vector<Node> nodes_;
};

// softmax(q kᵀ / sqrt(c)) v ; shapes (m,c), (n,c), (n,c) -> (m,c)
ValueId attention(Graph& g, ValueId q, ValueId k, ValueId v);

// multi-head wrapper: splits channels into `heads` groups, applies attention
// per group, concatenates
ValueId multihead_attention(Graph& g, ValueId q, ValueId k, ValueId v, int heads);

// y = relu(x w + b); w (c_in,c_out), b (1,c_out)
ValueId linear_relu(Graph& g, ValueId x, ValueId w, ValueId b);
ValueId linear(Graph& g, ValueId x, ValueId w, ValueId b);

// Shared-MLP point encoder with max pooling: per-point features pass through
// two affine+relu layers, a coordinate-wise max over points forms the global
// vector, and the per-point output re-projects [local, global] to c channels.
struct PointEncoderParams {
  ValueId w1, b1, w2, b2, w3, b3;
};
struct PointEncoderOut {
  ValueId per_point;  // (n, c)
  ValueId global;     // (1, c)
};
PointEncoderOut point_encoder(Graph& g, ValueId cloud_features,
                              const PointEncoderParams& p);

}  // namespace unipose::diff
