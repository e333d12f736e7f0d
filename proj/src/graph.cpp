#include "unipose/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "unipose/kernels.hpp"

namespace unipose::diff {

using kernels::active;

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw ShapeMismatch(msg);
}

}  // namespace

ValueId Graph::push(Tensor value, bool requires_grad,
                    std::function<void(Graph&)> backprop, const char* op_name) {
  check_finite(value, op_name);
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<ValueId>(nodes_.size() - 1);
}

Tensor& Graph::grad_buffer(ValueId id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    n.grad = Tensor(value(id).shape);
    n.grad_ready = true;
  }
  return n.grad;
}

const Tensor& Graph::grad(ValueId id) const {
  const Node& n = nodes_[id];
  if (!n.grad_ready) throw Error("NoGradient", "gradient not computed for node");
  return n.grad;
}

std::vector<ValueId> Graph::named_leaves() const {
  std::vector<ValueId> out;
  for (ValueId i = 0; i < static_cast<ValueId>(nodes_.size()); ++i) {
    if (!nodes_[i].name.empty()) out.push_back(i);
  }
  return out;
}

ValueId Graph::constant(Tensor t) { return push(std::move(t), false, nullptr, "constant"); }

ValueId Graph::leaf(Tensor t) { return push(std::move(t), true, nullptr, "leaf"); }

ValueId Graph::leaf(Tensor t, std::string name) {
  const ValueId id = push(std::move(t), true, nullptr, "leaf");
  nodes_[id].name = std::move(name);
  return id;
}

ValueId Graph::leaf_ref(const Tensor* t, std::string name) {
  Node n;
  n.external = t;
  n.requires_grad = true;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return static_cast<ValueId>(nodes_.size() - 1);
}

ValueId Graph::matmul(ValueId a, ValueId b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rank() == 2 && tb.rank() == 2 && ta.shape[1] == tb.shape[0],
          "matmul: incompatible shapes");
  const int64_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
  Tensor out({m, n});
  active().matmul_nn(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "matmul");
  if (rg) {
    nodes_[id].backprop = [id, a, b, m, k, n](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      if (g.nodes_[a].requires_grad) {
        Tensor& ga = g.grad_buffer(a);
        active().matmul_nt(gout.data.data(), g.value(b).data.data(),
                           ga.data.data(), m, n, k);
      }
      if (g.nodes_[b].requires_grad) {
        Tensor& gb = g.grad_buffer(b);
        active().matmul_tn(g.value(a).data.data(), gout.data.data(),
                           gb.data.data(), k, m, n);
      }
    };
  }
  return id;
}

ValueId Graph::transpose(ValueId a) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2, "transpose: rank-2 required");
  const int64_t r = ta.shape[0], c = ta.shape[1];
  Tensor out({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.data[j * r + i] = ta.data[i * c + j];
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "transpose");
  if (rg) {
    nodes_[id].backprop = [id, a, r, c](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      Tensor& ga = g.grad_buffer(a);
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) ga.data[i * c + j] += gout.data[j * r + i];
    };
  }
  return id;
}

ValueId Graph::add(ValueId a, ValueId b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb), "add: shape mismatch");
  Tensor out(ta.shape);
  active().add(ta.data.data(), tb.data.data(), out.data.data(), out.data.size());
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "add");
  if (rg) {
    nodes_[id].backprop = [id, a, b](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      if (g.nodes_[a].requires_grad)
        active().axpy(1.0, gout.data.data(), g.grad_buffer(a).data.data(), gout.data.size());
      if (g.nodes_[b].requires_grad)
        active().axpy(1.0, gout.data.data(), g.grad_buffer(b).data.data(), gout.data.size());
    };
  }
  return id;
}

ValueId Graph::sub(ValueId a, ValueId b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb), "sub: shape mismatch");
  Tensor out(ta.shape);
  active().sub(ta.data.data(), tb.data.data(), out.data.data(), out.data.size());
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "sub");
  if (rg) {
    nodes_[id].backprop = [id, a, b](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      if (g.nodes_[a].requires_grad)
        active().axpy(1.0, gout.data.data(), g.grad_buffer(a).data.data(), gout.data.size());
      if (g.nodes_[b].requires_grad)
        active().axpy(-1.0, gout.data.data(), g.grad_buffer(b).data.data(), gout.data.size());
    };
  }
  return id;
}

ValueId Graph::mul(ValueId a, ValueId b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb), "mul: shape mismatch");
  Tensor out(ta.shape);
  active().mul(ta.data.data(), tb.data.data(), out.data.data(), out.data.size());
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "mul");
  if (rg) {
    nodes_[id].backprop = [id, a, b](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      const size_t n = gout.data.size();
      if (g.nodes_[a].requires_grad) {
        Tensor& ga = g.grad_buffer(a);
        const double* bv = g.value(b).data.data();
        const double* go = gout.data.data();
        for (size_t i = 0; i < n; ++i) ga.data[i] += go[i] * bv[i];
      }
      if (g.nodes_[b].requires_grad) {
        Tensor& gb = g.grad_buffer(b);
        const double* av = g.value(a).data.data();
        const double* go = gout.data.data();
        for (size_t i = 0; i < n; ++i) gb.data[i] += go[i] * av[i];
      }
    };
  }
  return id;
}

ValueId Graph::add_rowvec(ValueId a, ValueId bias) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(bias);
  require(ta.rank() == 2 && tb.rank() == 2 && tb.shape[0] == 1 &&
              tb.shape[1] == ta.shape[1],
          "add_rowvec: bias must be (1,c)");
  const int64_t r = ta.shape[0], c = ta.shape[1];
  Tensor out(ta.shape);
  for (int64_t i = 0; i < r; ++i)
    active().add(ta.data.data() + i * c, tb.data.data(), out.data.data() + i * c, c);
  const bool rg = nodes_[a].requires_grad || nodes_[bias].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "add_rowvec");
  if (rg) {
    nodes_[id].backprop = [id, a, bias, r, c](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      if (g.nodes_[a].requires_grad)
        active().axpy(1.0, gout.data.data(), g.grad_buffer(a).data.data(), gout.data.size());
      if (g.nodes_[bias].requires_grad) {
        Tensor& gb = g.grad_buffer(bias);
        for (int64_t i = 0; i < r; ++i)
          active().axpy(1.0, gout.data.data() + i * c, gb.data.data(), c);
      }
    };
  }
  return id;
}

ValueId Graph::scale(ValueId a, double s) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape);
  active().scale(ta.data.data(), s, out.data.data(), out.data.size());
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "scale");
  if (rg) {
    nodes_[id].backprop = [id, a, s](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      active().axpy(s, gout.data.data(), g.grad_buffer(a).data.data(), gout.data.size());
    };
  }
  return id;
}

ValueId Graph::relu(ValueId a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape);
  active().relu(ta.data.data(), out.data.data(), out.data.size());
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "relu");
  if (rg) {
    nodes_[id].backprop = [id, a](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      active().relu_backward(g.value(a).data.data(), gout.data.data(),
                             g.grad_buffer(a).data.data(), gout.data.size());
    };
  }
  return id;
}

ValueId Graph::softmax(ValueId a, int axis) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2 && (axis == 0 || axis == 1), "softmax: rank-2, axis 0|1");
  const int64_t r = ta.shape[0], c = ta.shape[1];
  Tensor out(ta.shape);
  if (axis == 1) {
    for (int64_t i = 0; i < r; ++i) {
      const double* x = ta.data.data() + i * c;
      double* y = out.data.data() + i * c;
      double mx = x[0];
      for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
      double sum = 0.0;
      for (int64_t j = 0; j < c; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
      }
      for (int64_t j = 0; j < c; ++j) y[j] /= sum;
    }
  } else {
    for (int64_t j = 0; j < c; ++j) {
      double mx = ta.data[j];
      for (int64_t i = 1; i < r; ++i) mx = std::max(mx, ta.data[i * c + j]);
      double sum = 0.0;
      for (int64_t i = 0; i < r; ++i) {
        const double e = std::exp(ta.data[i * c + j] - mx);
        out.data[i * c + j] = e;
        sum += e;
      }
      for (int64_t i = 0; i < r; ++i) out.data[i * c + j] /= sum;
    }
  }
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "softmax");
  if (rg) {
    nodes_[id].backprop = [id, a, axis, r, c](Graph& g) {
      const Tensor& y = g.value(id);
      const Tensor& gy = g.nodes_[id].grad;
      Tensor& gx = g.grad_buffer(a);
      if (axis == 1) {
        for (int64_t i = 0; i < r; ++i) {
          const double* yi = y.data.data() + i * c;
          const double* gi = gy.data.data() + i * c;
          const double dotv = active().dot(yi, gi, c);
          double* gxi = gx.data.data() + i * c;
          for (int64_t j = 0; j < c; ++j) gxi[j] += yi[j] * (gi[j] - dotv);
        }
      } else {
        for (int64_t j = 0; j < c; ++j) {
          double dotv = 0.0;
          for (int64_t i = 0; i < r; ++i) dotv += y.data[i * c + j] * gy.data[i * c + j];
          for (int64_t i = 0; i < r; ++i)
            gx.data[i * c + j] += y.data[i * c + j] * (gy.data[i * c + j] - dotv);
        }
      }
    };
  }
  return id;
}

ValueId Graph::softmax_axis0_masked(ValueId a, const std::vector<uint8_t>& mask) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2, "softmax_axis0_masked: rank-2 required");
  const int64_t r = ta.shape[0], c = ta.shape[1];
  require(static_cast<int64_t>(mask.size()) == r * c,
          "softmax_axis0_masked: mask size mismatch");
  Tensor out(ta.shape);
  for (int64_t j = 0; j < c; ++j) {
    double mx = -1e300;
    for (int64_t i = 0; i < r; ++i)
      if (mask[i * c + j]) mx = std::max(mx, ta.data[i * c + j]);
    require(mx > -1e300, "softmax_axis0_masked: empty column scope");
    double sum = 0.0;
    for (int64_t i = 0; i < r; ++i) {
      if (mask[i * c + j]) {
        const double e = std::exp(ta.data[i * c + j] - mx);
        out.data[i * c + j] = e;
        sum += e;
      }
    }
    for (int64_t i = 0; i < r; ++i)
      if (mask[i * c + j]) out.data[i * c + j] /= sum;
  }
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "softmax_axis0_masked");
  if (rg) {
    nodes_[id].backprop = [id, a, mask, r, c](Graph& g) {
      const Tensor& y = g.value(id);
      const Tensor& gy = g.nodes_[id].grad;
      Tensor& gx = g.grad_buffer(a);
      for (int64_t j = 0; j < c; ++j) {
        double dotv = 0.0;
        for (int64_t i = 0; i < r; ++i)
          if (mask[i * c + j]) dotv += y.data[i * c + j] * gy.data[i * c + j];
        for (int64_t i = 0; i < r; ++i)
          if (mask[i * c + j])
            gx.data[i * c + j] += y.data[i * c + j] * (gy.data[i * c + j] - dotv);
      }
    };
  }
  return id;
}

ValueId Graph::concat(ValueId a, ValueId b, int axis) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rank() == 2 && tb.rank() == 2 && (axis == 0 || axis == 1),
          "concat: rank-2, axis 0|1");
  Tensor out;
  const int64_t ra = ta.shape[0], ca = ta.shape[1];
  const int64_t rb = tb.shape[0], cb = tb.shape[1];
  if (axis == 0) {
    require(ca == cb, "concat axis 0: column mismatch");
    out = Tensor({ra + rb, ca});
    std::memcpy(out.data.data(), ta.data.data(), ta.data.size() * sizeof(double));
    std::memcpy(out.data.data() + ta.data.size(), tb.data.data(),
                tb.data.size() * sizeof(double));
  } else {
    require(ra == rb, "concat axis 1: row mismatch");
    out = Tensor({ra, ca + cb});
    for (int64_t i = 0; i < ra; ++i) {
      std::memcpy(out.data.data() + i * (ca + cb), ta.data.data() + i * ca,
                  ca * sizeof(double));
      std::memcpy(out.data.data() + i * (ca + cb) + ca, tb.data.data() + i * cb,
                  cb * sizeof(double));
    }
  }
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "concat");
  if (rg) {
    nodes_[id].backprop = [id, a, b, axis, ra, ca, rb, cb](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      if (axis == 0) {
        if (g.nodes_[a].requires_grad)
          active().axpy(1.0, gout.data.data(), g.grad_buffer(a).data.data(), ra * ca);
        if (g.nodes_[b].requires_grad)
          active().axpy(1.0, gout.data.data() + ra * ca, g.grad_buffer(b).data.data(),
                        rb * cb);
      } else {
        if (g.nodes_[a].requires_grad) {
          Tensor& ga = g.grad_buffer(a);
          for (int64_t i = 0; i < ra; ++i)
            active().axpy(1.0, gout.data.data() + i * (ca + cb), ga.data.data() + i * ca,
                          ca);
        }
        if (g.nodes_[b].requires_grad) {
          Tensor& gb = g.grad_buffer(b);
          for (int64_t i = 0; i < ra; ++i)
            active().axpy(1.0, gout.data.data() + i * (ca + cb) + ca,
                          gb.data.data() + i * cb, cb);
        }
      }
    };
  }
  return id;
}

ValueId Graph::mean_all(ValueId a) {
  const Tensor& ta = value(a);
  const int64_t n = ta.numel();
  Tensor out({1});
  out.data[0] = active().sum(ta.data.data(), n) / static_cast<double>(n);
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "mean_all");
  if (rg) {
    nodes_[id].backprop = [id, a, n](Graph& g) {
      const double gs = g.nodes_[id].grad.data[0] / static_cast<double>(n);
      Tensor& ga = g.grad_buffer(a);
      for (double& v : ga.data) v += gs;
    };
  }
  return id;
}

ValueId Graph::sum_all(ValueId a) {
  const Tensor& ta = value(a);
  Tensor out({1});
  out.data[0] = active().sum(ta.data.data(), ta.numel());
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "sum_all");
  if (rg) {
    nodes_[id].backprop = [id, a](Graph& g) {
      const double gs = g.nodes_[id].grad.data[0];
      Tensor& ga = g.grad_buffer(a);
      for (double& v : ga.data) v += gs;
    };
  }
  return id;
}

ValueId Graph::max_pool_rows(ValueId a) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2 && ta.shape[0] >= 1, "max_pool_rows: rank-2, >=1 row");
  const int64_t r = ta.shape[0], c = ta.shape[1];
  Tensor out({1, c});
  auto arg = std::make_shared<std::vector<int32_t>>(c, 0);
  std::memcpy(out.data.data(), ta.data.data(), c * sizeof(double));
  for (int64_t i = 1; i < r; ++i)
    active().rowmax_update(ta.data.data() + i * c, out.data.data(), arg->data(),
                           static_cast<int32_t>(i), c);
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "max_pool_rows");
  if (rg) {
    nodes_[id].backprop = [id, a, arg, c](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      Tensor& ga = g.grad_buffer(a);
      for (int64_t j = 0; j < c; ++j) ga.data[(*arg)[j] * c + j] += gout.data[j];
    };
  }
  return id;
}

ValueId Graph::layer_norm(ValueId a, ValueId gamma, ValueId beta) {
  const Tensor& ta = value(a);
  const Tensor& tg = value(gamma);
  const Tensor& tb = value(beta);
  require(ta.rank() == 2, "layer_norm: rank-2 required");
  const int64_t r = ta.shape[0], c = ta.shape[1];
  require(tg.rank() == 2 && tg.shape[0] == 1 && tg.shape[1] == c &&
              tb.same_shape(tg),
          "layer_norm: gamma/beta must be (1,c)");
  constexpr double kEps = 1e-5;
  Tensor out(ta.shape);
  auto xhat = std::make_shared<Tensor>(ta.shape);
  auto inv_sigma = std::make_shared<std::vector<double>>(r, 0.0);
  for (int64_t i = 0; i < r; ++i) {
    const double* x = ta.data.data() + i * c;
    double mu = active().sum(x, c) / c;
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = x[j] - mu;
      var += d * d;
    }
    var /= c;
    const double is = 1.0 / std::sqrt(var + kEps);
    (*inv_sigma)[i] = is;
    for (int64_t j = 0; j < c; ++j) {
      const double xh = (x[j] - mu) * is;
      xhat->data[i * c + j] = xh;
      out.data[i * c + j] = tg.data[j] * xh + tb.data[j];
    }
  }
  const bool rg = nodes_[a].requires_grad || nodes_[gamma].requires_grad ||
                  nodes_[beta].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "layer_norm");
  if (rg) {
    nodes_[id].backprop = [id, a, gamma, beta, xhat, inv_sigma, r, c](Graph& g) {
      const Tensor& gy = g.nodes_[id].grad;
      const Tensor& tgv = g.value(gamma);
      if (g.nodes_[gamma].requires_grad) {
        Tensor& gg = g.grad_buffer(gamma);
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j)
            gg.data[j] += gy.data[i * c + j] * xhat->data[i * c + j];
      }
      if (g.nodes_[beta].requires_grad) {
        Tensor& gb = g.grad_buffer(beta);
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) gb.data[j] += gy.data[i * c + j];
      }
      if (g.nodes_[a].requires_grad) {
        Tensor& gx = g.grad_buffer(a);
        for (int64_t i = 0; i < r; ++i) {
          // dxhat = gy * gamma; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_sigma
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (int64_t j = 0; j < c; ++j) {
            const double dxh = gy.data[i * c + j] * tgv.data[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xhat->data[i * c + j];
          }
          mean_dxh /= c;
          mean_dxh_xh /= c;
          const double is = (*inv_sigma)[i];
          for (int64_t j = 0; j < c; ++j) {
            const double dxh = gy.data[i * c + j] * tgv.data[j];
            gx.data[i * c + j] +=
                (dxh - mean_dxh - xhat->data[i * c + j] * mean_dxh_xh) * is;
          }
        }
      }
    };
  }
  return id;
}

ValueId Graph::gather_rows(ValueId a, std::vector<int32_t> idx) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2, "gather_rows: rank-2 required");
  const int64_t c = ta.shape[1];
  const int64_t r = ta.shape[0];
  Tensor out({static_cast<int64_t>(idx.size()), c});
  for (size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < r, "gather_rows: index out of range");
    std::memcpy(out.data.data() + i * c, ta.data.data() + idx[i] * c, c * sizeof(double));
  }
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "gather_rows");
  if (rg) {
    auto shared = std::make_shared<std::vector<int32_t>>(std::move(idx));
    nodes_[id].backprop = [id, a, shared, c](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      Tensor& ga = g.grad_buffer(a);
      for (size_t i = 0; i < shared->size(); ++i)
        active().axpy(1.0, gout.data.data() + i * c, ga.data.data() + (*shared)[i] * c, c);
    };
  }
  return id;
}

ValueId Graph::tile_rows(ValueId a, int64_t n) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2 && ta.shape[0] == 1, "tile_rows: (1,c) required");
  const int64_t c = ta.shape[1];
  Tensor out({n, c});
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(out.data.data() + i * c, ta.data.data(), c * sizeof(double));
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "tile_rows");
  if (rg) {
    nodes_[id].backprop = [id, a, n, c](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      Tensor& ga = g.grad_buffer(a);
      for (int64_t i = 0; i < n; ++i)
        active().axpy(1.0, gout.data.data() + i * c, ga.data.data(), c);
    };
  }
  return id;
}

ValueId Graph::slice_cols(ValueId a, int64_t lo, int64_t hi) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2 && lo >= 0 && hi <= ta.shape[1] && lo < hi,
          "slice_cols: bad range");
  const int64_t r = ta.shape[0], c = ta.shape[1], w = hi - lo;
  Tensor out({r, w});
  for (int64_t i = 0; i < r; ++i)
    std::memcpy(out.data.data() + i * w, ta.data.data() + i * c + lo, w * sizeof(double));
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "slice_cols");
  if (rg) {
    nodes_[id].backprop = [id, a, lo, r, c, w](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      Tensor& ga = g.grad_buffer(a);
      for (int64_t i = 0; i < r; ++i)
        active().axpy(1.0, gout.data.data() + i * w, ga.data.data() + i * c + lo, w);
    };
  }
  return id;
}

ValueId Graph::reshape(ValueId a, std::vector<int64_t> shape) {
  const Tensor& ta = value(a);
  require(Tensor::numel_of(shape) == ta.numel(), "reshape: element count mismatch");
  Tensor out;
  out.shape = shape;
  out.data = ta.data;
  const bool rg = nodes_[a].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "reshape");
  if (rg) {
    nodes_[id].backprop = [id, a](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      Tensor& ga = g.grad_buffer(a);
      active().axpy(1.0, gout.data.data(), ga.data.data(), gout.data.size());
    };
  }
  return id;
}

ValueId Graph::weighted_offset_sum(ValueId w, ValueId o) {
  const Tensor& tw = value(w);
  const Tensor& to = value(o);
  require(tw.rank() == 2 && to.rank() == 3 && to.shape[0] == tw.shape[0] &&
              to.shape[1] == tw.shape[1],
          "weighted_offset_sum: w (A,K), o (A,K,C)");
  const int64_t A = tw.shape[0], K = tw.shape[1], C = to.shape[2];
  Tensor out({K, C});
  for (int64_t a = 0; a < A; ++a)
    for (int64_t k = 0; k < K; ++k) {
      const double wv = tw.data[a * K + k];
      if (wv == 0.0) continue;
      const double* orow = to.data.data() + (a * K + k) * C;
      double* outr = out.data.data() + k * C;
      for (int64_t cidx = 0; cidx < C; ++cidx) outr[cidx] += wv * orow[cidx];
    }
  const bool rg = nodes_[w].requires_grad || nodes_[o].requires_grad;
  ValueId id = push(std::move(out), rg, nullptr, "weighted_offset_sum");
  if (rg) {
    nodes_[id].backprop = [id, w, o, A, K, C](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      const Tensor& tw2 = g.value(w);
      const Tensor& to2 = g.value(o);
      if (g.nodes_[w].requires_grad) {
        Tensor& gw = g.grad_buffer(w);
        for (int64_t a = 0; a < A; ++a)
          for (int64_t k = 0; k < K; ++k)
            gw.data[a * K + k] += active().dot(to2.data.data() + (a * K + k) * C,
                                               gout.data.data() + k * C, C);
      }
      if (g.nodes_[o].requires_grad) {
        Tensor& go = g.grad_buffer(o);
        for (int64_t a = 0; a < A; ++a)
          for (int64_t k = 0; k < K; ++k) {
            const double wv = tw2.data[a * K + k];
            if (wv == 0.0) continue;
            active().axpy(wv, gout.data.data() + k * C,
                          go.data.data() + (a * K + k) * C, C);
          }
      }
    };
  }
  return id;
}

ValueId Graph::uvd_to_xyz(ValueId uvd, const CameraIntrinsics& k, double eps,
                          bool* clamped) {
  const Tensor& t = value(uvd);
  require(t.rank() == 2 && t.shape[1] == 3, "uvd_to_xyz: (n,3) required");
  const int64_t n = t.shape[0];
  Tensor out({n, 3});
  auto clamp_mask = std::make_shared<std::vector<uint8_t>>(n, 0);
  bool any = false;
  for (int64_t i = 0; i < n; ++i) {
    const double u = t.data[i * 3 + 0];
    const double v = t.data[i * 3 + 1];
    double z = t.data[i * 3 + 2];
    if (z <= eps) {
      z = eps;
      (*clamp_mask)[i] = 1;
      any = true;
    }
    out.data[i * 3 + 0] = (u - k.cx) / k.fx * z;
    out.data[i * 3 + 1] = (v - k.cy) / k.fy * z;
    out.data[i * 3 + 2] = z;
  }
  if (clamped) *clamped = any;
  const bool rg = nodes_[uvd].requires_grad;
  const CameraIntrinsics kc = k;
  ValueId id = push(std::move(out), rg, nullptr, "uvd_to_xyz");
  if (rg) {
    nodes_[id].backprop = [id, uvd, kc, clamp_mask, n](Graph& g) {
      const Tensor& gout = g.nodes_[id].grad;
      const Tensor& tin = g.value(uvd);
      const Tensor& tout = g.value(id);
      Tensor& gin = g.grad_buffer(uvd);
      for (int64_t i = 0; i < n; ++i) {
        const double gx = gout.data[i * 3 + 0];
        const double gy = gout.data[i * 3 + 1];
        const double gz = gout.data[i * 3 + 2];
        const double z = tout.data[i * 3 + 2];
        const double u = tin.data[i * 3 + 0];
        const double v = tin.data[i * 3 + 1];
        gin.data[i * 3 + 0] += gx * z / kc.fx;
        gin.data[i * 3 + 1] += gy * z / kc.fy;
        if (!(*clamp_mask)[i]) {
          gin.data[i * 3 + 2] +=
              gx * (u - kc.cx) / kc.fx + gy * (v - kc.cy) / kc.fy + gz;
        }
      }
    };
  }
  return id;
}

void Graph::run_backward(ValueId out, Tensor seed) {
  Node& o = nodes_[out];
  if (!o.requires_grad)
    throw Error("NoGradient", "backward target does not require gradients");
  // reset any state from a previous backward pass
  for (Node& n : nodes_) {
    n.grad_ready = false;
    n.grad = Tensor();
  }
  o.grad = std::move(seed);
  o.grad_ready = true;
  for (ValueId id = out; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad_ready && n.backprop) n.backprop(*this);
  }
}

void Graph::backward(ValueId out) {
  if (value(out).numel() != 1)
    throw ShapeMismatch("backward: output must be scalar; use backward_seeded");
  Tensor seed = value(out);
  seed.data[0] = 1.0;
  run_backward(out, std::move(seed));
}

void Graph::backward_seeded(ValueId out, const Tensor& seed) {
  if (!seed.same_shape(value(out)))
    throw ShapeMismatch("backward_seeded: seed shape mismatch");
  check_finite(seed, "backward_seeded");
  run_backward(out, seed);
}

ValueId attention(Graph& g, ValueId q, ValueId k, ValueId v) {
  const int64_t c = g.value(q).shape.at(1);
  if (g.value(k).shape.at(1) != c || g.value(v).shape.at(0) != g.value(k).shape.at(0))
    throw ShapeMismatch("attention: q,k,v shape mismatch");
  ValueId logits = g.scale(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(static_cast<double>(c)));
  ValueId att = g.softmax(logits, 1);
  return g.matmul(att, v);
}

ValueId multihead_attention(Graph& g, ValueId q, ValueId k, ValueId v, int heads) {
  const int64_t c = g.value(q).shape.at(1);
  if (heads <= 0 || c % heads != 0)
    throw ShapeMismatch("multihead_attention: channels not divisible by heads");
  const int64_t hc = c / heads;
  ValueId out = -1;
  for (int h = 0; h < heads; ++h) {
    ValueId qh = g.slice_cols(q, h * hc, (h + 1) * hc);
    ValueId kh = g.slice_cols(k, h * hc, (h + 1) * hc);
    ValueId vh = g.slice_cols(v, h * hc, (h + 1) * hc);
    ValueId oh = attention(g, qh, kh, vh);
    out = (h == 0) ? oh : g.concat(out, oh, 1);
  }
  return out;
}

ValueId linear(Graph& g, ValueId x, ValueId w, ValueId b) {
  return g.add_rowvec(g.matmul(x, w), b);
}

ValueId linear_relu(Graph& g, ValueId x, ValueId w, ValueId b) {
  return g.relu(linear(g, x, w, b));
}

PointEncoderOut point_encoder(Graph& g, ValueId cloud_features,
                              const PointEncoderParams& p) {
  const int64_t n = g.value(cloud_features).shape.at(0);
  ValueId h1 = linear_relu(g, cloud_features, p.w1, p.b1);
  ValueId h2 = linear_relu(g, h1, p.w2, p.b2);
  ValueId global = g.max_pool_rows(h2);
  ValueId joined = g.concat(h2, g.tile_rows(global, n), 1);
  ValueId per_point = linear_relu(g, joined, p.w3, p.b3);
  return {per_point, global};
}

}  // namespace unipose::diff
