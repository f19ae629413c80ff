#include "voxnas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace voxnas::ag {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeMismatch(std::string(op) + " expects rank " + std::to_string(rank) +
                        ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

void accumulate(const Var& target, const Tensor::Array& g) {
  if (target && target->requires_grad) target->grad_buffer().array() += g;
}

struct Dims5 {
  Index n, c, d, h, w;
  explicit Dims5(const Shape& s) : n(s[0]), c(s[1]), d(s[2]), h(s[3]), w(s[4]) {}
  Index spatial() const { return d * h * w; }
};

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out(a->value.shape(), Tensor::Array(a->value.array() + b->value.array()));
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    accumulate(a, self.grad.array());
    accumulate(b, self.grad.array());
  });
}

Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeMismatch("add_n of nothing");
  Tensor out = xs.front()->value;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    require_same_shape(out, xs[i]->value, "add_n");
    out.array() += xs[i]->value.array();
  }
  return make_node(std::move(out), xs, [xs](Node& self) {
    for (const auto& x : xs) accumulate(x, self.grad.array());
  });
}

Var scale(const Var& x, double factor) {
  Tensor out(x->value.shape(), Tensor::Array(x->value.array() * factor));
  return make_node(std::move(out), {x}, [x, factor](Node& self) {
    accumulate(x, self.grad.array() * factor);
  });
}

Var relu(const Var& x) {
  Tensor out(x->value.shape(), Tensor::Array(x->value.array().max(0.0)));
  return make_node(std::move(out), {x}, [x](Node& self) {
    accumulate(x, (x->value.array() > 0.0).select(self.grad.array(), 0.0));
  });
}

Var softmax(const Var& logits) {
  require_rank(logits->value, 1, "softmax");
  const auto& z = logits->value.array();
  Tensor::Array e = (z - z.maxCoeff()).exp();
  Tensor out(logits->value.shape(), Tensor::Array(e / e.sum()));
  return make_node(std::move(out), {logits}, [logits](Node& self) {
    const auto& p = self.value.array();
    const double inner = (p * self.grad.array()).sum();
    accumulate(logits, p * (self.grad.array() - inner));
  });
}

Var weighted_sum(const Var& weights, const std::vector<Var>& xs) {
  require_rank(weights->value, 1, "weighted_sum");
  if (weights->value.size() != static_cast<Index>(xs.size())) {
    throw ShapeMismatch("weighted_sum: " + std::to_string(weights->value.size()) +
                        " weights for " + std::to_string(xs.size()) + " terms");
  }
  const Var* first = nullptr;
  for (const auto& x : xs) {
    if (x) {
      first = &x;
      break;
    }
  }
  if (!first) throw ShapeMismatch("weighted_sum: every term is null");
  Tensor out = Tensor::zeros_like((*first)->value);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (!xs[k]) continue;
    require_same_shape(out, xs[k]->value, "weighted_sum");
    out.array() += weights->value[static_cast<Index>(k)] * xs[k]->value.array();
  }
  std::vector<Var> parents = xs;
  parents.push_back(weights);
  return make_node(std::move(out), std::move(parents), [weights, xs](Node& self) {
    const auto& g = self.grad.array();
    if (weights->requires_grad) {
      auto& gw = weights->grad_buffer();
      for (std::size_t k = 0; k < xs.size(); ++k) {
        if (xs[k]) gw[static_cast<Index>(k)] += (g * xs[k]->value.array()).sum();
      }
    }
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (xs[k]) accumulate(xs[k], g * weights->value[static_cast<Index>(k)]);
    }
  });
}

namespace {

struct ConvGeometry {
  Dims5 in;
  Index cout, cin_per_group, cout_per_group;
  Index kd, kh, kw;
  Index od, oh, ow;
  Conv3dOptions opt;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const Conv3dOptions& opt) {
  require_rank(x, 5, "conv3d input");
  require_rank(w, 5, "conv3d weight");
  if (opt.stride < 1 || opt.dilation < 1 || opt.groups < 1) {
    throw ShapeMismatch("conv3d: stride, dilation and groups must be positive");
  }
  Dims5 in(x.shape());
  const Index cout = w.dim(0);
  if (in.c % opt.groups != 0 || cout % opt.groups != 0 || w.dim(1) != in.c / opt.groups) {
    throw ShapeMismatch("conv3d: channels " + std::to_string(in.c) + " -> " +
                        std::to_string(cout) + " incompatible with weight " +
                        shape_string(w.shape()) + " and groups " + std::to_string(opt.groups));
  }
  ConvGeometry g{in,
                 cout,
                 w.dim(1),
                 cout / opt.groups,
                 w.dim(2),
                 w.dim(3),
                 w.dim(4),
                 conv_extent(in.d, w.dim(2), opt.stride, opt.padding[0], opt.dilation),
                 conv_extent(in.h, w.dim(3), opt.stride, opt.padding[1], opt.dilation),
                 conv_extent(in.w, w.dim(4), opt.stride, opt.padding[2], opt.dilation),
                 opt};
  if (g.od < 1 || g.oh < 1 || g.ow < 1) {
    throw ShapeMismatch("conv3d: empty output for input " + shape_string(x.shape()));
  }
  return g;
}

// Visits every (output cell, input cell, kernel tap) triple of one
// (sample, out-channel, in-channel) plane with valid bounds.
template <typename F>
void for_each_tap(const ConvGeometry& g, F&& f) {
  const Index s = g.opt.stride, dl = g.opt.dilation;
  const auto& p = g.opt.padding;
  for (Index a = 0; a < g.kd; ++a) {
    for (Index b = 0; b < g.kh; ++b) {
      for (Index c = 0; c < g.kw; ++c) {
        const Index tap = (a * g.kh + b) * g.kw + c;
        for (Index z = 0; z < g.od; ++z) {
          const Index iz = z * s - p[0] + a * dl;
          if (iz < 0 || iz >= g.in.d) continue;
          for (Index y = 0; y < g.oh; ++y) {
            const Index iy = y * s - p[1] + b * dl;
            if (iy < 0 || iy >= g.in.h) continue;
            const Index out_row = (z * g.oh + y) * g.ow;
            const Index in_row = (iz * g.in.h + iy) * g.in.w;
            for (Index x = 0; x < g.ow; ++x) {
              const Index ix = x * s - p[2] + c * dl;
              if (ix < 0 || ix >= g.in.w) continue;
              f(out_row + x, in_row + ix, tap);
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv3d(const Var& x, const Var& weight, const Conv3dOptions& opt) {
  const ConvGeometry g = conv_geometry(x->value, weight->value, opt);
  const Index in_sp = g.in.spatial(), out_sp = g.od * g.oh * g.ow;
  const Index taps = g.kd * g.kh * g.kw;
  Tensor out({g.in.n, g.cout, g.od, g.oh, g.ow});
  const double* xv = x->value.data();
  const double* wv = weight->value.data();
  double* ov = out.data();
  for (Index n = 0; n < g.in.n; ++n) {
    for (Index co = 0; co < g.cout; ++co) {
      const Index grp = co / g.cout_per_group;
      double* o = ov + (n * g.cout + co) * out_sp;
      for (Index ci = 0; ci < g.cin_per_group; ++ci) {
        const double* xi = xv + (n * g.in.c + grp * g.cin_per_group + ci) * in_sp;
        const double* wk = wv + (co * g.cin_per_group + ci) * taps;
        for_each_tap(g, [&](Index oi, Index ii, Index tap) { o[oi] += wk[tap] * xi[ii]; });
      }
    }
  }
  return make_node(std::move(out), {x, weight}, [x, weight, g](Node& self) {
    const Index in_sp = g.in.spatial(), out_sp = g.od * g.oh * g.ow;
    const Index taps = g.kd * g.kh * g.kw;
    const double* gv = self.grad.data();
    const double* xv = x->value.data();
    const double* wv = weight->value.data();
    double* gx = x->requires_grad ? x->grad_buffer().data() : nullptr;
    double* gw = weight->requires_grad ? weight->grad_buffer().data() : nullptr;
    for (Index n = 0; n < g.in.n; ++n) {
      for (Index co = 0; co < g.cout; ++co) {
        const Index grp = co / g.cout_per_group;
        const double* go = gv + (n * g.cout + co) * out_sp;
        for (Index ci = 0; ci < g.cin_per_group; ++ci) {
          const Index xoff = (n * g.in.c + grp * g.cin_per_group + ci) * in_sp;
          const Index woff = (co * g.cin_per_group + ci) * taps;
          if (gx) {
            for_each_tap(g, [&](Index oi, Index ii, Index tap) {
              gx[xoff + ii] += wv[woff + tap] * go[oi];
            });
          }
          if (gw) {
            for_each_tap(g, [&](Index oi, Index ii, Index tap) {
              gw[woff + tap] += xv[xoff + ii] * go[oi];
            });
          }
        }
      }
    }
  });
}

namespace {

struct PoolGeometry {
  Dims5 in;
  Index od, oh, ow, kernel, stride, pad;
};

PoolGeometry pool_geometry(const Tensor& x, Index kernel, Index stride, Index pad) {
  require_rank(x, 5, "pool3d");
  Dims5 in(x.shape());
  return {in,
          conv_extent(in.d, kernel, stride, pad, 1),
          conv_extent(in.h, kernel, stride, pad, 1),
          conv_extent(in.w, kernel, stride, pad, 1),
          kernel,
          stride,
          pad};
}

// Calls f(out_index, in_index_list_begin...) per output cell with in-bounds inputs.
template <typename F>
void for_each_window(const PoolGeometry& g, F&& f) {
  std::vector<Index> window;
  window.reserve(static_cast<std::size_t>(g.kernel * g.kernel * g.kernel));
  for (Index z = 0; z < g.od; ++z) {
    for (Index y = 0; y < g.oh; ++y) {
      for (Index x = 0; x < g.ow; ++x) {
        window.clear();
        for (Index a = 0; a < g.kernel; ++a) {
          const Index iz = z * g.stride - g.pad + a;
          if (iz < 0 || iz >= g.in.d) continue;
          for (Index b = 0; b < g.kernel; ++b) {
            const Index iy = y * g.stride - g.pad + b;
            if (iy < 0 || iy >= g.in.h) continue;
            for (Index c = 0; c < g.kernel; ++c) {
              const Index ix = x * g.stride - g.pad + c;
              if (ix < 0 || ix >= g.in.w) continue;
              window.push_back((iz * g.in.h + iy) * g.in.w + ix);
            }
          }
        }
        f((z * g.oh + y) * g.ow + x, window);
      }
    }
  }
}

}  // namespace

Var avg_pool3d(const Var& x, Index kernel, Index stride, Index padding) {
  const PoolGeometry g = pool_geometry(x->value, kernel, stride, padding);
  const Index planes = g.in.n * g.in.c, in_sp = g.in.spatial(), out_sp = g.od * g.oh * g.ow;
  Tensor out({g.in.n, g.in.c, g.od, g.oh, g.ow});
  for (Index p = 0; p < planes; ++p) {
    const double* xi = x->value.data() + p * in_sp;
    double* o = out.data() + p * out_sp;
    for_each_window(g, [&](Index oi, const std::vector<Index>& win) {
      double s = 0.0;
      for (Index ii : win) s += xi[ii];
      o[oi] = s / static_cast<double>(win.size());
    });
  }
  return make_node(std::move(out), {x}, [x, g](Node& self) {
    const Index planes = g.in.n * g.in.c, in_sp = g.in.spatial(), out_sp = g.od * g.oh * g.ow;
    double* gx = x->grad_buffer().data();
    for (Index p = 0; p < planes; ++p) {
      const double* go = self.grad.data() + p * out_sp;
      for_each_window(g, [&](Index oi, const std::vector<Index>& win) {
        const double share = go[oi] / static_cast<double>(win.size());
        for (Index ii : win) gx[p * in_sp + ii] += share;
      });
    }
  });
}

Var max_pool3d(const Var& x, Index kernel, Index stride, Index padding) {
  const PoolGeometry g = pool_geometry(x->value, kernel, stride, padding);
  const Index planes = g.in.n * g.in.c, in_sp = g.in.spatial(), out_sp = g.od * g.oh * g.ow;
  Tensor out({g.in.n, g.in.c, g.od, g.oh, g.ow});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  for (Index p = 0; p < planes; ++p) {
    const double* xi = x->value.data() + p * in_sp;
    double* o = out.data() + p * out_sp;
    for_each_window(g, [&](Index oi, const std::vector<Index>& win) {
      Index best = win.front();
      for (Index ii : win) {
        if (xi[ii] > xi[best]) best = ii;
      }
      o[oi] = xi[best];
      argmax[static_cast<std::size_t>(p * out_sp + oi)] = p * in_sp + best;
    });
  }
  return make_node(std::move(out), {x}, [x, argmax = std::move(argmax)](Node& self) {
    double* gx = x->grad_buffer().data();
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self.grad[static_cast<Index>(i)];
  });
}

Var batch_norm(const Var& x, bool training, const Eigen::ArrayXd& running_mean,
               const Eigen::ArrayXd& running_var, double eps, BatchStats* batch_stats) {
  require_rank(x->value, 5, "batch_norm");
  const Dims5 d(x->value.shape());
  const Index sp = d.spatial(), count = d.n * sp;
  Eigen::ArrayXd mean(d.c), var(d.c);
  if (training) {
    mean.setZero();
    var.setZero();
    for (Index n = 0; n < d.n; ++n)
      for (Index c = 0; c < d.c; ++c)
        mean[c] += x->value.array().segment((n * d.c + c) * sp, sp).sum();
    mean /= static_cast<double>(count);
    for (Index n = 0; n < d.n; ++n)
      for (Index c = 0; c < d.c; ++c)
        var[c] += (x->value.array().segment((n * d.c + c) * sp, sp) - mean[c]).square().sum();
    var /= static_cast<double>(count);
    if (batch_stats) *batch_stats = {mean, var, count};
  } else {
    if (running_mean.size() != d.c || running_var.size() != d.c) {
      throw ShapeMismatch("batch_norm: running statistics do not match channel count");
    }
    mean = running_mean;
    var = running_var;
  }
  const Eigen::ArrayXd inv_std = (var + eps).rsqrt();
  Tensor out(x->value.shape());
  for (Index n = 0; n < d.n; ++n) {
    for (Index c = 0; c < d.c; ++c) {
      const Index off = (n * d.c + c) * sp;
      out.array().segment(off, sp) = (x->value.array().segment(off, sp) - mean[c]) * inv_std[c];
    }
  }
  return make_node(std::move(out), {x}, [x, d, training, inv_std](Node& self) {
    const Index sp = d.spatial();
    const double m = static_cast<double>(d.n * sp);
    auto& gx = x->grad_buffer().array();
    const auto& gy = self.grad.array();
    const auto& xhat = self.value.array();
    for (Index c = 0; c < d.c; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      if (training) {
        for (Index n = 0; n < d.n; ++n) {
          const Index off = (n * d.c + c) * sp;
          sum_g += gy.segment(off, sp).sum();
          sum_gx += (gy.segment(off, sp) * xhat.segment(off, sp)).sum();
        }
      }
      for (Index n = 0; n < d.n; ++n) {
        const Index off = (n * d.c + c) * sp;
        if (training) {
          gx.segment(off, sp) += inv_std[c] / m *
                                 (m * gy.segment(off, sp) - sum_g - xhat.segment(off, sp) * sum_gx);
        } else {
          gx.segment(off, sp) += inv_std[c] * gy.segment(off, sp);
        }
      }
    }
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeMismatch("concat of nothing");
  for (const auto& x : xs) require_rank(x->value, 5, "concat_channels");
  Shape shape = xs.front()->value.shape();
  Index total_c = 0;
  for (const auto& x : xs) {
    Shape s = x->value.shape();
    s[1] = shape[1];
    if (s != shape) throw ShapeMismatch("concat_channels: spatial/batch dims differ");
    total_c += x->value.dim(1);
  }
  const Index n = shape[0], sp = shape[2] * shape[3] * shape[4];
  shape[1] = total_c;
  Tensor out(shape);
  Index c0 = 0;
  for (const auto& x : xs) {
    const Index c = x->value.dim(1);
    for (Index b = 0; b < n; ++b) {
      out.array().segment((b * total_c + c0) * sp, c * sp) = x->value.array().segment(b * c * sp, c * sp);
    }
    c0 += c;
  }
  return make_node(std::move(out), xs, [xs, n, sp, total_c](Node& self) {
    Index c0 = 0;
    for (const auto& x : xs) {
      const Index c = x->value.dim(1);
      if (x->requires_grad) {
        auto& gx = x->grad_buffer().array();
        for (Index b = 0; b < n; ++b) {
          gx.segment(b * c * sp, c * sp) += self.grad.array().segment((b * total_c + c0) * sp, c * sp);
        }
      }
      c0 += c;
    }
  });
}

Var global_avg_pool(const Var& x) {
  require_rank(x->value, 5, "global_avg_pool");
  const Dims5 d(x->value.shape());
  const Index sp = d.spatial();
  Tensor out({d.n, d.c});
  for (Index i = 0; i < d.n * d.c; ++i) out[i] = x->value.array().segment(i * sp, sp).mean();
  return make_node(std::move(out), {x}, [x, d, sp](Node& self) {
    auto& gx = x->grad_buffer().array();
    for (Index i = 0; i < d.n * d.c; ++i) gx.segment(i * sp, sp) += self.grad[i] / static_cast<double>(sp);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x->value, 2, "linear input");
  require_rank(weight->value, 2, "linear weight");
  const Index n = x->value.dim(0), in = x->value.dim(1), out_f = weight->value.dim(0);
  if (weight->value.dim(1) != in || bias->value.size() != out_f) {
    throw ShapeMismatch("linear: weight " + shape_string(weight->value.shape()) + " for input " +
                        shape_string(x->value.shape()));
  }
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const RowMat>;
  Tensor out({n, out_f});
  Eigen::Map<RowMat> o(out.data(), n, out_f);
  o.noalias() = CMap(x->value.data(), n, in) * CMap(weight->value.data(), out_f, in).transpose();
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias->value.data(), out_f);
  return make_node(std::move(out), {x, weight, bias}, [x, weight, bias, n, in, out_f](Node& self) {
    CMap g(self.grad.data(), n, out_f);
    if (x->requires_grad) {
      Eigen::Map<RowMat>(x->grad_buffer().data(), n, in).noalias() +=
          g * CMap(weight->value.data(), out_f, in);
    }
    if (weight->requires_grad) {
      Eigen::Map<RowMat>(weight->grad_buffer().data(), out_f, in).noalias() +=
          g.transpose() * CMap(x->value.data(), n, in);
    }
    if (bias->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd>(bias->grad_buffer().data(), out_f) += g.colwise().sum();
    }
  });
}

Var mse_loss(const Var& prediction, const Tensor& target) {
  if (prediction->value.size() != target.size()) {
    throw ShapeMismatch("mse_loss: prediction " + shape_string(prediction->value.shape()) +
                        " vs target " + shape_string(target.shape()));
  }
  const double m = static_cast<double>(target.size());
  Tensor::Array diff = prediction->value.array() - target.array();
  Tensor out({1}, Tensor::Array::Constant(1, diff.square().sum() / m));
  return make_node(std::move(out), {prediction}, [prediction, diff, m](Node& self) {
    accumulate(prediction, diff * (2.0 * self.grad[0] / m));
  });
}

Var dot_constant(const Var& x, const Tensor& coefficients) {
  if (x->value.size() != coefficients.size()) throw ShapeMismatch("dot_constant: size mismatch");
  Tensor out({1}, Tensor::Array::Constant(1, (x->value.array() * coefficients.array()).sum()));
  return make_node(std::move(out), {x}, [x, coefficients](Node& self) {
    accumulate(x, coefficients.array() * self.grad[0]);
  });
}

namespace {

// Splits a shape around `axis` into (outer, extent, inner) strides.
std::array<Index, 3> axis_split(const Shape& s, std::size_t axis) {
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[axis], inner};
}

}  // namespace

Var axis_mix(const Var& x, const Var& matrix, std::size_t axis) {
  if (axis >= x->value.rank()) throw ShapeMismatch("axis_mix: axis out of range");
  const auto [outer, len, inner] = axis_split(x->value.shape(), axis);
  require_rank(matrix->value, 2, "axis_mix matrix");
  if (matrix->value.dim(0) != len || matrix->value.dim(1) != len) {
    throw ShapeMismatch("axis_mix: matrix " + shape_string(matrix->value.shape()) +
                        " for axis extent " + std::to_string(len));
  }
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const RowMat>;
  Tensor out(x->value.shape());
  CMap m(matrix->value.data(), len, len);
  for (Index o = 0; o < outer; ++o) {
    Eigen::Map<RowMat>(out.data() + o * len * inner, len, inner).noalias() =
        m * CMap(x->value.data() + o * len * inner, len, inner);
  }
  return make_node(std::move(out), {x, matrix}, [x, matrix, outer, len, inner](Node& self) {
    CMap m(matrix->value.data(), len, len);
    for (Index o = 0; o < outer; ++o) {
      CMap g(self.grad.data() + o * len * inner, len, inner);
      if (x->requires_grad) {
        Eigen::Map<RowMat>(x->grad_buffer().data() + o * len * inner, len, inner).noalias() +=
            m.transpose() * g;
      }
      if (matrix->requires_grad) {
        Eigen::Map<RowMat>(matrix->grad_buffer().data(), len, len).noalias() +=
            g * CMap(x->value.data() + o * len * inner, len, inner).transpose();
      }
    }
  });
}

Var permutation_mixture(const Var& weights, const std::vector<std::vector<Index>>& perms) {
  require_rank(weights->value, 1, "permutation_mixture");
  if (perms.empty() || weights->value.size() != static_cast<Index>(perms.size())) {
    throw ShapeMismatch("permutation_mixture: weight count does not match permutations");
  }
  const Index len = static_cast<Index>(perms.front().size());
  Tensor out({len, len});
  for (std::size_t p = 0; p < perms.size(); ++p) {
    if (static_cast<Index>(perms[p].size()) != len) throw ShapeMismatch("permutation lengths differ");
    for (Index i = 0; i < len; ++i) out(i, perms[p][static_cast<std::size_t>(i)]) += weights->value[static_cast<Index>(p)];
  }
  return make_node(std::move(out), {weights}, [weights, perms, len](Node& self) {
    auto& gw = weights->grad_buffer();
    for (std::size_t p = 0; p < perms.size(); ++p) {
      double s = 0.0;
      for (Index i = 0; i < len; ++i) s += self.grad(i, perms[p][static_cast<std::size_t>(i)]);
      gw[static_cast<Index>(p)] += s;
    }
  });
}

}  // namespace voxnas::ag
